//! Provenance manifests, the SRA1 signed-asset container, and the standalone
//! verifier.
//!
//! Container layout, all integers big-endian:
//!
//! ```text
//! "SRA1" ‖ u64 image length ‖ image ‖ u64 manifest length ‖ manifest
//! manifest = claim ‖ signature (64) ‖ u32 cert count ‖ (u32 len ‖ cert)*
//! claim    = "SRAM" ‖ u8 version ‖ u32 assertion count ‖ assertion* ‖
//!            str claim_generator ‖ u64 timestamp
//! assertion = u8 kind ‖ u32 body length ‖ body
//! ```
//!
//! The signature covers SHA-256 of the claim bytes only; the certificate
//! chain is validated separately.

use std::fmt;

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{self, Digest32, SIGNATURE_LEN};
use crate::protection::CipherProfile;
use crate::session::cert::{read_chain, write_chain};
use crate::session::{verify_chain_for_role, ChainError, DeviceCertificate, Role};

pub const ASSET_MAGIC: &[u8; 4] = b"SRA1";
pub const CLAIM_MAGIC: &[u8; 4] = b"SRAM";
pub const CLAIM_VERSION: u8 = 1;
pub const CLAIM_GENERATOR: &str = concat!("sra/", env!("CARGO_PKG_VERSION"));
pub const FIRMWARE_VERSION: &str = concat!("sra-enclave-", env!("CARGO_PKG_VERSION"));
/// Marks firmware info as coming from a simulated, not attested, enclave.
pub const FIRMWARE_ENVIRONMENT: &str = "simulated-enclave";
pub const AUTH_SUCCEEDED: &str = "Succeeded";
/// Role of the certificate that signs assets.
pub const SIGNER_ROLE: Role = Role::Host;

const MAX_ASSERTIONS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssertionKind {
    HardBinding,
    DeviceIdentity,
    SecurePipeline,
    FrameCounter,
    FirmwareInfo,
    CaptureTime,
}

impl AssertionKind {
    /// Every kind, in manifest order.
    pub const REQUIRED: [AssertionKind; 6] = [
        Self::HardBinding,
        Self::DeviceIdentity,
        Self::SecurePipeline,
        Self::FrameCounter,
        Self::FirmwareInfo,
        Self::CaptureTime,
    ];

    pub fn code(self) -> u8 {
        match self {
            Self::HardBinding => 1,
            Self::DeviceIdentity => 2,
            Self::SecurePipeline => 3,
            Self::FrameCounter => 4,
            Self::FirmwareInfo => 5,
            Self::CaptureTime => 6,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::REQUIRED.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HardBinding => "hard_binding",
            Self::DeviceIdentity => "device_identity",
            Self::SecurePipeline => "secure_pipeline",
            Self::FrameCounter => "frame_counter",
            Self::FirmwareInfo => "firmware_info",
            Self::CaptureTime => "capture_time",
        }
    }
}

impl fmt::Display for AssertionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assertion {
    HardBinding { sha256: Digest32 },
    DeviceIdentity { signer: String, sensor: String },
    SecurePipeline { cipher: String, authentication: String, session_id: u64 },
    FrameCounter(u64),
    FirmwareInfo { version: String, environment: String },
    /// Seconds since the epoch, from the enclave clock.
    CaptureTime(u64),
}

impl Assertion {
    pub fn kind(&self) -> AssertionKind {
        match self {
            Self::HardBinding { .. } => AssertionKind::HardBinding,
            Self::DeviceIdentity { .. } => AssertionKind::DeviceIdentity,
            Self::SecurePipeline { .. } => AssertionKind::SecurePipeline,
            Self::FrameCounter(_) => AssertionKind::FrameCounter,
            Self::FirmwareInfo { .. } => AssertionKind::FirmwareInfo,
            Self::CaptureTime(_) => AssertionKind::CaptureTime,
        }
    }

    fn body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Self::HardBinding { sha256 } => {
                w.str("sha256").raw(sha256);
            }
            Self::DeviceIdentity { signer, sensor } => {
                w.str(signer).str(sensor);
            }
            Self::SecurePipeline {
                cipher,
                authentication,
                session_id,
            } => {
                w.str(cipher).str(authentication).u64(*session_id);
            }
            Self::FrameCounter(n) | Self::CaptureTime(n) => {
                w.u64(*n);
            }
            Self::FirmwareInfo { version, environment } => {
                w.str(version).str(environment);
            }
        }
        w.finish()
    }

    fn write(&self, w: &mut Writer) {
        w.u8(self.kind().code()).bytes(&self.body());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = AssertionKind::from_code(r.u8()?).ok_or(DecodeError::InvalidValue("assertion kind"))?;
        let mut b = Reader::new(r.bytes()?);
        let assertion = match kind {
            AssertionKind::HardBinding => {
                if b.str()? != "sha256" {
                    return Err(DecodeError::InvalidValue("hard binding algorithm"));
                }
                Self::HardBinding { sha256: b.array()? }
            }
            AssertionKind::DeviceIdentity => Self::DeviceIdentity {
                signer: b.str()?,
                sensor: b.str()?,
            },
            AssertionKind::SecurePipeline => Self::SecurePipeline {
                cipher: b.str()?,
                authentication: b.str()?,
                session_id: b.u64()?,
            },
            AssertionKind::FrameCounter => Self::FrameCounter(b.u64()?),
            AssertionKind::FirmwareInfo => Self::FirmwareInfo {
                version: b.str()?,
                environment: b.str()?,
            },
            AssertionKind::CaptureTime => Self::CaptureTime(b.u64()?),
        };
        b.expect_end()?;
        Ok(assertion)
    }
}

/// The signed part of a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub assertions: Vec<Assertion>,
    pub claim_generator: String,
    pub timestamp: u64,
}

impl Claim {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write(&mut w);
        w.finish()
    }

    fn write(&self, w: &mut Writer) {
        w.raw(CLAIM_MAGIC).u8(CLAIM_VERSION).u32(self.assertions.len() as u32);
        for a in &self.assertions {
            a.write(w);
        }
        w.str(&self.claim_generator).u64(self.timestamp);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        if r.take(4)? != CLAIM_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        if r.u8()? != CLAIM_VERSION {
            return Err(DecodeError::InvalidValue("claim version"));
        }
        let n = r.u32()?;
        if n > MAX_ASSERTIONS {
            return Err(DecodeError::InvalidValue("assertion count"));
        }
        let assertions = (0..n).map(|_| Assertion::read(r)).collect::<Result<_, _>>()?;
        Ok(Self {
            assertions,
            claim_generator: r.str()?,
            timestamp: r.u64()?,
        })
    }

    pub fn parse_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let claim = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(claim)
    }

    pub fn digest(&self) -> Digest32 {
        crypto::sha256(&self.canonical_bytes())
    }

    pub fn find(&self, kind: AssertionKind) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.kind() == kind)
    }

    pub fn frame_counter(&self) -> Option<u64> {
        self.assertions.iter().find_map(|a| match a {
            Assertion::FrameCounter(n) => Some(*n),
            _ => None,
        })
    }

    pub fn hard_binding(&self) -> Option<&Digest32> {
        self.assertions.iter().find_map(|a| match a {
            Assertion::HardBinding { sha256 } => Some(sha256),
            _ => None,
        })
    }

    /// Attaches a signature produced over [`Claim::digest`].
    pub fn into_manifest(self, signature: [u8; SIGNATURE_LEN], certificate_chain: Vec<DeviceCertificate>) -> Manifest {
        Manifest {
            claim: self,
            signature,
            certificate_chain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub claim: Claim,
    pub signature: [u8; SIGNATURE_LEN],
    pub certificate_chain: Vec<DeviceCertificate>,
}

impl Manifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.claim.write(&mut w);
        w.raw(&self.signature);
        write_chain(&mut w, &self.certificate_chain);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let claim = Claim::read(&mut r)?;
        let signature = r.array()?;
        let certificate_chain = read_chain(&mut r)?;
        r.expect_end()?;
        Ok(Self {
            claim,
            signature,
            certificate_chain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedAsset {
    /// Lossless RGB8 raster.
    pub image_payload: Vec<u8>,
    pub manifest: Manifest,
}

impl SignedAsset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest.to_bytes();
        let mut w = Writer::with_capacity(4 + 16 + self.image_payload.len() + manifest.len());
        w.raw(ASSET_MAGIC)
            .u64(self.image_payload.len() as u64)
            .raw(&self.image_payload)
            .u64(manifest.len() as u64)
            .raw(&manifest);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != ASSET_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let image_payload = section(&mut r)?.to_vec();
        let manifest = Manifest::from_bytes(section(&mut r)?)?;
        r.expect_end()?;
        Ok(Self {
            image_payload,
            manifest,
        })
    }
}

fn section<'a>(r: &mut Reader<'a>) -> Result<&'a [u8], DecodeError> {
    let len = usize::try_from(r.u64()?).map_err(|_| DecodeError::InvalidValue("section length"))?;
    r.take(len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthStatus {
    Succeeded,
    Failed,
    NotAttempted,
}

/// Everything about a capture that the manifest records besides the image.
#[derive(Debug, Clone)]
pub struct CaptureContext {
    pub session_id: u64,
    pub sequence: u64,
    pub profile: CipherProfile,
    pub signer_subject: String,
    pub sensor_subject: String,
    pub auth_status: AuthStatus,
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProvenanceError {
    #[error("refusing to build a manifest for a capture whose authentication is {0:?}")]
    Unauthenticated(AuthStatus),
}

/// Unsigned claim with the six assertions in fixed order.
pub fn build_manifest(image_payload: &[u8], ctx: &CaptureContext) -> Result<Claim, ProvenanceError> {
    if ctx.auth_status != AuthStatus::Succeeded {
        return Err(ProvenanceError::Unauthenticated(ctx.auth_status));
    }
    Ok(Claim {
        assertions: vec![
            Assertion::HardBinding {
                sha256: crypto::sha256(image_payload),
            },
            Assertion::DeviceIdentity {
                signer: ctx.signer_subject.clone(),
                sensor: ctx.sensor_subject.clone(),
            },
            Assertion::SecurePipeline {
                cipher: ctx.profile.cipher_name().to_string(),
                authentication: AUTH_SUCCEEDED.to_string(),
                session_id: ctx.session_id,
            },
            Assertion::FrameCounter(ctx.sequence),
            Assertion::FirmwareInfo {
                version: FIRMWARE_VERSION.to_string(),
                environment: FIRMWARE_ENVIRONMENT.to_string(),
            },
            Assertion::CaptureTime(ctx.time),
        ],
        claim_generator: CLAIM_GENERATOR.to_string(),
        timestamp: ctx.time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Chain,
    Signature,
    HardBinding,
    Assertions,
}

impl Check {
    pub const ALL: [Check; 4] = [Self::Chain, Self::Signature, Self::HardBinding, Self::Assertions];

    pub fn name(self) -> &'static str {
        match self {
            Self::Chain => "chain",
            Self::Signature => "signature",
            Self::HardBinding => "hard_binding",
            Self::Assertions => "assertions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Failure {
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("untrusted certificate chain: {0}")]
    UntrustedChain(ChainError),
    #[error("manifest signature does not verify under the leaf certificate")]
    SignatureInvalid,
    #[error("hard binding does not match the image payload")]
    HardBindingMismatch,
    #[error("no hard binding assertion")]
    HardBindingAbsent,
    #[error("missing assertions: {0:?}")]
    MissingAssertions(Vec<AssertionKind>),
}

impl Failure {
    pub fn reason(&self) -> &'static str {
        match self {
            Self::Malformed(_) => "malformed",
            Self::UntrustedChain(_) => "untrusted_chain",
            Self::SignatureInvalid => "signature_invalid",
            Self::HardBindingMismatch => "hard_binding_mismatch",
            Self::HardBindingAbsent => "hard_binding_absent",
            Self::MissingAssertions(_) => "missing_assertions",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Valid,
    Invalid,
    Malformed,
}

impl Verdict {
    /// Verifier process exit code.
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Valid => 0,
            Self::Invalid => 1,
            Self::Malformed => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Valid => "valid",
            Self::Invalid => "invalid",
            Self::Malformed => "malformed",
        }
    }
}

/// Result of every check; a malformed container has no checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    pub checks: Vec<(Check, Result<(), Failure>)>,
    pub malformed: Option<String>,
    pub signer: Option<String>,
    pub frame_counter: Option<u64>,
}

impl VerificationReport {
    pub fn verdict(&self) -> Verdict {
        if self.malformed.is_some() {
            Verdict::Malformed
        } else if self.checks.iter().all(|(_, r)| r.is_ok()) {
            Verdict::Valid
        } else {
            Verdict::Invalid
        }
    }

    pub fn is_valid(&self) -> bool {
        self.verdict() == Verdict::Valid
    }

    pub fn failures(&self) -> Vec<&Failure> {
        self.checks.iter().filter_map(|(_, r)| r.as_ref().err()).collect()
    }

    pub fn has_reason(&self, reason: &str) -> bool {
        self.malformed.is_some() && reason == "malformed" || self.failures().iter().any(|f| f.reason() == reason)
    }

    /// `key=value` lines: verdict, one line per check, one per reason.
    pub fn to_text(&self) -> String {
        let mut out = format!("verdict={}\n", self.verdict().name());
        if let Some(detail) = &self.malformed {
            out.push_str("reason=malformed\n");
            out.push_str(&format!("detail={detail}\n"));
            return out;
        }
        for (check, result) in &self.checks {
            let status = if result.is_ok() { "pass" } else { "fail" };
            out.push_str(&format!("check.{}={status}\n", check.name()));
        }
        for failure in self.failures() {
            out.push_str(&format!("reason={}\n", failure.reason()));
            out.push_str(&format!("detail.{}={failure}\n", failure.reason()));
        }
        if let Some(signer) = &self.signer {
            out.push_str(&format!("signer={signer}\n"));
        }
        if let Some(n) = self.frame_counter {
            out.push_str(&format!("frame_counter={n}\n"));
        }
        out
    }
}

/// Runs all four checks independently so every failure is reported.
pub fn verify_asset(asset: &SignedAsset, trust_root: &DeviceCertificate) -> VerificationReport {
    let manifest = &asset.manifest;
    let claim = &manifest.claim;
    let chain = &manifest.certificate_chain;

    let chain_check = verify_chain_for_role(chain, trust_root, SIGNER_ROLE).map_err(Failure::UntrustedChain);

    let signature_check = match chain.first() {
        Some(leaf) if crypto::verify_prehash(&leaf.public_key, &claim.digest(), &manifest.signature) => Ok(()),
        _ => Err(Failure::SignatureInvalid),
    };

    let binding_check = match claim.hard_binding() {
        Some(h) if *h == crypto::sha256(&asset.image_payload) => Ok(()),
        Some(_) => Err(Failure::HardBindingMismatch),
        None => Err(Failure::HardBindingAbsent),
    };

    let missing: Vec<_> = AssertionKind::REQUIRED
        .into_iter()
        .filter(|&k| claim.find(k).is_none())
        .collect();
    let assertions_check = if missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::MissingAssertions(missing))
    };

    VerificationReport {
        checks: vec![
            (Check::Chain, chain_check),
            (Check::Signature, signature_check),
            (Check::HardBinding, binding_check),
            (Check::Assertions, assertions_check),
        ],
        malformed: None,
        signer: chain.first().map(|c| c.subject_id.clone()),
        frame_counter: claim.frame_counter(),
    }
}

pub fn verify_asset_bytes(bytes: &[u8], trust_root: &DeviceCertificate) -> VerificationReport {
    match SignedAsset::from_bytes(bytes) {
        Ok(asset) => verify_asset(&asset, trust_root),
        Err(e) => VerificationReport {
            checks: Vec::new(),
            malformed: Some(e.to_string()),
            signer: None,
            frame_counter: None,
        },
    }
}
