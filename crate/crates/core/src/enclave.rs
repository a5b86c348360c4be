//! Simulated trusted execution environment.
//!
//! The enclave is reached only through [`Enclave::handle`]. It owns the
//! signing key, runs the host side of the handshake so session keys never
//! leave it, and turns protected frames into signed assets. No response
//! carries an unsigned image.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{self, Digest32, SigningMode, SIGNATURE_LEN};
use crate::imaging::demosaic;
use crate::protection::{
    unprotect, verify_packet_tag, CipherProfile, ProtectedFrame, Rejection, ReplayState, TagCarriage, TAG_LEN,
};
use crate::provenance::{build_manifest, AuthStatus, CaptureContext, ProvenanceError, SignedAsset};
use crate::sensor;
use crate::session::cert::{read_chain, write_chain};
use crate::session::{
    session_rng, AuthError, DeviceCertificate, HandshakeEndpoint, Identity, InitiatorSession, Phase, SessionKeys,
};

/// Source of capture timestamps, owned by the enclave.
pub trait TrustedClock: Send {
    /// Seconds since the Unix epoch.
    fn now(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl TrustedClock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl TrustedClock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnclaveError {
    #[error("key vault is not provisioned")]
    Unprovisioned,
    #[error("no established session")]
    NoSession,
    #[error("handshake failed: {0}")]
    Handshake(AuthError),
    #[error("frame rejected: {0}")]
    Rejected(Rejection),
    #[error("line tag for line {line} missing or invalid")]
    PacketTag { line: u32 },
    #[error("frame uses {found} profile, session requires {expected}")]
    ProfileMismatch {
        expected: CipherProfile,
        found: CipherProfile,
    },
    #[error("malformed request: {0}")]
    Malformed(DecodeError),
    #[error("image processing failed: {0}")]
    Imaging(String),
    #[error(transparent)]
    Provenance(#[from] ProvenanceError),
}

impl EnclaveError {
    pub fn is_frame_rejection(&self) -> bool {
        matches!(
            self,
            Self::Rejected(_) | Self::PacketTag { .. } | Self::ProfileMismatch { .. }
        )
    }
}

/// Signing key, certificate chain and active session keys. Never leaves the
/// enclave and exposes no key material.
pub struct KeyVault {
    identity: Option<Identity>,
    session_keys: Option<SessionKeys>,
}

impl fmt::Debug for KeyVault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyVault")
            .field("provisioned", &self.identity.is_some())
            .field("session", &self.session_keys.as_ref().map(|k| k.session_id))
            .finish_non_exhaustive()
    }
}

impl KeyVault {
    pub fn empty() -> Self {
        Self {
            identity: None,
            session_keys: None,
        }
    }

    pub fn provisioned(identity: Identity) -> Self {
        Self {
            identity: Some(identity),
            session_keys: None,
        }
    }

    pub fn is_provisioned(&self) -> bool {
        self.identity.is_some()
    }

    fn identity(&self) -> Result<&Identity, EnclaveError> {
        self.identity.as_ref().ok_or(EnclaveError::Unprovisioned)
    }

    pub fn certificate_chain(&self) -> Result<&[DeviceCertificate], EnclaveError> {
        Ok(self.identity()?.chain())
    }

    /// The only signing entry point.
    pub fn sign_digest(&self, digest: &Digest32, mode: SigningMode) -> Result<[u8; SIGNATURE_LEN], EnclaveError> {
        Ok(self.identity()?.sign_digest(digest, mode))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Opcode {
    HandshakeStart,
    HandshakeMessage,
    HandshakeAbort,
    Capture,
    CertificateChain,
    SessionInfo,
}

impl Opcode {
    pub const ALL: [Opcode; 6] = [
        Self::HandshakeStart,
        Self::HandshakeMessage,
        Self::HandshakeAbort,
        Self::Capture,
        Self::CertificateChain,
        Self::SessionInfo,
    ];

    pub fn code(self) -> u8 {
        match self {
            Self::HandshakeStart => 0x01,
            Self::HandshakeMessage => 0x02,
            Self::HandshakeAbort => 0x03,
            Self::Capture => 0x10,
            Self::CertificateChain => 0x20,
            Self::SessionInfo => 0x21,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.code() == code)
    }
}

/// Inbound call across the boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveRequest {
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl EnclaveRequest {
    pub fn handshake_start(profile: CipherProfile, carriage: TagCarriage) -> Self {
        Self {
            opcode: Opcode::HandshakeStart,
            payload: vec![profile.code(), carriage.code()],
        }
    }

    pub fn handshake_message(message: Vec<u8>) -> Self {
        Self {
            opcode: Opcode::HandshakeMessage,
            payload: message,
        }
    }

    pub fn handshake_abort() -> Self {
        Self {
            opcode: Opcode::HandshakeAbort,
            payload: Vec::new(),
        }
    }

    pub fn capture(request: &CaptureRequest) -> Self {
        Self {
            opcode: Opcode::Capture,
            payload: request.to_bytes(),
        }
    }

    pub fn certificate_chain() -> Self {
        Self {
            opcode: Opcode::CertificateChain,
            payload: Vec::new(),
        }
    }

    pub fn session_info() -> Self {
        Self {
            opcode: Opcode::SessionInfo,
            payload: Vec::new(),
        }
    }
}

/// A received protected frame plus any per-line tags, as assembled by the
/// normal-world receiver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRequest {
    pub frame: ProtectedFrame,
    /// (line index, tag) in arrival order.
    pub line_tags: Vec<(u32, [u8; TAG_LEN])>,
}

impl CaptureRequest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&self.frame.to_bytes()).u32(self.line_tags.len() as u32);
        for (line, tag) in &self.line_tags {
            w.u32(*line).raw(tag);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let frame = ProtectedFrame::from_bytes(r.bytes()?)?;
        let n = r.u32()? as usize;
        if n > r.remaining() / (4 + TAG_LEN) {
            return Err(DecodeError::InvalidValue("line tag count"));
        }
        let line_tags = (0..n)
            .map(|_| Ok((r.u32()?, r.array()?)))
            .collect::<Result<_, DecodeError>>()?;
        r.expect_end()?;
        Ok(Self { frame, line_tags })
    }
}

/// Non-secret session status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionInfo {
    pub phase: Phase,
    pub session_id: Option<u64>,
    pub profile: CipherProfile,
    pub carriage: TagCarriage,
    pub highest_accepted: Option<u64>,
    pub peer_subject: Option<String>,
}

/// Outbound result. The only image-bearing variant is `Asset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnclaveResponse {
    Handshake {
        messages: Vec<Vec<u8>>,
        phase: Phase,
        /// Set once the session is established.
        session_id: Option<u64>,
    },
    Asset(SignedAsset),
    CertificateChain(Vec<DeviceCertificate>),
    SessionInfo(SessionInfo),
    Aborted,
    Error(EnclaveError),
}

impl EnclaveResponse {
    /// Byte image of the response as it crosses the boundary, used for
    /// egress recording.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Self::Handshake {
                messages,
                phase,
                session_id,
            } => {
                w.u8(0x01).u32(messages.len() as u32);
                for m in messages {
                    w.bytes(m);
                }
                w.str(&format!("{phase:?}")).u64(session_id.unwrap_or(0));
            }
            Self::Asset(asset) => {
                w.u8(0x02).bytes(&asset.to_bytes());
            }
            Self::CertificateChain(chain) => {
                w.u8(0x03);
                write_chain(&mut w, chain);
            }
            Self::SessionInfo(info) => {
                w.u8(0x04).str(&format!("{info:?}"));
            }
            Self::Aborted => {
                w.u8(0x05);
            }
            Self::Error(e) => {
                w.u8(0xFF).str(&e.to_string());
            }
        }
        w.finish()
    }
}

struct ActiveSession {
    profile: CipherProfile,
    carriage: TagCarriage,
    replay: ReplayState,
    peer: DeviceCertificate,
}

struct PendingHandshake {
    session: InitiatorSession,
    profile: CipherProfile,
    carriage: TagCarriage,
}

pub struct Enclave {
    vault: KeyVault,
    trust_root: DeviceCertificate,
    clock: Box<dyn TrustedClock>,
    signing_mode: SigningMode,
    handshake_seed: Option<u64>,
    handshake: Option<PendingHandshake>,
    session: Option<ActiveSession>,
    phase: Phase,
}

impl fmt::Debug for Enclave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Enclave")
            .field("vault", &self.vault)
            .field("phase", &self.phase)
            .finish_non_exhaustive()
    }
}

impl Enclave {
    pub fn new(
        vault: KeyVault,
        trust_root: DeviceCertificate,
        clock: Box<dyn TrustedClock>,
        signing_mode: SigningMode,
    ) -> Self {
        Self {
            vault,
            trust_root,
            clock,
            signing_mode,
            handshake_seed: None,
            handshake: None,
            session: None,
            phase: Phase::Idle,
        }
    }

    /// Seeds the handshake RNG (test mode) instead of drawing from the OS.
    pub fn with_handshake_seed(mut self, seed: Option<u64>) -> Self {
        self.handshake_seed = seed;
        self
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Serves one request. Requests are processed strictly one at a time.
    pub fn handle(&mut self, request: EnclaveRequest) -> EnclaveResponse {
        self.dispatch(request).unwrap_or_else(EnclaveResponse::Error)
    }

    fn dispatch(&mut self, request: EnclaveRequest) -> Result<EnclaveResponse, EnclaveError> {
        match request.opcode {
            Opcode::HandshakeStart => self.start_handshake(&request.payload),
            Opcode::HandshakeMessage => self.continue_handshake(&request.payload),
            Opcode::HandshakeAbort => {
                self.reset(Phase::Failed);
                Ok(EnclaveResponse::Aborted)
            }
            Opcode::Capture => {
                let req = CaptureRequest::from_bytes(&request.payload).map_err(EnclaveError::Malformed)?;
                self.capture(&req).map(EnclaveResponse::Asset)
            }
            Opcode::CertificateChain => Ok(EnclaveResponse::CertificateChain(
                self.vault.certificate_chain()?.to_vec(),
            )),
            Opcode::SessionInfo => Ok(EnclaveResponse::SessionInfo(self.session_info())),
        }
    }

    fn reset(&mut self, phase: Phase) {
        self.handshake = None;
        self.session = None;
        self.vault.session_keys = None;
        self.phase = phase;
    }

    fn session_info(&self) -> SessionInfo {
        let (profile, carriage) = match (&self.session, &self.handshake) {
            (Some(s), _) => (s.profile, s.carriage),
            (None, Some(h)) => (h.profile, h.carriage),
            _ => Default::default(),
        };
        SessionInfo {
            phase: self.phase,
            session_id: self.vault.session_keys.as_ref().map(|k| k.session_id),
            profile,
            carriage,
            highest_accepted: self.session.as_ref().and_then(|s| s.replay.highest_accepted()),
            peer_subject: self.session.as_ref().map(|s| s.peer.subject_id.clone()),
        }
    }

    fn start_handshake(&mut self, payload: &[u8]) -> Result<EnclaveResponse, EnclaveError> {
        let identity = self.vault.identity()?.clone();
        let mut r = Reader::new(payload);
        let profile = CipherProfile::from_code(r.u8().map_err(EnclaveError::Malformed)?)
            .ok_or(EnclaveError::Malformed(DecodeError::InvalidValue("cipher profile")))?;
        let carriage = TagCarriage::from_code(r.u8().map_err(EnclaveError::Malformed)?)
            .ok_or(EnclaveError::Malformed(DecodeError::InvalidValue("tag carriage")))?;
        r.expect_end().map_err(EnclaveError::Malformed)?;

        self.reset(Phase::Idle);
        let mut session = InitiatorSession::new(identity, self.trust_root.clone(), session_rng(self.handshake_seed));
        let messages = session.start().map_err(|e| self.fail(e))?;
        self.phase = session.phase();
        self.handshake = Some(PendingHandshake {
            session,
            profile,
            carriage,
        });
        Ok(EnclaveResponse::Handshake {
            messages,
            phase: self.phase,
            session_id: None,
        })
    }

    fn fail(&mut self, error: AuthError) -> EnclaveError {
        self.reset(Phase::Failed);
        EnclaveError::Handshake(error)
    }

    fn continue_handshake(&mut self, message: &[u8]) -> Result<EnclaveResponse, EnclaveError> {
        let Some(pending) = self.handshake.as_mut() else {
            return Err(self.fail(AuthError::AlreadyFailed));
        };
        let messages = match pending.session.receive(message) {
            Ok(m) => m,
            Err(e) => return Err(self.fail(e)),
        };
        self.phase = pending.session.phase();
        if self.phase != Phase::Established {
            return Ok(EnclaveResponse::Handshake {
                messages,
                phase: self.phase,
                session_id: None,
            });
        }
        let mut pending = self.handshake.take().expect("checked above");
        let keys = pending.session.take_keys().expect("established sessions hold keys");
        let peer = pending
            .session
            .peer_certificate()
            .cloned()
            .expect("established sessions know their peer");
        let session_id = keys.session_id;
        self.vault.session_keys = Some(keys);
        self.session = Some(ActiveSession {
            profile: pending.profile,
            carriage: pending.carriage,
            replay: ReplayState::new(),
            peer,
        });
        Ok(EnclaveResponse::Handshake {
            messages,
            phase: self.phase,
            session_id: Some(session_id),
        })
    }

    fn capture(&mut self, req: &CaptureRequest) -> Result<SignedAsset, EnclaveError> {
        let identity = self.vault.identity()?;
        let (Some(keys), Some(session)) = (self.vault.session_keys.as_ref(), self.session.as_mut()) else {
            return Err(EnclaveError::NoSession);
        };
        let header = &req.frame.header;
        if header.profile != session.profile {
            return Err(EnclaveError::ProfileMismatch {
                expected: session.profile,
                found: header.profile,
            });
        }
        if session.carriage == TagCarriage::PerPacket {
            check_line_tags(keys, req)?;
        }

        let raw = unprotect(&req.frame, keys, &mut session.replay).map_err(EnclaveError::Rejected)?;
        let image = demosaic(&raw).map_err(|e| EnclaveError::Imaging(e.to_string()))?;
        drop(raw);
        let image_payload = image.to_raster();

        let ctx = CaptureContext {
            session_id: keys.session_id,
            sequence: header.sequence,
            profile: header.profile,
            signer_subject: identity.certificate().subject_id.clone(),
            sensor_subject: session.peer.subject_id.clone(),
            auth_status: AuthStatus::Succeeded,
            time: self.clock.now(),
        };
        let claim = build_manifest(&image_payload, &ctx)?;
        let signature = self.vault.sign_digest(&claim.digest(), self.signing_mode)?;
        let manifest = claim.into_manifest(signature, self.vault.certificate_chain()?.to_vec());
        debug_assert_eq!(
            manifest.claim.hard_binding(),
            Some(&crypto::sha256(&image_payload))
        );
        Ok(SignedAsset {
            image_payload,
            manifest,
        })
    }
}

fn check_line_tags(keys: &SessionKeys, req: &CaptureRequest) -> Result<(), EnclaveError> {
    let header = &req.frame.header;
    let line_len = sensor::line_bytes(header.width);
    let lines = header.height as usize;
    if line_len == 0 || req.frame.body.len() != line_len * lines {
        return Err(EnclaveError::Rejected(Rejection::BodyLength {
            width: header.width,
            height: header.height,
        }));
    }
    for (i, line) in req.frame.body.chunks_exact(line_len).enumerate() {
        let i = i as u32;
        match req.line_tags.get(i as usize) {
            Some((index, tag)) if *index == i && verify_packet_tag(keys, header, i, line, tag) => {}
            _ => return Err(EnclaveError::PacketTag { line: i }),
        }
    }
    if req.line_tags.len() != lines {
        return Err(EnclaveError::PacketTag { line: lines as u32 });
    }
    Ok(())
}

/// Lets the normal world drive the enclave's handshake with [`crate::session::drive`].
/// Every request goes through `call`, so the caller can record egress.
pub struct EnclaveInitiator<'a> {
    call: &'a mut dyn FnMut(EnclaveRequest) -> EnclaveResponse,
    profile: CipherProfile,
    carriage: TagCarriage,
    phase: Phase,
    session_id: Option<u64>,
}

impl<'a> EnclaveInitiator<'a> {
    pub fn new(
        call: &'a mut dyn FnMut(EnclaveRequest) -> EnclaveResponse,
        profile: CipherProfile,
        carriage: TagCarriage,
    ) -> Self {
        Self {
            call,
            profile,
            carriage,
            phase: Phase::Idle,
            session_id: None,
        }
    }

    pub fn session_id(&self) -> Option<u64> {
        self.session_id
    }

    fn exchange(&mut self, request: EnclaveRequest) -> Result<Vec<Vec<u8>>, AuthError> {
        match (self.call)(request) {
            EnclaveResponse::Handshake {
                messages,
                phase,
                session_id,
            } => {
                self.phase = phase;
                self.session_id = session_id;
                Ok(messages)
            }
            EnclaveResponse::Error(EnclaveError::Handshake(e)) => {
                self.phase = Phase::Failed;
                Err(e)
            }
            other => {
                self.phase = Phase::Failed;
                Err(AuthError::Transport(format!("unexpected enclave response: {other:?}")))
            }
        }
    }
}

impl HandshakeEndpoint for EnclaveInitiator<'_> {
    fn start(&mut self) -> Result<Vec<Vec<u8>>, AuthError> {
        self.exchange(EnclaveRequest::handshake_start(self.profile, self.carriage))
    }

    fn receive(&mut self, message: &[u8]) -> Result<Vec<Vec<u8>>, AuthError> {
        self.exchange(EnclaveRequest::handshake_message(message.to_vec()))
    }

    fn phase(&self) -> Phase {
        self.phase
    }

    fn abort(&mut self) {
        (self.call)(EnclaveRequest::handshake_abort());
        self.phase = Phase::Failed;
        self.session_id = None;
    }
}

/// Reads a chain-bearing response payload.
pub fn parse_chain_response(bytes: &[u8]) -> Result<Vec<DeviceCertificate>, DecodeError> {
    let mut r = Reader::new(bytes);
    if r.u8()? != 0x03 {
        return Err(DecodeError::InvalidValue("response kind"));
    }
    let chain = read_chain(&mut r)?;
    r.expect_end()?;
    Ok(chain)
}
