//! Device certificates: a deterministic length-prefixed record signed by the
//! issuer, chained up to a self-signed manufacturer root.

use std::fmt;

use p256::ecdsa::SigningKey;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{self, SigningMode, PUBLIC_KEY_LEN, SIGNATURE_LEN};

const CERT_MAGIC: &[u8; 4] = b"SRAC";
const CERT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Sensor,
    Host,
    /// Intermediate issuing authority for one device class.
    DeviceClass,
    ManufacturerRoot,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Self::Sensor => 1,
            Self::Host => 2,
            Self::DeviceClass => 3,
            Self::ManufacturerRoot => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Self::Sensor, Self::Host, Self::DeviceClass, Self::ManufacturerRoot]
            .into_iter()
            .find(|r| r.code() == code)
    }

    pub fn is_authority(self) -> bool {
        matches!(self, Self::DeviceClass | Self::ManufacturerRoot)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sensor => "sensor",
            Self::Host => "host",
            Self::DeviceClass => "device-class",
            Self::ManufacturerRoot => "root",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct DeviceCertificate {
    pub subject_id: String,
    pub role: Role,
    pub public_key: [u8; PUBLIC_KEY_LEN],
    pub issuer_id: String,
    pub signature: [u8; SIGNATURE_LEN],
}

impl fmt::Debug for DeviceCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceCertificate")
            .field("subject_id", &self.subject_id)
            .field("role", &self.role)
            .field("issuer_id", &self.issuer_id)
            .finish_non_exhaustive()
    }
}

impl DeviceCertificate {
    /// The bytes covered by the issuer signature.
    pub fn body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CERT_MAGIC)
            .u8(CERT_VERSION)
            .str(&self.subject_id)
            .u8(self.role.code())
            .raw(&self.public_key)
            .str(&self.issuer_id);
        w.finish()
    }

    pub fn body_digest(&self) -> crypto::Digest32 {
        crypto::sha256(&self.body())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        if r.take(4)? != CERT_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        if r.u8()? != CERT_VERSION {
            return Err(DecodeError::InvalidValue("certificate version"));
        }
        let subject_id = r.str()?;
        let role = Role::from_code(r.u8()?).ok_or(DecodeError::InvalidValue("certificate role"))?;
        let public_key = r.array()?;
        let issuer_id = r.str()?;
        let signature = r.array()?;
        Ok(Self {
            subject_id,
            role,
            public_key,
            issuer_id,
            signature,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let cert = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(cert)
    }

    pub fn is_self_signed(&self) -> bool {
        self.subject_id == self.issuer_id
            && crypto::verify_prehash(&self.public_key, &self.body_digest(), &self.signature)
    }

    pub fn verifies_under(&self, issuer: &DeviceCertificate) -> bool {
        crypto::verify_prehash(&issuer.public_key, &self.body_digest(), &self.signature)
    }
}

pub fn write_chain(w: &mut Writer, chain: &[DeviceCertificate]) {
    w.u32(chain.len() as u32);
    for cert in chain {
        w.bytes(&cert.to_bytes());
    }
}

pub fn read_chain(r: &mut Reader<'_>) -> Result<Vec<DeviceCertificate>, DecodeError> {
    let n = r.u32()? as usize;
    if n > 16 {
        return Err(DecodeError::InvalidValue("certificate chain length"));
    }
    (0..n).map(|_| DeviceCertificate::from_bytes(r.bytes()?)).collect()
}

/// Why a chain failed; `link` indexes the chain leaf-first.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("empty certificate chain")]
    Empty,
    #[error("link {link}: signature does not verify under issuer key")]
    BadSignature { link: usize },
    #[error("link {link}: issuer {issuer:?} does not match next certificate {next:?}")]
    IssuerMismatch {
        link: usize,
        issuer: String,
        next: String,
    },
    #[error("link {link}: role {role} may not issue certificates")]
    NotAnAuthority { link: usize, role: Role },
    #[error("chain terminates at {0:?}, not the trusted root")]
    UntrustedRoot(String),
    #[error("trust root is not a valid self-signed manufacturer root")]
    InvalidTrustRoot,
    #[error("leaf role is {found}, expected {expected}")]
    LeafRole { expected: Role, found: Role },
}

/// Valid iff every link verifies under its issuer and the chain ends at
/// `trust_root`. The root may be included as the last element or omitted.
pub fn verify_chain(chain: &[DeviceCertificate], trust_root: &DeviceCertificate) -> Result<(), ChainError> {
    if trust_root.role != Role::ManufacturerRoot || !trust_root.is_self_signed() {
        return Err(ChainError::InvalidTrustRoot);
    }
    let Some(last) = chain.last() else {
        return Err(ChainError::Empty);
    };
    for (link, pair) in chain.windows(2).enumerate() {
        let (cert, issuer) = (&pair[0], &pair[1]);
        if cert.issuer_id != issuer.subject_id {
            return Err(ChainError::IssuerMismatch {
                link,
                issuer: cert.issuer_id.clone(),
                next: issuer.subject_id.clone(),
            });
        }
        if !issuer.role.is_authority() {
            return Err(ChainError::NotAnAuthority {
                link: link + 1,
                role: issuer.role,
            });
        }
        if !cert.verifies_under(issuer) {
            return Err(ChainError::BadSignature { link });
        }
    }
    let last_link = chain.len() - 1;
    if last == trust_root {
        return Ok(());
    }
    if last.role == Role::ManufacturerRoot || last.issuer_id != trust_root.subject_id {
        return Err(ChainError::UntrustedRoot(last.issuer_id.clone()));
    }
    if !last.verifies_under(trust_root) {
        return Err(ChainError::BadSignature { link: last_link });
    }
    Ok(())
}

/// Chain check plus the expected role of the leaf.
pub fn verify_chain_for_role(
    chain: &[DeviceCertificate],
    trust_root: &DeviceCertificate,
    leaf_role: Role,
) -> Result<(), ChainError> {
    verify_chain(chain, trust_root)?;
    let found = chain[0].role;
    if found != leaf_role {
        return Err(ChainError::LeafRole {
            expected: leaf_role,
            found,
        });
    }
    Ok(())
}

/// A private key plus its certificate chain (leaf first, ending at the root).
#[derive(Clone)]
pub struct Identity {
    signing_key: SigningKey,
    chain: Vec<DeviceCertificate>,
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("subject_id", &self.certificate().subject_id)
            .field("role", &self.certificate().role)
            .finish_non_exhaustive()
    }
}

fn subject_for(role: Role, public_key: &[u8]) -> String {
    let fp = crypto::sha256(public_key);
    format!("{}-{}", role.name(), hex::encode(&fp[..4]))
}

impl Identity {
    pub fn new_root<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let key = SigningKey::random(rng);
        let public_key = crypto::public_key_bytes(&key);
        let subject_id = subject_for(Role::ManufacturerRoot, &public_key);
        let mut cert = DeviceCertificate {
            subject_id: subject_id.clone(),
            role: Role::ManufacturerRoot,
            public_key,
            issuer_id: subject_id,
            signature: [0; SIGNATURE_LEN],
        };
        cert.signature = crypto::sign_prehash(&key, &cert.body_digest(), SigningMode::Deterministic);
        Self {
            signing_key: key,
            chain: vec![cert],
        }
    }

    /// Issues a new identity with `role` under this (authority) identity.
    pub fn issue<R: RngCore + CryptoRng>(&self, role: Role, rng: &mut R) -> Self {
        let key = SigningKey::random(rng);
        self.issue_for_key(role, key)
    }

    pub fn issue_for_key(&self, role: Role, key: SigningKey) -> Self {
        assert!(self.certificate().role.is_authority(), "issuer must be an authority");
        assert!(role != Role::ManufacturerRoot, "roots are self-signed");
        let public_key = crypto::public_key_bytes(&key);
        let mut cert = DeviceCertificate {
            subject_id: subject_for(role, &public_key),
            role,
            public_key,
            issuer_id: self.certificate().subject_id.clone(),
            signature: [0; SIGNATURE_LEN],
        };
        cert.signature = self.sign_digest(&cert.body_digest(), SigningMode::Deterministic);
        let mut chain = vec![cert];
        chain.extend(self.chain.iter().cloned());
        Self {
            signing_key: key,
            chain,
        }
    }

    pub fn from_parts(signing_key: SigningKey, chain: Vec<DeviceCertificate>) -> Option<Self> {
        let leaf = chain.first()?;
        (leaf.public_key == crypto::public_key_bytes(&signing_key)).then_some(Self { signing_key, chain })
    }

    pub fn certificate(&self) -> &DeviceCertificate {
        &self.chain[0]
    }

    pub fn chain(&self) -> &[DeviceCertificate] {
        &self.chain
    }

    pub fn root_certificate(&self) -> &DeviceCertificate {
        self.chain.last().expect("chain is never empty")
    }

    pub fn sign_digest(&self, digest: &crypto::Digest32, mode: SigningMode) -> [u8; SIGNATURE_LEN] {
        crypto::sign_prehash(&self.signing_key, digest, mode)
    }

    /// Rebuilds an identity from a stored scalar; `None` if the scalar is
    /// invalid or does not match the chain's leaf.
    pub fn from_private_scalar(scalar: &[u8; 32], chain: Vec<DeviceCertificate>) -> Option<Self> {
        let key = SigningKey::from_slice(scalar).ok()?;
        Self::from_parts(key, chain)
    }

    /// Raw private scalar, for key-store persistence only.
    pub fn private_scalar(&self) -> [u8; 32] {
        self.signing_key.to_bytes().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(1)
    }

    #[test]
    fn root_verifies_itself() {
        let root = Identity::new_root(&mut rng());
        assert_eq!(verify_chain(root.chain(), root.certificate()), Ok(()));
    }

    #[test]
    fn depth_three_chain() {
        let mut rng = rng();
        let root = Identity::new_root(&mut rng);
        let class = root.issue(Role::DeviceClass, &mut rng);
        let device = class.issue(Role::Sensor, &mut rng);
        assert_eq!(device.chain().len(), 3);
        assert_eq!(verify_chain(device.chain(), root.certificate()), Ok(()));
        // independent cross-check of each link
        let c = device.chain();
        assert!(crypto::verify_prehash(&c[1].public_key, &c[0].body_digest(), &c[0].signature));
        assert!(crypto::verify_prehash(&c[2].public_key, &c[1].body_digest(), &c[1].signature));
        // root omitted is also accepted
        assert_eq!(verify_chain(&c[..2], root.certificate()), Ok(()));
        assert_eq!(verify_chain_for_role(c, root.certificate(), Role::Sensor), Ok(()));
        assert!(matches!(
            verify_chain_for_role(c, root.certificate(), Role::Host),
            Err(ChainError::LeafRole { .. })
        ));
    }

    #[test]
    fn corrupted_signature_names_link() {
        let mut rng = rng();
        let root = Identity::new_root(&mut rng);
        let sensor = root.issue(Role::Sensor, &mut rng);
        let mut chain = sensor.chain().to_vec();
        chain[0].signature[10] ^= 0x01;
        assert_eq!(
            verify_chain(&chain, root.certificate()),
            Err(ChainError::BadSignature { link: 0 })
        );
    }

    #[test]
    fn foreign_root_is_untrusted() {
        let mut rng = rng();
        let root = Identity::new_root(&mut rng);
        let rogue_root = Identity::new_root(&mut rng);
        let rogue = rogue_root.issue(Role::Sensor, &mut rng);
        assert!(matches!(
            verify_chain(rogue.chain(), root.certificate()),
            Err(ChainError::UntrustedRoot(_))
        ));
        assert!(matches!(
            verify_chain(&rogue.chain()[..1], root.certificate()),
            Err(ChainError::UntrustedRoot(_))
        ));
        assert_eq!(verify_chain(&[], root.certificate()), Err(ChainError::Empty));
    }

    #[test]
    fn leaf_cannot_issue() {
        let mut rng = rng();
        let root = Identity::new_root(&mut rng);
        let sensor = root.issue(Role::Sensor, &mut rng);
        // hand-build a cert "issued" by the sensor
        let key = SigningKey::random(&mut rng);
        let public_key = crypto::public_key_bytes(&key);
        let mut cert = DeviceCertificate {
            subject_id: "host-x".into(),
            role: Role::Host,
            public_key,
            issuer_id: sensor.certificate().subject_id.clone(),
            signature: [0; 64],
        };
        cert.signature = sensor.sign_digest(&cert.body_digest(), SigningMode::Deterministic);
        let mut chain = vec![cert];
        chain.extend(sensor.chain().iter().cloned());
        assert_eq!(
            verify_chain(&chain, root.certificate()),
            Err(ChainError::NotAnAuthority {
                link: 1,
                role: Role::Sensor
            })
        );
    }

    #[test]
    fn encoding_round_trip() {
        let mut rng = rng();
        let root = Identity::new_root(&mut rng);
        let host = root.issue(Role::Host, &mut rng);
        let bytes = host.certificate().to_bytes();
        assert_eq!(&DeviceCertificate::from_bytes(&bytes).unwrap(), host.certificate());
        let mut w = Writer::new();
        write_chain(&mut w, host.chain());
        let bytes = w.finish();
        assert_eq!(read_chain(&mut Reader::new(&bytes)).unwrap(), host.chain());
        assert!(DeviceCertificate::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn distinct_subjects() {
        let mut rng = rng();
        let root = Identity::new_root(&mut rng);
        let a = root.issue(Role::Sensor, &mut rng);
        let b = root.issue(Role::Sensor, &mut rng);
        assert_ne!(a.certificate().subject_id, b.certificate().subject_id);
    }
}
