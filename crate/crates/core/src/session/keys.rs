use std::fmt;

use hkdf::Hkdf;
use sha2::Sha256;

pub const AEAD_KEY_LABEL: &[u8] = b"sra v1 aead key";
pub const MAC_KEY_LABEL: &[u8] = b"sra v1 mac key";
pub const NONCE_SALT_LABEL: &[u8] = b"sra v1 nonce salt";
pub const SESSION_ID_LABEL: &[u8] = b"sra v1 session id";

/// Per-session traffic keys. Both endpoints derive identical values.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKeys {
    pub aead_key: [u8; 16],
    pub mac_key: [u8; 16],
    pub nonce_salt: u32,
    pub session_id: u64,
}

impl fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionKeys")
            .field("session_id", &format_args!("{:#018x}", self.session_id))
            .finish_non_exhaustive()
    }
}

fn expand<const N: usize>(hk: &Hkdf<Sha256>, label: &[u8]) -> [u8; N] {
    let mut out = [0u8; N];
    hk.expand(label, &mut out).expect("output far below the HKDF limit");
    out
}

/// HKDF-SHA256 with the transcript hash as salt and one labelled expand per
/// output.
pub fn derive_keys(shared_secret: &[u8], transcript_hash: &[u8; 32]) -> SessionKeys {
    let hk = Hkdf::<Sha256>::new(Some(transcript_hash), shared_secret);
    SessionKeys {
        aead_key: expand(&hk, AEAD_KEY_LABEL),
        mac_key: expand(&hk, MAC_KEY_LABEL),
        nonce_salt: u32::from_be_bytes(expand(&hk, NONCE_SALT_LABEL)),
        session_id: u64::from_be_bytes(expand(&hk, SESSION_ID_LABEL)),
    }
}

/// Finished-message HMAC keys, one per direction.
pub(crate) fn finished_keys(shared_secret: &[u8], key_exchange_hash: &[u8; 32]) -> ([u8; 32], [u8; 32]) {
    let hk = Hkdf::<Sha256>::new(Some(key_exchange_hash), shared_secret);
    (
        expand(&hk, b"sra v1 finished requester"),
        expand(&hk, b"sra v1 finished responder"),
    )
}
