//! ECDSA P-256 over SHA-256 digests.

use p256::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier, RandomizedPrehashSigner};
use p256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use sha2::{Digest, Sha256};

/// Length of an uncompressed SEC1 P-256 point.
pub const PUBLIC_KEY_LEN: usize = 65;
/// Fixed-width r ‖ s.
pub const SIGNATURE_LEN: usize = 64;

pub type Digest32 = [u8; 32];

pub fn sha256(data: &[u8]) -> Digest32 {
    Sha256::digest(data).into()
}

/// How ECDSA nonces are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigningMode {
    /// RFC 6979 nonces mixed with fresh OS randomness.
    #[default]
    Randomized,
    /// Pure RFC 6979 nonces; identical inputs give identical signatures.
    Deterministic,
}

pub fn sign_prehash(key: &SigningKey, digest: &Digest32, mode: SigningMode) -> [u8; SIGNATURE_LEN] {
    let sig: Signature = match mode {
        SigningMode::Deterministic => key.sign_prehash(digest),
        SigningMode::Randomized => key.sign_prehash_with_rng(&mut OsRng, digest),
    }
    .expect("a 32-byte digest is always signable");
    sig.to_bytes().into()
}

/// False on any malformed key or signature as well as on mismatch.
pub fn verify_prehash(public_key: &[u8], digest: &Digest32, signature: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_sec1_bytes(public_key) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(signature) else {
        return false;
    };
    key.verify_prehash(digest, &sig).is_ok()
}

pub fn public_key_bytes(key: &SigningKey) -> [u8; PUBLIC_KEY_LEN] {
    let point = key.verifying_key().to_encoded_point(false);
    point.as_bytes().try_into().expect("uncompressed point is 65 bytes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(s: &str) -> Vec<u8> {
        hex::decode(s).unwrap()
    }

    #[test]
    fn sha256_standard_vectors() {
        assert_eq!(
            sha256(b"").to_vec(),
            h("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
        );
        assert_eq!(
            sha256(b"abc").to_vec(),
            h("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
        );
        assert_eq!(
            sha256(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").to_vec(),
            h("248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1")
        );
    }

    // RFC 6979 appendix A.2.5, P-256 with SHA-256.
    const RFC6979_KEY: &str = "c9afa9d845ba75166b5c215767b1d6934e50c3db36e89b127b8a622b120f6721";
    const RFC6979_UX: &str = "60fed4ba255a9d31c961eb74c6356d68c049b8923b61fa6ce669622e60f29fb6";
    const RFC6979_UY: &str = "7903fe1008b8bc99a41ae9e95628bc64f2f1b20c2d7e9f5177a3c294d4462299";

    #[test]
    fn ecdsa_rfc6979_vectors() {
        let key = SigningKey::from_slice(&h(RFC6979_KEY)).unwrap();
        let public = public_key_bytes(&key);
        assert_eq!(public[0], 0x04);
        assert_eq!(public[1..33].to_vec(), h(RFC6979_UX));
        assert_eq!(public[33..].to_vec(), h(RFC6979_UY));

        let cases = [
            (
                "sample",
                "efd48b2aacb6a8fd1140dd9cd45e81d69d2c877b56aaf991c34d0ea84eaf3716",
                "f7cb1c942d657c41d436c7a1b6e29f65f3e900dbb9aff4064dc4ab2f843acda8",
            ),
            (
                "test",
                "f1abb023518351cd71d881567b1ea663ed3efcf6c5132b354f28d3b0b7d38367",
                "019f4113742a2b14bd25926b49c649155f267e60d3814b4c0cc84250e46f0083",
            ),
        ];
        for (msg, r, s) in cases {
            let digest = sha256(msg.as_bytes());
            let sig = sign_prehash(&key, &digest, SigningMode::Deterministic);
            assert_eq!(sig[..32].to_vec(), h(r), "r for {msg}");
            assert_eq!(sig[32..].to_vec(), h(s), "s for {msg}");
            assert!(verify_prehash(&public, &digest, &sig));
        }
    }

    #[test]
    fn randomized_signatures_verify() {
        let key = SigningKey::random(&mut OsRng);
        let d = sha256(b"frame");
        let a = sign_prehash(&key, &d, SigningMode::Randomized);
        let b = sign_prehash(&key, &d, SigningMode::Randomized);
        assert_ne!(a, b);
        assert!(verify_prehash(&public_key_bytes(&key), &d, &a));
        assert!(verify_prehash(&public_key_bytes(&key), &d, &b));
        assert!(!verify_prehash(&public_key_bytes(&key), &sha256(b"other"), &a));
        assert!(!verify_prehash(&[4u8; 65], &d, &a));
        assert!(!verify_prehash(&public_key_bytes(&key), &d, &a[..63]));
    }
}
