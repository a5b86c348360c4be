//! Known-answer tests for the cryptographic engines, run before any frame is
//! processed.

use thiserror::Error;

use crate::crypto::{self, SigningMode};
use crate::protection::{cmac_tag, gcm_open, gcm_seal};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("known-answer test failed: {0}")]
pub struct SelfTestFailure(pub String);

fn h(s: &str) -> Vec<u8> {
    hex::decode(s).expect("vector literals are valid hex")
}

fn key16(s: &str) -> [u8; 16] {
    h(s).try_into().expect("128-bit key")
}

fn check(name: &str, ok: bool) -> Result<(), SelfTestFailure> {
    if ok {
        Ok(())
    } else {
        Err(SelfTestFailure(name.to_string()))
    }
}

struct GcmVector {
    key: &'static str,
    iv: &'static str,
    plaintext: &'static str,
    aad: &'static str,
    ciphertext: &'static str,
    tag: &'static str,
}

// GCM specification test cases 1-4 (AES-128).
const GCM_VECTORS: &[GcmVector] = &[
    GcmVector {
        key: "00000000000000000000000000000000",
        iv: "000000000000000000000000",
        plaintext: "",
        aad: "",
        ciphertext: "",
        tag: "58e2fccefa7e3061367f1d57a4e7455a",
    },
    GcmVector {
        key: "00000000000000000000000000000000",
        iv: "000000000000000000000000",
        plaintext: "00000000000000000000000000000000",
        aad: "",
        ciphertext: "0388dace60b6a392f328c2b971b2fe78",
        tag: "ab6e47d42cec13bdf53a67b21257bddf",
    },
    GcmVector {
        key: "feffe9928665731c6d6a8f9467308308",
        iv: "cafebabefacedbaddecaf888",
        plaintext: "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255",
        aad: "",
        ciphertext: "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091473f5985",
        tag: "4d5c2af327cd64a62cf35abd2ba6fab4",
    },
    GcmVector {
        key: "feffe9928665731c6d6a8f9467308308",
        iv: "cafebabefacedbaddecaf888",
        plaintext: "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
        aad: "feedfacedeadbeeffeedfacedeadbeefabaddad2",
        ciphertext: "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091",
        tag: "5bc94fbc3221a5db94fae95ae7121a47",
    },
];

// RFC 4493 section 4.
const CMAC_KEY: &str = "2b7e151628aed2a6abf7158809cf4f3c";
const CMAC_MESSAGE: &str = "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e5130c81c46a35ce411e5fbc1191a0a52eff69f2445df4f9b17ad2b417be66c3710";
const CMAC_VECTORS: &[(usize, &str)] = &[
    (0, "bb1d6929e95937287fa37d129b756746"),
    (16, "070a16b46b4d4144f79bdd9dd04a287c"),
    (40, "dfa66747de9ae63030ca32611497c827"),
    (64, "51f0bebf7e3b9d92fc49741779363cfe"),
];

const SHA256_VECTORS: &[(&str, &str)] = &[
    ("", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    ("abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (
        "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
    ),
];

// RFC 6979 appendix A.2.5 (P-256, SHA-256).
const ECDSA_KEY: &str = "c9afa9d845ba75166b5c215767b1d6934e50c3db36e89b127b8a622b120f6721";
const ECDSA_VECTORS: &[(&str, &str, &str)] = &[
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

pub fn gcm_known_answers() -> Result<(), SelfTestFailure> {
    for (i, v) in GCM_VECTORS.iter().enumerate() {
        let key = key16(v.key);
        let iv: [u8; 12] = h(v.iv).try_into().expect("96-bit iv");
        let aad = h(v.aad);
        let mut buf = h(v.plaintext);
        let tag = gcm_seal(&key, &iv, &aad, &mut buf);
        check(&format!("AES-GCM case {} ciphertext", i + 1), buf == h(v.ciphertext))?;
        check(&format!("AES-GCM case {} tag", i + 1), tag.to_vec() == h(v.tag))?;
        check(&format!("AES-GCM case {} open", i + 1), gcm_open(&key, &iv, &aad, &mut buf, &tag))?;
        check(&format!("AES-GCM case {} decrypt", i + 1), buf == h(v.plaintext))?;
        let mut bad = tag;
        bad[0] ^= 1;
        check(
            &format!("AES-GCM case {} forgery", i + 1),
            !gcm_open(&key, &iv, &aad, &mut h(v.ciphertext), &bad),
        )?;
    }
    Ok(())
}

pub fn cmac_known_answers() -> Result<(), SelfTestFailure> {
    let key = key16(CMAC_KEY);
    let msg = h(CMAC_MESSAGE);
    for &(len, expected) in CMAC_VECTORS {
        let tag = cmac_tag(&key, &[&msg[..len]]);
        check(&format!("AES-CMAC {len}-byte message"), tag.to_vec() == h(expected))?;
        // split input must not change the MAC
        let (a, b) = msg[..len].split_at(len / 3);
        check(&format!("AES-CMAC {len}-byte split"), cmac_tag(&key, &[a, b]) == tag)?;
    }
    Ok(())
}

pub fn sha256_known_answers() -> Result<(), SelfTestFailure> {
    for &(input, expected) in SHA256_VECTORS {
        check(
            &format!("SHA-256 {input:?}"),
            crypto::sha256(input.as_bytes()).to_vec() == h(expected),
        )?;
    }
    Ok(())
}

pub fn ecdsa_known_answers() -> Result<(), SelfTestFailure> {
    let key = p256::ecdsa::SigningKey::from_slice(&h(ECDSA_KEY)).map_err(|e| SelfTestFailure(e.to_string()))?;
    let public = crypto::public_key_bytes(&key);
    for &(msg, r, s) in ECDSA_VECTORS {
        let digest = crypto::sha256(msg.as_bytes());
        let sig = crypto::sign_prehash(&key, &digest, SigningMode::Deterministic);
        check(&format!("ECDSA P-256 {msg:?} r"), sig[..32] == h(r)[..])?;
        check(&format!("ECDSA P-256 {msg:?} s"), sig[32..] == h(s)[..])?;
        check(&format!("ECDSA P-256 {msg:?} verify"), crypto::verify_prehash(&public, &digest, &sig))?;
        let mut other = digest;
        other[31] ^= 1;
        check(
            &format!("ECDSA P-256 {msg:?} wrong digest"),
            !crypto::verify_prehash(&public, &other, &sig),
        )?;
    }
    Ok(())
}

/// Runs every engine's known-answer tests.
pub fn run() -> Result<(), SelfTestFailure> {
    sha256_known_answers()?;
    gcm_known_answers()?;
    cmac_known_answers()?;
    ecdsa_known_answers()
}
