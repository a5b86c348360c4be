//! Per-frame authenticated protection and strict-monotonic replay defense.
//!
//! Two profiles:
//! - efficiency: AES-CMAC over `aad ‖ body`, body in clear;
//! - performance: AES-GCM-128, body encrypted, 16-byte tag.
//!
//! The associated data binds session, sequence, profile, dimensions and CFA
//! order, so none of them can be altered in transit without failing the tag.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use aes::Aes128;
use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes128Gcm, KeyInit, Nonce, Tag};
use cmac::{Cmac, Mac};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::sensor::{self, BayerOrder, RawFrame};
use crate::session::SessionKeys;

pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
/// session_id(8) ‖ sequence(8) ‖ profile(1) ‖ width(4) ‖ height(4) ‖ bayer(1)
pub const AAD_LEN: usize = 26;
/// Set on the profile byte of per-packet tag inputs so they can never
/// collide with a frame-tag input.
const PACKET_TAG_DOMAIN: u8 = 0x80;

static PROTECT_CALLS: AtomicU64 = AtomicU64::new(0);
static UNPROTECT_CALLS: AtomicU64 = AtomicU64::new(0);

/// Process-wide (protect, unprotect) invocation counts.
pub fn call_counts() -> (u64, u64) {
    (
        PROTECT_CALLS.load(Ordering::Relaxed),
        UNPROTECT_CALLS.load(Ordering::Relaxed),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CipherProfile {
    EfficiencyIntegrityOnly,
    #[default]
    PerformanceAead,
}

impl CipherProfile {
    pub const ALL: [CipherProfile; 2] = [Self::EfficiencyIntegrityOnly, Self::PerformanceAead];

    pub fn code(self) -> u8 {
        match self {
            Self::EfficiencyIntegrityOnly => 0x01,
            Self::PerformanceAead => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.code() == code)
    }

    /// Name recorded in provenance assertions.
    pub fn cipher_name(self) -> &'static str {
        match self {
            Self::EfficiencyIntegrityOnly => "AES-CMAC-128",
            Self::PerformanceAead => "AES-GCM-128",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EfficiencyIntegrityOnly => "efficiency",
            Self::PerformanceAead => "performance",
        }
    }

    pub fn encrypts(self) -> bool {
        self == Self::PerformanceAead
    }
}

impl fmt::Display for CipherProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CipherProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "efficiency" | "cmac" => Ok(Self::EfficiencyIntegrityOnly),
            "performance" | "gcm" => Ok(Self::PerformanceAead),
            other => Err(format!("unknown profile {other:?} (expected efficiency|performance)")),
        }
    }
}

/// Where authentication tags travel in the CSI-2 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TagCarriage {
    /// One frame tag before frame end.
    #[default]
    PerFrame,
    /// A line tag after every line packet, plus the frame tag.
    PerPacket,
}

impl TagCarriage {
    pub const ALL: [TagCarriage; 2] = [Self::PerFrame, Self::PerPacket];

    pub fn code(self) -> u8 {
        match self {
            Self::PerFrame => 0x01,
            Self::PerPacket => 0x02,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PerFrame => "per-frame",
            Self::PerPacket => "per-packet",
        }
    }
}

impl fmt::Display for TagCarriage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TagCarriage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-frame" | "per_frame" | "frame" | "fsed" => Ok(Self::PerFrame),
            "per-packet" | "per_packet" | "packet" | "sep" => Ok(Self::PerPacket),
            other => Err(format!("unknown tag carriage {other:?} (expected per-frame|per-packet)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AadHeader {
    pub session_id: u64,
    pub sequence: u64,
    pub profile: CipherProfile,
    pub width: u32,
    pub height: u32,
    pub bayer_order: BayerOrder,
}

impl AadHeader {
    pub fn to_bytes(&self) -> [u8; AAD_LEN] {
        let mut out = [0u8; AAD_LEN];
        out[0..8].copy_from_slice(&self.session_id.to_be_bytes());
        out[8..16].copy_from_slice(&self.sequence.to_be_bytes());
        out[16] = self.profile.code();
        out[17..21].copy_from_slice(&self.width.to_be_bytes());
        out[21..25].copy_from_slice(&self.height.to_be_bytes());
        out[25] = self.bayer_order.code();
        out
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            session_id: r.u64()?,
            sequence: r.u64()?,
            profile: CipherProfile::from_code(r.u8()?).ok_or(DecodeError::InvalidValue("cipher profile"))?,
            width: r.u32()?,
            height: r.u32()?,
            bayer_order: BayerOrder::from_code(r.u8()?).ok_or(DecodeError::InvalidValue("bayer order"))?,
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ProtectedFrame {
    pub header: AadHeader,
    /// Ciphertext (performance) or plaintext packed RAW10 (efficiency).
    pub body: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl fmt::Debug for ProtectedFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProtectedFrame")
            .field("header", &self.header)
            .field("body_len", &self.body.len())
            .finish_non_exhaustive()
    }
}

impl ProtectedFrame {
    pub fn session_id(&self) -> u64 {
        self.header.session_id
    }

    pub fn sequence(&self) -> u64 {
        self.header.sequence
    }

    pub fn aad_header(&self) -> [u8; AAD_LEN] {
        self.header.to_bytes()
    }

    /// `aad ‖ u64 body length ‖ body ‖ tag`, big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(AAD_LEN + 8 + self.body.len() + TAG_LEN);
        w.raw(&self.aad_header())
            .u64(self.body.len() as u64)
            .raw(&self.body)
            .raw(&self.tag);
        w.finish()
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let header = AadHeader::read(r)?;
        let len = r.u64()?;
        let len = usize::try_from(len).map_err(|_| DecodeError::InvalidValue("body length"))?;
        let body = r.take(len)?.to_vec();
        let tag = r.array()?;
        Ok(Self { header, body, tag })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let pf = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(pf)
    }
}

/// salt (big-endian) ‖ sequence (big-endian).
pub fn nonce_for(salt: u32, sequence: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..4].copy_from_slice(&salt.to_be_bytes());
    nonce[4..].copy_from_slice(&sequence.to_be_bytes());
    nonce
}

pub(crate) fn gcm_seal(key: &[u8; 16], nonce: &[u8; NONCE_LEN], aad: &[u8], buf: &mut [u8]) -> [u8; TAG_LEN] {
    let cipher = Aes128Gcm::new(key.into());
    cipher
        .encrypt_in_place_detached(Nonce::from_slice(nonce), aad, buf)
        .expect("frame sizes are far below the GCM limit")
        .into()
}

/// Decrypts in place only when the tag verifies.
pub(crate) fn gcm_open(key: &[u8; 16], nonce: &[u8; NONCE_LEN], aad: &[u8], buf: &mut [u8], tag: &[u8; TAG_LEN]) -> bool {
    let cipher = Aes128Gcm::new(key.into());
    cipher
        .decrypt_in_place_detached(Nonce::from_slice(nonce), aad, buf, Tag::from_slice(tag))
        .is_ok()
}

fn cmac_state(key: &[u8; 16], parts: &[&[u8]]) -> Cmac<Aes128> {
    let mut mac = <Cmac<Aes128> as Mac>::new_from_slice(key).expect("16-byte key");
    for p in parts {
        mac.update(p);
    }
    mac
}

pub(crate) fn cmac_tag(key: &[u8; 16], parts: &[&[u8]]) -> [u8; TAG_LEN] {
    cmac_state(key, parts).finalize().into_bytes().into()
}

fn cmac_ok(key: &[u8; 16], parts: &[&[u8]], tag: &[u8; TAG_LEN]) -> bool {
    cmac_state(key, parts).verify_slice(tag).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtectError {
    #[error("frame counter {sequence} already used (last protected {last})")]
    CounterReuse { sequence: u64, last: u64 },
    #[error(transparent)]
    Dimensions(#[from] sensor::SensorError),
}

/// Stateless protection of one frame under `keys`.
pub fn protect(frame: &RawFrame, keys: &SessionKeys, profile: CipherProfile) -> Result<ProtectedFrame, ProtectError> {
    sensor::check_line_dimensions(frame.width, frame.height)?;
    PROTECT_CALLS.fetch_add(1, Ordering::Relaxed);
    let header = AadHeader {
        session_id: keys.session_id,
        sequence: frame.frame_counter,
        profile,
        width: frame.width,
        height: frame.height,
        bayer_order: frame.bayer_order,
    };
    let aad = header.to_bytes();
    let mut body = frame.packed_bytes();
    let tag = match profile {
        CipherProfile::PerformanceAead => {
            let nonce = nonce_for(keys.nonce_salt, header.sequence);
            gcm_seal(&keys.aead_key, &nonce, &aad, &mut body)
        }
        CipherProfile::EfficiencyIntegrityOnly => cmac_tag(&keys.mac_key, &[&aad, &body]),
    };
    Ok(ProtectedFrame { header, body, tag })
}

/// Sender-side wrapper that refuses to reuse (or rewind) a frame counter,
/// which under GCM would reuse a nonce.
#[derive(Debug)]
pub struct FrameSender {
    keys: SessionKeys,
    profile: CipherProfile,
    last_sequence: Option<u64>,
}

impl FrameSender {
    pub fn new(keys: SessionKeys, profile: CipherProfile) -> Self {
        Self {
            keys,
            profile,
            last_sequence: None,
        }
    }

    pub fn profile(&self) -> CipherProfile {
        self.profile
    }

    pub fn session_id(&self) -> u64 {
        self.keys.session_id
    }

    pub fn keys(&self) -> &SessionKeys {
        &self.keys
    }

    pub fn protect(&mut self, frame: &RawFrame) -> Result<ProtectedFrame, ProtectError> {
        if let Some(last) = self.last_sequence {
            if frame.frame_counter <= last {
                return Err(ProtectError::CounterReuse {
                    sequence: frame.frame_counter,
                    last,
                });
            }
        }
        let pf = protect(frame, &self.keys, self.profile)?;
        self.last_sequence = Some(frame.frame_counter);
        Ok(pf)
    }

    pub fn packet_tag(&self, header: &AadHeader, line_index: u32, line: &[u8]) -> [u8; TAG_LEN] {
        packet_tag(&self.keys, header, line_index, line)
    }
}

/// Receiver replay window of width one: only strictly increasing sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayState {
    highest_accepted: Option<u64>,
}

impl ReplayState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn highest_accepted(&self) -> Option<u64> {
        self.highest_accepted
    }

    pub fn is_fresh(&self, sequence: u64) -> bool {
        self.highest_accepted.is_none_or(|h| sequence > h)
    }

    fn advance(&mut self, sequence: u64) {
        debug_assert!(self.is_fresh(sequence));
        self.highest_accepted = Some(sequence);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("unknown session {found:#018x} (expected {expected:#018x})")]
    SessionMismatch { expected: u64, found: u64 },
    #[error("authentication tag mismatch")]
    TagMismatch,
    #[error("sequence {sequence} not above highest accepted {highest}")]
    ReplayRejected { sequence: u64, highest: u64 },
    #[error("body length does not match {width}x{height}")]
    BodyLength { width: u32, height: u32 },
}

impl Rejection {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::SessionMismatch { .. } => "session_mismatch",
            Self::TagMismatch => "tag_mismatch",
            Self::ReplayRejected { .. } => "replay_rejected",
            Self::BodyLength { .. } => "body_length",
        }
    }
}

/// Accepts iff the tag verifies and the sequence is fresh. Replay state only
/// advances on acceptance; on any rejection no plaintext is returned.
pub fn unprotect(pf: &ProtectedFrame, keys: &SessionKeys, replay: &mut ReplayState) -> Result<RawFrame, Rejection> {
    UNPROTECT_CALLS.fetch_add(1, Ordering::Relaxed);
    let h = &pf.header;
    if h.session_id != keys.session_id {
        return Err(Rejection::SessionMismatch {
            expected: keys.session_id,
            found: h.session_id,
        });
    }
    if let Some(highest) = replay.highest_accepted.filter(|&hi| h.sequence <= hi) {
        return Err(Rejection::ReplayRejected {
            sequence: h.sequence,
            highest,
        });
    }
    let aad = h.to_bytes();
    let body = match h.profile {
        CipherProfile::PerformanceAead => {
            let nonce = nonce_for(keys.nonce_salt, h.sequence);
            let mut buf = pf.body.clone();
            if !gcm_open(&keys.aead_key, &nonce, &aad, &mut buf, &pf.tag) {
                return Err(Rejection::TagMismatch);
            }
            buf
        }
        CipherProfile::EfficiencyIntegrityOnly => {
            if !cmac_ok(&keys.mac_key, &[&aad, &pf.body], &pf.tag) {
                return Err(Rejection::TagMismatch);
            }
            pf.body.clone()
        }
    };
    let dims_ok = sensor::check_line_dimensions(h.width, h.height).is_ok()
        && body.len() as u64 == sensor::line_bytes(h.width) as u64 * h.height as u64;
    if !dims_ok {
        return Err(Rejection::BodyLength {
            width: h.width,
            height: h.height,
        });
    }
    let frame = RawFrame::from_packed(h.width, h.height, h.bayer_order, h.sequence, &body).map_err(|_| {
        Rejection::BodyLength {
            width: h.width,
            height: h.height,
        }
    })?;
    replay.advance(h.sequence);
    Ok(frame)
}

fn packet_tag_input(header: &AadHeader, line_index: u32) -> [u8; AAD_LEN + 4] {
    let mut input = [0u8; AAD_LEN + 4];
    input[..AAD_LEN].copy_from_slice(&header.to_bytes());
    input[16] |= PACKET_TAG_DOMAIN;
    input[AAD_LEN..].copy_from_slice(&line_index.to_be_bytes());
    input
}

/// Per-line AES-CMAC (SEP-style carriage) under the session MAC key, bound
/// to the frame header and the line position.
pub fn packet_tag(keys: &SessionKeys, header: &AadHeader, line_index: u32, line: &[u8]) -> [u8; TAG_LEN] {
    cmac_tag(&keys.mac_key, &[&packet_tag_input(header, line_index), line])
}

pub fn verify_packet_tag(
    keys: &SessionKeys,
    header: &AadHeader,
    line_index: u32,
    line: &[u8],
    tag: &[u8; TAG_LEN],
) -> bool {
    cmac_ok(&keys.mac_key, &[&packet_tag_input(header, line_index), line], tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::generate_frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn keys(seed: u8) -> SessionKeys {
        SessionKeys {
            aead_key: [seed; 16],
            mac_key: [seed.wrapping_add(1); 16],
            nonce_salt: 0,
            session_id: 0xABCD_0000 + seed as u64,
        }
    }

    fn frame(counter: u64) -> RawFrame {
        generate_frame(21, 32, 8, counter, BayerOrder::Rggb).unwrap()
    }

    #[test]
    fn nonce_examples() {
        assert_eq!(nonce_for(0, 0), [0u8; 12]);
        assert_eq!(
            nonce_for(1, 0x0102030405060708),
            [0, 0, 0, 1, 1, 2, 3, 4, 5, 6, 7, 8]
        );
        let mut n1 = [0u8; 12];
        n1[11] = 1;
        let mut n2 = [0u8; 12];
        n2[11] = 2;
        assert_eq!(nonce_for(0, 1), n1);
        assert_eq!(nonce_for(0, 2), n2);
    }

    #[test]
    fn nonce_unique_over_a_million_sequences() {
        let mut seen = std::collections::HashSet::with_capacity(1 << 20);
        for seq in 0..1_000_000u64 {
            assert!(seen.insert(nonce_for(0xDEADBEEF, seq)));
        }
    }

    #[test]
    fn round_trip_both_profiles() {
        for profile in CipherProfile::ALL {
            let k = keys(3);
            let f = frame(5);
            let pf = protect(&f, &k, profile).unwrap();
            assert_eq!(pf.body != f.packed_bytes(), profile.encrypts());
            let mut replay = ReplayState::new();
            assert_eq!(unprotect(&pf, &k, &mut replay).unwrap(), f);
            assert_eq!(replay.highest_accepted(), Some(5));
        }
    }

    #[test]
    fn replay_and_reorder_rejected() {
        let k = keys(4);
        let pfs: Vec<_> = (5..=6).map(|c| protect(&frame(c), &k, CipherProfile::PerformanceAead).unwrap()).collect();
        let mut replay = ReplayState::new();
        unprotect(&pfs[0], &k, &mut replay).unwrap();
        unprotect(&pfs[1], &k, &mut replay).unwrap();
        assert_eq!(
            unprotect(&pfs[0], &k, &mut replay),
            Err(Rejection::ReplayRejected { sequence: 5, highest: 6 })
        );
        assert!(matches!(
            unprotect(&pfs[1], &k, &mut replay),
            Err(Rejection::ReplayRejected { .. })
        ));
    }

    #[test]
    fn tamper_does_not_advance_replay() {
        for profile in CipherProfile::ALL {
            let k = keys(5);
            let mut pf = protect(&frame(9), &k, profile).unwrap();
            pf.body[3] ^= 0x40;
            let mut replay = ReplayState::new();
            assert_eq!(unprotect(&pf, &k, &mut replay), Err(Rejection::TagMismatch));
            assert_eq!(replay.highest_accepted(), None);
            pf.body[3] ^= 0x40;
            assert!(unprotect(&pf, &k, &mut replay).is_ok());
        }
    }

    #[test]
    fn sampled_bit_flips_always_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for profile in CipherProfile::ALL {
            let k = keys(6);
            let pf = protect(&frame(1), &k, profile).unwrap();
            let bytes = pf.to_bytes();
            for _ in 0..300 {
                let bit = rng.gen_range(0..bytes.len() * 8);
                let mut mutated = bytes.clone();
                mutated[bit / 8] ^= 1 << (bit % 8);
                if let Ok(m) = ProtectedFrame::from_bytes(&mutated) {
                    assert!(unprotect(&m, &k, &mut ReplayState::new()).is_err(), "bit {bit}");
                }
            }
        }
    }

    #[test]
    fn session_mismatch() {
        let pf = protect(&frame(1), &keys(7), CipherProfile::PerformanceAead).unwrap();
        assert!(matches!(
            unprotect(&pf, &keys(8), &mut ReplayState::new()),
            Err(Rejection::SessionMismatch { .. })
        ));
    }

    #[test]
    fn dimension_swap_fails_authentication() {
        let k = keys(9);
        let f = generate_frame(1, 16, 8, 1, BayerOrder::Rggb).unwrap();
        for profile in CipherProfile::ALL {
            let mut pf = protect(&f, &k, profile).unwrap();
            pf.header.width = 32;
            pf.header.height = 4;
            assert_eq!(unprotect(&pf, &k, &mut ReplayState::new()), Err(Rejection::TagMismatch));
        }
    }

    #[test]
    fn sender_refuses_counter_reuse() {
        let mut sender = FrameSender::new(keys(1), CipherProfile::PerformanceAead);
        sender.protect(&frame(1)).unwrap();
        sender.protect(&frame(2)).unwrap();
        assert_eq!(
            sender.protect(&frame(2)),
            Err(ProtectError::CounterReuse { sequence: 2, last: 2 })
        );
        assert!(sender.protect(&frame(1)).is_err());
    }

    #[test]
    fn random_tag_forgeries_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for profile in CipherProfile::ALL {
            let k = keys(2);
            let pf = protect(&frame(1), &k, profile).unwrap();
            for _ in 0..10_000 {
                let mut forged = pf.clone();
                rng.fill(&mut forged.tag);
                if forged.tag == pf.tag {
                    continue;
                }
                assert!(unprotect(&forged, &k, &mut ReplayState::new()).is_err());
            }
        }
    }

    #[test]
    fn packet_tags_bind_position_and_domain() {
        let k = keys(1);
        let pf = protect(&frame(3), &k, CipherProfile::EfficiencyIntegrityOnly).unwrap();
        let line = &pf.body[..40];
        let t0 = packet_tag(&k, &pf.header, 0, line);
        assert!(verify_packet_tag(&k, &pf.header, 0, line, &t0));
        assert!(!verify_packet_tag(&k, &pf.header, 1, line, &t0));
        let mut other = pf.header;
        other.sequence += 1;
        assert!(!verify_packet_tag(&k, &other, 0, line, &t0));
        // a frame tag input and a packet tag input never coincide
        assert_ne!(packet_tag_input(&pf.header, 0)[..AAD_LEN], pf.header.to_bytes());
    }

    #[test]
    fn serialization_layout() {
        let pf = protect(&frame(2), &keys(1), CipherProfile::PerformanceAead).unwrap();
        let bytes = pf.to_bytes();
        assert_eq!(bytes.len(), AAD_LEN + 8 + pf.body.len() + 16);
        assert_eq!(&bytes[8..16], &2u64.to_be_bytes());
        assert_eq!(bytes[16], 0x02);
        assert_eq!(&bytes[AAD_LEN..AAD_LEN + 8], &(pf.body.len() as u64).to_be_bytes());
        assert_eq!(ProtectedFrame::from_bytes(&bytes).unwrap(), pf);
        assert!(ProtectedFrame::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
