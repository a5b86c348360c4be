//! Mutual authentication and session-key establishment between the host
//! (initiator) and the sensor (responder).
//!
//! The message set is a minimal SPDM-shaped subset:
//!
//! ```text
//! host                                   sensor
//! GET_VERSION            ------------->
//!                        <-------------  VERSION
//! CERTIFICATE(host)      ------------->
//!                        <-------------  CERTIFICATE(sensor)
//! CHALLENGE(nonce_h)     ------------->
//!                        <-------------  CHALLENGE_AUTH(sig_s), CHALLENGE(nonce_s)
//! CHALLENGE_AUTH(sig_h),
//! KEY_EXCHANGE(eph_h)    ------------->
//!                        <-------------  KEY_EXCHANGE_RSP(eph_s, sig_s)
//! FINISH(sig_h, mac_h)   ------------->
//!                        <-------------  FINISH_RSP(mac_s)
//! ```
//!
//! Every message is folded into a running SHA-256 transcript on both sides.
//! Signatures and finished MACs cover the transcript, so a change to any
//! message in transit surfaces as a verification failure at the next check.

pub mod cert;
mod keys;

use std::collections::VecDeque;
use std::fmt;

use hmac::{Hmac, Mac};
use p256::ecdh::EphemeralSecret;
use p256::PublicKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{self, SigningMode, PUBLIC_KEY_LEN, SIGNATURE_LEN};

pub use cert::{verify_chain, verify_chain_for_role, ChainError, DeviceCertificate, Identity, Role};
pub use keys::{derive_keys, SessionKeys};

pub const PROTOCOL_VERSION: u8 = 0x10;
const MAX_HANDSHAKE_STEPS: usize = 64;

const LABEL_RESPONDER_AUTH: &[u8] = b"sra v1 responder challenge_auth";
const LABEL_REQUESTER_AUTH: &[u8] = b"sra v1 requester challenge_auth";
const LABEL_KEY_EXCHANGE: &[u8] = b"sra v1 responder key_exchange";
const LABEL_FINISH: &[u8] = b"sra v1 requester finish";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    VersionAgreed,
    CertsExchanged,
    Challenged,
    Keyed,
    Established,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// host -> sensor
    ToResponder,
    /// sensor -> host
    ToInitiator,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("malformed handshake message in phase {phase:?}: {error}")]
    Malformed { phase: Phase, error: DecodeError },
    #[error("unexpected message {code:#04x} in phase {phase:?}")]
    UnexpectedMessage { phase: Phase, code: u8 },
    #[error("no common protocol version (peer offered {0:02x?})")]
    UnsupportedVersion(Vec<u8>),
    #[error("{peer} certificate chain rejected: {error}")]
    PeerChain { peer: Role, error: ChainError },
    #[error("challenge signature from {0} does not verify over the transcript")]
    ChallengeSignature(Role),
    #[error("key exchange signature does not verify over the transcript")]
    KeyExchangeSignature,
    #[error("finish signature does not verify over the transcript")]
    FinishSignature,
    #[error("finished MAC from {0} does not match the transcript")]
    FinishMac(Role),
    #[error("peer key share is not a valid P-256 point")]
    InvalidKeyShare,
    #[error("session already failed")]
    AlreadyFailed,
    #[error("handshake stalled (initiator {initiator:?}, responder {responder:?})")]
    Incomplete { initiator: Phase, responder: Phase },
    #[error("handshake transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageCode {
    GetVersion = 0x84,
    Version = 0x04,
    Certificate = 0x02,
    Challenge = 0x83,
    ChallengeAuth = 0x03,
    KeyExchange = 0xE4,
    KeyExchangeRsp = 0x64,
    Finish = 0xE5,
    FinishRsp = 0x65,
}

#[derive(Clone, PartialEq, Eq)]
pub enum Message {
    GetVersion { versions: Vec<u8> },
    Version { selected: u8 },
    Certificate { chain: Vec<DeviceCertificate> },
    Challenge { nonce: [u8; 32] },
    ChallengeAuth { signature: [u8; SIGNATURE_LEN] },
    KeyExchange { public: [u8; PUBLIC_KEY_LEN] },
    KeyExchangeRsp {
        public: [u8; PUBLIC_KEY_LEN],
        signature: [u8; SIGNATURE_LEN],
    },
    Finish {
        signature: [u8; SIGNATURE_LEN],
        verify_data: [u8; 32],
    },
    FinishRsp { verify_data: [u8; 32] },
}

impl fmt::Debug for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.code())
    }
}

impl Message {
    pub fn code(&self) -> MessageCode {
        match self {
            Self::GetVersion { .. } => MessageCode::GetVersion,
            Self::Version { .. } => MessageCode::Version,
            Self::Certificate { .. } => MessageCode::Certificate,
            Self::Challenge { .. } => MessageCode::Challenge,
            Self::ChallengeAuth { .. } => MessageCode::ChallengeAuth,
            Self::KeyExchange { .. } => MessageCode::KeyExchange,
            Self::KeyExchangeRsp { .. } => MessageCode::KeyExchangeRsp,
            Self::Finish { .. } => MessageCode::Finish,
            Self::FinishRsp { .. } => MessageCode::FinishRsp,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.code() as u8);
        match self {
            Self::GetVersion { versions } => {
                w.bytes(versions);
            }
            Self::Version { selected } => {
                w.u8(*selected);
            }
            Self::Certificate { chain } => cert::write_chain(&mut w, chain),
            Self::Challenge { nonce } => {
                w.raw(nonce);
            }
            Self::ChallengeAuth { signature } => {
                w.raw(signature);
            }
            Self::KeyExchange { public } => {
                w.raw(public);
            }
            Self::KeyExchangeRsp { public, signature } => {
                w.raw(public).raw(signature);
            }
            Self::Finish {
                signature,
                verify_data,
            } => {
                w.raw(signature).raw(verify_data);
            }
            Self::FinishRsp { verify_data } => {
                w.raw(verify_data);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let msg = match r.u8()? {
            0x84 => Self::GetVersion {
                versions: r.bytes()?.to_vec(),
            },
            0x04 => Self::Version { selected: r.u8()? },
            0x02 => Self::Certificate {
                chain: cert::read_chain(&mut r)?,
            },
            0x83 => Self::Challenge { nonce: r.array()? },
            0x03 => Self::ChallengeAuth {
                signature: r.array()?,
            },
            0xE4 => Self::KeyExchange { public: r.array()? },
            0x64 => Self::KeyExchangeRsp {
                public: r.array()?,
                signature: r.array()?,
            },
            0xE5 => Self::Finish {
                signature: r.array()?,
                verify_data: r.array()?,
            },
            0x65 => Self::FinishRsp {
                verify_data: r.array()?,
            },
            _ => return Err(DecodeError::InvalidValue("message code")),
        };
        r.expect_end()?;
        Ok(msg)
    }
}

#[derive(Clone)]
struct Transcript(Sha256);

impl Transcript {
    fn new() -> Self {
        Self(Sha256::new())
    }

    fn append(&mut self, message: &[u8]) {
        self.0.update((message.len() as u32).to_be_bytes());
        self.0.update(message);
    }

    fn hash(&self) -> [u8; 32] {
        self.0.clone().finalize().into()
    }

    /// Digest signed for a message whose bytes so far are `prefix`.
    fn signed_digest(&self, label: &[u8], prefix: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(label);
        h.update(self.hash());
        h.update(prefix);
        h.finalize().into()
    }
}

fn hmac(key: &[u8; 32], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}

fn hmac_ok(key: &[u8; 32], parts: &[&[u8]], tag: &[u8]) -> bool {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.verify_slice(tag).is_ok()
}

/// One side of the handshake as seen by the driver.
pub trait HandshakeEndpoint {
    /// Messages the endpoint sends first (only the initiator sends any).
    fn start(&mut self) -> Result<Vec<Vec<u8>>, AuthError>;
    fn receive(&mut self, message: &[u8]) -> Result<Vec<Vec<u8>>, AuthError>;
    fn phase(&self) -> Phase;
    /// Moves the endpoint to `Failed` and discards any derived keys.
    fn abort(&mut self);
}

/// Shared per-endpoint state.
struct State {
    identity: Identity,
    trust_root: DeviceCertificate,
    phase: Phase,
    transcript: Transcript,
    peer_cert: Option<DeviceCertificate>,
    ephemeral_secret: Option<EphemeralSecret>,
    shared_secret: Option<[u8; 32]>,
    finished: Option<([u8; 32], [u8; 32])>,
    keys: Option<SessionKeys>,
    rng: ChaCha20Rng,
}

impl State {
    fn new(identity: Identity, trust_root: DeviceCertificate, rng: ChaCha20Rng) -> Self {
        Self {
            identity,
            trust_root,
            phase: Phase::Idle,
            transcript: Transcript::new(),
            peer_cert: None,
            ephemeral_secret: None,
            shared_secret: None,
            finished: None,
            keys: None,
            rng,
        }
    }

    fn send(&mut self, msg: Message, out: &mut Vec<Vec<u8>>) {
        let bytes = msg.encode();
        self.transcript.append(&bytes);
        out.push(bytes);
    }

    fn peer_key(&self) -> &[u8] {
        &self.peer_cert.as_ref().expect("peer certificate verified earlier").public_key
    }

    fn sign(&self, label: &[u8], prefix: &[u8]) -> [u8; SIGNATURE_LEN] {
        // Handshake signatures are bound to fresh nonces, so deterministic
        // nonces leak nothing and keep seeded runs reproducible.
        self.identity
            .sign_digest(&self.transcript.signed_digest(label, prefix), SigningMode::Deterministic)
    }

    fn peer_signed(&self, label: &[u8], prefix: &[u8], signature: &[u8]) -> bool {
        crypto::verify_prehash(self.peer_key(), &self.transcript.signed_digest(label, prefix), signature)
    }

    fn new_ephemeral(&mut self) -> [u8; PUBLIC_KEY_LEN] {
        let secret = EphemeralSecret::random(&mut self.rng);
        let public = secret.public_key().to_sec1_bytes();
        self.ephemeral_secret = Some(secret);
        public.as_ref().try_into().expect("uncompressed point")
    }

    fn agree(&mut self, peer_public: &[u8]) -> Result<(), AuthError> {
        let peer = PublicKey::from_sec1_bytes(peer_public).map_err(|_| AuthError::InvalidKeyShare)?;
        let secret = self.ephemeral_secret.take().ok_or(AuthError::InvalidKeyShare)?;
        let shared = secret.diffie_hellman(&peer);
        self.shared_secret = Some((*shared.raw_secret_bytes()).into());
        Ok(())
    }

    fn fix_finished_keys(&mut self) {
        let shared = self.shared_secret.as_ref().expect("key agreement done");
        self.finished = Some(keys::finished_keys(shared, &self.transcript.hash()));
    }

    fn establish(&mut self) {
        let shared = self.shared_secret.take().expect("key agreement done");
        self.keys = Some(derive_keys(&shared, &self.transcript.hash()));
        self.finished = None;
    }

    fn fail(&mut self) {
        self.phase = Phase::Failed;
        self.keys = None;
        self.shared_secret = None;
        self.ephemeral_secret = None;
        self.finished = None;
    }

    fn take_keys(&mut self) -> Option<SessionKeys> {
        if self.phase == Phase::Established {
            self.keys.take()
        } else {
            None
        }
    }
}

/// Host side of the handshake.
pub struct InitiatorSession {
    state: State,
    started: bool,
    responder_authenticated: bool,
}

impl InitiatorSession {
    pub fn new(identity: Identity, trust_root: DeviceCertificate, rng: ChaCha20Rng) -> Self {
        Self {
            state: State::new(identity, trust_root, rng),
            started: false,
            responder_authenticated: false,
        }
    }

    pub fn peer_certificate(&self) -> Option<&DeviceCertificate> {
        self.state.peer_cert.as_ref()
    }

    /// Keys exist only once the session is established, and only once.
    pub fn take_keys(&mut self) -> Option<SessionKeys> {
        self.state.take_keys()
    }

    fn handle(&mut self, msg: Message, raw: &[u8]) -> Result<Vec<Vec<u8>>, AuthError> {
        let st = &mut self.state;
        let mut out = Vec::new();
        match (st.phase, msg) {
            (Phase::Idle, Message::Version { selected }) => {
                if selected != PROTOCOL_VERSION {
                    return Err(AuthError::UnsupportedVersion(vec![selected]));
                }
                st.transcript.append(raw);
                st.phase = Phase::VersionAgreed;
                let chain = st.identity.chain().to_vec();
                st.send(Message::Certificate { chain }, &mut out);
            }
            (Phase::VersionAgreed, Message::Certificate { chain }) => {
                verify_chain_for_role(&chain, &st.trust_root, Role::Sensor).map_err(|error| {
                    AuthError::PeerChain {
                        peer: Role::Sensor,
                        error,
                    }
                })?;
                st.transcript.append(raw);
                st.peer_cert = Some(chain[0].clone());
                st.phase = Phase::CertsExchanged;
                let mut nonce = [0u8; 32];
                st.rng.fill_bytes(&mut nonce);
                st.send(Message::Challenge { nonce }, &mut out);
            }
            (Phase::CertsExchanged, Message::ChallengeAuth { signature }) if !self.responder_authenticated => {
                let prefix = &raw[..raw.len() - SIGNATURE_LEN];
                if !st.peer_signed(LABEL_RESPONDER_AUTH, prefix, &signature) {
                    return Err(AuthError::ChallengeSignature(Role::Sensor));
                }
                st.transcript.append(raw);
                self.responder_authenticated = true;
            }
            (Phase::CertsExchanged, Message::Challenge { .. }) if self.responder_authenticated => {
                st.transcript.append(raw);
                let code = [MessageCode::ChallengeAuth as u8];
                let signature = st.sign(LABEL_REQUESTER_AUTH, &code);
                st.send(Message::ChallengeAuth { signature }, &mut out);
                st.phase = Phase::Challenged;
                let public = st.new_ephemeral();
                st.send(Message::KeyExchange { public }, &mut out);
            }
            (Phase::Challenged, Message::KeyExchangeRsp { public, signature }) => {
                let prefix = &raw[..raw.len() - SIGNATURE_LEN];
                if !st.peer_signed(LABEL_KEY_EXCHANGE, prefix, &signature) {
                    return Err(AuthError::KeyExchangeSignature);
                }
                st.agree(&public)?;
                st.transcript.append(raw);
                st.fix_finished_keys();
                st.phase = Phase::Keyed;

                let code = [MessageCode::Finish as u8];
                let signature = st.sign(LABEL_FINISH, &code);
                let (requester_key, _) = st.finished.expect("set above");
                let th = st.transcript.hash();
                let verify_data = hmac(&requester_key, &[&th, &code, &signature]);
                st.send(
                    Message::Finish {
                        signature,
                        verify_data,
                    },
                    &mut out,
                );
            }
            (Phase::Keyed, Message::FinishRsp { verify_data }) => {
                let (_, responder_key) = st.finished.expect("set on entering Keyed");
                let th = st.transcript.hash();
                if !hmac_ok(&responder_key, &[&th, &[MessageCode::FinishRsp as u8]], &verify_data) {
                    return Err(AuthError::FinishMac(Role::Sensor));
                }
                // session keys cover the transcript through FINISH
                st.establish();
                st.transcript.append(raw);
                st.phase = Phase::Established;
            }
            (phase, msg) => {
                return Err(AuthError::UnexpectedMessage {
                    phase,
                    code: msg.code() as u8,
                })
            }
        }
        Ok(out)
    }
}

impl HandshakeEndpoint for InitiatorSession {
    fn start(&mut self) -> Result<Vec<Vec<u8>>, AuthError> {
        if self.state.phase != Phase::Idle || self.started {
            self.state.fail();
            return Err(AuthError::UnexpectedMessage {
                phase: self.state.phase,
                code: MessageCode::GetVersion as u8,
            });
        }
        self.started = true;
        let mut out = Vec::new();
        self.state.send(
            Message::GetVersion {
                versions: vec![PROTOCOL_VERSION],
            },
            &mut out,
        );
        Ok(out)
    }

    fn receive(&mut self, message: &[u8]) -> Result<Vec<Vec<u8>>, AuthError> {
        if self.state.phase == Phase::Failed {
            return Err(AuthError::AlreadyFailed);
        }
        let result = Message::decode(message)
            .map_err(|error| AuthError::Malformed {
                phase: self.state.phase,
                error,
            })
            .and_then(|msg| self.handle(msg, message));
        if result.is_err() {
            self.state.fail();
        }
        result
    }

    fn phase(&self) -> Phase {
        self.state.phase
    }

    fn abort(&mut self) {
        self.state.fail();
    }
}

/// Sensor side of the handshake.
pub struct ResponderSession {
    state: State,
    challenge_sent: bool,
}

impl ResponderSession {
    pub fn new(identity: Identity, trust_root: DeviceCertificate, rng: ChaCha20Rng) -> Self {
        Self {
            state: State::new(identity, trust_root, rng),
            challenge_sent: false,
        }
    }

    pub fn peer_certificate(&self) -> Option<&DeviceCertificate> {
        self.state.peer_cert.as_ref()
    }

    pub fn take_keys(&mut self) -> Option<SessionKeys> {
        self.state.take_keys()
    }

    fn handle(&mut self, msg: Message, raw: &[u8]) -> Result<Vec<Vec<u8>>, AuthError> {
        let st = &mut self.state;
        let mut out = Vec::new();
        match (st.phase, msg) {
            (Phase::Idle, Message::GetVersion { versions }) => {
                if !versions.contains(&PROTOCOL_VERSION) {
                    return Err(AuthError::UnsupportedVersion(versions));
                }
                st.transcript.append(raw);
                st.phase = Phase::VersionAgreed;
                st.send(
                    Message::Version {
                        selected: PROTOCOL_VERSION,
                    },
                    &mut out,
                );
            }
            (Phase::VersionAgreed, Message::Certificate { chain }) => {
                verify_chain_for_role(&chain, &st.trust_root, Role::Host).map_err(|error| {
                    AuthError::PeerChain {
                        peer: Role::Host,
                        error,
                    }
                })?;
                st.transcript.append(raw);
                st.peer_cert = Some(chain[0].clone());
                let own = st.identity.chain().to_vec();
                st.send(Message::Certificate { chain: own }, &mut out);
                st.phase = Phase::CertsExchanged;
            }
            (Phase::CertsExchanged, Message::Challenge { .. }) if !self.challenge_sent => {
                st.transcript.append(raw);
                let code = [MessageCode::ChallengeAuth as u8];
                let signature = st.sign(LABEL_RESPONDER_AUTH, &code);
                st.send(Message::ChallengeAuth { signature }, &mut out);
                let mut nonce = [0u8; 32];
                st.rng.fill_bytes(&mut nonce);
                st.send(Message::Challenge { nonce }, &mut out);
                self.challenge_sent = true;
            }
            (Phase::CertsExchanged, Message::ChallengeAuth { signature }) if self.challenge_sent => {
                let prefix = &raw[..raw.len() - SIGNATURE_LEN];
                if !st.peer_signed(LABEL_REQUESTER_AUTH, prefix, &signature) {
                    return Err(AuthError::ChallengeSignature(Role::Host));
                }
                st.transcript.append(raw);
                st.phase = Phase::Challenged;
            }
            (Phase::Challenged, Message::KeyExchange { public: peer_public }) => {
                st.transcript.append(raw);
                let public = st.new_ephemeral();
                st.agree(&peer_public)?;
                let mut prefix = vec![MessageCode::KeyExchangeRsp as u8];
                prefix.extend_from_slice(&public);
                let signature = st.sign(LABEL_KEY_EXCHANGE, &prefix);
                st.send(Message::KeyExchangeRsp { public, signature }, &mut out);
                st.fix_finished_keys();
                st.phase = Phase::Keyed;
            }
            (Phase::Keyed, Message::Finish {
                signature,
                verify_data,
            }) => {
                let code = [MessageCode::Finish as u8];
                if !st.peer_signed(LABEL_FINISH, &code, &signature) {
                    return Err(AuthError::FinishSignature);
                }
                let (requester_key, responder_key) = st.finished.expect("set on entering Keyed");
                let th = st.transcript.hash();
                if !hmac_ok(&requester_key, &[&th, &code, &signature], &verify_data) {
                    return Err(AuthError::FinishMac(Role::Host));
                }
                st.transcript.append(raw);
                let th = st.transcript.hash();
                let verify_data = hmac(&responder_key, &[&th, &[MessageCode::FinishRsp as u8]]);
                st.establish();
                st.send(Message::FinishRsp { verify_data }, &mut out);
                st.phase = Phase::Established;
            }
            (phase, msg) => {
                return Err(AuthError::UnexpectedMessage {
                    phase,
                    code: msg.code() as u8,
                })
            }
        }
        Ok(out)
    }
}

impl HandshakeEndpoint for ResponderSession {
    fn start(&mut self) -> Result<Vec<Vec<u8>>, AuthError> {
        Ok(Vec::new())
    }

    fn receive(&mut self, message: &[u8]) -> Result<Vec<Vec<u8>>, AuthError> {
        if self.state.phase == Phase::Failed {
            return Err(AuthError::AlreadyFailed);
        }
        let result = Message::decode(message)
            .map_err(|error| AuthError::Malformed {
                phase: self.state.phase,
                error,
            })
            .and_then(|msg| self.handle(msg, message));
        if result.is_err() {
            self.state.fail();
        }
        result
    }

    fn phase(&self) -> Phase {
        self.state.phase
    }

    fn abort(&mut self) {
        self.state.fail();
    }
}

/// Hook over every handshake message in flight; `None` drops the message.
pub trait HandshakeWire {
    fn carry(&mut self, direction: Direction, message: Vec<u8>) -> Option<Vec<u8>>;
}

impl<F: FnMut(Direction, Vec<u8>) -> Option<Vec<u8>>> HandshakeWire for F {
    fn carry(&mut self, direction: Direction, message: Vec<u8>) -> Option<Vec<u8>> {
        self(direction, message)
    }
}

/// Passes messages through untouched.
pub struct CleanWire;

impl HandshakeWire for CleanWire {
    fn carry(&mut self, _: Direction, message: Vec<u8>) -> Option<Vec<u8>> {
        Some(message)
    }
}

/// Runs the exchange to completion. On any failure both endpoints are
/// aborted so neither can yield keys.
pub fn drive(
    initiator: &mut dyn HandshakeEndpoint,
    responder: &mut dyn HandshakeEndpoint,
    wire: &mut dyn HandshakeWire,
) -> Result<(), AuthError> {
    let result = drive_inner(initiator, responder, wire);
    if result.is_err() {
        initiator.abort();
        responder.abort();
    }
    result
}

fn drive_inner(
    initiator: &mut dyn HandshakeEndpoint,
    responder: &mut dyn HandshakeEndpoint,
    wire: &mut dyn HandshakeWire,
) -> Result<(), AuthError> {
    let mut queue: VecDeque<(Direction, Vec<u8>)> = initiator
        .start()?
        .into_iter()
        .map(|m| (Direction::ToResponder, m))
        .collect();
    let mut steps = 0;
    while let Some((direction, message)) = queue.pop_front() {
        steps += 1;
        if steps > MAX_HANDSHAKE_STEPS {
            break;
        }
        let Some(delivered) = wire.carry(direction, message) else {
            continue;
        };
        let (replies, reply_direction) = match direction {
            Direction::ToResponder => (responder.receive(&delivered)?, Direction::ToInitiator),
            Direction::ToInitiator => (initiator.receive(&delivered)?, Direction::ToResponder),
        };
        for reply in replies {
            queue.push_back((reply_direction, reply));
        }
    }
    if initiator.phase() == Phase::Established && responder.phase() == Phase::Established {
        Ok(())
    } else {
        Err(AuthError::Incomplete {
            initiator: initiator.phase(),
            responder: responder.phase(),
        })
    }
}

/// Seeds a session RNG; `None` draws the seed from the OS.
pub fn session_rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    }
}

/// Full handshake over `wire`, returning (initiator keys, responder keys).
pub fn run_handshake_over(
    initiator: &Identity,
    responder: &Identity,
    trust_root: &DeviceCertificate,
    wire: &mut dyn HandshakeWire,
    seed: Option<u64>,
) -> Result<(SessionKeys, SessionKeys), AuthError> {
    let mut init = InitiatorSession::new(initiator.clone(), trust_root.clone(), session_rng(seed));
    let mut resp = ResponderSession::new(
        responder.clone(),
        trust_root.clone(),
        session_rng(seed.map(|s| s ^ 0x5EED_5EED_5EED_5EED)),
    );
    drive(&mut init, &mut resp, wire)?;
    match (init.take_keys(), resp.take_keys()) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => unreachable!("both sides established"),
    }
}

pub fn run_handshake(
    initiator: &Identity,
    responder: &Identity,
    trust_root: &DeviceCertificate,
) -> Result<(SessionKeys, SessionKeys), AuthError> {
    run_handshake_over(initiator, responder, trust_root, &mut CleanWire, None)
}
