//! Sensor → CSI-2 wire → host → enclave orchestration, capture to SRA1
//! files, and the throughput benchmark.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::SigningMode;
use crate::csi2::{
    self, encapsulate_tag, Csi2Error, Csi2Packet, FrameAssembler, ReceivedFrame, TagEnvelope, TagKind, DT_FRAME_END,
    DT_FRAME_START,
};
use crate::enclave::{
    CaptureRequest, Enclave, EnclaveError, EnclaveInitiator, EnclaveRequest, EnclaveResponse, FixedClock, KeyVault,
    SystemClock, TrustedClock,
};
use crate::imaging::demosaic;
use crate::keystore::{KeyStore, KeyStoreError};
use crate::protection::{
    unprotect, AadHeader, CipherProfile, FrameSender, ProtectError, ProtectedFrame, ReplayState, TagCarriage,
};
use crate::provenance::{build_manifest, AuthStatus, CaptureContext, SignedAsset};
use crate::selftest::{self, SelfTestFailure};
use crate::sensor::{self, generate_frame, BayerOrder, RawFrame, SensorError};
use crate::session::{
    drive, session_rng, AuthError, DeviceCertificate, Direction, HandshakeWire, Identity, ResponderSession,
    Role, SessionKeys,
};

pub const DEFAULT_WIDTH: u32 = 1920;
pub const DEFAULT_HEIGHT: u32 = 1232;
pub const DEFAULT_FRAMES: u64 = 8;
pub const DEFAULT_FIXED_TIME: u64 = 1_700_000_000;
pub const BENCH_MIN_FRAMES: u64 = 100;

/// Per-frame cycle estimate for the soft CMAC core.
pub const CYCLES_PER_FRAME: u64 = 10_000_000;
pub const TARGET_FPS: u64 = 30;
pub const CYCLES_PER_SECOND: u64 = CYCLES_PER_FRAME * TARGET_FPS;
const _: () = assert!(CYCLES_PER_SECOND == 300_000_000);

const SENSOR_SEED_MIX: u64 = 0x5EED_5EED_5EED_5EED;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub width: u32,
    pub height: u32,
    pub bayer_order: BayerOrder,
    pub profile: CipherProfile,
    pub tag_carriage: TagCarriage,
    pub frames: u64,
    pub seed: u64,
    pub first_counter: u64,
    pub key_store_path: PathBuf,
    pub output_dir: PathBuf,
    pub sensor_name: String,
    pub host_name: String,
    /// Fixed clock, RFC 6979 signatures and a seeded handshake.
    pub deterministic: bool,
    pub fixed_time: u64,
    /// Run the sensor on its own thread.
    pub threaded: bool,
    pub virtual_channel: u8,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            bayer_order: BayerOrder::Rggb,
            profile: CipherProfile::PerformanceAead,
            tag_carriage: TagCarriage::PerFrame,
            frames: DEFAULT_FRAMES,
            seed: 1,
            first_counter: 1,
            key_store_path: PathBuf::from("keys"),
            output_dir: PathBuf::from("out"),
            sensor_name: Role::Sensor.name().to_string(),
            host_name: Role::Host.name().to_string(),
            deterministic: false,
            fixed_time: DEFAULT_FIXED_TIME,
            threaded: false,
            virtual_channel: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        sensor::check_sensor_dimensions(self.width, self.height)?;
        if self.virtual_channel > 3 {
            return Err(PipelineError::Config(format!(
                "virtual channel {} out of range 0..=3",
                self.virtual_channel
            )));
        }
        if self.deterministic && self.threaded {
            return Err(PipelineError::Config("deterministic mode runs single-threaded".into()));
        }
        Ok(())
    }

    fn handshake_seeds(&self) -> (Option<u64>, Option<u64>) {
        if self.deterministic {
            (Some(self.seed), Some(self.seed ^ SENSOR_SEED_MIX))
        } else {
            (None, None)
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    SelfTest(#[from] SelfTestFailure),
    #[error(transparent)]
    KeyStore(#[from] KeyStoreError),
    #[error("handshake failed: {0}")]
    Handshake(#[from] AuthError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Transport(#[from] Csi2Error),
    #[error(transparent)]
    Protect(#[from] ProtectError),
    #[error("frame {index}: {error}")]
    Frame { index: u64, error: FrameError },
    #[error("sensor has no session keys")]
    NoSession,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sensor worker panicked")]
    Worker,
}

/// Why the host dropped a frame.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("transport: {0}")]
    Transport(Csi2Error),
    #[error("no established session")]
    NoSession,
    #[error("expected one frame tag, found {0}")]
    FrameTag(usize),
    #[error("ragged or empty line packets")]
    Dimensions,
    #[error("enclave: {0}")]
    Enclave(EnclaveError),
    #[error("frame did not complete")]
    Incomplete,
}

impl FrameError {
    /// A security rejection (tag, replay, session, profile) rather than a
    /// structural drop.
    pub fn is_rejection(&self) -> bool {
        match self {
            Self::Enclave(e) => e.is_frame_rejection(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameOutcome {
    Accepted(SignedAsset),
    Dropped { sequence: Option<u64>, error: FrameError },
}

impl FrameOutcome {
    pub fn asset(&self) -> Option<&SignedAsset> {
        match self {
            Self::Accepted(a) => Some(a),
            Self::Dropped { .. } => None,
        }
    }
}

/// Every byte stream that left a trust boundary, in order.
#[derive(Default, Clone)]
pub struct SessionRecord {
    streams: Vec<(&'static str, Vec<u8>)>,
}

impl fmt::Debug for SessionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionRecord")
            .field("streams", &self.streams.len())
            .field("bytes", &self.total_bytes())
            .finish()
    }
}

impl SessionRecord {
    pub fn push(&mut self, channel: &'static str, bytes: Vec<u8>) {
        self.streams.push((channel, bytes));
    }

    pub fn log(&mut self, line: String) {
        self.streams.push(("log", line.into_bytes()));
    }

    pub fn streams(&self) -> impl Iterator<Item = (&'static str, &[u8])> {
        self.streams.iter().map(|(c, b)| (*c, b.as_slice()))
    }

    pub fn logs(&self) -> impl Iterator<Item = &str> {
        self.streams
            .iter()
            .filter(|(c, _)| *c == "log")
            .filter_map(|(_, b)| std::str::from_utf8(b).ok())
    }

    pub fn total_bytes(&self) -> usize {
        self.streams.iter().map(|(_, b)| b.len()).sum()
    }

    pub fn extend(&mut self, other: SessionRecord) {
        self.streams.extend(other.streams);
    }
}

/// Hook on the simulated wire. Defaults pass everything through.
pub trait WireTap {
    fn handshake(&mut self, _direction: Direction, message: Vec<u8>) -> Option<Vec<u8>> {
        Some(message)
    }

    fn packet(&mut self, wire: Vec<u8>) -> Vec<Vec<u8>> {
        vec![wire]
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoTap;

impl WireTap for NoTap {}

/// Builds the CSI-2 packet sequence for one protected frame: frame start,
/// line packets (each followed by a line tag in per-packet mode), the frame
/// tag, frame end.
pub fn frame_to_packets(
    pf: &ProtectedFrame,
    sender: &FrameSender,
    carriage: TagCarriage,
    virtual_channel: u8,
) -> Result<Vec<Csi2Packet>, Csi2Error> {
    let h = &pf.header;
    let plain = csi2::frame_packets(&pf.body, h.width, h.height, h.sequence as u16, virtual_channel)?;
    let mut packets = Vec::with_capacity(plain.len() * 2);
    let mut line = 0u32;
    for packet in plain {
        match packet.header.data_type {
            DT_FRAME_START => packets.push(packet),
            DT_FRAME_END => {
                let env = TagEnvelope::new(TagKind::PerFrameFsed, h.sequence, &pf.tag)?;
                packets.push(encapsulate_tag(&env, virtual_channel)?);
                packets.push(packet);
            }
            _ => {
                let sep = (carriage == TagCarriage::PerPacket)
                    .then(|| sender.packet_tag(h, line, &packet.payload));
                packets.push(packet);
                if let Some(tag) = sep {
                    let env = TagEnvelope::new(TagKind::PerPacketSep, h.sequence, &tag)?;
                    packets.push(encapsulate_tag(&env, virtual_channel)?);
                }
                line += 1;
            }
        }
    }
    Ok(packets)
}

/// Rebuilds the enclave request from a reassembled frame and session
/// parameters the host already knows.
pub fn received_to_request(
    frame: ReceivedFrame,
    session_id: u64,
    profile: CipherProfile,
    bayer_order: BayerOrder,
) -> Result<CaptureRequest, FrameError> {
    let (width, height) = frame.dimensions().ok_or(FrameError::Dimensions)?;
    let mut frame_tags = frame.tags.iter().filter(|(_, e)| e.tag_kind == TagKind::PerFrameFsed);
    let (fsed, extra) = (frame_tags.next(), frame_tags.count());
    let Some((_, fsed)) = fsed.filter(|_| extra == 0) else {
        return Err(FrameError::FrameTag(usize::from(fsed.is_some()) + extra));
    };
    let line_tags = frame
        .tags
        .iter()
        .filter(|(after, e)| e.tag_kind == TagKind::PerPacketSep && *after > 0)
        .map(|(after, e)| ((*after - 1) as u32, e.tag_bytes))
        .collect();
    let header = AadHeader {
        session_id,
        sequence: fsed.sequence,
        profile,
        width,
        height,
        bayer_order,
    };
    Ok(CaptureRequest {
        frame: ProtectedFrame {
            header,
            body: frame.body(),
            tag: fsed.tag_bytes,
        },
        line_tags,
    })
}

/// The image sensor: handshake responder, frame source and protector.
pub struct SensorEndpoint {
    responder: ResponderSession,
    sender: Option<FrameSender>,
    profile: CipherProfile,
    carriage: TagCarriage,
    width: u32,
    height: u32,
    bayer_order: BayerOrder,
    seed: u64,
    next_counter: u64,
    virtual_channel: u8,
}

impl fmt::Debug for SensorEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SensorEndpoint")
            .field("next_counter", &self.next_counter)
            .finish_non_exhaustive()
    }
}

/// Wire bytes of one emitted frame, one entry per packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedFrame {
    pub counter: u64,
    pub packets: Vec<Vec<u8>>,
}

impl SensorEndpoint {
    pub fn new(identity: Identity, trust_root: DeviceCertificate, config: &PipelineConfig, rng: ChaCha20Rng) -> Self {
        Self {
            responder: ResponderSession::new(identity, trust_root, rng),
            sender: None,
            profile: config.profile,
            carriage: config.tag_carriage,
            width: config.width,
            height: config.height,
            bayer_order: config.bayer_order,
            seed: config.seed,
            next_counter: config.first_counter,
            virtual_channel: config.virtual_channel,
        }
    }

    /// Takes the session keys once the handshake is established. Fails if
    /// it never was.
    fn arm(&mut self) -> bool {
        match self.responder.take_keys() {
            Some(keys) => {
                self.sender = Some(FrameSender::new(keys, self.profile));
                true
            }
            None => false,
        }
    }

    /// Arms the sensor with keys obtained outside the handshake, e.g. a
    /// rogue source guessing at a session.
    pub fn arm_with(&mut self, keys: SessionKeys) {
        self.sender = Some(FrameSender::new(keys, self.profile));
    }

    pub fn next_counter(&self) -> u64 {
        self.next_counter
    }

    /// Sensor-side copy of the traffic keys. The sensor sits outside the
    /// host enclave, so these are what a probe must never find either.
    pub fn session_keys_for_probe(&self) -> Option<SessionKeys> {
        self.sender.as_ref().map(FrameSender::keys).cloned()
    }

    pub fn capture_raw(&self, counter: u64) -> Result<RawFrame, SensorError> {
        generate_frame(self.seed, self.width, self.height, counter, self.bayer_order)
    }

    pub fn emit_frame(&mut self) -> Result<EmittedFrame, PipelineError> {
        let counter = self.next_counter;
        let raw = self.capture_raw(counter)?;
        let sender = self.sender.as_mut().ok_or(PipelineError::NoSession)?;
        let pf = sender.protect(&raw)?;
        let packets = frame_to_packets(&pf, sender, self.carriage, self.virtual_channel)?;
        self.next_counter += 1;
        Ok(EmittedFrame {
            counter,
            packets: packets.iter().map(Csi2Packet::to_wire).collect(),
        })
    }
}

/// Normal-world receiver: reassembles packets and calls the enclave.
pub struct HostEndpoint {
    enclave: Enclave,
    assembler: FrameAssembler,
    discarding: bool,
    session_id: Option<u64>,
    profile: CipherProfile,
    carriage: TagCarriage,
    bayer_order: BayerOrder,
}

impl fmt::Debug for HostEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HostEndpoint")
            .field("enclave", &self.enclave)
            .field("session_id", &self.session_id)
            .finish_non_exhaustive()
    }
}

impl HostEndpoint {
    pub fn new(enclave: Enclave, config: &PipelineConfig) -> Self {
        Self {
            enclave,
            assembler: FrameAssembler::new(),
            discarding: false,
            session_id: None,
            profile: config.profile,
            carriage: config.tag_carriage,
            bayer_order: config.bayer_order,
        }
    }

    pub fn session_id(&self) -> Option<u64> {
        self.session_id
    }

    /// One enclave call; the response is recorded as egress.
    pub fn call(&mut self, request: EnclaveRequest, record: &mut SessionRecord) -> EnclaveResponse {
        let response = self.enclave.handle(request);
        record.push("enclave", response.to_bytes());
        response
    }

    /// Feeds one packet's wire bytes. Returns an outcome when a frame
    /// completes or is dropped; after a drop, packets are discarded until
    /// the next frame start.
    pub fn deliver(&mut self, wire: &[u8], record: &mut SessionRecord) -> Option<FrameOutcome> {
        let packet = match Csi2Packet::from_wire(wire) {
            Ok((p, used)) if used == wire.len() => p,
            Ok(_) => return self.drop_frame(FrameError::Transport(Csi2Error::Framing("trailing bytes after packet"))),
            Err(e) => return self.drop_frame(FrameError::Transport(e)),
        };
        if self.discarding {
            if packet.header.data_type != DT_FRAME_START {
                return None;
            }
            self.discarding = false;
        }
        let frame = match self.assembler.push(&packet) {
            Ok(Some(frame)) => frame,
            Ok(None) => return None,
            Err(e) => return self.drop_frame(FrameError::Transport(e)),
        };
        Some(self.submit(frame, record))
    }

    fn drop_frame(&mut self, error: FrameError) -> Option<FrameOutcome> {
        if self.discarding {
            return None;
        }
        self.discarding = true;
        self.assembler = FrameAssembler::new();
        Some(FrameOutcome::Dropped { sequence: None, error })
    }

    fn submit(&mut self, frame: ReceivedFrame, record: &mut SessionRecord) -> FrameOutcome {
        let Some(session_id) = self.session_id else {
            return FrameOutcome::Dropped {
                sequence: None,
                error: FrameError::NoSession,
            };
        };
        let request = match received_to_request(frame, session_id, self.profile, self.bayer_order) {
            Ok(r) => r,
            Err(error) => return FrameOutcome::Dropped { sequence: None, error },
        };
        let sequence = request.frame.sequence();
        match self.call(EnclaveRequest::capture(&request), record) {
            EnclaveResponse::Asset(asset) => FrameOutcome::Accepted(asset),
            EnclaveResponse::Error(e) => FrameOutcome::Dropped {
                sequence: Some(sequence),
                error: FrameError::Enclave(e),
            },
            other => FrameOutcome::Dropped {
                sequence: Some(sequence),
                error: FrameError::Enclave(EnclaveError::Imaging(format!("unexpected response {other:?}"))),
            },
        }
    }
}

struct RecordingWire<'a> {
    tap: &'a mut dyn WireTap,
    record: &'a mut SessionRecord,
}

impl HandshakeWire for RecordingWire<'_> {
    fn carry(&mut self, direction: Direction, message: Vec<u8>) -> Option<Vec<u8>> {
        self.record.push("handshake", message.clone());
        let delivered = self.tap.handshake(direction, message)?;
        Some(delivered)
    }
}

/// One sensor/host pair and everything that crossed between them.
#[derive(Debug)]
pub struct PipelineSession {
    pub sensor: SensorEndpoint,
    pub host: HostEndpoint,
    pub record: SessionRecord,
}

impl PipelineSession {
    pub fn new(
        config: &PipelineConfig,
        sensor_identity: Identity,
        host_identity: Identity,
        trust_root: &DeviceCertificate,
    ) -> Self {
        let (host_seed, sensor_seed) = config.handshake_seeds();
        let clock: Box<dyn TrustedClock> = if config.deterministic {
            Box::new(FixedClock(config.fixed_time))
        } else {
            Box::new(SystemClock)
        };
        let mode = if config.deterministic {
            SigningMode::Deterministic
        } else {
            SigningMode::Randomized
        };
        let enclave = Enclave::new(KeyVault::provisioned(host_identity), trust_root.clone(), clock, mode)
            .with_handshake_seed(host_seed);
        Self {
            sensor: SensorEndpoint::new(sensor_identity, trust_root.clone(), config, session_rng(sensor_seed)),
            host: HostEndpoint::new(enclave, config),
            record: SessionRecord::default(),
        }
    }

    /// Runs the handshake across the tapped wire. On success both ends hold
    /// matching keys and the session id is returned.
    pub fn handshake(&mut self, tap: &mut dyn WireTap) -> Result<u64, AuthError> {
        let mut egress = SessionRecord::default();
        let (profile, carriage) = (self.host.profile, self.host.carriage);
        let result = {
            let host = &mut self.host;
            let mut call = |req| {
                let resp = host.enclave.handle(req);
                egress.push("enclave", resp.to_bytes());
                resp
            };
            let mut initiator = EnclaveInitiator::new(&mut call, profile, carriage);
            let mut wire = RecordingWire {
                tap,
                record: &mut self.record,
            };
            drive(&mut initiator, &mut self.sensor.responder, &mut wire).map(|()| initiator.session_id())
        };
        self.record.extend(egress);
        let session_id = result?.ok_or(AuthError::Transport("enclave reported no session id".into()))?;
        if !self.sensor.arm() {
            return Err(AuthError::Transport("sensor did not derive keys".into()));
        }
        self.host.session_id = Some(session_id);
        self.record.log(format!("event=session_established session_id={session_id:#018x}"));
        Ok(session_id)
    }

    /// Delivers wire bytes to the host, recording them.
    pub fn deliver(&mut self, wire: Vec<u8>) -> Option<FrameOutcome> {
        let outcome = self.host.deliver(&wire, &mut self.record);
        self.record.push("csi2", wire);
        if let Some(o) = &outcome {
            self.record.log(describe(o));
        }
        outcome
    }

    pub fn deliver_all(&mut self, packets: impl IntoIterator<Item = Vec<u8>>) -> Vec<FrameOutcome> {
        packets.into_iter().filter_map(|p| self.deliver(p)).collect()
    }

    /// Emits the next frame through `tap` and returns what the host made of
    /// everything delivered.
    pub fn stream_frame(&mut self, tap: &mut dyn WireTap) -> Result<Vec<FrameOutcome>, PipelineError> {
        let emitted = self.sensor.emit_frame()?;
        let delivered: Vec<Vec<u8>> = emitted.packets.into_iter().flat_map(|p| tap.packet(p)).collect();
        Ok(self.deliver_all(delivered))
    }
}

fn describe(outcome: &FrameOutcome) -> String {
    match outcome {
        FrameOutcome::Accepted(a) => format!(
            "event=frame_accepted frame_counter={} image_bytes={}",
            a.manifest.claim.frame_counter().unwrap_or_default(),
            a.image_payload.len()
        ),
        FrameOutcome::Dropped { sequence, error } => format!(
            "event=frame_dropped sequence={} reason={error}",
            sequence.map_or("unknown".to_string(), |s| s.to_string())
        ),
    }
}

/// Result of a capture run.
#[derive(Debug)]
pub struct CaptureReport {
    pub session_id: u64,
    pub files: Vec<PathBuf>,
    pub assets: Vec<SignedAsset>,
    pub record: SessionRecord,
}

pub fn asset_file_name(counter: u64) -> String {
    format!("frame_{counter:06}.sra")
}

/// Loads identities from the key store and captures `config.frames`
/// signed assets into `config.output_dir`.
pub fn capture(config: &PipelineConfig) -> Result<CaptureReport, PipelineError> {
    let store = KeyStore::new(&config.key_store_path);
    let sensor = store.load(&config.sensor_name)?;
    let host = store.load(&config.host_name)?;
    let trust_root = store.trust_root()?;
    capture_with(config, sensor, host, &trust_root, &mut NoTap)
}

pub fn capture_with(
    config: &PipelineConfig,
    sensor: Identity,
    host: Identity,
    trust_root: &DeviceCertificate,
    tap: &mut dyn WireTap,
) -> Result<CaptureReport, PipelineError> {
    config.validate()?;
    selftest::run()?;
    let mut session = PipelineSession::new(config, sensor, host, trust_root);
    let session_id = session.handshake(tap)?;

    let outcomes = if config.threaded {
        run_threaded(&mut session, config.frames)?
    } else {
        let mut all = Vec::new();
        for index in 0..config.frames {
            let outcomes = session.stream_frame(tap)?;
            check_single(index, &outcomes)?;
            all.extend(outcomes);
        }
        all
    };

    fs::create_dir_all(&config.output_dir).map_err(|source| PipelineError::Io {
        path: config.output_dir.clone(),
        source,
    })?;
    let mut files = Vec::new();
    let mut assets = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        let asset = match outcome {
            FrameOutcome::Accepted(a) => a,
            FrameOutcome::Dropped { error, .. } => {
                return Err(PipelineError::Frame {
                    index: index as u64,
                    error,
                })
            }
        };
        let counter = asset.manifest.claim.frame_counter().unwrap_or(index as u64);
        let path = config.output_dir.join(asset_file_name(counter));
        let bytes = asset.to_bytes();
        fs::write(&path, &bytes).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        session.record.push("file", bytes);
        session.record.log(format!("event=asset_written path={}", path.display()));
        files.push(path);
        assets.push(asset);
    }
    Ok(CaptureReport {
        session_id,
        files,
        assets,
        record: session.record,
    })
}

fn check_single(index: u64, outcomes: &[FrameOutcome]) -> Result<(), PipelineError> {
    match outcomes {
        [FrameOutcome::Accepted(_)] => Ok(()),
        [FrameOutcome::Dropped { error, .. }, ..] => Err(PipelineError::Frame {
            index,
            error: error.clone(),
        }),
        _ => Err(PipelineError::Frame {
            index,
            error: FrameError::Incomplete,
        }),
    }
}

/// Sensor on a worker thread, host on this one, joined by a packet channel.
fn run_threaded(session: &mut PipelineSession, frames: u64) -> Result<Vec<FrameOutcome>, PipelineError> {
    let (tx, rx) = mpsc::sync_channel::<Vec<u8>>(4096);
    let sensor = &mut session.sensor;
    let host = &mut session.host;
    let record = &mut session.record;
    thread::scope(|scope| {
        let worker = scope.spawn(move || -> Result<(), PipelineError> {
            for _ in 0..frames {
                for packet in sensor.emit_frame()?.packets {
                    if tx.send(packet).is_err() {
                        return Ok(());
                    }
                }
            }
            Ok(())
        });
        let mut outcomes = Vec::new();
        for wire in rx {
            if let Some(outcome) = host.deliver(&wire, record) {
                record.log(describe(&outcome));
                check_single(outcomes.len() as u64, std::slice::from_ref(&outcome))?;
                outcomes.push(outcome);
            }
            record.push("csi2", wire);
        }
        worker.join().map_err(|_| PipelineError::Worker)??;
        Ok(outcomes)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// protect, transport, unprotect
    Crypto,
    /// adds demosaic and manifest signing
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Protect,
    Transport,
    Unprotect,
    Demosaic,
    Sign,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Self::Protect, Self::Transport, Self::Unprotect, Self::Demosaic, Self::Sign];

    pub fn name(self) -> &'static str {
        match self {
            Self::Protect => "protect",
            Self::Transport => "transport",
            Self::Unprotect => "unprotect",
            Self::Demosaic => "demosaic",
            Self::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub profile: CipherProfile,
    pub carriage: TagCarriage,
    pub width: u32,
    pub height: u32,
    pub bytes_per_frame: usize,
    pub frames_processed: u64,
    pub wall_seconds: f64,
    pub achieved_fps: f64,
    pub stages: Vec<(Stage, Duration)>,
}

impl BenchReport {
    /// protect + unprotect only: the throughput the target refers to.
    pub fn crypto_fps(&self) -> f64 {
        let secs: f64 = self
            .stages
            .iter()
            .filter(|(s, _)| matches!(s, Stage::Protect | Stage::Unprotect))
            .map(|(_, d)| d.as_secs_f64())
            .sum();
        if secs > 0.0 {
            self.frames_processed as f64 / secs
        } else {
            f64::INFINITY
        }
    }

    pub fn stage_seconds(&self) -> f64 {
        self.stages.iter().map(|(_, d)| d.as_secs_f64()).sum()
    }

    pub fn meets_target(&self) -> bool {
        self.achieved_fps >= TARGET_FPS as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("mode", format!("{:?}", self.mode).to_lowercase());
        kv("profile", self.profile.to_string());
        kv("tag_carriage", self.carriage.to_string());
        kv("resolution", format!("{}x{}", self.width, self.height));
        kv("bytes_per_frame", self.bytes_per_frame.to_string());
        kv("frames_processed", self.frames_processed.to_string());
        kv("wall_seconds", format!("{:.6}", self.wall_seconds));
        kv("achieved_fps", format!("{:.2}", self.achieved_fps));
        kv("crypto_fps", format!("{:.2}", self.crypto_fps()));
        for (stage, d) in &self.stages {
            kv(
                &format!("stage.{}_ms_per_frame", stage.name()),
                format!("{:.3}", d.as_secs_f64() * 1e3 / self.frames_processed.max(1) as f64),
            );
        }
        kv("cycles_per_frame", CYCLES_PER_FRAME.to_string());
        kv("target_fps", TARGET_FPS.to_string());
        kv(
            "cycle_budget",
            format!("{CYCLES_PER_FRAME} x {TARGET_FPS} = {CYCLES_PER_SECOND} cycles/s"),
        );
        kv("meets_target", self.meets_target().to_string());
        out
    }
}

fn timed<T>(total: &mut Duration, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *total += start.elapsed();
    out
}

/// Measures the same protect/transport/unprotect (and, in full mode,
/// demosaic/sign) functions the capture path uses, over at least
/// [`BENCH_MIN_FRAMES`] frames with ephemeral identities.
pub fn bench(config: &PipelineConfig, mode: BenchMode) -> Result<BenchReport, PipelineError> {
    config.validate()?;
    selftest::run()?;
    let frames = config.frames.max(BENCH_MIN_FRAMES);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let root = Identity::new_root(&mut rng);
    let host = root.issue(Role::Host, &mut rng);
    let sensor_id = root.issue(Role::Sensor, &mut rng);
    let (host_keys, sensor_keys) = crate::session::run_handshake_over(
        &host,
        &sensor_id,
        root.certificate(),
        &mut crate::session::CleanWire,
        Some(config.seed),
    )?;

    let mut sender = FrameSender::new(sensor_keys, config.profile);
    let mut replay = ReplayState::new();
    let mut raw = generate_frame(config.seed, config.width, config.height, 0, config.bayer_order)?;
    let mut stage = [Duration::ZERO; 5];
    let [t_protect, t_transport, t_unprotect, t_demosaic, t_sign] = &mut stage;

    let wall = Instant::now();
    for i in 0..frames {
        raw.frame_counter = config.first_counter + i;
        let pf = timed(t_protect, || sender.protect(&raw))?;
        let request = timed(t_transport, || -> Result<CaptureRequest, PipelineError> {
            let packets = frame_to_packets(&pf, &sender, config.tag_carriage, config.virtual_channel)?;
            let mut assembler = FrameAssembler::new();
            let mut done = None;
            for packet in &packets {
                let (parsed, _) = Csi2Packet::from_wire(&packet.to_wire())?;
                done = assembler.push(&parsed)?.or(done);
            }
            let frame = done.ok_or(Csi2Error::Framing("missing frame end"))?;
            received_to_request(frame, host_keys.session_id, config.profile, config.bayer_order)
                .map_err(|error| PipelineError::Frame { index: i, error })
        })?;
        let recovered = timed(t_unprotect, || unprotect(&request.frame, &host_keys, &mut replay)).map_err(|e| {
            PipelineError::Frame {
                index: i,
                error: FrameError::Enclave(EnclaveError::Rejected(e)),
            }
        })?;
        if mode == BenchMode::Full {
            let image = timed(t_demosaic, || demosaic(&recovered)).map_err(|e| PipelineError::Frame {
                index: i,
                error: FrameError::Enclave(EnclaveError::Imaging(e.to_string())),
            })?;
            timed(t_sign, || -> Result<(), PipelineError> {
                let payload = image.to_raster();
                let ctx = CaptureContext {
                    session_id: host_keys.session_id,
                    sequence: recovered.frame_counter,
                    profile: config.profile,
                    signer_subject: host.certificate().subject_id.clone(),
                    sensor_subject: sensor_id.certificate().subject_id.clone(),
                    auth_status: AuthStatus::Succeeded,
                    time: config.fixed_time,
                };
                let claim = build_manifest(&payload, &ctx).map_err(|e| PipelineError::Config(e.to_string()))?;
                let _signature = host.sign_digest(&claim.digest(), SigningMode::Randomized);
                Ok(())
            })?;
        }
    }
    let wall_seconds = wall.elapsed().as_secs_f64();

    let stages: Vec<(Stage, Duration)> = Stage::ALL
        .into_iter()
        .zip(stage)
        .filter(|(s, _)| mode == BenchMode::Full || !matches!(s, Stage::Demosaic | Stage::Sign))
        .collect();
    Ok(BenchReport {
        mode,
        profile: config.profile,
        carriage: config.tag_carriage,
        width: config.width,
        height: config.height,
        bytes_per_frame: sensor::packed_len(config.width, config.height),
        frames_processed: frames,
        wall_seconds,
        achieved_fps: frames as f64 / wall_seconds,
        stages,
    })
}

/// Verifies every `.sra` file in `dir`, in name order.
pub fn verify_dir(dir: &Path, trust_root: &DeviceCertificate) -> Result<Vec<(PathBuf, bool)>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sra"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).map_err(|source| PipelineError::Io {
                path: p.clone(),
                source,
            })?;
            let valid = crate::provenance::verify_asset_bytes(&bytes, trust_root).is_valid();
            Ok((p, valid))
        })
        .collect()
}
