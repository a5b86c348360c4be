//! Scripted attacks against the real pipeline. Attacks only touch bytes on
//! the simulated wire or in written files; every detection comes from the
//! unmodified receive path.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use memchr::memmem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::csi2::{payload_crc, DT_RAW10, HEADER_LEN};
use crate::pipeline::{FrameError, FrameOutcome, NoTap, PipelineConfig, PipelineSession, SessionRecord};
use crate::protection::{CipherProfile, Rejection, TagCarriage};
use crate::provenance::{verify_asset_bytes, AssertionKind, SignedAsset, Verdict};
use crate::enclave::EnclaveError;
use crate::session::{AuthError, ChainError, Identity, Role, SessionKeys};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackScenario {
    HdmiInjection,
    Replay,
    TransitTamper,
    Reorder,
    ManifestStrip,
    PostSignEdit,
    KeyExfilProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    HandshakeFailure,
    FrameRejected,
    VerifyInvalid,
    NoKeyMaterialFound,
    // observations that fail a scenario
    HandshakeSucceeded,
    FrameAccepted,
    VerifyValid,
    KeyMaterialFound,
    Inconclusive,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Self::HandshakeFailure => "handshake_failure",
            Self::FrameRejected => "frame_rejected",
            Self::VerifyInvalid => "verify_invalid",
            Self::NoKeyMaterialFound => "no_key_material_found",
            Self::HandshakeSucceeded => "handshake_succeeded",
            Self::FrameAccepted => "frame_accepted",
            Self::VerifyValid => "verify_valid",
            Self::KeyMaterialFound => "key_material_found",
            Self::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl AttackScenario {
    pub const ALL: [AttackScenario; 7] = [
        Self::HdmiInjection,
        Self::Replay,
        Self::TransitTamper,
        Self::Reorder,
        Self::ManifestStrip,
        Self::PostSignEdit,
        Self::KeyExfilProbe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::HdmiInjection => "hdmi_injection",
            Self::Replay => "replay",
            Self::TransitTamper => "transit_tamper",
            Self::Reorder => "reorder",
            Self::ManifestStrip => "manifest_strip",
            Self::PostSignEdit => "post_sign_edit",
            Self::KeyExfilProbe => "key_exfil_probe",
        }
    }

    pub fn expected(self) -> Outcome {
        match self {
            Self::HdmiInjection => Outcome::HandshakeFailure,
            Self::Replay | Self::TransitTamper | Self::Reorder => Outcome::FrameRejected,
            Self::ManifestStrip | Self::PostSignEdit => Outcome::VerifyInvalid,
            Self::KeyExfilProbe => Outcome::NoKeyMaterialFound,
        }
    }
}

impl fmt::Display for AttackScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackScenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == wanted)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|a| a.name()).collect();
                format!("unknown scenario {s:?} (one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: AttackScenario,
    pub expected: Outcome,
    pub observed: Outcome,
    pub transcript: Vec<String>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.expected == self.observed
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "scenario={}\nexpected={}\nobserved={}\nresult={}\n",
            self.scenario,
            self.expected,
            self.observed,
            if self.passed() { "pass" } else { "fail" }
        );
        for line in &self.transcript {
            out.push_str(&format!("evidence={line}\n"));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct HarnessConfig {
    pub width: u32,
    pub height: u32,
    pub profile: CipherProfile,
    pub tag_carriage: TagCarriage,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 16,
            profile: CipherProfile::PerformanceAead,
            tag_carriage: TagCarriage::PerFrame,
            seed: 1,
        }
    }
}

impl HarnessConfig {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            width: self.width,
            height: self.height,
            profile: self.profile,
            tag_carriage: self.tag_carriage,
            seed: self.seed,
            frames: 1,
            deterministic: true,
            ..PipelineConfig::default()
        }
    }
}

// keeps identity keys apart from handshake randomness drawn from the same seed
const PROVISION_STREAM: u64 = 0x5052_4F56;

/// Freshly provisioned manufacturer root, host and sensor.
pub struct Provisioned {
    pub root: Identity,
    pub host: Identity,
    pub sensor: Identity,
}

impl Provisioned {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(PROVISION_STREAM);
        let root = Identity::new_root(&mut rng);
        let host = root.issue(Role::Host, &mut rng);
        let sensor = root.issue(Role::Sensor, &mut rng);
        Self { root, host, sensor }
    }

    fn session(&self, config: &HarnessConfig) -> PipelineSession {
        PipelineSession::new(
            &config.pipeline(),
            self.sensor.clone(),
            self.host.clone(),
            self.root.certificate(),
        )
    }
}

struct Transcript(Vec<String>);

impl Transcript {
    fn note(&mut self, line: impl Into<String>) {
        self.0.push(line.into());
    }

    fn outcome(&mut self, label: &str, outcome: &FrameOutcome) {
        match outcome {
            FrameOutcome::Accepted(a) => self.note(format!(
                "{label}: accepted frame_counter={}",
                a.manifest.claim.frame_counter().unwrap_or_default()
            )),
            FrameOutcome::Dropped { sequence, error } => {
                self.note(format!("{label}: rejected sequence={sequence:?} reason={error}"))
            }
        }
    }
}

pub fn run_scenario(scenario: AttackScenario, config: &HarnessConfig) -> ScenarioReport {
    let mut t = Transcript(Vec::new());
    let observed = match scenario {
        AttackScenario::HdmiInjection => hdmi_injection(config, &mut t),
        AttackScenario::Replay => replay(config, &mut t),
        AttackScenario::TransitTamper => transit_tamper(config, &mut t),
        AttackScenario::Reorder => reorder(config, &mut t),
        AttackScenario::ManifestStrip => manifest_strip(config, &mut t),
        AttackScenario::PostSignEdit => post_sign_edit(config, &mut t),
        AttackScenario::KeyExfilProbe => key_exfil_scenario(config, &mut t),
    };
    ScenarioReport {
        scenario,
        expected: scenario.expected(),
        observed,
        transcript: t.0,
    }
}

pub fn run_all(config: &HarnessConfig) -> Vec<ScenarioReport> {
    AttackScenario::ALL.into_iter().map(|s| run_scenario(s, config)).collect()
}

fn single(outcomes: Vec<FrameOutcome>) -> Option<FrameOutcome> {
    let mut it = outcomes.into_iter();
    let first = it.next()?;
    it.next().is_none().then_some(first)
}

fn established(config: &HarnessConfig, t: &mut Transcript) -> Option<(Provisioned, PipelineSession)> {
    let ids = Provisioned::new(config.seed);
    let mut session = ids.session(config);
    match session.handshake(&mut NoTap) {
        Ok(id) => {
            t.note(format!("handshake established session_id={id:#018x}"));
            Some((ids, session))
        }
        Err(e) => {
            t.note(format!("handshake unexpectedly failed: {e}"));
            None
        }
    }
}

/// A bridge chip speaking valid CSI-2 with no provisioned identity: its
/// certificate chains to a root the host does not trust.
fn hdmi_injection(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    let ids = Provisioned::new(config.seed);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed ^ 0xB41D6E);
    let rogue_root = Identity::new_root(&mut rng);
    let rogue = rogue_root.issue(Role::Sensor, &mut rng);
    t.note(format!(
        "rogue source presents {} issued by untrusted {}",
        rogue.certificate().subject_id,
        rogue_root.certificate().subject_id
    ));
    let mut session = PipelineSession::new(&config.pipeline(), rogue, ids.host.clone(), ids.root.certificate());
    let handshake = session.handshake(&mut NoTap);
    let chain_rejected = matches!(
        &handshake,
        Err(AuthError::PeerChain {
            error: ChainError::UntrustedRoot(_),
            ..
        })
    );
    match &handshake {
        Ok(_) => t.note("handshake succeeded"),
        Err(e) => t.note(format!("handshake: {e}")),
    }

    // stream well-formed packets anyway, under keys the bridge made up
    session.sensor.arm_with(SessionKeys {
        aead_key: rng.gen(),
        mac_key: rng.gen(),
        nonce_salt: rng.gen(),
        session_id: rng.gen(),
    });
    let mut accepted = 0;
    for _ in 0..3 {
        let emitted = match session.sensor.emit_frame() {
            Ok(e) => e,
            Err(e) => {
                t.note(format!("rogue emit failed: {e}"));
                return Outcome::Inconclusive;
            }
        };
        for outcome in session.deliver_all(emitted.packets) {
            t.outcome("injected frame", &outcome);
            accepted += usize::from(matches!(outcome, FrameOutcome::Accepted(_)));
        }
    }
    t.note(format!("frames accepted from rogue source: {accepted}"));
    match (handshake.is_err(), accepted) {
        (true, 0) if chain_rejected => Outcome::HandshakeFailure,
        (true, 0) => Outcome::Inconclusive,
        (_, n) if n > 0 => Outcome::FrameAccepted,
        _ => Outcome::HandshakeSucceeded,
    }
}

fn is_replay(outcome: &FrameOutcome) -> bool {
    matches!(
        outcome,
        FrameOutcome::Dropped {
            error: FrameError::Enclave(EnclaveError::Rejected(Rejection::ReplayRejected { .. })),
            ..
        }
    )
}

fn replay(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    let Some((_, mut session)) = established(config, t) else {
        return Outcome::HandshakeFailure;
    };
    let Ok(first) = session.sensor.emit_frame() else {
        return Outcome::Inconclusive;
    };
    let recorded = first.packets.clone();
    t.note(format!("recorded {} packets of frame {}", recorded.len(), first.counter));
    for (label, packets) in [("original", first.packets)] {
        for o in session.deliver_all(packets) {
            t.outcome(label, &o);
        }
    }
    match session.stream_frame(&mut NoTap).map(single) {
        Ok(Some(o)) => t.outcome("newer frame", &o),
        _ => return Outcome::Inconclusive,
    }
    match single(session.deliver_all(recorded)) {
        Some(o) => {
            t.outcome("redelivered", &o);
            if is_replay(&o) {
                Outcome::FrameRejected
            } else if matches!(o, FrameOutcome::Accepted(_)) {
                Outcome::FrameAccepted
            } else {
                Outcome::Inconclusive
            }
        }
        None => Outcome::Inconclusive,
    }
}

/// Flips one payload bit of a line packet and repairs the CSI-2 checksum,
/// so only the cryptographic tag can catch it.
pub fn tamper_line_packet(wire: &mut [u8], bit: usize) {
    let payload_len = wire.len() - HEADER_LEN - 2;
    let bit = bit % (payload_len * 8);
    wire[HEADER_LEN + bit / 8] ^= 1 << (bit % 8);
    let crc = payload_crc(&wire[HEADER_LEN..HEADER_LEN + payload_len]);
    wire[HEADER_LEN + payload_len..].copy_from_slice(&crc.to_le_bytes());
}

fn transit_tamper(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    let Some((_, mut session)) = established(config, t) else {
        return Outcome::HandshakeFailure;
    };
    let Ok(mut frame) = session.sensor.emit_frame() else {
        return Outcome::Inconclusive;
    };
    let lines: Vec<usize> = (0..frame.packets.len())
        .filter(|&i| frame.packets[i][0] & 0x3F == DT_RAW10)
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let target = lines[rng.gen_range(0..lines.len())];
    let bit = rng.gen_range(0..usize::MAX);
    tamper_line_packet(&mut frame.packets[target], bit);
    t.note(format!("flipped one bit in packet {target}, checksum recomputed"));
    let outcome = single(session.deliver_all(frame.packets));
    let verdict = match &outcome {
        Some(o @ FrameOutcome::Dropped { error, .. }) if error.is_rejection() => {
            t.outcome("tampered frame", o);
            Outcome::FrameRejected
        }
        Some(o @ FrameOutcome::Accepted(_)) => {
            t.outcome("tampered frame", o);
            Outcome::FrameAccepted
        }
        Some(o) => {
            t.outcome("tampered frame", o);
            Outcome::Inconclusive
        }
        None => Outcome::Inconclusive,
    };
    match session.stream_frame(&mut NoTap).map(single) {
        Ok(Some(o)) => t.outcome("next clean frame", &o),
        _ => t.note("next clean frame: none"),
    }
    verdict
}

fn reorder(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    let Some((_, mut session)) = established(config, t) else {
        return Outcome::HandshakeFailure;
    };
    let frames: Result<Vec<_>, _> = (0..3).map(|_| session.sensor.emit_frame()).collect();
    let Ok(mut frames) = frames else {
        return Outcome::Inconclusive;
    };
    let delayed = frames.remove(1);
    t.note(format!("holding back frame {}", delayed.counter));
    let mut accepted = Vec::new();
    for f in frames {
        for o in session.deliver_all(f.packets) {
            t.outcome("in order", &o);
            if let FrameOutcome::Accepted(a) = &o {
                accepted.extend(a.manifest.claim.frame_counter());
            }
        }
    }
    match single(session.deliver_all(delayed.packets)) {
        Some(o) => {
            t.outcome("late frame", &o);
            if is_replay(&o) && accepted.windows(2).all(|w| w[0] < w[1]) {
                Outcome::FrameRejected
            } else if matches!(o, FrameOutcome::Accepted(_)) {
                Outcome::FrameAccepted
            } else {
                Outcome::Inconclusive
            }
        }
        None => Outcome::Inconclusive,
    }
}

/// Captures one valid asset and writes it to `dir`.
fn captured_asset(config: &HarnessConfig, t: &mut Transcript, dir: &Path) -> Option<(Provisioned, Vec<u8>)> {
    let (ids, mut session) = established(config, t)?;
    let asset = match session.stream_frame(&mut NoTap).ok().and_then(single) {
        Some(FrameOutcome::Accepted(a)) => a,
        other => {
            t.note(format!("capture did not yield an asset: {other:?}"));
            return None;
        }
    };
    let bytes = asset.to_bytes();
    let path = dir.join("capture.sra");
    fs::write(&path, &bytes).ok()?;
    let clean = verify_asset_bytes(&bytes, ids.root.certificate());
    t.note(format!("baseline verify: {}", clean.verdict().name()));
    (clean.verdict() == Verdict::Valid).then_some((ids, bytes))
}

fn verify_file(path: &Path, ids: &Provisioned, t: &mut Transcript) -> Outcome {
    let Ok(bytes) = fs::read(path) else {
        return Outcome::Inconclusive;
    };
    let report = verify_asset_bytes(&bytes, ids.root.certificate());
    for line in report.to_text().lines() {
        t.note(format!("verify: {line}"));
    }
    match report.verdict() {
        Verdict::Valid => Outcome::VerifyValid,
        Verdict::Invalid => Outcome::VerifyInvalid,
        Verdict::Malformed => Outcome::Inconclusive,
    }
}

/// Strips the secure-pipeline and device-identity assertions from the
/// written file, keeping the original signature, as a launderer would.
fn manifest_strip(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    let Ok(dir) = tempfile::tempdir() else {
        return Outcome::Inconclusive;
    };
    let Some((ids, bytes)) = captured_asset(config, t, dir.path()) else {
        return Outcome::Inconclusive;
    };
    let Ok(mut asset) = SignedAsset::from_bytes(&bytes) else {
        return Outcome::Inconclusive;
    };
    asset.manifest.claim.assertions.retain(|a| {
        !matches!(
            a.kind(),
            AssertionKind::SecurePipeline | AssertionKind::DeviceIdentity
        )
    });
    t.note(format!(
        "stripped to {} assertions, signature kept",
        asset.manifest.claim.assertions.len()
    ));
    let path = dir.path().join("stripped.sra");
    if fs::write(&path, asset.to_bytes()).is_err() {
        return Outcome::Inconclusive;
    }
    verify_file(&path, &ids, t)
}

fn post_sign_edit(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    let Ok(dir) = tempfile::tempdir() else {
        return Outcome::Inconclusive;
    };
    let Some((ids, mut bytes)) = captured_asset(config, t, dir.path()) else {
        return Outcome::Inconclusive;
    };
    // magic(4) ‖ u64 len(8) ‖ raster header(12) ‖ pixels
    let pixel = 4 + 8 + crate::imaging::RASTER_HEADER_LEN + 3 * (config.width as usize + 1);
    bytes[pixel] = bytes[pixel].wrapping_add(1);
    t.note(format!("edited one pixel byte at file offset {pixel}"));
    let path = dir.path().join("edited.sra");
    if fs::write(&path, &bytes).is_err() {
        return Outcome::Inconclusive;
    }
    let outcome = verify_file(&path, &ids, t);
    let binding = verify_asset_bytes(&bytes, ids.root.certificate()).has_reason("hard_binding_mismatch");
    match outcome {
        Outcome::VerifyInvalid if binding => Outcome::VerifyInvalid,
        Outcome::VerifyInvalid => Outcome::Inconclusive,
        other => other,
    }
}

/// A secret value the probe looks for, with a label for reporting.
#[derive(Clone)]
pub struct Secret {
    pub label: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Secret").field("label", &self.label).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub secret: String,
    pub channel: &'static str,
    pub encoding: &'static str,
    pub offset: usize,
}

/// Searches every recorded outward stream for each secret as raw bytes and
/// as lower/upper-case hex.
pub fn key_exfil_probe(record: &SessionRecord, secrets: &[Secret]) -> Vec<Finding> {
    let mut findings = Vec::new();
    for secret in secrets {
        let encodings = [
            ("raw", secret.bytes.clone()),
            ("hex", hex::encode(&secret.bytes).into_bytes()),
            ("HEX", hex::encode_upper(&secret.bytes).into_bytes()),
        ];
        for (encoding, needle) in &encodings {
            let finder = memmem::Finder::new(needle);
            for (channel, stream) in record.streams() {
                if let Some(offset) = finder.find(stream) {
                    findings.push(Finding {
                        secret: secret.label.clone(),
                        channel,
                        encoding,
                        offset,
                    });
                }
            }
        }
    }
    findings
}

fn session_secrets(ids: &Provisioned, session: &PipelineSession) -> Vec<Secret> {
    let mut secrets: Vec<Secret> = [("root", &ids.root), ("host", &ids.host), ("sensor", &ids.sensor)]
        .into_iter()
        .map(|(label, id)| Secret {
            label: format!("{label} private key"),
            bytes: id.private_scalar().to_vec(),
        })
        .collect();
    if let Some(keys) = session.sensor.session_keys_for_probe() {
        secrets.push(Secret {
            label: "aead key".into(),
            bytes: keys.aead_key.to_vec(),
        });
        secrets.push(Secret {
            label: "mac key".into(),
            bytes: keys.mac_key.to_vec(),
        });
    }
    secrets
}

/// One full session (handshake plus `frames` captures) with fresh keys;
/// returns the probe findings.
pub fn probe_session(config: &HarnessConfig, frames: usize) -> Result<Vec<Finding>, String> {
    let ids = Provisioned::new(config.seed);
    let mut session = ids.session(config);
    session.handshake(&mut NoTap).map_err(|e| e.to_string())?;
    for _ in 0..frames {
        for outcome in session.stream_frame(&mut NoTap).map_err(|e| e.to_string())? {
            match outcome {
                FrameOutcome::Accepted(a) => session.record.push("file", a.to_bytes()),
                FrameOutcome::Dropped { error, .. } => return Err(error.to_string()),
            }
        }
    }
    session.record.log(format!("{:?} {:?}", session.host, session.sensor));
    Ok(key_exfil_probe(&session.record, &session_secrets(&ids, &session)))
}

fn key_exfil_scenario(config: &HarnessConfig, t: &mut Transcript) -> Outcome {
    // probe self-test: a planted leak must be found
    let mut planted = SessionRecord::default();
    let canary = Secret {
        label: "canary".into(),
        bytes: ChaCha20Rng::seed_from_u64(config.seed).gen::<[u8; 32]>().to_vec(),
    };
    planted.log(format!("debug dump key={}", hex::encode(&canary.bytes)));
    if key_exfil_probe(&planted, std::slice::from_ref(&canary)).is_empty() {
        t.note("probe self-test failed to find a planted leak");
        return Outcome::Inconclusive;
    }
    t.note("probe self-test found the planted leak");
    match probe_session(config, 3) {
        Ok(findings) if findings.is_empty() => {
            t.note("searched handshake, csi2, enclave, file and log streams: 0 findings");
            Outcome::NoKeyMaterialFound
        }
        Ok(findings) => {
            for f in &findings {
                t.note(format!("{} found in {} ({}) at {}", f.secret, f.channel, f.encoding, f.offset));
            }
            Outcome::KeyMaterialFound
        }
        Err(e) => {
            t.note(format!("session failed: {e}"));
            Outcome::Inconclusive
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_has_expected_outcome() {
        for profile in CipherProfile::ALL {
            for carriage in TagCarriage::ALL {
                let config = HarnessConfig {
                    profile,
                    tag_carriage: carriage,
                    ..HarnessConfig::default()
                };
                for report in run_all(&config) {
                    assert!(report.passed(), "{profile} {carriage}\n{}", report.to_text());
                }
            }
        }
    }

    #[test]
    fn scenario_names_parse() {
        for s in AttackScenario::ALL {
            assert_eq!(s.name().parse::<AttackScenario>(), Ok(s));
        }
        assert_eq!("post-sign-edit".parse(), Ok(AttackScenario::PostSignEdit));
        assert!("bogus".parse::<AttackScenario>().is_err());
    }

    #[test]
    fn probe_finds_planted_leaks_in_every_encoding() {
        let secret = Secret {
            label: "k".into(),
            bytes: vec![0xAB; 16],
        };
        for planted in [secret.bytes.clone(), hex::encode(&secret.bytes).into_bytes(), hex::encode_upper(&secret.bytes).into_bytes()] {
            let mut record = SessionRecord::default();
            let mut stream = b"prefix".to_vec();
            stream.extend(&planted);
            record.push("csi2", stream);
            let findings = key_exfil_probe(&record, std::slice::from_ref(&secret));
            assert_eq!(findings.len(), 1);
            assert_eq!(findings[0].offset, 6);
        }
    }

    #[test]
    fn tamper_keeps_checksum_valid() {
        let packet = crate::csi2::Csi2Packet::long(0, DT_RAW10, vec![1, 2, 3, 4, 5]).unwrap();
        let mut wire = packet.to_wire();
        tamper_line_packet(&mut wire, 13);
        let (parsed, _) = crate::csi2::Csi2Packet::from_wire(&wire).unwrap();
        assert_eq!(parsed.payload, vec![1, 2 ^ (1 << 5), 3, 4, 5]);
    }
}
