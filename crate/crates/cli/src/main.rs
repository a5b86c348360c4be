use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::rngs::OsRng;
use serde::Deserialize;

use sra_core::harness::{self, AttackScenario, HarnessConfig};
use sra_core::keystore::KeyStore;
use sra_core::pipeline::{self, BenchMode, PipelineConfig, TARGET_FPS};
use sra_core::protection::{CipherProfile, TagCarriage};
use sra_core::provenance::{verify_asset_bytes, Verdict};
use sra_core::sensor::BayerOrder;
use sra_core::session::{DeviceCertificate, Role};

#[derive(Parser)]
#[command(name = "sra", version, about = "Sign-at-capture secure imaging pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Provision a root, device-class, sensor or host identity.
    Keygen(KeygenArgs),
    /// Run the pipeline and write one signed asset per frame.
    Capture(CaptureArgs),
    /// Verify signed assets (exit 0 valid, 1 invalid, 2 malformed).
    Verify(VerifyArgs),
    /// Run scripted attacks against the pipeline.
    Attack(AttackArgs),
    /// Measure throughput against the 30 fps budget.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Root,
    DeviceClass,
    Sensor,
    Host,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Root => Role::ManufacturerRoot,
            RoleArg::DeviceClass => Role::DeviceClass,
            RoleArg::Sensor => Role::Sensor,
            RoleArg::Host => Role::Host,
        }
    }
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long, value_enum)]
    role: RoleArg,
    /// Identity name in the key store (default: the role name).
    #[arg(long)]
    name: Option<String>,
    /// Issuing identity (default: root).
    #[arg(long)]
    issuer: Option<String>,
    #[arg(long)]
    force: bool,
    #[arg(long, default_value = "keys")]
    keys: PathBuf,
}

/// Capture settings shared by the config file and the flags; flags win.
#[derive(Args, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct CaptureSettings {
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    bayer: Option<String>,
    /// efficiency (AES-CMAC) or performance (AES-GCM)
    #[arg(long)]
    profile: Option<String>,
    /// per-frame or per-packet
    #[arg(long)]
    carriage: Option<String>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    first_counter: Option<u64>,
    #[arg(long)]
    keys: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sensor: Option<String>,
    #[arg(long)]
    host: Option<String>,
    /// Fixed clock, deterministic signatures and a seeded handshake.
    #[arg(long)]
    #[serde(default)]
    deterministic: bool,
    #[arg(long)]
    fixed_time: Option<u64>,
    /// Run the sensor on its own thread.
    #[arg(long)]
    #[serde(default)]
    threaded: bool,
}

impl CaptureSettings {
    fn overlay(self, file: CaptureSettings) -> CaptureSettings {
        CaptureSettings {
            width: self.width.or(file.width),
            height: self.height.or(file.height),
            bayer: self.bayer.or(file.bayer),
            profile: self.profile.or(file.profile),
            carriage: self.carriage.or(file.carriage),
            frames: self.frames.or(file.frames),
            seed: self.seed.or(file.seed),
            first_counter: self.first_counter.or(file.first_counter),
            keys: self.keys.or(file.keys),
            out: self.out.or(file.out),
            sensor: self.sensor.or(file.sensor),
            host: self.host.or(file.host),
            deterministic: self.deterministic || file.deterministic,
            fixed_time: self.fixed_time.or(file.fixed_time),
            threaded: self.threaded || file.threaded,
        }
    }

    fn into_config(self) -> Result<PipelineConfig> {
        let d = PipelineConfig::default();
        let parse = |v: Option<String>, what: &str| -> Result<Option<String>> {
            match v {
                Some(s) if s.trim().is_empty() => bail!("empty {what}"),
                other => Ok(other),
            }
        };
        Ok(PipelineConfig {
            width: self.width.unwrap_or(d.width),
            height: self.height.unwrap_or(d.height),
            bayer_order: match parse(self.bayer, "bayer order")? {
                Some(s) => s.parse::<BayerOrder>().map_err(anyhow::Error::msg)?,
                None => d.bayer_order,
            },
            profile: match parse(self.profile, "profile")? {
                Some(s) => s.parse::<CipherProfile>().map_err(anyhow::Error::msg)?,
                None => d.profile,
            },
            tag_carriage: match parse(self.carriage, "carriage")? {
                Some(s) => s.parse::<TagCarriage>().map_err(anyhow::Error::msg)?,
                None => d.tag_carriage,
            },
            frames: self.frames.unwrap_or(d.frames),
            seed: self.seed.unwrap_or(d.seed),
            first_counter: self.first_counter.unwrap_or(d.first_counter),
            key_store_path: self.keys.unwrap_or(d.key_store_path),
            output_dir: self.out.unwrap_or(d.output_dir),
            sensor_name: self.sensor.unwrap_or(d.sensor_name),
            host_name: self.host.unwrap_or(d.host_name),
            deterministic: self.deterministic,
            fixed_time: self.fixed_time.unwrap_or(d.fixed_time),
            threaded: self.threaded,
            virtual_channel: d.virtual_channel,
        })
    }
}

#[derive(Args)]
struct CaptureArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: CaptureSettings,
}

impl CaptureArgs {
    fn resolve(self) -> Result<PipelineConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => CaptureSettings::default(),
        };
        self.settings.overlay(file).into_config()
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Asset files or directories of .sra files.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Key store holding the trusted root.
    #[arg(long, default_value = "keys", conflicts_with = "root")]
    keys: PathBuf,
    /// Root certificate chain file instead of a key store.
    #[arg(long)]
    root: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    scenario: Option<AttackScenario>,
    #[arg(long)]
    all: bool,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "performance")]
    profile: CipherProfile,
    #[arg(long, default_value = "per-frame")]
    carriage: TagCarriage,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchModeArg {
    Crypto,
    Full,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "crypto")]
    mode: BenchModeArg,
    #[arg(long, default_value_t = pipeline::DEFAULT_WIDTH)]
    width: u32,
    #[arg(long, default_value_t = pipeline::DEFAULT_HEIGHT)]
    height: u32,
    #[arg(long, default_value = "performance")]
    profile: CipherProfile,
    #[arg(long, default_value = "per-frame")]
    carriage: TagCarriage,
    /// Raised to the benchmark minimum if lower.
    #[arg(long, default_value_t = pipeline::BENCH_MIN_FRAMES)]
    frames: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn keygen(args: KeygenArgs) -> Result<ExitCode> {
    let store = KeyStore::new(&args.keys);
    let role = Role::from(args.role);
    let identity = store.provision(role, args.name.as_deref(), args.issuer.as_deref(), args.force, &mut OsRng)?;
    let cert = identity.certificate();
    println!("role={role}");
    println!("name={}", args.name.as_deref().unwrap_or(role.name()));
    println!("subject_id={}", cert.subject_id);
    println!("chain_length={}", identity.chain().len());
    println!("key_store={}", store.dir().display());
    Ok(ExitCode::SUCCESS)
}

fn capture(args: CaptureArgs) -> Result<ExitCode> {
    let config = args.resolve()?;
    let report = pipeline::capture(&config)?;
    println!("session_id={:#018x}", report.session_id);
    println!("profile={}", config.profile);
    println!("tag_carriage={}", config.tag_carriage);
    for file in &report.files {
        println!("wrote={}", file.display());
    }
    println!("frames={}", report.files.len());
    Ok(ExitCode::SUCCESS)
}

fn load_root(args: &VerifyArgs) -> Result<DeviceCertificate> {
    match &args.root {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let last = text
                .lines()
                .map(str::trim).rfind(|l| !l.is_empty())
                .context("root file holds no certificate")?;
            let bytes = hex::decode(last).context("root certificate is not hex")?;
            Ok(DeviceCertificate::from_bytes(&bytes)?)
        }
        None => Ok(KeyStore::new(&args.keys).trust_root()?),
    }
}

fn expand(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(path)
                .into_iter()
                .flatten()
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "sra"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(path.clone());
        }
    }
    out
}

fn verify_one(path: &Path, root: &DeviceCertificate) -> Verdict {
    println!("file={}", path.display());
    match fs::read(path) {
        Ok(bytes) => {
            let report = verify_asset_bytes(&bytes, root);
            print!("{}", report.to_text());
            report.verdict()
        }
        Err(e) => {
            println!("verdict=malformed\nreason=unreadable\ndetail.io={e}");
            Verdict::Malformed
        }
    }
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let root = match load_root(&args) {
        Ok(root) => root,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(ExitCode::from(2));
        }
    };
    let files = expand(&args.paths);
    if files.is_empty() {
        eprintln!("error: no asset files found");
        return Ok(ExitCode::from(2));
    }
    // worst verdict wins: malformed over invalid over valid
    let worst = files
        .iter()
        .map(|p| verify_one(p, &root))
        .max_by_key(|v| v.exit_code())
        .unwrap_or(Verdict::Valid);
    Ok(ExitCode::from(worst.exit_code() as u8))
}

fn attack(args: AttackArgs) -> Result<ExitCode> {
    let config = HarnessConfig {
        profile: args.profile,
        tag_carriage: args.carriage,
        seed: args.seed,
        ..HarnessConfig::default()
    };
    let reports = match args.scenario {
        Some(s) => vec![harness::run_scenario(s, &config)],
        None => harness::run_all(&config),
    };
    let text: String = reports.iter().map(|r| r.to_text() + "\n").collect();
    let passed = reports.iter().filter(|r| r.passed()).count();
    let summary = format!("summary={passed}/{} scenarios as expected\n", reports.len());
    print!("{text}{summary}");
    if let Some(path) = &args.report {
        fs::write(path, format!("{text}{summary}")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if passed == reports.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn bench(args: BenchArgs) -> Result<ExitCode> {
    let config = PipelineConfig {
        width: args.width,
        height: args.height,
        profile: args.profile,
        tag_carriage: args.carriage,
        frames: args.frames,
        seed: args.seed,
        ..PipelineConfig::default()
    };
    let mode = match args.mode {
        BenchModeArg::Crypto => BenchMode::Crypto,
        BenchModeArg::Full => BenchMode::Full,
    };
    let report = pipeline::bench(&config, mode)?;
    print!("{}", report.to_text());
    if report.meets_target() {
        return Ok(ExitCode::SUCCESS);
    }
    let message = format!(
        "achieved {:.2} fps, below the {TARGET_FPS} fps target",
        report.achieved_fps
    );
    if std::env::var_os("CI").is_some() {
        eprintln!("warning: {message}");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: {message}");
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::Capture(a) => capture(a),
        Command::Verify(a) => verify(a),
        Command::Attack(a) => attack(a),
        Command::Bench(a) => bench(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
