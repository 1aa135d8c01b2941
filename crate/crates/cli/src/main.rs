//! `aas` — operator and user entry point for the encrypted-storage vault:
//! run the server, move sealed objects, audit the access ledger, verify the
//! hash chain, and run the passive-attack simulation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use aas_core::adversary::{self, BenchSample, Tap};
use aas_core::audit::{self, AuditType};
use aas_core::chaff::{ChaffPolicy, Priority, Ratio};
use aas_core::client::{Client, ClientError};
use aas_core::clock::{Clock, MonotoneClock, SystemClock};
use aas_core::config::Config;
use aas_core::envelope::{self, DataKey, EncryptedEnvelope, Keyring};
use aas_core::ledger::{Ledger, VerifyOutcome};
use aas_core::server::{self, ServerConfig};
use aas_core::wire::{DeclaredStamps, ErrorCode, ObjectRef, PrincipalTable, WireError};

// exit codes: 2 usage (clap), then one class per error family
const EXIT_KEY: u8 = 10;
const EXIT_CHAFF: u8 = 11;
const EXIT_PROTOCOL: u8 = 12;
const EXIT_DENIED: u8 = 13;
const EXIT_NOT_FOUND: u8 = 14;
const EXIT_LEDGER: u8 = 15;
const EXIT_AUDIT: u8 = 16;
const EXIT_ATTACK: u8 = 17;
const EXIT_CONFIG: u8 = 18;
const EXIT_IO: u8 = 19;

#[derive(Parser)]
#[command(name = "aas", version, about = "Encrypted-storage vault with chaffed transport and an audited access ledger")]
struct Cli {
    /// Config file (`AAS_CONFIG` env var takes precedence)
    #[arg(long, global = true, default_value = "aas.conf")]
    config: PathBuf,
    /// Emit machine-readable JSON
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the storage gateway server
    Serve,
    /// Generate a data key (--key-id) or a principal secret (--principal)
    Keygen {
        #[arg(long)]
        key_id: Option<String>,
        #[arg(long)]
        principal: Option<String>,
    },
    /// Seal a file client-side and store it
    Put {
        /// Object id
        #[arg(long)]
        id: String,
        /// Input file
        file: PathBuf,
        #[command(flatten)]
        client: ClientArgs,
        /// Data key to seal with
        #[arg(long, default_value = "default")]
        key_id: String,
        /// Chaff priority: speed, balanced, or security
        #[arg(long)]
        priority: Option<String>,
        /// Explicit fake-to-real ratio (e.g. 0.25, 1, 2, 1/4)
        #[arg(long)]
        ratio: Option<String>,
        #[arg(long)]
        bench_size: Option<usize>,
    },
    /// Fetch an object and decrypt it client-side
    Get {
        #[arg(long)]
        id: String,
        /// Output file
        out: PathBuf,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Delete an object
    Rm {
        #[arg(long)]
        id: String,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// List own objects
    Ls {
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Run audits or export logs for a third-party auditor
    Audit {
        #[command(subcommand)]
        cmd: AuditCmd,
    },
    /// Recompute the ledger hash chain
    LedgerVerify,
    /// Passive-attack simulation: capture, classify, replay
    AttackSim {
        /// Minimum labeled benches for the distinguisher battery
        #[arg(long, default_value_t = 12_000)]
        benches: usize,
        /// Payload size per simulated PUT
        #[arg(long, default_value_t = 16_384)]
        payload_bytes: usize,
    },
}

#[derive(Args)]
struct ClientArgs {
    /// Principal to authenticate as (defaults to `principal` in config)
    #[arg(long)]
    principal: Option<String>,
    /// Object owner (defaults to the principal; differing owners are denied
    /// and logged)
    #[arg(long)]
    owner: Option<String>,
}

#[derive(Subcommand)]
enum AuditCmd {
    /// Evaluate a rules file over a ledger period and print the report JSON
    Run {
        /// interim, final, or external
        #[arg(long = "type")]
        audit_type: String,
        /// Scope identity (required for external audits)
        #[arg(long)]
        identity: Option<String>,
        /// Rules file, one rule per line
        #[arg(long)]
        rules: PathBuf,
        /// Period start, seconds since the Unix epoch (default 0)
        #[arg(long)]
        from: Option<u64>,
        /// Period end, seconds since the Unix epoch (default now)
        #[arg(long)]
        to: Option<u64>,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export period logs and chain hashes as NDJSON for a third-party
    /// auditor
    Export {
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn config_path(cli_path: &Path) -> PathBuf {
    match std::env::var_os("AAS_CONFIG") {
        Some(p) => PathBuf::from(p),
        None => cli_path.to_path_buf(),
    }
}

fn load_config(cli_path: &Path) -> Result<Config, CliError> {
    let path = config_path(cli_path);
    if path.exists() {
        Config::load(&path).map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))
    } else {
        Ok(Config::default())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Serve => cmd_serve(&config, cli.json),
        Command::Keygen { key_id, principal } => cmd_keygen(&config, cli.json, key_id, principal),
        Command::Put {
            id,
            file,
            client,
            key_id,
            priority,
            ratio,
            bench_size,
        } => cmd_put(&config, cli.json, &id, &file, client, &key_id, priority, ratio, bench_size),
        Command::Get { id, out, client } => cmd_get(&config, cli.json, &id, &out, client),
        Command::Rm { id, client } => cmd_rm(&config, cli.json, &id, client),
        Command::Ls { client } => cmd_ls(&config, cli.json, client),
        Command::Audit { cmd } => match cmd {
            AuditCmd::Run {
                audit_type,
                identity,
                rules,
                from,
                to,
                out,
            } => cmd_audit_run(&config, &audit_type, identity, &rules, from, to, out),
            AuditCmd::Export { from, to, out } => cmd_audit_export(&config, from, to, out),
        },
        Command::LedgerVerify => cmd_ledger_verify(&config, cli.json),
        Command::AttackSim {
            benches,
            payload_bytes,
        } => cmd_attack_sim(cli.json, benches, payload_bytes),
    }
}

// --- server ------------------------------------------------------------------

fn cmd_serve(config: &Config, json: bool) -> Result<(), CliError> {
    if !config.principals_file.exists() {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!(
                "principals file {} not found (run `aas keygen --principal <name>`)",
                config.principals_file.display()
            ),
        ));
    }
    let principals = PrincipalTable::load(&config.principals_file)
        .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    let server_config = ServerConfig {
        listen_addr: config.listen_addr.clone(),
        data_dir: config.data_dir.clone(),
        ledger_path: config.ledger_path.clone(),
        principals,
        chaff_policy: config.policy(),
    };
    let clock: Arc<dyn Clock> = Arc::new(MonotoneClock::new(SystemClock));
    let handle = server::spawn(server_config, clock).map_err(map_server_err)?;
    if json {
        println!("{}", serde_json::json!({ "listening": handle.addr().to_string() }));
    } else {
        println!("listening on {}", handle.addr());
    }
    handle.wait();
    Ok(())
}

// --- key management ------------------------------------------------------------

fn cmd_keygen(
    config: &Config,
    json: bool,
    key_id: Option<String>,
    principal: Option<String>,
) -> Result<(), CliError> {
    match (key_id, principal) {
        (Some(key_id), None) => {
            let mut ring = if config.keyring_path.exists() {
                Keyring::load(&config.keyring_path).map_err(map_envelope_err)?
            } else {
                Keyring::new()
            };
            let key = DataKey::generate(&key_id).map_err(map_envelope_err)?;
            ring.insert(key).map_err(map_envelope_err)?;
            ring.save(&config.keyring_path).map_err(map_envelope_err)?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({ "keyring": config.keyring_path.display().to_string(), "key_id": key_id })
                );
            } else {
                println!("added data key {key_id:?} to {}", config.keyring_path.display());
            }
            Ok(())
        }
        (None, Some(principal)) => {
            let mut table = if config.principals_file.exists() {
                PrincipalTable::load(&config.principals_file)
                    .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?
            } else {
                PrincipalTable::new()
            };
            table.insert(&principal, rand::random::<[u8; 32]>());
            table
                .save(&config.principals_file)
                .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({ "principals_file": config.principals_file.display().to_string(), "principal": principal })
                );
            } else {
                println!(
                    "added principal {principal:?} to {}",
                    config.principals_file.display()
                );
            }
            Ok(())
        }
        _ => Err(CliError::new(
            2,
            "keygen needs exactly one of --key-id or --principal",
        )),
    }
}

// --- client ops ------------------------------------------------------------

fn connect(config: &Config, args: &ClientArgs) -> Result<(Client, String, String), CliError> {
    let principal = args
        .principal
        .clone()
        .unwrap_or_else(|| config.principal.clone());
    let owner = args.owner.clone().unwrap_or_else(|| principal.clone());
    let table = PrincipalTable::load(&config.principals_file)
        .map_err(|e| CliError::new(EXIT_CONFIG, e.to_string()))?;
    let psk = table.secret(&principal).ok_or_else(|| {
        CliError::new(
            EXIT_CONFIG,
            format!("principal {principal:?} not in {}", config.principals_file.display()),
        )
    })?;
    let stamps = DeclaredStamps {
        location_zone: config.location_zone.clone(),
        application: config.application.clone(),
        device_id: config.device_id.clone(),
    };
    let client =
        Client::connect(&config.listen_addr, &principal, psk, stamps).map_err(map_client_err)?;
    Ok((client, principal, owner))
}

#[allow(clippy::too_many_arguments)]
fn cmd_put(
    config: &Config,
    json: bool,
    id: &str,
    file: &Path,
    client_args: ClientArgs,
    key_id: &str,
    priority: Option<String>,
    ratio: Option<String>,
    bench_size: Option<usize>,
) -> Result<(), CliError> {
    let payload = std::fs::read(file).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    let ring = Keyring::load(&config.keyring_path).map_err(map_envelope_err)?;
    let key = ring.get(key_id).ok_or_else(|| {
        CliError::new(
            EXIT_KEY,
            format!("key {key_id:?} not in {} (run `aas keygen --key-id {key_id}`)", config.keyring_path.display()),
        )
    })?;

    let mut policy = config.policy();
    if let Some(p) = priority {
        let p = Priority::parse(&p).map_err(map_chaff_err)?;
        policy = ChaffPolicy::for_priority(p).with_bench_size(policy.bench_size);
    }
    if let Some(r) = ratio {
        policy = policy.with_ratio(Ratio::parse(&r).map_err(map_chaff_err)?);
    }
    if let Some(b) = bench_size {
        policy = policy.with_bench_size(b);
    }
    policy.validate().map_err(map_chaff_err)?;

    let envelope = envelope::seal(&payload, key).map_err(map_envelope_err)?;
    let (mut client, _principal, owner) = connect(config, &client_args)?;
    let object = ObjectRef::new(owner, id);
    client
        .put(&object, &envelope.to_bytes(), &policy)
        .map_err(map_client_err)?;
    if json {
        println!(
            "{}",
            serde_json::json!({ "stored": object.qualified(), "bytes": payload.len() })
        );
    } else {
        println!("stored {} ({} bytes)", object.qualified(), payload.len());
    }
    Ok(())
}

fn cmd_get(
    config: &Config,
    json: bool,
    id: &str,
    out: &Path,
    client_args: ClientArgs,
) -> Result<(), CliError> {
    let ring = Keyring::load(&config.keyring_path).map_err(map_envelope_err)?;
    let (mut client, _principal, owner) = connect(config, &client_args)?;
    let object = ObjectRef::new(owner, id);
    let envelope_bytes = client.get(&object).map_err(map_client_err)?;
    let envelope = EncryptedEnvelope::from_bytes(&envelope_bytes).map_err(map_envelope_err)?;
    let payload = envelope::open_with_keyring(&envelope, &ring).map_err(map_envelope_err)?;
    std::fs::write(out, &payload).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    if json {
        println!(
            "{}",
            serde_json::json!({ "fetched": object.qualified(), "bytes": payload.len(), "out": out.display().to_string() })
        );
    } else {
        println!("fetched {} ({} bytes) -> {}", object.qualified(), payload.len(), out.display());
    }
    Ok(())
}

fn cmd_rm(config: &Config, json: bool, id: &str, client_args: ClientArgs) -> Result<(), CliError> {
    let (mut client, _principal, owner) = connect(config, &client_args)?;
    let object = ObjectRef::new(owner, id);
    client.delete(&object).map_err(map_client_err)?;
    if json {
        println!("{}", serde_json::json!({ "deleted": object.qualified() }));
    } else {
        println!("deleted {}", object.qualified());
    }
    Ok(())
}

fn cmd_ls(config: &Config, json: bool, client_args: ClientArgs) -> Result<(), CliError> {
    let (mut client, _principal, _owner) = connect(config, &client_args)?;
    let ids = client.list().map_err(map_client_err)?;
    if json {
        println!("{}", serde_json::json!({ "objects": ids }));
    } else {
        for id in ids {
            println!("{id}");
        }
    }
    Ok(())
}

// --- audit ops ------------------------------------------------------------

fn period_ns(from: Option<u64>, to: Option<u64>) -> (u64, u64) {
    let start = from.map(|s| s.saturating_mul(1_000_000_000)).unwrap_or(0);
    let end = to
        .map(|s| s.saturating_mul(1_000_000_000))
        .unwrap_or_else(|| SystemClock.now_ns());
    (start, end)
}

fn cmd_audit_run(
    config: &Config,
    audit_type: &str,
    identity: Option<String>,
    rules_path: &Path,
    from: Option<u64>,
    to: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let audit_type = match audit_type.to_ascii_lowercase().as_str() {
        "interim" => AuditType::Interim,
        "final" => AuditType::Final,
        "external" => AuditType::External,
        other => {
            return Err(CliError::new(
                2,
                format!("unknown audit type {other:?}, expected interim, final, or external"),
            ))
        }
    };
    let rules_text =
        std::fs::read_to_string(rules_path).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
    let rules = audit::compile_rules(&rules_text).map_err(map_audit_err)?;
    let ledger = open_ledger(config)?;
    let report = audit::run_audit(
        &ledger,
        audit_type,
        period_ns(from, to),
        &rules,
        identity.as_deref(),
    )
    .map_err(map_audit_err)?;
    let rendered = report.to_json();
    match out {
        Some(path) => {
            std::fs::write(&path, rendered).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            println!("report written to {}", path.display());
        }
        None => println!("{rendered}"),
    }
    Ok(())
}

fn cmd_audit_export(
    config: &Config,
    from: Option<u64>,
    to: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let ledger = open_ledger(config)?;
    let export = audit::export_for_tpa(&ledger, period_ns(from, to)).map_err(map_audit_err)?;
    match out {
        Some(path) => {
            std::fs::write(&path, export).map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
            println!("export written to {}", path.display());
        }
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&export)
                .map_err(|e| CliError::new(EXIT_IO, e.to_string()))?;
        }
    }
    Ok(())
}

fn open_ledger(config: &Config) -> Result<Ledger, CliError> {
    Ledger::open(&config.ledger_path).map_err(|e| CliError::new(EXIT_LEDGER, e.to_string()))
}

fn cmd_ledger_verify(config: &Config, json: bool) -> Result<(), CliError> {
    let outcome = match Ledger::open(&config.ledger_path) {
        Ok(ledger) => ledger
            .verify(None)
            .map_err(|e| CliError::new(EXIT_LEDGER, e.to_string()))?,
        Err(aas_core::ledger::LedgerError::Corrupt(seq)) => VerifyOutcome::FirstBad(seq),
        Err(e) => return Err(CliError::new(EXIT_LEDGER, e.to_string())),
    };
    let text = match outcome {
        VerifyOutcome::Ok => "OK".to_string(),
        VerifyOutcome::FirstBad(seq) => format!("FIRST_BAD {seq}"),
    };
    if json {
        println!("{}", serde_json::json!({ "ledger_verification": text }));
    } else {
        println!("{text}");
    }
    match outcome {
        VerifyOutcome::Ok => Ok(()),
        VerifyOutcome::FirstBad(seq) => Err(CliError::new(
            EXIT_LEDGER,
            format!("ledger chain broken at block {seq}"),
        )),
    }
}

// --- attack simulation -------------------------------------------------------

struct SimResult {
    honest_accuracy: f64,
    honest_best: &'static str,
    zero_fake_accuracy: f64,
    shuffled_accuracy: f64,
    samples: usize,
    replay_ok_outcomes: usize,
    replay_denied_entries: u64,
    canary_on_wire: bool,
    wire_bytes: usize,
}

impl SimResult {
    fn passed(&self) -> bool {
        self.honest_accuracy <= 0.55
            && self.zero_fake_accuracy >= 0.99
            && (self.shuffled_accuracy - 0.5).abs() <= 0.02
            && self.replay_ok_outcomes == 0
            && self.replay_denied_entries >= 1
            && !self.canary_on_wire
    }
}

fn cmd_attack_sim(json: bool, min_benches: usize, payload_bytes: usize) -> Result<(), CliError> {
    let sim = run_attack_sim(min_benches, payload_bytes)
        .map_err(|e| CliError::new(EXIT_ATTACK, e.message))?;
    if json {
        println!(
            "{}",
            serde_json::json!({
                "samples": sim.samples,
                "honest_best_distinguisher": sim.honest_best,
                "honest_accuracy": sim.honest_accuracy,
                "zero_fake_control_accuracy": sim.zero_fake_accuracy,
                "shuffled_label_accuracy": sim.shuffled_accuracy,
                "replay_ok_outcomes": sim.replay_ok_outcomes,
                "replay_denied_entries": sim.replay_denied_entries,
                "plaintext_canary_on_wire": sim.canary_on_wire,
                "wire_bytes_captured": sim.wire_bytes,
                "passed": sim.passed(),
            })
        );
    } else {
        println!("captured {} wire bytes, {} labeled benches", sim.wire_bytes, sim.samples);
        println!(
            "honest battery: best {} accuracy {:.4} (bound 0.55)",
            sim.honest_best, sim.honest_accuracy
        );
        println!(
            "controls: all-zero fakes {:.4} (>= 0.99), shuffled labels {:.4} (0.50 +- 0.02)",
            sim.zero_fake_accuracy, sim.shuffled_accuracy
        );
        println!(
            "replay: {} ok outcomes, {} denied ledger entries",
            sim.replay_ok_outcomes, sim.replay_denied_entries
        );
        println!("plaintext canary on wire: {}", sim.canary_on_wire);
        println!("result: {}", if sim.passed() { "PASS" } else { "FAIL" });
    }
    if sim.passed() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_ATTACK, "attack simulation failed"))
    }
}

fn run_attack_sim(min_benches: usize, payload_bytes: usize) -> Result<SimResult, CliError> {
    use rand::seq::SliceRandom;
    use rand::RngCore;

    let err = |e: String| CliError::new(EXIT_ATTACK, e);
    let dir = tempfile::tempdir().map_err(|e| err(e.to_string()))?;
    let psk: [u8; 32] = rand::random();
    let mut principals = PrincipalTable::new();
    principals.insert("sim-user", psk);
    let server_config = ServerConfig {
        listen_addr: "127.0.0.1:0".into(),
        data_dir: dir.path().join("data"),
        ledger_path: dir.path().join("ledger.bin"),
        principals,
        chaff_policy: ChaffPolicy::default(),
    };
    let clock: Arc<dyn Clock> = Arc::new(MonotoneClock::new(SystemClock));
    let handle = server::spawn(server_config, clock).map_err(|e| err(e.to_string()))?;
    let addr = handle.addr().to_string();

    let tx = Tap::new();
    let rx = Tap::new();
    let stamps = DeclaredStamps {
        location_zone: "sim-zone".into(),
        application: "aas-attack-sim".into(),
        device_id: "si:mu:la:te:d0:01".into(),
    };
    let mut client = Client::connect_tapped(
        &addr,
        "sim-user",
        &psk,
        stamps,
        Some(tx.clone()),
        Some(rx.clone()),
    )
    .map_err(|e| err(e.to_string()))?;
    let session_key = client.session().session_key;

    let key = DataKey::generate("sim").map_err(|e| err(e.to_string()))?;
    let canary = b"ATTACK-SIM-CANARY-0b5c51c1d4e7";
    let canary_env = envelope::seal(canary, &key).map_err(|e| err(e.to_string()))?;
    client
        .put(
            &ObjectRef::new("sim-user", "canary"),
            &canary_env.to_bytes(),
            &ChaffPolicy::default(),
        )
        .map_err(|e| err(e.to_string()))?;

    // drive PUT/GET traffic until the capture holds enough benches
    let policy = ChaffPolicy::default();
    let mut rng = rand::rngs::OsRng;
    let mut produced = 0usize;
    let mut idx = 0usize;
    while produced < min_benches {
        let mut payload = vec![0u8; payload_bytes];
        rng.fill_bytes(&mut payload);
        let env = envelope::seal(&payload, &key).map_err(|e| err(e.to_string()))?;
        let object = ObjectRef::new("sim-user", format!("obj-{idx}"));
        client
            .put(&object, &env.to_bytes(), &policy)
            .map_err(|e| err(e.to_string()))?;
        let _ = client.get(&object).map_err(|e| err(e.to_string()))?;
        produced += 2 * (env.serialized_len().div_ceil(policy.bench_size)) * 2;
        idx += 1;
    }

    // label captured benches with harness-side session-key knowledge
    let mut samples: Vec<BenchSample> = Vec::new();
    let sent = tx.snapshot();
    let received = rx.snapshot();
    for record in sent.records.iter().chain(received.records.iter()) {
        let Ok((frame, _)) = aas_core::wire::decode_frame(&record.bytes) else {
            continue;
        };
        let stream_bytes = match frame.frame_type {
            aas_core::wire::FrameType::Put => {
                let Ok((_, consumed)) = ObjectRef::decode(&frame.payload) else {
                    continue;
                };
                frame.payload[consumed..].to_vec()
            }
            aas_core::wire::FrameType::Stream => frame.payload.clone(),
            _ => continue,
        };
        if let Ok(mut s) = adversary::labeled_benches_from_stream(&stream_bytes, &session_key) {
            samples.append(&mut s);
        }
    }
    if samples.len() < min_benches {
        return Err(err(format!(
            "only {} benches captured, need {min_benches}",
            samples.len()
        )));
    }

    let honest = adversary::classify_benches(&samples).map_err(|e| err(e.to_string()))?;

    // sabotage control: same wire benches, fakes replaced by zeros
    let zeroed: Vec<BenchSample> = samples
        .iter()
        .map(|s| BenchSample {
            bytes: if s.is_real {
                s.bytes.clone()
            } else {
                vec![0u8; s.bytes.len()]
            },
            position: s.position,
            is_real: s.is_real,
        })
        .collect();
    let zero_fake = adversary::classify_benches(&zeroed).map_err(|e| err(e.to_string()))?;

    // null calibration: shuffle the labels
    let mut shuffled = zeroed;
    let mut labels: Vec<bool> = shuffled.iter().map(|s| s.is_real).collect();
    labels.shuffle(&mut rand::thread_rng());
    for (s, l) in shuffled.iter_mut().zip(labels) {
        s.is_real = l;
    }
    let shuffled_report = adversary::classify_benches(&shuffled).map_err(|e| err(e.to_string()))?;

    // replay the captured client traffic
    let denied_before = denied_count(&handle)?;
    let replay = adversary::replay_transcript(&addr, &sent).map_err(|e| err(e.to_string()))?;
    let denied_after = denied_count(&handle)?;

    let canary_on_wire = sent.contains(canary) || received.contains(canary);
    let wire_bytes = sent.total_bytes() + received.total_bytes();
    drop(client);
    handle.shutdown();

    Ok(SimResult {
        honest_accuracy: honest.best.accuracy,
        honest_best: honest.best.name,
        zero_fake_accuracy: zero_fake.best.accuracy,
        shuffled_accuracy: shuffled_report.best.accuracy,
        samples: samples.len(),
        replay_ok_outcomes: replay.ok_outcomes,
        replay_denied_entries: denied_after - denied_before,
        canary_on_wire,
        wire_bytes,
    })
}

fn denied_count(handle: &server::ServerHandle) -> Result<u64, CliError> {
    let denied = handle
        .ledger()
        .query(&aas_core::ledger::LedgerFilter {
            outcome: Some(aas_core::ledger::Outcome::Denied),
            ..Default::default()
        })
        .map_err(|e| CliError::new(EXIT_LEDGER, e.to_string()))?;
    Ok(denied.len() as u64)
}

// --- error mapping -----------------------------------------------------------

fn map_client_err(e: ClientError) -> CliError {
    match e {
        ClientError::Wire(WireError::ServerError { code, message }) => match code {
            ErrorCode::Denied => CliError::new(EXIT_DENIED, message),
            ErrorCode::NotFound => CliError::new(EXIT_NOT_FOUND, message),
            _ => CliError::new(EXIT_PROTOCOL, message),
        },
        ClientError::Wire(w) => CliError::new(EXIT_PROTOCOL, w.to_string()),
        ClientError::Chaff(c) => CliError::new(EXIT_CHAFF, c.to_string()),
    }
}

fn map_envelope_err(e: envelope::EnvelopeError) -> CliError {
    CliError::new(EXIT_KEY, e.to_string())
}

fn map_chaff_err(e: aas_core::chaff::ChaffError) -> CliError {
    CliError::new(EXIT_CHAFF, e.to_string())
}

fn map_audit_err(e: audit::AuditError) -> CliError {
    CliError::new(EXIT_AUDIT, e.to_string())
}

fn map_server_err(e: server::ServerError) -> CliError {
    match e {
        server::ServerError::Io(e) => CliError::new(EXIT_IO, e.to_string()),
        server::ServerError::Ledger(e) => CliError::new(EXIT_LEDGER, e.to_string()),
    }
}
