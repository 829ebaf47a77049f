//! `spx` — drive the benchmarks, the attack simulations, and ad-hoc scenario
//! runs from the command line.
//!
//! Benchmarks print schema-stamped CSV tables (or markdown with
//! `--markdown`); `spx run` prints a per-endpoint summary and can dump the
//! full JSON-lines trace. The `SPX_SEED` environment variable, when set,
//! overrides every other seed source.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use spx::bench::{
    bench_concurrency, bench_cpu, bench_handshake_all, bench_pageload, bench_transfer,
    concurrency_table, cpu_table, handshake_table, pageload_table, transfer_table, BenchConfig,
    Table, DEFAULT_SIZE_LADDER,
};
use spx::engine::ProtocolId;
use spx::netsim::attacks::{
    cuckoo_attack, cuckoo_topology, strawman_attest_after_connect, strawman_attest_before_connect,
    tocttou_attack, tocttou_topology, AttackOutcome,
};
use spx::netsim::{
    run_scenario, trace_to_jsonl, Mode, NetTopology, ScenarioConfig, Workload,
};
use spx::noixe::Pattern;

#[derive(Parser)]
#[command(
    name = "spx",
    version,
    about = "Edge-terminated secure-channel framework: benchmarks, attacks, scenario runs",
    long_about = "Benchmarks and attack simulations for a protocol extension that lets an \
                  attested edge proxy serve a secure session without owning the origin's \
                  credentials.\n\nSeeds resolve in this order: the SPX_SEED environment \
                  variable (strongest), then --seed, then built-in defaults."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Benchmark handshakes, transfers, page loads, concurrency, or CPU cost.
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Simulate a key-redirection attack and report the verdict.
    Attack {
        /// Which attack to mount.
        which: AttackKind,
        /// Run the attack against the matching naive design instead of the
        /// hardened one (negative control; the attack should succeed).
        #[arg(long)]
        strawman: bool,
        /// Protocol under attack (ignored by --strawman, which uses its own
        /// minimal channel).
        #[arg(long, value_enum, default_value_t = ProtocolArg::Tlx)]
        protocol: ProtocolArg,
        /// RNG seed (SPX_SEED overrides).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one scenario over a topology file.
    Run {
        /// JSON file holding protocol, mode, workload, seed, and topology.
        /// See `spx run --help` for the exact shape.
        #[arg(long, value_name = "FILE")]
        topology: PathBuf,
        /// Write the full simulation trace as JSON lines to this path
        /// ("-" streams it to stdout instead of the summary table).
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
        /// RNG seed; overrides the file's seed (SPX_SEED overrides both).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Wall-clock and virtual handshake time plus attestation overhead,
    /// one row per serving mode.
    Handshake {
        #[command(flatten)]
        opts: BenchOpts,
    },
    /// Echo transfers across a size ladder, one row per mode and size.
    Transfer {
        #[command(flatten)]
        opts: BenchOpts,
        /// Comma-separated transfer sizes in bytes (default: the built-in
        /// ladder from 1 KiB to 1600 KiB).
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
    },
    /// Sequential object fetches standing in for a page load.
    Pageload {
        #[command(flatten)]
        opts: BenchOpts,
        /// Objects per page.
        #[arg(long, default_value_t = 16)]
        objects: u64,
        /// Size of each object in bytes.
        #[arg(long, default_value_t = 64 * 1024)]
        object_bytes: usize,
    },
    /// Per-handshake wall time under N concurrent connection workers.
    Concurrency {
        #[command(flatten)]
        opts: BenchOpts,
        /// Comma-separated worker counts (each in 1..=128).
        #[arg(long, value_delimiter = ',', default_value = "1,8,64")]
        workers: Vec<usize>,
        /// Serving mode the workers run.
        #[arg(long, value_enum, default_value_t = ModeArg::Spx)]
        mode: ModeArg,
    },
    /// CPU charged to the proxy for one echo connection, per serving mode.
    Cpu {
        #[command(flatten)]
        opts: BenchOpts,
        /// Bytes echoed through the established session.
        #[arg(long, default_value_t = 64 * 1024)]
        echo_bytes: usize,
    },
}

#[derive(Args)]
struct BenchOpts {
    /// Protocol to benchmark.
    #[arg(long, value_enum, default_value_t = ProtocolArg::Tlx)]
    protocol: ProtocolArg,
    /// Base RNG seed (SPX_SEED overrides).
    #[arg(long)]
    seed: Option<u64>,
    /// Samples per measurement (at least 2).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=10_000))]
    runs: Option<u64>,
    /// Render tables as markdown instead of CSV.
    #[arg(long)]
    markdown: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    /// TLS-style family.
    Tlx,
    /// Noise-style NN pattern.
    Nn,
    /// Noise-style NK pattern.
    Nk,
    /// Noise-style XK pattern.
    Xk,
    /// Noise-style XX pattern.
    Xx,
    /// Noise-style IK pattern.
    Ik,
}

impl ProtocolArg {
    fn id(self) -> ProtocolId {
        match self {
            ProtocolArg::Tlx => ProtocolId::Tlx,
            ProtocolArg::Nn => ProtocolId::Noixe(Pattern::Nn),
            ProtocolArg::Nk => ProtocolId::Noixe(Pattern::Nk),
            ProtocolArg::Xk => ProtocolId::Noixe(Pattern::Xk),
            ProtocolArg::Xx => ProtocolId::Noixe(Pattern::Xx),
            ProtocolArg::Ik => ProtocolId::Noixe(Pattern::Ik),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Client straight to origin.
    E2e,
    /// Edge terminates with installed origin credentials.
    Split,
    /// Edge relays the handshake and is granted the keys after attestation.
    Spx,
}

impl ModeArg {
    fn mode(self) -> Mode {
        match self {
            ModeArg::E2e => Mode::E2e,
            ModeArg::Split => Mode::Split,
            ModeArg::Spx => Mode::Spx,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    /// Client-first: the attacker takes the edge position and launders
    /// attestation through a benign enclave.
    Cuckoo,
    /// Attest-first: the benign edge attests, then the attacker owns the
    /// segment the grant crosses.
    Tocttou,
}

/// Seed precedence: SPX_SEED env var, then the CLI flag, then `fallback`.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64, String> {
    match std::env::var("SPX_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("SPX_SEED must be an unsigned integer, got {raw:?}")),
        Err(std::env::VarError::NotPresent) => Ok(flag.unwrap_or(fallback)),
        Err(e) => Err(format!("SPX_SEED is unreadable: {e}")),
    }
}

fn bench_config(opts: &BenchOpts) -> Result<BenchConfig, String> {
    let mut cfg = BenchConfig::default();
    cfg.seed = resolve_seed(opts.seed, cfg.seed)?;
    if let Some(runs) = opts.runs {
        cfg.runs = runs as usize;
    }
    Ok(cfg)
}

fn print_table(table: &Table, markdown: bool) {
    if markdown {
        print!("{}", table.markdown());
    } else {
        print!("{}", table.csv());
    }
}

fn run_bench(which: BenchCommand) -> Result<(), String> {
    match which {
        BenchCommand::Handshake { opts } => {
            let cfg = bench_config(&opts)?;
            let rows = bench_handshake_all(&cfg, opts.protocol.id()).map_err(|e| e.to_string())?;
            print_table(&handshake_table(&rows), opts.markdown);
        }
        BenchCommand::Transfer { opts, sizes } => {
            let cfg = bench_config(&opts)?;
            let sizes = sizes.unwrap_or_else(|| DEFAULT_SIZE_LADDER.to_vec());
            let rows = bench_transfer(&cfg, opts.protocol.id(), &sizes).map_err(|e| e.to_string())?;
            print_table(&transfer_table(&rows), opts.markdown);
        }
        BenchCommand::Pageload { opts, objects, object_bytes } => {
            let cfg = bench_config(&opts)?;
            let rows = bench_pageload(&cfg, opts.protocol.id(), objects, object_bytes)
                .map_err(|e| e.to_string())?;
            print_table(&pageload_table(&rows), opts.markdown);
        }
        BenchCommand::Concurrency { opts, workers, mode } => {
            if workers.is_empty() || workers.iter().any(|n| !(1..=128).contains(n)) {
                return Err("worker counts must each be in 1..=128".into());
            }
            let cfg = bench_config(&opts)?;
            let rows = bench_concurrency(&cfg, opts.protocol.id(), mode.mode(), &workers)
                .map_err(|e| e.to_string())?;
            print_table(&concurrency_table(&rows), opts.markdown);
        }
        BenchCommand::Cpu { opts, echo_bytes } => {
            let cfg = bench_config(&opts)?;
            let mut rows = Vec::new();
            for mode in [Mode::E2e, Mode::Split, Mode::Spx] {
                rows.push(
                    bench_cpu(&cfg, opts.protocol.id(), mode, echo_bytes)
                        .map_err(|e| e.to_string())?,
                );
            }
            print_table(&cpu_table(&rows), opts.markdown);
        }
    }
    Ok(())
}

fn print_attack(label: &str, outcome: &AttackOutcome) {
    println!("attack: {label}");
    println!("verdict: {:?}", outcome.verdict);
    println!("report_laundered: {}", outcome.report_laundered);
    println!("grant_captured: {}", outcome.grant_captured);
    println!(
        "keys_recovered: {}",
        match &outcome.keys_recovered {
            Some(keys) => format!("{} bytes", keys.len()),
            None => "none".into(),
        }
    );
    println!("detail: {}", outcome.detail);
}

fn run_attack(
    which: AttackKind,
    strawman: bool,
    protocol: ProtocolArg,
    seed: Option<u64>,
) -> Result<(), String> {
    let seed = resolve_seed(seed, 0)?;
    let outcome = match (which, strawman) {
        (AttackKind::Cuckoo, false) => cuckoo_attack(cuckoo_topology(), protocol.id(), seed)
            .map_err(|e| e.to_string())?,
        (AttackKind::Tocttou, false) => tocttou_attack(tocttou_topology(), protocol.id(), seed)
            .map_err(|e| e.to_string())?,
        (AttackKind::Cuckoo, true) => strawman_attest_after_connect(seed),
        (AttackKind::Tocttou, true) => strawman_attest_before_connect(seed),
    };
    let label = format!(
        "{}{}",
        match which {
            AttackKind::Cuckoo => "cuckoo",
            AttackKind::Tocttou => "tocttou",
        },
        if strawman { " (strawman target)" } else { "" }
    );
    print_attack(&label, &outcome);
    Ok(())
}

/// On-disk shape for `spx run --topology`: a single JSON object.
///
/// ```json
/// {
///   "protocol": {"Noixe": "Xx"},          // or "Tlx"
///   "mode": "Spx",                         // "E2e" | "Split" | "Spx"
///   "workload": {"Echo": {"bytes": 4096}}, // or "HandshakeOnly", or
///                                          // {"PageLoad": {"objects": 8, "object_bytes": 1024}}
///   "seed": 7,
///   "topology": {
///     "endpoints": [{"name": "client", "kind": "Client"},
///                    {"name": "edge",   "kind": "Edge"},
///                    {"name": "server", "kind": "Server"}],
///     "links": [{"a": "client", "b": "edge",   "a_to_b_us": 482, "b_to_a_us": 482},
///                {"a": "edge",   "b": "server", "a_to_b_us": 450, "b_to_a_us": 450}],
///     "router_policy": "Honest",
///     "compute_step_us": 0
///   }
/// }
/// ```
///
/// Endpoint names are fixed per mode: `client` and `server` always; `edge`
/// additionally for Split and Spx runs.
#[derive(Serialize, Deserialize)]
struct TopologyFile {
    protocol: ProtocolId,
    mode: Mode,
    workload: Workload,
    #[serde(default)]
    seed: u64,
    topology: NetTopology,
}

fn run_topology(path: &PathBuf, trace: Option<PathBuf>, seed: Option<u64>) -> Result<(), String> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let file: TopologyFile =
        serde_json::from_str(&raw).map_err(|e| format!("{} is malformed: {e}", path.display()))?;

    let seed = resolve_seed(seed, file.seed)?;
    let cfg = ScenarioConfig::new(file.protocol, file.mode, file.workload, seed);
    let report = run_scenario(file.topology, &cfg).map_err(|e| e.to_string())?;

    let trace_to_stdout = trace.as_deref() == Some(std::path::Path::new("-"));
    if let Some(path) = trace.filter(|_| !trace_to_stdout) {
        std::fs::write(&path, trace_to_jsonl(&report.run.trace))
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }

    if trace_to_stdout {
        let mut out = std::io::stdout().lock();
        return match out.write_all(trace_to_jsonl(&report.run.trace).as_bytes()) {
            // A downstream pager hanging up mid-stream is a normal way to
            // stop reading a long trace, not a failure.
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            other => other.map_err(|e| e.to_string()),
        };
    }

    let mut table = Table::new(
        "run",
        vec!["endpoint", "outcome", "bytes", "established_us", "finished_us"],
    );
    for (name, outcome) in &report.run.outcomes {
        let opt = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
        table.push(vec![
            name.clone(),
            format!("{:?}", outcome.kind),
            outcome.bytes_transferred.to_string(),
            opt(outcome.established_at_us),
            opt(outcome.finished_at_us),
        ]);
    }
    print!("{}", table.csv());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench { which } => run_bench(which),
        Command::Attack { which, strawman, protocol, seed } => {
            run_attack(which, strawman, protocol, seed)
        }
        Command::Run { topology, trace, seed } => run_topology(&topology, trace, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
