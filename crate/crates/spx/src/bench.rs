//! Measurement harness.
//!
//! Two instruments, separated on purpose:
//!
//! * the **virtual network** ([`crate::netsim`]) gives deterministic timings,
//!   flight counts, and byte accounting — anything that must be exact and
//!   reproducible runs there;
//! * the **loopback runner** ([`crate::netsim::loopback`]) gives wall-clock
//!   numbers over real sockets and threads — anything claiming "time on this
//!   machine" runs there.
//!
//! Every benchmark renders to a [`Table`] whose CSV form starts with a
//! schema-versioned header line. Tables built purely from the virtual
//! network are byte-identical across repeat runs with the same seed.

use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::engine::ProtocolId;
use crate::netsim::loopback::{run_handshakes, LoopbackConfig};
use crate::netsim::nodes::{ClientNode, IdleNode, ServerNode, ServingEdgeNode};
use crate::netsim::scenario::{
    build_client, build_edge, build_enclave, build_server, default_topology,
};
use crate::netsim::{
    run_scenario, spx_extra_bytes_total, spx_only_flights, Ctx, Mode, Outcome, ScenarioConfig,
    Sim, SimNode, SimRun, Workload, CLIENT_EDGE_ONE_WAY_US, EDGE_SERVER_ONE_WAY_US,
};
use crate::netsim::scenario::Fixtures;
use crate::wire::{Flight, Tag};

/// Version stamp carried in the header line of every CSV table.
pub const BENCH_SCHEMA: &str = "spx-bench-v1";

/// Transfer size ladder: 1 KB on the low end up to a 1.6 MB file.
pub const DEFAULT_SIZE_LADDER: [usize; 6] = [
    1 << 10,
    16 << 10,
    64 << 10,
    256 << 10,
    1 << 20,
    1600 << 10,
];

// ---------------------------------------------------------------------------
// Small numerics and rendering helpers

/// Sample mean and standard deviation (n−1 denominator; 0 when n < 2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub stddev: f64,
}

pub fn stats(samples: &[f64]) -> Stats {
    assert!(!samples.is_empty(), "stats over an empty sample set");
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let stddev = if samples.len() < 2 {
        0.0
    } else {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    };
    Stats { mean, stddev }
}

pub fn protocol_label(protocol: ProtocolId) -> String {
    match protocol {
        ProtocolId::Tlx => "tlx".into(),
        ProtocolId::Noixe(pattern) => format!("noixe-{}", pattern.label().to_ascii_lowercase()),
    }
}

pub fn mode_label(mode: Mode) -> &'static str {
    match mode {
        Mode::E2e => "e2e",
        Mode::Split => "split",
        Mode::Spx => "spx",
    }
}

/// One result table, renderable as CSV (machine-readable, schema-stamped)
/// or as a markdown table (for reports).
#[derive(Debug, Clone)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, columns: Vec<&'static str>) -> Self {
        Table { name, columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row shape matches header");
        self.rows.push(row);
    }

    pub fn csv(&self) -> String {
        let mut out = format!("# schema={BENCH_SCHEMA} table={}\n", self.name);
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn markdown(&self) -> String {
        let mut out = format!("| {} |\n", self.columns.join(" | "));
        out.push_str(&format!("|{}\n", " --- |".repeat(self.columns.len())));
        for row in &self.rows {
            out.push_str(&format!("| {} |\n", row.join(" | ")));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Shared configuration

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub seed: u64,
    /// Sample count per measurement (wall-clock runs, or per-seed repeats
    /// for virtual measurements). Must be at least 2.
    pub runs: usize,
    /// Loopback one-way delay, client↔front segment.
    pub client_hop: Duration,
    /// Loopback one-way delay, front↔origin segment.
    pub server_hop: Duration,
    /// Loopback one-way delay used for concurrency scaling, deliberately
    /// large so time on the wire dominates compute and per-handshake time
    /// stays flat as workers multiply on a small CPU budget.
    pub concurrency_hop: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seed: 7,
            runs: 20,
            client_hop: Duration::from_micros(CLIENT_EDGE_ONE_WAY_US),
            server_hop: Duration::from_micros(EDGE_SERVER_ONE_WAY_US),
            concurrency_hop: Duration::from_millis(20),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::Other, e.to_string())
}

// ---------------------------------------------------------------------------
// Handshake timing and attestation overhead accounting

#[derive(Debug, Clone)]
pub struct HandshakeRow {
    pub protocol: ProtocolId,
    pub mode: Mode,
    pub runs: usize,
    /// Wall-clock connect→established over loopback sockets.
    pub wall_mean_us: f64,
    pub wall_stddev_us: f64,
    /// Deterministic connect→established time in the virtual network.
    pub virtual_us: u64,
    /// Handshake flights on the front↔origin segment that carry nothing but
    /// attestation traffic — the round trips attestation adds.
    pub extra_rtts: usize,
    /// Attestation bytes added across the whole connection: offer, report,
    /// and sealed grant.
    pub extra_bytes: usize,
}

pub fn bench_handshake(
    cfg: &BenchConfig,
    protocol: ProtocolId,
    mode: Mode,
) -> io::Result<HandshakeRow> {
    assert!(cfg.runs >= 2, "a spread needs at least two runs");
    let scfg = ScenarioConfig::new(protocol, mode, Workload::HandshakeOnly, cfg.seed);
    let report = run_scenario(default_topology(mode), &scfg).map_err(io_err)?;
    let virtual_us = report
        .client()
        .established_at_us
        .ok_or_else(|| io_err("handshake did not complete in the virtual network"))?;
    let extra_rtts = spx_only_flights(&report.run.trace, "edge", "server");
    let extra_bytes = spx_extra_bytes_total(&report.run.trace);

    let mut lb = LoopbackConfig::new(protocol, mode, Workload::HandshakeOnly, cfg.seed);
    lb.client_hop = cfg.client_hop;
    lb.server_hop = cfg.server_hop;
    let samples = run_handshakes(&lb, cfg.runs, 1)?;
    let wall = stats(
        &samples
            .iter()
            .map(|s| s.handshake.as_secs_f64() * 1e6)
            .collect::<Vec<_>>(),
    );

    Ok(HandshakeRow {
        protocol,
        mode,
        runs: cfg.runs,
        wall_mean_us: wall.mean,
        wall_stddev_us: wall.stddev,
        virtual_us,
        extra_rtts,
        extra_bytes,
    })
}

/// One row per serving mode.
pub fn bench_handshake_all(cfg: &BenchConfig, protocol: ProtocolId) -> io::Result<Vec<HandshakeRow>> {
    [Mode::E2e, Mode::Split, Mode::Spx]
        .into_iter()
        .map(|mode| bench_handshake(cfg, protocol, mode))
        .collect()
}

pub fn handshake_table(rows: &[HandshakeRow]) -> Table {
    let mut table = Table::new(
        "handshake",
        vec![
            "protocol",
            "mode",
            "runs",
            "wall_mean_us",
            "wall_stddev_us",
            "virtual_us",
            "extra_rtts",
            "extra_bytes",
        ],
    );
    for r in rows {
        table.push(vec![
            protocol_label(r.protocol),
            mode_label(r.mode).into(),
            r.runs.to_string(),
            format!("{:.1}", r.wall_mean_us),
            format!("{:.1}", r.wall_stddev_us),
            r.virtual_us.to_string(),
            r.extra_rtts.to_string(),
            r.extra_bytes.to_string(),
        ]);
    }
    table
}

// ---------------------------------------------------------------------------
// File transfer across a size ladder

#[derive(Debug, Clone)]
pub struct TransferRow {
    pub protocol: ProtocolId,
    pub mode: Mode,
    pub size: usize,
    pub runs: usize,
    /// Virtual connect→transfer-complete time, averaged across seeds.
    pub virtual_mean_us: f64,
    pub virtual_stddev_us: f64,
    /// Largest encrypted record payload seen on the wire.
    pub record_payload_max: usize,
    /// Every byte of every run arrived back intact.
    pub bit_exact: bool,
    /// Virtual-time ratio against split serving at the same size (reported
    /// on attested-relay rows).
    pub vs_split: Option<f64>,
}

pub fn bench_transfer(
    cfg: &BenchConfig,
    protocol: ProtocolId,
    sizes: &[usize],
) -> io::Result<Vec<TransferRow>> {
    assert!(!sizes.is_empty(), "transfer needs at least one size");
    let mut rows = Vec::new();
    for &mode in &[Mode::E2e, Mode::Split, Mode::Spx] {
        for &size in sizes {
            let mut times = Vec::with_capacity(cfg.runs);
            let mut record_payload_max = 0;
            let mut bit_exact = true;
            for run in 0..cfg.runs {
                let seed = cfg.seed.wrapping_add(run as u64);
                let scfg = ScenarioConfig::new(protocol, mode, Workload::Echo { bytes: size }, seed);
                let report = run_scenario(default_topology(mode), &scfg).map_err(io_err)?;
                let client = report.client();
                bit_exact &= client.kind == crate::netsim::OutcomeKind::Success
                    && client.bytes_transferred == size;
                let finished = client
                    .finished_at_us
                    .ok_or_else(|| io_err("transfer did not finish in the virtual network"))?;
                times.push(finished as f64);
                record_payload_max = record_payload_max.max(
                    report
                        .run
                        .trace
                        .iter()
                        .filter(|e| e.msg.tag == Tag::Record)
                        .map(|e| e.msg.payload.len())
                        .max()
                        .unwrap_or(0),
                );
            }
            let t = stats(&times);
            rows.push(TransferRow {
                protocol,
                mode,
                size,
                runs: cfg.runs,
                virtual_mean_us: t.mean,
                virtual_stddev_us: t.stddev,
                record_payload_max,
                bit_exact,
                vs_split: None,
            });
        }
    }
    // Attested relaying pays for the longer path; report it against split
    // serving at the same size.
    let split_means: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.mode == Mode::Split)
        .map(|r| (r.size, r.virtual_mean_us))
        .collect();
    for row in rows.iter_mut().filter(|r| r.mode == Mode::Spx) {
        let split = split_means
            .iter()
            .find(|(size, _)| *size == row.size)
            .map(|(_, mean)| *mean)
            .expect("split row exists for every size");
        row.vs_split = Some(row.virtual_mean_us / split);
    }
    Ok(rows)
}

pub fn transfer_table(rows: &[TransferRow]) -> Table {
    let mut table = Table::new(
        "transfer",
        vec![
            "protocol",
            "mode",
            "size_bytes",
            "runs",
            "virtual_mean_us",
            "virtual_stddev_us",
            "record_payload_max",
            "bit_exact",
            "vs_split_ratio",
        ],
    );
    for r in rows {
        table.push(vec![
            protocol_label(r.protocol),
            mode_label(r.mode).into(),
            r.size.to_string(),
            r.runs.to_string(),
            format!("{:.1}", r.virtual_mean_us),
            format!("{:.1}", r.virtual_stddev_us),
            r.record_payload_max.to_string(),
            r.bit_exact.to_string(),
            r.vs_split.map(|v| format!("{v:.3}")).unwrap_or_default(),
        ]);
    }
    table
}

// ---------------------------------------------------------------------------
// Synthetic page loads

#[derive(Debug, Clone)]
pub struct PageloadRow {
    pub protocol: ProtocolId,
    pub mode: Mode,
    pub objects: u64,
    pub object_bytes: usize,
    pub runs: usize,
    pub virtual_mean_us: f64,
    pub virtual_stddev_us: f64,
    /// Every object of every run arrived intact.
    pub ok: bool,
}

pub fn bench_pageload(
    cfg: &BenchConfig,
    protocol: ProtocolId,
    objects: u64,
    object_bytes: usize,
) -> io::Result<Vec<PageloadRow>> {
    let mut rows = Vec::new();
    for &mode in &[Mode::E2e, Mode::Split, Mode::Spx] {
        let mut times = Vec::with_capacity(cfg.runs);
        let mut ok = true;
        for run in 0..cfg.runs {
            let seed = cfg.seed.wrapping_add(run as u64);
            let workload = Workload::PageLoad { objects, object_bytes };
            let scfg = ScenarioConfig::new(protocol, mode, workload, seed);
            let report = run_scenario(default_topology(mode), &scfg).map_err(io_err)?;
            let client = report.client();
            ok &= client.kind == crate::netsim::OutcomeKind::Success
                && client.bytes_transferred == objects as usize * object_bytes;
            let finished = client
                .finished_at_us
                .ok_or_else(|| io_err("page load did not finish in the virtual network"))?;
            times.push(finished as f64);
        }
        let t = stats(&times);
        rows.push(PageloadRow {
            protocol,
            mode,
            objects,
            object_bytes,
            runs: cfg.runs,
            virtual_mean_us: t.mean,
            virtual_stddev_us: t.stddev,
            ok,
        });
    }
    Ok(rows)
}

pub fn pageload_table(rows: &[PageloadRow]) -> Table {
    let mut table = Table::new(
        "pageload",
        vec![
            "protocol",
            "mode",
            "objects",
            "object_bytes",
            "runs",
            "virtual_mean_us",
            "virtual_stddev_us",
            "ok",
        ],
    );
    for r in rows {
        table.push(vec![
            protocol_label(r.protocol),
            mode_label(r.mode).into(),
            r.objects.to_string(),
            r.object_bytes.to_string(),
            r.runs.to_string(),
            format!("{:.1}", r.virtual_mean_us),
            format!("{:.1}", r.virtual_stddev_us),
            r.ok.to_string(),
        ]);
    }
    table
}

// ---------------------------------------------------------------------------
// Concurrency scaling

#[derive(Debug, Clone)]
pub struct ConcurrencyRow {
    pub n: usize,
    pub mean_us: f64,
    pub stddev_us: f64,
}

/// Run `n` concurrent loopback handshakes for each entry of `ns` and report
/// per-handshake wall time. Uses the deliberately slow `concurrency_hop` so
/// the wire, not the CPU, sets the pace.
pub fn bench_concurrency(
    cfg: &BenchConfig,
    protocol: ProtocolId,
    mode: Mode,
    ns: &[usize],
) -> io::Result<Vec<ConcurrencyRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        assert!((1..=128).contains(&n), "worker counts range over 1..=128");
        let mut lb = LoopbackConfig::new(protocol, mode, Workload::HandshakeOnly, cfg.seed);
        lb.client_hop = cfg.concurrency_hop;
        lb.server_hop = cfg.concurrency_hop;
        let samples = run_handshakes(&lb, n, n)?;
        let t = stats(
            &samples
                .iter()
                .map(|s| s.handshake.as_secs_f64() * 1e6)
                .collect::<Vec<_>>(),
        );
        rows.push(ConcurrencyRow { n, mean_us: t.mean, stddev_us: t.stddev });
    }
    Ok(rows)
}

/// Largest relative gap between per-handshake means: (max − min) / min.
pub fn max_relative_spread(rows: &[ConcurrencyRow]) -> f64 {
    let min = rows.iter().map(|r| r.mean_us).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(|r| r.mean_us).fold(0.0, f64::max);
    (max - min) / min
}

pub fn concurrency_table(rows: &[ConcurrencyRow]) -> Table {
    let mut table = Table::new(
        "concurrency",
        vec!["n", "handshake_mean_us", "handshake_stddev_us"],
    );
    for r in rows {
        table.push(vec![
            r.n.to_string(),
            format!("{:.1}", r.mean_us),
            format!("{:.1}", r.stddev_us),
        ]);
    }
    table
}

// ---------------------------------------------------------------------------
// Proxy CPU cost

/// Thread CPU clock, for costing a node's compute inside the single-threaded
/// virtual network: the delta across a callback is exactly that callback's
/// CPU time.
pub fn thread_cpu_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "thread CPU clock is always readable");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

/// Decorator that charges a node's callback CPU time to a shared counter.
pub struct CpuMeteredNode<N> {
    inner: N,
    cpu_ns: Arc<AtomicU64>,
}

impl<N: SimNode> CpuMeteredNode<N> {
    pub fn new(inner: N) -> (Self, Arc<AtomicU64>) {
        let cpu_ns = Arc::new(AtomicU64::new(0));
        (CpuMeteredNode { inner, cpu_ns: cpu_ns.clone() }, cpu_ns)
    }
}

impl<N: SimNode> SimNode for CpuMeteredNode<N> {
    fn on_start(&mut self, ctx: &mut Ctx) {
        let t0 = thread_cpu_ns();
        self.inner.on_start(ctx);
        self.cpu_ns.fetch_add(thread_cpu_ns() - t0, Ordering::Relaxed);
    }

    fn on_flight(&mut self, ctx: &mut Ctx, from: usize, flight: &Flight) {
        let t0 = thread_cpu_ns();
        self.inner.on_flight(ctx, from, flight);
        self.cpu_ns.fetch_add(thread_cpu_ns() - t0, Ordering::Relaxed);
    }

    fn is_settled(&self) -> bool {
        self.inner.is_settled()
    }

    fn outcome(&self) -> Outcome {
        self.inner.outcome()
    }
}

#[derive(Debug, Clone)]
pub struct CpuRow {
    pub protocol: ProtocolId,
    pub mode: Mode,
    pub echo_bytes: usize,
    /// CPU charged to the proxy node across the whole connection. Zero in
    /// end-to-end mode, which has no proxy.
    pub proxy_cpu_ns: u64,
    pub ok: bool,
}

/// Measure the proxy's CPU cost for one echo connection.
///
/// Both proxies do the same serving work so the comparison isolates the
/// session-establishment machinery: the split proxy terminates the handshake
/// itself, while the attested edge relays the handshake, gets the session
/// keys granted, and then serves with them.
pub fn bench_cpu(
    cfg: &BenchConfig,
    protocol: ProtocolId,
    mode: Mode,
    echo_bytes: usize,
) -> io::Result<CpuRow> {
    let (run, proxy_cpu_ns) = cpu_run(cfg.seed, protocol, mode, echo_bytes)?;
    let client = &run.outcomes["client"];
    let ok = client.kind == crate::netsim::OutcomeKind::Success
        && client.bytes_transferred == echo_bytes;
    Ok(CpuRow { protocol, mode, echo_bytes, proxy_cpu_ns, ok })
}

fn cpu_run(
    seed: u64,
    protocol: ProtocolId,
    mode: Mode,
    echo_bytes: usize,
) -> io::Result<(SimRun, u64)> {
    let workload = Workload::Echo { bytes: echo_bytes };
    let scfg = ScenarioConfig::new(protocol, mode, workload, seed);
    if mode == Mode::E2e {
        let report = run_scenario(default_topology(mode), &scfg).map_err(io_err)?;
        return Ok((report.run, 0));
    }
    let fx = Fixtures::from_seed(seed);
    let mut client_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x11));
    let mut server_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x22));
    let workload_seed = seed.wrapping_add(0x33);
    let client = ClientNode::new(
        1,
        build_client(&scfg, &fx, &mut client_rng),
        workload,
        workload_seed,
    );
    let (nodes, cpu_ns): (Vec<Box<dyn SimNode>>, Arc<AtomicU64>) = match mode {
        Mode::Split => {
            let proxy = ServerNode::new(
                0,
                build_server(&scfg, &fx, None, &mut server_rng),
                workload,
                workload_seed,
            );
            let (metered, cpu_ns) = CpuMeteredNode::new(proxy);
            (
                vec![Box::new(client), Box::new(metered), Box::new(IdleNode)],
                cpu_ns,
            )
        }
        Mode::Spx => {
            let enclave = build_enclave(seed);
            let origin = ServerNode::new(
                1,
                build_server(&scfg, &fx, Some(&enclave), &mut server_rng),
                workload,
                workload_seed,
            );
            let edge = ServingEdgeNode::new(
                0,
                2,
                build_edge(&scfg, &fx, enclave.clone()),
                enclave,
                workload,
                workload_seed,
            );
            let (metered, cpu_ns) = CpuMeteredNode::new(edge);
            (
                vec![Box::new(client), Box::new(metered), Box::new(origin)],
                cpu_ns,
            )
        }
        Mode::E2e => unreachable!("handled above"),
    };
    let run = Sim::new(default_topology(mode), nodes)
        .map_err(io_err)?
        .run()
        .map_err(io_err)?;
    Ok((run, cpu_ns.load(Ordering::Relaxed)))
}

pub fn cpu_table(rows: &[CpuRow]) -> Table {
    let mut table = Table::new(
        "cpu",
        vec!["protocol", "mode", "echo_bytes", "proxy_cpu_ns", "ok"],
    );
    for r in rows {
        table.push(vec![
            protocol_label(r.protocol),
            mode_label(r.mode).into(),
            r.echo_bytes.to_string(),
            r.proxy_cpu_ns.to_string(),
            r.ok.to_string(),
        ]);
    }
    table
}
