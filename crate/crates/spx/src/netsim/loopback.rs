//! Wall-clock runner over real loopback TCP sockets.
//!
//! The virtual simulator owns all byte and round-trip accounting; this
//! runner exists to time real handshakes end to end. Link latency is
//! injected on the writer side: every flight sleeps one one-way delay before
//! hitting the socket, which models propagation exactly for the strictly
//! sequential handshakes measured here. The same node types drive both
//! runners, so the protocol logic under test is identical.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::engine::ProtocolId;
use crate::wire::{self, Flight};

use super::nodes::{ClientNode, EdgeNode, ServerNode, Workload};
use super::scenario::{
    build_client, build_edge, build_enclave, build_server, Fixtures, Mode, ScenarioConfig,
};
use super::{Ctx, SimNode};

/// Reference one-way delays (half the measured segment round trips).
pub const DEFAULT_CLIENT_EDGE_ONE_WAY: Duration = Duration::from_micros(482);
pub const DEFAULT_EDGE_SERVER_ONE_WAY: Duration = Duration::from_micros(450);

/// Hard cap on a framed flight, against corrupt length prefixes.
const MAX_FLIGHT_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct LoopbackConfig {
    pub protocol: ProtocolId,
    pub mode: Mode,
    pub workload: Workload,
    pub seed: u64,
    /// One-way delay of the client↔front segment.
    pub client_hop: Duration,
    /// One-way delay of the front↔origin segment.
    pub server_hop: Duration,
}

impl LoopbackConfig {
    pub fn new(protocol: ProtocolId, mode: Mode, workload: Workload, seed: u64) -> Self {
        LoopbackConfig {
            protocol,
            mode,
            workload,
            seed,
            client_hop: DEFAULT_CLIENT_EDGE_ONE_WAY,
            server_hop: DEFAULT_EDGE_SERVER_ONE_WAY,
        }
    }
}

/// Wall-clock timings of one connection, measured at the client.
#[derive(Debug, Clone, Copy)]
pub struct HandshakeSample {
    /// Connect to handshake completion.
    pub handshake: Duration,
    /// Connect to workload completion.
    pub total: Duration,
}

// ---------------------------------------------------------------------------
// Flight framing: u32 length prefix, then concatenated encoded frames.

fn write_flight(stream: &mut TcpStream, flight: &Flight) -> io::Result<()> {
    let mut body = Vec::new();
    for msg in flight {
        body.extend_from_slice(&wire::encode(msg));
    }
    stream.write_all(&(body.len() as u32).to_be_bytes())?;
    stream.write_all(&body)?;
    stream.flush()
}

/// Read one flight; `None` on orderly or abortive connection end.
fn read_flight(stream: &mut TcpStream) -> io::Result<Option<Flight>> {
    let mut len_buf = [0u8; 4];
    if let Err(e) = stream.read_exact(&mut len_buf) {
        return match e.kind() {
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted => Ok(None),
            _ => Err(e),
        };
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len == 0 || len > MAX_FLIGHT_BYTES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("bad flight length {len}"),
        ));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    let mut flight = Vec::new();
    let mut at = 0usize;
    while at < body.len() {
        let (msg, used) = wire::decode(&body[at..])
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        flight.push(msg);
        at += used;
    }
    Ok(Some(flight))
}

/// Write half of a link: sleeps one one-way delay per flight, then writes.
struct LinkWriter {
    stream: TcpStream,
    one_way: Duration,
}

impl LinkWriter {
    fn send(&mut self, flight: &Flight) -> io::Result<()> {
        if !self.one_way.is_zero() {
            thread::sleep(self.one_way);
        }
        write_flight(&mut self.stream, flight)
    }
}

fn fresh_ctx() -> Ctx {
    Ctx {
        now_us: 0,
        sends: Vec::new(),
    }
}

fn conn_rng(seed: u64, conn: u64, salt: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(
        seed.wrapping_add(conn.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(salt),
    )
}

fn scenario_cfg(cfg: &LoopbackConfig) -> ScenarioConfig {
    ScenarioConfig::new(cfg.protocol, cfg.mode, cfg.workload, cfg.seed)
}

/// What the client's writer sleeps per flight: the full path when there is
/// no box in the middle.
fn front_hop(cfg: &LoopbackConfig) -> Duration {
    match cfg.mode {
        Mode::E2e => cfg.client_hop + cfg.server_hop,
        Mode::Split | Mode::Spx => cfg.client_hop,
    }
}

// ---------------------------------------------------------------------------
// Per-connection drivers

fn run_client_conn(
    cfg: &LoopbackConfig,
    fx: &Fixtures,
    addr: SocketAddr,
    conn: u64,
) -> io::Result<HandshakeSample> {
    let scen = scenario_cfg(cfg);
    let mut rng = conn_rng(cfg.seed, conn, 0x11);
    let mut node = ClientNode::new(
        0,
        build_client(&scen, fx, &mut rng),
        cfg.workload,
        cfg.seed.wrapping_add(0x33),
    );
    let start = Instant::now();
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let mut writer = LinkWriter {
        stream: stream.try_clone()?,
        one_way: front_hop(cfg),
    };
    let mut read_half = stream;

    let mut ctx = fresh_ctx();
    node.on_start(&mut ctx);
    for (_, flight) in ctx.sends {
        writer.send(&flight)?;
    }
    let mut handshake = None;
    while !node.is_settled() {
        let Some(flight) = read_flight(&mut read_half)? else {
            break;
        };
        let mut ctx = fresh_ctx();
        node.on_flight(&mut ctx, 0, &flight);
        for (_, f) in ctx.sends {
            writer.send(&f)?;
        }
        if handshake.is_none() && node.established() {
            handshake = Some(start.elapsed());
        }
    }
    if !node.finished_ok() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "client connection did not finish cleanly",
        ));
    }
    let total = start.elapsed();
    read_half.shutdown(Shutdown::Both).ok();
    Ok(HandshakeSample {
        handshake: handshake.unwrap_or(total),
        total,
    })
}

/// Serve one terminated connection (the origin, or the split proxy).
fn serve_conn(mut node: ServerNode, stream: TcpStream, one_way: Duration) {
    if stream.set_nodelay(true).is_err() {
        return;
    }
    let Ok(write_half) = stream.try_clone() else {
        return;
    };
    let mut writer = LinkWriter {
        stream: write_half,
        one_way,
    };
    let mut read_half = stream;
    while let Ok(Some(flight)) = read_flight(&mut read_half) {
        let mut ctx = fresh_ctx();
        node.on_flight(&mut ctx, 0, &flight);
        for (_, f) in ctx.sends {
            if writer.send(&f).is_err() {
                return;
            }
        }
    }
}

/// One direction of the relay: read flights, run them through the shared
/// edge machine, dispatch its sends to whichever side they belong to.
fn edge_pump(
    mut read_half: TcpStream,
    from: usize,
    node: Arc<Mutex<EdgeNode>>,
    to_client: Arc<Mutex<LinkWriter>>,
    to_server: Arc<Mutex<LinkWriter>>,
    peer: TcpStream,
) {
    loop {
        let flight = match read_flight(&mut read_half) {
            Ok(Some(f)) => f,
            _ => break,
        };
        let mut ctx = fresh_ctx();
        node.lock().on_flight(&mut ctx, from, &flight);
        let mut write_failed = false;
        for (to, f) in ctx.sends {
            let result = if to == 0 {
                to_client.lock().send(&f)
            } else {
                to_server.lock().send(&f)
            };
            if result.is_err() {
                write_failed = true;
                break;
            }
        }
        if write_failed {
            break;
        }
    }
    // Unblock the opposite pump so the pair tears down together.
    read_half.shutdown(Shutdown::Both).ok();
    peer.shutdown(Shutdown::Both).ok();
}

/// Relay one accepted connection upstream through the edge machine.
fn relay_conn(
    node: EdgeNode,
    client_stream: TcpStream,
    upstream: SocketAddr,
    client_hop: Duration,
    server_hop: Duration,
) -> io::Result<()> {
    client_stream.set_nodelay(true)?;
    let server_stream = TcpStream::connect(upstream)?;
    server_stream.set_nodelay(true)?;

    let node = Arc::new(Mutex::new(node));
    let to_client = Arc::new(Mutex::new(LinkWriter {
        stream: client_stream.try_clone()?,
        one_way: client_hop,
    }));
    let to_server = Arc::new(Mutex::new(LinkWriter {
        stream: server_stream.try_clone()?,
        one_way: server_hop,
    }));

    let c2s = {
        let node = node.clone();
        let to_client = to_client.clone();
        let to_server = to_server.clone();
        let client_read = client_stream.try_clone()?;
        let server_peer = server_stream.try_clone()?;
        thread::spawn(move || edge_pump(client_read, 0, node, to_client, to_server, server_peer))
    };
    edge_pump(server_stream, 1, node, to_client, to_server, client_stream);
    c2s.join().ok();
    Ok(())
}

// ---------------------------------------------------------------------------
// Run orchestration

fn spawn_accept_loop(
    listener: TcpListener,
    total: usize,
    mut handler: impl FnMut(usize, TcpStream) + Send + 'static,
) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        for i in 0..total {
            match listener.accept() {
                Ok((stream, _)) => handler(i, stream),
                Err(_) => break,
            }
        }
    })
}

/// Run `total` connections, at most `concurrency` in flight at once, and
/// return the client-side timing of each. Every connection performs the
/// configured workload over real sockets with the configured write delays.
pub fn run_handshakes(
    cfg: &LoopbackConfig,
    total: usize,
    concurrency: usize,
) -> io::Result<Vec<HandshakeSample>> {
    assert!(total > 0 && concurrency > 0);
    let fx = Arc::new(Fixtures::from_seed(cfg.seed));
    let cfg = Arc::new(cfg.clone());
    let enclave = (cfg.mode == Mode::Spx).then(|| build_enclave(cfg.seed));

    // Origin listener (not present in split serving: nothing goes upstream).
    let origin_addr = match cfg.mode {
        Mode::Split => None,
        Mode::E2e | Mode::Spx => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let fx = fx.clone();
            let cfg = cfg.clone();
            let enclave = enclave.clone();
            let one_way = match cfg.mode {
                Mode::E2e => cfg.client_hop + cfg.server_hop,
                _ => cfg.server_hop,
            };
            spawn_accept_loop(listener, total, move |i, stream| {
                let scen = scenario_cfg(&cfg);
                let mut rng = conn_rng(cfg.seed, i as u64, 0x22);
                let node = ServerNode::new(
                    0,
                    build_server(&scen, &fx, enclave.as_deref(), &mut rng),
                    cfg.workload,
                    cfg.seed.wrapping_add(0x33),
                );
                thread::spawn(move || serve_conn(node, stream, one_way));
            });
            Some(addr)
        }
    };

    // Front listener: what the client dials.
    let front_addr = match cfg.mode {
        Mode::E2e => origin_addr.expect("origin exists in E2e"),
        Mode::Split => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let fx = fx.clone();
            let cfg = cfg.clone();
            spawn_accept_loop(listener, total, move |i, stream| {
                let scen = scenario_cfg(&cfg);
                let mut rng = conn_rng(cfg.seed, i as u64, 0x22);
                let node = ServerNode::new(
                    0,
                    build_server(&scen, &fx, None, &mut rng),
                    cfg.workload,
                    cfg.seed.wrapping_add(0x33),
                );
                let one_way = cfg.client_hop;
                thread::spawn(move || serve_conn(node, stream, one_way));
            });
            addr
        }
        Mode::Spx => {
            let upstream = origin_addr.expect("origin exists in relay mode");
            let enclave = enclave.clone().expect("relay mode builds an enclave");
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let fx = fx.clone();
            let cfg = cfg.clone();
            spawn_accept_loop(listener, total, move |_, stream| {
                let scen = scenario_cfg(&cfg);
                let node = EdgeNode::new(
                    0,
                    1,
                    build_edge(&scen, &fx, enclave.clone()),
                    enclave.clone(),
                );
                let (client_hop, server_hop) = (cfg.client_hop, cfg.server_hop);
                thread::spawn(move || {
                    relay_conn(node, stream, upstream, client_hop, server_hop).ok();
                });
            });
            addr
        }
    };

    let mut samples = Vec::with_capacity(total);
    let mut next_conn = 0u64;
    while samples.len() < total {
        let wave = concurrency.min(total - samples.len());
        let mut handles = Vec::with_capacity(wave);
        for _ in 0..wave {
            let conn = next_conn;
            next_conn += 1;
            let fx = fx.clone();
            let cfg = cfg.clone();
            handles.push(thread::spawn(move || {
                run_client_conn(&cfg, &fx, front_addr, conn)
            }));
        }
        for handle in handles {
            let sample = handle
                .join()
                .map_err(|_| io::Error::new(io::ErrorKind::Other, "client thread panicked"))??;
            samples.push(sample);
        }
    }
    Ok(samples)
}
