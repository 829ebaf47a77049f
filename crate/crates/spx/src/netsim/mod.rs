//! Deterministic in-process network simulation.
//!
//! A discrete-event simulator over virtual microseconds: endpoints are
//! cooperatively scheduled state machines, links are point-to-point with
//! fixed one-way latencies, and delivery is FIFO per link. Every delivered
//! frame produces exactly one [`TraceEvent`], and all byte/round-trip
//! accounting is derived from the trace, so identical (topology, seed,
//! workload) inputs give byte-identical traces.
//!
//! Submodules: [`nodes`] wraps the protocol endpoints as simulator nodes,
//! [`scenario`] wires standard three-party runs, [`attacks`] hosts the
//! adversarial routers and the naive strawman variants they defeat, and
//! [`loopback`] is the separate wall-clock TCP runner.

pub mod attacks;
pub mod loopback;
pub mod nodes;
pub mod scenario;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{self, Direction, Flight, WireMessage};

pub use scenario::{run_scenario, Mode, ScenarioConfig, ScenarioReport, Workload};

/// Upper bound on deliveries per run; exceeding it means two nodes are
/// ping-ponging forever.
const MAX_DELIVERIES: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown endpoint name {0:?}")]
    UnknownEndpoint(String),
    #[error("no link between {0:?} and {1:?}")]
    NoLink(String, String),
    #[error("delivery budget exhausted: endpoints are ping-ponging")]
    Livelock,
    #[error("topology unfit for the scenario: {0}")]
    BadTopology(String),
}

// ---------------------------------------------------------------------------
// Topology

/// What role an endpoint plays; used only to orient trace directions and to
/// sanity-check scenario wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndpointKind {
    Client,
    Edge,
    Attacker,
    Server,
}

impl EndpointKind {
    /// Position along the client→server axis, for orienting trace events.
    fn rank(self) -> u8 {
        match self {
            EndpointKind::Client => 0,
            EndpointKind::Edge => 1,
            EndpointKind::Attacker => 2,
            EndpointKind::Server => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Endpoint {
    pub name: String,
    pub kind: EndpointKind,
}

/// One duplex link with independent one-way latencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub a_to_b_us: u64,
    pub b_to_a_us: u64,
}

/// Which router sits on the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum RouterPolicy {
    /// Frames flow where the topology says.
    #[default]
    Honest,
    /// Edge terminates the secure channel with locally installed origin
    /// credentials and serves locally; no per-connection upstream handshake.
    SplitProxy,
    /// A malicious edge instance takes the client-facing position and
    /// outsources attestation to a benign enclave.
    CuckooAttacker,
    /// Attestation is checked against the benign edge, then the session is
    /// redirected through the attacker.
    TocttouAttacker,
    /// Honest run; the full trace is scanned for secret material afterwards.
    PassiveObserver,
}

/// Endpoints, pairwise one-way latencies, and the router on the path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetTopology {
    pub endpoints: Vec<Endpoint>,
    pub links: Vec<Link>,
    #[serde(default)]
    pub router_policy: RouterPolicy,
    /// Virtual cost of processing one delivered flight at a node.
    #[serde(default)]
    pub compute_step_us: u64,
}

/// Default one-way latencies, microseconds: half of the reference
/// client↔proxy RTT of 0.964 ms and proxy↔server RTT of 0.901 ms.
pub const CLIENT_EDGE_ONE_WAY_US: u64 = 482;
pub const EDGE_SERVER_ONE_WAY_US: u64 = 450;

impl NetTopology {
    /// client ↔ edge ↔ server line with symmetric one-way latencies.
    pub fn three_node(client_edge_us: u64, edge_server_us: u64) -> NetTopology {
        NetTopology {
            endpoints: vec![
                Endpoint { name: "client".into(), kind: EndpointKind::Client },
                Endpoint { name: "edge".into(), kind: EndpointKind::Edge },
                Endpoint { name: "server".into(), kind: EndpointKind::Server },
            ],
            links: vec![
                Link {
                    a: "client".into(),
                    b: "edge".into(),
                    a_to_b_us: client_edge_us,
                    b_to_a_us: client_edge_us,
                },
                Link {
                    a: "edge".into(),
                    b: "server".into(),
                    a_to_b_us: edge_server_us,
                    b_to_a_us: edge_server_us,
                },
            ],
            router_policy: RouterPolicy::Honest,
            compute_step_us: 0,
        }
    }

    /// The reference latencies.
    pub fn default_three_node() -> NetTopology {
        Self::three_node(CLIENT_EDGE_ONE_WAY_US, EDGE_SERVER_ONE_WAY_US)
    }

    /// client ↔ server direct line, for end-to-end baselines. The latency is
    /// the full path latency so timings stay comparable.
    pub fn two_node(one_way_us: u64) -> NetTopology {
        NetTopology {
            endpoints: vec![
                Endpoint { name: "client".into(), kind: EndpointKind::Client },
                Endpoint { name: "server".into(), kind: EndpointKind::Server },
            ],
            links: vec![Link {
                a: "client".into(),
                b: "server".into(),
                a_to_b_us: one_way_us,
                b_to_a_us: one_way_us,
            }],
            router_policy: RouterPolicy::Honest,
            compute_step_us: 0,
        }
    }

    pub fn index_of(&self, name: &str) -> Result<usize, SimError> {
        self.endpoints
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| SimError::UnknownEndpoint(name.to_string()))
    }

    fn validate(&self) -> Result<(), SimError> {
        for link in &self.links {
            self.index_of(&link.a)?;
            self.index_of(&link.b)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trace

/// One delivered frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time_us: u64,
    pub from: String,
    pub to: String,
    /// Orientation relative to the client→server axis.
    pub direction: Direction,
    /// Frames sharing a flight id traveled as one unit of transmission.
    pub flight_id: u64,
    pub msg: WireMessage,
    /// Encoded wire length of the frame.
    pub bytes: usize,
}

pub const TRACE_SCHEMA: &str = "spx-trace-v1";

/// Serialize a trace as JSON lines: a schema header object, then one object
/// per event.
pub fn trace_to_jsonl(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{{\"schema\":\"{TRACE_SCHEMA}\"}}\n"));
    for event in trace {
        out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

/// SPX overhead bytes on the link between `a` and `b`, both directions: the
/// payloads of SPX-internal frames plus the value bytes of SPX extension
/// TLVs riding inside handshake frames. Frame and TLV headers are transport
/// overhead and do not count.
pub fn spx_extra_bytes(trace: &[TraceEvent], a: &str, b: &str) -> usize {
    trace
        .iter()
        .filter(|e| on_link(e, a, b))
        .map(|e| {
            if e.msg.is_spx_internal() {
                e.msg.payload.len()
            } else {
                e.msg.spx_ext_value_bytes()
            }
        })
        .sum()
}

/// SPX overhead bytes across every link in the trace.
pub fn spx_extra_bytes_total(trace: &[TraceEvent]) -> usize {
    trace
        .iter()
        .map(|e| {
            if e.msg.is_spx_internal() {
                e.msg.payload.len()
            } else {
                e.msg.spx_ext_value_bytes()
            }
        })
        .sum()
}

/// Number of flights on the `a`↔`b` link that consist solely of SPX-internal
/// frames. These are the flights the protocol would not have sent at all
/// without the extensions — the extra-round-trip count of the overhead
/// tables.
pub fn spx_only_flights(trace: &[TraceEvent], a: &str, b: &str) -> usize {
    let mut flights: BTreeMap<u64, bool> = BTreeMap::new();
    for event in trace.iter().filter(|e| on_link(e, a, b)) {
        let all_internal = flights.entry(event.flight_id).or_insert(true);
        *all_internal &= event.msg.is_spx_internal();
    }
    flights.values().filter(|v| **v).count()
}

/// Total flights on the `a`↔`b` link, both directions.
pub fn flights_on_link(trace: &[TraceEvent], a: &str, b: &str) -> usize {
    trace
        .iter()
        .filter(|e| on_link(e, a, b))
        .map(|e| e.flight_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len()
}

/// True if any encoded frame in the trace contains `secret` as a contiguous
/// byte substring — the passive-observer check for key material on the wire.
pub fn trace_contains_secret(trace: &[TraceEvent], secret: &[u8]) -> bool {
    assert!(!secret.is_empty());
    trace.iter().any(|e| {
        wire::encode(&e.msg)
            .windows(secret.len())
            .any(|w| w == secret)
    })
}

fn on_link(event: &TraceEvent, a: &str, b: &str) -> bool {
    (event.from == a && event.to == b) || (event.from == b && event.to == a)
}

// ---------------------------------------------------------------------------
// Simulator core

/// Outbox handed to a node while it processes one delivery.
pub struct Ctx {
    now_us: u64,
    sends: Vec<(usize, Flight)>,
}

impl Ctx {
    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    /// Queue a flight to a neighbor; it departs when this processing step
    /// finishes and arrives one link latency later.
    pub fn send(&mut self, to: usize, flight: Flight) {
        if !flight.is_empty() {
            self.sends.push((to, flight));
        }
    }
}

/// A cooperatively scheduled endpoint.
pub trait SimNode {
    /// Called once at virtual time zero.
    fn on_start(&mut self, _ctx: &mut Ctx) {}
    /// One flight arrived from `from`.
    fn on_flight(&mut self, ctx: &mut Ctx, from: usize, flight: &Flight);
    /// True when this node expects nothing further.
    fn is_settled(&self) -> bool;
    /// Final report once the run ends.
    fn outcome(&self) -> Outcome;
}

/// Per-endpoint result of a run. Key fields are test instrumentation: this
/// simulator exists to make assertions about key agreement and transcripts,
/// so the machines under test expose their secrets to the harness.
#[derive(Debug, Clone, Serialize, Default)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// Payload bytes this endpoint echoed or verified, workload-dependent.
    pub bytes_transferred: usize,
    /// Transport keys as raw bytes, when established: (send, recv) or the
    /// single symmetric key.
    pub session_keys: Vec<[u8; 32]>,
    /// (tag, direction) of every non-internal frame this endpoint saw, in
    /// order. Populated by client nodes for transparency checks.
    pub observed: Vec<(wire::Tag, Direction)>,
    /// Edge only: phase walk of the extension engine.
    pub phases: Vec<String>,
    /// Session id under which keys were granted to the edge, if any.
    pub granted_session: Option<String>,
    /// Virtual time at which this endpoint's handshake completed.
    pub established_at_us: Option<u64>,
    /// Virtual time at which the client finished its workload.
    pub finished_at_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum OutcomeKind {
    /// Node never reached a terminal state before the queue drained.
    #[default]
    Deadlock,
    /// Handshake (and workload, if any) completed as expected.
    Success,
    /// Clean protocol abort.
    Aborted,
    /// Workload data failed verification.
    CorruptTransfer,
}

struct QueuedFlight {
    at_us: u64,
    seq: u64,
    from: usize,
    to: usize,
    flight_id: u64,
    flight: Flight,
}

impl PartialEq for QueuedFlight {
    fn eq(&self, other: &Self) -> bool {
        (self.at_us, self.seq) == (other.at_us, other.seq)
    }
}
impl Eq for QueuedFlight {}
impl PartialOrd for QueuedFlight {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedFlight {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_us, self.seq).cmp(&(other.at_us, other.seq))
    }
}

/// Discrete-event simulator over a topology and a set of nodes (one per
/// endpoint, same order).
pub struct Sim {
    topology: NetTopology,
    nodes: Vec<Box<dyn SimNode>>,
    latency: BTreeMap<(usize, usize), u64>,
    trace: Vec<TraceEvent>,
    queue: BinaryHeap<Reverse<QueuedFlight>>,
    busy_until: Vec<u64>,
    now_us: u64,
    seq: u64,
    flight_seq: u64,
    deliveries: u64,
    max_deliveries: u64,
}

/// Everything a finished run reports.
#[derive(Debug)]
pub struct SimRun {
    pub trace: Vec<TraceEvent>,
    pub outcomes: BTreeMap<String, Outcome>,
    /// Virtual timestamp of the last processing step.
    pub duration_us: u64,
    /// Count of delivered flights (= processing steps taken).
    pub flights_delivered: u64,
}

impl SimRun {
    /// True if any endpoint was left waiting when the queue drained.
    pub fn deadlocked(&self) -> bool {
        self.outcomes.values().any(|o| o.kind == OutcomeKind::Deadlock)
    }
}

impl Sim {
    pub fn new(topology: NetTopology, nodes: Vec<Box<dyn SimNode>>) -> Result<Self, SimError> {
        topology.validate()?;
        assert_eq!(
            topology.endpoints.len(),
            nodes.len(),
            "one node per endpoint, same order"
        );
        let mut latency = BTreeMap::new();
        for link in &topology.links {
            let a = topology.index_of(&link.a)?;
            let b = topology.index_of(&link.b)?;
            latency.insert((a, b), link.a_to_b_us);
            latency.insert((b, a), link.b_to_a_us);
        }
        let n = topology.endpoints.len();
        Ok(Sim {
            topology,
            nodes,
            latency,
            trace: Vec::new(),
            queue: BinaryHeap::new(),
            busy_until: vec![0; n],
            now_us: 0,
            seq: 0,
            flight_seq: 0,
            deliveries: 0,
            max_deliveries: MAX_DELIVERIES,
        })
    }

    /// Lower the delivery budget (livelock fuse).
    pub fn with_delivery_budget(mut self, budget: u64) -> Self {
        self.max_deliveries = budget;
        self
    }

    fn enqueue(&mut self, from: usize, to: usize, depart_us: u64, flight: Flight) -> Result<(), SimError> {
        let latency = *self.latency.get(&(from, to)).ok_or_else(|| {
            SimError::NoLink(
                self.topology.endpoints[from].name.clone(),
                self.topology.endpoints[to].name.clone(),
            )
        })?;
        self.seq += 1;
        self.flight_seq += 1;
        self.queue.push(Reverse(QueuedFlight {
            at_us: depart_us + latency,
            seq: self.seq,
            from,
            to,
            flight_id: self.flight_seq,
            flight,
        }));
        Ok(())
    }

    fn drain_ctx(&mut self, from: usize, ctx: Ctx, depart_us: u64) -> Result<(), SimError> {
        for (to, flight) in ctx.sends {
            self.enqueue(from, to, depart_us, flight)?;
        }
        Ok(())
    }

    /// Run to quiescence and report.
    pub fn run(mut self) -> Result<SimRun, SimError> {
        for i in 0..self.nodes.len() {
            let mut ctx = Ctx { now_us: 0, sends: Vec::new() };
            self.nodes[i].on_start(&mut ctx);
            self.drain_ctx(i, ctx, 0)?;
        }
        while let Some(Reverse(event)) = self.queue.pop() {
            self.deliveries += 1;
            if self.deliveries > self.max_deliveries {
                return Err(SimError::Livelock);
            }
            // A node handles one flight at a time; work queues behind
            // whatever it is already processing.
            let start = event.at_us.max(self.busy_until[event.to]);
            let finish = start + self.topology.compute_step_us;
            self.busy_until[event.to] = finish;
            self.now_us = finish;

            let direction = self.orient(event.from, event.to);
            for msg in &event.flight {
                self.trace.push(TraceEvent {
                    time_us: event.at_us,
                    from: self.topology.endpoints[event.from].name.clone(),
                    to: self.topology.endpoints[event.to].name.clone(),
                    direction,
                    flight_id: event.flight_id,
                    msg: msg.clone(),
                    bytes: msg.encoded_len(),
                });
            }
            let mut ctx = Ctx { now_us: finish, sends: Vec::new() };
            self.nodes[event.to].on_flight(&mut ctx, event.from, &event.flight);
            self.drain_ctx(event.to, ctx, finish)?;
        }
        let outcomes = self
            .topology
            .endpoints
            .iter()
            .zip(&self.nodes)
            .map(|(e, n)| (e.name.clone(), n.outcome()))
            .collect();
        Ok(SimRun {
            trace: self.trace,
            outcomes,
            duration_us: self.now_us,
            flights_delivered: self.deliveries,
        })
    }

    fn orient(&self, from: usize, to: usize) -> Direction {
        let from_rank = self.topology.endpoints[from].kind.rank();
        let to_rank = self.topology.endpoints[to].kind.rank();
        if from_rank <= to_rank {
            Direction::ClientToServer
        } else {
            Direction::ServerToClient
        }
    }
}
