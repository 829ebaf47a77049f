//! Deployment scenarios: the same workload run end-to-end, through a
//! terminating split proxy, or through an attested edge.
//!
//! One seed fixes every key, nonce, and payload byte in a run, so two runs of
//! the same scenario produce identical traces.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::engine::{
    AttestPolicy, EdgeConfig, ProtocolAdapter, ProtocolId, SpxEdge, GRANT_PAD_DEFAULT,
};
use crate::noixe::{NoixeAdapter, NoixeClient, NoixeClientConfig, NoixeServer, NoixeServerConfig, Pattern};
use crate::see::{Enclave, MemoryCap};
use crate::tlx::{TlxAdapter, TlxClient, TlxServer, TlxServerConfig, DEFAULT_CERT_LEN};

pub use super::nodes::Workload;
use super::nodes::{AnyClient, AnyServer, ClientNode, EdgeNode, IdleNode, ServerNode};
use super::{
    NetTopology, Outcome, Sim, SimError, SimNode, SimRun, CLIENT_EDGE_ONE_WAY_US,
    EDGE_SERVER_ONE_WAY_US,
};

/// Edge-function description measured into the enclave.
pub const ENCLAVE_MANIFEST: &str = "edge-cache-fn-v1";

/// How the client reaches the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    /// Straight to the origin; the edge is not in the picture.
    E2e,
    /// The edge terminates the connection with origin credentials installed
    /// and serves locally; nothing goes upstream.
    Split,
    /// The edge relays the origin handshake and is granted session keys
    /// after attestation.
    Spx,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub protocol: ProtocolId,
    pub mode: Mode,
    pub workload: Workload,
    pub seed: u64,
    pub grant_pad: usize,
}

impl ScenarioConfig {
    pub fn new(protocol: ProtocolId, mode: Mode, workload: Workload, seed: u64) -> Self {
        ScenarioConfig {
            protocol,
            mode,
            workload,
            seed,
            grant_pad: GRANT_PAD_DEFAULT,
        }
    }
}

/// Key material shared by the parties before the run, all derived from the
/// scenario seed.
pub struct Fixtures {
    /// Origin signing identity: certificate key / prologue offer signer.
    pub server_identity: crate::crypto::SigningKeyPair,
    /// Origin Noise static; pre-shared or pinned depending on pattern.
    pub server_static: crate::crypto::KeyPair,
    /// Client Noise static for patterns that send one.
    pub client_static: crate::crypto::KeyPair,
}

impl Fixtures {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x46495854_55524553);
        Fixtures {
            server_identity: crate::crypto::SigningKeyPair::generate(&mut rng),
            server_static: crate::crypto::KeyPair::generate(&mut rng),
            client_static: crate::crypto::KeyPair::generate(&mut rng),
        }
    }
}

pub struct ScenarioReport {
    pub run: SimRun,
    /// The edge enclave, when one took part.
    pub enclave: Option<Arc<Enclave>>,
}

impl ScenarioReport {
    pub fn outcome(&self, name: &str) -> &Outcome {
        self.run
            .outcomes
            .get(name)
            .unwrap_or_else(|| panic!("no endpoint named {name:?}"))
    }

    pub fn client(&self) -> &Outcome {
        self.outcome("client")
    }

    /// Outcome of whichever endpoint terminated the client's handshake.
    pub fn terminator(&self) -> &Outcome {
        match self.run.outcomes.contains_key("server") {
            true if self.run.outcomes["server"].session_keys.is_empty()
                && self.run.outcomes.contains_key("edge") =>
            {
                self.outcome("edge")
            }
            true => self.outcome("server"),
            false => self.outcome("edge"),
        }
    }

    pub fn edge(&self) -> Option<&Outcome> {
        self.run.outcomes.get("edge")
    }
}

/// Topology a mode runs over by default: the measured two-segment path, or
/// its end-to-end sum when no edge box is present.
pub fn default_topology(mode: Mode) -> NetTopology {
    match mode {
        Mode::E2e => NetTopology::two_node(CLIENT_EDGE_ONE_WAY_US + EDGE_SERVER_ONE_WAY_US),
        Mode::Split | Mode::Spx => NetTopology::default_three_node(),
    }
}

pub fn build_client(cfg: &ScenarioConfig, fx: &Fixtures, rng: &mut ChaCha12Rng) -> AnyClient {
    match cfg.protocol {
        ProtocolId::Tlx => AnyClient::Tlx(TlxClient::new(rng, Some(fx.server_identity.public()))),
        ProtocolId::Noixe(pattern) => AnyClient::Noixe(
            NoixeClient::new(
                rng,
                NoixeClientConfig {
                    pattern,
                    static_kp: pattern
                        .initiator_sends_static()
                        .then(|| fx.client_static.clone()),
                    server_static: Some(fx.server_static.public()),
                },
            )
            .expect("client pattern config"),
        ),
    }
}

pub fn build_server(
    cfg: &ScenarioConfig,
    fx: &Fixtures,
    enclave: Option<&Enclave>,
    rng: &mut ChaCha12Rng,
) -> AnyServer {
    let attest = enclave.map(|e| AttestPolicy {
        expected_measurement: e.measurement(),
        platform_public: e.platform_public(),
        grant_pad: cfg.grant_pad,
    });
    match cfg.protocol {
        ProtocolId::Tlx => AnyServer::Tlx(TlxServer::new(
            rng,
            TlxServerConfig {
                identity: fx.server_identity.clone(),
                subject: "origin.example".into(),
                cert_len: DEFAULT_CERT_LEN,
                attest,
            },
        )),
        ProtocolId::Noixe(pattern) => AnyServer::Noixe(
            NoixeServer::new(
                rng,
                NoixeServerConfig {
                    pattern,
                    static_kp: (pattern != Pattern::Nn).then(|| fx.server_static.clone()),
                    identity: fx.server_identity.clone(),
                    attest,
                },
            )
            .expect("server pattern config"),
        ),
    }
}

pub fn build_edge(cfg: &ScenarioConfig, fx: &Fixtures, enclave: Arc<Enclave>) -> SpxEdge {
    let adapter: Box<dyn ProtocolAdapter> = match cfg.protocol {
        ProtocolId::Tlx => Box::new(TlxAdapter::new(fx.server_identity.public())),
        ProtocolId::Noixe(_) => Box::new(NoixeAdapter::new(
            Pattern::all().to_vec(),
            Some(fx.server_static.public()),
        )),
    };
    SpxEdge::new(
        adapter,
        enclave,
        EdgeConfig {
            server_identity: fx.server_identity.public(),
            client_id: "client".into(),
            server_id: "server".into(),
            grant_pad: cfg.grant_pad,
        },
    )
}

/// Build the enclave a scenario's edge runs in.
pub fn build_enclave(seed: u64) -> Arc<Enclave> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x454E434C_41564531);
    Arc::new(Enclave::new(ENCLAVE_MANIFEST, MemoryCap::Unbounded, &mut rng))
}

/// Run one scenario over `topology` and report the trace and all outcomes.
///
/// Endpoint order is fixed: `E2e` needs `[client, server]`, the other modes
/// need `[client, edge, server]`.
pub fn run_scenario(topology: NetTopology, cfg: &ScenarioConfig) -> Result<ScenarioReport, SimError> {
    let fx = Fixtures::from_seed(cfg.seed);
    let mut client_rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x11));
    let mut server_rng = ChaCha12Rng::seed_from_u64(cfg.seed.wrapping_add(0x22));
    let workload_seed = cfg.seed.wrapping_add(0x33);

    let expected_endpoints: usize = match cfg.mode {
        Mode::E2e => 2,
        Mode::Split | Mode::Spx => 3,
    };
    if topology.endpoints.len() != expected_endpoints {
        return Err(SimError::BadTopology(format!(
            "{:?} mode needs {} endpoints, topology has {}",
            cfg.mode,
            expected_endpoints,
            topology.endpoints.len()
        )));
    }

    match cfg.mode {
        Mode::E2e => {
            let client = ClientNode::new(
                1,
                build_client(cfg, &fx, &mut client_rng),
                cfg.workload,
                workload_seed,
            );
            let server = ServerNode::new(
                0,
                build_server(cfg, &fx, None, &mut server_rng),
                cfg.workload,
                workload_seed,
            );
            let nodes: Vec<Box<dyn SimNode>> = vec![Box::new(client), Box::new(server)];
            let run = Sim::new(topology, nodes)?.run()?;
            Ok(ScenarioReport { run, enclave: None })
        }
        Mode::Split => {
            // The proxy at the edge slot holds the origin's own credentials,
            // so the client's pin and pre-shared statics check out against it.
            let client = ClientNode::new(
                1,
                build_client(cfg, &fx, &mut client_rng),
                cfg.workload,
                workload_seed,
            );
            let proxy = ServerNode::new(
                0,
                build_server(cfg, &fx, None, &mut server_rng),
                cfg.workload,
                workload_seed,
            );
            let nodes: Vec<Box<dyn SimNode>> =
                vec![Box::new(client), Box::new(proxy), Box::new(IdleNode)];
            let run = Sim::new(topology, nodes)?.run()?;
            Ok(ScenarioReport { run, enclave: None })
        }
        Mode::Spx => {
            let enclave = build_enclave(cfg.seed);
            let client = ClientNode::new(
                1,
                build_client(cfg, &fx, &mut client_rng),
                cfg.workload,
                workload_seed,
            );
            let edge = EdgeNode::new(0, 2, build_edge(cfg, &fx, enclave.clone()), enclave.clone());
            let server = ServerNode::new(
                1,
                build_server(cfg, &fx, Some(&enclave), &mut server_rng),
                cfg.workload,
                workload_seed,
            );
            let nodes: Vec<Box<dyn SimNode>> =
                vec![Box::new(client), Box::new(edge), Box::new(server)];
            let run = Sim::new(topology, nodes)?.run()?;
            Ok(ScenarioReport {
                run,
                enclave: Some(enclave),
            })
        }
    }
}
