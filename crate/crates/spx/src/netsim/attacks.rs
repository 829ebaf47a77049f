//! Adversarial runs: the two attacks the key-binding design exists to stop,
//! and the naive protocol variants that fall to them (negative controls).
//!
//! Both attacks turn on the same question: can a relay that is *not* the
//! attested enclave end up holding the session keys? The attacker here is
//! given every advantage short of breaking crypto — it sits on the path,
//! reads every byte, launders genuine attestation reports, and captures the
//! grant frame. A run counts as [`AttackVerdict::AttackSucceeded`] only if
//! the attacker actually recovers session-key material.

use std::sync::Arc;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::crypto::{
    aead_open, aead_seal, counter_nonce, dh, hkdf, KeyPair, SymmetricKey,
};
use crate::engine::{open_grant, EdgeAction, ProtocolId, SpxEdge, SpxOffer};
use crate::see::{verify_report, Enclave, MemoryCap, Verdict};
use crate::wire::{Direction, Flight, Tag, EXT_SPX_OFFER};

use super::nodes::{ClientNode, ServerNode, Workload};
use super::scenario::{
    build_client, build_edge, build_enclave, build_server, Fixtures, ScenarioConfig,
    ENCLAVE_MANIFEST,
};
use super::{
    trace_contains_secret, Ctx, Endpoint, EndpointKind, Link, NetTopology, Outcome, OutcomeKind,
    RouterPolicy, Sim, SimError, SimNode, SimRun, CLIENT_EDGE_ONE_WAY_US, EDGE_SERVER_ONE_WAY_US,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum AttackVerdict {
    /// The attacker never obtained session-key material.
    AttackDefeated,
    /// The attacker recovered the protected keys.
    AttackSucceeded,
}

#[derive(Debug)]
pub struct AttackOutcome {
    pub verdict: AttackVerdict,
    /// The attacker saw (and could replay) a genuine attestation report.
    pub report_laundered: bool,
    /// The attacker holds a copy of the grant frame.
    pub grant_captured: bool,
    /// Key material the attacker managed to decrypt, if any.
    pub keys_recovered: Option<Vec<u8>>,
    pub detail: String,
    /// Full simulation record, for the attacks that run one.
    pub run: Option<SimRun>,
}

/// Everything the attacker accumulates during a run. Shared out of the
/// simulation through an `Arc` so the verdict is computed afterwards.
#[derive(Default)]
struct AttackerLog {
    offer: Option<SpxOffer>,
    grant_payload: Option<Vec<u8>>,
    report_laundered: bool,
}

// ---------------------------------------------------------------------------
// Topologies

/// client ↔ attacker ↔ server: the attacker holds the client-facing edge
/// position.
pub fn cuckoo_topology() -> NetTopology {
    NetTopology {
        endpoints: vec![
            Endpoint { name: "client".into(), kind: EndpointKind::Client },
            Endpoint { name: "attacker".into(), kind: EndpointKind::Attacker },
            Endpoint { name: "server".into(), kind: EndpointKind::Server },
        ],
        links: vec![
            Link {
                a: "client".into(),
                b: "attacker".into(),
                a_to_b_us: CLIENT_EDGE_ONE_WAY_US,
                b_to_a_us: CLIENT_EDGE_ONE_WAY_US,
            },
            Link {
                a: "attacker".into(),
                b: "server".into(),
                a_to_b_us: EDGE_SERVER_ONE_WAY_US,
                b_to_a_us: EDGE_SERVER_ONE_WAY_US,
            },
        ],
        router_policy: RouterPolicy::CuckooAttacker,
        compute_step_us: 0,
    }
}

/// client ↔ edge ↔ attacker ↔ server: the benign edge attests, and the
/// attacker owns the upstream segment the grant must cross.
pub fn tocttou_topology() -> NetTopology {
    NetTopology {
        endpoints: vec![
            Endpoint { name: "client".into(), kind: EndpointKind::Client },
            Endpoint { name: "edge".into(), kind: EndpointKind::Edge },
            Endpoint { name: "attacker".into(), kind: EndpointKind::Attacker },
            Endpoint { name: "server".into(), kind: EndpointKind::Server },
        ],
        links: vec![
            Link {
                a: "client".into(),
                b: "edge".into(),
                a_to_b_us: CLIENT_EDGE_ONE_WAY_US,
                b_to_a_us: CLIENT_EDGE_ONE_WAY_US,
            },
            Link {
                a: "edge".into(),
                b: "attacker".into(),
                a_to_b_us: EDGE_SERVER_ONE_WAY_US / 2,
                b_to_a_us: EDGE_SERVER_ONE_WAY_US / 2,
            },
            Link {
                a: "attacker".into(),
                b: "server".into(),
                a_to_b_us: EDGE_SERVER_ONE_WAY_US / 2,
                b_to_a_us: EDGE_SERVER_ONE_WAY_US / 2,
            },
        ],
        router_policy: RouterPolicy::TocttouAttacker,
        compute_step_us: 0,
    }
}

// ---------------------------------------------------------------------------
// Attacker nodes

/// Malicious relay in the edge position. It cannot attest (no enclave of its
/// own), so it pipes the whole connection through a benign edge instance it
/// reaches in-process — the genuine report that instance produces is relayed
/// upstream as the attacker's own. Along the way it wiretaps the offer and
/// the grant.
struct CuckooAttackerNode {
    client_side: usize,
    server_side: usize,
    benign_edge: SpxEdge,
    log: Arc<Mutex<AttackerLog>>,
}

impl SimNode for CuckooAttackerNode {
    fn on_flight(&mut self, ctx: &mut Ctx, from: usize, flight: &Flight) {
        let dir = if from == self.client_side {
            Direction::ClientToServer
        } else {
            Direction::ServerToClient
        };
        let mut to_client: Flight = Vec::new();
        let mut to_server: Flight = Vec::new();
        let mut reports: Vec<Flight> = Vec::new();
        for msg in flight {
            {
                let mut log = self.log.lock();
                if msg.tag.has_ext_zone() {
                    if let Some(value) = msg.find_ext(EXT_SPX_OFFER) {
                        log.offer = SpxOffer::decode(&value);
                    }
                }
                if msg.is_spx_internal() && msg.tag == Tag::SpxGrant {
                    log.grant_payload = Some(msg.payload.clone());
                }
            }
            match self.benign_edge.on_frame(dir, msg) {
                Ok(actions) => {
                    for action in actions {
                        match action {
                            EdgeAction::Relay(d, m) => match d {
                                Direction::ClientToServer => to_server.push(m),
                                Direction::ServerToClient => to_client.push(m),
                            },
                            EdgeAction::SendReport(m) => {
                                self.log.lock().report_laundered = true;
                                reports.push(vec![m]);
                            }
                        }
                    }
                }
                // If the benign instance bails, fall back to relaying
                // verbatim so the end-to-end run still completes.
                Err(_) => match dir {
                    Direction::ClientToServer => to_server.push(msg.clone()),
                    Direction::ServerToClient => to_client.push(msg.clone()),
                },
            }
        }
        if !to_server.is_empty() {
            ctx.send(self.server_side, to_server);
        }
        if !to_client.is_empty() {
            ctx.send(self.client_side, to_client);
        }
        for report in reports {
            ctx.send(self.server_side, report);
        }
    }

    fn is_settled(&self) -> bool {
        true
    }

    fn outcome(&self) -> Outcome {
        Outcome {
            kind: OutcomeKind::Success,
            phases: self
                .benign_edge
                .phase_history()
                .iter()
                .map(|p| format!("{p:?}"))
                .collect(),
            ..Outcome::default()
        }
    }
}

/// Wiretapping relay on the upstream segment. Everything is forwarded so the
/// honest run completes; the offer and the grant crossing the wire are
/// copied for the post-run decryption attempt.
struct TocttouAttackerNode {
    edge_side: usize,
    server_side: usize,
    log: Arc<Mutex<AttackerLog>>,
}

impl SimNode for TocttouAttackerNode {
    fn on_flight(&mut self, ctx: &mut Ctx, from: usize, flight: &Flight) {
        let (dir, onward) = if from == self.edge_side {
            (Direction::ClientToServer, self.server_side)
        } else {
            (Direction::ServerToClient, self.edge_side)
        };
        let _ = dir;
        let mut log = self.log.lock();
        for msg in flight {
            if msg.tag.has_ext_zone() {
                if let Some(value) = msg.find_ext(EXT_SPX_OFFER) {
                    log.offer = SpxOffer::decode(&value);
                }
            }
            if msg.is_spx_internal() {
                match msg.tag {
                    Tag::SpxGrant => log.grant_payload = Some(msg.payload.clone()),
                    Tag::SpxReport => log.report_laundered = true,
                    _ => {}
                }
            }
        }
        drop(log);
        ctx.send(onward, flight.clone());
    }

    fn is_settled(&self) -> bool {
        true
    }

    fn outcome(&self) -> Outcome {
        Outcome {
            kind: OutcomeKind::Success,
            ..Outcome::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Verdicts

/// With everything the attacker collected, try to recover the granted keys:
/// decrypt the captured grant with a key pair the attacker controls. The
/// fallback check scans the whole wire trace for the true session keys.
fn attacker_verdict(
    log: &AttackerLog,
    protocol: ProtocolId,
    attacker_kp: &KeyPair,
    true_keys: &[[u8; 32]],
    run: &SimRun,
) -> (AttackVerdict, Option<Vec<u8>>, String) {
    let mut detail = Vec::new();
    let mut recovered = None;
    match (&log.offer, &log.grant_payload) {
        (Some(offer), Some(grant)) => {
            match open_grant(
                attacker_kp,
                &offer.server_eph,
                &offer.nonce,
                protocol,
                grant,
            ) {
                Ok(material) => {
                    detail.push("grant opened with attacker key".to_string());
                    recovered = Some(material);
                }
                Err(e) => detail.push(format!(
                    "grant captured but undecryptable on the attacker's channel ({e})"
                )),
            }
        }
        (_, None) => detail.push("no grant ever crossed the attacker".to_string()),
        (None, _) => detail.push("no offer observed".to_string()),
    }

    let mut succeeded = match &recovered {
        Some(material) => true_keys.iter().any(|k| {
            material
                .windows(k.len())
                .any(|w| w == k)
        }),
        None => false,
    };
    for key in true_keys {
        if trace_contains_secret(&run.trace, key) {
            detail.push("session key appeared in cleartext on the wire".to_string());
            succeeded = true;
        }
    }
    let verdict = if succeeded {
        AttackVerdict::AttackSucceeded
    } else {
        AttackVerdict::AttackDefeated
    };
    (verdict, recovered, detail.join("; "))
}

fn true_session_keys(run: &SimRun) -> Vec<[u8; 32]> {
    run.outcomes
        .get("client")
        .map(|o| o.session_keys.clone())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Attack runners

/// Mount the client-first attack: the attacker takes the edge position and
/// launders attestation through a benign enclave it can reach but not open.
pub fn cuckoo_attack(
    topology: NetTopology,
    protocol: ProtocolId,
    seed: u64,
) -> Result<AttackOutcome, SimError> {
    if topology.router_policy != RouterPolicy::CuckooAttacker {
        return Err(SimError::BadTopology(
            "cuckoo run needs RouterPolicy::CuckooAttacker".into(),
        ));
    }
    if topology.endpoints.len() != 3 {
        return Err(SimError::BadTopology(
            "cuckoo run needs [client, attacker, server]".into(),
        ));
    }
    let cfg = ScenarioConfig::new(
        protocol,
        super::scenario::Mode::Spx,
        Workload::Echo { bytes: 1024 },
        seed,
    );
    let fx = Fixtures::from_seed(seed);
    let enclave = build_enclave(seed);
    let mut client_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x11));
    let mut server_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x22));
    let mut attacker_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0xAAAA));
    let workload_seed = seed.wrapping_add(0x33);

    let log = Arc::new(Mutex::new(AttackerLog::default()));
    let client = ClientNode::new(
        1,
        build_client(&cfg, &fx, &mut client_rng),
        cfg.workload,
        workload_seed,
    );
    let attacker = CuckooAttackerNode {
        client_side: 0,
        server_side: 2,
        benign_edge: build_edge(&cfg, &fx, enclave.clone()),
        log: log.clone(),
    };
    let server = ServerNode::new(
        1,
        build_server(&cfg, &fx, Some(&enclave), &mut server_rng),
        cfg.workload,
        workload_seed,
    );
    let nodes: Vec<Box<dyn SimNode>> = vec![Box::new(client), Box::new(attacker), Box::new(server)];
    let run = Sim::new(topology, nodes)?.run()?;

    let attacker_kp = KeyPair::generate(&mut attacker_rng);
    let true_keys = true_session_keys(&run);
    let log = log.lock();
    let (verdict, keys_recovered, detail) =
        attacker_verdict(&log, protocol, &attacker_kp, &true_keys, &run);
    Ok(AttackOutcome {
        verdict,
        report_laundered: log.report_laundered,
        grant_captured: log.grant_payload.is_some(),
        keys_recovered,
        detail,
        run: Some(run),
    })
}

/// Mount the attest-first attack: the benign edge attests honestly, and the
/// attacker controls the segment the grant crosses afterwards.
pub fn tocttou_attack(
    topology: NetTopology,
    protocol: ProtocolId,
    seed: u64,
) -> Result<AttackOutcome, SimError> {
    if topology.router_policy != RouterPolicy::TocttouAttacker {
        return Err(SimError::BadTopology(
            "tocttou run needs RouterPolicy::TocttouAttacker".into(),
        ));
    }
    if topology.endpoints.len() != 4 {
        return Err(SimError::BadTopology(
            "tocttou run needs [client, edge, attacker, server]".into(),
        ));
    }
    let cfg = ScenarioConfig::new(
        protocol,
        super::scenario::Mode::Spx,
        Workload::Echo { bytes: 1024 },
        seed,
    );
    let fx = Fixtures::from_seed(seed);
    let enclave = build_enclave(seed);
    let mut client_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x11));
    let mut server_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0x22));
    let mut attacker_rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(0xAAAA));
    let workload_seed = seed.wrapping_add(0x33);

    let log = Arc::new(Mutex::new(AttackerLog::default()));
    let client = ClientNode::new(
        1,
        build_client(&cfg, &fx, &mut client_rng),
        cfg.workload,
        workload_seed,
    );
    let edge = super::nodes::EdgeNode::new(
        0,
        2,
        build_edge(&cfg, &fx, enclave.clone()),
        enclave.clone(),
    );
    let attacker = TocttouAttackerNode {
        edge_side: 1,
        server_side: 3,
        log: log.clone(),
    };
    let server = ServerNode::new(
        2,
        build_server(&cfg, &fx, Some(&enclave), &mut server_rng),
        cfg.workload,
        workload_seed,
    );
    let nodes: Vec<Box<dyn SimNode>> = vec![
        Box::new(client),
        Box::new(edge),
        Box::new(attacker),
        Box::new(server),
    ];
    let run = Sim::new(topology, nodes)?.run()?;

    let attacker_kp = KeyPair::generate(&mut attacker_rng);
    let true_keys = true_session_keys(&run);
    let log = log.lock();
    let (verdict, keys_recovered, detail) =
        attacker_verdict(&log, protocol, &attacker_kp, &true_keys, &run);
    Ok(AttackOutcome {
        verdict,
        report_laundered: log.report_laundered,
        grant_captured: log.grant_payload.is_some(),
        keys_recovered,
        detail,
        run: Some(run),
    })
}

// ---------------------------------------------------------------------------
// Strawman variants (negative controls)

const STRAWMAN_CHANNEL_CONTEXT: &[u8] = b"naive-channel-v0";

/// Unauthenticated DH channel — what the naive designs run over. Returns the
/// two ends' symmetric keys (always equal; kept separate to mirror the two
/// parties computing independently).
fn naive_channel(a: &KeyPair, b_public: &crate::crypto::PublicKey) -> SymmetricKey {
    let shared = dh(a, b_public).expect("generated keys are valid");
    SymmetricKey::new(hkdf(&shared, STRAWMAN_CHANNEL_CONTEXT, 1)[0])
}

/// Naive variant the client-first attack beats: attest *after* the channel
/// is up, with nothing binding the report to the channel. The server ends up
/// releasing the secret over a connection the attacker terminates.
pub fn strawman_attest_after_connect(seed: u64) -> AttackOutcome {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x4e41495645_01);
    let enclave = Enclave::new(ENCLAVE_MANIFEST, MemoryCap::Unbounded, &mut rng);
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);

    // Connect first: the naive design authenticates nobody, so the attacker
    // answers the connection and completes the unauthenticated key exchange.
    let server_dh = KeyPair::generate(&mut rng);
    let attacker_dh = KeyPair::generate(&mut rng);
    let server_channel = naive_channel(&server_dh, &attacker_dh.public());

    // Check second: the server demands a report for its nonce. The attacker
    // forwards the challenge to a benign edge function, which attests a key
    // that never leaves its enclave — and that nobody ever compares to the
    // channel.
    let report = {
        let eph = enclave.gen_ephemeral();
        enclave
            .attest(&eph.public(), &nonce)
            .expect("enclave attests its own key")
        // `eph` drops here; the attacker never saw it.
    };
    let verdict = verify_report(
        &report.to_bytes(),
        &enclave.measurement(),
        &nonce,
        &enclave.platform_public(),
    );
    if verdict != Verdict::Accept {
        return AttackOutcome {
            verdict: AttackVerdict::AttackDefeated,
            report_laundered: true,
            grant_captured: false,
            keys_recovered: None,
            detail: format!("benign report unexpectedly rejected: {verdict:?}"),
            run: None,
        };
    }

    // The report is genuine, so the naive server releases the secret over
    // the channel it has — the attacker's.
    let ct = aead_seal(&server_channel, &counter_nonce(0), b"", &secret);
    let attacker_channel = naive_channel(&attacker_dh, &server_dh.public());
    let recovered = aead_open(&attacker_channel, &counter_nonce(0), b"", &ct).ok();

    let succeeded = recovered.as_deref() == Some(secret.as_slice());
    AttackOutcome {
        verdict: if succeeded {
            AttackVerdict::AttackSucceeded
        } else {
            AttackVerdict::AttackDefeated
        },
        report_laundered: true,
        grant_captured: false,
        keys_recovered: recovered,
        detail: "report not bound to the channel; secret released to whoever holds the connection"
            .into(),
        run: None,
    }
}

/// Naive variant the attest-first attack beats: the report is verified out
/// of band, then the keys are installed into whatever connection shows up
/// next. The attacker makes sure its connection is the one that shows up.
pub fn strawman_attest_before_connect(seed: u64) -> AttackOutcome {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x4e41495645_02);
    let enclave = Enclave::new(ENCLAVE_MANIFEST, MemoryCap::Unbounded, &mut rng);
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    let mut nonce = [0u8; 16];
    rng.fill_bytes(&mut nonce);

    // Check first: the benign edge attests out of band and passes.
    let report = {
        let eph = enclave.gen_ephemeral();
        enclave
            .attest(&eph.public(), &nonce)
            .expect("enclave attests its own key")
    };
    let edge_vetted = verify_report(
        &report.to_bytes(),
        &enclave.measurement(),
        &nonce,
        &enclave.platform_public(),
    ) == Verdict::Accept;

    // Use second: a connection arrives claiming to be the vetted edge.
    // Nothing ties the earlier report to this channel, and the connection is
    // the attacker's.
    let server_dh = KeyPair::generate(&mut rng);
    let attacker_dh = KeyPair::generate(&mut rng);
    let server_channel = naive_channel(&server_dh, &attacker_dh.public());

    if !edge_vetted {
        return AttackOutcome {
            verdict: AttackVerdict::AttackDefeated,
            report_laundered: true,
            grant_captured: false,
            keys_recovered: None,
            detail: "benign report unexpectedly rejected".into(),
            run: None,
        };
    }
    let ct = aead_seal(&server_channel, &counter_nonce(0), b"", &secret);
    let attacker_channel = naive_channel(&attacker_dh, &server_dh.public());
    let recovered = aead_open(&attacker_channel, &counter_nonce(0), b"", &ct).ok();

    let succeeded = recovered.as_deref() == Some(secret.as_slice());
    AttackOutcome {
        verdict: if succeeded {
            AttackVerdict::AttackSucceeded
        } else {
            AttackVerdict::AttackDefeated
        },
        report_laundered: true,
        grant_captured: false,
        keys_recovered: recovered,
        detail: "check and use are separate events; the attacker owns the use".into(),
        run: None,
    }
}
