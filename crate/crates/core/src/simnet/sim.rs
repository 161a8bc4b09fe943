use std::collections::{BTreeMap, BTreeSet};

use ed25519_dalek::{Signer, SigningKey};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{ConfigError, SimConfig, DEFAULT_ORGS};
use super::node::Node;
use super::script::{Command, Script, ScriptError};
use super::trace::{EventKind, Trace};
use crate::consent::{
    match_participants, ConsentError, Disclosure, ParticipantWallet, StatusRow, Study,
};
use crate::exchange::{build_timeline, parse_store, ExchangeError, RecordEntry, Session, TimelineRow, SALT_LEN};
use crate::ledger::tx::verify_signature;
use crate::ledger::{
    generate_key, quorum, Block, Digest, Endorsement, Keyring, KeyLookup, Payload, PrincipalId, PrincipalKind,
    SignatureBytes, Transaction, TxBody,
};
use crate::policy::{PolicyError, RecordCategory, Verdict};
use crate::state::{ContractError, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("a network needs at least one organization")]
    NoOrgs,
    #[error("line {line}: {source}")]
    At {
        line: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("unknown {kind} {id:?}")]
    UnknownPrincipal { kind: PrincipalKind, id: String },
    #[error("invalid id: {0}")]
    InvalidId(String),
    #[error("no node for organization {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} is offline")]
    NodeOffline(String),
    #[error("node {0:?} is already down")]
    AlreadyDown(String),
    #[error("node {0:?} is already up")]
    AlreadyUp(String),
    #[error("cannot schedule at {at}, clock is at {now}")]
    InThePast { at: u64, now: u64 },
    #[error("study {0:?} has no off-chain content here")]
    UnknownStudy(String),
    #[error("file {0:?} was not loaded")]
    MissingFile(String),
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Consent(#[from] ConsentError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
}

impl SimError {
    fn at(self, line: usize) -> SimError {
        SimError::At {
            line,
            source: Box::new(self),
        }
    }

    /// The error without its line wrapper.
    pub fn root(&self) -> &SimError {
        match self {
            SimError::At { source, .. } => source.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Message {
    Tx {
        tx: Transaction,
        seq: u64,
    },
    Propose {
        block: Block,
        /// Proposer's signature over the block hash.
        signature: SignatureBytes,
    },
    Endorse {
        height: u64,
        hash: Digest,
        endorsement: Endorsement,
    },
    Commit {
        block: Block,
    },
    SyncRequest {
        from_height: u64,
    },
    SyncResponse {
        blocks: Vec<Block>,
    },
    Records {
        request: Digest,
        requester: String,
        patient: String,
        category: RecordCategory,
        records: Vec<RecordEntry>,
    },
}

impl Message {
    fn label(&self) -> String {
        match self {
            Message::Tx { tx, .. } => format!("msg=tx tx={}", tx.tx_id.short()),
            Message::Propose { block, .. } => format!("msg=propose height={}", block.height()),
            Message::Endorse { height, .. } => format!("msg=endorse height={height}"),
            Message::Commit { block } => format!("msg=commit height={}", block.height()),
            Message::SyncRequest { from_height } => format!("msg=sync_request from_height={from_height}"),
            Message::SyncResponse { blocks } => format!("msg=sync_response blocks={}", blocks.len()),
            Message::Records { request, records, .. } => {
                format!("msg=records request={} records={}", request.short(), records.len())
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Event {
    Deliver { from: String, to: String, msg: Box<Message> },
    Round,
    Expire { org: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Down,
    Up,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineSnapshot {
    pub at: u64,
    pub practitioner: String,
    pub window: Option<(u64, u64)>,
    pub sessions: Vec<String>,
    pub rows: Vec<TimelineRow>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    pub at: u64,
    pub researcher: String,
    pub descriptors: Vec<String>,
    pub study: Option<String>,
    pub matched: BTreeSet<String>,
}

/// The whole network on one deterministic event loop.
#[derive(Debug)]
pub struct Simulation {
    config: SimConfig,
    now: u64,
    nodes: BTreeMap<String, Node>,
    keys: Keyring,
    /// Organization node through which each principal submits.
    homes: BTreeMap<PrincipalId, String>,
    /// Committed state plus every submitted transaction, in submission order.
    speculative: WorldState,
    queue: BTreeMap<(u64, u64), Event>,
    next_event: u64,
    next_submit: u64,
    next_round_at: u64,
    next_grant: u64,
    trace: Trace,
    key_rng: ChaCha8Rng,
    net_rng: ChaCha8Rng,
    studies: BTreeMap<String, Study>,
    wallets: BTreeMap<String, ParticipantWallet>,
    timelines: Vec<TimelineSnapshot>,
    matches: Vec<MatchOutcome>,
}

fn pid(kind: PrincipalKind, id: &str) -> Result<PrincipalId, SimError> {
    PrincipalId::new(kind, id).map_err(|e| SimError::InvalidId(e.to_string()))
}

impl Simulation {
    /// Genesis with the founding organizations' registrations, endorsed by
    /// all of them and committed on every node at time 0.
    pub fn spawn(orgs: &[String], config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        if orgs.is_empty() {
            return Err(SimError::NoOrgs);
        }
        let key_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net_rng = ChaCha8Rng::seed_from_u64(config.seed);
        net_rng.set_stream(1);
        let mut sim = Simulation {
            now: 0,
            nodes: BTreeMap::new(),
            keys: Keyring::default(),
            homes: BTreeMap::new(),
            speculative: WorldState::new(),
            queue: BTreeMap::new(),
            next_event: 0,
            next_submit: 0,
            next_round_at: config.block_interval,
            next_grant: 0,
            trace: Trace::default(),
            key_rng,
            net_rng,
            studies: BTreeMap::new(),
            wallets: BTreeMap::new(),
            timelines: Vec::new(),
            matches: Vec::new(),
            config,
        };
        let mut txs = Vec::new();
        let mut signers = Vec::new();
        for o in orgs {
            let p = pid(PrincipalKind::Organization, o)?;
            if signers.iter().any(|(q, _): &(PrincipalId, SigningKey)| q == &p) {
                return Err(PolicyError::DuplicatePrincipal(p).into());
            }
            let key = generate_key(&mut sim.key_rng);
            let payload = Payload::RegisterPrincipal {
                principal: p.clone(),
                public_key: key.verifying_key().to_bytes(),
                org: None,
                identity_commitment: None,
            };
            txs.push(TxBody::new(0, p.clone(), p.clone(), payload).sign(&key).expect("ids validated"));
            signers.push((p, key));
        }
        let mut genesis = Block::genesis(txs, signers[0].0.clone(), 0);
        for (p, k) in &signers {
            genesis.endorsements.push(genesis.endorse(p.clone(), k));
        }
        for (p, k) in signers {
            let node = Node::from_chain(&p.id, k.clone(), std::slice::from_ref(&genesis)).expect("genesis is valid");
            sim.trace.push(
                0,
                EventKind::BlockCommitted,
                format!("node={} height=0 hash={}", p.id, genesis.hash().short()),
            );
            sim.homes.insert(p.clone(), p.id.clone());
            sim.keys.insert(p.clone(), k);
            sim.nodes.insert(p.id.clone(), node);
        }
        sim.speculative.apply_block(&genesis).expect("genesis is valid");
        sim.schedule(sim.next_round_at, Event::Round);
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn node(&self, org: &str) -> Option<&Node> {
        self.nodes.get(org)
    }

    pub fn keys(&self) -> &Keyring {
        &self.keys
    }

    pub fn home_of(&self, who: &PrincipalId) -> Option<&str> {
        self.homes.get(who).map(String::as_str)
    }

    pub fn timelines(&self) -> &[TimelineSnapshot] {
        &self.timelines
    }

    pub fn matches(&self) -> &[MatchOutcome] {
        &self.matches
    }

    pub fn wallet(&self, participant: &str) -> Option<&ParticipantWallet> {
        self.wallets.get(participant)
    }

    pub fn study(&self, study_id: &str) -> Option<&Study> {
        self.studies.get(study_id)
    }

    /// Node with the longest committed chain, first by name on ties.
    pub fn reference_node(&self) -> &Node {
        let mut best: Option<&Node> = None;
        for n in self.nodes.values() {
            if best.map_or(true, |b| n.next_height() > b.next_height()) {
                best = Some(n);
            }
        }
        best.expect("at least one node")
    }

    /// Committed prefixes are pairwise prefix-comparable.
    pub fn prefixes_consistent(&self) -> bool {
        let nodes: Vec<&Node> = self.nodes.values().collect();
        nodes
            .iter()
            .enumerate()
            .all(|(i, a)| nodes[i + 1..].iter().all(|b| a.ledger.prefix_comparable(&b.ledger)))
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.next_event += 1;
        self.queue.insert((at, self.next_event), ev);
    }

    fn node_mut(&mut self, org: &str) -> Result<&mut Node, SimError> {
        self.nodes.get_mut(org).ok_or_else(|| SimError::UnknownNode(org.to_string()))
    }

    fn send(&mut self, from: &str, to: &str, msg: Message) {
        let delay = self.net_rng.gen_range(self.config.latency_min..=self.config.latency_max);
        self.trace.push(self.now, EventKind::MsgSent, format!("from={from} to={to} {}", msg.label()));
        self.schedule(
            self.now + delay,
            Event::Deliver {
                from: from.to_string(),
                to: to.to_string(),
                msg: Box::new(msg),
            },
        );
    }

    fn broadcast(&mut self, from: &str, msg: &Message) {
        let peers: Vec<String> = self.nodes.keys().filter(|o| *o != from).cloned().collect();
        for p in peers {
            self.send(from, &p, msg.clone());
        }
    }

    /// Delivers an arbitrary message, bypassing the sender's own checks.
    pub fn inject_message(&mut self, from: &str, to: &str, msg: Message) {
        self.send(from, to, msg);
    }

    /// Processes every event up to and including `t`, then sets the clock.
    pub fn advance_to(&mut self, t: u64) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > t {
                break;
            }
            let ((at, _), ev) = entry.remove_entry();
            self.now = at;
            self.handle(ev);
        }
        self.now = self.now.max(t);
    }

    pub fn advance(&mut self, ms: u64) {
        self.advance_to(self.now + ms);
    }

    fn idle(&self) -> bool {
        !self.queue.values().any(|e| matches!(e, Event::Deliver { .. }))
            && self
                .nodes
                .values()
                .filter(|n| n.online)
                .all(|n| n.mempool_len() == 0 && n.round.is_none())
    }

    /// Runs whole rounds until nothing is pending, within the configured cap.
    pub fn drain(&mut self) {
        for _ in 0..self.config.drain_rounds {
            if self.idle() {
                break;
            }
            self.advance_to(self.next_round_at);
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Round => {
                self.next_round_at = self.now + self.config.block_interval;
                self.schedule(self.next_round_at, Event::Round);
                self.consensus_round();
            }
            Event::Expire { org } => {
                let now = self.now;
                let Some(node) = self.nodes.get_mut(&org) else { return };
                let gone = node.sessions.expire_sessions(now);
                for s in gone {
                    self.trace.push(now, EventKind::SessionExpired, format!("node={org} session={s}"));
                }
            }
            Event::Deliver { from, to, msg } => {
                let msg = *msg;
                let Some(node) = self.nodes.get_mut(&to) else { return };
                if !node.online {
                    node.held.push((from, msg));
                    return;
                }
                self.deliver(&from, &to, msg);
            }
        }
    }

    fn delivered(&mut self, from: &str, to: &str, msg: &Message, dropped: Option<&str>) {
        let mut detail = format!("from={from} to={to} {}", msg.label());
        if let Some(reason) = dropped {
            detail.push_str(&format!(" dropped={reason}"));
        }
        self.trace.push(self.now, EventKind::MsgDelivered, detail);
    }

    fn deliver(&mut self, from: &str, to: &str, msg: Message) {
        match &msg {
            Message::Tx { tx, seq } => {
                let node = &self.nodes[to];
                if let Err(e) = tx.verify(&node.world.registry) {
                    if !matches!(e, crate::ledger::VerifyError::UnknownAuthor(_)) {
                        return self.delivered(from, to, &msg, Some("bad_signature"));
                    }
                }
                self.delivered(from, to, &msg, None);
                let (tx, seq) = (tx.clone(), *seq);
                self.nodes.get_mut(to).expect("exists").add_pending(tx, seq);
            }
            Message::Propose { block, signature } => {
                let node = &self.nodes[to];
                let proposer = &block.header.proposer;
                let valid = proposer.is_org()
                    && node.world.registry.is_org(&proposer.id)
                    && node
                        .world
                        .registry
                        .public_key(proposer)
                        .is_some_and(|k| verify_signature(&k, block.hash().as_bytes(), signature).is_ok());
                if !valid {
                    return self.delivered(from, to, &msg, Some("bad_signature"));
                }
                let height = block.height();
                let mine = node.next_height();
                self.delivered(from, to, &msg, None);
                if height > mine {
                    self.send(to, from, Message::SyncRequest { from_height: mine });
                    return;
                }
                if height < mine {
                    return;
                }
                let block = block.clone();
                let node = self.nodes.get_mut(to).expect("exists");
                match node.check_proposal(&block) {
                    Ok(()) => {
                        let endorsement = block.endorse(node.principal(), node.key());
                        let hash = block.hash();
                        self.trace.push(
                            self.now,
                            EventKind::BlockEndorsed,
                            format!("node={to} height={height} hash={}", hash.short()),
                        );
                        self.send(
                            to,
                            from,
                            Message::Endorse {
                                height,
                                hash,
                                endorsement,
                            },
                        );
                    }
                    Err(reason) => {
                        self.trace.push(
                            self.now,
                            EventKind::Decision,
                            format!("node={to} consensus=reject height={height} reason={}", reason.replace(' ', "_")),
                        );
                    }
                }
            }
            Message::Endorse {
                height,
                hash,
                endorsement,
            } => {
                let node = &self.nodes[to];
                let e = endorsement;
                let valid = e.org.is_org()
                    && node
                        .world
                        .registry
                        .public_key(&e.org)
                        .is_some_and(|k| verify_signature(&k, hash.as_bytes(), &e.signature).is_ok());
                if !valid {
                    return self.delivered(from, to, &msg, Some("bad_signature"));
                }
                self.delivered(from, to, &msg, None);
                let node = self.nodes.get_mut(to).expect("exists");
                let Some(round) = node.round.as_mut() else { return };
                if round.block.height() != *height || round.block.hash() != *hash {
                    return;
                }
                if round.endorsements.iter().any(|x| x.org == e.org) {
                    return;
                }
                round.endorsements.push(e.clone());
                if round.endorsements.len() >= round.need {
                    self.finalize(to);
                }
            }
            Message::Commit { block } => {
                let mine = self.nodes[to].next_height();
                let height = block.height();
                if height > mine {
                    self.delivered(from, to, &msg, None);
                    let node = self.nodes.get_mut(to).expect("exists");
                    node.future.insert(height, block.clone());
                    self.send(to, from, Message::SyncRequest { from_height: mine });
                    return;
                }
                if height < mine {
                    return self.delivered(from, to, &msg, None);
                }
                let block = block.clone();
                match self.nodes.get_mut(to).expect("exists").commit(block.clone()) {
                    Ok(()) => {
                        self.delivered(from, to, &msg, None);
                        self.after_commit(to, &block);
                    }
                    Err(reason) => self.delivered(from, to, &msg, Some(&reason.replace(' ', "_"))),
                }
            }
            Message::SyncRequest { from_height } => {
                self.delivered(from, to, &msg, None);
                let node = &self.nodes[to];
                let blocks: Vec<Block> = node
                    .ledger
                    .blocks()
                    .iter()
                    .skip(*from_height as usize)
                    .cloned()
                    .collect();
                if !blocks.is_empty() {
                    self.send(to, from, Message::SyncResponse { blocks });
                }
            }
            Message::SyncResponse { blocks } => {
                let mut failure = None;
                let mut appended = Vec::new();
                for b in blocks {
                    let node = self.nodes.get_mut(to).expect("exists");
                    if b.height() != node.next_height() {
                        continue;
                    }
                    match node.commit(b.clone()) {
                        Ok(()) => appended.push(b.clone()),
                        Err(reason) => {
                            failure = Some(reason.replace(' ', "_"));
                            break;
                        }
                    }
                }
                self.delivered(from, to, &msg, failure.as_deref());
                for b in appended {
                    self.after_commit(to, &b);
                }
            }
            Message::Records {
                request,
                requester,
                patient,
                category,
                records,
            } => {
                self.delivered(from, to, &msg, None);
                let (now, ttl) = (self.now, self.config.session_ttl);
                let count = records.len();
                let node = self.nodes.get_mut(to).expect("exists");
                let sid = node.sessions.open(Session {
                    session_id: String::new(),
                    request: *request,
                    requester: requester.clone(),
                    patient: patient.clone(),
                    category: *category,
                    source_org: from.to_string(),
                    records: records.clone(),
                    opened_at: now,
                    ttl,
                });
                self.trace.push(
                    now,
                    EventKind::SessionOpened,
                    format!(
                        "node={to} session={sid} requester={requester} request={} records={count}",
                        request.short()
                    ),
                );
                self.schedule(now.saturating_add(ttl), Event::Expire { org: to.to_string() });
            }
        }
    }

    /// Starts a round now: abort stale rounds, pick the proposer for the
    /// next height round-robin over online members, propose.
    pub fn consensus_round(&mut self) {
        let stale: Vec<String> = self
            .nodes
            .values()
            .filter(|n| n.round.is_some())
            .map(|n| n.org.clone())
            .collect();
        for org in stale {
            let node = self.nodes.get_mut(&org).expect("exists");
            let r = node.round.take().expect("filtered");
            self.trace.push(
                self.now,
                EventKind::Decision,
                format!(
                    "node={org} consensus=abort height={} have={} need={}",
                    r.block.height(),
                    r.endorsements.len(),
                    r.need
                ),
            );
        }
        let Some(reference) = self
            .nodes
            .values()
            .filter(|n| n.online)
            .max_by(|a, b| a.next_height().cmp(&b.next_height()).then(b.org.cmp(&a.org)))
        else {
            return;
        };
        let height = reference.next_height();
        let orgs = reference.world.registry.orgs().to_vec();
        let reference_org = reference.org.clone();
        let n = orgs.len();
        let Some(proposer) = (0..n)
            .map(|i| &orgs[(height as usize + i) % n])
            .find(|o| self.nodes.get(*o).is_some_and(|node| node.online))
            .cloned()
        else {
            return;
        };
        if self.nodes[&proposer].next_height() < height {
            let from_height = self.nodes[&proposer].next_height();
            self.send(&proposer, &reference_org, Message::SyncRequest { from_height });
            return;
        }
        let now = self.now;
        let node = self.nodes.get_mut(&proposer).expect("exists");
        let assembly = node.assemble(node.principal(), now);
        let need = quorum(node.members());
        for id in &assembly.dropped {
            self.trace.push(now, EventKind::Decision, format!("node={proposer} dropped_tx={}", id.short()));
        }
        if !assembly.dropped.is_empty() {
            self.rebuild_speculative();
        }
        let Some(block) = assembly.block else { return };
        let node = self.nodes.get_mut(&proposer).expect("exists");
        let hash = block.hash();
        let own = block.endorse(node.principal(), node.key());
        let signature = node.key().sign(hash.as_bytes()).to_bytes();
        node.round = Some(super::node::Round {
            block: block.clone(),
            endorsements: vec![own],
            need,
        });
        self.trace.push(
            now,
            EventKind::BlockProposed,
            format!(
                "node={proposer} height={} hash={} txs={} need={need}",
                block.height(),
                hash.short(),
                block.transactions.len()
            ),
        );
        self.trace.push(
            now,
            EventKind::BlockEndorsed,
            format!("node={proposer} height={} hash={}", block.height(), hash.short()),
        );
        if need <= 1 {
            self.finalize(&proposer);
        } else {
            self.broadcast(&proposer, &Message::Propose { block, signature });
        }
    }

    fn finalize(&mut self, org: &str) {
        let node = self.nodes.get_mut(org).expect("exists");
        let round = node.round.take().expect("finalize follows a round");
        let mut block = round.block;
        let mut endorsements = round.endorsements;
        endorsements.sort_by(|a, b| a.org.cmp(&b.org));
        block.endorsements = endorsements;
        if let Err(reason) = node.commit(block.clone()) {
            self.trace.push(
                self.now,
                EventKind::Decision,
                format!("node={org} consensus=abort reason={}", reason.replace(' ', "_")),
            );
            return;
        }
        self.after_commit(org, &block);
        self.broadcast(org, &Message::Commit { block });
    }

    fn after_commit(&mut self, org: &str, block: &Block) {
        self.trace.push(
            self.now,
            EventKind::BlockCommitted,
            format!(
                "node={org} height={} hash={} txs={} endorsements={}",
                block.height(),
                block.hash().short(),
                block.transactions.len(),
                block.endorsements.len()
            ),
        );
        for tx in &block.transactions {
            match tx.payload() {
                Payload::RegisterPrincipal { principal, .. } if principal.is_org() => {
                    if !self.nodes.contains_key(&principal.id) {
                        self.provision(org, &principal.id);
                    }
                }
                Payload::DataRequestRecorded { sender_org, .. } if sender_org == org => {
                    self.serve_request(org, tx.tx_id);
                }
                _ => {}
            }
        }
        // Blocks that arrived ahead of their turn.
        loop {
            let node = self.nodes.get_mut(org).expect("exists");
            let next = node.next_height();
            let Some(b) = node.future.remove(&next) else { break };
            node.future.retain(|h, _| *h > next);
            if node.commit(b.clone()).is_err() {
                break;
            }
            self.after_commit(org, &b);
        }
    }

    fn provision(&mut self, source: &str, org: &str) {
        let key = self
            .keys
            .get(&PrincipalId::org(org).expect("registered ids are valid"))
            .expect("org keys are generated on registration")
            .clone();
        let blocks = self.nodes[source].ledger.blocks().to_vec();
        let node = Node::from_chain(org, key, &blocks).expect("source chain is valid");
        self.trace.push(
            self.now,
            EventKind::NodeUp,
            format!("node={org} provisioned=true height={}", node.next_height()),
        );
        self.nodes.insert(org.to_string(), node);
    }

    /// Sender side of a data request: local policy evaluation, fetch,
    /// completion transactions, off-chain delivery.
    fn serve_request(&mut self, org: &str, request: Digest) {
        let node = self.nodes.get_mut(org).expect("exists");
        if !node.handled.insert(request) {
            return;
        }
        let Some(rec) = node.world.request(&request).cloned() else { return };
        if rec.completion.is_some() {
            return;
        }
        let decision = node.world.evaluate(&rec.query());
        self.trace.push(
            self.now,
            EventKind::Decision,
            format!(
                "node={org} request={} requester={} patient={} category={} verdict={} reason={} grant={}",
                request.short(),
                rec.requester,
                rec.patient,
                rec.category,
                decision.verdict,
                decision.reason,
                decision.grant_id.as_deref().unwrap_or("-")
            ),
        );
        let node = &self.nodes[org];
        let records = if decision.is_allowed() {
            node.store.fetch_records(&rec.patient, rec.category)
        } else {
            Vec::new()
        };
        if decision.verdict == Verdict::AllowEmergency {
            match node.world.policy.emergency_access(&node.world.registry, request, &rec.query()) {
                Ok((_, payload)) => self.submit_as_node(org, payload),
                Err(e) => self.trace.push(
                    self.now,
                    EventKind::Decision,
                    format!("node={org} request={} emergency_error={}", request.short(), e.to_string().replace(' ', "_")),
                ),
            }
        }
        self.submit_as_node(
            org,
            Payload::AccessCompleted {
                request,
                patient: rec.patient.clone(),
                requester: rec.requester.clone(),
                verdict: decision.verdict,
                reason: decision.reason,
                grant_id: decision.grant_id.clone(),
                record_count: records.len() as u32,
            },
        );
        if decision.is_allowed() {
            self.send(
                org,
                &rec.requester_org,
                Message::Records {
                    request,
                    requester: rec.requester,
                    patient: rec.patient,
                    category: rec.category,
                    records,
                },
            );
        }
    }

    fn submit_as_node(&mut self, org: &str, payload: Payload) {
        let author = PrincipalId::org(org).expect("node ids are valid");
        if let Err(e) = self.submit(&author, payload) {
            self.trace.push(
                self.now,
                EventKind::Decision,
                format!("node={org} rejected={}", e.to_string().replace(' ', "_")),
            );
        }
    }

    /// Signs `payload` as `author`, checks it against the speculative state,
    /// queues it on the author's home node and gossips it.
    pub fn submit(&mut self, author: &PrincipalId, payload: Payload) -> Result<Digest, SimError> {
        let home = self
            .homes
            .get(author)
            .cloned()
            .ok_or_else(|| SimError::UnknownPrincipal {
                kind: author.kind,
                id: author.id.clone(),
            })?;
        self.submit_via(author, &home, payload)
    }

    fn submit_via(&mut self, author: &PrincipalId, via: &str, payload: Payload) -> Result<Digest, SimError> {
        let node = self.nodes.get(via).ok_or_else(|| SimError::UnknownNode(via.to_string()))?;
        if !node.online {
            return Err(SimError::NodeOffline(via.to_string()));
        }
        let key = self.keys.get(author).ok_or_else(|| SimError::UnknownPrincipal {
            kind: author.kind,
            id: author.id.clone(),
        })?;
        let org = pid(PrincipalKind::Organization, via)?;
        let tx = TxBody::new(self.now, author.clone(), org, payload)
            .sign(key)
            .map_err(|e| SimError::InvalidId(e.to_string()))?;
        self.speculative.apply(&tx)?;
        self.next_submit += 1;
        let seq = self.next_submit;
        self.nodes.get_mut(via).expect("exists").add_pending(tx.clone(), seq);
        self.trace.push(
            self.now,
            EventKind::TxSubmitted,
            format!("node={via} tx={} action={}", tx.tx_id.short(), tx.payload().action()),
        );
        let id = tx.tx_id;
        self.broadcast(via, &Message::Tx { tx, seq });
        Ok(id)
    }

    /// Rebuilds the speculative view from the longest chain plus every
    /// pending transaction still held somewhere.
    fn rebuild_speculative(&mut self) {
        let reference = self.reference_node();
        let mut world = reference.world.clone();
        let mut pending: BTreeMap<(u64, u64), Transaction> = BTreeMap::new();
        for n in self.nodes.values() {
            for p in n.pending() {
                if !reference.ledger.contains_tx(&p.tx.tx_id) {
                    pending.entry((p.tx.timestamp(), p.seq)).or_insert_with(|| p.tx.clone());
                }
            }
        }
        let mut seen = BTreeSet::new();
        for tx in pending.into_values() {
            if seen.insert(tx.tx_id) {
                let _ = world.apply(&tx);
            }
        }
        self.speculative = world;
    }

    /// Toggles a node at `at`, first running the loop up to that time.
    pub fn inject_fault(&mut self, org: &str, kind: FaultKind, at: u64) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::InThePast { at, now: self.now });
        }
        if !self.nodes.contains_key(org) {
            return Err(SimError::UnknownNode(org.to_string()));
        }
        self.advance_to(at);
        let now = self.now;
        let node = self.node_mut(org)?;
        match kind {
            FaultKind::Down => {
                if !node.online {
                    return Err(SimError::AlreadyDown(org.to_string()));
                }
                node.online = false;
                node.round = None;
                self.trace.push(now, EventKind::NodeDown, format!("node={org}"));
            }
            FaultKind::Up => {
                if node.online {
                    return Err(SimError::AlreadyUp(org.to_string()));
                }
                node.online = true;
                let held = std::mem::take(&mut node.held);
                let from_height = node.next_height();
                self.trace.push(now, EventKind::NodeUp, format!("node={org} height={from_height}"));
                for (from, msg) in held {
                    let delay = self.net_rng.gen_range(self.config.latency_min..=self.config.latency_max);
                    self.schedule(
                        now + delay,
                        Event::Deliver {
                            from,
                            to: org.to_string(),
                            msg: Box::new(msg),
                        },
                    );
                }
                let peers: Vec<String> = self
                    .nodes
                    .values()
                    .filter(|n| n.online && n.org != org)
                    .map(|n| n.org.clone())
                    .collect();
                for p in peers {
                    self.send(org, &p, Message::SyncRequest { from_height });
                }
            }
        }
        Ok(())
    }

    fn require(&self, kind: PrincipalKind, id: &str) -> Result<PrincipalId, SimError> {
        let p = pid(kind, id)?;
        if !self.speculative.registry.contains(&p) {
            return Err(SimError::UnknownPrincipal { kind, id: id.to_string() });
        }
        Ok(p)
    }

    fn default_home(&self, home: &Option<String>) -> Result<String, SimError> {
        match home {
            Some(h) => {
                self.require(PrincipalKind::Organization, h)?;
                Ok(h.clone())
            }
            None => Ok(self.speculative.registry.orgs()[0].clone()),
        }
    }

    fn register(
        &mut self,
        kind: PrincipalKind,
        id: &str,
        sponsor: &str,
        binding: Option<String>,
        identity_commitment: Option<Digest>,
    ) -> Result<(), SimError> {
        let p = pid(kind, id)?;
        if self.speculative.registry.contains(&p) {
            return Err(PolicyError::DuplicatePrincipal(p).into());
        }
        let key = generate_key(&mut self.key_rng);
        let payload = Payload::RegisterPrincipal {
            principal: p.clone(),
            public_key: key.verifying_key().to_bytes(),
            org: binding,
            identity_commitment,
        };
        let sponsor_id = pid(PrincipalKind::Organization, sponsor)?;
        self.submit(&sponsor_id, payload)?;
        self.keys.insert(p.clone(), key);
        let home = if kind == PrincipalKind::Organization { id } else { sponsor };
        self.homes.insert(p, home.to_string());
        Ok(())
    }

    /// Runs one script command at the current time.
    pub fn execute(&mut self, command: &Command, files: &BTreeMap<String, String>) -> Result<(), SimError> {
        use PrincipalKind as K;
        match command {
            Command::OrgAdd { id } => {
                let sponsor = self
                    .speculative
                    .registry
                    .orgs()
                    .iter()
                    .find(|o| self.nodes.get(*o).is_some_and(|n| n.online))
                    .cloned()
                    .ok_or_else(|| SimError::NodeOffline("every organization".into()))?;
                self.register(K::Organization, id, &sponsor, None, None)?;
            }
            Command::PractitionerAdd { id, org } => {
                self.require(K::Organization, org)?;
                self.register(K::Practitioner, id, org, Some(org.clone()), None)?;
            }
            Command::PatientAdd {
                id,
                home,
                true_identifier,
            } => {
                let home = self.default_home(home)?;
                let commitment = match true_identifier {
                    Some(t) => {
                        let mut salt = [0u8; SALT_LEN];
                        self.key_rng.fill_bytes(&mut salt);
                        if self.speculative.registry.contains(&pid(K::Patient, id)?) {
                            return Err(PolicyError::DuplicatePrincipal(pid(K::Patient, id)?).into());
                        }
                        Some(self.node_mut(&home)?.store.enroll(id, salt, t)?)
                    }
                    None => None,
                };
                self.register(K::Patient, id, &home, Some(home.clone()), commitment)?;
            }
            Command::ResearcherAdd { id, home } => {
                let home = self.default_home(home)?;
                self.register(K::Researcher, id, &home, Some(home.clone()), None)?;
            }
            Command::ParticipantAdd { id, home } => {
                let home = self.default_home(home)?;
                self.register(K::Participant, id, &home, Some(home.clone()), None)?;
                self.wallets.insert(id.clone(), ParticipantWallet::new(id.clone()));
            }
            Command::PlanCreate { plan, patient, orgs } => {
                let payload = self
                    .speculative
                    .policy
                    .create_plan(&self.speculative.registry, plan, patient, orgs, &[])?;
                let author = pid(K::Organization, &orgs[0])?;
                self.submit(&author, payload)?;
            }
            Command::Bind { practitioner, plan } => {
                let payload = self
                    .speculative
                    .policy
                    .bind_practitioner(&self.speculative.registry, plan, practitioner)?;
                let Payload::BindPractitioner { org, .. } = &payload else { unreachable!() };
                let author = pid(K::Organization, org)?;
                self.submit(&author, payload)?;
            }
            Command::Grant {
                patient,
                plan,
                practitioner,
                scope,
                from,
                until,
            } => {
                let author = self.require(K::Patient, patient)?;
                let grant_id = format!("g{}", self.next_grant + 1);
                let payload = self.speculative.policy.grant_access(
                    &self.speculative.registry,
                    &grant_id,
                    patient,
                    plan,
                    practitioner,
                    scope,
                    *from,
                    *until,
                )?;
                self.submit(&author, payload)?;
                self.next_grant += 1;
            }
            Command::Revoke { patient, grant } => {
                let author = self.require(K::Patient, patient)?;
                let payload = self.speculative.policy.revoke_access(patient, grant)?;
                self.submit(&author, payload)?;
            }
            Command::Request {
                practitioner,
                org,
                sender,
                patient,
                category,
                emergency,
            } => {
                let author = self.require(K::Practitioner, practitioner)?;
                self.require(K::Organization, org)?;
                self.require(K::Organization, sender)?;
                self.require(K::Patient, patient)?;
                let payload = Payload::DataRequestRecorded {
                    requester: practitioner.clone(),
                    requester_org: org.clone(),
                    sender_org: sender.clone(),
                    patient: patient.clone(),
                    category: *category,
                    emergency: *emergency,
                };
                self.submit_via(&author, org, payload)?;
            }
            Command::RecordAdd {
                org,
                patient,
                category,
                at,
                value,
                author,
            } => {
                self.require(K::Patient, patient)?;
                self.node_mut(org)?.store.add_record(patient, *category, *at, value, author);
            }
            Command::StoreLoad { path } => {
                let text = files.get(path).ok_or_else(|| SimError::MissingFile(path.clone()))?;
                for l in parse_store(text)? {
                    self.require(K::Patient, &l.patient)?;
                    self.node_mut(&l.org)?
                        .store
                        .add_record(&l.patient, l.category, l.measured_at, &l.value, &l.author);
                }
            }
            Command::Timeline { practitioner, window } => {
                let p = self.require(K::Practitioner, practitioner)?;
                let org = self.homes[&p].clone();
                let now = self.now;
                let node = self.node_mut(&org)?;
                let sessions: Vec<_> = node
                    .sessions
                    .live_for(practitioner)
                    .filter(|s| !s.is_expired(now))
                    .collect();
                let rows = build_timeline(sessions.iter().copied(), *window)?;
                let ids = sessions.iter().map(|s| s.session_id.clone()).collect::<Vec<_>>();
                self.trace.push(
                    now,
                    EventKind::Decision,
                    format!(
                        "node={org} timeline={practitioner} sessions={} rows={}",
                        ids.len(),
                        rows.len()
                    ),
                );
                self.timelines.push(TimelineSnapshot {
                    at: now,
                    practitioner: practitioner.clone(),
                    window: *window,
                    sessions: ids,
                    rows,
                });
            }
            Command::StudyRegister {
                researcher,
                study,
                quiz_path,
            } => {
                let author = self.require(K::Researcher, researcher)?;
                let text = files.get(quiz_path).ok_or_else(|| SimError::MissingFile(quiz_path.clone()))?;
                let quiz = crate::consent::Quiz::parse(text).map_err(ConsentError::from)?;
                let s = Study {
                    study_id: study.clone(),
                    researchers: BTreeSet::from([researcher.clone()]),
                    title: study.clone(),
                    description: String::new(),
                    quiz,
                    outcome_notes: Vec::new(),
                };
                let payload = self.speculative.consent.register_study(&self.speculative.registry, researcher, &s)?;
                self.submit(&author, payload)?;
                self.studies.insert(study.clone(), s);
            }
            Command::Invite {
                researcher,
                study,
                participant,
            } => {
                let author = self.require(K::Researcher, researcher)?;
                let payload = self
                    .speculative
                    .consent
                    .invite(&self.speculative.registry, researcher, study, participant)?;
                self.submit(&author, payload)?;
            }
            Command::Attempt {
                participant,
                study,
                answers,
            } => {
                let author = self.require(K::Participant, participant)?;
                let s = self.studies.get(study).ok_or_else(|| SimError::UnknownStudy(study.clone()))?;
                let (grade, payload) = self.speculative.consent.submit_attempt(s, participant, answers)?;
                let questions = s.quiz.len();
                self.submit(&author, payload)?;
                self.trace.push(
                    self.now,
                    EventKind::Decision,
                    format!(
                        "participant={participant} study={study} attempt_mistakes={} passed={}",
                        grade.mistakes, grade.passed
                    ),
                );
                if let Some(w) = self.wallets.get_mut(participant) {
                    w.record_attempt(study, questions, &grade.wrong);
                }
            }
            Command::Sign { participant, study } => {
                let author = self.require(K::Participant, participant)?;
                let key = self.keys.get(&author).expect("registered principals have keys");
                let payload = self.speculative.consent.sign_consent(study, participant, key)?;
                self.submit(&author, payload)?;
            }
            Command::Withdraw { participant, study } => {
                let author = self.require(K::Participant, participant)?;
                let payload = self.speculative.consent.withdraw_consent(study, participant)?;
                self.submit(&author, payload)?;
            }
            Command::Profile {
                participant,
                descriptors,
                discoverable,
                overrides,
            } => {
                let author = self.require(K::Participant, participant)?;
                let wallet = self
                    .wallets
                    .entry(participant.clone())
                    .or_insert_with(|| ParticipantWallet::new(participant.clone()));
                let payload = wallet.publish(
                    &self.speculative.registry,
                    &mut self.key_rng,
                    descriptors,
                    *discoverable,
                    overrides,
                )?;
                self.submit(&author, payload)?;
            }
            Command::Match {
                researcher,
                descriptors,
                study,
            } => {
                self.run_match(researcher, descriptors, study.as_deref())?;
            }
            Command::Fault { org, up } => {
                let kind = if *up { FaultKind::Up } else { FaultKind::Down };
                self.inject_fault(org, kind, self.now)?;
            }
            Command::Tick { ms } => self.advance(*ms),
            Command::Shred { org, patient } => {
                let now = self.now;
                let report = self.node_mut(org)?.store.shred_patient(patient)?;
                self.trace.push(
                    now,
                    EventKind::Decision,
                    format!("node={org} shred={patient} records={}", report.records_removed),
                );
            }
        }
        Ok(())
    }

    /// Selective-disclosure match against the profiles committed on the
    /// researcher's node. Every challenge and answer is traced.
    pub fn run_match(
        &mut self,
        researcher: &str,
        descriptors: &[String],
        study: Option<&str>,
    ) -> Result<BTreeSet<String>, SimError> {
        let r = self.require(PrincipalKind::Researcher, researcher)?;
        let r_home = self.homes[&r].clone();
        let node = self.nodes.get(&r_home).ok_or_else(|| SimError::UnknownNode(r_home.clone()))?;
        if !node.online {
            return Err(SimError::NodeOffline(r_home));
        }
        let mut log: Vec<(EventKind, String)> = Vec::new();
        let wallets = &self.wallets;
        let homes = &self.homes;
        let nodes = &self.nodes;
        let matched = match_participants(
            &node.world.registry,
            node.world.consent.profiles(),
            researcher,
            descriptors,
            study,
            |ch| {
                let p_home = PrincipalId::new(PrincipalKind::Participant, ch.participant.as_str())
                    .ok()
                    .and_then(|p| homes.get(&p))
                    .cloned()
                    .unwrap_or_default();
                let ask = format!(
                    "from={r_home} to={p_home} msg=challenge participant={} descriptor={}",
                    ch.participant, ch.descriptor
                );
                log.push((EventKind::MsgSent, ask.clone()));
                let reachable = nodes.get(&p_home).is_some_and(|n| n.online);
                if !reachable {
                    return Disclosure::Decline;
                }
                log.push((EventKind::MsgDelivered, ask));
                let answer = wallets
                    .get(&ch.participant)
                    .map_or(Disclosure::Decline, |w| w.respond(ch));
                let reply = match &answer {
                    Disclosure::Reveal { descriptor, salt } => format!(
                        "from={p_home} to={r_home} msg=disclosure participant={} descriptor={descriptor} salt={}",
                        ch.participant,
                        hex::encode(salt)
                    ),
                    Disclosure::Decline => format!(
                        "from={p_home} to={r_home} msg=decline participant={} descriptor={}",
                        ch.participant, ch.descriptor
                    ),
                };
                log.push((EventKind::MsgSent, reply.clone()));
                log.push((EventKind::MsgDelivered, reply));
                answer
            },
        )?;
        let now = self.now;
        for (kind, detail) in log {
            self.trace.push(now, kind, detail);
        }
        let listed = if matched.is_empty() {
            "-".to_string()
        } else {
            matched.iter().cloned().collect::<Vec<_>>().join(",")
        };
        self.trace.push(
            now,
            EventKind::Decision,
            format!("node={r_home} match={researcher} query={} matched={listed}", descriptors.join(",")),
        );
        self.matches.push(MatchOutcome {
            at: now,
            researcher: researcher.to_string(),
            descriptors: descriptors.to_vec(),
            study: study.map(str::to_string),
            matched: matched.clone(),
        });
        Ok(matched)
    }

    /// Dashboard rows from the researcher's node. Per-question detail is
    /// included only where the participant's profile layer admits the study.
    pub fn consent_status(&self, researcher: &str, study: &str) -> Result<Vec<StatusRow>, SimError> {
        let r = pid(PrincipalKind::Researcher, researcher)?;
        let home = self.homes.get(&r).ok_or_else(|| SimError::UnknownPrincipal {
            kind: PrincipalKind::Researcher,
            id: researcher.to_string(),
        })?;
        let node = &self.nodes[home];
        let book = &node.world.consent;
        Ok(book.consent_status(researcher, study, |participant| {
            let visible = book.profile(participant).is_some_and(|p| p.visible_to(Some(study)));
            if !visible {
                return None;
            }
            self.wallets
                .get(participant)
                .and_then(|w| w.struggles(study))
                .map(<[u32]>::to_vec)
        })?)
    }
}

/// Organizations declared by the script's leading `org add` lines, or the
/// default trio when there are none.
pub fn founding_orgs(script: &Script) -> (Vec<String>, usize) {
    let lead: Vec<String> = script
        .lines
        .iter()
        .map_while(|l| match &l.command {
            Command::OrgAdd { id } => Some(id.clone()),
            _ => None,
        })
        .collect();
    if lead.is_empty() {
        (DEFAULT_ORGS.iter().map(|s| s.to_string()).collect(), 0)
    } else {
        let n = lead.len();
        (lead, n)
    }
}

/// Spawns the network, runs every command and lets the network settle.
pub fn run_scenario(script: &Script, config: SimConfig) -> Result<Simulation, SimError> {
    let (orgs, skip) = founding_orgs(script);
    let mut sim = Simulation::spawn(&orgs, config).map_err(|e| match script.lines.first() {
        Some(l) if skip > 0 => e.at(l.line),
        _ => e,
    })?;
    for l in &script.lines[skip..] {
        sim.execute(&l.command, &script.files).map_err(|e| e.at(l.line))?;
    }
    sim.drain();
    Ok(sim)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn orgs(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn register(sim: &mut Simulation, id: &str, org: &str) {
        sim.execute(
            &Command::PractitionerAdd {
                id: id.into(),
                org: org.into(),
            },
            &BTreeMap::new(),
        )
        .unwrap();
    }

    #[test]
    fn genesis_is_shared() {
        let sim = Simulation::spawn(&orgs(&["a", "b", "c"]), SimConfig::with_seed(1)).unwrap();
        let hashes: BTreeSet<Digest> = sim.nodes().map(|n| n.ledger.tip().unwrap().hash()).collect();
        assert_eq!(hashes.len(), 1);
        assert_eq!(sim.now(), 0);
        assert_eq!(sim.trace().of_kind(EventKind::BlockCommitted).count(), 3);
    }

    #[test]
    fn empty_org_list_is_rejected() {
        assert_eq!(
            Simulation::spawn(&[], SimConfig::default()).unwrap_err(),
            SimError::NoOrgs
        );
    }

    #[test]
    fn single_org_commits_alone() {
        let mut sim = Simulation::spawn(&orgs(&["solo"]), SimConfig::with_seed(3)).unwrap();
        register(&mut sim, "dr", "solo");
        sim.advance(1000);
        assert_eq!(sim.node("solo").unwrap().next_height(), 2);
    }

    #[test]
    fn four_orgs_commit_with_three_endorsements() {
        let mut sim = Simulation::spawn(&orgs(&["a", "b", "c", "d"]), SimConfig::with_seed(5)).unwrap();
        register(&mut sim, "dr", "a");
        // Proposed at the first tick, committed before the second.
        sim.advance(1999);
        for n in sim.nodes() {
            assert_eq!(n.next_height(), 2, "{}", n.org);
            assert!(n.ledger.tip().unwrap().endorsements.len() >= 3);
        }
    }

    #[test]
    fn quorum_loss_keeps_the_mempool() {
        let mut sim = Simulation::spawn(&orgs(&["a", "b", "c", "d"]), SimConfig::with_seed(5)).unwrap();
        sim.inject_fault("c", FaultKind::Down, 0).unwrap();
        sim.inject_fault("d", FaultKind::Down, 0).unwrap();
        register(&mut sim, "dr", "a");
        sim.advance(5000);
        assert!(sim.nodes().all(|n| n.next_height() == 1));
        assert_eq!(sim.node("a").unwrap().mempool_len(), 1);
        assert!(sim
            .trace()
            .of_kind(EventKind::Decision)
            .any(|e| e.field("consensus") == Some("abort")));
        sim.inject_fault("c", FaultKind::Up, sim.now()).unwrap();
        sim.advance(3000);
        assert_eq!(sim.node("a").unwrap().next_height(), 2);
        assert!(sim.prefixes_consistent());
    }

    #[test]
    fn recovered_node_catches_up() {
        let mut sim = Simulation::spawn(&orgs(&["a", "b", "c", "d"]), SimConfig::with_seed(9)).unwrap();
        sim.inject_fault("d", FaultKind::Down, 0).unwrap();
        register(&mut sim, "x1", "a");
        sim.advance(2000);
        register(&mut sim, "x2", "b");
        sim.advance(2000);
        assert_eq!(sim.node("a").unwrap().next_height(), 3);
        assert_eq!(sim.node("d").unwrap().next_height(), 1);
        sim.inject_fault("d", FaultKind::Up, sim.now()).unwrap();
        sim.drain();
        let tips: BTreeSet<Digest> = sim.nodes().map(|n| n.ledger.tip().unwrap().hash()).collect();
        assert_eq!(tips.len(), 1);
        assert_eq!(sim.node("d").unwrap().next_height(), 3);
    }

    #[test]
    fn fault_toggles_are_checked() {
        let mut sim = Simulation::spawn(&orgs(&["a", "b", "c"]), SimConfig::default()).unwrap();
        assert_eq!(
            sim.inject_fault("a", FaultKind::Up, 0).unwrap_err(),
            SimError::AlreadyUp("a".into())
        );
        sim.inject_fault("a", FaultKind::Down, 10).unwrap();
        assert_eq!(
            sim.inject_fault("a", FaultKind::Down, 20).unwrap_err(),
            SimError::AlreadyDown("a".into())
        );
        assert_eq!(
            sim.inject_fault("zz", FaultKind::Down, 20).unwrap_err(),
            SimError::UnknownNode("zz".into())
        );
        assert!(matches!(
            sim.inject_fault("a", FaultKind::Up, 5).unwrap_err(),
            SimError::InThePast { at: 5, now: 20 }
        ));
    }

    #[test]
    fn forged_endorsement_is_dropped() {
        let mut sim = Simulation::spawn(&orgs(&["a", "b", "c"]), SimConfig::with_seed(2)).unwrap();
        let forger = generate_key(&mut ChaCha8Rng::seed_from_u64(99));
        let block = sim.node("a").unwrap().ledger.tip().unwrap().clone();
        let endorsement = block.endorse(PrincipalId::org("b").unwrap(), &forger);
        sim.inject_message(
            "b",
            "a",
            Message::Endorse {
                height: 0,
                hash: block.hash(),
                endorsement,
            },
        );
        sim.advance(200);
        let dropped: Vec<_> = sim
            .trace()
            .of_kind(EventKind::MsgDelivered)
            .filter(|e| e.field("dropped") == Some("bad_signature"))
            .collect();
        assert_eq!(dropped.len(), 1);
    }

    #[test]
    fn same_seed_same_trace() {
        let script = Script::parse("practitioner add dr hospital\ntick 1500\npatient add p1 hospital\n").unwrap();
        let a = run_scenario(&script, SimConfig::with_seed(7)).unwrap();
        let b = run_scenario(&script, SimConfig::with_seed(7)).unwrap();
        assert_eq!(a.trace().to_tsv(), b.trace().to_tsv());
        let c = run_scenario(&script, SimConfig::with_seed(8)).unwrap();
        assert_ne!(a.trace().to_tsv(), c.trace().to_tsv());
    }

    #[test]
    fn empty_script_is_genesis_only() {
        let sim = run_scenario(&Script::parse("# nothing\n").unwrap(), SimConfig::default()).unwrap();
        assert!(sim.trace().events().iter().all(|e| e.kind == EventKind::BlockCommitted && e.at == 0));
        assert_eq!(sim.trace().len(), DEFAULT_ORGS.len());
    }

    #[test]
    fn unknown_principal_carries_the_line() {
        let script = Script::parse("org add a\n\npractitioner add dr nowhere\n").unwrap();
        let err = run_scenario(&script, SimConfig::default()).unwrap_err();
        assert!(matches!(err, SimError::At { line: 3, .. }), "{err}");
        assert!(matches!(err.root(), SimError::UnknownPrincipal { .. }));
    }
}
