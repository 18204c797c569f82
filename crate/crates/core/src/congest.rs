//! Round-based message-passing simulation of the coloring protocol.
//!
//! Every vertex is a node holding only local state: its level, color,
//! timestamp, neighbor views with the color trackers, and a couple of
//! staging buffers. Nodes exchange one bounded message per edge direction
//! per round. Rounds are grouped into ten-round epochs; the position inside
//! the epoch (the *phase*) decides what every node does:
//!
//! * phase 1 — announce pending edge insertions to the new neighbors;
//! * phase 2 — run deletion lotteries, integrate announced insertions,
//!   detect color conflicts (the later timestamp takes a *token*; on a tie
//!   both endpoints do), and let token holders begin recoloring: strip
//!   their color and inquire their higher-or-equal neighborhood;
//! * phases 3–6 — neighbors apply the strips and reply with their color
//!   and level; recolorers sample a candidate avoiding colors seen at or
//!   below their level and held twice or more strictly above, then poll the
//!   neighborhood's candidates;
//! * phases 7–8 — adjacent recolorers that drew the same candidate defer
//!   each other to the next epoch; the rest commit, and a committer whose
//!   candidate is held by exactly one strictly-higher colored neighbor
//!   hands its token up to that neighbor;
//! * phase 9 — neighbors register the committed colors and granted tokens.
//!
//! Edge updates are validated against the simulator's ground-truth graph,
//! applied there immediately, and staged at the two endpoint nodes.
//! Deletions take effect at the nodes at once; insertions wait for the next
//! phase 1/2 to be announced and integrated. A node with a pending
//! insertion holds a *preemptive* token that postpones its participation
//! in recoloring. Messages are delivered one round after sending and only
//! if their edge still exists, so the protocol must stay correct when the
//! adversary deletes edges mid-epoch — dropped messages always concern
//! edges whose constraints vanished with them.
//!
//! The simulator keeps a full token ledger. Token births are charged to
//! updates such that no update is ever charged more than twice, which
//! bounds token creation by twice the update count; lifetimes and moves
//! are recorded for the telemetry tests. Per-(node, epoch) random streams
//! keep every outcome independent of node iteration order.

use indexmap::{IndexMap, IndexSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::batch::ScanOrder;
use crate::ids::{Color, EdgeKey, Level, Timestamp, UpdateEvent, UpdateKind, VertexId};
use crate::rng::{self, stream};
use crate::sampler::ColorSet;
use crate::state::{sample_level, InitError, UpdateError, MAX_DELTA};

/// Epoch number and phase (1..=10) of a one-based round.
pub fn epoch_phase(round: u64) -> (u64, u8) {
    assert!(round >= 1, "rounds are one-based");
    ((round - 1) / 10 + 1, ((round - 1) % 10 + 1) as u8)
}

pub type TokenId = u64;

/// One message on one edge direction. At most one is sent per direction
/// per round.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Message {
    pub from: VertexId,
    pub to: VertexId,
    pub payload: Payload,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Payload {
    /// Phase 1 → 2: attributes for a pending edge insertion.
    NbrInfo { level: Level, color: Option<Color>, timestamp: Timestamp },
    /// Phase 2 → 3: recolorer strips `strip` and asks for attributes.
    Inquire { strip: Option<Color> },
    /// Phase 3 → 4: attribute reply; recolorers answer `color: None`.
    InquiryReply { has_token: bool, color: Option<Color>, level: Level },
    /// Phase 4 → 5: ask for the peer's candidate color.
    SampleInquire,
    /// Phase 5 → 6: candidate reply; non-recolorers answer `None`.
    SampleReply { sampled: Option<Color> },
    /// Phase 7 → 8: the sender drew the same candidate; keep your token.
    DeferToken,
    /// Phase 8 → 9: the sender committed `color`; `grant` moves its token
    /// to the one neighbor that still holds that color.
    Resolution { color: Color, grant: Option<TokenId> },
}

impl Payload {
    fn kind_index(&self) -> usize {
        match self {
            Payload::NbrInfo { .. } => 0,
            Payload::Inquire { .. } => 1,
            Payload::InquiryReply { .. } => 2,
            Payload::SampleInquire => 3,
            Payload::SampleReply { .. } => 4,
            Payload::DeferToken => 5,
            Payload::Resolution { .. } => 6,
        }
    }

    /// The only phase at which this payload may be delivered.
    fn delivery_phase(&self) -> u8 {
        match self {
            Payload::NbrInfo { .. } => 2,
            Payload::Inquire { .. } => 3,
            Payload::InquiryReply { .. } => 4,
            Payload::SampleInquire => 5,
            Payload::SampleReply { .. } => 6,
            Payload::DeferToken => 8,
            Payload::Resolution { .. } => 9,
        }
    }
}

pub const MESSAGE_KINDS: [&str; 7] = [
    "nbr_info",
    "inquire",
    "inquiry_reply",
    "sample_inquire",
    "sample_reply",
    "defer_token",
    "resolution",
];

/// Message traffic counters.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct MessageStats {
    pub sent: u64,
    pub delivered: u64,
    /// Sent on a live edge, deleted before the delivery round.
    pub dropped_in_flight: u64,
    /// Queued for an edge that was already gone at collection. The
    /// protocol filters sends by current adjacency, so this staying zero
    /// is itself an invariant.
    pub dropped_at_send: u64,
    /// Sent counts indexed like [`MESSAGE_KINDS`].
    pub by_kind: [u64; 7],
}

/// Lifetime record of one token.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct TokenRecord {
    born: u64,
    died: Option<u64>,
    moves: u32,
}

/// Every token ever created, with the update-charging discipline.
#[derive(Clone, Debug, Default)]
pub struct TokenLedger {
    next_id: TokenId,
    records: IndexMap<TokenId, TokenRecord>,
    charges: IndexMap<u64, u8>,
    pub births: u64,
    pub deaths: u64,
    pub moves: u64,
    pub merges: u64,
}

impl TokenLedger {
    /// Create a token, charging `update_id`. Panics if that update has
    /// already been charged twice — the charging discipline guarantees a
    /// free slot, so a panic means the discipline broke.
    fn birth(&mut self, round: u64, update_id: u64) -> TokenId {
        let slot = self.charges.entry(update_id).or_insert(0);
        *slot += 1;
        assert!(*slot <= 2, "update {update_id} charged for a third token");
        let id = self.next_id;
        self.next_id += 1;
        self.records.insert(id, TokenRecord { born: round, died: None, moves: 0 });
        self.births += 1;
        id
    }

    fn death(&mut self, id: TokenId, round: u64) {
        let rec = self.records.get_mut(&id).expect("death of an unknown token");
        assert!(rec.died.is_none(), "token {id} died twice");
        rec.died = Some(round);
        self.deaths += 1;
    }

    fn record_move(&mut self, id: TokenId) {
        self.records.get_mut(&id).expect("move of an unknown token").moves += 1;
        self.moves += 1;
    }

    /// Completed-plus-censored lifetimes in rounds, as of `now`.
    pub fn lifetimes(&self, now: u64) -> Vec<u64> {
        self.records.values().map(|r| r.died.unwrap_or(now) - r.born).collect()
    }

    /// Times each update id has funded a token birth; all values are ≤ 2.
    pub fn charges(&self) -> &IndexMap<u64, u8> {
        &self.charges
    }
}

/// A node's regular (recoloring) token.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
enum Reg {
    #[default]
    None,
    /// Waiting for an epoch in which the node can recolor.
    Held(TokenId),
    /// Phase 7–8 limbo while candidate clashes are checked.
    Pending(TokenId),
    /// Born this round; its id is settled at round end (it may inherit the
    /// preemptive token's id).
    Newborn(BirthCause),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum BirthCause {
    /// An integrated insertion collided; a preemptive token necessarily
    /// existed, so the id is inherited from it.
    Conflict,
    /// A deletion lottery fired. If no preemptive token exists, the birth
    /// is charged to one of the deletions that fed the lottery.
    Lottery { fallback_charge: u64 },
}

/// What a node knows about one current neighbor.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct NbrAttrs {
    level: Level,
    color: Option<Color>,
    timestamp: Timestamp,
}

/// Stored phase-3 reply: the peer's attributes for this epoch.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct PeerReply {
    has_token: bool,
    color: Option<Color>,
    level: Level,
}

struct Node {
    id: VertexId,
    level: Level,
    color: Option<Color>,
    timestamp: Timestamp,
    adj: IndexSet<VertexId>,
    nb_ge: IndexSet<VertexId>,
    nb_gt: IndexSet<VertexId>,
    d_le: u32,
    info: IndexMap<VertexId, NbrAttrs>,
    low_mult: IndexMap<Color, u32>,
    sampler: ColorSet,
    token: Reg,
    preemptive: Option<TokenId>,
    b_ins: IndexMap<VertexId, u64>,
    todo_ins: IndexMap<VertexId, u64>,
    gap: u32,
    gap_events: Vec<u64>,
    participating: bool,
    tentative: Option<Color>,
    replies: IndexMap<VertexId, PeerReply>,
    samples: IndexMap<VertexId, Option<Color>>,
    rng: ChaCha8Rng,
}

impl Node {
    fn register_low(&mut self, c: Color) {
        let slot = self.low_mult.entry(c).or_insert(0);
        *slot += 1;
        if *slot == 1 {
            self.sampler.insert(c).expect("tracker and sampler agree");
        }
    }

    fn retract_low(&mut self, c: Color) {
        let slot = self.low_mult.get_mut(&c).expect("retracting an untracked color");
        *slot -= 1;
        if *slot == 0 {
            self.low_mult.swap_remove(&c);
            self.sampler.delete(c).expect("tracker and sampler agree");
        }
    }

    fn has_regular_token(&self) -> bool {
        !matches!(self.token, Reg::None)
    }

    /// Integrate an announced insertion whose attributes arrived.
    fn integrate(&mut self, w: VertexId, attrs: NbrAttrs) {
        self.adj.insert(w);
        self.info.insert(w, attrs);
        if attrs.level >= self.level {
            self.nb_ge.insert(w);
        }
        if attrs.level > self.level {
            self.nb_gt.insert(w);
        } else {
            self.d_le += 1;
            if let Some(c) = attrs.color {
                self.register_low(c);
            }
        }
    }

    /// A deletion takes effect immediately: cancel if the insertion was
    /// still pending, otherwise unlink the integrated neighbor.
    fn apply_deletion(&mut self, w: VertexId, update_id: u64) {
        if self.b_ins.swap_remove(&w).is_some() || self.todo_ins.swap_remove(&w).is_some() {
            return;
        }
        let attrs = self.info.swap_remove(&w).expect("deletion of an unknown neighbor");
        self.adj.swap_remove(&w);
        self.nb_ge.swap_remove(&w);
        self.nb_gt.swap_remove(&w);
        if attrs.level <= self.level {
            self.d_le -= 1;
            self.gap += 1;
            self.gap_events.push(update_id);
            if let Some(c) = attrs.color {
                self.retract_low(c);
            }
        }
    }
}

/// One row of per-round telemetry; [`std::fmt::Display`] renders the
/// `round,epoch,phase,updates,tokens,preemptive,messages,ok|FAIL` line.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RoundReport {
    pub round: u64,
    pub epoch: u64,
    pub phase: u8,
    /// Updates accepted this round.
    pub updates: u32,
    /// Live recoloring tokens after the round (held, pending, in flight).
    pub tokens: u32,
    /// Live preemptive tokens after the round.
    pub preemptive: u32,
    /// Messages sent this round.
    pub messages: u64,
    pub ok: bool,
    /// First failed invariant, when `ok` is false.
    pub detail: Option<String>,
}

impl std::fmt::Display for RoundReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.round,
            self.epoch,
            self.phase,
            self.updates,
            self.tokens,
            self.preemptive,
            self.messages,
            if self.ok { "ok" } else { "FAIL" }
        )
    }
}

/// A round's outcome: the telemetry row plus any rejected updates.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub report: RoundReport,
    pub rejected: Vec<(UpdateEvent, UpdateError)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("still not quiescent after {rounds} drain rounds")]
pub struct DrainTimeout {
    pub rounds: u64,
}

/// The simulator: ground-truth graph, nodes, in-flight messages, ledger.
pub struct CongestSim {
    n: u32,
    delta: u32,
    seed: u64,
    round: u64,
    nodes: Vec<Node>,
    ground: IndexSet<EdgeKey>,
    degrees: Vec<u32>,
    pending: Vec<Message>,
    ledger: TokenLedger,
    stats: MessageStats,
    updates_accepted: u64,
    next_update_id: u64,
    scan: ScanOrder,
    strict: bool,
    deep_verify: bool,
    last_ok: bool,
}

impl CongestSim {
    pub fn new(n: u32, delta: u32, seed: u64) -> Result<Self, InitError> {
        if n == 0 {
            return Err(InitError::NoVertices);
        }
        if delta == 0 {
            return Err(InitError::ZeroDegreeBound);
        }
        if delta > MAX_DELTA {
            return Err(InitError::DegreeBoundTooLarge(delta));
        }
        let mut init_rng = rng::stream_rng(seed, stream::CONGEST_INIT, &[]);
        let nodes = (0..n)
            .map(|i| {
                let level = sample_level(delta, &mut init_rng);
                let color = Color(init_rng.gen_range(1..=delta + 1));
                Node {
                    id: VertexId(i),
                    level,
                    color: Some(color),
                    timestamp: Timestamp(0),
                    adj: IndexSet::new(),
                    nb_ge: IndexSet::new(),
                    nb_gt: IndexSet::new(),
                    d_le: 0,
                    info: IndexMap::new(),
                    low_mult: IndexMap::new(),
                    sampler: ColorSet::new(delta + 1),
                    token: Reg::None,
                    preemptive: None,
                    b_ins: IndexMap::new(),
                    todo_ins: IndexMap::new(),
                    gap: 0,
                    gap_events: Vec::new(),
                    participating: false,
                    tentative: None,
                    replies: IndexMap::new(),
                    samples: IndexMap::new(),
                    rng: rng::stream_rng(seed, stream::CONGEST_NODE, &[i as u64, 1]),
                }
            })
            .collect();
        Ok(CongestSim {
            n,
            delta,
            seed,
            round: 0,
            nodes,
            ground: IndexSet::new(),
            degrees: vec![0; n as usize],
            pending: Vec::new(),
            ledger: TokenLedger::default(),
            stats: MessageStats::default(),
            updates_accepted: 0,
            next_update_id: 0,
            scan: ScanOrder::Ascending,
            strict: true,
            deep_verify: false,
            last_ok: true,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn delta(&self) -> u32 {
        self.delta
    }

    /// Rounds completed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn updates_accepted(&self) -> u64 {
        self.updates_accepted
    }

    pub fn message_stats(&self) -> &MessageStats {
        &self.stats
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    pub fn node_color(&self, v: VertexId) -> Option<Color> {
        self.nodes[v.idx()].color
    }

    pub fn node_level(&self, v: VertexId) -> Level {
        self.nodes[v.idx()].level
    }

    pub fn node_has_regular_token(&self, v: VertexId) -> bool {
        self.nodes[v.idx()].has_regular_token()
    }

    pub fn node_has_preemptive_token(&self, v: VertexId) -> bool {
        self.nodes[v.idx()].preemptive.is_some()
    }

    pub fn edge_count(&self) -> usize {
        self.ground.len()
    }

    /// Panic on a failed invariant (default) instead of reporting FAIL.
    pub fn set_strict(&mut self, strict: bool) {
        self.strict = strict;
    }

    /// Re-derive every node's views from scratch after each round.
    pub fn set_deep_verify(&mut self, on: bool) {
        self.deep_verify = on;
    }

    #[doc(hidden)]
    pub fn set_node_scan(&mut self, scan: ScanOrder) {
        self.scan = scan;
    }

    /// No tokens anywhere, nothing staged, nothing in flight.
    pub fn is_quiescent(&self) -> bool {
        self.pending.is_empty()
            && self.nodes.iter().all(|n| {
                matches!(n.token, Reg::None)
                    && n.preemptive.is_none()
                    && n.b_ins.is_empty()
                    && n.todo_ins.is_empty()
                    && n.gap == 0
            })
    }

    /// Step with no updates until quiescent, at most `max_rounds` times.
    pub fn drain(&mut self, max_rounds: u64) -> Result<u64, DrainTimeout> {
        let mut used = 0;
        while !self.is_quiescent() {
            if used >= max_rounds {
                return Err(DrainTimeout { rounds: used });
            }
            self.step(&[]);
            used += 1;
        }
        Ok(used)
    }

    /// Advance one round, applying `updates` at its start.
    pub fn step(&mut self, updates: &[UpdateEvent]) -> StepReport {
        self.round += 1;
        let (epoch, phase) = epoch_phase(self.round);
        let sent_before = self.stats.sent;

        // Updates: validate against ground truth, apply there, stage at
        // the endpoints. Deletions reach the views immediately.
        let mut rejected = Vec::new();
        let mut accepted = 0u32;
        for &ev in updates {
            match self.apply_update(ev) {
                Ok(()) => accepted += 1,
                Err(e) => rejected.push((ev, e)),
            }
        }

        // Deliver last round's messages, dropping those whose edge died.
        let mut inboxes: IndexMap<VertexId, Vec<Message>> = IndexMap::new();
        for msg in std::mem::take(&mut self.pending) {
            if self.ground.contains(&EdgeKey::new(msg.from, msg.to)) {
                assert_eq!(
                    msg.payload.delivery_phase(),
                    phase,
                    "{:?} delivered at phase {phase}",
                    msg.payload
                );
                self.stats.delivered += 1;
                inboxes.entry(msg.to).or_default().push(msg);
            } else {
                self.stats.dropped_in_flight += 1;
                if let Payload::Resolution { grant: Some(id), .. } = msg.payload {
                    // The conflict this token chased vanished with the edge.
                    self.ledger.death(id, self.round);
                }
            }
        }
        for inbox in inboxes.values_mut() {
            inbox.sort_by_key(|m| m.from);
        }

        // Fresh per-node streams at each epoch start.
        if phase == 1 {
            for node in &mut self.nodes {
                node.rng =
                    rng::stream_rng(self.seed, stream::CONGEST_NODE, &[node.id.0 as u64, epoch]);
                node.participating = false;
            }
        }

        // Node processing: the update machine, then the recoloring machine.
        let order: Vec<usize> = match self.scan {
            ScanOrder::Ascending => (0..self.n as usize).collect(),
            ScanOrder::Descending => (0..self.n as usize).rev().collect(),
        };
        let mut outgoing: Vec<Message> = Vec::new();
        for i in order {
            let inbox = inboxes.swap_remove(&VertexId(i as u32)).unwrap_or_default();
            let node = &mut self.nodes[i];
            node_update_phase(node, phase, &inbox, self.delta, &mut outgoing);
            node_recolor_phase(node, phase, epoch, &inbox, &mut self.ledger, self.round, &mut outgoing);
        }

        // Collect sends: one per edge direction, edge must still exist.
        let mut seen: IndexSet<(u32, u32)> = IndexSet::new();
        for msg in outgoing {
            assert!(
                seen.insert((msg.from.0, msg.to.0)),
                "two messages on {} -> {} in one round",
                msg.from,
                msg.to
            );
            self.stats.sent += 1;
            self.stats.by_kind[msg.payload.kind_index()] += 1;
            if self.ground.contains(&EdgeKey::new(msg.from, msg.to)) {
                self.pending.push(msg);
            } else {
                self.stats.dropped_at_send += 1;
                if let Payload::Resolution { grant: Some(id), .. } = msg.payload {
                    self.ledger.death(id, self.round);
                }
            }
        }

        // Round-end token maintenance, in vertex order (ids stay stable
        // under scan-order permutation).
        for i in 0..self.n as usize {
            self.settle_tokens(i);
        }

        // Invariant checks.
        let detail = self.check_round();
        let ok = detail.is_none();
        self.last_ok = ok;
        if let Some(d) = &detail {
            assert!(!self.strict, "round {} invariant failure: {d}", self.round);
        }

        let (tokens, preemptive) = self.live_token_counts();
        StepReport {
            report: RoundReport {
                round: self.round,
                epoch,
                phase,
                updates: accepted,
                tokens,
                preemptive,
                messages: self.stats.sent - sent_before,
                ok,
                detail,
            },
            rejected,
        }
    }

    fn apply_update(&mut self, ev: UpdateEvent) -> Result<(), UpdateError> {
        for w in [ev.u, ev.v] {
            if w.0 >= self.n {
                return Err(UpdateError::VertexOutOfRange { v: w, n: self.n });
            }
        }
        if ev.u == ev.v {
            return Err(UpdateError::LoopEdge { v: ev.u });
        }
        let key = ev.key();
        match ev.kind {
            UpdateKind::Insert => {
                if self.ground.contains(&key) {
                    return Err(UpdateError::DuplicateEdge { u: ev.u, v: ev.v });
                }
                for w in [ev.u, ev.v] {
                    if self.degrees[w.idx()] >= self.delta {
                        return Err(UpdateError::DegreeOverflow { v: w, delta: self.delta });
                    }
                }
                self.ground.insert(key);
                self.degrees[ev.u.idx()] += 1;
                self.degrees[ev.v.idx()] += 1;
                let id = self.next_update_id;
                self.next_update_id += 1;
                self.nodes[ev.u.idx()].b_ins.insert(ev.v, id);
                self.nodes[ev.v.idx()].b_ins.insert(ev.u, id);
            }
            UpdateKind::Delete => {
                if !self.ground.swap_remove(&key) {
                    return Err(UpdateError::MissingEdge { u: ev.u, v: ev.v });
                }
                self.degrees[ev.u.idx()] -= 1;
                self.degrees[ev.v.idx()] -= 1;
                let id = self.next_update_id;
                self.next_update_id += 1;
                self.nodes[ev.u.idx()].apply_deletion(ev.v, id);
                self.nodes[ev.v.idx()].apply_deletion(ev.u, id);
            }
        }
        self.updates_accepted += 1;
        Ok(())
    }

    /// Resolve newborn tokens and flip preemptive tokens per the pending
    /// buffers, charging births to updates.
    fn settle_tokens(&mut self, i: usize) {
        let round = self.round;
        let node = &mut self.nodes[i];
        let pending_now = !node.b_ins.is_empty() || !node.todo_ins.is_empty();

        if let Reg::Newborn(cause) = node.token {
            if let Some(pid) = node.preemptive.take() {
                // Morph: the recoloring token continues the pending
                // insertion's token; no new identity, no new charge.
                node.token = Reg::Held(pid);
                if pending_now {
                    // Still-pending arrivals need a preemptive token again;
                    // its birth is funded by an arrival from this round.
                    let charge = min_uncharged(
                        node.b_ins.values().chain(node.todo_ins.values()),
                        &self.ledger.charges,
                    )
                    .expect("a persisting pending set holds an uncharged arrival");
                    node.preemptive = Some(self.ledger.birth(round, charge));
                }
            } else {
                let BirthCause::Lottery { fallback_charge } = cause else {
                    panic!("a conflict-born token implies a preemptive token to inherit")
                };
                node.token = Reg::Held(self.ledger.birth(round, fallback_charge));
            }
            return;
        }

        match (node.preemptive, pending_now) {
            (None, true) => {
                let charge = min_uncharged(
                    node.b_ins.values().chain(node.todo_ins.values()),
                    &self.ledger.charges,
                )
                .expect("a fresh pending set is entirely uncharged");
                node.preemptive = Some(self.ledger.birth(round, charge));
            }
            (Some(id), false) => {
                self.ledger.death(id, round);
                node.preemptive = None;
            }
            _ => {}
        }
    }

    fn live_token_counts(&self) -> (u32, u32) {
        let mut regular = 0;
        let mut preemptive = 0;
        for node in &self.nodes {
            if node.has_regular_token() {
                regular += 1;
            }
            if node.preemptive.is_some() {
                preemptive += 1;
            }
        }
        for msg in &self.pending {
            if matches!(msg.payload, Payload::Resolution { grant: Some(_), .. }) {
                regular += 1;
            }
        }
        (regular, preemptive)
    }

    /// Per-round invariants; returns the first failure.
    fn check_round(&self) -> Option<String> {
        // An uncolored node is mid-recoloring and must hold its token.
        for node in &self.nodes {
            if node.color.is_none() && !node.has_regular_token() {
                return Some(format!("node {} is uncolored without a token", node.id));
            }
            if matches!(node.token, Reg::Newborn(_)) {
                return Some(format!("node {} kept an unsettled newborn token", node.id));
            }
        }
        // Tokens are unique: no id at two places at once.
        let mut ids: IndexSet<TokenId> = IndexSet::new();
        for node in &self.nodes {
            let held = match node.token {
                Reg::Held(id) | Reg::Pending(id) => Some(id),
                _ => None,
            };
            for id in held.into_iter().chain(node.preemptive) {
                if !ids.insert(id) {
                    return Some(format!("token {id} is held in two places"));
                }
            }
        }
        for msg in &self.pending {
            if let Payload::Resolution { grant: Some(id), .. } = msg.payload {
                if !ids.insert(id) {
                    return Some(format!("token {id} is both held and in flight"));
                }
            }
        }
        // Token creation stays within twice the accepted updates.
        if self.ledger.births > 2 * self.updates_accepted {
            return Some(format!(
                "{} token births exceed twice the {} updates",
                self.ledger.births, self.updates_accepted
            ));
        }
        // Partial properness: a monochromatic edge needs a token on at
        // least one endpoint — held there, or granted and still in flight
        // to it. A committer and its hand-off target share a color for the
        // one round the grant spends on the wire; the granted token is the
        // edge's coverage, and it dies with the edge if that is deleted.
        let mut granted_to: IndexSet<VertexId> = IndexSet::new();
        for msg in &self.pending {
            if matches!(msg.payload, Payload::Resolution { grant: Some(_), .. }) {
                granted_to.insert(msg.to);
            }
        }
        for &EdgeKey(u, v) in &self.ground {
            let a = &self.nodes[u.idx()];
            let b = &self.nodes[v.idx()];
            if let (Some(ca), Some(cb)) = (a.color, b.color) {
                if ca == cb {
                    let covered = a.has_regular_token()
                        || a.preemptive.is_some()
                        || b.has_regular_token()
                        || b.preemptive.is_some()
                        || granted_to.contains(&u)
                        || granted_to.contains(&v);
                    if !covered {
                        return Some(format!("edge {u}-{v} is monochromatic and token-free"));
                    }
                }
            }
        }
        if self.deep_verify {
            if let Err(d) = self.verify_local_views() {
                return Some(d);
            }
        }
        None
    }

    /// Rebuild every node's views from the ground truth and compare.
    /// Color knowledge is only compared at quiescence, when no protocol
    /// traffic can be refreshing it.
    pub fn verify_local_views(&self) -> Result<(), String> {
        let quiescent = self.is_quiescent();
        for node in &self.nodes {
            let v = node.id;
            let mut expected_adj: IndexSet<VertexId> = IndexSet::new();
            for &EdgeKey(a, b) in &self.ground {
                if a == v {
                    expected_adj.insert(b);
                } else if b == v {
                    expected_adj.insert(a);
                }
            }
            for w in node.b_ins.keys().chain(node.todo_ins.keys()) {
                if !expected_adj.swap_remove(w) {
                    return Err(format!("node {v} has a pending insertion for non-edge {w}"));
                }
            }
            let mut got: Vec<VertexId> = node.adj.iter().copied().collect();
            let mut want: Vec<VertexId> = expected_adj.iter().copied().collect();
            got.sort_unstable();
            want.sort_unstable();
            if got != want {
                return Err(format!("node {v} adjacency drifted: has {got:?}, wants {want:?}"));
            }

            let mut d_le = 0u32;
            for &w in &node.adj {
                let lw = self.nodes[w.idx()].level;
                let attrs = node.info.get(&w).ok_or(format!("node {v} lacks attrs for {w}"))?;
                if attrs.level != lw {
                    return Err(format!("node {v} stores level {} for {w} (true {lw})", attrs.level));
                }
                if node.nb_ge.contains(&w) != (lw >= node.level) {
                    return Err(format!("node {v} mis-partitions {w} in the ≥ view"));
                }
                if node.nb_gt.contains(&w) != (lw > node.level) {
                    return Err(format!("node {v} mis-partitions {w} in the > view"));
                }
                if lw <= node.level {
                    d_le += 1;
                }
            }
            if node.info.len() != node.adj.len() {
                return Err(format!("node {v} stores attrs for non-neighbors"));
            }
            if d_le != node.d_le {
                return Err(format!("node {v} counts d_le {} (true {d_le})", node.d_le));
            }

            // Trackers must mirror the stored attribute map exactly.
            let mut expect_mult: IndexMap<Color, u32> = IndexMap::new();
            for (&w, attrs) in &node.info {
                debug_assert!(node.adj.contains(&w));
                if attrs.level <= node.level {
                    if let Some(c) = attrs.color {
                        *expect_mult.entry(c).or_insert(0) += 1;
                    }
                }
            }
            let mut got_mult: Vec<(Color, u32)> =
                node.low_mult.iter().map(|(&c, &k)| (c, k)).collect();
            let mut want_mult: Vec<(Color, u32)> =
                expect_mult.iter().map(|(&c, &k)| (c, k)).collect();
            got_mult.sort_unstable();
            want_mult.sort_unstable();
            if got_mult != want_mult {
                return Err(format!("node {v} color tracker drifted from its attribute store"));
            }
            let mut sampler_colors = node.sampler.members_sorted();
            sampler_colors.sort_unstable();
            let tracked: Vec<Color> = want_mult.iter().map(|&(c, _)| c).collect();
            if sampler_colors != tracked {
                return Err(format!("node {v} sampler disagrees with its tracker"));
            }

            if quiescent {
                if node.color.is_none() {
                    return Err(format!("node {v} is uncolored at quiescence"));
                }
                // Commit notices travel only up the level order, so only
                // the knowledge feeding the tracker must be current;
                // strictly-higher colors are re-fetched every epoch.
                for (&w, attrs) in &node.info {
                    if attrs.level <= node.level && attrs.color != self.nodes[w.idx()].color {
                        return Err(format!(
                            "node {v} has stale color knowledge of {w} at quiescence"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Pick the smallest update id in `ids` with a free charge slot. An update
/// may fund one token per endpoint; the candidate pools at each birth site
/// only ever hold arrivals this node has not charged before, so a global
/// count below two means this node still has its slot.
fn min_uncharged<'a>(
    ids: impl Iterator<Item = &'a u64>,
    charges: &IndexMap<u64, u8>,
) -> Option<u64> {
    ids.copied().filter(|id| charges.get(id).is_none_or(|&c| c < 2)).min()
}

/// The update half of a node's round: announce and integrate insertions,
/// run deletion lotteries, detect conflicts.
fn node_update_phase(
    node: &mut Node,
    phase: u8,
    inbox: &[Message],
    delta: u32,
    out: &mut Vec<Message>,
) {
    match phase {
        1 => {
            debug_assert!(node.todo_ins.is_empty(), "announcements must not pile up");
            node.todo_ins = std::mem::take(&mut node.b_ins);
            for &w in node.todo_ins.keys() {
                out.push(Message {
                    from: node.id,
                    to: w,
                    payload: Payload::NbrInfo {
                        level: node.level,
                        color: node.color,
                        timestamp: node.timestamp,
                    },
                });
            }
        }
        2 => {
            // Deletion lottery over the neighbors lost since last phase 2,
            // before the pending insertions join the views.
            if node.gap > 0 {
                let den = delta + 1 - node.d_le;
                let win = node.rng.gen_range(0..den) < node.gap;
                if win && !node.has_regular_token() {
                    // Deletion ids reach only their two endpoints' gap
                    // lists and each list is cleared every phase 2, so the
                    // smallest one still has a free charge slot here.
                    let fallback_charge = node
                        .gap_events
                        .iter()
                        .copied()
                        .min()
                        .expect("a positive gap has at least one contributing deletion");
                    node.token = Reg::Newborn(BirthCause::Lottery { fallback_charge });
                }
                node.gap = 0;
                node.gap_events.clear();
            }

            // Integrate announced insertions whose attributes arrived.
            // Cancellation removes an entry before its info could be lost,
            // so every remaining entry has a message here.
            let mut infos: IndexMap<VertexId, NbrAttrs> = IndexMap::new();
            for msg in inbox {
                if let Payload::NbrInfo { level, color, timestamp } = msg.payload {
                    infos.insert(msg.from, NbrAttrs { level, color, timestamp });
                }
            }
            let mut todo: Vec<VertexId> = node.todo_ins.keys().copied().collect();
            todo.sort_unstable();
            node.todo_ins.clear();
            for w in todo {
                let attrs = *infos
                    .get(&w)
                    .expect("cancellation keeps announced insertions and their info in step");
                node.integrate(w, attrs);
                if attrs.color == node.color
                    && node.color.is_some()
                    && node.timestamp >= attrs.timestamp
                    && !node.has_regular_token()
                {
                    node.token = Reg::Newborn(BirthCause::Conflict);
                }
            }
        }
        _ => {}
    }
}

/// The recoloring half of a node's round.
fn node_recolor_phase(
    node: &mut Node,
    phase: u8,
    epoch: u64,
    inbox: &[Message],
    ledger: &mut TokenLedger,
    round: u64,
    out: &mut Vec<Message>,
) {
    match phase {
        2 => {
            // Preemptive tokens postpone participation: the views are
            // about to change again, so recoloring now could chase a
            // stale neighborhood.
            node.participating =
                matches!(node.token, Reg::Held(_) | Reg::Newborn(_)) && node.preemptive.is_none();
            if node.participating {
                node.replies.clear();
                node.samples.clear();
                node.tentative = None;
                let strip = node.color.take();
                for &w in &node.nb_ge {
                    out.push(Message { from: node.id, to: w, payload: Payload::Inquire { strip } });
                }
            }
        }
        3 => {
            for msg in inbox {
                let Payload::Inquire { strip } = msg.payload else { continue };
                let u = msg.from;
                let attrs = node.info.get_mut(&u).expect("inquiry from a non-neighbor");
                debug_assert!(attrs.level <= node.level, "inquiries travel up the levels");
                let lvl = attrs.level;
                let old = attrs.color.take();
                debug_assert_eq!(old, strip, "strip disagrees with stored knowledge");
                if let Some(c) = old {
                    if lvl <= node.level {
                        node.retract_low(c);
                    }
                }
                out.push(Message {
                    from: node.id,
                    to: u,
                    payload: Payload::InquiryReply {
                        has_token: node.has_regular_token(),
                        color: node.color,
                        level: node.level,
                    },
                });
            }
        }
        4 => {
            if !node.participating {
                return;
            }
            for msg in inbox {
                if let Payload::InquiryReply { has_token, color, level } = msg.payload {
                    node.replies.insert(msg.from, PeerReply { has_token, color, level });
                }
            }
            // Sample until at most one strictly-higher neighbor holds the
            // candidate; colors at or below the level are never drawn.
            let higher: Vec<Color> = node
                .replies
                .iter()
                .filter(|(w, r)| node.adj.contains(*w) && r.level > node.level)
                .filter_map(|(_, r)| r.color)
                .collect();
            let cand = loop {
                let sample = node.sampler.sample_empty(&mut node.rng).expect("palette non-empty");
                let holders = higher.iter().filter(|&&c| c == sample.color).count();
                if holders <= 1 {
                    break sample.color;
                }
            };
            node.tentative = Some(cand);
            for &w in &node.nb_ge {
                out.push(Message { from: node.id, to: w, payload: Payload::SampleInquire });
            }
        }
        5 => {
            for msg in inbox {
                if !matches!(msg.payload, Payload::SampleInquire) {
                    continue;
                }
                let sampled = if node.participating { node.tentative } else { None };
                out.push(Message {
                    from: node.id,
                    to: msg.from,
                    payload: Payload::SampleReply { sampled },
                });
            }
        }
        6 => {
            if node.participating {
                for msg in inbox {
                    if let Payload::SampleReply { sampled } = msg.payload {
                        node.samples.insert(msg.from, sampled);
                    }
                }
            }
        }
        7 => {
            if !node.participating {
                return;
            }
            let id = match node.token {
                Reg::Held(id) => id,
                other => panic!("participant entered phase 7 with token {other:?}"),
            };
            node.token = Reg::Pending(id);
            for (&w, &s) in &node.samples {
                if node.adj.contains(&w) && s.is_some() && s == node.tentative {
                    out.push(Message { from: node.id, to: w, payload: Payload::DeferToken });
                }
            }
        }
        8 => {
            let deferred_by_peer = inbox.iter().any(|m| matches!(m.payload, Payload::DeferToken));
            if deferred_by_peer && !node.participating {
                // A lower-level participant saw our candidate; but we have
                // no candidate this epoch, so nothing to defer.
                debug_assert!(false, "defer sent to a non-participant");
            }
            if !node.participating {
                return;
            }
            let id = match node.token {
                Reg::Pending(id) => id,
                other => panic!("participant entered phase 8 with token {other:?}"),
            };
            let clash = deferred_by_peer
                || node.samples.iter().any(|(w, &s)| {
                    node.adj.contains(w) && s.is_some() && s == node.tentative
                });
            if clash {
                // Try again next epoch with a fresh draw.
                node.token = Reg::Held(id);
                return;
            }
            let cand = node.tentative.expect("participants sampled at phase 4");
            node.color = Some(cand);
            node.timestamp = Timestamp(epoch);
            node.token = Reg::None;
            let holders: Vec<VertexId> = node
                .replies
                .iter()
                .filter(|(w, r)| {
                    node.adj.contains(*w) && r.level > node.level && r.color == Some(cand)
                })
                .map(|(&w, _)| w)
                .collect();
            debug_assert!(holders.len() <= 1, "acceptance left multiple holders");
            let grant_to = holders.first().copied();
            if grant_to.is_none() {
                ledger.death(id, round);
            }
            for &w in &node.nb_ge {
                let grant = (Some(w) == grant_to).then_some(id);
                out.push(Message {
                    from: node.id,
                    to: w,
                    payload: Payload::Resolution { color: cand, grant },
                });
            }
        }
        9 => {
            for msg in inbox {
                let Payload::Resolution { color, grant } = msg.payload else { continue };
                let u = msg.from;
                if let Some(attrs) = node.info.get_mut(&u) {
                    debug_assert!(attrs.color.is_none(), "resolution over unstripped knowledge");
                    attrs.color = Some(color);
                    if attrs.level <= node.level {
                        node.register_low(color);
                    }
                }
                if let Some(id) = grant {
                    if node.has_regular_token() {
                        // Another recoloring is already owed; fold the
                        // arriving token into it.
                        ledger.death(id, round);
                        ledger.merges += 1;
                    } else {
                        ledger.record_move(id);
                        node.token = Reg::Held(id);
                    }
                }
            }
        }
        _ => {}
    }
}
