//! The batch-dynamic coloring engine.
//!
//! Updates arrive as a batch of edge insertions or a batch of deletions.
//! Structure is applied first, edge by edge (invalid edges are reported and
//! skipped, the rest of the batch proceeds); the coloring is then repaired
//! for all affected vertices together in synchronized rounds:
//!
//! 1. every active vertex samples a candidate color from its palette,
//! 2. adjacent actives that picked the same candidate are both deferred to
//!    the next round,
//! 3. the survivors commit; a survivor whose candidate is held by exactly
//!    one strictly-higher-level colored neighbor takes that color anyway and
//!    hands the conflict up — the neighbor is stripped and joins the next
//!    round's active set.
//!
//! At every round boundary the colored part of the graph is properly
//! colored and the uncolored vertices are exactly the active set; the
//! optional audit mode re-verifies this after each round.
//!
//! Candidate draws and deletion lotteries use per-vertex random streams
//! keyed by `(batch ordinal, round, vertex)`, so the outcome is independent
//! of the order in which the engine happens to walk the active set. All
//! colors committed by one batch share that batch's ordinal as timestamp;
//! conflicts between equal timestamps resolve toward the higher vertex id.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use thiserror::Error;

use crate::ids::{Color, Timestamp, VertexId};
use crate::rng::{self, stream};
use crate::state::{ColoringState, ConsistencyReport, InitError, UpdateError};
use crate::work::WorkStats;

/// A batch run failed midway; the engine state is no longer usable.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("recoloring did not terminate within {cap} rounds")]
    RoundLimitExceeded { cap: u32 },
    #[error("round {round} boundary check failed: {detail}")]
    AuditFailed { round: u32, detail: String },
}

/// Which way the engine walks the active set. The committed coloring must
/// not depend on this; the hook exists so tests can prove it does not.
#[doc(hidden)]
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum ScanOrder {
    #[default]
    Ascending,
    Descending,
}

/// Per-round counters for one batch.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct RoundRow {
    pub round_index: u32,
    /// Active vertices entering the round.
    pub active: u64,
    /// Vertices deferred because an active neighbor drew the same candidate.
    pub deferred_conflicts: u64,
    /// Conflicts handed up to a higher-level colored neighbor.
    pub handoffs: u64,
    /// Vertices whose candidate became their color this round.
    pub committed: u64,
}

/// What one batch did.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BatchTrace {
    pub batch_index: u64,
    /// Vertices uncolored when the first round began, ascending.
    pub initial_active: Vec<VertexId>,
    pub rounds: Vec<RoundRow>,
    /// Distinct vertices that were active at any point.
    pub distinct_active: u64,
    /// Work consumed by the whole batch (structure + recoloring).
    pub work: WorkStats,
}

impl BatchTrace {
    /// Mean number of rounds a vertex spent in the active set.
    pub fn mean_active_rounds(&self) -> f64 {
        if self.distinct_active == 0 {
            return 0.0;
        }
        let slots: u64 = self.rounds.iter().map(|r| r.active).sum();
        slots as f64 / self.distinct_active as f64
    }
}

/// Result of a batch: its trace plus the edges that were skipped.
#[derive(Clone, Debug)]
pub struct BatchReport {
    pub trace: BatchTrace,
    pub rejected: Vec<((VertexId, VertexId), UpdateError)>,
}

/// Batch-dynamic (Δ+1)-coloring engine.
#[derive(Clone, Debug)]
pub struct BatchEngine {
    state: ColoringState,
    root_seed: u64,
    batch_index: u64,
    round_cap: u32,
    audit: bool,
    scan: ScanOrder,
}

impl BatchEngine {
    pub fn new(n: u32, delta: u32, root_seed: u64) -> Result<Self, InitError> {
        let state = ColoringState::init(n, delta, root_seed)?;
        Ok(Self::from_state(state, root_seed))
    }

    /// Wrap an existing state (useful for pinned-attribute tests).
    pub fn from_state(state: ColoringState, root_seed: u64) -> Self {
        BatchEngine {
            state,
            root_seed,
            batch_index: 0,
            round_cap: 10_000,
            audit: false,
            scan: ScanOrder::Ascending,
        }
    }

    pub fn state(&self) -> &ColoringState {
        &self.state
    }

    pub fn color(&self, v: VertexId) -> Option<Color> {
        self.state.color(v)
    }

    pub fn work(&self) -> WorkStats {
        self.state.work()
    }

    pub fn verify(&self) -> ConsistencyReport {
        self.state.verify_consistency()
    }

    pub fn batches_applied(&self) -> u64 {
        self.batch_index
    }

    /// Abort with [`BatchError::RoundLimitExceeded`] if a batch needs more
    /// than `cap` rounds. The default (10000) is a safety valve only.
    pub fn set_round_cap(&mut self, cap: u32) {
        self.round_cap = cap;
    }

    /// Re-check the round-boundary invariants after every round. Costs a
    /// full graph scan per round; off by default.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    #[doc(hidden)]
    pub fn set_scan_order(&mut self, scan: ScanOrder) {
        self.scan = scan;
    }

    /// Insert a batch of edges, then repair the coloring. Endpoints of a
    /// monochromatic insertion conflict resolve toward the later timestamp
    /// (higher vertex id on a tie).
    pub fn add_edges(&mut self, edges: &[(VertexId, VertexId)]) -> Result<BatchReport, BatchError> {
        self.batch_index += 1;
        let work_before = self.state.work();
        let mut rejected = Vec::new();
        let mut active = BTreeSet::new();
        for &(u, v) in edges {
            match self.state.insert_edge(u, v) {
                Err(e) => rejected.push(((u, v), e)),
                Ok(_) => {
                    let cu = self.state.color(u);
                    if cu.is_some() && cu == self.state.color(v) {
                        let tu = self.state.timestamp(u);
                        let tv = self.state.timestamp(v);
                        let target = if tu > tv {
                            u
                        } else if tv > tu {
                            v
                        } else {
                            VertexId(u.0.max(v.0))
                        };
                        active.insert(target);
                    }
                }
            }
        }
        let trace = self.recolor_rounds(active, work_before)?;
        Ok(BatchReport { trace, rejected })
    }

    /// Delete a batch of edges. Every vertex whose low-or-equal degree
    /// dropped from `old` to `new` wins one aggregate recoloring lottery
    /// with probability `(old−new)/(Δ+1−new)`.
    pub fn delete_edges(&mut self, edges: &[(VertexId, VertexId)]) -> Result<BatchReport, BatchError> {
        self.batch_index += 1;
        let work_before = self.state.work();
        let mut rejected = Vec::new();
        let mut d_le_before: IndexMap<VertexId, u32> = IndexMap::new();
        for &(u, v) in edges {
            for x in [u, v] {
                if x.0 < self.state.n() {
                    d_le_before.entry(x).or_insert_with(|| self.state.d_le(x));
                }
            }
            if let Err(e) = self.state.delete_edge(u, v) {
                rejected.push(((u, v), e));
            }
        }

        let mut touched: Vec<VertexId> = d_le_before.keys().copied().collect();
        touched.sort_unstable();
        let mut active = BTreeSet::new();
        for v in touched {
            let old = d_le_before[&v];
            let new = self.state.d_le(v);
            if new >= old {
                continue;
            }
            let num = old - new;
            let den = self.state.delta() + 1 - new;
            self.state.charge_dict_ops(1);
            let mut rng = rng::stream_rng(self.root_seed, stream::BATCH_LOTTERY, &[self.batch_index, v.0 as u64]);
            if rand::Rng::gen_range(&mut rng, 0..den) < num {
                active.insert(v);
            }
        }
        let trace = self.recolor_rounds(active, work_before)?;
        Ok(BatchReport { trace, rejected })
    }

    /// Walk the active set in the configured order.
    fn ordered(&self, set: &BTreeSet<VertexId>) -> Vec<VertexId> {
        match self.scan {
            ScanOrder::Ascending => set.iter().copied().collect(),
            ScanOrder::Descending => set.iter().rev().copied().collect(),
        }
    }

    /// Uncolor `v` and withdraw its color from neighbor trackers.
    fn strip(&mut self, v: VertexId) {
        if let Some(old) = self.state.color(v) {
            for x in self.state.nb_ge_snapshot(v) {
                self.state.retract_low_color(x, old);
            }
            self.state.clear_color(v);
        }
    }

    /// Draw candidates until at most one strictly-higher colored neighbor
    /// holds the color. Active neighbors are uncolored, so they never block.
    fn sample_candidate(&mut self, v: VertexId, rng: &mut impl rand::Rng) -> Color {
        let nbs_gt = self.state.nb_gt_snapshot(v);
        loop {
            let (cand, _) = self.state.sample_free_color(v, rng);
            self.state.charge_neighbor_visits(nbs_gt.len() as u64);
            let holders = nbs_gt.iter().filter(|&&w| self.state.color(w) == Some(cand)).count();
            if holders <= 1 {
                self.state.audit_palette(v);
                return cand;
            }
        }
    }

    /// The synchronized recoloring loop; see the module docs for the phases.
    fn recolor_rounds(
        &mut self,
        mut active: BTreeSet<VertexId>,
        work_before: WorkStats,
    ) -> Result<BatchTrace, BatchError> {
        // Establish the boundary invariant: actives are uncolored.
        for v in self.ordered(&active) {
            self.strip(v);
        }
        let initial_active: Vec<VertexId> = active.iter().copied().collect();
        let mut ever_active: BTreeSet<VertexId> = active.clone();
        self.audit_boundary(&active, 0)?;

        let mut rounds = Vec::new();
        let mut round = 0u32;
        while !active.is_empty() {
            round += 1;
            if round > self.round_cap {
                return Err(BatchError::RoundLimitExceeded { cap: self.round_cap });
            }
            let entering = active.len() as u64;

            // Phase A: everyone samples. Per-vertex streams make this
            // independent of the scan order.
            let mut staged: IndexMap<VertexId, Color> = IndexMap::new();
            for v in self.ordered(&active) {
                let mut rng = rng::stream_rng(
                    self.root_seed,
                    stream::BATCH_SAMPLE,
                    &[self.batch_index, round as u64, v.0 as u64],
                );
                let cand = self.sample_candidate(v, &mut rng);
                staged.insert(v, cand);
            }

            // Phase B: adjacent actives with equal candidates defer.
            let mut deferred: BTreeSet<VertexId> = BTreeSet::new();
            for v in self.ordered(&active) {
                for w in self.state.nb_ge_snapshot(v) {
                    if let Some(&cw) = staged.get(&w) {
                        if cw == staged[&v] {
                            deferred.insert(v);
                            deferred.insert(w);
                        }
                    }
                }
            }

            // Phase C: survivors commit; lone higher-level holders of a
            // committed color are stripped and take over the conflict.
            let mut next_active: BTreeSet<VertexId> = deferred.clone();
            let mut handoffs = 0u64;
            let mut committed = 0u64;
            for v in self.ordered(&active) {
                if deferred.contains(&v) {
                    continue;
                }
                let cand = staged[&v];
                let nbs_gt = self.state.nb_gt_snapshot(v);
                self.state.charge_neighbor_visits(nbs_gt.len() as u64);
                let holders: Vec<VertexId> = nbs_gt
                    .into_iter()
                    .filter(|&w| self.state.color(w) == Some(cand))
                    .collect();
                debug_assert!(holders.len() <= 1, "holder count grew between sample and commit");

                for x in self.state.nb_ge_snapshot(v) {
                    self.state.register_low_color(x, cand);
                }
                self.state.set_color(v, cand, Timestamp(self.batch_index));
                committed += 1;

                if let Some(&w) = holders.first() {
                    if self.state.color(w) == Some(cand) {
                        self.strip(w);
                        next_active.insert(w);
                        ever_active.insert(w);
                        handoffs += 1;
                    }
                }
            }

            rounds.push(RoundRow {
                round_index: round,
                active: entering,
                deferred_conflicts: deferred.len() as u64,
                handoffs,
                committed,
            });
            active = next_active;
            self.audit_boundary(&active, round)?;
        }

        Ok(BatchTrace {
            batch_index: self.batch_index,
            initial_active,
            rounds,
            distinct_active: ever_active.len() as u64,
            work: self.state.work() - work_before,
        })
    }

    /// Round-boundary invariants: uncolored vertices are exactly the active
    /// set, and the colored subgraph is properly colored.
    fn audit_boundary(&self, active: &BTreeSet<VertexId>, round: u32) -> Result<(), BatchError> {
        if !self.audit {
            return Ok(());
        }
        for i in 0..self.state.n() {
            let v = VertexId(i);
            let uncolored = self.state.color(v).is_none();
            if uncolored != active.contains(&v) {
                let detail = if uncolored {
                    format!("vertex {v} is uncolored but not active")
                } else {
                    format!("vertex {v} is active but still colored")
                };
                return Err(BatchError::AuditFailed { round, detail });
            }
        }
        if let Some(bad) = self.state.properness_violations().first() {
            return Err(BatchError::AuditFailed {
                round,
                detail: format!("monochromatic colored edge {bad}"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn proper(e: &BatchEngine) {
        let bad = e.state().properness_violations();
        assert!(bad.is_empty(), "monochromatic edges: {bad:?}");
        for i in 0..e.state().n() {
            assert!(e.color(VertexId(i)).is_some(), "vertex {i} left uncolored");
        }
    }

    #[test]
    fn empty_batch_is_a_noop() {
        let mut e = BatchEngine::new(10, 4, 1).unwrap();
        let before: Vec<_> = (0..10).map(|i| e.color(VertexId(i))).collect();
        let report = e.add_edges(&[]).unwrap();
        assert!(report.trace.rounds.is_empty());
        assert!(report.rejected.is_empty());
        let after: Vec<_> = (0..10).map(|i| e.color(VertexId(i))).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn tie_between_fresh_vertices_moves_higher_id() {
        let s = ColoringState::with_levels_and_colors(3, 4, &[1, 1, 1], &[3, 3, 3]).unwrap();
        let mut e = BatchEngine::from_state(s, 5);
        e.set_audit(true);
        let report = e.add_edges(&[(VertexId(0), VertexId(1))]).unwrap();
        assert_eq!(report.trace.initial_active, vec![VertexId(1)]);
        assert_eq!(e.color(VertexId(0)), Some(Color(3)));
        assert_ne!(e.color(VertexId(1)), Some(Color(3)));
        proper(&e);
    }

    #[test]
    fn later_timestamp_loses_the_conflict() {
        // Find a seed where batch 1 recolors v1 to color 2, setting up a
        // conflict against v2 (color 2, timestamp 0). Batch 2 must then
        // recolor v1 again: its timestamp (1) is larger.
        for seed in 0..64 {
            let s = ColoringState::with_levels_and_colors(3, 2, &[1, 1, 1], &[1, 1, 2]).unwrap();
            let mut e = BatchEngine::from_state(s, seed);
            e.set_audit(true);
            e.add_edges(&[(VertexId(0), VertexId(1))]).unwrap();
            if e.color(VertexId(1)) != Some(Color(2)) {
                continue;
            }
            let report = e.add_edges(&[(VertexId(1), VertexId(2))]).unwrap();
            assert_eq!(
                report.trace.initial_active,
                vec![VertexId(1)],
                "the endpoint colored by a later batch must be the one to move"
            );
            assert_eq!(e.color(VertexId(2)), Some(Color(2)));
            proper(&e);
            return;
        }
        panic!("no seed in 0..64 drove v1 to color 2; the setup is broken");
    }

    #[test]
    fn rejected_edges_are_reported_and_skipped() {
        let mut e = BatchEngine::new(6, 3, 9).unwrap();
        e.set_audit(true);
        let batch = [
            (VertexId(0), VertexId(1)),
            (VertexId(2), VertexId(2)),  // loop
            (VertexId(0), VertexId(1)),  // duplicate within the batch
            (VertexId(0), VertexId(99)), // out of range
            (VertexId(3), VertexId(4)),
        ];
        let report = e.add_edges(&batch).unwrap();
        assert_eq!(report.rejected.len(), 3);
        assert!(matches!(report.rejected[0].1, UpdateError::LoopEdge { .. }));
        assert!(matches!(report.rejected[1].1, UpdateError::DuplicateEdge { .. }));
        assert!(matches!(report.rejected[2].1, UpdateError::VertexOutOfRange { .. }));
        assert_eq!(e.state().edge_count(), 2);
        assert!(e.verify().ok());
        proper(&e);
    }

    #[test]
    fn round_cap_aborts_nonterminating_setups() {
        let s = ColoringState::with_levels_and_colors(2, 4, &[1, 1], &[2, 2]).unwrap();
        let mut e = BatchEngine::from_state(s, 3);
        e.set_round_cap(0);
        let err = e.add_edges(&[(VertexId(0), VertexId(1))]).unwrap_err();
        assert_eq!(err, BatchError::RoundLimitExceeded { cap: 0 });
    }

    #[test]
    fn aggregate_deletion_lottery_rate() {
        // Hub with 12 equal-level neighbors; deleting two edges per batch
        // drops d_le from 12 to 10, so the hub recolors with probability
        // 2/(21−10) = 2/11 per batch.
        let n = 14u32;
        let delta = 20u32;
        let levels = vec![1u8; n as usize];
        let colors: Vec<u32> = (0..n).map(|i| (i % (delta + 1)) + 1).collect();
        let s = ColoringState::with_levels_and_colors(n, delta, &levels, &colors).unwrap();
        let mut e = BatchEngine::from_state(s, 314);
        let hub = VertexId(0);
        let spokes: Vec<(VertexId, VertexId)> = (1..=12).map(|i| (hub, VertexId(i))).collect();
        e.add_edges(&spokes).unwrap();

        let trials = 10_000u32;
        let mut hub_hits = 0u32;
        let pair = [(hub, VertexId(1)), (hub, VertexId(2))];
        for _ in 0..trials {
            let report = e.delete_edges(&pair).unwrap();
            if report.trace.initial_active.contains(&hub) {
                hub_hits += 1;
            }
            e.add_edges(&pair).unwrap();
        }
        // Binomial(10000, 2/11): mean ≈ 1818, σ ≈ 38.6; allow 3σ.
        let got = hub_hits as f64;
        assert!(
            (got - 1818.2).abs() <= 3.0 * 38.6,
            "hub won {got} lotteries over {trials} trials; expected about 1818"
        );
        proper(&e);
        assert!(e.verify().ok());
    }

    #[test]
    fn singleton_batches_stay_proper_under_churn() {
        let n = 50u32;
        let delta = 8u32;
        let mut e = BatchEngine::new(n, delta, 77).unwrap();
        e.set_audit(true);
        let mut rng = rng::stream_rng(123, 0x55, &[]);
        let mut present: Vec<(VertexId, VertexId)> = Vec::new();
        for step in 0..2000 {
            let insert = present.is_empty() || rng.gen_bool(0.55);
            if insert {
                let u = VertexId(rng.gen_range(0..n));
                let v = VertexId(rng.gen_range(0..n));
                let report = e.add_edges(&[(u, v)]).unwrap();
                if report.rejected.is_empty() {
                    present.push((u, v));
                }
            } else {
                let i = rng.gen_range(0..present.len());
                let (u, v) = present.swap_remove(i);
                let report = e.delete_edges(&[(u, v)]).unwrap();
                assert!(report.rejected.is_empty());
            }
            proper(&e);
            if step % 200 == 0 {
                assert!(e.verify().ok());
            }
        }
        assert!(e.verify().ok());
    }

    #[test]
    fn bulk_batches_stay_proper_and_terminate_quickly() {
        let n = 400u32;
        let delta = 16u32;
        let mut e = BatchEngine::new(n, delta, 2024).unwrap();
        e.set_audit(true);
        let mut rng = rng::stream_rng(99, 0x44, &[]);
        let mut present: Vec<(VertexId, VertexId)> = Vec::new();
        let mut max_rounds = 0u32;
        let mut slots = 0u64;
        let mut distinct = 0u64;

        for _ in 0..20 {
            // Build an insertion batch of ~100 candidate edges.
            let mut batch = Vec::new();
            for _ in 0..100 {
                let u = VertexId(rng.gen_range(0..n));
                let v = VertexId(rng.gen_range(0..n));
                batch.push((u, v));
            }
            let report = e.add_edges(&batch).unwrap();
            let accepted: Vec<_> = batch
                .iter()
                .filter(|&&(u, v)| !report.rejected.iter().any(|r| r.0 == (u, v)))
                .copied()
                .collect();
            present.extend(accepted);
            max_rounds = max_rounds.max(report.trace.rounds.len() as u32);
            slots += report.trace.rounds.iter().map(|r| r.active).sum::<u64>();
            distinct += report.trace.distinct_active;
            proper(&e);

            // And a deletion batch of ~30 existing edges.
            let mut delete = Vec::new();
            for _ in 0..30.min(present.len()) {
                let i = rng.gen_range(0..present.len());
                delete.push(present.swap_remove(i));
            }
            let report = e.delete_edges(&delete).unwrap();
            assert!(report.rejected.is_empty(), "{:?}", report.rejected);
            max_rounds = max_rounds.max(report.trace.rounds.len() as u32);
            slots += report.trace.rounds.iter().map(|r| r.active).sum::<u64>();
            distinct += report.trace.distinct_active;
            proper(&e);
        }

        assert!(e.verify().ok());
        // Desk bounds: rounds per batch stay well under 6·log2(n), and the
        // mean rounds a vertex spends active is tiny compared to 400.
        assert!(max_rounds <= 52, "a batch took {max_rounds} rounds");
        if distinct > 0 {
            let mean = slots as f64 / distinct as f64;
            assert!(mean <= 400.0, "mean active rounds {mean:.1}");
        }
    }

    #[test]
    fn scan_order_does_not_change_the_outcome() {
        let n = 120u32;
        let delta = 10u32;
        let mut forward = BatchEngine::new(n, delta, 606).unwrap();
        let mut backward = BatchEngine::new(n, delta, 606).unwrap();
        backward.set_scan_order(ScanOrder::Descending);

        let mut rng = rng::stream_rng(42, 0x33, &[]);
        let mut present: Vec<(VertexId, VertexId)> = Vec::new();
        for _ in 0..12 {
            let mut batch = Vec::new();
            for _ in 0..40 {
                let u = VertexId(rng.gen_range(0..n));
                let v = VertexId(rng.gen_range(0..n));
                batch.push((u, v));
            }
            let rf = forward.add_edges(&batch).unwrap();
            let rb = backward.add_edges(&batch).unwrap();
            assert_eq!(rf.trace.initial_active, rb.trace.initial_active);
            assert_eq!(rf.trace.rounds.len(), rb.trace.rounds.len());
            present.extend(batch.iter().filter(|&&(u, v)| {
                !rf.rejected.iter().any(|r| r.0 == (u, v))
            }));

            let mut delete = Vec::new();
            for _ in 0..10.min(present.len()) {
                let i = rng.gen_range(0..present.len());
                delete.push(present.swap_remove(i));
            }
            forward.delete_edges(&delete).unwrap();
            backward.delete_edges(&delete).unwrap();
        }
        for i in 0..n {
            let v = VertexId(i);
            assert_eq!(forward.color(v), backward.color(v), "colors split at {v}");
        }
        assert_eq!(forward.state().dump(), backward.state().dump());
    }
}
