//! The dynamic graph and per-vertex bookkeeping shared by the sequential,
//! batch, and deamortized engines.
//!
//! For every vertex the state keeps its fixed level, current color and
//! timestamp, and — once the vertex is touched by an edge — a view of its
//! neighborhood partitioned by level relation:
//!
//! * `adj`: all current neighbors;
//! * `nb_ge`: neighbors at level ≥ own (the vertices whose trackers must be
//!   told when this vertex changes color);
//! * `nb_gt`: neighbors at strictly higher level (palette competition);
//! * `d_le`: count of neighbors at level ≤ own;
//! * a color multiset + [`ColorSet`] tracking colors used by
//!   lower-or-equal-level *colored* neighbors.
//!
//! Two neighbors at or below a vertex's level may legitimately share a
//! color, so membership in the tracker is reference-counted: the sampler
//! set sees an insert only on the 0→1 transition and a delete only on 1→0.
//!
//! Views are allocated lazily, so initializing a million-vertex state costs
//! only the flat attribute arrays.

use indexmap::{IndexMap, IndexSet};
use rand::Rng;
use thiserror::Error;

use crate::ids::{max_level, Color, EdgeKey, Level, Timestamp, VertexId};
use crate::rng::{self, stream};
use crate::sampler::ColorSet;
use crate::work::WorkStats;

/// Largest supported degree bound; keeps `delta + 1` comfortably in `u32`.
pub const MAX_DELTA: u32 = 1 << 30;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum InitError {
    #[error("vertex count must be at least 1")]
    NoVertices,
    #[error("degree bound must be at least 1")]
    ZeroDegreeBound,
    #[error("degree bound {0} exceeds supported maximum {MAX_DELTA}")]
    DegreeBoundTooLarge(u32),
    #[error("attribute table length {got} does not match vertex count {want}")]
    BadTableLength { got: usize, want: usize },
    #[error("attribute value out of range for vertex {0}")]
    BadAttribute(VertexId),
}

/// Structural update rejections. Every variant leaves the state untouched.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Error)]
pub enum UpdateError {
    #[error("vertex {v} outside [0, {n})")]
    VertexOutOfRange { v: VertexId, n: u32 },
    #[error("loop edge at vertex {v}")]
    LoopEdge { v: VertexId },
    #[error("edge ({u}, {v}) already present")]
    DuplicateEdge { u: VertexId, v: VertexId },
    #[error("edge ({u}, {v}) not present")]
    MissingEdge { u: VertexId, v: VertexId },
    #[error("insert would push degree of {v} past bound {delta}")]
    DegreeOverflow { v: VertexId, delta: u32 },
    #[error("an update is still being processed; step it to completion first")]
    UpdateInProgress,
}

/// Which endpoints had their lower-or-equal neighbor count changed by a
/// structural edge update (increased on insert, decreased on delete).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct StructuralDelta {
    pub u_low: bool,
    pub v_low: bool,
}

/// Outcome of a full state audit: either everything rebuilt from the raw
/// edge set matches, or a description of the first mismatch.
#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub checked_vertices: u32,
    pub mismatch: Option<String>,
}

impl ConsistencyReport {
    pub fn ok(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Lazily allocated per-vertex neighborhood view.
#[derive(Clone, Debug)]
struct VertexViews {
    adj: IndexSet<VertexId>,
    nb_ge: IndexSet<VertexId>,
    nb_gt: IndexSet<VertexId>,
    /// Colors of lower-or-equal-level colored neighbors, with multiplicity.
    low_mult: IndexMap<Color, u32>,
    /// Sampler over the distinct colors in `low_mult`.
    sampler: ColorSet,
}

impl VertexViews {
    fn new(universe: u32) -> Self {
        VertexViews {
            adj: IndexSet::new(),
            nb_ge: IndexSet::new(),
            nb_gt: IndexSet::new(),
            low_mult: IndexMap::new(),
            sampler: ColorSet::new(universe),
        }
    }
}

/// Draw a level from the truncated geometric distribution: level `k` with
/// probability 2^(−k), with the top level `ceil(log2 delta) + 1` absorbing
/// the tail mass 2^(−top+1). Realized by counting fair coins.
pub fn sample_level<R: Rng>(delta: u32, rng: &mut R) -> Level {
    let top = max_level(delta);
    let mut k = 1u8;
    while k < top && !rng.gen::<bool>() {
        k += 1;
    }
    Level(k)
}

/// Dynamic graph plus coloring attributes and neighbor views.
#[derive(Clone, Debug)]
pub struct ColoringState {
    n: u32,
    delta: u32,
    levels: Vec<Level>,
    colors: Vec<Option<Color>>,
    timestamps: Vec<Timestamp>,
    d_le: Vec<u32>,
    views: Vec<Option<Box<VertexViews>>>,
    edges: IndexSet<EdgeKey>,
    work: WorkStats,
}

impl ColoringState {
    /// Fresh state over `n` vertices and degree bound `delta`: no edges,
    /// independent random levels, independent uniform colors, timestamps 0.
    /// Deterministic given `root_seed`.
    pub fn init(n: u32, delta: u32, root_seed: u64) -> Result<Self, InitError> {
        if n == 0 {
            return Err(InitError::NoVertices);
        }
        if delta == 0 {
            return Err(InitError::ZeroDegreeBound);
        }
        if delta > MAX_DELTA {
            return Err(InitError::DegreeBoundTooLarge(delta));
        }
        let mut rng = rng::stream_rng(root_seed, stream::INIT, &[]);
        let mut levels = Vec::with_capacity(n as usize);
        let mut colors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            levels.push(sample_level(delta, &mut rng));
            colors.push(Some(Color(rng.gen_range(1..=delta + 1))));
        }
        Ok(ColoringState {
            n,
            delta,
            levels,
            colors,
            timestamps: vec![Timestamp(0); n as usize],
            d_le: vec![0; n as usize],
            views: (0..n).map(|_| None).collect(),
            edges: IndexSet::new(),
            work: WorkStats::default(),
        })
    }

    /// Test constructor with pinned levels and colors (0 meaning uncolored).
    pub fn with_levels_and_colors(
        n: u32,
        delta: u32,
        levels: &[u8],
        colors: &[u32],
    ) -> Result<Self, InitError> {
        if n == 0 {
            return Err(InitError::NoVertices);
        }
        if delta == 0 {
            return Err(InitError::ZeroDegreeBound);
        }
        if delta > MAX_DELTA {
            return Err(InitError::DegreeBoundTooLarge(delta));
        }
        if levels.len() != n as usize {
            return Err(InitError::BadTableLength { got: levels.len(), want: n as usize });
        }
        if colors.len() != n as usize {
            return Err(InitError::BadTableLength { got: colors.len(), want: n as usize });
        }
        let top = max_level(delta);
        let mut lv = Vec::with_capacity(n as usize);
        let mut cv = Vec::with_capacity(n as usize);
        for i in 0..n as usize {
            if levels[i] < 1 || levels[i] > top {
                return Err(InitError::BadAttribute(VertexId(i as u32)));
            }
            if colors[i] > delta + 1 {
                return Err(InitError::BadAttribute(VertexId(i as u32)));
            }
            lv.push(Level(levels[i]));
            cv.push(if colors[i] == 0 { None } else { Some(Color(colors[i])) });
        }
        Ok(ColoringState {
            n,
            delta,
            levels: lv,
            colors: cv,
            timestamps: vec![Timestamp(0); n as usize],
            d_le: vec![0; n as usize],
            views: (0..n).map(|_| None).collect(),
            edges: IndexSet::new(),
            work: WorkStats::default(),
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn delta(&self) -> u32 {
        self.delta
    }

    /// Number of colors available: `delta + 1`.
    pub fn universe(&self) -> u32 {
        self.delta + 1
    }

    pub fn top_level(&self) -> Level {
        Level(max_level(self.delta))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeKey> + '_ {
        self.edges.iter().copied()
    }

    pub fn level(&self, v: VertexId) -> Level {
        self.levels[v.idx()]
    }

    pub fn color(&self, v: VertexId) -> Option<Color> {
        self.colors[v.idx()]
    }

    pub fn timestamp(&self, v: VertexId) -> Timestamp {
        self.timestamps[v.idx()]
    }

    pub fn d_le(&self, v: VertexId) -> u32 {
        self.d_le[v.idx()]
    }

    pub fn degree(&self, v: VertexId) -> u32 {
        self.views[v.idx()].as_ref().map_or(0, |w| w.adj.len() as u32)
    }

    /// Cumulative work counters (dictionary ops include sampler internals).
    pub fn work(&self) -> WorkStats {
        self.work
    }

    pub fn charge_neighbor_visits(&mut self, k: u64) {
        self.work.neighbor_visits += k;
    }

    pub fn charge_dict_ops(&mut self, k: u64) {
        self.work.dict_ops += k;
    }

    fn charge_dict(&mut self, k: u64) {
        self.work.dict_ops += k;
    }

    fn view_mut(&mut self, v: VertexId) -> &mut VertexViews {
        let universe = self.delta + 1;
        self.views[v.idx()].get_or_insert_with(|| Box::new(VertexViews::new(universe)))
    }

    fn validate_pair(&self, u: VertexId, v: VertexId) -> Result<(), UpdateError> {
        for w in [u, v] {
            if w.0 >= self.n {
                return Err(UpdateError::VertexOutOfRange { v: w, n: self.n });
            }
        }
        if u == v {
            return Err(UpdateError::LoopEdge { v: u });
        }
        Ok(())
    }

    /// Membership probe against the raw edge set (one dictionary op).
    pub fn edge_exists(&mut self, u: VertexId, v: VertexId) -> bool {
        self.work.dict_ops += 1;
        self.edges.contains(&EdgeKey::new(u, v))
    }

    /// Insert edge (u, v), updating views, counters, and color trackers of
    /// both endpoints. Colors themselves are untouched.
    pub fn insert_edge(&mut self, u: VertexId, v: VertexId) -> Result<StructuralDelta, UpdateError> {
        self.validate_pair(u, v)?;
        let key = EdgeKey::new(u, v);
        self.charge_dict(1);
        if self.edges.contains(&key) {
            return Err(UpdateError::DuplicateEdge { u, v });
        }
        for w in [u, v] {
            if self.degree(w) >= self.delta {
                return Err(UpdateError::DegreeOverflow { v: w, delta: self.delta });
            }
        }
        self.edges.insert(key);
        self.charge_dict(1);
        self.link_one_direction(u, v);
        self.link_one_direction(v, u);
        Ok(StructuralDelta {
            u_low: self.levels[v.idx()] <= self.levels[u.idx()],
            v_low: self.levels[u.idx()] <= self.levels[v.idx()],
        })
    }

    /// Remove edge (u, v), the exact mirror of [`Self::insert_edge`].
    pub fn delete_edge(&mut self, u: VertexId, v: VertexId) -> Result<StructuralDelta, UpdateError> {
        self.validate_pair(u, v)?;
        let key = EdgeKey::new(u, v);
        self.charge_dict(1);
        if !self.edges.swap_remove(&key) {
            return Err(UpdateError::MissingEdge { u, v });
        }
        self.unlink_one_direction(u, v);
        self.unlink_one_direction(v, u);
        Ok(StructuralDelta {
            u_low: self.levels[v.idx()] <= self.levels[u.idx()],
            v_low: self.levels[u.idx()] <= self.levels[v.idx()],
        })
    }

    /// Record `other` as a new neighbor of `v`.
    fn link_one_direction(&mut self, v: VertexId, other: VertexId) {
        let lv = self.levels[v.idx()];
        let lo = self.levels[other.idx()];
        let other_color = self.colors[other.idx()];
        let view = self.view_mut(v);
        view.adj.insert(other);
        let mut ops = 1u64;
        if lo >= lv {
            view.nb_ge.insert(other);
            ops += 1;
        }
        if lo > lv {
            view.nb_gt.insert(other);
            ops += 1;
        }
        self.charge_dict(ops);
        if lo <= lv {
            self.d_le[v.idx()] += 1;
            if let Some(c) = other_color {
                self.register_low_color(v, c);
            }
        }
    }

    /// Remove `other` from `v`'s views.
    fn unlink_one_direction(&mut self, v: VertexId, other: VertexId) {
        let lv = self.levels[v.idx()];
        let lo = self.levels[other.idx()];
        let other_color = self.colors[other.idx()];
        let view = self.views[v.idx()].as_mut().expect("edge endpoints have views");
        view.adj.swap_remove(&other);
        let mut ops = 1u64;
        if lo >= lv {
            view.nb_ge.swap_remove(&other);
            ops += 1;
        }
        if lo > lv {
            view.nb_gt.swap_remove(&other);
            ops += 1;
        }
        self.charge_dict(ops);
        if lo <= lv {
            self.d_le[v.idx()] -= 1;
            if let Some(c) = other_color {
                self.retract_low_color(v, c);
            }
        }
    }

    /// A lower-or-equal-level neighbor of `v` now shows color `c`: bump the
    /// reference count and add the color to the sampler set on 0→1.
    pub fn register_low_color(&mut self, v: VertexId, c: Color) {
        self.charge_dict(1);
        let view = self.view_mut(v);
        let slot = view.low_mult.entry(c).or_insert(0);
        *slot += 1;
        if *slot == 1 {
            let before = view.sampler.dict_ops();
            let changed = view.sampler.insert(c).expect("color validated by caller");
            debug_assert!(changed, "refcount said 0->1 but sampler disagreed");
            let after = view.sampler.dict_ops();
            self.work.dict_ops += after - before;
        }
    }

    /// A lower-or-equal-level neighbor of `v` no longer shows color `c`.
    pub fn retract_low_color(&mut self, v: VertexId, c: Color) {
        self.charge_dict(1);
        let view = self.views[v.idx()].as_mut().expect("tracked colors imply a view");
        let slot = view.low_mult.get_mut(&c).expect("retract of untracked color");
        *slot -= 1;
        if *slot == 0 {
            view.low_mult.swap_remove(&c);
            let before = view.sampler.dict_ops();
            let changed = view.sampler.delete(c).expect("color validated by caller");
            debug_assert!(changed, "refcount said 1->0 but sampler disagreed");
            let after = view.sampler.dict_ops();
            self.work.dict_ops += after - before;
        }
    }

    /// Give `v` a color and timestamp.
    pub fn set_color(&mut self, v: VertexId, c: Color, t: Timestamp) {
        debug_assert!(c.0 >= 1 && c.0 <= self.delta + 1);
        self.colors[v.idx()] = Some(c);
        self.timestamps[v.idx()] = t;
    }

    /// Blank `v`'s color, leaving the timestamp as is.
    pub fn clear_color(&mut self, v: VertexId) {
        self.colors[v.idx()] = None;
    }

    /// Draw a uniform color outside `v`'s tracked lower-or-equal set.
    /// Vertices never touched by an edge draw uniformly over the universe.
    pub fn sample_free_color<R: Rng>(&mut self, v: VertexId, rng: &mut R) -> (Color, u64) {
        match self.views[v.idx()].as_mut() {
            None => {
                self.work.sample_attempts += 1;
                (Color(rng.gen_range(1..=self.delta + 1)), 1)
            }
            Some(view) => {
                let before = view.sampler.dict_ops();
                let sample = view
                    .sampler
                    .sample_empty(rng)
                    .expect("tracked set cannot cover the full universe: it has at most delta members");
                let after = view.sampler.dict_ops();
                self.work.dict_ops += after - before;
                self.work.sample_attempts += sample.attempts;
                (sample.color, sample.attempts)
            }
        }
    }

    /// Copy of `v`'s ≥-level neighbor list; charges one visit per element.
    pub fn nb_ge_snapshot(&mut self, v: VertexId) -> Vec<VertexId> {
        let snap: Vec<VertexId> = self.views[v.idx()]
            .as_ref()
            .map_or_else(Vec::new, |w| w.nb_ge.iter().copied().collect());
        self.work.neighbor_visits += snap.len() as u64;
        snap
    }

    /// Copy of `v`'s strictly-higher neighbor list; charges one visit per
    /// element.
    pub fn nb_gt_snapshot(&mut self, v: VertexId) -> Vec<VertexId> {
        let snap: Vec<VertexId> = self.views[v.idx()]
            .as_ref()
            .map_or_else(Vec::new, |w| w.nb_gt.iter().copied().collect());
        self.work.neighbor_visits += snap.len() as u64;
        snap
    }

    /// Untracked read-only accessors, used by audits and verification so
    /// that checking never perturbs work counters or engine state.
    pub fn adj_untracked(&self, v: VertexId) -> Vec<VertexId> {
        self.views[v.idx()].as_ref().map_or_else(Vec::new, |w| w.adj.iter().copied().collect())
    }

    pub fn nb_ge_untracked(&self, v: VertexId) -> Vec<VertexId> {
        self.views[v.idx()].as_ref().map_or_else(Vec::new, |w| w.nb_ge.iter().copied().collect())
    }

    pub fn nb_gt_untracked(&self, v: VertexId) -> Vec<VertexId> {
        self.views[v.idx()].as_ref().map_or_else(Vec::new, |w| w.nb_gt.iter().copied().collect())
    }

    pub fn tracked_low_colors_untracked(&self, v: VertexId) -> Vec<(Color, u32)> {
        self.views[v.idx()].as_ref().map_or_else(Vec::new, |w| {
            let mut m: Vec<(Color, u32)> = w.low_mult.iter().map(|(&c, &k)| (c, k)).collect();
            m.sort_unstable();
            m
        })
    }

    pub fn sampler_contains_untracked(&self, v: VertexId, c: Color) -> bool {
        self.views[v.idx()].as_ref().is_some_and(|w| w.sampler.contains_untracked(c))
    }

    /// Number of distinct colors tracked for `v` (size of the sampler set).
    pub fn tracked_low_color_count(&self, v: VertexId) -> u32 {
        self.views[v.idx()].as_ref().map_or(0, |w| w.sampler.len())
    }

    /// Tripwire for the palette-size guarantees, run after every accepted
    /// candidate color. The candidate universe (colors unused at or below
    /// `v`'s level) must hold at least Δ+1−d_le colors, and the palette
    /// (universe minus colors seen twice or more strictly above) must cover
    /// at least half of it. Both bounds are forced by counting whenever the
    /// state is consistent, so a violation means corruption somewhere
    /// upstream. Untracked.
    pub(crate) fn audit_palette(&self, v: VertexId) {
        let universe = self.universe();
        let tracked = self.tracked_low_color_count(v);
        let u_size = (universe - tracked) as i64;
        let d_le = self.d_le(v) as i64;
        assert!(
            u_size >= universe as i64 - d_le,
            "candidate universe smaller than Δ+1−d_le at vertex {v}"
        );

        let mut counts: IndexMap<Color, u32> = IndexMap::new();
        for w in self.nb_gt_untracked(v) {
            if let Some(c) = self.color(w) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        let heavy = counts
            .iter()
            .filter(|&(c, &k)| k >= 2 && !self.sampler_contains_untracked(v, *c))
            .count() as i64;
        let p_size = u_size - heavy;
        assert!(
            2 * p_size >= u_size,
            "palette dropped below half the candidate universe at vertex {v}"
        );
    }

    /// Scan every edge; return those whose endpoints are both colored and
    /// equal. Read-only and untracked.
    pub fn properness_violations(&self) -> Vec<EdgeKey> {
        let mut bad = Vec::new();
        for &EdgeKey(u, v) in &self.edges {
            if let (Some(cu), Some(cv)) = (self.colors[u.idx()], self.colors[v.idx()]) {
                if cu == cv {
                    bad.push(EdgeKey(u, v));
                }
            }
        }
        bad
    }

    /// Rebuild every view and tracker from the raw edge set and attribute
    /// arrays; report the first mismatch found.
    pub fn verify_consistency(&self) -> ConsistencyReport {
        let mut adj: Vec<Vec<VertexId>> = vec![Vec::new(); self.n as usize];
        for &EdgeKey(u, v) in &self.edges {
            adj[u.idx()].push(v);
            adj[v.idx()].push(u);
        }
        for v in 0..self.n {
            let vid = VertexId(v);
            if let Some(report) = self.verify_vertex(vid, &adj[v as usize]) {
                return ConsistencyReport { checked_vertices: v + 1, mismatch: Some(report) };
            }
        }
        ConsistencyReport { checked_vertices: self.n, mismatch: None }
    }

    fn verify_vertex(&self, v: VertexId, expect_adj: &[VertexId]) -> Option<String> {
        let lv = self.levels[v.idx()];
        if lv.0 < 1 || lv > self.top_level() {
            return Some(format!("vertex {v}: level {lv} out of range"));
        }
        if let Some(c) = self.colors[v.idx()] {
            if c.0 < 1 || c.0 > self.delta + 1 {
                return Some(format!("vertex {v}: color {c} out of range"));
            }
        }
        if expect_adj.len() > self.delta as usize {
            return Some(format!("vertex {v}: degree {} exceeds bound", expect_adj.len()));
        }

        let mut want_adj: Vec<VertexId> = expect_adj.to_vec();
        want_adj.sort_unstable();
        let mut got_adj = self.adj_untracked(v);
        got_adj.sort_unstable();
        if got_adj != want_adj {
            return Some(format!(
                "vertex {v}: adjacency holds {} vertices, rebuild expects {}",
                got_adj.len(),
                want_adj.len()
            ));
        }

        let mut want_ge: Vec<VertexId> =
            expect_adj.iter().copied().filter(|w| self.levels[w.idx()] >= lv).collect();
        want_ge.sort_unstable();
        let mut got_ge = self.nb_ge_untracked(v);
        got_ge.sort_unstable();
        if got_ge != want_ge {
            return Some(format!("vertex {v}: ≥-level view out of sync"));
        }

        let mut want_gt: Vec<VertexId> =
            expect_adj.iter().copied().filter(|w| self.levels[w.idx()] > lv).collect();
        want_gt.sort_unstable();
        let mut got_gt = self.nb_gt_untracked(v);
        got_gt.sort_unstable();
        if got_gt != want_gt {
            return Some(format!("vertex {v}: >-level view out of sync"));
        }

        let want_dle = expect_adj.iter().filter(|w| self.levels[w.idx()] <= lv).count() as u32;
        if self.d_le[v.idx()] != want_dle {
            return Some(format!(
                "vertex {v}: d_le counter {} but rebuild expects {want_dle}",
                self.d_le[v.idx()]
            ));
        }
        if want_dle + got_gt.len() as u32 != expect_adj.len() as u32 {
            return Some(format!("vertex {v}: d_le + |>-view| does not cover the degree"));
        }

        let mut want_mult: IndexMap<Color, u32> = IndexMap::new();
        for &w in expect_adj {
            if self.levels[w.idx()] <= lv {
                if let Some(c) = self.colors[w.idx()] {
                    *want_mult.entry(c).or_insert(0) += 1;
                }
            }
        }
        let mut want_pairs: Vec<(Color, u32)> = want_mult.iter().map(|(&c, &k)| (c, k)).collect();
        want_pairs.sort_unstable();
        let got_pairs = self.tracked_low_colors_untracked(v);
        if got_pairs != want_pairs {
            return Some(format!("vertex {v}: tracked color multiset out of sync"));
        }

        if let Some(view) = self.views[v.idx()].as_ref() {
            let mut want_set: Vec<Color> = want_pairs.iter().map(|&(c, _)| c).collect();
            want_set.sort_unstable();
            if view.sampler.members_sorted() != want_set {
                return Some(format!("vertex {v}: sampler set out of sync with tracker"));
            }
            if let Err(e) = view.sampler.verify() {
                return Some(format!("vertex {v}: sampler internal check failed: {e}"));
            }
        } else if !expect_adj.is_empty() {
            return Some(format!("vertex {v}: has edges but no view allocated"));
        }
        None
    }

    /// Debug dump: one vertex per line as `id level color-or-⊥ timestamp`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for v in 0..self.n as usize {
            let color = match self.colors[v] {
                Some(c) => c.to_string(),
                None => "⊥".to_string(),
            };
            out.push_str(&format!(
                "{} {} {} {}\n",
                v, self.levels[v], color, self.timestamps[v]
            ));
        }
        out
    }

    /// Test hook: corrupt a counter to prove the audit catches it.
    #[doc(hidden)]
    pub fn corrupt_d_le_for_test(&mut self, v: VertexId) {
        self.d_le[v.idx()] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_rejects_degenerate_parameters() {
        assert_eq!(ColoringState::init(0, 4, 1).unwrap_err(), InitError::NoVertices);
        assert_eq!(ColoringState::init(4, 0, 1).unwrap_err(), InitError::ZeroDegreeBound);
        assert!(ColoringState::init(4, MAX_DELTA + 1, 1).is_err());
    }

    #[test]
    fn single_vertex_degenerate_distribution() {
        let s = ColoringState::init(1, 1, 99).unwrap();
        assert_eq!(s.level(VertexId(0)), Level(1));
        let c = s.color(VertexId(0)).unwrap();
        assert!(c.0 == 1 || c.0 == 2);
        assert_eq!(s.timestamp(VertexId(0)), Timestamp(0));
        assert!(s.verify_consistency().ok());
    }

    #[test]
    fn fresh_state_is_proper_and_consistent() {
        let s = ColoringState::init(3, 2, 5).unwrap();
        assert!(s.properness_violations().is_empty());
        assert!(s.verify_consistency().ok());
        assert_eq!(s.edge_count(), 0);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ColoringState::init(500, 16, 1234).unwrap();
        let b = ColoringState::init(500, 16, 1234).unwrap();
        for v in 0..500 {
            let vid = VertexId(v);
            assert_eq!(a.level(vid), b.level(vid));
            assert_eq!(a.color(vid), b.color(vid));
        }
        let c = ColoringState::init(500, 16, 1235).unwrap();
        let diff = (0..500).filter(|&v| a.color(VertexId(v)) != c.color(VertexId(v))).count();
        assert!(diff > 400, "different seeds should give mostly different colors");
    }

    #[test]
    fn level_histogram_matches_geometric_decay() {
        // Large instance: per-level counts within 3σ of n·2^(−k), with the
        // top level absorbing the tail.
        let n: u32 = 1_000_000;
        let delta: u32 = 1 << 20;
        let s = ColoringState::init(n, delta, 42).unwrap();
        let top = max_level(delta) as usize;
        assert_eq!(top, 21);
        let mut hist = vec![0u64; top + 1];
        for v in 0..n {
            hist[s.level(VertexId(v)).0 as usize] += 1;
        }
        for k in 1..=top {
            let p = if k < top { 0.5f64.powi(k as i32) } else { 0.5f64.powi(k as i32 - 1) };
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let got = hist[k] as f64;
            assert!(
                (got - mean).abs() <= 3.0 * sigma + 1.0,
                "level {k}: got {got}, expected {mean:.1} ± {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn structural_errors_reject_without_mutation() {
        let mut s = ColoringState::init(4, 2, 7).unwrap();
        let a = VertexId(0);
        let b = VertexId(1);
        let c = VertexId(2);
        let d = VertexId(3);

        assert_eq!(s.insert_edge(a, a).unwrap_err(), UpdateError::LoopEdge { v: a });
        assert!(matches!(
            s.insert_edge(a, VertexId(9)).unwrap_err(),
            UpdateError::VertexOutOfRange { .. }
        ));
        assert_eq!(s.delete_edge(a, b).unwrap_err(), UpdateError::MissingEdge { u: a, v: b });

        s.insert_edge(a, b).unwrap();
        assert_eq!(s.insert_edge(b, a).unwrap_err(), UpdateError::DuplicateEdge { u: b, v: a });

        // Degree bound 2: third edge at `a` must be refused.
        s.insert_edge(a, c).unwrap();
        assert_eq!(
            s.insert_edge(a, d).unwrap_err(),
            UpdateError::DegreeOverflow { v: a, delta: 2 }
        );
        assert_eq!(s.degree(a), 2);
        assert!(s.verify_consistency().ok());
    }

    #[test]
    fn views_track_level_relations() {
        // Levels pinned: v0=2, v1=5, v2=2. delta=16 → top level 5.
        let mut s =
            ColoringState::with_levels_and_colors(3, 16, &[2, 5, 2], &[1, 2, 3]).unwrap();
        let v0 = VertexId(0);
        let v1 = VertexId(1);
        let v2 = VertexId(2);

        let d = s.insert_edge(v0, v1).unwrap();
        // v1 is higher: only v0 sees a ≥ and > neighbor; v1's low count grew.
        assert_eq!(d, StructuralDelta { u_low: false, v_low: true });
        assert_eq!(s.nb_ge_untracked(v0), vec![v1]);
        assert_eq!(s.nb_gt_untracked(v0), vec![v1]);
        assert_eq!(s.d_le(v0), 0);
        assert_eq!(s.d_le(v1), 1);
        assert_eq!(s.tracked_low_colors_untracked(v1), vec![(Color(1), 1)]);

        let d = s.insert_edge(v0, v2).unwrap();
        // Equal levels: both sides count each other as low and as ≥.
        assert_eq!(d, StructuralDelta { u_low: true, v_low: true });
        assert_eq!(s.d_le(v0), 1);
        assert_eq!(s.d_le(v2), 1);
        assert_eq!(s.nb_ge_untracked(v2), vec![v0]);
        assert!(s.nb_gt_untracked(v2).is_empty());
        assert_eq!(s.tracked_low_colors_untracked(v0), vec![(Color(3), 1)]);
        assert_eq!(s.tracked_low_colors_untracked(v2), vec![(Color(1), 1)]);
        assert!(s.verify_consistency().ok());

        let d = s.delete_edge(v0, v1).unwrap();
        assert_eq!(d, StructuralDelta { u_low: false, v_low: true });
        assert_eq!(s.d_le(v1), 0);
        assert!(s.tracked_low_colors_untracked(v1).is_empty());
        assert!(s.verify_consistency().ok());
    }

    #[test]
    fn refcounted_tracker_handles_shared_colors() {
        // Two level-1 neighbors of a level-2 vertex share color 4: the
        // tracker must hold the color until *both* are gone.
        let mut s =
            ColoringState::with_levels_and_colors(3, 8, &[2, 1, 1], &[1, 4, 4]).unwrap();
        let hub = VertexId(0);
        s.insert_edge(hub, VertexId(1)).unwrap();
        s.insert_edge(hub, VertexId(2)).unwrap();
        assert_eq!(s.tracked_low_colors_untracked(hub), vec![(Color(4), 2)]);
        assert!(s.sampler_contains_untracked(hub, Color(4)));

        s.delete_edge(hub, VertexId(1)).unwrap();
        assert_eq!(s.tracked_low_colors_untracked(hub), vec![(Color(4), 1)]);
        assert!(s.sampler_contains_untracked(hub, Color(4)), "still one holder left");

        s.delete_edge(hub, VertexId(2)).unwrap();
        assert!(s.tracked_low_colors_untracked(hub).is_empty());
        assert!(!s.sampler_contains_untracked(hub, Color(4)));
        assert!(s.verify_consistency().ok());
    }

    #[test]
    fn random_churn_stays_consistent() {
        let n = 40u32;
        let delta = 8u32;
        let mut s = ColoringState::init(n, delta, 2024).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut present: Vec<(VertexId, VertexId)> = Vec::new();
        for step in 0..10_000 {
            let insert = present.is_empty() || rng.gen_bool(0.55);
            if insert {
                let u = VertexId(rng.gen_range(0..n));
                let v = VertexId(rng.gen_range(0..n));
                match s.insert_edge(u, v) {
                    Ok(_) => present.push((u, v)),
                    Err(
                        UpdateError::LoopEdge { .. }
                        | UpdateError::DuplicateEdge { .. }
                        | UpdateError::DegreeOverflow { .. },
                    ) => {}
                    Err(e) => panic!("step {step}: unexpected {e}"),
                }
            } else {
                let i = rng.gen_range(0..present.len());
                let (u, v) = present.swap_remove(i);
                s.delete_edge(u, v).unwrap();
            }
            if step % 500 == 0 {
                let report = s.verify_consistency();
                assert!(report.ok(), "step {step}: {:?}", report.mismatch);
            }
        }
        let report = s.verify_consistency();
        assert!(report.ok(), "final: {:?}", report.mismatch);
    }

    #[test]
    fn audit_catches_planted_fault() {
        let mut s = ColoringState::init(10, 4, 3).unwrap();
        s.insert_edge(VertexId(0), VertexId(1)).unwrap();
        assert!(s.verify_consistency().ok());
        s.corrupt_d_le_for_test(VertexId(0));
        let report = s.verify_consistency();
        assert!(!report.ok());
        assert!(
            report.mismatch.as_deref().unwrap_or("").contains("d_le"),
            "mismatch should name the corrupted counter: {:?}",
            report.mismatch
        );
    }

    #[test]
    fn dump_lists_every_vertex() {
        let mut s = ColoringState::with_levels_and_colors(2, 2, &[1, 2], &[3, 0]).unwrap();
        s.set_color(VertexId(0), Color(2), Timestamp(9));
        let dump = s.dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "0 1 2 9");
        assert_eq!(lines[1], "1 2 ⊥ 0");
    }

    #[test]
    fn level_sampler_respects_truncated_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let delta = 8u32; // top level 4
        let mut counts = [0u32; 5];
        let draws = 200_000;
        for _ in 0..draws {
            counts[sample_level(delta, &mut rng).0 as usize] += 1;
        }
        let expect = [0.0, 0.5, 0.25, 0.125, 0.125];
        for k in 1..=4 {
            let got = counts[k] as f64 / draws as f64;
            assert!(
                (got - expect[k]).abs() < 0.01,
                "level {k}: frequency {got:.4} vs expected {:.4}",
                expect[k]
            );
        }
    }
}
