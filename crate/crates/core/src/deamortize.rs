//! Worst-case update cost via redundant engine copies.
//!
//! A single sequential engine is cheap on average but an unlucky update can
//! trigger a long recoloring cascade. This wrapper runs `K` independently
//! seeded copies of the engine and gives each a fixed work budget per
//! update; a copy that exhausts its budget suspends mid-recoloring and
//! catches up on later (cheaper) updates. Because the copies draw their
//! randomness independently, an expensive cascade hits at most a few of
//! them at once, and with high probability some copy is *clean* — fully
//! caught up — at any moment. Queries are answered from a clean copy, whose
//! coloring is a proper coloring of the current graph.
//!
//! Defaults follow the analysis: `K = 2·⌈log2 n⌉` copies with a budget of
//! `64·⌈log2 n⌉` work units per copy per update.
//!
//! If every copy is dirty at query time, the [`OnNoCleanCopy`] policy
//! either surfaces [`DeamortizeError::NoCleanCopy`] or transparently
//! rebuilds all copies from the retained update history under fresh seeds.

use std::collections::VecDeque;

use indexmap::IndexSet;
use thiserror::Error;

use crate::ids::{ceil_log2, Color, EdgeKey, UpdateEvent, UpdateKind, VertexId};
use crate::rng::{self, stream};
use crate::seq::SeqEngine;
use crate::state::{ColoringState, InitError, UpdateError};
use crate::work::WorkStats;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeamortizeError {
    /// Every copy has a backlog. Call [`DeamortizedColoring::tick`] (or use
    /// the restart policy) and retry.
    #[error("no engine copy is clean")]
    NoCleanCopy,
    #[error(transparent)]
    Update(#[from] UpdateError),
}

/// What a query should do when no copy is clean.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum OnNoCleanCopy {
    /// Return [`DeamortizeError::NoCleanCopy`].
    #[default]
    Error,
    /// Rebuild every copy from the update history under fresh seeds, then
    /// answer. Expensive, but queries always succeed.
    Restart,
}

/// Backlog snapshot for one copy.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CopyProgress {
    /// Updates accepted by the wrapper but not yet begun by this copy.
    pub queued: usize,
    /// Whether the engine has no update in flight.
    pub idle: bool,
}

impl CopyProgress {
    pub fn clean(&self) -> bool {
        self.queued == 0 && self.idle
    }
}

struct EngineCopy {
    engine: SeqEngine,
    queue: VecDeque<UpdateEvent>,
}

impl EngineCopy {
    fn clean(&self) -> bool {
        self.queue.is_empty() && self.engine.is_idle()
    }

    /// Spend up to `allowance` work units on the backlog. Returns the spend.
    fn drain(&mut self, allowance: u64) -> u64 {
        let mut left = allowance;
        loop {
            if self.engine.is_idle() {
                let Some(ev) = self.queue.front().copied() else { break };
                if left == 0 {
                    break;
                }
                let before = self.engine.work().total();
                self.engine
                    .begin_update(ev)
                    .expect("queued updates were validated against the mirror graph");
                self.queue.pop_front();
                left = left.saturating_sub(self.engine.work().total() - before);
            }
            let out = self.engine.step_budgeted(left);
            left = left.saturating_sub(out.spent);
            if !out.finished {
                break;
            }
            if self.queue.is_empty() {
                break;
            }
        }
        allowance - left
    }
}

/// Dynamic coloring with per-update worst-case work bounds.
pub struct DeamortizedColoring {
    n: u32,
    delta: u32,
    root_seed: u64,
    generation: u64,
    budget: u64,
    policy: OnNoCleanCopy,
    copies: Vec<EngineCopy>,
    // Ground-truth edge set used to validate updates before they fan out.
    mirror: IndexSet<EdgeKey>,
    degrees: Vec<u32>,
    history: Vec<UpdateEvent>,
    clean_hint: usize,
}

impl DeamortizedColoring {
    /// `K = 2·⌈log2 n⌉` copies, `64·⌈log2 n⌉` budget (both at least 1/64).
    pub fn new(n: u32, delta: u32, root_seed: u64) -> Result<Self, InitError> {
        let k = (2 * ceil_log2(n)).max(1);
        let budget = (64 * ceil_log2(n) as u64).max(64);
        Self::with_config(n, delta, root_seed, k, budget, OnNoCleanCopy::Error)
    }

    pub fn with_config(
        n: u32,
        delta: u32,
        root_seed: u64,
        copies: u32,
        budget: u64,
        policy: OnNoCleanCopy,
    ) -> Result<Self, InitError> {
        let copies = copies.max(1);
        let mut built = Vec::with_capacity(copies as usize);
        for i in 0..copies {
            let seed = copy_seed(root_seed, 0, i);
            built.push(EngineCopy { engine: SeqEngine::new(n, delta, seed)?, queue: VecDeque::new() });
        }
        Ok(DeamortizedColoring {
            n,
            delta,
            root_seed,
            generation: 0,
            budget,
            policy,
            copies: built,
            mirror: IndexSet::new(),
            degrees: vec![0; n as usize],
            history: Vec::new(),
            clean_hint: 0,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn delta(&self) -> u32 {
        self.delta
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn copy_count(&self) -> usize {
        self.copies.len()
    }

    /// Bumped once per restart; copy seeds depend on it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// The seed copy `i` draws its randomness from (current generation).
    pub fn copy_seed(&self, i: u32) -> u64 {
        copy_seed(self.root_seed, self.generation, i)
    }

    pub fn copy_state(&self, i: usize) -> &ColoringState {
        self.copies[i].engine.state()
    }

    pub fn copy_progress(&self) -> Vec<CopyProgress> {
        self.copies
            .iter()
            .map(|c| CopyProgress { queued: c.queue.len(), idle: c.engine.is_idle() })
            .collect()
    }

    /// Total work spent across all copies so far.
    pub fn total_work(&self) -> WorkStats {
        self.copies.iter().map(|c| c.engine.work()).fold(WorkStats::default(), |a, b| a + b)
    }

    /// Validate one update, fan it out, and give every copy one budget
    /// slice. Returns the work spent across copies on this call.
    pub fn update(&mut self, ev: UpdateEvent) -> Result<u64, DeamortizeError> {
        self.validate(ev)?;
        match ev.kind {
            UpdateKind::Insert => {
                self.mirror.insert(ev.key());
                self.degrees[ev.u.idx()] += 1;
                self.degrees[ev.v.idx()] += 1;
            }
            UpdateKind::Delete => {
                self.mirror.swap_remove(&ev.key());
                self.degrees[ev.u.idx()] -= 1;
                self.degrees[ev.v.idx()] -= 1;
            }
        }
        self.history.push(ev);
        let mut spent = 0;
        for copy in &mut self.copies {
            copy.queue.push_back(ev);
            spent += copy.drain(self.budget);
        }
        Ok(spent)
    }

    /// One budget slice for every copy, with no new update. Returns the
    /// work spent.
    pub fn tick(&mut self) -> u64 {
        self.copies.iter_mut().map(|c| c.drain(self.budget)).sum()
    }

    /// Index of a caught-up copy, sticky across calls while it stays clean.
    pub fn clean_copy_index(&mut self) -> Option<usize> {
        if self.copies[self.clean_hint].clean() {
            return Some(self.clean_hint);
        }
        let found = self.copies.iter().position(EngineCopy::clean)?;
        self.clean_hint = found;
        Some(found)
    }

    /// Current color of `v` per a clean copy.
    pub fn query_color(&mut self, v: VertexId) -> Result<Color, DeamortizeError> {
        if v.0 >= self.n {
            return Err(UpdateError::VertexOutOfRange { v, n: self.n }.into());
        }
        let i = self.require_clean()?;
        Ok(self.copies[i]
            .engine
            .color(v)
            .expect("a clean copy is fully colored"))
    }

    /// All colors per a clean copy, indexed by vertex id.
    pub fn query_coloring(&mut self) -> Result<Vec<Color>, DeamortizeError> {
        let i = self.require_clean()?;
        let state = self.copies[i].engine.state();
        Ok((0..self.n)
            .map(|j| state.color(VertexId(j)).expect("a clean copy is fully colored"))
            .collect())
    }

    fn require_clean(&mut self) -> Result<usize, DeamortizeError> {
        if let Some(i) = self.clean_copy_index() {
            return Ok(i);
        }
        match self.policy {
            OnNoCleanCopy::Error => Err(DeamortizeError::NoCleanCopy),
            OnNoCleanCopy::Restart => {
                self.restart();
                Ok(0)
            }
        }
    }

    /// Rebuild every copy from history under generation-fresh seeds.
    fn restart(&mut self) {
        self.generation += 1;
        for (i, copy) in self.copies.iter_mut().enumerate() {
            let seed = copy_seed(self.root_seed, self.generation, i as u32);
            let mut engine = SeqEngine::new(self.n, self.delta, seed)
                .expect("parameters were valid at construction");
            for ev in &self.history {
                match ev.kind {
                    UpdateKind::Insert => engine.add_edge(ev.u, ev.v),
                    UpdateKind::Delete => engine.delete_edge(ev.u, ev.v).map(|_| None),
                }
                .expect("history replay against a fresh engine cannot fail");
            }
            copy.engine = engine;
            copy.queue.clear();
        }
        self.clean_hint = 0;
    }

    /// Same checks, in the same order, as the underlying engine performs.
    fn validate(&self, ev: UpdateEvent) -> Result<(), UpdateError> {
        for w in [ev.u, ev.v] {
            if w.0 >= self.n {
                return Err(UpdateError::VertexOutOfRange { v: w, n: self.n });
            }
        }
        if ev.u == ev.v {
            return Err(UpdateError::LoopEdge { v: ev.u });
        }
        match ev.kind {
            UpdateKind::Insert => {
                if self.mirror.contains(&ev.key()) {
                    return Err(UpdateError::DuplicateEdge { u: ev.u, v: ev.v });
                }
                for w in [ev.u, ev.v] {
                    if self.degrees[w.idx()] >= self.delta {
                        return Err(UpdateError::DegreeOverflow { v: w, delta: self.delta });
                    }
                }
            }
            UpdateKind::Delete => {
                if !self.mirror.contains(&ev.key()) {
                    return Err(UpdateError::MissingEdge { u: ev.u, v: ev.v });
                }
            }
        }
        Ok(())
    }
}

fn copy_seed(root: u64, generation: u64, i: u32) -> u64 {
    rng::derive_seed(root, stream::DEAMORT_COPY, &[generation, i as u64])
}
