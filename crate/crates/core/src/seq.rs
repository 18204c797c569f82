//! The sequential dynamic coloring engine.
//!
//! One edge update at a time. Structural bookkeeping always commits first;
//! recoloring runs afterwards:
//!
//! * An inserted edge whose endpoints collide recolors the endpoint that was
//!   colored later (larger timestamp; the second-named endpoint on a tie).
//! * A deleted edge gives each endpoint that lost a lower-or-equal-level
//!   neighbor an independent lottery with probability `1/(Δ+1−d_le)`,
//!   measured after the deletion; winners are recolored. The lottery keeps
//!   colors distributed the way a fresh sample would, which is what the
//!   constant expected update cost rests on.
//! * Recoloring a vertex may leave exactly one strictly-higher-level
//!   neighbor holding the same color; the cascade then climbs to it. Levels
//!   strictly increase along the chain, so its length is bounded by the
//!   number of levels.
//!
//! The whole update pipeline is a resumable state machine: [`SeqEngine::add_edge`]
//! and [`SeqEngine::delete_edge`] run it to completion, while
//! [`SeqEngine::begin_update`] plus [`SeqEngine::step_budgeted`] execute the
//! same atoms under a work budget, suspending between atoms. Both paths
//! consume the random stream identically, which the redundant-copy wrapper
//! and its differential tests rely on.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ids::{Color, Level, Timestamp, UpdateEvent, UpdateKind, VertexId};
use crate::rng::{self, stream};
use crate::state::{ColoringState, ConsistencyReport, InitError, UpdateError};
use crate::work::WorkStats;

/// Why a recoloring chain started.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RecolorTrigger {
    /// An inserted edge produced a monochromatic pair.
    InsertConflict,
    /// A deletion lottery fired.
    DeleteLottery,
    /// Explicit caller request.
    Manual,
}

/// One vertex of a recoloring chain.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ChainLink {
    pub vertex: VertexId,
    pub level: Level,
    /// Neighbors examined while processing this link (both view snapshots).
    pub touched_neighbors: u64,
    /// Palette-loop iterations until a color was accepted.
    pub sample_attempts: u64,
}

/// A completed recoloring cascade. Levels strictly increase along `links`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RecolorTrace {
    pub trigger: RecolorTrigger,
    pub links: Vec<ChainLink>,
}

impl RecolorTrace {
    /// Total neighbors examined over the chain.
    pub fn cost(&self) -> u64 {
        self.links.iter().map(|l| l.touched_neighbors).sum()
    }
}

/// Result of one budgeted slice.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct StepOutcome {
    /// Work units consumed by this slice.
    pub spent: u64,
    /// Whether the in-flight update is fully processed.
    pub finished: bool,
}

#[derive(Clone, Debug)]
enum Task {
    Lottery { v: VertexId },
    Recolor { v: VertexId, trigger: RecolorTrigger },
}

#[derive(Clone, Debug)]
enum Stage {
    Strip { idx: usize },
    Sample,
    Commit { fresh: Color, idx: usize, conflict: Option<VertexId> },
}

#[derive(Clone, Debug)]
struct LinkRun {
    vertex: VertexId,
    old_color: Option<Color>,
    nbs_ge: Vec<VertexId>,
    nbs_gt: Vec<VertexId>,
    stage: Stage,
    attempts: u64,
}

impl LinkRun {
    fn touched(&self) -> u64 {
        (self.nbs_ge.len() + self.nbs_gt.len()) as u64
    }
}

#[derive(Clone, Debug)]
struct ExecState {
    tasks: VecDeque<Task>,
    trigger: RecolorTrigger,
    current: Option<LinkRun>,
    links: Vec<ChainLink>,
    traces: Vec<RecolorTrace>,
}

/// Sequential (Δ+1)-coloring engine over a fixed vertex set.
#[derive(Clone, Debug)]
pub struct SeqEngine {
    state: ColoringState,
    rng: ChaCha8Rng,
    next_timestamp: u64,
    exec: Option<ExecState>,
    finished_traces: Vec<RecolorTrace>,
}

impl SeqEngine {
    pub fn new(n: u32, delta: u32, root_seed: u64) -> Result<Self, InitError> {
        let state = ColoringState::init(n, delta, root_seed)?;
        Ok(Self::from_state(state, root_seed))
    }

    /// Wrap an existing state (useful for pinned-attribute tests). The
    /// engine's own stream is derived from `root_seed`, independent of the
    /// stream that initialized the state.
    pub fn from_state(state: ColoringState, root_seed: u64) -> Self {
        SeqEngine {
            state,
            rng: rng::stream_rng(root_seed, stream::SEQ, &[]),
            next_timestamp: 1,
            exec: None,
            finished_traces: Vec::new(),
        }
    }

    pub fn state(&self) -> &ColoringState {
        &self.state
    }

    pub fn n(&self) -> u32 {
        self.state.n()
    }

    pub fn delta(&self) -> u32 {
        self.state.delta()
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

    /// No in-flight update: every begun update has been stepped to its end.
    pub fn is_idle(&self) -> bool {
        self.exec.is_none()
    }

    /// Insert an edge and repair the coloring. Returns the recoloring chain
    /// if the endpoints collided.
    pub fn add_edge(&mut self, u: VertexId, v: VertexId) -> Result<Option<RecolorTrace>, UpdateError> {
        self.begin_update(UpdateEvent::insert(u, v))?;
        self.step_budgeted(u64::MAX);
        let mut traces = self.take_traces();
        debug_assert!(traces.len() <= 1);
        Ok(traces.pop())
    }

    /// Delete an edge; each endpoint that lost a lower-or-equal neighbor may
    /// win an independent recoloring lottery. Returns the resulting chains.
    pub fn delete_edge(&mut self, u: VertexId, v: VertexId) -> Result<Vec<RecolorTrace>, UpdateError> {
        self.begin_update(UpdateEvent::delete(u, v))?;
        self.step_budgeted(u64::MAX);
        Ok(self.take_traces())
    }

    /// Force a recoloring of `v` right now.
    pub fn recolor(&mut self, v: VertexId) -> Result<RecolorTrace, UpdateError> {
        if self.exec.is_some() {
            return Err(UpdateError::UpdateInProgress);
        }
        if v.0 >= self.state.n() {
            return Err(UpdateError::VertexOutOfRange { v, n: self.state.n() });
        }
        self.finished_traces.clear();
        let mut tasks = VecDeque::new();
        tasks.push_back(Task::Recolor { v, trigger: RecolorTrigger::Manual });
        self.exec = Some(ExecState {
            tasks,
            trigger: RecolorTrigger::Manual,
            current: None,
            links: Vec::new(),
            traces: Vec::new(),
        });
        self.step_budgeted(u64::MAX);
        let mut traces = self.take_traces();
        debug_assert_eq!(traces.len(), 1);
        Ok(traces.pop().expect("manual recoloring always produces a chain"))
    }

    /// Apply an update's structural half and queue its recoloring work.
    /// The update is complete once [`Self::step_budgeted`] reports `finished`.
    pub fn begin_update(&mut self, ev: UpdateEvent) -> Result<(), UpdateError> {
        if self.exec.is_some() {
            return Err(UpdateError::UpdateInProgress);
        }
        self.finished_traces.clear();
        let mut tasks = VecDeque::new();
        let trigger;
        match ev.kind {
            UpdateKind::Insert => {
                self.state.insert_edge(ev.u, ev.v)?;
                trigger = RecolorTrigger::InsertConflict;
                let cu = self.state.color(ev.u);
                let cv = self.state.color(ev.v);
                if cu.is_some() && cu == cv {
                    // Recolor the endpoint colored later; on equal
                    // timestamps the second-named endpoint.
                    let target = if self.state.timestamp(ev.u) > self.state.timestamp(ev.v) {
                        ev.u
                    } else {
                        ev.v
                    };
                    tasks.push_back(Task::Recolor { v: target, trigger });
                }
            }
            UpdateKind::Delete => {
                let delta = self.state.delete_edge(ev.u, ev.v)?;
                trigger = RecolorTrigger::DeleteLottery;
                if delta.u_low {
                    tasks.push_back(Task::Lottery { v: ev.u });
                }
                if delta.v_low {
                    tasks.push_back(Task::Lottery { v: ev.v });
                }
            }
        }
        self.exec = Some(ExecState {
            tasks,
            trigger,
            current: None,
            links: Vec::new(),
            traces: Vec::new(),
        });
        Ok(())
    }

    /// Run queued recoloring atoms until `allowance` work units are spent or
    /// the update finishes. Atoms are small (one tracker edit, one sampling
    /// attempt, one lottery draw), so overshoot is bounded by one atom.
    pub fn step_budgeted(&mut self, allowance: u64) -> StepOutcome {
        let start = self.state.work().total();
        let mut finished = self.exec.is_none();
        while !finished {
            let spent = self.state.work().total() - start;
            if spent >= allowance {
                break;
            }
            finished = self.run_atom();
        }
        StepOutcome { spent: self.state.work().total() - start, finished }
    }

    /// Chains completed by the most recent fully-processed update.
    pub fn take_traces(&mut self) -> Vec<RecolorTrace> {
        std::mem::take(&mut self.finished_traces)
    }

    /// Execute one atom. Returns true when the whole update is done.
    fn run_atom(&mut self) -> bool {
        let Some(mut exec) = self.exec.take() else {
            return true;
        };
        let done = self.advance(&mut exec);
        if done {
            self.finished_traces = std::mem::take(&mut exec.traces);
            self.exec = None;
        } else {
            self.exec = Some(exec);
        }
        done
    }

    fn advance(&mut self, exec: &mut ExecState) -> bool {
        let Some(run) = exec.current.as_mut() else {
            // Between chains: pull the next task.
            return match exec.tasks.pop_front() {
                None => true,
                Some(Task::Lottery { v }) => {
                    // Probability 1/(Δ+1−d_le(v)), d_le after the deletion.
                    let den = self.state.delta() + 1 - self.state.d_le(v);
                    self.state.charge_dict_ops(1);
                    if self.rng.gen_range(0..den) == 0 {
                        exec.trigger = RecolorTrigger::DeleteLottery;
                        exec.current = Some(self.open_link(v));
                    }
                    false
                }
                Some(Task::Recolor { v, trigger }) => {
                    exec.trigger = trigger;
                    exec.current = Some(self.open_link(v));
                    false
                }
            };
        };

        let v = run.vertex;
        match run.stage {
            Stage::Strip { idx } => {
                if let (Some(old), true) = (run.old_color, idx < run.nbs_ge.len()) {
                    let x = run.nbs_ge[idx];
                    self.state.retract_low_color(x, old);
                    run.stage = Stage::Strip { idx: idx + 1 };
                } else {
                    run.stage = Stage::Sample;
                }
                false
            }
            Stage::Sample => {
                run.attempts += 1;
                let (candidate, _) = self.state.sample_free_color(v, &mut self.rng);
                // Accept if at most one strictly-higher neighbor shows the
                // candidate; the single holder, if any, continues the chain.
                self.state.charge_neighbor_visits(run.nbs_gt.len() as u64);
                let mut holders = 0u32;
                let mut conflict = None;
                for &w in &run.nbs_gt {
                    if self.state.color(w) == Some(candidate) {
                        holders += 1;
                        conflict = Some(w);
                    }
                }
                if holders <= 1 {
                    self.state.audit_palette(v);
                    run.stage = Stage::Commit { fresh: candidate, idx: 0, conflict };
                }
                false
            }
            Stage::Commit { fresh, idx, conflict } => {
                if idx < run.nbs_ge.len() {
                    let x = run.nbs_ge[idx];
                    self.state.register_low_color(x, fresh);
                    run.stage = Stage::Commit { fresh, idx: idx + 1, conflict };
                    return false;
                }
                // Close the link.
                let t = Timestamp(self.next_timestamp);
                self.next_timestamp += 1;
                self.state.set_color(v, fresh, t);
                exec.links.push(ChainLink {
                    vertex: v,
                    level: self.state.level(v),
                    touched_neighbors: run.touched(),
                    sample_attempts: run.attempts,
                });
                assert!(
                    exec.links.len() <= self.state.top_level().0 as usize,
                    "recoloring chain exceeded the level count"
                );
                match conflict {
                    Some(w) => {
                        assert!(
                            self.state.level(w) > self.state.level(v),
                            "chain must climb strictly: {} -> {}",
                            self.state.level(v),
                            self.state.level(w)
                        );
                        exec.current = Some(self.open_link(w));
                    }
                    None => {
                        exec.current = None;
                        exec.traces.push(RecolorTrace {
                            trigger: exec.trigger,
                            links: std::mem::take(&mut exec.links),
                        });
                    }
                }
                false
            }
        }
    }

    /// Start a chain link: snapshot the neighbor views, blank the color.
    fn open_link(&mut self, v: VertexId) -> LinkRun {
        let nbs_ge = self.state.nb_ge_snapshot(v);
        let nbs_gt = self.state.nb_gt_snapshot(v);
        let old_color = self.state.color(v);
        self.state.clear_color(v);
        LinkRun { vertex: v, old_color, nbs_ge, nbs_gt, stage: Stage::Strip { idx: 0 }, attempts: 0 }
    }
}
