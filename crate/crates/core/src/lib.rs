//! Dynamic (Δ+1)-vertex coloring engines.
//!
//! The graph starts empty over a fixed vertex set with a fixed degree bound
//! `delta`, and edges arrive and depart over time. Every engine maintains a
//! proper coloring with `delta + 1` colors while doing expected-constant-ish
//! work per update:
//!
//! * [`seq::SeqEngine`] — one update at a time, with an optional budgeted
//!   stepping interface that suspends and resumes recoloring mid-flight.
//! * [`batch::BatchEngine`] — applies a batch of same-kind updates, then
//!   repairs the coloring in synchronized recoloring rounds.
//! * [`congest::CongestSim`] — a round-based message-passing simulation in
//!   which each vertex runs the repair protocol over ten-round epochs.
//! * [`deamortize::DeamortizedColoring`] — staggers several sequential
//!   engine copies to turn amortized bounds into per-update worst-case ones.
//!
//! Randomness is fully deterministic given a root seed (see [`rng`]), and
//! all engines expose work counters ([`work::WorkStats`]) plus invariant
//! checkers used heavily by the test suite.

pub mod batch;
pub mod congest;
pub mod deamortize;
pub mod ids;
pub mod rng;
pub mod sampler;
pub mod seq;
pub mod state;
pub mod work;

pub use batch::{BatchEngine, BatchError, BatchReport, BatchTrace, RoundRow};
pub use congest::{CongestSim, MessageStats, RoundReport, StepReport, TokenLedger};
pub use deamortize::{DeamortizeError, DeamortizedColoring, OnNoCleanCopy};
pub use ids::{Color, EdgeKey, Level, Timestamp, UpdateEvent, UpdateKind, VertexId};
pub use seq::{ChainLink, RecolorTrace, RecolorTrigger, SeqEngine, StepOutcome};
pub use work::WorkStats;
