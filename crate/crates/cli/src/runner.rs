//! Drives a parsed workload through the engine its `mode` names and
//! records one metrics row per unit of progress.

use dyncolor::batch::{BatchEngine, BatchError};
use dyncolor::congest::CongestSim;
use dyncolor::deamortize::{DeamortizeError, DeamortizedColoring, OnNoCleanCopy};
use dyncolor::ids::{ceil_log2, UpdateEvent, UpdateKind, VertexId};
use dyncolor::seq::SeqEngine;
use dyncolor::state::{ColoringState, InitError};
use thiserror::Error;

use crate::metrics::MetricsRow;
use crate::workload::{Mode, Workload};

/// How many extra settle rounds the message-passing driver will run after
/// the scripted rounds before giving up on quiescence.
const DRAIN_ROUND_CAP: u64 = 200_000;

pub struct RunConfig {
    pub mode: Mode,
    /// Full-state verification period in updates (message-passing mode:
    /// rounds); 0 disables everything but the engines' own checks.
    pub verify_every: u64,
    /// Work-budget override for deamortized mode.
    pub budget: Option<u64>,
    /// Copy-count override for deamortized mode.
    pub copies: Option<u32>,
}

/// Outcome of a run that didn't hit a usage error. `violation` holds the
/// first invariant failure (the run stops there) and `dump` a state
/// snapshot for offline inspection.
pub struct RunSummary {
    pub updates_applied: u64,
    pub violation: Option<String>,
    pub dump: String,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("engine setup failed: {0}")]
    Init(#[from] InitError),
    #[error("event {index}: {detail}")]
    BadEvent { index: u64, detail: String },
}

pub fn run(
    wl: &Workload,
    cfg: &RunConfig,
    rows: &mut Vec<MetricsRow>,
) -> Result<RunSummary, RunError> {
    match cfg.mode {
        Mode::Seq => run_seq(wl, cfg, rows),
        Mode::Batch => run_batch(wl, cfg, rows),
        Mode::Congest => run_congest(wl, cfg, rows),
        Mode::Deamortized => run_deamortized(wl, cfg, rows),
    }
}

fn boundary(verify_every: u64, index: u64) -> bool {
    verify_every > 0 && index % verify_every == 0
}

/// Consistency plus properness scan on a full state.
fn audit_state(state: &ColoringState) -> Option<String> {
    let report = state.verify_consistency();
    if let Some(m) = report.mismatch {
        return Some(m);
    }
    let bad = state.properness_violations();
    if let Some(edge) = bad.first() {
        return Some(format!("monochromatic edge {edge}"));
    }
    None
}

fn run_seq(
    wl: &Workload,
    cfg: &RunConfig,
    rows: &mut Vec<MetricsRow>,
) -> Result<RunSummary, RunError> {
    let mut engine = SeqEngine::new(wl.n, wl.delta, wl.seed)?;
    let mut prev_work = engine.work().total();
    let mut index = 0u64;
    for ev in wl.chunks.iter().flatten() {
        index += 1;
        let traces = match ev.kind {
            UpdateKind::Insert => engine
                .add_edge(ev.u, ev.v)
                .map(|t| t.into_iter().collect::<Vec<_>>()),
            UpdateKind::Delete => engine.delete_edge(ev.u, ev.v),
        }
        .map_err(|e| RunError::BadEvent { index, detail: e.to_string() })?;
        let work = engine.work().total();
        let violation = if boundary(cfg.verify_every, index) {
            audit_state(engine.state())
        } else {
            None
        };
        rows.push(MetricsRow {
            update_index: index,
            mode: Mode::Seq,
            work_units: work - prev_work,
            chain_length: traces.iter().map(|t| t.links.len() as u64).sum(),
            rounds: 0,
            tokens_created: 0,
            messages: 0,
            properness_ok: violation.is_none(),
        });
        prev_work = work;
        if let Some(msg) = violation {
            return Ok(RunSummary {
                updates_applied: index,
                violation: Some(format!("after update {index}: {msg}")),
                dump: engine.state().dump(),
            });
        }
    }
    let final_violation = audit_state(engine.state());
    Ok(RunSummary {
        updates_applied: index,
        dump: if final_violation.is_some() { engine.state().dump() } else { String::new() },
        violation: final_violation.map(|m| format!("after update {index}: {m}")),
    })
}

/// Split one flush chunk into maximal same-kind runs, since the batch
/// engine takes pure insertion or pure deletion batches.
fn same_kind_runs(chunk: &[UpdateEvent]) -> Vec<(UpdateKind, Vec<(VertexId, VertexId)>)> {
    let mut out: Vec<(UpdateKind, Vec<(VertexId, VertexId)>)> = Vec::new();
    for ev in chunk {
        match out.last_mut() {
            Some((kind, edges)) if *kind == ev.kind => edges.push((ev.u, ev.v)),
            _ => out.push((ev.kind, vec![(ev.u, ev.v)])),
        }
    }
    out
}

fn run_batch(
    wl: &Workload,
    cfg: &RunConfig,
    rows: &mut Vec<MetricsRow>,
) -> Result<RunSummary, RunError> {
    let mut engine = BatchEngine::new(wl.n, wl.delta, wl.seed)?;
    engine.set_audit(cfg.verify_every > 0);
    let mut index = 0u64;
    for chunk in &wl.chunks {
        for (kind, edges) in same_kind_runs(chunk) {
            let batch_start = index;
            let report = match kind {
                UpdateKind::Insert => engine.add_edges(&edges),
                UpdateKind::Delete => engine.delete_edges(&edges),
            };
            let report = match report {
                Ok(r) => r,
                Err(err @ (BatchError::AuditFailed { .. } | BatchError::RoundLimitExceeded { .. })) => {
                    rows.push(MetricsRow {
                        update_index: batch_start + edges.len() as u64,
                        mode: Mode::Batch,
                        work_units: 0,
                        chain_length: 0,
                        rounds: 0,
                        tokens_created: 0,
                        messages: 0,
                        properness_ok: false,
                    });
                    return Ok(RunSummary {
                        updates_applied: batch_start,
                        violation: Some(err.to_string()),
                        dump: engine.state().dump(),
                    });
                }
            };
            if let Some(((u, v), err)) = report.rejected.first() {
                let offset = edges
                    .iter()
                    .position(|e| e == &(*u, *v))
                    .expect("rejected edge came from this batch") as u64;
                return Err(RunError::BadEvent {
                    index: batch_start + offset + 1,
                    detail: err.to_string(),
                });
            }
            index += edges.len() as u64;
            let violation = if boundary(cfg.verify_every, index)
                || crossed_boundary(cfg.verify_every, batch_start, index)
            {
                audit_state(engine.state())
            } else {
                None
            };
            rows.push(MetricsRow {
                update_index: index,
                mode: Mode::Batch,
                work_units: report.trace.work.total(),
                chain_length: 0,
                rounds: report.trace.rounds.len() as u64,
                tokens_created: 0,
                messages: 0,
                properness_ok: violation.is_none(),
            });
            if let Some(msg) = violation {
                return Ok(RunSummary {
                    updates_applied: index,
                    violation: Some(format!("after update {index}: {msg}")),
                    dump: engine.state().dump(),
                });
            }
        }
    }
    let final_violation = audit_state(engine.state());
    Ok(RunSummary {
        updates_applied: index,
        dump: if final_violation.is_some() { engine.state().dump() } else { String::new() },
        violation: final_violation.map(|m| format!("after update {index}: {m}")),
    })
}

/// Did any multiple of `every` fall inside the half-open range
/// (`from`, `to`]?
fn crossed_boundary(every: u64, from: u64, to: u64) -> bool {
    every > 0 && to / every > from / every
}

fn congest_dump(sim: &CongestSim) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let stats = sim.message_stats();
    writeln!(
        out,
        "round {} edges {} accepted {} sent {} delivered {}",
        sim.round(),
        sim.edge_count(),
        sim.updates_accepted(),
        stats.sent,
        stats.delivered
    )
    .expect("writing to a String cannot fail");
    for v in 0..sim.n() {
        let vid = VertexId(v);
        let color = sim
            .node_color(vid)
            .map_or_else(|| "-".to_string(), |c| c.to_string());
        writeln!(
            out,
            "{v}: color={color} level={} token={} preemptive={}",
            sim.node_level(vid),
            u8::from(sim.node_has_regular_token(vid)),
            u8::from(sim.node_has_preemptive_token(vid)),
        )
        .expect("writing to a String cannot fail");
    }
    out
}

fn run_congest(
    wl: &Workload,
    cfg: &RunConfig,
    rows: &mut Vec<MetricsRow>,
) -> Result<RunSummary, RunError> {
    let mut sim = CongestSim::new(wl.n, wl.delta, wl.seed)?;
    sim.set_strict(false);
    let mut index = 0u64;
    let mut prev_sent = 0u64;
    let mut prev_births = 0u64;
    let mut round_no = 0u64;
    let push_round = |sim: &CongestSim,
                          rows: &mut Vec<MetricsRow>,
                          index: u64,
                          prev_sent: &mut u64,
                          prev_births: &mut u64,
                          ok: bool| {
        let sent = sim.message_stats().sent;
        let births = sim.ledger().births;
        rows.push(MetricsRow {
            update_index: index,
            mode: Mode::Congest,
            work_units: 0,
            chain_length: 0,
            rounds: 1,
            tokens_created: births - *prev_births,
            messages: sent - *prev_sent,
            properness_ok: ok,
        });
        *prev_sent = sent;
        *prev_births = births;
    };
    for chunk in &wl.chunks {
        round_no += 1;
        sim.set_deep_verify(boundary(cfg.verify_every, round_no));
        let step = sim.step(chunk);
        if let Some((ev, err)) = step.rejected.first() {
            let offset = chunk
                .iter()
                .position(|e| e == ev)
                .expect("rejected event came from this chunk") as u64;
            return Err(RunError::BadEvent {
                index: index + offset + 1,
                detail: err.to_string(),
            });
        }
        index += chunk.len() as u64;
        push_round(&sim, rows, index, &mut prev_sent, &mut prev_births, step.report.ok);
        if !step.report.ok {
            return Ok(RunSummary {
                updates_applied: index,
                violation: Some(format!(
                    "round {}: {}",
                    step.report.round,
                    step.report.detail.unwrap_or_else(|| "invariant failure".to_string())
                )),
                dump: congest_dump(&sim),
            });
        }
    }
    // Let in-flight recolorings settle so the final coloring is total.
    let mut extra = 0u64;
    while !sim.is_quiescent() {
        extra += 1;
        if extra > DRAIN_ROUND_CAP {
            return Ok(RunSummary {
                updates_applied: index,
                violation: Some(format!(
                    "not quiescent after {DRAIN_ROUND_CAP} settle rounds"
                )),
                dump: congest_dump(&sim),
            });
        }
        round_no += 1;
        sim.set_deep_verify(boundary(cfg.verify_every, round_no));
        let step = sim.step(&[]);
        push_round(&sim, rows, index, &mut prev_sent, &mut prev_births, step.report.ok);
        if !step.report.ok {
            return Ok(RunSummary {
                updates_applied: index,
                violation: Some(format!(
                    "round {}: {}",
                    step.report.round,
                    step.report.detail.unwrap_or_else(|| "invariant failure".to_string())
                )),
                dump: congest_dump(&sim),
            });
        }
    }
    let views = sim.verify_local_views().err();
    Ok(RunSummary {
        updates_applied: index,
        dump: if views.is_some() { congest_dump(&sim) } else { String::new() },
        violation: views,
    })
}

fn run_deamortized(
    wl: &Workload,
    cfg: &RunConfig,
    rows: &mut Vec<MetricsRow>,
) -> Result<RunSummary, RunError> {
    let mut engine = match (cfg.copies, cfg.budget) {
        (None, None) => DeamortizedColoring::new(wl.n, wl.delta, wl.seed)?,
        (copies, budget) => {
            let log = ceil_log2(wl.n) as u64;
            DeamortizedColoring::with_config(
                wl.n,
                wl.delta,
                wl.seed,
                copies.unwrap_or((2 * log as u32).max(1)),
                budget.unwrap_or((64 * log).max(64)),
                OnNoCleanCopy::Error,
            )?
        }
    };
    let mut index = 0u64;
    for ev in wl.chunks.iter().flatten() {
        index += 1;
        let spent = engine.update(*ev).map_err(|e| match e {
            DeamortizeError::Update(err) => RunError::BadEvent { index, detail: err.to_string() },
            DeamortizeError::NoCleanCopy => RunError::BadEvent {
                index,
                detail: "no clean copy during an update".to_string(),
            },
        })?;
        let violation = if boundary(cfg.verify_every, index) {
            audit_clean_copy(&mut engine)
        } else {
            None
        };
        rows.push(MetricsRow {
            update_index: index,
            mode: Mode::Deamortized,
            work_units: spent,
            chain_length: 0,
            rounds: 0,
            tokens_created: 0,
            messages: 0,
            properness_ok: violation.is_none(),
        });
        if let Some(msg) = violation {
            let i = engine.clean_copy_index();
            return Ok(RunSummary {
                updates_applied: index,
                violation: Some(format!("after update {index}: {msg}")),
                dump: i.map(|i| engine.copy_state(i).dump()).unwrap_or_default(),
            });
        }
    }
    let final_violation = audit_clean_copy(&mut engine);
    let dump = if final_violation.is_some() {
        engine
            .clean_copy_index()
            .map(|i| engine.copy_state(i).dump())
            .unwrap_or_default()
    } else {
        String::new()
    };
    Ok(RunSummary {
        updates_applied: index,
        violation: final_violation.map(|m| format!("after update {index}: {m}")),
        dump,
    })
}

/// Tick until some copy catches up, then audit that copy in full.
fn audit_clean_copy(engine: &mut DeamortizedColoring) -> Option<String> {
    let mut guard = 0u64;
    while engine.clean_copy_index().is_none() {
        engine.tick();
        guard += 1;
        if guard > 1_000_000 {
            return Some("no copy reached a clean state".to_string());
        }
    }
    let i = engine.clean_copy_index().expect("loop exits on a clean copy");
    audit_state(engine.copy_state(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{generate, GenConfig, Profile};

    fn config(mode: Mode, verify_every: u64) -> RunConfig {
        RunConfig { mode, verify_every, budget: None, copies: None }
    }

    fn workload(mode: Mode, events: usize) -> Workload {
        generate(&GenConfig {
            n: 48,
            delta: 6,
            events,
            seed: 1212,
            mode,
            profile: Profile::RandomChurn,
            flush_mean: 3.0,
        })
    }

    #[test]
    fn every_mode_survives_a_small_churn_script() {
        for mode in Mode::ALL {
            let wl = workload(mode, 400);
            let mut rows = Vec::new();
            let summary = run(&wl, &config(mode, 25), &mut rows).expect("run completes");
            assert!(summary.violation.is_none(), "{mode}: {:?}", summary.violation);
            assert_eq!(summary.updates_applied, 400, "{mode}");
            assert!(!rows.is_empty());
            assert!(rows.iter().all(|r| r.properness_ok));
            assert!(rows.iter().all(|r| r.mode == mode));
            let last = rows.last().expect("nonempty");
            assert_eq!(last.update_index, 400);
        }
    }

    #[test]
    fn row_streams_are_deterministic() {
        let wl = workload(Mode::Congest, 300);
        let mut a = Vec::new();
        let mut b = Vec::new();
        run(&wl, &config(Mode::Congest, 10), &mut a).unwrap();
        run(&wl, &config(Mode::Congest, 10), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_events_are_reported_with_their_global_index() {
        let mut wl = workload(Mode::Seq, 10);
        // Delete an edge that is certainly absent: the generator never
        // leaves a self-paired vertex, so fabricate a missing-edge delete.
        let bogus = UpdateEvent::delete(VertexId(46), VertexId(47));
        assert!(!wl.chunks[0].contains(&bogus));
        wl.chunks[0].push(bogus);
        let mut rows = Vec::new();
        match run(&wl, &config(Mode::Seq, 0), &mut rows) {
            Err(RunError::BadEvent { index, .. }) => assert_eq!(index, 11),
            other => panic!("expected BadEvent, got {:?}", other.map(|s| s.violation)),
        }
        assert_eq!(rows.len(), 10, "rows up to the failure survive");
    }

    #[test]
    fn deamortized_overrides_are_honored() {
        let wl = workload(Mode::Deamortized, 120);
        let cfg = RunConfig {
            mode: Mode::Deamortized,
            verify_every: 40,
            budget: Some(4096),
            copies: Some(3),
        };
        let mut rows = Vec::new();
        let summary = run(&wl, &cfg, &mut rows).unwrap();
        assert!(summary.violation.is_none());
        assert_eq!(rows.len(), 120);
    }

    #[test]
    fn batch_runs_split_mixed_chunks_by_kind() {
        let events = vec![
            UpdateEvent::insert(VertexId(0), VertexId(1)),
            UpdateEvent::insert(VertexId(1), VertexId(2)),
            UpdateEvent::delete(VertexId(0), VertexId(1)),
            UpdateEvent::insert(VertexId(2), VertexId(3)),
        ];
        let wl = Workload { n: 8, delta: 3, mode: Mode::Batch, seed: 5, chunks: vec![events] };
        let mut rows = Vec::new();
        let summary = run(&wl, &config(Mode::Batch, 1), &mut rows).unwrap();
        assert!(summary.violation.is_none());
        assert_eq!(rows.len(), 3, "insert-run, delete-run, insert-run");
        assert_eq!(rows[0].update_index, 2);
        assert_eq!(rows[1].update_index, 3);
        assert_eq!(rows[2].update_index, 4);
    }
}
