//! Cross-cutting engine checks: deep verification under churn, agreement
//! between direct and budgeted execution, and scan-order independence of
//! the batch engine, all over randomized but valid-by-construction scripts.

mod common;

use dyncolor::batch::{BatchEngine, ScanOrder};
use dyncolor::ids::{UpdateEvent, UpdateKind, VertexId};
use dyncolor::rng::stream_rng;
use dyncolor::seq::SeqEngine;
use proptest::prelude::*;

#[test]
fn sequential_engine_survives_deep_verification_every_step() {
    let n = 40;
    let delta = 6;
    let mut engine = SeqEngine::new(n, delta, 51).unwrap();
    let mut rng = stream_rng(51, 0xE0, &[]);
    for ev in common::churn_events(n, delta, 1500, &mut rng) {
        match ev.kind {
            UpdateKind::Insert => {
                engine.add_edge(ev.u, ev.v).unwrap();
            }
            UpdateKind::Delete => {
                engine.delete_edge(ev.u, ev.v).unwrap();
            }
        }
        let audit = engine.verify();
        assert!(audit.ok(), "{:?}", audit.mismatch);
    }
}

#[test]
fn singleton_batches_survive_their_own_audits() {
    let n = 40;
    let delta = 6;
    let mut engine = BatchEngine::new(n, delta, 52).unwrap();
    engine.set_audit(true);
    let mut rng = stream_rng(52, 0xE1, &[]);
    for ev in common::churn_events(n, delta, 900, &mut rng) {
        let pair = [(ev.u, ev.v)];
        let report = match ev.kind {
            UpdateKind::Insert => engine.add_edges(&pair).unwrap(),
            UpdateKind::Delete => engine.delete_edges(&pair).unwrap(),
        };
        assert!(report.rejected.is_empty());
    }
    let audit = engine.verify();
    assert!(audit.ok(), "{:?}", audit.mismatch);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Slicing the recoloring into arbitrary work allowances must not
    /// change anything observable: colors, timestamps, or charged work.
    #[test]
    fn budgeted_execution_is_invisible(seed in any::<u64>(), allowance in 1u64..9) {
        let n = 24;
        let delta = 5;
        let mut script_rng = stream_rng(seed, 0xE2, &[]);
        let script = common::churn_events(n, delta, 300, &mut script_rng);

        let mut direct = SeqEngine::new(n, delta, seed).unwrap();
        for ev in &script {
            match ev.kind {
                UpdateKind::Insert => {
                    direct.add_edge(ev.u, ev.v).unwrap();
                }
                UpdateKind::Delete => {
                    direct.delete_edge(ev.u, ev.v).unwrap();
                }
            }
        }

        let mut budgeted = SeqEngine::new(n, delta, seed).unwrap();
        for &ev in &script {
            budgeted.begin_update(ev).unwrap();
            while !budgeted.is_idle() {
                budgeted.step_budgeted(allowance);
            }
        }

        for i in 0..n {
            let v = VertexId(i);
            prop_assert_eq!(direct.color(v), budgeted.color(v));
        }
        prop_assert_eq!(direct.work(), budgeted.work());
        prop_assert_eq!(direct.state().dump(), budgeted.state().dump());
    }

    /// The batch engine's committed coloring must not depend on the order
    /// in which it walks the active set.
    #[test]
    fn batch_outcome_ignores_scan_order(seed in any::<u64>()) {
        let n = 60u32;
        let delta = 7;
        let mut script_rng = stream_rng(seed, 0xE3, &[]);
        let script = common::churn_events(n, delta, 420, &mut script_rng);

        let run = |scan: ScanOrder| {
            let mut engine = BatchEngine::new(n, delta, seed).unwrap();
            engine.set_scan_order(scan);
            // Group the stream into maximal same-kind chunks, applying each
            // as one batch.
            let mut i = 0;
            while i < script.len() {
                let kind = script[i].kind;
                let mut pairs = Vec::new();
                while i < script.len() && script[i].kind == kind {
                    pairs.push((script[i].u, script[i].v));
                    i += 1;
                }
                let report = match kind {
                    UpdateKind::Insert => engine.add_edges(&pairs).unwrap(),
                    UpdateKind::Delete => engine.delete_edges(&pairs).unwrap(),
                };
                assert!(report.rejected.is_empty());
            }
            let audit = engine.verify();
            assert!(audit.ok(), "{:?}", audit.mismatch);
            engine.state().dump()
        };

        prop_assert_eq!(run(ScanOrder::Ascending), run(ScanOrder::Descending));
    }
}

#[test]
fn engines_reject_the_same_malformed_updates() {
    let n = 8;
    let delta = 3;
    let mut seq = SeqEngine::new(n, delta, 1).unwrap();
    let mut batch = BatchEngine::new(n, delta, 1).unwrap();

    let loop_edge = UpdateEvent::insert(VertexId(2), VertexId(2));
    assert!(seq.add_edge(loop_edge.u, loop_edge.v).is_err());
    let report = batch.add_edges(&[(loop_edge.u, loop_edge.v)]).unwrap();
    assert_eq!(report.rejected.len(), 1);

    let out_of_range = UpdateEvent::insert(VertexId(2), VertexId(99));
    assert!(seq.add_edge(out_of_range.u, out_of_range.v).is_err());
    let report = batch.add_edges(&[(out_of_range.u, out_of_range.v)]).unwrap();
    assert_eq!(report.rejected.len(), 1);

    assert!(seq.delete_edge(VertexId(0), VertexId(1)).is_err());
    let report = batch.delete_edges(&[(VertexId(0), VertexId(1))]).unwrap();
    assert_eq!(report.rejected.len(), 1);
}
