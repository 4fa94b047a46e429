use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::config::ExperimentConfig;
use crate::orchestrator::log::MemorySink;
use crate::policy::{PolicyRegistry, RawValue};

pub(crate) fn config_text(meshes: usize, envs: usize, zooms: usize, extra: &str) -> String {
    let mut t = String::from("name = \"sched\"\nseed = 11\n");
    for m in 0..meshes {
        t += &format!("[[assets.meshes]]\nprimitive = \"cube\"\nname = \"m{m}\"\nlabels = [\"red\"]\n");
    }
    for e in 0..envs {
        t += &format!("[[assets.environments]]\nname = \"e{e}\"\ncolor = [1.0, 1.0, 1.0]\n");
    }
    t += &format!(
        "[[controls]]\nname = \"camera\"\nparams = {{ zoom = [0.5, 2.0] }}\n[policy]\nname = \"grid\"\ncounts = {{ \"camera.zoom\" = {zooms} }}\n{extra}\n"
    );
    t
}

fn experiment(meshes: usize, envs: usize, zooms: usize, extra: &str) -> Arc<Experiment> {
    let cfg = ExperimentConfig::parse(&config_text(meshes, envs, zooms, extra), "t").unwrap();
    Arc::new(Experiment::from_config(cfg).unwrap())
}

fn scheduler(exp: Arc<Experiment>) -> (Scheduler, MemorySink) {
    let sink = MemorySink::default();
    (Scheduler::new(exp, Box::new(sink.clone())).unwrap(), sink)
}

/// Complete everything with one dummy worker.
fn drain(s: &mut Scheduler, worker: u64, now: Instant) {
    loop {
        match s.assign(worker, now) {
            Assignment::Item(it) => {
                assert_eq!(s.complete(worker, it.id, it.attempt, None, WorkResult::dummy(), now), Completion::Accepted)
            }
            Assignment::Done => return,
            other => panic!("unexpected {other:?}"),
        }
    }
}

fn ids(sink: &MemorySink) -> Vec<u64> {
    let mut v: Vec<u64> = sink.records.lock().unwrap().iter().map(|r| r.id).collect();
    v.sort_unstable();
    v
}

#[test]
fn grid_of_six_logs_ids_zero_to_five() {
    let (mut s, sink) = scheduler(experiment(1, 1, 6, ""));
    let now = Instant::now();
    let w = s.register(1, now);
    drain(&mut s, w, now);
    assert_eq!(ids(&sink), (0..6).collect::<Vec<_>>());
    let t = s.totals();
    assert_eq!((t.scheduled, t.completed, t.errored, t.pending), (6, 6, 0, 0));
    assert_eq!(s.manifest(now, true).status, RunStatus::Complete);
}

#[test]
fn six_pairs_never_more_than_five_active() {
    let (mut s, sink) = scheduler(experiment(2, 3, 2, "batch_size = 1"));
    let now = Instant::now();
    let w = s.register(64, now);
    // Hold items in flight so instances stay active.
    let mut held = Vec::new();
    while let Assignment::Item(it) = s.assign(w, now) {
        held.push(it);
    }
    assert_eq!(s.stats().max_active_instances, 5);
    for it in held {
        s.complete(w, it.id, it.attempt, None, WorkResult::dummy(), now);
    }
    drain(&mut s, w, now);
    assert_eq!(s.stats().instances_created, 6);
    assert!(s.stats().max_active_instances <= 5);
    assert_eq!(ids(&sink), (0..12).collect::<Vec<_>>());
    let pairs: BTreeSet<usize> = sink.records.lock().unwrap().iter().map(|r| r.pair).collect();
    assert_eq!(pairs.len(), 6);
}

#[test]
fn worker_slots_bound_in_flight_items() {
    let (mut s, _) = scheduler(experiment(1, 1, 10, ""));
    let now = Instant::now();
    let w = s.register(2, now);
    let a = match s.assign(w, now) {
        Assignment::Item(it) => it,
        o => panic!("{o:?}"),
    };
    assert!(matches!(s.assign(w, now), Assignment::Item(_)));
    assert_eq!(s.assign(w, now), Assignment::Idle);
    s.complete(w, a.id, 0, None, WorkResult::dummy(), now);
    assert!(matches!(s.assign(w, now), Assignment::Item(_)));
    assert_eq!(s.stats().max_worker_in_flight, 2);
}

#[test]
fn silent_worker_is_evicted_after_three_heartbeats() {
    let (mut s, sink) = scheduler(experiment(1, 1, 3, ""));
    let h = Duration::from_secs(1);
    let t0 = Instant::now();
    let a = s.register(1, t0);
    let b = s.register(1, t0);
    let Assignment::Item(item) = s.assign(a, t0) else { panic!() };
    s.touch(b, t0 + h * 3);
    assert!(s.check_heartbeats(t0 + Duration::from_millis(2990), h * 3).is_empty());
    assert!(s.check_heartbeats(t0 + h * 3, h * 3).is_empty());
    assert_eq!(s.check_heartbeats(t0 + Duration::from_millis(3010), h * 3), vec![a]);
    assert_eq!(s.stats().evictions, 1);
    assert_eq!(s.assign(a, t0 + h * 4), Assignment::Unknown);
    // The requeued item goes out first, one attempt later.
    let Assignment::Item(again) = s.assign(b, t0 + h * 3) else { panic!() };
    assert_eq!((again.id, again.attempt), (item.id, 1));
    // A late answer from the evicted worker is discarded.
    assert_eq!(s.complete(a, item.id, 0, None, WorkResult::dummy(), t0), Completion::Duplicate);
    s.complete(b, again.id, 1, None, WorkResult::dummy(), t0);
    drain(&mut s, b, t0);
    assert_eq!(ids(&sink), vec![0, 1, 2]);
    assert_eq!(sink.records.lock().unwrap().iter().find(|r| r.id == item.id).unwrap().attempts, 2);
}

#[test]
fn duplicate_response_is_discarded() {
    let (mut s, sink) = scheduler(experiment(1, 1, 2, ""));
    let now = Instant::now();
    let w = s.register(1, now);
    let Assignment::Item(it) = s.assign(w, now) else { panic!() };
    assert_eq!(s.complete(w, it.id, 0, None, WorkResult::dummy(), now), Completion::Accepted);
    assert_eq!(s.complete(w, it.id, 0, None, WorkResult::dummy(), now), Completion::Duplicate);
    assert_eq!(s.stats().duplicates, 1);
    assert_eq!(sink.records.lock().unwrap().len(), 1);
}

#[test]
fn failures_retry_then_log_an_error() {
    let (mut s, sink) = scheduler(experiment(1, 1, 1, "[orchestrator]\nretries = 2"));
    let now = Instant::now();
    let w = s.register(1, now);
    for attempt in 0..3 {
        let Assignment::Item(it) = s.assign(w, now) else { panic!() };
        assert_eq!(it.attempt, attempt);
        assert!(s.fail(w, it.id, it.attempt, ItemError::new(ErrorClass::Render, "boom"), now));
    }
    assert_eq!(s.assign(w, now), Assignment::Done);
    let recs = sink.records.lock().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].attempts, 3);
    assert_eq!(recs[0].error.as_ref().unwrap().class, ErrorClass::Render);
    let t = s.totals();
    assert_eq!((t.completed, t.errored), (0, 1));
    drop(recs);
    assert_eq!(s.manifest(now, true).status, RunStatus::Partial);
}

#[test]
fn missing_buffers_are_rejected_and_retried() {
    let (mut s, sink) = scheduler(experiment(1, 1, 1, "[output]\nsave_buffers = [\"uv\"]"));
    let now = Instant::now();
    let w = s.register(1, now);
    let Assignment::Item(it) = s.assign(w, now) else { panic!() };
    let real = WorkResult { dummy: false, ..WorkResult::dummy() };
    assert!(matches!(s.complete(w, it.id, 0, None, real, now), Completion::Invalid(_)));
    let Assignment::Item(again) = s.assign(w, now) else { panic!() };
    assert_eq!(again.attempt, 1);
    assert!(sink.records.lock().unwrap().is_empty());
}

#[test]
fn real_results_carry_saved_buffer_paths() {
    let exp = experiment(1, 1, 2, "[output]\nsave_buffers = [\"uv\", \"seg\"]");
    let pipeline = crate::experiment::Pipeline::new(exp.clone(), exp.builtin_backend());
    let (mut s, sink) = scheduler(exp);
    let now = Instant::now();
    let w = s.register(1, now);
    while let Assignment::Item(it) = s.assign(w, now) {
        let (result, wire) = pipeline.process(it.id, &it.config, &it.scene).unwrap();
        assert_eq!(s.complete(w, it.id, it.attempt, wire, result, now), Completion::Accepted);
    }
    let recs = sink.records.lock().unwrap();
    assert_eq!(recs.len(), 2);
    for r in recs.iter() {
        assert_eq!(r.buffers.keys().copied().collect::<Vec<_>>(), vec![Modality::Uv, Modality::Seg]);
        assert!(r.prediction.is_some() && r.object_pixels > 0);
        assert_eq!(r.params["camera.zoom"], crate::controls::Literal::Float(if r.id == 0 { 0.5 } else { 2.0 }));
    }
}

#[test]
fn frontier_stays_within_cap() {
    let (mut s, sink) = scheduler(experiment(2, 2, 6, "batch_size = 2\n[orchestrator]\nmax_active = 2"));
    assert_eq!(s.frontier_cap(), 4);
    let now = Instant::now();
    let w = s.register(100, now);
    let mut held = Vec::new();
    loop {
        match s.assign(w, now) {
            Assignment::Item(it) => held.push(it),
            Assignment::Idle => {
                assert!(held.len() <= 4);
                let it = held.remove(0);
                s.complete(w, it.id, it.attempt, None, WorkResult::dummy(), now);
            }
            Assignment::Done => break,
            Assignment::Unknown => unreachable!(),
        }
    }
    assert!(s.max_materialized() <= 4);
    assert_eq!(ids(&sink), (0..24).collect::<Vec<_>>());
}

/// Closed-loop policy: one proposal per batch, and it checks it has seen
/// every earlier result before proposing again.
struct Feedback {
    issued: u64,
    total: u64,
}

impl Policy for Feedback {
    fn next_batch(&mut self, history: &[HistoryEntry]) -> Result<Step, PolicyError> {
        assert_eq!(history.len() as u64, self.issued, "asked before feedback arrived");
        if self.issued == self.total {
            return Ok(Step::Done);
        }
        let id = self.issued;
        self.issued += 1;
        Ok(Step::Batch(vec![PolicyProposal { id, point: vec![RawValue::Float(0.5 + id as f64 * 0.1)] }]))
    }
}

#[test]
fn feedback_policies_wait_for_results() {
    let mut reg = PolicyRegistry::default();
    reg.register("feedback", Arc::new(|_, _, _| Ok(Box::new(Feedback { issued: 0, total: 4 }) as Box<dyn Policy>)));
    let text = config_text(1, 2, 2, "").replace("name = \"grid\"", "name = \"feedback\"");
    let cfg = ExperimentConfig::parse(&text, "t").unwrap();
    let exp = Arc::new(Experiment::with_policies(cfg, reg).unwrap());
    let (mut s, sink) = scheduler(exp);
    let now = Instant::now();
    let w = s.register(8, now);
    let Assignment::Item(a) = s.assign(w, now) else { panic!() };
    let Assignment::Item(b) = s.assign(w, now) else { panic!() };
    assert_ne!(a.pair, b.pair);
    // Both instances are waiting on feedback.
    assert_eq!(s.assign(w, now), Assignment::Idle);
    s.complete(w, a.id, 0, None, WorkResult::dummy(), now);
    s.complete(w, b.id, 0, None, WorkResult::dummy(), now);
    drain(&mut s, w, now);
    // Unknown totals: each pair gets its own id block.
    assert_eq!(ids(&sink), vec![0, 1, 2, 3, 1 << 32, (1 << 32) + 1, (1 << 32) + 2, (1 << 32) + 3]);
}

#[derive(Debug, Clone)]
enum Op {
    Assign(usize),
    Complete(usize),
    Fail(usize),
    Duplicate(usize),
    Drop(usize),
    Join,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..3usize).prop_map(Op::Assign),
        4 => (0..8usize).prop_map(Op::Complete),
        1 => (0..8usize).prop_map(Op::Fail),
        1 => (0..8usize).prop_map(Op::Duplicate),
        1 => (0..3usize).prop_map(Op::Drop),
        1 => Just(Op::Join),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Whatever the failure schedule, every proposed id is logged exactly once.
    #[test]
    fn every_id_logged_exactly_once(ops in prop::collection::vec(op(), 0..80)) {
        let (mut s, sink) = scheduler(experiment(2, 1, 5, "batch_size = 3\n[orchestrator]\nretries = 1"));
        let now = Instant::now();
        let mut workers: Vec<u64> = (0..3).map(|_| s.register(2, now)).collect();
        let mut held: Vec<(u64, Box<WorkItem>)> = Vec::new();
        for op in ops {
            match op {
                Op::Assign(w) => if let Assignment::Item(it) = s.assign(workers[w % workers.len()], now) {
                    held.push((workers[w % workers.len()], it));
                },
                Op::Complete(i) if !held.is_empty() => {
                    let (w, it) = held.remove(i % held.len());
                    s.complete(w, it.id, it.attempt, None, WorkResult::dummy(), now);
                }
                Op::Fail(i) if !held.is_empty() => {
                    let (w, it) = held.remove(i % held.len());
                    s.fail(w, it.id, it.attempt, ItemError::new(ErrorClass::Model, "x"), now);
                }
                Op::Duplicate(i) if !held.is_empty() => {
                    let (w, it) = &held[i % held.len()];
                    let (w, it) = (*w, it.clone());
                    s.complete(w, it.id, it.attempt, None, WorkResult::dummy(), now);
                    s.complete(w, it.id, it.attempt, None, WorkResult::dummy(), now);
                    held.retain(|(_, h)| h.id != it.id);
                }
                Op::Drop(w) if workers.len() > 1 => {
                    let gone = workers.remove(w % workers.len());
                    s.remove_worker(gone, "disconnected");
                    held.retain(|(hw, _)| *hw != gone);
                }
                Op::Join => workers.push(s.register(2, now)),
                _ => {}
            }
            let t = s.totals();
            prop_assert_eq!(t.scheduled, t.completed + t.errored + t.pending);
        }
        for (w, it) in held.drain(..) {
            s.complete(w, it.id, it.attempt, None, WorkResult::dummy(), now);
        }
        let fresh = s.register(4, now);
        loop {
            match s.assign(fresh, now) {
                Assignment::Item(it) => { s.complete(fresh, it.id, it.attempt, None, WorkResult::dummy(), now); }
                Assignment::Done => break,
                other => prop_assert!(false, "stuck: {:?}", other),
            }
        }
        prop_assert_eq!(ids(&sink), (0..10).collect::<Vec<_>>());
        prop_assert_eq!(s.totals().pending, 0);
    }
}
