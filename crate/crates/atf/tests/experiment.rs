mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use atf::core::experiment::{DatasetRef, ExperimentConfig, RunFlag};
use atf::core::scoring::InContextMock;
use atf::core::{Dimension, Label, LabeledExample, Post};
use atf::oracle::{HumanOracle, Oracle, OracleError, SimulatedOracle};
use atf::runner::{results_jsonl, run_experiment, ExperimentData, RunOptions};
use atf::scorer::{InContextEndpoint, RetryPolicy};
use atf::server::{ManualClock, TaskStore, DEFAULT_LEASE};
use atf::Error;
use common::{experiment_data, Domain};

fn config(budgets: &[usize], repetitions: u32, transfer: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("t", DatasetRef { dataset: "metoo".into(), dimension: "sexually_explicit".into() });
    c.budgets = budgets.to_vec();
    c.repetitions = repetitions;
    c.base_seed = 13;
    if transfer {
        c.source = Some(DatasetRef { dataset: "sbic".into(), dimension: "lewd".into() });
    }
    c
}

fn endpoint() -> InContextEndpoint {
    InContextEndpoint { mock: InContextMock::default() }
}

fn options() -> RunOptions {
    RunOptions { retry: RetryPolicy::immediate(), ..RunOptions::default() }
}

fn small_data(source: bool) -> ExperimentData {
    let src = Domain::source();
    experiment_data(&Domain::target(), 500, source.then_some((&src, 1000)), 3)
}

#[test]
fn zero_budget_without_source_is_zero_shot() {
    let data = small_data(false);
    let runs = run_experiment(&config(&[0], 1, false), &data, &SimulatedOracle::new(data.pool.clone()), &endpoint(), &options())
        .unwrap();
    assert_eq!(runs.len(), 1);
    let r = &runs[0];
    assert!(r.queries.iter().all(|q| q.n_shots == 0));
    assert_eq!((r.support_size, r.source_size), (0, 0));
    assert!(r.annotated_ids.is_empty() && r.flags.is_empty());
    assert_eq!(r.mean_shot_ratio, 0.0);
    // An empty lexicon scores every query at 0.5, so every pair ties.
    assert_eq!(r.auc, 0.5);
    assert_eq!(r.queries.len(), data.test.len());
}

#[test]
fn support_set_accounting() {
    let data = small_data(true);
    let runs =
        run_experiment(&config(&[100], 2, true), &data, &SimulatedOracle::new(data.pool.clone()), &endpoint(), &options())
            .unwrap();
    for r in &runs {
        assert_eq!(r.source_size, 1000);
        assert_eq!(r.support_size, 1100);
        assert_eq!(r.annotated_ids.len(), 100);
        assert_eq!(r.source_dimension.as_deref(), Some("lewd"));
        assert!(r.queries.iter().all(|q| q.n_shots == 32));
    }
}

#[test]
fn reruns_are_identical() {
    let data = small_data(true);
    let oracle = SimulatedOracle::new(data.pool.clone());
    let cfg = config(&[50, 150], 3, true);
    let a = run_experiment(&cfg, &data, &oracle, &endpoint(), &options()).unwrap();
    let b = run_experiment(&cfg, &data, &oracle, &endpoint(), &options()).unwrap();
    assert_eq!(results_jsonl(&a), results_jsonl(&b));

    // Sequential repetitions (as with a human oracle) give the same runs.
    struct Serial(SimulatedOracle);
    impl Oracle for Serial {
        fn label(&self, posts: &[Post], dim: &Dimension) -> Result<Vec<LabeledExample>, OracleError> {
            self.0.label(posts, dim)
        }
        fn parallel_safe(&self) -> bool {
            false
        }
    }
    let c = run_experiment(&cfg, &data, &Serial(SimulatedOracle::new(data.pool.clone())), &endpoint(), &options()).unwrap();
    assert_eq!(results_jsonl(&a), results_jsonl(&c));
    let order: Vec<(u32, usize)> = a.iter().map(|r| (r.repetition, r.budget)).collect();
    assert_eq!(order, [(0, 50), (0, 150), (1, 50), (1, 150), (2, 50), (2, 150)]);
    let seeds: BTreeSet<u64> = a.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, BTreeSet::from([13, 14, 15]));
}

#[test]
fn annotations_grow_and_are_shared_between_arms() {
    let data = small_data(true);
    let oracle = SimulatedOracle::new(data.pool.clone());
    let transfer = run_experiment(&config(&[0, 40, 120], 3, true), &data, &oracle, &endpoint(), &options()).unwrap();
    let baseline = run_experiment(&config(&[0, 40, 120], 3, false), &data, &oracle, &endpoint(), &options()).unwrap();
    for rep in transfer.chunks(3) {
        for pair in rep.windows(2) {
            let (small, big) = (&pair[0].annotated_ids, &pair[1].annotated_ids);
            assert_eq!(&big[..small.len()], &small[..], "annotations must only grow");
        }
    }
    for (t, b) in transfer.iter().zip(&baseline) {
        assert_eq!((t.repetition, t.budget), (b.repetition, b.budget));
        assert_eq!(t.annotated_ids, b.annotated_ids);
    }
    assert_ne!(transfer[2].annotated_ids, transfer[5].annotated_ids, "repetitions use different seeds");
}

#[test]
fn test_posts_never_enter_support() {
    // The pool deliberately still contains the test posts.
    let full = Domain::target().bundle(400, 9);
    let (_, test) = atf::core::corpus::split(&full, 0.25, 9).unwrap();
    let full = Arc::new(full);
    let source = Domain { dataset: "metoo", dimension: "sexually_explicit", ..Domain::target() }.bundle(400, 9);
    let data = ExperimentData { source: Some(Arc::new(source)), pool: full.clone(), test: Arc::new(test.clone()) };
    let mut cfg = config(&[300], 2, true);
    cfg.source = Some(DatasetRef { dataset: "metoo".into(), dimension: "sexually_explicit".into() });
    let runs = run_experiment(&cfg, &data, &SimulatedOracle::new(full), &endpoint(), &options()).unwrap();
    let test_ids: BTreeSet<&str> = test.posts().iter().map(|p| p.id.as_str()).collect();
    for r in &runs {
        assert!(r.annotated_ids.iter().all(|id| !test_ids.contains(id.as_str())));
        // The source shares ids with the test split, so those examples are dropped.
        assert_eq!(r.source_size, 300);
        assert_eq!(r.support_size, 300 + 300 - overlap(&r.annotated_ids, &test_ids, 400));
    }
}

/// Source examples (ids `metoo-00000..`) that collide with annotated target ids.
fn overlap(annotated: &[String], test: &BTreeSet<&str>, n: usize) -> usize {
    (0..n).map(|i| format!("metoo-{i:05}")).filter(|id| !test.contains(id.as_str()) && annotated.contains(id)).count()
}

#[test]
fn budget_beyond_pool_is_rejected() {
    let data = small_data(false);
    let err = run_experiment(&config(&[1000], 1, false), &data, &SimulatedOracle::new(data.pool.clone()), &endpoint(), &options())
        .unwrap_err();
    assert!(matches!(err, Error::Core(atf::core::Error::PoolExhausted { requested: 1000, available: 400 })), "{err:?}");
}

#[test]
fn single_class_test_set_is_rejected() {
    let data = small_data(false);
    let negatives = data.test.filter(|p| data.test.label(&p.id, "sexually_explicit") == Some(Label::Negative));
    let data = ExperimentData { test: Arc::new(negatives), ..data };
    let err = run_experiment(&config(&[10], 1, false), &data, &SimulatedOracle::new(data.pool.clone()), &endpoint(), &options())
        .unwrap_err();
    assert!(matches!(err, Error::Core(atf::core::Error::SingleClass)), "{err:?}");
}

#[test]
fn one_sided_annotations_are_flagged() {
    let data = small_data(true);
    let pool = data.pool.filter(|p| data.pool.label(&p.id, "sexually_explicit") == Some(Label::Negative));
    let data = ExperimentData { pool: Arc::new(pool), ..data };
    let oracle = SimulatedOracle::new(data.pool.clone());
    let transfer = run_experiment(&config(&[20], 1, true), &data, &oracle, &endpoint(), &options()).unwrap();
    assert_eq!(
        transfer[0].flags,
        [RunFlag::MissingTargetClass(Label::Positive), RunFlag::SourceOnlyClass(Label::Positive)]
    );
    assert!(transfer[0].queries.iter().all(|q| q.n_shots == 32));

    let baseline = run_experiment(&config(&[20], 1, false), &data, &oracle, &endpoint(), &options()).unwrap();
    assert_eq!(baseline[0].flags, [RunFlag::MissingTargetClass(Label::Positive), RunFlag::ZeroShotFallback]);
    assert!(baseline[0].queries.iter().all(|q| q.n_shots == 0));
}

#[test]
fn progress_is_published() {
    let data = small_data(false);
    let store = Arc::new(TaskStore::in_memory(Arc::new(ManualClock::new(0)), DEFAULT_LEASE).unwrap());
    let opts = RunOptions { progress: Some(store.clone()), ..options() };
    run_experiment(&config(&[0, 10], 1, false), &data, &SimulatedOracle::new(data.pool.clone()), &endpoint(), &opts).unwrap();
    let status = store.experiment_status("t").unwrap();
    assert_eq!(status.progress.unwrap()["budget"], 10);
}

// Oracles

fn dim() -> Dimension {
    atf::core::definitions::default_dimension("sexually_explicit").unwrap()
}

#[test]
fn simulated_oracle_passes_truth_through() {
    let bundle = Arc::new(Domain::target().bundle(50, 1));
    let posts: Vec<Post> = bundle.posts()[..20].to_vec();
    let got = SimulatedOracle::new(bundle.clone()).label(&posts, &dim()).unwrap();
    for (p, ex) in posts.iter().zip(&got) {
        assert_eq!(ex.post.id, p.id);
        assert_eq!(Some(ex.label), bundle.label(&p.id, "sexually_explicit"));
        assert_eq!(ex.provenance, atf::core::Provenance::Target);
    }
    let stranger = Post::new("nobody", "text", "metoo").unwrap();
    assert!(matches!(
        SimulatedOracle::new(bundle).label(&[stranger], &dim()),
        Err(OracleError::MissingTruth { .. })
    ));
}

/// Labels up to `limit` tasks with `label`, `delay` apart, then stops.
fn stub_annotator(store: Arc<TaskStore>, label: Label, limit: usize, delay: Duration) -> std::thread::JoinHandle<usize> {
    std::thread::spawn(move || {
        let mut done = 0;
        let started = std::time::Instant::now();
        while done < limit && started.elapsed() < Duration::from_secs(20) {
            match store.next_task("stub").unwrap() {
                Some(task) => {
                    std::thread::sleep(delay);
                    store.submit_label(task.task_id, "stub", label).unwrap();
                    done += 1;
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        }
        done
    })
}

fn system_store() -> Arc<TaskStore> {
    Arc::new(TaskStore::in_memory(Arc::new(atf::server::SystemClock), DEFAULT_LEASE).unwrap())
}

#[test]
fn human_oracle_collects_stub_answers() {
    let store = system_store();
    let posts: Vec<Post> = Domain::target().bundle(25, 2).posts().to_vec();
    let annotator = stub_annotator(store.clone(), Label::Positive, 25, Duration::ZERO);
    let oracle = HumanOracle::new(store, "h", Duration::from_secs(15)).with_poll_interval(Duration::from_millis(10));
    assert!(!oracle.parallel_safe());
    let got = oracle.label(&posts, &dim()).unwrap();
    assert_eq!(annotator.join().unwrap(), 25);
    assert_eq!(got.len(), 25);
    assert!(got.iter().all(|e| e.label == Label::Positive));
    let ids: Vec<&str> = got.iter().map(|e| e.post.id.as_str()).collect();
    let expected: Vec<&str> = posts.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids, expected);
}

#[test]
fn human_oracle_deadline_keeps_partial_labels() {
    let store = system_store();
    let posts: Vec<Post> = Domain::target().bundle(100, 4).posts().to_vec();
    let annotator = stub_annotator(store.clone(), Label::Negative, 40, Duration::from_millis(2));
    let oracle = HumanOracle::new(store, "h", Duration::from_millis(1500)).with_poll_interval(Duration::from_millis(10));
    let err = oracle.label(&posts, &dim()).unwrap_err();
    assert_eq!(annotator.join().unwrap(), 40);
    match err {
        OracleError::Deadline { partial, total } => {
            assert_eq!(total, 100);
            assert_eq!(partial.len(), 40);
            assert!(partial.iter().all(|e| e.label == Label::Negative));
        }
        other => panic!("expected deadline, got {other:?}"),
    }
}

#[test]
fn human_oracle_drives_the_loop() {
    let data = small_data(false);
    let store = system_store();
    let annotator = stub_annotator(store.clone(), Label::Positive, 30, Duration::ZERO);
    let oracle = HumanOracle::new(store.clone(), "t", Duration::from_secs(15)).with_poll_interval(Duration::from_millis(10));
    let runs = run_experiment(&config(&[0, 30], 1, false), &data, &oracle, &endpoint(), &options()).unwrap();
    assert_eq!(annotator.join().unwrap(), 30);
    assert_eq!(runs[1].annotated_ids.len(), 30);
    // Every human answer was Yes, so the negative class is missing.
    assert!(runs[1].flags.contains(&RunFlag::MissingTargetClass(Label::Negative)));
    assert_eq!(store.experiment_status("t").unwrap().labeled, 30);
}
