//! Training loop invariants on small synthetic scenes.

use lfsynth::applications::compare_fields;
use lfsynth::flownet::{init_network, load_checkpoint, FlowField};
use lfsynth::lightfield::{Angular, LightField};
use lfsynth::losses::total_objective;
use lfsynth::scene::{generate_synthetic_lf, SceneSpec};
use lfsynth::shifting::shift_stack;
use lfsynth::training::{evaluate, objective, train, Example, TrainConfig, FINAL, LAST_GOOD};

fn config() -> TrainConfig {
    TrainConfig {
        angular: (3, 3),
        spatial: (16, 20),
        iterations: 4,
        pre_channels: 4,
        growth: 4,
        seed: 9,
        ..TrainConfig::default()
    }
}

fn example(cfg: &TrainConfig, seed: u64) -> Example {
    let a = cfg.angular();
    let lf = generate_synthetic_lf(&SceneSpec::two_plane(seed), a, cfg.spatial.0, cfg.spatial.1, a.default_center(), cfg.eta)
        .unwrap();
    Example::from_field(lf)
}

#[test]
fn first_iteration_scores_the_bare_shifted_stack() {
    let cfg = config();
    let ex = example(&cfg, 1);
    let log = train(&TrainConfig { iterations: 1, ..cfg.clone() }, std::slice::from_ref(&ex), None, |_| {}).unwrap().log;
    let gt = ex.gt.to_luminance().unwrap();
    let y = lfsynth::lightfield::to_luminance(&ex.central).unwrap();
    let stack = shift_stack(&y, cfg.angular(), gt.center(), cfg.eta).unwrap().into_field();
    let flow = FlowField::zeros(cfg.angular(), cfg.spatial.0, cfg.spatial.1);
    let expect = total_objective(&stack, &gt, &flow, &cfg.weights()).unwrap();
    assert!((log[0].total - expect).abs() < 1e-5 * expect, "{} vs {expect}", log[0].total);
    assert_eq!(log[0].tv, 0.0);
}

#[test]
fn shifting_lowers_the_initial_objective_near_eta() {
    let cfg = TrainConfig {
        angular: (5, 5),
        spatial: (32, 40),
        ..config()
    };
    let p = init_network(&cfg.network_spec(), 0).unwrap();
    for seed in 0..4 {
        let ex = example(&cfg, seed);
        let shifted = objective(&p, &ex, &cfg).unwrap().total;
        let plain = objective(&p, &ex, &TrainConfig { eta: 0.0, ..cfg.clone() }).unwrap().total;
        assert!(shifted <= plain, "seed {seed}: {shifted} > {plain}");
    }
}

#[test]
fn same_seed_same_logs_and_checkpoints() {
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..config()
    };
    let data = [example(&cfg, 2), example(&cfg, 3)];
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = train(&cfg, &data, Some(d1.path()), |_| {}).unwrap();
    let b = train(&cfg, &data, Some(d2.path()), |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    for f in ["iter_000002.lfaf", "iter_000004.lfaf", FINAL] {
        assert_eq!(std::fs::read(d1.path().join(f)).unwrap(), std::fs::read(d2.path().join(f)).unwrap());
    }
    let c = train(&TrainConfig { seed: 10, ..cfg.clone() }, &data, None, |_| {}).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let cfg = config();
    let data = [example(&cfg, 4)];
    let dir = tempfile::tempdir().unwrap();
    let out = train(&cfg, &data, Some(dir.path()), |_| {}).unwrap();
    let loaded = load_checkpoint(&cfg.network_spec(), &dir.path().join(FINAL)).unwrap();
    assert_eq!(loaded, out.params);
    assert_eq!(evaluate(&out.params, &data, cfg.eta).unwrap(), evaluate(&loaded, &data, cfg.eta).unwrap());
}

#[test]
fn zero_init_evaluation_equals_shifted_stack_metrics() {
    let cfg = config();
    let ex = example(&cfg, 5);
    let p = init_network(&cfg.network_spec(), 1).unwrap();
    let report = evaluate(&p, std::slice::from_ref(&ex), cfg.eta).unwrap();
    let stack = shift_stack(&ex.central, cfg.angular(), ex.gt.center(), cfg.eta).unwrap().into_field();
    assert_eq!(report.examples[0], compare_fields(&stack, &ex.gt).unwrap());
}

#[test]
fn identical_prediction_is_capped() {
    let cfg = config();
    let ex = example(&cfg, 6);
    let r = compare_fields(&ex.gt, &ex.gt).unwrap();
    assert_eq!((r.mean_psnr, r.mean_ssim), (99.0, 1.0));
}

#[test]
fn divergence_aborts_and_keeps_last_good_parameters() {
    let cfg = config();
    let ex = example(&cfg, 7);
    let a: Angular = cfg.angular();
    let mut data = ex.gt.data().to_vec();
    data[5] = f32::NAN;
    let gt = LightField::new(a, ex.gt.center(), cfg.eta, 3, cfg.spatial.0, cfg.spatial.1, data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bad = Example { central: ex.central, gt };
    let err = train(&cfg, &[bad], Some(dir.path()), |_| {}).err().expect("must diverge");
    assert!(err.to_string().contains("iteration 0"), "{err}");
    let kept = load_checkpoint(&cfg.network_spec(), &dir.path().join(LAST_GOOD)).unwrap();
    assert_eq!(kept, init_network(&cfg.network_spec(), cfg.seed).unwrap());
}
