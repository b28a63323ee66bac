//! Results must not depend on the number of worker threads.

use lfsynth::flownet::{forward, init_network, NetworkSpec};
use lfsynth::lightfield::{to_luminance, Angular};
use lfsynth::postprocess::aggregate_flow;
use lfsynth::scene::{generate_synthetic_lf, SceneSpec};
use lfsynth::training::{train, Example, TrainConfig};
use lfsynth::warping::synthesize;

fn run_all() -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f64>) {
    let a = Angular::new(3, 3);
    let lf = generate_synthetic_lf(&SceneSpec::two_plane(4), a, 24, 30, a.default_center(), 0.8).unwrap();
    let spec = NetworkSpec {
        pre_channels: 6,
        growth: 5,
        ..NetworkSpec::new(a)
    };
    let mut params = init_network(&spec, 3).unwrap();
    // Give the zero-initialized head some weight so the flow is non-trivial.
    let head = params.layers_mut().last_mut().unwrap();
    for (i, w) in head.weight.data_mut().iter_mut().enumerate() {
        *w = ((i * 37 % 101) as f32 - 50.0) * 1e-3;
    }
    let y = to_luminance(&lf.central_view()).unwrap();
    let flow = forward(&params, &y).unwrap();
    let syn = synthesize(&lf.central_view(), &params, lf.center(), 0.8).unwrap();
    let smooth = aggregate_flow(&flow, &y, 3, 1e-3).unwrap();
    let cfg = TrainConfig {
        angular: (3, 3),
        spatial: (24, 30),
        iterations: 3,
        pre_channels: 6,
        growth: 5,
        ..TrainConfig::default()
    };
    let log = train(&cfg, &[Example::from_field(lf)], None, |_| {}).unwrap().log;
    (
        flow.data().to_vec(),
        syn.rgb.data().to_vec(),
        smooth.data().to_vec(),
        log.iter().map(|r| r.total).collect(),
    )
}

#[test]
fn thread_count_does_not_change_results() {
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(run_all);
    let many = pool(4).install(run_all);
    assert_eq!(one, many);
}
