//! Hot kernels on a single worker thread versus the default rayon pool.
//!
//! Build with `--no-default-features` to measure the fallback that does not
//! link rayon into the library at all.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lfsynth::flownet::{forward, init_network, FlowField, NetworkSpec};
use lfsynth::lightfield::{to_luminance, Angular};
use lfsynth::numerics::{conv2d, Activation, ConvLayer, Graph, Tensor};
use lfsynth::postprocess::{aggregate_flow, DEFAULT_EPS, DEFAULT_RADIUS};
use lfsynth::scene::{generate_synthetic_lf, SceneSpec};
use lfsynth::training::{Example, TrainConfig, Trainer};
use lfsynth::warping::{synthesize_with_flow, warp_views};
use rayon::{ThreadPool, ThreadPoolBuilder};

const H: usize = 48;
const W: usize = 64;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let one = ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = ThreadPoolBuilder::new().build().unwrap();
    vec![("sequential", one), ("parallel", all)]
}

fn wave(i: usize) -> f32 {
    (i as f32 * 0.618).sin() * 0.5
}

fn kernels(c: &mut Criterion) {
    let a = Angular::new(8, 8);
    let lf = generate_synthetic_lf(&SceneSpec::two_plane(1), a, H, W, a.default_center(), 0.8).unwrap();
    let central = lf.central_view();
    let y = to_luminance(&central).unwrap();
    let n = a.count();

    let input = Tensor::from_fn([64, H, W], wave);
    let layer = ConvLayer::new(Tensor::from_fn([16, 64, 3, 3], |i| wave(i) * 0.1), Tensor::zeros([16]), 4, Activation::Relu)
        .unwrap();
    let stack = Tensor::from_fn([n, H, W], wave);
    let flow_t = Tensor::from_fn([2 * n, H, W], |i| wave(i) * 2.0);
    let flow = FlowField::new(a, H, W, flow_t.data().to_vec()).unwrap();
    let params = init_network(&NetworkSpec::new(a), 0).unwrap();
    let cfg = TrainConfig::default();
    let data = [Example::from_field(lf.clone())];

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (mode, pool) in pools() {
        group.bench_function(BenchmarkId::new("conv2d_forward", mode), |b| {
            b.iter(|| pool.install(|| conv2d(&input, &layer).unwrap()))
        });
        group.bench_function(BenchmarkId::new("conv2d_backward", mode), |b| {
            b.iter(|| {
                pool.install(|| {
                    let mut g = Graph::new();
                    let x = g.param(input.clone());
                    let w = g.param(layer.weight.clone());
                    let out = g.conv2d(x, w, None, layer.dilation).unwrap();
                    let s = g.sum(out);
                    g.backward(s).unwrap();
                })
            })
        });
        group.bench_function(BenchmarkId::new("warp_views", mode), |b| {
            b.iter(|| pool.install(|| warp_views(&stack, &flow_t).unwrap()))
        });
        group.bench_function(BenchmarkId::new("network_forward", mode), |b| {
            b.iter(|| pool.install(|| forward(&params, &y).unwrap()))
        });
        group.bench_function(BenchmarkId::new("synthesize_with_flow", mode), |b| {
            b.iter(|| pool.install(|| synthesize_with_flow(&central, &flow, lf.center(), 0.8).unwrap()))
        });
        group.bench_function(BenchmarkId::new("aggregate_flow", mode), |b| {
            b.iter(|| pool.install(|| aggregate_flow(&flow, &y, DEFAULT_RADIUS, DEFAULT_EPS).unwrap()))
        });
        group.bench_function(BenchmarkId::new("training_step", mode), |b| {
            let mut trainer = Trainer::new(params.clone(), &cfg, &data).unwrap();
            b.iter(|| pool.install(|| trainer.step().1.unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
