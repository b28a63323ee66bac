//! Finite-difference checks of every differentiable operation in `f64`.
//!
//! Each check returns the worst relative error, or a description of the
//! first coordinate that exceeds the tolerance.

use lfsynth::flownet::{forward_var, init_network, NetworkParams, NetworkSpec, ParamVars};
use lfsynth::lightfield::Angular;
use lfsynth::losses::{
    global_loss_var, l1_mean_var, local_loss_var, mean_var, objective_var, std_var, tv_var, LossKind, LossWeights,
};
use lfsynth::numerics::{Graph, Tensor, Var};
use lfsynth::warping::{sample_var, warp_views_var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

pub type Check = Result<f64, String>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

/// Compare the reverse-mode gradient of `build` with central differences at
/// up to `probes` coordinates of every input. Non-scalar outputs are reduced
/// with fixed random weights so the full vector-Jacobian product is tested.
fn check(name: &str, inputs: Vec<Tensor<f64>>, probes: usize, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> Check {
    let eval = |inputs: &[Tensor<f64>], grads: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        let shape = g.value(out).shape().to_vec();
        let obj = if shape.is_empty() {
            out
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let w = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
            let prod = g.mul(out, w).unwrap();
            g.sum(prod)
        };
        let value = g.value(obj).item();
        if !grads {
            return (value, Vec::new());
        }
        g.backward(obj).unwrap();
        (value, vars.iter().map(|&v| g.grad(v).unwrap()).collect())
    };
    let (_, analytic) = eval(&inputs, true);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let picks: Vec<usize> = if t.len() <= probes {
            (0..t.len()).collect()
        } else {
            (0..probes).map(|_| rng.gen_range(0..t.len())).collect()
        };
        for i in picks {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * H);
            let a = analytic[k].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            if !(rel < TOL) {
                return Err(format!("{name}: input {k} index {i}: analytic {a} numeric {numeric} (rel {rel:.2e})"));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Values whose pairwise differences stay well away from the L1 kink.
fn separated(rng: &mut ChaCha8Rng, t: &Tensor<f64>, margin: f64) -> Tensor<f64> {
    let data = t
        .data()
        .iter()
        .map(|&v| {
            let d: f64 = rng.gen_range(margin..0.3);
            if rng.gen_bool(0.5) {
                v + d
            } else {
                v - d
            }
        })
        .collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

pub fn conv2d_relu_concat() -> Check {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for dilation in [1, 2, 3] {
        let x = rand_tensor(&mut rng, &[3, 7, 8], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[4, 3, 3, 3], -0.5, 0.5);
        let b = rand_tensor(&mut rng, &[4], -0.2, 0.2);
        worst = worst.max(check("conv2d", vec![x, w, b], 40, |g, v| g.conv2d(v[0], v[1], Some(v[2]), dilation).unwrap())?);
    }
    let x = Tensor::from_fn([2, 4, 5], |i| if i % 2 == 0 { 0.3 + i as f64 * 0.01 } else { -0.4 - i as f64 * 0.01 });
    worst = worst.max(check("relu", vec![x], 40, |g, v| g.relu(v[0]))?);
    let a = rand_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 3, 4], -1.0, 1.0);
    Ok(worst.max(check("concat", vec![a, b], 40, |g, v| g.concat(&[v[0], v[1]]).unwrap())?))
}

pub fn bilinear_sample_away_from_integers() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (h, w) = (6, 7);
    let img = rand_tensor(&mut rng, &[2, h, w], 0.0, 1.0);
    // Whole-pixel part in [-2, 2], fractional part in [0.1, 0.9]; samples
    // stay strictly inside the image so every tap is differentiable.
    let mut flow = Tensor::zeros([2, h, w]);
    for c in 0..2 {
        let len = if c == 0 { w } else { h };
        for y in 0..h {
            for x in 0..w {
                let pos = if c == 0 { x } else { y } as f64;
                let lo = (-2.0f64).max(-pos).ceil() as i64;
                let hi = 2.0f64.min(len as f64 - 2.0 - pos).floor() as i64;
                let whole = rng.gen_range(lo..=hi.max(lo)) as f64;
                flow.data_mut()[c * h * w + y * w + x] = whole + rng.gen_range(0.1..0.9);
            }
        }
    }
    let worst = check("bilinear_sample", vec![img, flow.clone()], 84, |g, v| sample_var(g, v[0], v[1]).unwrap())?;
    let stack = rand_tensor(&mut rng, &[2, h, w], 0.0, 1.0);
    let mut pair = flow.data().to_vec();
    pair.extend_from_slice(flow.data());
    let flows = Tensor::new([4, h, w], pair).unwrap();
    Ok(worst.max(check("warp_views", vec![stack, flows], 84, |g, v| warp_views_var(g, v[0], v[1]).unwrap())?))
}

pub fn view_statistics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[5, 4, 3], 0.0, 1.0);
    let worst = check("lf_mean", vec![x.clone()], 60, |g, v| mean_var(g, v[0]).unwrap())?;
    Ok(worst.max(check("lf_std", vec![x], 60, |g, v| std_var(g, v[0]).unwrap())?))
}

pub fn light_field_losses() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let angular = Angular::new(3, 2);
    let gt = rand_tensor(&mut rng, &[6, 5, 4], 0.2, 0.8);
    let pred = separated(&mut rng, &gt, 0.05);
    let gtc = gt.clone();
    let mut worst = check("global_loss", vec![pred.clone()], 120, move |g, v| {
        let t = g.constant(gtc.clone());
        global_loss_var(g, v[0], t, angular).unwrap()
    })?;
    let gtc = gt.clone();
    worst = worst.max(check("local_loss", vec![pred.clone()], 120, move |g, v| {
        let t = g.constant(gtc.clone());
        local_loss_var(g, v[0], t, angular).unwrap()
    })?);
    worst = worst.max(check("pixel_l1", vec![pred, gt], 120, |g, v| l1_mean_var(g, v[0], v[1]).unwrap())?);
    let flow = rand_tensor(&mut rng, &[12, 5, 4], -1.0, 1.0);
    Ok(worst.max(check("tv_reg", vec![flow], 120, |g, v| tv_var(g, v[0]).unwrap())?))
}

/// Network parameters with every tensor (including the zero-initialized
/// head) replaced by small random values.
fn random_params(spec: &NetworkSpec, seed: u64) -> NetworkParams<f64> {
    let base = init_network(spec, seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let tensors = base
        .tensors()
        .into_iter()
        .map(|t| {
            let fan = t.shape().iter().skip(1).product::<usize>().max(1) as f64;
            let s = 1.0 / fan.sqrt();
            rand_tensor(&mut rng, t.shape(), -s, s)
        })
        .collect();
    NetworkParams::from_tensors(spec.clone(), tensors).unwrap()
}

pub fn total_objective_through_network() -> Check {
    let angular = Angular::new(2, 2);
    let spec = NetworkSpec {
        pre_channels: 4,
        growth: 3,
        ..NetworkSpec::new(angular)
    };
    let (h, w) = (9, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = random_params(&spec, 11);
    let input = rand_tensor(&mut rng, &[1, h, w], 0.0, 1.0);
    let stack = rand_tensor(&mut rng, &[4, h, w], 0.0, 1.0);
    let gt = rand_tensor(&mut rng, &[4, h, w], 0.0, 1.0);
    let weights = LossWeights {
        lambda_g: 10.0,
        lambda_e: 10.0,
        lambda_tv: 0.5,
    };
    let n_tensors = params.tensors().len();
    let mut inputs = params.tensors();
    inputs.push(input);
    let build = move |g: &mut Graph<f64>, v: &[Var]| {
        let p = NetworkParams::from_tensors(spec.clone(), v[..n_tensors].iter().map(|&x| g.value(x).clone()).collect())
            .unwrap();
        let vars = ParamVars {
            vars: v[..n_tensors].chunks(2).map(|c| (c[0], c[1])).collect(),
        };
        let flow = forward_var(g, &p, &vars, v[n_tensors]).unwrap();
        let s = g.constant(stack.clone());
        let pred = warp_views_var(g, s, flow).unwrap();
        let t = g.constant(gt.clone());
        objective_var(g, pred, t, flow, angular, &weights, LossKind::GlobalLocal).unwrap().total
    };
    // Ten probes per parameter tensor plus the input image.
    check("total_objective", inputs, 10, build)
}

pub fn flow_sum_wrt_random_parameters() -> Check {
    let mut worst = 0.0f64;
    let spec = NetworkSpec {
        pre_channels: 4,
        growth: 4,
        ..NetworkSpec::new(Angular::new(2, 2))
    };
    let params = random_params(&spec, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = rand_tensor(&mut rng, &[1, 10, 11], 0.0, 1.0);
    let flow_sum = |p: &NetworkParams<f64>, grads: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, p);
        let x = g.constant(input.clone());
        let flow = forward_var(&mut g, p, &vars, x).unwrap();
        let s = g.sum(flow);
        let value = g.value(s).item();
        if grads {
            g.backward(s).unwrap();
            (value, vars.grads(&g))
        } else {
            (value, Vec::new())
        }
    };
    let (_, analytic) = flow_sum(&params, true);
    let tensors = params.tensors();
    for _ in 0..10 {
        let k = rng.gen_range(0..tensors.len());
        let i = rng.gen_range(0..tensors[k].len());
        let nudge = |d: f64| {
            let mut t = tensors.clone();
            t[k].data_mut()[i] += d;
            flow_sum(&NetworkParams::from_tensors(spec.clone(), t).unwrap(), false).0
        };
        let numeric = (nudge(H) - nudge(-H)) / (2.0 * H);
        let a = analytic[k].data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        if !(rel < TOL) {
            return Err(format!("flow sum: tensor {k} index {i}: analytic {a} numeric {numeric}"));
        }
        worst = worst.max(rel);
    }
    Ok(worst)
}
