//! Optimization loop, loss logging and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::applications::{compare_fields, MetricsReport};
use crate::error::{shape_err, Error, Result};
use crate::flownet::{forward_var, init_network, save_checkpoint, NetworkParams, NetworkSpec, ParamVars};
use crate::lightfield::{to_luminance, Angular, Image, LightField};
use crate::losses::{objective_var, LossKind, LossWeights};
use crate::numerics::{adam_step, AdamState, Graph, Tensor};
use crate::shifting::shift_stack;
use crate::warping::{synthesize, warp_views_var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f32,
    pub lambda_g: f64,
    pub lambda_e: f64,
    pub lambda_tv: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Save a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    /// `(U, V)` views.
    pub angular: (usize, usize),
    /// `(H, W)` pixels.
    pub spatial: (usize, usize),
    pub loss: LossKind,
    pub pre_channels: usize,
    pub growth: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            eta: 0.8,
            lambda_g: w.lambda_g,
            lambda_e: w.lambda_e,
            lambda_tv: w.lambda_tv,
            iterations: 2000,
            batch_size: 1,
            seed: 0,
            lr: 1e-3,
            checkpoint_every: 0,
            angular: (8, 8),
            spatial: (48, 64),
            loss: LossKind::GlobalLocal,
            pre_channels: 16,
            growth: 16,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_g: self.lambda_g,
            lambda_e: self.lambda_e,
            lambda_tv: self.lambda_tv,
        }
    }

    pub fn angular(&self) -> Angular {
        Angular::new(self.angular.0, self.angular.1)
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec {
            pre_channels: self.pre_channels,
            growth: self.growth,
            ..NetworkSpec::new(self.angular())
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.batch_size == 0 || self.angular.0 == 0 || self.angular.1 == 0 {
            return Err(Error::InvalidArgument("batch size and angular extents must be positive".into()));
        }
        if self.spatial.0 == 0 || self.spatial.1 == 0 {
            return Err(Error::InvalidArgument("spatial extents must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("lr {} / eta {}", self.lr, self.eta)));
        }
        self.network_spec().validate()
    }
}

/// A central RGB view and the light field it should expand into.
#[derive(Clone, Debug)]
pub struct Example {
    pub central: Image,
    pub gt: LightField,
}

impl Example {
    /// Uses the ground truth's own central view as input.
    pub fn from_field(gt: LightField) -> Self {
        Self {
            central: gt.central_view(),
            gt,
        }
    }
}

/// Tensors of one example as the loss sees them: everything on luminance.
struct Prepared {
    input: Tensor<f32>,
    shifted: Tensor<f32>,
    gt: Tensor<f32>,
    angular: Angular,
}

fn prepare(ex: &Example, config: &TrainConfig) -> Result<Prepared> {
    let angular = config.angular();
    let gt = &ex.gt;
    if gt.angular() != angular || (gt.height(), gt.width()) != config.spatial {
        return Err(shape_err(
            "train",
            format!(
                "example is {}x{} views of {}x{}, config expects {}x{} views of {}x{}",
                gt.angular().u,
                gt.angular().v,
                gt.height(),
                gt.width(),
                angular.u,
                angular.v,
                config.spatial.0,
                config.spatial.1
            ),
        ));
    }
    let y = if ex.central.channels() == 3 { to_luminance(&ex.central)? } else { ex.central.clone() };
    let gt_y = if gt.channels() == 3 { gt.to_luminance()? } else { gt.clone() };
    let stack = shift_stack(&y, angular, gt.center(), config.eta)?.into_field();
    Ok(Prepared {
        input: y.to_tensor(),
        shifted: stack.to_view_tensor()?,
        gt: gt_y.to_view_tensor()?,
        angular,
    })
}

/// Loss values logged for one iteration, measured before its update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub global: f64,
    pub local: f64,
    pub tv: f64,
}

impl LossRecord {
    fn is_finite(&self) -> bool {
        [self.total, self.global, self.local, self.tv].iter().all(|v| v.is_finite())
    }
}

/// Objective terms and parameter gradients for one example.
fn step(
    params: &NetworkParams<f32>,
    ex: &Prepared,
    weights: &LossWeights,
    kind: LossKind,
    want_grads: bool,
) -> Result<(LossRecord, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let vars = if want_grads {
        ParamVars::register(&mut g, params)
    } else {
        ParamVars {
            vars: params
                .layers()
                .iter()
                .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
                .collect(),
        }
    };
    let input = g.constant(ex.input.clone());
    let flow = forward_var(&mut g, params, &vars, input)?;
    let stack = g.constant(ex.shifted.clone());
    let pred = warp_views_var(&mut g, stack, flow)?;
    let gt = g.constant(ex.gt.clone());
    let terms = objective_var(&mut g, pred, gt, flow, ex.angular, weights, kind)?;
    let value = |v| g.value(v).item() as f64;
    let record = LossRecord {
        iteration: 0,
        total: value(terms.total),
        global: value(terms.global),
        local: value(terms.local),
        tv: value(terms.tv),
    };
    if !want_grads || !record.is_finite() {
        return Ok((record, Vec::new()));
    }
    g.backward(terms.total)?;
    Ok((record, vars.grads(&g)))
}

/// Objective of `params` on one example without updating anything.
pub fn objective(params: &NetworkParams<f32>, example: &Example, config: &TrainConfig) -> Result<LossRecord> {
    let ex = prepare(example, config)?;
    Ok(step(params, &ex, &config.weights(), config.loss, false)?.0)
}

pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub log: Vec<LossRecord>,
}

/// Train from a seeded initialization; see [`train_from`].
pub fn train(
    config: &TrainConfig,
    dataset: &[Example],
    checkpoint_dir: Option<&Path>,
    on_iteration: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = init_network(&config.network_spec(), config.seed)?;
    train_from(params, config, dataset, checkpoint_dir, on_iteration)
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:06}.lfaf"))
}

pub const LAST_GOOD: &str = "last_good.lfaf";
pub const FINAL: &str = "final.lfaf";

/// Stepwise optimizer state: Adam on the configured objective, one sampled
/// example per batch slot. Fully determined by the config seed.
pub struct Trainer {
    config: TrainConfig,
    weights: LossWeights,
    prepared: Vec<Prepared>,
    params: NetworkParams<f32>,
    tensors: Vec<Tensor<f32>>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl Trainer {
    pub fn new(params: NetworkParams<f32>, config: &TrainConfig, dataset: &[Example]) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        if params.spec() != &config.network_spec() {
            return Err(Error::InvalidArgument("parameters do not match the configured network".into()));
        }
        let prepared = dataset.iter().map(|ex| prepare(ex, config)).collect::<Result<Vec<_>>>()?;
        let tensors = params.tensors();
        Ok(Self {
            weights: config.weights(),
            adam: AdamState::with_defaults(&tensors, config.lr),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_da7a),
            config: config.clone(),
            prepared,
            params,
            tensors,
            iteration: 0,
        })
    }

    pub fn params(&self) -> &NetworkParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> NetworkParams<f32> {
        self.params
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// One update. Returns the losses measured before it; a non-finite loss
    /// or gradient leaves the parameters untouched and is returned as
    /// [`Error::NonFinite`] together with the record.
    pub fn step(&mut self) -> (LossRecord, Result<()>) {
        let it = self.iteration;
        let mut record = LossRecord {
            iteration: it,
            total: 0.0,
            global: 0.0,
            local: 0.0,
            tv: 0.0,
        };
        let batch = self.config.batch_size;
        let scale = 1.0 / batch as f64;
        let mut grads: Vec<Tensor<f32>> = Vec::new();
        for _ in 0..batch {
            let ex = &self.prepared[self.rng.gen_range(0..self.prepared.len())];
            let (r, g) = match step(&self.params, ex, &self.weights, self.config.loss, true) {
                Ok(v) => v,
                Err(e) => return (record, Err(e)),
            };
            record.total += r.total * scale;
            record.global += r.global * scale;
            record.local += r.local * scale;
            record.tv += r.tv * scale;
            if grads.is_empty() {
                grads = g;
            } else {
                for (acc, g) in grads.iter_mut().zip(&g) {
                    acc.add_assign(g);
                }
            }
        }
        let diverged = || Err(Error::NonFinite(format!("training diverged at iteration {it}")));
        if !record.is_finite() || !grads.iter().all(|g| g.all_finite()) {
            return (record, diverged());
        }
        if batch > 1 {
            for g in &mut grads {
                *g = g.map(|v| v * scale as f32);
            }
        }
        if adam_step(&mut self.tensors, &grads, &mut self.adam).is_err() {
            return (record, diverged());
        }
        match NetworkParams::from_tensors(self.params.spec().clone(), self.tensors.clone()) {
            Ok(p) => self.params = p,
            Err(e) => return (record, Err(e)),
        }
        self.iteration += 1;
        (record, Ok(()))
    }
}

/// Run [`Trainer`] for the configured number of iterations.
///
/// Checkpoints go to `checkpoint_dir` every `checkpoint_every` iterations and
/// as [`FINAL`] at the end. If the run diverges it stops with an error; with
/// a checkpoint directory the parameters from before the failing iteration
/// are kept as [`LAST_GOOD`].
pub fn train_from(
    params: NetworkParams<f32>,
    config: &TrainConfig,
    dataset: &[Example],
    checkpoint_dir: Option<&Path>,
    mut on_iteration: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(params, config, dataset)?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (record, status) = trainer.step();
        on_iteration(&record);
        log.push(record);
        if let Err(e) = status {
            if let Some(dir) = checkpoint_dir {
                save_checkpoint(trainer.params(), &dir.join(LAST_GOOD))?;
            }
            return Err(e);
        }
        let done = trainer.iteration();
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
                save_checkpoint(trainer.params(), &checkpoint_path(dir, done))?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(trainer.params(), &dir.join(FINAL))?;
    }
    Ok(TrainOutcome {
        params: trainer.into_params(),
        log,
    })
}

pub fn write_loss_csv(log: &[LossRecord], w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "iteration,total,global,local,tv")?;
    for r in log {
        writeln!(w, "{},{},{},{},{}", r.iteration, r.total, r.global, r.local, r.tv)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_loss_csv(log: &[LossRecord], path: &Path) -> Result<()> {
    write_loss_csv(log, File::create(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub examples: Vec<MetricsReport>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Synthesize every example with `params` and compare to its ground truth.
pub fn evaluate(params: &NetworkParams<f32>, dataset: &[Example], eta: f32) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut examples = Vec::new();
    for ex in dataset {
        let syn = synthesize(&ex.central, params, ex.gt.center(), eta)?;
        examples.push(compare_fields(&syn.rgb, &ex.gt)?);
    }
    let n = examples.len() as f64;
    Ok(Evaluation {
        mean_psnr: examples.iter().map(|e| e.mean_psnr).sum::<f64>() / n,
        mean_ssim: examples.iter().map(|e| e.mean_ssim).sum::<f64>() / n,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_lf, SceneSpec};

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            angular: (3, 3),
            spatial: (12, 14),
            iterations: 3,
            pre_channels: 4,
            growth: 4,
            ..TrainConfig::default()
        }
    }

    fn tiny_example(cfg: &TrainConfig) -> Example {
        let a = cfg.angular();
        let lf = generate_synthetic_lf(&SceneSpec::two_plane(3), a, cfg.spatial.0, cfg.spatial.1, a.default_center(), cfg.eta)
            .unwrap();
        Example::from_field(lf)
    }

    #[test]
    fn config_json_uses_field_names() {
        let json = serde_json::to_value(TrainConfig::default()).unwrap();
        for key in ["eta", "lambda_g", "lambda_e", "lambda_tv", "iterations", "batch_size", "seed", "lr", "checkpoint_every", "angular", "spatial"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let partial: TrainConfig = serde_json::from_str(r#"{"iterations": 7}"#).unwrap();
        assert_eq!(partial.iterations, 7);
        assert_eq!(partial.eta, 0.8);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = tiny_config();
        let data = [tiny_example(&cfg)];
        let a = train(&cfg, &data, None, |_| {}).unwrap();
        let b = train(&cfg, &data, None, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn mismatched_example_is_rejected() {
        let cfg = tiny_config();
        let other = TrainConfig { spatial: (10, 14), ..cfg.clone() };
        assert!(train(&cfg, &[tiny_example(&other)], None, |_| {}).is_err());
        assert!(train(&cfg, &[], None, |_| {}).is_err());
    }

    #[test]
    fn csv_header() {
        let mut buf = Vec::new();
        let r = LossRecord { iteration: 2, total: 1.5, global: 0.1, local: 0.05, tv: 0.0 };
        write_loss_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,total,global,local,tv\n2,1.5,0.1,0.05,0\n");
    }
}
