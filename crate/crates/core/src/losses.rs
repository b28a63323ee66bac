//! Spatio-angular light field losses.
//!
//! Predicted and ground-truth fields are handled as `[N, H, W]` tensors of
//! single-channel views in row-major angular order. Every term averages over
//! pixels, so the default weights do not depend on the image size.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::flownet::FlowField;
use crate::lightfield::{Angular, Image, LightField};
use crate::numerics::{Function, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_e: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 10.0,
            lambda_e: 10.0,
            lambda_tv: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("lambda_g", self.lambda_g), ("lambda_e", self.lambda_e), ("lambda_tv", self.lambda_tv)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} = {w} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Which reconstruction term drives training. The flow smoothness term is
/// added in every case.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `lambda_g * global + lambda_e * local`
    #[default]
    GlobalLocal,
    /// `lambda_g * global`
    Global,
    /// `lambda_e * local`
    Local,
    /// `lambda_g * mean |pred - gt|`, the per-pixel baseline
    PixelL1,
}

// ---- kernels ---------------------------------------------------------------

/// Per-element mean over the leading axis.
pub(crate) fn mean_axis0<T: Scalar>(data: &[T], n: usize, inner: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); inner];
    for k in 0..n {
        for (a, &x) in acc.iter_mut().zip(&data[k * inner..(k + 1) * inner]) {
            *a = *a + x;
        }
    }
    let nf = T::from_usize(n).expect("count fits float");
    acc.iter_mut().for_each(|a| *a = *a / nf);
    acc
}

/// Per-element `sqrt(sum (x - mean)^2 / (n - 1))` over the leading axis.
pub(crate) fn std_axis0<T: Scalar>(data: &[T], n: usize, inner: usize, mean: &[T]) -> Vec<T> {
    let mut acc = vec![T::zero(); inner];
    for k in 0..n {
        for ((a, &x), &m) in acc.iter_mut().zip(&data[k * inner..(k + 1) * inner]).zip(mean) {
            let d = x - m;
            *a = *a + d * d;
        }
    }
    let denom = T::from_usize(n - 1).expect("count fits float");
    acc.iter_mut().for_each(|a| *a = (*a / denom).sqrt());
    acc
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    shape[1..].to_vec()
}

struct ViewMean;

impl<T: Scalar> Function<T> for ViewMean {
    fn name(&self) -> &'static str {
        "view_mean"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (n, inner) = inputs[0].leading_split();
        let nf = T::from_usize(n).unwrap();
        let mut data = Vec::with_capacity(n * inner);
        for _ in 0..n {
            data.extend(g.data().iter().map(|&x| x / nf));
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), data)?)])
    }
}

struct ViewStd;

impl<T: Scalar> Function<T> for ViewStd {
    fn name(&self) -> &'static str {
        "view_std"
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let (n, inner) = x.leading_split();
        let mean = mean_axis0(x.data(), n, inner);
        let denom = T::from_usize(n - 1).unwrap();
        let mut data = Vec::with_capacity(n * inner);
        for k in 0..n {
            for (i, &s) in output.data().iter().enumerate().take(inner) {
                // zero spread: use the zero subgradient
                data.push(if s > T::zero() {
                    g.data()[i] * (x.data()[k * inner + i] - mean[i]) / (denom * s)
                } else {
                    T::zero()
                });
            }
        }
        Ok(vec![Some(Tensor::new(x.shape().to_vec(), data)?)])
    }
}

struct L1Mean;

impl<T: Scalar> Function<T> for L1Mean {
    fn name(&self) -> &'static str {
        "l1_mean"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let scale = g.item() / T::from_usize(a.len()).unwrap();
        let signs: Vec<T> = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| {
                if x > y {
                    scale
                } else if x < y {
                    -scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let ga = needs[0].then(|| Tensor::new(a.shape().to_vec(), signs.clone())).transpose()?;
        let gb = needs[1]
            .then(|| Tensor::new(b.shape().to_vec(), signs.iter().map(|&s| -s).collect()))
            .transpose()?;
        Ok(vec![ga, gb])
    }
}

struct TvMean;

/// Squared forward differences along the last two axes: sums and counts.
fn tv_parts<T: Scalar>(x: &Tensor<T>) -> Result<((T, usize), (T, usize))> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(shape_err("tv_reg", format!("need at least 2 axes, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.len() / (h * w);
    let (mut sx, mut sy) = (T::zero(), T::zero());
    for p in x.data().chunks(h * w) {
        for y in 0..h {
            for xx in 0..w {
                let v = p[y * w + xx];
                if xx + 1 < w {
                    let d = p[y * w + xx + 1] - v;
                    sx = sx + d * d;
                }
                if y + 1 < h {
                    let d = p[(y + 1) * w + xx] - v;
                    sy = sy + d * d;
                }
            }
        }
    }
    Ok(((sx, planes * h * (w - 1)), (sy, planes * (h - 1) * w)))
}

fn ratio<T: Scalar>(sum: T, count: usize) -> T {
    if count == 0 {
        T::zero()
    } else {
        sum / T::from_usize(count).unwrap()
    }
}

impl<T: Scalar> Function<T> for TvMean {
    fn name(&self) -> &'static str {
        "tv_reg"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let s = x.shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = x.len() / (h * w);
        let two = T::from_f64_lossy(2.0);
        let cx = planes * h * (w - 1);
        let cy = planes * (h - 1) * w;
        let kx = if cx > 0 { two * g.item() / T::from_usize(cx).unwrap() } else { T::zero() };
        let ky = if cy > 0 { two * g.item() / T::from_usize(cy).unwrap() } else { T::zero() };
        let mut gx = vec![T::zero(); x.len()];
        for (p, gp) in x.data().chunks(h * w).zip(gx.chunks_mut(h * w)) {
            for y in 0..h {
                for xx in 0..w {
                    let i = y * w + xx;
                    if xx + 1 < w {
                        let d = kx * (p[i + 1] - p[i]);
                        gp[i + 1] = gp[i + 1] + d;
                        gp[i] = gp[i] - d;
                    }
                    if y + 1 < h {
                        let d = ky * (p[i + w] - p[i]);
                        gp[i + w] = gp[i + w] + d;
                        gp[i] = gp[i] - d;
                    }
                }
            }
        }
        Ok(vec![Some(Tensor::new(s.to_vec(), gx)?)])
    }
}

// ---- graph-level operations -----------------------------------------------

/// Mean over the leading (view) axis.
pub fn mean_var<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let t = g.value(x);
    if t.shape().len() < 2 {
        return Err(shape_err("lf_mean", format!("need [N, ...], got {:?}", t.shape())));
    }
    let (n, inner) = t.leading_split();
    let value = Tensor::new(reduced_shape(t.shape()), mean_axis0(t.data(), n, inner))?;
    Ok(g.record(value, vec![x], ViewMean))
}

/// Unbiased standard deviation over the leading (view) axis.
pub fn std_var<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let t = g.value(x);
    if t.shape().len() < 2 {
        return Err(shape_err("lf_std", format!("need [N, ...], got {:?}", t.shape())));
    }
    let (n, inner) = t.leading_split();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("standard deviation needs at least 2 views, got {n}")));
    }
    let mean = mean_axis0(t.data(), n, inner);
    let value = Tensor::new(reduced_shape(t.shape()), std_axis0(t.data(), n, inner, &mean))?;
    Ok(g.record(value, vec![x], ViewStd))
}

/// `mean |a - b|` as a scalar.
pub fn l1_mean_var<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (ta, tb) = (g.value(a), g.value(b));
    if ta.shape() != tb.shape() {
        return Err(shape_err("l1", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
    }
    let s: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y).abs()).sum();
    let value = Tensor::scalar(s / T::from_usize(ta.len()).unwrap());
    Ok(g.record(value, vec![a, b], L1Mean))
}

/// Mean squared forward difference along x plus the same along y, over the
/// last two axes of `x` (all leading axes are averaged).
pub fn tv_var<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let ((sx, cx), (sy, cy)) = tv_parts(g.value(x))?;
    let value = Tensor::scalar(ratio(sx, cx) + ratio(sy, cy));
    Ok(g.record(value, vec![x], TvMean))
}

fn check_pair<T: Scalar>(g: &Graph<T>, pred: Var, gt: Var, angular: Angular) -> Result<()> {
    let (p, t) = (g.value(pred).shape(), g.value(gt).shape());
    if p != t {
        return Err(shape_err("light field loss", format!("pred {p:?} vs gt {t:?}")));
    }
    if p.len() != 3 || p[0] != angular.count() {
        return Err(shape_err(
            "light field loss",
            format!("expected [{}, H, W], got {p:?}", angular.count()),
        ));
    }
    Ok(())
}

/// L1 between mean images plus L1 between standard-deviation images.
pub fn global_loss_var<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var, angular: Angular) -> Result<Var> {
    check_pair(g, pred, gt, angular)?;
    stat_terms(g, pred, gt)
}

fn stat_terms<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let n = g.value(pred).shape()[0];
    let (mp, mg) = (mean_var(g, pred)?, mean_var(g, gt)?);
    let mean_term = l1_mean_var(g, mp, mg)?;
    if n < 2 {
        return Ok(mean_term);
    }
    let (sp, sg) = (std_var(g, pred)?, std_var(g, gt)?);
    let std_term = l1_mean_var(g, sp, sg)?;
    g.weighted_sum(&[(mean_term, T::one()), (std_term, T::one())])
}

/// Angular rows (fixed `u`) then angular columns (fixed `v`) as view indices.
pub fn angular_slices(angular: Angular) -> Vec<Vec<usize>> {
    let rows = (0..angular.u).map(|u| (0..angular.v).map(|v| v * angular.u + u).collect());
    let cols = (0..angular.v).map(|v| (0..angular.u).map(|u| v * angular.u + u).collect());
    rows.chain(cols).collect()
}

/// Mean/std L1 terms for every angular row and column, averaged over the
/// slices that hold at least two views.
pub fn local_loss_var<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: Var, angular: Angular) -> Result<Var> {
    check_pair(g, pred, gt, angular)?;
    let mut terms = Vec::new();
    for idx in angular_slices(angular).into_iter().filter(|s| s.len() >= 2) {
        let (sp, sg) = (g.select(pred, &idx)?, g.select(gt, &idx)?);
        terms.push(stat_terms(g, sp, sg)?);
    }
    if terms.is_empty() {
        return Ok(g.constant(Tensor::scalar(T::zero())));
    }
    let w = T::one() / T::from_usize(terms.len()).unwrap();
    let weighted: Vec<_> = terms.into_iter().map(|t| (t, w)).collect();
    g.weighted_sum(&weighted)
}

pub struct LossTerms {
    pub total: Var,
    pub global: Var,
    pub local: Var,
    pub tv: Var,
    pub pixel: Option<Var>,
}

/// Weighted objective `lambda_g * global + lambda_e * local + lambda_tv * tv`
/// (or the variant selected by `kind`). `flow` may have any shape whose last
/// two axes are spatial.
pub fn objective_var<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    gt: Var,
    flow: Var,
    angular: Angular,
    weights: &LossWeights,
    kind: LossKind,
) -> Result<LossTerms> {
    weights.validate()?;
    let global = global_loss_var(g, pred, gt, angular)?;
    let local = local_loss_var(g, pred, gt, angular)?;
    let tv = tv_var(g, flow)?;
    let f = T::from_f64_lossy;
    let (pixel, mut terms) = match kind {
        LossKind::GlobalLocal => (None, vec![(global, f(weights.lambda_g)), (local, f(weights.lambda_e))]),
        LossKind::Global => (None, vec![(global, f(weights.lambda_g))]),
        LossKind::Local => (None, vec![(local, f(weights.lambda_e))]),
        LossKind::PixelL1 => {
            let p = l1_mean_var(g, pred, gt)?;
            (Some(p), vec![(p, f(weights.lambda_g))])
        }
    };
    terms.push((tv, f(weights.lambda_tv)));
    let total = g.weighted_sum(&terms)?;
    Ok(LossTerms {
        total,
        global,
        local,
        tv,
        pixel,
    })
}

// ---- light field level helpers -----------------------------------------------

fn field_tensor<T: Scalar>(lf: &LightField) -> Result<Tensor<T>> {
    Tensor::new(
        [lf.angular().count(), lf.channels() * lf.height(), lf.width()],
        lf.data().to_vec(),
    )
    .map(|t| t.cast())
}

fn check_fields(pred: &LightField, gt: &LightField) -> Result<()> {
    let dims = |l: &LightField| (l.angular(), l.channels(), l.height(), l.width());
    if dims(pred) != dims(gt) {
        return Err(shape_err("light field loss", "pred and gt dimensions differ"));
    }
    if pred.channels() != 1 {
        return Err(Error::InvalidArgument("losses operate on single-channel fields".into()));
    }
    Ok(())
}

/// Per-pixel mean over all views.
pub fn lf_mean(lf: &LightField) -> Result<Image> {
    let n = lf.angular().count();
    let inner = lf.channels() * lf.height() * lf.width();
    Image::new(lf.channels(), lf.height(), lf.width(), mean_axis0(lf.data(), n, inner))
}

/// Per-pixel unbiased standard deviation over all views.
pub fn lf_std(lf: &LightField) -> Result<Image> {
    let n = lf.angular().count();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("standard deviation needs at least 2 views, got {n}")));
    }
    let inner = lf.channels() * lf.height() * lf.width();
    let mean = mean_axis0(lf.data(), n, inner);
    Image::new(lf.channels(), lf.height(), lf.width(), std_axis0(lf.data(), n, inner, &mean))
}

fn eval_pair(
    pred: &LightField,
    gt: &LightField,
    f: impl FnOnce(&mut Graph<f64>, Var, Var, Angular) -> Result<Var>,
) -> Result<f64> {
    check_fields(pred, gt)?;
    let mut g = Graph::<f64>::new();
    let p = g.constant(field_tensor(pred)?);
    let t = g.constant(field_tensor(gt)?);
    let out = f(&mut g, p, t, pred.angular())?;
    Ok(g.value(out).item())
}

pub fn global_loss(pred: &LightField, gt: &LightField) -> Result<f64> {
    eval_pair(pred, gt, global_loss_var)
}

pub fn local_loss(pred: &LightField, gt: &LightField) -> Result<f64> {
    eval_pair(pred, gt, local_loss_var)
}

pub fn pixel_l1_loss(pred: &LightField, gt: &LightField) -> Result<f64> {
    eval_pair(pred, gt, |g, p, t, _| l1_mean_var(g, p, t))
}

pub fn tv_reg(flow: &FlowField) -> Result<f64> {
    let mut g = Graph::<f64>::new();
    let f = g.constant(flow.to_tensor().cast());
    let out = tv_var(&mut g, f)?;
    Ok(g.value(out).item())
}

pub fn total_objective(pred: &LightField, gt: &LightField, flow: &FlowField, weights: &LossWeights) -> Result<f64> {
    check_fields(pred, gt)?;
    let mut g = Graph::<f64>::new();
    let p = g.constant(field_tensor(pred)?);
    let t = g.constant(field_tensor(gt)?);
    let f = g.constant(flow.to_tensor().cast());
    let terms = objective_var(&mut g, p, t, f, pred.angular(), weights, LossKind::GlobalLocal)?;
    Ok(g.value(terms.total).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::ViewIndex;

    fn field(angular: Angular, h: usize, w: usize, f: impl Fn(usize) -> f32) -> LightField {
        let data = (0..angular.count() * h * w).map(f).collect();
        LightField::new(angular, ViewIndex::new(0, 0), 0.8, 1, h, w, data).unwrap()
    }

    #[test]
    fn mean_of_constant_and_pair() {
        let c = field(Angular::new(3, 2), 4, 5, |_| 0.7);
        assert!(lf_mean(&c).unwrap().data().iter().all(|&v| v == 0.7));
        let pair = field(Angular::new(2, 1), 3, 3, |i| if i < 9 { 0.0 } else { 1.0 });
        assert!(lf_mean(&pair).unwrap().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn std_of_constant_and_pair() {
        let c = field(Angular::new(3, 2), 4, 5, |_| 0.7);
        assert!(lf_std(&c).unwrap().data().iter().all(|&v| v == 0.0));
        let pair = field(Angular::new(2, 1), 3, 3, |i| if i < 9 { 0.0 } else { 1.0 });
        assert!(lf_std(&pair)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 0.5f32.sqrt()).abs() < 1e-7));
        let single = field(Angular::new(1, 1), 2, 2, |_| 0.1);
        assert!(lf_std(&single).is_err());
    }

    #[test]
    fn identical_fields_have_zero_loss() {
        let a = field(Angular::new(4, 3), 5, 6, |i| ((i * 37) % 101) as f32 / 100.0);
        assert_eq!(global_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(local_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_only_moves_the_mean() {
        let gt = field(Angular::new(3, 3), 4, 4, |i| ((i * 13) % 17) as f32 / 40.0);
        let pred = field(Angular::new(3, 3), 4, 4, |i| ((i * 13) % 17) as f32 / 40.0 + 0.1);
        let l = global_loss(&pred, &gt).unwrap();
        assert!((l - 0.1).abs() < 1e-6, "{l}");
    }

    #[test]
    fn single_row_local_equals_global() {
        let a = Angular::new(5, 1);
        let gt = field(a, 3, 4, |i| ((i * 7) % 11) as f32 / 10.0);
        let pred = field(a, 3, 4, |i| ((i * 5) % 13) as f32 / 12.0);
        let g = global_loss(&pred, &gt).unwrap();
        let l = local_loss(&pred, &gt).unwrap();
        assert!((g - l).abs() < 1e-12, "{g} vs {l}");
    }

    #[test]
    fn slices_cover_rows_and_columns() {
        let s = angular_slices(Angular::new(3, 2));
        assert_eq!(s, vec![vec![0, 3], vec![1, 4], vec![2, 5], vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            lambda_g: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
