//! Refocusing, image quality metrics and EPI slope measurement.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::lightfield::{to_luminance, Image, LightField};
use crate::losses::mean_axis0;
use crate::numerics::Tensor;
use crate::warping::bilinear_sample;

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

/// Shift-and-add refocus: `R(x, y) = mean over views of
/// L(x + alpha * du, y + alpha * dv, u, v)` with bilinear, clamp-to-edge
/// sampling. At `alpha = 0` this is exactly the per-pixel view mean.
pub fn refocus(lf: &LightField, alpha: f32) -> Result<Image> {
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha".into()));
    }
    let (c, h, w) = (lf.channels(), lf.height(), lf.width());
    let plane = h * w;
    let mut stack = Vec::with_capacity(lf.data().len());
    for view in lf.angular().views() {
        let (du, dv) = view.delta(lf.center());
        let (ox, oy) = (alpha * du as f32, alpha * dv as f32);
        if ox == 0.0 && oy == 0.0 {
            stack.extend_from_slice(lf.view_data(view));
            continue;
        }
        let mut flow = vec![ox; 2 * plane];
        flow[plane..].fill(oy);
        let img = Tensor::new([c, h, w], lf.view_data(view).to_vec())?;
        let shifted = bilinear_sample(&img, &Tensor::new([2, h, w], flow)?)?;
        stack.extend_from_slice(shifted.data());
    }
    Image::new(c, h, w, mean_axis0(&stack, lf.angular().count(), c * plane))
}

/// Anything with a flat sample buffer and comparable dimensions.
pub trait Raster {
    fn dims(&self) -> Vec<usize>;
    fn samples(&self) -> &[f32];
}

impl Raster for Image {
    fn dims(&self) -> Vec<usize> {
        vec![self.channels(), self.height(), self.width()]
    }

    fn samples(&self) -> &[f32] {
        self.data()
    }
}

impl Raster for LightField {
    fn dims(&self) -> Vec<usize> {
        let a = self.angular();
        vec![a.v, a.u, self.channels(), self.height(), self.width()]
    }

    fn samples(&self) -> &[f32] {
        self.data()
    }
}

pub fn mse<R: Raster>(a: &R, b: &R) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err("psnr", format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (x, y) = (a.samples(), b.samples());
    let sum: f64 = x
        .iter()
        .zip(y)
        .map(|(&p, &q)| {
            let d = p as f64 - q as f64;
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// `10 log10(1 / MSE)` over every sample, with unit peak; identical inputs
/// give [`PSNR_CAP`].
pub fn psnr<R: Raster>(a: &R, b: &R) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter keeping only windows fully inside the image.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, &kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, unit
/// dynamic range) averaged over all windows that fit inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(shape_err("ssim", "image dimensions differ"));
    }
    if a.channels() != 1 {
        return Err(Error::InvalidArgument("ssim expects single-channel images".into()));
    }
    let (h, w) = (a.height(), a.width());
    let win = 2 * SSIM_RADIUS + 1;
    if h < win || w < win {
        return Err(Error::InvalidArgument(format!("ssim needs at least {win}x{win} pixels, got {h}x{w}")));
    }
    let k = gaussian_kernel();
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&prod(&x, &x), h, w, &k);
    let syy = filter_valid(&prod(&y, &y), h, w, &k);
    let sxy = filter_valid(&prod(&x, &y), h, w, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (mx, my) = (mx[i], my[i]);
            let vx = sxx[i] - mx * mx;
            let vy = syy[i] - my * my;
            let cxy = sxy[i] - mx * my;
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// SSIM on luminance, converting RGB inputs first.
pub fn ssim_luma(a: &Image, b: &Image) -> Result<f64> {
    let y = |img: &Image| if img.channels() == 3 { to_luminance(img) } else { Ok(img.clone()) };
    ssim(&y(a)?, &y(b)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub u: usize,
    pub v: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-view and aggregate quality of a predicted light field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_view: Vec<ViewMetrics>,
    /// Mean of the per-view PSNR values.
    pub mean_psnr: f64,
    /// Mean of the per-view SSIM values.
    pub mean_ssim: f64,
    /// PSNR of the squared error pooled over every sample of every view.
    pub psnr_all: f64,
}

pub fn compare_fields(pred: &LightField, gt: &LightField) -> Result<MetricsReport> {
    if pred.dims() != gt.dims() {
        return Err(shape_err("metrics", format!("{:?} vs {:?}", pred.dims(), gt.dims())));
    }
    let mut per_view = Vec::new();
    for view in pred.angular().views() {
        let (p, g) = (pred.view(view)?, gt.view(view)?);
        per_view.push(ViewMetrics {
            u: view.u,
            v: view.v,
            psnr: psnr(&p, &g)?,
            ssim: ssim_luma(&p, &g)?,
        });
    }
    let n = per_view.len() as f64;
    Ok(MetricsReport {
        mean_psnr: per_view.iter().map(|m| m.psnr).sum::<f64>() / n,
        mean_ssim: per_view.iter().map(|m| m.ssim).sum::<f64>() / n,
        psnr_all: psnr(pred, gt)?,
        per_view,
    })
}

/// Slope of the EPI lines through the central-view pixels selected by
/// `region`, in pixels per view step.
///
/// Searches the slope `s` that best aligns every view with the central one,
/// `L(x + s du, y + s dv, u, v) ~ L(x, y, u_c, v_c)`, on a grid of `step`
/// over `[lo, hi]`, then refines the minimum with a parabola through its
/// neighbours. Uses luminance for RGB fields.
pub fn epi_slope(lf: &LightField, region: &[bool], lo: f32, hi: f32, step: f32) -> Result<f32> {
    let (h, w) = (lf.height(), lf.width());
    if region.len() != h * w {
        return Err(shape_err("epi_slope", format!("mask has {} entries for {h}x{w}", region.len())));
    }
    if !(lo < hi) || step <= 0.0 {
        return Err(Error::InvalidArgument(format!("search range [{lo}, {hi}] step {step}")));
    }
    let field = if lf.channels() == 3 { lf.to_luminance()? } else { lf.clone() };
    let center = field.central_view();
    let pix: Vec<(usize, usize)> = (0..h * w).filter(|&i| region[i]).map(|i| (i / w, i % w)).collect();
    if pix.is_empty() {
        return Err(Error::InvalidArgument("empty epi region".into()));
    }
    let sample = |data: &[f32], x: f32, y: f32| {
        let sx = x.clamp(0.0, (w - 1) as f32);
        let sy = y.clamp(0.0, (h - 1) as f32);
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f32, sy - y0 as f32);
        let top = (1.0 - fx) * data[y0 * w + x0] + fx * data[y0 * w + x1];
        let bot = (1.0 - fx) * data[y1 * w + x0] + fx * data[y1 * w + x1];
        (1.0 - fy) * top + fy * bot
    };
    let cost = |s: f32| -> f64 {
        let mut acc = 0.0f64;
        for view in field.angular().views() {
            let (du, dv) = view.delta(field.center());
            let data = field.view_data(view);
            for &(y, x) in &pix {
                let d = sample(data, x as f32 + s * du as f32, y as f32 + s * dv as f32) - center.get(0, y, x);
                acc += (d * d) as f64;
            }
        }
        acc
    };
    let n = ((hi - lo) / step).round() as usize;
    let grid: Vec<f32> = (0..=n).map(|i| lo + step * i as f32).collect();
    let costs: Vec<f64> = grid.iter().map(|&s| cost(s)).collect();
    let best = costs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty grid");
    if best == 0 || best == n {
        return Ok(grid[best]);
    }
    let (a, b, c) = (costs[best - 1], costs[best], costs[best + 1]);
    let denom = a - 2.0 * b + c;
    let offset = if denom > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Ok(grid[best] + step * offset as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightfield::{Angular, ViewIndex};

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(1, 4, 4, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(1, 4, 4, 0.3);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        let (z, o) = (Image::filled(3, 2, 2, 0.0), Image::filled(3, 2, 2, 1.0));
        assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
        assert!(psnr(&z, &Image::filled(3, 2, 3, 0.0)).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = Image::from_fn(1, 16, 16, |_, y, x| ((x * 7 + y * 3) % 11) as f32 / 10.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Image::from_fn(1, 16, 16, |_, y, x| 1.0 - a.get(0, y, x));
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        assert!(ssim(&Image::filled(1, 10, 20, 0.0), &Image::filled(1, 10, 20, 0.0)).is_err());
    }

    #[test]
    fn refocus_of_constant_field() {
        let a = Angular::new(3, 3);
        let lf = LightField::new(a, ViewIndex::new(1, 1), 0.8, 1, 6, 6, vec![0.4; 9 * 36]).unwrap();
        for alpha in [-1.3, 0.0, 0.7, 2.0] {
            assert!(refocus(&lf, alpha).unwrap().data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        }
    }
}
