//! Edge-aware smoothing of predicted flow with a guided filter.

use crate::error::{shape_err, Error, Result};
use crate::flownet::FlowField;
use crate::lightfield::Image;
use crate::numerics::par::map_range;

pub const DEFAULT_RADIUS: usize = 8;
pub const DEFAULT_EPS: f32 = 1e-3;

/// Mean over the `2r+1` window around every sample of a line, replicating the
/// end samples outside the line.
fn box_line(src: &[f64], r: usize, out: &mut [f64]) {
    let n = src.len();
    let at = |i: isize| src[i.clamp(0, n as isize - 1) as usize];
    let side = (2 * r + 1) as f64;
    let mut acc: f64 = (-(r as isize)..=r as isize).map(at).sum();
    for (i, o) in out.iter_mut().enumerate() {
        *o = acc / side;
        let i = i as isize;
        acc += at(i + r as isize + 1) - at(i - r as isize);
    }
}

/// Edge-replicated `(2r+1) x (2r+1)` box mean of an `h x w` plane.
fn box_mean(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        box_line(&src[y * w..(y + 1) * w], r, &mut rows[y * w..(y + 1) * w]);
    }
    let mut out = vec![0.0; h * w];
    let (mut col, mut res) = (vec![0.0; h], vec![0.0; h]);
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        box_line(&col, r, &mut res);
        for y in 0..h {
            out[y * w + x] = res[y];
        }
    }
    out
}

/// Guided filter of one plane, computed in `f64`.
fn guided_plane(guide: &[f64], p: &[f64], h: usize, w: usize, r: usize, eps: f64) -> Vec<f32> {
    let mul = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mean_i = box_mean(guide, h, w, r);
    let mean_p = box_mean(p, h, w, r);
    let corr_ii = box_mean(&mul(guide, guide), h, w, r);
    let corr_ip = box_mean(&mul(guide, p), h, w, r);
    let mut a = vec![0.0; h * w];
    let mut b = vec![0.0; h * w];
    for i in 0..h * w {
        let var = corr_ii[i] - mean_i[i] * mean_i[i];
        let cov = corr_ip[i] - mean_i[i] * mean_p[i];
        a[i] = cov / (var + eps);
        b[i] = mean_p[i] - a[i] * mean_i[i];
    }
    let mean_a = box_mean(&a, h, w, r);
    let mean_b = box_mean(&b, h, w, r);
    (0..h * w).map(|i| (mean_a[i] * guide[i] + mean_b[i]) as f32).collect()
}

fn check_params(radius: usize, eps: f32) -> Result<()> {
    if radius == 0 {
        return Err(Error::InvalidArgument("guided filter radius must be at least 1".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("guided filter eps must be positive, got {eps}")));
    }
    Ok(())
}

/// Guided filter `q = mean(a) * I + mean(b)` with
/// `a = cov(I, p) / (var(I) + eps)` over `(2r+1)`-sided windows. The guide
/// must be single channel; every channel of `input` is filtered on its own.
pub fn guided_filter(guide: &Image, input: &Image, radius: usize, eps: f32) -> Result<Image> {
    check_params(radius, eps)?;
    if guide.channels() != 1 {
        return Err(Error::InvalidArgument("guide must be single channel".into()));
    }
    let (h, w) = (input.height(), input.width());
    if guide.height() != h || guide.width() != w {
        return Err(shape_err(
            "guided filter",
            format!("guide {}x{} vs input {h}x{w}", guide.height(), guide.width()),
        ));
    }
    let g: Vec<f64> = guide.data().iter().map(|&v| v as f64).collect();
    let planes = map_range(input.channels(), |c| {
        let p: Vec<f64> = input.plane(c).iter().map(|&v| v as f64).collect();
        guided_plane(&g, &p, h, w, radius, eps as f64)
    });
    Image::new(input.channels(), h, w, planes.concat())
}

/// Smooth every view's dx and dy channel with the central luminance as guide.
pub fn aggregate_flow(flow: &FlowField, guide: &Image, radius: usize, eps: f32) -> Result<FlowField> {
    check_params(radius, eps)?;
    let (h, w) = (flow.height(), flow.width());
    if guide.channels() != 1 || guide.height() != h || guide.width() != w {
        return Err(shape_err(
            "aggregate flow",
            format!(
                "guide {}x{}x{} vs flow {h}x{w}",
                guide.channels(),
                guide.height(),
                guide.width()
            ),
        ));
    }
    let g: Vec<f64> = guide.data().iter().map(|&v| v as f64).collect();
    let plane = h * w;
    let planes = map_range(flow.data().len() / plane, |i| {
        let p: Vec<f64> = flow.data()[i * plane..(i + 1) * plane].iter().map(|&v| v as f64).collect();
        guided_plane(&g, &p, h, w, radius, eps as f64)
    });
    FlowField::new(flow.angular(), h, w, planes.concat())
}
