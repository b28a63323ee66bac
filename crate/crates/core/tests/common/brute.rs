//! Brute-force reference implementations on small fixed-size fields.

use lfsynth::flownet::FlowField;
use lfsynth::lightfield::{Angular, Image, LightField, ViewIndex};
use lfsynth::losses::{global_loss, local_loss, tv_reg};
use lfsynth::shifting::shift_image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const U: usize = 4;
pub const V: usize = 4;
pub const W: usize = 16;
pub const H: usize = 12;

pub fn random_field(rng: &mut ChaCha8Rng) -> LightField {
    let a = Angular::new(U, V);
    let data = (0..U * V * H * W).map(|_| rng.gen::<f32>()).collect();
    LightField::new(a, a.default_center(), 0.8, 1, H, W, data).unwrap()
}

pub fn px(lf: &LightField, x: usize, y: usize, u: usize, v: usize) -> f64 {
    lf.sample(0, y, x, ViewIndex::new(u, v)) as f64
}

/// Mean and unbiased std at one pixel over the listed `(u, v)` views.
pub fn stats(lf: &LightField, x: usize, y: usize, views: &[(usize, usize)]) -> (f64, f64) {
    let n = views.len() as f64;
    let mean = views.iter().map(|&(u, v)| px(lf, x, y, u, v)).sum::<f64>() / n;
    let ss = views.iter().map(|&(u, v)| (px(lf, x, y, u, v) - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn stat_l1(p: &LightField, g: &LightField, views: &[(usize, usize)]) -> f64 {
    let (mut dm, mut ds) = (0.0, 0.0);
    for y in 0..H {
        for x in 0..W {
            let (mp, sp) = stats(p, x, y, views);
            let (mg, sg) = stats(g, x, y, views);
            dm += (mp - mg).abs();
            ds += (sp - sg).abs();
        }
    }
    (dm + ds) / (H * W) as f64
}

pub fn brute_global(p: &LightField, g: &LightField) -> f64 {
    let all: Vec<_> = (0..V).flat_map(|v| (0..U).map(move |u| (u, v))).collect();
    stat_l1(p, g, &all)
}

pub fn brute_local(p: &LightField, g: &LightField) -> f64 {
    let mut acc = 0.0;
    for u in 0..U {
        let row: Vec<_> = (0..V).map(|v| (u, v)).collect();
        acc += stat_l1(p, g, &row);
    }
    for v in 0..V {
        let col: Vec<_> = (0..U).map(|u| (u, v)).collect();
        acc += stat_l1(p, g, &col);
    }
    acc / (U + V) as f64
}

pub fn brute_tv(f: &FlowField) -> f64 {
    let (h, w) = (f.height(), f.width());
    let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0usize, 0.0, 0usize);
    for plane in f.data().chunks(h * w) {
        for y in 0..h {
            for x in 0..w {
                let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
                if x + 1 < w {
                    sx += (at(y, x + 1) - at(y, x)).powi(2);
                    nx += 1;
                }
                if y + 1 < h {
                    sy += (at(y + 1, x) - at(y, x)).powi(2);
                    ny += 1;
                }
            }
        }
    }
    sx / nx as f64 + sy / ny as f64
}

/// Linear interpolation of `img` at real coordinates, written as separate
/// 1-D passes and without clamping (callers stay inside the image).
pub fn resample(img: &Image, c: usize, fx: f64, fy: f64) -> f64 {
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let g = |y: usize, x: usize| img.get(c, y, x) as f64;
    lerp(lerp(g(y0, x0), g(y0, x1), tx), lerp(g(y1, x0), g(y1, x1), tx), ty)
}


/// Largest disagreement between the library losses and the brute-force
/// versions over `fields` random prediction/target pairs.
pub fn loss_agreement(fields: usize, tol: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for n in 0..fields {
        let (p, g) = (random_field(&mut rng), random_field(&mut rng));
        let flow_data = (0..U * V * 2 * H * W).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        let flow = FlowField::new(Angular::new(U, V), H, W, flow_data).unwrap();
        let pairs = [
            ("global", global_loss(&p, &g).unwrap(), brute_global(&p, &g)),
            ("local", local_loss(&p, &g).unwrap(), brute_local(&p, &g)),
            ("tv", tv_reg(&flow).unwrap(), brute_tv(&flow)),
        ];
        for (name, a, b) in pairs {
            let d = (a - b).abs();
            if !(d < tol) {
                return Err(format!("{name} on field {n}: {a} vs {b}"));
            }
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

/// Largest interior difference between `shift_image` and `resample`.
pub fn shift_agreement(tol: f64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let img = Image::from_fn(3, 20, 24, |_, _, _| rng.gen());
    let mut worst = 0.0f64;
    for (du, dv, eta) in [(1, 0, 0.8f32), (-3, 2, 0.8), (2, -2, 0.35), (0, 4, 1.25)] {
        let out = shift_image(&img, du, dv, eta).unwrap();
        let (ox, oy) = (-(eta as f64) * du as f64, -(eta as f64) * dv as f64);
        for c in 0..3 {
            for y in 0..20 {
                for x in 0..24 {
                    let (fx, fy) = (x as f64 + ox, y as f64 + oy);
                    if fx < 0.0 || fy < 0.0 || fx > 23.0 || fy > 19.0 {
                        continue;
                    }
                    let d = (out.get(c, y, x) as f64 - resample(&img, c, fx, fy)).abs();
                    if !(d < tol) {
                        return Err(format!("shift ({du},{dv}) eta {eta} at {c},{y},{x}: off by {d}"));
                    }
                    worst = worst.max(d);
                }
            }
        }
    }
    Ok(worst)
}
