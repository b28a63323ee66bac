//! Backward warping with a bilinear sampler and the full synthesis pipeline.

use crate::error::{shape_err, Result};
use crate::flownet::{forward, FlowField, NetworkParams};
use crate::lightfield::{to_luminance, Image, LightField, ViewIndex};
use crate::numerics::{par, Function, Graph, Scalar, Tensor, Var};
use crate::shifting::shift_image;

/// Sample location for one axis: clamped coordinate, the two taps, the
/// interpolation weight, and whether the coordinate was inside the image.
#[inline]
fn axis<T: Scalar>(pos: T, len: usize) -> (usize, usize, T, bool) {
    let max = T::from_usize(len - 1).expect("extent fits float");
    let inside = pos >= T::zero() && pos <= max;
    let s = pos.max(T::zero()).min(max);
    let i0 = s.floor().to_usize().expect("clamped coordinate");
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - T::from_usize(i0).expect("index fits float"), inside)
}

fn check_shapes(img: &[usize], flow: &[usize]) -> Result<(usize, usize, usize)> {
    match (img, flow) {
        (&[c, h, w], &[2, fh, fw]) if (h, w) == (fh, fw) => Ok((c, h, w)),
        _ => Err(shape_err(
            "bilinear_sample",
            format!("image {img:?} and flow {flow:?} must be [C,H,W] and [2,H,W]"),
        )),
    }
}

/// `out(x, y) = img(x + dx, y + dy)` with bilinear interpolation and
/// clamp-to-edge. `flow` is `[2, H, W]` holding `(dx, dy)` in pixels.
pub fn bilinear_sample<T: Scalar>(img: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = check_shapes(img.shape(), flow.shape())?;
    let plane = h * w;
    let (src, fl) = (img.data(), flow.data());
    let mut out = vec![T::zero(); c * plane];
    par::for_each_chunk_mut(&mut out, plane, |ch, dst| {
        let src = &src[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (x0, x1, wx, _) = axis(T::from_usize(x).unwrap() + fl[p], w);
                let (y0, y1, wy, _) = axis(T::from_usize(y).unwrap() + fl[plane + p], h);
                let top = (T::one() - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1];
                let bot = (T::one() - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1];
                dst[p] = (T::one() - wy) * top + wy * bot;
            }
        }
    });
    Tensor::new([c, h, w], out)
}

/// Gradients of [`bilinear_sample`] w.r.t. image and flow.
/// Gradients with respect to the image and the flow, when requested.
type SampleGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>);

pub(crate) fn bilinear_sample_backward<T: Scalar>(
    img: &Tensor<T>,
    flow: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_img: bool,
    need_flow: bool,
) -> Result<SampleGrads<T>> {
    let (c, h, w) = check_shapes(img.shape(), flow.shape())?;
    let plane = h * w;
    let (src, fl, go) = (img.data(), flow.data(), grad_out.data());

    let gimg = need_img.then(|| {
        let mut gi = vec![T::zero(); c * plane];
        par::for_each_chunk_mut(&mut gi, plane, |ch, dst| {
            let go = &go[ch * plane..(ch + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let (x0, x1, wx, _) = axis(T::from_usize(x).unwrap() + fl[p], w);
                    let (y0, y1, wy, _) = axis(T::from_usize(y).unwrap() + fl[plane + p], h);
                    let g = go[p];
                    dst[y0 * w + x0] = dst[y0 * w + x0] + (T::one() - wy) * (T::one() - wx) * g;
                    dst[y0 * w + x1] = dst[y0 * w + x1] + (T::one() - wy) * wx * g;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + wy * (T::one() - wx) * g;
                    dst[y1 * w + x1] = dst[y1 * w + x1] + wy * wx * g;
                }
            }
        });
        Tensor::new([c, h, w], gi).expect("image grad shape")
    });

    let gflow = need_flow.then(|| {
        let mut gf = vec![T::zero(); 2 * plane];
        let (gx, gy) = gf.split_at_mut(plane);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (x0, x1, wx, in_x) = axis(T::from_usize(x).unwrap() + fl[p], w);
                let (y0, y1, wy, in_y) = axis(T::from_usize(y).unwrap() + fl[plane + p], h);
                let (mut ax, mut ay) = (T::zero(), T::zero());
                for ch in 0..c {
                    let s = &src[ch * plane..(ch + 1) * plane];
                    let (i00, i01, i10, i11) = (s[y0 * w + x0], s[y0 * w + x1], s[y1 * w + x0], s[y1 * w + x1]);
                    let g = go[ch * plane + p];
                    ax = ax + g * ((T::one() - wy) * (i01 - i00) + wy * (i11 - i10));
                    ay = ay + g * ((T::one() - wx) * (i10 - i00) + wx * (i11 - i01));
                }
                gx[p] = if in_x { ax } else { T::zero() };
                gy[p] = if in_y { ay } else { T::zero() };
            }
        }
        Tensor::new([2, h, w], gf).expect("flow grad shape")
    });

    Ok((gimg, gflow))
}

struct BilinearSample;

impl<T: Scalar> Function<T> for BilinearSample {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (gi, gf) = bilinear_sample_backward(inputs[0], inputs[1], g, needs[0], needs[1])?;
        Ok(vec![gi, gf])
    }
}

/// Differentiable [`bilinear_sample`] on a graph.
pub fn sample_var<T: Scalar>(graph: &mut Graph<T>, img: Var, flow: Var) -> Result<Var> {
    let value = bilinear_sample(graph.value(img), graph.value(flow))?;
    Ok(graph.record(value, vec![img, flow], BilinearSample))
}

fn view_pairs<T: Scalar>(stack: &Tensor<T>, flow: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match (stack.shape(), flow.shape()) {
        (&[n, h, w], &[f, fh, fw]) if f == 2 * n && (h, w) == (fh, fw) => Ok((n, h, w)),
        (s, f) => Err(shape_err(
            "warp_views",
            format!("stack {s:?} and flow {f:?} must be [N,H,W] and [2N,H,W]"),
        )),
    }
}

fn view_slice<T: Scalar>(t: &Tensor<T>, i: usize, c: usize, h: usize, w: usize) -> Tensor<T> {
    let n = c * h * w;
    Tensor::new([c, h, w], t.data()[i * n..(i + 1) * n].to_vec()).expect("view slice")
}

/// Warp view `i` of a single-channel `[N, H, W]` stack with flow channels
/// `2i, 2i+1` of a `[2N, H, W]` flow.
pub fn warp_views<T: Scalar>(stack: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w) = view_pairs(stack, flow)?;
    let views = par::map_range(n, |i| {
        bilinear_sample(&view_slice(stack, i, 1, h, w), &view_slice(flow, i, 2, h, w)).map(Tensor::into_data)
    });
    let mut data = Vec::with_capacity(n * h * w);
    for v in views {
        data.extend(v?);
    }
    Tensor::new([n, h, w], data)
}

struct WarpViews;

impl<T: Scalar> Function<T> for WarpViews {
    fn name(&self) -> &'static str {
        "warp_views"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (stack, flow) = (inputs[0], inputs[1]);
        let (n, h, w) = view_pairs(stack, flow)?;
        let parts = par::map_range(n, |i| {
            bilinear_sample_backward(
                &view_slice(stack, i, 1, h, w),
                &view_slice(flow, i, 2, h, w),
                &view_slice(g, i, 1, h, w),
                needs[0],
                needs[1],
            )
        });
        let (mut gs, mut gf) = (Vec::new(), Vec::new());
        for p in parts {
            let (a, b) = p?;
            if let Some(a) = a {
                gs.extend(a.into_data());
            }
            if let Some(b) = b {
                gf.extend(b.into_data());
            }
        }
        Ok(vec![
            needs[0].then(|| Tensor::new([n, h, w], gs)).transpose()?,
            needs[1].then(|| Tensor::new([2 * n, h, w], gf)).transpose()?,
        ])
    }
}

/// Differentiable [`warp_views`] on a graph.
pub fn warp_views_var<T: Scalar>(graph: &mut Graph<T>, stack: Var, flow: Var) -> Result<Var> {
    let value = warp_views(graph.value(stack), graph.value(flow))?;
    Ok(graph.record(value, vec![stack, flow], WarpViews))
}

/// Output of [`synthesize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    /// Warped RGB views, the product.
    pub rgb: LightField,
    /// Warped luminance views, the quantity the losses see.
    pub y: LightField,
    pub flow: FlowField,
}

/// Warp the shifted stacks of `central_rgb` (and of its luminance) with
/// `flow`, one flow per view shared by both stacks.
pub fn synthesize_with_flow(central_rgb: &Image, flow: &FlowField, center: ViewIndex, eta: f32) -> Result<Synthesis> {
    if (flow.height(), flow.width()) != (central_rgb.height(), central_rgb.width()) {
        return Err(shape_err(
            "synthesize",
            format!(
                "flow is {}x{}, image is {}x{}",
                flow.height(),
                flow.width(),
                central_rgb.height(),
                central_rgb.width()
            ),
        ));
    }
    let angular = flow.angular();
    let y = to_luminance(central_rgb)?;
    let views: Vec<ViewIndex> = angular.views().collect();
    let warped = par::map_range(views.len(), |i| -> Result<(Image, Image)> {
        let view = views[i];
        let (du, dv) = view.delta(center);
        let f = flow.view_flow(view);
        let warp = |img: &Image| -> Result<Image> {
            let shifted = shift_image(img, du, dv, eta)?;
            Image::from_tensor(&bilinear_sample(&shifted.to_tensor(), &f)?)
        };
        Ok((warp(central_rgb)?, warp(&y)?))
    });
    let (mut rgb_views, mut y_views) = (Vec::new(), Vec::new());
    for r in warped {
        let (a, b) = r?;
        rgb_views.push(a);
        y_views.push(b);
    }
    Ok(Synthesis {
        rgb: LightField::from_views(angular, center, eta, &rgb_views)?,
        y: LightField::from_views(angular, center, eta, &y_views)?,
        flow: flow.clone(),
    })
}

/// Full pipeline: luminance, flow estimation, shifting and warping.
pub fn synthesize(central_rgb: &Image, params: &NetworkParams<f32>, center: ViewIndex, eta: f32) -> Result<Synthesis> {
    let angular = params.spec().angular;
    if center.u >= angular.u || center.v >= angular.v {
        return Err(crate::error::Error::OutOfRange(format!("center {center:?}")));
    }
    let y = to_luminance(central_rgb)?;
    let flow = forward(params, &y)?;
    synthesize_with_flow(central_rgb, &flow, center, eta)
}
