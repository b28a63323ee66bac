//! Angular pre-shifting of the central image.
//!
//! View `(u, v)` starts as the central image translated so that
//! `out(x, y) = img(x - eta * du, y - eta * dv)`, sampled bilinearly with
//! clamp-to-edge borders.

use crate::error::{Error, Result};
use crate::lightfield::{Angular, Image, LightField, ViewIndex};
use crate::numerics::{par, Tensor};
use crate::warping::bilinear_sample;

/// Default angular shift in pixels per view step.
pub const DEFAULT_ETA: f32 = 0.8;

/// Per-axis sampling offset of view `delta` for shift `eta`.
pub fn shift_offset(delta: (i32, i32), eta: f32) -> (f32, f32) {
    // f64 keeps eta * delta exact for representable products like 0.8 * 5
    let e = eta as f64;
    ((-e * delta.0 as f64) as f32, (-e * delta.1 as f64) as f32)
}

pub fn shift_image(img: &Image, delta_u: i32, delta_v: i32, eta: f32) -> Result<Image> {
    if !eta.is_finite() {
        return Err(Error::NonFinite("eta".into()));
    }
    if delta_u == 0 && delta_v == 0 {
        return Ok(img.clone());
    }
    let (ox, oy) = shift_offset((delta_u, delta_v), eta);
    let plane = img.height() * img.width();
    let mut flow = vec![ox; 2 * plane];
    flow[plane..].fill(oy);
    let flow = Tensor::new([2, img.height(), img.width()], flow)?;
    Image::from_tensor(&bilinear_sample(&img.to_tensor(), &flow)?)
}

/// A light field whose every view is a translated copy of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedStack {
    field: LightField,
}

impl ShiftedStack {
    pub fn field(&self) -> &LightField {
        &self.field
    }

    pub fn into_field(self) -> LightField {
        self.field
    }

    pub fn eta(&self) -> f32 {
        self.field.eta()
    }
}

pub fn shift_stack(img: &Image, angular: Angular, center: ViewIndex, eta: f32) -> Result<ShiftedStack> {
    let views: Vec<ViewIndex> = angular.views().collect();
    let shifted = par::map_range(views.len(), |i| {
        let (du, dv) = views[i].delta(center);
        shift_image(img, du, dv, eta)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ShiftedStack {
        field: LightField::from_views(angular, center, eta, &shifted)?,
    })
}
