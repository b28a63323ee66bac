//! Images, the 4D light field container, luminance, EPI slicing and resizing.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::Tensor;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Planar `[C][H][W]` image with `f32` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape_err("image", format!("empty extent {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(shape_err(
                "image",
                format!("{channels}x{height}x{width} needs {} samples, got {}", channels * height * width, data.len()),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn clamped(&self) -> Image {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([self.channels, self.height, self.width], self.data.clone()).expect("image dims are non-zero")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        match t.shape() {
            &[c, h, w] => Image::new(c, h, w, t.data().to_vec()),
            s => Err(shape_err("image", format!("expected [C,H,W], got {s:?}"))),
        }
    }
}

/// Per-pixel BT.601 luminance of an RGB image, clamped to `[0, 1]`.
pub fn to_luminance(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "luminance needs 3 channels, image has {}",
            img.channels
        )));
    }
    let n = img.height * img.width;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..n)
        .map(|i| (LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i]).clamp(0.0, 1.0))
        .collect();
    Image::new(1, img.height, img.width, data)
}

/// Angular grid size: `u` views per row, `v` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Angular {
    pub u: usize,
    pub v: usize,
}

impl Angular {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    pub fn count(&self) -> usize {
        self.u * self.v
    }

    /// Row-major view order: `v` outer, `u` inner.
    pub fn views(&self) -> impl Iterator<Item = ViewIndex> + '_ {
        let u_n = self.u;
        (0..self.v).flat_map(move |v| (0..u_n).map(move |u| ViewIndex { u, v }))
    }

    pub fn linear(&self, view: ViewIndex) -> usize {
        view.v * self.u + view.u
    }

    /// Default central view: `(U/2, V/2)`, which for even grids is the lower
    /// of the two middle indices' upper neighbour and always a captured view.
    pub fn default_center(&self) -> ViewIndex {
        ViewIndex {
            u: self.u / 2,
            v: self.v / 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewIndex {
    pub u: usize,
    pub v: usize,
}

impl ViewIndex {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    /// Angular offset `(u - u_c, v - v_c)` from `center`.
    pub fn delta(&self, center: ViewIndex) -> (i32, i32) {
        (self.u as i32 - center.u as i32, self.v as i32 - center.v as i32)
    }
}

/// Dense light field stored view by view as planar images: `[V][U][C][H][W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField {
    angular: Angular,
    center: ViewIndex,
    eta: f32,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LightField {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        angular: Angular,
        center: ViewIndex,
        eta: f32,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if angular.u == 0 || angular.v == 0 {
            return Err(shape_err("light field", format!("empty angular grid {angular:?}")));
        }
        if center.u >= angular.u || center.v >= angular.v {
            return Err(Error::OutOfRange(format!(
                "center {center:?} outside angular grid {}x{}",
                angular.u, angular.v
            )));
        }
        if !matches!(channels, 1 | 3) {
            return Err(shape_err("light field", format!("{channels} channels, expected 1 or 3")));
        }
        if height == 0 || width == 0 {
            return Err(shape_err("light field", "empty spatial extent"));
        }
        let expect = angular.count() * channels * height * width;
        if data.len() != expect {
            return Err(shape_err(
                "light field",
                format!("needs {expect} samples, got {}", data.len()),
            ));
        }
        if !eta.is_finite() {
            return Err(Error::NonFinite("eta".into()));
        }
        Ok(Self {
            angular,
            center,
            eta,
            channels,
            height,
            width,
            data,
        })
    }

    /// Assemble from views listed in row-major angular order.
    pub fn from_views(angular: Angular, center: ViewIndex, eta: f32, views: &[Image]) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(shape_err("light field", "no views"));
        };
        if views.len() != angular.count() {
            return Err(shape_err(
                "light field",
                format!("{} views for a {}x{} grid", views.len(), angular.u, angular.v),
            ));
        }
        if let Some(bad) = views.iter().position(|v| !v.same_dims(first)) {
            return Err(shape_err("light field", format!("view {bad} has different dimensions")));
        }
        let mut data = Vec::with_capacity(first.data.len() * views.len());
        for v in views {
            data.extend_from_slice(&v.data);
        }
        Self::new(angular, center, eta, first.channels, first.height, first.width, data)
    }

    pub fn angular(&self) -> Angular {
        self.angular
    }

    pub fn center(&self) -> ViewIndex {
        self.center
    }

    pub fn eta(&self) -> f32 {
        self.eta
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn with_center(mut self, center: ViewIndex) -> Result<Self> {
        if center.u >= self.angular.u || center.v >= self.angular.v {
            return Err(Error::OutOfRange(format!("center {center:?}")));
        }
        self.center = center;
        Ok(self)
    }

    pub fn with_eta(mut self, eta: f32) -> Self {
        self.eta = eta;
        self
    }

    fn view_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn check_view(&self, view: ViewIndex) -> Result<()> {
        if view.u >= self.angular.u || view.v >= self.angular.v {
            return Err(Error::OutOfRange(format!(
                "view {view:?} outside {}x{} grid",
                self.angular.u, self.angular.v
            )));
        }
        Ok(())
    }

    pub fn view_data(&self, view: ViewIndex) -> &[f32] {
        let n = self.view_len();
        let i = self.angular.linear(view);
        &self.data[i * n..(i + 1) * n]
    }

    pub fn view(&self, view: ViewIndex) -> Result<Image> {
        self.check_view(view)?;
        Image::new(self.channels, self.height, self.width, self.view_data(view).to_vec())
    }

    pub fn views(&self) -> Vec<Image> {
        self.angular.views().map(|v| self.view(v).expect("in-range view")).collect()
    }

    pub fn central_view(&self) -> Image {
        self.view(self.center).expect("center validated at construction")
    }

    /// Sample `L(x, y, u, v)` for channel `c`.
    pub fn sample(&self, c: usize, y: usize, x: usize, view: ViewIndex) -> f32 {
        let base = self.angular.linear(view) * self.view_len();
        self.data[base + (c * self.height + y) * self.width + x]
    }

    /// Copy with every sample clamped to `[0, 1]`.
    pub fn clamped(&self) -> LightField {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }

    pub fn to_luminance(&self) -> Result<LightField> {
        let views = self.views().iter().map(to_luminance).collect::<Result<Vec<_>>>()?;
        LightField::from_views(self.angular, self.center, self.eta, &views)
    }

    /// Single-channel views stacked as a `[N, H, W]` tensor.
    pub fn to_view_tensor(&self) -> Result<Tensor<f32>> {
        if self.channels != 1 {
            return Err(Error::InvalidArgument("view tensor needs a single-channel field".into()));
        }
        Tensor::new([self.angular.count(), self.height, self.width], self.data.clone())
    }

    /// Horizontal EPI `E[u][x] = L(x, y, u, v)` as an image with `U` rows.
    pub fn extract_epi(&self, y: usize, v: usize) -> Result<Image> {
        if y >= self.height || v >= self.angular.v {
            return Err(Error::OutOfRange(format!(
                "epi row y={y}, v={v} outside H={}, V={}",
                self.height, self.angular.v
            )));
        }
        let (uc, w) = (self.angular.u, self.width);
        Ok(Image::from_fn(self.channels, uc, w, |c, u, x| {
            self.sample(c, y, x, ViewIndex { u, v })
        }))
    }

    /// Vertical EPI `E[v][y] = L(x, y, u, v)` as an image with `V` rows.
    pub fn extract_epi_vertical(&self, x: usize, u: usize) -> Result<Image> {
        if x >= self.width || u >= self.angular.u {
            return Err(Error::OutOfRange(format!(
                "epi column x={x}, u={u} outside W={}, U={}",
                self.width, self.angular.u
            )));
        }
        Ok(Image::from_fn(self.channels, self.angular.v, self.height, |c, v, y| {
            self.sample(c, y, x, ViewIndex { u, v })
        }))
    }

    /// Bilinear resize of every view.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<LightField> {
        let views = self
            .views()
            .iter()
            .map(|v| resize_bilinear(v, height, width))
            .collect::<Result<Vec<_>>>()?;
        LightField::from_views(self.angular, self.center, self.eta, &views)
    }
}

/// Source coordinate for output index `dst` with half-pixel centers,
/// clamped to the valid sample range.
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f32) {
    let s = ((dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!("resize target {height}x{width}")));
    }
    let ys: Vec<_> = (0..height).map(|y| source_coord(y, img.height, height)).collect();
    let xs: Vec<_> = (0..width).map(|x| source_coord(x, img.width, width)).collect();
    Ok(Image::from_fn(img.channels, height, width, |c, y, x| {
        let (y0, y1, wy) = ys[y];
        let (x0, x1, wx) = xs[x];
        let top = (1.0 - wx) * img.get(c, y0, x0) + wx * img.get(c, y0, x1);
        let bot = (1.0 - wx) * img.get(c, y1, x0) + wx * img.get(c, y1, x1);
        (1.0 - wy) * top + wy * bot
    }))
}
