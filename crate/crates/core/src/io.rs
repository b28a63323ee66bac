//! Light field and image files.
//!
//! A light field is one PNG holding every view as a tile (`v` selects the
//! tile row, `u` the tile column) and a sibling `.json` document with the
//! grid layout. Samples are quantized to 8 or 16 bits.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{Angular, Image, LightField, ViewIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightFieldMeta {
    pub ang_u: usize,
    pub ang_v: usize,
    pub width: usize,
    pub height: usize,
    pub center_u: usize,
    pub center_v: usize,
    pub eta: f32,
    pub bit_depth: u8,
}

pub fn metadata_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn meta_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Metadata {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Planar `[C][H][W]` samples in `[0, 1]` to an encoded PNG image.
fn encode(channels: usize, height: usize, width: usize, bit_depth: u8, at: impl Fn(usize, usize, usize) -> f32) -> Result<DynamicImage> {
    let (w, h) = (width as u32, height as u32);
    let img = match (channels, bit_depth) {
        (1, 8) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize(at(0, y as usize, x as usize), 255.0) as u8])
        })),
        (3, 8) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| quantize(at(c, y as usize, x as usize), 255.0) as u8))
        })),
        (1, 16) => DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
            Luma([quantize(at(0, y as usize, x as usize), 65535.0) as u16])
        })),
        (3, 16) => DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| quantize(at(c, y as usize, x as usize), 65535.0) as u16))
        })),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "cannot encode {channels} channels at {bit_depth} bits"
            )))
        }
    };
    Ok(img)
}

/// Decoded PNG as `(channels, bit_depth, height, width, planar samples)`.
fn decode(img: &DynamicImage, path: &Path) -> Result<(usize, u8, usize, usize, Vec<f32>)> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, depth, interleaved): (usize, u8, Vec<f32>) = match img {
        DynamicImage::ImageLuma8(b) => (1, 8, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, 8, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, 16, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, 16, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        other => {
            return Err(meta_err(
                path,
                format!("unsupported pixel format {:?}, expected gray or RGB", other.color()),
            ))
        }
    };
    let mut planar = vec![0.0; interleaved.len()];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            planar[c * h * w + i] = v;
        }
    }
    Ok((channels, depth, h, w, planar))
}

/// Decode by content rather than extension, so any file name works.
fn read_png(path: &Path) -> Result<DynamicImage> {
    let wrap = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(wrap)
}

fn write_png(img: &DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Write the tile grid PNG at `path` and its metadata next to it.
pub fn save_lightfield(lf: &LightField, path: &Path, bit_depth: u8) -> Result<()> {
    let a = lf.angular();
    let (h, w) = (lf.height(), lf.width());
    let img = encode(lf.channels(), h * a.v, w * a.u, bit_depth, |c, y, x| {
        lf.sample(c, y % h, x % w, ViewIndex::new(x / w, y / h))
    })?;
    write_png(&img, path)?;
    let meta = LightFieldMeta {
        ang_u: a.u,
        ang_v: a.v,
        width: w,
        height: h,
        center_u: lf.center().u,
        center_v: lf.center().v,
        eta: lf.eta(),
        bit_depth,
    };
    fs::write(metadata_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_lightfield(path: &Path) -> Result<LightField> {
    let meta_path = metadata_path(path);
    let text = fs::read_to_string(&meta_path)?;
    let meta: LightFieldMeta =
        serde_json::from_str(&text).map_err(|e| meta_err(&meta_path, e.to_string()))?;
    for (key, value) in [
        ("ang_u", meta.ang_u),
        ("ang_v", meta.ang_v),
        ("width", meta.width),
        ("height", meta.height),
    ] {
        if value == 0 {
            return Err(meta_err(&meta_path, format!("`{key}` must be positive")));
        }
    }
    if meta.center_u >= meta.ang_u || meta.center_v >= meta.ang_v {
        return Err(meta_err(
            &meta_path,
            format!(
                "center ({}, {}) outside the {}x{} grid",
                meta.center_u, meta.center_v, meta.ang_u, meta.ang_v
            ),
        ));
    }
    let (channels, depth, gh, gw, planar) = decode(&read_png(path)?, path)?;
    if depth != meta.bit_depth {
        return Err(meta_err(
            &meta_path,
            format!("`bit_depth` is {} but the image stores {depth} bits", meta.bit_depth),
        ));
    }
    if gw != meta.ang_u * meta.width {
        return Err(meta_err(
            &meta_path,
            format!(
                "`ang_u` = {} tiles of `width` {} need {} columns, image has {gw}",
                meta.ang_u,
                meta.width,
                meta.ang_u * meta.width
            ),
        ));
    }
    if gh != meta.ang_v * meta.height {
        return Err(meta_err(
            &meta_path,
            format!(
                "`ang_v` = {} tiles of `height` {} need {} rows, image has {gh}",
                meta.ang_v,
                meta.height,
                meta.ang_v * meta.height
            ),
        ));
    }
    let (h, w) = (meta.height, meta.width);
    let angular = Angular::new(meta.ang_u, meta.ang_v);
    let mut data = Vec::with_capacity(planar.len());
    for view in angular.views() {
        for c in 0..channels {
            for y in 0..h {
                let row = c * gh * gw + (view.v * h + y) * gw + view.u * w;
                data.extend_from_slice(&planar[row..row + w]);
            }
        }
    }
    LightField::new(
        angular,
        ViewIndex::new(meta.center_u, meta.center_v),
        meta.eta,
        channels,
        h,
        w,
        data,
    )
}

pub fn load_image(path: &Path) -> Result<Image> {
    let (c, _, h, w, data) = decode(&read_png(path)?, path)?;
    Image::new(c, h, w, data)
}

pub fn save_image(img: &Image, path: &Path, bit_depth: u8) -> Result<()> {
    let png = encode(img.channels(), img.height(), img.width(), bit_depth, |c, y, x| img.get(c, y, x))?;
    write_png(&png, path)
}
