//! PNG heatmaps with depth pointing down and a colorbar on the right.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("unsupported map shape {0:?}: need 2 axes, or 3 axes with a slice")]
    Shape(Vec<usize>),
    #[error("slice index {index} out of range for axis {axis} of length {len}")]
    SliceOutOfRange { axis: usize, index: usize, len: usize },
    #[error("map has {got} values, shape needs {expected}")]
    Length { expected: usize, got: usize },
    #[error("cannot write image: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    Gray,
    #[default]
    Viridis,
}

impl std::str::FromStr for Palette {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gray" | "grey" => Ok(Palette::Gray),
            "viridis" => Ok(Palette::Viridis),
            _ => Err(format!("unknown palette `{s}` (gray, viridis)")),
        }
    }
}

const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

impl Palette {
    /// Color for `t` in `[0, 1]` (clamped).
    pub fn color(self, t: f64) -> Rgb<u8> {
        let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
        match self {
            Palette::Gray => {
                let v = (t * 255.0).round() as u8;
                Rgb([v, v, v])
            }
            Palette::Viridis => {
                let x = t * (VIRIDIS.len() - 1) as f64;
                let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
                let f = x - i as f64;
                let mix = |q: usize| ((1.0 - f) * VIRIDIS[i][q] as f64 + f * VIRIDIS[i + 1][q] as f64).round() as u8;
                Rgb([mix(0), mix(1), mix(2)])
            }
        }
    }
}

/// Plane of a 3D map: fixes `index` along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub axis: usize,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub palette: Palette,
    /// Color limits; `None` uses the map min and max.
    pub range: Option<(f64, f64)>,
    /// Pixels per cell.
    pub scale: u32,
    pub slice: Option<Slice>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { palette: Palette::Viridis, range: None, scale: 4, slice: None }
    }
}

const GAP: u32 = 8;
const BAR: u32 = 16;

/// Extracts the 2D (lateral-like, depth) plane to draw. The last axis is
/// always depth.
pub fn plane(values: &[f64], shape: &[usize], slice: Option<Slice>) -> Result<(Vec<f64>, usize, usize), RenderError> {
    let expected: usize = shape.iter().product();
    if values.len() != expected {
        return Err(RenderError::Length { expected, got: values.len() });
    }
    match (shape.len(), slice) {
        (2, None) => Ok((values.to_vec(), shape[0], shape[1])),
        (3, Some(Slice { axis, index })) => {
            if axis > 2 {
                return Err(RenderError::Shape(shape.to_vec()));
            }
            if index >= shape[axis] {
                return Err(RenderError::SliceOutOfRange { axis, index, len: shape[axis] });
            }
            let keep: Vec<usize> = (0..3).filter(|&q| q != axis).collect();
            let (na, nb) = (shape[keep[0]], shape[keep[1]]);
            let mut out = Vec::with_capacity(na * nb);
            for a in 0..na {
                for b in 0..nb {
                    let mut idx = [0; 3];
                    idx[axis] = index;
                    idx[keep[0]] = a;
                    idx[keep[1]] = b;
                    out.push(values[(idx[0] * shape[1] + idx[1]) * shape[2] + idx[2]]);
                }
            }
            Ok((out, na, nb))
        }
        _ => Err(RenderError::Shape(shape.to_vec())),
    }
}

/// Heatmap with columns along the first plane axis, rows along depth
/// (increasing downward), and a vertical colorbar with the maximum on top.
pub fn render(values: &[f64], shape: &[usize], opts: &RenderOptions) -> Result<RgbImage, RenderError> {
    let (data, nx, nz) = plane(values, shape, opts.slice)?;
    let (lo, hi) = opts.range.unwrap_or_else(|| data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))));
    let t = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let s = opts.scale.max(1);
    let (w, h) = (nx as u32 * s, nz as u32 * s);
    let mut img = RgbImage::from_pixel(w + GAP + BAR, h, Rgb([255, 255, 255]));
    for i in 0..nx {
        for j in 0..nz {
            let c = opts.palette.color(t(data[i * nz + j]));
            for dx in 0..s {
                for dy in 0..s {
                    img.put_pixel(i as u32 * s + dx, j as u32 * s + dy, c);
                }
            }
        }
    }
    for y in 0..h {
        let c = opts.palette.color(if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 0.5 });
        for x in 0..BAR {
            img.put_pixel(w + GAP + x, y, c);
        }
    }
    Ok(img)
}

pub fn write_png(img: &RgbImage, path: &Path) -> Result<(), RenderError> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
