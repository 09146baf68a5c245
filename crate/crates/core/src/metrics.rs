//! Color conversion and quality metrics (PSNR, SSIM, YUV-PSNR, bpp).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lightfield::{LightField, Sai};

/// PSNR reported when the two planes are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    Shape(usize, usize, usize, usize),
    #[error("plane {h}x{w} smaller than the {window}x{window} SSIM window")]
    TooSmall { h: usize, w: usize, window: usize },
    #[error("light field dimensions differ")]
    FieldMismatch,
}

/// A single image plane, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "plane buffer size");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width])
    }

    fn check_same(&self, other: &Plane) -> Result<(), MetricError> {
        if self.height != other.height || self.width != other.width {
            return Err(MetricError::Shape(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }
}

/// Full-range YUV 4:4:4 planes.
#[derive(Debug, Clone, PartialEq)]
pub struct YuvImage {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
}

/// BT.709 luma weights.
const KR: f64 = 0.2126;
const KG: f64 = 0.7152;
const KB: f64 = 0.0722;

pub fn rgb_to_yuv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let y = KR * r + KG * g + KB * b;
    let u = (b - y) / (2.0 * (1.0 - KB)) + 0.5;
    let v = (r - y) / (2.0 * (1.0 - KR)) + 0.5;
    [y.clamp(0.0, 1.0), u.clamp(0.0, 1.0), v.clamp(0.0, 1.0)]
}

/// BT.709 full-range conversion of an RGB image in `[0,1]`.
pub fn rgb_to_yuv444(img: &Sai) -> YuvImage {
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let (mut y, mut u, mut v) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for px in img.data().chunks_exact(3) {
        let [py, pu, pv] = rgb_to_yuv(px[0] as f64, px[1] as f64, px[2] as f64);
        y.push(py as f32);
        u.push(pu as f32);
        v.push(pv as f32);
    }
    YuvImage {
        y: Plane::new(h, w, y),
        u: Plane::new(h, w, u),
        v: Plane::new(h, w, v),
    }
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64, MetricError> {
    a.check_same(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane, peak: f64) -> Result<f64, MetricError> {
    let m = mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// 2-D Gaussian window, row-major `size × size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(size, sigma);
    let mut out = Vec::with_capacity(size * size);
    for a in &taps {
        for b in &taps {
            out.push(a * b);
        }
    }
    out
}

/// Mean SSIM over all window positions that lie fully inside the plane.
///
/// Gaussian window 11×11, σ = 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64, MetricError> {
    a.check_same(b)?;
    let k = SSIM_WINDOW;
    let (h, w) = (a.height, a.width);
    if h < k || w < k {
        return Err(MetricError::TooSmall { h, w, window: k });
    }
    let win = gaussian_window(k, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..k {
                let row = (y + dy) * w + x;
                for dx in 0..k {
                    let g = win[dy * k + dx];
                    let pa = a.data[row + dx] as f64;
                    let pb = b.data[row + dx] as f64;
                    ma += g * pa;
                    mb += g * pb;
                    saa += g * pa * pa;
                    sbb += g * pb * pb;
                    sab += g * pa * pb;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Per-plane weights for combining Y, U and V PSNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YuvWeights {
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl Default for YuvWeights {
    /// 6:1:1, the weighting used in JPEG Pleno common test conditions.
    fn default() -> Self {
        Self {
            y: 6.0,
            u: 1.0,
            v: 1.0,
        }
    }
}

impl YuvWeights {
    pub fn combine(&self, py: f64, pu: f64, pv: f64) -> f64 {
        (self.y * py + self.u * pu + self.v * pv) / (self.y + self.u + self.v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewQuality {
    pub u: usize,
    pub v: usize,
    pub psnr_y: f64,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub yuv_psnr: f64,
    pub y_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub views: Vec<ViewQuality>,
    pub mean_psnr_y: f64,
    pub mean_psnr_u: f64,
    pub mean_psnr_v: f64,
    pub mean_yuv_psnr: f64,
    pub mean_y_ssim: f64,
    /// Present once a bitstream size is attached.
    pub bpp: Option<f64>,
}

impl QualityReport {
    pub fn with_bpp(mut self, bytes: usize, pixel_count: usize) -> Self {
        self.bpp = Some(bpp(bytes, pixel_count));
        self
    }
}

/// Bits per pixel: `8·bytes / (U·V·H·W)`.
pub fn bpp(bytes: usize, pixel_count: usize) -> f64 {
    8.0 * bytes as f64 / pixel_count as f64
}

fn check_fields(a: &LightField, b: &LightField) -> Result<(), MetricError> {
    if a.angular_rows() != b.angular_rows()
        || a.angular_cols() != b.angular_cols()
        || a.height() != b.height()
        || a.width() != b.width()
    {
        return Err(MetricError::FieldMismatch);
    }
    Ok(())
}

/// Per-view YUV-PSNR and Y-SSIM plus field averages.
pub fn evaluate(
    reference: &LightField,
    reconstruction: &LightField,
    weights: YuvWeights,
) -> Result<QualityReport, MetricError> {
    check_fields(reference, reconstruction)?;
    let mut views = Vec::new();
    for c in reference.coords() {
        let a = rgb_to_yuv444(reference.view(c));
        let b = rgb_to_yuv444(reconstruction.view(c));
        let psnr_y = psnr(&a.y, &b.y, 1.0)?;
        let psnr_u = psnr(&a.u, &b.u, 1.0)?;
        let psnr_v = psnr(&a.v, &b.v, 1.0)?;
        views.push(ViewQuality {
            u: c.u,
            v: c.v,
            psnr_y,
            psnr_u,
            psnr_v,
            yuv_psnr: weights.combine(psnr_y, psnr_u, psnr_v),
            y_ssim: ssim(&a.y, &b.y)?,
        });
    }
    let mean = |f: fn(&ViewQuality) -> f64| views.iter().map(f).sum::<f64>() / views.len() as f64;
    Ok(QualityReport {
        mean_psnr_y: mean(|q| q.psnr_y),
        mean_psnr_u: mean(|q| q.psnr_u),
        mean_psnr_v: mean(|q| q.psnr_v),
        mean_yuv_psnr: mean(|q| q.yuv_psnr),
        mean_y_ssim: mean(|q| q.y_ssim),
        views,
        bpp: None,
    })
}

/// Mean per-view YUV-PSNR only (skips SSIM).
pub fn yuv_psnr(
    reference: &LightField,
    reconstruction: &LightField,
    weights: YuvWeights,
) -> Result<f64, MetricError> {
    check_fields(reference, reconstruction)?;
    let mut total = 0.0;
    for c in reference.coords() {
        let a = rgb_to_yuv444(reference.view(c));
        let b = rgb_to_yuv444(reconstruction.view(c));
        total += weights.combine(
            psnr(&a.y, &b.y, 1.0)?,
            psnr(&a.u, &b.u, 1.0)?,
            psnr(&a.v, &b.v, 1.0)?,
        );
    }
    Ok(total / (reference.angular_rows() * reference.angular_cols()) as f64)
}
