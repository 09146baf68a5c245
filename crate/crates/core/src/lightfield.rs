//! Light-field data model: sub-aperture images on a U×V angular grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LightFieldError {
    #[error("view ({u},{v}): expected {expected_h}x{expected_w}, found {h}x{w}")]
    InconsistentDims {
        u: usize,
        v: usize,
        expected_h: usize,
        expected_w: usize,
        h: usize,
        w: usize,
    },
    #[error("expected {expected} views for a {u}x{v} grid, got {got}")]
    ViewCount {
        u: usize,
        v: usize,
        expected: usize,
        got: usize,
    },
    #[error("window {want_u}x{want_v} larger than grid {u}x{v}")]
    WindowTooLarge {
        u: usize,
        v: usize,
        want_u: usize,
        want_v: usize,
    },
    #[error("window {want_u}x{want_v} cannot be centered in grid {u}x{v} (margin parity)")]
    NotCenterable {
        u: usize,
        v: usize,
        want_u: usize,
        want_v: usize,
    },
    #[error("crop target {target_h}x{target_w} larger than image {h}x{w}")]
    CropTooLarge {
        h: usize,
        w: usize,
        target_h: usize,
        target_w: usize,
    },
    #[error("sample buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("sample {value} at index {index} outside [0,1]")]
    SampleRange { index: usize, value: f32 },
    #[error("empty dimension")]
    Empty,
}

/// Angular position `(u, v)` of a view: row `u`, column `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AngularCoord {
    pub u: usize,
    pub v: usize,
}

impl AngularCoord {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }
}

impl std::fmt::Display for AngularCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.u, self.v)
    }
}

/// One sub-aperture image. Samples are RGB, pixel-interleaved, row-major, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sai {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Sai {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, LightFieldError> {
        if height == 0 || width == 0 {
            return Err(LightFieldError::Empty);
        }
        let expected = height * width * 3;
        if data.len() != expected {
            return Err(LightFieldError::BufferSize {
                expected,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && (0.0..=1.0).contains(*x)))
        {
            return Err(LightFieldError::SampleRange { index, value });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self, LightFieldError> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Builds an image from a channel-major (3×H×W) buffer.
    pub fn from_planar(height: usize, width: usize, planar: &[f32]) -> Result<Self, LightFieldError> {
        let n = height * width;
        if planar.len() != 3 * n {
            return Err(LightFieldError::BufferSize {
                expected: 3 * n,
                got: planar.len(),
            });
        }
        let mut data = Vec::with_capacity(3 * n);
        for i in 0..n {
            data.extend_from_slice(&[planar[i], planar[n + i], planar[2 * n + i]]);
        }
        Self::new(height, width, data)
    }

    /// Channel-major (3×H×W) copy of the samples.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out[i] = px[0];
            out[n + i] = px[1];
            out[2 * n + i] = px[2];
        }
        out
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

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Removes `floor(margin / 2)` rows/columns on the top/left and the remainder on the bottom/right.
pub fn crop_center(img: &Sai, target_h: usize, target_w: usize) -> Result<Sai, LightFieldError> {
    let (h, w) = (img.height, img.width);
    if target_h > h || target_w > w {
        return Err(LightFieldError::CropTooLarge {
            h,
            w,
            target_h,
            target_w,
        });
    }
    if target_h == 0 || target_w == 0 {
        return Err(LightFieldError::Empty);
    }
    let top = (h - target_h) / 2;
    let left = (w - target_w) / 2;
    let mut data = Vec::with_capacity(target_h * target_w * 3);
    for y in top..top + target_h {
        let row = 3 * (y * w + left);
        data.extend_from_slice(&img.data[row..row + 3 * target_w]);
    }
    Ok(Sai {
        height: target_h,
        width: target_w,
        data,
    })
}

/// A U×V grid of equally sized views, stored row-major by angular coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField {
    u: usize,
    v: usize,
    views: Vec<Sai>,
}

impl LightField {
    pub fn new(u: usize, v: usize, views: Vec<Sai>) -> Result<Self, LightFieldError> {
        if u == 0 || v == 0 {
            return Err(LightFieldError::Empty);
        }
        if views.len() != u * v {
            return Err(LightFieldError::ViewCount {
                u,
                v,
                expected: u * v,
                got: views.len(),
            });
        }
        let (h, w) = (views[0].height, views[0].width);
        for (i, s) in views.iter().enumerate() {
            if s.height != h || s.width != w {
                return Err(LightFieldError::InconsistentDims {
                    u: i / v,
                    v: i % v,
                    expected_h: h,
                    expected_w: w,
                    h: s.height,
                    w: s.width,
                });
            }
        }
        Ok(Self { u, v, views })
    }

    pub fn angular_rows(&self) -> usize {
        self.u
    }

    pub fn angular_cols(&self) -> usize {
        self.v
    }

    pub fn height(&self) -> usize {
        self.views[0].height
    }

    pub fn width(&self) -> usize {
        self.views[0].width
    }

    pub fn view(&self, c: AngularCoord) -> &Sai {
        &self.views[c.u * self.v + c.v]
    }

    pub fn views(&self) -> &[Sai] {
        &self.views
    }

    pub fn coords(&self) -> impl Iterator<Item = AngularCoord> + '_ {
        (0..self.u).flat_map(move |u| (0..self.v).map(move |v| AngularCoord { u, v }))
    }

    /// Total spatial-angular sample positions, U·V·H·W.
    pub fn pixel_count(&self) -> usize {
        self.u * self.v * self.height() * self.width()
    }
}

/// Keeps the centered `want_u × want_v` window of views.
pub fn select_central_views(
    lf: &LightField,
    want_u: usize,
    want_v: usize,
) -> Result<LightField, LightFieldError> {
    let (u, v) = (lf.u, lf.v);
    if want_u > u || want_v > v {
        return Err(LightFieldError::WindowTooLarge {
            u,
            v,
            want_u,
            want_v,
        });
    }
    if want_u == 0 || want_v == 0 {
        return Err(LightFieldError::Empty);
    }
    if !(u - want_u).is_multiple_of(2) || !(v - want_v).is_multiple_of(2) {
        return Err(LightFieldError::NotCenterable {
            u,
            v,
            want_u,
            want_v,
        });
    }
    let (du, dv) = ((u - want_u) / 2, (v - want_v) / 2);
    let mut views = Vec::with_capacity(want_u * want_v);
    for i in 0..want_u {
        for j in 0..want_v {
            views.push(lf.view(AngularCoord::new(i + du, j + dv)).clone());
        }
    }
    LightField::new(want_u, want_v, views)
}

/// Boustrophedon scan: even rows left to right, odd rows right to left.
pub fn serpentine_order(u: usize, v: usize) -> Vec<AngularCoord> {
    let mut out = Vec::with_capacity(u * v);
    for row in 0..u {
        if row % 2 == 0 {
            out.extend((0..v).map(|col| AngularCoord::new(row, col)));
        } else {
            out.extend((0..v).rev().map(|col| AngularCoord::new(row, col)));
        }
    }
    out
}
