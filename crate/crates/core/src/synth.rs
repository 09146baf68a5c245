//! Deterministic synthetic light fields for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lightfield::{LightField, Sai};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Pixel shift per unit of angular distance for the nearest layer.
    pub disparity: f32,
    pub rectangles: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            disparity: 1.0,
            rectangles: 3,
        }
    }
}

struct Patch {
    cx: f32,
    cy: f32,
    half_w: f32,
    half_h: f32,
    depth: f32,
    color: [f32; 3],
    freq: f32,
    angle: f32,
}

fn smoothstep(edge: f32) -> f32 {
    // edge is signed distance inside the patch, in pixels
    (edge + 0.5).clamp(0.0, 1.0)
}

/// Smooth gradient background plus textured rectangles whose position shifts
/// linearly with `(u, v)`; the same seed and dimensions give bit-identical output.
pub fn synth_lightfield(
    seed: u64,
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
) -> LightField {
    synth_lightfield_with(seed, rows, cols, height, width, SynthParams::default())
}

pub fn synth_lightfield_with(
    seed: u64,
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
    params: SynthParams,
) -> LightField {
    assert!(rows >= 1 && cols >= 1 && height >= 1 && width >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corner = || [rng.gen_range(0.15..0.85f32), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
    let corners = [corner(), corner(), corner(), corner()];
    let (h, w) = (height as f32, width as f32);
    let patches: Vec<Patch> = (0..params.rectangles)
        .map(|_| Patch {
            cx: rng.gen_range(0.2..0.8) * w,
            cy: rng.gen_range(0.2..0.8) * h,
            half_w: rng.gen_range(0.12..0.25) * w,
            half_h: rng.gen_range(0.12..0.25) * h,
            depth: rng.gen_range(0.3..1.0),
            color: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
            freq: rng.gen_range(0.15..0.45),
            angle: rng.gen_range(0.0..std::f32::consts::PI),
        })
        .collect();
    let uc = (rows as f32 - 1.0) / 2.0;
    let vc = (cols as f32 - 1.0) / 2.0;

    let mut views = Vec::with_capacity(rows * cols);
    for u in 0..rows {
        for v in 0..cols {
            let mut data = Vec::with_capacity(height * width * 3);
            for y in 0..height {
                let fy = if height > 1 { y as f32 / (h - 1.0) } else { 0.0 };
                for x in 0..width {
                    let fx = if width > 1 { x as f32 / (w - 1.0) } else { 0.0 };
                    let mut px = [0.0f32; 3];
                    for (c, p) in px.iter_mut().enumerate() {
                        let top = corners[0][c] * (1.0 - fx) + corners[1][c] * fx;
                        let bottom = corners[2][c] * (1.0 - fx) + corners[3][c] * fx;
                        *p = top * (1.0 - fy) + bottom * fy;
                    }
                    for p in &patches {
                        let shift = params.disparity * p.depth;
                        let dx = x as f32 - (p.cx + shift * (v as f32 - vc));
                        let dy = y as f32 - (p.cy + shift * (u as f32 - uc));
                        let inside = smoothstep(p.half_w - dx.abs()) * smoothstep(p.half_h - dy.abs());
                        if inside == 0.0 {
                            continue;
                        }
                        let phase = p.freq * (dx * p.angle.cos() + dy * p.angle.sin());
                        let texture = 0.15 * phase.sin();
                        for (dst, &col) in px.iter_mut().zip(&p.color) {
                            let val = (col + texture).clamp(0.0, 1.0);
                            *dst = *dst * (1.0 - inside) + val * inside;
                        }
                    }
                    data.extend(px.iter().map(|s| s.clamp(0.0, 1.0)));
                }
            }
            views.push(Sai::new(height, width, data).expect("synthetic samples are in range"));
        }
    }
    LightField::new(rows, cols, views).expect("grid is complete")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_lightfield(0, 3, 3, 24, 32);
        let b = synth_lightfield(0, 3, 3, 24, 32);
        assert_eq!(a, b);
        let c = synth_lightfield(1, 3, 3, 24, 32);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_disparity_gives_identical_views() {
        let params = SynthParams {
            disparity: 0.0,
            ..SynthParams::default()
        };
        let lf = synth_lightfield_with(5, 3, 2, 10, 12, params);
        for s in lf.views() {
            assert_eq!(s, &lf.views()[0]);
        }
    }

    #[test]
    fn parallax_changes_views() {
        let lf = synth_lightfield(0, 3, 3, 24, 32);
        assert_ne!(lf.views()[0], lf.views()[8]);
    }

    #[test]
    fn single_view_field() {
        let lf = synth_lightfield(2, 1, 1, 8, 8);
        assert_eq!(lf.views().len(), 1);
    }
}
