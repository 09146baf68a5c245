//! The view-wise implicit representation.
//!
//! `(u, v)` → Fourier positional encoding → two fully connected layers →
//! seed feature map `c0 × h0 × w0` → a stack of upsampling blocks
//! (conv, pixel shuffle, SiLU, then a residual block) → 3-channel head
//! conv → output activation → center crop.
//!
//! Parameter count for a config with `4L` encoding features, hidden width
//! `m`, seed size `n0 = c0·h0·w0`, blocks `(sᵢ, cᵢ)` with `c₋₁ = c0`:
//!
//! ```text
//! 4L·m + m  +  m·n0 + n0
//!   + Σᵢ [ 9·cᵢ₋₁·cᵢ·sᵢ² + cᵢ·sᵢ²  +  2·(9·cᵢ² + cᵢ) ]
//!   + 9·c_last·3 + 3
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Real, Tape, Tensor, TensorError, Var};
use crate::lightfield::{AngularCoord, LightField, LightFieldError, Sai};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("coordinate {coord} outside the {rows}x{cols} grid")]
    OutOfGrid {
        coord: AngularCoord,
        rows: usize,
        cols: usize,
    },
    #[error("fractional coordinate ({0}, {1}) outside the grid")]
    FractionalOutOfRange(f64, f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    LightField(#[from] LightFieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncodingConfig {
    /// Frequency base `b ≥ 1`.
    pub base: f32,
    /// Number of frequencies `L`; the encoding has `4L` entries.
    pub levels: usize,
}

impl PositionalEncodingConfig {
    pub fn dim(&self) -> usize {
        4 * self.levels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Sigmoid,
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub factor: usize,
    pub channels: usize,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub pe: PositionalEncodingConfig,
    pub mlp_hidden: usize,
    pub h0: usize,
    pub w0: usize,
    pub c0: usize,
    pub blocks: Vec<BlockConfig>,
    pub out_h: usize,
    pub out_w: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    pub angular_rows: usize,
    pub angular_cols: usize,
    #[serde(default)]
    pub output_activation: OutputActivation,
    /// SiLU after the residual addition.
    #[serde(default = "default_true")]
    pub residual_activation: bool,
}

/// Channel schedule `max(c0 / 2^i, c_min)` over the given upscale factors.
pub fn channel_ladder(c0: usize, factors: &[usize], c_min: usize) -> Vec<BlockConfig> {
    factors
        .iter()
        .enumerate()
        .map(|(i, &factor)| BlockConfig {
            factor,
            channels: (c0 >> i.min(usize::BITS as usize - 1)).max(c_min),
        })
        .collect()
}

impl ModelConfig {
    pub fn upscale(&self) -> usize {
        self.blocks.iter().map(|b| b.factor).product()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.pe.levels == 0 {
            return err("positional encoding needs at least one frequency (L >= 1)".into());
        }
        if !(self.pe.base.is_finite() && self.pe.base >= 1.0) {
            return err(format!("frequency base {} must be >= 1", self.pe.base));
        }
        for (name, v) in [
            ("mlp_hidden", self.mlp_hidden),
            ("h0", self.h0),
            ("w0", self.w0),
            ("c0", self.c0),
            ("crop_h", self.crop_h),
            ("crop_w", self.crop_w),
            ("angular_rows", self.angular_rows),
            ("angular_cols", self.angular_cols),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.blocks.is_empty() {
            return err("at least one upsampling block is required".into());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.factor == 0 || b.channels == 0 {
                return err(format!("block {i}: factor and channels must be >= 1"));
            }
        }
        let s = self.upscale();
        if self.h0 * s != self.out_h || self.w0 * s != self.out_w {
            return err(format!(
                "seed {}x{} upscaled by {s} gives {}x{}, config says {}x{}",
                self.h0,
                self.w0,
                self.h0 * s,
                self.w0 * s,
                self.out_h,
                self.out_w
            ));
        }
        if self.crop_h > self.out_h || self.crop_w > self.out_w {
            return err(format!(
                "crop {}x{} larger than output {}x{}",
                self.crop_h, self.crop_w, self.out_h, self.out_w
            ));
        }
        Ok(())
    }

    /// Parameter shapes in storage order.
    pub fn parameter_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        let seed = self.c0 * self.h0 * self.w0;
        let fc = |out: &mut Vec<ParamSpec>, name: &str, n_out: usize, n_in: usize| {
            out.push(ParamSpec::weight(format!("{name}.W"), vec![n_out, n_in], n_in, true));
            out.push(ParamSpec::bias(format!("{name}.b"), n_out));
        };
        fc(&mut out, "mlp.fc1", self.mlp_hidden, self.pe.dim());
        fc(&mut out, "mlp.fc2", seed, self.mlp_hidden);
        let conv = |out: &mut Vec<ParamSpec>, name: String, c_out: usize, c_in: usize, prunable| {
            out.push(ParamSpec::weight(
                format!("{name}.K"),
                vec![c_out, c_in, 3, 3],
                9 * c_in,
                prunable,
            ));
            out.push(ParamSpec::bias(format!("{name}.b"), c_out));
        };
        let mut prev = self.c0;
        for (i, b) in self.blocks.iter().enumerate() {
            let c = b.channels;
            conv(&mut out, format!("block[{i}].nerv.conv"), c * b.factor * b.factor, prev, true);
            conv(&mut out, format!("block[{i}].res.conv1"), c, c, true);
            conv(&mut out, format!("block[{i}].res.conv2"), c, c, true);
            prev = c;
        }
        conv(&mut out, "head.conv".into(), 3, prev, false);
        out
    }

    /// Closed-form parameter count (see module docs).
    pub fn parameter_count(&self) -> usize {
        let m = self.mlp_hidden;
        let n0 = self.c0 * self.h0 * self.w0;
        let mut total = self.pe.dim() * m + m + m * n0 + n0;
        let mut prev = self.c0;
        for b in &self.blocks {
            let (c, s2) = (b.channels, b.factor * b.factor);
            total += 9 * prev * c * s2 + c * s2 + 2 * (9 * c * c + c);
            prev = c;
        }
        total + 9 * prev * 3 + 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub fan_in: usize,
    /// Eligible for magnitude pruning (weights, except the output head).
    pub prunable: bool,
}

impl ParamSpec {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize, prunable: bool) -> Self {
        Self {
            name,
            shape,
            kind: ParamKind::Weight,
            fan_in,
            prunable,
        }
    }

    fn bias(name: String, n: usize) -> Self {
        Self {
            name,
            shape: vec![n],
            kind: ParamKind::Bias,
            fan_in: 0,
            prunable: false,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    specs: Vec<ParamSpec>,
    params: Vec<Vec<f32>>,
}

/// Normalizes a grid index to `[-0.1, 0.1]`; a single-row axis maps to 0.
pub fn normalize_coord(index: f64, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        0.2 * index / (extent as f64 - 1.0) - 0.1
    }
}

/// `[sin(2π bᵏ u)]ₖ, [cos(2π bᵏ u)]ₖ, [sin(2π bᵏ v)]ₖ, [cos(2π bᵏ v)]ₖ` for `k < L`,
/// on coordinates already normalized to `[-0.1, 0.1]`.
pub fn encode_normalized(u_n: f64, v_n: f64, cfg: &PositionalEncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.dim());
    let b = cfg.base as f64;
    for x in [u_n, v_n] {
        let angles: Vec<f64> = (0..cfg.levels)
            .map(|k| 2.0 * std::f64::consts::PI * b.powi(k as i32) * x)
            .collect();
        out.extend(angles.iter().map(|a| a.sin()));
        out.extend(angles.iter().map(|a| a.cos()));
    }
    out
}

pub fn positional_encoding(
    coord: AngularCoord,
    rows: usize,
    cols: usize,
    cfg: &PositionalEncodingConfig,
) -> Vec<f64> {
    encode_normalized(
        normalize_coord(coord.u as f64, rows),
        normalize_coord(coord.v as f64, cols),
        cfg,
    )
}

impl Model {
    /// Fan-in scaled uniform init `U(−√(1/fan_in), √(1/fan_in))` for weights, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.parameter_specs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|s| match s.kind {
                ParamKind::Bias => vec![0.0; s.len()],
                ParamKind::Weight => {
                    let bound = (1.0 / s.fan_in as f64).sqrt() as f32;
                    (0..s.len()).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
            })
            .collect();
        Ok(Self {
            config,
            specs,
            params,
        })
    }

    /// Rebuilds a model from explicit parameter values (e.g. a decoded bitstream).
    pub fn from_parameters(config: ModelConfig, params: Vec<Vec<f32>>) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = config.parameter_specs();
        if specs.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.len() != p.len() {
                return Err(ModelError::Config(format!(
                    "{}: expected {} values, got {}",
                    s.name,
                    s.len(),
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Config(format!("{}: non-finite value", s.name)));
            }
        }
        Ok(Self {
            config,
            specs,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn parameters(&self) -> &[Vec<f32>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Vec<f32>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Records every parameter on `tape`, as trainable leaves when `trainable`.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Vec<Var>, ModelError> {
        self.specs
            .iter()
            .zip(&self.params)
            .map(|(s, p)| {
                let t = Tensor {
                    shape: s.shape.clone(),
                    data: p.iter().map(|&x| T::from_f64(x as f64)).collect(),
                };
                Ok(if trainable { tape.param(t)? } else { tape.constant(t)? })
            })
            .collect()
    }

    fn check_coord(&self, c: AngularCoord) -> Result<(), ModelError> {
        let (rows, cols) = (self.config.angular_rows, self.config.angular_cols);
        if c.u >= rows || c.v >= cols {
            return Err(ModelError::OutOfGrid {
                coord: c,
                rows,
                cols,
            });
        }
        Ok(())
    }

    /// Encoding of an in-grid coordinate.
    pub fn encode_coord(&self, c: AngularCoord) -> Result<Vec<f64>, ModelError> {
        self.check_coord(c)?;
        Ok(positional_encoding(
            c,
            self.config.angular_rows,
            self.config.angular_cols,
            &self.config.pe,
        ))
    }

    /// Reconstructs the view at `c`.
    pub fn forward(&self, c: AngularCoord) -> Result<Sai, ModelError> {
        let enc = self.encode_coord(c)?;
        self.render(&enc)
    }

    /// Single-view decode entry point; never materializes other views.
    pub fn decode_view(&self, c: AngularCoord) -> Result<Sai, ModelError> {
        self.forward(c)
    }

    /// Experimental: query a fractional angular position inside the grid.
    /// Only grid positions are ever trained, so no quality is implied.
    pub fn decode_fractional(&self, u: f64, v: f64) -> Result<Sai, ModelError> {
        let (rows, cols) = (self.config.angular_rows, self.config.angular_cols);
        let inside = |x: f64, n: usize| x.is_finite() && x >= 0.0 && x <= (n - 1) as f64;
        if !inside(u, rows) || !inside(v, cols) {
            return Err(ModelError::FractionalOutOfRange(u, v));
        }
        let enc = encode_normalized(normalize_coord(u, rows), normalize_coord(v, cols), &self.config.pe);
        self.render(&enc)
    }

    fn render(&self, encoding: &[f64]) -> Result<Sai, ModelError> {
        let mut tape = Tape::<f32>::new();
        let vars = self.bind(&mut tape, false)?;
        let out = forward_graph(&mut tape, &self.config, &vars, encoding)?;
        Ok(Sai::from_planar(
            self.config.crop_h,
            self.config.crop_w,
            tape.value(out),
        )?)
    }

    /// Decodes every view of the grid.
    pub fn decode_all(&self) -> Result<LightField, ModelError> {
        let (rows, cols) = (self.config.angular_rows, self.config.angular_cols);
        let mut views = Vec::with_capacity(rows * cols);
        for u in 0..rows {
            for v in 0..cols {
                views.push(self.forward(AngularCoord::new(u, v))?);
            }
        }
        Ok(LightField::new(rows, cols, views)?)
    }
}

/// Records the network on `tape` and returns the `[3, crop_h, crop_w]` output.
///
/// `params` must be the vars returned by [`Model::bind`] (storage order).
pub fn forward_graph<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    params: &[Var],
    encoding: &[f64],
) -> Result<Var, TensorError> {
    let mut p = params.iter().copied();
    let mut next = || p.next().expect("parameter list matches config");

    let x = tape.constant(Tensor {
        shape: vec![encoding.len()],
        data: encoding.iter().map(|&e| T::from_f64(e)).collect(),
    })?;
    let (w, b) = (next(), next());
    let h = tape.fc(x, w, b)?;
    let h = tape.silu(h)?;
    let (w, b) = (next(), next());
    let h = tape.fc(h, w, b)?;
    let h = tape.silu(h)?;
    let mut feat = tape.reshape(h, vec![cfg.c0, cfg.h0, cfg.w0])?;

    for block in &cfg.blocks {
        let (k, b) = (next(), next());
        let y = tape.conv3x3(feat, k, b)?;
        let y = tape.pixel_shuffle(y, block.factor)?;
        let skip = tape.silu(y)?;
        let (k, b) = (next(), next());
        let r = tape.conv3x3(skip, k, b)?;
        let r = tape.silu(r)?;
        let (k, b) = (next(), next());
        let r = tape.conv3x3(r, k, b)?;
        let sum = tape.add(r, skip)?;
        feat = if cfg.residual_activation {
            tape.silu(sum)?
        } else {
            sum
        };
    }

    let (k, b) = (next(), next());
    let rgb = tape.conv3x3(feat, k, b)?;
    let rgb = match cfg.output_activation {
        OutputActivation::Sigmoid => tape.sigmoid(rgb)?,
        OutputActivation::Clamp => tape.clamp01(rgb)?,
    };
    let top = (cfg.out_h - cfg.crop_h) / 2;
    let left = (cfg.out_w - cfg.crop_w) / 2;
    if top == 0 && left == 0 && cfg.crop_h == cfg.out_h && cfg.crop_w == cfg.out_w {
        return Ok(rgb);
    }
    tape.crop(rgb, top, left, cfg.crop_h, cfg.crop_w)
}
