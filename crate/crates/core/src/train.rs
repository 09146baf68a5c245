//! Overfitting a model to a light field.
//!
//! Loss: `α·mean|p − g| + (1 − α)·(1 − SSIM_rgb(p, g))`, where `SSIM_rgb` is the
//! mean SSIM map over all three channels with the metric's 11×11 Gaussian
//! window. Optimizer: bias-corrected Adam with an epoch-level cosine schedule.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Real, Tape, Tensor, TensorError, Var};
use crate::codec::{CodecError, PruneMask};
use crate::lightfield::{AngularCoord, LightField};
use crate::metrics::{self, gaussian_window, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::model::{forward_graph, Model, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("light field does not match the model: {0}")]
    FieldMismatch(String),
    #[error("training diverged (non-finite values) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("optimizer state does not match parameter shapes")]
    ShapeDrift,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub alpha: f64,
    pub batch: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub finetune_epochs: usize,
    /// Initial learning rate of masked fine-tuning; `None` reuses `lr`.
    pub finetune_lr: Option<f64>,
}

/// Epoch count and initial learning rate of one optimization stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 5e-4,
            lr_min: 0.0,
            alpha: 0.7,
            batch: 1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            finetune_epochs: 200,
            finetune_lr: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return err(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        let ft = self.finetune_lr.unwrap_or(self.lr);
        if !(ft.is_finite() && ft >= 0.0) {
            return err(format!("fine-tune learning rate {ft} must be finite and >= 0"));
        }
        if !(self.lr_min.is_finite() && self.lr_min >= 0.0 && self.lr_min <= self.lr.min(ft)) {
            return err(format!("lr_min {} must lie in [0, lr]", self.lr_min));
        }
        if self.epochs == 0 {
            return err("epochs must be >= 1".into());
        }
        if self.batch == 0 {
            return err("batch must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("Adam betas must lie in [0, 1)".into());
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return err("Adam epsilon must be > 0".into());
        }
        Ok(())
    }

    pub fn train_schedule(&self) -> Schedule {
        Schedule {
            epochs: self.epochs,
            lr: self.lr,
        }
    }

    pub fn finetune_schedule(&self) -> Schedule {
        Schedule {
            epochs: self.finetune_epochs,
            lr: self.finetune_lr.unwrap_or(self.lr),
        }
    }
}

/// Learning rate for `epoch` of a run with `epochs` epochs.
pub fn cosine_lr(epoch: usize, epochs: usize, lr: f64, lr_min: f64) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    let t = epoch as f64 / (epochs - 1) as f64;
    lr_min + 0.5 * (lr - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Mean of the SSIM map over every channel and valid window position.
pub fn ssim_map_mean<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var) -> Result<Var, TensorError> {
    let kernel: Arc<[T]> = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        .into_iter()
        .map(T::from_f64)
        .collect();
    let k = SSIM_WINDOW;
    let c1 = T::from_f64(SSIM_K1 * SSIM_K1);
    let c2 = T::from_f64(SSIM_K2 * SSIM_K2);
    let two = T::from_f64(2.0);

    let mu_p = tape.depthwise_valid(pred, kernel.clone(), k)?;
    let mu_g = tape.depthwise_valid(gt, kernel.clone(), k)?;
    let pp = tape.mul(pred, pred)?;
    let gg = tape.mul(gt, gt)?;
    let pg = tape.mul(pred, gt)?;
    let e_pp = tape.depthwise_valid(pp, kernel.clone(), k)?;
    let e_gg = tape.depthwise_valid(gg, kernel.clone(), k)?;
    let e_pg = tape.depthwise_valid(pg, kernel, k)?;

    let mu_pp = tape.mul(mu_p, mu_p)?;
    let mu_gg = tape.mul(mu_g, mu_g)?;
    let mu_pg = tape.mul(mu_p, mu_g)?;
    let var_p = tape.sub(e_pp, mu_pp)?;
    let var_g = tape.sub(e_gg, mu_gg)?;
    let cov = tape.sub(e_pg, mu_pg)?;

    let a = tape.mul_scalar(mu_pg, two)?;
    let a = tape.add_scalar(a, c1)?;
    let b = tape.mul_scalar(cov, two)?;
    let b = tape.add_scalar(b, c2)?;
    let num = tape.mul(a, b)?;
    let c = tape.add(mu_pp, mu_gg)?;
    let c = tape.add_scalar(c, c1)?;
    let d = tape.add(var_p, var_g)?;
    let d = tape.add_scalar(d, c2)?;
    let den = tape.mul(c, d)?;
    let map = tape.div(num, den)?;
    tape.mean(map)
}

/// `α·mean|pred − gt| + (1 − α)·(1 − SSIM_rgb)`; the SSIM branch is skipped when `α = 1`.
pub fn loss<T: Real>(tape: &mut Tape<T>, pred: Var, gt: Var, alpha: f64) -> Result<Var, TensorError> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(TensorError::Shape {
            op: "loss",
            detail: format!("pred {:?} vs gt {:?}", tape.shape(pred), tape.shape(gt)),
        });
    }
    let diff = tape.sub(pred, gt)?;
    let l1 = tape.abs_mean(diff)?;
    let l1 = tape.mul_scalar(l1, T::from_f64(alpha))?;
    if alpha == 1.0 {
        return Ok(l1);
    }
    let s = ssim_map_mean(tape, pred, gt)?;
    let dissim = tape.sub_from_scalar(T::one(), s)?;
    let dissim = tape.mul_scalar(dissim, T::from_f64(1.0 - alpha))?;
    tape.add(l1, dissim)
}

/// Adam moments for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Vec<f32>]) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [Vec<f32>],
    grads: &[Vec<f32>],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let same = |a: &[Vec<f32>]| a.len() == params.len() && a.iter().zip(params.iter()).all(|(x, p)| x.len() == p.len());
    if !same(grads) || !same(&state.m) || !same(&state.v) {
        return Err(TrainError::ShapeDrift);
    }
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(state.t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(state.t.min(i32::MAX as u64) as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i] as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            p[i] = (p[i] as f64 - step) as f32;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Mean RGB PSNR of the predictions made during the epoch.
    pub psnr: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,psnr,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.epoch, r.loss, r.psnr, r.lr, r.seconds);
        }
        s
    }

    /// Equality ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.psnr.to_bits() == b.psnr.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    pub fn best_psnr_until(&self, epoch: usize) -> f64 {
        self.records
            .iter()
            .take_while(|r| r.epoch <= epoch)
            .map(|r| r.psnr)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_field(model: &Model, lf: &LightField) -> Result<(), TrainError> {
    let c = model.config();
    if (lf.angular_rows(), lf.angular_cols(), lf.height(), lf.width())
        != (c.angular_rows, c.angular_cols, c.crop_h, c.crop_w)
    {
        return Err(TrainError::FieldMismatch(format!(
            "field {}x{} views of {}x{}, model {}x{} views of {}x{}",
            lf.angular_rows(),
            lf.angular_cols(),
            lf.height(),
            lf.width(),
            c.angular_rows,
            c.angular_cols,
            c.crop_h,
            c.crop_w
        )));
    }
    Ok(())
}

/// Overfits `model` to `lf` for `cfg.epochs` epochs.
pub fn train(model: Model, lf: &LightField, cfg: &TrainConfig) -> Result<(Model, TrainLog), TrainError> {
    train_with(model, lf, cfg, cfg.train_schedule(), None, &mut |_| {})
}

/// Fine-tunes for `cfg.finetune_epochs` (initial rate `cfg.finetune_lr`) with pruned weights held at exactly zero.
/// Uses fresh optimizer state; zero epochs returns the model unchanged.
pub fn finetune_masked(
    model: Model,
    lf: &LightField,
    mask: &PruneMask,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog), TrainError> {
    train_with(model, lf, cfg, cfg.finetune_schedule(), Some(mask), &mut |_| {})
}

/// Shared loop: one schedule, optional keep-mask, per-epoch callback.
pub fn train_with(
    mut model: Model,
    lf: &LightField,
    cfg: &TrainConfig,
    schedule: Schedule,
    mask: Option<&PruneMask>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model, TrainLog), TrainError> {
    cfg.validate()?;
    check_field(&model, lf)?;
    if let Some(m) = mask {
        m.apply(&mut model)?;
    }
    let mut log = TrainLog::default();
    let epochs = schedule.epochs;
    if epochs == 0 {
        return Ok((model, log));
    }

    let coords: Vec<AngularCoord> = lf.coords().collect();
    let targets: Vec<Tensor<f32>> = coords
        .iter()
        .map(|&c| Tensor {
            shape: vec![3, lf.height(), lf.width()],
            data: lf.view(c).to_planar(),
        })
        .collect();
    let encodings: Vec<Vec<f64>> = coords
        .iter()
        .map(|&c| model.encode_coord(c))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.parameters());
    let mut tape = Tape::<f32>::new();
    let mut order: Vec<usize> = (0..coords.len()).collect();

    for epoch in 0..epochs {
        let start = Instant::now();
        let lr = cosine_lr(epoch, epochs, schedule.lr, cfg.lr_min);
        order.shuffle(&mut rng);
        let diverged = |e: TensorError| match e {
            TensorError::NonFinite { .. } | TensorError::DivisorTooSmall => {
                TrainError::Diverged { epoch }
            }
            other => TrainError::Tensor(other),
        };
        let (mut loss_sum, mut psnr_sum, mut steps) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            tape.reset();
            let vars = model.bind(&mut tape, true)?;
            let mut total: Option<Var> = None;
            for &i in chunk {
                let pred = forward_graph(&mut tape, model.config(), &vars, &encodings[i])
                    .map_err(diverged)?;
                let gt = tape.constant(targets[i].clone())?;
                let l = loss(&mut tape, pred, gt, cfg.alpha).map_err(diverged)?;
                psnr_sum += rgb_psnr(tape.value(pred), &targets[i].data);
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l).map_err(diverged)?,
                });
            }
            let total = total.expect("chunks are non-empty");
            let total = tape
                .mul_scalar(total, 1.0 / chunk.len() as f32)
                .map_err(diverged)?;
            let value = tape.value(total)[0] as f64;
            if !value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            loss_sum += value;
            steps += 1;
            let mut grads = tape.backward(total).map_err(diverged)?;
            let mut g: Vec<Vec<f32>> = vars.iter().map(|&v| grads.take(v)).collect();
            if g.iter().flatten().any(|x| !x.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
            if let Some(m) = mask {
                for (gt, mk) in g.iter_mut().zip(&m.masks) {
                    if let Some(mk) = mk {
                        for (x, &keep) in gt.iter_mut().zip(mk) {
                            if !keep {
                                *x = 0.0;
                            }
                        }
                    }
                }
            }
            adam_step(model.parameters_mut(), &g, &mut state, lr, cfg)?;
            if let Some(m) = mask {
                m.apply(&mut model)?;
            }
            if model.parameters().iter().flatten().any(|x| !x.is_finite()) {
                return Err(TrainError::Diverged { epoch });
            }
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / steps as f64,
            psnr: psnr_sum / coords.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((model, log))
}

fn rgb_psnr(pred: &[f32], gt: &[f32]) -> f64 {
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64;
    metrics::psnr_from_mse(mse, 1.0)
}

#[cfg(test)]
mod tests;
