//! End-to-end encoding: presets, train → prune → fine-tune → quantize →
//! serialize, evaluation, rate–distortion sweeps and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, PruneMask};
use crate::lightfield::LightField;
use crate::metrics::{self, MetricError, QualityReport, YuvWeights};
use crate::model::{channel_ladder, Model, ModelConfig, ModelError, PositionalEncodingConfig};
use crate::train::{self, EpochRecord, TrainConfig, TrainError, TrainLog};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown preset {name:?}; available: {available}")]
    UnknownPreset { name: String, available: String },
    #[error("invalid preset: {0}")]
    Preset(String),
    #[error("{stage}: {source}")]
    Model {
        stage: &'static str,
        source: ModelError,
    },
    #[error("{stage}: {source}")]
    Train {
        stage: &'static str,
        source: TrainError,
    },
    #[error("{stage}: {source}")]
    Codec {
        stage: &'static str,
        source: CodecError,
    },
    #[error("{stage}: {source}")]
    Metric {
        stage: &'static str,
        source: MetricError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressConfig {
    pub prune_ratio: f64,
    pub quant_bits: u8,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            prune_ratio: 0.8,
            quant_bits: 8,
        }
    }
}

/// A named, geometry-independent model size plus training and compression
/// settings. The seed map size follows from the field: `h0 = ⌈H / Πs⌉`,
/// `w0 = ⌈W / Πs⌉`, and the output is center-cropped back to `H × W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub pe: PositionalEncodingConfig,
    pub mlp_hidden: usize,
    pub c0: usize,
    pub c_min: usize,
    pub factors: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub compress: CompressConfig,
}

const BUILTIN: [(&str, &str); 4] = [
    ("tiny", include_str!("../presets/tiny.json")),
    ("small", include_str!("../presets/small.json")),
    ("medium", include_str!("../presets/medium.json")),
    ("full", include_str!("../presets/full.json")),
];

impl Preset {
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    pub fn builtin(name: &str) -> Result<Self, PipelineError> {
        let json = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, j)| *j)
            .ok_or_else(|| PipelineError::UnknownPreset {
                name: name.to_string(),
                available: Self::builtin_names().join(", "),
            })?;
        Self::from_json(json)
    }

    pub fn from_json(json: &str) -> Result<Self, PipelineError> {
        let p: Self = serde_json::from_str(json).map_err(|e| PipelineError::Preset(e.to_string()))?;
        if p.factors.is_empty() || p.factors.contains(&0) {
            return Err(PipelineError::Preset(format!(
                "{}: upsampling factors must be non-empty and positive",
                p.name
            )));
        }
        Ok(p)
    }

    /// Built-in name, or a path to a JSON preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self, PipelineError> {
        if Self::builtin_names().contains(&name_or_path) {
            return Self::builtin(name_or_path);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| PipelineError::Preset(format!("{}: {e}", path.display())))?;
            return Self::from_json(&text);
        }
        Self::builtin(name_or_path)
    }

    pub fn model_config(&self, rows: usize, cols: usize, height: usize, width: usize) -> ModelConfig {
        let s: usize = self.factors.iter().product();
        let h0 = height.div_ceil(s);
        let w0 = width.div_ceil(s);
        ModelConfig {
            pe: self.pe,
            mlp_hidden: self.mlp_hidden,
            h0,
            w0,
            c0: self.c0,
            blocks: channel_ladder(self.c0, &self.factors, self.c_min),
            out_h: h0 * s,
            out_w: w0 * s,
            crop_h: height,
            crop_w: width,
            angular_rows: rows,
            angular_cols: cols,
            output_activation: Default::default(),
            residual_activation: true,
        }
    }

    pub fn model_config_for(&self, lf: &LightField) -> ModelConfig {
        self.model_config(lf.angular_rows(), lf.angular_cols(), lf.height(), lf.width())
    }
}

/// Fully resolved settings of one encoding run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeSettings {
    pub preset: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub compress: CompressConfig,
}

/// Command-line style overrides applied on top of a preset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub finetune_epochs: Option<usize>,
    pub prune_ratio: Option<f64>,
    pub quant_bits: Option<u8>,
    pub alpha: Option<f64>,
}

impl EncodeSettings {
    pub fn new(preset: &Preset, lf: &LightField, ov: &Overrides) -> Self {
        let mut train = preset.train.clone();
        let seed = ov.seed.unwrap_or(train.seed);
        train.seed = seed;
        if let Some(e) = ov.epochs {
            train.epochs = e;
        }
        if let Some(e) = ov.finetune_epochs {
            train.finetune_epochs = e;
        }
        if let Some(a) = ov.alpha {
            train.alpha = a;
        }
        let mut compress = preset.compress;
        if let Some(r) = ov.prune_ratio {
            compress.prune_ratio = r;
        }
        if let Some(b) = ov.quant_bits {
            compress.quant_bits = b;
        }
        Self {
            preset: preset.name.clone(),
            seed,
            model: preset.model_config_for(lf),
            train,
            compress,
        }
    }
}

/// Progress notifications from [`encode`].
#[derive(Debug, Clone, Copy)]
pub enum Progress<'a> {
    Stage(&'static str),
    Epoch {
        stage: &'static str,
        total: usize,
        record: &'a EpochRecord,
    },
}

#[derive(Debug, Clone)]
pub struct EncodeOutcome {
    pub bytes: Vec<u8>,
    /// Trained model before pruning and quantization.
    pub trained: Model,
    /// Masked, fine-tuned model that was quantized into `bytes`.
    pub tuned: Model,
    /// The model a decoder reconstructs from `bytes`.
    pub decoded: Model,
    pub mask: PruneMask,
    pub train_log: TrainLog,
    pub finetune_log: TrainLog,
    pub before: QualityReport,
    pub after: QualityReport,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl EncodeOutcome {
    pub fn bpp(&self) -> f64 {
        self.after.bpp.unwrap_or(f64::NAN)
    }

    pub fn psnr_drop(&self) -> f64 {
        self.before.mean_yuv_psnr - self.after.mean_yuv_psnr
    }

    pub fn ssim_drop(&self) -> f64 {
        self.before.mean_y_ssim - self.after.mean_y_ssim
    }
}

fn model_err(stage: &'static str) -> impl Fn(ModelError) -> PipelineError {
    move |source| PipelineError::Model { stage, source }
}

fn train_err(stage: &'static str) -> impl Fn(TrainError) -> PipelineError {
    move |source| PipelineError::Train { stage, source }
}

fn codec_err(stage: &'static str) -> impl Fn(CodecError) -> PipelineError {
    move |source| PipelineError::Codec { stage, source }
}

fn metric_err(stage: &'static str) -> impl Fn(MetricError) -> PipelineError {
    move |source| PipelineError::Metric { stage, source }
}

/// Reconstructs every view and scores it against `reference`.
pub fn evaluate_model(model: &Model, reference: &LightField) -> Result<QualityReport, PipelineError> {
    let rec = model.decode_all().map_err(model_err("evaluate"))?;
    metrics::evaluate(reference, &rec, YuvWeights::default()).map_err(metric_err("evaluate"))
}

/// Build → train → prune → masked fine-tune → quantize → serialize, then
/// decode the stream and measure quality before and after compression.
pub fn encode(
    lf: &LightField,
    settings: &EncodeSettings,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<EncodeOutcome, PipelineError> {
    let mut timings = BTreeMap::new();
    let mut timed = |name: &str, start: Instant| {
        timings.insert(name.to_string(), start.elapsed().as_secs_f64());
    };

    settings.train.validate().map_err(train_err("config"))?;
    settings.model.validate().map_err(model_err("config"))?;
    let c = settings.compress;
    if !(0.0..1.0).contains(&c.prune_ratio) {
        return Err(codec_err("config")(CodecError::PruneRatio(c.prune_ratio)));
    }
    if !(1..=codec::quant::MAX_BITS).contains(&c.quant_bits) {
        return Err(codec_err("config")(CodecError::QuantBits(c.quant_bits)));
    }

    progress(Progress::Stage("build"));
    let t = Instant::now();
    let model = Model::new(settings.model.clone(), settings.seed).map_err(model_err("build"))?;
    timed("build", t);

    progress(Progress::Stage("train"));
    let t = Instant::now();
    let schedule = settings.train.train_schedule();
    let epochs = schedule.epochs;
    let (trained, train_log) = train::train_with(model, lf, &settings.train, schedule, None, &mut |r| {
        progress(Progress::Epoch {
            stage: "train",
            total: epochs,
            record: r,
        })
    })
    .map_err(train_err("train"))?;
    timed("train", t);

    progress(Progress::Stage("prune"));
    let t = Instant::now();
    let mask = codec::prune_global(&trained, settings.compress.prune_ratio).map_err(codec_err("prune"))?;
    timed("prune", t);

    let (tuned, finetune_log) = if mask.pruned_count() == 0 {
        (trained.clone(), TrainLog::default())
    } else {
        progress(Progress::Stage("finetune"));
        let t = Instant::now();
        let schedule = settings.train.finetune_schedule();
        let total = schedule.epochs;
        let out = train::train_with(trained.clone(), lf, &settings.train, schedule, Some(&mask), &mut |r| {
            progress(Progress::Epoch {
                stage: "finetune",
                total,
                record: r,
            })
        })
        .map_err(train_err("finetune"))?;
        timed("finetune", t);
        out
    };

    progress(Progress::Stage("serialize"));
    let t = Instant::now();
    let bytes = codec::serialize(&tuned, &mask, settings.compress.quant_bits).map_err(codec_err("serialize"))?;
    timed("serialize", t);

    progress(Progress::Stage("evaluate"));
    let t = Instant::now();
    let decoded = codec::deserialize(&bytes).map_err(codec_err("verify"))?.model;
    let before = evaluate_model(&trained, lf)?;
    let after = evaluate_model(&decoded, lf)?.with_bpp(bytes.len(), lf.pixel_count());
    timed("evaluate", t);

    Ok(EncodeOutcome {
        bytes,
        trained,
        tuned,
        decoded,
        mask,
        train_log,
        finetune_log,
        before,
        after,
        timings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdRow {
    pub preset: String,
    pub seed: u64,
    pub bytes: usize,
    pub bpp: f64,
    pub yuv_psnr: f64,
    pub y_ssim: f64,
    pub psnr_drop_from_compression: f64,
    pub ssim_drop_from_compression: f64,
}

impl RdRow {
    pub fn from_outcome(settings: &EncodeSettings, out: &EncodeOutcome) -> Self {
        Self {
            preset: settings.preset.clone(),
            seed: settings.seed,
            bytes: out.bytes.len(),
            bpp: out.bpp(),
            yuv_psnr: out.after.mean_yuv_psnr,
            y_ssim: out.after.mean_y_ssim,
            psnr_drop_from_compression: out.psnr_drop(),
            ssim_drop_from_compression: out.ssim_drop(),
        }
    }
}

pub const RD_CSV_HEADER: &str =
    "preset,bpp,yuv_psnr,y_ssim,psnr_drop_from_compression,ssim_drop_from_compression";

/// One CSV row per preset in the given order; failed presets keep their row
/// with empty numeric fields.
pub fn rd_csv(rows: &[(String, Result<RdRow, String>)]) -> String {
    let mut s = String::from(RD_CSV_HEADER);
    s.push('\n');
    for (name, row) in rows {
        match row {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.preset,
                    r.bpp,
                    r.yuv_psnr,
                    r.y_ssim,
                    r.psnr_drop_from_compression,
                    r.ssim_drop_from_compression
                );
            }
            Err(_) => {
                let _ = writeln!(s, "{name},,,,,");
            }
        }
    }
    s
}

/// Encodes `lf` once per preset; a failing preset does not stop the sweep.
pub fn rd_sweep(
    lf: &LightField,
    presets: &[Preset],
    ov: &Overrides,
    progress: &mut dyn FnMut(&str, Progress<'_>),
) -> Vec<(String, Result<RdRow, String>)> {
    presets
        .iter()
        .map(|p| {
            let settings = EncodeSettings::new(p, lf, ov);
            let row = encode(lf, &settings, &mut |ev| progress(&p.name, ev))
                .map(|out| RdRow::from_outcome(&settings, &out))
                .map_err(|e| e.to_string());
            (p.name.clone(), row)
        })
        .collect()
}

/// Written next to every command output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub format_version: u8,
    pub seed: Option<u64>,
    pub input: Option<String>,
    pub outputs: Vec<String>,
    pub settings: Option<EncodeSettings>,
    pub results: BTreeMap<String, f64>,
    /// Wall-clock seconds per stage; the only field that varies between reruns.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            format_version: codec::bitstream::VERSION,
            seed: None,
            input: None,
            outputs: Vec::new(),
            settings: None,
            results: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Equality ignoring timings.
    pub fn same_run(&self, other: &RunManifest) -> bool {
        let strip = |m: &RunManifest| RunManifest {
            timings: BTreeMap::new(),
            ..m.clone()
        };
        strip(self) == strip(other)
    }
}
