use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lfinr::codec::{self, CodecError};
use lfinr::io::{self, IoError, ViewFormat};
use lfinr::metrics::{self, QualityReport, YuvWeights};
use lfinr::model::ModelError;
use lfinr::pipeline::{self, EncodeSettings, Overrides, PipelineError, Preset, Progress, RunManifest};
use lfinr::synth::{synth_lightfield_with, SynthParams};
use lfinr::train::TrainError;
use lfinr::{AngularCoord, LightField};

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_CORRUPT: u8 = 5;

#[derive(Parser)]
#[command(name = "lfinr", version, about = "Light-field compression with an implicit neural representation")]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, prune, quantize and entropy code a light-field directory.
    Encode(EncodeArgs),
    /// Reconstruct every view of a bitstream into a directory.
    Decode(DecodeArgs),
    /// Reconstruct a single view.
    DecodeView(DecodeViewArgs),
    /// Compare two light-field directories.
    Metrics(MetricsArgs),
    /// Encode with several presets and write a rate-distortion CSV.
    RdSweep(RdSweepArgs),
    /// Write the views as a serpentine-ordered pseudo video sequence.
    ExportPvs(ExportPvsArgs),
    /// Generate a synthetic light field.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct TuneArgs {
    /// Run seed (model init and view order).
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Fine-tuning epochs after pruning.
    #[arg(long)]
    finetune_epochs: Option<usize>,
    /// Fraction of prunable weights removed, in [0, 1).
    #[arg(long)]
    prune_ratio: Option<f64>,
    /// Quantization bits, 1..=16.
    #[arg(long)]
    quant_bits: Option<u8>,
    /// L1 weight of the loss, in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
}

impl TuneArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            epochs: self.epochs,
            finetune_epochs: self.finetune_epochs,
            prune_ratio: self.prune_ratio,
            quant_bits: self.quant_bits,
            alpha: self.alpha,
        }
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// Light-field directory (view_UU_VV.ppm or .lfrw files).
    #[arg(long, short)]
    input: PathBuf,
    /// Output bitstream.
    #[arg(long, short)]
    out: PathBuf,
    /// Built-in preset name (tiny, small, medium, full).
    #[arg(long, default_value = "tiny", conflicts_with = "config")]
    preset: String,
    /// Preset JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the per-epoch training log as CSV.
    #[arg(long)]
    train_log: Option<PathBuf>,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Ppm,
    Raw,
}

impl From<FormatArg> for ViewFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ppm => ViewFormat::Ppm,
            FormatArg::Raw => ViewFormat::Raw,
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Output directory (replaced atomically).
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "ppm")]
    format: FormatArg,
    /// Reference light-field directory for quality metrics.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeViewArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Angular row index.
    #[arg(long, allow_negative_numbers = true)]
    u: String,
    /// Angular column index.
    #[arg(long, allow_negative_numbers = true)]
    v: String,
    /// Output image file.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "ppm")]
    format: FormatArg,
    /// Accept fractional coordinates between grid positions (untrained, experimental).
    #[arg(long)]
    experimental_fractional: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    reference: PathBuf,
    /// Reconstructed light-field directory.
    #[arg(long)]
    test: PathBuf,
    /// Bitstream whose size is reported as bpp.
    #[arg(long)]
    bitstream: Option<PathBuf>,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct RdSweepArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Output CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Comma-separated preset names or JSON files.
    #[arg(long, value_delimiter = ',', default_value = "tiny,small,medium")]
    presets: Vec<String>,
    #[command(flatten)]
    tune: TuneArgs,
}

#[derive(Args)]
struct ExportPvsArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Output container; the frame order is written to `<out>.json`.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    rows: usize,
    #[arg(long, default_value_t = 3)]
    cols: usize,
    #[arg(long, default_value_t = 24)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Pixel shift per view step at maximum depth.
    #[arg(long, default_value_t = 1.0)]
    disparity: f32,
    #[arg(long, value_enum, default_value = "ppm")]
    format: FormatArg,
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        Self::new(EXIT_INPUT, e.to_string())
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Config(_) | ModelError::OutOfGrid { .. } | ModelError::FractionalOutOfRange(..) => {
            EXIT_USAGE
        }
        ModelError::Tensor(_) => EXIT_NUMERIC,
        ModelError::LightField(_) => EXIT_INPUT,
    }
}

fn codec_code(e: &CodecError) -> u8 {
    match e {
        CodecError::PruneRatio(_) | CodecError::QuantBits(_) | CodecError::HeaderOverflow { .. } | CodecError::Unsupported(_) => {
            EXIT_USAGE
        }
        CodecError::NonFinite(_) => EXIT_NUMERIC,
        CodecError::Model(m) => model_code(m),
        _ => EXIT_CORRUPT,
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::UnknownPreset { .. } | PipelineError::Preset(_) => EXIT_USAGE,
            PipelineError::Model { source, .. } => model_code(source),
            PipelineError::Train { source, .. } => match source {
                TrainError::Config(_) => EXIT_USAGE,
                TrainError::FieldMismatch(_) => EXIT_INPUT,
                TrainError::Model(m) => model_code(m),
                _ => EXIT_NUMERIC,
            },
            PipelineError::Codec { source, .. } => codec_code(source),
            PipelineError::Metric { .. } => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a, quiet),
        Command::Decode(a) => cmd_decode(a),
        Command::DecodeView(a) => cmd_decode_view(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::RdSweep(a) => cmd_rd_sweep(a, quiet),
        Command::ExportPvs(a) => cmd_export_pvs(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    io::atomic_write(&manifest_path(out), manifest.to_json().as_bytes())?;
    Ok(())
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn read_stream(path: &Path) -> Result<codec::DecodedStream, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::new(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    codec::deserialize(&bytes).map_err(|e| CliError::new(codec_code(&e), format!("{}: {e}", path.display())))
}

fn progress_printer(quiet: bool, label: String) -> impl FnMut(Progress<'_>) {
    move |ev| {
        if quiet {
            return;
        }
        match ev {
            Progress::Stage(s) => eprintln!("[{label}] {s}"),
            Progress::Epoch { stage, total, record } => {
                let n = record.epoch + 1;
                if n == total || n % 50 == 0 {
                    eprintln!(
                        "[{label}] {stage} epoch {n}/{total}  loss {:.5}  psnr {:.2} dB  lr {:.2e}",
                        record.loss, record.psnr, record.lr
                    );
                }
            }
        }
    }
}

fn print_report(report: &QualityReport) {
    println!("view     Y-PSNR   U-PSNR   V-PSNR  YUV-PSNR  Y-SSIM");
    for q in &report.views {
        println!(
            "({:>2},{:>2})  {:7.3}  {:7.3}  {:7.3}  {:8.3}  {:.5}",
            q.u, q.v, q.psnr_y, q.psnr_u, q.psnr_v, q.yuv_psnr, q.y_ssim
        );
    }
    println!(
        "mean     {:7.3}  {:7.3}  {:7.3}  {:8.3}  {:.5}",
        report.mean_psnr_y, report.mean_psnr_u, report.mean_psnr_v, report.mean_yuv_psnr, report.mean_y_ssim
    );
    if let Some(b) = report.bpp {
        println!("bpp {b:.6}");
    }
}

fn cmd_encode(a: EncodeArgs, quiet: bool) -> Result<(), CliError> {
    let preset = match &a.config {
        Some(p) => Preset::resolve(&p.to_string_lossy())?,
        None => Preset::resolve(&a.preset)?,
    };
    let lf = io::load_lightfield(&a.input)?;
    let settings = EncodeSettings::new(&preset, &lf, &a.tune.overrides());
    let out = pipeline::encode(&lf, &settings, &mut progress_printer(quiet, preset.name.clone()))?;

    io::atomic_write(&a.out, &out.bytes)?;
    let mut outputs = vec![display(&a.out)];
    if let Some(p) = &a.train_log {
        let mut csv = out.train_log.to_csv();
        if !out.finetune_log.records.is_empty() {
            csv.push_str(&out.finetune_log.to_csv().replacen("epoch", "finetune_epoch", 1));
        }
        io::atomic_write(p, csv.as_bytes())?;
        outputs.push(display(p));
    }

    let mut m = RunManifest::new("encode");
    m.seed = Some(settings.seed);
    m.input = Some(display(&a.input));
    m.outputs = outputs;
    m.settings = Some(settings);
    m.results.insert("bytes".into(), out.bytes.len() as f64);
    m.results.insert("bpp".into(), out.bpp());
    m.results.insert("yuv_psnr".into(), out.after.mean_yuv_psnr);
    m.results.insert("y_ssim".into(), out.after.mean_y_ssim);
    m.results.insert("yuv_psnr_uncompressed".into(), out.before.mean_yuv_psnr);
    m.results.insert("y_ssim_uncompressed".into(), out.before.mean_y_ssim);
    m.results.insert("pruned_weights".into(), out.mask.pruned_count() as f64);
    m.timings = out.timings.clone();
    write_manifest(&a.out, &m)?;

    println!("bytes {}", out.bytes.len());
    println!("bpp {:.6}", out.bpp());
    println!("yuv_psnr {:.4} dB", out.after.mean_yuv_psnr);
    println!("y_ssim {:.6}", out.after.mean_y_ssim);
    println!(
        "compression drop {:.4} dB / {:.6} (uncompressed {:.4} dB / {:.6})",
        out.psnr_drop(),
        out.ssim_drop(),
        out.before.mean_yuv_psnr,
        out.before.mean_y_ssim
    );
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<(), CliError> {
    let reference = a.reference.as_deref().map(io::load_lightfield).transpose()?;
    let t = Instant::now();
    let bytes_len = std::fs::metadata(&a.input).map(|m| m.len() as usize).unwrap_or(0);
    let stream = read_stream(&a.input)?;
    let lf = stream.model.decode_all().map_err(|e| CliError::new(model_code(&e), e.to_string()))?;
    let decode_s = t.elapsed().as_secs_f64();
    io::save_lightfield(&lf, &a.out, a.format.into())?;

    let mut m = RunManifest::new("decode");
    m.input = Some(display(&a.input));
    m.outputs = vec![display(&a.out)];
    m.timings.insert("decode".into(), decode_s);
    if let Some(r) = reference {
        let report = metrics::evaluate(&r, &lf, YuvWeights::default())
            .map_err(|e| CliError::new(EXIT_INPUT, format!("reference: {e}")))?
            .with_bpp(bytes_len, lf.pixel_count());
        print_report(&report);
        m.results.insert("yuv_psnr".into(), report.mean_yuv_psnr);
        m.results.insert("y_ssim".into(), report.mean_y_ssim);
        m.results.insert("bpp".into(), report.bpp.unwrap_or(f64::NAN));
    } else {
        println!(
            "decoded {}x{} views of {}x{} into {}",
            lf.angular_rows(),
            lf.angular_cols(),
            lf.height(),
            lf.width(),
            a.out.display()
        );
    }
    write_manifest(&a.out, &m)
}

fn parse_coord(s: &str, name: &str, fractional: bool) -> Result<f64, CliError> {
    if fractional {
        return s
            .parse::<f64>()
            .map_err(|_| CliError::new(EXIT_USAGE, format!("--{name} {s:?} is not a number")));
    }
    s.parse::<usize>().map(|x| x as f64).map_err(|_| {
        CliError::new(
            EXIT_USAGE,
            format!("--{name} {s:?} must be a non-negative integer (fractional positions need --experimental-fractional)"),
        )
    })
}

fn cmd_decode_view(a: DecodeViewArgs) -> Result<(), CliError> {
    let u = parse_coord(&a.u, "u", a.experimental_fractional)?;
    let v = parse_coord(&a.v, "v", a.experimental_fractional)?;
    let t = Instant::now();
    let stream = read_stream(&a.input)?;
    let to_cli = |e: ModelError| CliError::new(model_code(&e), e.to_string());
    let on_grid = u.fract() == 0.0 && v.fract() == 0.0 && u >= 0.0 && v >= 0.0;
    let img = if on_grid {
        stream
            .model
            .decode_view(AngularCoord::new(u as usize, v as usize))
            .map_err(to_cli)?
    } else {
        stream.model.decode_fractional(u, v).map_err(to_cli)?
    };
    let decode_s = t.elapsed().as_secs_f64();
    io::atomic_write(&a.out, &io::encode_view(&img, a.format.into()))?;

    let mut m = RunManifest::new("decode-view");
    m.input = Some(display(&a.input));
    m.outputs = vec![display(&a.out)];
    m.results.insert("u".into(), u);
    m.results.insert("v".into(), v);
    m.timings.insert("decode".into(), decode_s);
    write_manifest(&a.out, &m)?;
    if on_grid {
        println!("view ({u},{v}) written to {}", a.out.display());
    } else {
        println!("experimental fractional view ({u},{v}) written to {}", a.out.display());
    }
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<(), CliError> {
    let r = io::load_lightfield(&a.reference)?;
    let t = io::load_lightfield(&a.test)?;
    let mut report = metrics::evaluate(&r, &t, YuvWeights::default()).map_err(|e| CliError::new(EXIT_INPUT, e.to_string()))?;
    if let Some(b) = &a.bitstream {
        let len = std::fs::metadata(b)
            .map_err(|e| CliError::new(EXIT_INPUT, format!("{}: {e}", b.display())))?
            .len();
        report = report.with_bpp(len as usize, r.pixel_count());
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_report(&report);
    }
    Ok(())
}

fn cmd_rd_sweep(a: RdSweepArgs, quiet: bool) -> Result<(), CliError> {
    if a.presets.is_empty() {
        return Err(CliError::new(EXIT_USAGE, "at least one preset is required"));
    }
    let presets = a
        .presets
        .iter()
        .map(|p| Preset::resolve(p))
        .collect::<Result<Vec<_>, _>>()?;
    let lf = io::load_lightfield(&a.input)?;
    let ov = a.tune.overrides();
    let t = Instant::now();
    let rows = pipeline::rd_sweep(&lf, &presets, &ov, &mut |name, ev| {
        progress_printer(quiet, name.to_string())(ev)
    });
    for (name, row) in &rows {
        if let Err(e) = row {
            eprintln!("preset {name} failed: {e}");
        }
    }
    let csv = pipeline::rd_csv(&rows);
    io::atomic_write(&a.out, csv.as_bytes())?;
    print!("{csv}");

    let mut m = RunManifest::new("rd-sweep");
    m.seed = ov.seed;
    m.input = Some(display(&a.input));
    m.outputs = vec![display(&a.out)];
    for (name, row) in &rows {
        if let Ok(r) = row {
            m.results.insert(format!("{name}.bpp"), r.bpp);
            m.results.insert(format!("{name}.yuv_psnr"), r.yuv_psnr);
        }
    }
    m.timings.insert("sweep".into(), t.elapsed().as_secs_f64());
    write_manifest(&a.out, &m)?;
    if rows.iter().all(|(_, r)| r.is_err()) {
        return Err(CliError::new(EXIT_NUMERIC, "every preset failed"));
    }
    Ok(())
}

fn cmd_export_pvs(a: ExportPvsArgs) -> Result<(), CliError> {
    let lf = io::load_lightfield(&a.input)?;
    let side = io::export_pvs(&lf, &a.out)?;
    let mut m = RunManifest::new("export-pvs");
    m.input = Some(display(&a.input));
    m.outputs = vec![display(&a.out), display(&io::sidecar_path(&a.out))];
    write_manifest(&a.out, &m)?;
    println!("{} frames in {} order written to {}", side.order.len(), side.scan, a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    if a.rows == 0 || a.cols == 0 || a.height == 0 || a.width == 0 {
        return Err(CliError::new(EXIT_USAGE, "grid and view sizes must be positive"));
    }
    if !a.disparity.is_finite() {
        return Err(CliError::new(EXIT_USAGE, "disparity must be finite"));
    }
    let params = SynthParams {
        disparity: a.disparity,
        ..SynthParams::default()
    };
    let lf: LightField = synth_lightfield_with(a.seed, a.rows, a.cols, a.height, a.width, params);
    io::save_lightfield(&lf, &a.out, a.format.into())?;
    let mut m = RunManifest::new("synth");
    m.seed = Some(a.seed);
    m.outputs = vec![display(&a.out)];
    m.results.insert("rows".into(), a.rows as f64);
    m.results.insert("cols".into(), a.cols as f64);
    m.results.insert("height".into(), a.height as f64);
    m.results.insert("width".into(), a.width as f64);
    write_manifest(&a.out, &m)?;
    println!(
        "{}x{} views of {}x{} written to {}",
        a.rows,
        a.cols,
        a.height,
        a.width,
        a.out.display()
    );
    Ok(())
}
