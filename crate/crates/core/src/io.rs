//! Image and light-field file formats.
//!
//! * Binary PPM (`P6`), 8- or 16-bit per channel.
//! * Raw float frame: `"LFRW"`, `u16` height, `u16` width, then `H·W·3` little-endian
//!   `f32` samples, row-major, channel-interleaved.
//! * Light-field directory: one file per view named `view_{u:02}_{v:02}.ppm` (or `.lfrw`).
//! * Pseudo video sequence: raw frames concatenated in serpentine order plus a JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lightfield::{serpentine_order, AngularCoord, LightField, LightFieldError, Sai};

pub const RAW_MAGIC: &[u8; 4] = b"LFRW";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed image: {0}")]
    Format(String),
    #[error("view {coord}: {message}")]
    View { coord: AngularCoord, message: String },
    #[error("view {coord} missing from {dir}")]
    MissingView { coord: AngularCoord, dir: PathBuf },
    #[error("no views found in {0}")]
    NoViews(PathBuf),
    #[error(transparent)]
    LightField(#[from] LightFieldError),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// File format of a single view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewFormat {
    Ppm,
    Raw,
}

impl ViewFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ViewFormat::Ppm => "ppm",
            ViewFormat::Raw => "lfrw",
        }
    }
}

pub fn view_file_name(c: AngularCoord, format: ViewFormat) -> String {
    format!("view_{:02}_{:02}.{}", c.u, c.v, format.extension())
}

fn parse_view_file_name(name: &str) -> Option<(AngularCoord, ViewFormat)> {
    let (stem, ext) = name.rsplit_once('.')?;
    let format = match ext {
        "ppm" => ViewFormat::Ppm,
        "lfrw" => ViewFormat::Raw,
        _ => return None,
    };
    let rest = stem.strip_prefix("view_")?;
    let (u, v) = rest.split_once('_')?;
    if u.len() < 2 || v.len() < 2 {
        return None;
    }
    Some((AngularCoord::new(u.parse().ok()?, v.parse().ok()?), format))
}

// ---------------------------------------------------------------- PPM

fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], IoError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::Format("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn ppm_number(bytes: &[u8], pos: &mut usize) -> Result<usize, IoError> {
    let tok = ppm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::Format("bad PPM header field".into()))
}

/// Decodes a binary PPM; samples are divided by the header's maxval.
pub fn decode_ppm(bytes: &[u8]) -> Result<Sai, IoError> {
    let mut pos = 0;
    if ppm_token(bytes, &mut pos)? != b"P6" {
        return Err(IoError::Format("not a binary PPM (P6)".into()));
    }
    let width = ppm_number(bytes, &mut pos)?;
    let height = ppm_number(bytes, &mut pos)?;
    let maxval = ppm_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(IoError::Format(format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * 3;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| IoError::Format("truncated PPM raster".into()))?;
    let scale = maxval as f32;
    let data: Vec<f32> = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]).min(maxval as u16) as f32 / scale)
            .collect()
    } else {
        raster
            .iter()
            .map(|&b| (b as usize).min(maxval) as f32 / scale)
            .collect()
    };
    Ok(Sai::new(height, width, data)?)
}

/// Encodes with the given maxval (255 for 8-bit, 65535 for 16-bit).
pub fn encode_ppm(img: &Sai, maxval: u16) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    let scale = maxval as f32;
    for &s in img.data() {
        let q = (s * scale).round().clamp(0.0, scale) as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

// ---------------------------------------------------------------- raw float frames

pub fn encode_raw(img: &Sai) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + img.data().len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(img.height() as u16).to_le_bytes());
    out.extend_from_slice(&(img.width() as u16).to_le_bytes());
    for s in img.data() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Decodes one raw frame from the front of `bytes`, returning it and the bytes consumed.
pub fn decode_raw_frame(bytes: &[u8]) -> Result<(Sai, usize), IoError> {
    if bytes.len() < 8 || &bytes[..4] != RAW_MAGIC {
        return Err(IoError::Format("missing LFRW magic".into()));
    }
    let h = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let w = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let len = 8 + h * w * 3 * 4;
    let body = bytes
        .get(8..len)
        .ok_or_else(|| IoError::Format("truncated LFRW frame".into()))?;
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((Sai::new(h, w, data)?, len))
}

pub fn decode_raw(bytes: &[u8]) -> Result<Sai, IoError> {
    let (sai, used) = decode_raw_frame(bytes)?;
    if used != bytes.len() {
        return Err(IoError::Format("trailing bytes after LFRW frame".into()));
    }
    Ok(sai)
}

pub fn read_view(path: &Path) -> Result<Sai, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("lfrw") => decode_raw(&bytes),
        _ => decode_ppm(&bytes),
    }
}

pub fn encode_view(img: &Sai, format: ViewFormat) -> Vec<u8> {
    match format {
        ViewFormat::Ppm => encode_ppm(img, 255),
        ViewFormat::Raw => encode_raw(img),
    }
}

// ---------------------------------------------------------------- atomic output

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Populates a fresh temp directory via `fill`, then renames it to `dir`.
/// An existing `dir` is replaced only after `fill` succeeds.
pub fn atomic_dir<F>(dir: &Path, fill: F) -> Result<(), IoError>
where
    F: FnOnce(&Path) -> Result<(), IoError>,
{
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&tmp, dir).map_err(io_err(dir))
}

// ---------------------------------------------------------------- light-field directories

/// Loads every `view_UU_VV.{ppm,lfrw}` file in `dir`; the grid size is inferred
/// from the largest indices present.
pub fn load_lightfield(dir: &Path) -> Result<LightField, IoError> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut found = std::collections::BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name();
        if let Some((c, _)) = parse_view_file_name(&name.to_string_lossy()) {
            found.insert(c, entry.path());
        }
    }
    if found.is_empty() {
        return Err(IoError::NoViews(dir.to_path_buf()));
    }
    let rows = found.keys().map(|c| c.u).max().unwrap_or(0) + 1;
    let cols = found.keys().map(|c| c.v).max().unwrap_or(0) + 1;
    let mut views = Vec::with_capacity(rows * cols);
    let mut dims = None;
    for u in 0..rows {
        for v in 0..cols {
            let coord = AngularCoord::new(u, v);
            let path = found.get(&coord).ok_or_else(|| IoError::MissingView {
                coord,
                dir: dir.to_path_buf(),
            })?;
            let sai = read_view(path).map_err(|e| IoError::View {
                coord,
                message: e.to_string(),
            })?;
            let d = (sai.height(), sai.width());
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(IoError::View {
                        coord,
                        message: format!(
                            "size {}x{} differs from {}x{}",
                            d.0, d.1, expected.0, expected.1
                        ),
                    })
                }
                _ => {}
            }
            views.push(sai);
        }
    }
    Ok(LightField::new(rows, cols, views)?)
}

fn write_views(lf: &LightField, dir: &Path, format: ViewFormat) -> Result<(), IoError> {
    for c in lf.coords() {
        let path = dir.join(view_file_name(c, format));
        fs::write(&path, encode_view(lf.view(c), format)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Writes all views into `dir` atomically (temp directory + rename).
pub fn save_lightfield(lf: &LightField, dir: &Path, format: ViewFormat) -> Result<(), IoError> {
    atomic_dir(dir, |tmp| write_views(lf, tmp, format))
}

// ---------------------------------------------------------------- pseudo video sequence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvsSidecar {
    pub angular_rows: usize,
    pub angular_cols: usize,
    pub height: usize,
    pub width: usize,
    pub scan: String,
    /// `[u, v]` of each frame, in file order.
    pub order: Vec<[usize; 2]>,
}

pub fn sidecar_path(pvs: &Path) -> PathBuf {
    let mut s = pvs.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn export_pvs(lf: &LightField, path: &Path) -> Result<PvsSidecar, IoError> {
    let order = serpentine_order(lf.angular_rows(), lf.angular_cols());
    let mut bytes = Vec::new();
    for c in &order {
        bytes.extend(encode_raw(lf.view(*c)));
    }
    let sidecar = PvsSidecar {
        angular_rows: lf.angular_rows(),
        angular_cols: lf.angular_cols(),
        height: lf.height(),
        width: lf.width(),
        scan: "serpentine".into(),
        order: order.iter().map(|c| [c.u, c.v]).collect(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| IoError::Sidecar(e.to_string()))?;
    atomic_write(path, &bytes)?;
    atomic_write(&sidecar_path(path), &json)?;
    Ok(sidecar)
}

pub fn import_pvs(path: &Path) -> Result<LightField, IoError> {
    let side = sidecar_path(path);
    let json = fs::read(&side).map_err(io_err(&side))?;
    let sidecar: PvsSidecar =
        serde_json::from_slice(&json).map_err(|e| IoError::Sidecar(e.to_string()))?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (rows, cols) = (sidecar.angular_rows, sidecar.angular_cols);
    if sidecar.order.len() != rows * cols {
        return Err(IoError::Sidecar("order length does not match grid".into()));
    }
    let mut slots: Vec<Option<Sai>> = vec![None; rows * cols];
    let mut pos = 0;
    for &[u, v] in &sidecar.order {
        if u >= rows || v >= cols || slots[u * cols + v].is_some() {
            return Err(IoError::Sidecar(format!("bad coordinate ({u},{v})")));
        }
        let (sai, used) = decode_raw_frame(&bytes[pos..])?;
        pos += used;
        slots[u * cols + v] = Some(sai);
    }
    if pos != bytes.len() {
        return Err(IoError::Format("trailing bytes after last frame".into()));
    }
    let views = slots.into_iter().map(|s| s.expect("all slots filled")).collect();
    Ok(LightField::new(rows, cols, views)?)
}
