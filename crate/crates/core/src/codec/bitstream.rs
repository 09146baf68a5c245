//! Bitstream container.
//!
//! All multi-byte integers are little-endian.
//!
//! ```text
//! magic "LFIN" | version u8 (= 1)
//! header: U u16, V u16, H u16, W u16, out_H u16, out_W u16,
//!         pe.b f32, pe.L u8, mlp_hidden u16, h0 u8, w0 u8, c0 u16,
//!         n_blocks u8, per block { factor u8, channels u16 },
//!         quant_bits u8, n_tensors u16
//! per tensor (in parameter order):
//!         id u16, ndim u8, dims u32 × ndim, pruned u8,
//!         δ_min f32, δ_max f32,
//!         [mask_len u32, mask bytes]   (only when pruned = 1)
//!         sym_len u32, symbol bytes
//! checksum u32 (CRC-32 of every preceding byte)
//! ```
//!
//! `H × W` is the decoded (cropped) view size and `out_H × out_W` the
//! network's uncropped output. Mask bits (1 = kept) are coded with an adaptive
//! binary model; the symbols of kept positions with a `2^b`-ary adaptive model.
//! `pruned` is 1 only when the tensor's mask removes at least one weight.
//!
//! Decoding checks magic and version, parses the structure, verifies the
//! checksum, and only then runs the entropy decoder.

use super::entropy::{arith_decode, arith_encode, decode_bits, encode_bits};
use super::quant::{dequantize, MAX_BITS};
use super::{quantize_model, CodecError, PruneMask, QuantRecord};
use crate::model::{BlockConfig, Model, ModelConfig, OutputActivation, PositionalEncodingConfig};

pub const MAGIC: &[u8; 4] = b"LFIN";
pub const VERSION: u8 = 1;
/// Upper bound on decoded parameters, guarding allocation on hostile input.
pub const MAX_PARAMETERS: usize = 1 << 28;

/// Result of [`deserialize`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStream {
    pub model: Model,
    pub mask: PruneMask,
    pub quant_bits: u8,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, field: &'static str, v: usize) -> Result<(), CodecError> {
        let v = u8::try_from(v).map_err(|_| CodecError::HeaderOverflow { field, value: v })?;
        self.0.push(v);
        Ok(())
    }

    fn u16(&mut self, field: &'static str, v: usize) -> Result<(), CodecError> {
        let v = u16::try_from(v).map_err(|_| CodecError::HeaderOverflow { field, value: v })?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn u32(&mut self, field: &'static str, v: usize) -> Result<(), CodecError> {
        let v = u32::try_from(v).map_err(|_| CodecError::HeaderOverflow { field, value: v })?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn payload(&mut self, field: &'static str, bytes: &[u8]) -> Result<(), CodecError> {
        self.u32(field, bytes.len())?;
        self.0.extend_from_slice(bytes);
        Ok(())
    }
}

/// Prunes (by `mask`), quantizes to `bits` and codes `model`.
pub fn serialize(model: &Model, mask: &PruneMask, bits: u8) -> Result<Vec<u8>, CodecError> {
    let cfg = model.config();
    if cfg.output_activation != OutputActivation::Sigmoid {
        return Err(CodecError::Unsupported("clamped output activation".into()));
    }
    if !cfg.residual_activation {
        return Err(CodecError::Unsupported("residual blocks without activation".into()));
    }
    let records = quantize_model(model, mask, bits)?;

    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.push(VERSION);
    w.u16("U", cfg.angular_rows)?;
    w.u16("V", cfg.angular_cols)?;
    w.u16("H", cfg.crop_h)?;
    w.u16("W", cfg.crop_w)?;
    w.u16("out_H", cfg.out_h)?;
    w.u16("out_W", cfg.out_w)?;
    w.f32(cfg.pe.base);
    w.u8("pe.L", cfg.pe.levels)?;
    w.u16("mlp_hidden", cfg.mlp_hidden)?;
    w.u8("h0", cfg.h0)?;
    w.u8("w0", cfg.w0)?;
    w.u16("c0", cfg.c0)?;
    w.u8("n_blocks", cfg.blocks.len())?;
    for b in &cfg.blocks {
        w.u8("factor", b.factor)?;
        w.u16("channels", b.channels)?;
    }
    w.u8("quant_bits", bits as usize)?;
    w.u16("n_tensors", records.len())?;
    for rec in &records {
        write_tensor(&mut w, rec)?;
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    Ok(w.0)
}

fn write_tensor(w: &mut Writer, rec: &QuantRecord) -> Result<(), CodecError> {
    w.u16("tensor id", rec.tensor_id)?;
    w.u8("ndim", rec.shape.len())?;
    for &d in &rec.shape {
        w.u32("dim", d)?;
    }
    let pruned_mask = rec.kept.as_ref().filter(|k| k.iter().any(|&x| !x));
    w.0.push(pruned_mask.is_some() as u8);
    w.f32(rec.min);
    w.f32(rec.max);
    if let Some(k) = pruned_mask {
        w.payload("mask_len", &encode_bits(k))?;
    }
    w.payload("sym_len", &arith_encode(&rec.symbols, 1usize << rec.bits)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CodecError> {
        if self.bytes.len() - self.pos < n {
            return Err(CodecError::Truncated(what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<usize, CodecError> {
        Ok(self.take(1, what)?[0] as usize)
    }

    fn u16(&mut self, what: &'static str) -> Result<usize, CodecError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn u32_raw(&mut self, what: &'static str) -> Result<u32, CodecError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CodecError> {
        Ok(self.u32_raw(what)? as usize)
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, CodecError> {
        Ok(f32::from_bits(self.u32_raw(what)?))
    }

    fn payload(&mut self, what: &'static str) -> Result<&'a [u8], CodecError> {
        let n = self.u32(what)?;
        self.take(n, what)
    }
}

struct TensorEntry<'a> {
    min: f32,
    max: f32,
    mask: Option<&'a [u8]>,
    symbols: &'a [u8],
}

fn mismatch(msg: impl Into<String>) -> CodecError {
    CodecError::HeaderMismatch(msg.into())
}

pub fn deserialize(bytes: &[u8]) -> Result<DecodedStream, CodecError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u8("version")? as u8;
    if version != VERSION {
        return Err(CodecError::Version(version));
    }

    let angular_rows = r.u16("U")?;
    let angular_cols = r.u16("V")?;
    let crop_h = r.u16("H")?;
    let crop_w = r.u16("W")?;
    let out_h = r.u16("out_H")?;
    let out_w = r.u16("out_W")?;
    let base = r.f32("pe.b")?;
    let levels = r.u8("pe.L")?;
    let mlp_hidden = r.u16("mlp_hidden")?;
    let h0 = r.u8("h0")?;
    let w0 = r.u8("w0")?;
    let c0 = r.u16("c0")?;
    let n_blocks = r.u8("n_blocks")?;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let factor = r.u8("block factor")?;
        let channels = r.u16("block channels")?;
        blocks.push(BlockConfig { factor, channels });
    }
    let config = ModelConfig {
        pe: PositionalEncodingConfig { base, levels },
        mlp_hidden,
        h0,
        w0,
        c0,
        blocks,
        out_h,
        out_w,
        crop_h,
        crop_w,
        angular_rows,
        angular_cols,
        output_activation: OutputActivation::Sigmoid,
        residual_activation: true,
    };
    config.validate().map_err(|e| mismatch(e.to_string()))?;
    let quant_bits = r.u8("quant_bits")? as u8;
    if !(1..=MAX_BITS).contains(&quant_bits) {
        return Err(mismatch(format!("quant_bits {quant_bits}")));
    }
    let specs = config.parameter_specs();
    let n_tensors = r.u16("n_tensors")?;
    if n_tensors != specs.len() {
        return Err(mismatch(format!(
            "{n_tensors} tensors, config implies {}",
            specs.len()
        )));
    }
    if specs.iter().map(|s| s.len()).sum::<usize>() > MAX_PARAMETERS {
        return Err(mismatch("parameter count exceeds the decoder limit"));
    }

    let mut entries = Vec::with_capacity(n_tensors);
    for (t, spec) in specs.iter().enumerate() {
        let id = r.u16("tensor id")?;
        if id != t {
            return Err(mismatch(format!("tensor id {id} at position {t}")));
        }
        let ndim = r.u8("ndim")?;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dims")?);
        }
        if dims != spec.shape {
            return Err(mismatch(format!(
                "{}: dims {dims:?}, config implies {:?}",
                spec.name, spec.shape
            )));
        }
        let pruned = match r.u8("pruned flag")? {
            0 => false,
            1 if spec.prunable => true,
            f => return Err(mismatch(format!("{}: pruned flag {f}", spec.name))),
        };
        let min = r.f32("delta_min")?;
        let max = r.f32("delta_max")?;
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(mismatch(format!("{}: range [{min}, {max}]", spec.name)));
        }
        let mask = if pruned {
            Some(r.payload("mask payload")?)
        } else {
            None
        };
        let symbols = r.payload("symbol payload")?;
        entries.push(TensorEntry {
            min,
            max,
            mask,
            symbols,
        });
    }

    let body_end = r.pos;
    let stored = r.u32_raw("checksum")?;
    if r.pos != bytes.len() {
        return Err(mismatch(format!(
            "{} bytes after the checksum",
            bytes.len() - r.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CodecError::ChecksumMismatch { stored, computed });
    }

    let mut params = Vec::with_capacity(n_tensors);
    let mut masks = Vec::with_capacity(n_tensors);
    for (t, (spec, e)) in specs.iter().zip(entries).enumerate() {
        let n = spec.len();
        let kept = e.mask.map(|m| decode_bits(m, n)).transpose()?;
        let n_kept = kept.as_ref().map_or(n, |k| k.iter().filter(|&&x| x).count());
        let symbols = arith_decode(e.symbols, n_kept, 1usize << quant_bits)?;
        let rec = QuantRecord {
            tensor_id: t,
            shape: spec.shape.clone(),
            min: e.min,
            max: e.max,
            bits: quant_bits,
            kept,
            symbols,
        };
        params.push(dequantize(&rec)?);
        masks.push(if spec.prunable {
            Some(rec.kept.unwrap_or_else(|| vec![true; n]))
        } else {
            None
        });
    }
    let mut mask = PruneMask { ratio: 0.0, masks };
    let total = mask.prunable_count();
    if total > 0 {
        mask.ratio = mask.pruned_count() as f64 / total as f64;
    }
    let model = Model::from_parameters(config, params)?;
    Ok(DecodedStream {
        model,
        mask,
        quant_bits,
    })
}
