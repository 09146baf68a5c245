//! Model compression: LAMP pruning, affine quantization, adaptive arithmetic
//! coding and the bitstream container.

pub mod bitstream;
pub mod entropy;
pub mod lamp;
pub mod quant;

use thiserror::Error;

use crate::model::{Model, ModelError};

pub use bitstream::{deserialize, serialize, DecodedStream};
pub use entropy::{arith_decode, arith_encode};
pub use lamp::{global_masks, lamp_scores, prune_global};
pub use quant::{dequantize, quantize_tensor, QuantRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("cannot score an empty layer")]
    EmptyLayer,
    #[error("prune ratio {0} outside [0, 1)")]
    PruneRatio(f64),
    #[error("quantization bits {0} outside 1..=16")]
    QuantBits(u8),
    #[error("tensor {0} holds a non-finite value")]
    NonFinite(usize),
    #[error("mask for tensor {0} does not match its shape")]
    MaskShape(usize),
    #[error("mask covers {got} tensors, model has {expected}")]
    MaskCount { expected: usize, got: usize },
    #[error("mask given for non-prunable tensor {0}")]
    MaskNotPrunable(usize),
    #[error("tensor {0}: symbol count does not match kept positions")]
    SymbolCount(usize),
    #[error("alphabet size {0} outside 2..=65536")]
    Alphabet(usize),
    #[error("symbol {symbol} outside alphabet of {alphabet}")]
    SymbolOutOfRange { symbol: u32, alphabet: usize },
    #[error("entropy payload ended early")]
    TruncatedPayload,
    #[error("entropy payload has unread bytes")]
    TrailingBytes,
    #[error("not a light-field bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream version {0}")]
    Version(u8),
    #[error("bitstream truncated while reading {0}")]
    Truncated(&'static str),
    #[error("inconsistent header: {0}")]
    HeaderMismatch(String),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{field} = {value} does not fit the header field")]
    HeaderOverflow { field: &'static str, value: usize },
    #[error("not representable in the bitstream: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Keep-masks (true = kept) for every prunable tensor, indexed by tensor id;
/// `None` for tensors that are never pruned.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    pub ratio: f64,
    pub masks: Vec<Option<Vec<bool>>>,
}

impl PruneMask {
    /// Mask that keeps every weight.
    pub fn keep_all(model: &Model) -> Self {
        let masks = model
            .specs()
            .iter()
            .map(|s| s.prunable.then(|| vec![true; s.len()]))
            .collect();
        Self { ratio: 0.0, masks }
    }

    pub fn prunable_count(&self) -> usize {
        self.masks.iter().flatten().map(Vec::len).sum()
    }

    pub fn pruned_count(&self) -> usize {
        self.masks.iter().flatten().flatten().filter(|&&k| !k).count()
    }

    pub fn kept(&self, tensor: usize) -> Option<&[bool]> {
        self.masks.get(tensor).and_then(|m| m.as_deref())
    }

    pub fn check(&self, model: &Model) -> Result<(), CodecError> {
        let specs = model.specs();
        if specs.len() != self.masks.len() {
            return Err(CodecError::MaskCount {
                expected: specs.len(),
                got: self.masks.len(),
            });
        }
        for (t, (spec, mask)) in specs.iter().zip(&self.masks).enumerate() {
            match mask {
                Some(_) if !spec.prunable => return Err(CodecError::MaskNotPrunable(t)),
                Some(m) if m.len() != spec.len() => return Err(CodecError::MaskShape(t)),
                None if spec.prunable => return Err(CodecError::MaskShape(t)),
                _ => {}
            }
        }
        Ok(())
    }

    /// Sets every masked-out parameter to zero.
    pub fn apply(&self, model: &mut Model) -> Result<(), CodecError> {
        self.check(model)?;
        for (p, mask) in model.parameters_mut().iter_mut().zip(&self.masks) {
            if let Some(m) = mask {
                for (x, &keep) in p.iter_mut().zip(m) {
                    if !keep {
                        *x = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Quantizes every tensor (skipping pruned positions) and returns the records.
pub fn quantize_model(
    model: &Model,
    mask: &PruneMask,
    bits: u8,
) -> Result<Vec<QuantRecord>, CodecError> {
    mask.check(model)?;
    model
        .specs()
        .iter()
        .zip(model.parameters())
        .enumerate()
        .map(|(t, (spec, values))| quantize_tensor(t, &spec.shape, values, mask.kept(t), bits))
        .collect()
}

/// The model a decoder reconstructs: pruned, quantized and dequantized.
pub fn quantize_dequantize(model: &Model, mask: &PruneMask, bits: u8) -> Result<Model, CodecError> {
    let params = quantize_model(model, mask, bits)?
        .iter()
        .map(dequantize)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Model::from_parameters(model.config().clone(), params)?)
}
