//! Per-tensor affine quantization.
//!
//! `S = (δ_max − δ_min) / 2^b`, `Q(δ) = clamp(round((δ − δ_min) / S), 0, 2^b − 1)`,
//! `δ̂ = Q(δ)·S + δ_min`. Min and max are taken over kept (unpruned) positions;
//! pruned positions are not coded and decode to exactly zero.
//!
//! The unclamped formula maps `δ_max` to `2^b`, which does not fit in `b` bits,
//! so the top symbol is clamped and the reconstruction error at the top
//! endpoint is at most `S` (elsewhere at most `S/2`).

use super::CodecError;

pub const MAX_BITS: u8 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantRecord {
    pub tensor_id: usize,
    pub shape: Vec<usize>,
    pub min: f32,
    pub max: f32,
    pub bits: u8,
    /// `None` means every position is kept.
    pub kept: Option<Vec<bool>>,
    /// One symbol per kept position, in flat order.
    pub symbols: Vec<u32>,
}

/// Scale factor; defined as 1 for a constant tensor.
pub fn scale(min: f32, max: f32, bits: u8) -> f32 {
    if max == min {
        1.0
    } else {
        (max - min) / (1u32 << bits) as f32
    }
}

fn check_bits(bits: u8) -> Result<(), CodecError> {
    if !(1..=MAX_BITS).contains(&bits) {
        return Err(CodecError::QuantBits(bits));
    }
    Ok(())
}

pub fn quantize_tensor(
    tensor_id: usize,
    shape: &[usize],
    values: &[f32],
    kept: Option<&[bool]>,
    bits: u8,
) -> Result<QuantRecord, CodecError> {
    check_bits(bits)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite(tensor_id));
    }
    if let Some(k) = kept {
        if k.len() != values.len() {
            return Err(CodecError::MaskShape(tensor_id));
        }
    }
    let is_kept = |i: usize| kept.is_none_or(|k| k[i]);
    let kept_values: Vec<f32> = (0..values.len())
        .filter(|&i| is_kept(i))
        .map(|i| values[i])
        .collect();
    let (min, max) = if kept_values.is_empty() {
        (0.0, 0.0)
    } else {
        kept_values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    };
    let s = scale(min, max, bits) as f64;
    let top = ((1u32 << bits) - 1) as f64;
    let symbols = kept_values
        .iter()
        .map(|&v| {
            if max == min {
                0
            } else {
                ((v as f64 - min as f64) / s).round().clamp(0.0, top) as u32
            }
        })
        .collect();
    Ok(QuantRecord {
        tensor_id,
        shape: shape.to_vec(),
        min,
        max,
        bits,
        kept: kept.map(<[bool]>::to_vec),
        symbols,
    })
}

/// Reconstructs the full tensor, zeros at pruned positions.
pub fn dequantize(rec: &QuantRecord) -> Result<Vec<f32>, CodecError> {
    check_bits(rec.bits)?;
    let n: usize = rec.shape.iter().product();
    let s = scale(rec.min, rec.max, rec.bits);
    let limit = 1u32 << rec.bits;
    let mut symbols = rec.symbols.iter();
    let mut next = || -> Result<f32, CodecError> {
        let &q = symbols.next().ok_or(CodecError::SymbolCount(rec.tensor_id))?;
        if q >= limit {
            return Err(CodecError::SymbolOutOfRange {
                symbol: q,
                alphabet: limit as usize,
            });
        }
        Ok(q as f32 * s + rec.min)
    };
    let out = match &rec.kept {
        None => (0..n).map(|_| next()).collect::<Result<Vec<_>, _>>()?,
        Some(k) => {
            if k.len() != n {
                return Err(CodecError::MaskShape(rec.tensor_id));
            }
            k.iter()
                .map(|&keep| if keep { next() } else { Ok(0.0) })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    if symbols.next().is_some() {
        return Err(CodecError::SymbolCount(rec.tensor_id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(symbols: Vec<u32>) -> QuantRecord {
        QuantRecord {
            tensor_id: 0,
            shape: vec![symbols.len()],
            min: -1.0,
            max: 1.0,
            bits: 8,
            kept: None,
            symbols,
        }
    }

    #[test]
    fn symbol_examples() {
        assert_eq!(scale(-1.0, 1.0, 8), 0.0078125);
        let r = quantize_tensor(0, &[3], &[-1.0, 0.0, 1.0], None, 8).unwrap();
        assert_eq!((r.min, r.max), (-1.0, 1.0));
        // 0 → 128, min → 0, max → 256 clamped to 255
        assert_eq!(r.symbols, vec![0, 128, 255]);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(dequantize(&rec(vec![128])).unwrap(), vec![0.0]);
        assert_eq!(dequantize(&rec(vec![0])).unwrap(), vec![-1.0]);
        let top = dequantize(&rec(vec![255])).unwrap()[0];
        assert_eq!(top, 0.9921875);
        assert_eq!(1.0 - top, 0.0078125);
        assert!(matches!(
            dequantize(&rec(vec![256])),
            Err(CodecError::SymbolOutOfRange { .. })
        ));
    }

    #[test]
    fn constant_tensor_uses_unit_scale() {
        let r = quantize_tensor(2, &[4], &[0.3; 4], None, 8).unwrap();
        assert_eq!(r.symbols, vec![0; 4]);
        assert_eq!(dequantize(&r).unwrap(), vec![0.3; 4]);
    }

    #[test]
    fn pruned_positions_skip_and_decode_to_zero() {
        let values = [0.5, -0.25, 0.0, 2.0];
        let kept = [true, false, false, true];
        let r = quantize_tensor(1, &[2, 2], &values, Some(&kept), 4).unwrap();
        assert_eq!(r.symbols.len(), 2);
        assert_eq!((r.min, r.max), (0.5, 2.0));
        let d = dequantize(&r).unwrap();
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[0], 0.5);

        let none_kept = quantize_tensor(1, &[2], &[0.1, 0.2], Some(&[false, false]), 8).unwrap();
        assert!(none_kept.symbols.is_empty());
        assert_eq!(dequantize(&none_kept).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            quantize_tensor(0, &[1], &[f32::NAN], None, 8),
            Err(CodecError::NonFinite(0))
        );
        assert_eq!(quantize_tensor(0, &[1], &[0.0], None, 0), Err(CodecError::QuantBits(0)));
        assert_eq!(quantize_tensor(0, &[1], &[0.0], None, 17), Err(CodecError::QuantBits(17)));
    }
}
