//! Layer-adaptive magnitude pruning (LAMP) scores and global pruning.

use super::{CodecError, PruneMask};
use crate::model::Model;

/// Ascending order by squared magnitude, ties broken by flat index.
fn ascending_order(weights: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..weights.len()).collect();
    idx.sort_by(|&a, &b| {
        let (wa, wb) = (weights[a] as f64, weights[b] as f64);
        (wa * wa).total_cmp(&(wb * wb)).then(a.cmp(&b))
    });
    idx
}

/// LAMP score of every weight in one layer:
/// `w_i² / Σ_{j ≥ i in ascending order} w_j²`.
///
/// When that tail sum is zero (all remaining weights are zero) the score is
/// `1 / (tail length)`, the limit of an equal-magnitude tail.
pub fn lamp_scores(weights: &[f32]) -> Result<Vec<f64>, CodecError> {
    if weights.is_empty() {
        return Err(CodecError::EmptyLayer);
    }
    let order = ascending_order(weights);
    let sq: Vec<f64> = order
        .iter()
        .map(|&i| {
            let w = weights[i] as f64;
            w * w
        })
        .collect();
    let mut scores = vec![0.0; weights.len()];
    let mut tail = 0.0;
    for (rank, &i) in order.iter().enumerate().rev() {
        tail += sq[rank];
        let n_tail = (order.len() - rank) as f64;
        scores[i] = if tail > 0.0 { sq[rank] / tail } else { 1.0 / n_tail };
    }
    Ok(scores)
}

/// Keep-masks for a set of layers under one global LAMP threshold: the
/// `round(ratio · N)` weights with the smallest scores are removed, ties at the
/// threshold resolved by `(layer index, flat index)` so the count is exact.
pub fn global_masks(layers: &[&[f32]], ratio: f64) -> Result<Vec<Vec<bool>>, CodecError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(CodecError::PruneRatio(ratio));
    }
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for (t, values) in layers.iter().enumerate() {
        let scores = lamp_scores(values)?;
        entries.extend(scores.into_iter().enumerate().map(|(i, s)| (s, t, i)));
    }
    let k = (ratio * entries.len() as f64).round() as usize;
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut masks: Vec<Vec<bool>> = layers.iter().map(|l| vec![true; l.len()]).collect();
    for &(_, t, i) in &entries[..k] {
        masks[t][i] = false;
    }
    Ok(masks)
}

/// Global LAMP pruning over every prunable tensor of `model`.
pub fn prune_global(model: &Model, ratio: f64) -> Result<PruneMask, CodecError> {
    let prunable: Vec<usize> = (0..model.specs().len())
        .filter(|&t| model.specs()[t].prunable)
        .collect();
    let layers: Vec<&[f32]> = prunable
        .iter()
        .map(|&t| model.parameters()[t].as_slice())
        .collect();
    let mut computed = global_masks(&layers, ratio)?.into_iter();
    let masks = model
        .specs()
        .iter()
        .map(|s| if s.prunable { computed.next() } else { None })
        .collect();
    Ok(PruneMask { ratio, masks })
}
