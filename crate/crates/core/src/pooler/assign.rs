use rayon::prelude::*;
use serde::Serialize;

use super::{cosine_distance_with_norms, group_weights_z, norm, WeightPool, WeightVector, NEAR_ZERO_NORM};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reconstruction error of an index assignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AssignStats {
    /// Mean cosine distance over vectors with a direction.
    pub mean_cosine_distance: f64,
    pub max_cosine_distance: f64,
    /// Near-zero vectors, mapped to the smallest pool vector and left out
    /// of the distance statistics.
    pub near_zero: usize,
}

/// Maps every vector to its cosine-nearest pool entry (lowest index wins
/// ties). Near-zero vectors map to the pool vector of smallest norm.
pub fn assign_indices(vectors: &[WeightVector], pool: &WeightPool) -> Result<(Vec<u16>, AssignStats)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n = pool.group_size();
    if let Some(v) = vectors.iter().find(|v| v.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "vector of length {} against pool of length {n}",
            v.len()
        )));
    }
    let pool_norms: Vec<f64> = pool.vectors().iter().map(|p| p.norm()).collect();
    let smallest = pool_norms
        .iter()
        .enumerate()
        .fold(0, |best, (i, &nv)| if nv < pool_norms[best] { i } else { best });

    let picks: Vec<(usize, Option<f64>)> = vectors
        .par_iter()
        .map(|v| {
            let nv = norm(v.values());
            if nv < NEAR_ZERO_NORM {
                return (smallest, None);
            }
            let mut best = (0, f64::INFINITY);
            for (k, (p, &np)) in pool.vectors().iter().zip(&pool_norms).enumerate() {
                let d = cosine_distance_with_norms(v.values(), nv, p.values(), np);
                if d < best.1 {
                    best = (k, d);
                }
            }
            (best.0, Some(best.1))
        })
        .collect();

    let mut stats = AssignStats::default();
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut indices = Vec::with_capacity(picks.len());
    for (k, d) in picks {
        indices.push(k as u16);
        match d {
            Some(d) => {
                sum += d;
                counted += 1;
                stats.max_cosine_distance = stats.max_cosine_distance.max(d);
            }
            None => stats.near_zero += 1,
        }
    }
    if counted > 0 {
        stats.mean_cosine_distance = sum / counted as f64;
    }
    Ok((indices, stats))
}

/// A layer rewritten as pool indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedLayer {
    /// Shaped `(out_ch, kh, kw, ceil(in_ch / N))`.
    pub indices: Tensor<u16>,
    pub group_size: usize,
    /// Zero slots padding the last channel group; always `< group_size`.
    pub pad_tail: usize,
}

impl CompressedLayer {
    pub fn out_ch(&self) -> usize {
        self.indices.shape()[0]
    }

    pub fn groups(&self) -> usize {
        self.indices.shape()[3]
    }

    pub fn in_ch(&self) -> usize {
        self.groups() * self.group_size - self.pad_tail
    }

    pub fn index_count(&self) -> usize {
        self.indices.len()
    }

    /// Compresses `(out_ch, kh, kw, in_ch)` weights against `pool`.
    pub fn from_weights(weights: &Tensor, pool: &WeightPool) -> Result<(Self, AssignStats)> {
        let n = pool.group_size();
        let grouping = group_weights_z(weights, n)?;
        let (indices, stats) = assign_indices(&grouping.vectors, pool)?;
        let s = weights.shape();
        let indices = Tensor::new(vec![s[0], s[1], s[2], grouping.groups], indices)?;
        Ok((
            CompressedLayer {
                indices,
                group_size: n,
                pad_tail: grouping.pad_tail,
            },
            stats,
        ))
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.indices.shape().len() != 4 {
            return Err(Error::ShapeMismatch("index array must be rank 4".into()));
        }
        if self.pad_tail >= self.group_size {
            return Err(Error::InvalidModel(format!(
                "pad_tail {} must be below group size {}",
                self.pad_tail, self.group_size
            )));
        }
        if let Some(&bad) = self.indices.data().iter().find(|&&i| i as usize >= pool_size) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                pool_size,
            });
        }
        Ok(())
    }
}

/// Per-layer weight storage after compression.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights {
    Pooled(CompressedLayer),
    /// Raw weights kept for layers outside the pool.
    Excluded(Tensor),
}

impl LayerWeights {
    pub fn is_excluded(&self) -> bool {
        matches!(self, LayerWeights::Excluded(_))
    }

    pub fn as_pooled(&self) -> Option<&CompressedLayer> {
        match self {
            LayerWeights::Pooled(c) => Some(c),
            LayerWeights::Excluded(_) => None,
        }
    }
}

/// Rebuilds `(out_ch, kh, kw, in_ch)` weights by substituting pool vectors
/// and dropping the zero padding. Excluded layers return their raw weights.
pub fn reconstruct_layer(layer: &LayerWeights, pool: Option<&WeightPool>) -> Result<Tensor> {
    let c = match layer {
        LayerWeights::Excluded(raw) => return Ok(raw.clone()),
        LayerWeights::Pooled(c) => c,
    };
    let pool = pool.ok_or(Error::EmptyPool)?;
    if pool.group_size() != c.group_size {
        return Err(Error::ShapeMismatch(format!(
            "layer grouped by {}, pool vectors have {}",
            c.group_size,
            pool.group_size()
        )));
    }
    c.validate(pool.len())?;
    let depth = c.in_ch();
    let shape = c.indices.shape();
    let mut out = Vec::with_capacity(shape[0] * shape[1] * shape[2] * depth);
    for tap in c.indices.data().chunks_exact(c.groups()) {
        let start = out.len();
        for &idx in tap {
            out.extend_from_slice(pool.get(idx as usize)?.values());
        }
        out.truncate(start + depth);
    }
    Tensor::new(vec![shape[0], shape[1], shape[2], depth], out)
}
