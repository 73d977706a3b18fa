//! Weight-pool generation.
//!
//! Filters are sliced along the input-channel axis into length-`N` vectors,
//! the vectors of every compressible layer are clustered into one global
//! pool of `S` vectors, and each layer is rewritten as an array of pool
//! indices.

mod assign;
mod compress;
mod container;
mod kmeans;

pub use assign::{assign_indices, reconstruct_layer, AssignStats, CompressedLayer, LayerWeights};
pub use compress::{
    compress_model, compress_with_pool, CompressedLayerRecord, CompressedModel, CompressionStats, DEFAULT_WEIGHT_BITS,
};
pub use container::{
    decode_compressed, encode_compressed, load_compressed, save_compressed, CONTAINER_MAGIC, CONTAINER_VERSION,
};
pub use kmeans::cluster_kmeans_cosine;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{LayerKind, LayerSpec};
use crate::tensor::Tensor;

/// Vectors with a smaller Euclidean norm carry no direction.
pub const NEAR_ZERO_NORM: f64 = 1e-12;

/// Fixed default so unconfigured runs reproduce.
pub const DEFAULT_SEED: u64 = 0x5eed_b175_e71a_1001;

pub const MAX_GROUP_SIZE: usize = 16;
pub const MAX_POOL_SIZE: usize = u16::MAX as usize + 1;

/// Which layers keep raw weights instead of pool indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Exclusions {
    pub first_layer: bool,
    pub depthwise: bool,
    pub fully_connected: bool,
    /// Additional layer positions to keep uncompressed.
    pub layers: Vec<usize>,
}

impl Default for Exclusions {
    fn default() -> Self {
        Exclusions {
            first_layer: true,
            depthwise: true,
            fully_connected: true,
            layers: Vec::new(),
        }
    }
}

impl Exclusions {
    pub fn none() -> Self {
        Exclusions {
            first_layer: false,
            depthwise: false,
            fully_connected: false,
            layers: Vec::new(),
        }
    }

    pub fn excludes(&self, position: usize, spec: &LayerSpec) -> bool {
        // Depthwise filters are one channel deep; there is nothing to group.
        if spec.kind == LayerKind::Depthwise {
            return true;
        }
        (self.first_layer && position == 0)
            || (self.fully_connected && spec.kind == LayerKind::FullyConnected)
            || self.layers.contains(&position)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoolConfig {
    /// Elements per pool vector (`N`).
    pub group_size: usize,
    /// Vectors in the pool (`S`).
    pub pool_size: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub exclusions: Exclusions,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            group_size: 8,
            pool_size: 64,
            seed: DEFAULT_SEED,
            max_iter: 100,
            exclusions: Exclusions::default(),
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        check_group_size(self.group_size)?;
        if self.pool_size < 2 || self.pool_size > MAX_POOL_SIZE {
            return Err(Error::InvalidConfig(format!(
                "pool size {} outside 2..={MAX_POOL_SIZE}",
                self.pool_size
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_group_size(n: usize) -> Result<()> {
    if (2..=MAX_GROUP_SIZE).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "group size {n} outside 2..={MAX_GROUP_SIZE}"
        )))
    }
}

/// One length-`N` slice of a filter along the channel axis.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(pub Vec<f32>);

impl WeightVector {
    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum()
}

pub(crate) fn norm(u: &[f32]) -> f64 {
    dot(u, u).sqrt()
}

/// `1 - cos(u, v)`; a near-zero operand counts as orthogonal.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> f64 {
    cosine_distance_with_norms(u, norm(u), v, norm(v))
}

pub(crate) fn cosine_distance_with_norms(u: &[f32], nu: f64, v: &[f32], nv: f64) -> f64 {
    if nu < NEAR_ZERO_NORM || nv < NEAR_ZERO_NORM {
        return 1.0;
    }
    1.0 - dot(u, v) / (nu * nv)
}

#[derive(Clone, Debug, Serialize)]
pub struct PoolProvenance {
    pub seed: u64,
    pub iterations: usize,
    pub inertia: f64,
}

impl PartialEq for PoolProvenance {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.iterations == other.iterations
            && self.inertia.to_bits() == other.inertia.to_bits()
    }
}

/// The shared vectors; after compression the only weight storage.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightPool {
    vectors: Vec<WeightVector>,
    pub provenance: PoolProvenance,
}

impl WeightPool {
    pub fn new(vectors: Vec<WeightVector>, provenance: PoolProvenance) -> Result<Self> {
        let n = match vectors.first() {
            Some(v) => v.len(),
            None => return Err(Error::EmptyPool),
        };
        check_group_size(n)?;
        if vectors.len() > MAX_POOL_SIZE {
            return Err(Error::InvalidConfig(format!(
                "pool of {} vectors exceeds {MAX_POOL_SIZE}",
                vectors.len()
            )));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "pool vectors of length {n} and {}",
                bad.len()
            )));
        }
        if vectors.iter().any(|v| v.0.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("pool vector"));
        }
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                if bit_equal(&vectors[i].0, &vectors[j].0) {
                    return Err(Error::DuplicatePoolVector(i, j));
                }
            }
        }
        Ok(WeightPool {
            vectors,
            provenance,
        })
    }

    pub fn vectors(&self) -> &[WeightVector] {
        &self.vectors
    }

    pub fn get(&self, index: usize) -> Result<&WeightVector> {
        self.vectors.get(index).ok_or(Error::IndexOutOfRange {
            index,
            pool_size: self.vectors.len(),
        })
    }

    /// Pool size `S`.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Vector length `N`.
    pub fn group_size(&self) -> usize {
        self.vectors[0].len()
    }
}

pub(crate) fn bit_equal(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Result of slicing a weight tensor into channel-axis vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    /// Ordered by `(out_ch, kh, kw, group)`.
    pub vectors: Vec<WeightVector>,
    /// Channel groups per filter tap, `ceil(in_ch / N)`.
    pub groups: usize,
    /// Zero slots appended to the last group of every tap.
    pub pad_tail: usize,
}

/// Slices `(out_ch, kh, kw, in_ch)` weights into contiguous runs of `n`
/// channels, zero-padding the final run when `in_ch` is not a multiple.
pub fn group_weights_z(weights: &Tensor, n: usize) -> Result<Grouping> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("group size {n} must be at least 2")));
    }
    let depth = match weights.shape() {
        [_, _, _, d] => *d,
        other => {
            return Err(Error::ShapeMismatch(format!(
                "expected (out_ch, kh, kw, in_ch) weights, got {other:?}"
            )))
        }
    };
    let groups = depth.div_ceil(n);
    let pad_tail = groups * n - depth;
    let mut vectors = Vec::with_capacity(weights.len() / depth * groups);
    for tap in weights.data().chunks_exact(depth) {
        for g in 0..groups {
            let start = g * n;
            let end = (start + n).min(depth);
            let mut v = tap[start..end].to_vec();
            v.resize(n, 0.0);
            vectors.push(WeightVector(v));
        }
    }
    Ok(Grouping {
        vectors,
        groups,
        pad_tail,
    })
}
