use log::warn;
use serde::Serialize;

use super::{cluster_kmeans_cosine, group_weights_z, AssignStats, CompressedLayer, LayerWeights, PoolConfig, WeightPool};
use crate::error::{Error, Result};
use crate::model::{shape_chain, Layer, LayerSpec, ModelGraph, QuantParams};
use crate::pooler::reconstruct_layer;
use crate::quant::LutTable;

/// Default weight bitwidth `B_w` for lookup tables and excluded layers.
pub const DEFAULT_WEIGHT_BITS: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct CompressedLayerRecord {
    pub spec: LayerSpec,
    pub weights: LayerWeights,
    pub bias: Option<Vec<f32>>,
    pub input_quant: Option<QuantParams>,
}

impl CompressedLayerRecord {
    pub fn is_excluded(&self) -> bool {
        self.weights.is_excluded()
    }
}

/// A network after pooling: the global pool plus one record per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedModel {
    pub input_shape: [usize; 3],
    pub layers: Vec<CompressedLayerRecord>,
    /// `None` when every layer is excluded.
    pub pool: Option<WeightPool>,
    pub weight_bits: u32,
    /// Optional prebuilt lookup table carried in the container.
    pub lut: Option<LutTable>,
    /// Bumped every time calibration rewrites the model.
    pub revision: u32,
}

impl CompressedModel {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        shape_chain(self.input_shape, self.layers.iter().map(|l| &l.spec))?;
        for (i, layer) in self.layers.iter().enumerate() {
            self.validate_layer(layer).map_err(|e| e.in_layer(i))?;
        }
        if let (Some(lut), Some(pool)) = (&self.lut, &self.pool) {
            lut.check_matches(pool)?;
        }
        if self.lut.is_some() && self.pool.is_none() {
            return Err(Error::LutMismatch("table present without a pool".into()));
        }
        Ok(())
    }

    fn validate_layer(&self, layer: &CompressedLayerRecord) -> Result<()> {
        layer.spec.validate()?;
        if let Some(b) = &layer.bias {
            if b.len() != layer.spec.out_ch {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries for {} filters",
                    b.len(),
                    layer.spec.out_ch
                )));
            }
        }
        match &layer.weights {
            LayerWeights::Excluded(w) => {
                if w.shape() != layer.spec.weight_shape().as_slice() {
                    return Err(Error::ShapeMismatch(format!(
                        "weights shaped {:?}, layer needs {:?}",
                        w.shape(),
                        layer.spec.weight_shape()
                    )));
                }
            }
            LayerWeights::Pooled(c) => {
                let pool = self.pool.as_ref().ok_or(Error::EmptyPool)?;
                if c.group_size != pool.group_size() {
                    return Err(Error::ShapeMismatch(format!(
                        "layer grouped by {}, pool vectors have {}",
                        c.group_size,
                        pool.group_size()
                    )));
                }
                let s = &layer.spec;
                let expected = [s.out_ch, s.kh, s.kw, s.filter_depth().div_ceil(c.group_size)];
                if c.indices.shape() != expected.as_slice() || c.in_ch() != s.filter_depth() {
                    return Err(Error::ShapeMismatch(format!(
                        "index array {:?} (pad {}) does not fit layer {:?}",
                        c.indices.shape(),
                        c.pad_tail,
                        s
                    )));
                }
                c.validate(pool.len())?;
            }
        }
        Ok(())
    }

    /// Group size `N`, when a pool exists.
    pub fn group_size(&self) -> Option<usize> {
        self.pool.as_ref().map(|p| p.group_size())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.weight_count()).sum()
    }

    pub fn index_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.weights.as_pooled())
            .map(|c| c.index_count())
            .sum()
    }

    /// Float model with pool vectors substituted back into every layer.
    pub fn reconstruct(&self) -> Result<ModelGraph> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, rec) in self.layers.iter().enumerate() {
            let weights = reconstruct_layer(&rec.weights, self.pool.as_ref()).map_err(|e| e.in_layer(i))?;
            let mut layer = Layer::new(rec.spec, weights, rec.bias.clone()).map_err(|e| e.in_layer(i))?;
            layer.input_quant = rec.input_quant;
            layers.push(layer);
        }
        ModelGraph::new(self.input_shape, layers)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CompressionStats {
    /// Assignment error per layer; `None` for excluded layers.
    pub per_layer: Vec<Option<AssignStats>>,
    /// Over every compressed vector.
    pub overall: AssignStats,
    pub vectors_clustered: usize,
    pub index_count: usize,
    pub warnings: Vec<String>,
}

/// Clusters one global pool over the grouped vectors of every compressible
/// layer and rewrites those layers as index arrays.
///
/// A model with nothing to compress comes back with every layer excluded,
/// no pool, and a warning.
pub fn compress_model(model: &ModelGraph, cfg: &PoolConfig) -> Result<(CompressedModel, CompressionStats)> {
    cfg.validate()?;
    model.validate()?;
    let compressible: Vec<bool> = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| !cfg.exclusions.excludes(i, &l.spec))
        .collect();

    let mut union = Vec::new();
    for (layer, _) in model.layers.iter().zip(&compressible).filter(|(_, &c)| c) {
        union.extend(group_weights_z(&layer.weights, cfg.group_size)?.vectors);
    }
    if union.is_empty() {
        let msg = "no compressible layer; every layer kept uncompressed and no pool emitted".to_string();
        warn!("{msg}");
        let compressed = CompressedModel {
            input_shape: model.input_shape,
            layers: model.layers.iter().map(excluded_record).collect(),
            pool: None,
            weight_bits: DEFAULT_WEIGHT_BITS,
            lut: None,
            revision: 0,
        };
        let stats = CompressionStats {
            per_layer: vec![None; model.layers.len()],
            warnings: vec![msg],
            ..Default::default()
        };
        return Ok((compressed, stats));
    }

    let pool = cluster_kmeans_cosine(&union, cfg.pool_size, cfg.seed, cfg.max_iter)?;
    let (mut compressed, mut stats) = compress_with_pool(model, pool, &compressible)?;
    stats.vectors_clustered = union.len();
    compressed.revision = 0;
    Ok((compressed, stats))
}

/// Rewrites the layers flagged in `compressible` against an existing pool.
pub fn compress_with_pool(
    model: &ModelGraph,
    pool: WeightPool,
    compressible: &[bool],
) -> Result<(CompressedModel, CompressionStats)> {
    if compressible.len() != model.layers.len() {
        return Err(Error::InvalidConfig(format!(
            "{} exclusion flags for {} layers",
            compressible.len(),
            model.layers.len()
        )));
    }
    let mut stats = CompressionStats::default();
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut weighted = 0.0;
    let mut counted = 0usize;
    for (i, (layer, &c)) in model.layers.iter().zip(compressible).enumerate() {
        if !c {
            layers.push(excluded_record(layer));
            stats.per_layer.push(None);
            continue;
        }
        let (cl, st) = CompressedLayer::from_weights(&layer.weights, &pool).map_err(|e| e.in_layer(i))?;
        let with_direction = cl.index_count() - st.near_zero;
        weighted += st.mean_cosine_distance * with_direction as f64;
        counted += with_direction;
        stats.overall.max_cosine_distance = stats.overall.max_cosine_distance.max(st.max_cosine_distance);
        stats.overall.near_zero += st.near_zero;
        stats.index_count += cl.index_count();
        stats.per_layer.push(Some(st));
        layers.push(CompressedLayerRecord {
            spec: layer.spec,
            weights: LayerWeights::Pooled(cl),
            bias: layer.bias.clone(),
            input_quant: layer.input_quant,
        });
    }
    if counted > 0 {
        stats.overall.mean_cosine_distance = weighted / counted as f64;
    }
    let model = CompressedModel {
        input_shape: model.input_shape,
        layers,
        pool: Some(pool),
        weight_bits: DEFAULT_WEIGHT_BITS,
        lut: None,
        revision: 0,
    };
    model.validate()?;
    Ok((model, stats))
}

fn excluded_record(layer: &Layer) -> CompressedLayerRecord {
    CompressedLayerRecord {
        spec: layer.spec,
        weights: LayerWeights::Excluded(layer.weights.clone()),
        bias: layer.bias.clone(),
        input_quant: layer.input_quant,
    }
}
