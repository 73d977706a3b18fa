//! Storage accounting, compression reports and modeled speedup curves.

mod bench;

pub use bench::{caching_sweep, speedup_curve, BenchLayer, SpeedupCurve, SpeedupRow};

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::pooler::{CompressedModel, Exclusions};

/// Largest group size accepted by the storage formulas.
pub const MAX_STORAGE_GROUP: u32 = 24;

/// Bits needed for a `2^N x S` table of `B_l`-bit entries.
pub fn lut_storage(n: u32, s: u64, lut_bits: u32) -> Result<u64> {
    if n == 0 || s == 0 || lut_bits == 0 {
        return Err(Error::InvalidConfig("table dimensions must be positive".into()));
    }
    if n > MAX_STORAGE_GROUP {
        return Err(Error::InvalidConfig(format!(
            "group size {n} exceeds {MAX_STORAGE_GROUP} for storage accounting"
        )));
    }
    (1u64 << n)
        .checked_mul(s)
        .and_then(|v| v.checked_mul(lut_bits as u64))
        .ok_or_else(|| Error::Overflow(format!("table storage 2^{n} x {s} x {lut_bits}")))
}

/// `W*B_w / (ceil(W/N)*index_bits + 2^N*S*B_l)`.
pub fn compression_ratio(w: u64, weight_bits: u32, n: u32, s: u64, lut_bits: u32, index_bits: u32) -> Result<f64> {
    if w == 0 || weight_bits == 0 || index_bits == 0 {
        return Err(Error::InvalidConfig(
            "parameter count, weight bits and index bits must be positive".into(),
        ));
    }
    let lut = lut_storage(n, s, lut_bits)? as u128;
    let index = w.div_ceil(n as u64) as u128 * index_bits as u128;
    let original = w as u128 * weight_bits as u128;
    Ok(original as f64 / (index + lut) as f64)
}

/// Bits per stored index; `log2(S)` is the packed alternative.
pub fn packed_index_bits(s: u64) -> u32 {
    s.max(2).next_power_of_two().trailing_zeros()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ReportConfig {
    /// `B_w`, also the charge per excluded weight.
    pub weight_bits: u32,
    pub lut_bits: u32,
    pub index_bits: u32,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            weight_bits: 8,
            lut_bits: 8,
            index_bits: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerStorage {
    pub index: usize,
    pub kind: &'static str,
    pub params: u64,
    pub excluded: bool,
    pub indices: u64,
    pub bits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionReport {
    /// Total parameter count `W`.
    pub params: u64,
    pub compressed_params: u64,
    pub weight_bits: u32,
    pub group_size: u32,
    pub pool_size: u64,
    pub lut_bits: u32,
    pub index_bits: u32,
    pub storage_lut_bits: u64,
    pub storage_index_bits: u64,
    pub storage_excluded_bits: u64,
    pub storage_total_bits: u64,
    pub original_bits: u64,
    pub compression_ratio: f64,
    /// Table share of the compressed storage, in percent.
    pub lut_overhead_pct: f64,
    pub layers: Vec<LayerStorage>,
}

impl CompressionReport {
    /// Aligned-column text table followed by the totals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>5}  {:<16} {:>10} {:>9} {:>12}", "layer", "kind", "params", "stored", "bits");
        for l in &self.layers {
            let stored = if l.excluded { "raw" } else { "indices" };
            let _ = writeln!(s, "{:>5}  {:<16} {:>10} {:>9} {:>12}", l.index, l.kind, l.params, stored, l.bits);
        }
        let _ = writeln!(s, "parameters (W)       {}", self.params);
        let _ = writeln!(
            s,
            "pool                 N={} S={} B_l={} index_bits={} B_w={}",
            self.group_size, self.pool_size, self.lut_bits, self.index_bits, self.weight_bits
        );
        let _ = writeln!(s, "storage lut bits     {}", self.storage_lut_bits);
        let _ = writeln!(s, "storage index bits   {}", self.storage_index_bits);
        let _ = writeln!(s, "storage raw bits     {}", self.storage_excluded_bits);
        let _ = writeln!(s, "storage total bits   {}", self.storage_total_bits);
        let _ = writeln!(s, "compression ratio    {:.3}", self.compression_ratio);
        let _ = writeln!(s, "lut overhead         {:.1}%", self.lut_overhead_pct);
        s
    }
}

struct Entry {
    spec: LayerSpec,
    excluded: bool,
    indices: u64,
}

fn assemble(entries: &[Entry], n: u32, s: u64, has_lut: bool, cfg: &ReportConfig) -> Result<CompressionReport> {
    let mut layers = Vec::with_capacity(entries.len());
    let (mut params, mut compressed, mut index_bits, mut raw_bits) = (0u64, 0u64, 0u64, 0u64);
    for (i, e) in entries.iter().enumerate() {
        let p = e.spec.weight_count() as u64;
        params += p;
        let bits = if e.excluded {
            p * cfg.weight_bits as u64
        } else {
            e.indices * cfg.index_bits as u64
        };
        if e.excluded {
            raw_bits += bits;
        } else {
            compressed += p;
            index_bits += bits;
        }
        layers.push(LayerStorage {
            index: i,
            kind: e.spec.kind.name(),
            params: p,
            excluded: e.excluded,
            indices: e.indices,
            bits,
        });
    }
    let lut = if has_lut { lut_storage(n, s, cfg.lut_bits)? } else { 0 };
    let total = lut + index_bits + raw_bits;
    let original = params * cfg.weight_bits as u64;
    Ok(CompressionReport {
        params,
        compressed_params: compressed,
        weight_bits: cfg.weight_bits,
        group_size: n,
        pool_size: s,
        lut_bits: cfg.lut_bits,
        index_bits: cfg.index_bits,
        storage_lut_bits: lut,
        storage_index_bits: index_bits,
        storage_excluded_bits: raw_bits,
        storage_total_bits: total,
        original_bits: original,
        compression_ratio: original as f64 / total as f64,
        lut_overhead_pct: 100.0 * lut as f64 / total as f64,
        layers,
    })
}

/// Storage of a compressed model: raw layers at `B_w` bits per weight,
/// pooled layers at `index_bits` per index, one table for the network.
pub fn model_compression_report(model: &CompressedModel, cfg: &ReportConfig) -> Result<CompressionReport> {
    let entries: Vec<Entry> = model
        .layers
        .iter()
        .map(|l| Entry {
            spec: l.spec,
            excluded: l.is_excluded(),
            indices: l.weights.as_pooled().map_or(0, |c| c.index_count() as u64),
        })
        .collect();
    let (n, s) = model.pool.as_ref().map_or((0, 0), |p| (p.group_size() as u32, p.len() as u64));
    assemble(&entries, n, s, model.pool.is_some(), cfg)
}

/// The same accounting from a layer inventory alone, without weights.
pub fn inventory_report(
    specs: &[LayerSpec],
    exclusions: &Exclusions,
    n: u32,
    s: u64,
    cfg: &ReportConfig,
) -> Result<CompressionReport> {
    if n == 0 {
        return Err(Error::InvalidConfig("group size must be positive".into()));
    }
    let entries: Vec<Entry> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let excluded = exclusions.excludes(i, spec);
            let indices = if excluded {
                0
            } else {
                (spec.out_ch * spec.kh * spec.kw * spec.filter_depth().div_ceil(n as usize)) as u64
            };
            Entry {
                spec: *spec,
                excluded,
                indices,
            }
        })
        .collect();
    let any = entries.iter().any(|e| !e.excluded);
    assemble(&entries, n, s, any, cfg)
}
