use std::fmt::Write as _;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{conv_bitserial, CacheMode, EngineConfig, MemoryModel, PrecomputeMode};
use crate::error::{Error, Result};
use crate::model::LayerSpec;
use crate::pooler::{CompressedLayer, PoolProvenance, WeightPool, WeightVector, DEFAULT_SEED};
use crate::quant::build_lut;
use crate::tensor::Tensor;

/// A synthetic square-input 3x3 convolution with random pool, indices and
/// 8-bit activations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchLayer {
    pub size: usize,
    pub in_ch: usize,
    pub filters: usize,
    pub kernel: usize,
    pub group_size: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for BenchLayer {
    fn default() -> Self {
        BenchLayer {
            size: 16,
            in_ch: 128,
            filters: 128,
            kernel: 3,
            group_size: 8,
            pool_size: 64,
            seed: DEFAULT_SEED,
        }
    }
}

struct Instance {
    spec: LayerSpec,
    layer: CompressedLayer,
    pool: WeightPool,
    input: Tensor<u8>,
}

impl BenchLayer {
    fn instantiate(&self) -> Result<Instance> {
        if self.size == 0 || self.in_ch == 0 || self.filters == 0 || self.kernel == 0 {
            return Err(Error::InvalidConfig(format!("degenerate bench layer {self:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.group_size;
        let s = self.pool_size;
        let vectors = (0..s)
            .map(|_| WeightVector((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
            .collect();
        let pool = WeightPool::new(
            vectors,
            PoolProvenance {
                seed: self.seed,
                iterations: 0,
                inertia: 0.0,
            },
        )?;
        let spec = LayerSpec::conv(self.in_ch, self.filters, self.kernel, 1, self.kernel / 2);
        let groups = self.in_ch.div_ceil(n);
        let count = self.filters * self.kernel * self.kernel * groups;
        let indices = (0..count).map(|_| rng.gen_range(0..s) as u16).collect();
        let layer = CompressedLayer {
            indices: Tensor::new(vec![self.filters, self.kernel, self.kernel, groups], indices)?,
            group_size: n,
            pad_tail: groups * n - self.in_ch,
        };
        let len = self.size * self.size * self.in_ch;
        let input = Tensor::new(vec![self.size, self.size, self.in_ch], (0..len).map(|_| rng.gen()).collect())?;
        Ok(Instance {
            spec,
            layer,
            pool,
            input,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub series: String,
    pub filters: usize,
    pub bits: u32,
    pub modeled_cycles: u64,
    pub speedup: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SpeedupCurve {
    pub rows: Vec<SpeedupRow>,
}

impl SpeedupCurve {
    pub fn series(&self, name: &str) -> impl Iterator<Item = &SpeedupRow> + '_ {
        let name = name.to_string();
        self.rows.iter().filter(move |r| r.series == name)
    }

    pub fn find(&self, series: &str, filters: usize, bits: u32) -> Option<&SpeedupRow> {
        self.rows
            .iter()
            .find(|r| r.series == series && r.filters == filters && r.bits == bits)
    }

    pub fn write_csv(&self, out: impl io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:>7} {:>4} {:>14} {:>8}", "series", "filters", "bits", "cycles", "speedup");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<20} {:>7} {:>4} {:>14} {:>8.3}",
                r.series, r.filters, r.bits, r.modeled_cycles, r.speedup
            );
        }
        s
    }
}

fn cycles(inst: &Instance, cfg: &EngineConfig, mem: &MemoryModel) -> Result<u64> {
    let lut = build_lut(&inst.pool, cfg.lut_bits, cfg.order, 8)?;
    let out = conv_bitserial(&inst.input, 8, &inst.spec, &inst.layer, &lut, cfg, mem)?;
    Ok(out.stats.modeled_cycles)
}

/// Modeled cycles per executed bitwidth, with and without precompute,
/// each series normalized to its own 8-bit run.
pub fn speedup_curve(layer: &BenchLayer, cfg: &EngineConfig, mem: &MemoryModel, bits: &[u32]) -> Result<SpeedupCurve> {
    if bits.is_empty() {
        return Err(Error::InvalidConfig("empty bitwidth sweep".into()));
    }
    let inst = layer.instantiate()?;
    let series = [("precompute-off", PrecomputeMode::Off), ("precompute-on", PrecomputeMode::On)];
    let mut points: Vec<(usize, u32)> = Vec::new();
    for si in 0..series.len() {
        points.push((si, 8));
        points.extend(bits.iter().filter(|&&m| m != 8).map(|&m| (si, m)));
    }
    let measured: Vec<u64> = points
        .par_iter()
        .map(|&(si, m)| {
            let c = EngineConfig {
                act_bits: m,
                precompute: series[si].1,
                trace: false,
                ..cfg.clone()
            };
            cycles(&inst, &c, mem)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (si, (name, _)) in series.iter().enumerate() {
        let at = |m: u32| points.iter().position(|&p| p == (si, m)).map(|i| measured[i]);
        let base = at(8).expect("8-bit point always measured");
        for &m in bits {
            let c = at(m).expect("requested point measured");
            rows.push(SpeedupRow {
                series: name.to_string(),
                filters: layer.filters,
                bits: m,
                modeled_cycles: c,
                speedup: base as f64 / c as f64,
            });
        }
    }
    Ok(SpeedupCurve { rows })
}

/// Baseline (no caching, no precompute), caching alone, and precompute
/// with caching over a range of filter counts, each relative to the
/// baseline at the same filter count.
pub fn caching_sweep(layer: &BenchLayer, filters: &[usize], cfg: &EngineConfig, mem: &MemoryModel) -> Result<SpeedupCurve> {
    if filters.is_empty() {
        return Err(Error::InvalidConfig("empty filter sweep".into()));
    }
    let series = [
        ("baseline", PrecomputeMode::Off, CacheMode::Off),
        ("caching", PrecomputeMode::Off, CacheMode::Force),
        ("precompute+caching", PrecomputeMode::On, CacheMode::Force),
    ];
    let points: Vec<(usize, usize)> = filters
        .iter()
        .flat_map(|&f| (0..series.len()).map(move |si| (f, si)))
        .collect();
    let measured: Vec<u64> = points
        .par_iter()
        .map(|&(f, si)| {
            let inst = BenchLayer {
                filters: f,
                ..layer.clone()
            }
            .instantiate()?;
            let c = EngineConfig {
                precompute: series[si].1,
                cache: series[si].2,
                trace: false,
                ..cfg.clone()
            };
            cycles(&inst, &c, mem)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (fi, &f) in filters.iter().enumerate() {
        let base = measured[fi * series.len()];
        for (si, (name, _, _)) in series.iter().enumerate() {
            let c = measured[fi * series.len() + si];
            rows.push(SpeedupRow {
                series: name.to_string(),
                filters: f,
                bits: cfg.act_bits,
                modeled_cycles: c,
                speedup: base as f64 / c as f64,
            });
        }
    }
    Ok(SpeedupCurve { rows })
}
