use log::warn;

use super::trace::{AccessTrace, Phase, Recorder, Region};
use super::{CacheMode, EngineConfig, ExecStats, MemoryModel};
use crate::error::{Error, Result};
use crate::model::{check_act_bits, flatten_for, LayerKind, LayerSpec};
use crate::pooler::CompressedLayer;
use crate::quant::{bit_decompose, LutOrder, LutTable};
use crate::tensor::Tensor;

/// Table blocks matching the current bit rows, copied to SRAM.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveCache {
    patterns: Vec<u32>,
    /// Block holding each executed row, MSB first.
    slots: Vec<usize>,
    entries: Vec<i32>,
    pool_size: usize,
    entry_bits: u32,
}

impl ActiveCache {
    /// Distinct row patterns, in first-seen order.
    pub fn patterns(&self) -> &[u32] {
        &self.patterns
    }

    pub fn blocks(&self) -> usize {
        self.patterns.len()
    }

    pub fn bytes(&self) -> usize {
        self.blocks() * block_bytes(self.pool_size, self.entry_bits)
    }

    /// Entry for pool vector `s` under executed row `row`.
    #[inline]
    pub fn entry(&self, row: usize, s: usize) -> i32 {
        self.entries[self.slots[row] * self.pool_size + s]
    }
}

fn block_bytes(pool_size: usize, bits: u32) -> usize {
    (pool_size * bits as usize).div_ceil(8)
}

/// Copies one block of `S` entries per distinct row pattern into SRAM.
///
/// Input-ordered blocks are contiguous and move in flash bursts; a
/// weight-ordered table is gathered entry by entry.
pub fn cache_active_lut(lut: &LutTable, rows: &[u32], mem: &MemoryModel, rec: &mut Recorder) -> ActiveCache {
    let s = lut.pool_size();
    let bb = block_bytes(s, lut.bits());
    let mut patterns: Vec<u32> = Vec::with_capacity(rows.len());
    let mut slots = Vec::with_capacity(rows.len());
    let mut entries = Vec::with_capacity(rows.len() * s);
    for &p in rows {
        if let Some(slot) = patterns.iter().position(|&q| q == p) {
            slots.push(slot);
            continue;
        }
        let slot = patterns.len();
        patterns.push(p);
        slots.push(slot);
        match lut.order() {
            LutOrder::InputOriented => {
                let base = (p as usize * bb) as u64;
                let burst = mem.flash_burst_bytes;
                for word in 0..bb.div_ceil(burst) {
                    rec.flash_read(Region::Lut, base + (word * burst) as u64);
                    rec.sram_write(Region::Cache, (slot * bb + word * burst) as u64);
                }
                entries.extend_from_slice(lut.block(p).expect("input-ordered table has blocks"));
            }
            LutOrder::WeightOriented => {
                for k in 0..s {
                    rec.flash_read(Region::Lut, lut.address(p, k) as u64);
                    rec.sram_write(Region::Cache, (slot * s + k) as u64);
                    entries.push(lut.get(p, k));
                }
            }
        }
        rec.stats.cache_blocks += 1;
        rec.stats.cache_entries += s as u64;
    }
    let cache = ActiveCache {
        patterns,
        slots,
        entries,
        pool_size: s,
        entry_bits: lut.bits(),
    };
    rec.stats.peak_cache_bytes = rec.stats.peak_cache_bytes.max(cache.bytes() as u64);
    cache
}

#[derive(Clone, Copy)]
enum Source<'a> {
    Flash(&'a LutTable),
    Cached(&'a ActiveCache),
}

impl Source<'_> {
    #[inline]
    fn lookup(self, row: usize, pattern: u32, s: usize, rec: &mut Recorder) -> i64 {
        rec.stats.lut_lookups += 1;
        match self {
            Source::Flash(t) => {
                rec.stats.lut_flash_reads += 1;
                rec.flash_read(Region::Lut, t.address(pattern, s) as u64);
                t.get(pattern, s) as i64
            }
            Source::Cached(c) => {
                rec.sram_read(Region::Cache, (c.slots[row] * c.pool_size + s) as u64);
                c.entry(row, s) as i64
            }
        }
    }

    /// MSB-first shift-accumulate over the executed rows.
    #[inline]
    fn bit_serial(self, rows: &[u32], s: usize, rec: &mut Recorder) -> i64 {
        let mut acc = 0i64;
        for (r, &p) in rows.iter().enumerate() {
            acc = (acc << 1) + self.lookup(r, p, s, rec);
        }
        rec.stats.shifts += rows.len() as u64;
        rec.stats.accumulates += rows.len() as u64;
        acc
    }
}

/// Full bit-serial result for every pool vector, stored once in SRAM.
/// `rows` are the executed bit rows, MSB first.
pub fn precompute_block(rows: &[u32], lut: &LutTable, cache: Option<&ActiveCache>, rec: &mut Recorder) -> Vec<i64> {
    let src = match cache {
        Some(c) => Source::Cached(c),
        None => Source::Flash(lut),
    };
    (0..lut.pool_size())
        .map(|s| {
            let v = src.bit_serial(rows, s, rec);
            rec.sram_write(Region::Precomputed, s as u64);
            v
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ConvOutcome {
    /// Integer outputs; one unit is `2^lut.scale_exp()` times the input scale.
    pub output: Tensor<i64>,
    pub stats: ExecStats,
    pub precompute: bool,
    pub cached: bool,
    pub trace: Option<AccessTrace>,
}

/// Runs one pooled layer with the bit-serial lookup schedule.
///
/// `input` holds `input_bits`-bit activations shaped `(h, w, c)`; the top
/// `cfg.act_bits` rows are executed and the result is shifted back to the
/// `input_bits` scale. Taps in the padding border run as zero vectors.
pub fn conv_bitserial(
    input: &Tensor<u8>,
    input_bits: u32,
    spec: &LayerSpec,
    layer: &CompressedLayer,
    lut: &LutTable,
    cfg: &EngineConfig,
    mem: &MemoryModel,
) -> Result<ConvOutcome> {
    cfg.validate()?;
    mem.validate()?;
    check_act_bits(input_bits)?;
    if cfg.act_bits > input_bits {
        return Err(Error::InvalidConfig(format!(
            "cannot execute {} bit rows of {input_bits}-bit activations",
            cfg.act_bits
        )));
    }
    spec.validate()?;
    if spec.kind == LayerKind::Depthwise {
        return Err(Error::InvalidModel("depthwise layers cannot run from the pool".into()));
    }
    if lut.group_size() != layer.group_size {
        return Err(Error::LutMismatch(format!(
            "table patterns are {} wide, layer groups {} channels",
            lut.group_size(),
            layer.group_size
        )));
    }
    layer.validate(lut.pool_size())?;
    let input = flatten_for(spec, input.clone())?;
    let (h, w, c) = input.hwc()?;
    let [oh, ow, oc] = spec.output_shape([h, w, c])?;
    let n = layer.group_size;
    let groups = layer.groups();
    let expected = [spec.out_ch, spec.kh, spec.kw, c.div_ceil(n)];
    if layer.indices.shape() != expected.as_slice() || layer.in_ch() != c {
        return Err(Error::ShapeMismatch(format!(
            "index array {:?} does not fit layer {spec:?}",
            layer.indices.shape()
        )));
    }
    let limit = 1u32 << input_bits;
    if let Some(&v) = input.data().iter().find(|&&v| v as u32 >= limit) {
        return Err(Error::ValueOutOfRange {
            value: v as i64,
            bits: input_bits,
        });
    }

    let k = cfg.act_bits as usize;
    let s = lut.pool_size();
    let precompute = cfg.uses_precompute(oc, s);
    let need = h * w * c + oh * ow * oc + k * block_bytes(s, lut.bits()) + if precompute { s * 4 } else { 0 };
    let cached = match cfg.cache {
        CacheMode::Off => false,
        _ if need <= mem.sram_bytes => true,
        CacheMode::Force => {
            return Err(Error::CapacityExceeded {
                need,
                available: mem.sram_bytes,
            })
        }
        CacheMode::Auto => {
            warn!(
                "active table cache needs {need} bytes of SRAM with activations, {} available; caching disabled",
                mem.sram_bytes
            );
            false
        }
    };

    let mut rec = Recorder::new(cfg.trace);
    let mut out = vec![0i64; oh * ow * oc];
    let idx = layer.indices.data();
    let act = input.data();
    let mut group = vec![0u8; n];
    for oy in 0..oh {
        for ox in 0..ow {
            let obase = (oy * ow + ox) * oc;
            for ky in 0..spec.kh {
                for kx in 0..spec.kw {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                    let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                    for g in 0..groups {
                        rec.set_phase(Phase::Unpack);
                        for (i, slot) in group.iter_mut().enumerate() {
                            let ch = g * n + i;
                            if inside && ch < c {
                                let a = (iy as usize * w + ix as usize) * c + ch;
                                *slot = act[a];
                                rec.sram_read(Region::Activation, a as u64);
                            } else {
                                *slot = 0;
                                rec.sram_read(Region::Activation, u64::MAX);
                            }
                        }
                        let rows: Vec<u32> = bit_decompose(&group, input_bits)?.top_rows(k).collect();
                        rec.stats.unpack_ops += (k * n) as u64;
                        for r in 0..k {
                            rec.sram_write(Region::BitRow, r as u64);
                        }

                        let cache = if cached {
                            rec.set_phase(Phase::CacheFill);
                            Some(cache_active_lut(lut, &rows, mem, &mut rec))
                        } else {
                            None
                        };
                        let src = match &cache {
                            Some(c) => Source::Cached(c),
                            None => Source::Flash(lut),
                        };
                        let tap = (ky * spec.kw + kx) * groups + g;
                        let filter_stride = spec.kh * spec.kw * groups;
                        if precompute {
                            rec.stats.groups_precompute += 1;
                            rec.set_phase(Phase::Precompute);
                            let pre = precompute_block(&rows, lut, cache.as_ref(), &mut rec);
                            rec.set_phase(Phase::Filter);
                            for f in 0..oc {
                                let ia = f * filter_stride + tap;
                                rec.stats.index_reads += 1;
                                rec.flash_read(Region::Index, ia as u64);
                                let p = idx[ia] as usize;
                                rec.stats.lut_lookups += 1;
                                rec.sram_read(Region::Precomputed, p as u64);
                                accumulate(&mut out, obase + f, pre[p], &mut rec);
                            }
                        } else {
                            rec.stats.groups_direct += 1;
                            rec.set_phase(Phase::Filter);
                            for f in 0..oc {
                                let ia = f * filter_stride + tap;
                                rec.stats.index_reads += 1;
                                rec.flash_read(Region::Index, ia as u64);
                                let v = src.bit_serial(&rows, idx[ia] as usize, &mut rec);
                                accumulate(&mut out, obase + f, v, &mut rec);
                            }
                        }
                    }
                }
            }
        }
    }
    let align = input_bits as usize - k;
    if align > 0 {
        for v in &mut out {
            *v <<= align;
        }
        rec.stats.shifts += out.len() as u64;
    }
    rec.stats.finish(mem);
    Ok(ConvOutcome {
        output: Tensor::new(vec![oh, ow, oc], out)?,
        stats: rec.stats,
        precompute,
        cached,
        trace: rec.trace,
    })
}

#[inline]
fn accumulate(out: &mut [i64], o: usize, v: i64, rec: &mut Recorder) {
    rec.sram_read(Region::Output, o as u64);
    out[o] += v;
    rec.stats.accumulates += 1;
    rec.sram_write(Region::Output, o as u64);
}
