use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{check_act_bits, QuantParams};
use crate::tensor::Tensor;

/// Percentiles of `|x|` tried as clip values before refinement.
pub const RANGE_PERCENTILES: [f64; 5] = [99.0, 99.5, 99.9, 99.99, 100.0];
const GOLDEN_STEPS: usize = 20;
const MSE_CHUNK: usize = 1 << 16;

/// Clip range `[0, hi]` of a layer's input activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ActRange {
    pub hi: f32,
}

impl ActRange {
    pub fn new(hi: f32) -> Result<Self> {
        if !(hi.is_finite() && hi > 0.0) {
            return Err(Error::InvalidConfig(format!("activation range hi must be positive, got {hi}")));
        }
        Ok(ActRange { hi })
    }

    pub fn lo(&self) -> f32 {
        0.0
    }

    pub fn quant_params(&self, bits: u32) -> Result<QuantParams> {
        check_act_bits(bits)?;
        QuantParams::new(bits, self.hi / ((1u32 << bits) - 1) as f32)
    }
}

/// `q = clamp(round(x * (2^M - 1) / hi), 0, 2^M - 1)`; negatives clamp to 0.
pub fn quantize_activations(t: &Tensor, bits: u32, range: ActRange) -> Result<(Tensor<u8>, QuantParams)> {
    let params = ActRange::new(range.hi)?.quant_params(bits)?;
    let levels = params.max_level() as f64;
    let hi = range.hi as f64;
    let q = t.map(|&x| quantize_one(x as f64, levels, hi) as u8);
    Ok((q, params))
}

fn quantize_one(x: f64, levels: f64, hi: f64) -> f64 {
    (x * levels / hi).round().clamp(0.0, levels)
}

fn quantization_mse(samples: &[f32], bits: u32, hi: f64) -> f64 {
    let levels = ((1u32 << bits) - 1) as f64;
    let step = hi / levels;
    // Fixed chunking keeps the floating sum independent of thread count.
    let partial: Vec<f64> = samples
        .par_chunks(MSE_CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&x| {
                    let x = x as f64;
                    let e = x - quantize_one(x, levels, hi) * step;
                    e * e
                })
                .sum()
        })
        .collect();
    partial.iter().sum::<f64>() / samples.len() as f64
}

fn percentile(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Picks the clip value minimizing mean squared quantization error.
///
/// Candidates are the [`RANGE_PERCENTILES`] of `|x|`; the best one is
/// refined by golden-section search between its neighbouring candidates
/// and kept unless the refinement does strictly better.
pub fn search_activation_range(calib: &[f32], bits: u32) -> Result<ActRange> {
    check_act_bits(bits)?;
    if calib.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if calib.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("calibration samples"));
    }
    if !calib.iter().any(|&x| x > 0.0) {
        warn!("calibration set has no positive activations; using range [0, 1]");
        return ActRange::new(1.0);
    }
    let mut mags: Vec<f32> = calib.iter().map(|x| x.abs()).collect();
    mags.par_sort_unstable_by(|a, b| a.total_cmp(b));

    let mut candidates: Vec<f64> = RANGE_PERCENTILES
        .iter()
        .map(|&p| percentile(&mags, p) as f64)
        .filter(|&c| c > 0.0)
        .collect();
    candidates.dedup();
    let scored: Vec<f64> = candidates.iter().map(|&c| quantization_mse(calib, bits, c)).collect();
    let best = scored
        .iter()
        .enumerate()
        .fold(0, |b, (i, &e)| if e < scored[b] { i } else { b });

    let lo = if best > 0 { candidates[best - 1] } else { candidates[best] * 0.5 };
    let hi = candidates.get(best + 1).copied().unwrap_or(candidates[best]);
    let mut chosen = (candidates[best], scored[best]);
    if hi > lo {
        let refined = golden_section(lo, hi, |h| quantization_mse(calib, bits, h));
        let err = quantization_mse(calib, bits, refined);
        if err < chosen.1 {
            chosen = (refined, err);
        }
    }
    ActRange::new(chosen.0 as f32)
}

fn golden_section(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - (b - a) * inv_phi;
    let mut d = a + (b - a) * inv_phi;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_STEPS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * inv_phi;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * inv_phi;
            fd = f(d);
        }
    }
    (a + b) / 2.0
}
