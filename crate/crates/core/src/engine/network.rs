use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use super::trace::AccessTrace;
use super::{conv_bitserial, EngineConfig, ExecStats, MemoryModel};
use crate::error::{Error, Result};
use crate::model::{
    flatten_for, forward_f32, quantize_weights_symmetric, reference_conv_int, relu_in_place, ForwardTrace,
};
use crate::pooler::{CompressedModel, LayerWeights};
use crate::quant::{build_lut, quantize_activations, search_activation_range, ActRange, LutTable};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecPath {
    BitSerial,
    /// Integer convolution with per-layer quantized raw weights.
    Reference,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: &'static str,
    pub path: ExecPath,
    pub input_bits: u32,
    pub executed_bits: u32,
    pub precompute: bool,
    pub cached: bool,
    pub stats: ExecStats,
    #[serde(skip)]
    pub trace: Option<AccessTrace>,
}

#[derive(Clone, Debug, Serialize)]
pub struct NetworkRun {
    pub layers: Vec<LayerReport>,
    pub total: ExecStats,
}

/// The table the engine will use: the embedded one when its width
/// matches `cfg.lut_bits`, otherwise one built from the pool.
pub fn prepare_lut(model: &CompressedModel, cfg: &EngineConfig) -> Result<Option<LutTable>> {
    let Some(pool) = &model.pool else {
        return Ok(None);
    };
    match &model.lut {
        Some(t) if t.bits() == cfg.lut_bits => {
            t.check_matches(pool)?;
            Ok(Some(t.reordered(cfg.order)))
        }
        _ => Ok(Some(build_lut(pool, cfg.lut_bits, cfg.order, model.weight_bits)?)),
    }
}

/// Runs every layer in order: pooled layers through the bit-serial
/// engine, excluded layers through integer reference convolution. Each
/// layer input is quantized with its calibrated range and the low bits
/// beyond `cfg.act_bits` are dropped on both paths.
pub fn run_network(
    model: &CompressedModel,
    input: &Tensor,
    cfg: &EngineConfig,
    mem: &MemoryModel,
) -> Result<(Tensor, NetworkRun)> {
    cfg.validate()?;
    mem.validate()?;
    model.validate()?;
    if input.shape() != model.input_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "network input is {:?}, model expects {:?}",
            input.shape(),
            model.input_shape
        )));
    }
    input.check_finite("network input")?;
    let lut = prepare_lut(model, cfg)?;
    let mut x = input.clone();
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut total = ExecStats::default();
    for i in 0..model.layers.len() {
        let (y, report) = run_layer(model, i, &x, lut.as_ref(), cfg, mem).map_err(|e| e.in_layer(i))?;
        total += report.stats;
        layers.push(report);
        x = y;
    }
    Ok((x, NetworkRun { layers, total }))
}

fn run_layer(
    model: &CompressedModel,
    i: usize,
    x: &Tensor,
    lut: Option<&LutTable>,
    cfg: &EngineConfig,
    mem: &MemoryModel,
) -> Result<(Tensor, LayerReport)> {
    let rec = &model.layers[i];
    let qp = rec.input_quant.ok_or(Error::MissingCalibration { layer: i })?;
    let q_bits = qp.bits;
    if cfg.act_bits > q_bits {
        warn!(
            "layer {i} calibrated at {q_bits} bits; executing {q_bits} rows instead of {}",
            cfg.act_bits
        );
    }
    let k = cfg.act_bits.min(q_bits);
    let (q, _) = quantize_activations(x, q_bits, ActRange::new(qp.range_hi())?)?;
    let q = flatten_for(&rec.spec, q)?;
    let act_scale = qp.scale as f64;

    let (mut y, report) = match &rec.weights {
        LayerWeights::Pooled(layer) => {
            let lut = lut.ok_or(Error::EmptyPool)?;
            let layer_cfg = EngineConfig {
                act_bits: k,
                ..cfg.clone()
            };
            let out = conv_bitserial(&q, q_bits, &rec.spec, layer, lut, &layer_cfg, mem)?;
            let unit = 2f64.powi(lut.scale_exp()) * act_scale;
            let y = out.output.map(|&v| (v as f64 * unit) as f32);
            let report = LayerReport {
                index: i,
                kind: rec.spec.kind.name(),
                path: ExecPath::BitSerial,
                input_bits: q_bits,
                executed_bits: k,
                precompute: out.precompute,
                cached: out.cached,
                stats: out.stats,
                trace: out.trace,
            };
            (y, report)
        }
        LayerWeights::Excluded(raw) => {
            let drop = q_bits - k;
            let q = q.map(|&v| (v >> drop) << drop);
            let (wq, w_scale) = quantize_weights_symmetric(raw, model.weight_bits)?;
            let out = reference_conv_int(&q, q_bits, &rec.spec, &wq, model.weight_bits)?;
            let unit = w_scale as f64 * act_scale;
            let y = out.map(|&v| (v as f64 * unit) as f32);
            let mut stats = reference_stats(rec.spec.kh * rec.spec.kw * rec.spec.filter_depth(), out.len());
            stats.finish(mem);
            let report = LayerReport {
                index: i,
                kind: rec.spec.kind.name(),
                path: ExecPath::Reference,
                input_bits: q_bits,
                executed_bits: k,
                precompute: false,
                cached: false,
                stats,
                trace: None,
            };
            (y, report)
        }
    };
    if let Some(bias) = &rec.bias {
        for px in y.data_mut().chunks_exact_mut(rec.spec.out_ch) {
            for (v, b) in px.iter_mut().zip(bias) {
                *v += *b;
            }
        }
    }
    if rec.spec.has_relu {
        relu_in_place(&mut y);
    }
    Ok((y, report))
}

/// Byte-wide multiply-accumulate kernel: one flash weight read and one
/// SRAM activation read per tap, one SRAM store per output.
fn reference_stats(taps_per_output: usize, outputs: usize) -> ExecStats {
    let macs = (taps_per_output * outputs) as u64;
    ExecStats {
        flash_reads: macs,
        sram_reads: macs,
        sram_writes: outputs as u64,
        macs,
        ..Default::default()
    }
}

/// Sets every layer's input range from float forward passes over the
/// pool-reconstructed model, then bumps the model revision.
pub fn calibrate(model: &mut CompressedModel, samples: &[Tensor], act_bits: u32) -> Result<Vec<ActRange>> {
    if samples.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let graph = model.reconstruct()?;
    let traces: Vec<ForwardTrace> = samples
        .par_iter()
        .map(|x| {
            let mut t = ForwardTrace::default();
            forward_f32(&graph, x, Some(&mut t))?;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let mut ranges = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter_mut().enumerate() {
        let values: Vec<f32> = traces
            .iter()
            .flat_map(|t| t.layer_inputs[i].data().iter().copied())
            .collect();
        let range = search_activation_range(&values, act_bits).map_err(|e| e.in_layer(i))?;
        layer.input_quant = Some(range.quant_params(act_bits)?);
        ranges.push(range);
    }
    model.revision = model.revision.wrapping_add(1);
    Ok(ranges)
}
