//! `WPNN` v1 model container and the raw tensor interchange format.
//!
//! WPNN layout (all integers little-endian):
//!
//! ```text
//! "WPNN"  u16 version  u32 h  u32 w  u32 c  u32 layer_count
//! per layer:
//!   u8 kind  u32 in_ch  u32 out_ch  u32 kh  u32 kw  u32 stride  u32 pad
//!   u8 flags (bit0 relu, bit1 bias, bit2 input quantization)
//!   u32 weight_count  f32 x weight_count          (out_ch, kh, kw, depth)
//!   [u32 bias_count   f32 x bias_count]           if bit1
//!   [u8 bits          f32 scale]                  if bit2
//! ```
//!
//! Raw tensors (`WPTR`) carry `u8 rank`, `rank x u32` extents and the f32
//! payload; external scripts use them to hand fixtures to the toolchain.

use std::fs;
use std::path::Path;

use super::{Layer, LayerKind, LayerSpec, ModelGraph, QuantParams};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MODEL_MAGIC: [u8; 4] = *b"WPNN";
pub const MODEL_VERSION: u16 = 1;
pub const RAW_TENSOR_MAGIC: [u8; 4] = *b"WPTR";

const FLAG_RELU: u8 = 1;
const FLAG_BIAS: u8 = 1 << 1;
const FLAG_QUANT: u8 = 1 << 2;
const KNOWN_FLAGS: u8 = FLAG_RELU | FLAG_BIAS | FLAG_QUANT;

pub fn save_model(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(graph)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let bytes = fs::read(path)?;
    decode_model(&bytes)
}

pub(crate) fn encode_model(graph: &ModelGraph) -> Result<Vec<u8>> {
    graph.validate()?;
    let mut w = ByteWriter::new();
    w.bytes(&MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    for d in graph.input_shape {
        w.usize32(d)?;
    }
    w.usize32(graph.layers.len())?;
    for layer in &graph.layers {
        write_spec(&mut w, &layer.spec)?;
        let mut flags = 0;
        if layer.spec.has_relu {
            flags |= FLAG_RELU;
        }
        if layer.bias.is_some() {
            flags |= FLAG_BIAS;
        }
        if layer.input_quant.is_some() {
            flags |= FLAG_QUANT;
        }
        w.u8(flags);
        w.usize32(layer.weights.len())?;
        w.f32_slice(layer.weights.data());
        if let Some(bias) = &layer.bias {
            w.usize32(bias.len())?;
            w.f32_slice(bias);
        }
        if let Some(q) = &layer.input_quant {
            w.u8(q.bits as u8);
            w.f32(q.scale);
        }
    }
    Ok(w.into_inner())
}

pub(crate) fn decode_model(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = ByteReader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "WPNN",
            version,
        });
    }
    let input_shape = [
        r.usize32("input shape")?,
        r.usize32("input shape")?,
        r.usize32("input shape")?,
    ];
    let count = r.usize32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        layers.push(read_layer(&mut r).map_err(|e| e.in_layer(i))?);
    }
    r.finish("WPNN model")?;
    ModelGraph::new(input_shape, layers)
}

pub(crate) fn write_spec(w: &mut ByteWriter, spec: &LayerSpec) -> Result<()> {
    w.u8(spec.kind.tag());
    for v in [spec.in_ch, spec.out_ch, spec.kh, spec.kw, spec.stride, spec.pad] {
        w.usize32(v)?;
    }
    Ok(())
}

/// Reads the kind tag and geometry; `has_relu` comes from the flags byte.
pub(crate) fn read_spec(r: &mut ByteReader) -> Result<LayerSpec> {
    let kind = LayerKind::from_tag(r.u8("layer kind")?)?;
    Ok(LayerSpec {
        kind,
        in_ch: r.usize32("layer shape")?,
        out_ch: r.usize32("layer shape")?,
        kh: r.usize32("layer shape")?,
        kw: r.usize32("layer shape")?,
        stride: r.usize32("layer shape")?,
        pad: r.usize32("layer shape")?,
        has_relu: false,
    })
}

fn read_layer(r: &mut ByteReader) -> Result<Layer> {
    let mut spec = read_spec(r)?;
    let flags = r.u8("layer flags")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::InvalidModel(format!("unknown layer flags {flags:#04x}")));
    }
    spec.has_relu = flags & FLAG_RELU != 0;
    spec.validate()?;
    let count = r.usize32("weight count")?;
    if count != spec.weight_count() {
        return Err(Error::ShapeMismatch(format!(
            "weight payload declares {count} values, layer needs {}",
            spec.weight_count()
        )));
    }
    let weights = Tensor::new(spec.weight_shape(), r.f32_vec(count, "weight payload")?)?;
    let bias = if flags & FLAG_BIAS != 0 {
        let n = r.usize32("bias count")?;
        if n != spec.out_ch {
            return Err(Error::ShapeMismatch(format!(
                "bias declares {n} values for {} filters",
                spec.out_ch
            )));
        }
        Some(r.f32_vec(n, "bias payload")?)
    } else {
        None
    };
    let input_quant = if flags & FLAG_QUANT != 0 {
        let bits = r.u8("quant bits")? as u32;
        Some(QuantParams::new(bits, r.f32("quant scale")?)?)
    } else {
        None
    };
    let mut layer = Layer::new(spec, weights, bias)?;
    layer.input_quant = input_quant;
    Ok(layer)
}

pub fn write_raw_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_raw_tensor(tensor)?)?;
    Ok(())
}

pub fn read_raw_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_raw_tensor(&fs::read(path)?)
}

pub(crate) fn encode_raw_tensor(tensor: &Tensor) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(&RAW_TENSOR_MAGIC);
    w.u8(tensor.shape().len() as u8);
    for &d in tensor.shape() {
        w.usize32(d)?;
    }
    w.f32_slice(tensor.data());
    Ok(w.into_inner())
}

pub(crate) fn decode_raw_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes);
    r.magic(RAW_TENSOR_MAGIC)?;
    let rank = r.u8("tensor rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::ShapeMismatch(format!("tensor rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| r.usize32("tensor extent"))
        .collect::<Result<Vec<_>>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Overflow("tensor element count".into()))?;
    let data = r.f32_vec(numel, "tensor payload")?;
    r.finish("raw tensor")?;
    let t = Tensor::new(shape, data)?;
    t.check_finite("raw tensor")?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, spec: LayerSpec, bias: bool) -> Layer {
        let data = (0..spec.weight_count()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let weights = Tensor::new(spec.weight_shape(), data).unwrap();
        let bias = bias.then(|| (0..spec.out_ch).map(|_| rng.gen_range(-0.1f32..0.1)).collect());
        Layer::new(spec, weights, bias).unwrap()
    }

    /// Layer 0 carries exactly 1000 weights (8 x 5 x 5 x 5).
    fn two_layer_net() -> ModelGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l0 = random_layer(&mut rng, LayerSpec::conv(5, 8, 5, 1, 2), true);
        let mut l1 = random_layer(&mut rng, LayerSpec::conv(8, 4, 1, 1, 0).with_relu(false), false);
        l1.input_quant = Some(QuantParams::new(6, 0.125).unwrap());
        ModelGraph::new([6, 6, 5], vec![l0, l1]).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let g = two_layer_net();
        let bytes = encode_model(&g).unwrap();
        assert_eq!(decode_model(&bytes).unwrap(), g);
    }

    #[test]
    fn deterministic_and_stable_under_reencode() {
        let g = two_layer_net();
        let a = encode_model(&g).unwrap();
        let b = encode_model(&g).unwrap();
        assert_eq!(a, b);
        let again = encode_model(&decode_model(&a).unwrap()).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut bytes = encode_model(&two_layer_net()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut bytes = encode_model(&two_layer_net()).unwrap();
        bytes[4] = 9;
        assert!(matches!(
            decode_model(&bytes),
            Err(Error::UnsupportedVersion { version: 9, .. })
        ));
    }

    #[test]
    fn truncated_payload_rejected() {
        let g = two_layer_net();
        assert_eq!(g.layers[0].weights.len(), 1000);
        let bytes = encode_model(&g).unwrap();
        // header (4 + 2 + 12 + 4) + spec (1 + 24) + flags (1) + count (4)
        let payload_start = 22 + 25 + 1 + 4;
        let cut = &bytes[..payload_start + 999 * 4];
        match decode_model(cut) {
            Err(Error::Layer { layer: 0, source }) => assert!(matches!(
                *source,
                Error::Truncated {
                    what: "weight payload",
                    needed: 4000,
                    available: 3996
                }
            )),
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn declared_count_mismatch_is_shape_error() {
        let mut bytes = encode_model(&two_layer_net()).unwrap();
        let count_at = 22 + 25 + 1;
        bytes[count_at..count_at + 4].copy_from_slice(&999u32.to_le_bytes());
        match decode_model(&bytes) {
            Err(Error::Layer { source, .. }) => {
                assert!(matches!(*source, Error::ShapeMismatch(_)))
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        let mut bytes = encode_model(&two_layer_net()).unwrap();
        bytes[22] = 7;
        match decode_model(&bytes) {
            Err(Error::Layer { source, .. }) => {
                assert!(matches!(*source, Error::UnknownLayerKind(7)))
            }
            other => panic!("expected unknown kind, got {other:?}"),
        }
    }

    #[test]
    fn zero_layer_graph_cannot_be_saved() {
        let g = ModelGraph {
            input_shape: [1, 1, 1],
            layers: vec![],
        };
        assert!(matches!(encode_model(&g), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn raw_tensor_round_trip() {
        let t = Tensor::new(vec![2, 3, 1], vec![0.5, -1.0, 2.0, 3.5, 0.0, 1e-3]).unwrap();
        let bytes = encode_raw_tensor(&t).unwrap();
        assert_eq!(&bytes[..4], b"WPTR");
        assert_eq!(decode_raw_tensor(&bytes).unwrap(), t);
        assert!(decode_raw_tensor(&bytes[..bytes.len() - 1]).is_err());
    }
}
