//! `WPNC` v1 compressed-model container.
//!
//! ```text
//! "WPNC"  u16 version  u32 revision  u32 h  u32 w  u32 c  u8 weight_bits
//! u8 has_pool
//!   [u32 S  u32 N  f32 x S*N  u64 seed  u32 iterations  f64 inertia]
//! u32 layer_count
//! per layer:
//!   u8 kind  u32 in_ch  u32 out_ch  u32 kh  u32 kw  u32 stride  u32 pad
//!   u8 flags (bit0 relu, bit1 bias, bit2 input quantization, bit3 excluded)
//!   excluded: u32 count  f32 x count
//!   pooled:   u8 pad_tail  u8 index_width (1 or 2)  u32 count  indices
//!   [u32 bias_count  f32 x bias_count]
//!   [u8 bits  f32 scale]
//! u8 has_lut  [u32 blob_len  lookup table blob]
//! ```
//!
//! Indices take one byte each while `S <= 256`.

use std::fs;
use std::path::Path;

use super::{CompressedLayer, CompressedLayerRecord, CompressedModel, LayerWeights, PoolProvenance, WeightPool, WeightVector};
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::{read_spec, write_spec, QuantParams};
use crate::quant::{decode_lut, encode_lut};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: [u8; 4] = *b"WPNC";
pub const CONTAINER_VERSION: u16 = 1;

const FLAG_RELU: u8 = 1;
const FLAG_BIAS: u8 = 1 << 1;
const FLAG_QUANT: u8 = 1 << 2;
const FLAG_EXCLUDED: u8 = 1 << 3;
const KNOWN_FLAGS: u8 = FLAG_RELU | FLAG_BIAS | FLAG_QUANT | FLAG_EXCLUDED;

pub fn save_compressed(model: &CompressedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_compressed(model)?)?;
    Ok(())
}

pub fn load_compressed(path: impl AsRef<Path>) -> Result<CompressedModel> {
    decode_compressed(&fs::read(path)?)
}

pub fn encode_compressed(model: &CompressedModel) -> Result<Vec<u8>> {
    model.validate()?;
    let mut w = ByteWriter::new();
    w.bytes(&CONTAINER_MAGIC);
    w.u16(CONTAINER_VERSION);
    w.u32(model.revision);
    for d in model.input_shape {
        w.usize32(d)?;
    }
    w.u8(model.weight_bits as u8);
    match &model.pool {
        None => w.u8(0),
        Some(pool) => {
            w.u8(1);
            w.usize32(pool.len())?;
            w.usize32(pool.group_size())?;
            for v in pool.vectors() {
                w.f32_slice(v.values());
            }
            w.u64(pool.provenance.seed);
            w.usize32(pool.provenance.iterations)?;
            w.f64(pool.provenance.inertia);
        }
    }
    let index_width = index_width(model.pool.as_ref().map_or(0, |p| p.len()));
    w.usize32(model.layers.len())?;
    for layer in &model.layers {
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
        if layer.is_excluded() {
            flags |= FLAG_EXCLUDED;
        }
        w.u8(flags);
        match &layer.weights {
            LayerWeights::Excluded(t) => {
                w.usize32(t.len())?;
                w.f32_slice(t.data());
            }
            LayerWeights::Pooled(c) => {
                w.u8(c.pad_tail as u8);
                w.u8(index_width);
                w.usize32(c.index_count())?;
                for &i in c.indices.data() {
                    if index_width == 1 {
                        w.u8(i as u8);
                    } else {
                        w.u16(i);
                    }
                }
            }
        }
        if let Some(bias) = &layer.bias {
            w.usize32(bias.len())?;
            w.f32_slice(bias);
        }
        if let Some(q) = &layer.input_quant {
            w.u8(q.bits as u8);
            w.f32(q.scale);
        }
    }
    match &model.lut {
        None => w.u8(0),
        Some(lut) => {
            w.u8(1);
            let blob = encode_lut(lut)?;
            w.usize32(blob.len())?;
            w.bytes(&blob);
        }
    }
    Ok(w.into_inner())
}

fn index_width(pool_size: usize) -> u8 {
    if pool_size <= 256 {
        1
    } else {
        2
    }
}

pub fn decode_compressed(bytes: &[u8]) -> Result<CompressedModel> {
    let mut r = ByteReader::new(bytes);
    r.magic(CONTAINER_MAGIC)?;
    let version = r.u16("version")?;
    if version != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "WPNC",
            version,
        });
    }
    let revision = r.u32("revision")?;
    let input_shape = [
        r.usize32("input shape")?,
        r.usize32("input shape")?,
        r.usize32("input shape")?,
    ];
    let weight_bits = r.u8("weight bits")? as u32;
    let pool = match r.u8("pool flag")? {
        0 => None,
        1 => Some(read_pool(&mut r)?),
        other => return Err(Error::InvalidModel(format!("bad pool flag {other}"))),
    };
    let count = r.usize32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        layers.push(read_record(&mut r, pool.as_ref()).map_err(|e| e.in_layer(i))?);
    }
    let lut = match r.u8("lookup table flag")? {
        0 => None,
        1 => {
            let len = r.usize32("lookup table length")?;
            Some(decode_lut(r.take(len, "lookup table")?)?)
        }
        other => return Err(Error::InvalidModel(format!("bad lookup table flag {other}"))),
    };
    r.finish("WPNC container")?;
    let model = CompressedModel {
        input_shape,
        layers,
        pool,
        weight_bits,
        lut,
        revision,
    };
    model.validate()?;
    Ok(model)
}

fn read_pool(r: &mut ByteReader) -> Result<WeightPool> {
    let s = r.usize32("pool size")?;
    let n = r.usize32("group size")?;
    let total = s.checked_mul(n).ok_or_else(|| Error::Overflow("pool dimensions".into()))?;
    let flat = r.f32_vec(total, "pool vectors")?;
    let vectors = flat.chunks(n.max(1)).map(|c| WeightVector(c.to_vec())).collect();
    let provenance = PoolProvenance {
        seed: r.u64("pool seed")?,
        iterations: r.usize32("pool iterations")?,
        inertia: r.f64("pool inertia")?,
    };
    WeightPool::new(vectors, provenance)
}

fn read_record(r: &mut ByteReader, pool: Option<&WeightPool>) -> Result<CompressedLayerRecord> {
    let mut spec = read_spec(r)?;
    let flags = r.u8("layer flags")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(Error::InvalidModel(format!("unknown layer flags {flags:#04x}")));
    }
    spec.has_relu = flags & FLAG_RELU != 0;
    spec.validate()?;
    let weights = if flags & FLAG_EXCLUDED != 0 {
        let count = r.usize32("weight count")?;
        if count != spec.weight_count() {
            return Err(Error::ShapeMismatch(format!(
                "weight payload declares {count} values, layer needs {}",
                spec.weight_count()
            )));
        }
        LayerWeights::Excluded(Tensor::new(spec.weight_shape(), r.f32_vec(count, "weight payload")?)?)
    } else {
        let pool = pool.ok_or(Error::EmptyPool)?;
        let n = pool.group_size();
        let pad_tail = r.u8("pad tail")? as usize;
        let width = r.u8("index width")?;
        if width != 1 && width != 2 {
            return Err(Error::InvalidModel(format!("index width {width} not 1 or 2")));
        }
        let groups = spec.filter_depth().div_ceil(n);
        let shape = vec![spec.out_ch, spec.kh, spec.kw, groups];
        let count = r.usize32("index count")?;
        if count != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "index payload declares {count} entries, layer needs {}",
                shape.iter().product::<usize>()
            )));
        }
        let raw = r.take(count * width as usize, "index payload")?;
        let indices: Vec<u16> = if width == 1 {
            raw.iter().map(|&b| b as u16).collect()
        } else {
            raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
        };
        LayerWeights::Pooled(CompressedLayer {
            indices: Tensor::new(shape, indices)?,
            group_size: n,
            pad_tail,
        })
    };
    let bias = if flags & FLAG_BIAS != 0 {
        let n = r.usize32("bias count")?;
        if n != spec.out_ch {
            return Err(Error::ShapeMismatch(format!("bias declares {n} values for {} filters", spec.out_ch)));
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
    Ok(CompressedLayerRecord {
        spec,
        weights,
        bias,
        input_quant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, LayerSpec, ModelGraph};
    use crate::pooler::{compress_model, PoolConfig};
    use crate::quant::{build_lut, LutOrder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn compressed() -> CompressedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layers = Vec::new();
        for spec in [LayerSpec::conv(3, 8, 3, 1, 1), LayerSpec::conv(8, 12, 3, 1, 1), LayerSpec::conv(12, 4, 1, 1, 0)] {
            let w = (0..spec.weight_count()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let bias = Some((0..spec.out_ch).map(|i| i as f32 * 0.1).collect());
            layers.push(Layer::new(spec, Tensor::new(spec.weight_shape(), w).unwrap(), bias).unwrap());
        }
        let g = ModelGraph::new([5, 5, 3], layers).unwrap();
        let cfg = PoolConfig {
            pool_size: 8,
            max_iter: 10,
            ..PoolConfig::default()
        };
        let (mut c, _) = compress_model(&g, &cfg).unwrap();
        c.layers[1].input_quant = Some(QuantParams::new(6, 0.25).unwrap());
        c.lut = Some(build_lut(c.pool.as_ref().unwrap(), 8, LutOrder::InputOriented, 8).unwrap());
        c
    }

    #[test]
    fn round_trip_and_determinism() {
        let c = compressed();
        let a = encode_compressed(&c).unwrap();
        let back = decode_compressed(&a).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode_compressed(&back).unwrap(), a);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut a = encode_compressed(&compressed()).unwrap();
        let cut = decode_compressed(&a[..a.len() - 3]);
        assert!(matches!(cut, Err(Error::Truncated { .. })));
        a[0] = b'X';
        assert!(matches!(decode_compressed(&a), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wide_pools_use_two_byte_indices() {
        assert_eq!(index_width(256), 1);
        assert_eq!(index_width(257), 2);
    }
}
