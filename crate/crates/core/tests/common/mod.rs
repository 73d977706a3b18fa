#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wpool::model::LayerSpec;
use wpool::pooler::{CompressedLayer, PoolProvenance, WeightPool, WeightVector};
use wpool::quant::LutTable;
use wpool::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pool(rng: &mut ChaCha8Rng, s: usize, n: usize) -> WeightPool {
    let vectors = (0..s)
        .map(|_| WeightVector((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()))
        .collect();
    WeightPool::new(
        vectors,
        PoolProvenance {
            seed: 0,
            iterations: 0,
            inertia: 0.0,
        },
    )
    .unwrap()
}

pub struct Fixture {
    pub spec: LayerSpec,
    pub layer: CompressedLayer,
    pub pool: WeightPool,
    pub input: Tensor<u8>,
    pub bits: u32,
}

pub fn random_indices(rng: &mut ChaCha8Rng, spec: &LayerSpec, n: usize, s: usize) -> CompressedLayer {
    let groups = spec.in_ch.div_ceil(n);
    let count = spec.out_ch * spec.kh * spec.kw * groups;
    CompressedLayer {
        indices: Tensor::new(
            vec![spec.out_ch, spec.kh, spec.kw, groups],
            (0..count).map(|_| rng.gen_range(0..s as u16)).collect(),
        )
        .unwrap(),
        group_size: n,
        pad_tail: groups * n - spec.in_ch,
    }
}

pub fn random_input(rng: &mut ChaCha8Rng, shape: [usize; 3], bits: u32) -> Tensor<u8> {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(0..1u32 << bits) as u8).collect()).unwrap()
}

/// A small conv layer (or occasionally a dense one) with random pool,
/// indices and activations.
pub fn random_fixture(rng: &mut ChaCha8Rng) -> Fixture {
    let n = if rng.gen_bool(0.5) { 4 } else { 8 };
    let s = rng.gen_range(2..=16);
    let in_ch = rng.gen_range(1..=20);
    let filters = rng.gen_range(1..=24);
    let (spec, shape) = if rng.gen_bool(0.15) {
        (LayerSpec::fully_connected(in_ch, filters), [1, 1, in_ch])
    } else {
        let k = if rng.gen_bool(0.5) { 1 } else { 3 };
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=k / 2);
        let h = rng.gen_range(k..=7);
        let w = rng.gen_range(k..=7);
        (LayerSpec::conv(in_ch, filters, k, stride, pad), [h, w, in_ch])
    };
    let bits = rng.gen_range(1..=8);
    Fixture {
        layer: random_indices(rng, &spec, n, s),
        pool: random_pool(rng, s, n),
        input: random_input(rng, shape, bits),
        spec,
        bits,
    }
}

/// Pool values rounded at the table's weight step, substituted through the
/// index array with channel padding removed.
pub fn integer_weights(pool: &WeightPool, lut: &LutTable, layer: &CompressedLayer) -> Tensor<i32> {
    let step = 2f64.powi(lut.weight_exp());
    let q: Vec<Vec<i32>> = pool
        .vectors()
        .iter()
        .map(|v| v.values().iter().map(|&x| (x as f64 / step).round().clamp(-127.0, 127.0) as i32).collect())
        .collect();
    let shape = layer.indices.shape();
    let depth = layer.in_ch();
    let mut out = Vec::new();
    for tap in layer.indices.data().chunks(layer.groups()) {
        let mut row: Vec<i32> = tap.iter().flat_map(|&i| q[i as usize].iter().copied()).collect();
        row.truncate(depth);
        out.extend(row);
    }
    Tensor::new(vec![shape[0], shape[1], shape[2], depth], out).unwrap()
}
