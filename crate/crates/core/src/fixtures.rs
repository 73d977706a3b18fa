//! Seeded synthetic networks with the layer inventories used in tests,
//! benchmarks and the CLI `gen-fixture` command.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Layer, LayerSpec, ModelGraph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    /// 3x3 stem plus 64- and 128-channel stages, 665,280 weights.
    ResNet10,
    /// ResNet10 plus a 256-channel stage, 2,729,664 weights.
    ResNet14,
    /// Small four-conv network with a dense head, about 81k weights.
    TinyConv,
    /// Pointwise / depthwise stack with a dense head.
    MobileNetLike,
    /// Small classifier for end-to-end agreement checks.
    Classifier,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 5] = [
        FixtureKind::ResNet10,
        FixtureKind::ResNet14,
        FixtureKind::TinyConv,
        FixtureKind::MobileNetLike,
        FixtureKind::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::ResNet10 => "resnet10",
            FixtureKind::ResNet14 => "resnet14",
            FixtureKind::TinyConv => "tinyconv",
            FixtureKind::MobileNetLike => "mobilenet",
            FixtureKind::Classifier => "classifier",
        }
    }

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            FixtureKind::ResNet10 | FixtureKind::ResNet14 => [32, 32, 3],
            FixtureKind::TinyConv => [28, 28, 1],
            FixtureKind::MobileNetLike => [16, 16, 3],
            FixtureKind::Classifier => [8, 8, 3],
        }
    }

    pub fn specs(self) -> Vec<LayerSpec> {
        match self {
            FixtureKind::ResNet10 => resnet_specs(2),
            FixtureKind::ResNet14 => resnet_specs(3),
            FixtureKind::TinyConv => vec![
                LayerSpec::conv(1, 64, 3, 2, 1),
                LayerSpec::conv(64, 64, 3, 2, 1),
                LayerSpec::conv(64, 64, 3, 2, 1),
                LayerSpec::conv(64, 32, 1, 1, 0),
                LayerSpec::fully_connected(4 * 4 * 32, 10),
            ],
            FixtureKind::MobileNetLike => vec![
                LayerSpec::conv(3, 16, 3, 2, 1),
                LayerSpec::conv(16, 32, 1, 1, 0),
                LayerSpec::depthwise(32, 3, 1, 1),
                LayerSpec::conv(32, 64, 1, 1, 0),
                LayerSpec::depthwise(64, 3, 2, 1),
                LayerSpec::conv(64, 64, 1, 1, 0),
                LayerSpec::fully_connected(4 * 4 * 64, 10),
            ],
            FixtureKind::Classifier => vec![
                LayerSpec::conv(3, 16, 3, 1, 1),
                LayerSpec::conv(16, 32, 3, 2, 1),
                LayerSpec::conv(32, 32, 3, 1, 1),
                LayerSpec::conv(32, 32, 3, 2, 1),
                LayerSpec::fully_connected(2 * 2 * 32, 10),
            ],
        }
    }
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FixtureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown fixture {s:?}")))
    }
}

/// Stem plus `stages` stages of four 3x3 convolutions; the first
/// convolution of every stage after the first doubles the channels with
/// stride 2. Shortcut projections are not part of the chain.
fn resnet_specs(stages: usize) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::conv(3, 64, 3, 1, 1)];
    let mut ch = 64;
    for stage in 0..stages {
        for i in 0..4 {
            if stage > 0 && i == 0 {
                specs.push(LayerSpec::conv(ch, ch * 2, 3, 2, 1));
                ch *= 2;
            } else {
                specs.push(LayerSpec::conv(ch, ch, 3, 1, 1));
            }
        }
    }
    specs
}

/// He-uniform weights and small biases drawn from a ChaCha stream.
pub fn random_layer(rng: &mut ChaCha8Rng, spec: LayerSpec, bias: bool) -> Result<Layer> {
    let fan_in = (spec.kh * spec.kw * spec.filter_depth()) as f32;
    let a = (6.0 / fan_in).sqrt();
    let w = (0..spec.weight_count()).map(|_| rng.gen_range(-a..a)).collect();
    let b = bias.then(|| (0..spec.out_ch).map(|_| rng.gen_range(-0.05f32..0.05)).collect());
    Layer::new(spec, Tensor::new(spec.weight_shape(), w)?, b)
}

pub fn build_fixture(kind: FixtureKind, seed: u64) -> Result<ModelGraph> {
    random_model(kind.input_shape(), &kind.specs(), seed)
}

pub fn random_model(input_shape: [usize; 3], specs: &[LayerSpec], seed: u64) -> Result<ModelGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|&spec| random_layer(&mut rng, spec, true))
        .collect::<Result<_>>()?;
    ModelGraph::new(input_shape, layers)
}

/// Inputs uniform on `[0, 1)`, like normalized image pixels.
pub fn random_inputs(shape: [usize; 3], count: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = shape.iter().product();
    (0..count)
        .map(|_| {
            Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen::<f32>()).collect()).expect("shape and length agree")
        })
        .collect()
}
