//! Direct convolution in real and integer arithmetic.
//!
//! These are the oracles every faster path is compared against. The
//! summation order is fixed (kernel row, kernel column, input channel, all
//! ascending) so floating results are reproducible to the last bit.

use std::ops::{AddAssign, Mul};

use super::{check_act_bits, LayerKind, LayerSpec, ModelGraph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_WEIGHT_BITS: u32 = 16;

fn check_operands<T>(spec: &LayerSpec, input_shape: &[usize], weights: &Tensor<T>) -> Result<[usize; 3]> {
    spec.validate()?;
    let input = match *input_shape {
        [h, w, c] => [h, w, c],
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "expected (h, w, c) input, got {input_shape:?}"
            )))
        }
    };
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "weights shaped {:?}, layer needs {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    spec.output_shape(input)?;
    Ok(input)
}

fn direct_conv<T>(input: &[T], shape: [usize; 3], spec: &LayerSpec, weights: &[T]) -> (Vec<T>, [usize; 3])
where
    T: Copy + Default + AddAssign + Mul<Output = T>,
{
    let out_shape = spec.output_shape(shape).expect("checked by caller");
    let [h, w, c] = shape;
    let [oh, ow, oc] = out_shape;
    let mut out = vec![T::default(); oh * ow * oc];

    if spec.kind == LayerKind::FullyConnected {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &weights[o * spec.in_ch..(o + 1) * spec.in_ch];
            let mut acc = T::default();
            for (x, wv) in input.iter().zip(row) {
                acc += *x * *wv;
            }
            *slot = acc;
        }
        return (out, out_shape);
    }

    let depth = spec.filter_depth();
    for oy in 0..oh {
        for ox in 0..ow {
            for f in 0..oc {
                let mut acc = T::default();
                for ky in 0..spec.kh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..spec.kw {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let pixel = (iy as usize * w + ix as usize) * c;
                        let tap = ((f * spec.kh + ky) * spec.kw + kx) * depth;
                        if spec.kind == LayerKind::Depthwise {
                            acc += input[pixel + f] * weights[tap];
                        } else {
                            for ic in 0..c {
                                acc += input[pixel + ic] * weights[tap + ic];
                            }
                        }
                    }
                }
                out[(oy * ow + ox) * oc + f] = acc;
            }
        }
    }
    (out, out_shape)
}

/// Direct convolution (or dense product) in f32, plus optional bias.
pub fn reference_conv_f32(
    input: &Tensor,
    spec: &LayerSpec,
    weights: &Tensor,
    bias: Option<&[f32]>,
) -> Result<Tensor> {
    let shape = check_operands(spec, input.shape(), weights)?;
    if let Some(b) = bias {
        if b.len() != spec.out_ch {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {} filters",
                b.len(),
                spec.out_ch
            )));
        }
    }
    let (mut out, out_shape) = direct_conv(input.data(), shape, spec, weights.data());
    if let Some(b) = bias {
        for px in out.chunks_exact_mut(spec.out_ch) {
            for (v, bv) in px.iter_mut().zip(b) {
                *v += *bv;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out)
}

/// Exact integer convolution of `act_bits`-bit unsigned activations with
/// signed `weight_bits`-bit weights, accumulated in 64 bits.
pub fn reference_conv_int(
    input: &Tensor<u8>,
    act_bits: u32,
    spec: &LayerSpec,
    weights: &Tensor<i32>,
    weight_bits: u32,
) -> Result<Tensor<i64>> {
    check_act_bits(act_bits)?;
    check_weight_bits(weight_bits)?;
    let shape = check_operands(spec, input.shape(), weights)?;
    let act_max = (1u32 << act_bits) - 1;
    if let Some(&v) = input.data().iter().find(|&&v| v as u32 > act_max) {
        return Err(Error::ValueOutOfRange {
            value: v as i64,
            bits: act_bits,
        });
    }
    let w_max = (1i32 << (weight_bits - 1)) - 1;
    if let Some(&v) = weights.data().iter().find(|&&v| v.abs() > w_max) {
        return Err(Error::ValueOutOfRange {
            value: v as i64,
            bits: weight_bits,
        });
    }
    let acts: Vec<i64> = input.data().iter().map(|&v| v as i64).collect();
    let wts: Vec<i64> = weights.data().iter().map(|&v| v as i64).collect();
    let (out, out_shape) = direct_conv(&acts, shape, spec, &wts);
    Tensor::new(out_shape.to_vec(), out)
}

pub(crate) fn check_weight_bits(bits: u32) -> Result<()> {
    if (2..=MAX_WEIGHT_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::BitwidthOutOfRange {
            what: "weight",
            bits,
            min: 2,
            max: MAX_WEIGHT_BITS,
        })
    }
}

/// Symmetric per-tensor quantization to signed `bits`-bit integers.
/// Returns the integers and the real value of one step.
pub fn quantize_weights_symmetric(weights: &Tensor, bits: u32) -> Result<(Tensor<i32>, f32)> {
    check_weight_bits(bits)?;
    let qmax = ((1i64 << (bits - 1)) - 1) as f64;
    let max_abs = weights.data().iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let scale = if max_abs > 0.0 { max_abs / qmax } else { 1.0 };
    let q = weights.map(|&v| ((v as f64) / scale).round().clamp(-qmax, qmax) as i32);
    Ok((q, scale as f32))
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Inputs seen by each layer during a float forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub layer_inputs: Vec<Tensor>,
}

/// Float forward pass through the whole chain: convolution, bias, ReLU.
pub fn forward_f32(graph: &ModelGraph, input: &Tensor, mut trace: Option<&mut ForwardTrace>) -> Result<Tensor> {
    if input.shape() != graph.input_shape.as_slice() {
        return Err(Error::ShapeMismatch(format!(
            "network input is {:?}, model expects {:?}",
            input.shape(),
            graph.input_shape
        )));
    }
    let mut x = input.clone();
    for (i, layer) in graph.layers.iter().enumerate() {
        if let Some(t) = trace.as_deref_mut() {
            t.layer_inputs.push(x.clone());
        }
        let x_in = flatten_for(&layer.spec, x)?;
        x = reference_conv_f32(&x_in, &layer.spec, &layer.weights, layer.bias.as_deref())
            .map_err(|e| e.in_layer(i))?;
        if layer.spec.has_relu {
            relu_in_place(&mut x);
        }
    }
    Ok(x)
}

/// Fully-connected layers see their input as a single `(1, 1, n)` pixel.
pub(crate) fn flatten_for<T>(spec: &LayerSpec, x: Tensor<T>) -> Result<Tensor<T>> {
    if spec.kind == LayerKind::FullyConnected {
        let n = x.len();
        x.reshape(vec![1, 1, n])
    } else {
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_product() {
        let spec = LayerSpec::conv(1, 1, 1, 1, 0);
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let y = reference_conv_f32(&x, &spec, &w, None).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = LayerSpec::conv(1, 1, 3, 1, 1);
        let mut k = vec![0.0f32; 9];
        k[4] = 1.0;
        let w = Tensor::new(vec![1, 3, 3, 1], k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..25).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![5, 5, 1], data).unwrap();
        let y = reference_conv_f32(&x, &spec, &w, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn int_single_dot_product() {
        // 1x1 conv, 8 channels: sum of i^2 for i in 1..=8
        let spec = LayerSpec::conv(8, 1, 1, 1, 0);
        let x = Tensor::new(vec![1, 1, 8], (1..=8).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 8], (1..=8).collect()).unwrap();
        let y = reference_conv_int(&x, 8, &spec, &w, 8).unwrap();
        assert_eq!(y.data(), &[204]);
    }

    #[test]
    fn int_zero_activations_give_zero() {
        let spec = LayerSpec::conv(4, 3, 3, 1, 1);
        let x = Tensor::<u8>::zeros(vec![5, 5, 4]).unwrap();
        let w = Tensor::new(spec.weight_shape(), (0..108).map(|i| (i % 11) - 5).collect()).unwrap();
        let y = reference_conv_int(&x, 8, &spec, &w, 8).unwrap();
        assert!(y.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn int_rejects_out_of_range_operands() {
        let spec = LayerSpec::conv(2, 1, 1, 1, 0);
        let x = Tensor::new(vec![1, 1, 2], vec![16u8, 0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 2], vec![1, 1]).unwrap();
        assert!(matches!(
            reference_conv_int(&x, 4, &spec, &w, 8),
            Err(Error::ValueOutOfRange { value: 16, bits: 4 })
        ));
        let x = Tensor::new(vec![1, 1, 2], vec![1u8, 0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 2], vec![128, 1]).unwrap();
        assert!(reference_conv_int(&x, 8, &spec, &w, 8).is_err());
        assert!(reference_conv_int(&x, 9, &spec, &w, 8).is_err());
    }

    #[test]
    fn int_matches_f32_on_integer_valued_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LayerSpec::conv(6, 5, 3, 2, 1);
        let xi: Vec<u8> = (0..7 * 7 * 6).map(|_| rng.gen()).collect();
        let wi: Vec<i32> = (0..spec.weight_count()).map(|_| rng.gen_range(-127..=127)).collect();
        let xf = Tensor::new(vec![7, 7, 6], xi.iter().map(|&v| v as f32).collect()).unwrap();
        let wf = Tensor::new(spec.weight_shape(), wi.iter().map(|&v| v as f32).collect()).unwrap();
        let yi = reference_conv_int(&Tensor::new(vec![7, 7, 6], xi).unwrap(), 8, &spec, &Tensor::new(spec.weight_shape(), wi).unwrap(), 8).unwrap();
        let yf = reference_conv_f32(&xf, &spec, &wf, None).unwrap();
        for (a, b) in yi.data().iter().zip(yf.data()) {
            assert_eq!(*a as f32, *b);
        }
    }

    #[test]
    fn depthwise_applies_per_channel_kernels() {
        let spec = LayerSpec::depthwise(2, 1, 1, 0);
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(vec![2, 1, 1, 1], vec![10.0, -1.0]).unwrap();
        let y = reference_conv_f32(&x, &spec, &w, Some(&[0.5, 0.0])).unwrap();
        assert_eq!(y.data(), &[10.5, -2.0, 30.5, -4.0]);
    }

    #[test]
    fn weight_quantization_is_symmetric() {
        let w = Tensor::new(vec![4], vec![-1.0, 0.5, 0.25, 1.0]).unwrap();
        let (q, scale) = quantize_weights_symmetric(&w, 8).unwrap();
        assert_eq!(q.data(), &[-127, 64, 32, 127]);
        assert!((scale - 1.0 / 127.0).abs() < 1e-9);
    }
}
