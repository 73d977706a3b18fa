//! Activation quantization, bit-plane decomposition and the dot-product
//! lookup table.
//!
//! Rounding is half-away-from-zero everywhere: `f64::round` for reals and
//! [`round_shift`] for power-of-two rescaling of integers.

mod activation;
mod bitplane;
mod lut;

pub use activation::{quantize_activations, search_activation_range, ActRange, RANGE_PERCENTILES};
pub use bitplane::{bit_decompose, BitPlaneMatrix};
pub use lut::{build_lut, decode_lut, encode_lut, lut_lookup, LutOrder, LutTable, LUT_MAGIC};

/// `x / 2^k` rounded half away from zero.
pub fn round_shift(x: i64, k: u32) -> i64 {
    if k == 0 {
        return x;
    }
    let half = 1i64 << (k - 1);
    let mag = (x.unsigned_abs() as i64 + half) >> k;
    if x < 0 {
        -mag
    } else {
        mag
    }
}
