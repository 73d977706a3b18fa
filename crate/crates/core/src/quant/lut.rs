//! One-bit dot-product lookup table.
//!
//! Entry `(p, s)` holds the dot product of the `N`-bit activation pattern
//! `p` (bit `i` selects element `i`) with pool vector `s`, after the pool
//! is quantized to `B_w`-bit integers. Entries are stored as signed `B_l`-bit
//! values. The real value of one entry unit is `2^scale_exp()`, with
//! `scale_exp = weight_exp + shift`.
//!
//! Blob layout (little-endian):
//!
//! ```text
//! "WPLT"  u8 order  u8 N  u32 S  u8 B_l  i32 weight_exp  u8 shift
//! entries in storage order, packed at B_l bits (B_l = 4: low nibble first)
//! ```

use std::fmt;

use serde::Serialize;

use super::round_shift;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::model::check_weight_bits;
use crate::pooler::WeightPool;

pub const LUT_MAGIC: [u8; 4] = *b"WPLT";
pub const LUT_BITWIDTHS: [u32; 4] = [4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LutOrder {
    /// `2^N` contiguous blocks of `S` entries, one block per pattern.
    InputOriented,
    /// `S` contiguous blocks of `2^N` entries, one block per pool vector.
    WeightOriented,
}

impl LutOrder {
    fn tag(self) -> u8 {
        match self {
            LutOrder::InputOriented => 0,
            LutOrder::WeightOriented => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(LutOrder::InputOriented),
            1 => Ok(LutOrder::WeightOriented),
            other => Err(Error::UnknownLutOrder(other)),
        }
    }
}

impl fmt::Display for LutOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LutOrder::InputOriented => "input",
            LutOrder::WeightOriented => "weight",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LutTable {
    order: LutOrder,
    group_size: usize,
    pool_size: usize,
    bits: u32,
    weight_exp: i32,
    shift: u32,
    entries: Vec<i32>,
}

impl LutTable {
    pub fn order(&self) -> LutOrder {
        self.order
    }

    /// Pattern width `N`.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Pool size `S`.
    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    /// Entry width `B_l`.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn patterns(&self) -> usize {
        1 << self.group_size
    }

    /// Pool weights were quantized with step `2^weight_exp`.
    pub fn weight_exp(&self) -> i32 {
        self.weight_exp
    }

    /// Right shift applied to raw dot products to fit `B_l` bits.
    pub fn shift(&self) -> u32 {
        self.shift
    }

    pub fn scale_exp(&self) -> i32 {
        self.weight_exp + self.shift as i32
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    pub fn storage_bits(&self) -> u64 {
        self.entries.len() as u64 * self.bits as u64
    }

    /// Storage offset of `(pattern, s)` in this table's order.
    #[inline]
    pub fn address(&self, pattern: u32, s: usize) -> usize {
        match self.order {
            LutOrder::InputOriented => pattern as usize * self.pool_size + s,
            LutOrder::WeightOriented => s * self.patterns() + pattern as usize,
        }
    }

    #[inline]
    pub fn get(&self, pattern: u32, s: usize) -> i32 {
        self.entries[self.address(pattern, s)]
    }

    /// The `S` entries for one pattern; contiguous only in input order.
    pub fn block(&self, pattern: u32) -> Option<&[i32]> {
        match self.order {
            LutOrder::InputOriented => {
                let start = pattern as usize * self.pool_size;
                Some(&self.entries[start..start + self.pool_size])
            }
            LutOrder::WeightOriented => None,
        }
    }

    /// The same table laid out in `order`.
    pub fn reordered(&self, order: LutOrder) -> LutTable {
        if order == self.order {
            return self.clone();
        }
        let mut out = LutTable {
            order,
            entries: vec![0; self.entries.len()],
            ..self.clone()
        };
        for p in 0..self.patterns() as u32 {
            for s in 0..self.pool_size {
                let a = out.address(p, s);
                out.entries[a] = self.get(p, s);
            }
        }
        out
    }

    /// Checks that the table was built from a pool of this shape.
    pub fn check_matches(&self, pool: &WeightPool) -> Result<()> {
        if self.group_size != pool.group_size() || self.pool_size != pool.len() {
            return Err(Error::LutMismatch(format!(
                "table is {}x{} (N x S), pool is {}x{}",
                self.group_size,
                self.pool_size,
                pool.group_size(),
                pool.len()
            )));
        }
        Ok(())
    }
}

fn check_lut_bits(bits: u32) -> Result<()> {
    if LUT_BITWIDTHS.contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "lookup table bitwidth {bits} not one of {LUT_BITWIDTHS:?}"
        )))
    }
}

/// Smallest `e` with `max_abs / 2^e <= qmax`.
fn weight_exponent(max_abs: f64, qmax: f64) -> i32 {
    let mut e = (max_abs / qmax).log2().ceil() as i32;
    while max_abs / 2f64.powi(e) > qmax {
        e += 1;
    }
    while max_abs / 2f64.powi(e - 1) <= qmax {
        e -= 1;
    }
    e
}

/// Pool weights as `B_w`-bit integers with a shared power-of-two step.
pub(crate) fn quantize_pool(pool: &WeightPool, weight_bits: u32) -> Result<(Vec<Vec<i32>>, i32)> {
    check_weight_bits(weight_bits)?;
    let qmax = ((1i64 << (weight_bits - 1)) - 1) as f64;
    let max_abs = pool
        .vectors()
        .iter()
        .flat_map(|v| v.values())
        .fold(0.0f64, |m, &x| m.max((x as f64).abs()));
    if max_abs == 0.0 {
        return Err(Error::LutSaturated { bits: weight_bits });
    }
    let exp = weight_exponent(max_abs, qmax);
    let step = 2f64.powi(exp);
    let q = pool
        .vectors()
        .iter()
        .map(|v| {
            v.values()
                .iter()
                .map(|&x| ((x as f64) / step).round().clamp(-qmax, qmax) as i32)
                .collect()
        })
        .collect();
    Ok((q, exp))
}

/// Builds the `2^N x S` table at `lut_bits` per entry.
///
/// Raw dot products are exact integers. They are right-shifted with
/// half-away rounding and saturated at the signed `lut_bits` limits. The
/// shift is the one with least squared error among the smallest shift that
/// avoids saturation and the two below it.
pub fn build_lut(pool: &WeightPool, lut_bits: u32, order: LutOrder, weight_bits: u32) -> Result<LutTable> {
    check_lut_bits(lut_bits)?;
    let n = pool.group_size();
    let s = pool.len();
    let (qw, weight_exp) = quantize_pool(pool, weight_bits)?;
    let patterns = 1usize << n;

    let mut raw = vec![0i64; patterns * s];
    for p in 0..patterns {
        for (k, w) in qw.iter().enumerate() {
            raw[p * s + k] = w
                .iter()
                .enumerate()
                .filter(|(i, _)| (p >> i) & 1 == 1)
                .map(|(_, &v)| v as i64)
                .sum();
        }
    }

    let limit = (1i64 << (lut_bits - 1)) - 1;
    let max_raw = raw.iter().map(|v| v.abs()).max().unwrap_or(0);
    let mut fit = 0;
    while round_shift(max_raw, fit) > limit {
        fit += 1;
    }
    let shift = (fit.saturating_sub(2)..=fit)
        .map(|sh| (sh, scaled_error(&raw, sh, limit)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(fit, |(sh, _)| sh);
    let scaled: Vec<i32> = raw
        .iter()
        .map(|&v| round_shift(v, shift).clamp(-limit - 1, limit) as i32)
        .collect();
    if max_raw != 0 && scaled.iter().all(|&v| v == 0) {
        return Err(Error::LutSaturated { bits: lut_bits });
    }

    let table = LutTable {
        order: LutOrder::InputOriented,
        group_size: n,
        pool_size: s,
        bits: lut_bits,
        weight_exp,
        shift,
        entries: scaled,
    };
    Ok(table.reordered(order))
}

/// Squared error, in raw units, of storing `raw` at one shift.
fn scaled_error(raw: &[i64], shift: u32, limit: i64) -> f64 {
    raw.iter()
        .map(|&v| {
            let back = round_shift(v, shift).clamp(-limit - 1, limit) << shift;
            ((v - back) as f64).powi(2)
        })
        .sum()
}

/// Bounds-checked single lookup.
pub fn lut_lookup(table: &LutTable, pattern: u32, s: usize) -> Result<i32> {
    if pattern as usize >= table.patterns() {
        return Err(Error::ValueOutOfRange {
            value: pattern as i64,
            bits: table.group_size as u32,
        });
    }
    if s >= table.pool_size {
        return Err(Error::IndexOutOfRange {
            index: s,
            pool_size: table.pool_size,
        });
    }
    Ok(table.get(pattern, s))
}

pub fn encode_lut(table: &LutTable) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(&LUT_MAGIC);
    w.u8(table.order.tag());
    w.u8(table.group_size as u8);
    w.usize32(table.pool_size)?;
    w.u8(table.bits as u8);
    w.i32(table.weight_exp);
    w.u8(table.shift as u8);
    match table.bits {
        4 => {
            for pair in table.entries.chunks(2) {
                let lo = (pair[0] as u8) & 0x0f;
                let hi = pair.get(1).map_or(0, |&v| (v as u8) & 0x0f);
                w.u8(lo | (hi << 4));
            }
        }
        8 => table.entries.iter().for_each(|&v| w.u8(v as i8 as u8)),
        16 => table.entries.iter().for_each(|&v| w.u16(v as i16 as u16)),
        _ => table.entries.iter().for_each(|&v| w.i32(v)),
    }
    Ok(w.into_inner())
}

pub fn decode_lut(bytes: &[u8]) -> Result<LutTable> {
    let mut r = ByteReader::new(bytes);
    let table = read_lut(&mut r)?;
    r.finish("lookup table")?;
    Ok(table)
}

pub(crate) fn read_lut(r: &mut ByteReader) -> Result<LutTable> {
    r.magic(LUT_MAGIC)?;
    let order = LutOrder::from_tag(r.u8("lut order")?)?;
    let group_size = r.u8("lut group size")? as usize;
    crate::pooler::check_group_size(group_size)?;
    let pool_size = r.usize32("lut pool size")?;
    if pool_size == 0 {
        return Err(Error::EmptyPool);
    }
    let bits = r.u8("lut bitwidth")? as u32;
    check_lut_bits(bits)?;
    let weight_exp = r.i32("lut weight exponent")?;
    let shift = r.u8("lut shift")? as u32;
    let count = (1usize << group_size)
        .checked_mul(pool_size)
        .ok_or_else(|| Error::Overflow("lut entry count".into()))?;
    let entries = match bits {
        4 => {
            let raw = r.take(count.div_ceil(2), "lut entries")?;
            let sign = |nib: u8| ((nib << 4) as i8 >> 4) as i32;
            let mut e: Vec<i32> = raw.iter().flat_map(|&b| [sign(b & 0x0f), sign(b >> 4)]).collect();
            e.truncate(count);
            e
        }
        8 => r.take(count, "lut entries")?.iter().map(|&b| b as i8 as i32).collect(),
        16 => r
            .take(count * 2, "lut entries")?
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
            .collect(),
        _ => r
            .take(count * 4, "lut entries")?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    Ok(LutTable {
        order,
        group_size,
        pool_size,
        bits,
        weight_exp,
        shift,
        entries,
    })
}
