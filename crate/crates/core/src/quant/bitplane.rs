use crate::error::{Error, Result};
use crate::model::check_act_bits;

pub const MAX_PLANE_WIDTH: usize = 32;

/// An `M x N` bit matrix: row `j` packs bit `j` of every element, with
/// element `i` at bit position `i` of the row pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitPlaneMatrix {
    width: usize,
    /// Indexed by significance, LSB first.
    rows: Vec<u32>,
}

impl BitPlaneMatrix {
    /// Elements per row (`N`).
    pub fn width(&self) -> usize {
        self.width
    }

    /// Bit rows (`M`).
    pub fn bits(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, j: usize) -> u32 {
        self.rows[j]
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    /// The `k` most significant rows, MSB first.
    pub fn top_rows(&self, k: usize) -> impl Iterator<Item = u32> + '_ {
        self.rows.iter().rev().take(k).copied()
    }

    /// `sum_j 2^j * row_j`, element-wise.
    pub fn recompose(&self) -> Vec<u32> {
        (0..self.width)
            .map(|i| {
                self.rows
                    .iter()
                    .enumerate()
                    .map(|(j, &r)| ((r >> i) & 1) << j)
                    .sum()
            })
            .collect()
    }
}

/// Splits `M`-bit unsigned values into `M` bit rows.
pub fn bit_decompose(q: &[u8], bits: u32) -> Result<BitPlaneMatrix> {
    check_act_bits(bits)?;
    if q.len() > MAX_PLANE_WIDTH {
        return Err(Error::ShapeMismatch(format!(
            "bit-plane width {} exceeds {MAX_PLANE_WIDTH}",
            q.len()
        )));
    }
    if let Some(&v) = q.iter().find(|&&v| (v as u32) >> bits != 0) {
        return Err(Error::ValueOutOfRange {
            value: v as i64,
            bits,
        });
    }
    let mut rows = vec![0u32; bits as usize];
    for (i, &v) in q.iter().enumerate() {
        for (j, row) in rows.iter_mut().enumerate() {
            *row |= (((v >> j) & 1) as u32) << i;
        }
    }
    Ok(BitPlaneMatrix {
        width: q.len(),
        rows,
    })
}
