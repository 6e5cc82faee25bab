//! Packed weight layout for the fused executor.
//!
//! Weights are stored in pair-of-rows interleaved order: for each row pair
//! `p = k/2` and column `c`, elements `(2p, c)` and `(2p+1, c)` are adjacent
//! at `data[(p*n + c)*2]` and `data[(p*n + c)*2 + 1]`. This is the CPU analog
//! of the VNNI-style layout matrix units expect; any layout that unpacks back
//! to the original matrix is conforming.

use crate::bf16::Bf16;
use crate::error::{Error, Result};
use crate::matrix::MatrixBf16;

/// Weight matrix in packed order, logically `k` rows by `n` columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWeights {
    pub k: usize,
    pub n: usize,
    pub data: Vec<Bf16>,
}

/// Pack `b` (or `b` transposed) into pair-of-rows interleaved order.
///
/// Both dimensions must be even so every row has a pair partner.
pub fn pack_weights(b: &MatrixBf16, transpose: bool) -> Result<PackedWeights> {
    if b.rows % 2 != 0 || b.cols % 2 != 0 {
        return Err(Error::shape(
            "pack_weights",
            format!("dimensions must be even, got {}x{}", b.rows, b.cols),
        ));
    }
    let (k, n) = if transpose { (b.cols, b.rows) } else { (b.rows, b.cols) };
    let mut data = Vec::with_capacity(k * n);
    for pair in 0..k / 2 {
        for c in 0..n {
            let (k0, k1) = (2 * pair, 2 * pair + 1);
            if transpose {
                data.push(b.get(c, k0));
                data.push(b.get(c, k1));
            } else {
                data.push(b.get(k0, c));
                data.push(b.get(k1, c));
            }
        }
    }
    Ok(PackedWeights { k, n, data })
}

impl PackedWeights {
    #[inline]
    pub fn get(&self, k: usize, c: usize) -> Bf16 {
        self.data[((k / 2) * self.n + c) * 2 + (k & 1)]
    }

    /// Reconstruct the logical k x n matrix.
    pub fn unpack(&self) -> MatrixBf16 {
        MatrixBf16::from_fn(self.k, self.n, |r, c| self.get(r, c))
    }

    /// Widen into a dense row-major f32 buffer of length `k * n`.
    /// This is the staging step of the fused executor: one contiguous
    /// per-worker copy per layer, read by the micro-kernel afterwards.
    pub fn unpack_into_f32(&self, dst: &mut [f32]) {
        assert_eq!(dst.len(), self.k * self.n);
        let n = self.n;
        for pair in 0..self.k / 2 {
            let src = &self.data[pair * n * 2..(pair + 1) * n * 2];
            let (row0, rest) = dst[2 * pair * n..].split_at_mut(n);
            let row1 = &mut rest[..n];
            for c in 0..n {
                row0[c] = src[2 * c].to_f32();
                row1[c] = src[2 * c + 1].to_f32();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bf16::Bf16;

    fn m2x2(a: f32, b: f32, c: f32, d: f32) -> MatrixBf16 {
        MatrixBf16::from_vec(
            2,
            2,
            vec![Bf16::from_f32(a), Bf16::from_f32(b), Bf16::from_f32(c), Bf16::from_f32(d)],
        )
        .unwrap()
    }

    #[test]
    fn two_by_two_layout() {
        // [[a,b],[c,d]] packs as [a,c,b,d].
        let m = m2x2(1.0, 2.0, 3.0, 4.0);
        let p = pack_weights(&m, false).unwrap();
        let vals: Vec<f32> = p.data.iter().map(|v| v.to_f32()).collect();
        assert_eq!(vals, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn two_by_two_transposed_layout() {
        // Packing [[a,b],[c,d]]^T = [[a,c],[b,d]] yields [a,b,c,d].
        let m = m2x2(1.0, 2.0, 3.0, 4.0);
        let p = pack_weights(&m, true).unwrap();
        let vals: Vec<f32> = p.data.iter().map(|v| v.to_f32()).collect();
        assert_eq!(vals, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn odd_dimensions_rejected() {
        let m = MatrixBf16::zeros(3, 4);
        assert!(pack_weights(&m, false).is_err());
        let m = MatrixBf16::zeros(4, 3);
        assert!(pack_weights(&m, true).is_err());
    }

    #[test]
    fn staging_matches_unpack() {
        let m = MatrixBf16::from_fn(6, 4, |r, c| Bf16::from_f32((r * 7 + c) as f32 * 0.25));
        let p = pack_weights(&m, false).unwrap();
        let mut staged = vec![0.0f32; 24];
        p.unpack_into_f32(&mut staged);
        let u = p.unpack();
        for r in 0..6 {
            for c in 0..4 {
                assert_eq!(staged[r * 4 + c], u.get(r, c).to_f32());
            }
        }
    }
}
