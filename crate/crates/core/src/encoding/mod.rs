//! Input encodings: identity-with-padding and a trainable 2-D
//! multiresolution hash grid.

mod hash_grid;

pub use hash_grid::{
    build_context, features_from_context, hash_corner, hash_grid_backward, hash_grid_forward,
    init_hash_params, HashGridConfig, HashGridParams, InterpContext,
};

use crate::bf16::Bf16;
use crate::error::{Error, Result};
use crate::matrix::{MatrixBf16, MatrixF32};

/// Copy coordinates into the first columns of a width-wide bf16 matrix,
/// zero-filling the rest.
pub fn encode_identity(coords: &MatrixF32, width: usize) -> Result<MatrixBf16> {
    if coords.cols > width {
        return Err(Error::shape(
            "encode_identity",
            format!("{} input columns exceed width {width}", coords.cols),
        ));
    }
    let mut out = MatrixBf16::zeros(coords.rows, width);
    for r in 0..coords.rows {
        let src = coords.row(r);
        let dst = &mut out.data[r * width..r * width + coords.cols];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = Bf16::from_f32(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_width_is_a_quantized_copy() {
        let coords = MatrixF32::from_fn(3, 16, |r, c| (r * 16 + c) as f32 * 0.1);
        let enc = encode_identity(&coords, 16).unwrap();
        assert_eq!(enc, coords.quantize());
    }

    #[test]
    fn remaining_columns_are_zero() {
        let coords = MatrixF32::from_fn(4, 2, |r, c| (r + c) as f32);
        let enc = encode_identity(&coords, 64).unwrap();
        for r in 0..4 {
            for c in 2..64 {
                assert_eq!(enc.get(r, c), Bf16::ZERO);
            }
            for c in 0..2 {
                assert_eq!(enc.get(r, c), Bf16::from_f32(coords.get(r, c)));
            }
        }
    }

    #[test]
    fn too_many_columns_rejected() {
        let coords = MatrixF32::zeros(2, 17);
        assert!(encode_identity(&coords, 16).is_err());
    }
}
