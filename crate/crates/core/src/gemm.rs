//! Reference GEMM routines that define the engine's bitwise ground truth.
//!
//! Every product is computed in f32 and accumulated in f32 in strictly
//! ascending reduction order (ascending k for `A*B`, ascending m for
//! `A^T*B`). That order is the determinism contract: the fused executor
//! accumulates in 16-wide chunks, chunks ascending, elements within a chunk
//! ascending, which is the same per-element chain. No FMA anywhere — a fused
//! multiply-add rounds differently than multiply-then-add.

use crate::error::{Error, Result};
use crate::matrix::{MatrixBf16, MatrixF32};

fn check_inner(op: &'static str, a_cols: usize, b_rows: usize) -> Result<()> {
    if a_cols != b_rows {
        return Err(Error::shape(op, format!("inner dims differ: {a_cols} vs {b_rows}")));
    }
    Ok(())
}

/// C = A * B with bf16 inputs, f32 products and f32 ascending-k accumulation.
pub fn gemm_bf16_f32(a: &MatrixBf16, b: &MatrixBf16) -> Result<MatrixF32> {
    check_inner("gemm_bf16_f32", a.cols, b.rows)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    // Widening bf16 to f32 is exact, so converting B up front leaves every
    // product bit-identical to converting inside the loop.
    let b_wide: Vec<f32> = b.data.iter().map(|v| v.to_f32()).collect();
    let mut out = MatrixF32::zeros(m, n);
    for r in 0..m {
        let a_row = a.row(r);
        let c_row = &mut out.data[r * n..(r + 1) * n];
        for (kk, &a_bits) in a_row.iter().enumerate() {
            let av = a_bits.to_f32();
            let b_row = &b_wide[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    Ok(out)
}

/// C = A * B on f32 inputs with the same ascending-k contract.
pub fn gemm_f32(a: &MatrixF32, b: &MatrixF32) -> Result<MatrixF32> {
    check_inner("gemm_f32", a.cols, b.rows)?;
    let (m, n) = (a.rows, b.cols);
    let mut out = MatrixF32::zeros(m, n);
    for r in 0..m {
        let a_row = a.row(r);
        let c_row = &mut out.data[r * n..(r + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    Ok(out)
}

/// G = A^T * D with bf16 inputs: G(k, n) = sum over m of A(m,k)*D(m,n),
/// accumulated in ascending m order. Streams both inputs row-major once.
pub fn gemm_at_b_bf16(a: &MatrixBf16, d: &MatrixBf16) -> Result<MatrixF32> {
    if a.rows != d.rows {
        return Err(Error::shape(
            "gemm_at_b_bf16",
            format!("row counts differ: {} vs {}", a.rows, d.rows),
        ));
    }
    let (k, n) = (a.cols, d.cols);
    let mut out = MatrixF32::zeros(k, n);
    let mut d_wide = vec![0.0f32; n];
    for m in 0..a.rows {
        let d_row = d.row(m);
        for (dst, src) in d_wide.iter_mut().zip(d_row) {
            *dst = src.to_f32();
        }
        let a_row = a.row(m);
        for (kk, &a_bits) in a_row.iter().enumerate() {
            let av = a_bits.to_f32();
            let g_row = &mut out.data[kk * n..(kk + 1) * n];
            for (gv, &dv) in g_row.iter_mut().zip(&d_wide) {
                *gv += av * dv;
            }
        }
    }
    Ok(out)
}

/// G = A^T * D on f32 inputs with the same ascending-m contract.
pub fn gemm_at_b_f32(a: &MatrixF32, d: &MatrixF32) -> Result<MatrixF32> {
    if a.rows != d.rows {
        return Err(Error::shape(
            "gemm_at_b_f32",
            format!("row counts differ: {} vs {}", a.rows, d.rows),
        ));
    }
    let (k, n) = (a.cols, d.cols);
    let mut out = MatrixF32::zeros(k, n);
    for m in 0..a.rows {
        let d_row = d.row(m);
        let a_row = a.row(m);
        for (kk, &av) in a_row.iter().enumerate() {
            let g_row = &mut out.data[kk * n..(kk + 1) * n];
            for (gv, &dv) in g_row.iter_mut().zip(d_row) {
                *gv += av * dv;
            }
        }
    }
    Ok(out)
}
