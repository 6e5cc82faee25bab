//! Fully-fused executor: one block of batch rows travels through all layers
//! while it stays cache resident; layer weights are staged once per worker.
//!
//! The executor is bitwise equal to the reference path because every
//! per-element reduction uses the same chain: 16-wide column tiles,
//! reduction index ascending. Workers own disjoint block-rows, so results
//! are independent of the worker count.

mod engine;

pub use engine::{fused_inference, fused_train, grad_gemm_pass, input_gradient, FusedTrainOutput};

use crate::bf16::Bf16;
use crate::error::{Error, Result};
use crate::matrix::{MatrixBf16, MatrixF32};
use crate::mlp::SUPPORTED_WIDTHS;

/// Reduction-chunk length of the micro-kernel (fixed by the tile contract).
pub const TK: usize = 16;
/// Column-tile width of the micro-kernel (fixed by the tile contract).
pub const TN: usize = 16;

/// Micro-tile dimensions and worker count for the fused executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileConfig {
    /// Rows per block, 1..=8.
    pub tm: usize,
    /// Reduction chunk, fixed at 16.
    pub tk: usize,
    /// Column tile, fixed at 16.
    pub tn: usize,
    /// Worker threads, >= 1. Never affects results, only wall clock.
    pub workers: usize,
}

impl TileConfig {
    pub fn new(tm: usize, workers: usize) -> Result<Self> {
        if !(1..=8).contains(&tm) {
            return Err(Error::domain("TileConfig", format!("tm must be in 1..=8, got {tm}")));
        }
        if workers == 0 {
            return Err(Error::domain("TileConfig", "workers must be >= 1"));
        }
        Ok(TileConfig { tm, tk: TK, tn: TN, workers })
    }

    /// tm = 8 with one worker per available core.
    pub fn default_for_host() -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        TileConfig { tm: 8, tk: TK, tn: TN, workers }
    }

    pub(crate) fn check_width(&self, width: usize) -> Result<()> {
        if self.tk != TK || self.tn != TN {
            return Err(Error::domain(
                "TileConfig",
                format!("tk and tn are fixed at {TK}/{TN}, got {}/{}", self.tk, self.tn),
            ));
        }
        if width % self.tk != 0 || width % self.tn != 0 {
            return Err(Error::shape(
                "TileConfig",
                format!("width {width} must be a multiple of tk={TK} and tn={TN}"),
            ));
        }
        Ok(())
    }
}

/// How a batch was padded to tile and width boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingReport {
    pub original_m: usize,
    pub padded_m: usize,
    pub original_in_width: usize,
    pub original_out_width: usize,
    pub padded_width: usize,
}

/// Next multiple of `tm` at or above `m`.
pub fn padded_rows(m: usize, tm: usize) -> usize {
    m.div_ceil(tm) * tm
}

/// Smallest supported network width that fits both logical widths.
pub fn padded_width_for(in_width: usize, out_width: usize) -> Result<usize> {
    let need = in_width.max(out_width).max(16);
    SUPPORTED_WIDTHS
        .iter()
        .copied()
        .find(|&w| w >= need)
        .ok_or_else(|| {
            Error::shape(
                "padded_width_for",
                format!("no supported width fits {in_width}/{out_width}"),
            )
        })
}

impl PaddingReport {
    /// Padding plan for a whole problem (input and output widths known).
    pub fn plan(
        m: usize,
        in_width: usize,
        out_width: usize,
        tile: &TileConfig,
    ) -> Result<PaddingReport> {
        let padded_width = padded_width_for(in_width, out_width)?;
        Ok(PaddingReport {
            original_m: m,
            padded_m: padded_rows(m, tile.tm),
            original_in_width: in_width,
            original_out_width: out_width,
            padded_width,
        })
    }
}

/// Zero-pad a batch to the next block boundary and to `target_width`
/// columns, quantizing to bf16. Original data lands at `[0..m) x [0..in_width)`.
///
/// The report's `original_out_width` mirrors `original_in_width` here; use
/// [`PaddingReport::plan`] when both sides of a problem are known.
pub fn pad_batch(
    input: &MatrixF32,
    tile: &TileConfig,
    target_width: usize,
) -> Result<(MatrixBf16, PaddingReport)> {
    if !SUPPORTED_WIDTHS.contains(&target_width) {
        return Err(Error::shape(
            "pad_batch",
            format!("target width must be one of {SUPPORTED_WIDTHS:?}, got {target_width}"),
        ));
    }
    if input.cols > target_width {
        return Err(Error::shape(
            "pad_batch",
            format!("input width {} exceeds target width {target_width}", input.cols),
        ));
    }
    let padded_m = padded_rows(input.rows, tile.tm);
    let mut out = MatrixBf16::zeros(padded_m, target_width);
    for r in 0..input.rows {
        let src = input.row(r);
        let dst = &mut out.data[r * target_width..r * target_width + input.cols];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = Bf16::from_f32(s);
        }
    }
    let report = PaddingReport {
        original_m: input.rows,
        padded_m,
        original_in_width: input.cols,
        original_out_width: input.cols,
        padded_width: target_width,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_rows_to_block_boundary() {
        let tile = TileConfig::new(8, 1).unwrap();
        let input = MatrixF32::from_fn(5, 16, |r, c| (r * 16 + c) as f32);
        let (padded, report) = pad_batch(&input, &tile, 16).unwrap();
        assert_eq!(report.padded_m, 8);
        assert_eq!(padded.rows, 8);
        for r in 5..8 {
            assert!(padded.row(r).iter().all(|&v| v == Bf16::ZERO));
        }
        for r in 0..5 {
            for c in 0..16 {
                assert_eq!(padded.get(r, c), Bf16::from_f32(input.get(r, c)));
            }
        }
    }

    #[test]
    fn aligned_input_is_unchanged() {
        let tile = TileConfig::new(8, 1).unwrap();
        let input = MatrixF32::from_fn(16, 64, |r, c| ((r + c) % 7) as f32);
        let (padded, report) = pad_batch(&input, &tile, 64).unwrap();
        assert_eq!(report.padded_m, 16);
        assert_eq!(padded, input.quantize());
    }

    #[test]
    fn ceil_arithmetic() {
        let tile = TileConfig::new(8, 1).unwrap();
        let report = PaddingReport::plan((1 << 11) + 3, 64, 64, &tile).unwrap();
        assert_eq!(report.padded_m, 2056);
    }

    #[test]
    fn width_plan_picks_smallest_supported() {
        assert_eq!(padded_width_for(2, 1).unwrap(), 16);
        assert_eq!(padded_width_for(17, 1).unwrap(), 32);
        assert_eq!(padded_width_for(32, 33).unwrap(), 64);
        assert_eq!(padded_width_for(100, 1).unwrap(), 128);
        assert!(padded_width_for(129, 1).is_err());
    }

    #[test]
    fn oversized_input_rejected() {
        let tile = TileConfig::new(4, 1).unwrap();
        let input = MatrixF32::zeros(4, 32);
        assert!(pad_batch(&input, &tile, 16).is_err());
    }

    #[test]
    fn tile_validation() {
        assert!(TileConfig::new(0, 1).is_err());
        assert!(TileConfig::new(9, 1).is_err());
        assert!(TileConfig::new(8, 0).is_err());
        assert!(TileConfig::new(3, 2).is_ok());
    }
}
