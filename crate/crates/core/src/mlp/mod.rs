//! Network definition and the unfused reference implementation.
//!
//! The reference path materializes every intermediate matrix with the same
//! precision rules as the fused executor and is the bitwise oracle the
//! executor is tested against.

mod params;
mod reference;

pub use params::{init_params, xavier_scale, LayerWeights, MlpParams, PackedLayer};
pub use reference::{
    backward_reference, forward_reference, loss_l2, train_step_reference,
};

use crate::error::{Error, Result};
use crate::matrix::{MatrixBf16, MatrixF32};

/// Storage precision of weights and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Everything in f32; no quantization anywhere. Used as the numeric
    /// oracle (e.g. finite-difference gradient checks).
    F32Ref,
    /// Weights and inter-layer activations stored in bf16, accumulation and
    /// the final output in f32.
    Bf16,
}

/// Elementwise activation. The backward form is the derivative applied as a
/// gate on the propagated gradient: `backprop(a, d) = d * sigma'(...)` where
/// for ReLU the stored post-activation value stands in for the pre-image
/// (strict `a > 0` test), and for Linear it is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Linear => x,
        }
    }

    #[inline]
    pub fn backprop(self, a: f32, d: f32) -> f32 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    d
                } else {
                    0.0
                }
            }
            Activation::Linear => d,
        }
    }
}

/// Network hyperparameters. `width` is the fixed hidden width (K = N);
/// `in_width`/`out_width` are the logical column counts before padding.
/// `nlayers` counts input and output layers, so there are `nlayers - 1`
/// weight matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub width: usize,
    pub in_width: usize,
    pub out_width: usize,
    pub nlayers: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub precision: Precision,
}

pub const SUPPORTED_WIDTHS: [usize; 4] = [16, 32, 64, 128];

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_WIDTHS.contains(&self.width) {
            return Err(Error::domain(
                "MlpConfig",
                format!("width must be one of {SUPPORTED_WIDTHS:?}, got {}", self.width),
            ));
        }
        if self.nlayers < 2 {
            return Err(Error::domain(
                "MlpConfig",
                format!("nlayers must be >= 2, got {}", self.nlayers),
            ));
        }
        if self.in_width == 0 || self.in_width > self.width {
            return Err(Error::domain(
                "MlpConfig",
                format!("in_width must be in 1..={}, got {}", self.width, self.in_width),
            ));
        }
        if self.out_width == 0 || self.out_width > self.width {
            return Err(Error::domain(
                "MlpConfig",
                format!("out_width must be in 1..={}, got {}", self.width, self.out_width),
            ));
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.nlayers - 1
    }
}

/// A batch-shaped matrix whose storage follows the configured precision.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchMatrix {
    F32(MatrixF32),
    Bf16(MatrixBf16),
}

impl BatchMatrix {
    pub fn rows(&self) -> usize {
        match self {
            BatchMatrix::F32(m) => m.rows,
            BatchMatrix::Bf16(m) => m.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            BatchMatrix::F32(m) => m.cols,
            BatchMatrix::Bf16(m) => m.cols,
        }
    }

    /// Value of element (r, c) as f32 (exact for bf16 storage).
    #[inline]
    pub fn value(&self, r: usize, c: usize) -> f32 {
        match self {
            BatchMatrix::F32(m) => m.get(r, c),
            BatchMatrix::Bf16(m) => m.get(r, c).to_f32(),
        }
    }

    pub fn as_f32(&self) -> Option<&MatrixF32> {
        match self {
            BatchMatrix::F32(m) => Some(m),
            BatchMatrix::Bf16(_) => None,
        }
    }

    pub fn as_bf16(&self) -> Option<&MatrixBf16> {
        match self {
            BatchMatrix::Bf16(m) => Some(m),
            BatchMatrix::F32(_) => None,
        }
    }

    pub fn bitwise_eq(&self, other: &BatchMatrix) -> bool {
        match (self, other) {
            (BatchMatrix::F32(a), BatchMatrix::F32(b)) => a.bitwise_eq(b),
            (BatchMatrix::Bf16(a), BatchMatrix::Bf16(b)) => a == b,
            _ => false,
        }
    }
}

/// All activation matrices of a forward pass: `activations[0]` is the
/// (padded) input, `activations[i]` the output of layer i, and the last
/// entry the f32 prediction.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<BatchMatrix>,
}

impl ForwardCache {
    /// The f32 prediction (last activation).
    pub fn prediction(&self) -> Result<&MatrixF32> {
        self.activations
            .last()
            .and_then(|a| a.as_f32())
            .ok_or_else(|| Error::state("ForwardCache", "missing f32 prediction"))
    }
}

/// Pre-activation gradients: `deltas[j]` holds the gradient flowing into
/// layer j+1's matmul output (D_{j+2} in 1-indexed layer terms), so the
/// list has `nlayers - 1` entries.
#[derive(Debug, Clone)]
pub struct BackwardCache {
    pub deltas: Vec<BatchMatrix>,
}

/// Weight gradients, one f32 matrix per weight matrix.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weight_grads: Vec<MatrixF32>,
}

impl Gradients {
    pub fn bitwise_eq(&self, other: &Gradients) -> bool {
        self.weight_grads.len() == other.weight_grads.len()
            && self
                .weight_grads
                .iter()
                .zip(&other.weight_grads)
                .all(|(a, b)| a.bitwise_eq(b))
    }
}
