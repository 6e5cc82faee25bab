//! Weight storage and initialization.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::{MatrixBf16, MatrixF32};
use crate::pack::{pack_weights, PackedWeights};

use super::{MlpConfig, Precision};

/// One weight matrix in bf16 storage, kept alongside both packed forms the
/// fused executor needs (forward and transposed for the backward pass).
#[derive(Debug, Clone)]
pub struct PackedLayer {
    pub raw: MatrixBf16,
    pub packed: PackedWeights,
    pub packed_t: PackedWeights,
}

impl PackedLayer {
    pub fn from_raw(raw: MatrixBf16) -> Result<Self> {
        let packed = pack_weights(&raw, false)?;
        let packed_t = pack_weights(&raw, true)?;
        Ok(PackedLayer { raw, packed, packed_t })
    }
}

/// A weight matrix in the configured storage precision.
#[derive(Debug, Clone)]
pub enum LayerWeights {
    F32(MatrixF32),
    Bf16(PackedLayer),
}

impl LayerWeights {
    /// Weight values widened to f32 (exact for bf16 storage).
    pub fn values(&self) -> MatrixF32 {
        match self {
            LayerWeights::F32(m) => m.clone(),
            LayerWeights::Bf16(p) => p.raw.widen(),
        }
    }
}

/// The per-layer weight matrices of a network.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub config: MlpConfig,
    pub layers: Vec<LayerWeights>,
}

impl MlpParams {
    /// Build params from f32 weight values, quantizing to the configured
    /// storage precision and constructing the packed forms.
    pub fn from_f32_weights(config: MlpConfig, weights: Vec<MatrixF32>) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.weight_count() {
            return Err(Error::shape(
                "MlpParams::from_f32_weights",
                format!("expected {} matrices, got {}", config.weight_count(), weights.len()),
            ));
        }
        let mut layers = Vec::with_capacity(weights.len());
        for w in &weights {
            if w.rows != config.width || w.cols != config.width {
                return Err(Error::shape(
                    "MlpParams::from_f32_weights",
                    format!("weights must be {0}x{0}, got {1}x{2}", config.width, w.rows, w.cols),
                ));
            }
            layers.push(match config.precision {
                Precision::F32Ref => LayerWeights::F32(w.clone()),
                Precision::Bf16 => LayerWeights::Bf16(PackedLayer::from_raw(w.quantize())?),
            });
        }
        Ok(MlpParams { config, layers })
    }

    /// Replace one weight matrix (quantizing and re-packing as needed).
    pub fn set_layer(&mut self, index: usize, values: &MatrixF32) -> Result<()> {
        if index >= self.layers.len() {
            return Err(Error::state("MlpParams::set_layer", format!("no layer {index}")));
        }
        if values.rows != self.config.width || values.cols != self.config.width {
            return Err(Error::shape(
                "MlpParams::set_layer",
                format!(
                    "weights must be {0}x{0}, got {1}x{2}",
                    self.config.width, values.rows, values.cols
                ),
            ));
        }
        self.layers[index] = match self.config.precision {
            Precision::F32Ref => LayerWeights::F32(values.clone()),
            Precision::Bf16 => LayerWeights::Bf16(PackedLayer::from_raw(values.quantize())?),
        };
        Ok(())
    }

    /// Total number of stored weights (full padded matrices).
    pub fn weight_element_count(&self) -> usize {
        self.layers.len() * self.config.width * self.config.width
    }
}

/// Xavier-uniform half-range: sqrt(6 / (fan_in + fan_out)) with both fans
/// equal to the layer width.
pub fn xavier_scale(width: usize) -> f32 {
    (6.0 / (2.0 * width as f64)).sqrt() as f32
}

/// Draw from (-s, s) via an explicit u32 -> f64 map so the stream depends
/// only on ChaCha8 output, not on distribution internals of any crate
/// version.
fn uniform_symmetric(rng: &mut ChaCha8Rng, s: f32) -> f32 {
    let unit = (rng.next_u32() as f64 + 0.5) / 4294967296.0;
    ((2.0 * unit - 1.0) * s as f64) as f32
}

/// Initialize weights i.i.d. Xavier-uniform from a seeded generator, rounded
/// to the configured storage precision.
pub fn init_params(config: MlpConfig, seed: u64) -> Result<MlpParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = xavier_scale(config.width);
    let mut weights = Vec::with_capacity(config.weight_count());
    for _ in 0..config.weight_count() {
        weights.push(MatrixF32::from_fn(config.width, config.width, |_, _| {
            uniform_symmetric(&mut rng, s)
        }));
    }
    MlpParams::from_f32_weights(config, weights)
}
