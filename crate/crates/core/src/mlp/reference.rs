//! Unfused reference implementation of inference and training.
//!
//! One matrix is materialized per step, using the reference GEMMs. The fused
//! executor must reproduce these results bit for bit, so every reduction
//! order here is part of the contract (see `gemm` and `loss_l2`).

use crate::error::{Error, Result};
use crate::gemm::{gemm_at_b_bf16, gemm_at_b_f32, gemm_bf16_f32, gemm_f32};
use crate::matrix::MatrixF32;

use super::{
    Activation, BackwardCache, BatchMatrix, ForwardCache, Gradients, LayerWeights, MlpParams,
    Precision,
};

fn layer_matmul(a: &BatchMatrix, w: &LayerWeights) -> Result<MatrixF32> {
    match (a, w) {
        (BatchMatrix::Bf16(a), LayerWeights::Bf16(l)) => gemm_bf16_f32(a, &l.raw),
        (BatchMatrix::F32(a), LayerWeights::F32(w)) => gemm_f32(a, w),
        _ => Err(Error::state("layer_matmul", "activation/weight precision mismatch")),
    }
}

/// Apply the activation elementwise and store at the configured precision.
fn activate_hidden(c: &MatrixF32, act: Activation, precision: Precision) -> BatchMatrix {
    match precision {
        Precision::F32Ref => {
            BatchMatrix::F32(MatrixF32 {
                rows: c.rows,
                cols: c.cols,
                data: c.data.iter().map(|&x| act.apply(x)).collect(),
            })
        }
        Precision::Bf16 => {
            let f = MatrixF32 {
                rows: c.rows,
                cols: c.cols,
                data: c.data.iter().map(|&x| act.apply(x)).collect(),
            };
            BatchMatrix::Bf16(f.quantize())
        }
    }
}

/// Run the layer loop: repeated matmul plus activation. The output layer
/// stays in f32 (it feeds the loss); hidden activations are re-quantized to
/// bf16 in Bf16 precision so the next GEMM consumes bf16.
pub fn forward_reference(
    params: &MlpParams,
    input: &BatchMatrix,
    want_cache: bool,
) -> Result<(MatrixF32, Option<ForwardCache>)> {
    let cfg = &params.config;
    if input.rows() == 0 {
        return Err(Error::shape("forward_reference", "input has zero rows"));
    }
    if input.cols() != cfg.width {
        return Err(Error::shape(
            "forward_reference",
            format!("input must be padded to width {}, got {} cols", cfg.width, input.cols()),
        ));
    }
    let precision_ok = matches!(
        (input, cfg.precision),
        (BatchMatrix::Bf16(_), Precision::Bf16) | (BatchMatrix::F32(_), Precision::F32Ref)
    );
    if !precision_ok {
        return Err(Error::state("forward_reference", "input precision does not match params"));
    }

    let nw = cfg.weight_count();
    let mut cache = want_cache.then(|| ForwardCache { activations: Vec::with_capacity(nw + 1) });
    if let Some(c) = cache.as_mut() {
        c.activations.push(input.clone());
    }

    let mut cur = input.clone();
    let mut output = None;
    for (i, w) in params.layers.iter().enumerate() {
        let pre = layer_matmul(&cur, w)?;
        if i + 1 == nw {
            let out = MatrixF32 {
                rows: pre.rows,
                cols: pre.cols,
                data: pre.data.iter().map(|&x| cfg.output_activation.apply(x)).collect(),
            };
            if let Some(c) = cache.as_mut() {
                c.activations.push(BatchMatrix::F32(out.clone()));
            }
            output = Some(out);
        } else {
            let next = activate_hidden(&pre, cfg.hidden_activation, cfg.precision);
            if let Some(c) = cache.as_mut() {
                c.activations.push(next.clone());
            }
            cur = next;
        }
    }
    Ok((output.expect("nlayers >= 2 guarantees at least one matmul"), cache))
}

/// L2 loss over the first `mask_cols` columns (padded columns excluded).
///
/// Reduction contract, shared with the fused executor: squared diffs are
/// summed per row ascending columns, the per-row partials are summed
/// ascending rows, and the total is divided once by `M * mask_cols`. Each
/// gradient entry is `(2 * diff) / (M * mask_cols)`.
pub fn loss_l2(
    prediction: &MatrixF32,
    target: &MatrixF32,
    mask_cols: usize,
) -> Result<(f32, MatrixF32)> {
    if prediction.rows != target.rows || prediction.cols != target.cols {
        return Err(Error::shape(
            "loss_l2",
            format!(
                "prediction {}x{} vs target {}x{}",
                prediction.rows, prediction.cols, target.rows, target.cols
            ),
        ));
    }
    if mask_cols == 0 || mask_cols > prediction.cols {
        return Err(Error::shape(
            "loss_l2",
            format!("mask_cols must be in 1..={}, got {mask_cols}", prediction.cols),
        ));
    }
    let denom = (prediction.rows * mask_cols) as f32;
    let mut grad = MatrixF32::zeros(prediction.rows, prediction.cols);
    let mut total = 0.0f32;
    for r in 0..prediction.rows {
        let p = prediction.row(r);
        let t = target.row(r);
        let g = &mut grad.data[r * prediction.cols..(r + 1) * prediction.cols];
        let mut partial = 0.0f32;
        for c in 0..mask_cols {
            let diff = p[c] - t[c];
            partial += diff * diff;
            g[c] = (2.0 * diff) / denom;
        }
        total += partial;
    }
    Ok((total / denom, grad))
}

fn check_cache(params: &MlpParams, cache: &ForwardCache, rows: usize) -> Result<()> {
    let cfg = &params.config;
    if cache.activations.len() != cfg.nlayers {
        return Err(Error::state(
            "backward_reference",
            format!("cache has {} activations, need {}", cache.activations.len(), cfg.nlayers),
        ));
    }
    for (i, a) in cache.activations.iter().enumerate() {
        if a.rows() != rows || a.cols() != cfg.width {
            return Err(Error::state(
                "backward_reference",
                format!("activation {i} is {}x{}, need {rows}x{}", a.rows(), a.cols(), cfg.width),
            ));
        }
    }
    Ok(())
}

/// Gate the propagated gradient through the layer's activation and store at
/// the configured precision.
fn gate_and_store(
    act: Activation,
    a: &BatchMatrix,
    t: &MatrixF32,
    precision: Precision,
) -> BatchMatrix {
    let mut gated = MatrixF32::zeros(t.rows, t.cols);
    for r in 0..t.rows {
        for c in 0..t.cols {
            gated.set(r, c, act.backprop(a.value(r, c), t.get(r, c)));
        }
    }
    match precision {
        Precision::F32Ref => BatchMatrix::F32(gated),
        Precision::Bf16 => BatchMatrix::Bf16(gated.quantize()),
    }
}

fn transpose_matmul(d: &BatchMatrix, w: &LayerWeights) -> Result<MatrixF32> {
    match (d, w) {
        (BatchMatrix::Bf16(d), LayerWeights::Bf16(l)) => gemm_bf16_f32(d, &l.raw.transposed()),
        (BatchMatrix::F32(d), LayerWeights::F32(w)) => gemm_f32(d, &w.transposed()),
        _ => Err(Error::state("transpose_matmul", "delta/weight precision mismatch")),
    }
}

fn grad_product(a: &BatchMatrix, d: &BatchMatrix) -> Result<MatrixF32> {
    match (a, d) {
        (BatchMatrix::Bf16(a), BatchMatrix::Bf16(d)) => gemm_at_b_bf16(a, d),
        (BatchMatrix::F32(a), BatchMatrix::F32(d)) => gemm_at_b_f32(a, d),
        _ => Err(Error::state("grad_product", "activation/delta precision mismatch")),
    }
}

/// Backward pass per the training recurrence: gate the output gradient, then
/// propagate `delta * W^T` through the hidden layers; weight gradients are
/// computed afterwards in a separate pass over the stored matrices.
pub fn backward_reference(
    params: &MlpParams,
    cache: &ForwardCache,
    output_grad: &MatrixF32,
) -> Result<(Gradients, BackwardCache)> {
    let cfg = &params.config;
    let rows = output_grad.rows;
    check_cache(params, cache, rows)?;
    if output_grad.cols != cfg.width {
        return Err(Error::shape(
            "backward_reference",
            format!("output grad has {} cols, need {}", output_grad.cols, cfg.width),
        ));
    }

    let nw = cfg.weight_count();
    // deltas[j] is the gradient at layer j's matmul output; fill from the top.
    let mut deltas: Vec<Option<BatchMatrix>> = vec![None; nw];
    let prediction = &cache.activations[cfg.nlayers - 1];
    deltas[nw - 1] = Some(gate_and_store(
        cfg.output_activation,
        prediction,
        output_grad,
        cfg.precision,
    ));
    for j in (0..nw - 1).rev() {
        let propagated = transpose_matmul(
            deltas[j + 1].as_ref().expect("filled by previous iteration"),
            &params.layers[j + 1],
        )?;
        deltas[j] = Some(gate_and_store(
            cfg.hidden_activation,
            &cache.activations[j + 1],
            &propagated,
            cfg.precision,
        ));
    }
    let deltas: Vec<BatchMatrix> = deltas.into_iter().map(|d| d.expect("all filled")).collect();

    // Separate pass for the weight-gradient products, mirroring the split
    // between the fused kernel and its follow-up GEMM stage.
    let mut weight_grads = Vec::with_capacity(nw);
    for j in 0..nw {
        weight_grads.push(grad_product(&cache.activations[j], &deltas[j])?);
    }

    Ok((Gradients { weight_grads }, BackwardCache { deltas }))
}

/// Forward, loss and backward in one call. No optimizer update.
pub fn train_step_reference(
    params: &MlpParams,
    input: &BatchMatrix,
    target: &MatrixF32,
    mask_cols: usize,
) -> Result<(f32, Gradients)> {
    let (prediction, cache) = forward_reference(params, input, true)?;
    let cache = cache.expect("cache requested");
    let (loss, output_grad) = loss_l2(&prediction, target, mask_cols)?;
    let (grads, _) = backward_reference(params, &cache, &output_grad)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bf16::quantize_f32;
    use crate::matrix::MatrixBf16;
    use crate::mlp::{init_params, MlpConfig};

    fn cfg(width: usize, nlayers: usize, precision: Precision) -> MlpConfig {
        MlpConfig {
            width,
            in_width: width,
            out_width: width,
            nlayers,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Linear,
            precision,
        }
    }

    fn random_input(rows: usize, cols: usize, mut state: u32) -> MatrixF32 {
        MatrixF32::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(1664525).wrapping_add(1013904223);
            (state >> 8) as f32 / (1u32 << 24) as f32 * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_weights_return_quantized_input() {
        let c = cfg(16, 2, Precision::Bf16);
        let eye = MatrixF32::from_fn(16, 16, |r, cc| if r == cc { 1.0 } else { 0.0 });
        let params = MlpParams::from_f32_weights(c, vec![eye]).unwrap();
        let x = random_input(4, 16, 3);
        let input = BatchMatrix::Bf16(x.quantize());
        let (out, _) = forward_reference(&params, &input, false).unwrap();
        for r in 0..4 {
            for cc in 0..16 {
                assert_eq!(out.get(r, cc), quantize_f32(x.get(r, cc)));
            }
        }
    }

    #[test]
    fn zero_weights_propagate_zero() {
        let c = cfg(16, 3, Precision::Bf16);
        let zero = MatrixF32::zeros(16, 16);
        let params = MlpParams::from_f32_weights(c, vec![zero.clone(), zero]).unwrap();
        let input = BatchMatrix::Bf16(random_input(4, 16, 9).quantize());
        let (out, _) = forward_reference(&params, &input, false).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // Independent oracle: materialize every matrix with the naive
        // triple-loop product and the same precision rules.
        let c = cfg(16, 3, Precision::Bf16);
        let params = init_params(c, 11).unwrap();
        let input = random_input(4, 16, 21).quantize();

        let mut cur = input.clone();
        for (i, layer) in params.layers.iter().enumerate() {
            let LayerWeights::Bf16(pl) = layer else { unreachable!() };
            let mut pre = MatrixF32::zeros(4, 16);
            for r in 0..4 {
                for cc in 0..16 {
                    let mut acc = 0.0f32;
                    for k in 0..16 {
                        acc += cur.get(r, k).to_f32() * pl.raw.get(k, cc).to_f32();
                    }
                    pre.set(r, cc, acc);
                }
            }
            if i + 1 == params.layers.len() {
                let (out, _) =
                    forward_reference(&params, &BatchMatrix::Bf16(input.clone()), false).unwrap();
                assert!(out.bitwise_eq(&pre)); // linear output activation
                return;
            }
            let mut next = MatrixBf16::zeros(4, 16);
            for r in 0..4 {
                for cc in 0..16 {
                    let a = Activation::Relu.apply(pre.get(r, cc));
                    next.set(r, cc, crate::bf16::Bf16::from_f32(a));
                }
            }
            cur = next;
        }
    }

    #[test]
    fn loss_scalar_example() {
        let p = MatrixF32::from_vec(1, 1, vec![3.0]).unwrap();
        let t = MatrixF32::from_vec(1, 1, vec![1.0]).unwrap();
        let (loss, grad) = loss_l2(&p, &t, 1).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(grad.data, vec![4.0]);
    }

    #[test]
    fn loss_zero_residual() {
        let p = random_input(3, 8, 5);
        let (loss, grad) = loss_l2(&p, &p.clone(), 8).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_mean_is_invariant_to_duplicated_rows() {
        let p = random_input(2, 4, 31);
        let t = random_input(2, 4, 77);
        let (l1, _) = loss_l2(&p, &t, 4).unwrap();
        let mut p2 = p.data.clone();
        p2.extend_from_slice(&p.data);
        let mut t2 = t.data.clone();
        t2.extend_from_slice(&t.data);
        let (l2, _) = loss_l2(
            &MatrixF32::from_vec(4, 4, p2).unwrap(),
            &MatrixF32::from_vec(4, 4, t2).unwrap(),
            4,
        )
        .unwrap();
        assert!((l1 - l2).abs() < 1e-6 * l1.abs().max(1.0));
    }

    #[test]
    fn masked_columns_carry_no_gradient() {
        let p = random_input(3, 8, 13);
        let t = random_input(3, 8, 17);
        let (_, grad) = loss_l2(&p, &t, 5).unwrap();
        for r in 0..3 {
            for c in 5..8 {
                assert_eq!(grad.get(r, c), 0.0);
            }
        }
    }

    #[test]
    fn linear_two_layer_grad_is_exact_product() {
        let c = MlpConfig { hidden_activation: Activation::Linear, ..cfg(16, 2, Precision::F32Ref) };
        let params = init_params(c, 5).unwrap();
        let input = BatchMatrix::F32(random_input(4, 16, 41));
        let (pred, cache) = forward_reference(&params, &input, true).unwrap();
        let target = random_input(4, 16, 43);
        let (_, output_grad) = loss_l2(&pred, &target, 16).unwrap();
        let (grads, _) = backward_reference(&params, cache.as_ref().unwrap(), &output_grad).unwrap();
        let expected = gemm_at_b_f32(input.as_f32().unwrap(), &output_grad).unwrap();
        assert!(grads.weight_grads[0].bitwise_eq(&expected));
    }

    #[test]
    fn relu_dead_units_zero_their_deltas() {
        let c = cfg(16, 4, Precision::F32Ref);
        let params = init_params(c, 19).unwrap();
        let input = BatchMatrix::F32(random_input(8, 16, 23));
        let (pred, cache) = forward_reference(&params, &input, true).unwrap();
        let cache = cache.unwrap();
        let target = random_input(8, 16, 29);
        let (_, output_grad) = loss_l2(&pred, &target, 16).unwrap();
        let (_, bcache) = backward_reference(&params, &cache, &output_grad).unwrap();
        // deltas[j] pairs with activation j+1; hidden activations gate them.
        for j in 0..params.layers.len() - 1 {
            let a = &cache.activations[j + 1];
            let d = &bcache.deltas[j];
            for r in 0..8 {
                for cc in 0..16 {
                    if a.value(r, cc) <= 0.0 {
                        assert_eq!(d.value(r, cc), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_weights_kill_all_upstream_gradients() {
        let c = cfg(16, 3, Precision::Bf16);
        let zero = MatrixF32::zeros(16, 16);
        let params = MlpParams::from_f32_weights(c, vec![zero.clone(), zero]).unwrap();
        let input = BatchMatrix::Bf16(random_input(4, 16, 3).quantize());
        let target = random_input(4, 16, 51);
        let (_, grads) = train_step_reference(&params, &input, &target, 16).unwrap();
        // All hidden activations are zero, so every gradient except the
        // first layer's vanishes.
        assert!(grads.weight_grads[1].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_step_equals_manual_composition() {
        let c = cfg(16, 3, Precision::Bf16);
        let params = init_params(c, 61).unwrap();
        let input = BatchMatrix::Bf16(random_input(4, 16, 71).quantize());
        let target = random_input(4, 16, 73);
        let (loss, grads) = train_step_reference(&params, &input, &target, 16).unwrap();

        let (pred, cache) = forward_reference(&params, &input, true).unwrap();
        let (loss2, og) = loss_l2(&pred, &target, 16).unwrap();
        let (grads2, _) = backward_reference(&params, cache.as_ref().unwrap(), &og).unwrap();
        assert_eq!(loss.to_bits(), loss2.to_bits());
        assert!(grads.bitwise_eq(&grads2));
    }

    #[test]
    fn incomplete_cache_is_a_state_error() {
        let c = cfg(16, 3, Precision::Bf16);
        let params = init_params(c, 81).unwrap();
        let input = BatchMatrix::Bf16(random_input(4, 16, 83).quantize());
        let (_, cache) = forward_reference(&params, &input, true).unwrap();
        let mut cache = cache.unwrap();
        cache.activations.pop();
        let og = MatrixF32::zeros(4, 16);
        assert!(matches!(
            backward_reference(&params, &cache, &og),
            Err(Error::State { .. })
        ));
    }
}
