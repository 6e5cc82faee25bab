//! Block-row executor and the follow-up weight-gradient pass.

use std::ops::Range;

use crate::bf16::Bf16;
use crate::error::{Error, Result};
use crate::matrix::{MatrixBf16, MatrixF32};
use crate::mlp::{
    Activation, BackwardCache, BatchMatrix, ForwardCache, Gradients, LayerWeights, MlpParams,
    Precision,
};

use super::{TileConfig, TN};

/// Everything a training call produces. Loss and gradients are bitwise equal
/// to the reference path; the caches hold the stored activation and
/// pre-activation-gradient matrices.
#[derive(Debug, Clone)]
pub struct FusedTrainOutput {
    pub loss: f32,
    pub gradients: Gradients,
    pub forward: ForwardCache,
    pub backward: BackwardCache,
}

fn bf16_layers(params: &MlpParams, op: &'static str) -> Result<()> {
    if params.config.precision != Precision::Bf16
        || params.layers.iter().any(|l| !matches!(l, LayerWeights::Bf16(_)))
    {
        return Err(Error::state(op, "fused executor requires bf16 params"));
    }
    Ok(())
}

fn check_padded_input(
    op: &'static str,
    input: &MatrixBf16,
    width: usize,
    tile: &TileConfig,
) -> Result<()> {
    tile.check_width(width)?;
    if input.cols != width {
        return Err(Error::shape(
            op,
            format!("input has {} cols, params expect width {width}", input.cols),
        ));
    }
    if input.rows == 0 || input.rows % tile.tm != 0 {
        return Err(Error::shape(
            op,
            format!("batch of {} rows is not padded to tm={}", input.rows, tile.tm),
        ));
    }
    Ok(())
}

/// Contiguous per-worker row ranges aligned to block boundaries.
fn worker_ranges(m: usize, tm: usize, workers: usize) -> Vec<Range<usize>> {
    let nblocks = m / tm;
    let w = workers.min(nblocks).max(1);
    let base = nblocks / w;
    let extra = nblocks % w;
    let mut ranges = Vec::with_capacity(w);
    let mut start = 0;
    for i in 0..w {
        let end = start + (base + usize::from(i < extra)) * tm;
        ranges.push(start..end);
        start = end;
    }
    ranges
}

/// Split a row-major buffer into the per-range row chunks.
fn split_rows<'a, T>(mut data: &'a mut [T], cols: usize, ranges: &[Range<usize>]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(ranges.len());
    for r in ranges {
        let (head, tail) = data.split_at_mut((r.end - r.start) * cols);
        out.push(head);
        data = tail;
    }
    debug_assert!(data.is_empty());
    out
}

/// `per_matrix[m][w]` -> `per_worker[w][m]`.
fn transpose_chunks<T>(per_matrix: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let workers = per_matrix.first().map_or(0, Vec::len);
    let mut out: Vec<Vec<T>> = (0..workers).map(|_| Vec::with_capacity(per_matrix.len())).collect();
    for chunks in per_matrix {
        for (w, chunk) in chunks.into_iter().enumerate() {
            out[w].push(chunk);
        }
    }
    out
}

/// Stage every layer's packed weights into dense f32 scratch, one buffer per
/// layer. Each worker stages its own copy once per call (the SLM analog).
fn stage_weights(params: &MlpParams, transposed: bool) -> Vec<Vec<f32>> {
    params
        .layers
        .iter()
        .map(|l| {
            let LayerWeights::Bf16(pl) = l else { unreachable!("checked by bf16_layers") };
            let packed = if transposed { &pl.packed_t } else { &pl.packed };
            let mut buf = vec![0.0f32; packed.k * packed.n];
            packed.unpack_into_f32(&mut buf);
            buf
        })
        .collect()
}

/// Multiply a tm x width block by a staged width x width matrix.
///
/// Tile walk: 16-wide column tiles, reduction index ascending over all of
/// `width` (chunks of 16 ascending, elements within a chunk ascending), one
/// f32 accumulator per output element. This is the same per-element chain as
/// the reference GEMM, which is what makes the paths bitwise equal.
fn block_matmul(act: &[f32], stage: &[f32], width: usize, tm: usize, out: &mut [f32]) {
    debug_assert_eq!(act.len(), tm * width);
    debug_assert_eq!(out.len(), tm * width);
    debug_assert_eq!(stage.len(), width * width);
    for ct in 0..width / TN {
        let base = ct * TN;
        let mut r = 0;
        // Four independent accumulator chains keep the FP adders busy.
        while r + 4 <= tm {
            let mut acc0 = [0.0f32; TN];
            let mut acc1 = [0.0f32; TN];
            let mut acc2 = [0.0f32; TN];
            let mut acc3 = [0.0f32; TN];
            for kk in 0..width {
                let w: &[f32; TN] =
                    stage[kk * width + base..kk * width + base + TN].try_into().unwrap();
                let a0 = act[r * width + kk];
                let a1 = act[(r + 1) * width + kk];
                let a2 = act[(r + 2) * width + kk];
                let a3 = act[(r + 3) * width + kk];
                for c in 0..TN {
                    acc0[c] += a0 * w[c];
                    acc1[c] += a1 * w[c];
                    acc2[c] += a2 * w[c];
                    acc3[c] += a3 * w[c];
                }
            }
            out[r * width + base..r * width + base + TN].copy_from_slice(&acc0);
            out[(r + 1) * width + base..(r + 1) * width + base + TN].copy_from_slice(&acc1);
            out[(r + 2) * width + base..(r + 2) * width + base + TN].copy_from_slice(&acc2);
            out[(r + 3) * width + base..(r + 3) * width + base + TN].copy_from_slice(&acc3);
            r += 4;
        }
        while r < tm {
            let mut acc = [0.0f32; TN];
            for kk in 0..width {
                let w: &[f32; TN] =
                    stage[kk * width + base..kk * width + base + TN].try_into().unwrap();
                let a = act[r * width + kk];
                for c in 0..TN {
                    acc[c] += a * w[c];
                }
            }
            out[r * width + base..r * width + base + TN].copy_from_slice(&acc);
            r += 1;
        }
    }
}

fn run_inference_rows(
    params: &MlpParams,
    tile: &TileConfig,
    input_rows: &[Bf16],
    out_rows: &mut [f32],
) {
    let width = params.config.width;
    let tm = tile.tm;
    let nw = params.config.weight_count();
    let hidden_act = params.config.hidden_activation;
    let output_act = params.config.output_activation;
    let stages = stage_weights(params, false);

    let mut act = vec![0.0f32; tm * width];
    let mut pre = vec![0.0f32; tm * width];
    let block_len = tm * width;
    for b in 0..out_rows.len() / block_len {
        let off = b * block_len;
        for (dst, src) in act.iter_mut().zip(&input_rows[off..off + block_len]) {
            *dst = src.to_f32();
        }
        for (j, stage) in stages.iter().enumerate() {
            block_matmul(&act, stage, width, tm, &mut pre);
            if j + 1 == nw {
                for (dst, &v) in out_rows[off..off + block_len].iter_mut().zip(&pre) {
                    *dst = output_act.apply(v);
                }
            } else {
                for (dst, &v) in act.iter_mut().zip(&pre) {
                    *dst = Bf16::from_f32(hidden_act.apply(v)).to_f32();
                }
            }
        }
    }
}

/// Run the layer loop for every block of `tm` rows, keeping the block in a
/// cache-resident working buffer; only the final activation is written out.
/// Bitwise equal to `forward_reference` in bf16 precision.
pub fn fused_inference(
    params: &MlpParams,
    input: &MatrixBf16,
    tile: &TileConfig,
) -> Result<MatrixF32> {
    bf16_layers(params, "fused_inference")?;
    check_padded_input("fused_inference", input, params.config.width, tile)?;

    let width = params.config.width;
    let mut out = MatrixF32::zeros(input.rows, width);
    let ranges = worker_ranges(input.rows, tile.tm, tile.workers);
    if ranges.len() == 1 {
        run_inference_rows(params, tile, &input.data, &mut out.data);
        return Ok(out);
    }
    let out_chunks = split_rows(&mut out.data, width, &ranges);
    std::thread::scope(|s| {
        for (range, chunk) in ranges.iter().zip(out_chunks) {
            let input_rows = &input.data[range.start * width..range.end * width];
            s.spawn(move || run_inference_rows(params, tile, input_rows, chunk));
        }
    });
    Ok(out)
}

struct TrainSlices<'a> {
    input_rows: &'a [Bf16],
    target_rows: &'a [f32],
    /// Stored hidden activations, one slice per hidden layer.
    hidden: Vec<&'a mut [Bf16]>,
    /// Final-layer output rows (f32).
    prediction: &'a mut [f32],
    /// Stored pre-activation gradients, one slice per weight matrix.
    deltas: Vec<&'a mut [Bf16]>,
    /// Per-row sums of squared masked diffs.
    partials: &'a mut [f32],
}

fn run_train_rows(params: &MlpParams, tile: &TileConfig, mask_cols: usize, denom: f32, sl: TrainSlices) {
    let width = params.config.width;
    let tm = tile.tm;
    let nw = params.config.weight_count();
    let hidden_act = params.config.hidden_activation;
    let output_act = params.config.output_activation;
    let stages_fwd = stage_weights(params, false);
    let stages_bwd = stage_weights(params, true);

    let mut act = vec![0.0f32; tm * width];
    let mut pre = vec![0.0f32; tm * width];
    let mut delta = vec![0.0f32; tm * width];
    let block_len = tm * width;
    for b in 0..sl.prediction.len() / block_len {
        let off = b * block_len;
        // Forward, storing every activation block.
        for (dst, src) in act.iter_mut().zip(&sl.input_rows[off..off + block_len]) {
            *dst = src.to_f32();
        }
        for j in 0..nw {
            block_matmul(&act, &stages_fwd[j], width, tm, &mut pre);
            if j + 1 == nw {
                for (dst, &v) in sl.prediction[off..off + block_len].iter_mut().zip(&pre) {
                    *dst = output_act.apply(v);
                }
            } else {
                let store = &mut sl.hidden[j][off..off + block_len];
                for i in 0..block_len {
                    let q = Bf16::from_f32(hidden_act.apply(pre[i]));
                    store[i] = q;
                    act[i] = q.to_f32();
                }
            }
        }
        // Loss block and the gated output gradient.
        for r in 0..tm {
            let row = off + r * width;
            let mut partial = 0.0f32;
            for c in 0..width {
                let grad = if c < mask_cols {
                    let diff = sl.prediction[row + c] - sl.target_rows[row + c];
                    partial += diff * diff;
                    (2.0 * diff) / denom
                } else {
                    0.0
                };
                let gated = output_act.backprop(sl.prediction[row + c], grad);
                let q = Bf16::from_f32(gated);
                sl.deltas[nw - 1][row + c] = q;
                delta[r * width + c] = q.to_f32();
            }
            sl.partials[off / width + r] = partial;
        }
        // Backward recurrence with the transpose-staged weights.
        for j in (0..nw - 1).rev() {
            block_matmul(&delta, &stages_bwd[j + 1], width, tm, &mut pre);
            let gate = &sl.hidden[j][off..off + block_len];
            let store = &mut sl.deltas[j][off..off + block_len];
            for i in 0..block_len {
                let gated = hidden_act.backprop(gate[i].to_f32(), pre[i]);
                let q = Bf16::from_f32(gated);
                store[i] = q;
                delta[i] = q.to_f32();
            }
        }
    }
}

/// Forward, loss block and backward recurrence per block-row, then a
/// separate pass over the stored matrices for the weight gradients.
/// Loss and every gradient are bitwise equal to `train_step_reference`.
pub fn fused_train(
    params: &MlpParams,
    input: &MatrixBf16,
    target: &MatrixF32,
    tile: &TileConfig,
    mask_cols: usize,
) -> Result<FusedTrainOutput> {
    bf16_layers(params, "fused_train")?;
    check_padded_input("fused_train", input, params.config.width, tile)?;
    let width = params.config.width;
    if target.rows != input.rows || target.cols != width {
        return Err(Error::shape(
            "fused_train",
            format!(
                "target is {}x{}, need {}x{width}",
                target.rows, target.cols, input.rows
            ),
        ));
    }
    if mask_cols == 0 || mask_cols > width {
        return Err(Error::shape(
            "fused_train",
            format!("mask_cols must be in 1..={width}, got {mask_cols}"),
        ));
    }

    let m = input.rows;
    let nw = params.config.weight_count();
    let denom = (m * mask_cols) as f32;

    let mut hidden: Vec<MatrixBf16> = (0..nw - 1).map(|_| MatrixBf16::zeros(m, width)).collect();
    let mut prediction = MatrixF32::zeros(m, width);
    let mut deltas: Vec<MatrixBf16> = (0..nw).map(|_| MatrixBf16::zeros(m, width)).collect();
    let mut partials = vec![0.0f32; m];

    let ranges = worker_ranges(m, tile.tm, tile.workers);
    {
        let hidden_chunks = transpose_chunks(
            hidden.iter_mut().map(|h| split_rows(&mut h.data, width, &ranges)).collect(),
        );
        let delta_chunks = transpose_chunks(
            deltas.iter_mut().map(|d| split_rows(&mut d.data, width, &ranges)).collect(),
        );
        let pred_chunks = split_rows(&mut prediction.data, width, &ranges);
        let partial_chunks = split_rows(&mut partials, 1, &ranges);

        let mut slices: Vec<TrainSlices> = ranges
            .iter()
            .zip(hidden_chunks)
            .zip(delta_chunks)
            .zip(pred_chunks)
            .zip(partial_chunks)
            .map(|((((range, hidden), deltas), prediction), partials)| TrainSlices {
                input_rows: &input.data[range.start * width..range.end * width],
                target_rows: &target.data[range.start * width..range.end * width],
                hidden,
                prediction,
                deltas,
                partials,
            })
            .collect();

        if slices.len() == 1 {
            run_train_rows(params, tile, mask_cols, denom, slices.pop().expect("one slice"));
        } else {
            std::thread::scope(|s| {
                for sl in slices {
                    s.spawn(move || run_train_rows(params, tile, mask_cols, denom, sl));
                }
            });
        }
    }

    // Per-row partials reduce in ascending row order; this is the same
    // summation chain as the reference loss.
    let mut total = 0.0f32;
    for &p in &partials {
        total += p;
    }
    let loss = total / denom;

    let mut activations = Vec::with_capacity(nw + 1);
    activations.push(BatchMatrix::Bf16(input.clone()));
    activations.extend(hidden.into_iter().map(BatchMatrix::Bf16));
    activations.push(BatchMatrix::F32(prediction));
    let forward = ForwardCache { activations };
    let backward = BackwardCache { deltas: deltas.into_iter().map(BatchMatrix::Bf16).collect() };

    let gradients = grad_gemm_pass(&forward, &backward, tile.workers)?;
    Ok(FusedTrainOutput { loss, gradients, forward, backward })
}

struct GradTask<'a> {
    activation: &'a BatchMatrix,
    delta: &'a BatchMatrix,
    k_start: usize,
    k_len: usize,
    out_rows: &'a mut [f32],
}

fn widen_row_into(src: &BatchMatrix, row: usize, c0: usize, dst: &mut [f32]) {
    match src {
        BatchMatrix::F32(m) => dst.copy_from_slice(&m.row(row)[c0..c0 + dst.len()]),
        BatchMatrix::Bf16(m) => {
            for (d, s) in dst.iter_mut().zip(&m.row(row)[c0..c0 + dst.len()]) {
                *d = s.to_f32();
            }
        }
    }
}

fn run_grad_task(task: &mut GradTask<'_>, n: usize, rows: usize) {
    // Stream both matrices once; each output element accumulates in
    // ascending batch-row order, matching the reference transpose GEMM.
    let mut a_buf = vec![0.0f32; task.k_len];
    let mut d_buf = vec![0.0f32; n];
    for m in 0..rows {
        widen_row_into(task.activation, m, task.k_start, &mut a_buf);
        widen_row_into(task.delta, m, 0, &mut d_buf);
        for (ki, &av) in a_buf.iter().enumerate() {
            let g_row = &mut task.out_rows[ki * n..(ki + 1) * n];
            for (gv, &dv) in g_row.iter_mut().zip(&d_buf) {
                *gv += av * dv;
            }
        }
    }
}

/// Weight-gradient products over the full stored matrices, parallel across
/// (layer, output row tile) with each output element owned by one worker.
pub fn grad_gemm_pass(
    cache: &ForwardCache,
    dcache: &BackwardCache,
    workers: usize,
) -> Result<Gradients> {
    let nw = dcache.deltas.len();
    if nw == 0 || cache.activations.len() != nw + 1 {
        return Err(Error::state(
            "grad_gemm_pass",
            format!("{} activations with {} deltas", cache.activations.len(), nw),
        ));
    }
    let rows = cache.activations[0].rows();
    for (j, d) in dcache.deltas.iter().enumerate() {
        let a = &cache.activations[j];
        if a.rows() != rows || d.rows() != rows {
            return Err(Error::state("grad_gemm_pass", format!("row mismatch at layer {j}")));
        }
    }

    let mut grads: Vec<MatrixF32> = (0..nw)
        .map(|j| MatrixF32::zeros(cache.activations[j].cols(), dcache.deltas[j].cols()))
        .collect();

    let mut tasks: Vec<GradTask> = Vec::new();
    for (j, g) in grads.iter_mut().enumerate() {
        let k = g.rows;
        let n = g.cols;
        let mut data = g.data.as_mut_slice();
        let mut k_start = 0;
        while k_start < k {
            let k_len = TN.min(k - k_start);
            let (head, tail) = data.split_at_mut(k_len * n);
            data = tail;
            tasks.push(GradTask {
                activation: &cache.activations[j],
                delta: &dcache.deltas[j],
                k_start,
                k_len,
                out_rows: head,
            });
            k_start += k_len;
        }
    }

    let w = workers.max(1).min(tasks.len().max(1));
    if w <= 1 {
        for task in tasks.iter_mut() {
            let n = task.delta.cols();
            run_grad_task(task, n, rows);
        }
    } else {
        let per = tasks.len().div_ceil(w);
        let mut buckets: Vec<Vec<GradTask>> = Vec::with_capacity(w);
        let mut it = tasks.into_iter();
        for _ in 0..w {
            buckets.push(it.by_ref().take(per).collect());
        }
        std::thread::scope(|s| {
            for mut bucket in buckets {
                s.spawn(move || {
                    for task in bucket.iter_mut() {
                        let n = task.delta.cols();
                        run_grad_task(task, n, rows);
                    }
                });
            }
        });
    }

    Ok(Gradients { weight_grads: grads })
}

fn run_matmul_rows(
    stage: &[f32],
    width: usize,
    tm: usize,
    input_rows: &[Bf16],
    out_rows: &mut [f32],
) {
    let mut act = vec![0.0f32; tm * width];
    let block_len = tm * width;
    for b in 0..out_rows.len() / block_len {
        let off = b * block_len;
        for (dst, src) in act.iter_mut().zip(&input_rows[off..off + block_len]) {
            *dst = src.to_f32();
        }
        block_matmul(&act, stage, width, tm, &mut out_rows[off..off + block_len]);
    }
}

/// Gradient with respect to the network input: the first-layer delta times
/// the first weight matrix transposed. Feeds trainable input encodings.
pub fn input_gradient(
    params: &MlpParams,
    first_delta: &MatrixBf16,
    tile: &TileConfig,
) -> Result<MatrixF32> {
    bf16_layers(params, "input_gradient")?;
    check_padded_input("input_gradient", first_delta, params.config.width, tile)?;
    let width = params.config.width;
    let LayerWeights::Bf16(pl) = &params.layers[0] else { unreachable!() };
    let mut stage = vec![0.0f32; width * width];
    pl.packed_t.unpack_into_f32(&mut stage);

    let mut out = MatrixF32::zeros(first_delta.rows, width);
    let ranges = worker_ranges(first_delta.rows, tile.tm, tile.workers);
    if ranges.len() == 1 {
        run_matmul_rows(&stage, width, tile.tm, &first_delta.data, &mut out.data);
        return Ok(out);
    }
    let chunks = split_rows(&mut out.data, width, &ranges);
    let stage_ref = &stage;
    std::thread::scope(|s| {
        for (range, chunk) in ranges.iter().zip(chunks) {
            let rows = &first_delta.data[range.start * width..range.end * width];
            s.spawn(move || run_matmul_rows(stage_ref, width, tile.tm, rows, chunk));
        }
    });
    Ok(out)
}
