//! Forward and reverse kernels for one transition.
//!
//! Fired cells are processed in fixed-size chunks. Chunks run on the rayon
//! pool, but every reduction over chunks happens afterwards in chunk order,
//! so results do not depend on how many threads executed them.

use rayon::prelude::*;

use crate::grid::{CellGrid, TAP_OFFSETS};
use crate::linalg::{matmul, matmul_nt, matmul_tn};
use crate::params::{ModelParams, TAPS};

pub(crate) const CHUNK: usize = 256;

#[inline]
fn clamp_index(i: usize, delta: isize, len: usize) -> usize {
    (i as isize + delta).clamp(0, len as isize - 1) as usize
}

/// Source cell of tap `t` for the cell at `(row, col)` under edge clamping.
#[inline]
pub(crate) fn tap_source(grid: &CellGrid, row: usize, col: usize, t: usize) -> usize {
    let (dy, dx) = TAP_OFFSETS[t];
    clamp_index(row, dy, grid.height()) * grid.width() + clamp_index(col, dx, grid.width())
}

/// Writes `[s, conv_a(s), conv_b(s)]` for one cell into `out` (length `3d`).
pub(crate) fn perceive_cell(grid: &CellGrid, params: &ModelParams, row: usize, col: usize, out: &mut [f64]) {
    let d = grid.channels();
    let values = grid.values();
    let (own, rest) = out.split_at_mut(d);
    let (conv_a, conv_b) = rest.split_at_mut(d);
    own.copy_from_slice(grid.cell(row, col));
    conv_a.fill(0.0);
    conv_b.fill(0.0);
    for t in 0..TAPS {
        let src = tap_source(grid, row, col, t) * d;
        let s = &values[src..src + d];
        let ka = &params.kernel_a[t * d..(t + 1) * d];
        let kb = &params.kernel_b[t * d..(t + 1) * d];
        for ch in 0..d {
            conv_a[ch] += ka[ch] * s[ch];
            conv_b[ch] += kb[ch] * s[ch];
        }
    }
}

/// Activations of one chunk of fired cells, kept for the reverse pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct ChunkRecord {
    /// Perception vectors, `rows × 3d`.
    z: Vec<f64>,
    /// Hidden pre-activations, `rows × H`.
    pre: Vec<f64>,
}

/// Everything the reverse pass needs about one transition besides the
/// input state itself.
#[derive(Debug, Clone, Default)]
pub(crate) struct StepRecord {
    active: Vec<u32>,
    chunks: Vec<ChunkRecord>,
}

fn forward_chunk(grid: &CellGrid, params: &ModelParams, cells: &[u32]) -> (ChunkRecord, Vec<f64>) {
    let d = grid.channels();
    let n = params.perception_width();
    let h = params.hidden();
    let rows = cells.len();
    let w = grid.width();

    let mut z = vec![0.0; rows * n];
    for (&cell, out) in cells.iter().zip(z.chunks_exact_mut(n)) {
        let cell = cell as usize;
        perceive_cell(grid, params, cell / w, cell % w, out);
    }

    let mut pre = vec![0.0; rows * h];
    for row in pre.chunks_exact_mut(h) {
        row.copy_from_slice(&params.b1);
    }
    matmul(rows, n, h, &z, &params.w1, &mut pre, true);

    let hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
    let mut delta = vec![0.0; rows * d];
    for row in delta.chunks_exact_mut(d) {
        row.copy_from_slice(&params.b2);
    }
    matmul(rows, h, d, &hidden, &params.w2, &mut delta, true);

    (ChunkRecord { z, pre }, delta)
}

/// Applies one masked residual update to the cells listed in `active`.
pub(crate) fn forward(
    grid: &CellGrid,
    params: &ModelParams,
    active: &[u32],
    gain: f64,
    record: Option<&mut StepRecord>,
) -> CellGrid {
    let d = grid.channels();
    let results: Vec<(ChunkRecord, Vec<f64>)> = active
        .par_chunks(CHUNK)
        .map(|cells| forward_chunk(grid, params, cells))
        .collect();

    let mut next = grid.clone();
    let values = next.values_mut();
    for (cells, (_, delta)) in active.chunks(CHUNK).zip(&results) {
        for (&cell, dv) in cells.iter().zip(delta.chunks_exact(d)) {
            let s = &mut values[cell as usize * d..(cell as usize + 1) * d];
            if gain == 1.0 {
                for (x, dx) in s.iter_mut().zip(dv) {
                    *x += dx;
                }
            } else {
                for (x, dx) in s.iter_mut().zip(dv) {
                    *x += gain * dx;
                }
            }
        }
    }

    if let Some(rec) = record {
        rec.active = active.to_vec();
        rec.chunks = results.into_iter().map(|(r, _)| r).collect();
    }
    next
}

struct ChunkGrad {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    /// `∂L/∂z` for each row, `rows × 3d`.
    z: Vec<f64>,
}

fn backward_chunk(
    params: &ModelParams,
    cells: &[u32],
    rec: &ChunkRecord,
    gain: f64,
    g_next: &[f64],
) -> ChunkGrad {
    let d = params.channels();
    let n = params.perception_width();
    let h = params.hidden();
    let rows = cells.len();

    let mut g_delta = Vec::with_capacity(rows * d);
    for &cell in cells {
        let g = &g_next[cell as usize * d..(cell as usize + 1) * d];
        g_delta.extend(g.iter().map(|v| v * gain));
    }

    let hidden: Vec<f64> = rec.pre.iter().map(|&a| a.max(0.0)).collect();
    let mut w2 = vec![0.0; h * d];
    matmul_tn(h, rows, d, &hidden, &g_delta, &mut w2);
    let b2 = column_sums(&g_delta, d);

    let mut g_pre = vec![0.0; rows * h];
    matmul_nt(rows, d, h, &g_delta, &params.w2, &mut g_pre);
    for (g, &a) in g_pre.iter_mut().zip(&rec.pre) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }

    let mut w1 = vec![0.0; n * h];
    matmul_tn(n, rows, h, &rec.z, &g_pre, &mut w1);
    let b1 = column_sums(&g_pre, h);

    let mut z = vec![0.0; rows * n];
    matmul_nt(rows, h, n, &g_pre, &params.w1, &mut z);

    ChunkGrad { w1, b1, w2, b2, z }
}

fn column_sums(m: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Reverse pass through one transition `prev → next`.
///
/// `g_next` is `∂L/∂next`; parameter gradients are accumulated into
/// `grads` and `∂L/∂prev` is returned. The residual connection carries
/// `g_next` through unchanged for every cell, fired or not.
pub(crate) fn backward(
    prev: &CellGrid,
    params: &ModelParams,
    record: &StepRecord,
    gain: f64,
    g_next: &[f64],
    grads: &mut ModelParams,
) -> Vec<f64> {
    let d = prev.channels();
    let n = params.perception_width();
    let w = prev.width();

    let partials: Vec<ChunkGrad> = record
        .active
        .par_chunks(CHUNK)
        .zip(record.chunks.par_iter())
        .map(|(cells, rec)| backward_chunk(params, cells, rec, gain, g_next))
        .collect();

    let mut g_prev = g_next.to_vec();
    let state = prev.values();
    for (cells, part) in record.active.chunks(CHUNK).zip(&partials) {
        add_into(&mut grads.w1, &part.w1);
        add_into(&mut grads.b1, &part.b1);
        add_into(&mut grads.w2, &part.w2);
        add_into(&mut grads.b2, &part.b2);

        for (&cell, gz) in cells.iter().zip(part.z.chunks_exact(n)) {
            let cell = cell as usize;
            add_into(&mut g_prev[cell * d..(cell + 1) * d], &gz[..d]);
            let g_a = &gz[d..2 * d];
            let g_b = &gz[2 * d..];
            let (row, col) = (cell / w, cell % w);
            for t in 0..TAPS {
                let src = tap_source(prev, row, col, t) * d;
                for ch in 0..d {
                    let ka = params.kernel_a[t * d + ch];
                    let kb = params.kernel_b[t * d + ch];
                    g_prev[src + ch] += ka * g_a[ch] + kb * g_b[ch];
                    grads.kernel_a[t * d + ch] += state[src + ch] * g_a[ch];
                    grads.kernel_b[t * d + ch] += state[src + ch] * g_b[ch];
                }
            }
        }
    }
    g_prev
}
