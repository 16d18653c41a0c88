//! Dense f64 kernels backing the tape.
//!
//! Every kernel has a sequential implementation; the `parallel` feature adds a
//! rayon path that splits work along output rows or blocks. Both paths keep
//! the per-element floating-point evaluation order identical, so results are
//! bit-for-bit the same with or without threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work threshold (multiply-adds) below which the parallel wrappers stay
/// sequential. Spawning tasks for tiny matrices costs more than it saves.
const PAR_MIN_FLOPS: usize = 1 << 15;

#[inline]
fn a_at(a: &[f64], ta: bool, rows: usize, cols: usize, i: usize, p: usize) -> f64 {
    // (i, p) indexes the logical (possibly transposed) matrix of shape rows x cols.
    if ta {
        a[p * rows + i]
    } else {
        a[i * cols + p]
    }
}

fn gemm_row(
    out_row: &mut [f64],
    i: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    k: usize,
    n: usize,
    m: usize,
) {
    for j in 0..n {
        let mut acc = 0.0;
        for p in 0..k {
            let av = a_at(a, ta, m, k, i, p);
            let bv = a_at(b, tb, k, n, p, j);
            acc += av * bv;
        }
        out_row[j] = acc;
    }
}

/// `out = op(a) * op(b)` where `op` transposes when the flag is set.
/// Logical shapes: `op(a)` is `m x k`, `op(b)` is `k x n`, `out` is `m x n`.
pub fn gemm_seq(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), m * n);
    for (i, row) in out.chunks_mut(n.max(1)).enumerate().take(m) {
        gemm_row(row, i, a, ta, b, tb, k, n, m);
    }
}

/// Parallel-capable gemm. Falls back to [`gemm_seq`] for small problems or
/// when built without the `parallel` feature.
pub fn gemm(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    #[cfg(feature = "parallel")]
    {
        if m * k * n >= PAR_MIN_FLOPS && m > 1 && n > 0 {
            out.par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| gemm_row(row, i, a, ta, b, tb, k, n, m));
            return;
        }
    }
    gemm_seq(out, a, ta, b, tb, m, k, n);
}

/// `out += op(a) * op(b)`, sequential.
pub fn gemm_acc_seq(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a_at(a, ta, m, k, i, p) * a_at(b, tb, k, n, p, j);
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out += op(a) * op(b)`, parallel over output rows when worthwhile.
pub fn gemm_acc(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
) {
    #[cfg(feature = "parallel")]
    {
        if m * k * n >= PAR_MIN_FLOPS && m > 1 && n > 0 {
            out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, slot) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a_at(a, ta, m, k, i, p) * a_at(b, tb, k, n, p, j);
                    }
                    *slot += acc;
                }
            });
            return;
        }
    }
    gemm_acc_seq(out, a, ta, b, tb, m, k, n);
}

/// Block-diagonal matmul: for each of `blocks` independent problems,
/// `out_blk = op(a_blk) * op(b_blk)` with logical per-block shapes
/// `m x k`, `k x n`. Blocks are stored contiguously.
pub fn bmm_seq(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    blocks: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(out.len(), blocks * m * n);
    debug_assert_eq!(a.len(), blocks * m * k);
    debug_assert_eq!(b.len(), blocks * k * n);
    for blk in 0..blocks {
        gemm_seq(
            &mut out[blk * m * n..(blk + 1) * m * n],
            &a[blk * m * k..(blk + 1) * m * k],
            ta,
            &b[blk * k * n..(blk + 1) * k * n],
            tb,
            m,
            k,
            n,
        );
    }
}

/// Parallel-capable block-diagonal matmul, split across blocks.
pub fn bmm(
    out: &mut [f64],
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    blocks: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    #[cfg(feature = "parallel")]
    {
        if blocks * m * k * n >= PAR_MIN_FLOPS && blocks > 1 {
            out.par_chunks_mut(m * n).enumerate().for_each(|(blk, o)| {
                gemm_seq(
                    o,
                    &a[blk * m * k..(blk + 1) * m * k],
                    ta,
                    &b[blk * k * n..(blk + 1) * k * n],
                    tb,
                    m,
                    k,
                    n,
                );
            });
            return;
        }
    }
    bmm_seq(out, a, ta, b, tb, blocks, m, k, n);
}

/// One shared d x d left factor applied to every d x f block of x:
/// out_blk = w * x_blk. Sequential.
pub fn bmm_shared_left_seq(out: &mut [f64], w: &[f64], x: &[f64], blocks: usize, d: usize, f: usize) {
    debug_assert_eq!(out.len(), blocks * d * f);
    debug_assert_eq!(w.len(), d * d);
    for blk in 0..blocks {
        gemm_seq(
            &mut out[blk * d * f..(blk + 1) * d * f],
            w,
            false,
            &x[blk * d * f..(blk + 1) * d * f],
            false,
            d,
            d,
            f,
        );
    }
}

/// Parallel-capable variant of [`bmm_shared_left_seq`], split across blocks.
pub fn bmm_shared_left(out: &mut [f64], w: &[f64], x: &[f64], blocks: usize, d: usize, f: usize) {
    #[cfg(feature = "parallel")]
    {
        if blocks * d * d * f >= PAR_MIN_FLOPS && blocks > 1 {
            out.par_chunks_mut(d * f).enumerate().for_each(|(blk, o)| {
                gemm_seq(o, w, false, &x[blk * d * f..(blk + 1) * d * f], false, d, d, f);
            });
            return;
        }
    }
    bmm_shared_left_seq(out, w, x, blocks, d, f);
}

/// Elementwise map, parallel over chunks when large. `f` must be pure.
pub fn map_unary(out: &mut [f64], a: &[f64], f: impl Fn(f64) -> f64 + Sync + Send) {
    debug_assert_eq!(out.len(), a.len());
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_MIN_FLOPS {
            out.par_iter_mut()
                .zip(a.par_iter())
                .for_each(|(o, &x)| *o = f(x));
            return;
        }
    }
    for (o, &x) in out.iter_mut().zip(a.iter()) {
        *o = f(x);
    }
}
