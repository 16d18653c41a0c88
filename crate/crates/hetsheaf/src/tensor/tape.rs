//! Reverse-mode autodiff over 2-D f64 tensors.
//!
//! A [`Tape`] is an arena: every operation appends one node holding the
//! result values plus the op record needed for the backward sweep. Node ids
//! are indices into the arena, so topological order is construction order and
//! the backward pass is a single reverse iteration.
//!
//! Everything is row-major. Shapes are (rows, cols); scalars are 1x1.

use crate::error::{Error, Result};
use crate::tensor::kernels;
use nalgebra::{DMatrix, SymmetricEigen};

/// Handle to a tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tid(pub usize);

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// out = a * b, (m x k)(k x n).
    MatMul { a: Tid, b: Tid },
    /// Block-diagonal product: per block, out = op(a_blk) * op(b_blk).
    Bmm { a: Tid, b: Tid, ta: bool, tb: bool, blocks: usize, m: usize, k: usize, n: usize },
    /// Shared left factor: out_blk = w * x_blk for every block of x.
    BlockLmulShared { w: Tid, x: Tid, blocks: usize, d: usize, f: usize },
    /// Same shape, or b broadcast as a single row.
    Add { a: Tid, b: Tid, broadcast_row: bool },
    Sub { a: Tid, b: Tid },
    Mul { a: Tid, b: Tid },
    Scale { a: Tid, c: f64 },
    ConcatCols { parts: Vec<Tid> },
    SliceCols { a: Tid, start: usize, len: usize },
    Reshape { a: Tid },
    GatherRows { a: Tid, rows: Vec<usize> },
    /// out[rows[i]] += a[i]; collisions accumulate in input order.
    ScatterAddRows { a: Tid, rows: Vec<usize> },
    Elu { a: Tid },
    Sigmoid { a: Tid },
    Tanh { a: Tid },
    LogSoftmax { a: Tid },
    /// mask entries are 0 or 1/(1-p).
    Dropout { a: Tid, mask: Vec<f64> },
    Sum { a: Tid },
    RowSum { a: Tid },
    /// (N x d) -> (N*d x d) stack of diagonal blocks.
    DiagEmbed { a: Tid },
    /// Householder products: params (N x d(d-1)/2) -> (N*d x d) orthogonal blocks.
    HouseholderBlocks { params: Tid, d: usize },
    /// Per d x d block: sym(A) + eps*I, then eigenvalue clamp at eps and ^(-1/2).
    /// q and mu cache the eigendecompositions for the backward sweep.
    InvSqrtPsdBlocks { a: Tid, d: usize, eps: f64, q: Vec<f64>, mu: Vec<f64> },
    /// Rows with norm below 1e-12 map to zero.
    L2NormalizeRows { a: Tid, norms: Vec<f64> },
    /// loss = -(1/m) sum_i a[i, idx[i]]; pairs with log_softmax for CE.
    PickNegMean { a: Tid, idx: Vec<usize> },
    /// Mean of the numerically stable elementwise BCE-with-logits.
    BceMean { logits: Tid, targets: Vec<f64> },
}

const ROW_NORM_FLOOR: f64 = 1e-12;

pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), training: false }
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn rows(&self, t: Tid) -> usize {
        self.nodes[t.0].rows
    }

    pub fn cols(&self, t: Tid) -> usize {
        self.nodes[t.0].cols
    }

    pub fn values(&self, t: Tid) -> &[f64] {
        &self.nodes[t.0].values
    }

    pub fn grad(&self, t: Tid) -> Option<&[f64]> {
        self.nodes[t.0].grad.as_deref()
    }

    /// Scalar convenience for 1x1 tensors.
    pub fn scalar(&self, t: Tid) -> f64 {
        debug_assert_eq!(self.nodes[t.0].values.len(), 1);
        self.nodes[t.0].values[0]
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool, op: Op) -> Tid {
        debug_assert_eq!(values.len(), rows * cols);
        self.nodes.push(Node { rows, cols, values, requires_grad, grad: None, op });
        Tid(self.nodes.len() - 1)
    }

    fn needs(&self, t: Tid) -> bool {
        self.nodes[t.0].requires_grad
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<f64>, requires_grad: bool) -> Result<Tid> {
        if values.len() != rows * cols {
            return Err(Error::dim(format!(
                "leaf: {} values for shape {}x{}",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(self.push(rows, cols, values, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Result<Tid> {
        self.leaf(rows, cols, values, false)
    }

    /// Copies values into a fresh no-grad leaf: a stop-gradient boundary.
    pub fn detach(&mut self, a: Tid) -> Tid {
        let (r, c, v) = {
            let n = &self.nodes[a.0];
            (n.rows, n.cols, n.values.clone())
        };
        self.push(r, c, v, false, Op::Leaf)
    }

    fn shape_err(&self, what: &str, a: Tid, b: Tid) -> Error {
        Error::dim(format!(
            "{}: {}x{} vs {}x{}",
            what,
            self.rows(a),
            self.cols(a),
            self.rows(b),
            self.cols(b)
        ))
    }

    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (m, k) = (self.rows(a), self.cols(a));
        let (k2, n) = (self.rows(b), self.cols(b));
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(&mut out, self.values(a), false, self.values(b), false, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, rg, Op::MatMul { a, b }))
    }

    /// Block-diagonal matmul over `blocks` independent (m x k)(k x n) products.
    /// `ta`/`tb` transpose each block before multiplying.
    pub fn bmm(&mut self, a: Tid, b: Tid, ta: bool, tb: bool, blocks: usize, m: usize, k: usize, n: usize) -> Result<Tid> {
        let (ar, ac) = if ta { (k, m) } else { (m, k) };
        let (br, bc) = if tb { (n, k) } else { (k, n) };
        if self.rows(a) != blocks * ar || self.cols(a) != ac || self.rows(b) != blocks * br || self.cols(b) != bc {
            return Err(self.shape_err("bmm", a, b));
        }
        let mut out = vec![0.0; blocks * m * n];
        kernels::bmm(&mut out, self.values(a), ta, self.values(b), tb, blocks, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(blocks * m, n, out, rg, Op::Bmm { a, b, ta, tb, blocks, m, k, n }))
    }

    /// out_blk = w * x_blk for each of `blocks` d x f blocks of x (I_n (x) W).
    pub fn block_lmul_shared(&mut self, w: Tid, x: Tid, blocks: usize) -> Result<Tid> {
        let d = self.rows(w);
        let f = self.cols(x);
        if self.cols(w) != d || self.rows(x) != blocks * d {
            return Err(self.shape_err("block_lmul_shared", w, x));
        }
        let mut out = vec![0.0; blocks * d * f];
        kernels::bmm_shared_left(&mut out, self.values(w), self.values(x), blocks, d, f);
        let rg = self.needs(w) || self.needs(x);
        Ok(self.push(blocks * d, f, out, rg, Op::BlockLmulShared { w, x, blocks, d, f }))
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let same = self.rows(a) == self.rows(b) && self.cols(a) == self.cols(b);
        let broadcast = self.rows(b) == 1 && self.cols(b) == self.cols(a);
        if !same && !broadcast {
            return Err(self.shape_err("add", a, b));
        }
        let (m, n) = (self.rows(a), self.cols(a));
        let mut out = vec![0.0; m * n];
        {
            let av = self.values(a);
            let bv = self.values(b);
            if same {
                for i in 0..out.len() {
                    out[i] = av[i] + bv[i];
                }
            } else {
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = av[i * n + j] + bv[j];
                    }
                }
            }
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(m, n, out, rg, Op::Add { a, b, broadcast_row: !same }))
    }

    pub fn sub(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        if self.rows(a) != self.rows(b) || self.cols(a) != self.cols(b) {
            return Err(self.shape_err("sub", a, b));
        }
        let out: Vec<f64> = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x - y).collect();
        let rg = self.needs(a) || self.needs(b);
        let (m, n) = (self.rows(a), self.cols(a));
        Ok(self.push(m, n, out, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        if self.rows(a) != self.rows(b) || self.cols(a) != self.cols(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let out: Vec<f64> = self.values(a).iter().zip(self.values(b)).map(|(x, y)| x * y).collect();
        let rg = self.needs(a) || self.needs(b);
        let (m, n) = (self.rows(a), self.cols(a));
        Ok(self.push(m, n, out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Tid, c: f64) -> Tid {
        let out: Vec<f64> = self.values(a).iter().map(|x| c * x).collect();
        let rg = self.needs(a);
        let (m, n) = (self.rows(a), self.cols(a));
        self.push(m, n, out, rg, Op::Scale { a, c })
    }

    pub fn concat_cols(&mut self, parts: &[Tid]) -> Result<Tid> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols: empty input list".to_string()));
        }
        let m = self.rows(parts[0]);
        for &p in parts {
            if self.rows(p) != m {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let n: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut out = vec![0.0; m * n];
        let mut off = 0;
        for &p in parts {
            let c = self.cols(p);
            let v = self.values(p);
            for i in 0..m {
                out[i * n + off..i * n + off + c].copy_from_slice(&v[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(m, n, out, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_cols(&mut self, a: Tid, start: usize, len: usize) -> Result<Tid> {
        let (m, n) = (self.rows(a), self.cols(a));
        if start + len > n {
            return Err(Error::dim(format!(
                "slice_cols: [{start}, {}) out of width {n}",
                start + len
            )));
        }
        let v = self.values(a);
        let mut out = vec![0.0; m * len];
        for i in 0..m {
            out[i * len..(i + 1) * len].copy_from_slice(&v[i * n + start..i * n + start + len]);
        }
        let rg = self.needs(a);
        Ok(self.push(m, len, out, rg, Op::SliceCols { a, start, len }))
    }

    /// Row-major reinterpretation; element count must match.
    pub fn reshape(&mut self, a: Tid, rows: usize, cols: usize) -> Result<Tid> {
        if self.rows(a) * self.cols(a) != rows * cols {
            return Err(Error::dim(format!(
                "reshape: {}x{} -> {}x{}",
                self.rows(a),
                self.cols(a),
                rows,
                cols
            )));
        }
        let out = self.values(a).to_vec();
        let rg = self.needs(a);
        Ok(self.push(rows, cols, out, rg, Op::Reshape { a }))
    }

    pub fn gather_rows(&mut self, a: Tid, rows: Vec<usize>) -> Result<Tid> {
        let (m, n) = (self.rows(a), self.cols(a));
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::dim(format!("gather_rows: row {bad} out of {m}")));
        }
        let v = self.values(a);
        let mut out = vec![0.0; rows.len() * n];
        for (i, &r) in rows.iter().enumerate() {
            out[i * n..(i + 1) * n].copy_from_slice(&v[r * n..(r + 1) * n]);
        }
        let rg = self.needs(a);
        let k = rows.len();
        Ok(self.push(k, n, out, rg, Op::GatherRows { a, rows }))
    }

    /// out has `out_rows` rows; out[rows[i]] += a[i].
    pub fn scatter_add_rows(&mut self, a: Tid, rows: Vec<usize>, out_rows: usize) -> Result<Tid> {
        let (m, n) = (self.rows(a), self.cols(a));
        if rows.len() != m {
            return Err(Error::dim(format!("scatter_add_rows: {} rows for {m} inputs", rows.len())));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= out_rows) {
            return Err(Error::dim(format!("scatter_add_rows: row {bad} out of {out_rows}")));
        }
        let v = self.values(a);
        let mut out = vec![0.0; out_rows * n];
        for (i, &r) in rows.iter().enumerate() {
            for j in 0..n {
                out[r * n + j] += v[i * n + j];
            }
        }
        let rg = self.needs(a);
        Ok(self.push(out_rows, n, out, rg, Op::ScatterAddRows { a, rows }))
    }

    pub fn elu(&mut self, a: Tid) -> Tid {
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .map(|&x| if x > 0.0 { x } else { x.exp() - 1.0 })
            .collect();
        let rg = self.needs(a);
        let (m, n) = (self.rows(a), self.cols(a));
        self.push(m, n, out, rg, Op::Elu { a })
    }

    pub fn sigmoid(&mut self, a: Tid) -> Tid {
        let mut out = vec![0.0; self.values(a).len()];
        kernels::map_unary(&mut out, self.values(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.needs(a);
        let (m, n) = (self.rows(a), self.cols(a));
        self.push(m, n, out, rg, Op::Sigmoid { a })
    }

    pub fn tanh_op(&mut self, a: Tid) -> Tid {
        let out: Vec<f64> = self.values(a).iter().map(|x| x.tanh()).collect();
        let rg = self.needs(a);
        let (m, n) = (self.rows(a), self.cols(a));
        self.push(m, n, out, rg, Op::Tanh { a })
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Tid) -> Tid {
        let (m, n) = (self.rows(a), self.cols(a));
        let v = self.values(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &v[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                out[i * n + j] = row[j] - lse;
            }
        }
        let rg = self.needs(a);
        self.push(m, n, out, rg, Op::LogSoftmax { a })
    }

    /// Identity when not training or p = 0; otherwise scales kept entries by
    /// 1/(1-p). The caller supplies uniform [0,1) draws, one per entry.
    pub fn dropout(&mut self, a: Tid, p: f64, draws: impl FnMut() -> f64) -> Result<Tid> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::validation(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(a);
        }
        let mut draws = draws;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = self
            .values(a)
            .iter()
            .map(|_| if draws() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.values(a).iter().zip(&mask).map(|(x, k)| x * k).collect();
        let rg = self.needs(a);
        let (m, n) = (self.rows(a), self.cols(a));
        Ok(self.push(m, n, out, rg, Op::Dropout { a, mask }))
    }

    pub fn sum(&mut self, a: Tid) -> Tid {
        let s: f64 = self.values(a).iter().sum();
        let rg = self.needs(a);
        self.push(1, 1, vec![s], rg, Op::Sum { a })
    }

    pub fn mean(&mut self, a: Tid) -> Tid {
        let len = self.values(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / len)
    }

    pub fn row_sum(&mut self, a: Tid) -> Tid {
        let (m, n) = (self.rows(a), self.cols(a));
        let v = self.values(a);
        let out: Vec<f64> = (0..m).map(|i| v[i * n..(i + 1) * n].iter().sum()).collect();
        let rg = self.needs(a);
        self.push(m, 1, out, rg, Op::RowSum { a })
    }

    /// (N x d) -> (N*d x d): row i becomes the diagonal of block i.
    pub fn diag_embed(&mut self, a: Tid) -> Tid {
        let (nb, d) = (self.rows(a), self.cols(a));
        let v = self.values(a);
        let mut out = vec![0.0; nb * d * d];
        for i in 0..nb {
            for r in 0..d {
                out[(i * d + r) * d + r] = v[i * d + r];
            }
        }
        let rg = self.needs(a);
        self.push(nb * d, d, out, rg, Op::DiagEmbed { a })
    }

    /// params: (N x d(d-1)/2). Output: N stacked d x d orthogonal blocks,
    /// each the product H_0 * ... * H_{d-2} of Householder reflections.
    /// v_j has a fixed 1 at position j, free entries below, zeros above.
    pub fn householder_blocks(&mut self, params: Tid, d: usize) -> Result<Tid> {
        let p = d * (d - 1) / 2;
        let (nb, pc) = (self.rows(params), self.cols(params));
        if pc != p {
            return Err(Error::dim(format!(
                "householder_blocks: {pc} params per block, need {p} for d={d}"
            )));
        }
        let v = self.values(params);
        let mut out = vec![0.0; nb * d * d];
        for (blk, o) in out.chunks_mut(d * d).enumerate() {
            householder_forward_block(o, &v[blk * p..(blk + 1) * p], d);
        }
        let rg = self.needs(params);
        Ok(self.push(nb * d, d, out, rg, Op::HouseholderBlocks { params, d }))
    }

    /// Per block: M = (A + A^T)/2 + eps*I, eigendecompose, clamp eigenvalues
    /// below eps, return M^{-1/2}. Differentiable; gradients vanish on the
    /// clamped subspace.
    pub fn inv_sqrt_psd_blocks(&mut self, a: Tid, d: usize, eps: f64) -> Result<Tid> {
        let (rows, cols) = (self.rows(a), self.cols(a));
        if cols != d || rows % d != 0 {
            return Err(Error::dim(format!("inv_sqrt_psd_blocks: {rows}x{cols} not {d}x{d} blocks")));
        }
        let nb = rows / d;
        let v = self.values(a);
        let mut out = vec![0.0; nb * d * d];
        let mut q_cache = vec![0.0; nb * d * d];
        let mut mu_cache = vec![0.0; nb * d];
        for blk in 0..nb {
            let ab = &v[blk * d * d..(blk + 1) * d * d];
            let mut m = DMatrix::<f64>::zeros(d, d);
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] = 0.5 * (ab[i * d + j] + ab[j * d + i]);
                }
                m[(i, i)] += eps;
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::numeric(format!("inv_sqrt_psd_blocks: non-finite block {blk}")));
            }
            let eig = SymmetricEigen::new(m);
            let ob = &mut out[blk * d * d..(blk + 1) * d * d];
            for j in 0..d {
                let mu = eig.eigenvalues[j];
                mu_cache[blk * d + j] = mu;
                let lam = mu.max(eps);
                let w = lam.powf(-0.5);
                for i in 0..d {
                    q_cache[blk * d * d + i * d + j] = eig.eigenvectors[(i, j)];
                }
                for i in 0..d {
                    for k in 0..d {
                        ob[i * d + k] += w * eig.eigenvectors[(i, j)] * eig.eigenvectors[(k, j)];
                    }
                }
            }
        }
        let rg = self.needs(a);
        Ok(self.push(nb * d, d, out, rg, Op::InvSqrtPsdBlocks { a, d, eps, q: q_cache, mu: mu_cache }))
    }

    pub fn l2_normalize_rows(&mut self, a: Tid) -> Tid {
        let (m, n) = (self.rows(a), self.cols(a));
        let v = self.values(a);
        let mut out = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        for i in 0..m {
            let row = &v[i * n..(i + 1) * n];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[i] = norm;
            if norm >= ROW_NORM_FLOOR {
                for j in 0..n {
                    out[i * n + j] = row[j] / norm;
                }
            }
        }
        let rg = self.needs(a);
        self.push(m, n, out, rg, Op::L2NormalizeRows { a, norms })
    }

    /// loss = -(1/m) sum_i a[i, idx[i]]. With log-probabilities as input this
    /// is the mean cross-entropy.
    pub fn pick_neg_mean(&mut self, a: Tid, idx: Vec<usize>) -> Result<Tid> {
        let (m, n) = (self.rows(a), self.cols(a));
        if m == 0 {
            return Err(Error::validation("pick_neg_mean: empty input".to_string()));
        }
        if idx.len() != m {
            return Err(Error::dim(format!("pick_neg_mean: {} indices for {m} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::validation(format!("pick_neg_mean: class {bad} out of {n}")));
        }
        let v = self.values(a);
        let s: f64 = idx.iter().enumerate().map(|(i, &j)| v[i * n + j]).sum();
        let loss = -s / m as f64;
        let rg = self.needs(a);
        Ok(self.push(1, 1, vec![loss], rg, Op::PickNegMean { a, idx }))
    }

    /// Numerically stable mean BCE on logits against fixed 0/1 targets.
    pub fn bce_with_logits_mean(&mut self, logits: Tid, targets: Vec<f64>) -> Result<Tid> {
        let v = self.values(logits);
        if v.is_empty() {
            return Err(Error::validation("bce_with_logits_mean: empty input".to_string()));
        }
        if targets.len() != v.len() {
            return Err(Error::dim(format!(
                "bce_with_logits_mean: {} targets for {} logits",
                targets.len(),
                v.len()
            )));
        }
        let mut acc = 0.0;
        for (&z, &t) in v.iter().zip(&targets) {
            acc += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        let loss = acc / v.len() as f64;
        let rg = self.needs(logits);
        Ok(self.push(1, 1, vec![loss], rg, Op::BceMean { logits, targets }))
    }

    /// Reverse sweep from a scalar loss. Gradients land on every node with
    /// requires_grad, readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Tid) -> Result<()> {
        let ln = &self.nodes[loss.0];
        if ln.rows != 1 || ln.cols != 1 {
            return Err(Error::dim(format!("backward: loss is {}x{}, want 1x1", ln.rows, ln.cols)));
        }
        if !ln.values[0].is_finite() {
            return Err(Error::numeric(format!("backward: loss is {}", ln.values[0])));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_op(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut Vec<Option<Vec<f64>>>, t: Tid) -> bool {
        if !self.nodes[t.0].requires_grad {
            return false;
        }
        if grads[t.0].is_none() {
            grads[t.0] = Some(vec![0.0; self.nodes[t.0].values.len()]);
        }
        true
    }

    fn backward_op(&self, i: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.rows(*a), self.cols(*a));
                let n = self.cols(*b);
                if self.accumulate(grads, *a) {
                    let bv = &self.nodes[b.0].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    // dA += G * B^T
                    kernels::gemm_acc(ga, g, false, bv, true, m, n, k);
                }
                if self.accumulate(grads, *b) {
                    let av = &self.nodes[a.0].values;
                    let gb = grads[b.0].as_mut().unwrap();
                    // dB += A^T * G
                    kernels::gemm_acc(gb, av, true, g, false, k, m, n);
                }
            }
            Op::Bmm { a, b, ta, tb, blocks, m, k, n } => {
                let (blocks, m, k, n) = (*blocks, *m, *k, *n);
                if self.accumulate(grads, *a) {
                    let bv = &self.nodes[b.0].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    for blk in 0..blocks {
                        let gb = &g[blk * m * n..(blk + 1) * m * n];
                        let bb = &bv[blk * k * n..(blk + 1) * k * n];
                        let gacc = &mut ga[blk * m * k..(blk + 1) * m * k];
                        // Logical dA' = G * B'^T (m x k); stored transposed when ta.
                        match (*ta, *tb) {
                            (false, false) => kernels::gemm_acc_seq(gacc, gb, false, bb, true, m, n, k),
                            (false, true) => kernels::gemm_acc_seq(gacc, gb, false, bb, false, m, n, k),
                            // dA physical (k x m) = B' * G^T.
                            (true, false) => kernels::gemm_acc_seq(gacc, bb, false, gb, true, k, n, m),
                            (true, true) => kernels::gemm_acc_seq(gacc, bb, true, gb, true, k, n, m),
                        }
                    }
                }
                if self.accumulate(grads, *b) {
                    let av = &self.nodes[a.0].values;
                    let gbuf = grads[b.0].as_mut().unwrap();
                    for blk in 0..blocks {
                        let gb = &g[blk * m * n..(blk + 1) * m * n];
                        let ab = &av[blk * m * k..(blk + 1) * m * k];
                        let gacc = &mut gbuf[blk * k * n..(blk + 1) * k * n];
                        // Logical dB' = A'^T * G (k x n); stored transposed when tb.
                        match (*tb, *ta) {
                            (false, false) => kernels::gemm_acc_seq(gacc, ab, true, gb, false, k, m, n),
                            (false, true) => kernels::gemm_acc_seq(gacc, ab, false, gb, false, k, m, n),
                            // dB physical (n x k) = G^T * A'.
                            (true, false) => kernels::gemm_acc_seq(gacc, gb, true, ab, false, n, m, k),
                            (true, true) => kernels::gemm_acc_seq(gacc, gb, true, ab, true, n, m, k),
                        }
                    }
                }
            }
            Op::BlockLmulShared { w, x, blocks, d, f } => {
                let (blocks, d, f) = (*blocks, *d, *f);
                if self.accumulate(grads, *w) {
                    let xv = &self.nodes[x.0].values;
                    let gw = grads[w.0].as_mut().unwrap();
                    for blk in 0..blocks {
                        // dW += G_blk * X_blk^T
                        kernels::gemm_acc_seq(
                            gw,
                            &g[blk * d * f..(blk + 1) * d * f],
                            false,
                            &xv[blk * d * f..(blk + 1) * d * f],
                            true,
                            d,
                            f,
                            d,
                        );
                    }
                }
                if self.accumulate(grads, *x) {
                    let wv = &self.nodes[w.0].values;
                    let gx = grads[x.0].as_mut().unwrap();
                    for blk in 0..blocks {
                        // dX_blk += W^T * G_blk
                        kernels::gemm_acc_seq(
                            &mut gx[blk * d * f..(blk + 1) * d * f],
                            wv,
                            true,
                            &g[blk * d * f..(blk + 1) * d * f],
                            false,
                            d,
                            d,
                            f,
                        );
                    }
                }
            }
            Op::Add { a, b, broadcast_row } => {
                if self.accumulate(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (o, x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if self.accumulate(grads, *b) {
                    let gb = grads[b.0].as_mut().unwrap();
                    if *broadcast_row {
                        let n = self.cols(*b);
                        for (i, x) in g.iter().enumerate() {
                            gb[i % n] += x;
                        }
                    } else {
                        for (o, x) in gb.iter_mut().zip(g) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if self.accumulate(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (o, x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                }
                if self.accumulate(grads, *b) {
                    let gb = grads[b.0].as_mut().unwrap();
                    for (o, x) in gb.iter_mut().zip(g) {
                        *o -= x;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.accumulate(grads, *a) {
                    let bv = &self.nodes[b.0].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    for j in 0..g.len() {
                        ga[j] += g[j] * bv[j];
                    }
                }
                if self.accumulate(grads, *b) {
                    let av = &self.nodes[a.0].values;
                    let gb = grads[b.0].as_mut().unwrap();
                    for j in 0..g.len() {
                        gb[j] += g[j] * av[j];
                    }
                }
            }
            Op::Scale { a, c } => {
                if self.accumulate(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (o, x) in ga.iter_mut().zip(g) {
                        *o += c * x;
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let n = self.cols(Tid(i));
                let m = self.rows(Tid(i));
                let mut off = 0;
                for &p in parts {
                    let c = self.cols(p);
                    if self.accumulate(grads, p) {
                        let gp = grads[p.0].as_mut().unwrap();
                        for r in 0..m {
                            for j in 0..c {
                                gp[r * c + j] += g[r * n + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols { a, start, len } => {
                if self.accumulate(grads, *a) {
                    let n = self.cols(*a);
                    let m = self.rows(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    for r in 0..m {
                        for j in 0..*len {
                            ga[r * n + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if self.accumulate(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for (o, x) in ga.iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            Op::GatherRows { a, rows } => {
                if self.accumulate(grads, *a) {
                    let n = self.cols(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    for (i2, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            ga[r * n + j] += g[i2 * n + j];
                        }
                    }
                }
            }
            Op::ScatterAddRows { a, rows } => {
                if self.accumulate(grads, *a) {
                    let n = self.cols(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    for (i2, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            ga[i2 * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::Elu { a } => {
                if self.accumulate(grads, *a) {
                    let av = &self.nodes[a.0].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    for j in 0..g.len() {
                        let d = if av[j] > 0.0 { 1.0 } else { av[j].exp() };
                        ga[j] += g[j] * d;
                    }
                }
            }
            Op::Sigmoid { a } => {
                if self.accumulate(grads, *a) {
                    let yv = &self.nodes[i].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    for j in 0..g.len() {
                        ga[j] += g[j] * yv[j] * (1.0 - yv[j]);
                    }
                }
            }
            Op::Tanh { a } => {
                if self.accumulate(grads, *a) {
                    let yv = &self.nodes[i].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - yv[j] * yv[j]);
                    }
                }
            }
            Op::LogSoftmax { a } => {
                if self.accumulate(grads, *a) {
                    let yv = &self.nodes[i].values;
                    let n = self.cols(*a);
                    let m = self.rows(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    for r in 0..m {
                        let gsum: f64 = g[r * n..(r + 1) * n].iter().sum();
                        for j in 0..n {
                            ga[r * n + j] += g[r * n + j] - yv[r * n + j].exp() * gsum;
                        }
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if self.accumulate(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for j in 0..g.len() {
                        ga[j] += g[j] * mask[j];
                    }
                }
            }
            Op::Sum { a } => {
                if self.accumulate(grads, *a) {
                    let ga = grads[a.0].as_mut().unwrap();
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::RowSum { a } => {
                if self.accumulate(grads, *a) {
                    let n = self.cols(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    for (j, o) in ga.iter_mut().enumerate() {
                        *o += g[j / n];
                    }
                }
            }
            Op::DiagEmbed { a } => {
                if self.accumulate(grads, *a) {
                    let d = self.cols(*a);
                    let nb = self.rows(*a);
                    let ga = grads[a.0].as_mut().unwrap();
                    for b2 in 0..nb {
                        for r in 0..d {
                            ga[b2 * d + r] += g[(b2 * d + r) * d + r];
                        }
                    }
                }
            }
            Op::HouseholderBlocks { params, d } => {
                if self.accumulate(grads, *params) {
                    let d = *d;
                    let p = d * (d - 1) / 2;
                    let pv = &self.nodes[params.0].values;
                    let gp = grads[params.0].as_mut().unwrap();
                    let nb = self.rows(*params);
                    for blk in 0..nb {
                        householder_backward_block(
                            &mut gp[blk * p..(blk + 1) * p],
                            &pv[blk * p..(blk + 1) * p],
                            &g[blk * d * d..(blk + 1) * d * d],
                            d,
                        );
                    }
                }
            }
            Op::InvSqrtPsdBlocks { a, d, eps, q, mu } => {
                if self.accumulate(grads, *a) {
                    let d = *d;
                    let nb = self.rows(*a) / d;
                    let ga = grads[a.0].as_mut().unwrap();
                    for blk in 0..nb {
                        inv_sqrt_backward_block(
                            &mut ga[blk * d * d..(blk + 1) * d * d],
                            &q[blk * d * d..(blk + 1) * d * d],
                            &mu[blk * d..(blk + 1) * d],
                            &g[blk * d * d..(blk + 1) * d * d],
                            d,
                            *eps,
                        );
                    }
                }
            }
            Op::L2NormalizeRows { a, norms } => {
                if self.accumulate(grads, *a) {
                    let n = self.cols(*a);
                    let m = self.rows(*a);
                    let yv = &self.nodes[i].values;
                    let ga = grads[a.0].as_mut().unwrap();
                    for r in 0..m {
                        let norm = norms[r];
                        if norm < ROW_NORM_FLOOR {
                            continue;
                        }
                        let yrow = &yv[r * n..(r + 1) * n];
                        let grow = &g[r * n..(r + 1) * n];
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, x)| y * x).sum();
                        for j in 0..n {
                            ga[r * n + j] += (grow[j] - yrow[j] * dot) / norm;
                        }
                    }
                }
            }
            Op::PickNegMean { a, idx } => {
                if self.accumulate(grads, *a) {
                    let n = self.cols(*a);
                    let m = idx.len() as f64;
                    let ga = grads[a.0].as_mut().unwrap();
                    for (r, &j) in idx.iter().enumerate() {
                        ga[r * n + j] -= g[0] / m;
                    }
                }
            }
            Op::BceMean { logits, targets } => {
                if self.accumulate(grads, *logits) {
                    let zv = &self.nodes[logits.0].values;
                    let len = zv.len() as f64;
                    let gl = grads[logits.0].as_mut().unwrap();
                    for j in 0..zv.len() {
                        let z = zv[j];
                        let s = if z >= 0.0 {
                            1.0 / (1.0 + (-z).exp())
                        } else {
                            let e = z.exp();
                            e / (1.0 + e)
                        };
                        gl[j] += g[0] * (s - targets[j]) / len;
                    }
                }
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// O = H_0 * ... * H_{d-2} accumulated by right-multiplication:
/// O <- O - beta * (O v) v^T.
fn householder_forward_block(out: &mut [f64], params: &[f64], d: usize) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    if d < 2 {
        return;
    }
    let mut v = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut off = 0;
    for j in 0..d - 1 {
        build_reflector(&mut v, params, d, j, &mut off);
        let s: f64 = v.iter().map(|x| x * x).sum();
        let beta = 2.0 / s;
        for r in 0..d {
            w[r] = (0..d).map(|c| out[r * d + c] * v[c]).sum();
        }
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] -= beta * w[r] * v[c];
            }
        }
    }
}

fn build_reflector(v: &mut [f64], params: &[f64], d: usize, j: usize, off: &mut usize) {
    for r in 0..d {
        v[r] = 0.0;
    }
    v[j] = 1.0;
    for r in j + 1..d {
        v[r] = params[*off];
        *off += 1;
    }
}

/// d loss / d params for one Householder block, given d loss / d O.
///
/// With prefix P_j = H_0..H_{j-1} and suffix S_j = H_{j+1}..H_{d-2}, the
/// gradient reaching reflector j is G_H = P_j^T G S_j^T, and for H = I -
/// beta v v^T (beta = 2/s, s = v^T v):
///   d/dv_k = (4 v_k / s^2) (v^T G_H v) - beta [(G_H v)_k + (G_H^T v)_k]
/// Only the free entries k > j are parameters.
fn householder_backward_block(gparams: &mut [f64], params: &[f64], g: &[f64], d: usize) {
    if d < 2 {
        return;
    }
    let nh = d - 1;
    let dd = d * d;
    // Materialize every reflector once.
    let mut hs = vec![0.0; nh * dd];
    let mut vs = vec![0.0; nh * d];
    let mut betas = vec![0.0; nh];
    let mut off = 0;
    for j in 0..nh {
        let v = &mut vs[j * d..(j + 1) * d];
        build_reflector(v, params, d, j, &mut off);
        let s: f64 = v.iter().map(|x| x * x).sum();
        betas[j] = 2.0 / s;
        let h = &mut hs[j * dd..(j + 1) * dd];
        for r in 0..d {
            for c in 0..d {
                h[r * d + c] = if r == c { 1.0 } else { 0.0 };
                h[r * d + c] -= betas[j] * v[r] * v[c];
            }
        }
    }
    // Prefix products P_j = H_0..H_{j-1}; suffix products S_j = H_{j+1}..H_{d-2}.
    let mut prefixes = vec![0.0; nh * dd];
    let mut cur = identity(d);
    for j in 0..nh {
        prefixes[j * dd..(j + 1) * dd].copy_from_slice(&cur);
        let mut next = vec![0.0; dd];
        kernels::gemm_seq(&mut next, &cur, false, &hs[j * dd..(j + 1) * dd], false, d, d, d);
        cur = next;
    }
    let mut suffixes = vec![0.0; nh * dd];
    let mut cur = identity(d);
    for j in (0..nh).rev() {
        suffixes[j * dd..(j + 1) * dd].copy_from_slice(&cur);
        if j > 0 {
            let mut next = vec![0.0; dd];
            kernels::gemm_seq(&mut next, &hs[j * dd..(j + 1) * dd], false, &cur, false, d, d, d);
            cur = next;
        }
    }
    let mut tmp = vec![0.0; dd];
    let mut gh = vec![0.0; dd];
    let mut off = 0;
    for j in 0..nh {
        // G_H = P_j^T * G * S_j^T
        kernels::gemm_seq(&mut tmp, &prefixes[j * dd..(j + 1) * dd], true, g, false, d, d, d);
        kernels::gemm_seq(&mut gh, &tmp, false, &suffixes[j * dd..(j + 1) * dd], true, d, d, d);
        let v = &vs[j * d..(j + 1) * d];
        let s: f64 = v.iter().map(|x| x * x).sum();
        let beta = betas[j];
        let ghv: Vec<f64> = (0..d).map(|r| (0..d).map(|c| gh[r * d + c] * v[c]).sum()).collect();
        let ghtv: Vec<f64> = (0..d).map(|c| (0..d).map(|r| gh[r * d + c] * v[r]).sum()).collect();
        let vghv: f64 = (0..d).map(|r| v[r] * ghv[r]).sum();
        for k in j + 1..d {
            gparams[off] += 4.0 * v[k] / (s * s) * vghv - beta * (ghv[k] + ghtv[k]);
            off += 1;
        }
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Eigendecomposition chain rule for f(M) = M^{-1/2} with clamped spectrum:
/// dM = Q (K o Q^T G Q) Q^T, K_pq = (f(mu_p) - f(mu_q)) / (mu_p - mu_q)
/// off the diagonal and f'(mu_p) on it; the clamp makes f' zero below eps.
/// The forward symmetrizes its input, so dA = (dM + dM^T)/2.
fn inv_sqrt_backward_block(ga: &mut [f64], q: &[f64], mu: &[f64], g: &[f64], d: usize, eps: f64) {
    let f = |m: f64| m.max(eps).powf(-0.5);
    let fp = |m: f64| if m > eps { -0.5 * m.powf(-1.5) } else { 0.0 };
    // A_t = Q^T G Q
    let mut tmp = vec![0.0; d * d];
    let mut at = vec![0.0; d * d];
    kernels::gemm_seq(&mut tmp, q, true, g, false, d, d, d);
    kernels::gemm_seq(&mut at, &tmp, false, q, false, d, d, d);
    for p in 0..d {
        for r in 0..d {
            let k = if (mu[p] - mu[r]).abs() > 1e-12 {
                (f(mu[p]) - f(mu[r])) / (mu[p] - mu[r])
            } else {
                fp(0.5 * (mu[p] + mu[r]))
            };
            at[p * d + r] *= k;
        }
    }
    // dM = Q * at * Q^T
    kernels::gemm_seq(&mut tmp, q, false, &at, false, d, d, d);
    let mut dm = vec![0.0; d * d];
    kernels::gemm_seq(&mut dm, &tmp, false, q, true, d, d, d);
    for r in 0..d {
        for c in 0..d {
            ga[r * d + c] += 0.5 * (dm[r * d + c] + dm[c * d + r]);
        }
    }
}
