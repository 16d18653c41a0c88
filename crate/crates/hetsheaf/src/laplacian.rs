//! Sheaf-Laplacian assembly and products.
//!
//! The restriction maps for a graph live in one incidence-stacked tensor of
//! shape (2|E|*d x d): edge e's u-side map occupies block 2e, its v-side map
//! block 2e+1, with the canonical orientation u < v. Everything here is
//! expressed through tape primitives (gathers, block products, scatters) so
//! gradients reach both the cochain and the map parameters.
//!
//! Two independent routes exist on purpose: the assembled block operator
//! (diagonal blocks sum F^T F per node, off-diagonal blocks -F_u^T F_v per
//! edge) and the coboundary factorization delta^T delta. Tests hold them to
//! each other.

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::tensor::{Tape, Tid};

/// Precomputed row-index lists tying a graph's incidence structure to
/// (n*d x f) cochains and (2|E|*d x d) map stacks.
#[derive(Debug, Clone)]
pub struct CochainIndex {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    /// Cochain rows of u per edge, |E|*d entries.
    gather_u: Vec<usize>,
    gather_v: Vec<usize>,
    /// Map-stack rows of the u-side (slots 2e) and v-side (2e+1) blocks.
    map_rows_u: Vec<usize>,
    map_rows_v: Vec<usize>,
    /// Target cochain rows for per-incidence node accumulation (2|E|*d).
    scatter_incidence: Vec<usize>,
}

impl CochainIndex {
    pub fn new(graph: &HeteroGraph, d: usize) -> CochainIndex {
        let n = graph.n();
        let m = graph.num_edges();
        let mut gather_u = Vec::with_capacity(m * d);
        let mut gather_v = Vec::with_capacity(m * d);
        let mut map_rows_u = Vec::with_capacity(m * d);
        let mut map_rows_v = Vec::with_capacity(m * d);
        let mut scatter_incidence = Vec::with_capacity(2 * m * d);
        for (e, edge) in graph.edges().iter().enumerate() {
            for r in 0..d {
                gather_u.push(edge.u * d + r);
                map_rows_u.push(2 * e * d + r);
            }
            for r in 0..d {
                gather_v.push(edge.v * d + r);
                map_rows_v.push((2 * e + 1) * d + r);
            }
        }
        for edge in graph.edges() {
            for r in 0..d {
                scatter_incidence.push(edge.u * d + r);
            }
            for r in 0..d {
                scatter_incidence.push(edge.v * d + r);
            }
        }
        CochainIndex { n, m, d, gather_u, gather_v, map_rows_u, map_rows_v, scatter_incidence }
    }

    fn check_maps(&self, tape: &Tape, maps: Tid) -> Result<()> {
        if tape.rows(maps) != 2 * self.m * self.d || tape.cols(maps) != self.d {
            return Err(Error::dim(format!(
                "map stack is {}x{}, expected {}x{}",
                tape.rows(maps),
                tape.cols(maps),
                2 * self.m * self.d,
                self.d
            )));
        }
        Ok(())
    }

    fn check_cochain(&self, tape: &Tape, x: Tid) -> Result<()> {
        if tape.rows(x) != self.n * self.d {
            return Err(Error::dim(format!(
                "cochain has {} rows, expected n*d = {}",
                tape.rows(x),
                self.n * self.d
            )));
        }
        Ok(())
    }
}

/// Identity restriction maps for every incidence: the trivial sheaf.
pub fn identity_maps(tape: &mut Tape, idx: &CochainIndex) -> Result<Tid> {
    let d = idx.d;
    let blocks = 2 * idx.m;
    let mut vals = vec![0.0; blocks * d * d];
    for b in 0..blocks {
        for i in 0..d {
            vals[(b * d + i) * d + i] = 1.0;
        }
    }
    tape.constant(blocks * d, d, vals)
}

/// delta(x)_e = F_v x_v - F_u x_u per edge; output (|E|*d x f).
pub fn coboundary_apply(tape: &mut Tape, idx: &CochainIndex, maps: Tid, x: Tid) -> Result<Tid> {
    idx.check_maps(tape, maps)?;
    idx.check_cochain(tape, x)?;
    let f = tape.cols(x);
    let (d, m) = (idx.d, idx.m);
    let mu = tape.gather_rows(maps, idx.map_rows_u.clone())?;
    let mv = tape.gather_rows(maps, idx.map_rows_v.clone())?;
    let xu = tape.gather_rows(x, idx.gather_u.clone())?;
    let xv = tape.gather_rows(x, idx.gather_v.clone())?;
    let fu_xu = tape.bmm(mu, xu, false, false, m, d, d, f)?;
    let fv_xv = tape.bmm(mv, xv, false, false, m, d, d, f)?;
    tape.sub(fv_xv, fu_xu)
}

/// delta^T y for an edge cochain y (|E|*d x f): node u receives -F_u^T y_e,
/// node v receives +F_v^T y_e, summed over incident edges.
pub fn coboundary_transpose_apply(
    tape: &mut Tape,
    idx: &CochainIndex,
    maps: Tid,
    y: Tid,
) -> Result<Tid> {
    idx.check_maps(tape, maps)?;
    if tape.rows(y) != idx.m * idx.d {
        return Err(Error::dim(format!(
            "edge cochain has {} rows, expected |E|*d = {}",
            tape.rows(y),
            idx.m * idx.d
        )));
    }
    let f = tape.cols(y);
    let (d, m, n) = (idx.d, idx.m, idx.n);
    let mu = tape.gather_rows(maps, idx.map_rows_u.clone())?;
    let mv = tape.gather_rows(maps, idx.map_rows_v.clone())?;
    let tu = tape.bmm(mu, y, true, false, m, d, d, f)?;
    let tv = tape.bmm(mv, y, true, false, m, d, d, f)?;
    let su = tape.scatter_add_rows(tu, idx.gather_u.clone(), n * d)?;
    let sv = tape.scatter_add_rows(tv, idx.gather_v.clone(), n * d)?;
    tape.sub(sv, su)
}

/// Laplacian applied through the coboundary factorization delta^T(delta x).
pub fn laplacian_apply_factored(
    tape: &mut Tape,
    idx: &CochainIndex,
    maps: Tid,
    x: Tid,
) -> Result<Tid> {
    let y = coboundary_apply(tape, idx, maps, x)?;
    coboundary_transpose_apply(tape, idx, maps, y)
}

/// Assembled block operator: L_uu = sum over incidences of F^T F (stacked
/// per node, n*d x d) and L_uv = -F_u^T F_v (stacked per edge, |E|*d x d).
pub fn assemble(tape: &mut Tape, idx: &CochainIndex, maps: Tid) -> Result<(Tid, Tid)> {
    idx.check_maps(tape, maps)?;
    let (d, m, n) = (idx.d, idx.m, idx.n);
    let ftf = tape.bmm(maps, maps, true, false, 2 * m, d, d, d)?;
    let luu = tape.scatter_add_rows(ftf, idx.scatter_incidence.clone(), n * d)?;
    let mu = tape.gather_rows(maps, idx.map_rows_u.clone())?;
    let mv = tape.gather_rows(maps, idx.map_rows_v.clone())?;
    let cross = tape.bmm(mu, mv, true, false, m, d, d, d)?;
    let luv = tape.scale(cross, -1.0);
    Ok((luu, luv))
}

/// Block-sparse matvec with assembled blocks: for each edge, u also receives
/// L_uv x_v and v receives L_uv^T x_u.
pub fn laplacian_apply_blocks(
    tape: &mut Tape,
    idx: &CochainIndex,
    luu: Tid,
    luv: Tid,
    x: Tid,
) -> Result<Tid> {
    idx.check_cochain(tape, x)?;
    let f = tape.cols(x);
    let (d, m, n) = (idx.d, idx.m, idx.n);
    let diag = tape.bmm(luu, x, false, false, n, d, d, f)?;
    if m == 0 {
        return Ok(diag);
    }
    let xu = tape.gather_rows(x, idx.gather_u.clone())?;
    let xv = tape.gather_rows(x, idx.gather_v.clone())?;
    let to_u = tape.bmm(luv, xv, false, false, m, d, d, f)?;
    let to_v = tape.bmm(luv, xu, true, false, m, d, d, f)?;
    let su = tape.scatter_add_rows(to_u, idx.gather_u.clone(), n * d)?;
    let sv = tape.scatter_add_rows(to_v, idx.gather_v.clone(), n * d)?;
    let off = tape.add(su, sv)?;
    tape.add(diag, off)
}

/// Degree-normalized blocks: D_u = L_uu + eps*I, Delta_uu = D_u^{-1/2} L_uu
/// D_u^{-1/2}, Delta_uv = D_u^{-1/2} L_uv D_v^{-1/2}. By default D^{-1/2} is
/// a stop-gradient factor; `grad_through_norm` routes gradients through the
/// eigendecomposition as well.
pub fn normalize(
    tape: &mut Tape,
    idx: &CochainIndex,
    luu: Tid,
    luv: Tid,
    eps: f64,
    grad_through_norm: bool,
) -> Result<NormalizedBlocks> {
    let (d, m, n) = (idx.d, idx.m, idx.n);
    let dinv_raw = tape.inv_sqrt_psd_blocks(luu, d, eps)?;
    let dinv = if grad_through_norm { dinv_raw } else { tape.detach(dinv_raw) };
    let t = tape.bmm(dinv, luu, false, false, n, d, d, d)?;
    let nuu = tape.bmm(t, dinv, false, false, n, d, d, d)?;
    let nuv = if m == 0 {
        luv
    } else {
        let du = tape.gather_rows(dinv, idx.gather_u.clone())?;
        let dv = tape.gather_rows(dinv, idx.gather_v.clone())?;
        let t2 = tape.bmm(du, luv, false, false, m, d, d, d)?;
        tape.bmm(t2, dv, false, false, m, d, d, d)?
    };
    Ok(NormalizedBlocks { dinv, luu: nuu, luv: nuv })
}

#[derive(Debug, Clone, Copy)]
pub struct NormalizedBlocks {
    pub dinv: Tid,
    pub luu: Tid,
    pub luv: Tid,
}

/// x^T L x summed over feature channels, through the assembled blocks.
pub fn dirichlet_energy(
    tape: &mut Tape,
    idx: &CochainIndex,
    luu: Tid,
    luv: Tid,
    x: Tid,
) -> Result<Tid> {
    let lx = laplacian_apply_blocks(tape, idx, luu, luv, x)?;
    let prod = tape.mul(x, lx)?;
    Ok(tape.sum(prod))
}

/// Materialized operator for inspection and dense oracles. Blocks are plain
/// values copied off a tape.
#[derive(Debug, Clone)]
pub struct SheafLaplacian {
    pub n: usize,
    pub d: usize,
    /// n diagonal blocks, row-major d x d each.
    pub luu: Vec<f64>,
    /// One (u, v) pair per edge, canonical u < v.
    pub edges: Vec<(usize, usize)>,
    /// |E| off-diagonal blocks; the (v, u) block is the transpose.
    pub luv: Vec<f64>,
}

impl SheafLaplacian {
    pub fn from_tape(tape: &Tape, graph: &HeteroGraph, d: usize, luu: Tid, luv: Tid) -> SheafLaplacian {
        SheafLaplacian {
            n: graph.n(),
            d,
            luu: tape.values(luu).to_vec(),
            edges: graph.edges().iter().map(|e| (e.u, e.v)).collect(),
            luv: tape.values(luv).to_vec(),
        }
    }

    /// Dense (n*d x n*d) realization. Symmetric by construction: the (v, u)
    /// block is written as the exact transpose of the stored (u, v) block.
    pub fn dense(&self) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let w = n * d;
        let mut out = vec![0.0; w * w];
        for u in 0..n {
            for i in 0..d {
                for j in 0..d {
                    out[(u * d + i) * w + u * d + j] = self.luu[(u * d + i) * d + j];
                }
            }
        }
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    let b = self.luv[(e * d + i) * d + j];
                    out[(u * d + i) * w + v * d + j] = b;
                    out[(v * d + j) * w + u * d + i] = b;
                }
            }
        }
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let w = self.n * self.d;
        if w == 0 {
            return 0.0;
        }
        let m = nalgebra::DMatrix::from_row_slice(w, w, &self.dense());
        let eig = nalgebra::SymmetricEigen::new(m);
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}
