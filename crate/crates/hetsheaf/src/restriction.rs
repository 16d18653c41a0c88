//! Restriction-map construction: a flat parameter vector per incidence
//! becomes a d x d linear map of a chosen structural class, differentiably.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Diagonal,
    Orthogonal,
    General,
    LowRank { r: usize },
}

impl MapKind {
    /// Flat parameters required per map.
    pub fn param_count(&self, d: usize) -> usize {
        match self {
            MapKind::Diagonal => d,
            MapKind::Orthogonal => d * (d - 1) / 2,
            MapKind::General => d * d,
            MapKind::LowRank { r } => 2 * d * r + d,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if d == 0 {
            return Err(Error::validation("stalk dimension must be positive".to_string()));
        }
        if let MapKind::LowRank { r } = self {
            if *r < 1 || *r > d {
                return Err(Error::dim(format!("low-rank r={r} outside 1..={d}")));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MapKind::Diagonal => write!(f, "diagonal"),
            MapKind::Orthogonal => write!(f, "orthogonal"),
            MapKind::General => write!(f, "general"),
            MapKind::LowRank { r } => write!(f, "low_rank(r={r})"),
        }
    }
}

/// Turns an (N x param_count) tensor into N stacked d x d maps, one block
/// per row, shaped (N*d x d).
///
/// Layouts per kind:
/// - Diagonal: the d params are the diagonal.
/// - General: row-major reshape of d*d params.
/// - Orthogonal: strictly-lower entries of d-1 Householder vectors; the
///   block is the reflector product, orthogonal by construction with
///   determinant (-1)^(d-1).
/// - LowRank(r): first d*r params form A, next d*r form B (both row-major
///   d x r), last d form c; the block is A B^T + diag(c).
pub fn build_maps(tape: &mut Tape, kind: MapKind, params: Tid, d: usize) -> Result<Tid> {
    kind.validate(d)?;
    let need = kind.param_count(d);
    let got = tape.cols(params);
    if got != need {
        return Err(Error::dim(format!(
            "{kind} maps with d={d} need {need} params per row, got {got}"
        )));
    }
    let n = tape.rows(params);
    match kind {
        MapKind::Diagonal => Ok(tape.diag_embed(params)),
        MapKind::General => tape.reshape(params, n * d, d),
        MapKind::Orthogonal => tape.householder_blocks(params, d),
        MapKind::LowRank { r } => {
            let a_flat = tape.slice_cols(params, 0, d * r)?;
            let b_flat = tape.slice_cols(params, d * r, d * r)?;
            let c = tape.slice_cols(params, 2 * d * r, d)?;
            let a = tape.reshape(a_flat, n * d, r)?;
            let b = tape.reshape(b_flat, n * d, r)?;
            let abt = tape.bmm(a, b, false, true, n, d, r, d)?;
            let diag = tape.diag_embed(c);
            tape.add(abt, diag)
        }
    }
}
