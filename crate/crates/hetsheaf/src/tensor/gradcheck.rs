//! Finite-difference verification of tape gradients.
//!
//! Central differences with step h around the current parameters, one probe
//! per scalar. An entry passes when the analytic/numeric difference is under
//! the absolute floor, or the relative error is under the tolerance. Probes
//! are independent and run in parallel under the `parallel` feature; each
//! clones the store, so the loss closure must be pure.

use crate::error::{Error, Result};
use crate::tensor::params::ParamStore;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { h: 1e-5, rel_tol: 1e-4, abs_floor: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter entry with the largest error, pass or fail.
    pub worst: Option<(String, usize)>,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// `loss` evaluates the scalar objective at arbitrary parameters; `analytic`
/// produces the tape gradients at the current parameters (index-aligned with
/// the store).
pub fn gradcheck<L>(
    params: &ParamStore,
    loss: L,
    analytic: impl FnOnce(&ParamStore) -> Result<Vec<Vec<f64>>>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore) -> Result<f64> + Sync,
{
    let grads = analytic(params)?;
    if grads.len() != params.len() {
        return Err(Error::dim(format!(
            "gradcheck: {} gradient buffers for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let mut probes: Vec<(usize, usize)> = Vec::new();
    for (ei, p) in params.entries().iter().enumerate() {
        if grads[ei].len() != p.data.len() {
            return Err(Error::dim(format!(
                "gradcheck: gradient length {} for {}",
                grads[ei].len(),
                p.name
            )));
        }
        for idx in 0..p.data.len() {
            probes.push((ei, idx));
        }
    }

    let probe_one = |&(ei, idx): &(usize, usize)| -> Result<f64> {
        let name = &params.entry(ei).name;
        let mut shifted = params.clone();
        let orig = shifted.entry(ei).data[idx];
        shifted.entry_mut(ei).data[idx] = orig + cfg.h;
        let lp = loss(&shifted)?;
        shifted.entry_mut(ei).data[idx] = orig - cfg.h;
        let lm = loss(&shifted)?;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::numeric(format!(
                "gradcheck: non-finite loss probing {name}[{idx}]"
            )));
        }
        Ok((lp - lm) / (2.0 * cfg.h))
    };

    #[cfg(feature = "parallel")]
    let numeric: Vec<Result<f64>> = probes.par_iter().map(probe_one).collect();
    #[cfg(not(feature = "parallel"))]
    let numeric: Vec<Result<f64>> = probes.iter().map(probe_one).collect();

    let mut report = GradCheckReport {
        checked: probes.len(),
        max_rel_err: 0.0,
        worst: None,
        failures: Vec::new(),
    };
    for ((ei, idx), num) in probes.into_iter().zip(numeric) {
        let num = num?;
        let ana = grads[ei][idx];
        let diff = (ana - num).abs();
        let rel = if diff <= cfg.abs_floor {
            0.0
        } else {
            diff / ana.abs().max(num.abs())
        };
        if rel >= report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((params.entry(ei).name.clone(), idx));
        }
        if rel >= cfg.rel_tol {
            report.failures.push(GradCheckFailure {
                param: params.entry(ei).name.clone(),
                index: idx,
                analytic: ana,
                numeric: num,
                rel_err: rel,
            });
        }
    }
    Ok(report)
}
