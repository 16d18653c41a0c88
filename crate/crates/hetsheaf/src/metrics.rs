//! Evaluation metrics. All functions are pure; score vectors are plain
//! slices so callers can feed tape outputs or file contents alike.

use crate::error::{Error, Result};
use crate::graph::LabelKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Named metric values for one run. Maps keep keys sorted so serialized
/// reports are byte-stable.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct MetricReport {
    pub seed: u64,
    pub split_sizes: BTreeMap<String, usize>,
    pub values: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn new(seed: u64) -> MetricReport {
        MetricReport { seed, ..MetricReport::default() }
    }

    /// Records a metric; values must be finite and inside [0, 1].
    pub fn insert(&mut self, name: &str, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::numeric(format!("metric {name} = {value} outside [0, 1]")));
        }
        self.values.insert(name.to_string(), value);
        Ok(())
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Macro and micro F1 over label sets. Multiclass entries must be
/// singletons; multilabel entries are arbitrary class subsets. Classes no
/// one predicted or held score 0 under the 0/0 convention.
pub fn f1_scores(
    pred: &[Vec<usize>],
    truth: &[Vec<usize>],
    num_classes: usize,
    kind: LabelKind,
) -> Result<(f64, f64)> {
    if pred.is_empty() {
        return Err(Error::validation("f1_scores: empty input"));
    }
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "f1_scores: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if num_classes == 0 {
        return Err(Error::validation("f1_scores: zero classes"));
    }
    for set in pred.iter().chain(truth.iter()) {
        if kind == LabelKind::Multiclass && set.len() != 1 {
            return Err(Error::validation("f1_scores: multiclass entries must be singletons"));
        }
        if let Some(&c) = set.iter().find(|&&c| c >= num_classes) {
            return Err(Error::validation(format!("f1_scores: class {c} out of {num_classes}")));
        }
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    let mut mark = vec![false; num_classes];
    for (p, t) in pred.iter().zip(truth) {
        for &c in t {
            mark[c] = true;
        }
        for &c in p {
            if mark[c] {
                tp[c] += 1;
            } else {
                fp[c] += 1;
            }
        }
        for &c in t {
            if !p.contains(&c) {
                fn_[c] += 1;
            }
            mark[c] = false;
        }
    }
    let macro_f1 =
        (0..num_classes).map(|c| f1_from_counts(tp[c], fp[c], fn_[c])).sum::<f64>()
            / num_classes as f64;
    let micro_f1 = f1_from_counts(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    Ok((macro_f1, micro_f1))
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::numeric(format!("non-finite score {s}")));
    }
    Ok(())
}

/// Probability that a uniformly drawn positive outranks a uniformly drawn
/// negative, ties counted half. Computed through the rank-sum identity.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation("auroc: both classes must be present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average rank (1-based) within each tied block.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Area under the precision-recall curve as a plain step integral: tied
/// scores enter as one block and each recall increment is weighted by the
/// precision at that threshold (no right-to-left maximum).
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::validation("aupr: no positive examples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut area = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if labels[idx] {
                tp += 1;
            }
        }
        seen += j - i;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// Mean reciprocal rank. Each query is a candidate score list plus the
/// index of its true item; equal scores rank the true item last among the
/// tied block.
pub fn mrr(queries: &[(Vec<f64>, usize)]) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::validation("mrr: no queries"));
    }
    let mut total = 0.0;
    for (q, (scores, true_idx)) in queries.iter().enumerate() {
        if *true_idx >= scores.len() {
            return Err(Error::validation(format!(
                "mrr: query {q} has no candidate {true_idx}"
            )));
        }
        if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::numeric(format!("mrr: non-finite score {s}")));
        }
        let s_true = scores[*true_idx];
        let ahead = scores
            .iter()
            .enumerate()
            .filter(|&(i, &s)| i != *true_idx && s >= s_true)
            .count();
        total += 1.0 / (1 + ahead) as f64;
    }
    Ok(total / queries.len() as f64)
}
