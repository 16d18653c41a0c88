//! Release acceptance suite: one test per criterion, each verifying an
//! end-to-end behavior at its stated tolerance and printing the measured
//! numbers. Training-based criteria pin exact dataset and optimizer
//! recipes so every run is reproducible bit for bit.

use hetsheaf::data::{save_dataset, synth_hetero, SynthKind, SynthSizes};
use hetsheaf::graph::{CanonicalizeOptions, HeteroGraph, LabelKind};
use hetsheaf::heads::DecoderKind;
use hetsheaf::laplacian::{
    assemble, dirichlet_energy, identity_maps, laplacian_apply_blocks, laplacian_apply_factored,
    normalize, CochainIndex, SheafLaplacian,
};
use hetsheaf::model::{ModelConfig, TaskKind, NORM_EPS};
use hetsheaf::predictor::{param_budget, PredictorKind};
use hetsheaf::restriction::{build_maps, MapKind};
use hetsheaf::tensor::{GradCheckConfig, Tape};
use hetsheaf::train::{run_gradcheck, train, RunConfig};
use rand::prelude::*;
use std::time::Instant;

/// Random simple graph: `n` nodes over two node types, distinct undirected
/// pairs over two edge types.
fn random_graph(rng: &mut impl Rng, n: usize, m_max: usize) -> HeteroGraph {
    let node_type: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let mut pairs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            pairs.push((u, v));
        }
    }
    pairs.shuffle(rng);
    let m = rng.gen_range(1..=m_max.min(pairs.len()));
    let edges: Vec<(usize, usize, usize)> =
        pairs[..m].iter().map(|&(u, v)| (u, v, rng.gen_range(0..2))).collect();
    HeteroGraph::canonicalize(node_type, 2, &edges, 2, CanonicalizeOptions::default()).unwrap()
}

fn inf_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_01_identity_sheaf_reduces_to_graph_laplacian() {
    let start = Instant::now();
    let mut rng = hetsheaf::rng::seeded(11);
    for trial in 0..20 {
        let n = rng.gen_range(2..=12);
        let graph = random_graph(&mut rng, n, 2 * n);

        // Combinatorial Laplacian D - A from the canonical edge list.
        let mut lap = vec![0.0f64; n * n];
        for e in graph.edges() {
            lap[e.u * n + e.u] += 1.0;
            lap[e.v * n + e.v] += 1.0;
            lap[e.u * n + e.v] -= 1.0;
            lap[e.v * n + e.u] -= 1.0;
        }

        for d in [1usize, 2] {
            let idx = CochainIndex::new(&graph, d);
            let mut tape = Tape::new();
            let maps = identity_maps(&mut tape, &idx).unwrap();
            let (luu, luv) = assemble(&mut tape, &idx, maps).unwrap();
            let dense = SheafLaplacian::from_tape(&tape, &graph, d, luu, luv).dense();
            // Kronecker product L (x) I_d, exact in f64.
            let w = n * d;
            let mut expect = vec![0.0f64; w * w];
            for i in 0..n {
                for j in 0..n {
                    for r in 0..d {
                        expect[(i * d + r) * w + j * d + r] = lap[i * n + j];
                    }
                }
            }
            // Exact equality, no tolerance; -0.0 in the identity off-blocks
            // (a scaled +0.0) is identified with +0.0.
            for (k, (&got, &want)) in dense.iter().zip(&expect).enumerate() {
                assert!(
                    got == want,
                    "trial {trial} d={d}: entry {k} is {got}, combinatorial value {want}"
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}, budget 1s");
    println!("identity sheaf: 20 graphs exactly equal to D - A (d=1) and (D - A) (x) I_2 (d=2), {elapsed:?}");
}

#[test]
fn criterion_02_laplacians_are_psd_and_match_the_factorization() {
    let start = Instant::now();
    let mut rng = hetsheaf::rng::seeded(12);
    let kinds = |i: usize, d: usize| match i % 4 {
        0 => MapKind::Diagonal,
        1 => MapKind::Orthogonal,
        2 => MapKind::General,
        _ => MapKind::LowRank { r: 1 + i % d.max(1) },
    };
    let mut worst_eig = f64::INFINITY;
    let mut worst_diff = 0.0f64;
    for trial in 0..50 {
        let n = rng.gen_range(2..=12);
        let d = rng.gen_range(1..=4);
        let mut kind = kinds(trial, d);
        if kind == MapKind::Orthogonal && d == 1 {
            kind = MapKind::General;
        }
        let graph = random_graph(&mut rng, n, 2 * n);
        let idx = CochainIndex::new(&graph, d);
        let m = graph.num_edges();
        let pc = kind.param_count(d);
        let f = rng.gen_range(1..=3);

        let mut tape = Tape::new();
        let pvals: Vec<f64> = (0..2 * m * pc).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = tape.leaf(2 * m, pc, pvals, false).unwrap();
        let maps = build_maps(&mut tape, kind, params, d).unwrap();
        let (luu, luv) = assemble(&mut tape, &idx, maps).unwrap();

        let min_eig = SheafLaplacian::from_tape(&tape, &graph, d, luu, luv).min_eigenvalue();
        worst_eig = worst_eig.min(min_eig);
        assert!(
            min_eig >= -1e-8,
            "trial {trial} ({kind}, n={n}, d={d}): min eigenvalue {min_eig:.3e}"
        );

        let xvals: Vec<f64> = (0..n * d * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = tape.leaf(n * d, f, xvals, false).unwrap();
        let via_blocks = laplacian_apply_blocks(&mut tape, &idx, luu, luv, x).unwrap();
        let via_delta = laplacian_apply_factored(&mut tape, &idx, maps, x).unwrap();
        let diff = inf_norm_diff(tape.values(via_blocks), tape.values(via_delta));
        worst_diff = worst_diff.max(diff);
        assert!(
            diff < 1e-10,
            "trial {trial} ({kind}, n={n}, d={d}): block apply deviates from delta^T delta x by {diff:.3e}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}, budget 10s");
    println!(
        "psd + factorization: 50 sheaves, min eigenvalue {worst_eig:.3e}, worst apply gap {worst_diff:.3e}, {elapsed:?}"
    );
}

#[test]
fn criterion_03_orthogonal_maps_are_orthogonal_with_unit_determinant() {
    let mut rng = hetsheaf::rng::seeded(13);
    let mut worst_gram = 0.0f64;
    let mut worst_det = 0.0f64;
    for i in 0..1000 {
        let d = 2 + i % 4;
        let pc = MapKind::Orthogonal.param_count(d);
        let scale = 0.2 + 2.0 * rng.gen::<f64>();
        let pvals: Vec<f64> = (0..pc).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let params = tape.leaf(1, pc, pvals, false).unwrap();
        let maps = build_maps(&mut tape, MapKind::Orthogonal, params, d).unwrap();
        let o = tape.values(maps);

        let mut gram_gap = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|k| o[k * d + i] * o[k * d + j]).sum();
                let want = f64::from(u8::from(i == j));
                gram_gap = gram_gap.max((dot - want).abs());
            }
        }
        worst_gram = worst_gram.max(gram_gap);
        assert!(gram_gap < 1e-10, "vector {i} (d={d}): |O^T O - I| = {gram_gap:.3e}");

        let det = nalgebra::DMatrix::from_row_slice(d, d, o).determinant();
        let det_gap = (det.abs() - 1.0).abs();
        worst_det = worst_det.max(det_gap);
        assert!(det_gap < 1e-10, "vector {i} (d={d}): ||det| - 1| = {det_gap:.3e}");
    }
    println!("orthogonality: 1000 maps, worst |O^T O - I| {worst_gram:.3e}, worst ||det| - 1| {worst_det:.3e}");
}

#[test]
fn criterion_04_every_predictor_map_kind_pair_passes_gradcheck() {
    let start = Instant::now();
    let sizes = SynthSizes { nodes_per_type: 3, degree: 2, num_classes: 3, feature_noise: 0.1 };
    let ds = synth_hetero(SynthKind::TypeSignalNc, &sizes, 0).unwrap();
    let mut checked = 0usize;
    let mut max_err = 0.0f64;
    for kind in PredictorKind::ALL {
        for map_kind in [MapKind::Diagonal, MapKind::Orthogonal, MapKind::General] {
            let mut cfg = RunConfig::new(
                ModelConfig {
                    d: 2,
                    f: 1,
                    layers: 1,
                    predictor: kind,
                    map_kind,
                    predictor_hidden: 0,
                    task: TaskKind::Nc,
                    ..ModelConfig::default()
                },
                "unused",
            );
            cfg.seed = 0;
            let report = run_gradcheck(&cfg, &ds, &GradCheckConfig::default()).unwrap();
            assert!(
                report.pass(),
                "{kind} + {map_kind}: {} gradient entries off, first: {:?}",
                report.failures.len(),
                report.failures.first()
            );
            checked += report.checked;
            max_err = max_err.max(report.max_rel_err);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, budget 60s");
    println!(
        "gradcheck: 8 predictors x 3 map kinds, {checked} partials, max relative error {max_err:.3e}, {elapsed:?}"
    );
}

#[test]
fn criterion_05_identity_diffusion_dissipates_dirichlet_energy() {
    let mut rng = hetsheaf::rng::seeded(15);
    let (d, f) = (2usize, 2usize);
    let mut worst_gap = 0.0f64;
    for trial in 0..10 {
        let n = 8;
        let graph = random_graph(&mut rng, n, 2 * n);
        let idx = CochainIndex::new(&graph, d);
        let mut tape = Tape::new();
        let maps = identity_maps(&mut tape, &idx).unwrap();
        let (luu, luv) = assemble(&mut tape, &idx, maps).unwrap();
        let nb = normalize(&mut tape, &idx, luu, luv, NORM_EPS, false).unwrap();
        let delta = SheafLaplacian::from_tape(&tape, &graph, d, nb.luu, nb.luv).dense();

        let w = n * d;
        let h0: Vec<f64> = (0..w * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut h = tape.leaf(w, f, h0.clone(), false).unwrap();
        let mut h_dense = h0;
        let mut energies = Vec::with_capacity(11);
        let e0 = dirichlet_energy(&mut tape, &idx, nb.luu, nb.luv, h).unwrap();
        energies.push(tape.values(e0)[0]);

        // h <- h - sigma(Delta (I (x) W1) h W2) with sigma = id, W1 = I,
        // W2 = 0.1 I, i.e. h <- (I - 0.1 Delta) h.
        for _step in 0..10 {
            let lh = laplacian_apply_blocks(&mut tape, &idx, nb.luu, nb.luv, h).unwrap();
            let scaled = tape.scale(lh, 0.1);
            h = tape.sub(h, scaled).unwrap();

            let mut next = vec![0.0f64; w * f];
            for c in 0..f {
                for i in 0..w {
                    let mut acc = 0.0;
                    for j in 0..w {
                        acc += delta[i * w + j] * h_dense[j * f + c];
                    }
                    next[i * f + c] = h_dense[i * f + c] - 0.1 * acc;
                }
            }
            h_dense = next;

            let gap = inf_norm_diff(tape.values(h), &h_dense);
            worst_gap = worst_gap.max(gap);
            assert!(gap < 1e-10, "trial {trial}: blockwise step deviates from dense by {gap:.3e}");

            let e = dirichlet_energy(&mut tape, &idx, nb.luu, nb.luv, h).unwrap();
            energies.push(tape.values(e)[0]);
        }
        for k in 1..energies.len() {
            assert!(
                energies[k] <= energies[k - 1] + 1e-12,
                "trial {trial}: energy rose {} -> {} at step {k}",
                energies[k - 1],
                energies[k]
            );
        }
    }
    println!("diffusion: 10 graphs x 10 identity-sheaf steps, energy non-increasing, worst dense gap {worst_gap:.3e}");
}

fn nc_run_config(data: &std::path::Path, predictor: PredictorKind, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(
        ModelConfig {
            d: 2,
            f: 4,
            layers: 2,
            predictor,
            map_kind: MapKind::General,
            predictor_hidden: 32,
            task: TaskKind::Nc,
            ..ModelConfig::default()
        },
        data,
    );
    cfg.epochs = 200;
    cfg.seed = seed;
    cfg
}

#[test]
fn criterion_06_type_signal_nc_reaches_95_micro_f1() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let sizes = SynthSizes { nodes_per_type: 200, degree: 4, num_classes: 3, feature_noise: 0.1 };
    save_dataset(&data, &synth_hetero(SynthKind::TypeSignalNc, &sizes, 0).unwrap()).unwrap();
    let mut micros = Vec::new();
    for seed in 0..5u64 {
        let start = Instant::now();
        let out = train(&nc_run_config(&data, PredictorKind::Te, seed)).unwrap();
        let elapsed = start.elapsed();
        assert!(elapsed.as_secs_f64() < 60.0, "seed {seed} took {elapsed:?}, budget 60s per run");
        micros.push(out.report.values["test_micro_f1"]);
    }
    let mean = micros.iter().sum::<f64>() / micros.len() as f64;
    assert!(mean >= 0.95, "mean test micro-F1 {mean:.4} over seeds 0..5 ({micros:?})");
    println!("type-signal nc: mean test micro-F1 {mean:.4} over 5 seeds {micros:?}");
}

#[test]
fn criterion_07_edge_aware_predictors_beat_nsd_on_conflicting_edges() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let sizes = SynthSizes { nodes_per_type: 200, degree: 4, num_classes: 2, feature_noise: 0.1 };
    save_dataset(&data, &synth_hetero(SynthKind::ConflictingEdgesNc, &sizes, 0).unwrap()).unwrap();
    let mean_micro = |predictor: PredictorKind| -> f64 {
        let mut acc = 0.0;
        for seed in 0..5u64 {
            let out = train(&nc_run_config(&data, predictor, seed)).unwrap();
            acc += out.report.values["test_micro_f1"];
        }
        acc / 5.0
    };
    let nsd = mean_micro(PredictorKind::Nsd);
    let ee = mean_micro(PredictorKind::Ee);
    let ensemble = mean_micro(PredictorKind::Ensemble);
    assert!(ee >= nsd + 0.05, "edge-aware mean {ee:.4} vs type-blind {nsd:.4}, need +0.05");
    assert!(ensemble >= nsd + 0.05, "ensemble mean {ensemble:.4} vs type-blind {nsd:.4}, need +0.05");
    println!(
        "conflicting edges: 5-seed mean micro-F1 type-blind {nsd:.4}, edge-aware {ee:.4}, ensemble {ensemble:.4}"
    );
}

#[test]
fn criterion_08_bipartite_lp_reaches_95_auroc_and_aupr() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let sizes = SynthSizes { nodes_per_type: 150, degree: 8, num_classes: 2, feature_noise: 0.02 };
    save_dataset(&data, &synth_hetero(SynthKind::BipartiteLp, &sizes, 0).unwrap()).unwrap();
    let mut cfg = RunConfig::new(
        ModelConfig {
            d: 2,
            f: 8,
            layers: 2,
            predictor: PredictorKind::Te,
            map_kind: MapKind::General,
            predictor_hidden: 32,
            task: TaskKind::Lp,
            ..ModelConfig::default()
        },
        &data,
    );
    cfg.epochs = 300;
    cfg.patience = 100;
    cfg.lr = 0.03;
    cfg.seed = 2;
    cfg.decoder = DecoderKind::DistMult;
    let out = train(&cfg).unwrap();
    let auroc = out.report.values["test_auroc"];
    let aupr = out.report.values["test_aupr"];
    assert!(out.epochs_run <= 300);
    assert!(auroc >= 0.95, "test AUROC {auroc:.4}, need 0.95");
    assert!(aupr >= 0.95, "test AUPR {aupr:.4}, need 0.95");
    println!(
        "bipartite lp: AUROC {auroc:.4}, AUPR {aupr:.4} at best epoch {} of {}",
        out.best_epoch, out.epochs_run
    );
}

#[test]
fn criterion_09_parameter_budgets_order_by_input_width() {
    // With w = d*f above the type cardinalities, the feature-blind
    // predictors (Et, Nt, Types) cost strictly less than every
    // feature-reading one, and budgets order by concatenated input width:
    // Et(psi) < Nt(2 phi) < Types(2 phi + psi) < Nsd(2w) < Ee(2w + psi)
    // < Ne(2w + 2 phi) < Te(2w + 2 phi + psi).
    let (phi, psi) = (2usize, 2usize);
    let chain = [
        PredictorKind::Et,
        PredictorKind::Nt,
        PredictorKind::Types,
        PredictorKind::Nsd,
        PredictorKind::Ee,
        PredictorKind::Ne,
        PredictorKind::Te,
    ];
    for map_kind in [MapKind::Diagonal, MapKind::Orthogonal, MapKind::General] {
        for hidden in [0usize, 8] {
            let budgets: Vec<usize> = chain
                .iter()
                .map(|&k| param_budget(k, map_kind, 2, 2, phi, psi, hidden, false))
                .collect();
            for i in 1..budgets.len() {
                assert!(
                    budgets[i - 1] < budgets[i],
                    "{map_kind} hidden={hidden}: {} budget {} does not undercut {} budget {}",
                    chain[i - 1],
                    budgets[i - 1],
                    chain[i],
                    budgets[i]
                );
            }
            let nsd = param_budget(PredictorKind::Nsd, map_kind, 2, 2, phi, psi, hidden, false);
            let ens =
                param_budget(PredictorKind::Ensemble, map_kind, 2, 2, phi, psi, hidden, false);
            assert_eq!(ens, psi * nsd, "{map_kind} hidden={hidden}: ensemble vs psi x nsd");
        }
    }
    // The feature-blind < feature-reading relation needs the widest blind
    // input (2 phi + psi) below the narrowest reading one (2 w).
    for (d, f, phi, psi) in [(2, 2, 2, 3), (3, 2, 2, 2), (2, 4, 3, 5), (5, 1, 3, 2)] {
        assert!(2 * phi + psi < 2 * d * f);
        for hidden in [0usize, 16] {
            let blind = [PredictorKind::Et, PredictorKind::Nt, PredictorKind::Types]
                .map(|k| param_budget(k, MapKind::General, d, f, phi, psi, hidden, false));
            let reading = [PredictorKind::Nsd, PredictorKind::Ee, PredictorKind::Ne, PredictorKind::Te]
                .map(|k| param_budget(k, MapKind::General, d, f, phi, psi, hidden, false));
            let max_blind = blind.iter().max().unwrap();
            let min_reading = reading.iter().min().unwrap();
            assert!(
                max_blind < min_reading,
                "d={d} f={f} phi={phi} psi={psi} hidden={hidden}: blind max {max_blind} vs reading min {min_reading}"
            );
        }
    }
    println!("parameter budgets: et < nt < types < nsd < ee < ne < te per input width; ensemble = psi x nsd");
}

#[test]
fn criterion_10_same_seed_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let sizes = SynthSizes { nodes_per_type: 40, degree: 4, num_classes: 3, feature_noise: 0.1 };
    save_dataset(&data, &synth_hetero(SynthKind::TypeSignalNc, &sizes, 0).unwrap()).unwrap();
    let mut cfg = RunConfig::new(
        ModelConfig {
            d: 2,
            f: 2,
            layers: 1,
            predictor: PredictorKind::Te,
            map_kind: MapKind::General,
            predictor_hidden: 8,
            task: TaskKind::Nc,
            ..ModelConfig::default()
        },
        &data,
    );
    cfg.epochs = 5;
    cfg.seed = 3;

    // Fresh output directories: metrics must not depend on where they land.
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let mut c = cfg.clone();
        c.out_dir = Some(tmp.path().join(name));
        train(&c).unwrap();
        metrics.push(std::fs::read(tmp.path().join(name).join("metrics.json")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1], "metrics.json differs between identical runs");

    // Same directory twice: the checkpoint bytes must also reproduce.
    let mut c = cfg.clone();
    c.out_dir = Some(tmp.path().join("c"));
    train(&c).unwrap();
    let first = std::fs::read(tmp.path().join("c").join("checkpoint.bin")).unwrap();
    train(&c).unwrap();
    let second = std::fs::read(tmp.path().join("c").join("checkpoint.bin")).unwrap();
    assert_eq!(first, second, "checkpoint.bin differs between identical runs");
    println!("determinism: metrics.json and checkpoint.bin byte-identical across reruns");
}

// Brute-force metric oracles, deliberately written as direct counting over
// the definitions rather than sort-based sweeps.

fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    let mut acc = 0.0;
    for &p in &pos {
        for &q in &neg {
            acc += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    acc / (pos.len() * neg.len()) as f64
}

fn brute_aupr(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && !l).count() as f64;
        let precision = tp / (tp + fp);
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

fn brute_f1(pred: &[Vec<usize>], truth: &[Vec<usize>], num_classes: usize) -> (f64, f64) {
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    let (mut stp, mut sfp, mut sfn) = (0, 0, 0);
    let mut macro_acc = 0.0;
    for c in 0..num_classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in pred.iter().zip(truth) {
            let (in_p, in_t) = (p.contains(&c), t.contains(&c));
            tp += usize::from(in_p && in_t);
            fp += usize::from(in_p && !in_t);
            fn_ += usize::from(!in_p && in_t);
        }
        macro_acc += f1(tp, fp, fn_);
        stp += tp;
        sfp += fp;
        sfn += fn_;
    }
    (macro_acc / num_classes as f64, f1(stp, sfp, sfn))
}

fn brute_mrr(queries: &[(Vec<f64>, usize)]) -> f64 {
    let mut acc = 0.0;
    for (scores, truth) in queries {
        let s = scores[*truth];
        let rank = 1
            + scores.iter().filter(|&&x| x > s).count()
            + scores.iter().enumerate().filter(|&(j, &x)| j != *truth && x == s).count();
        acc += 1.0 / rank as f64;
    }
    acc / queries.len() as f64
}

#[test]
fn criterion_11_metrics_match_brute_force_oracles() {
    let mut rng = hetsheaf::rng::seeded(21);
    // Quantized scores so tied values actually occur.
    let quantized =
        |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { f64::from(rng.gen_range(0..10)) / 10.0 };
    let mut worst = 0.0f64;
    for case in 0..100 {
        match case % 4 {
            0 => {
                let n = rng.gen_range(4..=40);
                let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
                labels[0] = true;
                labels[1] = false;
                let scores: Vec<f64> = (0..n).map(|_| quantized(&mut rng)).collect();
                let got = hetsheaf::metrics::auroc(&scores, &labels).unwrap();
                let want = brute_auroc(&scores, &labels);
                worst = worst.max((got - want).abs());
                assert!((got - want).abs() < 1e-10, "case {case}: auroc {got} vs {want}");
            }
            1 => {
                let n = rng.gen_range(4..=40);
                let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
                labels[0] = true;
                labels[1] = false;
                let scores: Vec<f64> = (0..n).map(|_| quantized(&mut rng)).collect();
                let got = hetsheaf::metrics::aupr(&scores, &labels).unwrap();
                let want = brute_aupr(&scores, &labels);
                worst = worst.max((got - want).abs());
                assert!((got - want).abs() < 1e-10, "case {case}: aupr {got} vs {want}");
            }
            2 => {
                let n = rng.gen_range(3..=30);
                let k = rng.gen_range(2..=5);
                let multilabel = case % 8 == 6;
                let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
                    if multilabel {
                        (0..k).filter(|_| rng.gen_bool(0.4)).collect()
                    } else {
                        vec![rng.gen_range(0..k)]
                    }
                };
                let pred: Vec<Vec<usize>> = (0..n).map(|_| draw(&mut rng)).collect();
                let truth: Vec<Vec<usize>> = (0..n).map(|_| draw(&mut rng)).collect();
                let kind = if multilabel { LabelKind::Multilabel } else { LabelKind::Multiclass };
                let (gm, gu) = hetsheaf::metrics::f1_scores(&pred, &truth, k, kind).unwrap();
                let (wm, wu) = brute_f1(&pred, &truth, k);
                worst = worst.max((gm - wm).abs()).max((gu - wu).abs());
                assert!((gm - wm).abs() < 1e-10, "case {case}: macro f1 {gm} vs {wm}");
                assert!((gu - wu).abs() < 1e-10, "case {case}: micro f1 {gu} vs {wu}");
            }
            _ => {
                let q = rng.gen_range(1..=6);
                let queries: Vec<(Vec<f64>, usize)> = (0..q)
                    .map(|_| {
                        let len = rng.gen_range(1..=8);
                        let scores: Vec<f64> = (0..len).map(|_| quantized(&mut rng)).collect();
                        let truth = rng.gen_range(0..len);
                        (scores, truth)
                    })
                    .collect();
                let got = hetsheaf::metrics::mrr(&queries).unwrap();
                let want = brute_mrr(&queries);
                worst = worst.max((got - want).abs());
                assert!((got - want).abs() < 1e-10, "case {case}: mrr {got} vs {want}");
            }
        }
    }
    println!("metric oracles: 100 random inputs, worst deviation {worst:.3e}");
}
