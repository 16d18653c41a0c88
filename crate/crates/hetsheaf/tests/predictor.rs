use hetsheaf::graph::{CanonicalizeOptions, HeteroGraph};
use hetsheaf::predictor::{param_budget, PredictorKind, SheafPredictor};
use hetsheaf::restriction::MapKind;
use hetsheaf::tensor::{Activation, ParamStore, Tape, Tid};
use rand::Rng;

fn k(kinds: &[PredictorKind]) -> impl Iterator<Item = PredictorKind> + '_ {
    kinds.iter().copied()
}

fn small_graph() -> HeteroGraph {
    // 4 nodes (types 0, 0, 1, 1), three edges of two types.
    HeteroGraph::canonicalize(
        vec![0, 0, 1, 1],
        2,
        &[(0, 2, 0), (1, 2, 1), (1, 3, 0)],
        2,
        CanonicalizeOptions::default(),
    )
    .unwrap()
}

fn random_stalks(tape: &mut Tape, rng: &mut impl Rng, n: usize, w: usize) -> Tid {
    let vals: Vec<f64> = (0..n * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.constant(n, w, vals).unwrap()
}

fn predictor_for(
    store: &mut ParamStore,
    kind: PredictorKind,
    map_kind: MapKind,
    d: usize,
    f: usize,
    seed: u64,
) -> SheafPredictor {
    let mut rng = hetsheaf::rng::seeded(seed);
    SheafPredictor::init(store, "p", kind, map_kind, d, f, 2, 2, 8, Activation::Elu, false, &mut rng)
        .unwrap()
}

#[test]
fn input_widths_follow_the_kind_table() {
    // w = 6, two node types, two edge types.
    let w = 6;
    assert_eq!(PredictorKind::Nsd.input_width(w, 2, 2, false), 12);
    assert_eq!(PredictorKind::Te.input_width(w, 2, 2, false), 18);
    assert_eq!(PredictorKind::Ee.input_width(w, 2, 2, false), 14);
    assert_eq!(PredictorKind::Ne.input_width(w, 2, 2, false), 16);
    assert_eq!(PredictorKind::Types.input_width(w, 2, 2, false), 6);
    assert_eq!(PredictorKind::Nt.input_width(w, 2, 2, false), 4);
    assert_eq!(PredictorKind::Et.input_width(w, 2, 2, false), 2);
    assert_eq!(PredictorKind::Ensemble.input_width(w, 2, 2, false), 12);
    assert_eq!(PredictorKind::Ensemble.input_width(w, 2, 2, true), 16);
}

#[test]
fn type_only_kinds_ignore_features_bit_for_bit() {
    let g = small_graph();
    let (d, f) = (2, 3);
    for kind in k(&[PredictorKind::Types, PredictorKind::Nt, PredictorKind::Et]) {
        let mut store = ParamStore::new();
        let p = predictor_for(&mut store, kind, MapKind::General, d, f, 7);
        let mut outs = Vec::new();
        for seed in [1u64, 2] {
            let mut t = Tape::new();
            let leaves = store.load(&mut t).unwrap();
            let mut rng = hetsheaf::rng::seeded(seed);
            let x = random_stalks(&mut t, &mut rng, g.n(), d * f);
            let out = p.predict(&mut t, &leaves, &g, x).unwrap();
            outs.push(t.values(out).to_vec());
        }
        assert_eq!(outs[0], outs[1], "{kind} output must not depend on features");
    }
}

#[test]
fn feature_kinds_do_react_to_features() {
    let g = small_graph();
    let (d, f) = (2, 3);
    for kind in k(&[
        PredictorKind::Nsd,
        PredictorKind::Te,
        PredictorKind::Ee,
        PredictorKind::Ne,
        PredictorKind::Ensemble,
    ]) {
        let mut store = ParamStore::new();
        let p = predictor_for(&mut store, kind, MapKind::General, d, f, 7);
        let mut outs = Vec::new();
        for seed in [1u64, 2] {
            let mut t = Tape::new();
            let leaves = store.load(&mut t).unwrap();
            let mut rng = hetsheaf::rng::seeded(seed);
            let x = random_stalks(&mut t, &mut rng, g.n(), d * f);
            let out = p.predict(&mut t, &leaves, &g, x).unwrap();
            outs.push(t.values(out).to_vec());
        }
        assert_ne!(outs[0], outs[1], "{kind} output should depend on features");
    }
}

#[test]
fn edge_type_only_gives_identical_maps_for_same_type_edges() {
    // Edges 0 and 2 share type 0 but have different endpoints; under the
    // edge-type-only kind every incidence of a type-0 edge gets the same
    // parameter row.
    let g = small_graph();
    let mut store = ParamStore::new();
    let p = predictor_for(&mut store, PredictorKind::Et, MapKind::Diagonal, 2, 3, 13);
    let mut t = Tape::new();
    let leaves = store.load(&mut t).unwrap();
    let mut rng = hetsheaf::rng::seeded(5);
    let x = random_stalks(&mut t, &mut rng, g.n(), 6);
    let out = p.predict(&mut t, &leaves, &g, x).unwrap();
    let v = t.values(out);
    let width = 2;
    let type0: Vec<usize> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.etype == 0)
        .map(|(i, _)| i)
        .collect();
    assert!(type0.len() >= 2);
    let base = &v[2 * type0[0] * width..(2 * type0[0] + 1) * width];
    for &e in &type0 {
        for slot in [2 * e, 2 * e + 1] {
            assert_eq!(&v[slot * width..(slot + 1) * width], base);
        }
    }
}

#[test]
fn node_type_kind_is_order_sensitive() {
    // Edge (0, 2) joins node types 0 and 1: the u-side and v-side rows see
    // the one-hots in opposite order, so the predicted parameters differ.
    let g = small_graph();
    let mut store = ParamStore::new();
    let p = predictor_for(&mut store, PredictorKind::Nt, MapKind::General, 2, 3, 17);
    let mut t = Tape::new();
    let leaves = store.load(&mut t).unwrap();
    let mut rng = hetsheaf::rng::seeded(5);
    let x = random_stalks(&mut t, &mut rng, g.n(), 6);
    let out = p.predict(&mut t, &leaves, &g, x).unwrap();
    let v = t.values(out);
    let width = 4;
    let e = g
        .edges()
        .iter()
        .position(|e| g.node_type(e.u) != g.node_type(e.v))
        .unwrap();
    assert_ne!(v[2 * e * width..(2 * e + 1) * width], v[(2 * e + 1) * width..(2 * e + 2) * width]);
}

#[test]
fn single_linear_net_matches_hand_multiplied_input() {
    // One edge, hidden = 0: output row = input . W + b with the input
    // x_u || x_v || onehot(phi u) || onehot(phi v) || onehot(psi e).
    let g = HeteroGraph::canonicalize(
        vec![0, 1],
        2,
        &[(0, 1, 1)],
        2,
        CanonicalizeOptions::default(),
    )
    .unwrap();
    let (d, f) = (1, 2);
    let mut store = ParamStore::new();
    let mut rng = hetsheaf::rng::seeded(19);
    let p = SheafPredictor::init(
        &mut store,
        "p",
        PredictorKind::Te,
        MapKind::Diagonal,
        d,
        f,
        2,
        2,
        0,
        Activation::Elu,
        false,
        &mut rng,
    )
    .unwrap();
    let in_w = PredictorKind::Te.input_width(d * f, 2, 2, false);
    assert_eq!(in_w, 10);
    let wvals: Vec<f64> = (0..in_w).map(|i| 0.1 * (i as f64 + 1.0)).collect();
    store.by_name_mut("p.net.l0.w").unwrap().data.copy_from_slice(&wvals);
    store.by_name_mut("p.net.l0.b").unwrap().data.copy_from_slice(&[0.25]);

    let xu = [0.3, -0.7];
    let xv = [1.1, 0.4];
    let mut t = Tape::new();
    let leaves = store.load(&mut t).unwrap();
    let x = t.constant(2, 2, vec![xu[0], xu[1], xv[0], xv[1]]).unwrap();
    let out = p.predict(&mut t, &leaves, &g, x).unwrap();
    let v = t.values(out);

    let row_u = [xu[0], xu[1], xv[0], xv[1], 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
    let row_v = [xv[0], xv[1], xu[0], xu[1], 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    let dot = |row: &[f64]| row.iter().zip(&wvals).map(|(a, b)| a * b).sum::<f64>() + 0.25;
    assert!((v[0] - dot(&row_u)).abs() < 1e-12, "{} vs {}", v[0], dot(&row_u));
    assert!((v[1] - dot(&row_v)).abs() < 1e-12, "{} vs {}", v[1], dot(&row_v));
}

#[test]
fn ensemble_routes_each_edge_through_its_type_net() {
    let g = small_graph();
    let (d, f) = (2, 2);
    let mut store = ParamStore::new();
    let p = predictor_for(&mut store, PredictorKind::Ensemble, MapKind::General, d, f, 23);
    // Zero every parameter of the type-1 net.
    for name in ["p.net1.l0.w", "p.net1.l0.b", "p.net1.l1.w", "p.net1.l1.b"] {
        store.by_name_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut t = Tape::new();
    let leaves = store.load(&mut t).unwrap();
    let mut rng = hetsheaf::rng::seeded(3);
    let x = random_stalks(&mut t, &mut rng, g.n(), d * f);
    let out = p.predict(&mut t, &leaves, &g, x).unwrap();
    let v = t.values(out);
    let width = d * d;
    for (e, edge) in g.edges().iter().enumerate() {
        for slot in [2 * e, 2 * e + 1] {
            let row = &v[slot * width..(slot + 1) * width];
            if edge.etype == 1 {
                assert!(row.iter().all(|&x| x == 0.0), "type-1 edge must use the zeroed net");
            } else {
                assert!(row.iter().any(|&x| x != 0.0), "type-0 edge must stay nonzero");
            }
        }
    }
}

#[test]
fn param_budget_matches_registered_scalars() {
    for kind in PredictorKind::ALL {
        for map_kind in [
            MapKind::Diagonal,
            MapKind::Orthogonal,
            MapKind::General,
            MapKind::LowRank { r: 2 },
        ] {
            // Orthogonal d=2 has exactly one parameter; keep d >= 3 so every
            // kind has a nonempty output.
            let (d, f) = (3, 2);
            let mut store = ParamStore::new();
            let mut rng = hetsheaf::rng::seeded(29);
            let p = SheafPredictor::init(
                &mut store,
                "p",
                kind,
                map_kind,
                d,
                f,
                2,
                3,
                8,
                Activation::Elu,
                false,
                &mut rng,
            )
            .unwrap();
            let budget = param_budget(kind, map_kind, d, f, 2, 3, 8, false);
            assert_eq!(store.scalar_count(), budget, "{kind} x {map_kind}");
            assert_eq!(p.net_scalar_count(), budget);
        }
    }
}

#[test]
fn ensemble_budget_is_edge_type_count_times_single_net() {
    let single = param_budget(PredictorKind::Nsd, MapKind::General, 2, 3, 4, 5, 16, false);
    let ens = param_budget(PredictorKind::Ensemble, MapKind::General, 2, 3, 4, 5, 16, false);
    assert_eq!(ens, 5 * single);
}

#[test]
fn budget_against_a_by_hand_tally() {
    // Te, general maps, d=2, f=3 (w=6), 2 node types, 2 edge types, hidden 8:
    // input 2*6+2*2+2 = 18; net 18*8+8 + 8*4+4 = 188.
    assert_eq!(param_budget(PredictorKind::Te, MapKind::General, 2, 3, 2, 2, 8, false), 188);
    // Types is strictly smaller than Te whenever w > 0.
    for d in 1..4 {
        for f in 1..4 {
            let te = param_budget(PredictorKind::Te, MapKind::General, d, f, 2, 2, 8, false);
            let ty = param_budget(PredictorKind::Types, MapKind::General, d, f, 2, 2, 8, false);
            assert!(ty < te);
        }
    }
}

#[test]
fn relabeling_nodes_permutes_the_predicted_maps() {
    // Permute node ids with matching feature and type rows: each incidence's
    // parameter row must be reproduced exactly at its image.
    let perm = [2usize, 0, 3, 1];
    let types = [0usize, 0, 1, 1];
    let edges = [(0usize, 2usize, 0usize), (1, 2, 1), (1, 3, 0)];
    let g1 = HeteroGraph::canonicalize(types.to_vec(), 2, &edges, 2, CanonicalizeOptions::default())
        .unwrap();
    let types2: Vec<usize> = {
        let mut v = vec![0; 4];
        for u in 0..4 {
            v[perm[u]] = types[u];
        }
        v
    };
    let edges2: Vec<(usize, usize, usize)> =
        edges.iter().map(|&(u, v, t)| (perm[u], perm[v], t)).collect();
    let g2 = HeteroGraph::canonicalize(types2, 2, &edges2, 2, CanonicalizeOptions::default())
        .unwrap();

    let (d, f) = (2, 2);
    let w = d * f;
    let mut store = ParamStore::new();
    let p = predictor_for(&mut store, PredictorKind::Nsd, MapKind::General, d, f, 31);

    let mut rng = hetsheaf::rng::seeded(9);
    let feats: Vec<Vec<f64>> =
        (0..4).map(|_| (0..w).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

    let run = |g: &HeteroGraph, rows: &[Vec<f64>]| {
        let mut t = Tape::new();
        let leaves = store.load(&mut t).unwrap();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = t.constant(4, w, flat).unwrap();
        let out = p.predict(&mut t, &leaves, g, x).unwrap();
        t.values(out).to_vec()
    };
    let feats2: Vec<Vec<f64>> = {
        let mut v = vec![Vec::new(); 4];
        for u in 0..4 {
            v[perm[u]] = feats[u].clone();
        }
        v
    };
    let out1 = run(&g1, &feats);
    let out2 = run(&g2, &feats2);

    let width = d * d;
    for (e, edge) in g1.edges().iter().enumerate() {
        let (pu, pv) = (perm[edge.u], perm[edge.v]);
        let (a, b, swapped) = if pu < pv { (pu, pv, false) } else { (pv, pu, true) };
        let e2 = g2.edges().iter().position(|x| x.u == a && x.v == b).unwrap();
        // Slot of the incidence owned by the image of edge.u.
        let (slot_u, slot_v) =
            if swapped { (2 * e2 + 1, 2 * e2) } else { (2 * e2, 2 * e2 + 1) };
        assert_eq!(
            out1[2 * e * width..(2 * e + 1) * width],
            out2[slot_u * width..(slot_u + 1) * width]
        );
        assert_eq!(
            out1[(2 * e + 1) * width..(2 * e + 2) * width],
            out2[slot_v * width..(slot_v + 1) * width]
        );
    }
}

#[test]
fn type_cardinality_mismatch_is_a_validation_error() {
    let g1 = HeteroGraph::canonicalize(
        vec![0, 0],
        1,
        &[(0, 1, 0)],
        1,
        CanonicalizeOptions::default(),
    )
    .unwrap();
    let mut store = ParamStore::new();
    let p = predictor_for(&mut store, PredictorKind::Ee, MapKind::Diagonal, 2, 2, 37);
    let mut t = Tape::new();
    let leaves = store.load(&mut t).unwrap();
    let mut rng = hetsheaf::rng::seeded(1);
    let x = random_stalks(&mut t, &mut rng, 2, 4);
    let err = p.predict(&mut t, &leaves, &g1, x).unwrap_err();
    assert!(matches!(err, hetsheaf::Error::Validation(_)), "{err}");
}

#[test]
fn gradients_reach_net_weights_through_assembled_laplacian() {
    use hetsheaf::laplacian::{assemble, laplacian_apply_blocks, CochainIndex};
    use hetsheaf::restriction::build_maps;
    use hetsheaf::tensor::{gradcheck, GradCheckConfig};

    let g = small_graph();
    let (d, f) = (2, 2);
    let idx = CochainIndex::new(&g, d);
    let mut store = ParamStore::new();
    let p = predictor_for(&mut store, PredictorKind::Ee, MapKind::General, d, f, 41);
    let mut rng = hetsheaf::rng::seeded(2);
    let svals: Vec<f64> = (0..g.n() * d * f).map(|_| rng.gen_range(-0.8..0.8)).collect();
    store.add("stalks", g.n() * d, f, svals).unwrap();

    let run = |t: &mut Tape, leaves: &[Tid]| -> hetsheaf::Result<Tid> {
        let stalks = *leaves.last().unwrap();
        let rows = t.reshape(stalks, g.n(), d * f)?;
        let params = p.predict(t, leaves, &g, rows)?;
        let maps = build_maps(t, MapKind::General, params, d)?;
        let (luu, luv) = assemble(t, &idx, maps)?;
        let y = laplacian_apply_blocks(t, &idx, luu, luv, stalks)?;
        let sq = t.mul(y, y)?;
        Ok(t.sum(sq))
    };
    let loss = |s: &ParamStore| -> hetsheaf::Result<f64> {
        let mut t = Tape::new();
        let leaves = s.load(&mut t)?;
        let l = run(&mut t, &leaves)?;
        Ok(t.scalar(l))
    };
    let analytic = |s: &ParamStore| -> hetsheaf::Result<Vec<Vec<f64>>> {
        let mut t = Tape::new();
        let leaves = s.load(&mut t)?;
        let l = run(&mut t, &leaves)?;
        t.backward(l)?;
        Ok(s.collect_grads(&t, &leaves))
    };
    let report = gradcheck(&store, loss, analytic, &GradCheckConfig::default()).unwrap();
    assert!(report.failures.is_empty(), "worst {:?} rel {}", report.worst, report.max_rel_err);
}
