use super::*;
use crate::mesh::{
    delaunay_triangulate, generate_regular_grid, mesh_to_edges, EdgeList, Mesh, NodeGroup,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_graph(seed: u64, n: usize) -> (Mesh, GraphSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
        .collect();
    let triangles = delaunay_triangulate(&pts).unwrap();
    let groups: Vec<NodeGroup> = (0..n)
        .map(|i| match i % 3 {
            0 => NodeGroup::Interior,
            1 => NodeGroup::HeatSource,
            _ => NodeGroup::DirichletBC,
        })
        .collect();
    let mut mesh = Mesh::new(pts, triangles).unwrap();
    mesh.groups = groups;
    let frame: Vec<f64> = (0..n).map(|_| rng.random_range(298.0..400.0)).collect();
    let scaler = MinMaxScaler {
        min: vec![298.0],
        max: vec![400.0],
    };
    let edges = mesh_to_edges(&mesh);
    let sample = GraphSample::new(
        build_node_features(&frame, &mesh.groups, &scaler).unwrap(),
        build_edge_features(&mesh, &edges),
        EdgeIndex::from_edge_list(&edges),
        Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
    )
    .unwrap();
    (mesh, sample)
}

#[test]
fn node_feature_layout() {
    let scaler = MinMaxScaler {
        min: vec![298.0],
        max: vec![398.0],
    };
    let groups = [
        NodeGroup::Interior,
        NodeGroup::HeatSource,
        NodeGroup::DirichletBC,
    ];
    let f = build_node_features(&[298.0, 298.0, 298.0], &groups, &scaler).unwrap();
    assert_eq!(f.cols, NODE_FEATURES);
    assert_eq!(f.row(0), &[0.0, 1.0, 0.0, 0.0]);
    assert_eq!(f.row(1), &[0.0, 0.0, 1.0, 0.0]);
    assert_eq!(f.row(2), &[0.0, 0.0, 0.0, 1.0]);
    assert!(matches!(
        build_node_features_from_labels(&[300.0], &[5], &scaler),
        Err(Error::Data(_))
    ));
    assert!(build_node_features(&[300.0], &groups, &scaler).is_err());
}

#[test]
fn edge_feature_examples() {
    let m = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
    let edges = EdgeList {
        edges: vec![[0, 1], [1, 0]],
    };
    let f = build_edge_features(&m, &edges);
    assert_eq!(f.row(0), &[-1.0, 0.0, 1.0]);
    assert_eq!(f.row(1), &[1.0, 0.0, 1.0]);
}

#[test]
fn edge_features_paired_and_translation_invariant() {
    let m = generate_regular_grid(4, 3, 1.0, 0.5).unwrap();
    let edges = mesh_to_edges(&m);
    let f = build_edge_features(&m, &edges);
    let t = build_edge_features(&m.translated([0.25, -0.5]), &edges);
    for (k, &[i, j]) in edges.edges.iter().enumerate() {
        let r = f.row(k);
        assert!((r[2] - r[0].hypot(r[1])).abs() < 1e-12);
        let back = edges.edges.iter().position(|e| *e == [j, i]).unwrap();
        assert_eq!(f.row(back)[0], -r[0]);
        assert_eq!(f.row(back)[1], -r[1]);
        for c in 0..3 {
            assert!((t.get(k, c) - r[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn init_is_seeded_and_shaped() {
    let a = init_model(7, 16, DEFAULT_MESSAGE_PASSING_STEPS, 4, 3, 1).unwrap();
    let b = init_model(7, 16, DEFAULT_MESSAGE_PASSING_STEPS, 4, 3, 1).unwrap();
    let c = init_model(8, 16, DEFAULT_MESSAGE_PASSING_STEPS, 4, 3, 1).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.processor.len(), 10);
    assert_eq!(a.decoder.out_dim(), 1);
    assert!(a.decoder.output_norm.is_none());
    assert_eq!(a.params().len(), a.param_names().len());
    assert!(init_model(0, 16, 0, 4, 3, 1).is_err());
}

#[test]
fn zero_decoder_gives_zero_output() {
    let (_, s) = random_graph(1, 12);
    let mut m = init_model(3, 8, 2, 4, 3, 1).unwrap();
    m.decoder.zero();
    let y = m.forward_sample(&s).unwrap();
    assert!(y.data.iter().all(|&v| v == 0.0));
}

#[test]
fn zeroed_processor_is_identity() {
    let (_, s) = random_graph(2, 12);
    let mut m = init_model(4, 8, 3, 4, 3, 1).unwrap();
    for l in &mut m.processor {
        l.edge.zero();
        l.node.zero();
    }
    let batch = GraphBatch::from_samples(&[&s]).unwrap();
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape, false);
    let (hv0, he0) = bound.encode(&mut tape, &batch).unwrap();
    let (hv, he) = bound.process(&mut tape, &batch, hv0, he0).unwrap();
    assert_eq!(tape.value(hv).data, tape.value(hv0).data);
    assert_eq!(tape.value(he).data, tape.value(he0).data);
}

#[test]
fn mean_aggregation_examples() {
    let msgs = Tensor2D::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let agg = mean_aggregate(&msgs, &[0, 0], 2).unwrap();
    assert_eq!(agg.row(0), &[2.0, 3.0]);
    assert_eq!(agg.row(1), &[0.0, 0.0]);
    // a duplicated neighbour message does not change the mean
    let one = Tensor2D::from_rows(&[vec![0.3, -1.5]]).unwrap();
    let two = Tensor2D::from_rows(&[vec![0.3, -1.5], vec![0.3, -1.5]]).unwrap();
    assert_eq!(
        mean_aggregate(&one, &[0], 1).unwrap(),
        mean_aggregate(&two, &[0, 0], 1).unwrap()
    );
}

#[test]
fn batching_matches_single_graphs_bitwise() {
    let (_, a) = random_graph(5, 9);
    let (_, b) = random_graph(6, 14);
    let m = init_model(1, 8, 2, 4, 3, 1).unwrap();
    let batch = GraphBatch::from_samples(&[&a, &b, &a]).unwrap();
    let y = m.forward(&batch).unwrap();
    assert_eq!(
        batch.split(&y, 0),
        m.forward_sample(&a).unwrap().data.as_slice()
    );
    assert_eq!(
        batch.split(&y, 1),
        m.forward_sample(&b).unwrap().data.as_slice()
    );
    assert_eq!(batch.split(&y, 2), batch.split(&y, 0));
    assert_eq!(batch.targets.as_ref().unwrap().rows, 9 + 14 + 9);
}

#[test]
fn checkpoint_round_trip() {
    let m = init_model(11, 8, 2, 4, 3, 1).unwrap();
    let scalers = BTreeMap::from([(
        "target".to_string(),
        MinMaxScaler {
            min: vec![0.0],
            max: vec![2.0],
        },
    )]);
    let c = m.to_checkpoint(scalers, BTreeMap::new());
    let back =
        GnnModel::from_checkpoint(&Checkpoint::from_json(&c.to_json().unwrap()).unwrap()).unwrap();
    assert_eq!(back, m);
    let mut bad = c.clone();
    bad.params.swap(0, 1);
    assert!(GnnModel::from_checkpoint(&bad).is_err());
}

#[test]
fn forward_gradients_match_finite_differences() {
    let (_, s) = random_graph(9, 10);
    let model = init_model(2, 6, 2, 4, 3, 1).unwrap();
    let batch = GraphBatch::from_samples(&[&s]).unwrap();
    let loss_of = |m: &GnnModel| {
        let mut t = Tape::new();
        let bound = m.bind(&mut t, true);
        let y = bound.forward(&mut t, &batch).unwrap();
        let target = t.constant(batch.targets.clone().unwrap());
        let l = t.mse(y, target).unwrap();
        (t, bound, l)
    };
    let (mut t, bound, l) = loss_of(&model);
    t.backward(l).unwrap();
    let vars = bound.vars();
    let h = 1e-5;
    let mut checked = 0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = t.grad(*var).map(<[f64]>::to_vec).unwrap_or_default();
        for idx in 0..model.params()[k].len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[k].data[idx] += delta;
                let (t, _, l) = loss_of(&m);
                t.value(l).data[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.get(idx).copied().unwrap_or(0.0);
            let tol = 1e-6f64.max(1e-4 * a.abs().max(numeric.abs()));
            assert!(
                (a - numeric).abs() <= tol,
                "param {k}[{idx}]: {a} vs {numeric}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, model.n_parameters());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn permutation_equivariance(seed in 0u64..1000, n in 5usize..15) {
        let (_, s) = random_graph(seed, n);
        let model = init_model(seed, 8, 3, 4, 3, 1).unwrap();
        let y = model.forward_sample(&s).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        let mut inv = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let rows: Vec<Vec<f64>> = perm.iter().map(|&p| s.node_features.row(p).to_vec()).collect();
        let pairs: Vec<[usize; 2]> = s.edges.receivers.iter().zip(s.edges.senders.iter())
            .map(|(&i, &j)| [inv[i], inv[j]]).collect();
        let permuted = GraphSample::new(
            Tensor2D::from_rows(&rows).unwrap(),
            s.edge_features.clone(),
            EdgeIndex::from_pairs(&pairs),
            None,
        ).unwrap();
        let yp = model.forward_sample(&permuted).unwrap();
        for k in 0..n {
            prop_assert!((yp.data[k] - y.data[perm[k]]).abs() <= 1e-6);
        }
    }

    #[test]
    fn translation_invariance(seed in 0u64..1000, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let (mesh, s) = random_graph(seed, 10);
        let moved = mesh.translated([dx, dy]);
        let edges = mesh_to_edges(&moved);
        let t = GraphSample::new(s.node_features.clone(), build_edge_features(&moved, &edges), s.edges.clone(), None).unwrap();
        let model = init_model(seed, 8, 3, 4, 3, 1).unwrap();
        let (a, b) = (model.forward_sample(&s).unwrap(), model.forward_sample(&t).unwrap());
        for (u, v) in a.data.iter().zip(&b.data) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }
}
