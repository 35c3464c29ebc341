use super::*;
use crate::fem::{solve_linear_transient, solve_nonlinear_transient, LoadField, Material};
use crate::mesh::{generate_regular_grid, label_nodes, Region};

fn plate(n_frames: usize) -> (Mesh, SimulationSeries, SimulationSeries) {
    let grid = generate_regular_grid(4, 4, 1.0, 1.0).unwrap();
    let mesh = label_nodes(
        &grid,
        &Region::top_edge(&grid, 1.0),
        &Region::left_edge(&grid),
    )
    .unwrap();
    let mat = Material {
        rho_cp: 200.0,
        k0: 2.0,
        ..Material::default()
    };
    let load = LoadField::on_group(&mesh, NodeGroup::HeatSource, 15000.0);
    let lin = solve_linear_transient(&mesh, &mat.with_beta(0.0), &load, n_frames, 0.05).unwrap();
    let nl = solve_nonlinear_transient(&mesh, &mat, &load, n_frames, 0.05).unwrap();
    (mesh, lin, nl)
}

fn small_hp(seed: u64) -> Hyperparams {
    Hyperparams {
        hidden_dim: 8,
        message_passing_steps: 2,
        epochs: 3,
        seed,
        ..Hyperparams::default()
    }
}

fn split(fraction: f64) -> FrameSplit {
    FrameSplit { fraction, seed: 5 }
}

/// Untrained-looking model whose denormalized output is exactly `value`.
fn constant_output(mut trained: TrainedModel, value: f64) -> TrainedModel {
    trained.model.decoder.zero();
    let last = trained.model.decoder.layers.last_mut().unwrap();
    last.bias.data[0] = trained.scalers.target.apply_value(0, value);
    trained
}

#[test]
fn gap_target_examples() {
    let (_, lin, nl) = plate(4);
    assert!(make_gap_targets(&lin, &lin)
        .unwrap()
        .iter()
        .flatten()
        .all(|&v| v == 0.0));
    let gaps = make_gap_targets(&lin, &nl).unwrap();
    assert_eq!(gaps.len(), 5);
    assert!(gaps[0].iter().all(|&v| v == 0.0));

    let one = |t: f64| SimulationSeries {
        frames: vec![vec![t]],
        ..lin.clone()
    };
    assert_eq!(
        make_gap_targets(&one(300.0), &one(303.0)).unwrap(),
        vec![vec![3.0]]
    );

    let mut short = nl.clone();
    short.frames.pop();
    assert!(matches!(
        make_gap_targets(&lin, &short),
        Err(Error::Data(_))
    ));
    let other_dt = SimulationSeries {
        dt: 0.1,
        ..nl.clone()
    };
    assert!(matches!(
        make_gap_targets(&lin, &other_dt),
        Err(Error::Data(_))
    ));
}

#[test]
fn increment_target_examples() {
    let (_, lin, _) = plate(3);
    let s = SimulationSeries {
        frames: vec![vec![298.0], vec![299.0]],
        dt: 2.5e-3,
        ..lin.clone()
    };
    let inc = make_increment_targets(&s).unwrap();
    assert!((inc[0][0] - 400.0).abs() < 1e-9);

    let flat = SimulationSeries {
        frames: vec![vec![298.0; 3]; 6],
        ..lin.clone()
    };
    let inc = make_increment_targets(&flat).unwrap();
    assert_eq!(inc.len(), 5);
    assert!(inc.iter().flatten().all(|&v| v == 0.0));

    let single = SimulationSeries {
        frames: vec![vec![298.0]],
        ..lin
    };
    assert!(matches!(
        make_increment_targets(&single),
        Err(Error::Data(_))
    ));
}

#[test]
fn zero_output_model_returns_linear_frames() {
    let (mesh, lin, nl) = plate(6);
    let design = PairedDesign {
        mesh: &mesh,
        linear: &lin,
        nonlinear: &nl,
    };
    let (trained, _) = train_hybrid(&[design], &split(0.5), &small_hp(1), 0.0).unwrap();
    let zero = constant_output(trained, 0.0);
    for f in &lin.frames {
        assert_eq!(predict_corrected(&zero, &mesh, f).unwrap(), *f);
    }
}

#[test]
fn zero_output_rollout_is_constant_and_steps_follow_update_rule() {
    let (mesh, _, nl) = plate(6);
    let (trained, _) = train_mgn(&[(&mesh, &nl)], &split(0.5), &small_hp(2), 0.0).unwrap();
    let initial = vec![AMBIENT_TEMPERATURE; mesh.n_nodes()];

    let zero = constant_output(trained.clone(), 0.0);
    let r = rollout_mgn(&zero, &mesh, &initial, 4, 0.05).unwrap();
    assert_eq!(r.n_frames(), 5);
    assert!(r.frames.iter().all(|f| *f == initial));

    let start = nl.frames[3].clone();
    let y = trained.infer(&mesh, &[start.as_slice()]).unwrap().remove(0);
    let r = rollout_mgn(&trained, &mesh, &start, 1, 0.05).unwrap();
    for (i, g) in mesh.groups.iter().enumerate() {
        let want = if *g == NodeGroup::DirichletBC {
            AMBIENT_TEMPERATURE
        } else {
            start[i] + 0.05 * y[i]
        };
        assert_eq!(r.frames[1][i], want);
    }
    assert!(rollout_mgn(&trained, &mesh, &start, 0, 0.05).is_err());
}

#[test]
fn exploding_rollout_reports_step() {
    let (mesh, _, nl) = plate(4);
    let (trained, _) = train_mgn(&[(&mesh, &nl)], &split(1.0), &small_hp(3), 0.0).unwrap();
    let huge = constant_output(trained, 1e308);
    let err = rollout_mgn(&huge, &mesh, &nl.frames[0], 5, 10.0).unwrap_err();
    assert!(matches!(err, Error::Rollout { step: 1 }), "{err}");
}

#[test]
fn hybrid_correction_is_stateless() {
    let (mesh, lin, nl) = plate(12);
    let design = PairedDesign {
        mesh: &mesh,
        linear: &lin,
        nonlinear: &nl,
    };
    let (trained, _) = train_hybrid(&[design], &split(0.5), &small_hp(4), 0.0).unwrap();
    let frames: Vec<&[f64]> = lin.frames.iter().map(Vec::as_slice).collect();
    let in_order = predict_corrected_frames(&trained, &mesh, &frames).unwrap();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let shuffled: Vec<&[f64]> = order.iter().map(|&i| frames[i]).collect();
    let out = predict_corrected_frames(&trained, &mesh, &shuffled).unwrap();
    for (k, &i) in order.iter().enumerate() {
        assert_eq!(out[k], in_order[i]);
        assert_eq!(
            predict_corrected(&trained, &mesh, frames[i]).unwrap(),
            in_order[i]
        );
    }
}

#[test]
fn zero_gap_data_trains_to_identity() {
    let (mesh, lin, _) = plate(6);
    let design = PairedDesign {
        mesh: &mesh,
        linear: &lin,
        nonlinear: &lin,
    };
    assert!(make_gap_targets(&lin, &lin)
        .unwrap()
        .iter()
        .flatten()
        .all(|&v| v == 0.0));
    let (trained, _) = train_hybrid(&[design], &split(1.0), &small_hp(5), 0.0).unwrap();
    // a degenerate target range denormalizes every output to zero
    let corrected = correct_series(&trained, &mesh, &lin).unwrap();
    assert_eq!(corrected, lin);
}

#[test]
fn training_is_deterministic_with_and_without_noise() {
    let (mesh, lin, nl) = plate(8);
    let design = PairedDesign {
        mesh: &mesh,
        linear: &lin,
        nonlinear: &nl,
    };
    let run = |noise| train_hybrid(&[design], &split(0.5), &small_hp(6), noise).unwrap();
    let (a, ra) = run(0.0);
    let (b, rb) = run(0.0);
    assert_eq!(a, b);
    assert!(ra.same_outcome(&rb));
    let (c, rc) = run(10.0);
    let (d, rd) = run(10.0);
    assert_eq!(c, d);
    assert!(rc.same_outcome(&rd));
    assert_ne!(a.model, c.model);

    let (m1, r1) = train_mgn(&[(&mesh, &nl)], &split(0.5), &small_hp(6), 10.0).unwrap();
    let (m2, r2) = train_mgn(&[(&mesh, &nl)], &split(0.5), &small_hp(6), 10.0).unwrap();
    assert_eq!(m1, m2);
    assert!(r1.same_outcome(&r2));
    assert!(r1.epochs.iter().all(|e| e.loss.is_finite()));
    assert_eq!(
        r1.epochs.iter().map(|e| e.epoch).collect::<Vec<_>>(),
        vec![0, 1, 2]
    );
}

#[test]
fn training_reduces_loss() {
    let (mesh, lin, nl) = plate(20);
    let design = PairedDesign {
        mesh: &mesh,
        linear: &lin,
        nonlinear: &nl,
    };
    let hp = Hyperparams {
        epochs: 40,
        ..small_hp(7)
    };
    let (_, report) = train_hybrid(&[design], &split(1.0), &hp, 0.0).unwrap();
    let first = report.epochs[0].loss;
    assert!(
        report.final_loss().unwrap() < 0.2 * first,
        "{first} -> {:?}",
        report.final_loss()
    );
}

#[test]
fn ten_percent_of_a_long_series() {
    let mesh = plate(1).0;
    let n = mesh.n_nodes();
    let series = SimulationSeries {
        mesh_id: "m".into(),
        frames: (0..4001)
            .map(|k| vec![298.0 + k as f64 * 1e-3; n])
            .collect(),
        dt: 2.5e-3,
        t_init: 298.0,
        t_dirichlet: 298.0,
        material: Material::default(),
    };
    let design = PairedDesign {
        mesh: &mesh,
        linear: &series,
        nonlinear: &series,
    };
    let hp = Hyperparams {
        epochs: 0,
        ..small_hp(0)
    };
    let (_, report) = train_hybrid(&[design], &split(0.1), &hp, 0.0).unwrap();
    assert_eq!(report.n_train_samples, 400);
    assert!(matches!(
        train_hybrid(&[], &split(0.1), &hp, 0.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn checkpoint_keeps_kind_and_scalers() {
    let (mesh, _, nl) = plate(4);
    let (trained, _) = train_mgn(&[(&mesh, &nl)], &split(1.0), &small_hp(8), 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    trained.save(&path, BTreeMap::new()).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back, trained);
    assert!(matches!(
        predict_corrected(&back, &mesh, &nl.frames[0]),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        TrainedModel::load(&dir.path().join("absent.json")),
        Err(Error::MissingArtifact(_))
    ));
}
