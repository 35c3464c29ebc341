use super::*;
use crate::error::Error;
use crate::mesh::NodeGroup;

fn tiny(name: &str, mesh: MeshSpec, fraction: f64) -> DatasetConfig {
    DatasetConfig {
        mesh,
        n_steps: 6,
        dt: 0.5,
        load: LoadSpec::BoundaryStrip {
            fraction,
            power: A_SERIES_POWER,
        },
        name: name.into(),
        ..DatasetConfig::preset("A2", Scale::Desk).unwrap()
    }
}

#[test]
fn presets_follow_the_dataset_table() {
    let strip = |name: &str| match DatasetConfig::preset(name, Scale::Desk).unwrap().load {
        LoadSpec::BoundaryStrip { fraction, power } => (fraction, power),
        other => panic!("{other:?}"),
    };
    for (name, fraction) in [
        ("A1", 0.5),
        ("A2", 1.0),
        ("A3", 0.5),
        ("A4", 1.0),
        ("A5", 0.5),
        ("A6", 1.0),
        ("A7", 0.5),
        ("A8", 1.0),
    ] {
        assert_eq!(strip(name), (fraction, 15000.0), "{name}");
    }
    assert_eq!(strip("B2"), (1.0, 6000.0));
    let mesh = |name: &str| DatasetConfig::preset(name, Scale::Full).unwrap().mesh;
    assert_eq!(mesh("A1"), MeshSpec::Regular { nx: 30, ny: 30 });
    assert_eq!(mesh("A3"), MeshSpec::Irregular { h: 0.05 });
    assert_eq!(mesh("A6"), MeshSpec::Irregular { h: 0.035 });
    assert!(matches!(mesh("A8"), MeshSpec::Submesh { fraction, .. } if fraction == 0.4));
    assert!(matches!(mesh("B1"), MeshSpec::Regular { .. }));

    let b1 = DatasetConfig::preset("B1", Scale::Full).unwrap();
    assert_eq!((b1.n_steps, b1.dt), (200, 5e-2));
    assert!(
        matches!(b1.load, LoadSpec::Gaussian { p_max, n_train: 40, n_eval: 10, .. } if p_max == 60.0)
    );
    let b2 = DatasetConfig::preset("B2", Scale::Full).unwrap();
    let eval: Vec<_> = b2
        .shapes
        .iter()
        .filter(|s| s.role == Role::Eval)
        .map(|s| s.shape.clone())
        .collect();
    assert_eq!(eval[3], ShapeSpec::Lshape { a: 1.0, b: 0.4 });
    assert_eq!(b2.shapes.len(), 8);

    for scale in [Scale::Desk, Scale::Full] {
        for name in PRESET_NAMES {
            let c = DatasetConfig::preset(name, scale).unwrap();
            c.validate().unwrap();
            assert!(
                (c.n_steps as f64 * c.dt - 10.0).abs() < 1e-9,
                "{name} {scale}"
            );
        }
    }
    assert_eq!(
        DatasetConfig::preset("A2", Scale::Full).unwrap().n_steps + 1,
        4001
    );
    assert!(matches!(
        DatasetConfig::preset("C9", Scale::Desk),
        Err(Error::Config(_))
    ));
}

#[test]
fn bundle_pairs_series_and_is_deterministic() {
    let cfg = tiny("pair", MeshSpec::Regular { nx: 5, ny: 4 }, 1.0);
    let a = build_dataset(&cfg).unwrap();
    let b = build_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let d = a.design("main").unwrap();
    assert_eq!(d.linear.n_frames(), 7);
    assert_eq!(d.linear.dt, d.nonlinear.dt);
    assert_eq!(d.linear.mesh_id, d.nonlinear.mesh_id);
    assert_eq!(d.linear.material, cfg.material.with_beta(0.0));
    assert_eq!(d.nonlinear.material, cfg.material);
    assert_eq!(d.linear.frames[0], d.nonlinear.frames[0]);
    for i in d.mesh.nodes_in_group(NodeGroup::HeatSource) {
        assert!(d.nonlinear.final_frame()[i] > d.linear.final_frame()[i]);
    }
    assert_eq!(d.mesh.nodes_in_group(NodeGroup::DirichletBC).len(), 4);
}

#[test]
fn save_load_round_trip_and_integrity() {
    let cfg = tiny("persist", MeshSpec::Irregular { h: 0.3 }, 0.5);
    let bundle = build_dataset(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap(), bundle);

    let manifest_path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).unwrap();
    let tampered = text.replace(&bundle.config_hash, &"0".repeat(64));
    std::fs::write(&manifest_path, tampered).unwrap();
    assert!(matches!(
        load_bundle(dir.path()),
        Err(Error::Integrity { .. })
    ));
    std::fs::write(&manifest_path, &text).unwrap();

    let series = dir.path().join("design_main/nonlinear.bin");
    let mut bytes = std::fs::read(&series).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&series, &bytes).unwrap();
    assert!(matches!(
        load_bundle(dir.path()),
        Err(Error::Integrity { .. })
    ));

    std::fs::remove_file(&series).unwrap();
    match load_bundle(dir.path()) {
        Err(Error::MissingArtifact(p)) => assert!(p.ends_with("design_main/nonlinear.bin")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        load_bundle(&dir.path().join("nowhere")),
        Err(Error::MissingArtifact(_))
    ));
}

#[test]
fn submesh_restricts_parent_series() {
    let cfg = tiny(
        "sub",
        MeshSpec::Submesh {
            parent: Box::new(MeshSpec::Irregular { h: 0.2 }),
            fraction: 0.4,
        },
        0.5,
    );
    let bundle = build_dataset(&cfg).unwrap();
    let parent = bundle.design("parent").unwrap();
    let sub = bundle.design("sub").unwrap();
    assert_eq!((parent.role, sub.role), (Role::Eval, Role::Train));
    let kept = sub.parent_nodes.as_ref().unwrap();
    assert_eq!(sub.mesh.n_nodes(), kept.len());
    assert!(kept.len() < parent.mesh.n_nodes());
    for (k, &p) in kept.iter().enumerate() {
        assert_eq!(sub.mesh.nodes[k], parent.mesh.nodes[p]);
        assert_eq!(sub.mesh.groups[k], parent.mesh.groups[p]);
        for f in 0..parent.nonlinear.n_frames() {
            assert_eq!(sub.nonlinear.frames[f][k], parent.nonlinear.frames[f][p]);
            assert_eq!(sub.linear.frames[f][k], parent.linear.frames[f][p]);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap(), bundle);
}

#[test]
fn gaussian_designs_have_separated_centers() {
    let cfg = DatasetConfig {
        n_steps: 3,
        ..DatasetConfig::preset("B1", Scale::Desk).unwrap()
    };
    let bundle = build_dataset(&cfg).unwrap();
    assert_eq!(bundle.with_role(Role::Train).len(), 10);
    assert_eq!(bundle.with_role(Role::Eval).len(), 3);
    let centers: Vec<[f64; 2]> = bundle
        .designs
        .iter()
        .map(|d| {
            let c = d.mesh.nodes_in_group(NodeGroup::HeatSource);
            assert_eq!(c.len(), 1);
            d.mesh.nodes[c[0]]
        })
        .collect();
    for i in 0..centers.len() {
        let [x, y] = centers[i];
        assert!(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0);
        for j in 0..i {
            let d = (x - centers[j][0]).hypot(y - centers[j][1]);
            assert!(d >= 0.1 - 1e-12);
        }
    }
    let too_many = crate::mesh::generate_regular_grid(4, 4, 1.0, 1.0).unwrap();
    assert!(sample_gaussian_centers(&too_many, 5, 0.5, 0).is_err());
}

#[test]
fn lshape_designs_cover_all_shapes() {
    let cfg = DatasetConfig {
        n_steps: 2,
        ..DatasetConfig::preset("B2", Scale::Desk).unwrap()
    };
    let bundle = build_dataset(&cfg).unwrap();
    let ids: Vec<&str> = bundle.designs.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "a0.40_b0.40",
            "a0.60_b0.60",
            "a1.00_b1.00",
            "a1.20_b1.20",
            "a0.80_b0.80",
            "a0.50_b0.50",
            "a0.40_b1.20",
            "a1.00_b0.40"
        ]
    );
    let d = bundle.design("a1.00_b0.40").unwrap();
    assert_eq!(d.mesh.domain_params, Some([1.0, 0.4]));
    assert_eq!(d.role, Role::Eval);
    assert!(!d.mesh.nodes_in_group(NodeGroup::HeatSource).is_empty());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = tiny("bad", MeshSpec::Regular { nx: 4, ny: 4 }, 0.5);
    c.shapes[0].shape = ShapeSpec::Lshape { a: 0.5, b: 0.5 };
    assert!(matches!(build_dataset(&c), Err(Error::Config(_))));
    let c = DatasetConfig {
        name: "has space".into(),
        ..tiny("x", MeshSpec::Regular { nx: 4, ny: 4 }, 0.5)
    };
    assert!(c.validate().is_err());
}
