use proptest::prelude::*;

use super::*;
use crate::geometry::{circle_cloud, BoundaryPointCloud};
use crate::grid_fem::NodalField;
use crate::residual::LossWeights;

#[test]
fn exact_disk_solution_examples() {
    assert_eq!(exact_disk_solution(0.25, 0.25), 0.0);
    assert!((exact_disk_solution(0.0, 0.25) - 0.015625).abs() < 1e-15);
    assert!((exact_disk_solution(0.125, 0.25) - 0.01171875).abs() < 1e-15);
    assert_eq!(exact_disk_solution(0.3, 0.25), 0.0);
}

#[test]
fn constant_field_renders_mid_gray() {
    let grid = BackgroundGrid::unit_square(2).unwrap();
    let pgm = pgm_string(&grid, &[0.7; 9]).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("3 3"));
    assert_eq!(lines.next(), Some("255"));
    let values: Vec<&str> = lines.flat_map(|l| l.split_whitespace()).collect();
    assert_eq!(values, vec!["128"; 9]);
}

#[test]
fn pgm_maps_extremes_to_black_and_white_with_top_row_first() {
    let grid = BackgroundGrid::unit_square(1).unwrap();
    let pgm = pgm_string(&grid, &[0.0, 1.0, 2.0, 4.0]).unwrap();
    let rows: Vec<&str> = pgm.lines().skip(3).collect();
    assert_eq!(rows, vec!["128 255", "0 64"]);
}

#[test]
fn vtk_header_declares_node_dimensions() {
    let grid = BackgroundGrid::unit_square(4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.vtk");
    let field = NodalField::from_fn(&grid, |p| p[0] + p[1]);
    write_nodal_vtk(&grid, &field, &["u"], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(text.contains("DATASET STRUCTURED_POINTS\nDIMENSIONS 5 5 1\n"));
    assert!(text.contains("POINT_DATA 25\nSCALARS u double 1\nLOOKUP_TABLE default\n"));
    let values: Vec<f64> = text.lines().skip(10).map(|l| l.parse().unwrap()).collect();
    assert_eq!(values, field.values());
    assert!(write_nodal_vtk(&grid, &field, &["u", "v"], &path).is_err());
}

#[test]
fn writers_report_the_failing_path() {
    let grid = BackgroundGrid::unit_square(2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = write_field_pgm(&grid, &[0.0; 9], blocker.join("sub/out.pgm")).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

#[test]
fn csv_rejects_ragged_rows() {
    assert!(csv_string(&["a", "b"], &[vec![1.0]]).is_err());
    assert!(parse_csv("a,b\n1,2,3\n").is_err());
    assert!(parse_csv("a,b\n1,x\n").is_err());
}

#[test]
fn default_configs_round_trip_through_json() {
    for exp in [
        Experiment::DiskConvergence,
        Experiment::PoissonShape,
        Experiment::NsChannel,
        Experiment::Parametric,
        Experiment::Occupancy,
        Experiment::Sdf,
    ] {
        let cfg = RunConfig::defaults_for(exp);
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}

#[test]
fn partial_config_fills_defaults() {
    let cfg: RunConfig = serde_json::from_str(r#"{"experiment": "ns_channel", "cells": 16}"#).unwrap();
    assert_eq!(cfg.cells, 16);
    assert_eq!(cfg.physics.reynolds, 40.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = RunConfig::disk_convergence();
    cfg.resolutions = vec![32, 16];
    assert!(cfg.validate().is_err());
    cfg.resolutions = vec![16];
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::ns_channel();
    cfg.physics.reynolds = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = RunConfig::parametric();
    cfg.training.held_out = vec![9];
    assert!(run_parametric(&cfg).is_err());
    let mut cfg = RunConfig::disk_convergence();
    cfg.shape = ShapeSource::Spline(Default::default());
    assert!(run_disk_convergence(&cfg).is_err());
}

#[test]
fn reynolds_number_sets_viscosity_from_the_chord() {
    let cfg = RunConfig::ns_channel();
    let cloud = cfg.shape.cloud().unwrap();
    assert!((cfg.problem(&cloud).viscosity - 0.25 / 40.0).abs() < 1e-15);
}

#[test]
fn masked_l2_of_a_constant_is_the_root_area() {
    let grid = BackgroundGrid::unit_square(8).unwrap();
    let occ = OccupancyField::empty(&grid);
    let e = masked_l2_error(&grid, &occ, &vec![0.0; 81], |_| 3.0).unwrap();
    assert!((e - 3.0).abs() < 1e-12);
    let linear = NodalField::from_fn(&grid, |p| p[0]);
    let e = masked_l2_error(&grid, &occ, linear.values(), |p| p[0]).unwrap();
    assert!(e < 1e-14);
}

#[test]
fn coarse_disk_convergence_decreases() {
    let cfg = RunConfig { resolutions: vec![8, 16, 32], ..RunConfig::disk_convergence() };
    let rep = run_disk_convergence(&cfg).unwrap();
    assert!(rep.errors_decrease, "{:?}", rep.rows);
    assert!(rep.slope > 0.0, "slope {}", rep.slope);
    assert_eq!(rep.exact_center, 0.015625);
}

#[test]
fn heat_source_solution_obeys_maximum_principle() {
    let rep = run_poisson_shape(&RunConfig::poisson_shape()).unwrap();
    assert!(rep.maximum_principle, "range [{}, {}]", rep.min_active, rep.max_active);
    assert!(rep.boundary_deviation <= 0.02, "boundary deviation {}", rep.boundary_deviation);
    assert_eq!(rep.wall_max_abs, 0.0);
    assert!(rep.radial_max_increase <= 1e-6, "radial increase {}", rep.radial_max_increase);
}

fn poiseuille(grid: &BackgroundGrid) -> NodalField {
    let mut u = NodalField::zeros(grid, 3);
    for i in 0..grid.num_nodes() {
        let y = grid.node_coords(i)[1];
        u.values_mut()[3 * i] = 4.0 * y * (1.0 - y);
        u.values_mut()[3 * i + 2] = 1.0 - 0.1 * grid.node_coords(i)[0];
    }
    u
}

#[test]
fn channel_diagnostics_of_plane_poiseuille_flow() {
    let grid = BackgroundGrid::new([16, 8], [0.0, 0.0], [2.0, 1.0]).unwrap();
    let u = poiseuille(&grid);
    let cloud = BoundaryPointCloud::new(2, vec![1.0, 0.5], vec![-1.0, 0.0], vec![0.1]).unwrap();
    let rep = channel_diagnostics(&grid, &OccupancyField::empty(&grid), &cloud, &u, 1.0).unwrap();
    assert!(rep.divergence < 1e-14);
    assert!(rep.weak_divergence < 1e-14);
    assert!(rep.symmetry_defect < 1e-14);
    assert!(rep.inlet_deviation < 1e-14);
    assert!((rep.slip_ratio - 1.0).abs() < 1e-12);
    assert_eq!(rep.stagnation_x, 0.0);
    assert_eq!(rep.front_x, 1.0);
    assert!(!rep.stagnation_on_front);
}

#[test]
fn channel_diagnostics_detect_asymmetry_and_divergence() {
    let grid = BackgroundGrid::new([16, 8], [0.0, 0.0], [2.0, 1.0]).unwrap();
    let mut u = poiseuille(&grid);
    for i in 0..grid.num_nodes() {
        let [x, y] = grid.node_coords(i);
        u.values_mut()[3 * i] += 0.1 * y * x;
    }
    let cloud = circle_cloud([1.0, 0.5], 0.1, 32).unwrap();
    let rep = channel_diagnostics(&grid, &OccupancyField::empty(&grid), &cloud, &u, 1.0).unwrap();
    assert!(rep.symmetry_defect > 0.01);
    // ∂ₓuₓ = 0.1 y while the velocity gradient is dominated by 4 − 8y.
    assert!(rep.divergence > 0.01 && rep.divergence < 0.1, "{}", rep.divergence);
    assert!(channel_diagnostics(&grid, &OccupancyField::empty(&grid), &cloud, &NodalField::zeros(&grid, 1), 1.0).is_err());
}

#[test]
fn runs_write_artifacts_and_repeat_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let cfg = RunConfig { cells: 16, output_dir: Some(out.clone()), ..RunConfig::poisson_shape() };
        run_poisson_shape(&cfg).unwrap();
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["solution.vtk", "solution.pgm", "occupancy.pgm", "report.json"] {
        let fa = std::fs::read(a.join(file)).unwrap();
        assert_eq!(fa, std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let cfg = RunConfig::load(a.join("config.json")).unwrap();
    assert_eq!(cfg.cells, 16);
    let (header, rows) = read_csv(a.join("trace.csv")).unwrap();
    assert_eq!(header[0], "epoch");
    assert_eq!(rows.len(), 1);
}

#[test]
fn parametric_run_writes_one_trace_row_per_epoch_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { cells: 8, output_dir: Some(dir.path().join("a")), ..RunConfig::parametric() };
    cfg.training.hidden = vec![8];
    cfg.training.epochs = 20;
    cfg.training.overfit_epochs = 0;
    let first = run_parametric(&cfg).unwrap();
    cfg.output_dir = Some(dir.path().join("b"));
    let second = run_parametric(&cfg).unwrap();
    assert_eq!(first, second);
    let (_, rows) = read_csv(dir.path().join("a/trace.csv")).unwrap();
    assert_eq!(rows.len(), 21);
    let model = dir.path().join("a/model.txt");
    let q = query_model(&RunConfig { output_dir: None, ..cfg.clone() }, &model, [0.5, 0.5, 0.15]).unwrap();
    assert!(q.query.distance.is_finite());
    let coarse = RunConfig { cells: 4, ..cfg };
    assert!(query_model(&coarse, &model, [0.5, 0.5, 0.15]).is_err());
}

#[test]
fn weights_default_per_experiment() {
    assert_eq!(RunConfig::disk_convergence().weights, LossWeights::mesh_scaled());
    assert_eq!(RunConfig::ns_channel().weights.pde_inverse_h_power, 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trips_exactly(rows in proptest::collection::vec(proptest::collection::vec(-1e300f64..1e300, 3), 0..8)) {
        let text = csv_string(&["a", "b", "c"], &rows).unwrap();
        let (header, back) = parse_csv(&text).unwrap();
        prop_assert_eq!(header, vec!["a", "b", "c"]);
        prop_assert_eq!(back, rows);
    }

    #[test]
    fn configs_round_trip_with_arbitrary_numbers(cells in 1usize..512, re in 1e-3f64..1e4, g in -10.0f64..10.0, seed in any::<u64>()) {
        let mut cfg = RunConfig::ns_channel();
        cfg.cells = cells;
        cfg.physics.reynolds = re;
        cfg.physics.g = g;
        cfg.seed = seed;
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
