use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::circle_cloud;
use crate::grid_fem::ElementQuadrature;
use crate::occupancy::occupancy_grid;

fn disk(n: usize) -> (BackgroundGrid, OccupancyField, BoundaryPointCloud) {
    let grid = BackgroundGrid::unit_square(n).unwrap();
    let cloud = circle_cloud([0.5, 0.5], 0.25, 400).unwrap();
    let occ = occupancy_grid(&cloud, &grid).unwrap().complement();
    (grid, occ, cloud)
}

/// Classical masked FEM: stiffness over unmasked Gauss points, Dirichlet
/// values on walls and object nodes, dense solve for the rest.
fn masked_fem_oracle(grid: &BackgroundGrid, occ: &OccupancyField, prob: &PdeProblem) -> NodalField {
    let n = grid.num_nodes();
    let quad = ElementQuadrature::new(grid, 2).unwrap();
    let mask = occ.gauss_mask(grid, &quad);
    let mut k = DMatrix::<f64>::zeros(n, n);
    let mut f = DVector::<f64>::zeros(n);
    for e in 0..grid.num_elements() {
        let nodes = grid.element_nodes(e);
        for q in 0..quad.len() {
            if !mask[e * quad.len() + q] {
                continue;
            }
            let gp = quad.point(grid, e, q);
            for a in 0..4 {
                f[nodes[a]] += gp.jxw * gp.values[a] * prob.forcing;
                for b in 0..4 {
                    let g = gp.gradients[a][0] * gp.gradients[b][0] + gp.gradients[a][1] * gp.gradients[b][1];
                    k[(nodes[a], nodes[b])] += gp.jxw * g;
                }
            }
        }
    }
    let mut fixed = vec![None; n];
    for (node, slot) in fixed.iter_mut().enumerate() {
        if let Some(v) = prob.walls.prescribed(grid, node, 0) {
            *slot = Some(v);
        } else if occ.is_interior(node) {
            *slot = Some(prob.interior_value);
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut a = DMatrix::<f64>::zeros(free.len(), free.len());
    let mut b = DVector::<f64>::zeros(free.len());
    for (r, &i) in free.iter().enumerate() {
        b[r] = f[i];
        for (j, v) in fixed.iter().enumerate() {
            if let Some(v) = v {
                b[r] -= k[(i, j)] * v;
            }
        }
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = k[(i, j)];
        }
    }
    let x = a.lu().solve(&b).expect("nonsingular masked stiffness");
    let mut u = vec![0.0; n];
    for i in 0..n {
        u[i] = fixed[i].unwrap_or(0.0);
    }
    for (r, &i) in free.iter().enumerate() {
        u[i] = x[r];
    }
    NodalField::new(grid, 1, u).unwrap()
}

fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn zero_state_zero_residual() {
    let grid = BackgroundGrid::unit_square(8).unwrap();
    let occ = OccupancyField::empty(&grid);
    let prob = PdeProblem::poisson(0.0, 0.0);
    let r = poisson_residual(&NodalField::zeros(&grid, 1), &grid, &occ, &prob).unwrap();
    assert_eq!(r.len(), grid.num_nodes());
    assert!(r.iter().all(|&v| v == 0.0));
}

#[test]
fn linear_field_is_discretely_harmonic() {
    let grid = BackgroundGrid::unit_square(12).unwrap();
    let occ = OccupancyField::empty(&grid);
    let mut prob = PdeProblem::poisson(0.0, 0.0);
    prob.walls = WallConditions::uniform(vec![WallValue::Affine { c0: 0.0, cx: 1.0, cy: 0.0 }]);
    let u = NodalField::from_fn(&grid, |p| p[0]);
    let r = poisson_residual(&u, &grid, &occ, &prob).unwrap();
    assert!(linf(&r) <= 1e-10, "{}", linf(&r));
}

#[test]
fn masked_solve_zeroes_residual() {
    let (grid, occ, _) = disk(16);
    let prob = PdeProblem::poisson(1.0, 0.0);
    let u = masked_fem_oracle(&grid, &occ, &prob);
    let r = poisson_residual(&u, &grid, &occ, &prob).unwrap();
    assert!(l2(&r) <= 1e-8, "{}", l2(&r));
    for node in occ.interior_nodes() {
        assert_eq!(r[node], 0.0);
    }
}

#[test]
fn boundary_penalty_examples() {
    let grid = BackgroundGrid::unit_square(10).unwrap();
    let cloud = circle_cloud([0.5, 0.5], 0.3, 64).unwrap();
    let prob = PdeProblem::poisson(0.0, 0.7);
    let u = NodalField::from_fn(&grid, |_| 0.7);
    let (total, res) = boundary_penalty(&u, &grid, &cloud, &prob).unwrap();
    assert_eq!(res.len(), 64);
    assert!(total <= 1e-28);

    let mut neumann = PdeProblem::poisson(0.0, 1.0);
    neumann.robin = Robin { alpha: 0.0, beta: 1.0, g: 1.0 };
    let points: Vec<f64> = (0..20).flat_map(|i| [0.05 + 0.045 * i as f64, 0.31 + 0.02 * i as f64]).collect();
    let normals: Vec<f64> = (0..20).flat_map(|_| [1.0, 0.0]).collect();
    let flat = BoundaryPointCloud::new(2, points, normals, vec![0.1; 20]).unwrap();
    let x = NodalField::from_fn(&grid, |p| p[0]);
    let (total, res) = boundary_penalty(&x, &grid, &flat, &neumann).unwrap();
    assert!(linf(&res) <= 1e-10);
    assert!(total <= 1e-20);
}

#[test]
fn boundary_penalty_of_exact_disk_is_interpolation_error() {
    let n = 128;
    let (grid, _, cloud) = disk(n);
    let prob = PdeProblem::poisson(1.0, 0.0);
    let u = NodalField::from_fn(&grid, |p| {
        let r2 = (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2);
        0.25 * (0.0625 - r2)
    });
    let (total, _) = boundary_penalty(&u, &grid, &cloud, &prob).unwrap();
    let h = grid.h();
    // Bilinear interpolation error of a quadratic with second derivative 1/2.
    let bound = cloud.len() as f64 * (0.25 * h * h).powi(2);
    assert!(total <= bound, "{total} > {bound}");
}

#[test]
fn boundary_penalty_rejects_outside_point() {
    let grid = BackgroundGrid::unit_square(4).unwrap();
    let cloud = BoundaryPointCloud::new(2, vec![0.5, 0.5, 1.5, 0.5], vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 1.0]).unwrap();
    let err = boundary_penalty(&NodalField::zeros(&grid, 1), &grid, &cloud, &PdeProblem::poisson(0.0, 0.0)).unwrap_err();
    assert!(err.to_string().contains("cloud point 1"), "{err}");
}

#[test]
fn exterior_penalty_examples() {
    let (grid, occ, cloud) = disk(16);
    let prob = PdeProblem::poisson(0.0, 0.3);
    let mut u = NodalField::from_fn(&grid, |_| 0.3);
    assert_eq!(exterior_penalty(&u, &occ, 0.3).unwrap(), 0.0);
    assert_eq!(exterior_penalty(&u, &OccupancyField::empty(&grid), 0.3).unwrap(), 0.0);

    let inside = occ.interior_nodes();
    let node = *inside.iter().find(|&&j| !grid.is_boundary_node(j)).unwrap();
    let weights = LossWeights { exterior: 2.5, ..LossWeights::default() };
    let before = total_loss(&u, &grid, &occ, &cloud, &prob, &weights).unwrap();
    u.values_mut()[node] += 2.0;
    let after = total_loss(&u, &grid, &occ, &cloud, &prob, &weights).unwrap();
    assert!((after.exterior_term - before.exterior_term - 4.0 * 2.5).abs() < 1e-12);

    let grad = loss_gradient(
        &u,
        &grid,
        &occ,
        &BoundaryPointCloud::empty(2),
        &PdeProblem::poisson(0.0, 0.3),
        &LossWeights { pde: 0.0, boundary: 0.0, exterior: 2.5, ..LossWeights::default() },
    )
    .unwrap();
    // The field sits at g_in + 2 at `node`: derivative 2·λ₂·2.
    for (j, g) in grad.iter().enumerate() {
        let expected = if j == node { 2.0 * 2.5 * 2.0 } else { 0.0 };
        assert!((g - expected).abs() < 1e-12, "node {j}: {g}");
    }
}

#[test]
fn exterior_gradient_of_unit_offset() {
    let (grid, occ, _) = disk(8);
    let node = *occ.interior_nodes().iter().find(|&&j| !grid.is_boundary_node(j)).unwrap();
    let mut u = NodalField::zeros(&grid, 1);
    u.values_mut()[node] = 1.0;
    let w = LossWeights { pde: 0.0, boundary: 0.0, exterior: 3.0, ..LossWeights::default() };
    let g = loss_gradient(&u, &grid, &occ, &BoundaryPointCloud::empty(2), &PdeProblem::poisson(0.0, 0.0), &w).unwrap();
    assert!((g[node] - 6.0).abs() < 1e-12);
    assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 1);
}

#[test]
fn all_zero_loss() {
    let grid = BackgroundGrid::unit_square(6).unwrap();
    let b = total_loss(
        &NodalField::zeros(&grid, 1),
        &grid,
        &OccupancyField::empty(&grid),
        &BoundaryPointCloud::empty(2),
        &PdeProblem::poisson(0.0, 0.0),
        &LossWeights::default(),
    )
    .unwrap();
    assert_eq!(b.total, 0.0);
    assert_eq!(b.total, b.pde_term + b.boundary_term + b.exterior_term);
}

fn random_field(grid: &BackgroundGrid, n_dof: usize, scale: f64, rng: &mut ChaCha8Rng) -> NodalField {
    let v = (0..grid.num_nodes() * n_dof).map(|_| rng.gen_range(-scale..scale)).collect();
    NodalField::new(grid, n_dof, v).unwrap()
}

fn fd_relative_error(
    u: &NodalField,
    grid: &BackgroundGrid,
    occ: &OccupancyField,
    cloud: &BoundaryPointCloud,
    prob: &PdeProblem,
    w: &LossWeights,
) -> f64 {
    let g = loss_gradient(u, grid, occ, cloud, prob, w).unwrap();
    let mut fd = vec![0.0; g.len()];
    let mut probe = u.clone();
    for j in 0..g.len() {
        let x = u.values()[j];
        let step = 1e-6 * (1.0 + x.abs());
        probe.values_mut()[j] = x + step;
        let fp = total_loss(&probe, grid, occ, cloud, prob, w).unwrap().total;
        probe.values_mut()[j] = x - step;
        let fm = total_loss(&probe, grid, occ, cloud, prob, w).unwrap().total;
        probe.values_mut()[j] = x;
        fd[j] = (fp - fm) / (2.0 * step);
    }
    let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
    l2(&diff) / l2(&g).max(1e-300)
}

#[test]
fn poisson_gradient_matches_finite_differences() {
    let (grid, occ, _) = disk(16);
    let cloud = circle_cloud([0.5, 0.5], 0.25, 100).unwrap();
    let prob = PdeProblem::poisson(1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let u = random_field(&grid, 1, 0.05, &mut rng);
        let err = fd_relative_error(&u, &grid, &occ, &cloud, &prob, &LossWeights::default());
        assert!(err <= 1e-6, "{err}");
    }
}

#[test]
fn gradient_vanishes_at_minimizer() {
    let (grid, occ, cloud) = disk(16);
    let prob = PdeProblem::poisson(1.0, 0.0);
    let w = LossWeights::mesh_scaled();
    let sys = PoissonSystem::assemble(&grid, &occ, &cloud, &prob, &w).unwrap();
    let sol = solve_poisson(&grid, &sys, None, &PoissonSolve::Direct).unwrap();
    let g = loss_gradient(&sol.field, &grid, &occ, &cloud, &prob, &w).unwrap();
    assert!(linf(&g) <= 1e-8, "{}", linf(&g));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let mut v = sol.field.clone();
        for x in v.values_mut() {
            *x += rng.gen_range(-1e-3..1e-3);
        }
        assert!(total_loss(&v, &grid, &occ, &cloud, &prob, &w).unwrap().total >= sol.breakdown.total);
    }
}

#[test]
fn direct_and_cg_minimizers_agree() {
    let (grid, occ, cloud) = disk(16);
    let sys = PoissonSystem::assemble(&grid, &occ, &cloud, &PdeProblem::poisson(1.0, 0.0), &LossWeights::default()).unwrap();
    let direct = solve_poisson(&grid, &sys, None, &PoissonSolve::Direct).unwrap();
    let cg = solve_poisson(&grid, &sys, None, &PoissonSolve::ConjugateGradient { rel_tol: 1e-14, max_iter: 100_000 }).unwrap();
    let d: Vec<f64> = direct.field.values().iter().zip(cg.field.values()).map(|(a, b)| a - b).collect();
    assert!(linf(&d) <= 1e-9, "{}", linf(&d));
}

#[test]
fn breakdown_sums_and_scaling() {
    let (grid, occ, cloud) = disk(8);
    let prob = PdeProblem::poisson(1.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_field(&grid, 1, 1.0, &mut rng);
    let plain = total_loss(&u, &grid, &occ, &cloud, &prob, &LossWeights::default()).unwrap();
    let scaled = total_loss(
        &u,
        &grid,
        &occ,
        &cloud,
        &prob,
        &LossWeights { scale_by_inverse_h: true, ..LossWeights::default() },
    )
    .unwrap();
    assert_eq!(plain.total, plain.pde_term + plain.boundary_term + plain.exterior_term);
    assert!((scaled.boundary_term - plain.boundary_term * 8.0).abs() < 1e-9 * scaled.boundary_term);
    assert!((scaled.exterior_term - plain.exterior_term * 8.0).abs() < 1e-9 * scaled.exterior_term);
    assert_eq!(scaled.pde_term, plain.pde_term);
    assert_eq!(scaled.weights, [1.0, 8.0, 8.0]);
}

#[test]
fn invalid_inputs() {
    let grid = BackgroundGrid::unit_square(4).unwrap();
    let occ = OccupancyField::empty(&grid);
    let mut prob = PdeProblem::poisson(1.0, 0.0);
    prob.robin = Robin { alpha: 0.0, beta: 0.0, g: 0.0 };
    assert!(poisson_residual(&NodalField::zeros(&grid, 1), &grid, &occ, &prob).is_err());
    let ns = PdeProblem::navier_stokes(0.0, 1.0);
    assert!(ns_residual(&NodalField::zeros(&grid, 3), &grid, &occ, &ns).is_err());
    let good = PdeProblem::poisson(1.0, 0.0);
    assert!(poisson_residual(&NodalField::zeros(&grid, 3), &grid, &occ, &good).is_err());
    let other = BackgroundGrid::unit_square(5).unwrap();
    assert!(poisson_residual(&NodalField::zeros(&grid, 1), &grid, &OccupancyField::empty(&other), &good).is_err());
    let w = LossWeights { boundary: -1.0, ..LossWeights::default() };
    assert!(total_loss(&NodalField::zeros(&grid, 1), &grid, &occ, &BoundaryPointCloud::empty(2), &good, &w).is_err());
}

#[test]
fn wall_values_are_strong() {
    let grid = BackgroundGrid::unit_square(6).unwrap();
    let occ = OccupancyField::empty(&grid);
    let prob = PdeProblem::poisson(1.0, 0.0);
    let sys = PoissonSystem::assemble(&grid, &occ, &BoundaryPointCloud::empty(2), &prob, &LossWeights::default()).unwrap();
    let sol = solve_poisson(&grid, &sys, None, &PoissonSolve::Direct).unwrap();
    for node in 0..grid.num_nodes() {
        if grid.is_boundary_node(node) {
            assert_eq!(sol.field.values()[node], 0.0);
        }
    }
    let channel = WallConditions::channel(1.0);
    let g = BackgroundGrid::new([8, 4], [0.0, 0.0], [2.0, 1.0]).unwrap();
    for j in 0..5 {
        let y = j as f64 / 4.0;
        let node = g.node_index(0, j);
        let expected = 1.0 - (2.0 * y - 1.0).powi(2);
        assert!((channel.prescribed(&g, node, 0).unwrap() - expected).abs() < 1e-15);
    }
    assert_eq!(channel.prescribed(&g, g.node_index(8, 2), 0), None);
}

#[test]
fn ns_zero_state() {
    let grid = BackgroundGrid::new([16, 8], [0.0, 0.0], [2.0, 1.0]).unwrap();
    let occ = OccupancyField::empty(&grid);
    let prob = PdeProblem::navier_stokes(0.01, 1.0);
    let r = ns_residual(&NodalField::zeros(&grid, 3), &grid, &occ, &prob).unwrap();
    let h = grid.h();
    let mut inlet = 0.0f64;
    for node in 0..grid.num_nodes() {
        let x = grid.node_coords(node);
        for c in 0..2 {
            let v = r[node * 3 + c].abs();
            if x[0] > 1.5 * h {
                assert_eq!(v, 0.0, "node {node} component {c}");
            } else {
                inlet = inlet.max(v);
            }
        }
    }
    assert!(inlet > 0.0);
}

#[test]
fn ns_uniform_flow_has_no_interior_momentum_residual() {
    let grid = BackgroundGrid::new([12, 12], [0.0, 0.0], [1.0, 1.0]).unwrap();
    let occ = OccupancyField::empty(&grid);
    let mut prob = PdeProblem::navier_stokes(0.05, 1.0);
    prob.walls = WallConditions::uniform(vec![WallValue::Fixed { value: 1.0 }, WallValue::Fixed { value: 0.0 }, WallValue::Free]);
    let u = NodalField::new(&grid, 3, (0..grid.num_nodes()).flat_map(|_| [1.0, 0.0, 0.0]).collect()).unwrap();
    let r = ns_residual(&u, &grid, &occ, &prob).unwrap();
    for node in 0..grid.num_nodes() {
        if !grid.is_boundary_node(node) {
            for c in 0..3 {
                assert!(r[node * 3 + c].abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn ns_gradient_matches_finite_differences() {
    let grid = BackgroundGrid::new([16, 16], [0.0, 0.0], [1.0, 1.0]).unwrap();
    let cloud = circle_cloud([0.5, 0.5], 0.2, 60).unwrap();
    let occ = occupancy_grid(&cloud, &grid).unwrap();
    let prob = PdeProblem::navier_stokes(0.02, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let u = random_field(&grid, 3, 0.5, &mut rng);
        let err = fd_relative_error(&u, &grid, &occ, &cloud, &prob, &LossWeights::default());
        assert!(err <= 1e-6, "{err}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn poisson_loss_is_convex(seed in 0u64..1000, t in 0.0f64..1.0) {
        let (grid, occ, cloud) = disk(8);
        let prob = PdeProblem::poisson(1.0, 0.2);
        let w = LossWeights::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_field(&grid, 1, 1.0, &mut rng);
        let b = random_field(&grid, 1, 1.0, &mut rng);
        let mix = NodalField::new(
            &grid,
            1,
            a.values().iter().zip(b.values()).map(|(x, y)| t * x + (1.0 - t) * y).collect(),
        )
        .unwrap();
        let ja = total_loss(&a, &grid, &occ, &cloud, &prob, &w).unwrap().total;
        let jb = total_loss(&b, &grid, &occ, &cloud, &prob, &w).unwrap().total;
        let jm = total_loss(&mix, &grid, &occ, &cloud, &prob, &w).unwrap().total;
        prop_assert!(jm <= t * ja + (1.0 - t) * jb + 1e-10);
    }
}

#[test]
fn oracle_loss_is_the_cloud_mismatch() {
    let (grid, occ, cloud) = disk(64);
    let prob = PdeProblem::poisson(1.0, 0.0);
    let u = masked_fem_oracle(&grid, &occ, &prob);
    let b = total_loss(&u, &grid, &occ, &cloud, &prob, &LossWeights::default()).unwrap();
    assert!(b.pde_term <= 1e-16);
    assert_eq!(b.exterior_term, 0.0);
    let (bp, _) = boundary_penalty(&u, &grid, &cloud, &prob).unwrap();
    assert_eq!(b.boundary_term, bp);
    // The masked solve is zero on object nodes, not on the circle: its
    // values at the cloud points are O(h |∇u|).
    let per_point = (bp / cloud.len() as f64).sqrt();
    assert!(per_point < grid.h() * 0.125, "{per_point}");
}
