use super::*;
use crate::fem::{assemble_rhs, CoefficientTensor};
use crate::hierarchy::build_hierarchy;
use crate::linalg::norm_inf;
use crate::mesh::build_square_mesh;
use crate::problem::build_example;

fn poisson(levels: usize, f: impl Fn(f64, f64) -> f64) -> MultigridSolver {
    let hier = build_hierarchy(build_square_mesh(4), levels);
    let rhs = assemble_rhs(hier.finest(), f);
    let g = vec![0.0; hier.finest().num_edges()];
    MultigridSolver::new(hier, &CoefficientTensor::Identity, rhs, g).unwrap()
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn zero_data_gives_zero_flux_and_no_iterations() {
    let s = poisson(3, |_, _| 0.0);
    assert!(s.compatible_flux().unwrap().iter().all(|v| *v == 0.0));
    let out = s.solve(&SolverConfig::default()).unwrap();
    assert_eq!(out.stats.iterations, 0);
    assert!(out.flux.iter().all(|v| *v == 0.0));
}

#[test]
fn compatible_flux_for_indicator_difference() {
    let hier = build_hierarchy(build_square_mesh(4), 2);
    let mut rhs = vec![0.0; hier.finest().num_triangles()];
    rhs[3] = hier.finest().area(3);
    rhs[77] = -hier.finest().area(77);
    let g = vec![0.0; hier.finest().num_edges()];
    let s = MultigridSolver::new(hier, &CoefficientTensor::Identity, rhs, g).unwrap();
    let u = s.compatible_flux().unwrap();
    assert!(s.system().constraint_defect(&u) <= 1e-12);
    for (l, ul) in s.compatible_flux_levels().unwrap().iter().enumerate() {
        assert!(
            s.level(l).system.constraint_defect(ul) <= 1e-12,
            "level {l}"
        );
    }
}

#[test]
fn compatible_flux_with_boundary_data() {
    let hier = build_hierarchy(build_square_mesh(4), 3);
    let mesh = hier.finest();
    let mut g = vec![0.0; mesh.num_edges()];
    let mut outflow = 0.0;
    for e in 0..mesh.num_edges() {
        if mesh.is_boundary_edge(e) {
            let m = mesh.edge_midpoint(e);
            g[e] = (3.0 * m[0]).sin() + m[1];
            outflow += mesh.sign_of(mesh.edge_triangles(e)[0], e) * g[e];
        }
    }
    let rhs: Vec<f64> = mesh.areas().iter().map(|a| -outflow * a).collect();
    let s = MultigridSolver::new(hier, &CoefficientTensor::Smooth, rhs, g.clone()).unwrap();
    let levels = s.compatible_flux_levels().unwrap();
    for (l, ul) in levels.iter().enumerate() {
        assert!(s.level(l).system.constraint_defect(ul) <= 1e-12);
    }
    let u = levels.last().unwrap();
    for e in 0..g.len() {
        if s.system().fixed[e] {
            assert_eq!(u[e], g[e]);
        }
    }
    let out = s.solve(&SolverConfig::default()).unwrap();
    assert!(out.stats.converged);
    let (ud, _) = DirectSaddleSolver::new(s.system())
        .unwrap()
        .solve_system(s.system())
        .unwrap();
    let diff: Vec<f64> = out.flux.iter().zip(&ud).map(|(a, b)| a - b).collect();
    let m = &s.system().mass;
    assert!(m.spmv(&diff).map(|v| dot(&v, &diff)).unwrap().sqrt() < 1e-6);
}

#[test]
fn incompatible_data_is_rejected() {
    let hier = build_hierarchy(build_square_mesh(4), 2);
    let rhs = vec![1.0; hier.finest().num_triangles()];
    let g = vec![0.0; hier.finest().num_edges()];
    assert!(matches!(
        MultigridSolver::new(hier, &CoefficientTensor::Identity, rhs, g),
        Err(Error::Incompatible { .. })
    ));
}

#[test]
fn sweep_is_identity_at_the_minimizer() {
    let s = build_example(2, 4, 2, 1).unwrap();
    let sys = s.system();
    let (ud, _) = DirectSaddleSolver::new(sys)
        .unwrap()
        .solve_system(sys)
        .unwrap();
    for kind in [
        SmootherKind::ExactKernel,
        SmootherKind::ExactDense,
        SmootherKind::InexactDiagonal,
    ] {
        let mut u = ud.clone();
        s.finest()
            .smoother_sweep(&mut u, &sys.rhs_u, SweepOrder::Ascending, kind)
            .unwrap();
        let scale = norm_inf(&ud);
        for (a, b) in u.iter().zip(&ud) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }
}

#[test]
fn sweep_energy_decrease_identity() {
    let s = build_example(3, 4, 3, 2).unwrap();
    let level = s.finest();
    let sys = &level.system;
    let mut u = s.compatible_flux().unwrap();
    for kind in [SmootherKind::ExactKernel, SmootherKind::ExactDense] {
        for sweep in 0..4 {
            let order = if sweep % 2 == 0 {
                SweepOrder::Ascending
            } else {
                SweepOrder::Descending
            };
            let before = energy(sys, &u);
            let sum = level
                .smoother_sweep(&mut u, &sys.rhs_u, order, kind)
                .unwrap();
            let after = energy(sys, &u);
            let de = before - after;
            assert!(de > 0.0);
            assert!((de - 0.5 * sum).abs() <= 1e-9 * de, "{de} vs {}", 0.5 * sum);
            assert!(sys.constraint_defect(&u) <= constraint_tolerance(&sys.rhs_p));
        }
    }
    let before = energy(sys, &u);
    level
        .smoother_sweep(
            &mut u,
            &sys.rhs_u,
            SweepOrder::Ascending,
            SmootherKind::InexactDiagonal,
        )
        .unwrap();
    assert!(energy(sys, &u) < before);
}

#[test]
fn vcycle_basic_properties() {
    let s = poisson(3, crate::fem::default_source);
    let cfg = SolverConfig::default();
    let ne = s.system().num_edges();
    assert!(s
        .vcycle(&vec![0.0; ne], &cfg)
        .unwrap()
        .iter()
        .all(|v| *v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut r = random_vec(ne, &mut rng);
    for (v, &f) in r.iter_mut().zip(&s.system().fixed) {
        if f {
            *v = 0.0;
        }
    }
    let c = s.vcycle(&r, &cfg).unwrap();
    let bc = s.system().div.spmv(&c).unwrap();
    assert!(norm_inf(&bc) <= 1e-11 * norm_inf(&c));
    for (e, &f) in s.system().fixed.iter().enumerate() {
        if f {
            assert_eq!(c[e], 0.0);
        }
    }
}

#[test]
fn single_level_vcycle_is_exact_solve() {
    let s = poisson(1, crate::fem::default_source);
    let out = s.solve(&SolverConfig::default()).unwrap();
    assert!(out.stats.iterations <= 2);
    let (ud, _) = DirectSaddleSolver::new(s.system())
        .unwrap()
        .solve_system(s.system())
        .unwrap();
    for (a, b) in out.flux.iter().zip(&ud) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn solve_matches_direct_solve_and_stays_feasible() {
    for kind in [
        SmootherKind::ExactKernel,
        SmootherKind::ExactDense,
        SmootherKind::InexactDiagonal,
    ] {
        let s = build_example(2, 4, 3, 1).unwrap();
        let cfg = SolverConfig {
            smoother: kind,
            tolerance: 1e-10,
            ..SolverConfig::default()
        };
        let out = s.solve(&cfg).unwrap();
        assert!(out.stats.converged, "{kind:?}");
        let sys = s.system();
        for w in out.stats.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
        let tol = constraint_tolerance(&sys.rhs_p);
        assert!(out.stats.constraint_history.iter().all(|d| *d <= tol));
        let (ud, pd) = DirectSaddleSolver::new(sys)
            .unwrap()
            .solve_system(sys)
            .unwrap();
        let diff: Vec<f64> = out.flux.iter().zip(&ud).map(|(a, b)| a - b).collect();
        let err = dot(&sys.mass.spmv(&diff).unwrap(), &diff).sqrt();
        assert!(err < 1e-8, "{kind:?}: {err}");
        let mut pd = pd;
        crate::linalg::remove_weighted_mean(&mut pd, &s.hierarchy().finest().areas());
        let perr = pd
            .iter()
            .zip(&out.pressure)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(perr < 1e-6 * norm_inf(&pd), "{perr}");
    }
}

#[test]
fn energy_identities() {
    let s = build_example(2, 4, 2, 1).unwrap();
    let sys = s.system();
    let (ud, _) = DirectSaddleSolver::new(sys)
        .unwrap()
        .solve_system(sys)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let loaded = MixedSystem {
        rhs_u: random_vec(sys.num_edges(), &mut rng),
        ..sys.clone()
    };
    for _ in 0..5 {
        // feasible w = u_d + random kernel combination
        let mut w = ud.clone();
        for p in &s.finest().patches {
            let xi: f64 = rng.gen_range(-1.0..1.0);
            for (&e, &c) in p.edge_ids().iter().zip(p.kernel_vector()) {
                w[e] += xi * c;
            }
        }
        let d: Vec<f64> = w.iter().zip(&ud).map(|(a, b)| a - b).collect();
        let half = 0.5 * dot(&sys.mass.spmv(&d).unwrap(), &d);
        let lhs = energy(sys, &w) - energy(sys, &ud);
        assert!((lhs - half).abs() <= 1e-10 * half.max(1e-300));

        let v = random_vec(sys.num_edges(), &mut rng);
        let w = random_vec(sys.num_edges(), &mut rng);
        let d: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - b).collect();
        let mv = loaded.mass.spmv(&v).unwrap();
        let grad: Vec<f64> = mv.iter().zip(&loaded.rhs_u).map(|(a, b)| a - b).collect();
        let id = energy(&loaded, &w)
            - energy(&loaded, &v)
            - 0.5 * dot(&loaded.mass.spmv(&d).unwrap(), &d)
            - dot(&grad, &d);
        assert!(id.abs() < 1e-12 * (1.0 + energy(&loaded, &w).abs()));
    }
    assert_eq!(energy(sys, &vec![0.0; sys.num_edges()]), 0.0);
}

#[test]
fn contraction_below_one_and_uniform() {
    let cfg = SolverConfig::default();
    let r2 = poisson(2, |_, _| 0.0)
        .measure_contraction(&cfg, 3, 4, 6, 1)
        .unwrap()
        .rho;
    let r3 = poisson(3, |_, _| 0.0)
        .measure_contraction(&cfg, 3, 4, 6, 1)
        .unwrap()
        .rho;
    assert!(r2 < 1.0 && r3 < 1.0);
    assert!((r2 - r3).abs() < 0.15, "{r2} {r3}");
}

#[test]
fn config_validation() {
    let mut cfg = SolverConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.pre = 0;
    cfg.post = 0;
    assert!(cfg.validate().is_err());
    cfg.post = 1;
    cfg.tolerance = 0.0;
    assert!(cfg.validate().is_err());
}

#[test]
fn example_one_iteration_counts() {
    for levels in 2..=4 {
        let s = build_example(1, 4, levels, 1).unwrap();
        let out = s.solve(&SolverConfig::default()).unwrap();
        assert!(out.stats.converged);
        assert!(
            (8..=16).contains(&out.stats.iterations),
            "levels {levels}: {}",
            out.stats.iterations
        );
    }
}

#[test]
fn high_contrast_runs_stay_feasible_and_converge() {
    for seed in [1, 4] {
        let s = build_example(3, 4, 3, seed).unwrap();
        let out = s.solve(&SolverConfig::default()).unwrap();
        assert!(out.stats.converged, "seed {seed}");
        assert!(
            out.stats.iterations <= 30,
            "seed {seed}: {}",
            out.stats.iterations
        );
        let tol = constraint_tolerance(&s.system().rhs_p);
        assert!(out.stats.constraint_history.iter().all(|d| *d <= tol));
    }
}
