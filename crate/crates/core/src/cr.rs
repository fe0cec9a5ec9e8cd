//! Crouzeix-Raviart multigrid through the equivalence with the RT0 mixed
//! method for −Δλ = f with natural boundary conditions.
//!
//! Sign convention: with B = −div and u = ∇p in the mixed system, the flux of
//! the CR solution λ on a triangle T is
//!     u|_T = ∇λ_T − (f_T / 2)(x − x_T),
//! so ∫_E u·n_E = |E| ∇λ_T·n_E − σ(T,E) f_T|T| / 3.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{assemble_cr_from_integrals, cr_gradient, rt0_value, CoefficientTensor, CrSystem};
use crate::hierarchy::MeshHierarchy;
use crate::linalg::{cg_semidefinite, dense_solve, dot, DenseMatrix, SparseMatrix};
use crate::mesh::{Point, TriangleMesh};
use crate::mg::{LocalPatch, MultigridSolver, SolveStats, SolverConfig};

/// CR coefficients at edge midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrField {
    pub values: Vec<f64>,
    /// Whether Σ_T |T|·avg_T(λ) = 0 has been enforced.
    pub normalized: bool,
}

impl CrField {
    pub fn zeros(num_edges: usize) -> Self {
        Self {
            values: vec![0.0; num_edges],
            normalized: true,
        }
    }

    pub fn broken_gradients(&self, mesh: &TriangleMesh) -> Vec<Point> {
        (0..mesh.num_triangles())
            .map(|t| cr_gradient(mesh, &self.values, t))
            .collect()
    }

    /// Σ_T |T|·avg_T(λ).
    pub fn weighted_mean(&self, mesh: &TriangleMesh) -> f64 {
        (0..mesh.num_triangles())
            .map(|t| {
                mesh.area(t)
                    * mesh
                        .triangle_edges(t)
                        .iter()
                        .map(|&e| self.values[e])
                        .sum::<f64>()
                    / 3.0
            })
            .sum()
    }

    /// Shifts by a constant so that the weighted mean vanishes.
    pub fn normalize(&mut self, mesh: &TriangleMesh) {
        let total: f64 = mesh.areas().iter().sum();
        let shift = self.weighted_mean(mesh) / total;
        self.values.iter_mut().for_each(|v| *v -= shift);
        self.normalized = true;
    }
}

/// Σ_T |T| |a_T − b_T|².
pub fn broken_distance_sq(mesh: &TriangleMesh, a: &[Point], b: &[Point]) -> f64 {
    (0..mesh.num_triangles())
        .map(|t| {
            let d = [a[t][0] - b[t][0], a[t][1] - b[t][1]];
            mesh.area(t) * (d[0] * d[0] + d[1] * d[1])
        })
        .sum()
}

/// Flux of a CR field; each edge is evaluated from its first adjacent
/// triangle. `source` holds the element integrals f_T|T|.
pub fn cr_to_flux(mesh: &TriangleMesh, lambda: &CrField, source: &[f64]) -> Vec<f64> {
    (0..mesh.num_edges())
        .map(|e| {
            let t = mesh.edge_triangles(e)[0];
            let grad = cr_gradient(mesh, &lambda.values, t);
            let n = mesh.edge_normal(e);
            mesh.edge_length(e) * (grad[0] * n[0] + grad[1] * n[1])
                - mesh.sign_of(t, e) * source[t] / 3.0
        })
        .collect()
}

/// Elementwise gradient part of a flux: u(x_T), which equals ∇_hλ on T when
/// the local formula holds.
pub fn flux_gradients(mesh: &TriangleMesh, u: &[f64]) -> Vec<Point> {
    (0..mesh.num_triangles())
        .map(|t| rt0_value(mesh, u, t, mesh.centroid(t)))
        .collect()
}

/// Result of converting a flux into CR form.
#[derive(Debug, Clone, PartialEq)]
pub struct CrReconstruction {
    /// Mean-zero CR field whose broken gradient is the L² projection of the
    /// flux gradients onto ∇_h(CR).
    pub lambda: CrField,
    /// Elementwise gradients u(x_T).
    pub gradients: Vec<Point>,
    /// ‖gradients − ∇_hλ‖ in L²; zero exactly when u is the mixed solution.
    pub defect: f64,
}

fn cr_projection_system(mesh: &TriangleMesh) -> CrSystem {
    assemble_cr_from_integrals(mesh, &vec![0.0; mesh.num_triangles()])
}

/// Inverse of [`cr_to_flux`] for a flux satisfying (B u)_T = f_T|T|.
pub fn flux_to_cr(mesh: &TriangleMesh, u: &[f64], source: &[f64]) -> Result<CrReconstruction> {
    let div = crate::fem::assemble_div(mesh);
    let bu = div.spmv(u)?;
    let tol = crate::mg::constraint_tolerance(source);
    for (t, (a, b)) in bu.iter().zip(source).enumerate() {
        if !((a - b).abs() <= tol) {
            return Err(Error::ConstraintViolated {
                triangle: t,
                defect: (a - b).abs(),
            });
        }
    }
    let gradients = flux_gradients(mesh, u);
    let sys = cr_projection_system(mesh);
    let mut rhs = vec![0.0; mesh.num_edges()];
    for (t, g) in gradients.iter().enumerate() {
        let bg = crate::fem::barycentric_gradients(&mesh.triangle_points(t));
        let area = mesh.area(t);
        for (k, &e) in mesh.triangle_edges(t).iter().enumerate() {
            rhs[e] -= 2.0 * area * (g[0] * bg[k][0] + g[1] * bg[k][1]);
        }
    }
    let (values, _) = cg_semidefinite(&sys.stiffness, &rhs, 1e-14, 20 * mesh.num_edges() + 100);
    let mut lambda = CrField {
        values,
        normalized: false,
    };
    lambda.normalize(mesh);
    let defect = broken_distance_sq(mesh, &gradients, &lambda.broken_gradients(mesh)).sqrt();
    Ok(CrReconstruction {
        lambda,
        gradients,
        defect,
    })
}

/// Source integrals δf_T|T| = (B_loc M_loc⁻¹ r)_T of the local CR problem
/// equivalent to the patch correction for residual `r_loc`.
pub fn cr_local_source(patch: &LocalPatch, r_loc: &[f64]) -> Result<Vec<f64>> {
    let s = dense_solve(&patch.mass, r_loc)?;
    patch.div.matvec(&s)
}

/// Dense bordered solve of the CR system with the mean constraint, with one
/// step of iterative refinement.
pub fn direct_cr_solve(mesh: &TriangleMesh, sys: &CrSystem) -> Result<CrField> {
    let n = sys.rhs.len();
    let mut a = DenseMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for (j, v) in sys.stiffness.row(i) {
            a[(i, j)] = v;
        }
        a[(i, n)] = sys.mean_weights[i];
        a[(n, i)] = sys.mean_weights[i];
    }
    let mut rhs = sys.rhs.clone();
    rhs.push(0.0);
    let lu = crate::linalg::LuFactor::new(&a)?;
    let mut x = lu.solve(&rhs)?;
    let ax = a.matvec(&x)?;
    let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, v)| b - v).collect();
    let dx = lu.solve(&res)?;
    for (xi, di) in x.iter_mut().zip(&dx) {
        *xi += di;
    }
    x.pop();
    let mut field = CrField {
        values: x,
        normalized: false,
    };
    field.normalize(mesh);
    Ok(field)
}

/// ‖∇_h λ‖² of a CR field through the assembled stiffness.
pub fn cr_energy(stiffness: &SparseMatrix, lambda: &CrField) -> f64 {
    dot(
        &lambda.values,
        &stiffness.spmv(&lambda.values).expect("CR length"),
    )
}

#[derive(Debug, Clone)]
pub struct CrSolveOutput {
    pub lambda: CrField,
    pub flux: Vec<f64>,
    pub stats: SolveStats,
    /// Per iteration: |‖u−u^k‖²_M − ‖∇_h(λ−λ^k)‖²| / ‖u−u^k‖²_M.
    pub equivalence_residuals: Vec<f64>,
}

/// Multigrid for the CR discretization of −Δλ = f (K = I, natural boundary
/// conditions) run through the equivalent mixed iteration. `source` holds the
/// finest-level element integrals and must sum to zero.
pub fn cr_solve_mg(
    hier: MeshHierarchy,
    source: Vec<f64>,
    cfg: &SolverConfig,
) -> Result<CrSolveOutput> {
    let ne = hier.finest().num_edges();
    let solver = MultigridSolver::new(
        hier,
        &CoefficientTensor::Identity,
        source.clone(),
        vec![0.0; ne],
    )?;
    let mut iterates = Vec::new();
    let out = solver.solve_observed(cfg, |_, u| iterates.push(u.to_vec()))?;
    let mesh = solver.hierarchy().finest();
    let recon = flux_to_cr(mesh, &out.flux, &source)?;

    let reference = if out.stats.iterations == 0 {
        out.flux.clone()
    } else {
        let tight = SolverConfig {
            tolerance: cfg.tolerance.min(1e-13),
            max_iterations: cfg.max_iterations.max(100),
            ..cfg.clone()
        };
        solver.solve(&tight)?.flux
    };
    let mass = &solver.system().mass;
    let equivalence_residuals = iterates
        .iter()
        .map(|uk| {
            let d: Vec<f64> = reference.iter().zip(uk).map(|(a, b)| a - b).collect();
            let lhs = dot(&d, &mass.spmv(&d).expect("flux length"));
            let zero = vec![[0.0; 2]; mesh.num_triangles()];
            let rhs = broken_distance_sq(mesh, &flux_gradients(mesh, &d), &zero);
            if lhs > 0.0 {
                (lhs - rhs).abs() / lhs
            } else {
                rhs.abs()
            }
        })
        .collect();
    Ok(CrSolveOutput {
        lambda: recon.lambda,
        flux: out.flux,
        stats: out.stats,
        equivalence_residuals,
    })
}
