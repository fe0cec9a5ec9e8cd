//! Lowest-order Raviart-Thomas / piecewise-constant mixed assembly and the
//! Crouzeix-Raviart stiffness system.
//!
//! Flux degrees of freedom are total normal fluxes ∫_E u·n_E ds. On a triangle
//! T with vertices P₀, P₁, P₂ the basis field of local edge k (opposite P_k) is
//! φ_k(x) = σ(T,E_k)(x − P_k)/(2|T|), so ∫_T div φ_k = σ(T,E_k) and the
//! divergence matrix is a signed incidence matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::mesh::{Point, TriangleMesh};

pub type Tensor2 = [[f64; 2]; 2];

/// Symmetric positive-definite permeability tensor K(x).
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientTensor {
    Identity,
    /// K = c·I.
    Scalar(f64),
    /// K = [[1 + 4(x²+y²), 3xy], [3xy, 1 + 11(x²+y²)]].
    Smooth,
    /// K = a·I with one value of `a` per square cell of the initial n×n
    /// partition; cell c holds initial triangles 2c and 2c+1.
    Cellwise {
        values: Vec<f64>,
    },
}

impl CoefficientTensor {
    /// Evaluates K at `p`; `root` is the index of the coarsest-level triangle
    /// containing the point (only the cellwise tensor uses it).
    pub fn eval(&self, p: Point, root: usize) -> Tensor2 {
        match self {
            Self::Identity => [[1.0, 0.0], [0.0, 1.0]],
            Self::Scalar(c) => [[*c, 0.0], [0.0, *c]],
            Self::Smooth => {
                let (x, y) = (p[0], p[1]);
                let r2 = x * x + y * y;
                [
                    [1.0 + 4.0 * r2, 3.0 * x * y],
                    [3.0 * x * y, 1.0 + 11.0 * r2],
                ]
            }
            Self::Cellwise { values } => {
                let a = values[root / 2];
                [[a, 0.0], [0.0, a]]
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity) || matches!(self, Self::Scalar(c) if *c == 1.0)
    }
}

/// Permeability of Examples 1-4. Examples 3 and 4 draw an exponent
/// p ∈ {0,…,5} per cell of the 4×4 partition and set a = 10^(−p).
pub fn example_tensor(id: u32, seed: u64) -> Result<CoefficientTensor> {
    match id {
        1 => Ok(CoefficientTensor::Identity),
        2 => Ok(CoefficientTensor::Smooth),
        3 | 4 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..16)
                .map(|_| {
                    let p: i32 = rng.gen_range(0..=5);
                    10f64.powi(-p)
                })
                .collect();
            Ok(CoefficientTensor::Cellwise { values })
        }
        _ => Err(Error::InvalidArgument(format!("unknown example {id}"))),
    }
}

fn invert_spd(k: Tensor2, p: Point) -> Result<Tensor2> {
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    let symmetric = (k[0][1] - k[1][0]).abs() <= 1e-14 * (k[0][0].abs() + k[1][1].abs());
    if !symmetric || !(det > 0.0) || !(k[0][0] > 0.0) {
        return Err(Error::TensorNotSpd { x: p[0], y: p[1] });
    }
    Ok([
        [k[1][1] / det, -k[0][1] / det],
        [-k[1][0] / det, k[0][0] / det],
    ])
}

/// Edge midpoints of a triangle in local-edge order (entry k opposite vertex k).
pub fn local_midpoints(pts: &[Point; 3]) -> [Point; 3] {
    std::array::from_fn(|k| {
        let a = pts[(k + 1) % 3];
        let b = pts[(k + 2) % 3];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    })
}

fn tri_area(p: &[Point; 3]) -> f64 {
    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]))
}

/// Local RT0 mass matrix ∫_T K⁻¹φ_i·φ_j with the edge-midpoint rule;
/// `kinv[q]` is K⁻¹ at midpoint q.
pub fn local_mass(pts: &[Point; 3], signs: &[f64; 3], kinv: &[Tensor2; 3]) -> [[f64; 3]; 3] {
    let area = tri_area(pts);
    let mids = local_midpoints(pts);
    let mut m = [[0.0; 3]; 3];
    for (q, mid) in mids.iter().enumerate() {
        let vals: [Point; 3] = std::array::from_fn(|i| {
            let s = signs[i] / (2.0 * area);
            [s * (mid[0] - pts[i][0]), s * (mid[1] - pts[i][1])]
        });
        let ki = kinv[q];
        for i in 0..3 {
            let kv = [
                ki[0][0] * vals[i][0] + ki[0][1] * vals[i][1],
                ki[1][0] * vals[i][0] + ki[1][1] * vals[i][1],
            ];
            for j in 0..3 {
                m[i][j] += area / 3.0 * (kv[0] * vals[j][0] + kv[1] * vals[j][1]);
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            let avg = 0.5 * (m[i][j] + m[j][i]);
            m[i][j] = avg;
            m[j][i] = avg;
        }
    }
    m
}

/// Coarsest-level triangle containing each triangle, for a mesh that is its
/// own coarsest level.
pub fn identity_roots(mesh: &TriangleMesh) -> Vec<usize> {
    (0..mesh.num_triangles()).collect()
}

/// Global RT0 mass matrix with coefficient K; `roots[t]` is the coarsest
/// ancestor of triangle t.
pub fn assemble_mass_with_roots(
    mesh: &TriangleMesh,
    k: &CoefficientTensor,
    roots: &[usize],
) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let pts = mesh.triangle_points(t);
        let mids = local_midpoints(&pts);
        let mut kinv = [[[0.0; 2]; 2]; 3];
        for q in 0..3 {
            kinv[q] = invert_spd(k.eval(mids[q], roots[t]), mids[q])?;
        }
        let local = local_mass(&pts, &mesh.triangle_signs(t), &kinv);
        let ids = mesh.triangle_edges(t);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((ids[i], ids[j], local[i][j]));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(
        mesh.num_edges(),
        mesh.num_edges(),
        &trip,
    ))
}

pub fn assemble_mass(mesh: &TriangleMesh, k: &CoefficientTensor) -> Result<SparseMatrix> {
    assemble_mass_with_roots(mesh, k, &identity_roots(mesh))
}

/// Discrete −div: entry (T, E) = −σ(T, E).
pub fn assemble_div(mesh: &TriangleMesh) -> SparseMatrix {
    let mut trip = Vec::with_capacity(3 * mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let ids = mesh.triangle_edges(t);
        let signs = mesh.triangle_signs(t);
        for k in 0..3 {
            trip.push((t, ids[k], -signs[k]));
        }
    }
    SparseMatrix::from_triplets(mesh.num_triangles(), mesh.num_edges(), &trip)
}

/// Element integrals f_T·|T| with f_T the edge-midpoint average of f.
pub fn assemble_rhs(mesh: &TriangleMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    (0..mesh.num_triangles())
        .map(|t| {
            let mids = local_midpoints(&mesh.triangle_points(t));
            let avg = mids.iter().map(|m| f(m[0], m[1])).sum::<f64>() / 3.0;
            avg * mesh.area(t)
        })
        .collect()
}

/// Source used by the benchmark runs: f = 2π²cos(πx)cos(πy), mean zero on the unit square.
pub fn default_source(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    2.0 * PI * PI * (PI * x).cos() * (PI * y).cos()
}

/// Net outward boundary flux Σ σ(T,E) g_E over boundary edges.
pub fn boundary_outflow(mesh: &TriangleMesh, g: &[f64]) -> f64 {
    (0..mesh.num_edges())
        .filter(|&e| mesh.is_boundary_edge(e))
        .map(|e| mesh.sign_of(mesh.edge_triangles(e)[0], e) * g[e])
        .sum()
}

/// Checks Σ_T rhs_T = −(net outward flux), the discrete divergence theorem for B u = rhs.
pub fn check_compatibility(mesh: &TriangleMesh, rhs_p: &[f64], g: &[f64]) -> Result<()> {
    let total: f64 = rhs_p.iter().sum();
    let outflow = boundary_outflow(mesh, g);
    let scale = rhs_p.iter().map(|v| v.abs()).sum::<f64>() + g.iter().map(|v| v.abs()).sum::<f64>();
    if (total + outflow).abs() > 1e-10 * scale.max(1e-300) + 1e-14 {
        return Err(Error::Incompatible {
            source_total: total,
            outflow,
        });
    }
    Ok(())
}

/// Value of the RT0 field with edge coefficients `coeffs` at point `p` of triangle `t`.
pub fn rt0_value(mesh: &TriangleMesh, coeffs: &[f64], t: usize, p: Point) -> Point {
    let pts = mesh.triangle_points(t);
    let area = mesh.area(t);
    let ids = mesh.triangle_edges(t);
    let signs = mesh.triangle_signs(t);
    let mut v = [0.0; 2];
    for k in 0..3 {
        let s = coeffs[ids[k]] * signs[k] / (2.0 * area);
        v[0] += s * (p[0] - pts[k][0]);
        v[1] += s * (p[1] - pts[k][1]);
    }
    v
}

/// Saddle system of the mixed method on one mesh: [[M, Bᵀ], [B, 0]] with
/// boundary flux DOFs pinned to `g`.
#[derive(Debug, Clone)]
pub struct MixedSystem {
    pub mass: SparseMatrix,
    pub div: SparseMatrix,
    /// Velocity load (zero for the Darcy examples).
    pub rhs_u: Vec<f64>,
    /// f_T·|T| per triangle.
    pub rhs_p: Vec<f64>,
    pub fixed: Vec<bool>,
    /// Prescribed normal fluxes; only entries on fixed edges are meaningful.
    pub g: Vec<f64>,
}

impl MixedSystem {
    pub fn assemble(
        mesh: &TriangleMesh,
        k: &CoefficientTensor,
        roots: &[usize],
        rhs_p: Vec<f64>,
        g: Vec<f64>,
    ) -> Result<Self> {
        let mass = assemble_mass_with_roots(mesh, k, roots)?;
        let div = assemble_div(mesh);
        if rhs_p.len() != mesh.num_triangles() || g.len() != mesh.num_edges() {
            return Err(crate::error::shape_err(
                format!(
                    "{} triangles / {} edges",
                    mesh.num_triangles(),
                    mesh.num_edges()
                ),
                format!("{} / {}", rhs_p.len(), g.len()),
            ));
        }
        Ok(Self {
            rhs_u: vec![0.0; mesh.num_edges()],
            mass,
            div,
            rhs_p,
            fixed: mesh.boundary_edge_flags().to_vec(),
            g,
        })
    }

    pub fn num_edges(&self) -> usize {
        self.mass.nrows()
    }

    pub fn num_triangles(&self) -> usize {
        self.div.nrows()
    }

    /// Total saddle-system size: all edges plus all triangles.
    pub fn size(&self) -> usize {
        self.num_edges() + self.num_triangles()
    }

    pub fn free_edges(&self) -> Vec<usize> {
        (0..self.num_edges()).filter(|&e| !self.fixed[e]).collect()
    }

    /// ‖B u − rhs_p‖_∞.
    pub fn constraint_defect(&self, u: &[f64]) -> f64 {
        let bu = self.div.spmv(u).expect("flux length");
        bu.iter()
            .zip(&self.rhs_p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Crouzeix-Raviart discretization of −Δλ = f with natural boundary conditions.
#[derive(Debug, Clone)]
pub struct CrSystem {
    pub stiffness: SparseMatrix,
    pub rhs: Vec<f64>,
    /// ∫ of each CR basis function; Σ w_E λ_E = Σ_T |T|·avg_T(λ).
    pub mean_weights: Vec<f64>,
}

/// Gradients of the barycentric coordinates of a triangle.
pub fn barycentric_gradients(pts: &[Point; 3]) -> [Point; 3] {
    let two_area = 2.0 * tri_area(pts);
    std::array::from_fn(|k| {
        let a = pts[(k + 1) % 3];
        let b = pts[(k + 2) % 3];
        [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area]
    })
}

/// Local CR stiffness: basis ψ_k = 1 − 2λ_k is 1 at the midpoint of local edge
/// k and 0 at the other two.
pub fn local_cr_stiffness(pts: &[Point; 3]) -> [[f64; 3]; 3] {
    let area = tri_area(pts);
    let g = barycentric_gradients(pts);
    std::array::from_fn(|i| {
        std::array::from_fn(|j| 4.0 * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]))
    })
}

/// Broken gradient of a CR field on triangle t.
pub fn cr_gradient(mesh: &TriangleMesh, lambda: &[f64], t: usize) -> Point {
    let g = barycentric_gradients(&mesh.triangle_points(t));
    let ids = mesh.triangle_edges(t);
    let mut out = [0.0; 2];
    for k in 0..3 {
        out[0] -= 2.0 * lambda[ids[k]] * g[k][0];
        out[1] -= 2.0 * lambda[ids[k]] * g[k][1];
    }
    out
}

/// Assembles the CR system for a piecewise-constant source given as element
/// integrals f_T·|T|.
pub fn assemble_cr_from_integrals(mesh: &TriangleMesh, source_integrals: &[f64]) -> CrSystem {
    let ne = mesh.num_edges();
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    let mut rhs = vec![0.0; ne];
    let mut mean_weights = vec![0.0; ne];
    for t in 0..mesh.num_triangles() {
        let local = local_cr_stiffness(&mesh.triangle_points(t));
        let ids = mesh.triangle_edges(t);
        let area = mesh.area(t);
        for i in 0..3 {
            rhs[ids[i]] += source_integrals[t] / 3.0;
            mean_weights[ids[i]] += area / 3.0;
            for j in 0..3 {
                trip.push((ids[i], ids[j], local[i][j]));
            }
        }
    }
    CrSystem {
        stiffness: SparseMatrix::from_triplets(ne, ne, &trip),
        rhs,
        mean_weights,
    }
}

/// CR system for source f, using the same edge-midpoint element averages as the mixed rhs.
pub fn assemble_cr(mesh: &TriangleMesh, f: impl Fn(f64, f64) -> f64) -> CrSystem {
    assemble_cr_from_integrals(mesh, &assemble_rhs(mesh, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, DenseMatrix};
    use crate::mesh::{build_square_mesh, distort_mesh, uniform_refine};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent quadrature: Duffy-collapsed tensor Gauss-Legendre, exact far
    /// beyond the degree-2 integrands used here.
    fn gauss_integral(pts: &[Point; 3], f: impl Fn(Point) -> f64) -> f64 {
        let nodes = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        let weights = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let area = tri_area(pts);
        let mut total = 0.0;
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                let s = 0.5 * (a + 1.0);
                let t = 0.5 * (b + 1.0) * (1.0 - s);
                let jac = 0.25 * (1.0 - s);
                let x = [
                    pts[0][0] + s * (pts[1][0] - pts[0][0]) + t * (pts[2][0] - pts[0][0]),
                    pts[0][1] + s * (pts[1][1] - pts[0][1]) + t * (pts[2][1] - pts[0][1]),
                ];
                total += wa * wb * jac * f(x);
            }
        }
        total * 2.0 * area
    }

    #[test]
    fn reference_mass_matches_quadrature_oracle() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let signs = [1.0, -1.0, 1.0];
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let m = local_mass(&pts, &signs, &[id; 3]);
        let area = 0.5;
        for i in 0..3 {
            for j in 0..3 {
                let oracle = gauss_integral(&pts, |x| {
                    let a = [x[0] - pts[i][0], x[1] - pts[i][1]];
                    let b = [x[0] - pts[j][0], x[1] - pts[j][1]];
                    signs[i] * signs[j] * (a[0] * b[0] + a[1] * b[1]) / (4.0 * area * area)
                });
                assert!(
                    (m[i][j] - oracle).abs() <= 1e-14 * oracle.abs().max(1.0),
                    "{i}{j}"
                );
            }
        }
        // frozen values for the unit right triangle, K = I
        let unsigned = [
            [1.0 / 6.0, 0.0, 0.0],
            [0.0, 1.0 / 3.0, -1.0 / 6.0],
            [0.0, -1.0 / 6.0, 1.0 / 3.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                let expected = signs[i] * signs[j] * unsigned[i][j];
                assert!((m[i][j] - expected).abs() < 1e-15, "{i}{j}: {}", m[i][j]);
            }
        }
    }

    #[test]
    fn distorted_mass_matches_oracle_for_anisotropic_constant_k() {
        let mesh = distort_mesh(&build_square_mesh(4), 0.35, 4).unwrap();
        let k = [[2.0, 0.5], [0.5, 1.0]];
        let kinv = invert_spd(k, [0.0, 0.0]).unwrap();
        for t in [0, 7, 19] {
            let pts = mesh.triangle_points(t);
            let signs = mesh.triangle_signs(t);
            let area = mesh.area(t);
            let m = local_mass(&pts, &signs, &[kinv; 3]);
            for i in 0..3 {
                for j in 0..3 {
                    let oracle = gauss_integral(&pts, |x| {
                        let a = [x[0] - pts[i][0], x[1] - pts[i][1]];
                        let b = [x[0] - pts[j][0], x[1] - pts[j][1]];
                        let ka = [
                            kinv[0][0] * a[0] + kinv[0][1] * a[1],
                            kinv[1][0] * a[0] + kinv[1][1] * a[1],
                        ];
                        signs[i] * signs[j] * (ka[0] * b[0] + ka[1] * b[1]) / (4.0 * area * area)
                    });
                    assert!((m[i][j] - oracle).abs() <= 1e-14 * oracle.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn mass_is_symmetric_and_scales() {
        let mesh = build_square_mesh(4);
        let m = assemble_mass(&mesh, &CoefficientTensor::Smooth).unwrap();
        assert_eq!(m.max_asymmetry(), 0.0);
        let m1 = assemble_mass(&mesh, &CoefficientTensor::Identity).unwrap();
        let m3 = assemble_mass(&mesh, &CoefficientTensor::Scalar(3.0)).unwrap();
        for (a, b) in m1.values().iter().zip(m3.values()) {
            assert!((a / 3.0 - b).abs() <= 1e-15 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn mass_positive_on_free_dofs() {
        let mesh = build_square_mesh(4);
        let m = assemble_mass(&mesh, &example_tensor(2, 0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..mesh.num_edges())
                .map(|e| {
                    if mesh.is_boundary_edge(e) {
                        0.0
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            assert!(dot(&x, &m.spmv(&x).unwrap()) > 0.0);
        }
    }

    #[test]
    fn non_spd_tensor_is_rejected() {
        let mesh = build_square_mesh(1);
        assert!(matches!(
            assemble_mass(&mesh, &CoefficientTensor::Scalar(-1.0)),
            Err(Error::TensorNotSpd { .. })
        ));
    }

    #[test]
    fn div_columns_and_kernel() {
        let mesh = build_square_mesh(4);
        let b = assemble_div(&mesh);
        let bt = b.transpose();
        for e in 0..mesh.num_edges() {
            let mut col: Vec<f64> = bt.row(e).map(|(_, v)| v).collect();
            col.sort_by(f64::total_cmp);
            if mesh.is_boundary_edge(e) {
                assert_eq!(col.len(), 1);
            } else {
                assert_eq!(col, vec![-1.0, 1.0]);
            }
        }
        // flux of the constant field (1, 0)
        let u: Vec<f64> = (0..mesh.num_edges())
            .map(|e| mesh.edge_normal(e)[0] * mesh.edge_length(e))
            .collect();
        assert!(b.spmv(&u).unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn div_telescopes_for_zero_boundary_flux() {
        let mesh = build_square_mesh(5);
        let b = assemble_div(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u: Vec<f64> = (0..mesh.num_edges())
            .map(|e| {
                if mesh.is_boundary_edge(e) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        assert!(b.spmv(&u).unwrap().iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn div_matches_elementwise_integral() {
        let mesh = uniform_refine(&distort_mesh(&build_square_mesh(3), 0.3, 5).unwrap()).0;
        let b = assemble_div(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u: Vec<f64> = (0..mesh.num_edges())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let bu = b.spmv(&u).unwrap();
        for t in 0..mesh.num_triangles() {
            // div of the affine RT0 field from two point evaluations
            let c = mesh.centroid(t);
            let h = 1e-3;
            let vx1 = rt0_value(&mesh, &u, t, [c[0] + h, c[1]]);
            let vx0 = rt0_value(&mesh, &u, t, [c[0] - h, c[1]]);
            let vy1 = rt0_value(&mesh, &u, t, [c[0], c[1] + h]);
            let vy0 = rt0_value(&mesh, &u, t, [c[0], c[1] - h]);
            let div = (vx1[0] - vx0[0] + vy1[1] - vy0[1]) / (2.0 * h);
            assert!((bu[t] + div * mesh.area(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn rhs_cases() {
        let mesh = distort_mesh(&build_square_mesh(4), 0.3, 2).unwrap();
        assert!(assemble_rhs(&mesh, |_, _| 0.0).iter().all(|&v| v == 0.0));
        let ones = assemble_rhs(&mesh, |_, _| 1.0);
        for (t, v) in ones.iter().enumerate() {
            assert!((v - mesh.area(t)).abs() < 1e-16);
        }
        assert!((ones.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let f = assemble_rhs(&build_square_mesh(8), default_source);
        assert!(f.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn incompatible_source_is_reported() {
        let mesh = build_square_mesh(4);
        let rhs = assemble_rhs(&mesh, |_, _| 1.0);
        assert!(matches!(
            check_compatibility(&mesh, &rhs, &vec![0.0; mesh.num_edges()]),
            Err(Error::Incompatible { .. })
        ));
        let rhs = assemble_rhs(&mesh, default_source);
        check_compatibility(&mesh, &rhs, &vec![0.0; mesh.num_edges()]).unwrap();
    }

    #[test]
    fn example_tensors() {
        let k2 = example_tensor(2, 0).unwrap();
        assert_eq!(k2.eval([0.0, 0.0], 0), [[1.0, 0.0], [0.0, 1.0]]);
        let at11 = k2.eval([1.0, 1.0], 0);
        assert_eq!(at11, [[9.0, 3.0], [3.0, 23.0]]);
        let eig = crate::linalg::dense_sym_eig(&DenseMatrix::from_rows(&[
            at11[0].to_vec(),
            at11[1].to_vec(),
        ]))
        .unwrap();
        assert!(eig[0] >= 1.0 && eig[1] <= 25.0);
        let allowed: Vec<f64> = (0..=5).map(|p| 10f64.powi(-p)).collect();
        for seed in 0..10 {
            let CoefficientTensor::Cellwise { values } = example_tensor(3, seed).unwrap() else {
                panic!("cellwise expected")
            };
            assert_eq!(values.len(), 16);
            assert!(values.iter().all(|v| allowed.contains(v)));
        }
        assert_eq!(example_tensor(3, 5).unwrap(), example_tensor(4, 5).unwrap());
        assert!(example_tensor(5, 0).is_err());
    }

    #[test]
    fn cr_reference_stiffness() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let s = local_cr_stiffness(&pts);
        // oracle: finite-difference gradients of the midpoint-interpolating basis
        let mids = local_midpoints(&pts);
        let basis = |k: usize, x: Point| {
            // affine function with value δ_kj at midpoint j
            let a = mids[0];
            let b = mids[1];
            let c = mids[2];
            let m = DenseMatrix::from_rows(&[
                vec![1.0, a[0], a[1]],
                vec![1.0, b[0], b[1]],
                vec![1.0, c[0], c[1]],
            ]);
            let mut rhs = vec![0.0; 3];
            rhs[k] = 1.0;
            let coef = crate::linalg::dense_solve(&m, &rhs).unwrap();
            coef[0] + coef[1] * x[0] + coef[2] * x[1]
        };
        let grad = |k: usize| {
            let h = 1e-4;
            let x = [0.3, 0.3];
            [
                (basis(k, [x[0] + h, x[1]]) - basis(k, [x[0] - h, x[1]])) / (2.0 * h),
                (basis(k, [x[0], x[1] + h]) - basis(k, [x[0], x[1] - h])) / (2.0 * h),
            ]
        };
        for i in 0..3 {
            for j in 0..3 {
                let gi = grad(i);
                let gj = grad(j);
                let oracle = 0.5 * (gi[0] * gj[0] + gi[1] * gj[1]);
                assert!((s[i][j] - oracle).abs() < 1e-8);
            }
        }
        // closed form on this triangle: 4 × P1 stiffness, reindexed
        assert_eq!(s, [[4.0, -2.0, -2.0], [-2.0, 2.0, 0.0], [-2.0, 0.0, 2.0]]);
    }

    #[test]
    fn cr_kernel_and_zero_rhs() {
        let mesh = build_square_mesh(4);
        let cr = assemble_cr(&mesh, |_, _| 0.0);
        assert!(cr.rhs.iter().all(|&v| v == 0.0));
        let s1 = cr.stiffness.spmv(&vec![1.0; mesh.num_edges()]).unwrap();
        assert!(s1.iter().all(|v| v.abs() < 1e-14));
        assert!((cr.mean_weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
