//! Vertex-patch local problems: the exact kernel step, the dense saddle solve
//! and the diagonal-preconditioned inexact solve with line search.

use crate::error::{Error, Result};
use crate::hierarchy::PatchIndexSet;
use crate::linalg::{dot, DenseMatrix, LuFactor, SparseMatrix};

/// A patch together with its cached local matrices and factorizations.
#[derive(Debug, Clone)]
pub struct LocalPatch {
    pub patch: PatchIndexSet,
    /// M restricted to the patch edges.
    pub mass: DenseMatrix,
    /// B restricted to (patch triangles × patch edges).
    pub div: DenseMatrix,
    kernel_energy: f64,
    exact: DenseMatrix,
    exact_lu: LuFactor,
    diag: DenseMatrix,
    diag_lu: LuFactor,
}

/// Saddle matrix [[A, B'ᵀ], [B', 0]] where B' drops the last pressure row.
fn pinned_saddle(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let n = a.nrows();
    let m = b.nrows().saturating_sub(1);
    let mut s = DenseMatrix::zeros(n + m, n + m);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = a[(i, j)];
        }
    }
    for r in 0..m {
        for j in 0..n {
            s[(n + r, j)] = b[(r, j)];
            s[(j, n + r)] = b[(r, j)];
        }
    }
    s
}

/// Result of an inexact local solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InexactStep {
    /// Search direction from the preconditioned saddle system.
    pub direction: Vec<f64>,
    /// Line-search factor α = (r, s) / (M s, s).
    pub alpha: f64,
    /// Correction α·s.
    pub correction: Vec<f64>,
}

impl LocalPatch {
    pub fn new(patch: PatchIndexSet, mass: &SparseMatrix, div: &SparseMatrix) -> Result<Self> {
        let m_loc = mass.submatrix(&patch.edge_ids, &patch.edge_ids);
        let b_loc = div.submatrix(&patch.triangle_ids, &patch.edge_ids);
        let c = &patch.kernel_vector;
        let kernel_energy = m_loc.bilinear(c, c);
        if !(kernel_energy > 0.0) {
            return Err(Error::NonPositiveEnergy(kernel_energy));
        }
        let exact = pinned_saddle(&m_loc, &b_loc);
        let exact_lu = LuFactor::new(&exact)?;
        let diag = pinned_saddle(&DenseMatrix::from_diagonal(&m_loc.diagonal()), &b_loc);
        let diag_lu = LuFactor::new(&diag)?;
        Ok(Self {
            patch,
            mass: m_loc,
            div: b_loc,
            kernel_energy,
            exact,
            exact_lu,
            diag,
            diag_lu,
        })
    }

    pub fn len(&self) -> usize {
        self.patch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patch.is_empty()
    }

    pub fn edge_ids(&self) -> &[usize] {
        &self.patch.edge_ids
    }

    pub fn kernel_vector(&self) -> &[f64] {
        &self.patch.kernel_vector
    }

    /// cᵀ M_loc c.
    pub fn kernel_energy(&self) -> f64 {
        self.kernel_energy
    }

    /// Gathers a global vector onto the patch edges.
    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        self.patch.edge_ids.iter().map(|&e| global[e]).collect()
    }

    /// κ(D⁻¹M_loc) for D = diag(M_loc).
    pub fn diagonal_condition(&self) -> Result<f64> {
        let d = self.mass.diagonal();
        let ev = crate::linalg::generalized_sym_eig(&self.mass, &DenseMatrix::from_diagonal(&d))?;
        Ok(ev[ev.len() - 1] / ev[0])
    }

    /// ‖v‖²_M on the patch.
    pub fn energy_of(&self, v: &[f64]) -> f64 {
        self.mass.bilinear(v, v)
    }

    fn solve_with(
        &self,
        a: &DenseMatrix,
        lu: &LuFactor,
        r_loc: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        let mut rhs = vec![0.0; lu.dim()];
        rhs[..n].copy_from_slice(r_loc);
        let sol = lu.solve_refined(a, &rhs, 1)?;
        let e = sol[..n].to_vec();
        let mut p = sol[n..].to_vec();
        p.push(0.0);
        Ok((e, p))
    }

    /// Inexact solve with an arbitrary SPD local preconditioner `d` in place
    /// of M_loc (not cached).
    pub fn inexact_solve_with(&self, r_loc: &[f64], d: &DenseMatrix) -> Result<InexactStep> {
        if d.nrows() != self.len() || !d.is_square() {
            return Err(crate::error::shape_err(self.len(), d.nrows()));
        }
        crate::linalg::cholesky(d)?;
        let a = pinned_saddle(d, &self.div);
        let lu = LuFactor::new(&a)?;
        self.line_search(r_loc, &a, &lu)
    }

    fn line_search(&self, r_loc: &[f64], a: &DenseMatrix, lu: &LuFactor) -> Result<InexactStep> {
        let (s, _) = self.solve_with(a, lu, r_loc)?;
        let ss = self.mass.bilinear(&s, &s);
        if s.iter().all(|v| *v == 0.0) {
            return Ok(InexactStep {
                correction: s.clone(),
                direction: s,
                alpha: 1.0,
            });
        }
        if !(ss > 0.0) {
            return Err(Error::NonPositiveEnergy(ss));
        }
        let alpha = dot(r_loc, &s) / ss;
        Ok(InexactStep {
            correction: s.iter().map(|v| alpha * v).collect(),
            direction: s,
            alpha,
        })
    }
}

/// Exact kernel step t = cᵀr / cᵀM_loc c; the correction is t·c.
pub fn local_kernel_solve(patch: &LocalPatch, r_loc: &[f64]) -> f64 {
    dot(patch.kernel_vector(), r_loc) / patch.kernel_energy
}

/// Dense solve of the local saddle system with the last local pressure pinned.
/// Returns (velocity correction, local pressure).
pub fn local_dense_saddle_solve(patch: &LocalPatch, r_loc: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    patch.solve_with(&patch.exact, &patch.exact_lu, r_loc)
}

/// Inexact solve with D = diag(M_loc) followed by an exact line search.
pub fn local_inexact_solve(patch: &LocalPatch, r_loc: &[f64]) -> Result<InexactStep> {
    patch.line_search(r_loc, &patch.diag, &patch.diag_lu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_div, assemble_mass, example_tensor};
    use crate::hierarchy::mesh_patches;
    use crate::mesh::{build_square_mesh, distort_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patches(seed: u64) -> Vec<LocalPatch> {
        let mesh = distort_mesh(&build_square_mesh(4), 0.3, seed).unwrap();
        let k = example_tensor(2, 0).unwrap();
        let m = assemble_mass(&mesh, &k).unwrap();
        let b = assemble_div(&mesh);
        mesh_patches(&mesh, 0)
            .into_iter()
            .map(|p| LocalPatch::new(p, &m, &b).unwrap())
            .collect()
    }

    #[test]
    fn trivial_residuals() {
        for p in patches(3) {
            let zero = vec![0.0; p.len()];
            assert_eq!(local_kernel_solve(&p, &zero), 0.0);
            let (e, _) = local_dense_saddle_solve(&p, &zero).unwrap();
            assert!(e.iter().all(|v| *v == 0.0));
            let step = local_inexact_solve(&p, &zero).unwrap();
            assert!(step.correction.iter().all(|v| *v == 0.0));

            let mc = p.mass.matvec(p.kernel_vector()).unwrap();
            assert!((local_kernel_solve(&p, &mc) - 1.0).abs() < 1e-13);
            let (e, _) = local_dense_saddle_solve(&p, &mc).unwrap();
            for (a, b) in e.iter().zip(p.kernel_vector()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_step_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut count = 0;
        for seed in 0..6 {
            for p in patches(seed) {
                let r: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let t = local_kernel_solve(&p, &r);
                let (e, _) = local_dense_saddle_solve(&p, &r).unwrap();
                let div = p.div.matvec(&e).unwrap();
                assert!(div.iter().all(|v| v.abs() < 1e-12));
                for (a, c) in e.iter().zip(p.kernel_vector()) {
                    assert!((a - t * c).abs() < 1e-11);
                }
                count += 1;
            }
        }
        assert!(count >= 50);
    }

    #[test]
    fn inexact_with_exact_preconditioner_has_unit_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in patches(1) {
            let r: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let step = p.inexact_solve_with(&r, &p.mass).unwrap();
            assert!((step.alpha - 1.0).abs() < 1e-12);
            let (e, _) = local_dense_saddle_solve(&p, &r).unwrap();
            for (a, b) in e.iter().zip(&step.correction) {
                assert!((a - b).abs() < 1e-12);
            }
            let step = p
                .inexact_solve_with(&r, &DenseMatrix::from_diagonal(&p.mass.diagonal()))
                .unwrap();
            let first_order = dot(&p.mass.matvec(&step.correction).unwrap(), &step.correction)
                - dot(&r, &step.correction);
            assert!(first_order.abs() < 1e-12 * dot(&r, &r).max(1.0));
            assert!(p
                .div
                .matvec(&step.correction)
                .unwrap()
                .iter()
                .all(|v| v.abs() < 1e-12));
        }
    }
}
