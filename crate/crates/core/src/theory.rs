//! Dense validation of the subspace-correction convergence theory on small
//! hierarchies: stable-decomposition constant C_A, strengthened Cauchy-Schwarz
//! constant C_S, the sharp constant c₀ and measured contraction.
//!
//! Every subspace is one-dimensional: the span of a vertex-patch kernel
//! vector prolongated to the finest level. Fields in the global kernel are
//! represented by coordinates y in the basis Z of finest-level patch kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::CoefficientTensor;
use crate::hierarchy::MeshHierarchy;
use crate::linalg::{
    dot, generalized_sym_eig, spectral_norm, sym_eigen, sym_pseudo_inverse, DenseMatrix, LuFactor,
};
use crate::mg::{MultigridSolver, SmootherKind, SweepOrder};

/// Largest kernel dimension handled by the dense computations.
pub const MAX_DENSE_KERNEL_DIM: usize = 60;

const PINV_CUTOFF: f64 = 1e-12;

/// Ordered one-dimensional subspaces of the global kernel.
#[derive(Debug, Clone)]
pub struct KernelBasis {
    mass: DenseMatrix,
    columns: Vec<Vec<f64>>,
    kernel: Vec<Vec<f64>>,
    /// Level of each column (0 for hand-built bases).
    pub levels: Vec<usize>,
}

/// Quantities reduced to kernel coordinates.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// M-Gram matrix of the columns.
    pub gram: DenseMatrix,
    /// ZᵀMZ.
    pub kernel_mass: DenseMatrix,
    /// Coordinates of the columns: Z·coords = columns.
    pub coords: DenseMatrix,
}

impl ReducedBasis {
    pub fn num_subspaces(&self) -> usize {
        self.gram.nrows()
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel_mass.nrows()
    }

    fn energies(&self) -> Vec<f64> {
        self.gram.diagonal()
    }
}

fn symmetrize(a: &mut DenseMatrix) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
}

fn gram(mass: &DenseMatrix, left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<DenseMatrix> {
    let mut g = DenseMatrix::zeros(left.len(), right.len());
    let m_right = right
        .iter()
        .map(|v| mass.matvec(v))
        .collect::<Result<Vec<_>>>()?;
    for (i, a) in left.iter().enumerate() {
        for (j, mb) in m_right.iter().enumerate() {
            g[(i, j)] = dot(a, mb);
        }
    }
    Ok(g)
}

impl KernelBasis {
    /// `columns` in sweep order and a basis `kernel` of the space they span,
    /// both as vectors in the space carrying the SPD form `mass`.
    pub fn new(mass: DenseMatrix, columns: Vec<Vec<f64>>, kernel: Vec<Vec<f64>>) -> Result<Self> {
        let n = mass.nrows();
        if columns.is_empty() || kernel.is_empty() {
            return Err(Error::InvalidArgument("empty subspace collection".into()));
        }
        if let Some(bad) = columns.iter().chain(&kernel).find(|v| v.len() != n) {
            return Err(crate::error::shape_err(n, bad.len()));
        }
        let levels = vec![0; columns.len()];
        Ok(Self {
            mass,
            columns,
            kernel,
            levels,
        })
    }

    /// Patch kernels of every level of `solver`, coarsest level first,
    /// prolongated to the finest level.
    pub fn from_solver(solver: &MultigridSolver) -> Result<Self> {
        let all: Vec<usize> = (0..solver.num_levels()).collect();
        Self::from_solver_levels(solver, &all)
    }

    /// As [`KernelBasis::from_solver`] restricted to the listed levels.
    pub fn from_solver_levels(solver: &MultigridSolver, levels: &[usize]) -> Result<Self> {
        let top = solver.num_levels() - 1;
        let finest = solver.finest();
        let ne = finest.system.num_edges();
        let kernel: Vec<Vec<f64>> = finest
            .patches
            .iter()
            .map(|p| p.patch.kernel_flux(ne))
            .collect();
        let mut columns = Vec::new();
        let mut owners = Vec::new();
        let mut sorted = levels.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &l in &sorted {
            if l > top {
                return Err(Error::InvalidArgument(format!("level {l} out of range")));
            }
            let nl = solver.level(l).system.num_edges();
            for p in &solver.level(l).patches {
                columns.push(prolongate_to_finest(solver, l, &p.patch.kernel_flux(nl)));
                owners.push(l);
            }
        }
        let mut basis = Self::new(finest.system.mass.to_dense(), columns, kernel)?;
        basis.levels = owners;
        Ok(basis)
    }

    /// Same subspaces swept in the opposite order.
    pub fn reversed(&self) -> Self {
        let mut out = self.clone();
        out.columns.reverse();
        out.levels.reverse();
        out
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn mass(&self) -> &DenseMatrix {
        &self.mass
    }

    /// Gram matrices and column coordinates. Fails when the kernel basis is
    /// rank deficient or a column lies outside its span.
    pub fn reduce(&self) -> Result<ReducedBasis> {
        let mut g = gram(&self.mass, &self.columns, &self.columns)?;
        symmetrize(&mut g);
        if let Some(i) = (0..g.nrows()).find(|&i| !(g[(i, i)] > 0.0)) {
            return Err(Error::NonPositiveEnergy(g[(i, i)]));
        }
        let mut mk = gram(&self.mass, &self.kernel, &self.kernel)?;
        symmetrize(&mut mk);
        crate::linalg::cholesky(&mk)
            .map_err(|_| Error::InvalidArgument("kernel basis is rank deficient".into()))?;
        let zmc = gram(&self.mass, &self.kernel, &self.columns)?;
        let lu = LuFactor::new(&mk)?;
        let n = mk.nrows();
        let m = self.columns.len();
        let mut coords = DenseMatrix::zeros(n, m);
        for j in 0..m {
            let x = lu.solve(&zmc.column(j))?;
            for i in 0..n {
                coords[(i, j)] = x[i];
            }
        }
        // reconstruction defect in the M-norm
        for (j, c) in self.columns.iter().enumerate() {
            let mut d = c.clone();
            for (i, z) in self.kernel.iter().enumerate() {
                let a = coords[(i, j)];
                for (dk, zk) in d.iter_mut().zip(z) {
                    *dk -= a * zk;
                }
            }
            let err = self.mass.bilinear(&d, &d).max(0.0).sqrt();
            if err > 1e-8 * g[(j, j)].sqrt() {
                return Err(Error::InvalidArgument(format!(
                    "column {j} is not in the span of the kernel basis (defect {err:e})"
                )));
            }
        }
        Ok(ReducedBasis {
            gram: g,
            kernel_mass: mk,
            coords,
        })
    }
}

fn prolongate_to_finest(solver: &MultigridSolver, level: usize, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for l in level..solver.num_levels() - 1 {
        out = solver.prolongation(l).apply(&out);
    }
    out
}

fn restrict_from_finest(solver: &MultigridSolver, level: usize, r: &[f64]) -> Vec<f64> {
    let mut out = r.to_vec();
    for l in (level..solver.num_levels() - 1).rev() {
        out = solver.prolongation(l).restrict(&out);
    }
    out
}

/// Sharp stable-decomposition constant: sup over v of the minimal Σ‖vᵢ‖²
/// over decompositions, divided by ‖v‖².
pub fn estimate_ca(r: &ReducedBasis) -> Result<f64> {
    let d = r.energies();
    let n = r.kernel_dim();
    let mut h = DenseMatrix::zeros(n, n);
    for (k, dk) in d.iter().enumerate() {
        for i in 0..n {
            let gi = r.coords[(i, k)] / dk;
            for j in 0..n {
                h[(i, j)] += gi * r.coords[(j, k)];
            }
        }
    }
    symmetrize(&mut h);
    // minimal split energy of v is vᵀH⁻¹v
    crate::linalg::cholesky(&h)
        .map_err(|_| Error::InvalidArgument("subspaces do not span the kernel".into()))?;
    let lu = LuFactor::new(&h)?;
    let mut hinv = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = lu.solve(&DenseMatrix::identity(n).column(j))?;
        for i in 0..n {
            hinv[(i, j)] = col[i];
        }
    }
    symmetrize(&mut hinv);
    let mu = generalized_sym_eig(&hinv, &r.kernel_mass)?;
    Ok(mu[mu.len() - 1])
}

/// Strictly upper part of the normalized Gram matrix.
fn normalized_upper(r: &ReducedBasis) -> DenseMatrix {
    let d = r.energies();
    let m = d.len();
    let mut u = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            u[(i, j)] = r.gram[(i, j)] / (d[i] * d[j]).sqrt();
        }
    }
    u
}

/// Sharp strengthened Cauchy-Schwarz constant ‖U‖₂².
pub fn estimate_cs(r: &ReducedBasis) -> Result<f64> {
    let s = spectral_norm(&normalized_upper(r))?;
    Ok(s * s)
}

/// Sharp constant c₀ = sup_v inf_{Σvᵢ=v} Σᵢ ‖Pᵢ Σ_{j>i} vⱼ‖².
pub fn compute_c0_xz(r: &ReducedBasis) -> Result<f64> {
    let m = r.num_subspaces();
    let n = r.kernel_dim();
    // ‖Pᵢ w‖² = (cᵢ, w)² / ‖cᵢ‖², so the objective is ‖L x‖² with L = U·diag(√dᵢ).
    let d = r.energies();
    let mut l = normalized_upper(r);
    for i in 0..m {
        for j in 0..m {
            l[(i, j)] *= d[j].sqrt();
        }
    }
    let mut q = l.transpose().matmul(&l)?;
    symmetrize(&mut q);
    let g = &r.coords;
    // x = G⁺y + N z with N spanning ker G
    let mut ggt = g.matmul(&g.transpose())?;
    symmetrize(&mut ggt);
    let ggt_inv = sym_pseudo_inverse(&ggt, PINV_CUTOFF)?;
    let gplus = g.transpose().matmul(&ggt_inv)?;
    let mut gtg = g.transpose().matmul(g)?;
    symmetrize(&mut gtg);
    let (vals, vecs) = sym_eigen(&gtg)?;
    let top = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let null: Vec<Vec<f64>> = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= 1e-10 * top)
        .map(|(k, _)| vecs.column(k))
        .collect();
    let w = if null.is_empty() {
        q
    } else {
        let nm = DenseMatrix::from_columns(&null);
        let qn = q.matmul(&nm)?;
        let mut nqn = nm.transpose().matmul(&qn)?;
        symmetrize(&mut nqn);
        let pinv = sym_pseudo_inverse(&nqn, PINV_CUTOFF)?;
        let corr = qn.matmul(&pinv)?.matmul(&qn.transpose())?;
        q.add(&corr.scaled(-1.0))?
    };
    let mut s = gplus.transpose().matmul(&w)?.matmul(&gplus)?;
    symmetrize(&mut s);
    debug_assert_eq!(s.nrows(), n);
    let vals = generalized_sym_eig(&s, &r.kernel_mass)?;
    Ok(vals[vals.len() - 1].max(0.0))
}

/// Dense error operator Π(I − Pᵢ) of one sweep in kernel coordinates.
pub fn sweep_operator(r: &ReducedBasis) -> Result<DenseMatrix> {
    let n = r.kernel_dim();
    let d = r.energies();
    let mut e = DenseMatrix::identity(n);
    for k in 0..r.num_subspaces() {
        let gk = r.coords.column(k);
        let mg = r.kernel_mass.matvec(&gk)?;
        // E ← (I − gₖ (M gₖ)ᵀ / dₖ) E
        for col in 0..n {
            let t = (0..n).map(|i| mg[i] * e[(i, col)]).sum::<f64>() / d[k];
            for i in 0..n {
                e[(i, col)] -= t * gk[i];
            }
        }
    }
    Ok(e)
}

/// ‖E‖²_A for an operator in kernel coordinates.
pub fn energy_norm_sq(e: &DenseMatrix, kernel_mass: &DenseMatrix) -> Result<f64> {
    let mut a = e.transpose().matmul(kernel_mass)?.matmul(e)?;
    symmetrize(&mut a);
    let vals = generalized_sym_eig(&a, kernel_mass)?;
    Ok(vals[vals.len() - 1].max(0.0))
}

/// Sampling schedule for measured contraction rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampling {
    pub trials: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            trials: 4,
            burn_in: 3,
            samples: 8,
            seed: 1,
        }
    }
}

fn max_ratio(
    sampling: &Sampling,
    dim: usize,
    mut norm_sq: impl FnMut(&[f64]) -> Result<f64>,
    mut step: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut rho = 0.0f64;
    for _ in 0..sampling.trials {
        let mut y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let start = norm_sq(&y)?;
        let mut prev = start;
        for k in 0..sampling.burn_in + sampling.samples {
            y = step(&y)?;
            let cur = norm_sq(&y)?;
            if k >= sampling.burn_in && prev > 1e-300 && prev > 1e-26 * start {
                rho = rho.max(cur / prev);
            }
            prev = cur;
        }
    }
    Ok(rho)
}

/// Largest observed per-sweep energy ratio for the dense sweep operator.
pub fn measure_dense_rate(r: &ReducedBasis, sampling: &Sampling) -> Result<f64> {
    let e = sweep_operator(r)?;
    let mk = &r.kernel_mass;
    max_ratio(
        sampling,
        r.kernel_dim(),
        |y| Ok(mk.bilinear(y, y)),
        |y| e.matvec(y),
    )
}

/// One successive-subspace-correction sweep on the homogeneous problem,
/// coarsest level first and patches in ascending order on each level, using
/// the solver's own patch machinery.
pub fn sso_sweep(solver: &MultigridSolver, w: &mut [f64], kind: SmootherKind) -> Result<()> {
    let finest = solver.finest();
    for l in 0..solver.num_levels() {
        let level = solver.level(l);
        let mw = finest.system.mass.spmv(w)?;
        let r_fine: Vec<f64> = mw
            .iter()
            .zip(&finest.system.fixed)
            .map(|(v, &f)| if f { 0.0 } else { -v })
            .collect();
        let mut r = restrict_from_finest(solver, l, &r_fine);
        for (v, &f) in r.iter_mut().zip(&level.system.fixed) {
            if f {
                *v = 0.0;
            }
        }
        let mut x = vec![0.0; r.len()];
        level.sweep_with_residual(&mut x, &mut r, SweepOrder::Ascending, kind)?;
        for (wi, xi) in w.iter_mut().zip(prolongate_to_finest(solver, l, &x)) {
            *wi += xi;
        }
    }
    Ok(())
}

/// Largest observed per-sweep energy ratio of [`sso_sweep`] from random
/// divergence-free starts.
pub fn measure_sso_rate(
    solver: &MultigridSolver,
    kind: SmootherKind,
    sampling: &Sampling,
) -> Result<f64> {
    let finest = solver.finest();
    let ne = finest.system.num_edges();
    let kernel: Vec<Vec<f64>> = finest
        .patches
        .iter()
        .map(|p| p.patch.kernel_flux(ne))
        .collect();
    let mass = &finest.system.mass;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut rho = 0.0f64;
    for _ in 0..sampling.trials {
        let mut w = vec![0.0; ne];
        for z in &kernel {
            let c: f64 = rng.gen_range(-1.0..1.0);
            for (wi, zi) in w.iter_mut().zip(z) {
                *wi += c * zi;
            }
        }
        let start = dot(&w, &mass.spmv(&w)?);
        let mut prev = start;
        for k in 0..sampling.burn_in + sampling.samples {
            sso_sweep(solver, &mut w, kind)?;
            let cur = dot(&w, &mass.spmv(&w)?);
            if k >= sampling.burn_in && prev > 1e-300 && prev > 1e-26 * start {
                rho = rho.max(cur / prev);
            }
            prev = cur;
        }
    }
    Ok(rho)
}

/// 1 − 1/(1 + x).
pub fn rate_from(x: f64) -> f64 {
    1.0 - 1.0 / (1.0 + x)
}

/// Rate for inexact local solves: 1 − 1/(1 + C_A [√C_S + (κ − 1)/2]²).
pub fn inexact_rate(c_a: f64, c_s: f64, kappa: f64) -> f64 {
    let t = c_s.sqrt() + 0.5 * (kappa - 1.0);
    rate_from(c_a * t * t)
}

/// Brute-forced constants, measured rates and the checks between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryEstimates {
    pub levels: usize,
    pub num_subspaces: usize,
    pub kernel_dim: usize,
    pub c_a: f64,
    pub c_s: f64,
    pub c0: f64,
    /// Measured energy contraction per sweep, exact local solves.
    pub rho_measured: f64,
    /// Measured energy contraction per sweep, diagonal inexact local solves.
    pub rho_inexact: f64,
    /// ‖Π(I − Pᵢ)‖²_A from the dense sweep operator.
    pub sweep_norm_sq: f64,
    /// 1 − 1/(1 + c₀).
    pub bound_c0: f64,
    /// 1 − 1/(1 + C_A·C_S).
    pub bound: f64,
    /// Largest κ(Dᵢ⁻¹Aᵢ) over all patches.
    pub kappa_max: f64,
    /// (κ − 1)/(κ + 1) for `kappa_max`.
    pub epsilon_max: f64,
    pub bound_inexact: f64,
    pub xz_identity_pass: bool,
    pub bound_chain_pass: bool,
    pub inexact_pass: bool,
}

impl TheoryEstimates {
    pub fn all_pass(&self) -> bool {
        self.xz_identity_pass && self.bound_chain_pass && self.inexact_pass
    }

    pub fn xz_defect(&self) -> f64 {
        (self.sweep_norm_sq - self.bound_c0).abs()
    }
}

const SLACK: f64 = 1e-8;

/// Constants and checks for a hand-built basis, with exact local solves
/// (κ = 1) and the rate measured on the dense sweep operator.
pub fn estimates_for_basis(basis: &KernelBasis, sampling: &Sampling) -> Result<TheoryEstimates> {
    let r = basis.reduce()?;
    let rho = measure_dense_rate(&r, sampling)?;
    assemble_estimates(basis, &r, rho, rho, 1.0)
}

fn assemble_estimates(
    basis: &KernelBasis,
    r: &ReducedBasis,
    rho: f64,
    rho_inexact: f64,
    kappa: f64,
) -> Result<TheoryEstimates> {
    let c_a = estimate_ca(r)?;
    let c_s = estimate_cs(r)?;
    let c0 = compute_c0_xz(r)?;
    let sweep_norm_sq = energy_norm_sq(&sweep_operator(r)?, &r.kernel_mass)?;
    let bound_c0 = rate_from(c0);
    let bound = rate_from(c_a * c_s);
    let bound_inexact = inexact_rate(c_a, c_s, kappa);
    let xz_identity_pass = (sweep_norm_sq - bound_c0).abs() <= SLACK;
    let bound_chain_pass = rho <= bound_c0 + SLACK && bound_c0 <= bound + SLACK && rho < 1.0;
    let inexact_pass = rho_inexact <= bound_inexact + SLACK && rho_inexact < 1.0;
    Ok(TheoryEstimates {
        levels: basis.levels.iter().copied().max().map_or(1, |l| l + 1),
        num_subspaces: r.num_subspaces(),
        kernel_dim: r.kernel_dim(),
        c_a,
        c_s,
        c0,
        rho_measured: rho,
        rho_inexact,
        sweep_norm_sq,
        bound_c0,
        bound,
        kappa_max: kappa,
        epsilon_max: (kappa - 1.0) / (kappa + 1.0),
        bound_inexact,
        xz_identity_pass,
        bound_chain_pass,
        inexact_pass,
    })
}

/// Full theory check on a hierarchy with K = I, sweeping coarsest level first.
pub fn verify_bound(hier: &MeshHierarchy, sampling: &Sampling) -> Result<TheoryEstimates> {
    let n = hier.finest().num_edges();
    let rhs = vec![0.0; hier.finest().num_triangles()];
    let solver = MultigridSolver::new(
        hier.clone(),
        &CoefficientTensor::Identity,
        rhs,
        vec![0.0; n],
    )?;
    let dim = solver.finest().patches.len();
    if dim > MAX_DENSE_KERNEL_DIM {
        return Err(Error::InvalidArgument(format!(
            "kernel dimension {dim} exceeds the dense limit {MAX_DENSE_KERNEL_DIM}"
        )));
    }
    let basis = KernelBasis::from_solver(&solver)?;
    let r = basis.reduce()?;
    let rho = measure_sso_rate(&solver, SmootherKind::ExactKernel, sampling)?;
    let rho_inexact = measure_sso_rate(&solver, SmootherKind::InexactDiagonal, sampling)?;
    let mut kappa = 1.0f64;
    for l in 0..solver.num_levels() {
        for p in &solver.level(l).patches {
            kappa = kappa.max(p.diagonal_condition()?);
        }
    }
    let mut est = assemble_estimates(&basis, &r, rho, rho_inexact, kappa)?;
    est.levels = solver.num_levels();
    Ok(est)
}
