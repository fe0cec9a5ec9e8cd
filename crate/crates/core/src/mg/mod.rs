//! Constrained-minimization V-cycle for the RT0/P0 saddle system.
//!
//! Every iterate satisfies B u = rhs_p exactly (up to rounding): the initial
//! flux is built level by level to satisfy the constraint, and every
//! correction is a combination of divergence-free patch directions.

mod local;

pub use local::{
    local_dense_saddle_solve, local_inexact_solve, local_kernel_solve, InexactStep, LocalPatch,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{check_compatibility, CoefficientTensor, MixedSystem};
use crate::hierarchy::{build_prolongation, mesh_patches, MeshHierarchy, Prolongation};
use crate::linalg::{cg_semidefinite, dot, DenseMatrix, LuFactor, SparseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SmootherKind {
    /// Scalar step along the constant kernel vector of each patch.
    ExactKernel,
    /// Dense local saddle solve.
    ExactDense,
    /// Diagonal-preconditioned local saddle solve plus line search.
    InexactDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pre: usize,
    pub post: usize,
    pub smoother: SmootherKind,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            pre: 1,
            post: 1,
            smoother: SmootherKind::ExactKernel,
            seed: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.pre + self.post == 0 {
            return Err(Error::InvalidArgument(
                "at least one smoothing sweep is required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    /// Stopping-rule error estimate after each iteration.
    pub error_history: Vec<f64>,
    /// Energy of the initial flux followed by the energy after each iteration.
    pub energy_history: Vec<f64>,
    /// ‖B u − rhs_p‖_∞ of the initial flux and after each iteration.
    pub constraint_history: Vec<f64>,
    pub final_constraint_residual: f64,
}

impl SolveStats {
    pub fn final_error(&self) -> f64 {
        self.error_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub flux: Vec<f64>,
    pub pressure: Vec<f64>,
    pub stats: SolveStats,
}

/// E(u) = ½uᵀMu − rhs_uᵀu.
pub fn energy(system: &MixedSystem, u: &[f64]) -> f64 {
    let mu = system.mass.spmv(u).expect("flux length");
    0.5 * dot(u, &mu) - dot(&system.rhs_u, u)
}

/// Allowed constraint defect for right-hand side `rhs_p`.
pub fn constraint_tolerance(rhs_p: &[f64]) -> f64 {
    1e-10 * crate::linalg::norm_inf(rhs_p) + 1e-12
}

fn check_constraint(system: &MixedSystem, u: &[f64]) -> Result<f64> {
    let bu = system.div.spmv(u)?;
    let tol = constraint_tolerance(&system.rhs_p);
    let mut worst = 0.0f64;
    for (t, (a, b)) in bu.iter().zip(&system.rhs_p).enumerate() {
        let d = (a - b).abs();
        if !(d <= tol) {
            return Err(Error::ConstraintViolated {
                triangle: t,
                defect: d,
            });
        }
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Dense direct solver for a full saddle system with boundary fluxes pinned
/// and the last pressure set to zero.
#[derive(Debug, Clone)]
pub struct DirectSaddleSolver {
    free: Vec<usize>,
    num_edges: usize,
    num_triangles: usize,
    matrix: DenseMatrix,
    lu: LuFactor,
}

impl DirectSaddleSolver {
    pub fn new(system: &MixedSystem) -> Result<Self> {
        let free = system.free_edges();
        let nf = free.len();
        let nt = system.num_triangles();
        let n = nf + nt - 1;
        let mut pos = vec![usize::MAX; system.num_edges()];
        for (i, &e) in free.iter().enumerate() {
            pos[e] = i;
        }
        let mut a = DenseMatrix::zeros(n, n);
        for (i, &e) in free.iter().enumerate() {
            for (j, v) in system.mass.row(e) {
                if pos[j] != usize::MAX {
                    a[(i, pos[j])] = v;
                }
            }
        }
        for t in 0..nt - 1 {
            for (e, v) in system.div.row(t) {
                if pos[e] != usize::MAX {
                    a[(nf + t, pos[e])] = v;
                    a[(pos[e], nf + t)] = v;
                }
            }
        }
        Ok(Self {
            free,
            num_edges: system.num_edges(),
            num_triangles: nt,
            lu: LuFactor::new(&a)?,
            matrix: a,
        })
    }

    /// Solves M u + Bᵀp = r_u (free rows), B u = r_p, u = 0 on pinned edges.
    pub fn solve(&self, r_u: &[f64], r_p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let nf = self.free.len();
        let mut rhs = vec![0.0; self.lu.dim()];
        for (i, &e) in self.free.iter().enumerate() {
            rhs[i] = r_u[e];
        }
        rhs[nf..].copy_from_slice(&r_p[..self.num_triangles - 1]);
        let sol = self.lu.solve_refined(&self.matrix, &rhs, 2)?;
        let mut u = vec![0.0; self.num_edges];
        for (i, &e) in self.free.iter().enumerate() {
            u[e] = sol[i];
        }
        let mut p = sol[nf..].to_vec();
        p.push(0.0);
        Ok((u, p))
    }

    /// Solves the inhomogeneous system with the boundary data and loads of `system`.
    pub fn solve_system(&self, system: &MixedSystem) -> Result<(Vec<f64>, Vec<f64>)> {
        let gbar: Vec<f64> = (0..system.num_edges())
            .map(|e| if system.fixed[e] { system.g[e] } else { 0.0 })
            .collect();
        let mg = system.mass.spmv(&gbar)?;
        let bg = system.div.spmv(&gbar)?;
        let r_u: Vec<f64> = system.rhs_u.iter().zip(&mg).map(|(a, b)| a - b).collect();
        let r_p: Vec<f64> = system.rhs_p.iter().zip(&bg).map(|(a, b)| a - b).collect();
        let (mut u, p) = self.solve(&r_u, &r_p)?;
        for (ui, gi) in u.iter_mut().zip(&gbar) {
            *ui += gi;
        }
        Ok((u, p))
    }
}

/// One level of the hierarchy: its saddle system and vertex patches.
#[derive(Debug, Clone)]
pub struct LevelSystem {
    pub system: MixedSystem,
    pub patches: Vec<LocalPatch>,
}

impl LevelSystem {
    pub fn new(
        system: MixedSystem,
        mesh: &crate::mesh::TriangleMesh,
        level: usize,
    ) -> Result<Self> {
        let patches = mesh_patches(mesh, level)
            .into_iter()
            .map(|p| LocalPatch::new(p, &system.mass, &system.div))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { system, patches })
    }

    /// rhs − M u with pinned entries zeroed.
    pub fn residual(&self, rhs_u: &[f64], u: &[f64]) -> Vec<f64> {
        let mu = self.system.mass.spmv(u).expect("flux length");
        rhs_u
            .iter()
            .zip(&mu)
            .zip(&self.system.fixed)
            .map(|((r, m), &f)| if f { 0.0 } else { r - m })
            .collect()
    }

    /// Local correction on one patch for the local residual `r_loc`.
    pub fn local_correction(
        &self,
        patch: &LocalPatch,
        r_loc: &[f64],
        kind: SmootherKind,
    ) -> Result<Vec<f64>> {
        Ok(match kind {
            SmootherKind::ExactKernel => {
                let t = local_kernel_solve(patch, r_loc);
                patch.kernel_vector().iter().map(|c| t * c).collect()
            }
            SmootherKind::ExactDense => local_dense_saddle_solve(patch, r_loc)?.0,
            SmootherKind::InexactDiagonal => local_inexact_solve(patch, r_loc)?.correction,
        })
    }

    /// One multiplicative sweep updating `x` and keeping `r = rhs − M x`
    /// current. Returns Σᵢ ‖eᵢ‖²_M.
    pub fn sweep_with_residual(
        &self,
        x: &mut [f64],
        r: &mut [f64],
        order: SweepOrder,
        kind: SmootherKind,
    ) -> Result<f64> {
        let mut total = 0.0;
        let n = self.patches.len();
        for idx in 0..n {
            let patch = match order {
                SweepOrder::Ascending => &self.patches[idx],
                SweepOrder::Descending => &self.patches[n - 1 - idx],
            };
            let r_loc = patch.gather(r);
            let e = self.local_correction(patch, &r_loc, kind)?;
            total += patch.energy_of(&e);
            for (&edge, &de) in patch.edge_ids().iter().zip(&e) {
                if de == 0.0 {
                    continue;
                }
                x[edge] += de;
                for (i, v) in self.system.mass.row(edge) {
                    r[i] -= v * de;
                }
            }
        }
        Ok(total)
    }

    /// Smoother sweep on a flux for velocity load `rhs_u`; returns Σᵢ ‖eᵢ‖²_M.
    pub fn smoother_sweep(
        &self,
        flux: &mut [f64],
        rhs_u: &[f64],
        order: SweepOrder,
        kind: SmootherKind,
    ) -> Result<f64> {
        let mut r = self.residual(rhs_u, flux);
        self.sweep_with_residual(flux, &mut r, order, kind)
    }
}

/// Contraction estimate from repeated V-cycles on a homogeneous problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub rho: f64,
    /// Energy-error ratios after burn-in, trial by trial.
    pub ratios: Vec<f64>,
}

/// Multigrid solver over a mesh hierarchy.
#[derive(Debug, Clone)]
pub struct MultigridSolver {
    hier: MeshHierarchy,
    levels: Vec<LevelSystem>,
    prolongations: Vec<Prolongation>,
    coarse: DirectSaddleSolver,
    /// B Bᵀ restricted to free edges on the finest level.
    pressure_laplacian: SparseMatrix,
}

fn pressure_laplacian(sys: &MixedSystem) -> SparseMatrix {
    let bt = sys.div.transpose();
    let mut trip = Vec::new();
    for e in sys.free_edges() {
        let col: Vec<(usize, f64)> = bt.row(e).collect();
        for &(i, vi) in &col {
            for &(j, vj) in &col {
                trip.push((i, j, vi * vj));
            }
        }
    }
    let nt = sys.num_triangles();
    SparseMatrix::from_triplets(nt, nt, &trip)
}

impl MultigridSolver {
    /// Assembles all levels. `rhs_p` (f_T|T|) and `g` are given on the finest
    /// level; coarser levels receive their aggregates, so every level is
    /// compatible.
    pub fn new(
        hier: MeshHierarchy,
        k: &CoefficientTensor,
        rhs_p: Vec<f64>,
        g: Vec<f64>,
    ) -> Result<Self> {
        let nl = hier.num_levels();
        let finest = hier.finest();
        if rhs_p.len() != finest.num_triangles() || g.len() != finest.num_edges() {
            return Err(crate::error::shape_err(
                format!(
                    "{} triangles / {} edges",
                    finest.num_triangles(),
                    finest.num_edges()
                ),
                format!("{} / {}", rhs_p.len(), g.len()),
            ));
        }
        let g: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(e, v)| if finest.is_boundary_edge(e) { *v } else { 0.0 })
            .collect();
        check_compatibility(finest, &rhs_p, &g)?;

        let mut data = vec![(rhs_p, g)];
        for l in (0..nl - 1).rev() {
            let map = hier.refinement(l);
            let (fine_p, fine_g) = data.last().unwrap();
            let coarse_mesh = hier.mesh(l);
            let cp = map
                .child_triangles
                .iter()
                .map(|c| c.iter().map(|&t| fine_p[t]).sum())
                .collect();
            let cg = map
                .child_edges
                .iter()
                .enumerate()
                .map(|(e, kids)| {
                    if coarse_mesh.is_boundary_edge(e) {
                        fine_g[kids[0]] + fine_g[kids[1]]
                    } else {
                        0.0
                    }
                })
                .collect();
            data.push((cp, cg));
        }
        data.reverse();

        let mut levels = Vec::with_capacity(nl);
        for (l, (p, g)) in data.into_iter().enumerate() {
            let system = MixedSystem::assemble(hier.mesh(l), k, hier.roots(l), p, g)?;
            levels.push(LevelSystem::new(system, hier.mesh(l), l)?);
        }
        let prolongations = (0..nl - 1).map(|l| build_prolongation(&hier, l)).collect();
        let coarse = DirectSaddleSolver::new(&levels[0].system)?;
        let pressure_laplacian = pressure_laplacian(&levels[nl - 1].system);
        Ok(Self {
            hier,
            levels,
            prolongations,
            coarse,
            pressure_laplacian,
        })
    }

    pub fn hierarchy(&self) -> &MeshHierarchy {
        &self.hier
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &LevelSystem {
        &self.levels[l]
    }

    pub fn finest(&self) -> &LevelSystem {
        self.levels.last().unwrap()
    }

    pub fn system(&self) -> &MixedSystem {
        &self.finest().system
    }

    pub fn prolongation(&self, l: usize) -> &Prolongation {
        &self.prolongations[l]
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        energy(self.system(), u)
    }

    /// Flux fields satisfying each level's constraint, coarsest first.
    pub fn compatible_flux_levels(&self) -> Result<Vec<Vec<f64>>> {
        let (u0, _) = self.coarse.solve_system(&self.levels[0].system)?;
        check_constraint(&self.levels[0].system, &u0)?;
        let mut out = vec![u0];
        for l in 1..self.num_levels() {
            let u = self.lift_compatible(l, out.last().unwrap())?;
            check_constraint(&self.levels[l].system, &u)?;
            out.push(u);
        }
        Ok(out)
    }

    /// Finest-level flux u_* with B u_* = rhs_p and boundary values g.
    pub fn compatible_flux(&self) -> Result<Vec<f64>> {
        Ok(self.compatible_flux_levels()?.pop().unwrap())
    }

    /// Child-edge fluxes from the parent, then per coarse triangle a local
    /// mixed solve for the three interior edges.
    fn lift_compatible(&self, l: usize, coarse_u: &[f64]) -> Result<Vec<f64>> {
        let sys = &self.levels[l].system;
        let map = self.hier.refinement(l - 1);
        let fine = self.hier.mesh(l);
        let mut u = vec![0.0; fine.num_edges()];
        for (e, kids) in map.child_edges.iter().enumerate() {
            for &kid in kids {
                u[kid] = if sys.fixed[kid] {
                    sys.g[kid]
                } else {
                    0.5 * coarse_u[e]
                };
            }
        }
        for (kids, inner) in map.child_triangles.iter().zip(&map.interior_edges) {
            let mut a = DenseMatrix::zeros(6, 6);
            let mut rhs = [0.0; 6];
            for (i, &ei) in inner.iter().enumerate() {
                for (j, v) in sys.mass.row(ei) {
                    match inner.iter().position(|&x| x == j) {
                        Some(jj) => a[(i, jj)] = v,
                        None => rhs[i] -= v * u[j],
                    }
                }
            }
            for (c, &t) in kids.iter().take(3).enumerate() {
                rhs[3 + c] = sys.rhs_p[t];
                for (e, v) in sys.div.row(t) {
                    match inner.iter().position(|&x| x == e) {
                        Some(jj) => {
                            a[(3 + c, jj)] = v;
                            a[(jj, 3 + c)] = v;
                        }
                        None => rhs[3 + c] -= v * u[e],
                    }
                }
            }
            let sol = LuFactor::new(&a)?.solve_refined(&a, &rhs, 2)?;
            for (i, &ei) in inner.iter().enumerate() {
                u[ei] = sol[i];
            }
        }
        Ok(u)
    }

    /// V-cycle correction for a finest-level velocity residual.
    pub fn vcycle(&self, r: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
        self.vcycle_at(self.num_levels() - 1, r, cfg)
    }

    fn vcycle_at(&self, l: usize, r: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
        if l == 0 {
            let zeros = vec![0.0; self.levels[0].system.num_triangles()];
            return Ok(self.coarse.solve(r, &zeros)?.0);
        }
        let level = &self.levels[l];
        let mut x = vec![0.0; r.len()];
        let mut res = r.to_vec();
        for _ in 0..cfg.pre {
            level.sweep_with_residual(&mut x, &mut res, SweepOrder::Ascending, cfg.smoother)?;
        }
        let p = &self.prolongations[l - 1];
        let mut rc = p.restrict(&res);
        for (v, &f) in rc.iter_mut().zip(&self.levels[l - 1].system.fixed) {
            if f {
                *v = 0.0;
            }
        }
        let ec = self.vcycle_at(l - 1, &rc, cfg)?;
        let d = p.apply(&ec);
        let md = level.system.mass.spmv(&d)?;
        for i in 0..x.len() {
            x[i] += d[i];
            res[i] -= md[i];
        }
        for _ in 0..cfg.post {
            level.sweep_with_residual(&mut x, &mut res, SweepOrder::Descending, cfg.smoother)?;
        }
        Ok(x)
    }

    /// Outer iteration u ← u + V(rhs_u − M u) from the compatible flux.
    pub fn solve(&self, cfg: &SolverConfig) -> Result<SolveOutput> {
        self.solve_observed(cfg, |_, _| {})
    }

    /// As [`solve`](Self::solve), calling `observe(k, u^k)` for the initial
    /// flux (k = 0) and after every iteration.
    pub fn solve_observed(
        &self,
        cfg: &SolverConfig,
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Result<SolveOutput> {
        cfg.validate()?;
        let level = self.finest();
        let sys = &level.system;
        let mut u = self.compatible_flux()?;
        let mut stats = SolveStats {
            iterations: 0,
            converged: false,
            error_history: Vec::new(),
            energy_history: vec![energy(sys, &u)],
            constraint_history: vec![check_constraint(sys, &u)?],
            final_constraint_residual: 0.0,
        };
        observe(0, &u);
        let mut first = None;
        for it in 0..cfg.max_iterations {
            let r = level.residual(&sys.rhs_u, &u);
            if it == 0 && r.iter().all(|v| *v == 0.0) {
                stats.converged = true;
                break;
            }
            let c = self.vcycle(&r, cfg)?;
            for (ui, ci) in u.iter_mut().zip(&c) {
                *ui += ci;
            }
            let num = dot(&c, &self.reduced_residual(&r)?).abs();
            let first_num = *first.get_or_insert(num);
            let den = dot(&u, &sys.mass.spmv(&u)?).abs();
            let err = if den > 1e-300 {
                (num / den).sqrt()
            } else if first_num > 0.0 {
                (num / first_num).sqrt()
            } else {
                0.0
            };
            stats.iterations = it + 1;
            stats.error_history.push(err);
            stats.energy_history.push(energy(sys, &u));
            stats.constraint_history.push(check_constraint(sys, &u)?);
            observe(it + 1, &u);
            if err <= cfg.tolerance {
                stats.converged = true;
                break;
            }
        }
        stats.final_constraint_residual = *stats.constraint_history.last().unwrap();
        let pressure = self.recover_pressure(&u)?;
        Ok(SolveOutput {
            flux: u,
            pressure,
            stats,
        })
    }

    /// Least-squares pressure q with Bᵀq ≈ `r` on free edges: (B Bᵀ) q = B r.
    fn fit_pressure(&self, r: &[f64]) -> Result<Vec<f64>> {
        let b = self.system().div.spmv(r)?;
        let nt = b.len();
        Ok(cg_semidefinite(&self.pressure_laplacian, &b, 1e-13, 20 * nt + 100).0)
    }

    /// Residual with its gradient-of-pressure part removed; pairing a
    /// divergence-free field with it gives the same value as with `r` but
    /// without the rounding carried by the large pressure component.
    fn reduced_residual(&self, r: &[f64]) -> Result<Vec<f64>> {
        let sys = self.system();
        let q = self.fit_pressure(r)?;
        let btq = sys.div.spmv_transpose(&q)?;
        Ok(r.iter()
            .zip(&btq)
            .zip(&sys.fixed)
            .map(|((a, b), &f)| if f { 0.0 } else { a - b })
            .collect())
    }

    /// Area-weighted mean-zero pressure from (B Bᵀ) p = B (rhs_u − M u) on free edges.
    pub fn recover_pressure(&self, u: &[f64]) -> Result<Vec<f64>> {
        let sys = self.system();
        let mut p = self.fit_pressure(&self.finest().residual(&sys.rhs_u, u))?;
        let areas = self.hier.finest().areas();
        crate::linalg::remove_weighted_mean(&mut p, &areas);
        Ok(p)
    }

    /// Estimates the V-cycle energy contraction factor on the homogeneous
    /// problem (solution 0) from random divergence-free starting fluxes:
    /// the largest ratio E(w_{k+1}) / E(w_k) after `burn_in` iterations.
    pub fn measure_contraction(
        &self,
        cfg: &SolverConfig,
        trials: usize,
        burn_in: usize,
        samples: usize,
        seed: u64,
    ) -> Result<ContractionEstimate> {
        cfg.validate()?;
        let level = self.finest();
        let ne = level.system.num_edges();
        let zero = vec![0.0; ne];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ratios = Vec::new();
        let half_norm = |w: &[f64]| 0.5 * dot(w, &level.system.mass.spmv(w).expect("flux length"));
        for _ in 0..trials {
            let mut w = vec![0.0; ne];
            for p in &level.patches {
                let xi: f64 = rng.gen_range(-1.0..1.0);
                for (&e, &c) in p.edge_ids().iter().zip(p.kernel_vector()) {
                    w[e] += xi * c;
                }
            }
            let e0 = half_norm(&w);
            let mut prev = e0;
            for k in 0..burn_in + samples {
                let r = level.residual(&zero, &w);
                let c = self.vcycle(&r, cfg)?;
                for (wi, ci) in w.iter_mut().zip(&c) {
                    *wi += ci;
                }
                let cur = half_norm(&w);
                if k >= burn_in && prev > 1e-300 && prev > 1e-26 * e0 {
                    ratios.push(cur / prev);
                }
                prev = cur;
            }
        }
        let rho = ratios.iter().copied().fold(0.0, f64::max);
        Ok(ContractionEstimate { rho, ratios })
    }
}

#[cfg(test)]
mod tests;
