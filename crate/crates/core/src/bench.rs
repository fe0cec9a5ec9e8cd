//! Benchmark tables for the examples, the CR solver and the theory checks.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cr::cr_solve_mg;
use crate::error::{Error, Result};
use crate::hierarchy::build_hierarchy;
use crate::linalg::DenseMatrix;
use crate::mesh::build_square_mesh;
use crate::mg::SolverConfig;
use crate::problem::{build_example, default_rhs};
use crate::theory::{estimates_for_basis, verify_bound, KernelBasis, Sampling, TheoryEstimates};

/// One table run: an example on a range of hierarchy depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub example: u32,
    pub coarse_n: usize,
    /// Numbers of levels, ascending; one row each.
    pub levels: Vec<usize>,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Record wall-clock times; when false the column is 0.
    pub timing: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            example: 1,
            coarse_n: 4,
            levels: vec![2, 3, 4, 5],
            solver: SolverConfig::default(),
            seed: 1,
            timing: true,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.levels.is_empty() || self.levels.contains(&0) {
            return Err(Error::InvalidArgument(
                "level list must be non-empty and positive".into(),
            ));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "levels must be strictly ascending".into(),
            ));
        }
        if self.coarse_n == 0 {
            return Err(Error::InvalidArgument(
                "coarse resolution must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Finest mesh size for `levels` levels.
    pub fn mesh_size(&self, levels: usize) -> f64 {
        1.0 / (self.coarse_n as f64 * (1u64 << (levels - 1)) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub h: f64,
    pub size: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_error: f64,
    pub elapsed_ms: f64,
    /// Largest mixed/CR energy-equivalence residual (CR runs only).
    pub equivalence_residual: Option<f64>,
}

fn run_rows(
    spec: &BenchSpec,
    row: impl Fn(usize) -> Result<TableRow> + Sync,
) -> Result<Vec<TableRow>> {
    spec.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = spec
            .levels
            .iter()
            .map(|&l| {
                let row = &row;
                scope.spawn(move || row(l))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("table row worker panicked"))
            .collect()
    })
}

fn elapsed(spec: &BenchSpec, start: Instant) -> f64 {
    if spec.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    }
}

/// Mixed-method iteration counts for one example, one row per depth.
pub fn run_table(spec: &BenchSpec) -> Result<Vec<TableRow>> {
    run_rows(spec, |levels| {
        let solver = build_example(spec.example, spec.coarse_n, levels, spec.seed)?;
        let size = solver.system().size();
        let start = Instant::now();
        let out = solver.solve(&spec.solver)?;
        Ok(TableRow {
            h: spec.mesh_size(levels),
            size,
            iterations: out.stats.iterations,
            converged: out.stats.converged,
            final_error: out.stats.final_error(),
            elapsed_ms: elapsed(spec, start),
            equivalence_residual: None,
        })
    })
}

/// CR solver on the Poisson problem (K = I); `zero_source` replaces f by 0.
pub fn run_cr(spec: &BenchSpec, zero_source: bool) -> Result<Vec<TableRow>> {
    run_rows(spec, |levels| {
        let hier = build_hierarchy(build_square_mesh(spec.coarse_n), levels);
        let source = if zero_source {
            vec![0.0; hier.finest().num_triangles()]
        } else {
            default_rhs(&hier)
        };
        let size = hier.finest().num_edges() + hier.finest().num_triangles();
        let start = Instant::now();
        let out = cr_solve_mg(hier, source, &spec.solver)?;
        let residual = out
            .equivalence_residuals
            .iter()
            .copied()
            .fold(0.0, f64::max);
        Ok(TableRow {
            h: spec.mesh_size(levels),
            size,
            iterations: out.stats.iterations,
            converged: out.stats.converged,
            final_error: out.stats.final_error(),
            elapsed_ms: elapsed(spec, start),
            equivalence_residual: Some(residual),
        })
    })
}

/// Writes rows as CSV; the residual column appears when any row carries one.
pub fn write_csv<W: Write>(rows: &[TableRow], out: W) -> Result<()> {
    let with_residual = rows.iter().any(|r| r.equivalence_residual.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["h", "size", "iterations", "final_error", "elapsed_ms"];
    if with_residual {
        header.push("equivalence_residual");
    }
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![
            format!("{}", r.h),
            r.size.to_string(),
            r.iterations.to_string(),
            format!("{:e}", r.final_error),
            format!("{:.3}", r.elapsed_ms),
        ];
        if with_residual {
            rec.push(format!("{:e}", r.equivalence_residual.unwrap_or(0.0)));
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Theory constants for the `levels`-level hierarchy on the n×n initial mesh.
pub fn run_theory(coarse_n: usize, levels: usize, sampling: &Sampling) -> Result<TheoryEstimates> {
    if coarse_n == 0 || levels == 0 {
        return Err(Error::InvalidArgument(
            "coarse resolution and level count must be positive".into(),
        ));
    }
    verify_bound(
        &build_hierarchy(build_square_mesh(coarse_n), levels),
        sampling,
    )
}

/// Theory constants for `dim` mutually orthogonal one-dimensional subspaces.
pub fn run_theory_orthogonal(dim: usize, sampling: &Sampling) -> Result<TheoryEstimates> {
    let cols: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v
        })
        .collect();
    let basis = KernelBasis::new(DenseMatrix::identity(dim), cols.clone(), cols)?;
    estimates_for_basis(&basis, sampling)
}
