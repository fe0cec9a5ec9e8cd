use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use saddle_mg::bench::{
    run_cr, run_table, run_theory, run_theory_orthogonal, write_csv, BenchSpec, TableRow,
};
use saddle_mg::mg::{SmootherKind, SolverConfig};
use saddle_mg::theory::Sampling;

#[derive(Parser)]
#[command(
    name = "saddle-bench",
    about = "Multigrid benchmarks for mixed and CR discretizations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iteration-count table for one example.
    Run {
        #[arg(long, default_value_t = 1)]
        example: u32,
        #[command(flatten)]
        common: Common,
    },
    /// CR nonconforming multigrid on the Poisson problem.
    Cr {
        /// Use f = 0.
        #[arg(long)]
        zero_source: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Brute-forced convergence constants on a small hierarchy (JSON).
    Theory {
        #[arg(long, default_value_t = 4)]
        coarse_n: usize,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Report for an orthogonal toy decomposition of this dimension instead.
        #[arg(long)]
        orthogonal_toy: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Smoother {
    Kernel,
    Dense,
    Inexact,
}

impl From<Smoother> for SmootherKind {
    fn from(s: Smoother) -> Self {
        match s {
            Smoother::Kernel => SmootherKind::ExactKernel,
            Smoother::Dense => SmootherKind::ExactDense,
            Smoother::Inexact => SmootherKind::InexactDiagonal,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Deepest hierarchy (number of levels); rows run from --min-levels.
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 2)]
    min_levels: usize,
    #[arg(long, default_value_t = 4)]
    coarse_n: usize,
    #[arg(long, value_enum, default_value_t = Smoother::Kernel)]
    smoother: Smoother,
    #[arg(long, default_value_t = 1)]
    pre: usize,
    #[arg(long, default_value_t = 1)]
    post: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write 0 in the elapsed_ms column (byte-reproducible output).
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn spec(&self, example: u32) -> BenchSpec {
        BenchSpec {
            example,
            coarse_n: self.coarse_n,
            levels: (self.min_levels.min(self.levels)..=self.levels).collect(),
            solver: SolverConfig {
                tolerance: self.tol,
                max_iterations: self.max_iterations,
                pre: self.pre,
                post: self.post,
                smoother: self.smoother.into(),
                seed: self.seed,
            },
            seed: self.seed,
            timing: !self.no_timing,
        }
    }
}

fn sink(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_table(rows: &[TableRow], out: &Option<PathBuf>) -> saddle_mg::Result<bool> {
    write_csv(rows, sink(out)?)?;
    let mut ok = true;
    for r in rows.iter().filter(|r| !r.converged) {
        eprintln!(
            "not converged at h = {}: error {:e} after {} iterations",
            r.h, r.final_error, r.iterations
        );
        ok = false;
    }
    Ok(ok)
}

fn run(cli: Cli) -> saddle_mg::Result<bool> {
    match cli.command {
        Command::Run { example, common } => {
            emit_table(&run_table(&common.spec(example))?, &common.out)
        }
        Command::Cr {
            zero_source,
            common,
        } => emit_table(&run_cr(&common.spec(1), zero_source)?, &common.out),
        Command::Theory {
            coarse_n,
            levels,
            seed,
            orthogonal_toy,
            out,
        } => {
            let sampling = Sampling {
                seed,
                ..Sampling::default()
            };
            let est = match orthogonal_toy {
                Some(dim) => run_theory_orthogonal(dim, &sampling)?,
                None => run_theory(coarse_n, levels, &sampling)?,
            };
            let mut w = sink(&out)?;
            serde_json::to_writer_pretty(&mut w, &est).map_err(io::Error::from)?;
            writeln!(w)?;
            if !est.all_pass() {
                eprintln!("theory check failed: {est:?}");
            }
            Ok(est.all_pass())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
