//! The benchmark problems: unit square, g = 0, f = 2π²cos(πx)cos(πy) and the
//! permeabilities of Examples 1-4.

use crate::error::{Error, Result};
use crate::fem::{assemble_rhs, default_source, example_tensor, CoefficientTensor};
use crate::hierarchy::{build_hierarchy, MeshHierarchy};
use crate::linalg::remove_weighted_mean;
use crate::mesh::{build_square_mesh, distort_mesh};
use crate::mg::MultigridSolver;

/// Vertex perturbation of Example 4 as a fraction of the mesh size.
pub const EXAMPLE4_DISTORTION: f64 = 0.4;

/// Hierarchy and tensor for example `id`. Examples 3 and 4 need the 4×4
/// initial partition.
pub fn example_setup(
    id: u32,
    coarse_n: usize,
    levels: usize,
    seed: u64,
) -> Result<(MeshHierarchy, CoefficientTensor)> {
    if coarse_n == 0 || levels == 0 {
        return Err(Error::InvalidArgument(
            "coarse resolution and level count must be positive".into(),
        ));
    }
    if matches!(id, 3 | 4) && coarse_n != 4 {
        return Err(Error::InvalidArgument(format!(
            "example {id} is defined on the 4x4 initial partition (got coarse n = {coarse_n})"
        )));
    }
    let tensor = example_tensor(id, seed)?;
    let mut coarse = build_square_mesh(coarse_n);
    if id == 4 {
        coarse = distort_mesh(&coarse, EXAMPLE4_DISTORTION, seed)?;
    }
    Ok((build_hierarchy(coarse, levels), tensor))
}

/// Element integrals of the default source with the quadrature mean removed,
/// so that the pure-flux problem is exactly compatible on distorted meshes too.
pub fn default_rhs(hier: &MeshHierarchy) -> Vec<f64> {
    let mesh = hier.finest();
    let areas = mesh.areas();
    let mut averages: Vec<f64> = assemble_rhs(mesh, default_source)
        .iter()
        .zip(&areas)
        .map(|(v, a)| v / a)
        .collect();
    remove_weighted_mean(&mut averages, &areas);
    averages.iter().zip(&areas).map(|(f, a)| f * a).collect()
}

/// Multigrid solver for example `id` on `levels` levels above an n×n coarse mesh.
pub fn build_example(
    id: u32,
    coarse_n: usize,
    levels: usize,
    seed: u64,
) -> Result<MultigridSolver> {
    let (hier, tensor) = example_setup(id, coarse_n, levels, seed)?;
    let rhs = default_rhs(&hier);
    let g = vec![0.0; hier.finest().num_edges()];
    MultigridSolver::new(hier, &tensor, rhs, g)
}
