//! Sparse and small-dense linear algebra used by assembly, smoothing and the
//! theory checks.

mod dense;
mod sparse;

pub use dense::{
    cholesky, dense_solve, dense_sym_eig, generalized_sym_eig, spectral_norm, sym_eigen,
    sym_pseudo_inverse, DenseMatrix, LuFactor,
};
pub use sparse::SparseMatrix;

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Removes the (weighted) mean: x ← x − (wᵀx / Σw)·1.
pub fn remove_weighted_mean(x: &mut [f64], weights: &[f64]) {
    let total: f64 = weights.iter().sum();
    let mean = dot(x, weights) / total;
    x.iter_mut().for_each(|v| *v -= mean);
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// semidefinite operator whose kernel is the constant vector. The right-hand
/// side is assumed orthogonal to the constants; iterates are kept mean-free.
///
/// Used for the auxiliary Neumann-type solves (pressure recovery, projection
/// of broken gradients); the multigrid iteration itself never calls it.
pub fn cg_semidefinite(
    a: &SparseMatrix,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let n = b.len();
    let ones = vec![1.0; n];
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a.get(i, i);
            if d > 0.0 {
                d
            } else {
                1.0
            }
        })
        .collect();
    let mut rhs = b.to_vec();
    remove_weighted_mean(&mut rhs, &ones);
    let bnorm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return (x, 0);
    }
    let mut r = rhs;
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    remove_weighted_mean(&mut z, &ones);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.spmv_into(&p, &mut ap).expect("square operator");
        let alpha = rz / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            remove_weighted_mean(&mut x, &ones);
            return (x, it);
        }
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&diag) {
            *zi = ri / di;
        }
        remove_weighted_mean(&mut z, &ones);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    remove_weighted_mean(&mut x, &ones);
    (x, max_iter)
}
