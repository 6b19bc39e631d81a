//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

/// Rows per block in chunked reductions. Fixed so that sums do not depend on
/// the number of worker threads.
pub(crate) const ROW_BLOCK: usize = 2048;

/// `Xᵀ X` accumulated over fixed row blocks, blocks summed in index order.
pub(crate) fn gram_of_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let blocks: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let partials: Vec<DMatrix<f64>> = blocks
        .par_iter()
        .map(|&start| {
            let len = ROW_BLOCK.min(n - start);
            let rows = x.rows(start, len);
            rows.transpose() * rows
        })
        .collect();
    let mut acc = DMatrix::zeros(p, p);
    for part in partials {
        acc += part;
    }
    acc
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending (stable with
/// respect to the decomposition's own order on ties), each eigenvector
/// flipped so that its largest-magnitude entry is positive.
pub(crate) fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(eig.eigenvectors.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Flips `v` so its first largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖M Mᵀ − I‖_F` for a matrix with (intended) orthonormal rows.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let mut g = m * m.transpose();
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}
