//! Small dense symmetric-matrix helpers shared by the confidence and design code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Smallest eigenvalue at or below which an information matrix is singular.
pub const SINGULAR_EIGENVALUE: f64 = 1e-10;
/// Upper end of the band in which a ridge is added before inverting.
pub const RIDGE_BAND: f64 = 1e-8;
pub const RIDGE: f64 = 1e-12;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    eigenvalues(m).min()
}

/// Inverse of a symmetric PSD matrix under the singularity policy: `None`
/// when the smallest eigenvalue is `≤ SINGULAR_EIGENVALUE`, a ridge of
/// `RIDGE` when it falls inside `(SINGULAR_EIGENVALUE, RIDGE_BAND)`.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    spd_inverse_with_ridge(m, RIDGE)
}

/// [`spd_inverse`] with a caller-chosen ridge for the near-singular band.
pub fn spd_inverse_with_ridge(m: &DMatrix<f64>, ridge: f64) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.min();
    if !(lo > SINGULAR_EIGENVALUE) {
        return None;
    }
    let shift = if lo < RIDGE_BAND { ridge } else { 0.0 };
    Some(eigen_apply(&eig, |l| 1.0 / (l + shift)))
}

/// Moore–Penrose pseudo-inverse together with the orthogonal projector onto
/// the numerical null space.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let cut = SINGULAR_EIGENVALUE.max(eig.eigenvalues.amax() * 1e-12);
    let pinv = eigen_apply(&eig, |l| if l > cut { 1.0 / l } else { 0.0 });
    let null = eigen_apply(&eig, |l| if l > cut { 0.0 } else { 1.0 });
    (pinv, null)
}

fn eigen_apply(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let n = v.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let s = f(l);
        if s == 0.0 {
            continue;
        }
        let col = v.column(k);
        for i in 0..n {
            let ci = s * col[i];
            for j in 0..n {
                out[(i, j)] += ci * col[j];
            }
        }
    }
    symmetrize(&mut out);
    out
}

/// `x^T M x`.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

/// `M += s * x x^T`.
pub fn add_outer(m: &mut DMatrix<f64>, x: &DVector<f64>, s: f64) {
    let n = x.len();
    for i in 0..n {
        let xi = s * x[i];
        for j in 0..n {
            m[(i, j)] += xi * x[j];
        }
    }
}
