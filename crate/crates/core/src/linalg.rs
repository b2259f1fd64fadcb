//! Dense linear-algebra helpers shared by the analysis and decoding modules.

use nalgebra::{Complex, DMatrix, DVector, Schur};

/// Relative singular-value threshold used for every rank decision.
pub const RANK_RTOL: f64 = 1e-9;

/// Magnitude at or above which an eigenvalue counts as unstable.
pub const UNSTABLE_MAGNITUDE: f64 = 1.0 - 1e-12;

/// Eigenvalues closer than this (relative) are treated as one repeated root.
pub const EIGEN_CLUSTER_RTOL: f64 = 1e-6;

pub type Complex64 = Complex<f64>;

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn rank_from_singular_values(sv: &[f64]) -> usize {
    let max = sv.iter().copied().fold(0.0_f64, f64::max);
    if max <= f64::MIN_POSITIVE {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * max).count()
}

pub fn rank(m: &DMatrix<f64>) -> usize {
    rank_from_singular_values(&singular_values(m))
}

pub fn complex_rank(m: &DMatrix<Complex64>) -> usize {
    complex_rank_scaled(m, 0.0)
}

/// Rank with threshold `RANK_RTOL · max(σ_max, scale)`. A positive `scale`
/// (the magnitude of the data `m` was derived from) keeps roundoff-level
/// matrices from counting as full rank.
pub fn complex_rank_scaled(m: &DMatrix<Complex64>, scale: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    let reference = sv.first().copied().unwrap_or(0.0).max(scale);
    sv.iter().filter(|&&s| s > RANK_RTOL * reference).count()
}

/// Smallest singular value of a matrix with at least as many rows as
/// columns, together with the largest one. Returns zero for a wide matrix.
pub fn extreme_singular_values(m: &DMatrix<f64>) -> (f64, f64) {
    let sv = singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    if m.nrows() < m.ncols() || sv.len() < m.ncols() {
        return (0.0, max);
    }
    (sv.last().copied().unwrap_or(0.0), max)
}

/// Whether `m` has full column rank under [`RANK_RTOL`].
pub fn has_full_column_rank(m: &DMatrix<f64>) -> bool {
    m.ncols() == 0 || rank(m) == m.ncols()
}

/// Orthonormal basis (as columns) of the kernel of `m`.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if rows == 0 {
        return DMatrix::identity(cols, cols);
    }
    // Pad with zero rows so the SVD returns a full set of right singular vectors.
    let padded_rows = rows.max(cols);
    let mut padded = DMatrix::zeros(padded_rows, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let kernel: Vec<usize> = (0..cols)
        .filter(|&k| max <= f64::MIN_POSITIVE || svd.singular_values[k] <= RANK_RTOL * max)
        .collect();
    let mut basis = DMatrix::zeros(cols, kernel.len());
    for (c, &k) in kernel.iter().enumerate() {
        basis.set_column(c, &v_t.row(k).transpose());
    }
    basis
}

/// Matrix whose rows form an orthonormal basis of the orthogonal complement
/// of the column span of `spanning` (a subset of R^ambient). Its kernel is
/// exactly that column span.
pub fn orthogonal_complement_rows(spanning: &DMatrix<f64>, ambient: usize) -> DMatrix<f64> {
    if spanning.ncols() == 0 {
        return DMatrix::identity(ambient, ambient);
    }
    debug_assert_eq!(spanning.nrows(), ambient);
    null_space(&spanning.transpose()).transpose()
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    if m.nrows() == 0 {
        return Vec::new();
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .unwrap_or_else(|| Schur::new(m.clone()));
    schur.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Collapses numerically split repeated eigenvalues (as produced for
/// defective matrices) into the mean of each cluster.
pub fn cluster_eigenvalues(eigs: &[Complex64]) -> Vec<Complex64> {
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    for &z in eigs {
        let scale = z.norm().max(1.0);
        match clusters
            .iter_mut()
            .find(|(c, k)| (*c / *k as f64 - z).norm() <= EIGEN_CLUSTER_RTOL * scale)
        {
            Some((sum, count)) => {
                *sum += z;
                *count += 1;
            }
            None => clusters.push((z, 1)),
        }
    }
    clusters.into_iter().map(|(sum, k)| sum / k as f64).collect()
}

/// `m ⊗ I_n`.
pub fn kron_identity(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    m.kronecker(&DMatrix::<f64>::identity(n, n))
}

/// `a^k` by repeated multiplication, so results match step-by-step simulation.
pub fn mat_pow(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = a * out;
    }
    out
}

/// Minimum-norm least-squares solution of `m x ≈ b` under [`RANK_RTOL`].
pub fn least_squares(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if m.ncols() == 0 {
        return DVector::zeros(0);
    }
    if m.nrows() == 0 {
        return DVector::zeros(m.ncols());
    }
    let svd = m.clone().svd(true, true);
    let max = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    if max <= f64::MIN_POSITIVE {
        return DVector::zeros(m.ncols());
    }
    svd.solve(b, RANK_RTOL * max).expect("u and v were computed")
}

/// Complex matrix `a - mu I` stacked on top of `c`.
pub fn pbh_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, mu: Complex64) -> DMatrix<Complex64> {
    let n = a.nrows();
    DMatrix::from_fn(n + c.nrows(), n, |i, j| {
        if i < n {
            let diag = if i == j { mu } else { Complex64::new(0.0, 0.0) };
            Complex64::new(a[(i, j)], 0.0) - diag
        } else {
            Complex64::new(c[(i - n, j)], 0.0)
        }
    })
}

/// Block `j` (length `n`) of a block vector.
pub fn block(x: &DVector<f64>, j: usize, n: usize) -> DVector<f64> {
    x.rows(j * n, n).into_owned()
}

/// Applies `m` to every length-`m.ncols()` block of `x`.
pub fn apply_blockwise(m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    debug_assert_eq!(x.len() % n.max(1), 0);
    let mut out = DVector::zeros(x.len());
    for j in 0..x.len() / n.max(1) {
        let y = m * x.rows(j * n, n);
        out.rows_mut(j * n, n).copy_from(&y);
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
