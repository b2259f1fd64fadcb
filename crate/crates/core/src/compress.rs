//! Compression matrix certification, random design, and the kernel basis used
//! by the slack-variable reduction.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::detect::{self, DetectError, DetectabilityWitness};
use crate::linalg;
use crate::model::LtiSystem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("compression matrix is {rows}x{cols}; expected v x {p} with 1 <= v <= {p}")]
    Shape { rows: usize, cols: usize, p: usize },
    #[error(
        "compression matrix is not {level}-sparse detectable: erasing nodes {removed:?} hides eigenvalue {eigenvalue}",
        removed = witness.removed.iter().map(|i| i + 1).collect::<Vec<_>>(),
        eigenvalue = witness.eigenvalue
    )]
    NotCertified { level: usize, witness: DetectabilityWitness },
    #[error("system is not {level}-sparse detectable, so no compression matrix can be certified")]
    Unsolvable { level: usize },
    #[error(transparent)]
    Detect(#[from] DetectError),
}

/// A compression matrix `D` certified for sparsity `s` (i.e. the system is
/// `2s`-sparse detectable with respect to `D`), with an orthonormal basis of
/// `ker(D ⊗ I_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionMatrix {
    d: DMatrix<f64>,
    certified_s: usize,
    kernel: DMatrix<f64>,
}

impl CompressionMatrix {
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Number of compressed rows `v`.
    pub fn v(&self) -> usize {
        self.d.nrows()
    }

    pub fn certified_s(&self) -> usize {
        self.certified_s
    }

    /// Columns span `ker(D ⊗ I_n)`.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn is_identity(&self) -> bool {
        self.d.is_square() && self.d == DMatrix::identity(self.d.nrows(), self.d.ncols())
    }
}

/// Certifies `d` for sparsity `s` by checking `2s`-sparse detectability with
/// respect to `d`.
pub fn validate_compression(
    sys: &LtiSystem,
    d: DMatrix<f64>,
    s: usize,
) -> Result<CompressionMatrix, CompressError> {
    let p = sys.p();
    if d.ncols() != p || d.nrows() == 0 || d.nrows() > p {
        return Err(CompressError::Shape { rows: d.nrows(), cols: d.ncols(), p });
    }
    let check = detect::is_sparse_detectable_wrt(sys, &d, 2 * s)?;
    if let Some(witness) = check.witness {
        return Err(CompressError::NotCertified { level: 2 * s, witness });
    }
    let kernel = kernel_basis(&d, sys.n());
    Ok(CompressionMatrix { d, certified_s: s, kernel })
}

/// Orthonormal basis of `ker(D ⊗ I_n)`, built as `ker(D) ⊗ I_n`.
pub fn kernel_basis(d: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let kernel_d = linalg::null_space(d);
    if kernel_d.ncols() == 0 {
        return DMatrix::zeros(d.ncols() * n, 0);
    }
    linalg::kron_identity(&kernel_d, n)
}

/// Searches for a certified compression matrix with as few rows as the random
/// search can find: for `v = 1, …, p − 1` draws `max_tries` standard-normal
/// `v × p` matrices and returns the first one that certifies, falling back to
/// `I_p`. Try `k` at row count `v` uses ChaCha stream `(v − 1)·max_tries + k`
/// of `seed`, so the result depends only on `(seed, max_tries)`.
pub fn design_compression(
    sys: &LtiSystem,
    s: usize,
    seed: u64,
    max_tries: usize,
) -> Result<CompressionMatrix, CompressError> {
    if !detect::is_dsst_solvable(sys, s)? {
        return Err(CompressError::Unsolvable { level: 2 * s });
    }
    let p = sys.p();
    for v in 1..p {
        for attempt in 0..max_tries {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((v - 1) * max_tries + attempt) as u64);
            let d = DMatrix::from_fn(v, p, |_, _| StandardNormal.sample(&mut rng));
            match validate_compression(sys, d, s) {
                Ok(certified) => return Ok(certified),
                Err(CompressError::NotCertified { .. }) => continue,
                Err(other) => return Err(other),
            }
        }
    }
    validate_compression(sys, DMatrix::identity(p, p), s)
}
