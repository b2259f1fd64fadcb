//! Detectability analysis: PBH test, sparse detectability index, sparse
//! detectability relative to a compression matrix, and the solvability gate.
//!
//! Every subset search enumerates subsets by increasing size and, within a
//! size, in lexicographic order, so witnesses are reproducible.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{self, Complex64, UNSTABLE_MAGNITUDE};
use crate::model::LtiSystem;

/// Default cap on the number of subsets a single search may visit.
pub const DEFAULT_SUBSET_BUDGET: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("subset enumeration exceeded the budget of {budget} subsets")]
    BudgetExceeded { budget: u64 },
    #[error("compression matrix has {cols} columns but the system has {p} nodes")]
    CompressionColumns { cols: usize, p: usize },
}

/// Erasure set and unstable eigenvalue for which the PBH test fails.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityWitness {
    /// Removed (erased) sensors, 0-based, ascending.
    pub removed: Vec<usize>,
    pub eigenvalue: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectabilityReport {
    /// Largest `k` such that erasing any `≤ k` sensors keeps the pair detectable.
    pub index: usize,
    /// Failing erasure of size `index + 1`; `None` when `index == p`.
    pub witness: Option<DetectabilityWitness>,
    pub exhaustive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeDetectability {
    pub detectable: bool,
    pub witness: Option<DetectabilityWitness>,
}

/// First unstable eigenvalue `μ` of `a` with `rank [A − μI; C] < n`, if any.
/// Numerically split repeated eigenvalues are merged before testing.
pub fn pbh_violation(a: &DMatrix<f64>, cmat: &DMatrix<f64>) -> Option<Complex64> {
    pbh_violation_scaled(a, cmat, 0.0)
}

/// [`pbh_violation`] with rank measured against at least `scale`, the norm of
/// the sensing matrix before any erasure.
pub fn pbh_violation_scaled(a: &DMatrix<f64>, cmat: &DMatrix<f64>, scale: f64) -> Option<Complex64> {
    let n = a.nrows();
    assert_eq!(cmat.ncols(), n, "PBH test: dimension mismatch");
    let mut unstable: Vec<Complex64> = linalg::cluster_eigenvalues(&linalg::eigenvalues(a))
        .into_iter()
        .filter(|mu| mu.norm() >= UNSTABLE_MAGNITUDE)
        .collect();
    unstable.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.im.total_cmp(&x.im)));
    unstable.into_iter().find(|&mu| linalg::complex_rank_scaled(&linalg::pbh_matrix(a, cmat, mu), scale) < n)
}

/// PBH detectability of `(a, cmat)`: every eigenvalue with `|μ| ≥ 1` is observable.
pub fn is_detectable(a: &DMatrix<f64>, cmat: &DMatrix<f64>) -> bool {
    pbh_violation(a, cmat).is_none()
}

/// Lexicographic enumeration of k-subsets of `0..p` with a shared visit counter.
struct SubsetSearch {
    budget: u64,
    visited: u64,
}

impl SubsetSearch {
    fn new(budget: u64) -> Self {
        Self { budget, visited: 0 }
    }

    /// Calls `f` on every k-subset in lexicographic order until it returns
    /// `Some`, charging each visit to the budget.
    fn find<T>(
        &mut self,
        p: usize,
        k: usize,
        mut f: impl FnMut(&[usize]) -> Option<T>,
    ) -> Result<Option<T>, DetectError> {
        if k > p {
            return Ok(None);
        }
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            self.visited += 1;
            if self.visited > self.budget {
                return Err(DetectError::BudgetExceeded { budget: self.budget });
            }
            if let Some(found) = f(&idx) {
                return Ok(Some(found));
            }
            // advance to the next combination
            let mut i = k;
            while i > 0 && idx[i - 1] == i - 1 + p - k {
                i -= 1;
            }
            if i == 0 {
                return Ok(None);
            }
            idx[i - 1] += 1;
            for j in i..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
}

/// Calls `f` on every subset of `0..p` of size at most `max_size`, smallest
/// sizes first, lexicographic within a size.
pub fn for_each_subset_up_to(
    p: usize,
    max_size: usize,
    budget: u64,
    mut f: impl FnMut(&[usize]),
) -> Result<(), DetectError> {
    let mut search = SubsetSearch::new(budget);
    for k in 0..=max_size.min(p) {
        search.find::<()>(p, k, |subset| {
            f(subset);
            None
        })?;
    }
    Ok(())
}

pub fn complement(p: usize, removed: &[usize]) -> Vec<usize> {
    (0..p).filter(|i| !removed.contains(i)).collect()
}

pub fn sparse_detectability_index(sys: &LtiSystem) -> Result<DetectabilityReport, DetectError> {
    sparse_detectability_index_with_budget(sys, DEFAULT_SUBSET_BUDGET)
}

pub fn sparse_detectability_index_with_budget(
    sys: &LtiSystem,
    budget: u64,
) -> Result<DetectabilityReport, DetectError> {
    let p = sys.p();
    let mut search = SubsetSearch::new(budget);
    // Erasing more sensors can only lose detectability, so the first failing
    // size fixes the index.
    for k in 0..=p {
        let failure = search.find(p, k, |removed| {
            let kept = sys.sensor_rows(&complement(p, removed));
            pbh_violation(sys.a(), &kept)
                .map(|mu| DetectabilityWitness { removed: removed.to_vec(), eigenvalue: mu })
        })?;
        if let Some(witness) = failure {
            // k == 0 means the un-erased pair already fails; the index
            // saturates at 0 and the witness records the failure.
            return Ok(DetectabilityReport {
                index: k.saturating_sub(1),
                witness: Some(witness),
                exhaustive: true,
            });
        }
    }
    Ok(DetectabilityReport { index: p, witness: None, exhaustive: true })
}

impl DetectabilityReport {
    /// Whether the full, un-erased pair is detectable.
    pub fn base_detectable(&self) -> bool {
        self.witness.as_ref().is_none_or(|w| !w.removed.is_empty())
    }
}

/// Erasure operator for `V`: orthonormal rows whose kernel is `D·span{e_i : i ∈ V}`.
pub fn erasure_operator(d: &DMatrix<f64>, removed: &[usize]) -> DMatrix<f64> {
    let v = d.nrows();
    let span = DMatrix::from_fn(v, removed.len(), |r, c| d[(r, removed[c])]);
    linalg::orthogonal_complement_rows(&span, v)
}

/// `s`-sparse detectability with respect to `d`: for every `V` with
/// `|V| ≤ s` the pair `(A, L_V D C)` is detectable. Sizes above `p` are
/// clamped to `p`.
pub fn is_sparse_detectable_wrt(
    sys: &LtiSystem,
    d: &DMatrix<f64>,
    s: usize,
) -> Result<RelativeDetectability, DetectError> {
    is_sparse_detectable_wrt_with_budget(sys, d, s, DEFAULT_SUBSET_BUDGET)
}

pub fn is_sparse_detectable_wrt_with_budget(
    sys: &LtiSystem,
    d: &DMatrix<f64>,
    s: usize,
    budget: u64,
) -> Result<RelativeDetectability, DetectError> {
    let p = sys.p();
    if d.ncols() != p {
        return Err(DetectError::CompressionColumns { cols: d.ncols(), p });
    }
    let dc = d * sys.c();
    // erasure operators come from an SVD, so exact zeros in L·D·C show up as roundoff
    let scale = dc.norm();
    let mut search = SubsetSearch::new(budget);
    for k in 0..=s.min(p) {
        let failure = search.find(p, k, |removed| {
            let l = erasure_operator(d, removed);
            pbh_violation_scaled(sys.a(), &(&l * &dc), scale)
                .map(|mu| DetectabilityWitness { removed: removed.to_vec(), eigenvalue: mu })
        })?;
        if let Some(witness) = failure {
            return Ok(RelativeDetectability { detectable: false, witness: Some(witness) });
        }
    }
    Ok(RelativeDetectability { detectable: true, witness: None })
}

/// Secure tracking with `s` attackers is possible iff the pair is
/// `2s`-sparse detectable. Like the relative check, the erasure size is
/// clamped to `p`, so an index of `p` (nothing is ever hidden) admits any `s`.
pub fn is_dsst_solvable(sys: &LtiSystem, s: usize) -> Result<bool, DetectError> {
    Ok(solvable_with(&sparse_detectability_index(sys)?, sys.p(), s))
}

/// Solvability verdict from an already computed index report.
pub fn solvable_with(report: &DetectabilityReport, p: usize, s: usize) -> bool {
    report.base_detectable() && report.index >= (2 * s).min(p)
}
