//! State reconstruction from tracked compressed measurements.
//!
//! Each node solves
//!
//! ```text
//! min ‖p·W_i − (D ⊗ I_n)(O x + E)‖₂   over x and E with at most s nonzero blocks
//! ```
//!
//! by enumerating candidate supports `K`. For a fixed `K` the attack blocks
//! range over `(D_K ⊗ I_n)`, so projecting onto the orthogonal complement of
//! that range (the erasure operator `L_K ⊗ I_n`) leaves an ordinary
//! least-squares problem in `x`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::compress::CompressionMatrix;
use crate::detect::{self, DetectError};
use crate::linalg::{self, RANK_RTOL};
use crate::model::{observability_stack, LtiSystem};

/// Candidate residuals within this relative distance count as ties.
pub const TIE_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error(
        "state is not identifiable once nodes {support:?} are treated as attacked (σ_min = {sigma_min:e})",
        support = support.iter().map(|i| i + 1).collect::<Vec<_>>()
    )]
    RankDeficient { support: Vec<usize>, sigma_min: f64 },
    #[error("compressed measurement has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("compression matrix has {cols} columns but the system has {p} nodes")]
    Compression { cols: usize, p: usize },
    #[error(transparent)]
    Detect(#[from] DetectError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// State at the window base time.
    pub x_hat: DVector<f64>,
    /// `A^{n−1} x_hat`, the state at the newest sample of the window.
    pub x_hat_now: DVector<f64>,
    /// Estimated attacked nodes (0-based, ascending).
    pub support_hat: Vec<usize>,
    /// Estimated attack windows, stacked per node (`p·n`).
    pub attack_hat: DVector<f64>,
    pub residual: f64,
    /// Residual of every enumerated support, in enumeration order.
    pub table: Vec<(Vec<usize>, f64)>,
}

#[derive(Debug, Clone)]
struct Candidate {
    support: Vec<usize>,
    /// `L_K ⊗ I_n`.
    projector: DMatrix<f64>,
    /// Pseudo-inverse of `(L_K ⊗ I_n)(D ⊗ I_n) O`.
    state_solver: DMatrix<f64>,
    /// `(L_K ⊗ I_n)(D ⊗ I_n) O`.
    projected_obs: DMatrix<f64>,
    /// Pseudo-inverse of `D_K ⊗ I_n`.
    attack_solver: DMatrix<f64>,
}

/// Precomputed exhaustive-support decoder for one `(system, D, s)`.
#[derive(Debug, Clone)]
pub struct SsrDecoder {
    n: usize,
    p: usize,
    compressed_obs: DMatrix<f64>,
    a_pow: DMatrix<f64>,
    candidates: Vec<Candidate>,
}

/// Per-support data shared by the decoder and the error bound.
fn projected_observability(
    d: &DMatrix<f64>,
    compressed_obs: &DMatrix<f64>,
    support: &[usize],
    n: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let projector = linalg::kron_identity(&detect::erasure_operator(d, support), n);
    let projected = &projector * compressed_obs;
    (projector, projected)
}

fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let max = linalg::singular_values(m).first().copied().unwrap_or(0.0);
    if max <= f64::MIN_POSITIVE {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    m.clone().pseudo_inverse(RANK_RTOL * max).expect("non-negative tolerance")
}

/// `Ok(σ_min)` when the projected observability matrix has full column rank,
/// judged against the unprojected scale so roundoff never passes as rank.
fn identifiable(projected: &DMatrix<f64>, scale: f64) -> Result<f64, f64> {
    let (min, max) = linalg::extreme_singular_values(projected);
    if projected.nrows() >= projected.ncols() && max > 0.0 && min > RANK_RTOL * max.max(scale) {
        Ok(min)
    } else {
        Err(min)
    }
}

impl SsrDecoder {
    pub fn new(sys: &LtiSystem, comp: &CompressionMatrix, s: usize) -> Result<Self, DecodeError> {
        let (n, p) = (sys.n(), sys.p());
        let d = comp.d();
        if d.ncols() != p {
            return Err(DecodeError::Compression { cols: d.ncols(), p });
        }
        let compressed_obs = linalg::kron_identity(d, n) * observability_stack(sys).stacked;
        let scale = compressed_obs.norm();
        let mut candidates = Vec::new();
        let mut failure = None;
        detect::for_each_subset_up_to(p, s, detect::DEFAULT_SUBSET_BUDGET, |support| {
            if failure.is_some() {
                return;
            }
            let (projector, projected_obs) = projected_observability(d, &compressed_obs, support, n);
            if let Err(sigma_min) = identifiable(&projected_obs, scale) {
                failure = Some(DecodeError::RankDeficient { support: support.to_vec(), sigma_min });
                return;
            }
            let dk = DMatrix::from_fn(d.nrows(), support.len(), |r, c| d[(r, support[c])]);
            candidates.push(Candidate {
                support: support.to_vec(),
                state_solver: pseudo_inverse(&projected_obs),
                attack_solver: pseudo_inverse(&linalg::kron_identity(&dk, n)),
                projector,
                projected_obs,
            });
        })?;
        if let Some(err) = failure {
            return Err(err);
        }
        Ok(Self { n, p, compressed_obs, a_pow: linalg::mat_pow(sys.a(), n - 1), candidates })
    }

    /// Decodes the tracked estimate `w ≈ (1/p)(D ⊗ I_n) Y`.
    pub fn decode(&self, w: &DVector<f64>) -> Result<DecodeResult, DecodeError> {
        let n = self.n;
        let expected = self.compressed_obs.nrows();
        if w.len() != expected {
            return Err(DecodeError::Length { got: w.len(), expected });
        }
        let target = w * self.p as f64;
        let tie = TIE_RTOL * target.norm().max(1.0);

        let mut table = Vec::with_capacity(self.candidates.len());
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for (k, cand) in self.candidates.iter().enumerate() {
            let projected_target = &cand.projector * &target;
            let x = &cand.state_solver * &projected_target;
            let residual = (&cand.projected_obs * &x - projected_target).norm();
            table.push((cand.support.clone(), residual));
            if best.as_ref().is_none_or(|(_, r, _)| residual < r - tie) {
                best = Some((k, residual, x));
            }
        }
        let (k, residual, x_hat) = best.expect("the empty support is always a candidate");
        let cand = &self.candidates[k];

        let mismatch = &target - &self.compressed_obs * &x_hat;
        let attack_blocks = &cand.attack_solver * mismatch;
        let mut attack_hat = DVector::zeros(self.p * n);
        for (slot, &node) in cand.support.iter().enumerate() {
            attack_hat.rows_mut(node * n, n).copy_from(&attack_blocks.rows(slot * n, n));
        }
        Ok(DecodeResult {
            x_hat_now: &self.a_pow * &x_hat,
            x_hat,
            support_hat: cand.support.clone(),
            attack_hat,
            residual,
            table,
        })
    }

    pub fn supports(&self) -> impl Iterator<Item = &[usize]> {
        self.candidates.iter().map(|c| c.support.as_slice())
    }
}

/// One-shot decode; see [`SsrDecoder`].
pub fn ssr_decode(
    w: &DVector<f64>,
    sys: &LtiSystem,
    comp: &CompressionMatrix,
    s: usize,
) -> Result<DecodeResult, DecodeError> {
    SsrDecoder::new(sys, comp, s)?.decode(w)
}

/// Robustness constant: `β = max_{|K| ≤ 2s} 2 / σ_min((L_K ⊗ I_n)(D ⊗ I_n) O)`,
/// so a tracking error of norm `α` in `p·W_i` moves the decoded state by at
/// most `β α`.
pub fn error_bound_beta(sys: &LtiSystem, comp: &CompressionMatrix, s: usize) -> Result<f64, DecodeError> {
    let (n, p) = (sys.n(), sys.p());
    let d = comp.d();
    if d.ncols() != p {
        return Err(DecodeError::Compression { cols: d.ncols(), p });
    }
    let compressed_obs = linalg::kron_identity(d, n) * observability_stack(sys).stacked;
    let scale = compressed_obs.norm();
    let mut beta: f64 = 0.0;
    let mut failure = None;
    detect::for_each_subset_up_to(p, 2 * s, detect::DEFAULT_SUBSET_BUDGET, |support| {
        if failure.is_some() {
            return;
        }
        let (_, projected) = projected_observability(d, &compressed_obs, support, n);
        match identifiable(&projected, scale) {
            Ok(sigma_min) => beta = beta.max(2.0 / sigma_min),
            Err(sigma_min) => {
                failure = Some(DecodeError::RankDeficient { support: support.to_vec(), sigma_min })
            }
        }
    })?;
    match failure {
        Some(err) => Err(err),
        None => Ok(beta),
    }
}

/// Decoding recast as a classical secure state reconstruction instance:
/// `Y = [O N] [x; r] + E` with `ℛ(N) = ker(D ⊗ I_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlackInstance {
    /// `[O N]`.
    pub matrix: DMatrix<f64>,
    /// A lift `Y₀` with `(D ⊗ I_n) Y₀ = p·W_i`.
    pub target: DVector<f64>,
    pub n: usize,
    pub p: usize,
}

pub fn slack_reduction(w: &DVector<f64>, sys: &LtiSystem, comp: &CompressionMatrix) -> SlackInstance {
    let (n, p) = (sys.n(), sys.p());
    let obs = observability_stack(sys).stacked;
    let kernel = comp.kernel();
    let mut matrix = DMatrix::zeros(p * n, n + kernel.ncols());
    matrix.view_mut((0, 0), (p * n, n)).copy_from(&obs);
    matrix.view_mut((0, n), kernel.shape()).copy_from(kernel);
    let lift = linalg::least_squares(&linalg::kron_identity(comp.d(), n), &(w * p as f64));
    SlackInstance { matrix, target: lift, n, p }
}

impl SlackInstance {
    /// Exhaustive classical solver: for each support `K` with `|K| ≤ s`, drop
    /// the row blocks of `K` and fit `[x; r]` to the rest. Returns the state,
    /// support and residual of the best fit (smaller supports win ties).
    pub fn solve(&self, s: usize) -> Result<(DVector<f64>, Vec<usize>, f64), DetectError> {
        let (n, p) = (self.n, self.p);
        let tie = TIE_RTOL * self.target.norm().max(1.0);
        let mut best: Option<(DVector<f64>, Vec<usize>, f64)> = None;
        detect::for_each_subset_up_to(p, s, detect::DEFAULT_SUBSET_BUDGET, |support| {
            let kept_rows: Vec<usize> = detect::complement(p, support)
                .into_iter()
                .flat_map(|i| i * n..(i + 1) * n)
                .collect();
            let m = self.matrix.select_rows(&kept_rows);
            let y = self.target.select_rows(&kept_rows);
            let sol = linalg::least_squares(&m, &y);
            let residual = (&m * &sol - &y).norm();
            if best.as_ref().is_none_or(|(_, _, r)| residual < r - tie) {
                best = Some((sol.rows(0, n).into_owned(), support.to_vec(), residual));
            }
        })?;
        Ok(best.expect("the empty support is always enumerated"))
    }
}

/// `A^steps x`.
pub fn propagate_estimate(x: &DVector<f64>, a: &DMatrix<f64>, steps: usize) -> DVector<f64> {
    linalg::mat_pow(a, steps) * x
}
