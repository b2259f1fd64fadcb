//! Dynamic average consensus observer.
//!
//! Node `i` keeps `W_i`, `b_i` and `η_i`, each made of `v` blocks of length
//! `n` (one block per row of the compression matrix). With `G = I_p ⊗ Â` and
//! `F = L ⊗ I_n` the network update is
//!
//! ```text
//! W[t+1] = (G − I) W[t] + φ[t] − 2 k_I F η[t]
//! b[t+1] = G b[t] + k_I F W[t]
//! η[t]   = k_P b[t] + k_I F W[t]
//! ```
//!
//! applied blockwise, so `W_i` tracks `(1/p) Σ_j φ_j` whenever every input
//! obeys `φ_j[t+1] = Â φ_j[t]`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{self, CommGraph, GraphError};
use crate::linalg::{self, Complex64};
use crate::model::{LtiSystem, MeasurementWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("expected {expected} node entries, got {got}")]
    NodeCount { expected: usize, got: usize },
    #[error("node {node}: vector of length {got} is not a multiple of the block length {n}, or differs from the state length {expected}")]
    BlockLength { node: usize, got: usize, expected: usize, n: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerGains {
    pub k_p: f64,
    pub k_i: f64,
}

/// `k_P = 1`, `k_I = 1/(√2 λ_max(L))`.
pub fn select_gains(g: &CommGraph) -> Result<TrackerGains, GraphError> {
    let (_, lambda_max) = graph::laplacian_extremes(g)?;
    Ok(TrackerGains { k_p: 1.0, k_i: 1.0 / (std::f64::consts::SQRT_2 * lambda_max) })
}

/// Per-mode closed loop
/// `B(λ) = [[Â − I − 2k_I²λ² I, −2k_I k_P λ I], [k_I λ I, Â]]`.
pub fn closed_loop_block(a_hat: &DMatrix<f64>, lambda: f64, gains: TrackerGains) -> DMatrix<f64> {
    let n = a_hat.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let TrackerGains { k_p, k_i } = gains;
    let mut b = DMatrix::zeros(2 * n, 2 * n);
    b.view_mut((0, 0), (n, n))
        .copy_from(&(a_hat - &eye - &eye * (2.0 * k_i * k_i * lambda * lambda)));
    b.view_mut((0, n), (n, n)).copy_from(&(&eye * (-2.0 * k_i * k_p * lambda)));
    b.view_mut((n, 0), (n, n)).copy_from(&(&eye * (k_i * lambda)));
    b.view_mut((n, n), (n, n)).copy_from(a_hat);
    b
}

/// Both eigenvalues of the scalar closed loop
/// `[[a − 1 − c, −2k_P k_I λ], [k_I λ, a]]` with `c = 2k_I²λ²`, for a
/// (possibly complex) plant eigenvalue `a`.
///
/// The discriminant `(1 + c)² − 4c·k_P` does not depend on `a` and is
/// evaluated as `(1 − c)² + 4c(1 − k_P)`, which stays accurate at the double
/// root `c = 1`, `k_P = 1`.
pub fn scalar_closed_loop_eigenvalues(a: Complex64, lambda: f64, gains: TrackerGains) -> [Complex64; 2] {
    let TrackerGains { k_p, k_i } = gains;
    let c = 2.0 * k_i * k_i * lambda * lambda;
    let disc = (1.0 - c).powi(2) + 4.0 * c * (1.0 - k_p);
    let half_root = Complex64::new(disc, 0.0).sqrt() / 2.0;
    let center = a - (1.0 + c) / 2.0;
    [center + half_root, center - half_root]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainStabilityReport {
    pub stable: bool,
    pub max_spectral_radius: f64,
    /// `(λ, ρ(B(λ)))` for each distinct nonzero Laplacian eigenvalue.
    pub per_eigenvalue: Vec<(f64, f64)>,
}

/// Checks `ρ(B(λ)) < 1` for every nonzero Laplacian eigenvalue.
pub fn verify_gain_stability(sys: &LtiSystem, g: &CommGraph, gains: TrackerGains) -> GainStabilityReport {
    let mut distinct: Vec<f64> = Vec::new();
    for lambda in g.nonzero_spectrum() {
        if distinct.last().is_none_or(|&prev| (lambda - prev).abs() > 1e-9 * lambda.max(1.0)) {
            distinct.push(lambda);
        }
    }
    let per_eigenvalue: Vec<(f64, f64)> = distinct
        .into_iter()
        .map(|lambda| (lambda, linalg::spectral_radius(&closed_loop_block(sys.companion(), lambda, gains))))
        .collect();
    let max_spectral_radius = per_eigenvalue.iter().map(|&(_, r)| r).fold(0.0, f64::max);
    GainStabilityReport {
        stable: !per_eigenvalue.is_empty() && max_spectral_radius < 1.0,
        max_spectral_radius,
        per_eigenvalue,
    }
}

/// Per-node observer state.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: usize,
    /// Estimate of `(1/p)(D ⊗ I_n) Y`.
    pub w: DVector<f64>,
    /// Integral state.
    pub b: DVector<f64>,
    /// Derived output `k_P b + k_I (F W)_i`.
    pub eta: DVector<f64>,
    pub window: MeasurementWindow,
}

fn check_inputs(
    expected_nodes: usize,
    inputs: &[DVector<f64>],
    n: usize,
    expected_len: Option<usize>,
) -> Result<usize, TrackerError> {
    if inputs.len() != expected_nodes {
        return Err(TrackerError::NodeCount { expected: expected_nodes, got: inputs.len() });
    }
    let len = expected_len.unwrap_or_else(|| inputs.first().map_or(0, |x| x.len()));
    for (node, x) in inputs.iter().enumerate() {
        if x.len() != len || n == 0 || x.len() % n != 0 {
            return Err(TrackerError::BlockLength { node, got: x.len(), expected: len, n });
        }
    }
    Ok(len)
}

/// Initial states `W_i = φ_i`, `b_i = 0`, `η_i = k_I (F W)_i`.
pub fn init_states(
    inputs: &[DVector<f64>],
    windows: Vec<MeasurementWindow>,
    g: &CommGraph,
    gains: TrackerGains,
    n: usize,
) -> Result<Vec<NodeState>, TrackerError> {
    let p = g.p();
    let len = check_inputs(p, inputs, n, None)?;
    if windows.len() != p {
        return Err(TrackerError::NodeCount { expected: p, got: windows.len() });
    }
    let w: Vec<DVector<f64>> = inputs.to_vec();
    Ok(windows
        .into_iter()
        .enumerate()
        .map(|(i, window)| NodeState {
            id: i,
            eta: g.laplacian_action(&w, i) * gains.k_i,
            w: w[i].clone(),
            b: DVector::zeros(len),
            window,
        })
        .collect())
}

/// One synchronous round. Node `i` reads `W_j[t]`, `η_j[t]` of its neighbors
/// to form `W_i[t+1]` and `b_i[t+1]`, then refreshes `η_i[t+1]` from the
/// neighbors' `W_j[t+1]`. Neighbor sums run in ascending id order.
pub fn tracker_step(
    states: &[NodeState],
    inputs: &[DVector<f64>],
    g: &CommGraph,
    gains: TrackerGains,
    a_hat: &DMatrix<f64>,
) -> Result<Vec<NodeState>, TrackerError> {
    let p = g.p();
    let n = a_hat.nrows();
    if states.len() != p {
        return Err(TrackerError::NodeCount { expected: p, got: states.len() });
    }
    let len = states.first().map_or(0, |s| s.w.len());
    check_inputs(p, inputs, n, Some(len))?;

    let w: Vec<DVector<f64>> = states.iter().map(|s| s.w.clone()).collect();
    let eta: Vec<DVector<f64>> = states.iter().map(|s| s.eta.clone()).collect();
    for (i, s) in states.iter().enumerate() {
        if s.b.len() != len || s.eta.len() != len || s.w.len() != len {
            return Err(TrackerError::BlockLength { node: i, got: s.w.len(), expected: len, n });
        }
    }

    let mut next_w = Vec::with_capacity(p);
    let mut next_b = Vec::with_capacity(p);
    for i in 0..p {
        let f_eta = g.laplacian_action(&eta, i);
        let f_w = g.laplacian_action(&w, i);
        let wi = linalg::apply_blockwise(a_hat, &w[i]) - &w[i] + &inputs[i] - f_eta * (2.0 * gains.k_i);
        let bi = linalg::apply_blockwise(a_hat, &states[i].b) + f_w * gains.k_i;
        next_w.push(wi);
        next_b.push(bi);
    }

    Ok(states
        .iter()
        .enumerate()
        .map(|(i, s)| NodeState {
            id: s.id,
            eta: &next_b[i] * gains.k_p + g.laplacian_action(&next_w, i) * gains.k_i,
            w: next_w[i].clone(),
            b: next_b[i].clone(),
            window: s.window.clone(),
        })
        .collect())
}

/// Consensus / disagreement split of the network estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionDiagnostics {
    /// `(1/√p) Σ_i W_i`.
    pub z1: DVector<f64>,
    /// `(1/√p) Σ_i φ_i`.
    pub z1_target: DVector<f64>,
    pub z1_target_error: f64,
    /// Norm of the stacked `W` minus its consensus projection.
    pub z2_norm: f64,
}

impl DecompositionDiagnostics {
    pub fn z1_error(&self) -> DVector<f64> {
        &self.z1 - &self.z1_target
    }
}

pub fn decomposition_diagnostics(states: &[NodeState], inputs: &[DVector<f64>]) -> DecompositionDiagnostics {
    let p = states.len();
    let len = states.first().map_or(0, |s| s.w.len());
    let scale = 1.0 / (p as f64).sqrt();
    let sum_w = states.iter().fold(DVector::zeros(len), |acc, s| acc + &s.w);
    let sum_phi = inputs.iter().fold(DVector::zeros(len), |acc, x| acc + x);
    let z1 = &sum_w * scale;
    let z1_target = &sum_phi * scale;
    let mean = &sum_w / p as f64;
    let z2_norm = states.iter().map(|s| (&s.w - &mean).norm_squared()).sum::<f64>().sqrt();
    DecompositionDiagnostics { z1_target_error: (&z1 - &z1_target).norm(), z1, z1_target, z2_norm }
}
