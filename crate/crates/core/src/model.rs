//! Plant model: the LTI system, its lifted measurement-window dynamics and
//! the system-side assumption checks.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::linalg::{self, Complex64, UNSTABLE_MAGNITUDE};

/// Laplacian eigenvalues at or below this value count as zero.
pub const LAPLACIAN_ZERO_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("state matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("sensor matrix has {cols} columns but the state dimension is {n}")]
    SensorDimension { cols: usize, n: usize },
    #[error("at least one sensor node is required")]
    NoSensors,
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("sampling period must be positive and finite, got {0}")]
    InvalidSamplingPeriod(f64),
    #[error("Laplacian spectrum has no nonzero eigenvalue")]
    TrivialSpectrum,
}

/// Discrete-time plant `x[t+1] = A x[t]`, `y_i[t] = C_i x[t] + e_i[t]`, one
/// scalar sensor per node.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    char_poly: Vec<f64>,
    companion: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, ModelError> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(ModelError::NotSquare { rows: a.nrows(), cols: a.ncols() });
        }
        if c.ncols() != a.nrows() {
            return Err(ModelError::SensorDimension { cols: c.ncols(), n: a.nrows() });
        }
        if c.nrows() == 0 {
            return Err(ModelError::NoSensors);
        }
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let char_poly = characteristic_polynomial(&a);
        let companion = companion_from_coefficients(&char_poly);
        Ok(Self { a, c, char_poly, companion })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Number of sensor nodes.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn sensor_row(&self, node: usize) -> RowDVector<f64> {
        self.c.row(node).into_owned()
    }

    /// Coefficients `[α_0, …, α_{n-1}]` of the monic characteristic polynomial.
    pub fn char_poly(&self) -> &[f64] {
        &self.char_poly
    }

    /// Companion form driving `Z_i[τ+1] = Â Z_i[τ]` on attack-free windows.
    pub fn companion(&self) -> &DMatrix<f64> {
        &self.companion
    }

    /// Noise-free measurements `C x`.
    pub fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Rows `C_i` for the listed nodes, in the given order.
    pub fn sensor_rows(&self, nodes: &[usize]) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(nodes.len(), n, |r, j| self.c[(nodes[r], j)])
    }
}

/// Monic characteristic polynomial `det(λI − A) = λⁿ + α_{n−1}λ^{n−1} + … + α_0`,
/// returned as `[α_0, …, α_{n−1}]` (Faddeev–LeVerrier recursion).
pub fn characteristic_polynomial(a: &DMatrix<f64>) -> Vec<f64> {
    assert!(a.is_square(), "characteristic polynomial of a non-square matrix");
    let n = a.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let identity = DMatrix::<f64>::identity(n, n);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        m = a * &m + &identity * coeffs[n - k + 1];
        coeffs[n - k] = -(a * &m).trace() / k as f64;
    }
    coeffs.truncate(n);
    coeffs
}

fn companion_from_coefficients(alpha: &[f64]) -> DMatrix<f64> {
    let n = alpha.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i + 1)] = 1.0;
    }
    for (j, &a) in alpha.iter().enumerate() {
        m[(n - 1, j)] = -a;
    }
    m
}

/// Controller (companion) form of `a`: ones on the superdiagonal and last row
/// `[−α_0, …, −α_{n−1}]`.
pub fn companion_form(a: &DMatrix<f64>) -> DMatrix<f64> {
    companion_from_coefficients(&characteristic_polynomial(a))
}

/// Per-node observability matrices `O_i = [C_i; C_i A; …; C_i A^{n−1}]` and
/// their vertical stack in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityStack {
    pub per_node: Vec<DMatrix<f64>>,
    pub stacked: DMatrix<f64>,
}

pub fn observability_stack(sys: &LtiSystem) -> ObservabilityStack {
    let (n, p) = (sys.n(), sys.p());
    let mut per_node = Vec::with_capacity(p);
    let mut stacked = DMatrix::zeros(p * n, n);
    for i in 0..p {
        let mut oi = DMatrix::zeros(n, n);
        let mut row = sys.sensor_row(i);
        for j in 0..n {
            oi.set_row(j, &row);
            row = &row * sys.a();
        }
        stacked.view_mut((i * n, 0), (n, n)).copy_from(&oi);
        per_node.push(oi);
    }
    ObservabilityStack { per_node, stacked }
}

/// Zero-order sampling of `ẋ = A_cont x` with period `tau`: `exp(A_cont τ)`.
pub fn discretize(a_cont: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>, ModelError> {
    if !a_cont.is_square() || a_cont.nrows() == 0 {
        return Err(ModelError::NotSquare { rows: a_cont.nrows(), cols: a_cont.ncols() });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ModelError::InvalidSamplingPeriod(tau));
    }
    Ok((a_cont * tau).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConditionReport {
    pub pass: bool,
    /// Minimum of `1 − [(m − λ²/λ²_max)² + n²]` over unstable eigenvalues
    /// `m + n𝐢` of A and nonzero Laplacian eigenvalues λ. `+∞` when A has no
    /// unstable eigenvalue.
    pub coupling_margin: f64,
    /// Minimum of `1 − [(m − 1)² + n²]` over all eigenvalues of A.
    pub shift_margin: f64,
    /// Pair attaining `coupling_margin`, if any unstable eigenvalue exists.
    pub worst_pair: Option<(Complex64, f64)>,
    /// Eigenvalue attaining `shift_margin`.
    pub worst_shift_eigenvalue: Complex64,
}

impl SamplingConditionReport {
    pub fn min_margin(&self) -> f64 {
        self.coupling_margin.min(self.shift_margin)
    }
}

/// Sampling-rate condition coupling the plant spectrum with the Laplacian
/// spectrum, strengthened so that every eigenvalue `a` of A also satisfies
/// `|a − 1| < 1`.
pub fn check_sampling_condition(
    sys: &LtiSystem,
    laplacian_spectrum: &[f64],
) -> Result<SamplingConditionReport, ModelError> {
    let nonzero: Vec<f64> =
        laplacian_spectrum.iter().copied().filter(|&l| l > LAPLACIAN_ZERO_TOL).collect();
    let lambda_max = nonzero.iter().copied().fold(f64::NAN, f64::max);
    if nonzero.is_empty() {
        return Err(ModelError::TrivialSpectrum);
    }
    let eigs = linalg::eigenvalues(sys.a());

    let mut coupling_margin = f64::INFINITY;
    let mut worst_pair = None;
    let mut shift_margin = f64::INFINITY;
    let mut worst_shift = Complex64::new(0.0, 0.0);
    for &mu in &eigs {
        let shift = 1.0 - ((mu.re - 1.0).powi(2) + mu.im.powi(2));
        if shift < shift_margin {
            shift_margin = shift;
            worst_shift = mu;
        }
        if mu.norm() < UNSTABLE_MAGNITUDE {
            continue;
        }
        for &lambda in &nonzero {
            let ratio = lambda * lambda / (lambda_max * lambda_max);
            let margin = 1.0 - ((mu.re - ratio).powi(2) + mu.im.powi(2));
            if margin < coupling_margin {
                coupling_margin = margin;
                worst_pair = Some((mu, lambda));
            }
        }
    }
    Ok(SamplingConditionReport {
        pass: coupling_margin > 0.0 && shift_margin > 0.0,
        coupling_margin,
        shift_margin,
        worst_pair,
        worst_shift_eigenvalue: worst_shift,
    })
}

/// Causal sliding window `Z_i[τ] = [y_i[τ−n+1], …, y_i[τ]]` of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    node: usize,
    len: usize,
    samples: VecDeque<f64>,
    latest_time: Option<usize>,
}

impl MeasurementWindow {
    pub fn new(node: usize, len: usize) -> Self {
        Self { node, len, samples: VecDeque::with_capacity(len), latest_time: None }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    /// Appends the measurement taken at time `t`, dropping the oldest sample
    /// once the window is full.
    pub fn push(&mut self, t: usize, y: f64) {
        if self.samples.len() == self.len {
            self.samples.pop_front();
        }
        self.samples.push_back(y);
        self.latest_time = Some(t);
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.len
    }

    /// Time of the oldest sample, `τ − n + 1`, once the window is full.
    pub fn base_time(&self) -> Option<usize> {
        match self.latest_time {
            Some(t) if self.is_full() => Some(t + 1 - self.len),
            _ => None,
        }
    }

    pub fn latest_time(&self) -> Option<usize> {
        self.latest_time
    }

    /// Window contents, oldest first, once full.
    pub fn vector(&self) -> Option<DVector<f64>> {
        self.is_full().then(|| DVector::from_iterator(self.len, self.samples.iter().copied()))
    }
}
