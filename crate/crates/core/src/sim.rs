//! Synchronous-round simulator.
//!
//! Round `t`: the plant emits `y[t] = C x[t] + e[t]`, every node appends its
//! sample to its window, and once windows are full (`t = n − 1`) the observer
//! is initialized. From `t = n` on, each round runs the local sanity check,
//! one observer exchange, and a decode on the configured cadence; estimates
//! are propagated by `A` between decodes.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{self, AttackGenerator, AttackPlan, SanityOutcome};
use crate::compress::{self, CompressionMatrix};
use crate::decoder::{self, SsrDecoder};
use crate::detect;
use crate::graph::{self, CommGraph};
use crate::model::{self, LtiSystem, MeasurementWindow};
use crate::tracker::{self, NodeState, TrackerGains};

/// Errors above this magnitude stop a run early.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Lower edge of the decay-rate fitting window.
pub const FIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario failed validation: {}", .0.failures().join("; "))]
    Validation(ValidationReport),
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension { what: &'static str, got: usize, expected: usize },
    #[error("decode cadence must be at least 1")]
    Cadence,
    #[error(transparent)]
    Detect(#[from] detect::DetectError),
    #[error(transparent)]
    Tracker(#[from] tracker::TrackerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least two points inside the fitting window, found {0}")]
    TooShort(usize),
    #[error("series starts at or below the numeric floor")]
    Floor,
    #[error("series contains a non-finite or negative value")]
    Invalid,
}

/// Observer state at the first full window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerInit {
    /// `W_i = φ_i`, `b_i = 0`.
    #[default]
    Input,
    /// `W_i = 0`, `b_i = 0`.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub sys: LtiSystem,
    pub graph: CommGraph,
    /// Compression matrix, certified during validation.
    pub d: DMatrix<f64>,
    pub s: usize,
    pub x0: DVector<f64>,
    pub attack: AttackPlan,
    pub horizon: usize,
    /// `None` selects gains from the Laplacian spectrum.
    pub gains: Option<TrackerGains>,
    pub epsilon: f64,
    pub seed: u64,
    pub decode_cadence: usize,
    pub tracker_init: TrackerInit,
}

impl Scenario {
    /// Attack-free scenario with `D = I`, automatic gains, per-step decoding.
    pub fn new(sys: LtiSystem, graph: CommGraph, s: usize, x0: DVector<f64>, horizon: usize) -> Self {
        let p = sys.p();
        Self {
            sys,
            graph,
            d: DMatrix::identity(p, p),
            s,
            x0,
            attack: AttackPlan::none(),
            horizon,
            gains: None,
            epsilon: adversary::DEFAULT_EPSILON,
            seed: 0,
            decode_cadence: 1,
            tracker_init: TrackerInit::Input,
        }
    }

    pub fn resolved_gains(&self) -> Option<TrackerGains> {
        self.gains.or_else(|| tracker::select_gains(&self.graph).ok())
    }

    fn check_dimensions(&self) -> Result<(), SimError> {
        let (n, p) = (self.sys.n(), self.sys.p());
        let dims = [
            ("graph", self.graph.p(), p),
            ("compression matrix columns", self.d.ncols(), p),
            ("initial state", self.x0.len(), n),
        ];
        for (what, got, expected) in dims {
            if got != expected {
                return Err(SimError::Dimension { what, got, expected });
            }
        }
        if self.decode_cadence == 0 {
            return Err(SimError::Cadence);
        }
        Ok(())
    }

    /// Runs every pre-run check. Only enumeration budget overruns are errors;
    /// failed checks are reported.
    pub fn validate(&self) -> Result<ValidationReport, SimError> {
        self.check_dimensions()?;
        let mut checks = Vec::new();
        let connected = graph::check_connected(&self.graph);
        checks.push(Check::new(
            "connectivity",
            connected,
            if connected {
                format!("λ₂ = {:.6}", self.graph.algebraic_connectivity())
            } else {
                "Assumption 1 violated: communication graph is not connected".into()
            },
        ));

        let sampling = model::check_sampling_condition(&self.sys, self.graph.spectrum());
        checks.push(match sampling {
            Ok(r) => Check::new(
                "sampling condition",
                r.pass,
                format!(
                    "coupling margin {}, shift margin {} (worst eigenvalue {})",
                    fmt_margin(r.coupling_margin),
                    fmt_margin(r.shift_margin),
                    r.worst_shift_eigenvalue
                ),
            ),
            Err(e) => Check::new("sampling condition", false, e.to_string()),
        });

        let index = detect::sparse_detectability_index(&self.sys)?;
        let solvable = detect::solvable_with(&index, self.sys.p(), self.s);
        let verdict = if solvable {
            "solvable".to_string()
        } else if !index.base_detectable() {
            "not solvable (pair is not detectable)".to_string()
        } else {
            format!("not solvable (index {} < {})", index.index, 2 * self.s)
        };
        let witness = index
            .witness
            .as_ref()
            .map(|w| format!("; witness: erase {} hides {}", fmt_nodes(&w.removed), w.eigenvalue))
            .unwrap_or_default();
        checks.push(Check::new(
            "sparse detectability",
            solvable,
            format!("index {}, verdict: {verdict}{witness}", index.index),
        ));

        let certification = compress::validate_compression(&self.sys, self.d.clone(), self.s);
        checks.push(match &certification {
            Ok(cm) => Check::new(
                "compression certification",
                true,
                format!("{}x{} matrix certified for s = {}", cm.v(), self.sys.p(), self.s),
            ),
            Err(e) => Check::new("compression certification", false, e.to_string()),
        });

        checks.push(match self.resolved_gains() {
            Some(gains) => {
                let report = tracker::verify_gain_stability(&self.sys, &self.graph, gains);
                Check::new(
                    "gain stability",
                    report.stable,
                    format!(
                        "k_P = {}, k_I = {}, max spectral radius {:.6}",
                        gains.k_p, gains.k_i, report.max_spectral_radius
                    ),
                )
            }
            None => Check::new("gain stability", false, "no gains: Laplacian has no nonzero eigenvalue".into()),
        });

        Ok(ValidationReport { checks, solvable })
    }
}

fn fmt_margin(m: f64) -> String {
    if m.is_infinite() {
        "n/a".into()
    } else {
        format!("{m:.6}")
    }
}

/// 1-based, `;`-separated; `none` for the empty set.
pub fn fmt_nodes(nodes: &[usize]) -> String {
    if nodes.is_empty() {
        "none".into()
    } else {
        nodes.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Solvability verdict alone, independent of the other checks.
    pub solvable: bool,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.name, c.detail)).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeRecord {
    /// `‖W_i − (1/p)(D ⊗ I_n) Y‖`, from the first full window on.
    pub w_err: Option<f64>,
    /// `‖x̂_i_now − x[t]‖`, once node `i` has decoded.
    pub x_err: Option<f64>,
    pub sanity: Option<SanityOutcome>,
    /// Support decoded in this round; `None` when no decode ran.
    pub decoded_support: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub x: DVector<f64>,
    /// `(1/p)(D ⊗ I_n) Y[t]`, the tracked target.
    pub compressed: Option<DVector<f64>>,
    /// `z₁ − z₁,target`.
    pub z1_error: Option<DVector<f64>>,
    pub z2_norm: Option<f64>,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub steps: Vec<StepRecord>,
    pub validation: ValidationReport,
    pub gains: Option<TrackerGains>,
    pub max_spectral_radius: Option<f64>,
    pub beta: Option<f64>,
    /// Why the run could not decode, if it could not.
    pub decoder_note: Option<String>,
    pub diverged: bool,
}

impl ScenarioTrace {
    /// Per-step maximum over nodes of a node metric, skipping steps without data.
    pub fn max_over_nodes(&self, metric: impl Fn(&NodeRecord) -> Option<f64>) -> Vec<(usize, f64)> {
        self.steps
            .iter()
            .filter_map(|s| {
                let values: Vec<f64> = s.nodes.iter().filter_map(&metric).collect();
                (!values.is_empty()).then(|| (s.t, values.into_iter().fold(0.0, f64::max)))
            })
            .collect()
    }

    pub fn w_err_series(&self) -> Vec<(usize, f64)> {
        self.max_over_nodes(|r| r.w_err)
    }

    pub fn x_err_series(&self) -> Vec<(usize, f64)> {
        self.max_over_nodes(|r| r.x_err)
    }

    pub fn z1_err_series(&self) -> Vec<(usize, f64)> {
        self.steps.iter().filter_map(|s| s.z1_error.as_ref().map(|e| (s.t, e.norm()))).collect()
    }

    pub fn z2_norm_series(&self) -> Vec<(usize, f64)> {
        self.steps.iter().filter_map(|s| s.z2_norm.map(|z| (s.t, z))).collect()
    }

    pub fn step(&self, t: usize) -> Option<&StepRecord> {
        self.steps.get(t).filter(|s| s.t == t)
    }

    /// One row per `(t, node)`. Empty cells mean "not yet available".
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "node",
            "w_err",
            "x_err",
            "sanity_pass",
            "sanity_residual",
            "z1_err",
            "z2_norm",
            "decoded_support",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for step in &self.steps {
            let z1 = opt(step.z1_error.as_ref().map(|e| e.norm()));
            let z2 = opt(step.z2_norm);
            for (i, node) in step.nodes.iter().enumerate() {
                w.write_record([
                    step.t.to_string(),
                    (i + 1).to_string(),
                    opt(node.w_err),
                    opt(node.x_err),
                    node.sanity.map(|s| s.pass.to_string()).unwrap_or_default(),
                    opt(node.sanity.map(|s| s.residual)),
                    z1.clone(),
                    z2.clone(),
                    node.decoded_support.as_deref().map(fmt_nodes).unwrap_or_default(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let fit = |series: Vec<(usize, f64)>| {
            let values: Vec<f64> = series.into_iter().map(|(_, v)| v).collect();
            fit_decay_rate(&values).ok()
        };
        let last = |series: Vec<(usize, f64)>| series.last().map(|&(_, v)| v);
        RunSummary {
            steps: self.steps.len(),
            diverged: self.diverged,
            validation_pass: self.validation.pass(),
            gains_k_p: self.gains.map(|g| g.k_p),
            gains_k_i: self.gains.map(|g| g.k_i),
            max_spectral_radius: self.max_spectral_radius,
            beta: self.beta,
            decoder_note: self.decoder_note.clone(),
            alpha_w: fit(self.w_err_series()),
            alpha_z1: fit(self.z1_err_series()),
            alpha_z2: fit(self.z2_norm_series()),
            final_w_err: last(self.w_err_series()),
            final_x_err: last(self.x_err_series()),
            checks: self.validation.checks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub diverged: bool,
    pub validation_pass: bool,
    pub gains_k_p: Option<f64>,
    pub gains_k_i: Option<f64>,
    pub max_spectral_radius: Option<f64>,
    pub beta: Option<f64>,
    pub decoder_note: Option<String>,
    pub alpha_w: Option<f64>,
    pub alpha_z1: Option<f64>,
    pub alpha_z2: Option<f64>,
    pub final_w_err: Option<f64>,
    pub final_x_err: Option<f64>,
    pub checks: Vec<Check>,
}

/// Validates, then runs. Refuses scenarios that fail any check.
pub fn run_scenario(sc: &Scenario) -> Result<ScenarioTrace, SimError> {
    let report = sc.validate()?;
    if !report.pass() {
        return Err(SimError::Validation(report));
    }
    simulate(sc, report)
}

/// Runs regardless of validation failures. Without a certified compression
/// matrix the run tracks but does not decode; an unstable loop ends in a
/// trace flagged `diverged`.
pub fn run_scenario_unchecked(sc: &Scenario) -> Result<ScenarioTrace, SimError> {
    let report = sc.validate()?;
    simulate(sc, report)
}

/// `φ_i` with block `j` equal to `d_{ji} Z_i`.
fn node_inputs(d: &DMatrix<f64>, windows: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let (v, n) = (d.nrows(), windows.first().map_or(0, |z| z.len()));
    windows
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut phi = DVector::zeros(v * n);
            for j in 0..v {
                phi.rows_mut(j * n, n).copy_from(&(z * d[(j, i)]));
            }
            phi
        })
        .collect()
}

fn simulate(sc: &Scenario, validation: ValidationReport) -> Result<ScenarioTrace, SimError> {
    let sys = &sc.sys;
    let (n, p) = (sys.n(), sys.p());
    let a_hat = sys.companion();
    let gains = sc.resolved_gains();
    let max_spectral_radius =
        gains.map(|g| tracker::verify_gain_stability(sys, &sc.graph, g).max_spectral_radius);

    let (decoder, beta, decoder_note) = match compress::validate_compression(sys, sc.d.clone(), sc.s) {
        Ok(cm) => build_decoder(sys, &cm, sc.s),
        Err(e) => (None, None, Some(format!("no decoding: {e}"))),
    };

    let mut trace = ScenarioTrace {
        steps: Vec::with_capacity(sc.horizon),
        validation,
        gains,
        max_spectral_radius,
        beta,
        decoder_note,
        diverged: false,
    };
    let Some(gains) = gains else {
        trace.decoder_note = Some("no gains: tracking skipped".into());
        return Ok(trace);
    };

    let mut x = sc.x0.clone();
    let mut attacks = AttackGenerator::new(sc.attack.clone());
    let mut windows: Vec<MeasurementWindow> = (0..p).map(|i| MeasurementWindow::new(i, n)).collect();
    let mut states: Option<Vec<NodeState>> = None;
    let mut prev_inputs: Vec<DVector<f64>> = Vec::new();
    let mut estimates: Vec<Option<DVector<f64>>> = vec![None; p];

    for t in 0..sc.horizon {
        let y = sys.measure(&x) + attacks.next(sys, &x);
        let prev_windows: Vec<Option<DVector<f64>>> = windows.iter().map(|w| w.vector()).collect();
        for (w, &yi) in windows.iter_mut().zip(y.iter()) {
            w.push(t, yi);
        }

        let mut step = StepRecord {
            t,
            x: x.clone(),
            compressed: None,
            z1_error: None,
            z2_norm: None,
            nodes: vec![NodeRecord::default(); p],
        };
        if t + 1 >= n {
            let z: Vec<DVector<f64>> = windows.iter().map(|w| w.vector().expect("window is full")).collect();
            let inputs = node_inputs(&sc.d, &z);
            let target = inputs.iter().fold(DVector::zeros(inputs[0].len()), |acc, phi| acc + phi) / p as f64;

            let next_states = match states.take() {
                None => {
                    let init: Vec<DVector<f64>> = match sc.tracker_init {
                        TrackerInit::Input => inputs.clone(),
                        TrackerInit::Zero => vec![DVector::zeros(target.len()); p],
                    };
                    tracker::init_states(&init, windows.clone(), &sc.graph, gains, n)?
                }
                Some(prev) => tracker::tracker_step(&prev, &prev_inputs, &sc.graph, gains, a_hat)?,
            };
            let diag = tracker::decomposition_diagnostics(&next_states, &inputs);
            step.z1_error = Some(diag.z1_error());
            step.z2_norm = Some(diag.z2_norm);

            let decode_now = t >= n && (t - n) % sc.decode_cadence == 0;
            for (i, rec) in step.nodes.iter_mut().enumerate() {
                rec.w_err = Some((&next_states[i].w - &target).norm());
                if t < n {
                    continue;
                }
                let prev = prev_windows[i].as_ref().expect("window was full last round");
                rec.sanity = Some(adversary::sanity_residual(prev, &z[i], a_hat, sc.epsilon));
                if let (true, Some(dec)) = (decode_now, decoder.as_ref()) {
                    let res = dec.decode(&next_states[i].w).expect("decoder dimensions fixed at setup");
                    rec.decoded_support = Some(res.support_hat);
                    estimates[i] = Some(res.x_hat_now);
                } else if let Some(est) = estimates[i].take() {
                    estimates[i] = Some(sys.a() * est);
                }
                rec.x_err = estimates[i].as_ref().map(|est| (est - &x).norm());
            }
            step.compressed = Some(target);
            states = Some(next_states);
            prev_inputs = inputs;
        }

        let diverged = !x.iter().all(|v| v.is_finite())
            || step.nodes.iter().any(|r| {
                [r.w_err, r.x_err].into_iter().flatten().any(|e| !e.is_finite() || e > DIVERGENCE_THRESHOLD)
            });
        trace.steps.push(step);
        if diverged {
            trace.diverged = true;
            break;
        }
        x = sys.a() * x;
    }
    Ok(trace)
}

fn build_decoder(
    sys: &LtiSystem,
    cm: &CompressionMatrix,
    s: usize,
) -> (Option<SsrDecoder>, Option<f64>, Option<String>) {
    let beta = decoder::error_bound_beta(sys, cm, s);
    match SsrDecoder::new(sys, cm, s) {
        Ok(dec) => match beta {
            Ok(b) => (Some(dec), Some(b), None),
            Err(e) => (Some(dec), None, Some(format!("error bound unavailable: {e}"))),
        },
        Err(e) => (None, None, Some(format!("no decoding: {e}"))),
    }
}

/// Geometric rate `α` of a decaying series by least squares on `log e_t`.
///
/// The window starts at the first point at or below `e_0 / 10` (or at `0` if
/// there is none) and stops before the first point below [`FIT_FLOOR`].
pub fn fit_decay_rate(series: &[f64]) -> Result<f64, FitError> {
    if series.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(FitError::Invalid);
    }
    let first = *series.first().ok_or(FitError::TooShort(0))?;
    if first < FIT_FLOOR {
        return Err(FitError::Floor);
    }
    let start = series.iter().position(|&v| v <= first / 10.0).unwrap_or(0);
    let end = series[start..].iter().position(|&v| v < FIT_FLOOR).map_or(series.len(), |k| start + k);
    let points: Vec<(f64, f64)> = (start..end).map(|t| (t as f64, series[t].ln())).collect();
    if points.len() < 2 {
        return Err(FitError::TooShort(points.len()));
    }
    let m = points.len() as f64;
    let (mt, ml) = points.iter().fold((0.0, 0.0), |(a, b), &(t, l)| (a + t / m, b + l / m));
    let (num, den) = points
        .iter()
        .fold((0.0, 0.0), |(num, den), &(t, l)| (num + (t - mt) * (l - ml), den + (t - mt).powi(2)));
    Ok((num / den).exp())
}
