//! Sparse sensor attacks and the local sanity check.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::detect::{self, DetectError};
use crate::linalg::{self, Complex64};
use crate::model::{LtiSystem, MeasurementWindow};

/// Default local sanity-check tolerance.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("attack support has {support} nodes but at most {s} may be attacked")]
    SupportTooLarge { support: usize, s: usize },
    #[error("attacked node {node} does not exist (p = {p})")]
    NodeOutOfRange { node: usize, p: usize },
    #[error("attack vector for node {node} has length {got}, expected {expected}")]
    VectorLength { node: usize, got: usize, expected: usize },
    #[error("measurement window of node {node} is not full yet (warm-up)")]
    IncompleteWindow { node: usize },
    #[error(transparent)]
    Detect(#[from] DetectError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackKind {
    /// The node reports `C_i A^t x′₀`, a valid trajectory of a fake state.
    ConsistentFakeState { fake_x0: DVector<f64> },
    /// Additive `e_i[t] = (Â^t e₀)_1`, so the error window evolves under `Â`.
    CompanionDrift { e0: DVector<f64> },
    /// Constant offset `c` from time `t0` on.
    Jump { t0: usize, offset: f64 },
}

/// Fixed attack support (0-based node ids) with per-node attack kinds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackPlan {
    attacks: BTreeMap<usize, AttackKind>,
}

impl AttackPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(
        sys: &LtiSystem,
        s: usize,
        attacks: BTreeMap<usize, AttackKind>,
    ) -> Result<Self, AttackError> {
        if attacks.len() > s {
            return Err(AttackError::SupportTooLarge { support: attacks.len(), s });
        }
        let (n, p) = (sys.n(), sys.p());
        for (&node, kind) in &attacks {
            if node >= p {
                return Err(AttackError::NodeOutOfRange { node, p });
            }
            let len = match kind {
                AttackKind::ConsistentFakeState { fake_x0 } => fake_x0.len(),
                AttackKind::CompanionDrift { e0 } => e0.len(),
                AttackKind::Jump { .. } => n,
            };
            if len != n {
                return Err(AttackError::VectorLength { node, got: len, expected: n });
            }
        }
        Ok(Self { attacks })
    }

    pub fn support(&self) -> Vec<usize> {
        self.attacks.keys().copied().collect()
    }

    pub fn attacks(&self) -> &BTreeMap<usize, AttackKind> {
        &self.attacks
    }

    pub fn is_empty(&self) -> bool {
        self.attacks.is_empty()
    }
}

/// `m^t v`, one multiplication per step so it matches a stepped trajectory bit for bit.
fn iterate(m: &DMatrix<f64>, v: &DVector<f64>, t: usize) -> DVector<f64> {
    (0..t).fold(v.clone(), |acc, _| m * acc)
}

fn attack_value(kind: &AttackKind, sys: &LtiSystem, node: usize, x_t: &DVector<f64>, t: usize) -> f64 {
    match kind {
        AttackKind::ConsistentFakeState { fake_x0 } => {
            let fake = iterate(sys.a(), fake_x0, t);
            (sys.sensor_row(node) * fake)[0] - (sys.sensor_row(node) * x_t)[0]
        }
        AttackKind::CompanionDrift { e0 } => iterate(sys.companion(), e0, t)[0],
        AttackKind::Jump { t0, offset } => {
            if t >= *t0 {
                *offset
            } else {
                0.0
            }
        }
    }
}

/// Additive terms `e[t]` (one per node) for true state `x_t` at time `t`.
pub fn generate_attack(plan: &AttackPlan, sys: &LtiSystem, x_t: &DVector<f64>, t: usize) -> DVector<f64> {
    let mut e = DVector::zeros(sys.p());
    for (&node, kind) in &plan.attacks {
        e[node] = attack_value(kind, sys, node, x_t, t);
    }
    e
}

/// Streaming form of [`generate_attack`] that advances fake trajectories one
/// step per call instead of recomputing matrix powers. Must be called with
/// `t = 0, 1, 2, …` in order.
#[derive(Debug, Clone)]
pub struct AttackGenerator {
    plan: AttackPlan,
    /// Current `A^t x′₀` or `Â^t e₀` per attacked node.
    trajectories: BTreeMap<usize, DVector<f64>>,
    next_t: usize,
}

impl AttackGenerator {
    pub fn new(plan: AttackPlan) -> Self {
        let trajectories = plan
            .attacks
            .iter()
            .filter_map(|(&node, kind)| match kind {
                AttackKind::ConsistentFakeState { fake_x0 } => Some((node, fake_x0.clone())),
                AttackKind::CompanionDrift { e0 } => Some((node, e0.clone())),
                AttackKind::Jump { .. } => None,
            })
            .collect();
        Self { plan, trajectories, next_t: 0 }
    }

    pub fn plan(&self) -> &AttackPlan {
        &self.plan
    }

    pub fn next(&mut self, sys: &LtiSystem, x_t: &DVector<f64>) -> DVector<f64> {
        let t = self.next_t;
        let mut e = DVector::zeros(sys.p());
        for (&node, kind) in &self.plan.attacks {
            e[node] = match kind {
                AttackKind::ConsistentFakeState { .. } => {
                    let fake = &self.trajectories[&node];
                    (sys.sensor_row(node) * fake)[0] - (sys.sensor_row(node) * x_t)[0]
                }
                AttackKind::CompanionDrift { .. } => self.trajectories[&node][0],
                AttackKind::Jump { .. } => attack_value(kind, sys, node, x_t, t),
            };
        }
        for (node, traj) in self.trajectories.iter_mut() {
            let step = match &self.plan.attacks[node] {
                AttackKind::CompanionDrift { .. } => sys.companion(),
                _ => sys.a(),
            };
            *traj = step * &*traj;
        }
        self.next_t += 1;
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SanityOutcome {
    pub pass: bool,
    pub residual: f64,
}

/// `‖Z_i[τ+1] − Â Z_i[τ]‖₂ ≤ ε`.
pub fn local_sanity_check(
    window_prev: &MeasurementWindow,
    window_next: &MeasurementWindow,
    a_hat: &DMatrix<f64>,
    epsilon: f64,
) -> Result<SanityOutcome, AttackError> {
    let prev = window_prev
        .vector()
        .ok_or(AttackError::IncompleteWindow { node: window_prev.node() })?;
    let next = window_next
        .vector()
        .ok_or(AttackError::IncompleteWindow { node: window_next.node() })?;
    Ok(sanity_residual(&prev, &next, a_hat, epsilon))
}

pub fn sanity_residual(
    prev: &DVector<f64>,
    next: &DVector<f64>,
    a_hat: &DMatrix<f64>,
    epsilon: f64,
) -> SanityOutcome {
    let residual = (next - a_hat * prev).norm();
    SanityOutcome { pass: residual <= epsilon, residual }
}

/// Two attacked scenarios producing identical measurements although their
/// state trajectories separate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionPair {
    /// Sensors whose erasure hides the unstable mode (0-based).
    pub removed: Vec<usize>,
    pub eigenvalue: Complex64,
    /// Unit vector in the hidden unstable invariant subspace.
    pub direction: DVector<f64>,
    pub first: (DVector<f64>, AttackPlan),
    pub second: (DVector<f64>, AttackPlan),
}

/// For a system that is not `2s`-sparse detectable, builds two scenarios
/// with `s`-sparse attacks and identical measurement streams but states
/// differing by `A^t δ`, where `δ` lies in an unstable mode hidden once the
/// witness sensors are erased. The erased set is split into a first part of
/// at most `s` nodes attacked in the first scenario and the remainder attacked
/// in the second. Returns `None` when the system is `2s`-sparse detectable.
pub fn confusion_pair(
    sys: &LtiSystem,
    s: usize,
    base_x0: &DVector<f64>,
) -> Result<Option<ConfusionPair>, AttackError> {
    let report = detect::sparse_detectability_index(sys)?;
    let witness = match report.witness {
        Some(w) if w.removed.len() <= 2 * s => w,
        _ => return Ok(None),
    };
    let p = sys.p();
    let kept = sys.sensor_rows(&detect::complement(p, &witness.removed));
    let direction = hidden_unstable_direction(sys.a(), &kept, witness.eigenvalue);

    let split = witness.removed.len().min(s);
    let (first_nodes, second_nodes) = witness.removed.split_at(split);
    let shifted = base_x0 + &direction;
    let plan = |nodes: &[usize], fake: &DVector<f64>| {
        let attacks = nodes
            .iter()
            .map(|&i| (i, AttackKind::ConsistentFakeState { fake_x0: fake.clone() }))
            .collect();
        AttackPlan::new(sys, s, attacks)
    };
    Ok(Some(ConfusionPair {
        removed: witness.removed.clone(),
        eigenvalue: witness.eigenvalue,
        first: (shifted.clone(), plan(first_nodes, base_x0)?),
        second: (base_x0.clone(), plan(second_nodes, &shifted)?),
        direction,
    }))
}

/// Unit vector in the real invariant subspace of `mu` inside the unobservable
/// subspace of `(a, c)`.
fn hidden_unstable_direction(a: &DMatrix<f64>, c: &DMatrix<f64>, mu: Complex64) -> DVector<f64> {
    let n = a.nrows();
    // unobservable subspace = kernel of [C; CA; …; CA^{n−1}]
    let mut obs = DMatrix::zeros(c.nrows() * n, n);
    let mut block = c.clone();
    for k in 0..n {
        obs.view_mut((k * c.nrows(), 0), (c.nrows(), n)).copy_from(&block);
        block = &block * a;
    }
    let basis = linalg::null_space(&obs);
    let restricted = basis.transpose() * a * &basis;
    let d = restricted.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    // real invariant subspace of μ (and its conjugate)
    let shifted = if mu.im.abs() <= 1e-12 * mu.norm().max(1.0) {
        &restricted - &eye * mu.re
    } else {
        &restricted * &restricted - &restricted * (2.0 * mu.re) + &eye * mu.norm_sqr()
    };
    let local = loosest_null_vector(&shifted);
    let v = basis * local;
    let norm = v.norm();
    v / norm
}

/// Right singular vector of the smallest singular value.
fn loosest_null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let cols = m.ncols();
    let mut padded = DMatrix::zeros(m.nrows().max(cols), cols);
    padded.view_mut((0, 0), m.shape()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    v_t.row(k).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::discretize;

    fn rotation_sys() -> LtiSystem {
        let a = discretize(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]), 0.1).unwrap();
        LtiSystem::new(a, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.6, 0.8])).unwrap()
    }

    fn single(node: usize, kind: AttackKind) -> BTreeMap<usize, AttackKind> {
        BTreeMap::from([(node, kind)])
    }

    fn trajectory(sys: &LtiSystem, x0: &DVector<f64>, steps: usize) -> Vec<DVector<f64>> {
        let mut xs = vec![x0.clone()];
        for _ in 1..steps {
            let next = sys.a() * xs.last().unwrap();
            xs.push(next);
        }
        xs
    }

    #[test]
    fn empty_plan_is_silent() {
        let sys = rotation_sys();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(generate_attack(&AttackPlan::none(), &sys, &x, 5), DVector::zeros(3));
    }

    #[test]
    fn support_limit_and_ranges() {
        let sys = rotation_sys();
        let two = BTreeMap::from([
            (0, AttackKind::Jump { t0: 0, offset: 1.0 }),
            (1, AttackKind::Jump { t0: 0, offset: 1.0 }),
        ]);
        assert_eq!(AttackPlan::new(&sys, 1, two), Err(AttackError::SupportTooLarge { support: 2, s: 1 }));
        assert!(matches!(
            AttackPlan::new(&sys, 1, single(3, AttackKind::Jump { t0: 0, offset: 1.0 })),
            Err(AttackError::NodeOutOfRange { .. })
        ));
        assert!(matches!(
            AttackPlan::new(&sys, 1, single(0, AttackKind::CompanionDrift { e0: DVector::zeros(3) })),
            Err(AttackError::VectorLength { .. })
        ));
    }

    #[test]
    fn fake_state_equal_to_truth_is_zero() {
        let sys = rotation_sys();
        let x0 = DVector::from_vec(vec![0.3, -1.1]);
        let plan =
            AttackPlan::new(&sys, 1, single(1, AttackKind::ConsistentFakeState { fake_x0: x0.clone() })).unwrap();
        let mut gen = AttackGenerator::new(plan.clone());
        for (t, x) in trajectory(&sys, &x0, 50).iter().enumerate() {
            assert_eq!(generate_attack(&plan, &sys, x, t), DVector::zeros(3));
            assert_eq!(gen.next(&sys, x), DVector::zeros(3));
        }
    }

    #[test]
    fn generator_matches_pure_function() {
        let sys = rotation_sys();
        let x0 = DVector::from_vec(vec![0.3, -1.1]);
        let attacks = BTreeMap::from([
            (0, AttackKind::ConsistentFakeState { fake_x0: DVector::from_vec(vec![2.0, 0.5]) }),
            (1, AttackKind::CompanionDrift { e0: DVector::from_vec(vec![0.1, 0.2]) }),
            (2, AttackKind::Jump { t0: 7, offset: 0.5 }),
        ]);
        let plan = AttackPlan::new(&sys, 3, attacks).unwrap();
        let mut gen = AttackGenerator::new(plan.clone());
        for (t, x) in trajectory(&sys, &x0, 40).iter().enumerate() {
            assert_eq!(gen.next(&sys, x), generate_attack(&plan, &sys, x, t));
        }
    }

    fn windows_of(values: &[f64], n: usize) -> Vec<DVector<f64>> {
        values.windows(n).map(DVector::from_row_slice).collect()
    }

    fn attacked_stream(sys: &LtiSystem, plan: &AttackPlan, node: usize, steps: usize) -> Vec<f64> {
        let x0 = DVector::from_vec(vec![0.3, -1.1]);
        trajectory(sys, &x0, steps)
            .iter()
            .enumerate()
            .map(|(t, x)| sys.measure(x)[node] + generate_attack(plan, sys, x, t)[node])
            .collect()
    }

    #[test]
    fn consistent_attacks_pass_sanity() {
        let sys = rotation_sys();
        for kind in [
            AttackKind::ConsistentFakeState { fake_x0: DVector::from_vec(vec![-4.0, 3.0]) },
            AttackKind::CompanionDrift { e0: DVector::from_vec(vec![0.7, -0.2]) },
        ] {
            let plan = AttackPlan::new(&sys, 1, single(2, kind)).unwrap();
            let zs = windows_of(&attacked_stream(&sys, &plan, 2, 200), 2);
            for pair in zs.windows(2) {
                let out = sanity_residual(&pair[0], &pair[1], sys.companion(), DEFAULT_EPSILON);
                assert!(out.pass && out.residual < 1e-12, "{out:?}");
            }
        }
    }

    #[test]
    fn jump_is_flagged_at_first_straddling_window() {
        let sys = rotation_sys();
        let (t0, offset) = (20, 0.25);
        let plan = AttackPlan::new(&sys, 1, single(0, AttackKind::Jump { t0, offset })).unwrap();
        let ys = attacked_stream(&sys, &plan, 0, 40);
        let zs = windows_of(&ys, 2);
        // zs[k] is the window ending at time k + 1
        for (k, pair) in zs.windows(2).enumerate() {
            let out = sanity_residual(&pair[0], &pair[1], sys.companion(), DEFAULT_EPSILON);
            let newest = k + 2;
            if newest == t0 {
                assert!(!out.pass);
                assert!(out.residual >= offset - 1e-12);
            }
            if newest < t0 {
                assert!(out.pass);
            }
        }
    }

    #[test]
    fn sanity_check_requires_full_windows() {
        let sys = rotation_sys();
        let mut w = MeasurementWindow::new(0, 2);
        w.push(0, 1.0);
        assert_eq!(
            local_sanity_check(&w, &w, sys.companion(), 1e-6),
            Err(AttackError::IncompleteWindow { node: 0 })
        );
        let mut prev = MeasurementWindow::new(0, 2);
        prev.push(0, 1.0);
        prev.push(1, 2.0);
        let mut next = prev.clone();
        next.push(2, 3.0);
        let a_hat = DMatrix::identity(2, 2);
        let out = local_sanity_check(&prev, &next, &a_hat, 1e-6).unwrap();
        assert!((out.residual - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn confusion_pair_for_scalar_family() {
        let sys = LtiSystem::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(5, 1, 1.0)).unwrap();
        assert!(confusion_pair(&sys, 2, &DVector::zeros(1)).unwrap().is_none());
        let pair = confusion_pair(&sys, 3, &DVector::zeros(1)).unwrap().unwrap();
        assert_eq!(pair.removed, vec![0, 1, 2, 3, 4]);
        assert_eq!(pair.first.1.support(), vec![0, 1, 2]);
        assert_eq!(pair.second.1.support(), vec![3, 4]);
        let xs1 = trajectory(&sys, &pair.first.0, 30);
        let xs2 = trajectory(&sys, &pair.second.0, 30);
        for t in 0..30 {
            let y1 = sys.measure(&xs1[t]) + generate_attack(&pair.first.1, &sys, &xs1[t], t);
            let y2 = sys.measure(&xs2[t]) + generate_attack(&pair.second.1, &sys, &xs2[t], t);
            assert_eq!(y1, y2);
        }
        assert!((&xs1[29] - &xs2[29]).norm() > 1e8);
    }

    #[test]
    fn confusion_pair_for_complex_mode() {
        // unstable rotation seen by two sensors only through coordinate 0
        let (c, s) = (0.2f64.cos() * 1.05, 0.2f64.sin() * 1.05);
        let a = DMatrix::from_row_slice(3, 3, &[c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 0.5]);
        let cm = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let sys = LtiSystem::new(a, cm).unwrap();
        let pair = confusion_pair(&sys, 1, &DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap().unwrap();
        assert_eq!(pair.removed.len(), 2);
        let xs1 = trajectory(&sys, &pair.first.0, 60);
        let xs2 = trajectory(&sys, &pair.second.0, 60);
        for t in 0..60 {
            let y1 = sys.measure(&xs1[t]) + generate_attack(&pair.first.1, &sys, &xs1[t], t);
            let y2 = sys.measure(&xs2[t]) + generate_attack(&pair.second.1, &sys, &xs2[t], t);
            assert!((y1 - y2).amax() < 1e-10);
        }
        assert!((&xs1[59] - &xs2[59]).norm() > 1.0);
    }
}
