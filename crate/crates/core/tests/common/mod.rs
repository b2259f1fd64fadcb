#![allow(dead_code)]

use std::collections::BTreeMap;

use dsst::adversary::{AttackKind, AttackPlan};
use dsst::graph::CommGraph;
use dsst::model::{self, LtiSystem};
use dsst::sim::Scenario;
use nalgebra::{DMatrix, DVector};

/// Sampled harmonic oscillator (`τ = 0.1`) seen by `p` sensors
/// `C_i = [cos(iπ/p), sin(iπ/p)]`, `i = 1..p`.
pub fn rotation_system(p: usize) -> LtiSystem {
    let a_cont = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let a = model::discretize(&a_cont, 0.1).unwrap();
    let c = DMatrix::from_fn(p, 2, |i, j| {
        let angle = (i + 1) as f64 * std::f64::consts::PI / p as f64;
        if j == 0 {
            angle.cos()
        } else {
            angle.sin()
        }
    });
    LtiSystem::new(a, c).unwrap()
}

pub fn reference_x0() -> DVector<f64> {
    DVector::from_vec(vec![1.0, -0.5])
}

/// 5-node unit cycle, `D = I`, `s = 1`, automatic gains, no attack.
pub fn reference_scenario(horizon: usize) -> Scenario {
    Scenario::new(rotation_system(5), CommGraph::cycle(5).unwrap(), 1, reference_x0(), horizon)
}

/// Node 3 (index 2) reports the trajectory started at `[0.5, 2.0]`.
pub fn fake_state_plan(sc: &Scenario, node: usize) -> AttackPlan {
    let attacks = BTreeMap::from([(
        node,
        AttackKind::ConsistentFakeState { fake_x0: DVector::from_vec(vec![0.5, 2.0]) },
    )]);
    AttackPlan::new(&sc.sys, sc.s, attacks).unwrap()
}

pub fn scalar_family(p: usize) -> LtiSystem {
    LtiSystem::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(p, 1, 1.0)).unwrap()
}
