//! Acceptance suite A1–A8. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every tolerance is a named constant below.

mod common;

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dsst::adversary::{self, AttackKind, AttackPlan};
use dsst::compress::validate_compression;
use dsst::decoder::{error_bound_beta, SsrDecoder};
use dsst::detect;
use dsst::graph::CommGraph;
use dsst::linalg::{self, Complex64};
use dsst::model::{self, observability_stack, LtiSystem};
use dsst::sim::{self, fit_decay_rate, Scenario, TrackerInit};
use dsst::tracker;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::*;

const A1_T: usize = 300;
const A1_RATIO: f64 = 1e-6;
const A1_RATE_SLACK: f64 = 0.05;
const A1_RUNTIME: Duration = Duration::from_secs(5);

const A2_T: usize = 500;
const A2_STATE_TOL: f64 = 1e-5;
const A2_TAIL: usize = 100;
const A2_SUPPORT_FRACTION: f64 = 0.95;
const A2_RUNTIME: Duration = Duration::from_secs(10);

const A3_T: usize = 30;
const A3_STREAM_TOL: f64 = 1e-10;

const A4_GRAPHS: usize = 30;
const A4_EIG_TOL: f64 = 1e-9;

const A5_IDENTITY_TOL: f64 = 1e-9;
const A5_T: usize = 300;

const A6_INSTANCES: usize = 200;
const A6_RESIDUAL_TOL: f64 = 1e-9;
const A6_STATE_TOL: f64 = 1e-8;

const A7_ALPHA: f64 = 1e-2;
const A7_TRIALS: usize = 1000;
const A7_BETA: f64 = 2.0;

const A8_EPSILON: f64 = 1e-6;
const A8_T: usize = 10_000;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn a1() -> Outcome {
    let start = Instant::now();
    let sc = reference_scenario(A1_T + 1);
    let trace = sim::run_scenario(&sc).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let series = trace.w_err_series();
    let (t_first, first) = series[0];
    ensure(t_first == sc.sys.n() - 1, format!("first tracked step {t_first}"))?;
    let at_t = trace.step(A1_T).and_then(|s| s.nodes.iter().map(|r| r.w_err).collect::<Option<Vec<_>>>());
    let at_t = at_t.ok_or("no tracking error at T")?.into_iter().fold(0.0, f64::max);
    let rho = trace.max_spectral_radius.ok_or("no spectral radius")?;
    let values: Vec<f64> = series.iter().map(|&(_, v)| v).collect();
    let alpha = fit_decay_rate(&values).map_err(|e| e.to_string())?;
    let detail = format!(
        "err(T)/err(first) = {:.3e}, α_fit = {alpha:.4}, ρ_max = {rho:.4}, {:.2}s",
        at_t / first,
        elapsed.as_secs_f64()
    );
    ensure(at_t < A1_RATIO * first, detail.clone())?;
    ensure(alpha < 1.0 && alpha <= rho + A1_RATE_SLACK, detail.clone())?;
    ensure(elapsed < A1_RUNTIME, detail.clone())?;
    Ok(detail)
}

fn a2() -> Outcome {
    let start = Instant::now();
    let mut sc = reference_scenario(A2_T + 1);
    let attacked = 2;
    sc.attack = fake_state_plan(&sc, attacked);
    let trace = sim::run_scenario(&sc).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let last = trace.step(A2_T).ok_or("run ended early")?;
    let worst = last.nodes.iter().map(|r| r.x_err.unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let tail = &trace.steps[trace.steps.len() - A2_TAIL..];
    let total = tail.len() * sc.sys.p();
    let hits = tail
        .iter()
        .flat_map(|s| &s.nodes)
        .filter(|r| r.decoded_support.as_deref() == Some(&[attacked][..]))
        .count();
    let fraction = hits as f64 / total as f64;
    let detail = format!(
        "max ‖x̂−x‖ at T = {worst:.3e}, support hit rate {fraction:.3}, {:.2}s",
        elapsed.as_secs_f64()
    );
    ensure(worst < A2_STATE_TOL, detail.clone())?;
    ensure(fraction >= A2_SUPPORT_FRACTION, detail.clone())?;
    ensure(elapsed < A2_RUNTIME, detail.clone())?;
    Ok(detail)
}

fn a3() -> Outcome {
    for p in 3..=5 {
        let sys = scalar_family(p);
        for s in 0..=p {
            let solvable = detect::is_dsst_solvable(&sys, s).map_err(|e| e.to_string())?;
            ensure(solvable == (2 * s < p), format!("p = {p}, s = {s}: verdict {solvable}"))?;
        }
    }

    let (p, s) = (5, 3);
    let sys = scalar_family(p);
    let base = DVector::from_vec(vec![1.0]);
    let pair = adversary::confusion_pair(&sys, s, &base)
        .map_err(|e| e.to_string())?
        .ok_or("no confusion pair for an unsolvable instance")?;
    let run = |(x0, plan): &(DVector<f64>, AttackPlan)| {
        let mut sc = Scenario::new(sys.clone(), CommGraph::cycle(p).unwrap(), s, x0.clone(), A3_T);
        sc.attack = plan.clone();
        sim::run_scenario_unchecked(&sc).map_err(|e| e.to_string())
    };
    let (first, second) = (run(&pair.first)?, run(&pair.second)?);
    ensure(first.steps.len() == A3_T && second.steps.len() == A3_T, "runs ended early")?;
    let mut stream_dev: f64 = 0.0;
    let mut state_gap = f64::INFINITY;
    for (a, b) in first.steps.iter().zip(&second.steps) {
        if let (Some(ya), Some(yb)) = (&a.compressed, &b.compressed) {
            stream_dev = stream_dev.max((ya - yb).amax());
        }
        state_gap = state_gap.min((&a.x - &b.x).norm());
    }
    let detail = format!(
        "verdicts match 2s ≤ p−1 for p ∈ 3..=5; confusion on nodes {:?}: stream deviation {stream_dev:.1e}, min state gap {state_gap:.3}",
        pair.removed.iter().map(|i| i + 1).collect::<Vec<_>>()
    );
    ensure(stream_dev < A3_STREAM_TOL && state_gap > 0.5, detail.clone())?;
    Ok(detail)
}

/// Random connected graph: random spanning tree plus extra edges, weights in [0.5, 2].
fn random_connected_graph(rng: &mut ChaCha8Rng, p: usize) -> CommGraph {
    let mut edges = BTreeMap::new();
    for v in 1..p {
        let u = rng.random_range(0..v);
        edges.insert((u + 1, v + 1), rng.random_range(0.5..2.0));
    }
    for i in 1..=p {
        for j in i + 1..=p {
            if rng.random_bool(0.3) {
                edges.entry((i, j)).or_insert_with(|| rng.random_range(0.5..2.0));
            }
        }
    }
    let list: Vec<_> = edges.into_iter().map(|((i, j), w)| (i, j, w)).collect();
    CommGraph::build(p, &list).unwrap()
}

/// Rejection-samples `A = I + 0.3·N(0,1)` until the sampling condition holds.
fn random_passing_system(rng: &mut ChaCha8Rng, g: &CommGraph) -> LtiSystem {
    loop {
        let n = rng.random_range(1..=3);
        let a = DMatrix::from_fn(n, n, |i, j| {
            let noise: f64 = rng.sample(StandardNormal);
            f64::from(u8::from(i == j)) + 0.3 * noise
        });
        let sys = LtiSystem::new(a, DMatrix::from_element(1, n, 1.0)).unwrap();
        if model::check_sampling_condition(&sys, g.spectrum()).unwrap().pass {
            return sys;
        }
    }
}

fn a4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_rho: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    let mut unstable_modes = 0;
    for _ in 0..A4_GRAPHS {
        let p = rng.random_range(2..=8);
        let g = random_connected_graph(&mut rng, p);
        let sys = random_passing_system(&mut rng, &g);
        let gains = tracker::select_gains(&g).map_err(|e| e.to_string())?;
        let report = tracker::verify_gain_stability(&sys, &g, gains);
        ensure(report.stable, format!("unstable closed loop, ρ = {}", report.max_spectral_radius))?;
        worst_rho = worst_rho.max(report.max_spectral_radius);

        let lambda_max = *g.spectrum().last().unwrap();
        for a in linalg::eigenvalues(sys.a()) {
            unstable_modes += usize::from(a.norm() >= 1.0);
            for &lambda in &g.nonzero_spectrum() {
                let got = tracker::scalar_closed_loop_eigenvalues(a, lambda, gains);
                let want = [a - 1.0, a - Complex64::from(lambda * lambda / (lambda_max * lambda_max))];
                let straight = (got[0] - want[0]).norm().max((got[1] - want[1]).norm());
                let crossed = (got[0] - want[1]).norm().max((got[1] - want[0]).norm());
                worst_eig = worst_eig.max(straight.min(crossed));
            }
        }
    }
    let detail = format!(
        "{A4_GRAPHS} graphs, max ρ = {worst_rho:.4}, max eigenvalue mismatch {worst_eig:.1e}, {unstable_modes} unstable modes sampled"
    );
    ensure(worst_rho < 1.0 && worst_eig <= A4_EIG_TOL, detail.clone())?;
    Ok(detail)
}

fn a5() -> Outcome {
    let mut sc = reference_scenario(A5_T);
    sc.tracker_init = TrackerInit::Zero;
    let trace = sim::run_scenario(&sc).map_err(|e| e.to_string())?;
    let a_hat = sc.sys.companion();
    let n = sc.sys.n();
    let shifted = a_hat - DMatrix::identity(n, n);
    let mut worst: f64 = 0.0;
    let errors: Vec<&DVector<f64>> = trace.steps.iter().filter_map(|s| s.z1_error.as_ref()).collect();
    for pair in errors.windows(2) {
        let predicted = linalg::apply_blockwise(&shifted, pair[0]);
        worst = worst.max((pair[1] - predicted).norm() / pair[0].norm().max(1.0));
    }
    // from t = n on: the zero start makes z2 vanish at the initialization step
    let after_warm_up = |series: Vec<(usize, f64)>| -> Vec<f64> {
        series.into_iter().filter(|&(t, _)| t >= n).map(|(_, v)| v).collect()
    };
    let z1 = after_warm_up(trace.z1_err_series());
    let z2 = after_warm_up(trace.z2_norm_series());
    let rate1 = fit_decay_rate(&z1).map_err(|e| format!("z1 fit: {e}"))?;
    let rate2 = fit_decay_rate(&z2).map_err(|e| format!("z2 fit: {e}"))?;
    let detail = format!("α(z1) = {rate1:.4}, α(z2) = {rate2:.4}, worst identity defect {worst:.1e}");
    ensure(rate1 < 1.0 && rate2 < 1.0 && worst <= A5_IDENTITY_TOL, detail.clone())?;
    Ok(detail)
}

/// Residual of every support `|K| ≤ s`, by least squares over `[x; E_K]`
/// against `[(D ⊗ I)O, D_K ⊗ I]` without any projection.
fn brute_force_residuals(
    obs: &DMatrix<f64>,
    d: &DMatrix<f64>,
    n: usize,
    s: usize,
    target: &DVector<f64>,
) -> BTreeMap<Vec<usize>, f64> {
    let p = d.ncols();
    let compressed = d.kronecker(&DMatrix::<f64>::identity(n, n)) * obs;
    let mut out = BTreeMap::new();
    for mask in 0u32..(1 << p) {
        if mask.count_ones() as usize > s {
            continue;
        }
        let support: Vec<usize> = (0..p).filter(|i| mask >> i & 1 == 1).collect();
        let cols = n + support.len() * n;
        let mut m = DMatrix::zeros(target.len(), cols);
        m.columns_mut(0, n).copy_from(&compressed);
        for (slot, &k) in support.iter().enumerate() {
            for r in 0..d.nrows() {
                for c in 0..n {
                    m[(r * n + c, n + slot * n + c)] = d[(r, k)];
                }
            }
        }
        let svd = m.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.max();
        let z = svd.solve(target, tol).unwrap();
        out.insert(support, (&m * z - target).norm());
    }
    out
}

fn a6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut checked, mut observable, mut skipped) = (0, 0, 0);
    let (mut worst_res, mut worst_state): (f64, f64) = (0.0, 0.0);
    while checked < A6_INSTANCES {
        let p = rng.random_range(2..=6);
        let n = rng.random_range(1..=3);
        let s = rng.random_range(0..=2usize.min(p - 1));
        let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let a = DMatrix::from_fn(n, n, |_, _| gauss(&mut rng) / (n as f64).sqrt());
        let c = DMatrix::from_fn(p, n, |_, _| gauss(&mut rng));
        let sys = LtiSystem::new(a, c).unwrap();
        let d = if rng.random_bool(0.5) {
            DMatrix::identity(p, p)
        } else {
            let v = rng.random_range(1..=p);
            DMatrix::from_fn(v, p, |_, _| gauss(&mut rng))
        };
        let Ok(cm) = validate_compression(&sys, d.clone(), s) else {
            skipped += 1;
            continue;
        };
        let Ok(decoder) = SsrDecoder::new(&sys, &cm, s) else {
            skipped += 1;
            continue;
        };
        let x = DVector::from_fn(n, |_, _| gauss(&mut rng));
        let size = rng.random_range(0..=s);
        let mut attacked: Vec<usize> = (0..p).collect();
        for i in 0..p {
            attacked.swap(i, rng.random_range(i..p));
        }
        attacked.truncate(size);
        let mut e = DVector::zeros(p * n);
        for &k in &attacked {
            for j in 0..n {
                e[k * n + j] = 3.0 * gauss(&mut rng);
            }
        }
        let obs = observability_stack(&sys).stacked;
        let target = d.kronecker(&DMatrix::<f64>::identity(n, n)) * (&obs * &x + e);
        let w = &target / p as f64;

        let res = decoder.decode(&w).map_err(|e| e.to_string())?;
        let oracle = brute_force_residuals(&obs, &d, n, s, &target);
        ensure(oracle.len() == res.table.len(), "support count differs")?;
        for (support, r) in &res.table {
            worst_res = worst_res.max((oracle[support] - r).abs());
        }
        if error_bound_beta(&sys, &cm, s).is_ok() {
            observable += 1;
            worst_state = worst_state.max((&res.x_hat - &x).norm());
        }
        checked += 1;
    }
    let detail = format!(
        "{checked} instances ({skipped} uncertifiable skipped), max residual gap {worst_res:.1e}, {observable} 2s-observable with max state error {worst_state:.1e}"
    );
    ensure(worst_res <= A6_RESIDUAL_TOL && worst_state <= A6_STATE_TOL && observable > 0, detail.clone())?;
    Ok(detail)
}

fn a7() -> Outcome {
    let p = 3;
    let sys = scalar_family(p);
    let cm = validate_compression(&sys, DMatrix::identity(p, p), 1).map_err(|e| e.to_string())?;
    let beta = error_bound_beta(&sys, &cm, 1).map_err(|e| e.to_string())?;
    ensure((beta - A7_BETA).abs() < 1e-12, format!("β = {beta}, expected {A7_BETA}"))?;
    let decoder = SsrDecoder::new(&sys, &cm, 1).map_err(|e| e.to_string())?;
    let obs = observability_stack(&sys).stacked;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ratio: f64 = 0.0;
    for trial in 0..A7_TRIALS {
        let x = DVector::from_element(1, rng.sample::<f64, _>(StandardNormal));
        let mut y = &obs * &x;
        if trial % 2 == 1 {
            y[rng.random_range(0..p)] += 5.0 * rng.sample::<f64, _>(StandardNormal);
        }
        let dir = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let target = y + dir.normalize() * A7_ALPHA;
        let res = decoder.decode(&(target / p as f64)).map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max((&res.x_hat - &x).norm() / (beta * A7_ALPHA));
    }
    let detail = format!("β = {beta}, {A7_TRIALS} trials, max ‖x̂−x‖/(βα) = {worst_ratio:.4}");
    ensure(worst_ratio <= 1.0 + 1e-9, detail.clone())?;
    Ok(detail)
}

fn a8() -> Outcome {
    // attack-free nodes beside a consistent fabricator, over a long horizon
    let mut sc = reference_scenario(A8_T);
    sc.epsilon = A8_EPSILON;
    sc.decode_cadence = A8_T;
    let fabricator = 2;
    sc.attack = fake_state_plan(&sc, fabricator);
    let trace = sim::run_scenario(&sc).map_err(|e| e.to_string())?;
    ensure(trace.steps.len() == A8_T, "run ended early")?;
    let mut honest_fail = 0;
    let mut fabricator_flags = 0;
    let mut worst_honest: f64 = 0.0;
    for step in &trace.steps {
        for (i, r) in step.nodes.iter().enumerate() {
            let Some(out) = r.sanity else { continue };
            if i == fabricator {
                fabricator_flags += usize::from(!out.pass);
            } else {
                honest_fail += usize::from(!out.pass);
                worst_honest = worst_honest.max(out.residual);
            }
        }
    }

    // a jump must be flagged within n steps of its onset
    let (t0, offset) = (40, 0.5);
    let mut jump = reference_scenario(80);
    jump.epsilon = A8_EPSILON;
    let attacks = BTreeMap::from([(0, AttackKind::Jump { t0, offset })]);
    jump.attack = AttackPlan::new(&jump.sys, 1, attacks).map_err(|e| e.to_string())?;
    let jt = sim::run_scenario(&jump).map_err(|e| e.to_string())?;
    let n = jump.sys.n();
    let flagged_at = jt.steps[t0..t0 + n]
        .iter()
        .find(|s| s.nodes[0].sanity.is_some_and(|o| !o.pass))
        .map(|s| s.t);
    let early_flags = jt.steps[..t0].iter().filter(|s| s.nodes[0].sanity.is_some_and(|o| !o.pass)).count();

    let detail = format!(
        "{A8_T} steps: honest failures {honest_fail} (max residual {worst_honest:.1e}), fabricator flagged {fabricator_flags} times; jump at t0 = {t0} flagged at {flagged_at:?}"
    );
    ensure(honest_fail == 0 && fabricator_flags == 0, detail.clone())?;
    ensure(flagged_at.is_some() && early_flags == 0, detail.clone())?;
    Ok(detail)
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 8] =
        [("A1", a1), ("A2", a2), ("A3", a3), ("A4", a4), ("A5", a5), ("A6", a6), ("A7", a7), ("A8", a8)];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())))));
        match outcome {
            Ok(detail) => println!("{name} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
