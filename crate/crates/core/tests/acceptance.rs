//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cnf_core::alpf::{
    solve_alpf, solve_decomposed, solve_penalty, thresholded_norm0, update_multipliers, AlpfConfig, AlpfTrace,
    BlockPartition,
};
use cnf_core::certificate::{kkt_residual, lp_test_eq, lp_test_ineq, LpVariant};
use cnf_core::expr::{Point, VarView};
use cnf_core::inner::InnerConfig;
use cnf_core::lagrangian::{dual_value, DualOutcome, Multipliers, SignMode};
use cnf_core::lp::{enumerate_vertices_oracle, solve_lp, LpProblem, LpStatus};
use cnf_core::problems::{self, build, CatalogEntry, CatalogId};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn entry(id: CatalogId) -> CatalogEntry {
    build(&id).expect("catalog entry builds")
}

fn max_abs_dev(x: &[f64]) -> f64 {
    let a = x[0].abs();
    x.iter().map(|v| (v.abs() - a).abs()).fold(0.0, f64::max)
}

fn ex7() -> Outcome {
    let e = entry(CatalogId::Ex7);
    let cfg = AlpfConfig {
        eps: 1e-6,
        rho0: 10.0,
        growth: 100.0,
        start: Some(Point::new(vec![2.0; 2], vec![2.0; 3])),
        ..e.params.clone()
    };
    let t0 = Instant::now();
    let trace = solve_alpf(&e.problem, &cfg).expect("solve runs");
    let secs = t0.elapsed().as_secs_f64();
    let x = &trace.last().expect("at least one record").x;
    let dist = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let k = trace.outer_iterations();
    Outcome::new(
        trace.status.is_success() && dist <= 1e-3 && k <= 5 && secs < 1.0,
        format!(
            "status {:?}, x = ({:.6}, {:.6}), |x|inf = {dist:.2e}, {k} outer iterations, {secs:.3}s",
            trace.status, x[0], x[1]
        ),
    )
}

fn ex8_check(trace: &AlpfTrace, e: &CatalogEntry, max_k: usize, max_secs: Option<f64>, secs: f64) -> Outcome {
    let x = &trace.last().expect("at least one record").x;
    let spread = max_abs_dev(x);
    let f = e.problem.reference_value(x).expect("reference");
    let k = trace.outer_iterations();
    let fast = max_secs.is_none_or(|m| secs < m);
    Outcome::new(
        trace.status.is_success() && spread <= 1e-2 && f <= 1e-2 && k <= max_k && fast,
        format!(
            "status {:?}, |x_1| = {:.4}, magnitude spread {spread:.2e}, f = {f:.2e}, {k} outer iterations, {secs:.3}s",
            trace.status,
            x[0].abs()
        ),
    )
}

fn ex8_start(n: usize) -> Point {
    let flat: Vec<f64> = (1..=3 * n + 1).map(|i| i as f64).collect();
    Point::from_flat(&flat, n)
}

fn ex8_alpf() -> Outcome {
    let e = entry(CatalogId::Ex8 { n: 5 });
    let cfg = AlpfConfig { eps: 1e-6, rho0: 10.0, growth: 100.0, start: Some(ex8_start(5)), ..e.params.clone() };
    let t0 = Instant::now();
    let trace = solve_alpf(&e.problem, &cfg).expect("solve runs");
    ex8_check(&trace, &e, 6, Some(2.0), t0.elapsed().as_secs_f64())
}

fn ex8_penalty() -> Outcome {
    let e = entry(CatalogId::Ex8 { n: 10 });
    let cfg = AlpfConfig { eps: 1e-6, rho0: 10.0, growth: 100.0, start: Some(ex8_start(10)), ..e.params.clone() };
    let t0 = Instant::now();
    let trace = solve_penalty(&e.problem, &cfg).expect("solve runs");
    ex8_check(&trace, &e, 6, None, t0.elapsed().as_secs_f64())
}

fn ex9_cfg(e: &CatalogEntry) -> AlpfConfig {
    AlpfConfig { eps: 1e-6, rho0: 10.0, growth: 10.0, start: Some(Point::zeros(10, 20)), ..e.params.clone() }
}

fn ex9_tables() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [10.0, 1.0] {
        let e = entry(CatalogId::Ex9 { n: 10, lambda });
        let t0 = Instant::now();
        let trace = solve_alpf(&e.problem, &ex9_cfg(&e)).expect("solve runs");
        let secs = t0.elapsed().as_secs_f64();
        let last = trace.last().expect("at least one record");
        let count = thresholded_norm0(&last.x);
        let f = e.problem.reference_value(&last.x).expect("reference");
        let surrogate = e.surrogate(&last.point()).expect("surrogate");
        let ok = if lambda == 10.0 {
            count == 1 && (1.99..=2.01).contains(&last.x[9])
        } else {
            count == 2 && (f - 2.0002).abs() <= 0.05
        };
        pass &= ok && trace.status.is_success() && secs < 10.0;
        parts.push(format!(
            "lambda={lambda}: status {:?}, |x|_0 = {count}, x_10 = {:.4}, f = {f:.4}, surrogate = {surrogate:.4}, {secs:.3}s",
            trace.status, last.x[9]
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn ex9_decomposed() -> Outcome {
    let mut counts = Vec::new();
    let mut secs_max: f64 = 0.0;
    let mut parts = Vec::new();
    for lambda in [10.0, 1.0] {
        let e = entry(CatalogId::Ex9 { n: 30, lambda });
        let part = BlockPartition::contiguous(&e.problem, 6).expect("partition");
        let cfg =
            AlpfConfig { eps: 1e-4, rho0: 5.0, growth: 10.0, start: Some(Point::zeros(30, 60)), ..e.params.clone() };
        let t0 = Instant::now();
        let trace = solve_decomposed(&e.problem, &part, &cfg).expect("solve runs");
        secs_max = secs_max.max(t0.elapsed().as_secs_f64());
        let last = trace.last().expect("at least one record");
        let count = thresholded_norm0(&last.x);
        let f = e.problem.reference_value(&last.x).expect("reference");
        let surrogate = e.surrogate(&last.point()).expect("surrogate");
        parts.push(format!(
            "lambda={lambda}: status {:?}, |x|_0 = {count}, surrogate = {surrogate:.4}, f = {f:.4}, e = {:.2e}",
            trace.status, last.e
        ));
        counts.push(count as i64);
    }
    let (c10, c1) = (counts[0], counts[1]);
    let pass = c10 <= c1 && (c10 - 10).abs() <= 3 && (c1 - 15).abs() <= 3 && secs_max < 30.0;
    parts.push(format!("targets 10 and 15 within 3, monotone {}, {secs_max:.3}s", c10 <= c1));
    Outcome::new(pass, parts.join("; "))
}

fn ex5_certificate() -> Outcome {
    let e = entry(CatalogId::Ex5);
    let origin = Point::zeros(2, 4);
    let t = lp_test_ineq(&e.problem, &origin).expect("lp test runs");
    let u = t.u.clone().unwrap_or_default();
    let v = t.v.clone().unwrap_or_default();
    let obj = t.objective.unwrap_or(f64::NAN);
    let pass = t.status == LpStatus::Optimal
        && obj.abs() <= 1e-6
        && u.len() == 1
        && (u[0] - 1.0).abs() <= 1e-6
        && v.len() == 4
        && v.iter().all(|a| a.abs() <= 1e-6);
    Outcome::new(pass, format!("status {:?}, objective {obj:.2e}, u = {u:?}, v = {v:?}", t.status))
}

fn ex5_dual() -> Outcome {
    let e = entry(CatalogId::Ex5);
    let start = Point::new(vec![0.5, -0.3], vec![0.2, 0.1, 0.4, 0.7]);
    let cfg = InnerConfig::newton();
    let at = |u1: f64| {
        let mult = Multipliers::new(vec![u1], vec![0.0; 4], SignMode::VNonneg).expect("valid multipliers");
        dual_value(&e.problem, &mult, &start, &cfg).expect("dual runs")
    };
    let one = at(1.0);
    let half = at(0.5);
    let one_ok = matches!(one, DualOutcome::Value { value, .. } if value.abs() <= 1e-6);
    let half_ok = matches!(half, DualOutcome::UnboundedBelow);
    let show = |o: &DualOutcome| match o {
        DualOutcome::Value { value, .. } => format!("value {value:.2e}"),
        DualOutcome::UnboundedBelow => "unbounded_below".to_string(),
        DualOutcome::NotConverged { value, .. } => format!("not converged at {value:.2e}"),
    };
    Outcome::new(one_ok && half_ok, format!("theta(1, 0) = {}, theta(0.5, 0) = {}", show(&one), show(&half)))
}

/// Fourth-order central difference of one partial derivative.
fn richardson(f: &dyn Fn(&[f64]) -> f64, z: &[f64], i: usize) -> f64 {
    let h = 1e-4 * z[i].abs().max(1.0);
    let diff = |h: f64| {
        let mut p = z.to_vec();
        let mut q = z.to_vec();
        p[i] += h;
        q[i] -= h;
        (f(&p) - f(&q)) / (2.0 * h)
    };
    (4.0 * diff(h / 2.0) - diff(h)) / 3.0
}

fn autodiff_suite(catalog: &[CatalogEntry]) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let comps: Vec<(&CatalogEntry, &cnf_core::model::Component)> = catalog
        .iter()
        .flat_map(|e| {
            std::iter::once(e.problem.objective()).chain(e.problem.ineqs()).chain(e.problem.eqs()).map(move |c| (e, c))
        })
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (e, comp) = comps[rng.random_range(0..comps.len())];
        let n = e.problem.n();
        let z: Vec<f64> = (0..e.problem.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grad) = comp.value_and_gradient(VarView::from_flat(&z, n)).expect("gradient");
        let f = |w: &[f64]| comp.value(VarView::from_flat(w, n)).expect("value");
        let scale = grad.iter().fold(1.0f64, |m, g| m.max(g.abs()));
        for (i, g) in grad.iter().enumerate() {
            worst = worst.max((g - richardson(&f, &z, i)).abs() / scale);
        }
    }
    (worst <= 1e-6, format!("autodiff vs finite differences: 500 pairs, worst relative error {worst:.2e}"))
}

fn random_lp(rng: &mut ChaCha8Rng) -> LpProblem {
    let nv = rng.random_range(1..=6);
    let rows = rng.random_range(1..=8);
    let q = rng.random_range(0..=rows.min(nv));
    let k = rows - q;
    let mut int = || rng.random_range(-5..=5) as f64;
    let c = (0..nv).map(|_| int()).collect();
    let a_ub = (0..k).map(|_| (0..nv).map(|_| int()).collect()).collect();
    let b_ub = (0..k).map(|_| int()).collect();
    let a_eq = (0..q).map(|_| (0..nv).map(|_| int()).collect()).collect();
    let b_eq = (0..q).map(|_| int()).collect();
    LpProblem { c, a_ub, b_ub, a_eq, b_eq }
}

fn simplex_suite() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    let mut statuses = [0usize; 3];
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let lp = random_lp(&mut rng);
        let s = solve_lp(&lp).expect("simplex runs");
        let o = enumerate_vertices_oracle(&lp).expect("oracle runs");
        statuses[s.status as usize] += 1;
        if s.status != o.status {
            mismatches += 1;
        } else if s.status == LpStatus::Optimal {
            worst = worst.max((s.objective - o.objective).abs());
        }
    }
    (
        mismatches == 0 && worst <= 1e-8,
        format!(
            "simplex vs vertex enumeration: 200 LPs ({} optimal, {} unbounded, {} infeasible), {mismatches} status mismatches, worst objective gap {worst:.2e}",
            statuses[0], statuses[1], statuses[2]
        ),
    )
}

fn weak_duality_suite(catalog: &[CatalogEntry]) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = InnerConfig { max_iters: 500, ..InnerConfig::newton() };
    let mut worst = f64::INFINITY;
    let mut bounded = 0;
    let mut total = 0;
    let mut failures = 0;
    for e in catalog {
        let prob = &e.problem;
        let (lo, hi) = prob.bounds();
        for _ in 0..200 {
            let x: Vec<f64> = (0..prob.n()).map(|_| rng.random_range(lo..hi)).collect();
            let feasible = prob.lift(&x).expect("lift");
            let g = prob.values(&feasible).expect("values").g;
            // Every other sample keeps v at zero, where the dual is more often
            // bounded.
            let v_scale = if total % 2 == 0 { 3.0 } else { 0.0 };
            let u: Vec<f64> = (0..prob.s()).map(|_| rng.random_range(0.0..3.0)).collect();
            let v: Vec<f64> = (0..prob.r()).map(|_| v_scale * rng.random_range(0.0..1.0)).collect();
            let mult = Multipliers::new(u, v, SignMode::VNonneg).expect("valid multipliers");
            let start = Point::new(
                (0..prob.n()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                (0..prob.m()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            );
            total += 1;
            let theta = match dual_value(prob, &mult, &start, &cfg).expect("dual runs") {
                DualOutcome::Value { value, .. } | DualOutcome::NotConverged { value, .. } => value,
                DualOutcome::UnboundedBelow => f64::NEG_INFINITY,
            };
            if theta.is_finite() {
                bounded += 1;
            }
            let slack = g - theta;
            worst = worst.min(slack);
            if slack.is_nan() || slack < -1e-6 {
                failures += 1;
            }
        }
    }
    (
        failures == 0,
        format!(
            "weak duality: {total} samples ({bounded} with finite theta), {failures} violations, smallest slack {worst:.2e}"
        ),
    )
}

fn exactness_suite(catalog: &[CatalogEntry]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for e in catalog {
        let gap = e.problem.validate_exactness(1000, 14).expect("exactness check runs");
        if e.expected_discrepancy {
            parts.push(format!("{} {gap:.1e} (expected discrepancy)", e.id));
        } else if e.problem.is_exact() {
            pass &= gap <= 1e-8;
            parts.push(format!("{} {gap:.1e}", e.id));
        }
    }
    (pass, format!("exactness gap over 1000 samples: {}", parts.join(", ")))
}

/// `(u, v, g, h, rho, expected u, expected v)`.
type UpdateCase = (&'static [f64], &'static [f64], &'static [f64], &'static [f64], f64, &'static [f64], &'static [f64]);

fn multiplier_suite() -> (bool, String) {
    let cases: [UpdateCase; 4] = [
        (&[0.0], &[0.0], &[1.0], &[1.0], 1.0, &[2.0], &[2.0]),
        (&[1.0, 2.0, 3.0], &[], &[0.0, -1e-12, 0.5], &[], 10.0, &[1.0, 0.0, 13.0], &[]),
        (&[0.25], &[-1.0, 0.5], &[-3.0], &[-0.25, 0.125], 4.0, &[0.0], &[-3.0, 1.5]),
        (&[5.0, 0.0], &[1.0], &[2.0, 0.0], &[-0.5], 0.5, &[7.0, 0.0], &[0.5]),
    ];
    let mut pass = true;
    for (u, v, g, h, rho, eu, ev) in cases {
        let (nu, nv) = update_multipliers(u, v, g, h, rho);
        pass &= nu == eu && nv == ev;
    }
    let mut checked = 0;
    for e in [entry(CatalogId::Ex7), entry(CatalogId::Ex8 { n: 5 }), entry(CatalogId::Ex9 { n: 10, lambda: 1.0 })] {
        let trace = solve_alpf(&e.problem, &e.params).expect("solve runs");
        for w in trace.records.windows(2) {
            let vals = e.problem.values(&w[0].point()).expect("values");
            let (nu, nv) = update_multipliers(&w[0].u, &w[0].v, &vals.ineqs, &vals.eqs, w[0].rho);
            pass &= nu == w[1].u && nv == w[1].v && w[1].u.iter().all(|&a| a >= 0.0);
            checked += 1;
        }
    }
    (pass, format!("multiplier updates: 4 unit cases and {checked} consecutive trace records match exactly"))
}

fn lp_kkt_suite() -> (bool, String) {
    let e = entry(CatalogId::Ex7);
    let prob = &e.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut points: Vec<Vec<f64>> =
        (0..50).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
    // Stationary points of the reference function, where the lifted points
    // are KKT points.
    // With x2 = x1/2 they solve t^2 - 4.2t + 3.5 = 0 in t = x1^2.
    points.push(vec![0.0, 0.0]);
    let disc = (4.2f64 * 4.2 - 14.0).sqrt();
    for t in [(4.2 + disc) / 2.0, (4.2 - disc) / 2.0] {
        let a = t.sqrt();
        points.push(vec![a, a / 2.0]);
        points.push(vec![-a, -a / 2.0]);
    }
    let mut pass = true;
    let (mut lp_passes, mut kkt_passes) = (0, 0);
    for x in &points {
        let p = prob.lift(x).expect("lift");
        let t = lp_test_eq(prob, &p).expect("lp test runs");
        if let Some(obj) = t.objective {
            pass &= obj <= 1e-10;
        }
        if t.passed() {
            lp_passes += 1;
            let (u, v) = (t.u.clone().expect("duals"), t.v.clone().expect("duals"));
            let rep = kkt_residual(prob, &p, &u, &v, LpVariant::Cnp0Eq).expect("kkt");
            pass &= rep.max_residual() <= 1e-6;
        }
        // Multipliers of the form: the y-gradient of g fixes v, inequalities
        // are inactive inside the box.
        let v = vec![-1.05, 1.0 / 6.0, -0.5];
        let rep = kkt_residual(prob, &p, &[0.0; 4], &v, LpVariant::Cnp0Eq).expect("kkt");
        if rep.max_residual() <= 1e-8 {
            kkt_passes += 1;
            pass &= t.objective.is_some_and(|o| o >= -1e-6);
        }
    }
    (
        pass,
        format!(
            "LP test and KKT agreement on {} lifted points of ex7: {lp_passes} LP passes, {kkt_passes} KKT passes, all consistent: {pass}",
            points.len()
        ),
    )
}

fn properties() -> Outcome {
    let catalog = problems::all();
    let suites = [
        autodiff_suite(&catalog),
        simplex_suite(),
        weak_duality_suite(&catalog),
        exactness_suite(&catalog),
        multiplier_suite(),
        lp_kkt_suite(),
    ];
    let pass = suites.iter().all(|s| s.0);
    let detail =
        suites.iter().map(|(ok, d)| format!("\n    [{}] {d}", if *ok { "ok" } else { "failed" })).collect::<String>();
    Outcome::new(pass, detail)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("ex7 reproduction", ex7),
        ("ex8 n=5 reproduction", ex8_alpf),
        ("ex8 n=10 penalty run", ex8_penalty),
        ("ex9 n=10 tables", ex9_tables),
        ("ex9 decomposition", ex9_decomposed),
        ("certificate at ex5 origin", ex5_certificate),
        ("dual values on ex5", ex5_dual),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {} ({name}): {verdict}: {}", i + 1, out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
