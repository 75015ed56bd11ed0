//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use regime_stop::calibration::{calibrate, CalibrationOptions, PriceSeries};
use regime_stop::closed_form::{k0_limit, k1_limit, Solution};
use regime_stop::model::{ModelParams, RawParams, Regime};
use regime_stop::montecarlo::{
    monitoring_convergence, policy_dominance, simulate_prices, truncation_bound, SimConfig,
};
use regime_stop::studies::{asymptotic_curves, log_grid, run_sweep, standard_sweeps, SweepOutput};
use regime_stop::verification::{positivity_sweep, qvi_residuals, qvi_sweep, GridSpec};

/// Reference threshold rows at four decimals, in the order of
/// `standard_sweeps`. One cross-volatility entry is known to five decimals
/// (0.75477); it is compared at four, as 0.7548.
const TABLE_ROWS: [[f64; 5]; 7] = [
    [0.7834, 0.7481, 0.7036, 0.6481, 0.5798],
    [0.6332, 0.6688, 0.7036, 0.7367, 0.7669],
    [0.7516, 0.7286, 0.7036, 0.6777, 0.6514],
    [0.7469, 0.7265, 0.7036, 0.6794, 0.6543],
    [0.6060, 0.6561, 0.7036, 0.7548, 0.8094],
    [0.5590, 0.6541, 0.7036, 0.7358, 0.7590],
    [0.7049, 0.7043, 0.7036, 0.7022, 0.7008],
];

const GOLDEN_K: f64 = 0.7036;
const PRINT_TOL: f64 = 5e-5;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

fn report(o: &Outcome) -> bool {
    let in_time = o.limit.is_none_or(|l| o.elapsed <= l);
    let pass = o.pass && in_time;
    let limit = o
        .limit
        .map(|l| format!(" (limit {l:?}{})", if in_time { "" } else { ", exceeded" }))
        .unwrap_or_default();
    println!(
        "criterion {} [{}] {}: {} | {:?}{}",
        o.id,
        if pass { "PASS" } else { "FAIL" },
        o.name,
        o.detail,
        o.elapsed,
        limit
    );
    pass
}

fn reference() -> ModelParams {
    RawParams::reference_pair().validate().expect("reference pair is valid")
}

fn golden() -> Outcome {
    let start = Instant::now();
    let s = Solution::solve(&reference()).expect("solves");
    let elapsed = start.elapsed();
    let literal = Solution::solve(&RawParams::reference_pair_as_labeled().validate().unwrap())
        .unwrap()
        .k;
    Outcome {
        id: "1",
        name: "golden threshold",
        pass: (s.k - GOLDEN_K).abs() <= PRINT_TOL,
        detail: format!(
            "k={:.6} (|dk|={:.1e}, tol {PRINT_TOL:.0e}) with mu1=0.2059 mu2=0.2459 sigma11=0.3112 sigma22=0.2943; \
             with the stock labels exchanged: k={literal:.6}",
            s.k,
            (s.k - GOLDEN_K).abs()
        ),
        elapsed,
        limit: Some(Duration::from_millis(1)),
    }
}

fn tables() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut misses = Vec::new();
    let mut total = 0;
    for (spec, row) in standard_sweeps(*reference().raw()).iter().zip(TABLE_ROWS) {
        let ks = run_sweep(spec).column(SweepOutput::K);
        for ((v, k), want) in spec.values.iter().zip(ks).zip(row) {
            total += 1;
            let k = k.unwrap_or(f64::NAN);
            let d = k - want;
            worst = worst.max(d.abs());
            if !(d.abs() <= PRINT_TOL) {
                misses.push(format!("{}={v}: {k:.6} vs {want} ({d:+.1e})", spec.label()));
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        id: "2",
        name: "table reproduction",
        pass: misses.is_empty(),
        detail: format!(
            "{}/{total} table entries within {PRINT_TOL:.0e}, max |dk|={worst:.2e}; misses: [{}]",
            total - misses.len(),
            misses.join("; ")
        ),
        elapsed,
        limit: Some(Duration::from_secs(1)),
    }
}

fn certificate() -> Outcome {
    let start = Instant::now();
    let grid = GridSpec::default();
    let s = Solution::solve(&reference()).unwrap();
    let r = qvi_residuals(&s, &grid);
    let sweep = qvi_sweep(1000, 42, &grid);
    let elapsed = start.elapsed();
    Outcome {
        id: "3",
        name: "QVI certificate",
        pass: r.pass && sweep.pass,
        detail: format!(
            "reference: psi_min={:.3e} phi_min={:.3e} ode={:.1e} fit={:.1e}; 1000 draws (seed 42): \
             min psi/bs={:.3e} min phi/bs={:.3e} ode={:.1e} fit={:.1e}, {} failing",
            r.psi_min,
            r.phi_min,
            r.ode_residual_max,
            r.smoothfit_gap,
            sweep.worst_psi,
            sweep.worst_phi,
            sweep.worst_ode,
            sweep.worst_smoothfit,
            sweep.failures.len()
        ),
        elapsed,
        limit: Some(Duration::from_secs(30)),
    }
}

fn positivity() -> Outcome {
    let start = Instant::now();
    let s = positivity_sweep(10_000, 42);
    let elapsed = start.elapsed();
    let covered = s.mu1_above_mu2 >= 100 && s.sigma_mu1_below_mu2 >= 100;
    Outcome {
        id: "4",
        name: "coefficient positivity",
        pass: s.pass && covered,
        detail: format!(
            "{} draws, {} counterexamples; mu1>mu2 in {}, sigma+mu1<=mu2 in {}",
            s.draws,
            s.counterexamples.len(),
            s.mu1_above_mu2,
            s.sigma_mu1_below_mu2
        ),
        elapsed,
        limit: Some(Duration::from_secs(10)),
    }
}

fn asymptotics() -> Outcome {
    let start = Instant::now();
    let base = *reference().raw();
    let k_at = |l0, l1| {
        Solution::solve(&RawParams { lambda0: l0, lambda1: l1, ..base }.validate().unwrap())
            .unwrap()
            .k
    };
    let p = reference();
    let (k0, k1) = (k0_limit(&p), k1_limit(&p));
    let d0 = (k_at(1e8, 10.0) - k0).abs();
    let d1 = (k_at(10.0, 1e8) - k1).abs();
    let elapsed = start.elapsed();
    Outcome {
        id: "5",
        name: "asymptotics",
        pass: d0 < 1e-3 && d1 < 1e-3 && k1 > k0,
        detail: format!("k0={k0:.6} k1={k1:.6} |k(1e8,10)-k0|={d0:.1e} |k(10,1e8)-k1|={d1:.1e}"),
        elapsed,
        limit: Some(Duration::from_millis(10)),
    }
}

/// Shape of the two curves over `λ ∈ [10⁻², 10⁸]` against the fixed lines.
fn curve_band() -> Outcome {
    let start = Instant::now();
    let p = reference();
    let c = asymptotic_curves(&p, &log_grid(1e-2, 1e8, 101)).unwrap();
    let out0 = c.lambda0_outside_band();
    let out1 = c.lambda1_outside_band();
    let local = c.lambda0_outside_local_band();
    let elapsed = start.elapsed();
    let first = out0
        .iter()
        .map(|q| format!("k({:.3e},10)={:.4}", q.lambda, q.k))
        .take(3)
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        id: "5b",
        name: "curves inside [k0, k1]",
        pass: out0.is_empty() && out1.is_empty(),
        detail: format!(
            "lambda0 curve: {} of {} points outside [{:.4}, {:.4}] (e.g. {first}), {} outside [k0, k1(lambda0)]; \
             lambda1 curve: {} outside",
            out0.len(),
            c.lambda0_curve.len(),
            c.k0,
            c.k1,
            local.len(),
            out1.len()
        ),
        elapsed,
        limit: None,
    }
}

fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut estimates = Vec::new();
    for alpha in [Regime::Open, Regime::Closed] {
        let config = SimConfig {
            alpha_0: alpha,
            paths: 1_000_000,
            horizon: 20.0,
            monitor_step: 1e-4,
            seed: 2024,
            ..SimConfig::new(reference())
        };
        let r = monitoring_convergence(&config).expect("valid config");
        pass &= r.pass;
        estimates.push(r.coarse.estimate);
        parts.push(format!(
            "alpha={}: est={:.5} se={:.1e} v={:.5} |diff|={:.1e} <= {:.1e} (3se + trunc {:.1e} + shift {:.1e}), est(h/2)={:.5}",
            alpha.index(),
            r.coarse.estimate,
            r.coarse.std_error,
            r.coarse.closed_form_value,
            (r.coarse.estimate - r.coarse.closed_form_value).abs(),
            r.budget,
            r.coarse.truncation_bound,
            r.shift,
            r.fine.estimate
        ));
    }
    parts.push(format!(
        "est(alpha=0) <= est(alpha=1): {} (closed-form gap 5.5e-6 is below sampling error)",
        estimates[1] <= estimates[0]
    ));
    Outcome {
        id: "6",
        name: "Monte Carlo value check",
        pass,
        detail: parts.join("; "),
        elapsed: start.elapsed(),
        limit: Some(Duration::from_secs(120)),
    }
}

fn dominance() -> Outcome {
    let start = Instant::now();
    let config = SimConfig {
        paths: 250_000,
        seed: 99,
        ..SimConfig::new(reference())
    };
    let t = policy_dominance(&config, &[1.0, 0.6, 0.8, 1.25, 1.6, 1e-6]).expect("valid config");
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &t.rows[1..5] {
        pass &= r.dominated();
        parts.push(format!(
            "x{}: est={:.5}, k-policy ahead by {:.2e} (paired se {:.1e})",
            r.multiplier, r.estimate, r.paired_diff, r.paired_std_error
        ));
    }
    let never = t.rows[5];
    let bound = truncation_bound(&config.params, config.x1_0, config.horizon);
    let never_ok = never.estimate.abs() <= 3.0 * never.std_error + bound;
    pass &= never_ok;
    parts.push(format!(
        "never-stop est={:.2e} (budget {:.1e})",
        never.estimate,
        3.0 * never.std_error + bound
    ));
    Outcome {
        id: "7",
        name: "policy dominance",
        pass,
        detail: format!("k-policy est={:.5}; {}", t.rows[0].estimate, parts.join("; ")),
        elapsed: start.elapsed(),
        limit: Some(Duration::from_secs(180)),
    }
}

fn calibration_round_trip() -> Outcome {
    let start = Instant::now();
    let p = reference();
    let truth = p.derive_coeffs();
    let (a, b) = simulate_prices(&p, 1.0, 1.0, 15 * 252, 1.0 / 252.0, 7);
    let series = PriceSeries::with_business_days(a, b).expect("positive prices");
    let r = calibrate(&series, &CalibrationOptions::default()).expect("enough data");
    let se = r.standard_errors;
    let z = [
        (r.mu1 - p.mu1()) / se.mu1,
        (r.mu2 - p.mu2()) / se.mu2,
        (r.covariance[0][0] - truth.a11) / se.a11,
        (r.covariance[0][1] - truth.a12) / se.a12,
        (r.covariance[1][1] - truth.a22) / se.a22,
    ];
    let k = r
        .apply_to(p.raw())
        .validate()
        .ok()
        .and_then(|q| Solution::solve(&q).ok())
        .map_or(f64::NAN, |s| s.k);
    let pass = z.iter().all(|v| v.abs() <= 3.0) && (k - GOLDEN_K).abs() <= 0.05;
    Outcome {
        id: "8",
        name: "calibration round trip",
        pass,
        detail: format!(
            "mu1={:.4} mu2={:.4} z-scores (mu1, mu2, a11, a12, a22)=({:.2}, {:.2}, {:.2}, {:.2}, {:.2}); k={k:.4}",
            r.mu1, r.mu2, z[0], z[1], z[2], z[3], z[4]
        ),
        elapsed: start.elapsed(),
        limit: None,
    }
}

fn main() -> ExitCode {
    let checks: [fn() -> Outcome; 9] = [
        golden,
        tables,
        certificate,
        positivity,
        asymptotics,
        curve_band,
        monte_carlo,
        dominance,
        calibration_round_trip,
    ];
    let mut failed = Vec::new();
    for check in checks {
        let o = check();
        if !report(&o) {
            failed.push(o.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
