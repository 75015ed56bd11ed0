//! Numerical certificates for the closed-form solution.
//!
//! On the continuation side of state 1 the certificate is
//! `ψ(y) = (ρ+λ₁)w₁ − L w₁ − λ₁w₀ ≥ 0` for `y < k`, and on the stopping
//! side it is `φ(y) = w₁(y) − (βs − βb·y) ≥ 0` for `y > k`. Both are
//! evaluated from the analytic branches; the generator `L` acts on each
//! power term through its symbol, so no differencing is involved.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::{Expansion, Side, Solution};
use crate::model::{ModelParams, RawParams, Regime};
use crate::rng::{self, Domain};

/// Log-spaced evaluation grid around the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    /// Points on each side of `k`.
    pub points_per_region: usize,
    /// The grid spans `(k·10^−decades, k·10^decades)`.
    pub decades: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_region: 4096,
            decades: 3.0,
        }
    }
}

impl GridSpec {
    /// Points strictly below `k`, ascending.
    pub fn below(&self, k: f64) -> Vec<f64> {
        let n = self.points_per_region;
        (0..n)
            .map(|i| k * 10f64.powf(-self.decades * (n - i) as f64 / n as f64))
            .collect()
    }

    /// Points strictly above `k`, ascending.
    pub fn above(&self, k: f64) -> Vec<f64> {
        let n = self.points_per_region;
        (1..=n)
            .map(|i| k * 10f64.powf(self.decades * i as f64 / n as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Absolute floor for `ψ` and `φ`, `10⁻⁹·βs`.
    pub qvi: f64,
    /// Relative ODE residual.
    pub ode: f64,
    /// Smooth-fit gap, already multiplied by its scale.
    pub fit: f64,
}

/// Value and first-derivative mismatches at `k`. Derivatives are compared
/// in the form `k·w′(k)`, which is what the smooth-fit equations match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothFitGaps {
    pub w0_value: f64,
    pub w0_slope: f64,
    pub w1_value: f64,
    pub w1_slope: f64,
    /// `max(1, βb·k, largest |term| of either branch at k)`
    pub scale: f64,
    /// `w₁″` from the stopping side and the waiting side at `k`.
    pub w1_second_below: f64,
    pub w1_second_above: f64,
}

impl SmoothFitGaps {
    pub fn max_gap(&self) -> f64 {
        self.w0_value
            .max(self.w0_slope)
            .max(self.w1_value)
            .max(self.w1_slope)
    }

    pub fn max_slope_gap(&self) -> f64 {
        self.w0_slope.max(self.w1_slope)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub k: f64,
    pub grid: Vec<f64>,
    /// Minimum of `ψ` over grid points in `(0, k)`.
    pub psi_min: f64,
    /// Minimum of `φ` over grid points in `(k, ∞)`.
    pub phi_min: f64,
    /// Largest relative residual of the two ODEs on their regions.
    pub ode_residual_max: f64,
    /// Largest smooth-fit gap divided by its scale.
    pub smoothfit_gap: f64,
    pub smoothfit: SmoothFitGaps,
    /// `[ρ + (1−a₀)λ₁ − μ₁]·βs`
    pub psi_at_zero: f64,
    /// Grid points with `ψ″ > 0`.
    pub psi_convexity_violations: usize,
    /// Grid points with `φ″ < 0` or `φ′ < −10⁻⁹·βb`.
    pub phi_shape_violations: usize,
    pub tolerances: Tolerances,
    pub pass: bool,
}

/// Below this magnitude the terms of a residual are near or inside the
/// subnormal range and carry too few bits for a relative comparison. Such
/// points are at the far ends of the grid where every term has decayed.
pub const UNDERFLOW_FLOOR: f64 = 1e-290;

fn ode_residual(
    lhs: &Expansion,
    other: &Expansion,
    solution: &Solution,
    rate: f64,
    y: f64,
) -> f64 {
    let p = &solution.params;
    let (l, l_scale) = lhs.apply_generator(&solution.coeffs, p, y);
    let value = lhs.value(y);
    let cross = other.value(y);
    let r = (p.rho() + rate) * value - l - rate * cross;
    let scale = (p.rho() + rate) * lhs.value_scale(y) + l_scale + rate * other.value_scale(y);
    if scale < UNDERFLOW_FLOOR {
        0.0
    } else {
        r.abs() / scale
    }
}

/// `ψ(y)` on the waiting side of state 1.
pub fn psi(solution: &Solution, y: f64) -> f64 {
    let p = &solution.params;
    let w1 = solution.branch(Regime::Open, Side::Below);
    let w0 = solution.branch(Regime::Closed, Side::Below);
    let (l, _) = w1.apply_generator(&solution.coeffs, p, y);
    (p.rho() + p.lambda1()) * w1.value(y) - l - p.lambda1() * w0.value(y)
}

/// `ψ″(y) = −λ₁·w₀″(y)`, since `w₁` is linear below `k`.
pub fn psi_second_derivative(solution: &Solution, y: f64) -> f64 {
    -solution.params.lambda1() * solution.branch(Regime::Closed, Side::Below).second_derivative(y)
}

/// `φ(y)` on the stopping side of state 1.
pub fn phi(solution: &Solution, y: f64) -> f64 {
    let c = &solution.coeffs;
    solution.branch(Regime::Open, Side::Above).value(y) - c.beta_s + c.beta_b * y
}

pub fn psi_at_zero(solution: &Solution) -> f64 {
    let p = &solution.params;
    let c = &solution.coeffs;
    (p.rho() + (1.0 - c.a0) * p.lambda1() - p.mu1()) * c.beta_s
}

pub fn smooth_fit_check(solution: &Solution) -> SmoothFitGaps {
    let k = solution.k;
    let b = |r, s| solution.branch(r, s);
    let (w0l, w0r) = (b(Regime::Closed, Side::Below), b(Regime::Closed, Side::Above));
    let (w1l, w1r) = (b(Regime::Open, Side::Below), b(Regime::Open, Side::Above));
    let s = &solution.scaled;
    let r = &solution.roots;
    let c = &solution.coeffs;
    let largest = [
        s.c1,
        s.c1 * r.delta1,
        s.c2,
        s.c2 * r.gamma2,
        c.eta * s.c3,
        c.eta * s.c3 * r.delta3,
        s.c3 * r.delta3,
    ]
    .into_iter()
    .fold(0.0f64, |m, t| m.max(t.abs()));
    SmoothFitGaps {
        w0_value: (w0l.value(k) - w0r.value(k)).abs(),
        w0_slope: (w0l.elasticity(k) - w0r.elasticity(k)).abs(),
        w1_value: (w1l.value(k) - w1r.value(k)).abs(),
        w1_slope: (w1l.elasticity(k) - w1r.elasticity(k)).abs(),
        scale: 1f64.max(c.beta_b * k).max(largest),
        w1_second_below: w1l.second_derivative(k),
        w1_second_above: w1r.second_derivative(k),
    }
}

pub fn qvi_residuals(solution: &Solution, grid: &GridSpec) -> ResidualReport {
    let p = &solution.params;
    let c = &solution.coeffs;
    let k = solution.k;
    let below = grid.below(k);
    let above = grid.above(k);
    let b = |r, s| solution.branch(r, s);
    let (w0l, w0r) = (b(Regime::Closed, Side::Below), b(Regime::Closed, Side::Above));
    let (w1l, w1r) = (b(Regime::Open, Side::Below), b(Regime::Open, Side::Above));

    let mut psi_min = f64::INFINITY;
    let mut phi_min = f64::INFINITY;
    let mut ode_max = 0.0f64;
    let mut psi_bad = 0;
    let mut phi_bad = 0;
    for &y in &below {
        psi_min = psi_min.min(psi(solution, y));
        ode_max = ode_max.max(ode_residual(&w0l, &w1l, solution, p.lambda0(), y));
        if psi_second_derivative(solution, y) > 0.0 {
            psi_bad += 1;
        }
    }
    for &y in &above {
        phi_min = phi_min.min(phi(solution, y));
        ode_max = ode_max.max(ode_residual(&w0r, &w1r, solution, p.lambda0(), y));
        ode_max = ode_max.max(ode_residual(&w1r, &w0r, solution, p.lambda1(), y));
        let slope = w1r.derivative(y) + c.beta_b;
        if w1r.second_derivative(y) < 0.0 || slope < -1e-9 * c.beta_b {
            phi_bad += 1;
        }
    }
    let fit = smooth_fit_check(solution);
    let tolerances = Tolerances {
        qvi: 1e-9 * c.beta_s,
        ode: 1e-9,
        fit: 1e-10,
    };
    let smoothfit_gap = fit.max_gap() / fit.scale;
    let pass = psi_min >= -tolerances.qvi
        && phi_min >= -tolerances.qvi
        && ode_max <= tolerances.ode
        && smoothfit_gap <= tolerances.fit
        && psi_bad == 0
        && phi_bad == 0;
    let mut grid_points = below;
    grid_points.extend(above);
    ResidualReport {
        k,
        grid: grid_points,
        psi_min,
        phi_min,
        ode_residual_max: ode_max,
        smoothfit_gap,
        smoothfit: fit,
        psi_at_zero: psi_at_zero(solution),
        psi_convexity_violations: psi_bad,
        phi_shape_violations: phi_bad,
        tolerances,
        pass,
    }
}

/// Relative mismatch between the analytic `L w` and one built from central
/// differences of `w`. First derivatives use step `10⁻⁶·y`. A `10⁻⁶` step
/// leaves only a few significant digits in a second difference, so the
/// second derivative uses `10⁻⁴·y`, shrunk to `10⁻³·y/|p|` when a steep
/// exponent `p` would make truncation error dominate.
pub fn generator_fd_mismatch(solution: &Solution, regime: Regime, y: f64) -> f64 {
    let p = &solution.params;
    let c = &solution.coeffs;
    let e = solution.branch(regime, solution.side(y));
    let (analytic, scale) = e.apply_generator(c, p, y);
    let h1 = 1e-6 * y;
    let h2 = y * 1e-4f64.min(1e-3 / e.max_exponent().max(1.0));
    let d1 = (e.value(y + h1) - e.value(y - h1)) / (2.0 * h1);
    let d2 = (e.value(y + h2) - 2.0 * e.value(y) + e.value(y - h2)) / (h2 * h2);
    let fd = c.sigma * y * y * d2 + (p.mu2() - p.mu1()) * y * d1 + p.mu1() * e.value(y);
    let rates = c.sigma + (p.mu2() - p.mu1()).abs() + p.mu1().abs();
    (fd - analytic).abs() / (scale + rates * e.value_scale(y)).max(f64::MIN_POSITIVE)
}

/// Bounds of the randomized parameter law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DrawRanges {
    pub rate: (f64, f64),
    pub rho: (f64, f64),
    pub drift_floor: f64,
    /// Drifts stay at least this far below `ρ`.
    pub drift_margin: f64,
    pub vol: (f64, f64),
    pub cost: (f64, f64),
    pub min_sigma: f64,
}

impl Default for DrawRanges {
    fn default() -> Self {
        Self {
            rate: (1e-2, 1e3),
            rho: (0.02, 1.0),
            drift_floor: -0.3,
            drift_margin: 0.01,
            vol: (-0.5, 0.5),
            cost: (0.0, 0.05),
            min_sigma: 1e-6,
        }
    }
}

/// Draw `index` of the randomized law. Independent of every other draw.
pub fn draw_params(seed: u64, index: u64, ranges: &DrawRanges) -> ModelParams {
    let mut rng = rng::stream(seed, Domain::ParamDraw, 0, index);
    loop {
        let log_rate = |rng: &mut rand_chacha::ChaCha8Rng| {
            let (lo, hi) = ranges.rate;
            (rng.random_range(lo.ln()..hi.ln())).exp()
        };
        let rho = rng.random_range(ranges.rho.0..ranges.rho.1);
        let drift_hi = rho - ranges.drift_margin;
        let raw = RawParams {
            mu1: rng.random_range(ranges.drift_floor..drift_hi),
            mu2: rng.random_range(ranges.drift_floor..drift_hi),
            sigma11: rng.random_range(ranges.vol.0..ranges.vol.1),
            sigma12: rng.random_range(ranges.vol.0..ranges.vol.1),
            sigma21: rng.random_range(ranges.vol.0..ranges.vol.1),
            sigma22: rng.random_range(ranges.vol.0..ranges.vol.1),
            rho,
            lambda0: log_rate(&mut rng),
            lambda1: log_rate(&mut rng),
            cost: rng.random_range(ranges.cost.0..ranges.cost.1),
        };
        if raw.combined_sigma() <= ranges.min_sigma {
            continue;
        }
        if let Ok(p) = raw.validate() {
            return p;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub draw: u64,
    pub params: RawParams,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivitySummary {
    pub draws: u64,
    pub seed: u64,
    /// Draws with `μ₁ > μ₂`.
    pub mu1_above_mu2: u64,
    /// Draws with `σ + μ₁ ≤ μ₂`.
    pub sigma_mu1_below_mu2: u64,
    pub counterexamples: Vec<Counterexample>,
    pub pass: bool,
}

fn positivity_failure(params: &ModelParams) -> Option<String> {
    let solution = match Solution::solve(params) {
        Ok(s) => s,
        Err(e) => return Some(e.to_string()),
    };
    let k = solution.k;
    if !(k.is_finite() && k > 0.0) {
        return Some(format!("k={k} is not a positive number"));
    }
    let (lo, hi) = solution.bracket();
    if !(lo < k && k < hi) {
        return Some(format!("k={k} outside bracket ({lo}, {hi})"));
    }
    None
}

/// Checks `k > 0`, the bracket and `C₁, C₂, C₃ > 0` on `draws` random
/// parameter sets. Draws are evaluated in parallel and reported in index
/// order.
pub fn positivity_sweep(draws: u64, seed: u64) -> PositivitySummary {
    let ranges = DrawRanges::default();
    let results: Vec<(ModelParams, Option<String>)> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let p = draw_params(seed, i, &ranges);
            (p, positivity_failure(&p))
        })
        .collect();
    let mut mu1_above_mu2 = 0;
    let mut sigma_mu1_below_mu2 = 0;
    let mut counterexamples = Vec::new();
    for (i, (p, failure)) in results.into_iter().enumerate() {
        if p.mu1() > p.mu2() {
            mu1_above_mu2 += 1;
        }
        if p.raw().combined_sigma() + p.mu1() <= p.mu2() {
            sigma_mu1_below_mu2 += 1;
        }
        if let Some(reason) = failure {
            counterexamples.push(Counterexample {
                draw: i as u64,
                params: *p.raw(),
                reason,
            });
        }
    }
    PositivitySummary {
        draws,
        seed,
        mu1_above_mu2,
        sigma_mu1_below_mu2,
        pass: counterexamples.is_empty(),
        counterexamples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QviSweepFailure {
    pub draw: u64,
    pub params: RawParams,
    pub psi_min: f64,
    pub phi_min: f64,
    pub ode_residual_max: f64,
    pub smoothfit_gap: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QviSweepSummary {
    pub draws: u64,
    pub seed: u64,
    pub worst_psi: f64,
    pub worst_phi: f64,
    pub worst_ode: f64,
    pub worst_smoothfit: f64,
    pub failures: Vec<QviSweepFailure>,
    pub pass: bool,
}

/// [`qvi_residuals`] on each of `draws` random parameter sets. `ψ` and `φ`
/// minima are reported relative to `βs`.
pub fn qvi_sweep(draws: u64, seed: u64, grid: &GridSpec) -> QviSweepSummary {
    let ranges = DrawRanges::default();
    let results: Vec<(ModelParams, Result<ResidualReport, String>)> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let p = draw_params(seed, i, &ranges);
            let r = Solution::solve(&p)
                .map(|s| {
                    let mut rep = qvi_residuals(&s, grid);
                    rep.grid = Vec::new();
                    rep
                })
                .map_err(|e| e.to_string());
            (p, r)
        })
        .collect();
    let mut summary = QviSweepSummary {
        draws,
        seed,
        worst_psi: f64::INFINITY,
        worst_phi: f64::INFINITY,
        worst_ode: 0.0,
        worst_smoothfit: 0.0,
        failures: Vec::new(),
        pass: true,
    };
    for (i, (p, r)) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => {
                let bs = 1.0 - p.cost();
                summary.worst_psi = summary.worst_psi.min(rep.psi_min / bs);
                summary.worst_phi = summary.worst_phi.min(rep.phi_min / bs);
                summary.worst_ode = summary.worst_ode.max(rep.ode_residual_max);
                summary.worst_smoothfit = summary.worst_smoothfit.max(rep.smoothfit_gap);
                if !rep.pass {
                    summary.failures.push(QviSweepFailure {
                        draw: i as u64,
                        params: *p.raw(),
                        psi_min: rep.psi_min,
                        phi_min: rep.phi_min,
                        ode_residual_max: rep.ode_residual_max,
                        smoothfit_gap: rep.smoothfit_gap,
                        error: None,
                    });
                }
            }
            Err(e) => summary.failures.push(QviSweepFailure {
                draw: i as u64,
                params: *p.raw(),
                psi_min: f64::NAN,
                phi_min: f64::NAN,
                ode_residual_max: f64::NAN,
                smoothfit_gap: f64::NAN,
                error: Some(e),
            }),
        }
    }
    summary.pass = summary.failures.is_empty();
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> Solution {
        Solution::solve(&RawParams::reference_pair().validate().unwrap()).unwrap()
    }

    #[test]
    fn reference_certificate_passes() {
        let s = reference();
        let r = qvi_residuals(&s, &GridSpec::default());
        assert_eq!(r.grid.len(), 8192);
        assert!(r.grid.windows(2).all(|w| w[0] < w[1]));
        assert!(r.pass, "{r:?}");
        assert!(r.psi_min >= -1e-9 * 0.999);
        assert!(r.phi_min >= -1e-9 * 0.999);
    }

    #[test]
    fn psi_limit_at_zero() {
        let s = reference();
        let p = &s.params;
        let a0 = p.lambda0() / (p.rho() + p.lambda0() - p.mu1());
        let expected = (p.rho() + (1.0 - a0) * p.lambda1() - p.mu1()) * 0.999;
        assert!((psi_at_zero(&s) - expected).abs() < 1e-12);
        assert!(expected > 0.0);
        // γ₂ > 1 so the C₂ term dies at the origin
        let near = psi(&s, s.k * 1e-12);
        assert!((near - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn phi_and_its_slope_vanish_at_k() {
        let s = reference();
        let c = &s.coeffs;
        assert!(phi(&s, s.k).abs() < 1e-9);
        let slope = s.branch(Regime::Open, Side::Above).derivative(s.k) + c.beta_b;
        assert!(slope.abs() < 1e-9);
    }

    #[test]
    fn smooth_fit_gaps_and_convexity_signature() {
        let s = reference();
        let g = smooth_fit_check(&s);
        assert!(g.max_gap() < 1e-10 * 1f64.max(s.coeffs.beta_b * s.k));
        assert_eq!(g.w1_second_below, 0.0);
        let r = &s.roots;
        let by_hand = s.c1() * r.delta1 * (r.delta1 - 1.0) * s.k.powf(r.delta1 - 2.0)
            + s.c3() * r.delta3 * (r.delta3 - 1.0) * s.k.powf(r.delta3 - 2.0);
        assert!(g.w1_second_above > 0.0);
        assert!((g.w1_second_above - by_hand).abs() < 1e-9 * by_hand);
    }

    #[test]
    fn perturbed_threshold_is_detected() {
        let s = reference().with_threshold(reference().k * 1.01);
        let g = smooth_fit_check(&s);
        assert!(g.max_slope_gap() > 1e-4, "{g:?}");
        assert!(!qvi_residuals(&s, &GridSpec::default()).pass);
    }

    #[test]
    fn shape_of_psi_and_phi() {
        let s = reference();
        let grid = GridSpec::default();
        for y in grid.below(s.k) {
            assert!(psi_second_derivative(&s, y) <= 0.0);
        }
        let e = s.branch(Regime::Open, Side::Above);
        for y in grid.above(s.k) {
            assert!(e.second_derivative(y) > 0.0);
            assert!(e.derivative(y) + s.coeffs.beta_b >= 0.0);
        }
    }

    #[test]
    fn generator_matches_finite_differences() {
        let mut solutions = vec![reference()];
        let ranges = DrawRanges {
            rate: (0.1, 50.0),
            ..DrawRanges::default()
        };
        for i in 0..20 {
            solutions.push(Solution::solve(&draw_params(3, i, &ranges)).unwrap());
        }
        for (j, s) in solutions.iter().enumerate() {
            let mut rng = rng::stream(19, Domain::ParamDraw, 1, j as u64);
            let mut checked = 0;
            while checked < 100 {
                let y = s.k * 10f64.powf(rng.random_range(-1.0..1.0));
                // keep the stencil on one side of the kink
                if (y / s.k - 1.0).abs() < 2e-4 {
                    continue;
                }
                for regime in [Regime::Closed, Regime::Open] {
                    let m = generator_fd_mismatch(s, regime, y);
                    assert!(m < 1e-5, "draw {j}, y={y}, {regime:?}: {m}");
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn sweeps_are_clean_and_cover_both_cases() {
        let s = positivity_sweep(2000, 42);
        assert!(s.pass, "{:?}", s.counterexamples.first());
        assert!(s.mu1_above_mu2 >= 100);
        assert!(s.sigma_mu1_below_mu2 >= 20);
        let q = qvi_sweep(100, 42, &GridSpec {
            points_per_region: 512,
            decades: 3.0,
        });
        assert!(q.pass, "{:?}", q.failures.first());
    }

    #[test]
    fn draws_are_reproducible() {
        let r = DrawRanges::default();
        assert_eq!(draw_params(42, 17, &r), draw_params(42, 17, &r));
        assert_ne!(draw_params(42, 17, &r), draw_params(42, 18, &r));
    }
}
