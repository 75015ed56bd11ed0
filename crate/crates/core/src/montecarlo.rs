//! Monte Carlo evaluation of threshold selling rules.
//!
//! Each path draws the trading-window chain from exact exponential holding
//! times and advances the log prices by exact Gaussian increments between
//! chain events. While the window is open the ratio `y = X²/X¹` is watched
//! on a grid of step `h` anchored at the window opening (the opening
//! instant included); the position is closed at the first watched instant
//! with `y ≤ threshold`. Paths still open at the horizon pay 0.
//!
//! Inside a window, grid values are produced by a Lévy (Brownian bridge)
//! construction over a fixed dyadic tree: first the window end, then
//! midpoints on demand. A sub-interval whose two ends both sit above the
//! barrier is skipped when the continuous bridge between them crosses the
//! barrier with probability below `exp(−SKIP_EXPONENT)`. The discrete grid
//! path can only cross when the continuous one does, so skipped work changes
//! the law of the stopping index by less than that bound. Midpoint normals
//! are keyed by tree node, which makes every threshold see the same path
//! (common random numbers) whichever nodes it happens to visit.
//!
//! Working coordinates are `U = ln y` and `P = ln X¹ − c·U`, where `c`
//! decorrelates the two; both are Brownian motions with drift and are
//! independent of each other.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::closed_form::{ClosedFormError, Solution};
use crate::model::{MarkovChainSpec, ModelParams, Regime};
use crate::rng::{self, Domain};

/// Skip a bridge segment when `2·dₐ·d_b/(v²·Δt)` exceeds this value.
pub const SKIP_EXPONENT: f64 = 40.0;

/// Paths per accumulation chunk. Chunks are merged in index order.
const CHUNK: u64 = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("InvalidHorizon: horizon={0} must be finite and > 0")]
    InvalidHorizon(f64),
    #[error("InvalidThreshold: threshold={0} must be finite and > 0")]
    InvalidThreshold(f64),
    #[error("InvalidMonitorStep: step={0} must be finite and > 0")]
    InvalidMonitorStep(f64),
    #[error("InvalidPaths: path count must be >= 1")]
    InvalidPaths,
    #[error("NonpositivePrice: x1={x1}, x2={x2} must both be > 0")]
    NonpositivePrice { x1: f64, x2: f64 },
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
}

/// Monte Carlo run description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub x1_0: f64,
    pub x2_0: f64,
    pub alpha_0: Regime,
    pub paths: u64,
    /// Truncation time in years.
    pub horizon: f64,
    pub seed: u64,
    /// Monitoring step `h` in years.
    pub monitor_step: f64,
    /// Ratio threshold; the solved `k` when `None`.
    pub threshold_override: Option<f64>,
}

impl SimConfig {
    /// Start at `(1, 1)` in an open window with 10⁵ paths, a 20-year
    /// horizon and `h = 10⁻⁴`.
    pub fn new(params: ModelParams) -> Self {
        Self {
            params,
            x1_0: 1.0,
            x2_0: 1.0,
            alpha_0: Regime::Open,
            paths: 100_000,
            horizon: 20.0,
            seed: 0,
            monitor_step: 1e-4,
            threshold_override: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.paths == 0 {
            return Err(SimError::InvalidPaths);
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(SimError::InvalidHorizon(self.horizon));
        }
        if !(self.monitor_step.is_finite() && self.monitor_step > 0.0) {
            return Err(SimError::InvalidMonitorStep(self.monitor_step));
        }
        if !(self.x1_0 > 0.0 && self.x2_0 > 0.0 && self.x1_0.is_finite() && self.x2_0.is_finite())
        {
            return Err(SimError::NonpositivePrice {
                x1: self.x1_0,
                x2: self.x2_0,
            });
        }
        if let Some(t) = self.threshold_override {
            if !(t.is_finite() && t > 0.0) {
                return Err(SimError::InvalidThreshold(t));
            }
        }
        Ok(())
    }
}

/// Estimator output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimReport {
    pub estimate: f64,
    pub std_error: f64,
    pub stopped_fraction: f64,
    pub truncation_bound: f64,
    /// `v_α(x1_0, x2_0)` from the closed form.
    pub closed_form_value: f64,
    pub threshold: f64,
    pub paths: u64,
    pub horizon: f64,
    pub monitor_step: f64,
    pub seed: u64,
    /// `3·std_error + truncation_bound`
    pub error_budget: f64,
    /// `|estimate − closed_form_value| ≤ error_budget`
    pub within_budget: bool,
}

/// Bound on the discounted value left on the table by truncating at
/// `horizon`: `βs·x₁·e^{−(ρ−μ₁)T}`.
pub fn truncation_bound(params: &ModelParams, x1_0: f64, horizon: f64) -> f64 {
    (1.0 - params.cost()) * x1_0 * (-(params.rho() - params.mu1()) * horizon).exp()
}

/// Streaming mean and variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += delta * nb / n as f64;
        self.m2 += other.m2 + delta * delta * na * nb / n as f64;
        self.count = n;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Log-price dynamics in decorrelated coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDynamics {
    /// Drift of `U = ln(X²/X¹)`.
    pub ratio_drift: f64,
    /// Volatility of `U`, `√(2σ)`.
    pub ratio_vol: f64,
    /// `Cov(ln X¹, U)/Var(U)`.
    pub coupling: f64,
    /// Drift of `P = ln X¹ − c·U`.
    pub level_drift: f64,
    /// Volatility of `P`.
    pub level_vol: f64,
}

impl LogDynamics {
    pub fn new(params: &ModelParams) -> Self {
        let c = params.derive_coeffs();
        let m1 = params.mu1() - c.a11 / 2.0;
        let m2 = params.mu2() - c.a22 / 2.0;
        let ratio_var = 2.0 * c.sigma;
        let coupling = (c.a12 - c.a11) / ratio_var;
        let level_var = (c.a11 - coupling * coupling * ratio_var).max(0.0);
        Self {
            ratio_drift: m2 - m1,
            ratio_vol: ratio_var.sqrt(),
            coupling,
            level_drift: m1 - coupling * (m2 - m1),
            level_vol: level_var.sqrt(),
        }
    }

    fn advance<R: Rng + ?Sized>(&self, rng: &mut R, u: f64, p: f64, dt: f64) -> (f64, f64) {
        let zu: f64 = rng.sample(StandardNormal);
        let zp: f64 = rng.sample(StandardNormal);
        let s = dt.sqrt();
        (
            u + self.ratio_drift * dt + self.ratio_vol * s * zu,
            p + self.level_drift * dt + self.level_vol * s * zp,
        )
    }

    /// Exact increment of `(ln X¹, ln X²)` over `dt`: Gaussian with mean
    /// `(μᵢ − aᵢᵢ/2)·dt` and covariance `A·dt`.
    pub fn sample_log_increment<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> (f64, f64) {
        let (du, dp) = self.advance(rng, 0.0, 0.0, dt);
        let dl1 = dp + self.coupling * du;
        (dl1, dl1 + du)
    }

    fn ln_x1(&self, u: f64, p: f64) -> f64 {
        p + self.coupling * u
    }
}

/// Holding time in `regime` before the chain jumps.
pub fn sample_holding_time<R: Rng + ?Sized>(chain: &MarkovChainSpec, regime: Regime, rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / chain.exit_rate(regime)
}

/// Result of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    /// `e^{−ρτ}(βs·X¹_τ − βb·X²_τ)`, or 0 if never stopped.
    pub payoff: f64,
    pub stop: Option<StopEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopEvent {
    pub time: f64,
    pub x1: f64,
    pub x2: f64,
}

/// Simulator for a fixed configuration; thresholds are supplied per call.
#[derive(Debug, Clone, Copy)]
pub struct PolicySimulator {
    config: SimConfig,
    dynamics: LogDynamics,
    chain: MarkovChainSpec,
    beta_s: f64,
    beta_b: f64,
}

struct Window {
    path: u64,
    index: u64,
    length: f64,
    step: f64,
    /// Index of the window end in the tree; indices below it are watched.
    last: u64,
}

impl Window {
    fn time(&self, i: u64) -> f64 {
        if i >= self.last {
            self.length
        } else {
            i as f64 * self.step
        }
    }
}

impl PolicySimulator {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let coeffs = config.params.derive_coeffs();
        Ok(Self {
            config,
            dynamics: LogDynamics::new(&config.params),
            chain: config.params.chain(),
            beta_s: coeffs.beta_s,
            beta_b: coeffs.beta_b,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Runs path `path` against the ratio threshold `threshold`.
    pub fn simulate_path(&self, path: u64, threshold: f64) -> PathOutcome {
        let cfg = &self.config;
        let barrier = threshold.ln();
        let mut seq = rng::stream(cfg.seed, Domain::PathSequence, 0, path);
        let mut t = 0.0;
        let mut u = (cfg.x2_0 / cfg.x1_0).ln();
        let mut p = cfg.x1_0.ln() - self.dynamics.coupling * u;
        let mut regime = cfg.alpha_0;
        let mut window_index = 0u64;
        loop {
            // Both draws are taken for every interval so that the sequence
            // does not depend on the threshold.
            let hold = sample_holding_time(&self.chain, regime, &mut seq);
            let end = (t + hold).min(cfg.horizon);
            let dt = end - t;
            let (u_end, p_end) = self.dynamics.advance(&mut seq, u, p, dt);
            if regime == Regime::Open && dt > 0.0 {
                let window = self.window(path, window_index, dt);
                window_index += 1;
                if let Some((i, u_hit, p_hit)) = self.scan(&window, barrier, u, p, u_end, p_end) {
                    return self.stopped(t + window.time(i), u_hit, p_hit);
                }
            }
            if t + hold >= cfg.horizon {
                return PathOutcome {
                    payoff: 0.0,
                    stop: None,
                };
            }
            t = end;
            u = u_end;
            p = p_end;
            regime = regime.flip();
        }
    }

    fn window(&self, path: u64, index: u64, length: f64) -> Window {
        let step = self.config.monitor_step;
        let mut last = (length / step).ceil().max(1.0) as u64;
        // keep watched instants strictly inside the window
        while last > 1 && (last - 1) as f64 * step >= length {
            last -= 1;
        }
        Window {
            path,
            index,
            length,
            step,
            last,
        }
    }

    fn stopped(&self, time: f64, u: f64, p: f64) -> PathOutcome {
        let x1 = self.dynamics.ln_x1(u, p).exp();
        let x2 = x1 * u.exp();
        let payoff = (-self.config.params.rho() * time).exp() * (self.beta_s * x1 - self.beta_b * x2);
        PathOutcome {
            payoff,
            stop: Some(StopEvent { time, x1, x2 }),
        }
    }

    /// First watched grid index with `U ≤ barrier`.
    fn scan(
        &self,
        w: &Window,
        barrier: f64,
        u0: f64,
        p0: f64,
        u_end: f64,
        p_end: f64,
    ) -> Option<(u64, f64, f64)> {
        if u0 <= barrier {
            return Some((0, u0, p0));
        }
        self.search(w, barrier, (0, u0, p0), (w.last, u_end, p_end), 1)
    }

    fn search(
        &self,
        w: &Window,
        barrier: f64,
        left: (u64, f64, f64),
        right: (u64, f64, f64),
        node: u64,
    ) -> Option<(u64, f64, f64)> {
        let (a, ua, pa) = left;
        let (b, ub, pb) = right;
        if b - a <= 1 {
            return None;
        }
        let (ta, tb) = (w.time(a), w.time(b));
        let vol = self.dynamics.ratio_vol;
        if ub > barrier {
            let exponent = 2.0 * (ua - barrier) * (ub - barrier) / (vol * vol * (tb - ta));
            if exponent > SKIP_EXPONENT {
                return None;
            }
        }
        let m = a + (b - a) / 2;
        let tm = w.time(m);
        let frac = (tm - ta) / (tb - ta);
        let spread = ((tm - ta) * (tb - tm) / (tb - ta)).sqrt();
        let mut rng = rng::block(self.config.seed, Domain::BridgeNode, w.index, w.path, node);
        let zu: f64 = rng.sample(StandardNormal);
        let zp: f64 = rng.sample(StandardNormal);
        let um = ua + (ub - ua) * frac + vol * spread * zu;
        let pm = pa + (pb - pa) * frac + self.dynamics.level_vol * spread * zp;
        let mid = (m, um, pm);
        if let Some(hit) = self.search(w, barrier, left, mid, 2 * node) {
            return Some(hit);
        }
        if um <= barrier {
            return Some(mid);
        }
        self.search(w, barrier, mid, right, 2 * node + 1)
    }
}

/// Deterministic chunked reduction over paths; independent of thread count.
fn reduce_paths<T, F, M>(paths: u64, init: T, per_path: F, merge: M) -> T
where
    T: Clone + Send + Sync,
    F: Fn(&mut T, u64) + Sync,
    M: Fn(&mut T, &T),
{
    let chunks = paths.div_ceil(CHUNK);
    let partials: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init.clone();
            for path in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                per_path(&mut acc, path);
            }
            acc
        })
        .collect();
    let mut total = init;
    for part in &partials {
        merge(&mut total, part);
    }
    total
}

fn resolve_threshold(config: &SimConfig) -> Result<(Solution, f64), SimError> {
    let solution = Solution::solve(&config.params)?;
    let threshold = config.threshold_override.unwrap_or(solution.k);
    Ok((solution, threshold))
}

/// Expected discounted payoff of the threshold rule, with the closed-form
/// value alongside for comparison.
pub fn simulate_policy(config: &SimConfig) -> Result<SimReport, SimError> {
    let sim = PolicySimulator::new(*config)?;
    let (solution, threshold) = resolve_threshold(config)?;
    let (moments, stopped) = reduce_paths(
        config.paths,
        (RunningMoments::default(), 0u64),
        |acc, path| {
            let out = sim.simulate_path(path, threshold);
            acc.0.push(out.payoff);
            acc.1 += u64::from(out.stop.is_some());
        },
        |acc, part| {
            acc.0.merge(&part.0);
            acc.1 += part.1;
        },
    );
    let closed_form_value = solution.value(config.x1_0, config.x2_0, config.alpha_0)?;
    let truncation = truncation_bound(&config.params, config.x1_0, config.horizon);
    let std_error = moments.std_error();
    let error_budget = 3.0 * std_error + truncation;
    Ok(SimReport {
        estimate: moments.mean,
        std_error,
        stopped_fraction: stopped as f64 / config.paths as f64,
        truncation_bound: truncation,
        closed_form_value,
        threshold,
        paths: config.paths,
        horizon: config.horizon,
        monitor_step: config.monitor_step,
        seed: config.seed,
        error_budget,
        within_budget: (moments.mean - closed_form_value).abs() <= error_budget,
    })
}

/// Same paths monitored at `h` and `h/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub coarse: SimReport,
    pub fine: SimReport,
    /// `|estimate(h) − estimate(h/2)|`
    pub shift: f64,
    /// `shift ≤ coarse.std_error`
    pub shift_within_std_error: bool,
    /// `3·std_error + truncation_bound + shift`
    pub budget: f64,
    /// `|estimate(h) − v_α| ≤ budget`
    pub pass: bool,
}

pub fn monitoring_convergence(config: &SimConfig) -> Result<ConvergenceReport, SimError> {
    let coarse = simulate_policy(config)?;
    let fine = simulate_policy(&SimConfig {
        monitor_step: config.monitor_step / 2.0,
        ..*config
    })?;
    let shift = (coarse.estimate - fine.estimate).abs();
    let budget = coarse.error_budget + shift;
    Ok(ConvergenceReport {
        coarse,
        fine,
        shift,
        shift_within_std_error: shift <= coarse.std_error,
        budget,
        pass: (coarse.estimate - coarse.closed_form_value).abs() <= budget,
    })
}

/// One threshold of a dominance comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceRow {
    pub multiplier: f64,
    pub threshold: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Mean of `payoff(k) − payoff(this threshold)` over shared paths.
    pub paired_diff: f64,
    pub paired_std_error: f64,
}

impl DominanceRow {
    /// The solved threshold is no worse than this one, up to `2` paired
    /// standard errors.
    pub fn dominated(&self) -> bool {
        self.paired_diff >= -2.0 * self.paired_std_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceTable {
    pub solved_threshold: f64,
    pub rows: Vec<DominanceRow>,
}

impl DominanceTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("multiplier,threshold,estimate,std_error,paired_diff,paired_std_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.multiplier, r.threshold, r.estimate, r.std_error, r.paired_diff, r.paired_std_error
            ));
        }
        out
    }

    /// Multiplier with the highest estimate.
    pub fn argmax(&self) -> Option<f64> {
        self.rows
            .iter()
            .max_by(|a, b| a.estimate.total_cmp(&b.estimate))
            .map(|r| r.multiplier)
    }
}

/// Compares `multiplier·k` thresholds on common paths. The solved threshold
/// (multiplier 1) is always simulated as the reference.
pub fn policy_dominance(config: &SimConfig, multipliers: &[f64]) -> Result<DominanceTable, SimError> {
    let sim = PolicySimulator::new(*config)?;
    let solution = Solution::solve(&config.params)?;
    let k = config.threshold_override.unwrap_or(solution.k);
    let thresholds: Vec<f64> = multipliers.iter().map(|m| m * k).collect();
    for &t in &thresholds {
        if !(t.is_finite() && t > 0.0) {
            return Err(SimError::InvalidThreshold(t));
        }
    }
    let n = thresholds.len();
    let acc = reduce_paths(
        config.paths,
        vec![RunningMoments::default(); 2 * n],
        |acc, path| {
            let base = sim.simulate_path(path, k).payoff;
            for (i, &t) in thresholds.iter().enumerate() {
                let payoff = if t == k {
                    base
                } else {
                    sim.simulate_path(path, t).payoff
                };
                acc[i].push(payoff);
                acc[n + i].push(base - payoff);
            }
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.merge(p);
            }
        },
    );
    let rows = multipliers
        .iter()
        .zip(&thresholds)
        .enumerate()
        .map(|(i, (&multiplier, &threshold))| DominanceRow {
            multiplier,
            threshold,
            estimate: acc[i].mean,
            std_error: acc[i].std_error(),
            paired_diff: acc[n + i].mean,
            paired_std_error: acc[n + i].std_error(),
        })
        .collect();
    Ok(DominanceTable {
        solved_threshold: k,
        rows,
    })
}

/// Daily-style price pair sampled from the exact log increments.
pub fn simulate_prices(
    params: &ModelParams,
    x1_0: f64,
    x2_0: f64,
    steps: usize,
    dt: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let dynamics = LogDynamics::new(params);
    let mut rng = rng::stream(seed, Domain::Series, 0, 0);
    let mut p1 = Vec::with_capacity(steps + 1);
    let mut p2 = Vec::with_capacity(steps + 1);
    let (mut l1, mut l2) = (x1_0.ln(), x2_0.ln());
    p1.push(x1_0);
    p2.push(x2_0);
    for _ in 0..steps {
        let (d1, d2) = dynamics.sample_log_increment(&mut rng, dt);
        l1 += d1;
        l2 += d2;
        p1.push(l1.exp());
        p2.push(l2.exp());
    }
    (p1, p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RawParams;

    fn reference_params() -> ModelParams {
        RawParams::reference_pair().validate().unwrap()
    }

    #[test]
    fn immediate_stop_is_exact() {
        let config = SimConfig {
            x2_0: 0.5,
            paths: 5_000,
            ..SimConfig::new(reference_params())
        };
        let r = simulate_policy(&config).unwrap();
        assert_eq!(r.estimate, 0.999 - 1.001 * 0.5);
        assert_eq!(r.std_error, 0.0);
        assert_eq!(r.stopped_fraction, 1.0);
    }

    #[test]
    fn invalid_configs() {
        let base = SimConfig::new(reference_params());
        let cases = [
            (SimConfig { horizon: 0.0, ..base }, SimError::InvalidHorizon(0.0)),
            (
                SimConfig {
                    threshold_override: Some(-1.0),
                    ..base
                },
                SimError::InvalidThreshold(-1.0),
            ),
            (SimConfig { paths: 0, ..base }, SimError::InvalidPaths),
            (
                SimConfig {
                    monitor_step: 0.0,
                    ..base
                },
                SimError::InvalidMonitorStep(0.0),
            ),
        ];
        for (cfg, err) in cases {
            assert_eq!(simulate_policy(&cfg).unwrap_err(), err);
        }
    }

    #[test]
    fn truncation_bound_values() {
        let p = RawParams::reference_pair_as_labeled().validate().unwrap();
        // ρ − μ₁ = 0.2541 → 0.999·e^{−5.082}
        let b = truncation_bound(&p, 1.0, 20.0);
        assert!((b - 0.999 * (-5.082f64).exp()).abs() < 1e-15);
        assert!((b - 6.2e-3).abs() < 1e-4);
        assert!(truncation_bound(&p, 1.0, 1e4) < 1e-300);
        assert_eq!(truncation_bound(&p, 0.0, 20.0), 0.0);
    }

    #[test]
    fn moments_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1 - 3.0).collect();
        let mut seq = RunningMoments::default();
        xs.iter().for_each(|&x| seq.push(x));
        let mut merged = RunningMoments::default();
        for chunk in xs.chunks(77) {
            let mut part = RunningMoments::default();
            chunk.iter().for_each(|&x| part.push(x));
            merged.merge(&part);
        }
        assert_eq!(seq.count, merged.count);
        assert!((seq.mean - merged.mean).abs() < 1e-12);
        assert!((seq.variance() - merged.variance()).abs() < 1e-10);
    }

    #[test]
    fn log_increment_moments() {
        let p = reference_params();
        let c = p.derive_coeffs();
        let dyn_ = LogDynamics::new(&p);
        let dt = 0.25;
        let n = 100_000;
        let mut rng = rng::stream(5, Domain::Series, 9, 0);
        let draws: Vec<(f64, f64)> = (0..n).map(|_| dyn_.sample_log_increment(&mut rng, dt)).collect();
        let nf = n as f64;
        let m1 = draws.iter().map(|d| d.0).sum::<f64>() / nf;
        let m2 = draws.iter().map(|d| d.1).sum::<f64>() / nf;
        let cov = |f: &dyn Fn(&(f64, f64)) -> f64, g: &dyn Fn(&(f64, f64)) -> f64, mf: f64, mg: f64| {
            draws.iter().map(|d| (f(d) - mf) * (g(d) - mg)).sum::<f64>() / (nf - 1.0)
        };
        let c11 = cov(&|d| d.0, &|d| d.0, m1, m1);
        let c12 = cov(&|d| d.0, &|d| d.1, m1, m2);
        let c22 = cov(&|d| d.1, &|d| d.1, m2, m2);
        let (a11, a12, a22) = (c.a11 * dt, c.a12 * dt, c.a22 * dt);
        let mean1 = (p.mu1() - c.a11 / 2.0) * dt;
        let mean2 = (p.mu2() - c.a22 / 2.0) * dt;
        assert!((m1 - mean1).abs() < 4.0 * (a11 / nf).sqrt());
        assert!((m2 - mean2).abs() < 4.0 * (a22 / nf).sqrt());
        // Var of a sample covariance: (A_ii·A_jj + A_ij²)/n
        let se = |aii: f64, ajj: f64, aij: f64| ((aii * ajj + aij * aij) / nf).sqrt();
        assert!((c11 - a11).abs() < 4.0 * se(a11, a11, a11));
        assert!((c12 - a12).abs() < 4.0 * se(a11, a22, a12));
        assert!((c22 - a22).abs() < 4.0 * se(a22, a22, a22));
    }

    #[test]
    fn regime_occupancy_matches_stationary_law() {
        let raw = RawParams {
            lambda0: 3.0,
            lambda1: 7.0,
            ..RawParams::reference_pair()
        };
        let chain = raw.validate().unwrap().chain();
        let mut rng = rng::stream(11, Domain::Series, 1, 0);
        // Renewal cycles: fraction open = Σ open / Σ (open + closed).
        let cycles = 100_000;
        let mut open = Vec::with_capacity(cycles);
        let mut total = Vec::with_capacity(cycles);
        for _ in 0..cycles {
            let c = sample_holding_time(&chain, Regime::Closed, &mut rng);
            let o = sample_holding_time(&chain, Regime::Open, &mut rng);
            open.push(o);
            total.push(o + c);
        }
        let so: f64 = open.iter().sum();
        let st: f64 = total.iter().sum();
        let frac = so / st;
        // Delta-method standard error of a ratio estimator.
        let n = cycles as f64;
        let resid_var = open
            .iter()
            .zip(&total)
            .map(|(o, t)| (o - frac * t).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let se = (resid_var / n).sqrt() / (st / n);
        let expected = chain.stationary_open();
        assert!((expected - 0.3).abs() < 1e-15);
        assert!((frac - expected).abs() < 4.0 * se, "{frac} vs {expected} (se {se})");
    }

    #[test]
    fn determinism_bit_for_bit() {
        let config = SimConfig {
            paths: 3_000,
            seed: 17,
            ..SimConfig::new(reference_params())
        };
        let a = simulate_policy(&config).unwrap();
        let b = simulate_policy(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
    }

    #[test]
    fn per_path_payoff_bounds() {
        let config = SimConfig {
            seed: 3,
            ..SimConfig::new(reference_params())
        };
        let sim = PolicySimulator::new(config).unwrap();
        let k = Solution::solve(&config.params).unwrap().k;
        let rho = config.params.rho();
        let mut stopped = 0;
        for path in 0..2_000 {
            for t in [0.5 * k, k, 1.3 * k] {
                let out = sim.simulate_path(path, t);
                if let Some(stop) = out.stop {
                    stopped += 1;
                    let undiscounted = out.payoff * (rho * stop.time).exp();
                    let tol = 1e-12 * (stop.x1 + stop.x2);
                    assert!(undiscounted >= -1.001 * stop.x2 - tol);
                    assert!(undiscounted <= 0.999 * stop.x1 + tol);
                    assert!(stop.x2 / stop.x1 <= t * (1.0 + 1e-12));
                } else {
                    assert_eq!(out.payoff, 0.0);
                }
            }
        }
        assert!(stopped > 0);
    }

    /// Brute-force grid walk with the same law; no bridge, no skipping.
    /// The stopping-index distribution should agree with the tree search.
    #[test]
    fn bridge_search_matches_direct_grid_walk() {
        let p = reference_params();
        let dyn_ = LogDynamics::new(&p);
        let h = 1e-3;
        let n_steps = 400u64;
        let length = n_steps as f64 * h;
        let barrier = (0.9f64).ln();
        let paths = 20_000u64;
        let mut rng = rng::stream(21, Domain::Series, 2, 0);
        let mut hits_direct = 0u64;
        let mut time_direct = 0.0;
        for _ in 0..paths {
            let mut u = 0.0f64;
            for i in 0..n_steps {
                if u <= barrier {
                    hits_direct += 1;
                    time_direct += i as f64 * h;
                    break;
                }
                let z: f64 = rng.sample(StandardNormal);
                u += dyn_.ratio_drift * h + dyn_.ratio_vol * h.sqrt() * z;
            }
        }
        let config = SimConfig {
            monitor_step: h,
            seed: 99,
            ..SimConfig::new(p)
        };
        let sim = PolicySimulator::new(config).unwrap();
        let mut hits_tree = 0u64;
        let mut time_tree = 0.0;
        let mut seq = rng::stream(1234, Domain::Series, 3, 0);
        for path in 0..paths {
            let (u_end, p_end) = dyn_.advance(&mut seq, 0.0, 0.0, length);
            let w = sim.window(path, 0, length);
            assert_eq!(w.last, n_steps);
            if let Some((i, _, _)) = sim.scan(&w, barrier, 0.0, 0.0, u_end, p_end) {
                hits_tree += 1;
                time_tree += i as f64 * h;
            }
        }
        let pd = hits_direct as f64 / paths as f64;
        let pt = hits_tree as f64 / paths as f64;
        let se = (pd * (1.0 - pd) / paths as f64).sqrt() * 2f64.sqrt();
        assert!((pd - pt).abs() < 4.0 * se, "{pd} vs {pt}");
        let md = time_direct / hits_direct as f64;
        let mt = time_tree / hits_tree as f64;
        assert!((md - mt).abs() / md < 0.05, "{md} vs {mt}");
    }

    #[test]
    fn never_stopping_scores_zero() {
        let config = SimConfig {
            paths: 2_000,
            threshold_override: Some(1e-9),
            ..SimConfig::new(reference_params())
        };
        let r = simulate_policy(&config).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert_eq!(r.stopped_fraction, 0.0);
    }

    #[test]
    fn dominance_rows_share_paths() {
        let config = SimConfig {
            paths: 4_000,
            seed: 8,
            ..SimConfig::new(reference_params())
        };
        let table = policy_dominance(&config, &[0.8, 1.0, 1.25]).unwrap();
        let single = simulate_policy(&config).unwrap();
        assert_eq!(table.rows[1].estimate.to_bits(), single.estimate.to_bits());
        assert_eq!(table.rows[1].paired_diff, 0.0);
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 4);
    }
}
