//! Model parameters for the pairs position and the trading-window chain.
//!
//! Two stocks follow a correlated geometric Brownian motion
//!
//! ```text
//! dX¹ = X¹ (μ₁ dt + σ₁₁ dW¹ + σ₁₂ dW²)
//! dX² = X² (μ₂ dt + σ₂₁ dW¹ + σ₂₂ dW²)
//! ```
//!
//! and trading is only possible while a two-state Markov chain α sits in
//! state 1. The chain leaves state 0 at rate λ₀ and state 1 at rate λ₁.
//! All rates are annualized.
//!
//! The position is one share long stock 1 and one share short stock 2.
//! Closing it at time τ pays `βs·X¹ − βb·X²` with `βs = 1 − K` and
//! `βb = 1 + K`. A position that is never closed pays 0.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unvalidated parameter record, as read from a config file or flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma21: f64,
    pub sigma22: f64,
    pub rho: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    #[serde(rename = "K")]
    pub cost: f64,
}

impl RawParams {
    /// Names of the fields in config-file order.
    pub const KEYS: [&'static str; 10] = [
        "mu1", "mu2", "sigma11", "sigma12", "sigma21", "sigma22", "rho", "lambda0", "lambda1", "K",
    ];

    /// Calibrated TGT/WMT base case (daily closes, 1985-1999) with
    /// ρ = 0.5, λ₀ = λ₁ = 10 and K = 0.001.
    ///
    /// Stock 1 carries the lower drift (0.2059) and the larger own
    /// volatility (0.3112). This assignment gives k = 0.7036 and sits at the
    /// centre of [`crate::studies::standard_sweeps`]; see
    /// [`RawParams::reference_pair_as_labeled`].
    pub fn reference_pair() -> Self {
        Self {
            mu1: 0.2059,
            mu2: 0.2459,
            sigma11: 0.3112,
            sigma12: 0.0729,
            sigma21: 0.0729,
            sigma22: 0.2943,
            rho: 0.5,
            lambda0: 10.0,
            lambda1: 10.0,
            cost: 0.001,
        }
    }

    /// The same calibration with the stock labels exchanged (stock 1 = WMT,
    /// μ₁ = 0.2459). This labelling gives k ≈ 0.6091 rather than 0.7036.
    pub fn reference_pair_as_labeled() -> Self {
        Self {
            mu1: 0.2459,
            mu2: 0.2059,
            sigma11: 0.2943,
            sigma22: 0.3112,
            ..Self::reference_pair()
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        Some(match key {
            "mu1" => self.mu1,
            "mu2" => self.mu2,
            "sigma11" => self.sigma11,
            "sigma12" => self.sigma12,
            "sigma21" => self.sigma21,
            "sigma22" => self.sigma22,
            "rho" => self.rho,
            "lambda0" => self.lambda0,
            "lambda1" => self.lambda1,
            "K" => self.cost,
            _ => return None,
        })
    }

    /// Sets a field by config key. Returns `false` for an unknown key.
    pub fn set(&mut self, key: &str, value: f64) -> bool {
        let slot = match key {
            "mu1" => &mut self.mu1,
            "mu2" => &mut self.mu2,
            "sigma11" => &mut self.sigma11,
            "sigma12" => &mut self.sigma12,
            "sigma21" => &mut self.sigma21,
            "sigma22" => &mut self.sigma22,
            "rho" => &mut self.rho,
            "lambda0" => &mut self.lambda0,
            "lambda1" => &mut self.lambda1,
            "K" => &mut self.cost,
            _ => return false,
        };
        *slot = value;
        true
    }

    pub fn validate(self) -> Result<ModelParams, ValidationError> {
        ModelParams::new(self)
    }

    /// Combined volatility coefficient `(a11 − 2·a12 + a22)/2`.
    pub fn combined_sigma(&self) -> f64 {
        let (a11, a12, a22) = quadratic_variation(self);
        (a11 - 2.0 * a12 + a22) / 2.0
    }
}

fn quadratic_variation(p: &RawParams) -> (f64, f64, f64) {
    let a11 = p.sigma11 * p.sigma11 + p.sigma12 * p.sigma12;
    let a12 = p.sigma11 * p.sigma21 + p.sigma12 * p.sigma22;
    let a22 = p.sigma21 * p.sigma21 + p.sigma22 * p.sigma22;
    (a11, a12, a22)
}

/// One violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind")]
pub enum ParamViolation {
    #[error("A1Violation: rho={rho} must exceed {which}={mu}")]
    A1Violation { which: &'static str, rho: f64, mu: f64 },
    #[error("NonpositiveRate: {which}={value} must be > 0")]
    NonpositiveRate { which: &'static str, value: f64 },
    #[error("DegenerateSigma: combined sigma {sigma} must be > 0")]
    DegenerateSigma { sigma: f64 },
    #[error("CostOutOfRange: K={value} must lie in [0, 1)")]
    CostOutOfRange { value: f64 },
    #[error("NonFinite: {which} is not a finite number")]
    NonFinite { which: &'static str },
}

/// Every invariant the raw record violates, in a fixed order.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationError {
    pub violations: Vec<ParamViolation>,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl ValidationError {
    pub fn has_a1(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, ParamViolation::A1Violation { .. }))
    }
}

/// Validated parameters. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ModelParams(RawParams);

impl ModelParams {
    /// Checks every invariant in one pass and reports all violations.
    pub fn new(raw: RawParams) -> Result<Self, ValidationError> {
        let mut violations = Vec::new();
        for key in RawParams::KEYS {
            if !raw.get(key).is_some_and(f64::is_finite) {
                violations.push(ParamViolation::NonFinite {
                    which: static_key(key),
                });
            }
        }
        if !violations.is_empty() {
            return Err(ValidationError { violations });
        }
        if raw.rho <= raw.mu1 {
            violations.push(ParamViolation::A1Violation {
                which: "mu1",
                rho: raw.rho,
                mu: raw.mu1,
            });
        }
        if raw.rho <= raw.mu2 {
            violations.push(ParamViolation::A1Violation {
                which: "mu2",
                rho: raw.rho,
                mu: raw.mu2,
            });
        }
        for (which, value) in [("lambda0", raw.lambda0), ("lambda1", raw.lambda1)] {
            if value <= 0.0 {
                violations.push(ParamViolation::NonpositiveRate { which, value });
            }
        }
        let sigma = raw.combined_sigma();
        if sigma <= 0.0 {
            violations.push(ParamViolation::DegenerateSigma { sigma });
        }
        if !(0.0..1.0).contains(&raw.cost) {
            violations.push(ParamViolation::CostOutOfRange { value: raw.cost });
        }
        if violations.is_empty() {
            Ok(Self(raw))
        } else {
            Err(ValidationError { violations })
        }
    }

    /// Skips validation. Only for limit cases in tests (e.g. λ = 0).
    #[cfg(test)]
    pub(crate) fn unchecked(raw: RawParams) -> Self {
        Self(raw)
    }

    pub fn raw(&self) -> &RawParams {
        &self.0
    }

    pub fn mu1(&self) -> f64 {
        self.0.mu1
    }
    pub fn mu2(&self) -> f64 {
        self.0.mu2
    }
    pub fn rho(&self) -> f64 {
        self.0.rho
    }
    pub fn lambda0(&self) -> f64 {
        self.0.lambda0
    }
    pub fn lambda1(&self) -> f64 {
        self.0.lambda1
    }
    pub fn cost(&self) -> f64 {
        self.0.cost
    }

    pub fn chain(&self) -> MarkovChainSpec {
        MarkovChainSpec {
            lambda0: self.0.lambda0,
            lambda1: self.0.lambda1,
        }
    }

    pub fn derive_coeffs(&self) -> ReducedCoeffs {
        ReducedCoeffs::from_params(self)
    }
}

fn static_key(key: &str) -> &'static str {
    RawParams::KEYS
        .iter()
        .find(|k| **k == key)
        .copied()
        .unwrap_or("?")
}

/// Trading-window chain on {0 = closed, 1 = open}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarkovChainSpec {
    pub lambda0: f64,
    pub lambda1: f64,
}

impl MarkovChainSpec {
    /// Generator `[[−λ₀, λ₀], [λ₁, −λ₁]]`.
    pub fn generator(&self) -> [[f64; 2]; 2] {
        [
            [-self.lambda0, self.lambda0],
            [self.lambda1, -self.lambda1],
        ]
    }

    /// Rate of leaving `state`.
    pub fn exit_rate(&self, state: Regime) -> f64 {
        match state {
            Regime::Closed => self.lambda0,
            Regime::Open => self.lambda1,
        }
    }

    /// Long-run fraction of time the window is open.
    pub fn stationary_open(&self) -> f64 {
        self.lambda0 / (self.lambda0 + self.lambda1)
    }
}

/// State of the trading-window chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// α = 0, trading not allowed.
    Closed,
    /// α = 1, trading allowed.
    Open,
}

impl Regime {
    pub fn from_index(alpha: u8) -> Option<Self> {
        match alpha {
            0 => Some(Regime::Closed),
            1 => Some(Regime::Open),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Regime::Closed => 0,
            Regime::Open => 1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Regime::Closed => Regime::Open,
            Regime::Open => Regime::Closed,
        }
    }
}

/// Scalars derived from [`ModelParams`] that the one-dimensional reduction
/// in the ratio `y = x₂/x₁` consumes. Never depends on price levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReducedCoeffs {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
    /// `(a11 − 2·a12 + a22)/2`; half the variance rate of `ln y`.
    pub sigma: f64,
    pub beta_s: f64,
    pub beta_b: f64,
    /// `λ₀/(ρ + λ₀ − μ₁)`
    pub a0: f64,
    /// `λ₀/(ρ + λ₀ − μ₂)`
    pub a1: f64,
    /// `1 − a0`, evaluated without cancellation.
    pub b0: f64,
    /// `1 − a1`, evaluated without cancellation.
    pub b1: f64,
    /// `λ₀/λ₁`
    pub eta: f64,
}

impl ReducedCoeffs {
    pub fn from_params(params: &ModelParams) -> Self {
        let p = params.raw();
        let (a11, a12, a22) = quadratic_variation(p);
        let denom1 = p.rho + p.lambda0 - p.mu1;
        let denom2 = p.rho + p.lambda0 - p.mu2;
        Self {
            a11,
            a12,
            a22,
            sigma: (a11 - 2.0 * a12 + a22) / 2.0,
            beta_s: 1.0 - p.cost,
            beta_b: 1.0 + p.cost,
            a0: p.lambda0 / denom1,
            a1: p.lambda0 / denom2,
            b0: (p.rho - p.mu1) / denom1,
            b1: (p.rho - p.mu2) / denom2,
            eta: p.lambda0 / p.lambda1,
        }
    }

    /// Ratio `βs/βb` that scales every threshold.
    pub fn cost_ratio(&self) -> f64 {
        self.beta_s / self.beta_b
    }
}
