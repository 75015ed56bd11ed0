//! Closed-form solution of the constrained selling problem.
//!
//! Writing `v_α(x₁, x₂) = x₁·w_α(y)` with `y = x₂/x₁` turns the coupled
//! variational inequalities into Cauchy–Euler equations in `y`. Their
//! exponents come from
//!
//! ```text
//! q(p) = σ·p(p−1) + (μ₂−μ₁)·p + μ₁
//! q(δ) = ρ            (δ₁ < 0 < 1 < δ₂)
//! q(δ) = ρ + λ₀ + λ₁  (δ₃ < 0 < 1 < δ₄)
//! q(γ) = ρ + λ₀       (γ₁ < 0 < 1 < γ₂)
//! ```
//!
//! and the value functions are
//!
//! ```text
//!           y < k                            y ≥ k
//! w₀(y) = C₂·y^γ₂ + a₀βs − a₁βb·y       C₁·y^δ₁ − η·C₃·y^δ₃
//! w₁(y) = βs − βb·y                     C₁·y^δ₁ + C₃·y^δ₃
//! ```
//!
//! with `k, C₁, C₂, C₃` fixed by C¹ continuity of both functions at `k`.
//!
//! The constants `Cᵢ` can overflow when exponents are large, so the solver
//! stores them scaled to the threshold (`Ĉ₁ = C₁·k^δ₁` and so on) and
//! evaluates powers as `(y/k)^p = exp(p·ln(y/k))`.

use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelParams, ReducedCoeffs, Regime};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosedFormError {
    #[error("NonpositiveRatio: y={0} must be > 0")]
    NonpositiveRatio(f64),
    #[error("NonpositivePrice: x1={x1}, x2={x2} must both be > 0")]
    NonpositivePrice { x1: f64, x2: f64 },
    #[error("NonpositiveCoefficient: C1={c1}, C2={c2}, C3={c3} (scaled) must all be > 0")]
    NonpositiveCoefficient { c1: f64, c2: f64, c3: f64 },
}

/// `q(p) = σ·p(p−1) + (μ₂−μ₁)·p + μ₁`, the symbol of the generator on `y^p`.
pub fn symbol(coeffs: &ReducedCoeffs, params: &ModelParams, p: f64) -> f64 {
    coeffs.sigma * p * (p - 1.0) + (params.mu2() - params.mu1()) * p + params.mu1()
}

/// Scaled residual of `q(p) − level`: the absolute residual divided by the
/// sum of magnitudes of its terms.
pub fn symbol_residual(coeffs: &ReducedCoeffs, params: &ModelParams, p: f64, level: f64) -> f64 {
    let quad = coeffs.sigma * p * (p - 1.0);
    let lin = (params.mu2() - params.mu1()) * p;
    let res = quad + lin + params.mu1() - level;
    let scale = quad.abs() + lin.abs() + params.mu1().abs() + level.abs();
    if scale == 0.0 {
        0.0
    } else {
        res.abs() / scale
    }
}

/// Negative and positive root of `q(p) = level`, where `level > μ₁`.
///
/// Uses the cancellation-free form of the quadratic formula; the smaller
/// root in magnitude comes from the product of roots.
fn characteristic_pair(coeffs: &ReducedCoeffs, params: &ModelParams, level: f64) -> (f64, f64) {
    // p² − b·p − c = 0
    let b = 1.0 + (params.mu1() - params.mu2()) / coeffs.sigma;
    let c = (level - params.mu1()) / coeffs.sigma;
    let disc = discriminant_root(coeffs, params, level);
    debug_assert!(c > 0.0, "level must exceed mu1");
    if b >= 0.0 {
        let pos = 0.5 * (b + disc);
        (-c / pos, pos)
    } else {
        let neg = 0.5 * (b - disc);
        (neg, -c / neg)
    }
}

/// `√(b² + 4c)` for [`characteristic_pair`].
fn discriminant_root(coeffs: &ReducedCoeffs, params: &ModelParams, level: f64) -> f64 {
    let b = 1.0 + (params.mu1() - params.mu2()) / coeffs.sigma;
    let c = (level - params.mu1()) / coeffs.sigma;
    (b * b + 4.0 * c).sqrt()
}

/// Exponents of the Cauchy–Euler solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Roots {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `δ₁ − δ₃`, computed without subtracting the two roots.
    pub delta_gap: f64,
}

impl Roots {
    /// Closed-form evaluation; discriminants are positive under A1.
    pub fn compute(coeffs: &ReducedCoeffs, params: &ModelParams) -> Self {
        let rho = params.rho();
        let (delta1, delta2) = characteristic_pair(coeffs, params, rho);
        let (delta3, delta4) =
            characteristic_pair(coeffs, params, rho + params.lambda0() + params.lambda1());
        let (gamma1, gamma2) = characteristic_pair(coeffs, params, rho + params.lambda0());
        let outer = rho + params.lambda0() + params.lambda1();
        let s1 = discriminant_root(coeffs, params, rho);
        let s3 = discriminant_root(coeffs, params, outer);
        let delta_gap = 2.0 * (params.lambda0() + params.lambda1()) / (coeffs.sigma * (s1 + s3));
        Self {
            delta1,
            delta2,
            delta3,
            delta4,
            gamma1,
            gamma2,
            delta_gap,
        }
    }

    /// Largest scaled residual over all six roots.
    pub fn max_residual(&self, coeffs: &ReducedCoeffs, params: &ModelParams) -> f64 {
        let rho = params.rho();
        let outer = rho + params.lambda0() + params.lambda1();
        let mid = rho + params.lambda0();
        [
            (self.delta1, rho),
            (self.delta2, rho),
            (self.delta3, outer),
            (self.delta4, outer),
            (self.gamma1, mid),
            (self.gamma2, mid),
        ]
        .iter()
        .map(|&(p, level)| symbol_residual(coeffs, params, p, level))
        .fold(0.0, f64::max)
    }
}

/// Threshold from the regrouped expression, whose numerator and denominator
/// are sums of positive terms under A1.
pub fn threshold_k(roots: &Roots, coeffs: &ReducedCoeffs) -> f64 {
    let Roots {
        delta1: d1,
        delta3: d3,
        gamma2: g2,
        ..
    } = *roots;
    let num = (1.0 + coeffs.eta) * (-d1) * (g2 - d3) + coeffs.b0 * roots.delta_gap * g2;
    num / threshold_denominator(roots, coeffs) * coeffs.cost_ratio()
}

fn threshold_denominator(roots: &Roots, coeffs: &ReducedCoeffs) -> f64 {
    let (d1, d3, g2) = (roots.delta1, roots.delta3, roots.gamma2);
    (1.0 + coeffs.eta) * (g2 - d3) * (1.0 - d1) + coeffs.b1 * (g2 - 1.0) * roots.delta_gap
}

/// Threshold from the expression obtained directly by eliminating `C₂k^γ₂`
/// from the smooth-fit system. Algebraically equal to [`threshold_k`];
/// kept as a cross-check.
pub fn threshold_k_unregrouped(roots: &Roots, coeffs: &ReducedCoeffs) -> f64 {
    let Roots {
        delta1: d1,
        delta3: d3,
        gamma2: g2,
        ..
    } = *roots;
    let eta = coeffs.eta;
    let num = d1 * d3 * (1.0 + eta) - (d3 + eta * d1) * g2 - coeffs.a0 * (d1 - d3) * g2;
    let den = (1.0 + eta) * (d1 * d3 + g2)
        - (d3 + eta * d1) * g2
        - (d1 + eta * d3)
        - coeffs.a1 * (g2 - 1.0) * (d1 - d3);
    num / den * coeffs.cost_ratio()
}

/// Coefficients scaled to the threshold: `c1 = C₁k^δ₁`, `c2 = C₂k^γ₂`,
/// `c3 = C₃k^δ₃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// `Ĉ₁, Ĉ₃` from C¹ continuity of `w₁` at `k`.
fn outer_pair(roots: &Roots, coeffs: &ReducedCoeffs, k: f64) -> (f64, f64) {
    let (d1, d3) = (roots.delta1, roots.delta3);
    let (bs, bb) = (coeffs.beta_s, coeffs.beta_b);
    let c1 = (-d3 * bs + (d3 - 1.0) * bb * k) / roots.delta_gap;
    let c3 = (d1 * bs - (d1 - 1.0) * bb * k) / roots.delta_gap;
    (c1, c3)
}

/// Scaled coefficients at the optimal threshold.
///
/// Substituting the threshold into the continuity formulas for `C₁, C₃`
/// leaves a difference between `k` and a bracket end, which cancels badly
/// when `k` sits close to it. Carrying the substitution out symbolically
/// gives
///
/// ```text
/// Ĉ₁ = βs·[(1+η)(γ₂−δ₃) − δ₃b₁(γ₂−1) − b₀γ₂(1−δ₃)] / D
/// Ĉ₃ = βs·[b₀γ₂(1−δ₁) + b₁δ₁(γ₂−1)] / D
/// ```
///
/// with `D` the denominator of [`threshold_k`]. `Ĉ₂` comes from the two
/// linear equations in `(C₂k^γ₂, k)` that remain after substituting
/// `C₁, C₃`, with the `k` term eliminated between them.
pub fn coefficients(roots: &Roots, coeffs: &ReducedCoeffs) -> Result<ScaledCoefficients, ClosedFormError> {
    let (d1, d3, g2) = (roots.delta1, roots.delta3, roots.gamma2);
    let (b0, b1, eta) = (coeffs.b0, coeffs.b1, coeffs.eta);
    let den = threshold_denominator(roots, coeffs);
    let c1 = coeffs.beta_s
        * ((1.0 + eta) * (g2 - d3) - d3 * b1 * (g2 - 1.0) - b0 * g2 * (1.0 - d3))
        / den;
    let c3 = coeffs.beta_s * (b0 * g2 * (1.0 - d1) + b1 * d1 * (g2 - 1.0)) / den;
    let c2 = scaled_c2(roots, coeffs);
    if c1 > 0.0 && c2 > 0.0 && c3 > 0.0 {
        Ok(ScaledCoefficients { c1, c2, c3 })
    } else {
        Err(ClosedFormError::NonpositiveCoefficient { c1, c2, c3 })
    }
}

fn scaled_c2(roots: &Roots, coeffs: &ReducedCoeffs) -> f64 {
    let Roots {
        delta1: d1,
        delta3: d3,
        gamma2: g2,
        ..
    } = *roots;
    let ReducedCoeffs {
        a0,
        a1,
        b0,
        b1,
        eta,
        beta_s,
        ..
    } = *coeffs;
    // (γ₂−δ₃)·c2 + b1(1−δ₃)βb·k = −b0·δ₃·βs
    // (γ₂−δ₁)·c2 − (η+a1)(1−δ₁)βb·k = (a0+η)·δ₁·βs
    let num = (b0 * (eta + a1) * (1.0 - d1) * (-d3) + b1 * (eta + a0) * (1.0 - d3) * d1) * beta_s;
    let den = (g2 - d3) * (eta + a1) * (1.0 - d1) + (g2 - d1) * b1 * (1.0 - d3);
    num / den
}

/// Side of the free boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `0 < y < k`
    Below,
    /// `y ≥ k`
    Above,
}

/// A branch of `w₀` or `w₁` written as
/// `Σ cᵢ·(y/k)^pᵢ + constant + slope·y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    k: f64,
    terms: [(f64, f64); 2],
    constant: f64,
    slope: f64,
}

impl Expansion {
    fn power(&self, p: f64, y: f64) -> f64 {
        (p * (y / self.k).ln()).exp()
    }

    pub fn value(&self, y: f64) -> f64 {
        let mut acc = self.constant + self.slope * y;
        for &(c, p) in &self.terms {
            if c != 0.0 {
                acc += c * self.power(p, y);
            }
        }
        acc
    }

    /// `y·w′(y)`
    pub fn elasticity(&self, y: f64) -> f64 {
        let mut acc = self.slope * y;
        for &(c, p) in &self.terms {
            if c != 0.0 {
                acc += c * p * self.power(p, y);
            }
        }
        acc
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.elasticity(y) / y
    }

    pub fn second_derivative(&self, y: f64) -> f64 {
        let mut acc = 0.0;
        for &(c, p) in &self.terms {
            if c != 0.0 {
                acc += c * p * (p - 1.0) * self.power(p, y);
            }
        }
        acc / (y * y)
    }

    /// `L w = σy²w″ + (μ₂−μ₁)y·w′ + μ₁w`, applied term by term through the
    /// symbol `q`. Returns the value and the sum of term magnitudes.
    pub fn apply_generator(&self, coeffs: &ReducedCoeffs, params: &ModelParams, y: f64) -> (f64, f64) {
        let constant = self.constant * params.mu1();
        let linear = self.slope * params.mu2() * y;
        let mut acc = constant + linear;
        let mut scale = constant.abs() + linear.abs();
        for &(c, p) in &self.terms {
            if c != 0.0 {
                let t = c * symbol(coeffs, params, p) * self.power(p, y);
                acc += t;
                scale += t.abs();
            }
        }
        (acc, scale)
    }

    /// Largest `|p|` among the power terms present.
    pub fn max_exponent(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.0 != 0.0)
            .fold(0.0, |m, t| m.max(t.1.abs()))
    }

    /// Sum of magnitudes of the terms of `w(y)`.
    pub fn value_scale(&self, y: f64) -> f64 {
        let mut acc = self.constant.abs() + (self.slope * y).abs();
        for &(c, p) in &self.terms {
            if c != 0.0 {
                acc += (c * self.power(p, y)).abs();
            }
        }
        acc
    }
}

/// Optimal threshold, coefficients and value functions for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Solution {
    pub params: ModelParams,
    pub coeffs: ReducedCoeffs,
    pub roots: Roots,
    /// Threshold on `y = x₂/x₁`; close the position when the window is open
    /// and `y ≤ k`.
    pub k: f64,
    pub scaled: ScaledCoefficients,
}

impl Solution {
    pub fn solve(params: &ModelParams) -> Result<Self, ClosedFormError> {
        let coeffs = params.derive_coeffs();
        let roots = Roots::compute(&coeffs, params);
        let k = threshold_k(&roots, &coeffs);
        let scaled = coefficients(&roots, &coeffs)?;
        Ok(Self {
            params: *params,
            coeffs,
            roots,
            k,
            scaled,
        })
    }

    /// Same model with the boundary moved to `k`. `C₁, C₃` keep `w₁` C¹ and
    /// `C₂` keeps `w₀` continuous; `w₀′` is then discontinuous unless `k`
    /// is the optimal threshold. Used to probe smooth-fit diagnostics.
    pub fn with_threshold(&self, k: f64) -> Self {
        let (c1, c3) = outer_pair(&self.roots, &self.coeffs, k);
        let c = &self.coeffs;
        let c2 = c1 - c.eta * c3 - c.a0 * c.beta_s + c.a1 * c.beta_b * k;
        Self {
            k,
            scaled: ScaledCoefficients { c1, c2, c3 },
            ..*self
        }
    }

    /// `C₁` in the unscaled form `w₁ = C₁y^δ₁ + …`. May be infinite for
    /// extreme exponents even when the scaled value is well behaved.
    pub fn c1(&self) -> f64 {
        self.scaled.c1 * (-self.roots.delta1 * self.k.ln()).exp()
    }
    pub fn c2(&self) -> f64 {
        self.scaled.c2 * (-self.roots.gamma2 * self.k.ln()).exp()
    }
    pub fn c3(&self) -> f64 {
        self.scaled.c3 * (-self.roots.delta3 * self.k.ln()).exp()
    }

    pub fn branch(&self, regime: Regime, side: Side) -> Expansion {
        let c = &self.coeffs;
        let s = &self.scaled;
        let r = &self.roots;
        match (regime, side) {
            (Regime::Open, Side::Below) => Expansion {
                k: self.k,
                terms: [(0.0, 0.0); 2],
                constant: c.beta_s,
                slope: -c.beta_b,
            },
            (Regime::Closed, Side::Below) => Expansion {
                k: self.k,
                terms: [(s.c2, r.gamma2), (0.0, 0.0)],
                constant: c.a0 * c.beta_s,
                slope: -c.a1 * c.beta_b,
            },
            (Regime::Open, Side::Above) => Expansion {
                k: self.k,
                terms: [(s.c1, r.delta1), (s.c3, r.delta3)],
                constant: 0.0,
                slope: 0.0,
            },
            (Regime::Closed, Side::Above) => Expansion {
                k: self.k,
                terms: [(s.c1, r.delta1), (-c.eta * s.c3, r.delta3)],
                constant: 0.0,
                slope: 0.0,
            },
        }
    }

    pub fn side(&self, y: f64) -> Side {
        if y < self.k {
            Side::Below
        } else {
            Side::Above
        }
    }

    /// `w_α(y)`. The point `y = k` belongs to the stopping-side formula for
    /// `w₁`; both branches agree there.
    pub fn w(&self, regime: Regime, y: f64) -> Result<f64, ClosedFormError> {
        if !(y > 0.0) {
            return Err(ClosedFormError::NonpositiveRatio(y));
        }
        let side = match (regime, y <= self.k) {
            (Regime::Open, true) => Side::Below,
            _ => self.side(y),
        };
        Ok(self.branch(regime, side).value(y))
    }

    pub fn w0(&self, y: f64) -> Result<f64, ClosedFormError> {
        self.w(Regime::Closed, y)
    }

    pub fn w1(&self, y: f64) -> Result<f64, ClosedFormError> {
        self.w(Regime::Open, y)
    }

    /// Value of the position, `v_α(x₁, x₂) = x₁·w_α(x₂/x₁)`.
    pub fn value(&self, x1: f64, x2: f64, regime: Regime) -> Result<f64, ClosedFormError> {
        if !(x1 > 0.0 && x2 > 0.0) {
            return Err(ClosedFormError::NonpositivePrice { x1, x2 });
        }
        Ok(x1 * self.w(regime, x2 / x1)?)
    }

    /// Unconstrained limit of the threshold as λ₀ → ∞.
    pub fn k0(&self) -> f64 {
        k0_limit(&self.params)
    }

    /// Limit of the threshold as λ₁ → ∞ at fixed λ₀.
    pub fn k1(&self) -> f64 {
        k1_limit(&self.params)
    }

    /// Bracket `(−δ₁/(1−δ₁), −δ₃/(1−δ₃))·βs/βb`; `C₁, C₃ > 0` exactly when
    /// `k` lies strictly inside it.
    pub fn bracket(&self) -> (f64, f64) {
        let r = &self.roots;
        let s = self.coeffs.cost_ratio();
        (
            -r.delta1 / (1.0 - r.delta1) * s,
            -r.delta3 / (1.0 - r.delta3) * s,
        )
    }
}

/// Threshold of the unconstrained problem, `−δ₁/(1−δ₁)·βs/βb`.
pub fn k0_limit(params: &ModelParams) -> f64 {
    let coeffs = params.derive_coeffs();
    let (d1, _) = characteristic_pair(&coeffs, params, params.rho());
    -d1 / (1.0 - d1) * coeffs.cost_ratio()
}

/// `(−δ₁ + γ₂(1−a₀)) / (1 − δ₁ + (γ₂−1)(1−a₁))·βs/βb` at the given λ₀.
pub fn k1_limit(params: &ModelParams) -> f64 {
    let coeffs = params.derive_coeffs();
    let (d1, _) = characteristic_pair(&coeffs, params, params.rho());
    let (_, g2) = characteristic_pair(&coeffs, params, params.rho() + params.lambda0());
    (-d1 + g2 * coeffs.b0) / (1.0 - d1 + (g2 - 1.0) * coeffs.b1) * coeffs.cost_ratio()
}
