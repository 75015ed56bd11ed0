//! Parameter sweeps, threshold asymptotics, the `k(λ₀, λ₁)` surface and
//! plot-ready value-function profiles.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_form::{k0_limit, k1_limit, Solution};
use crate::model::{ModelParams, RawParams, Regime};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StudyError {
    #[error("UnknownParameter: {0}")]
    UnknownParameter(String),
    #[error("UnknownOutput: {0}")]
    UnknownOutput(String),
    #[error("InvalidSweep: {0}")]
    InvalidSweep(String),
}

/// Quantities a sweep can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepOutput {
    #[serde(rename = "k")]
    K,
    C1,
    C2,
    C3,
    #[serde(rename = "k0")]
    K0,
    #[serde(rename = "k1")]
    K1,
}

impl SweepOutput {
    pub const ALL: [SweepOutput; 6] = [Self::K, Self::C1, Self::C2, Self::C3, Self::K0, Self::K1];

    pub fn name(self) -> &'static str {
        match self {
            Self::K => "k",
            Self::C1 => "C1",
            Self::C2 => "C2",
            Self::C3 => "C3",
            Self::K0 => "k0",
            Self::K1 => "k1",
        }
    }

    fn read(self, s: &Solution) -> f64 {
        match self {
            Self::K => s.k,
            Self::C1 => s.c1(),
            Self::C2 => s.c2(),
            Self::C3 => s.c3(),
            Self::K0 => s.k0(),
            Self::K1 => s.k1(),
        }
    }
}

impl FromStr for SweepOutput {
    type Err = StudyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| StudyError::UnknownOutput(s.to_string()))
    }
}

/// One-at-a-time sweep. Every key in `parameters` takes the swept value,
/// so `["sigma12", "sigma21"]` moves the cross terms together.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub base: RawParams,
    pub parameters: Vec<String>,
    pub values: Vec<f64>,
    pub outputs: Vec<SweepOutput>,
}

impl SweepSpec {
    pub fn new(base: RawParams, parameters: &[&str], values: &[f64]) -> Result<Self, StudyError> {
        let spec = Self {
            base,
            parameters: parameters.iter().map(|s| s.to_string()).collect(),
            values: values.to_vec(),
            outputs: SweepOutput::ALL.to_vec(),
        };
        spec.check()?;
        Ok(spec)
    }

    /// Parses `name=v1,v2,...`; tied keys are joined with `+`.
    pub fn parse(base: RawParams, text: &str) -> Result<Self, StudyError> {
        let (lhs, rhs) = text
            .split_once('=')
            .ok_or_else(|| StudyError::InvalidSweep(format!("expected name=v1,v2,... in {text:?}")))?;
        let keys: Vec<&str> = lhs.split('+').map(str::trim).collect();
        let values = rhs
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| StudyError::InvalidSweep(format!("bad value {v:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(base, &keys, &values)
    }

    fn check(&self) -> Result<(), StudyError> {
        if self.parameters.is_empty() || self.values.is_empty() {
            return Err(StudyError::InvalidSweep("empty parameter or value list".into()));
        }
        for p in &self.parameters {
            if self.base.get(p).is_none() {
                return Err(StudyError::UnknownParameter(p.clone()));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.parameters.join("+")
    }

    pub fn params_at(&self, value: f64) -> RawParams {
        let mut raw = self.base;
        for p in &self.parameters {
            raw.set(p, value);
        }
        raw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    /// One entry per requested output; empty when `error` is set.
    pub outputs: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub parameter: String,
    pub outputs: Vec<SweepOutput>,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.parameter.clone();
        for o in &self.outputs {
            out.push(',');
            out.push_str(o.name());
        }
        out.push_str(",error\n");
        for p in &self.points {
            let _ = write!(out, "{}", p.value);
            if p.error.is_some() {
                out.push_str(&",".repeat(self.outputs.len()));
            } else {
                for v in &p.outputs {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push(',');
            if let Some(e) = &p.error {
                // keep the row a single CSV field
                out.push('"');
                out.push_str(&e.replace('"', "'"));
                out.push('"');
            }
            out.push('\n');
        }
        out
    }

    /// Recorded values of `output`, `None` at failed points.
    pub fn column(&self, output: SweepOutput) -> Vec<Option<f64>> {
        let idx = self.outputs.iter().position(|&o| o == output);
        self.points
            .iter()
            .map(|p| idx.and_then(|i| p.outputs.get(i).copied()))
            .collect()
    }
}

fn solve_raw(raw: RawParams) -> Result<Solution, String> {
    let params = raw.validate().map_err(|e| e.to_string())?;
    Solution::solve(&params).map_err(|e| e.to_string())
}

/// Evaluates every point; invalid parameter sets are kept as error rows.
pub fn run_sweep(spec: &SweepSpec) -> SweepTable {
    let points = spec
        .values
        .par_iter()
        .map(|&value| match solve_raw(spec.params_at(value)) {
            Ok(s) => SweepPoint {
                value,
                outputs: spec.outputs.iter().map(|o| o.read(&s)).collect(),
                error: None,
            },
            Err(e) => SweepPoint {
                value,
                outputs: Vec::new(),
                error: Some(e),
            },
        })
        .collect();
    SweepTable {
        parameter: spec.label(),
        outputs: spec.outputs.clone(),
        points,
    }
}

/// The seven one-at-a-time sensitivity rows around `base`: drifts,
/// diagonal volatilities, the tied cross volatility, discount rate and
/// transaction cost.
pub fn standard_sweeps(base: RawParams) -> Vec<SweepSpec> {
    let rows: [(&[&str], [f64; 5]); 7] = [
        (&["mu1"], [0.1259, 0.1659, 0.2059, 0.2459, 0.2859]),
        (&["mu2"], [0.1659, 0.2059, 0.2459, 0.2859, 0.3259]),
        (&["sigma11"], [0.2312, 0.2712, 0.3112, 0.3512, 0.3912]),
        (&["sigma22"], [0.2143, 0.2543, 0.2943, 0.3343, 0.3743]),
        (&["sigma12", "sigma21"], [-0.0129, 0.0329, 0.0729, 0.1129, 0.1529]),
        (&["rho"], [0.3, 0.4, 0.5, 0.6, 0.7]),
        (&["K"], [0.0001, 0.0005, 0.001, 0.002, 0.003]),
    ];
    rows.iter()
        .map(|(keys, values)| SweepSpec::new(base, keys, values).expect("known keys"))
        .collect()
}

/// `n` points from `lo` to `hi` inclusive, evenly spaced in `ln`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub lambda: f64,
    pub k: f64,
    /// `k₁` at this point's `λ₀`.
    pub k1_local: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticCurves {
    pub k0: f64,
    /// `k₁` at the base `λ₀`.
    pub k1: f64,
    pub fixed_lambda0: f64,
    pub fixed_lambda1: f64,
    /// `k(λ, fixed λ₁)`
    pub lambda0_curve: Vec<CurvePoint>,
    /// `k(fixed λ₀, λ)`
    pub lambda1_curve: Vec<CurvePoint>,
}

impl AsymptoticCurves {
    /// Points of the `λ₀` curve outside the fixed lines `[k₀, k₁]`.
    pub fn lambda0_outside_band(&self) -> Vec<CurvePoint> {
        self.lambda0_curve
            .iter()
            .filter(|p| !(self.k0 <= p.k && p.k <= self.k1))
            .copied()
            .collect()
    }

    /// Points of the `λ₁` curve outside `[k₀, k₁]`.
    pub fn lambda1_outside_band(&self) -> Vec<CurvePoint> {
        self.lambda1_curve
            .iter()
            .filter(|p| !(self.k0 <= p.k && p.k <= self.k1))
            .copied()
            .collect()
    }

    /// Points of the `λ₀` curve outside `[k₀, k₁(λ₀)]`, with `k₁` taken at
    /// the point's own `λ₀`.
    pub fn lambda0_outside_local_band(&self) -> Vec<CurvePoint> {
        self.lambda0_curve
            .iter()
            .filter(|p| !(self.k0 <= p.k && p.k <= p.k1_local))
            .copied()
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("curve,lambda,k,k0,k1,k1_local\n");
        for (name, curve) in [("lambda0", &self.lambda0_curve), ("lambda1", &self.lambda1_curve)] {
            for p in curve {
                let _ = writeln!(out, "{name},{},{},{},{},{}", p.lambda, p.k, self.k0, self.k1, p.k1_local);
            }
        }
        out
    }
}

fn k_at(base: &RawParams, lambda0: f64, lambda1: f64) -> Result<(f64, ModelParams), String> {
    let raw = RawParams {
        lambda0,
        lambda1,
        ..*base
    };
    let p = raw.validate().map_err(|e| e.to_string())?;
    let s = Solution::solve(&p).map_err(|e| e.to_string())?;
    Ok((s.k, p))
}

/// `k(λ, λ₁)` and `k(λ₀, λ)` over `grid`, with the base rates held fixed.
pub fn asymptotic_curves(base: &ModelParams, grid: &[f64]) -> Result<AsymptoticCurves, String> {
    let raw = *base.raw();
    let curve = |vary0: bool| -> Result<Vec<CurvePoint>, String> {
        grid.par_iter()
            .map(|&lambda| {
                let (l0, l1) = if vary0 {
                    (lambda, raw.lambda1)
                } else {
                    (raw.lambda0, lambda)
                };
                let (k, p) = k_at(&raw, l0, l1)?;
                Ok(CurvePoint {
                    lambda,
                    k,
                    k1_local: k1_limit(&p),
                })
            })
            .collect()
    };
    Ok(AsymptoticCurves {
        k0: k0_limit(base),
        k1: k1_limit(base),
        fixed_lambda0: raw.lambda0,
        fixed_lambda1: raw.lambda1,
        lambda0_curve: curve(true)?,
        lambda1_curve: curve(false)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Surface {
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
    /// `k[i][j] = k(lambda0[i], lambda1[j])`
    pub k: Vec<Vec<f64>>,
}

impl Surface {
    pub fn is_finite(&self) -> bool {
        self.k.iter().flatten().all(|v| v.is_finite())
    }

    /// Matrix CSV: first row holds `λ₁`, first column `λ₀`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda0\\lambda1");
        for l1 in &self.lambda1 {
            let _ = write!(out, ",{l1}");
        }
        out.push('\n');
        for (l0, row) in self.lambda0.iter().zip(&self.k) {
            let _ = write!(out, "{l0}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn surface(base: &ModelParams, lambda0_grid: &[f64], lambda1_grid: &[f64]) -> Result<Surface, String> {
    let raw = *base.raw();
    let k = lambda0_grid
        .par_iter()
        .map(|&l0| {
            lambda1_grid
                .iter()
                .map(|&l1| k_at(&raw, l0, l1).map(|r| r.0))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Surface {
        lambda0: lambda0_grid.to_vec(),
        lambda1: lambda1_grid.to_vec(),
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioProfileRow {
    pub y: f64,
    pub w0: f64,
    pub w1: f64,
    /// `βs − βb·y`
    pub payoff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueProfileRow {
    pub x1: f64,
    pub x2: f64,
    pub v0: f64,
    pub v1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionProfiles {
    pub k: f64,
    pub ratio: Vec<RatioProfileRow>,
    pub value: Vec<ValueProfileRow>,
}

impl FunctionProfiles {
    pub fn ratio_csv(&self) -> String {
        let mut out = String::from("y,w0,w1,payoff\n");
        for r in &self.ratio {
            let _ = writeln!(out, "{},{},{},{}", r.y, r.w0, r.w1, r.payoff);
        }
        out
    }

    pub fn value_csv(&self) -> String {
        let mut out = String::from("x1,x2,v0,v1\n");
        for r in &self.value {
            let _ = writeln!(out, "{},{},{},{}", r.x1, r.x2, r.v0, r.v1);
        }
        out
    }
}

/// `w₀, w₁` on `y_grid` and `v₀, v₁` on the product `x1_grid × x2_grid`.
/// Nonpositive grid points are skipped.
pub fn function_profiles(solution: &Solution, y_grid: &[f64], x1_grid: &[f64], x2_grid: &[f64]) -> FunctionProfiles {
    let c = &solution.coeffs;
    let ratio = y_grid
        .iter()
        .filter(|&&y| y > 0.0)
        .map(|&y| RatioProfileRow {
            y,
            w0: solution.w0(y).expect("positive ratio"),
            w1: solution.w1(y).expect("positive ratio"),
            payoff: c.beta_s - c.beta_b * y,
        })
        .collect();
    let mut value = Vec::new();
    for &x1 in x1_grid.iter().filter(|&&x| x > 0.0) {
        for &x2 in x2_grid.iter().filter(|&&x| x > 0.0) {
            value.push(ValueProfileRow {
                x1,
                x2,
                v0: solution.value(x1, x2, Regime::Closed).expect("positive prices"),
                v1: solution.value(x1, x2, Regime::Open).expect("positive prices"),
            });
        }
    }
    FunctionProfiles {
        k: solution.k,
        ratio,
        value,
    }
}
