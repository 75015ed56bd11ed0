//! Drift and volatility estimates from a pair of daily close series.
//!
//! Per-period log returns give a sample mean `m` and covariance `Ĉ`. The
//! annualized covariance is `A = Ĉ·P` with `P` periods per year, and the
//! drifts carry the Itô correction, `μᵢ = mᵢ·P + Aᵢᵢ/2`. The reported
//! volatility matrix is the symmetric positive semidefinite square root of
//! `A`, so `σ₁₂ = σ₂₁`.

use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RawParams;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind")]
pub enum CalibrationError {
    #[error("TooFewObservations: {got} rows, need at least {need}")]
    TooFewObservations { got: usize, need: usize },
    #[error("NonpositivePrice: row {row} has p1={p1}, p2={p2}")]
    NonpositivePrice { row: usize, p1: f64, p2: f64 },
    #[error("LengthMismatch: {dates} dates, {p1} p1 values, {p2} p2 values")]
    LengthMismatch { dates: usize, p1: usize, p2: usize },
    #[error("NonincreasingDates: row {row} date {date} does not follow {previous}")]
    NonincreasingDates {
        row: usize,
        date: String,
        previous: String,
    },
    #[error("Parse: {message}")]
    Parse { message: String },
}

/// Two aligned close-price series.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    dates: Vec<NaiveDate>,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

#[derive(Deserialize)]
struct CsvRow {
    date: String,
    p1: f64,
    p2: f64,
}

impl PriceSeries {
    pub fn new(dates: Vec<NaiveDate>, p1: Vec<f64>, p2: Vec<f64>) -> Result<Self, CalibrationError> {
        if dates.len() != p1.len() || p1.len() != p2.len() {
            return Err(CalibrationError::LengthMismatch {
                dates: dates.len(),
                p1: p1.len(),
                p2: p2.len(),
            });
        }
        if p1.len() < 2 {
            return Err(CalibrationError::TooFewObservations {
                got: p1.len(),
                need: 2,
            });
        }
        for (row, (&a, &b)) in p1.iter().zip(&p2).enumerate() {
            if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(CalibrationError::NonpositivePrice { row, p1: a, p2: b });
            }
        }
        for (row, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(CalibrationError::NonincreasingDates {
                    row: row + 1,
                    date: w[1].to_string(),
                    previous: w[0].to_string(),
                });
            }
        }
        Ok(Self { dates, p1, p2 })
    }

    /// Consecutive trading days starting 2000-01-03, weekends skipped.
    pub fn with_business_days(p1: Vec<f64>, p2: Vec<f64>) -> Result<Self, CalibrationError> {
        use chrono::{Datelike, Weekday};
        let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
        let mut dates = Vec::with_capacity(p1.len());
        for _ in 0..p1.len() {
            dates.push(d);
            d = d.succ_opt().expect("date in range");
            while matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                d = d.succ_opt().expect("date in range");
            }
        }
        Self::new(dates, p1, p2)
    }

    /// Reads CSV with header `date,p1,p2` and ISO-8601 dates.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, CalibrationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CalibrationError::Parse { message: e.to_string() })?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["date", "p1", "p2"] {
            return Err(CalibrationError::Parse {
                message: format!("expected header date,p1,p2, found {}", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let (mut dates, mut p1, mut p2) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = rec.map_err(|e| CalibrationError::Parse { message: e.to_string() })?;
            let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d").map_err(|e| {
                CalibrationError::Parse {
                    message: format!("row {i}: date {:?}: {e}", row.date),
                }
            })?;
            dates.push(date);
            p1.push(row.p1);
            p2.push(row.p2);
        }
        Self::new(dates, p1, p2)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,p1,p2\n");
        for ((d, a), b) in self.dates.iter().zip(&self.p1).zip(&self.p2) {
            out.push_str(&format!("{d},{a},{b}\n"));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.p1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p1.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn p2(&self) -> &[f64] {
        &self.p2
    }

    /// Both series multiplied by positive constants.
    pub fn scaled(&self, c1: f64, c2: f64) -> Self {
        Self {
            dates: self.dates.clone(),
            p1: self.p1.iter().map(|p| p * c1).collect(),
            p2: self.p2.iter().map(|p| p * c2).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationOptions {
    pub periods_per_year: f64,
    /// Smallest accepted number of price rows.
    pub min_observations: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            periods_per_year: 252.0,
            min_observations: 30,
        }
    }
}

/// Large-sample standard errors of the estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StandardErrors {
    pub mu1: f64,
    pub mu2: f64,
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub mu1: f64,
    pub mu2: f64,
    /// Symmetric square root of `covariance`.
    pub sigma_matrix: [[f64; 2]; 2],
    /// Annualized `A`.
    pub covariance: [[f64; 2]; 2],
    /// Number of log returns used.
    pub samples: usize,
    pub periods_per_year: f64,
    pub standard_errors: StandardErrors,
    /// `(a11 − 2a12 + a22)/2` is zero to rounding; the model rejects such
    /// a pair.
    pub degenerate: bool,
}

impl CalibrationResult {
    /// `base` with drifts and volatilities replaced by the estimates.
    pub fn apply_to(&self, base: &RawParams) -> RawParams {
        RawParams {
            mu1: self.mu1,
            mu2: self.mu2,
            sigma11: self.sigma_matrix[0][0],
            sigma12: self.sigma_matrix[0][1],
            sigma21: self.sigma_matrix[1][0],
            sigma22: self.sigma_matrix[1][1],
            ..*base
        }
    }
}

/// Symmetric PSD square root of a 2×2 symmetric PSD matrix:
/// `(A + s·I)/t` with `s = √det A`, `t = √(tr A + 2s)`.
pub fn sqrt_psd(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = (a[0][0] * a[1][1] - a[0][1] * a[1][0]).max(0.0);
    let s = det.sqrt();
    let trace = a[0][0] + a[1][1] + 2.0 * s;
    if trace <= 0.0 {
        return [[0.0; 2]; 2];
    }
    let t = trace.sqrt();
    [[(a[0][0] + s) / t, a[0][1] / t], [a[1][0] / t, (a[1][1] + s) / t]]
}

pub fn calibrate(series: &PriceSeries, options: &CalibrationOptions) -> Result<CalibrationResult, CalibrationError> {
    let need = options.min_observations.max(2);
    if series.len() < need {
        return Err(CalibrationError::TooFewObservations {
            got: series.len(),
            need,
        });
    }
    let returns = |p: &[f64]| -> Vec<f64> { p.windows(2).map(|w| (w[1] / w[0]).ln()).collect() };
    let r1 = returns(&series.p1);
    let r2 = returns(&series.p2);
    let n = r1.len();
    let nf = n as f64;
    let m1 = r1.iter().sum::<f64>() / nf;
    let m2 = r2.iter().sum::<f64>() / nf;
    let cov = |x: &[f64], mx: f64, y: &[f64], my: f64| {
        x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (nf - 1.0)
    };
    let per = options.periods_per_year;
    let a11 = cov(&r1, m1, &r1, m1) * per;
    let a12 = cov(&r1, m1, &r2, m2) * per;
    let a22 = cov(&r2, m2, &r2, m2) * per;
    let covariance = [[a11, a12], [a12, a22]];
    let sigma = (a11 - 2.0 * a12 + a22) / 2.0;
    // Drift estimate: Var(m·P) = A·P/n; Var(Aᵢᵢ/2) = Aᵢᵢ²/(2n).
    let se_mu = |aii: f64| (aii * per / nf + aii * aii / (2.0 * nf)).sqrt();
    let se_a = |aii: f64, ajj: f64, aij: f64| ((aii * ajj + aij * aij) / nf).sqrt();
    Ok(CalibrationResult {
        mu1: m1 * per + a11 / 2.0,
        mu2: m2 * per + a22 / 2.0,
        sigma_matrix: sqrt_psd(covariance),
        covariance,
        samples: n,
        periods_per_year: per,
        standard_errors: StandardErrors {
            mu1: se_mu(a11),
            mu2: se_mu(a22),
            a11: se_a(a11, a11, a11),
            a12: se_a(a11, a22, a12),
            a22: se_a(a22, a22, a22),
        },
        degenerate: !(sigma > 1e-12 * (a11 + a22)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::simulate_prices;

    fn synthetic(years: usize, seed: u64) -> PriceSeries {
        let p = RawParams::reference_pair().validate().unwrap();
        let (a, b) = simulate_prices(&p, 40.0, 25.0, years * 252, 1.0 / 252.0, seed);
        PriceSeries::with_business_days(a, b).unwrap()
    }

    #[test]
    fn square_root_reproduces_matrix() {
        let a = [[0.0919269, 0.04414095], [0.04414095, 0.10215985]];
        let s = sqrt_psd(a);
        assert_eq!(s[0][1], s[1][0]);
        for i in 0..2 {
            for j in 0..2 {
                let v = s[i][0] * s[0][j] + s[i][1] * s[1][j];
                assert!((v - a[i][j]).abs() < 1e-15);
            }
        }
        // already-symmetric factor comes back unchanged
        let f = [[0.2943, 0.0729], [0.0729, 0.3112]];
        let a = [
            [f[0][0] * f[0][0] + f[0][1] * f[0][1], f[0][0] * f[1][0] + f[0][1] * f[1][1]],
            [f[0][0] * f[1][0] + f[0][1] * f[1][1], f[1][0] * f[1][0] + f[1][1] * f[1][1]],
        ];
        let s = sqrt_psd(a);
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[i][j] - f[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_prices_are_degenerate() {
        let s = PriceSeries::with_business_days(vec![10.0; 40], vec![20.0; 40]).unwrap();
        let r = calibrate(&s, &CalibrationOptions::default()).unwrap();
        assert_eq!(r.covariance, [[0.0; 2]; 2]);
        assert_eq!((r.mu1, r.mu2), (0.0, 0.0));
        assert!(r.degenerate);
        assert_eq!(r.sigma_matrix, [[0.0; 2]; 2]);
    }

    #[test]
    fn identical_series_are_degenerate() {
        let s = synthetic(1, 3);
        let twin = PriceSeries::new(s.dates.clone(), s.p1.clone(), s.p1.clone()).unwrap();
        let r = calibrate(&twin, &CalibrationOptions::default()).unwrap();
        assert!(r.degenerate);
        let err = r.apply_to(&RawParams::reference_pair()).validate().unwrap_err();
        assert!(err
            .violations
            .iter()
            .any(|v| matches!(v, crate::model::ParamViolation::DegenerateSigma { .. })));
    }

    #[test]
    fn input_errors() {
        let opts = CalibrationOptions::default();
        let short = PriceSeries::with_business_days(vec![1.0; 10], vec![1.0; 10]).unwrap();
        assert_eq!(
            calibrate(&short, &opts),
            Err(CalibrationError::TooFewObservations { got: 10, need: 30 })
        );
        assert!(matches!(
            PriceSeries::with_business_days(vec![1.0, 2.0], vec![1.0]),
            Err(CalibrationError::LengthMismatch { .. })
        ));
        assert!(matches!(
            PriceSeries::with_business_days(vec![1.0, -2.0], vec![1.0, 1.0]),
            Err(CalibrationError::NonpositivePrice { row: 1, .. })
        ));
        let csv = "date,p1,p2\n2020-01-02,1,2\n2020-01-02,1,2\n";
        assert!(matches!(
            PriceSeries::from_csv(csv.as_bytes()),
            Err(CalibrationError::NonincreasingDates { row: 1, .. })
        ));
        for bad in [
            "date,p1\n2020-01-02,1\n",
            "date,p1,p2\n2020-13-02,1,2\n",
            "date,p1,p2\n2020-01-02,x,2\n",
        ] {
            assert!(matches!(
                PriceSeries::from_csv(bad.as_bytes()),
                Err(CalibrationError::Parse { .. })
            ));
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = synthetic(1, 4);
        let back = PriceSeries::from_csv(s.to_csv().as_bytes()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn scale_invariance() {
        let s = synthetic(2, 5);
        let opts = CalibrationOptions::default();
        let base = calibrate(&s, &opts).unwrap();
        assert_eq!(calibrate(&s.scaled(4.0, 0.125), &opts).unwrap(), base);
        let r = calibrate(&s.scaled(3.7, 0.31), &opts).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-3);
        assert!(close(r.mu1, base.mu1) && close(r.mu2, base.mu2));
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(r.covariance[i][j], base.covariance[i][j]));
            }
        }
    }

    #[test]
    fn round_trip_error_shrinks_with_sample_size() {
        let truth = RawParams::reference_pair().validate().unwrap().derive_coeffs();
        let opts = CalibrationOptions::default();
        let mut worst_scaled = Vec::new();
        for years in [10, 160] {
            let r = calibrate(&synthetic(years, 11), &opts).unwrap();
            let se = r.standard_errors;
            let checks = [
                (r.mu1, 0.2059, se.mu1),
                (r.mu2, 0.2459, se.mu2),
                (r.covariance[0][0], truth.a11, se.a11),
                (r.covariance[0][1], truth.a12, se.a12),
                (r.covariance[1][1], truth.a22, se.a22),
            ];
            for (est, want, se) in checks {
                assert!((est - want).abs() <= 3.0 * se, "{years}y: {est} vs {want} (se {se})");
            }
            worst_scaled.push(se.a11);
        }
        // 16× the data, 4× smaller error bars
        assert!((worst_scaled[0] / worst_scaled[1] - 4.0).abs() < 0.4);
    }
}
