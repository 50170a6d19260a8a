//! Variance estimators of the form `phi(R^2) * RSS / (n - p - 1)`.
//!
//! The shrinkage factor `phi` is exposed on its own: dominance over the
//! unbiased estimator is a statement about `phi` (monotone, and bracketed
//! between the Brewster–Zidek factor and one).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::quadrature::{BetaIntegrator, QuadratureError};
use crate::stats::SufficientStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("residual sum of squares is zero; Stein's loss needs a positive estimate")]
    ZeroResidual,
    #[error("shrinkage order a = {a} must satisfy 0 < a < p = {p}")]
    BadShrinkageOrder { a: f64, p: usize },
    #[error("parameter range violation: {0}")]
    ParameterRangeViolation(String),
    #[error("arguments must be positive, got delta = {delta}, sigma^2 = {sigma_sq}")]
    NonPositiveArgument { delta: f64, sigma_sq: f64 },
    #[error("estimator prepared for (n, p) = ({n}, {p}) applied to ({got_n}, {got_p})")]
    DimensionMismatch { n: usize, p: usize, got_n: usize, got_p: usize },
    #[error("invalid estimator spec '{0}' (expected u, stein, bz, gb:a=<a>, h or sbstar)")]
    InvalidSpec(String),
    #[error("R^2 = {0} outside [0, 1]")]
    BadRSquared(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// User-supplied shrinkage factor `phi(R^2, n, p)`.
pub type PhiFn = Arc<dyn Fn(f64, usize, usize) -> f64 + Send + Sync>;

/// User-supplied estimator that is an arbitrary function of the statistics.
pub type StatisticFn = Arc<dyn Fn(&SufficientStats) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum EstimatorSpec {
    /// `RSS / (n - p - 1)`.
    Unbiased,
    /// `min(RSS / (n - p - 1), ||y - ybar||^2 / (n - 1))`.
    SteinTruncated,
    BrewsterZidek,
    /// Generalized Bayes under `(beta'X'X beta)^{-(p-a)/2} / sigma^2`.
    GeneralizedBayes { a: f64 },
    /// Generalized Bayes under `(beta'X'X beta)^{-p+(n-1)/2} / sigma^2`,
    /// available for `(n-1)/2 < p < n-1`.
    SimpleBayesStar,
    /// `phi(R^2) * RSS / (n - p - 1)` for a caller-supplied `phi`.
    CustomPhi { name: String, phi: PhiFn },
    /// Any positive function of the statistics; not of shrinkage form.
    General { name: String, f: StatisticFn },
}

impl EstimatorSpec {
    /// The harmonic-prior estimator, `a = 2`.
    pub fn harmonic() -> Self {
        EstimatorSpec::GeneralizedBayes { a: 2.0 }
    }

    pub fn custom_phi(name: impl Into<String>, phi: impl Fn(f64, usize, usize) -> f64 + Send + Sync + 'static) -> Self {
        EstimatorSpec::CustomPhi { name: name.into(), phi: Arc::new(phi) }
    }

    pub fn general(name: impl Into<String>, f: impl Fn(&SufficientStats) -> f64 + Send + Sync + 'static) -> Self {
        EstimatorSpec::General { name: name.into(), f: Arc::new(f) }
    }

    /// Whether the estimate is `phi(R^2) * RSS / (n - p - 1)`.
    pub fn is_phi_form(&self) -> bool {
        !matches!(self, EstimatorSpec::General { .. })
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Unbiased => write!(f, "u"),
            EstimatorSpec::SteinTruncated => write!(f, "stein"),
            EstimatorSpec::BrewsterZidek => write!(f, "bz"),
            EstimatorSpec::GeneralizedBayes { a } => write!(f, "gb:a={a}"),
            EstimatorSpec::SimpleBayesStar => write!(f, "sbstar"),
            EstimatorSpec::CustomPhi { name, .. } => write!(f, "custom:{name}"),
            EstimatorSpec::General { name, .. } => write!(f, "general:{name}"),
        }
    }
}

impl fmt::Debug for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EstimatorSpec({self})")
    }
}

impl PartialEq for EstimatorSpec {
    fn eq(&self, other: &Self) -> bool {
        use EstimatorSpec::*;
        match (self, other) {
            (Unbiased, Unbiased)
            | (SteinTruncated, SteinTruncated)
            | (BrewsterZidek, BrewsterZidek)
            | (SimpleBayesStar, SimpleBayesStar) => true,
            (GeneralizedBayes { a }, GeneralizedBayes { a: b }) => a == b,
            (CustomPhi { phi: a, .. }, CustomPhi { phi: b, .. }) => Arc::ptr_eq(a, b),
            (General { f: a, .. }, General { f: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Serialize for EstimatorSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Grammar `kind[:key=value,...]`: `u`, `stein`, `bz`, `gb:a=2`, `h`, `sbstar`.
impl FromStr for EstimatorSpec {
    type Err = EstimatorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EstimatorError::InvalidSpec(s.to_string());
        let (kind, params) = match s.trim().split_once(':') {
            Some((k, rest)) => (k.trim(), Some(rest.trim())),
            None => (s.trim(), None),
        };
        let spec = match (kind.to_ascii_lowercase().as_str(), params) {
            ("u" | "unbiased", None) => EstimatorSpec::Unbiased,
            ("stein" | "st", None) => EstimatorSpec::SteinTruncated,
            ("bz", None) => EstimatorSpec::BrewsterZidek,
            ("h" | "harmonic", None) => EstimatorSpec::harmonic(),
            ("sbstar", None) => EstimatorSpec::SimpleBayesStar,
            ("gb", Some(params)) => {
                let mut a = None;
                for kv in params.split(',') {
                    let (k, v) = kv.split_once('=').ok_or_else(bad)?;
                    match k.trim() {
                        "a" => a = Some(v.trim().parse::<f64>().map_err(|_| bad())?),
                        _ => return Err(bad()),
                    }
                }
                let a = a.ok_or_else(bad)?;
                if !a.is_finite() {
                    return Err(bad());
                }
                EstimatorSpec::GeneralizedBayes { a }
            }
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub phi: f64,
    pub estimator: EstimatorSpec,
}

enum Prepared {
    Unbiased,
    Stein,
    BrewsterZidek { integrator: BetaIntegrator, m: f64 },
    GeneralizedBayes { integrator: BetaIntegrator, m0: f64, lead: f64 },
    SimpleBayesStar { coef: f64 },
    CustomPhi(PhiFn),
    General(StatisticFn),
}

/// An estimator validated and prepared for one `(n, p)`; quadrature rules
/// are resolved once so repeated evaluation is cheap.
pub struct Estimator {
    spec: EstimatorSpec,
    n: usize,
    p: usize,
    prepared: Prepared,
}

impl fmt::Debug for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Estimator")
            .field("spec", &self.spec)
            .field("n", &self.n)
            .field("p", &self.p)
            .finish()
    }
}

impl Estimator {
    pub fn new(spec: EstimatorSpec, n: usize, p: usize) -> Result<Self, EstimatorError> {
        if n <= p + 1 || p == 0 {
            return Err(EstimatorError::ParameterRangeViolation(format!(
                "need p >= 1 and n > p + 1, got n = {n}, p = {p}"
            )));
        }
        let (nf, pf) = (n as f64, p as f64);
        let prepared = match &spec {
            EstimatorSpec::Unbiased => Prepared::Unbiased,
            EstimatorSpec::SteinTruncated => Prepared::Stein,
            EstimatorSpec::BrewsterZidek => Prepared::BrewsterZidek {
                integrator: BetaIntegrator::new(pf / 2.0, 1.0)?,
                m: (nf - pf - 1.0) / 2.0,
            },
            EstimatorSpec::GeneralizedBayes { a } => {
                let a = *a;
                if !(a > 0.0 && a < pf) {
                    return Err(EstimatorError::BadShrinkageOrder { a, p });
                }
                Prepared::GeneralizedBayes {
                    integrator: BetaIntegrator::new((pf - a) / 2.0, a / 2.0)?,
                    m0: (nf - pf - a - 1.0) / 2.0,
                    lead: (nf - pf - 1.0) / (nf - a - 1.0),
                }
            }
            EstimatorSpec::SimpleBayesStar => {
                if !((nf - 1.0) / 2.0 < pf && pf < nf - 1.0) {
                    return Err(EstimatorError::ParameterRangeViolation(format!(
                        "sbstar needs (n-1)/2 < p < n-1, got n = {n}, p = {p}"
                    )));
                }
                Prepared::SimpleBayesStar { coef: (2.0 * pf - nf + 1.0) / (nf - pf - 1.0) }
            }
            EstimatorSpec::CustomPhi { phi, .. } => Prepared::CustomPhi(phi.clone()),
            EstimatorSpec::General { f, .. } => Prepared::General(f.clone()),
        };
        Ok(Self { spec, n, p, prepared })
    }

    pub fn spec(&self) -> &EstimatorSpec {
        &self.spec
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    /// Shrinkage factor at `R^2`. `None` for estimators not of shrinkage form.
    pub fn phi(&self, r_squared: f64) -> Result<Option<f64>, EstimatorError> {
        if !(0.0..=1.0).contains(&r_squared) {
            return Err(EstimatorError::BadRSquared(r_squared));
        }
        let (nf, pf) = (self.n as f64, self.p as f64);
        let phi = match &self.prepared {
            Prepared::Unbiased => 1.0,
            Prepared::Stein => {
                let pooled = (nf - pf - 1.0) / ((nf - 1.0) * (1.0 - r_squared));
                pooled.min(1.0)
            }
            Prepared::BrewsterZidek { integrator, m } => {
                if r_squared == 1.0 {
                    1.0
                } else {
                    let integral = integrator.integral(*m, r_squared)?.value;
                    1.0 - 2.0 * (1.0 - r_squared).powf(*m) / ((nf - 1.0) * integral)
                }
            }
            Prepared::GeneralizedBayes { integrator, m0, lead } => {
                let (lo, hi) = integrator.integral_pair(*m0, r_squared)?;
                lead * lo / hi
            }
            Prepared::SimpleBayesStar { coef } => 1.0 / (1.0 + coef * (1.0 - r_squared)),
            Prepared::CustomPhi(phi) => phi(r_squared, self.n, self.p),
            Prepared::General(_) => return Ok(None),
        };
        Ok(Some(phi))
    }

    /// Point estimate only; the Monte Carlo hot path.
    pub fn value(&self, stats: &SufficientStats) -> Result<f64, EstimatorError> {
        self.check(stats)?;
        if let Prepared::General(f) = &self.prepared {
            return Ok(f(stats));
        }
        let unbiased = stats.rss / stats.residual_df();
        let phi = self.phi(stats.r_squared)?.unwrap_or(1.0);
        Ok(phi * unbiased)
    }

    pub fn estimate(&self, stats: &SufficientStats) -> Result<VarianceEstimate, EstimatorError> {
        self.check(stats)?;
        let unbiased = stats.rss / stats.residual_df();
        let (value, phi) = match &self.prepared {
            // exact min keeps the two branches bit-identical to their formulas
            Prepared::Stein => {
                let value = unbiased.min(stats.total_ss / (stats.n - 1) as f64);
                (value, value / unbiased)
            }
            Prepared::General(f) => {
                let value = f(stats);
                (value, value / unbiased)
            }
            _ => {
                let phi = self.phi(stats.r_squared)?.unwrap_or(1.0);
                (phi * unbiased, phi)
            }
        };
        Ok(VarianceEstimate { value, phi, estimator: self.spec.clone() })
    }

    fn check(&self, stats: &SufficientStats) -> Result<(), EstimatorError> {
        if (stats.n, stats.p) != (self.n, self.p) {
            return Err(EstimatorError::DimensionMismatch {
                n: self.n,
                p: self.p,
                got_n: stats.n,
                got_p: stats.p,
            });
        }
        if !(stats.rss > 0.0) {
            return Err(EstimatorError::ZeroResidual);
        }
        Ok(())
    }

    /// Checks that `phi` is nondecreasing on an evenly spaced grid of `points`
    /// values of `R^2` in `[0, 1]`. Returns the first offending `R^2`.
    pub fn first_monotonicity_violation(&self, points: usize, tol: f64) -> Result<Option<f64>, EstimatorError> {
        let mut prev: Option<f64> = None;
        for i in 0..points {
            let r2 = i as f64 / (points - 1).max(1) as f64;
            let Some(phi) = self.phi(r2)? else { return Ok(None) };
            if let Some(prev) = prev {
                if phi < prev - tol {
                    return Ok(Some(r2));
                }
            }
            prev = Some(phi);
        }
        Ok(None)
    }
}

/// `RSS / (n - p - 1)`.
pub fn delta_u(stats: &SufficientStats) -> Result<VarianceEstimate, EstimatorError> {
    Estimator::new(EstimatorSpec::Unbiased, stats.n, stats.p)?.estimate(stats)
}

pub fn delta_stein(stats: &SufficientStats) -> Result<VarianceEstimate, EstimatorError> {
    Estimator::new(EstimatorSpec::SteinTruncated, stats.n, stats.p)?.estimate(stats)
}

/// Brewster–Zidek factor
/// `1 - 2(1-R^2)^{(n-p-1)/2} / ((n-1) ∫₀¹ t^{p/2-1}(1-R^2 t)^{(n-p-1)/2} dt)`.
pub fn phi_bz(r_squared: f64, n: usize, p: usize) -> Result<f64, EstimatorError> {
    Ok(Estimator::new(EstimatorSpec::BrewsterZidek, n, p)?.phi(r_squared)?.expect("shrinkage form"))
}

/// Generalized Bayes factor for the prior `(beta'X'X beta)^{-(p-a)/2} / sigma^2`.
pub fn phi_gb(a: f64, r_squared: f64, n: usize, p: usize) -> Result<f64, EstimatorError> {
    Ok(Estimator::new(EstimatorSpec::GeneralizedBayes { a }, n, p)?.phi(r_squared)?.expect("shrinkage form"))
}

pub fn delta_gb(a: f64, stats: &SufficientStats) -> Result<VarianceEstimate, EstimatorError> {
    Estimator::new(EstimatorSpec::GeneralizedBayes { a }, stats.n, stats.p)?.estimate(stats)
}

pub fn delta_sb_star(stats: &SufficientStats) -> Result<VarianceEstimate, EstimatorError> {
    Estimator::new(EstimatorSpec::SimpleBayesStar, stats.n, stats.p)?.estimate(stats)
}

/// Stein's loss `delta/sigma^2 - log(delta/sigma^2) - 1`.
pub fn stein_loss(delta: f64, sigma_sq: f64) -> Result<f64, EstimatorError> {
    if !(delta > 0.0 && sigma_sq > 0.0) {
        return Err(EstimatorError::NonPositiveArgument { delta, sigma_sq });
    }
    let excess = delta / sigma_sq - 1.0;
    Ok(excess - excess.ln_1p())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(n: usize, p: usize, rss: f64, total_ss: f64) -> SufficientStats {
        SufficientStats::new(n, p, rss, total_ss).unwrap()
    }

    fn stats_r2(n: usize, p: usize, rss: f64, r2: f64) -> SufficientStats {
        SufficientStats::with_r_squared(n, p, rss, rss / (1.0 - r2), r2).unwrap()
    }

    #[test]
    fn unbiased_examples() {
        assert_eq!(delta_u(&stats(10, 4, 5.0, 8.0)).unwrap().value, 1.0);
        let e = delta_u(&stats(9, 2, 6.0, 10.0)).unwrap();
        assert_eq!((e.value, e.phi), (1.0, 1.0));
    }

    #[test]
    fn zero_residual_rejected() {
        let s = stats(10, 4, 0.0, 8.0);
        assert_eq!(delta_u(&s).unwrap_err(), EstimatorError::ZeroResidual);
        assert_eq!(delta_gb(2.0, &s).unwrap_err(), EstimatorError::ZeroResidual);
    }

    #[test]
    fn stein_examples() {
        assert!((delta_stein(&stats(10, 4, 5.0, 8.0)).unwrap().value - 8.0 / 9.0).abs() < 1e-15);
        assert_eq!(delta_stein(&stats(10, 4, 1.0, 100.0)).unwrap().value, 0.2);
        let e = delta_stein(&stats(10, 4, 9.0, 9.0)).unwrap();
        assert_eq!(e.value, 1.0);
        assert!((e.phi - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn bz_endpoints() {
        assert!((phi_bz(0.0, 10, 4).unwrap() - 5.0 / 9.0).abs() < 1e-13);
        assert_eq!(phi_bz(1.0, 10, 4).unwrap(), 1.0);
        let mid = phi_bz(0.5, 10, 4).unwrap();
        assert!(mid > 5.0 / 9.0 && mid < 1.0);
        assert!(phi_bz(0.4, 10, 4).unwrap() < mid && mid < phi_bz(0.6, 10, 4).unwrap());
    }

    #[test]
    fn gb_endpoints() {
        assert!((phi_gb(2.0, 0.0, 10, 4).unwrap() - 5.0 / 7.0).abs() < 1e-14);
        assert!((phi_gb(2.0, 1.0, 10, 4).unwrap() - 1.0).abs() < 1e-13);
        assert!((phi_gb(2.0, 1.0 - 1e-9, 10, 4).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gb_order_range() {
        for a in [0.0, 4.0, 5.5, -1.0] {
            assert!(matches!(phi_gb(a, 0.3, 10, 4), Err(EstimatorError::BadShrinkageOrder { .. })));
        }
    }

    #[test]
    fn gb_estimate_examples() {
        let e = delta_gb(2.0, &stats_r2(10, 4, 7.0, 0.0)).unwrap();
        assert!((e.value - 1.0).abs() < 1e-14);
        let near_one = delta_gb(2.0, &stats_r2(10, 4, 5.0, 1.0 - 1e-12)).unwrap();
        assert!((near_one.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sb_star_examples() {
        let e = delta_sb_star(&stats_r2(10, 6, 3.0, 0.5)).unwrap();
        assert!((e.value - 2.0 / 3.0).abs() < 1e-15);
        let e = delta_sb_star(&stats_r2(10, 6, 4.0, 1.0 - 1e-15)).unwrap();
        assert!((e.value - 4.0 / 3.0).abs() < 1e-14);
        let e = delta_sb_star(&stats_r2(11, 6, 8.0, 0.0)).unwrap();
        assert!((e.value - 4.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            delta_sb_star(&stats(10, 3, 4.0, 5.0)),
            Err(EstimatorError::ParameterRangeViolation(_))
        ));
    }

    #[test]
    fn stein_loss_examples() {
        assert_eq!(stein_loss(1.0, 1.0).unwrap(), 0.0);
        assert!((stein_loss(2.0, 1.0).unwrap() - (1.0 - 2f64.ln())).abs() < 1e-15);
        assert!((stein_loss(0.5, 1.0).unwrap() - (-0.5 - 0.5f64.ln())).abs() < 1e-15);
        assert!(stein_loss(0.5, 1.0).unwrap() < stein_loss(2.0, 1.0).unwrap());
        assert!(matches!(stein_loss(0.0, 1.0), Err(EstimatorError::NonPositiveArgument { .. })));
        assert!(matches!(stein_loss(1.0, -1.0), Err(EstimatorError::NonPositiveArgument { .. })));
    }

    #[test]
    fn spec_grammar() {
        for (text, spec) in [
            ("u", EstimatorSpec::Unbiased),
            ("stein", EstimatorSpec::SteinTruncated),
            ("bz", EstimatorSpec::BrewsterZidek),
            ("gb:a=2", EstimatorSpec::harmonic()),
            ("gb:a=2.5", EstimatorSpec::GeneralizedBayes { a: 2.5 }),
            ("h", EstimatorSpec::harmonic()),
            ("sbstar", EstimatorSpec::SimpleBayesStar),
        ] {
            let parsed: EstimatorSpec = text.parse().unwrap();
            assert_eq!(parsed, spec);
            assert_eq!(parsed.to_string().parse::<EstimatorSpec>().unwrap(), spec);
        }
        for bad in ["", "gb", "gb:b=2", "gb:a=x", "zz", "u:a=1"] {
            assert!(bad.parse::<EstimatorSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn general_estimator_is_not_phi_form() {
        let spec = EstimatorSpec::general("half-total", |s| s.total_ss / 2.0);
        assert!(!spec.is_phi_form());
        let est = Estimator::new(spec, 10, 4).unwrap();
        assert_eq!(est.phi(0.3).unwrap(), None);
        assert_eq!(est.value(&stats(10, 4, 5.0, 8.0)).unwrap(), 4.0);
    }

    #[test]
    fn dimension_mismatch() {
        let est = Estimator::new(EstimatorSpec::harmonic(), 10, 4).unwrap();
        assert!(matches!(
            est.value(&stats(12, 4, 1.0, 2.0)),
            Err(EstimatorError::DimensionMismatch { .. })
        ));
    }
}
