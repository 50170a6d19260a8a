//! Brute-force evaluation of generalized Bayes variance estimators.
//!
//! Under Stein's loss the generalized Bayes estimator is `1/E[1/sigma^2 | y]`,
//! the ratio `m_0 / m_1` of the marginals
//!
//! ```text
//! m_i = ∫∫∫ sigma^{-n} f(||y - alpha 1 - X beta||^2 / sigma^2) pi(alpha, beta)
//!       (sigma^2)^{-i-1} dsigma^2 dalpha dbeta.
//! ```
//!
//! Two routes are provided. The direct route integrates all of
//! `(alpha, beta, sigma^2)` numerically (small `n` and `p <= 2` only). The
//! reduced route, for the power prior `(beta'X'X beta)^{-(p-a)/2}`, does the
//! `alpha`, `beta` and `sigma^2` integrals in closed form through the
//! Gaussian scale-mixture representation of the prior, leaving one integral
//! over the mixing variable `g` and the radial moments of `f`.

mod checks;
mod de;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::stats::{compute_stats, RegressionData, StatsError};

pub use checks::{
    g_mixture_integral, laplacian_power_exact, laplacian_power_fd, verify_normalization, NormalizationReport,
};
pub use de::DoubleExponential;

/// Largest `n` for the direct route.
pub const DIRECT_MAX_N: usize = 8;
/// Largest `p` for the direct route.
pub const DIRECT_MAX_P: usize = 2;
/// Tolerance for the normalization identities checked on user densities.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("quadrature did not converge ({context}): relative change {change:e} after level {level}")]
    QuadratureBudgetExceeded { context: String, level: u32, change: f64 },
    #[error("non-finite integrand value in {0}")]
    NonFinite(String),
    #[error("invalid sampling density: {0}")]
    InvalidDensity(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("direct integration supports n <= {DIRECT_MAX_N}, p <= {DIRECT_MAX_P}; got n = {n}, p = {p}")]
    DimensionTooLarge { n: usize, p: usize },
    #[error("index i must be 0 or 1, got {0}")]
    BadIndex(usize),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PriorFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Spherically symmetric error density `f(e'e)` on `R^n`, normalized to
/// total mass one and identity covariance.
#[derive(Clone)]
pub enum SamplingDensity {
    Gaussian,
    /// Multivariate t with `nu > 2` degrees of freedom, unit variance.
    StudentT { nu: f64 },
    /// A user density for one fixed dimension `n`.
    UserRadial { n: usize, f: RadialFn },
}

impl fmt::Debug for SamplingDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingDensity::Gaussian => write!(f, "Gaussian"),
            SamplingDensity::StudentT { nu } => write!(f, "StudentT({nu})"),
            SamplingDensity::UserRadial { n, .. } => write!(f, "UserRadial(n = {n})"),
        }
    }
}

impl SamplingDensity {
    pub fn student_t(nu: f64) -> Result<Self, OracleError> {
        if nu > 2.0 && nu.is_finite() {
            Ok(SamplingDensity::StudentT { nu })
        } else {
            Err(OracleError::InvalidDensity(format!("t density needs nu > 2, got {nu}")))
        }
    }

    /// A user density, accepted only if both normalization identities hold
    /// to within [`NORMALIZATION_TOLERANCE`].
    pub fn user_radial(n: usize, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self, OracleError> {
        let density = Self::user_radial_unchecked(n, f);
        let report = verify_normalization(&density, n);
        if !(report.mass_residual.abs() <= NORMALIZATION_TOLERANCE
            && report.second_moment_residual.abs() <= NORMALIZATION_TOLERANCE)
        {
            return Err(OracleError::InvalidDensity(format!(
                "normalization residuals {:e} (mass) and {:e} (second moment) exceed {NORMALIZATION_TOLERANCE:e}",
                report.mass_residual, report.second_moment_residual
            )));
        }
        Ok(density)
    }

    /// A user density without the normalization check, for diagnostics.
    pub fn user_radial_unchecked(n: usize, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SamplingDensity::UserRadial { n, f: Arc::new(f) }
    }

    fn check_dimension(&self, n: usize) -> Result<(), OracleError> {
        match self {
            SamplingDensity::UserRadial { n: m, .. } if *m != n => Err(OracleError::InvalidDensity(format!(
                "density defined on R^{m}, data have n = {n}"
            ))),
            _ => Ok(()),
        }
    }

    /// `ln f(s)` on `R^n`.
    pub fn log_density(&self, s: f64, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            SamplingDensity::Gaussian => -0.5 * nf * (2.0 * PI).ln() - 0.5 * s,
            SamplingDensity::StudentT { nu } => {
                ln_gamma(0.5 * (nu + nf)) - ln_gamma(0.5 * nu) - 0.5 * nf * ((nu - 2.0) * PI).ln()
                    - 0.5 * (nu + nf) * (s / (nu - 2.0)).ln_1p()
            }
            SamplingDensity::UserRadial { f, .. } => f(s).ln(),
        }
    }

    pub fn density(&self, s: f64, n: usize) -> f64 {
        match self {
            SamplingDensity::UserRadial { f, .. } => f(s),
            _ => self.log_density(s, n).exp(),
        }
    }

    /// `ln ∫₀^∞ s^{n/2 - 1 + i} f(s) ds`.
    fn log_radial_moment(&self, n: usize, i: usize, de: &DoubleExponential) -> Result<f64, OracleError> {
        let power = 0.5 * n as f64 - 1.0 + i as f64;
        let [v] = de.half_line_log(n as f64, |s, ln_s| Ok([power * ln_s + self.log_density(s, n)]), "radial moment")?;
        Ok(v.ln())
    }
}

/// Prior on `(alpha, beta)`; the factor `1/sigma^2` is always included.
#[derive(Clone)]
pub enum PriorSpec {
    /// `(beta'X'X beta)^{-(p-a)/2}`, flat in `alpha`.
    SeparablePowerPrior { a: f64 },
    /// `pi(alpha, beta)`, which must make the marginals finite.
    GenericSeparable(PriorFn),
}

impl fmt::Debug for PriorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorSpec::SeparablePowerPrior { a } => write!(f, "SeparablePowerPrior(a = {a})"),
            PriorSpec::GenericSeparable(_) => write!(f, "GenericSeparable"),
        }
    }
}

impl PriorSpec {
    pub fn generic(pi: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        PriorSpec::GenericSeparable(Arc::new(pi))
    }

    fn check(&self, p: usize) -> Result<(), OracleError> {
        match self {
            PriorSpec::SeparablePowerPrior { a } if !(*a > 0.0 && *a < p as f64) => {
                Err(OracleError::InvalidPrior(format!("power prior needs 0 < a < p = {p}, got a = {a}")))
            }
            _ => Ok(()),
        }
    }
}

/// Summaries of the data shared by both routes.
struct Fit {
    n: usize,
    p: usize,
    ybar: f64,
    rss: f64,
    total: f64,
    r_squared: f64,
    beta_hat: DVector<f64>,
    xtx: DMatrix<f64>,
}

impl Fit {
    fn new(data: &RegressionData) -> Result<Self, OracleError> {
        let stats = compute_stats(data)?;
        let x = data.x();
        let ybar = data.y().mean();
        let v = data.y().add_scalar(-ybar);
        let xtx = x.transpose() * x;
        let chol = xtx.clone().cholesky().ok_or(StatsError::RankDeficient { rank: 0, p: x.ncols() })?;
        let beta_hat = chol.solve(&(x.transpose() * v));
        Ok(Self {
            n: stats.n,
            p: stats.p,
            ybar,
            rss: stats.rss,
            total: stats.total_ss,
            r_squared: stats.r_squared,
            beta_hat,
            xtx,
        })
    }

    fn sigma_hat_sq(&self) -> f64 {
        self.rss / (self.n - self.p - 1) as f64
    }

    /// `||v - X beta||^2` for `beta` given in original coordinates.
    fn residual_sq(&self, beta: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.p, beta.iter().zip(self.beta_hat.iter()).map(|(b, h)| b - h));
        self.rss + (d.transpose() * &self.xtx * &d)[(0, 0)]
    }
}

/// Numerical settings for the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub quadrature: DoubleExponential,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { quadrature: DoubleExponential::new(1e-10, 12) }
    }
}

/// `[m_0, m_1]` by the default route for the prior: reduced for the power
/// prior, direct otherwise. Both share an `i`-independent constant factor.
pub fn marginal_pair(
    data: &RegressionData,
    prior: &PriorSpec,
    density: &SamplingDensity,
    options: &OracleOptions,
) -> Result<[f64; 2], OracleError> {
    match prior {
        PriorSpec::SeparablePowerPrior { .. } => marginal_pair_reduced(data, prior, density, options),
        PriorSpec::GenericSeparable(_) => marginal_pair_direct(data, prior, density, options),
    }
}

/// `m_i` up to a constant shared by `i = 0` and `i = 1`.
pub fn marginal_mi(
    data: &RegressionData,
    prior: &PriorSpec,
    density: &SamplingDensity,
    i: usize,
) -> Result<f64, OracleError> {
    if i > 1 {
        return Err(OracleError::BadIndex(i));
    }
    Ok(marginal_pair(data, prior, density, &OracleOptions::default())?[i])
}

/// The generalized Bayes estimate `m_0 / m_1`.
pub fn gb_estimate_oracle(
    data: &RegressionData,
    prior: &PriorSpec,
    density: &SamplingDensity,
) -> Result<f64, OracleError> {
    gb_estimate_oracle_with(data, prior, density, &OracleOptions::default())
}

pub fn gb_estimate_oracle_with(
    data: &RegressionData,
    prior: &PriorSpec,
    density: &SamplingDensity,
    options: &OracleOptions,
) -> Result<f64, OracleError> {
    let [m0, m1] = marginal_pair(data, prior, density, options)?;
    Ok(m0 / m1)
}

/// Reduced route for the power prior. With `k_i = (n-1-a)/2 + i`,
///
/// ```text
/// m_i ∝ C_i Γ(k_i) / Γ(n/2 + i) ||v||^{-2i}
///       ∫₀^∞ g^{a/2-1} (1+g)^{(n-p-a-1)/2+i} (g(1-R^2)+1)^{-k_i} dg,
/// ```
///
/// where `C_i = ∫₀^∞ s^{n/2-1+i} f(s) ds` carries all dependence on `f`.
pub fn marginal_pair_reduced(
    data: &RegressionData,
    prior: &PriorSpec,
    density: &SamplingDensity,
    options: &OracleOptions,
) -> Result<[f64; 2], OracleError> {
    let PriorSpec::SeparablePowerPrior { a } = *prior else {
        return Err(OracleError::InvalidPrior("the reduced route needs the power prior".into()));
    };
    let fit = Fit::new(data)?;
    prior.check(fit.p)?;
    density.check_dimension(fit.n)?;
    let de = &options.quadrature;
    let (nf, pf) = (fit.n as f64, fit.p as f64);
    let one_minus_r2 = 1.0 - fit.r_squared;
    let mut out = [0.0; 2];
    for (i, slot) in out.iter_mut().enumerate() {
        let fi = i as f64;
        let k = 0.5 * (nf - 1.0 - a) + fi;
        let growth = 0.5 * (nf - pf - a - 1.0) + fi;
        let [g_integral] = de.half_line_log(
            1.0,
            |g, ln_g| Ok([(0.5 * a - 1.0) * ln_g + growth * g.ln_1p() - k * (g * one_minus_r2).ln_1p()]),
            "g integral",
        )?;
        let log_m = density.log_radial_moment(fit.n, i, de)? + ln_gamma(k) - ln_gamma(0.5 * nf + fi)
            - fi * fit.total.ln()
            + g_integral.ln();
        *slot = log_m.exp();
    }
    Ok(out)
}

/// Direct route: nested quadrature over `alpha`, `beta` and `sigma^2`.
/// The power prior is integrated in `theta = (X'X)^{1/2} beta`, in polar
/// coordinates when `p = 2`.
pub fn marginal_pair_direct(
    data: &RegressionData,
    prior: &PriorSpec,
    density: &SamplingDensity,
    options: &OracleOptions,
) -> Result<[f64; 2], OracleError> {
    let fit = Fit::new(data)?;
    if fit.n > DIRECT_MAX_N || fit.p > DIRECT_MAX_P {
        return Err(OracleError::DimensionTooLarge { n: fit.n, p: fit.p });
    }
    prior.check(fit.p)?;
    density.check_dimension(fit.n)?;
    let de = &options.quadrature;
    let nf = fit.n as f64;
    let sigma_hat = fit.sigma_hat_sq().sqrt();

    // ∫₀^∞ sigma^{-n} f(s/sigma^2) (sigma^2)^{-i-1} dsigma^2 for i = 0, 1.
    let scale_integral = |s: f64| -> Result<[f64; 2], OracleError> {
        de.half_line_log(
            s / nf,
            |sigma_sq, ln_sigma_sq| {
                let base = density.log_density(s / sigma_sq, fit.n) - (0.5 * nf + 1.0) * ln_sigma_sq;
                Ok([base, base - ln_sigma_sq])
            },
            "sigma^2",
        )
    };
    // ∫ over alpha given the residual ||v - X beta||^2.
    let alpha_integral = |residual_sq: f64| -> Result<[f64; 2], OracleError> {
        de.real_line(
            fit.ybar,
            sigma_hat / nf.sqrt(),
            |alpha| scale_integral(nf * (alpha - fit.ybar).powi(2) + residual_sq),
            "alpha",
        )
    };
    let scaled = |v: [f64; 2], w: f64| v.map(|x| x * w);

    match prior {
        PriorSpec::GenericSeparable(pi) => {
            let inv = fit.xtx.clone().try_inverse().ok_or(StatsError::RankDeficient { rank: 0, p: fit.p })?;
            let spread: Vec<f64> = (0..fit.p).map(|j| sigma_hat * inv[(j, j)].sqrt()).collect();
            let joint = |beta: &[f64]| -> Result<[f64; 2], OracleError> {
                let residual_sq = fit.residual_sq(beta);
                de.real_line(
                    fit.ybar,
                    sigma_hat / nf.sqrt(),
                    |alpha| {
                        let weight = pi(alpha, beta);
                        if weight == 0.0 {
                            return Ok([0.0; 2]);
                        }
                        Ok(scaled(scale_integral(nf * (alpha - fit.ybar).powi(2) + residual_sq)?, weight))
                    },
                    "alpha",
                )
            };
            match fit.p {
                1 => de.real_line(fit.beta_hat[0], spread[0], |b| joint(&[b]), "beta"),
                _ => de.real_line(
                    fit.beta_hat[0],
                    spread[0],
                    |b0| de.real_line(fit.beta_hat[1], spread[1], |b1| joint(&[b0, b1]), "beta_2"),
                    "beta_1",
                ),
            }
        }
        PriorSpec::SeparablePowerPrior { a } => {
            let a = *a;
            let theta_hat = (fit.total - fit.rss).max(0.0).sqrt();
            let radial_scale = theta_hat.max(sigma_hat);
            match fit.p {
                1 => {
                    // |theta|^{-(1-a)} on each half-line; theta_hat placed on the positive side.
                    de.half_line(
                        radial_scale,
                        |r| {
                            let near = alpha_integral(fit.rss + (r - theta_hat).powi(2))?;
                            let far = alpha_integral(fit.rss + (r + theta_hat).powi(2))?;
                            let weight = r.powf(a - 1.0);
                            Ok([0, 1].map(|i| (near[i] + far[i]) * weight))
                        },
                        "theta",
                    )
                }
                _ => {
                    // polar coordinates with theta_hat along the angle pi; the
                    // Jacobian r cancels one power of ||theta||^{-(2-a)}.
                    de.half_line(
                        radial_scale,
                        |r| {
                            let angular = de.interval(
                                0.0,
                                2.0 * PI,
                                |phi| {
                                    let dist_sq = r * r + theta_hat * theta_hat + 2.0 * r * theta_hat * phi.cos();
                                    alpha_integral(fit.rss + dist_sq)
                                },
                                "angle",
                            )?;
                            Ok(scaled(angular, r.powf(a - 1.0)))
                        },
                        "radius",
                    )
                }
            }
        }
    }
}
