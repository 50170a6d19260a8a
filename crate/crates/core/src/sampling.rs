//! Data generation under spherically symmetric errors that are scale
//! mixtures of normals: `eps = tau * z` with `E[tau^2] = 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::rng::Stream;
use crate::stats::{noncentrality, RegressionData, StatsError, SufficientStats};

const MEAN_TOLERANCE: f64 = 1e-12;
const XI_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid mixing law: {0}")]
    InvalidMixing(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("design and coefficients give xi = {actual}, config says {expected}")]
    InconsistentXi { expected: f64, actual: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Law of the squared scale `tau^2`, normalized to `E[tau^2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixingLaw {
    /// `tau^2 = 1`: Gaussian errors.
    PointMass,
    /// Inverse gamma with shape `nu/2` and scale `(nu-2)/2`: multivariate t
    /// with `nu` degrees of freedom and unit component variance.
    InverseGammaT { nu: f64 },
    /// `tau^2 = v1` with probability `w`, else `v2`.
    TwoPoint { v1: f64, v2: f64, w: f64 },
}

impl MixingLaw {
    pub fn inverse_gamma_t(nu: f64) -> Result<Self, SamplingError> {
        let law = MixingLaw::InverseGammaT { nu };
        law.validate()?;
        Ok(law)
    }

    pub fn two_point(v1: f64, v2: f64, w: f64) -> Result<Self, SamplingError> {
        let law = MixingLaw::TwoPoint { v1, v2, w };
        law.validate()?;
        Ok(law)
    }

    /// Two-point law with the weight chosen so that the mean is one.
    pub fn two_point_unit_mean(v1: f64, v2: f64) -> Result<Self, SamplingError> {
        if !((v1 - 1.0) * (v2 - 1.0) < 0.0) {
            return Err(SamplingError::InvalidMixing(format!(
                "two-point support {{{v1}, {v2}}} must straddle 1"
            )));
        }
        Self::two_point(v1, v2, (1.0 - v2) / (v1 - v2))
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        match *self {
            MixingLaw::PointMass => Ok(()),
            MixingLaw::InverseGammaT { nu } => {
                if nu > 2.0 && nu.is_finite() {
                    Ok(())
                } else {
                    Err(SamplingError::InvalidMixing(format!("t mixing needs nu > 2, got {nu}")))
                }
            }
            MixingLaw::TwoPoint { v1, v2, w } => {
                if !(v1 > 0.0 && v2 > 0.0 && v1.is_finite() && v2.is_finite()) {
                    return Err(SamplingError::InvalidMixing(format!(
                        "two-point support must be positive, got {v1}, {v2}"
                    )));
                }
                if !(w > 0.0 && w < 1.0) {
                    return Err(SamplingError::InvalidMixing(format!("weight {w} outside (0, 1)")));
                }
                let mean = w * v1 + (1.0 - w) * v2;
                if (mean - 1.0).abs() > MEAN_TOLERANCE {
                    return Err(SamplingError::InvalidMixing(format!(
                        "E[tau^2] = {mean}, must be 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `E[tau^4]`, infinite for t mixing with `nu <= 4`.
    pub fn second_moment(&self) -> f64 {
        match *self {
            MixingLaw::PointMass => 1.0,
            MixingLaw::InverseGammaT { nu } if nu > 4.0 => (nu - 2.0) / (nu - 4.0),
            MixingLaw::InverseGammaT { .. } => f64::INFINITY,
            MixingLaw::TwoPoint { v1, v2, w } => w * v1 * v1 + (1.0 - w) * v2 * v2,
        }
    }
}

impl fmt::Display for MixingLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingLaw::PointMass => write!(f, "normal"),
            MixingLaw::InverseGammaT { nu } => write!(f, "t:{nu}"),
            MixingLaw::TwoPoint { v1, v2, w } => write!(f, "two:v1={v1},v2={v2},w={w}"),
        }
    }
}

impl Serialize for MixingLaw {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

fn parse_number(text: &str) -> Option<f64> {
    let text = text.trim();
    match text.split_once('/') {
        Some((num, den)) => Some(num.trim().parse::<f64>().ok()? / den.trim().parse::<f64>().ok()?),
        None => text.parse().ok(),
    }
}

/// Grammar: `normal`, `t:<nu>` (or `t:nu=<nu>`), `two:v1=<v>,v2=<v>[,w=<w>]`.
/// Numbers may be written as fractions such as `2/3`; an omitted two-point
/// weight is solved from `E[tau^2] = 1`.
impl FromStr for MixingLaw {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SamplingError::InvalidMixing(format!("cannot parse '{s}' (expected normal, t:<nu> or two:v1=..,v2=..[,w=..])"));
        let (kind, params) = match s.trim().split_once(':') {
            Some((k, rest)) => (k.trim().to_ascii_lowercase(), Some(rest)),
            None => (s.trim().to_ascii_lowercase(), None),
        };
        match (kind.as_str(), params) {
            ("normal" | "gaussian" | "point", None) => Ok(MixingLaw::PointMass),
            ("t", Some(rest)) => {
                let value = rest.trim().strip_prefix("nu=").unwrap_or(rest);
                MixingLaw::inverse_gamma_t(parse_number(value).ok_or_else(bad)?)
            }
            ("two", Some(rest)) => {
                let (mut v1, mut v2, mut w) = (None, None, None);
                for kv in rest.split(',') {
                    let (k, v) = kv.split_once('=').ok_or_else(bad)?;
                    let v = parse_number(v).ok_or_else(bad)?;
                    match k.trim() {
                        "v1" => v1 = Some(v),
                        "v2" => v2 = Some(v),
                        "w" => w = Some(v),
                        _ => return Err(bad()),
                    }
                }
                let (v1, v2) = (v1.ok_or_else(bad)?, v2.ok_or_else(bad)?);
                match w {
                    Some(w) => MixingLaw::two_point(v1, v2, w),
                    None => MixingLaw::two_point_unit_mean(v1, v2),
                }
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub xi: f64,
    pub sigma_sq: f64,
    pub mixing: MixingLaw,
    pub seed: u64,
    pub replicates: usize,
}

impl SimConfig {
    pub fn new(
        n: usize,
        p: usize,
        xi: f64,
        sigma_sq: f64,
        mixing: MixingLaw,
        seed: u64,
        replicates: usize,
    ) -> Result<Self, SamplingError> {
        let config = Self { n, p, xi, sigma_sq, mixing, seed, replicates };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.p == 0 || self.n <= self.p + 1 {
            return Err(SamplingError::InvalidConfig(format!(
                "need p >= 1 and n > p + 1, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(SamplingError::InvalidConfig(format!("xi must be finite and >= 0, got {}", self.xi)));
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(SamplingError::InvalidConfig(format!("sigma^2 must be positive, got {}", self.sigma_sq)));
        }
        if self.replicates == 0 {
            return Err(SamplingError::InvalidConfig("replicates must be >= 1".into()));
        }
        self.mixing.validate()
    }
}

pub fn sample_tau_sq(law: &MixingLaw, rng: &mut Stream) -> f64 {
    match *law {
        MixingLaw::PointMass => 1.0,
        MixingLaw::InverseGammaT { nu } => 0.5 * (nu - 2.0) / rng.gamma(nu / 2.0),
        MixingLaw::TwoPoint { v1, v2, w } => {
            if rng.uniform() < w {
                v1
            } else {
                v2
            }
        }
    }
}

/// One draw of the sufficient statistics. Given `tau`, `U = fitted/tau^2`
/// is noncentral chi-square with `p` degrees of freedom and noncentrality
/// `xi/tau^2`, and `V = RSS/tau^2` is an independent chi-square with
/// `n - p - 1`; simulated at unit scale and rescaled by `sigma^2`.
pub fn sample_stats_direct(config: &SimConfig, rng: &mut Stream) -> SufficientStats {
    let tau_sq = sample_tau_sq(&config.mixing, rng);
    let u = rng.noncentral_chi_square(config.p as f64, config.xi / tau_sq);
    let v = rng.chi_square((config.n - config.p - 1) as f64);
    let scale = config.sigma_sq * tau_sq;
    SufficientStats {
        n: config.n,
        p: config.p,
        rss: scale * v,
        total_ss: scale * (u + v),
        r_squared: u / (u + v),
    }
}

/// `y = alpha 1 + X beta + sigma tau z` for a centered design `x`.
pub fn sample_data_full(
    config: &SimConfig,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    alpha: f64,
    rng: &mut Stream,
) -> Result<RegressionData, SamplingError> {
    check_design(config, x, beta)?;
    let tau = sample_tau_sq(&config.mixing, rng).sqrt();
    let noise_scale = config.sigma_sq.sqrt() * tau;
    let mut y = x * beta;
    for value in y.iter_mut() {
        *value += alpha + noise_scale * rng.normal();
    }
    Ok(RegressionData::new(y, x.clone())?)
}

/// Checks that `(x, beta)` realizes the configured noncentrality.
pub fn check_design(config: &SimConfig, x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<(), SamplingError> {
    if x.nrows() != config.n || x.ncols() != config.p || beta.len() != config.p {
        return Err(SamplingError::InvalidConfig(format!(
            "design is {}x{} with {} coefficients, config has n = {}, p = {}",
            x.nrows(),
            x.ncols(),
            beta.len(),
            config.n,
            config.p
        )));
    }
    let actual = noncentrality(beta, x, config.sigma_sq)?.xi;
    if (actual - config.xi).abs() > XI_TOLERANCE * config.xi.max(1.0) {
        return Err(SamplingError::InconsistentXi { expected: config.xi, actual });
    }
    Ok(())
}
