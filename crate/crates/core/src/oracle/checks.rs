//! Numerical identities behind the oracle: density normalization, the
//! Gaussian-mixture form of the power prior, and its Laplacian.

use std::f64::consts::PI;

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::{DoubleExponential, OracleError, SamplingDensity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationReport {
    pub n: usize,
    /// `(pi^{n/2}/Γ(n/2)) ∫₀^∞ s^{n/2-1} f(s) ds`, should be 1.
    pub mass: f64,
    /// `(pi^{n/2}/Γ(n/2)) ∫₀^∞ s^{n/2} f(s) ds`, should be `n`.
    pub second_moment: f64,
    pub mass_residual: f64,
    pub second_moment_residual: f64,
    /// Ratio of the moment ratios of `f` and of the Gaussian density; the
    /// factor by which `m_0/m_1` under `f` differs from the Gaussian one.
    pub ratio_constant: f64,
    pub ratio_residual: f64,
}

/// Evaluates the normalization identities. Never fails: quadrature
/// problems show up as non-finite residuals.
pub fn verify_normalization(density: &SamplingDensity, n: usize) -> NormalizationReport {
    let de = DoubleExponential::new(1e-12, 12);
    let log_surface = 0.5 * n as f64 * PI.ln() - ln_gamma(0.5 * n as f64);
    let moment = |d: &SamplingDensity, i| d.log_radial_moment(n, i, &de).map(|m| (m + log_surface).exp()).unwrap_or(f64::NAN);
    let mass = moment(density, 0);
    let second_moment = moment(density, 1);
    let gaussian = SamplingDensity::Gaussian;
    let ratio_constant = (mass / second_moment) * (moment(&gaussian, 1) / moment(&gaussian, 0));
    NormalizationReport {
        n,
        mass,
        second_moment,
        mass_residual: mass - 1.0,
        second_moment_residual: second_moment - n as f64,
        ratio_constant,
        ratio_residual: ratio_constant - 1.0,
    }
}

/// Right-hand side of
///
/// ```text
/// (b'X'X b)^{-(p-a)/2} = 2^{a/2} pi^{p/2} / Γ((p-a)/2) (sigma^2)^{a/2}
///     ∫₀^∞ g^{a/2-1} (2 pi sigma^2 g)^{-p/2} exp(-b'X'X b / (2 sigma^2 g)) dg,
/// ```
///
/// integrated numerically (the `|X'X|^{1/2}` factors cancel). `quad_form`
/// is `b'X'X b`.
pub fn g_mixture_integral(quad_form: f64, sigma_sq: f64, a: f64, p: usize) -> Result<f64, OracleError> {
    let pf = p as f64;
    if !(a > 0.0 && a < pf) {
        return Err(OracleError::InvalidPrior(format!("need 0 < a < p = {p}, got a = {a}")));
    }
    let de = DoubleExponential::new(1e-12, 12);
    let scale = quad_form / sigma_sq;
    let [integral] = de.half_line_log(
        scale,
        |g, ln_g| {
            let log_kernel = (0.5 * a - 1.0) * ln_g - 0.5 * pf * ((2.0 * PI * sigma_sq).ln() + ln_g);
            Ok([log_kernel - quad_form / (2.0 * sigma_sq * g)])
        },
        "g mixture",
    )?;
    let log_front = 0.5 * a * 2f64.ln() + 0.5 * pf * PI.ln() - ln_gamma(0.5 * (pf - a)) + 0.5 * a * sigma_sq.ln();
    Ok(log_front.exp() * integral)
}

/// Central-difference Laplacian of `||theta||^{-(p-a)}` with `p = theta.len()`.
pub fn laplacian_power_fd(theta: &[f64], a: f64, step: f64) -> f64 {
    let exponent = -(theta.len() as f64 - a);
    let value = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>().powf(0.5 * exponent);
    let centre = value(theta);
    let mut shifted = theta.to_vec();
    let mut total = 0.0;
    for j in 0..theta.len() {
        shifted[j] = theta[j] + step;
        let up = value(&shifted);
        shifted[j] = theta[j] - step;
        let down = value(&shifted);
        shifted[j] = theta[j];
        total += (up - 2.0 * centre + down) / (step * step);
    }
    total
}

/// `(p-a)(2-a) ||theta||^{-(p-a)-2}`.
pub fn laplacian_power_exact(theta: &[f64], a: f64) -> f64 {
    let pf = theta.len() as f64;
    let norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    (pf - a) * (2.0 - a) * norm.powf(-(pf - a) - 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_normalization_is_exact() {
        for n in [1, 4, 10] {
            let r = verify_normalization(&SamplingDensity::Gaussian, n);
            assert!(r.mass_residual.abs() < 1e-10, "{r:?}");
            assert!(r.second_moment_residual.abs() < 1e-10, "{r:?}");
            assert!(r.ratio_residual.abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn student_t_normalization() {
        for nu in [5.0, 9.0, 2.5] {
            let r = verify_normalization(&SamplingDensity::StudentT { nu }, 6);
            assert!(r.mass_residual.abs() < 1e-8, "{r:?}");
            assert!(r.second_moment_residual.abs() < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn misnormalized_user_density() {
        let n = 4;
        let gauss = move |s: f64| SamplingDensity::Gaussian.density(s, n);
        let doubled = SamplingDensity::user_radial_unchecked(n, move |s| 2.0 * gauss(s));
        let r = verify_normalization(&doubled, n);
        assert!((r.mass_residual - 1.0).abs() < 1e-10);
        assert!(SamplingDensity::user_radial(n, move |s| 2.0 * gauss(s)).is_err());
        assert!(SamplingDensity::user_radial(n, move |s| gauss(2.0 * s)).is_err());
        assert!(SamplingDensity::user_radial(n, gauss).is_ok());
    }

    #[test]
    fn g_mixture_reproduces_power() {
        for (q, sigma_sq, a, p) in [(2.5, 0.7, 2.0, 4), (0.03, 3.0, 1.0, 2), (40.0, 1.0, 2.5, 5)] {
            let lhs = f64::powf(q, -0.5 * (p as f64 - a));
            let rhs = g_mixture_integral(q, sigma_sq, a, p).unwrap();
            assert!(((rhs - lhs) / lhs).abs() < 1e-10, "{q} {sigma_sq} {a} {p}: {rhs} vs {lhs}");
        }
    }

    #[test]
    fn laplacian_signs() {
        let theta = [0.6, 0.0, 0.8, 0.0, 0.0];
        assert!(laplacian_power_fd(&theta, 2.0, 1e-3).abs() < 1e-4);
        let super_h = laplacian_power_fd(&theta, 3.0, 1e-3);
        assert!(super_h < 0.0);
        assert!((super_h - laplacian_power_exact(&theta, 3.0)).abs() < 1e-4);
    }
}
