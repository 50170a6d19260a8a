//! Double-exponential quadrature: tanh-sinh on finite intervals, exp-sinh on
//! half-lines, sinh-sinh on the real line.
//!
//! Every rule is a trapezoid sum in a variable `x` over `[-X_MAX, X_MAX]`.
//! The first pass at step `H0` locates where the integrand is negligible;
//! later passes halve the step inside that window until two successive
//! estimates agree. If the integrand is still significant at `±X_MAX` the
//! truncation is not trusted and the integral is reported as divergent.

use std::f64::consts::{FRAC_PI_2, PI};

use super::OracleError;

const X_MAX: f64 = 6.0;
const H0: f64 = 0.5;
const MIN_LEVEL: u32 = 2;
/// Terms below this fraction of the largest one are dropped from refinement.
const TRIM: f64 = 1e-16;
/// Largest acceptable term at the truncation edge, relative to the peak.
const EDGE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleExponential {
    pub tol: f64,
    pub max_level: u32,
}

impl Default for DoubleExponential {
    fn default() -> Self {
        Self { tol: 1e-10, max_level: 12 }
    }
}

impl DoubleExponential {
    pub fn new(tol: f64, max_level: u32) -> Self {
        Self { tol, max_level }
    }

    fn integrate_x<const K: usize, F>(&self, mut term: F, context: &str) -> Result<[f64; K], OracleError>
    where
        F: FnMut(f64) -> Result<[f64; K], OracleError>,
    {
        let coarse = (X_MAX / H0).round() as i64;
        let mut sum = [0.0; K];
        let mut magnitudes = Vec::with_capacity(2 * coarse as usize + 1);
        for k in -coarse..=coarse {
            let t = term(k as f64 * H0)?;
            if t.iter().any(|v| !v.is_finite()) {
                return Err(OracleError::NonFinite(context.to_string()));
            }
            for (s, v) in sum.iter_mut().zip(t) {
                *s += v;
            }
            magnitudes.push(t.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        let peak = magnitudes.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return Ok([0.0; K]);
        }
        if magnitudes[0] > EDGE * peak || magnitudes[magnitudes.len() - 1] > EDGE * peak {
            return Err(OracleError::QuadratureBudgetExceeded {
                context: format!("{context}: integrand not negligible at the truncation edge"),
                level: 0,
                change: f64::INFINITY,
            });
        }
        let first = magnitudes.iter().position(|&m| m > TRIM * peak).unwrap_or(0);
        let last = magnitudes.iter().rposition(|&m| m > TRIM * peak).unwrap_or(magnitudes.len() - 1);
        let lo = (first as i64 - coarse - 1) as f64 * H0;
        let hi = (last as i64 - coarse + 1) as f64 * H0;

        let mut previous = sum.map(|s| s * H0);
        let mut h = H0;
        let mut change = f64::INFINITY;
        for level in 1..=self.max_level {
            h *= 0.5;
            let m_lo = ((lo / h - 1.0) / 2.0).ceil() as i64;
            let m_hi = ((hi / h - 1.0) / 2.0).floor() as i64;
            for m in m_lo..=m_hi {
                let t = term((2 * m + 1) as f64 * h)?;
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(OracleError::NonFinite(context.to_string()));
                }
                for (s, v) in sum.iter_mut().zip(t) {
                    *s += v;
                }
            }
            let current = sum.map(|s| s * h);
            change = current
                .iter()
                .zip(&previous)
                .map(|(c, p)| if *c == 0.0 { (c - p).abs() } else { ((c - p) / c).abs() })
                .fold(0.0, f64::max);
            if level >= MIN_LEVEL && change <= self.tol {
                return Ok(current);
            }
            previous = current;
        }
        Err(OracleError::QuadratureBudgetExceeded { context: context.to_string(), level: self.max_level, change })
    }

    /// `∫₀¹ f(t) dt`; `f` receives `(t, 1 - t)`, both to full relative precision.
    pub fn unit<const K: usize, F>(&self, mut f: F, context: &str) -> Result<[f64; K], OracleError>
    where
        F: FnMut(f64, f64) -> Result<[f64; K], OracleError>,
    {
        self.integrate_x(
            |x| {
                let v = PI * x.sinh();
                let t = 1.0 / (1.0 + (-v).exp());
                let omt = 1.0 / (1.0 + v.exp());
                if t == 0.0 || omt == 0.0 {
                    return Ok([0.0; K]);
                }
                let w = PI * x.cosh() * t * omt;
                Ok(f(t, omt)?.map(|y| y * w))
            },
            context,
        )
    }

    /// `∫_a^b f(u) du` for finite `a < b`.
    pub fn interval<const K: usize, F>(&self, a: f64, b: f64, mut f: F, context: &str) -> Result<[f64; K], OracleError>
    where
        F: FnMut(f64) -> Result<[f64; K], OracleError>,
    {
        let width = b - a;
        let r = self.unit(|t, omt| f(if t < 0.5 { a + width * t } else { b - width * omt }), context)?;
        Ok(r.map(|v| v * width))
    }

    /// `∫₀^∞ f(s) ds`, with `scale` near the bulk of the integrand.
    pub fn half_line<const K: usize, F>(&self, scale: f64, mut f: F, context: &str) -> Result<[f64; K], OracleError>
    where
        F: FnMut(f64) -> Result<[f64; K], OracleError>,
    {
        self.integrate_x(
            |x| {
                let s = scale * (FRAC_PI_2 * x.sinh()).exp();
                if s == 0.0 || !s.is_finite() {
                    return Ok([0.0; K]);
                }
                let w = s * FRAC_PI_2 * x.cosh();
                Ok(f(s)?.map(|y| y * w))
            },
            context,
        )
    }

    /// `∫₀^∞ f(s) ds` for integrands evaluated in log form: `log_f(s, ln s)`
    /// returns `ln f(s)`, which keeps large powers of `s` from overflowing.
    pub fn half_line_log<const K: usize, F>(&self, scale: f64, mut log_f: F, context: &str) -> Result<[f64; K], OracleError>
    where
        F: FnMut(f64, f64) -> Result<[f64; K], OracleError>,
    {
        let ln_scale = scale.ln();
        self.integrate_x(
            |x| {
                let ln_s = ln_scale + FRAC_PI_2 * x.sinh();
                let ln_w = ln_s + (FRAC_PI_2 * x.cosh()).ln();
                Ok(log_f(ln_s.exp(), ln_s)?.map(|lf| {
                    let e = lf + ln_w;
                    if e == f64::NEG_INFINITY { 0.0 } else { e.exp() }
                }))
            },
            context,
        )
    }

    /// `∫ f(u) du` over the real line, with the bulk near `center` and width about `scale`.
    pub fn real_line<const K: usize, F>(&self, center: f64, scale: f64, mut f: F, context: &str) -> Result<[f64; K], OracleError>
    where
        F: FnMut(f64) -> Result<[f64; K], OracleError>,
    {
        self.integrate_x(
            |x| {
                let v = FRAC_PI_2 * x.sinh();
                let offset = scale * v.sinh();
                if !offset.is_finite() {
                    return Ok([0.0; K]);
                }
                let w = scale * v.cosh() * FRAC_PI_2 * x.cosh();
                Ok(f(center + offset)?.map(|y| y * w))
            },
            context,
        )
    }
}
