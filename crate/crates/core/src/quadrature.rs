//! Beta-type integrals `I(b, c, m, z) = ∫₀¹ t^{b-1} (1-t)^{c-1} (1-zt)^m dt`.
//!
//! The endpoint factors `t^{b-1}(1-t)^{c-1}` are absorbed into the weight of a
//! Gauss–Jacobi rule on `[0, 1]`, so exponents in `(-1, 0)` cost nothing
//! extra. Rules are generated by the Golub–Welsch method: the Jacobi matrix of
//! the shifted Jacobi polynomials is diagonalized with implicit-shift QL
//! sweeps that only track the first row of the eigenvector matrix, which is
//! all the weights need. Rules are cached per `(b, c, nodes)`.
//!
//! At `z = 1` the two `(1-t)` factors merge and `I = B(b, c+m)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Smallest rule used by the adaptive driver.
pub const MIN_LEVEL: u32 = 3;
/// `2^14` nodes is the largest rule tried before giving up.
pub const MAX_LEVEL: u32 = 14;
/// Successive rules must agree to this relative tolerance.
pub const AGREEMENT_TOL: f64 = 1e-13;
/// Above `1 - NEAR_ONE` the endpoint expansion replaces quadrature.
pub const NEAR_ONE: f64 = 1e-8;

const SERIES_MAX_TERMS: usize = 1_000_000;
const SERIES_REL_TOL: f64 = 1e-16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("integral not defined: {0}")]
    NotIntegrable(String),
    #[error("quadrature did not converge with {nodes} nodes (last change {change:e})")]
    NoConvergence { nodes: usize, change: f64 },
    #[error("hypergeometric series did not converge in {terms} terms")]
    SeriesDiverged { terms: usize },
    #[error("QL iteration failed to converge for a rule with {0} nodes")]
    EigenFailure(usize),
}

/// Exponents and argument of a beta-type integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaIntegralSpec {
    pub b: f64,
    pub c: f64,
    pub m: f64,
    pub z: f64,
}

impl BetaIntegralSpec {
    pub fn new(b: f64, c: f64, m: f64, z: f64) -> Self {
        Self { b, c, m, z }
    }

    fn validate(&self) -> Result<(), QuadratureError> {
        let Self { b, c, m, z } = *self;
        if !(b > 0.0 && c > 0.0 && b.is_finite() && c.is_finite()) {
            return Err(QuadratureError::NotIntegrable(format!(
                "need b > 0 and c > 0, got b = {b}, c = {c}"
            )));
        }
        if !m.is_finite() {
            return Err(QuadratureError::NotIntegrable(format!("m = {m} is not finite")));
        }
        if !(0.0..=1.0).contains(&z) {
            return Err(QuadratureError::NotIntegrable(format!("z = {z} outside [0, 1]")));
        }
        if z == 1.0 && c + m <= 0.0 {
            return Err(QuadratureError::NotIntegrable(format!(
                "at z = 1 need c + m > 0, got c + m = {}",
                c + m
            )));
        }
        Ok(())
    }
}

/// How a value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Evaluation {
    /// Closed form (`m = 0` or `z = 0`).
    Exact,
    /// Gauss–Jacobi rule with the given number of nodes.
    Quadrature { nodes: usize },
    /// `z = 1` identity.
    EndpointIdentity,
    /// `z > 1 - NEAR_ONE`: endpoint identity plus first-order correction.
    NearEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaIntegral {
    pub value: f64,
    pub evaluation: Evaluation,
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn beta_fn(a: f64, b: f64) -> f64 {
    ln_beta(a, b).exp()
}

/// Nodes and weights on `[0, 1]` for the weight `t^{b-1}(1-t)^{c-1}`.
/// Weights sum to `B(b, c)`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Golub–Welsch construction of the `count`-point Gauss–Jacobi rule.
pub fn gauss_jacobi_rule(b: f64, c: f64, count: usize) -> Result<GaussRule, QuadratureError> {
    if !(b > 0.0 && c > 0.0) {
        return Err(QuadratureError::NotIntegrable(format!("b = {b}, c = {c}")));
    }
    if count == 0 {
        return Ok(GaussRule { nodes: vec![], weights: vec![] });
    }
    // Jacobi polynomials on [-1, 1] with weight (1-x)^alpha (1+x)^beta,
    // t = (1+x)/2 so beta sits at t = 0.
    let alpha = c - 1.0;
    let beta = b - 1.0;
    let ab = alpha + beta;
    let mut diag = vec![0.0; count];
    let mut off = vec![0.0; count];
    for (k, d) in diag.iter_mut().enumerate() {
        let a_k = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            let kk = 2.0 * k as f64 + ab;
            (beta * beta - alpha * alpha) / (kk * (kk + 2.0))
        };
        *d = 0.5 * (1.0 + a_k);
    }
    for k in 1..count {
        let kf = k as f64;
        let e_sq = if k == 1 {
            4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab).powi(2) * (3.0 + ab))
        } else {
            let kk = 2.0 * kf + ab;
            4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab) / (kk * kk * (kk + 1.0) * (kk - 1.0))
        };
        off[k - 1] = 0.5 * e_sq.sqrt();
    }
    let mut first_row = vec![0.0; count];
    first_row[0] = 1.0;
    tridiagonal_ql(&mut diag, &mut off, &mut first_row)?;

    let mass = beta_fn(b, c);
    let mut pairs: Vec<(f64, f64)> = diag
        .into_iter()
        .zip(first_row)
        .map(|(t, v)| (t.clamp(0.0, 1.0), mass * v * v))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (nodes, weights) = pairs.into_iter().unzip();
    Ok(GaussRule { nodes, weights })
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `off[i]` couples rows
/// `i` and `i+1`. On return `diag` holds the eigenvalues and `first_row` the
/// first components of the matching normalized eigenvectors.
fn tridiagonal_ql(
    diag: &mut [f64],
    off: &mut [f64],
    first_row: &mut [f64],
) -> Result<(), QuadratureError> {
    let n = diag.len();
    if n > 0 {
        off[n - 1] = 0.0;
    }
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(QuadratureError::EigenFailure(n));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let bb = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * bb;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - bb;
                let z = first_row[i + 1];
                first_row[i + 1] = s * first_row[i] + c * z;
                first_row[i] = c * first_row[i] - s * z;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Lazily built rules of sizes `2^MIN_LEVEL ..= 2^MAX_LEVEL` for one `(b, c)`.
#[derive(Debug)]
pub struct JacobiFamily {
    b: f64,
    c: f64,
    levels: Vec<OnceLock<Arc<GaussRule>>>,
}

impl JacobiFamily {
    fn new(b: f64, c: f64) -> Self {
        let levels = (MIN_LEVEL..=MAX_LEVEL).map(|_| OnceLock::new()).collect();
        Self { b, c, levels }
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn rule(&self, level: u32) -> Result<Arc<GaussRule>, QuadratureError> {
        let slot = &self.levels[(level - MIN_LEVEL) as usize];
        if let Some(rule) = slot.get() {
            return Ok(rule.clone());
        }
        let rule = Arc::new(gauss_jacobi_rule(self.b, self.c, 1 << level)?);
        Ok(slot.get_or_init(|| rule).clone())
    }

    fn apply<const K: usize>(&self, level: u32, mut f: impl FnMut(f64, f64) -> [f64; K]) -> Result<[f64; K], QuadratureError> {
        let rule = self.rule(level)?;
        let mut acc = [0.0; K];
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = f(s, w);
            for k in 0..K {
                acc[k] += v[k];
            }
        }
        Ok(acc)
    }
}

type FamilyCache = Mutex<HashMap<(u64, u64), Arc<JacobiFamily>>>;

/// Shared rule family for `(b, c)`; built once and reused across threads.
pub fn jacobi_family(b: f64, c: f64) -> Arc<JacobiFamily> {
    static CACHE: OnceLock<FamilyCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry((b.to_bits(), c.to_bits()))
        .or_insert_with(|| Arc::new(JacobiFamily::new(b, c)))
        .clone()
}

/// Starting level so that the first rule already resolves the pole of
/// `(1 - zt)^m` at `t = 1/z`.
fn start_level_for(z: f64) -> u32 {
    if z < 0.5 {
        return MIN_LEVEL;
    }
    // Bernstein ellipse through the pole at x = 2/z - 1 in [-1, 1] coordinates.
    let s = 2.0 / z - 1.0;
    let rho = s + ((s - 1.0) * (s + 1.0)).sqrt();
    let needed = 15.0 / rho.ln();
    if !needed.is_finite() {
        return MAX_LEVEL;
    }
    (needed.max(1.0).log2().ceil() as u32).clamp(MIN_LEVEL, MAX_LEVEL)
}

/// A single rule on `[0, 1]` stops being economical past this level; the
/// graded composite takes over.
const GRADED_FROM_LEVEL: u32 = 8;
/// Per-piece starting level of the graded composite.
const GRADED_START_LEVEL: u32 = 4;

fn pow_or_one(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        x.powf(e)
    }
}

/// Integrates `t^{b-1} (1-t)^{c-1} g(t, 1-t)` over `[0, 1]` for integrands
/// whose only other singularity is a pole of `g` just beyond `t = 1`.
///
/// Far from `t = 1` a single Gauss–Jacobi rule with weight
/// `t^{b-1}(1-t)^{c-1}` is used. When the pole sits within a few `1e-3` of
/// the endpoint, `[0, 1]` is split at `1 - 2^{-j}` down to the pole distance:
/// the first piece keeps the `t^{b-1}` weight, the last keeps `(1-t)^{c-1}`,
/// and the pieces in between are smooth and use Gauss–Legendre. Either way
/// the rule size doubles until two successive sums agree.
#[derive(Debug, Clone)]
pub struct BetaIntegrator {
    b: f64,
    c: f64,
    full: Arc<JacobiFamily>,
    left: Arc<JacobiFamily>,
    middle: Arc<JacobiFamily>,
    right: Arc<JacobiFamily>,
}

impl BetaIntegrator {
    pub fn new(b: f64, c: f64) -> Result<Self, QuadratureError> {
        BetaIntegralSpec::new(b, c, 0.0, 0.0).validate()?;
        Ok(Self {
            b,
            c,
            full: jacobi_family(b, c),
            left: jacobi_family(b, 1.0),
            middle: jacobi_family(1.0, 1.0),
            right: jacobi_family(c, 1.0),
        })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    /// `I(b, c, m, z)`.
    pub fn integral(&self, m: f64, z: f64) -> Result<BetaIntegral, QuadratureError> {
        let (b, c) = (self.b, self.c);
        BetaIntegralSpec::new(b, c, m, z).validate()?;
        if m == 0.0 || z == 0.0 {
            return Ok(BetaIntegral { value: beta_fn(b, c), evaluation: Evaluation::Exact });
        }
        if z == 1.0 {
            return Ok(BetaIntegral { value: beta_fn(b, c + m), evaluation: Evaluation::EndpointIdentity });
        }
        if z > 1.0 - NEAR_ONE && c + m > 0.0 {
            return Ok(BetaIntegral { value: near_endpoint(b, c, m, z), evaluation: Evaluation::NearEndpoint });
        }
        let one_minus_z = 1.0 - z;
        let ([value], nodes) = self.integrate(z, |_, u| [(one_minus_z + z * u).powf(m)])?;
        Ok(BetaIntegral { value, evaluation: Evaluation::Quadrature { nodes } })
    }

    /// `(I(b, c, m, z), I(b, c, m + 1, z))` from one set of integrand
    /// evaluations.
    pub fn integral_pair(&self, m: f64, z: f64) -> Result<(f64, f64), QuadratureError> {
        let (b, c) = (self.b, self.c);
        BetaIntegralSpec::new(b, c, m, z).validate()?;
        BetaIntegralSpec::new(b, c, m + 1.0, z).validate()?;
        if z == 0.0 {
            let v = beta_fn(b, c);
            return Ok((v, v));
        }
        if z == 1.0 {
            return Ok((beta_fn(b, c + m), beta_fn(b, c + m + 1.0)));
        }
        if z > 1.0 - NEAR_ONE && c + m > 0.0 {
            return Ok((near_endpoint(b, c, m, z), near_endpoint(b, c, m + 1.0, z)));
        }
        let one_minus_z = 1.0 - z;
        let ([lo, hi], _) = self.integrate(z, |_, u| {
            let base = one_minus_z + z * u;
            let w = base.powf(m);
            [w, w * base]
        })?;
        Ok((lo, hi))
    }

    /// Adaptive driver; `g` receives `(t, 1 - t)`.
    pub fn integrate<const K: usize>(
        &self,
        z: f64,
        g: impl Fn(f64, f64) -> [f64; K],
    ) -> Result<([f64; K], usize), QuadratureError> {
        let wanted = start_level_for(z);
        let graded = wanted >= GRADED_FROM_LEVEL;
        let (start, pieces) = if graded {
            let eps = (1.0 - z) / z;
            // smallest J with 2^{-1-J} <= eps
            let j = (0.5 / eps).log2().ceil().max(0.0) as u32;
            (GRADED_START_LEVEL, j)
        } else {
            (wanted.min(MAX_LEVEL - 1), 0)
        };
        let eval = |level: u32| -> Result<([f64; K], usize), QuadratureError> {
            if graded {
                self.graded_sum(level, pieces, &g)
            } else {
                Ok((self.full.apply(level, |t, w| {
                    let v = g(t, 1.0 - t);
                    v.map(|x| w * x)
                })?, 1 << level))
            }
        };
        let (mut prev, _) = eval(start)?;
        let mut change = f64::INFINITY;
        let mut used = 0;
        for level in start + 1..=MAX_LEVEL {
            let (cur, nodes) = eval(level)?;
            used = nodes;
            change = (0..K)
                .map(|k| (cur[k] - prev[k]).abs() / cur[k].abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            if change <= AGREEMENT_TOL {
                return Ok((cur, nodes));
            }
            prev = cur;
        }
        Err(QuadratureError::NoConvergence { nodes: used, change })
    }

    fn graded_sum<const K: usize>(
        &self,
        level: u32,
        pieces: u32,
        g: &impl Fn(f64, f64) -> [f64; K],
    ) -> Result<([f64; K], usize), QuadratureError> {
        let (b, c) = (self.b, self.c);
        let mut total = [0.0; K];
        let mut add = |v: [f64; K]| {
            for k in 0..K {
                total[k] += v[k];
            }
        };
        // [0, 1/2]: t = s/2 with weight s^{b-1}
        let left_scale = 0.5_f64.powf(b);
        add(self.left.apply(level, |s, w| {
            let t = 0.5 * s;
            let u = 1.0 - t;
            let f = left_scale * w * pow_or_one(u, c - 1.0);
            g(t, u).map(|x| f * x)
        })?);
        // [1 - 2^-j, 1 - 2^-(j+1)] for j = 1..=pieces, in u = 1 - t
        for j in 1..=pieces {
            let hi = 0.5_f64.powi(j as i32);
            let lo = 0.5 * hi;
            let width = hi - lo;
            add(self.middle.apply(level, |s, w| {
                let u = lo + width * s;
                let t = 1.0 - u;
                let f = width * w * pow_or_one(t, b - 1.0) * pow_or_one(u, c - 1.0);
                g(t, u).map(|x| f * x)
            })?);
        }
        // [1 - kappa, 1]: u = kappa s with weight s^{c-1}
        let kappa = 0.5_f64.powi(pieces as i32 + 1);
        let right_scale = kappa.powf(c);
        add(self.right.apply(level, |s, w| {
            let u = kappa * s;
            let t = 1.0 - u;
            let f = right_scale * w * pow_or_one(t, b - 1.0);
            g(t, u).map(|x| f * x)
        })?);
        Ok((total, (pieces as usize + 2) << level))
    }
}

/// `B(b, c + m)` plus, when the derivative at `z = 1` is finite, the linear
/// term `(1 - z) m B(b + 1, c + m - 1)`.
fn near_endpoint(b: f64, c: f64, m: f64, z: f64) -> f64 {
    let base = beta_fn(b, c + m);
    if c + m > 1.0 {
        base + (1.0 - z) * m * beta_fn(b + 1.0, c + m - 1.0)
    } else {
        base
    }
}

/// Evaluates `I(b, c, m, z)` by Gauss–Jacobi quadrature with adaptive
/// doubling, or by the closed forms at `m = 0`, `z = 0` and `z` near one.
pub fn beta_integral(spec: BetaIntegralSpec) -> Result<BetaIntegral, QuadratureError> {
    spec.validate()?;
    BetaIntegrator::new(spec.b, spec.c)?.integral(spec.m, spec.z)
}

/// Independent evaluation through the Euler integral:
/// `I = B(b, c) · ₂F₁(-m, b; b + c; z)`, summing the series term by term.
pub fn beta_integral_series(spec: BetaIntegralSpec) -> Result<f64, QuadratureError> {
    spec.validate()?;
    let BetaIntegralSpec { b, c, m, z } = spec;
    if z >= 1.0 {
        return Err(QuadratureError::NotIntegrable("series needs z < 1".into()));
    }
    let (a1, b1, c1) = (-m, b, b + c);
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 0..SERIES_MAX_TERMS {
        let kf = k as f64;
        term *= (a1 + kf) * (b1 + kf) / ((c1 + kf) * (kf + 1.0)) * z;
        sum += term;
        if term == 0.0 || term.abs() < SERIES_REL_TOL * sum.abs() {
            return Ok(beta_fn(b, c) * sum);
        }
    }
    Err(QuadratureError::SeriesDiverged { terms: SERIES_MAX_TERMS })
}
