//! Sufficient statistics of the centered linear model.
//!
//! Every estimator in this crate depends on the data only through the
//! residual sum of squares, the centered total sum of squares and the
//! coefficient of determination. They are obtained from a Householder QR
//! factorization of the column-centered design; `X'X` is never inverted.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance on the diagonal of the triangular factor.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Relative tolerance for the column-centering check.
pub const CENTERING_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need n > p + 1 observations, got n = {n}, p = {p}")]
    TooFewObservations { n: usize, p: usize },
    #[error("design has {rows} rows but response has {n} entries")]
    ShapeMismatch { n: usize, rows: usize },
    #[error("design column {column} is not centered (sum = {sum:e})")]
    NotCentered { column: usize, sum: f64 },
    #[error("design is rank deficient: numerical rank {rank} < p = {p}")]
    RankDeficient { rank: usize, p: usize },
    #[error("degenerate response: total sum of squares is zero")]
    DegenerateResponse,
    #[error("non-finite value in data")]
    NonFinite,
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid sufficient statistics: {0}")]
    InvalidStats(String),
    #[error("csv: {0}")]
    Csv(String),
}

/// Response and column-centered design.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl RegressionData {
    /// Wraps an already centered design. Fails if any column has a nonzero sum.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self, StatsError> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(StatsError::ShapeMismatch { n: y.len(), rows: n });
        }
        if n <= p + 1 {
            return Err(StatsError::TooFewObservations { n, p });
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        for (j, col) in x.column_iter().enumerate() {
            let sum: f64 = col.iter().sum();
            let scale = col.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
            if sum.abs() > CENTERING_TOLERANCE * n as f64 * scale {
                return Err(StatsError::NotCentered { column: j, sum });
            }
        }
        Ok(Self { y, x })
    }

    /// Centers the raw design columns first.
    pub fn from_raw(y: DVector<f64>, x_raw: DMatrix<f64>) -> Result<Self, StatsError> {
        Self::new(y, center_design(&x_raw))
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Reads `y, x_1, ..., x_p` rows. A leading header row is skipped when
    /// its first field is not numeric. The design is centered on load.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| StatsError::Csv(e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(row) => rows.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(StatsError::Csv(format!("line {}: {e}", i + 1))),
            }
        }
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if width < 2 {
            return Err(StatsError::Csv("need a response column and at least one predictor".into()));
        }
        let n = rows.len();
        let y = DVector::from_iterator(n, rows.iter().map(|r| r[0]));
        let x = DMatrix::from_fn(n, width - 1, |i, j| rows[i][j + 1]);
        Self::from_raw(y, x)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, StatsError> {
        let file = std::fs::File::open(path)
            .map_err(|e| StatsError::Csv(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }
}

/// `(n, p, RSS, ||y - ybar 1||^2, R^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub n: usize,
    pub p: usize,
    pub rss: f64,
    pub total_ss: f64,
    pub r_squared: f64,
}

impl SufficientStats {
    /// Builds statistics from `rss` and `total_ss`, with `R^2 = 1 - rss/total_ss`.
    pub fn new(n: usize, p: usize, rss: f64, total_ss: f64) -> Result<Self, StatsError> {
        if !(total_ss > 0.0) {
            return Err(StatsError::DegenerateResponse);
        }
        let r_squared = (1.0 - rss / total_ss).clamp(0.0, 1.0);
        Self::with_r_squared(n, p, rss, total_ss, r_squared)
    }

    /// Builds statistics when `R^2` is available more accurately than
    /// `1 - rss/total_ss` (for example as `fitted/total`).
    pub fn with_r_squared(
        n: usize,
        p: usize,
        rss: f64,
        total_ss: f64,
        r_squared: f64,
    ) -> Result<Self, StatsError> {
        if n <= p + 1 {
            return Err(StatsError::TooFewObservations { n, p });
        }
        if !(rss.is_finite() && total_ss.is_finite() && r_squared.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        if total_ss <= 0.0 {
            return Err(StatsError::DegenerateResponse);
        }
        if rss < 0.0 || rss > total_ss * (1.0 + 1e-12) {
            return Err(StatsError::InvalidStats(format!(
                "need 0 <= rss <= total_ss, got rss = {rss}, total_ss = {total_ss}"
            )));
        }
        if !(0.0..=1.0).contains(&r_squared) {
            return Err(StatsError::InvalidStats(format!("R^2 = {r_squared} outside [0, 1]")));
        }
        Ok(Self { n, p, rss: rss.min(total_ss), total_ss, r_squared })
    }

    /// Residual degrees of freedom `n - p - 1`.
    pub fn residual_df(&self) -> f64 {
        (self.n - self.p - 1) as f64
    }

    /// The same statistics for `c*y + d*1`.
    pub fn rescaled(&self, c_sq: f64) -> Self {
        Self { rss: self.rss * c_sq, total_ss: self.total_ss * c_sq, ..*self }
    }
}

/// `xi = beta' X'X beta / sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NoncentralityPoint {
    pub xi: f64,
}

/// Subtracts each column's mean.
pub fn center_design(x_raw: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = x_raw.clone();
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    x
}

/// Fitted and residual sums of squares of the centered response on the
/// centered design.
pub fn compute_stats(data: &RegressionData) -> Result<SufficientStats, StatsError> {
    let n = data.n();
    let p = data.p();
    let mean = data.y.mean();
    let v = data.y.add_scalar(-mean);
    let total_ss = v.norm_squared();
    if total_ss == 0.0 {
        return Err(StatsError::DegenerateResponse);
    }

    let qr = data.x.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let rank = r
        .diagonal()
        .iter()
        .filter(|d| d.abs() > RANK_TOLERANCE * diag_max)
        .count();
    if diag_max == 0.0 || rank < p {
        return Err(StatsError::RankDeficient { rank: if diag_max == 0.0 { 0 } else { rank }, p });
    }

    let q = qr.q();
    let coords = q.tr_mul(&v);
    let fitted = &q * &coords;
    let residual = &v - fitted;
    let rss = residual.norm_squared();
    let fitted_ss = coords.norm_squared();
    let r_squared = (fitted_ss / total_ss).clamp(0.0, 1.0);
    SufficientStats::with_r_squared(n, p, rss.min(total_ss), total_ss, r_squared)
}

/// `||X beta||^2 / sigma^2`.
pub fn noncentrality(
    beta: &DVector<f64>,
    x: &DMatrix<f64>,
    sigma_sq: f64,
) -> Result<NoncentralityPoint, StatsError> {
    if !(sigma_sq > 0.0) {
        return Err(StatsError::NonPositiveVariance(sigma_sq));
    }
    Ok(NoncentralityPoint { xi: (x * beta).norm_squared() / sigma_sq })
}
