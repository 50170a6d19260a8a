//! Monte Carlo risk under Stein's loss, with paired (common random number)
//! comparisons between estimators.
//!
//! Replicates are grouped into fixed blocks by index. Each block is
//! accumulated sequentially and the block moments are merged in a tree fixed
//! by block index, so results do not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimators::{stein_loss, Estimator, EstimatorError, EstimatorSpec};
use crate::moments::{merge_tree, Moments};
use crate::rng::{derive_seed, Stream};
use crate::sampling::{check_design, sample_data_full, sample_stats_direct, MixingLaw, SamplingError, SimConfig};
use crate::stats::{compute_stats, StatsError};

pub const DEFAULT_XI_GRID: [f64; 6] = [0.0, 1.0, 4.0, 16.0, 64.0, 256.0];

/// Verdict threshold in standard errors.
pub const SIGMA_THRESHOLD: f64 = 3.0;

/// Replicates per block; part of the reproducibility contract.
pub const BLOCK_SIZE: usize = 1024;

/// Grid of R^2 values on which a challenger's shrinkage factor must be
/// nondecreasing for a certified comparison.
pub const MONOTONE_CHECK_POINTS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("estimator {0} is not of the form phi(R^2) RSS/(n-p-1); a certified run needs one")]
    ChallengerNotPhiForm(String),
    #[error("shrinkage factor of {estimator} decreases near R^2 = {r_squared}")]
    PhiNotMonotone { estimator: String, r_squared: f64 },
    #[error("configs must share n, p and mixing law: {0}")]
    InconsistentConfigs(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskPoint {
    pub xi: f64,
    pub risk: f64,
    pub std_err: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskCurve {
    pub estimator: EstimatorSpec,
    pub mixing: MixingLaw,
    pub n: usize,
    pub p: usize,
    pub points: Vec<RiskPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    DominatesWithinMC,
    Inconclusive,
    ViolationDetected,
}

/// Paired difference `risk(baseline) - risk(challenger)` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedPoint {
    pub xi: f64,
    pub delta: f64,
    pub std_err: f64,
    /// Standard error the difference would have with independent runs.
    pub unpaired_std_err: f64,
    pub baseline_risk: f64,
    pub baseline_std_err: f64,
    pub challenger_risk: f64,
    pub challenger_std_err: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceReport {
    pub baseline: EstimatorSpec,
    pub challenger: EstimatorSpec,
    pub n: usize,
    pub p: usize,
    pub mixing: MixingLaw,
    pub sigma_threshold: f64,
    pub certified: bool,
    pub points: Vec<PairedPoint>,
    pub verdict: Verdict,
}

impl Verdict {
    pub fn from_points(points: &[PairedPoint]) -> Verdict {
        if points.iter().any(|pt| pt.delta < -SIGMA_THRESHOLD * pt.std_err) {
            Verdict::ViolationDetected
        } else if points.iter().any(|pt| pt.delta > SIGMA_THRESHOLD * pt.std_err) {
            Verdict::DominatesWithinMC
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Seed for the grid point at `xi`; depends on the value, not its position.
pub fn point_seed(seed: u64, xi: f64) -> u64 {
    derive_seed(seed, xi.to_bits())
}

/// Configs for a grid at unit variance, one derived seed per point.
pub fn grid_configs(
    n: usize,
    p: usize,
    mixing: MixingLaw,
    xi_grid: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<Vec<SimConfig>, HarnessError> {
    let mut grid: Vec<f64> = xi_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.into_iter()
        .map(|xi| Ok(SimConfig::new(n, p, xi, 1.0, mixing, point_seed(seed, xi), replicates)?))
        .collect()
}

fn run_blocks<const K: usize, F>(replicates: usize, seed: u64, draw: F) -> Result<[Moments; K], HarnessError>
where
    F: Fn(&mut Stream) -> Result<[f64; K], HarnessError> + Sync,
{
    let blocks = replicates.div_ceil(BLOCK_SIZE);
    let partials: Vec<[Moments; K]> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut acc = [Moments::default(); K];
            let end = ((block + 1) * BLOCK_SIZE).min(replicates);
            for rep in block * BLOCK_SIZE..end {
                let mut rng = Stream::for_replicate(seed, rep as u64);
                for (m, x) in acc.iter_mut().zip(draw(&mut rng)?) {
                    m.push(x);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(std::array::from_fn(|k| {
        let column: Vec<Moments> = partials.iter().map(|acc| acc[k]).collect();
        merge_tree(&column)
    }))
}

fn risk_point(xi: f64, m: &Moments) -> RiskPoint {
    RiskPoint { xi, risk: m.mean, std_err: m.std_err(), replicates: m.count as usize }
}

/// Mean and standard error of Stein's loss over `config.replicates` draws
/// of the sufficient statistics.
pub fn estimate_risk(spec: &EstimatorSpec, config: &SimConfig) -> Result<RiskPoint, HarnessError> {
    config.validate()?;
    let estimator = Estimator::new(spec.clone(), config.n, config.p)?;
    let [loss] = run_blocks(config.replicates, config.seed, |rng| {
        let stats = sample_stats_direct(config, rng);
        Ok([stein_loss(estimator.value(&stats)?, config.sigma_sq)?])
    })?;
    Ok(risk_point(config.xi, &loss))
}

/// As [`estimate_risk`], but simulating full response vectors for a fixed
/// centered design and computing the statistics by least squares.
pub fn estimate_risk_full(
    spec: &EstimatorSpec,
    config: &SimConfig,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    alpha: f64,
) -> Result<RiskPoint, HarnessError> {
    config.validate()?;
    check_design(config, x, beta)?;
    let estimator = Estimator::new(spec.clone(), config.n, config.p)?;
    let [loss] = run_blocks(config.replicates, config.seed, |rng| {
        let data = sample_data_full(config, x, beta, alpha, rng)?;
        let stats = compute_stats(&data)?;
        Ok([stein_loss(estimator.value(&stats)?, config.sigma_sq)?])
    })?;
    Ok(risk_point(config.xi, &loss))
}

/// Risk curve at unit variance over `xi_grid` (sorted, duplicates removed).
pub fn risk_grid(
    spec: &EstimatorSpec,
    mixing: MixingLaw,
    n: usize,
    p: usize,
    xi_grid: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<RiskCurve, HarnessError> {
    let configs = grid_configs(n, p, mixing, xi_grid, replicates, seed)?;
    Estimator::new(spec.clone(), n, p)?;
    let points = configs.iter().map(|c| estimate_risk(spec, c)).collect::<Result<_, _>>()?;
    Ok(RiskCurve { estimator: spec.clone(), mixing, n, p, points })
}

/// Rejects challengers outside the hypotheses of the dominance theorem for
/// shrinkage-form estimators: not of shrinkage form, or `phi` decreasing.
pub fn certify_challenger(spec: &EstimatorSpec, n: usize, p: usize) -> Result<(), HarnessError> {
    if !spec.is_phi_form() {
        return Err(HarnessError::ChallengerNotPhiForm(spec.to_string()));
    }
    let estimator = Estimator::new(spec.clone(), n, p)?;
    if let Some(r_squared) = estimator.first_monotonicity_violation(MONOTONE_CHECK_POINTS, 1e-12)? {
        return Err(HarnessError::PhiNotMonotone { estimator: spec.to_string(), r_squared });
    }
    Ok(())
}

/// Paired comparison using the same draws for both estimators at each
/// replicate. `certified` additionally requires the challenger to satisfy
/// the monotone-shrinkage hypothesis before any simulation is run.
pub fn compare_paired(
    baseline: &EstimatorSpec,
    challenger: &EstimatorSpec,
    configs: &[SimConfig],
    certified: bool,
) -> Result<DominanceReport, HarnessError> {
    let Some(first) = configs.first() else {
        return Err(HarnessError::InconsistentConfigs("no configurations given".into()));
    };
    if let Some(c) = configs.iter().find(|c| (c.n, c.p, c.mixing) != (first.n, first.p, first.mixing)) {
        return Err(HarnessError::InconsistentConfigs(format!(
            "(n={}, p={}, {}) vs (n={}, p={}, {})",
            first.n, first.p, first.mixing, c.n, c.p, c.mixing
        )));
    }
    if certified {
        certify_challenger(challenger, first.n, first.p)?;
    }
    let base = Estimator::new(baseline.clone(), first.n, first.p)?;
    let chal = Estimator::new(challenger.clone(), first.n, first.p)?;

    let mut points = Vec::with_capacity(configs.len());
    for config in configs {
        config.validate()?;
        let [lb, lc, diff] = run_blocks(config.replicates, config.seed, |rng| {
            let stats = sample_stats_direct(config, rng);
            let lb = stein_loss(base.value(&stats)?, config.sigma_sq)?;
            let lc = stein_loss(chal.value(&stats)?, config.sigma_sq)?;
            Ok([lb, lc, lb - lc])
        })?;
        let (se_b, se_c) = (lb.std_err(), lc.std_err());
        points.push(PairedPoint {
            xi: config.xi,
            delta: diff.mean,
            std_err: diff.std_err(),
            unpaired_std_err: se_b.hypot(se_c),
            baseline_risk: lb.mean,
            baseline_std_err: se_b,
            challenger_risk: lc.mean,
            challenger_std_err: se_c,
            replicates: config.replicates,
        });
    }
    points.sort_by(|a, b| a.xi.total_cmp(&b.xi));
    Ok(DominanceReport {
        baseline: baseline.clone(),
        challenger: challenger.clone(),
        n: first.n,
        p: first.p,
        mixing: first.mixing,
        sigma_threshold: SIGMA_THRESHOLD,
        certified,
        verdict: Verdict::from_points(&points),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(xi: f64, reps: usize, seed: u64) -> SimConfig {
        SimConfig::new(10, 4, xi, 1.0, MixingLaw::PointMass, seed, reps).unwrap()
    }

    #[test]
    fn self_comparison_is_exactly_zero() {
        let configs = grid_configs(10, 4, MixingLaw::PointMass, &[0.0, 4.0], 3000, 1).unwrap();
        let report = compare_paired(&EstimatorSpec::Unbiased, &EstimatorSpec::Unbiased, &configs, false).unwrap();
        for pt in &report.points {
            assert_eq!(pt.delta, 0.0);
            assert_eq!(pt.std_err, 0.0);
        }
        assert_eq!(report.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn empty_grid_gives_empty_curve() {
        let curve = risk_grid(&EstimatorSpec::Unbiased, MixingLaw::PointMass, 10, 4, &[], 10, 3).unwrap();
        assert!(curve.points.is_empty());
    }

    #[test]
    fn grid_point_matches_standalone_call() {
        let curve = risk_grid(&EstimatorSpec::harmonic(), MixingLaw::PointMass, 10, 4, &[4.0, 0.0], 2500, 11).unwrap();
        assert_eq!(curve.points[0].xi, 0.0);
        let standalone = estimate_risk(&EstimatorSpec::harmonic(), &gaussian(4.0, 2500, point_seed(11, 4.0))).unwrap();
        assert_eq!(curve.points[1], standalone);
    }

    #[test]
    fn result_independent_of_thread_count() {
        let config = gaussian(1.0, 5000, 77);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_risk(&EstimatorSpec::BrewsterZidek, &config).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one.replicates, 5000);
    }

    #[test]
    fn certified_run_rejects_bad_challengers() {
        let configs = grid_configs(10, 4, MixingLaw::PointMass, &[0.0], 10, 1).unwrap();
        let general = EstimatorSpec::general("total", |s| s.total_ss / 9.0);
        assert!(matches!(
            compare_paired(&EstimatorSpec::Unbiased, &general, &configs, true),
            Err(HarnessError::ChallengerNotPhiForm(_))
        ));
        let decreasing = EstimatorSpec::custom_phi("decreasing", |r2, _, _| 1.0 - 0.3 * r2);
        assert!(matches!(
            compare_paired(&EstimatorSpec::Unbiased, &decreasing, &configs, true),
            Err(HarnessError::PhiNotMonotone { .. })
        ));
        assert!(compare_paired(&EstimatorSpec::Unbiased, &decreasing, &configs, false).is_ok());
        assert!(compare_paired(&EstimatorSpec::Unbiased, &EstimatorSpec::harmonic(), &configs, true).is_ok());
    }

    #[test]
    fn verdict_rule() {
        let pt = |delta: f64, std_err: f64| PairedPoint {
            xi: 0.0,
            delta,
            std_err,
            unpaired_std_err: 1.0,
            baseline_risk: 0.0,
            baseline_std_err: 0.0,
            challenger_risk: 0.0,
            challenger_std_err: 0.0,
            replicates: 1,
        };
        assert_eq!(Verdict::from_points(&[pt(0.5, 0.1), pt(-0.29, 0.1)]), Verdict::DominatesWithinMC);
        assert_eq!(Verdict::from_points(&[pt(0.5, 0.1), pt(-0.31, 0.1)]), Verdict::ViolationDetected);
        assert_eq!(Verdict::from_points(&[pt(0.2, 0.1)]), Verdict::Inconclusive);
    }

    #[test]
    fn mixed_configs_rejected() {
        let a = gaussian(0.0, 10, 1);
        let b = SimConfig { p: 3, ..a.clone() };
        assert!(matches!(
            compare_paired(&EstimatorSpec::Unbiased, &EstimatorSpec::harmonic(), &[a, b], false),
            Err(HarnessError::InconsistentConfigs(_))
        ));
    }
}
