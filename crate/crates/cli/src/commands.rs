use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use steinvar::estimators::{phi_gb, Estimator, EstimatorError, EstimatorSpec};
use steinvar::harness::{
    certify_challenger, compare_paired, estimate_risk, grid_configs, DominanceReport, HarnessError, RiskCurve,
    BLOCK_SIZE, DEFAULT_XI_GRID,
};
use steinvar::rng;
use steinvar::sampling::{MixingLaw, SamplingError, SimConfig};
use steinvar::stats::{compute_stats, RegressionData, StatsError};
use steinvar::verify::{default_phi_gb, run_checks, CheckResult, PhiGb, VerifyLevel};

use crate::config::ConfigFile;
use crate::output::{check_output_path, emit, header_line, shell_word, timestamp, to_json};
use crate::{CliError, Command, EstimateArgs, Fault, Format, Globals, Level, PhiTableArgs, RiskSimArgs, VerifyArgs};

const QUADRATURE: &str = "beta integrals: adaptive Gauss-Jacobi (Golub-Welsch), series cross-check; oracle: double-exponential";
const DEFAULT_REPLICATES: usize = 100_000;
const DEFAULT_GRID_SIZE: usize = 101;
/// Slack allowed in the phi-table property checks.
const PROPERTY_TOL: f64 = 1e-10;

pub enum Job {
    Estimate(EstimateJob),
    PhiTable(PhiTableJob),
    RiskSim(RiskSimJob),
    Verify(VerifyJob),
}

impl Job {
    pub fn run(&self) -> Result<(), CliError> {
        match self {
            Job::Estimate(j) => j.run(),
            Job::PhiTable(j) => j.run(),
            Job::RiskSim(j) => j.run(),
            Job::Verify(j) => j.run(),
        }
    }
}

pub fn prepare(command: Command, cfg: &mut ConfigFile, globals: Globals) -> Result<Job, CliError> {
    Ok(match command {
        Command::Estimate(args) => Job::Estimate(EstimateJob::prepare(args, cfg, globals)?),
        Command::PhiTable(args) => Job::PhiTable(PhiTableJob::prepare(args, cfg, globals)?),
        Command::RiskSim(args) => Job::RiskSim(RiskSimJob::prepare(args, cfg, globals)?),
        Command::Verify(args) => Job::Verify(VerifyJob::prepare(args, cfg, globals)?),
    })
}

fn estimator_error(e: EstimatorError) -> CliError {
    match e {
        EstimatorError::ZeroResidual | EstimatorError::NonPositiveArgument { .. } => CliError::Data(e.to_string()),
        EstimatorError::Quadrature(_) => CliError::Internal(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

fn stats_error(e: StatsError) -> CliError {
    CliError::Data(e.to_string())
}

fn harness_error(e: HarnessError) -> CliError {
    match e {
        HarnessError::Estimator(e) => estimator_error(e),
        HarnessError::Stats(e) | HarnessError::Sampling(SamplingError::Stats(e)) => stats_error(e),
        HarnessError::Sampling(e) => CliError::Usage(e.to_string()),
        HarnessError::ChallengerNotPhiForm(_) | HarnessError::PhiNotMonotone { .. } => {
            CliError::Usage(format!("certified run refused: {e}"))
        }
        HarnessError::InconsistentConfigs(_) => CliError::Usage(e.to_string()),
    }
}

fn parse_spec(s: &str) -> Result<EstimatorSpec, CliError> {
    s.parse().map_err(estimator_error)
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Usage(format!("invalid {what} value '{}'", v.trim())))
        })
        .collect()
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn check_paths(paths: &[&Option<PathBuf>]) -> Result<(), CliError> {
    paths.iter().filter_map(|p| p.as_deref()).try_for_each(check_output_path)
}

/// Canonical command line reproducing a run without the config file.
struct CommandLine(Vec<String>);

impl CommandLine {
    fn new(subcommand: &str, globals: Globals) -> Self {
        let mut words = vec!["steinvar".to_string()];
        if globals.format == Format::Json {
            words.extend(["--format".into(), "json".into()]);
        }
        words.push(subcommand.into());
        Self(words)
    }

    fn flag(&mut self, name: &str, value: impl ToString) -> &mut Self {
        self.0.push(format!("--{name}"));
        self.0.push(value.to_string());
        self
    }

    fn opt_flag(&mut self, name: &str, value: Option<&Path>) -> &mut Self {
        if let Some(v) = value {
            self.flag(name, v.display());
        }
        self
    }

    fn switch(&mut self, name: &str, on: bool) -> &mut Self {
        if on {
            self.0.push(format!("--{name}"));
        }
        self
    }

    fn render(&self) -> String {
        self.0.iter().map(|w| shell_word(w)).collect::<Vec<_>>().join(" ")
    }
}

fn metadata(command: &CommandLine, fields: serde_json::Value) -> serde_json::Value {
    let mut meta = json!({
        "command": command.render(),
        "version": env!("CARGO_PKG_VERSION"),
        "algorithms": { "rng": rng::ALGORITHMS, "quadrature": QUADRATURE },
        "timestamp": timestamp(),
    });
    if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), fields) {
        m.extend(extra);
    }
    meta
}

pub struct EstimateJob {
    data: PathBuf,
    specs: Vec<EstimatorSpec>,
    out: Option<PathBuf>,
    globals: Globals,
}

#[derive(Serialize)]
struct EstimateRow {
    estimator: String,
    phi: f64,
    delta: f64,
}

impl EstimateJob {
    fn prepare(mut args: EstimateArgs, cfg: &mut ConfigFile, globals: Globals) -> Result<Self, CliError> {
        let mut from_cfg: Option<String> = None;
        cfg.fill(&mut args.data, "data")?;
        cfg.fill(&mut from_cfg, "estimator")?;
        cfg.fill(&mut args.out, "out")?;
        if args.estimator.is_empty() {
            if let Some(list) = from_cfg {
                args.estimator = list.split(',').map(|s| s.trim().to_string()).collect();
            }
        }
        let data = args.data.ok_or_else(|| CliError::Usage("missing --data".into()))?;
        if !data.is_file() {
            return Err(CliError::Data(format!("data file {} not found", data.display())));
        }
        check_paths(&[&args.out])?;
        let specs = args.estimator.iter().map(|s| parse_spec(s)).collect::<Result<_, _>>()?;
        Ok(Self { data, specs, out: args.out, globals })
    }

    fn run(&self) -> Result<(), CliError> {
        let data = RegressionData::from_csv_path(&self.data).map_err(stats_error)?;
        let stats = compute_stats(&data).map_err(stats_error)?;
        let (n, p) = (stats.n, stats.p);
        let specs = if self.specs.is_empty() {
            let mut specs = vec![EstimatorSpec::Unbiased, EstimatorSpec::SteinTruncated, EstimatorSpec::BrewsterZidek];
            if p > 2 {
                specs.push(EstimatorSpec::harmonic());
            }
            if 2 * p > n - 1 && p < n - 1 {
                specs.push(EstimatorSpec::SimpleBayesStar);
            }
            specs
        } else {
            self.specs.clone()
        };

        let mut rows = Vec::with_capacity(specs.len());
        for spec in &specs {
            let est = Estimator::new(spec.clone(), n, p).map_err(estimator_error)?.estimate(&stats).map_err(estimator_error)?;
            rows.push(EstimateRow { estimator: spec.to_string(), phi: est.phi, delta: est.value });
        }

        let mut cmd = CommandLine::new("estimate", self.globals);
        cmd.flag("data", self.data.display());
        if !self.specs.is_empty() {
            cmd.flag("estimator", self.specs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","));
        }
        cmd.opt_flag("out", self.out.as_deref());
        let meta = metadata(&cmd, json!({ "data": self.data.display().to_string() }));

        let content = match self.globals.format {
            Format::Json => to_json(&json!({
                "metadata": meta,
                "n": n,
                "p": p,
                "rss": stats.rss,
                "total_ss": stats.total_ss,
                "r_squared": stats.r_squared,
                "estimates": rows,
            })),
            Format::Csv => {
                let mut s = header_line(&meta);
                s.push_str("estimator,phi,delta,n,p,rss,r_squared\n");
                for r in &rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        r.estimator,
                        r.phi,
                        r.delta,
                        n,
                        p,
                        stats.rss,
                        stats.r_squared
                    ));
                }
                s
            }
        };
        emit(self.out.as_deref(), &content)
    }
}

pub struct PhiTableJob {
    n: usize,
    p: usize,
    a: Vec<f64>,
    grid_size: usize,
    out: Option<PathBuf>,
    globals: Globals,
    bz: Estimator,
    gb: Vec<Estimator>,
}

impl PhiTableJob {
    fn prepare(mut args: PhiTableArgs, cfg: &mut ConfigFile, globals: Globals) -> Result<Self, CliError> {
        cfg.fill(&mut args.n, "n")?;
        cfg.fill(&mut args.p, "p")?;
        cfg.fill(&mut args.a, "a")?;
        cfg.fill(&mut args.grid_size, "grid-size")?;
        cfg.fill(&mut args.out, "out")?;
        let n = args.n.ok_or_else(|| CliError::Usage("missing --n".into()))?;
        let p = args.p.ok_or_else(|| CliError::Usage("missing --p".into()))?;
        let a = parse_list(args.a.as_deref().unwrap_or("2"), "a")?;
        let grid_size = args.grid_size.unwrap_or(DEFAULT_GRID_SIZE);
        if grid_size < 2 {
            return Err(CliError::Usage(format!("--grid-size must be at least 2, got {grid_size}")));
        }
        check_paths(&[&args.out])?;
        let bz = Estimator::new(EstimatorSpec::BrewsterZidek, n, p).map_err(estimator_error)?;
        let gb = a
            .iter()
            .map(|&a| Estimator::new(EstimatorSpec::GeneralizedBayes { a }, n, p).map_err(estimator_error))
            .collect::<Result<_, _>>()?;
        Ok(Self { n, p, a, grid_size, out: args.out, globals, bz, gb })
    }

    fn run(&self) -> Result<(), CliError> {
        let phi = |e: &Estimator, r2: f64| -> Result<f64, CliError> {
            e.phi(r2).map_err(estimator_error)?.ok_or_else(|| CliError::Internal("estimator has no phi".into()))
        };
        let last = (self.grid_size - 1) as f64;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.grid_size);
        for i in 0..self.grid_size {
            let r2 = i as f64 / last;
            let mut row = vec![r2, phi(&self.bz, r2)?];
            for e in &self.gb {
                row.push(phi(e, r2)?);
            }
            rows.push(row);
        }
        self.check_properties(&rows)?;

        let mut columns = vec!["r_squared".to_string(), "phi_bz".to_string()];
        columns.extend(self.a.iter().map(|a| format!("phi_gb_a={a}")));
        let mut cmd = CommandLine::new("phi-table", self.globals);
        cmd.flag("n", self.n).flag("p", self.p).flag("a", join_floats(&self.a)).flag("grid-size", self.grid_size);
        cmd.opt_flag("out", self.out.as_deref());
        let meta = metadata(&cmd, json!({ "n": self.n, "p": self.p, "a": self.a, "grid_size": self.grid_size }));

        let content = match self.globals.format {
            Format::Json => to_json(&json!({ "metadata": meta, "columns": columns, "rows": rows })),
            Format::Csv => {
                let mut s = header_line(&meta);
                s.push_str(&columns.join(","));
                s.push('\n');
                for row in &rows {
                    s.push_str(&join_floats(row));
                    s.push('\n');
                }
                s
            }
        };
        emit(self.out.as_deref(), &content)
    }

    /// BZ and a >= 2 columns must be nondecreasing and at most one; a = 2
    /// must also lie between BZ and one. Columns with a < 2 are not covered
    /// by those properties and only produce warnings.
    fn check_properties(&self, rows: &[Vec<f64>]) -> Result<(), CliError> {
        let column = |j: usize| rows.iter().map(move |r| (r[0], r[j]));
        let decreasing_at = |j: usize| {
            rows.windows(2).find(|w| w[1][j] < w[0][j] - PROPERTY_TOL).map(|w| w[1][0])
        };
        let above_one_at = |j: usize| column(j).find(|&(_, v)| v > 1.0 + PROPERTY_TOL).map(|(r2, _)| r2);

        let mut problems = Vec::new();
        if let Some(r2) = decreasing_at(1) {
            problems.push(format!("phi_bz decreases at R^2 = {r2}"));
        }
        for (k, &a) in self.a.iter().enumerate() {
            let j = k + 2;
            let label = format!("phi_gb_a={a}");
            let mut found = Vec::new();
            if let Some(r2) = decreasing_at(j) {
                found.push(format!("{label} decreases at R^2 = {r2}"));
            }
            if let Some(r2) = above_one_at(j) {
                found.push(format!("{label} exceeds 1 at R^2 = {r2}"));
            }
            if a == 2.0 {
                if let Some(r) = rows.iter().find(|r| r[j] < r[1] - PROPERTY_TOL) {
                    found.push(format!("{label} falls below phi_bz at R^2 = {}", r[0]));
                }
            }
            if a < 2.0 {
                for f in found {
                    eprintln!("warning: {f} (expected for a < 2)");
                }
            } else {
                problems.extend(found);
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Internal(format!("shrinkage factor property violated: {}", problems.join("; "))))
        }
    }
}

enum Mode {
    Single(EstimatorSpec),
    Paired { baseline: EstimatorSpec, challenger: EstimatorSpec },
}

pub struct RiskSimJob {
    mode: Mode,
    mixing: MixingLaw,
    xi: Vec<f64>,
    replicates: usize,
    seed: u64,
    certified: bool,
    configs: Vec<SimConfig>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    globals: Globals,
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("STEINVAR_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("STEINVAR_SEED must be an unsigned integer, got '{s}'"))),
        Err(_) => {
            use std::hash::BuildHasher;
            let state = std::collections::hash_map::RandomState::new();
            Ok(state.hash_one(std::time::SystemTime::now()))
        }
    }
}

impl RiskSimJob {
    fn prepare(mut args: RiskSimArgs, cfg: &mut ConfigFile, globals: Globals) -> Result<Self, CliError> {
        let (mut estimator, mut baseline, mut challenger) = (None, None, None);
        cfg.fill(&mut estimator, "estimator")?;
        cfg.fill(&mut baseline, "baseline")?;
        cfg.fill(&mut challenger, "challenger")?;
        if args.estimator.is_none() && args.baseline.is_none() && args.challenger.is_none() {
            (args.estimator, args.baseline, args.challenger) = (estimator, baseline, challenger);
        }
        cfg.fill(&mut args.n, "n")?;
        cfg.fill(&mut args.p, "p")?;
        cfg.fill(&mut args.mixing, "mixing")?;
        cfg.fill(&mut args.xi, "xi")?;
        cfg.fill(&mut args.replicates, "replicates")?;
        cfg.fill(&mut args.seed, "seed")?;
        cfg.fill(&mut args.out, "out")?;
        cfg.fill(&mut args.report, "report")?;
        cfg.fill_flag(&mut args.certified, "certified")?;

        let mode = match (&args.estimator, &args.baseline, &args.challenger) {
            (Some(e), None, None) => Mode::Single(parse_spec(e)?),
            (None, Some(b), Some(c)) => Mode::Paired { baseline: parse_spec(b)?, challenger: parse_spec(c)? },
            (None, None, None) => {
                return Err(CliError::Usage("give --estimator, or --baseline with --challenger".into()))
            }
            _ => {
                return Err(CliError::Usage(
                    "--estimator cannot be combined with --baseline/--challenger, which must be given together".into(),
                ))
            }
        };
        let n = args.n.ok_or_else(|| CliError::Usage("missing --n".into()))?;
        let p = args.p.ok_or_else(|| CliError::Usage("missing --p".into()))?;
        let mixing: MixingLaw = match &args.mixing {
            Some(m) => m.parse().map_err(|e: SamplingError| CliError::Usage(e.to_string()))?,
            None => MixingLaw::PointMass,
        };
        let xi = match &args.xi {
            Some(list) => parse_list(list, "xi")?,
            None => DEFAULT_XI_GRID.to_vec(),
        };
        let replicates = args.replicates.unwrap_or(DEFAULT_REPLICATES);
        if replicates == 0 {
            return Err(CliError::Usage("--replicates must be positive".into()));
        }
        check_paths(&[&args.out, &args.report])?;
        let seed = resolve_seed(args.seed)?;

        let configs = grid_configs(n, p, mixing, &xi, replicates, seed).map_err(harness_error)?;
        let xi = configs.iter().map(|c| c.xi).collect();
        match &mode {
            Mode::Single(spec) => {
                Estimator::new(spec.clone(), n, p).map_err(estimator_error)?;
                if args.certified {
                    certify_challenger(spec, n, p).map_err(harness_error)?;
                }
            }
            Mode::Paired { baseline, challenger } => {
                Estimator::new(baseline.clone(), n, p).map_err(estimator_error)?;
                Estimator::new(challenger.clone(), n, p).map_err(estimator_error)?;
                if args.certified {
                    certify_challenger(challenger, n, p).map_err(harness_error)?;
                }
            }
        }
        Ok(Self {
            mode,
            mixing,
            xi,
            replicates,
            seed,
            certified: args.certified,
            configs,
            out: args.out,
            report: args.report,
            globals,
        })
    }

    fn command_line(&self) -> CommandLine {
        let first = &self.configs[0];
        let mut cmd = CommandLine::new("risk-sim", self.globals);
        cmd.flag("n", first.n).flag("p", first.p);
        match &self.mode {
            Mode::Single(spec) => cmd.flag("estimator", spec),
            Mode::Paired { baseline, challenger } => cmd.flag("baseline", baseline).flag("challenger", challenger),
        };
        cmd.flag("mixing", self.mixing)
            .flag("xi", join_floats(&self.xi))
            .flag("replicates", self.replicates)
            .flag("seed", self.seed)
            .switch("certified", self.certified)
            .opt_flag("out", self.out.as_deref())
            .opt_flag("report", self.report.as_deref());
        cmd
    }

    fn metadata(&self) -> serde_json::Value {
        let first = &self.configs[0];
        let estimators = match &self.mode {
            Mode::Single(spec) => json!({ "estimator": spec.to_string() }),
            Mode::Paired { baseline, challenger } => {
                json!({ "baseline": baseline.to_string(), "challenger": challenger.to_string() })
            }
        };
        let mut fields = json!({
            "seed": self.seed,
            "n": first.n,
            "p": first.p,
            "sigma_sq": first.sigma_sq,
            "mixing": self.mixing.to_string(),
            "xi": self.xi,
            "replicates": self.replicates,
            "block_size": BLOCK_SIZE,
            "certified": self.certified,
        });
        if let (Some(f), serde_json::Value::Object(e)) = (fields.as_object_mut(), estimators) {
            f.extend(e);
        }
        metadata(&self.command_line(), fields)
    }

    fn run(&self) -> Result<(), CliError> {
        eprintln!("seed: {}", self.seed);
        match &self.mode {
            Mode::Single(spec) => self.run_single(spec),
            Mode::Paired { baseline, challenger } => self.run_paired(baseline, challenger),
        }
    }

    fn run_single(&self, spec: &EstimatorSpec) -> Result<(), CliError> {
        let points = self.configs.iter().map(|c| estimate_risk(spec, c)).collect::<Result<Vec<_>, _>>().map_err(harness_error)?;
        let first = &self.configs[0];
        let curve = RiskCurve { estimator: spec.clone(), mixing: self.mixing, n: first.n, p: first.p, points };
        let meta = self.metadata();
        let json_report = || to_json(&json!({ "metadata": meta, "curve": curve }));

        let primary = match self.globals.format {
            Format::Json => json_report(),
            Format::Csv => {
                let mut s = header_line(&meta);
                s.push_str("xi,risk,std_err,replicates\n");
                for pt in &curve.points {
                    s.push_str(&format!("{},{},{},{}\n", pt.xi, pt.risk, pt.std_err, pt.replicates));
                }
                s
            }
        };
        emit(self.out.as_deref(), &primary)?;
        if let Some(report) = &self.report {
            emit(Some(report), &json_report())?;
        }
        Ok(())
    }

    fn run_paired(&self, baseline: &EstimatorSpec, challenger: &EstimatorSpec) -> Result<(), CliError> {
        let report: DominanceReport =
            compare_paired(baseline, challenger, &self.configs, self.certified).map_err(harness_error)?;
        let meta = self.metadata();
        let json_report = to_json(&json!({ "metadata": meta, "report": report }));

        if let Some(out) = &self.out {
            let content = match self.globals.format {
                Format::Json => json_report.clone(),
                Format::Csv => {
                    let mut s = header_line(&meta);
                    s.push_str(
                        "xi,baseline_risk,baseline_std_err,challenger_risk,challenger_std_err,delta,delta_std_err,replicates\n",
                    );
                    for pt in &report.points {
                        s.push_str(&format!(
                            "{},{},{},{},{},{},{},{}\n",
                            pt.xi,
                            pt.baseline_risk,
                            pt.baseline_std_err,
                            pt.challenger_risk,
                            pt.challenger_std_err,
                            pt.delta,
                            pt.std_err,
                            pt.replicates
                        ));
                    }
                    s
                }
            };
            emit(Some(out), &content)?;
        }
        emit(self.report.as_deref(), &json_report)
    }
}

pub struct VerifyJob {
    level: Level,
    tolerance_scale: f64,
    fault: Option<Fault>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    level: &'a str,
    tolerance_scale: f64,
    passed: bool,
    checks: Vec<CheckResult>,
}

impl VerifyJob {
    fn prepare(mut args: VerifyArgs, cfg: &mut ConfigFile, _globals: Globals) -> Result<Self, CliError> {
        cfg.fill(&mut args.level, "level")?;
        cfg.fill(&mut args.tolerance_scale, "tolerance-scale")?;
        cfg.fill(&mut args.out, "out")?;
        let tolerance_scale = args.tolerance_scale.unwrap_or(1.0);
        if !(tolerance_scale.is_finite() && tolerance_scale > 0.0) {
            return Err(CliError::Usage(format!("--tolerance-scale must be positive, got {tolerance_scale}")));
        }
        check_paths(&[&args.out])?;
        Ok(Self { level: args.level.unwrap_or(Level::Quick), tolerance_scale, fault: args.inject_fault, out: args.out })
    }

    fn run(&self) -> Result<(), CliError> {
        let phi: PhiGb = match self.fault {
            None => default_phi_gb(),
            Some(Fault::InvertPhi) => Arc::new(|a, r2, n, p| phi_gb(a, r2, n, p).map(|v| 1.0 / v)),
        };
        let (level, name) = match self.level {
            Level::Quick => (VerifyLevel::Quick, "quick"),
            Level::Full => (VerifyLevel::Full, "full"),
        };
        let mut checks = run_checks(level, &phi);
        for c in &mut checks {
            c.tolerance *= self.tolerance_scale;
            c.pass = c.residual.abs() <= c.tolerance;
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.check.as_str()).collect();
        let failed = failed.join(", ");
        let report = VerifyReport { level: name, tolerance_scale: self.tolerance_scale, passed: failed.is_empty(), checks };
        emit(self.out.as_deref(), &to_json(&report))?;
        if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::Verification(format!("failed checks: {failed}")))
        }
    }
}
