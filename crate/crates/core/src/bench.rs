//! Batch benchmarks over the problem library with CSV and JSON reports.
//!
//! A config file holds one TOML table per suite:
//!
//! ```toml
//! output = "results"
//! threads = 4
//!
//! [cartpole]
//! problem = "cartpole_swingup"
//! instances = 100
//! seed = 0
//! min_solved = 95
//!
//! [cartpole.settings]
//! abs_tol = 1e-3
//!
//! [cartpole.params]
//! horizon = 50
//! ```
//!
//! Top-level `output` and `threads` are defaults for every suite.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EqMode, KktResidual};
use crate::problems::{instance_seed, problem_library, ProblemError, ProblemParams};
use crate::sqp::{solve_default, SolveStatus, SolverSettings};
use crate::verify::{equality_equivalence, ipm_equivalence, EquivalenceReport};

/// Column header of the per-instance CSV.
pub const CSV_HEADER: [&str; 13] = [
    "instance_id",
    "status",
    "iters",
    "qp_count",
    "kkt_total",
    "kkt_stationarity",
    "kkt_eq",
    "kkt_ineq",
    "kkt_comp",
    "wall_ms",
    "per_qp_ms",
    "escapes",
    "refines",
];

/// Timing columns, excluded from reproducibility comparisons.
pub const TIMING_COLUMNS: [&str; 2] = ["wall_ms", "per_qp_ms"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("no records to report")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One benchmark suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Suite name, taken from the table name in a config file.
    #[serde(default)]
    pub name: String,
    pub problem: String,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sets both equality groups; unset keeps the modes in `settings`.
    #[serde(default)]
    pub eq_mode: Option<EqMode>,
    /// Solved count required for the suite to pass; all instances when unset.
    #[serde(default)]
    pub min_solved: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Instances solved concurrently. Each solve itself stays serial.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub settings: SolverSettings,
    /// Problem parameters; `seed` is replaced per instance.
    #[serde(default)]
    pub params: ProblemParams,
}

fn default_instances() -> usize {
    100
}

impl BenchmarkConfig {
    pub fn new(
        name: impl Into<String>,
        problem: impl Into<String>,
        instances: usize,
        seed: u64,
    ) -> Self {
        Self {
            name: name.into(),
            problem: problem.into(),
            instances,
            seed,
            eq_mode: None,
            min_solved: None,
            output: None,
            threads: None,
            settings: SolverSettings::default(),
            params: ProblemParams::default(),
        }
    }

    pub fn required(&self) -> usize {
        self.min_solved.unwrap_or(self.instances)
    }

    /// Settings actually used for every instance.
    pub fn effective_settings(&self) -> SolverSettings {
        let mut s = self.settings.clone();
        if let Some(m) = self.eq_mode {
            s = s.with_eq_mode(m);
        }
        s.threads = 1;
        s
    }

    pub fn params_for(&self, instance: usize) -> ProblemParams {
        ProblemParams {
            seed: instance_seed(self.seed, instance),
            ..self.params.clone()
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.instances == 0 {
            return Err(BenchError::Config(format!(
                "suite '{}': instances must be positive",
                self.name
            )));
        }
        if self.threads == Some(0) {
            return Err(BenchError::Config(format!(
                "suite '{}': threads must be positive",
                self.name
            )));
        }
        self.effective_settings()
            .validate()
            .map_err(|e| BenchError::Config(format!("suite '{}': {e}", self.name)))?;
        problem_library(&self.problem, &self.params_for(0))?;
        Ok(())
    }
}

/// Parses a config file's text into suites, in name order.
pub fn parse_config(text: &str) -> Result<Vec<BenchmarkConfig>, BenchError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
    let mut output = None;
    let mut threads = None;
    let mut suites = BTreeMap::new();
    for (key, value) in table {
        match (key.as_str(), value) {
            ("output", toml::Value::String(s)) => output = Some(PathBuf::from(s)),
            ("threads", toml::Value::Integer(n)) if n > 0 => threads = Some(n as usize),
            (_, toml::Value::Table(t)) => {
                let mut cfg: BenchmarkConfig =
                    toml::Value::Table(t)
                        .try_into()
                        .map_err(|e: toml::de::Error| {
                            BenchError::Config(format!("suite '{key}': {e}"))
                        })?;
                cfg.name = key.clone();
                suites.insert(key, cfg);
            }
            (k, v) => {
                return Err(BenchError::Config(format!(
                    "unexpected top-level key '{k}' = {v}"
                )))
            }
        }
    }
    if suites.is_empty() {
        return Err(BenchError::Config("no suites defined".into()));
    }
    let mut out = Vec::with_capacity(suites.len());
    for (_, mut cfg) in suites {
        cfg.output = cfg.output.or_else(|| output.clone());
        cfg.threads = cfg.threads.or(threads);
        cfg.validate()?;
        out.push(cfg);
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<Vec<BenchmarkConfig>, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchStatus {
    Success,
    MaxIters,
    StepFailure,
    NonFinite,
}

impl fmt::Display for BenchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BenchStatus::Success => "Success",
            BenchStatus::MaxIters => "MaxIters",
            BenchStatus::StepFailure => "StepFailure",
            BenchStatus::NonFinite => "NonFinite",
        };
        f.write_str(s)
    }
}

impl From<SolveStatus> for BenchStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => BenchStatus::Success,
            SolveStatus::MaxIters => BenchStatus::MaxIters,
            SolveStatus::StepFailure => BenchStatus::StepFailure,
            SolveStatus::NonFinite => BenchStatus::NonFinite,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance_id: usize,
    pub status: BenchStatus,
    pub iters: usize,
    pub qp_count: usize,
    pub kkt: KktResidual,
    pub wall_ms: f64,
    pub per_qp_ms: f64,
    pub escapes: usize,
    pub refines: usize,
}

impl BenchRecord {
    /// CSV fields in [`CSV_HEADER`] order.
    pub fn csv_fields(&self) -> [String; 13] {
        [
            self.instance_id.to_string(),
            self.status.to_string(),
            self.iters.to_string(),
            self.qp_count.to_string(),
            format!("{:e}", self.kkt.total),
            format!("{:e}", self.kkt.stationarity),
            format!("{:e}", self.kkt.eq_violation),
            format!("{:e}", self.kkt.ineq_violation),
            format!("{:e}", self.kkt.complementarity),
            format!("{:.3}", self.wall_ms),
            format!("{:.4}", self.per_qp_ms),
            self.escapes.to_string(),
            self.refines.to_string(),
        ]
    }
}

/// Solves instance `id` of a suite.
pub fn run_instance(cfg: &BenchmarkConfig, id: usize) -> Result<BenchRecord, BenchError> {
    let problem = problem_library(&cfg.problem, &cfg.params_for(id))?;
    let settings = cfg.effective_settings();
    let start = Instant::now();
    let (_, report) = solve_default(&problem, &settings);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let status = BenchStatus::from(report.status);
    debug_assert_eq!(
        status == BenchStatus::Success,
        report.final_kkt.total <= settings.abs_tol
    );
    Ok(BenchRecord {
        instance_id: id,
        status,
        iters: report.iterations,
        qp_count: report.qp_count,
        kkt: report.final_kkt,
        wall_ms,
        per_qp_ms: if report.qp_count > 0 {
            wall_ms / report.qp_count as f64
        } else {
            0.0
        },
        escapes: report.escapes,
        refines: report.refines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        Some(Self {
            min: v[0],
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub suite: String,
    pub problem: String,
    pub eq_mode_state_input: EqMode,
    pub eq_mode_state_only: EqMode,
    pub abs_tol: f64,
    pub instances: usize,
    pub solved: usize,
    pub required: usize,
    pub passed: bool,
    /// Over solved instances.
    pub iterations: Option<Quantiles>,
    pub mean_per_qp_ms: f64,
    pub total_wall_s: f64,
    pub qp_count_definition: String,
}

impl BenchSummary {
    pub fn from_records(cfg: &BenchmarkConfig, records: &[BenchRecord], total_wall_s: f64) -> Self {
        let settings = cfg.effective_settings();
        let solved: Vec<&BenchRecord> = records
            .iter()
            .filter(|r| r.status == BenchStatus::Success)
            .collect();
        let iters: Vec<f64> = solved.iter().map(|r| r.iters as f64).collect();
        let total_qp: usize = records.iter().map(|r| r.qp_count).sum();
        let total_ms: f64 = records.iter().map(|r| r.wall_ms).sum();
        Self {
            suite: cfg.name.clone(),
            problem: cfg.problem.clone(),
            eq_mode_state_input: settings.eq_mode_state_input,
            eq_mode_state_only: settings.eq_mode_state_only,
            abs_tol: settings.abs_tol,
            instances: records.len(),
            solved: solved.len(),
            required: cfg.required(),
            passed: solved.len() >= cfg.required(),
            iterations: Quantiles::of(&iters),
            mean_per_qp_ms: if total_qp > 0 {
                total_ms / total_qp as f64
            } else {
                0.0
            },
            total_wall_s,
            qp_count_definition:
                "linear-system solves: predictor, corrector candidates and refinement passes".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub records: Vec<BenchRecord>,
    pub summary: BenchSummary,
}

/// Runs every instance of a suite. Instances are solved concurrently when
/// `threads > 1`; records are always in instance order.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchResult, BenchError> {
    cfg.validate()?;
    let start = Instant::now();
    let threads = cfg.threads.unwrap_or(1);
    let run = || -> Result<Vec<BenchRecord>, BenchError> {
        if threads > 1 {
            (0..cfg.instances)
                .into_par_iter()
                .map(|i| run_instance(cfg, i))
                .collect()
        } else {
            (0..cfg.instances).map(|i| run_instance(cfg, i)).collect()
        }
    };
    let records = if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| BenchError::Config(e.to_string()))?
            .install(run)?
    } else {
        run()?
    };
    let summary = BenchSummary::from_records(cfg, &records, start.elapsed().as_secs_f64());
    Ok(BenchResult { records, summary })
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<(), BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let to_io = |e: csv::Error| BenchError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    w.write_record(CSV_HEADER).map_err(to_io)?;
    for r in records {
        w.write_record(r.csv_fields()).map_err(to_io)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_summary(summary: &BenchSummary, path: &Path) -> Result<(), BenchError> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes `<dir>/<suite>.csv` and `<dir>/<suite>.json`; returns both paths.
pub fn emit_report(result: &BenchResult, dir: &Path) -> Result<(PathBuf, PathBuf), BenchError> {
    if result.records.is_empty() {
        return Err(BenchError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(format!("{}.csv", result.summary.suite));
    let json_path = dir.join(format!("{}.json", result.summary.suite));
    write_csv(&result.records, &csv_path)?;
    write_summary(&result.summary, &json_path)?;
    Ok((csv_path, json_path))
}

/// Oracle-equivalence suite run by `verify`.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub equality: EquivalenceReport,
    pub ipm: EquivalenceReport,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.equality.passed() && self.ipm.passed()
    }
}

/// 200 equality-only and 100 inequality instances, as in the acceptance suite.
pub fn verify_suite(seed: u64, rho: f64) -> VerifyOutcome {
    VerifyOutcome {
        equality: equality_equivalence(200, seed),
        ipm: ipm_equivalence(100, seed, rho),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
output = "out"
threads = 2

[di]
problem = "double_integrator"
instances = 3
seed = 5

[di.settings]
abs_tol = 1e-4

[uni]
problem = "unicycle_reach"
instances = 2
eq_mode = "ipm"
min_solved = 1
threads = 1

[uni.params]
rank_deficient = true
"#;

    #[test]
    fn parses_sections_and_defaults() {
        let suites = parse_config(SAMPLE).unwrap();
        assert_eq!(suites.len(), 2);
        assert_eq!(suites[0].name, "di");
        assert_eq!(suites[0].settings.abs_tol, 1e-4);
        assert_eq!(suites[0].threads, Some(2));
        assert_eq!(suites[0].output.as_deref(), Some(Path::new("out")));
        assert_eq!(suites[1].threads, Some(1));
        assert!(suites[1].params.rank_deficient);
        assert_eq!(
            suites[1].effective_settings().eq_mode_state_only,
            EqMode::Ipm
        );
        assert_eq!(suites[1].required(), 1);
        assert_eq!(suites[0].required(), 3);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(parse_config("").is_err());
        assert!(parse_config("[a]\nproblem = \"nope\"\n").is_err());
        assert!(parse_config("[a]\nproblem = \"double_integrator\"\nbogus = 1\n").is_err());
        assert!(parse_config(
            "[a]\nproblem = \"double_integrator\"\n[a.settings]\nabs_tol = -1.0\n"
        )
        .is_err());
        assert!(parse_config("[a]\nproblem = \"double_integrator\"\ninstances = 0\n").is_err());
    }

    #[test]
    fn status_literals() {
        assert_eq!(BenchStatus::Success.to_string(), "Success");
        assert_eq!(BenchStatus::MaxIters.to_string(), "MaxIters");
    }

    #[test]
    fn quantiles_nearest_rank() {
        let q = Quantiles::of(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(
            (q.min, q.p25, q.median, q.p75, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert!(Quantiles::of(&[]).is_none());
    }

    #[test]
    fn summary_counts_success_rows() {
        let cfg = BenchmarkConfig::new("s", "double_integrator", 2, 0);
        let rec = |id, status| BenchRecord {
            instance_id: id,
            status,
            iters: 3,
            qp_count: 3,
            kkt: KktResidual::default(),
            wall_ms: 3.0,
            per_qp_ms: 1.0,
            escapes: 0,
            refines: 0,
        };
        let s = BenchSummary::from_records(
            &cfg,
            &[rec(0, BenchStatus::Success), rec(1, BenchStatus::MaxIters)],
            0.1,
        );
        assert_eq!(s.solved, 1);
        assert!(!s.passed);
        assert_eq!(s.mean_per_qp_ms, 1.0);
    }

    #[test]
    fn empty_report_is_an_error() {
        let dir = std::env::temp_dir();
        assert!(matches!(
            write_csv(&[], &dir.join("x.csv")),
            Err(BenchError::Empty)
        ));
    }
}
