//! Run settings: defaults, an optional TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ingest::GridPolicy;
use crate::error::{Error, Result};
use crate::selection::{CvSettings, FoldPlan, LambdaSpec};
use crate::simulation::MethodKind;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "FCLR_OUTPUT_DIR";
pub const DEFAULT_OUTPUT: &str = "fclr-out";
pub const DEFAULT_BOOTSTRAP: usize = 500;
pub const DEFAULT_STUDY_FOLDS: usize = 10;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub grid_policy: Option<String>,
    #[serde(default)]
    pub solver: SolverFile,
    #[serde(default)]
    pub tuning: TuningFile,
    #[serde(default)]
    pub bootstrap: BootstrapFile,
    #[serde(default)]
    pub simulate: SimulateFile,
    #[serde(default)]
    pub importance: ImportanceFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    pub rho0: Option<f64>,
    pub epsilon: Option<f64>,
    pub k_max: Option<usize>,
    pub admm_tol_abs: Option<f64>,
    pub admm_tol_rel: Option<f64>,
    pub admm_iter_max: Option<usize>,
    pub admm_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningFile {
    /// `"loo"` or a fold count such as `"10"`.
    pub folds: Option<String>,
    pub k_grid: Option<Vec<usize>>,
    pub order: Option<usize>,
    pub n_lambda: Option<usize>,
    pub lambda_min_ratio: Option<f64>,
    pub lambda: Option<f64>,
    pub k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapFile {
    pub replicates: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub scenarios: Option<Vec<String>>,
    pub replicates: Option<usize>,
    pub methods: Option<Vec<String>>,
    pub folds: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportanceFile {
    pub windows: Option<Vec<(f64, f64)>>,
}

impl FileConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
            message: e.message().to_string(),
        })
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
    pub grid_policy: GridPolicy,
    pub cv: CvSettings,
    pub folds: FoldPlan,
    /// Fixed `λ`; skips cross-validation.
    pub lambda: Option<f64>,
    /// Fixed `k`; restricts the `k` grid.
    pub k: Option<usize>,
    pub bootstrap_replicates: usize,
    pub scenarios: Vec<String>,
    /// Overrides the scenario's replicate count.
    pub replicates: Option<usize>,
    pub methods: Vec<MethodKind>,
    pub study_folds: usize,
    /// Importance windows; `None` uses the intervals of the data grid.
    pub windows: Option<Vec<(f64, f64)>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: PathBuf::from(DEFAULT_OUTPUT),
            threads: None,
            grid_policy: GridPolicy::Intersect,
            cv: CvSettings::default(),
            folds: FoldPlan::KFold(10),
            lambda: None,
            k: None,
            bootstrap_replicates: DEFAULT_BOOTSTRAP,
            scenarios: Vec::new(),
            replicates: None,
            methods: vec![MethodKind::Cgl, MethodKind::Bgl],
            study_folds: DEFAULT_STUDY_FOLDS,
            windows: None,
        }
    }
}

pub fn parse_folds(s: &str) -> Result<FoldPlan> {
    if s.eq_ignore_ascii_case("loo") {
        return Ok(FoldPlan::LeaveOneOut);
    }
    s.parse::<usize>()
        .ok()
        .filter(|&k| k >= 2)
        .map(FoldPlan::KFold)
        .ok_or_else(|| Error::Config(format!("folds must be `loo` or an integer >= 2, got `{s}`")))
}

/// Parses `a:b,c:d` into windows.
pub fn parse_windows(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|w| {
            let (a, b) = w
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("window `{w}` is not of the form start:end")))?;
            let num = |x: &str| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("window bound `{x}` is not a number")))
            };
            Ok((num(a)?, num(b)?))
        })
        .collect()
}

impl RunConfig {
    /// Applies the values present in a config file.
    pub fn apply_file(&mut self, f: FileConfig) -> Result<()> {
        if let Some(v) = f.seed {
            self.seed = v;
        }
        if let Some(v) = f.output {
            self.output = v;
        }
        if let Some(v) = f.threads {
            self.threads = Some(v);
        }
        if let Some(v) = f.grid_policy {
            self.grid_policy = GridPolicy::parse(&v)?;
        }
        let s = &mut self.cv.solver;
        let fs = f.solver;
        s.rho0 = fs.rho0.unwrap_or(s.rho0);
        s.epsilon = fs.epsilon.unwrap_or(s.epsilon);
        s.k_max = fs.k_max.unwrap_or(s.k_max);
        s.admm_tol_abs = fs.admm_tol_abs.unwrap_or(s.admm_tol_abs);
        s.admm_tol_rel = fs.admm_tol_rel.unwrap_or(s.admm_tol_rel);
        s.admm_iter_max = fs.admm_iter_max.unwrap_or(s.admm_iter_max);
        s.admm_step = fs.admm_step.unwrap_or(s.admm_step);
        let t = f.tuning;
        if let Some(v) = t.folds {
            self.folds = parse_folds(&v)?;
        }
        if let Some(v) = t.k_grid {
            self.cv.k_grid = v;
        }
        if let Some(v) = t.order {
            self.cv.order = v;
        }
        self.set_lambda_grid(t.n_lambda, t.lambda_min_ratio);
        if t.lambda.is_some() {
            self.lambda = t.lambda;
        }
        if t.k.is_some() {
            self.k = t.k;
        }
        if let Some(v) = f.bootstrap.replicates {
            self.bootstrap_replicates = v;
        }
        let sim = f.simulate;
        if let Some(v) = sim.scenarios {
            self.scenarios = v;
        }
        if sim.replicates.is_some() {
            self.replicates = sim.replicates;
        }
        if let Some(v) = sim.methods {
            self.methods = v.iter().map(|m| MethodKind::parse(m)).collect::<Result<_>>()?;
        }
        if let Some(v) = sim.folds {
            self.study_folds = v;
        }
        if f.importance.windows.is_some() {
            self.windows = f.importance.windows;
        }
        Ok(())
    }

    pub fn set_lambda_grid(&mut self, len: Option<usize>, min_ratio: Option<f64>) {
        if len.is_none() && min_ratio.is_none() {
            return;
        }
        let (l0, r0) = match self.cv.lambdas {
            LambdaSpec::Geometric { len, min_ratio } => (len, min_ratio),
            LambdaSpec::Explicit(_) => (50, 1e-3),
        };
        self.cv.lambdas = LambdaSpec::Geometric {
            len: len.unwrap_or(l0),
            min_ratio: min_ratio.unwrap_or(r0),
        };
    }

    /// Cross-validation settings with the `k` grid narrowed to a fixed `k`.
    pub fn tuning(&self) -> CvSettings {
        let mut cv = self.cv.clone();
        if let Some(k) = self.k {
            cv.k_grid = vec![k];
        }
        cv
    }

    pub fn validate(&self) -> Result<()> {
        self.cv.solver.validate()?;
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be nonnegative, got {l}")));
            }
        }
        if let LambdaSpec::Geometric { len, min_ratio } = self.cv.lambdas {
            if len == 0 || !(min_ratio > 0.0 && min_ratio <= 1.0) {
                return Err(Error::Config("lambda grid needs len >= 1 and 0 < min_ratio <= 1".into()));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.bootstrap_replicates == 0 {
            return Err(Error::Config("bootstrap replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        Ok(())
    }
}

/// Output directory when neither a flag nor the config file sets one.
pub fn env_output() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}
