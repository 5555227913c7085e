//! Command implementations. Each writes its CSV outputs into the run's
//! output directory and reports whether every fit converged.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use super::config::RunConfig;
use super::ingest::{export_panel, export_paths, ingest_dataset, BlocksSpec};
use crate::design::FunctionalPanel;
use crate::error::{Error, Result};
use crate::selection::{
    active_set, bootstrap_stability, cross_validate, fit_at, one_se_index, relative_magnitude,
    stream_rng, CvResult, Method, TunedFit, TuningPlan,
};
use crate::simulation::{run_study, scenario, scenario_names, StudySettings, TRUTH_BASIS};

/// Points of the exported coefficient curves.
pub const CURVE_POINTS: usize = 201;

/// Basis size used when `λ` is fixed and no `k` is given.
pub const DEFAULT_K: usize = TRUTH_BASIS;

const FOLD_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    NotConverged,
}

/// Input files shared by the data-driven commands.
#[derive(Debug, Clone)]
pub struct DataFiles {
    pub data: PathBuf,
    pub blocks: PathBuf,
}

impl DataFiles {
    pub fn load(&self, cfg: &RunConfig) -> Result<FunctionalPanel> {
        ingest_dataset(&self.data, &self.blocks, cfg.grid_policy)
    }
}

fn out_path(cfg: &RunConfig, file: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output)?;
    Ok(cfg.output.join(file))
}

fn cv_for(cfg: &RunConfig, panel: &FunctionalPanel) -> Result<CvResult> {
    let mut rng = stream_rng(cfg.seed, FOLD_STREAM);
    let folds = cfg.folds.folds(panel.n(), &mut rng)?;
    cross_validate(panel, &Method::Constrained, &cfg.tuning(), &folds)
}

/// `(λ, k)` from the flags, or from cross-validation when `λ` is not fixed.
fn tune(cfg: &RunConfig, panel: &FunctionalPanel) -> Result<(f64, usize, bool)> {
    match cfg.lambda {
        Some(lambda) => Ok((lambda, cfg.k.unwrap_or(DEFAULT_K), false)),
        None => {
            let cv = cv_for(cfg, panel)?;
            Ok((cv.chosen.0, cv.chosen.1, true))
        }
    }
}

fn control_labels(panel: &FunctionalPanel) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain(panel.controls.iter().map(|c| c.name.clone()))
        .collect()
}

fn write_coefficients(path: &Path, labels: &[(String, &DVector<f64>)], k: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "basis_index", "value"])?;
    for (label, coefs) in labels {
        for a in 0..k {
            w.write_record([label.as_str(), &a.to_string(), &coefs[a].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `fit`: tune (unless `λ` is fixed), refit on the full panel and export
/// coefficients, curves and diagnostics.
pub fn cmd_fit(cfg: &RunConfig, files: &DataFiles) -> Result<Status> {
    let panel = files.load(cfg)?;
    let (lambda, k, by_cv) = tune(cfg, &panel)?;
    let tuned = fit_at(&panel, &Method::Constrained, &cfg.tuning(), lambda, k)?;
    write_fit(cfg, &panel, &tuned, by_cv)?;
    Ok(if tuned.fit.converged {
        Status::Converged
    } else {
        Status::NotConverged
    })
}

fn write_fit(cfg: &RunConfig, panel: &FunctionalPanel, tuned: &TunedFit, by_cv: bool) -> Result<()> {
    let k = tuned.spec.count();
    let mut series: Vec<(String, DVector<f64>)> = Vec::new();
    for (j, label) in panel.blocks.iter().flat_map(|b| &b.parts).enumerate() {
        series.push((label.clone(), tuned.coefficients.rows(j * k, k).into_owned()));
    }
    for (c, label) in control_labels(panel).into_iter().enumerate() {
        series.push((label, tuned.fit.b_c_hat.rows(c * k, k).into_owned()));
    }
    let refs: Vec<(String, &DVector<f64>)> = series.iter().map(|(l, v)| (l.clone(), v)).collect();
    write_coefficients(&out_path(cfg, "coefficients.csv")?, &refs, k)?;

    let (lo, hi) = tuned.spec.domain();
    let mut w = csv::Writer::from_path(out_path(cfg, "curves.csv")?)?;
    w.write_record(["series", "time", "value"])?;
    for (label, coefs) in &series {
        for i in 0..CURVE_POINTS {
            let t = if i + 1 == CURVE_POINTS {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64
            };
            let v = tuned.spec.curves_at(coefs.as_slice(), t)?[0];
            w.write_record([label.as_str(), &t.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;

    let report = active_set(&tuned.coefficients, &tuned.spec, &panel.grid, panel.p())?;
    let fit = &tuned.fit;
    let mut w = csv::Writer::from_path(out_path(cfg, "diagnostics.csv")?)?;
    w.write_record([
        "lambda",
        "k",
        "selected_by",
        "constraint_residual",
        "kkt_residual",
        "outer_iterations",
        "inner_iterations",
        "converged",
        "active_curves",
    ])?;
    w.write_record([
        fit.lambda.to_string(),
        k.to_string(),
        if by_cv { "cv" } else { "fixed" }.to_string(),
        fit.constraint_residual.to_string(),
        tuned.kkt.to_string(),
        fit.outer_iters.to_string(),
        fit.inner_iters_total.to_string(),
        fit.converged.to_string(),
        report.active_set.len().to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// `cv`: the cross-validation table with the one-SE choice flagged.
pub fn cmd_cv(cfg: &RunConfig, files: &DataFiles) -> Result<Status> {
    let panel = files.load(cfg)?;
    let cv = cv_for(cfg, &panel)?;
    write_cv(&out_path(cfg, "cv.csv")?, &cv)?;
    if cv.nonconverged > 0 {
        eprintln!("warning: {} path fits did not converge", cv.nonconverged);
    }
    Ok(Status::Converged)
}

pub fn write_cv(path: &Path, cv: &CvResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "k", "mean_error", "se_error", "chosen"])?;
    for (i, &(lambda, k)) in cv.grid.iter().enumerate() {
        w.write_record([
            lambda.to_string(),
            k.to_string(),
            cv.mean_error[i].to_string(),
            cv.se_error[i].to_string(),
            u8::from(i == cv.chosen_index).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Recomputes the one-SE choice from a `cv.csv` table.
pub fn one_se_from_table(rows: &[(f64, usize, f64, f64)]) -> Option<usize> {
    let grid: Vec<(f64, usize)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let mean: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let se: Vec<f64> = rows.iter().map(|r| r.3).collect();
    one_se_index(&grid, &mean, &se)
}

/// `bootstrap`: selection proportion of every part over resamples.
pub fn cmd_bootstrap(cfg: &RunConfig, files: &DataFiles) -> Result<Status> {
    let panel = files.load(cfg)?;
    let plan = TuningPlan {
        folds: cfg.folds,
        cv: cfg.tuning(),
    };
    let result = bootstrap_stability(&panel, cfg.bootstrap_replicates, &plan, cfg.seed)?;
    let mut w = csv::Writer::from_path(out_path(cfg, "stability.csv")?)?;
    w.write_record(["series", "selection_proportion"])?;
    for (label, p) in panel.blocks.iter().flat_map(|b| &b.parts).zip(&result.proportions) {
        w.write_record([label.as_str(), &p.to_string()])?;
    }
    w.flush()?;
    if result.nonconverged > 0 {
        eprintln!("warning: {} bootstrap fits did not converge", result.nonconverged);
    }
    Ok(Status::Converged)
}

/// `simulate`: the study table for the requested scenarios.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Status> {
    if cfg.scenarios.is_empty() {
        return Err(Error::Config("no scenario given (use --scenario NAME or `all`)".into()));
    }
    let names: Vec<String> = if cfg.scenarios.iter().any(|s| s == "all") {
        scenario_names()
    } else {
        cfg.scenarios.clone()
    };
    let scenarios = names
        .into_iter()
        .map(|name| {
            let mut sim = scenario(&name)?;
            sim.seed = cfg.seed;
            if let Some(r) = cfg.replicates {
                sim.replicates = r;
            }
            Ok((name, sim))
        })
        .collect::<Result<Vec<_>>>()?;
    let settings = StudySettings {
        cv: cfg.tuning(),
        folds: cfg.study_folds,
    };
    let table = run_study(&scenarios, &cfg.methods, &settings)?;
    let file = fs::File::create(out_path(cfg, "simulation.csv")?)?;
    table.write_csv(file)?;
    let nonconverged: usize = table
        .rows
        .iter()
        .filter(|r| r.metric == "fpr")
        .map(|r| r.nonconverged)
        .sum();
    if nonconverged > 0 {
        eprintln!("warning: {nonconverged} replicate fits did not converge");
    }
    Ok(Status::Converged)
}

/// `importance`: relative magnitude of every block per time window.
pub fn cmd_importance(cfg: &RunConfig, files: &DataFiles) -> Result<Status> {
    let panel = files.load(cfg)?;
    let windows = match &cfg.windows {
        Some(w) => w.clone(),
        None => panel.grid.windows(2).map(|w| (w[0], w[1])).collect(),
    };
    let (lo, hi) = (panel.grid[0], panel.grid[panel.grid.len() - 1]);
    if let Some(&(a, b)) = windows.iter().find(|&&(a, b)| !(a < b) || a < lo || b > hi) {
        return Err(Error::OutOfDomain {
            t: if a < lo || !(a < b) { a } else { b },
            lo,
            hi,
        });
    }
    let (lambda, k, _) = tune(cfg, &panel)?;
    let tuned = fit_at(&panel, &Method::Constrained, &cfg.tuning(), lambda, k)?;
    let shares = relative_magnitude(&tuned.coefficients, &tuned.spec, &panel.block_sizes(), &windows)?;
    let mut w = csv::Writer::from_path(out_path(cfg, "importance.csv")?)?;
    w.write_record(["block", "window_start", "share"])?;
    for (&(a, _), row) in windows.iter().zip(&shares) {
        for (block, s) in panel.blocks.iter().zip(row) {
            w.write_record([block.name.as_str(), &a.to_string(), &s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(if tuned.fit.converged {
        Status::Converged
    } else {
        Status::NotConverged
    })
}

/// `ingest-check`: validates the inputs and summarizes the panel; with
/// `export`, also writes it back as `panel.csv` and `blocks.toml`.
pub fn cmd_ingest_check(cfg: &RunConfig, files: &DataFiles, export: bool) -> Result<String> {
    let panel = files.load(cfg)?;
    let mut summary = format!(
        "units {}, grid points {} [{} .. {}], blocks {}, parts {}, controls {}\n",
        panel.n(),
        panel.grid.len(),
        panel.grid[0],
        panel.grid[panel.grid.len() - 1],
        panel.q(),
        panel.p(),
        panel.controls.len()
    );
    for b in &panel.blocks {
        summary.push_str(&format!("  {}: {}\n", b.name, b.parts.join(", ")));
    }
    if export {
        let response = BlocksSpec::read(&files.blocks)?.response;
        fs::create_dir_all(&cfg.output)?;
        let (data, blocks) = export_paths(&cfg.output);
        export_panel(&panel, &response, &data, &blocks)?;
        summary.push_str(&format!("exported to {} and {}\n", data.display(), blocks.display()));
    }
    Ok(summary)
}
