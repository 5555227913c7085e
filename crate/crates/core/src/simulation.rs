//! Synthetic functional compositions, replicated studies comparing the
//! constrained fit with the reference-dropped baseline, and the four study
//! metrics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::BasisSpec;
use crate::design::{CompositionBlock, FunctionalPanel};
use crate::error::{Error, Result};
use crate::quadrature::trapezoid_weights;
use crate::selection::{
    active_set, cross_validate, fit_at, kfold_partition, random_references, stream_rng, CvSettings,
    Method,
};

/// Basis size of the true coefficient curves.
pub const TRUTH_BASIS: usize = 5;
/// Points of the fine grid used for the estimation error.
pub const FINE_GRID: usize = 501;

const ACTIVE_TRIPLES: [[[f64; 5]; 3]; 4] = [
    [
        [1.0, -1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -0.5, 1.0, 0.0],
        [-1.0, 1.0, 0.5, -1.0, 0.0],
    ],
    [
        [0.5, 0.0, 0.0, -0.5, 1.0],
        [0.0, 1.0, -1.0, 0.0, -1.0],
        [-0.5, -1.0, 1.0, 0.5, 0.0],
    ],
    [
        [0.5, -1.0, -1.0, 1.0, 0.0],
        [0.0, 1.0, 1.0, 0.0, 0.0],
        [-0.5, 0.0, 0.0, -1.0, 0.0],
    ],
    [
        [1.0, 0.0, 0.5, 0.0, -1.0],
        [0.0, 0.0, -0.5, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0, 1.0],
    ],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub rho_x: f64,
    pub rho_t: f64,
    pub sigma_x2: f64,
    pub snr: f64,
    pub grid_len: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 50,
            p: 40,
            q: 1,
            rho_x: 0.2,
            rho_t: 0.2,
            sigma_x2: 9.0,
            snr: 2.0,
            grid_len: 20,
            n_test: 1000,
            replicates: 100,
            seed: 1,
        }
    }
}

/// Scenario names: `table{3,4,5,6}-row{1..12}`. Tables 3 and 4 use SNR 2,
/// tables 5 and 6 SNR 4; rows run over `(ρ_X, ρ_T)` in
/// `(.2,.2), (.2,.6), (.6,.2), (.6,.6)` and, within each, `(n, p, q)` in
/// `(50,40,1), (50,40,4), (50,100,4)`.
pub fn scenario(name: &str) -> Result<SimConfig> {
    let unknown = || Error::UnknownScenario(name.to_string());
    let (table, row) = name
        .strip_prefix("table")
        .and_then(|s| s.split_once("-row"))
        .ok_or_else(unknown)?;
    let table: usize = table.parse().map_err(|_| unknown())?;
    let row: usize = row.parse().map_err(|_| unknown())?;
    let snr = match table {
        3 | 4 => 2.0,
        5 | 6 => 4.0,
        _ => return Err(unknown()),
    };
    if !(1..=12).contains(&row) {
        return Err(unknown());
    }
    let rhos = [(0.2, 0.2), (0.2, 0.6), (0.6, 0.2), (0.6, 0.6)];
    let shapes = [(50, 40, 1), (50, 40, 4), (50, 100, 4)];
    let (rho_x, rho_t) = rhos[(row - 1) / 3];
    let (n, p, q) = shapes[(row - 1) % 3];
    Ok(SimConfig {
        n,
        p,
        q,
        rho_x,
        rho_t,
        snr,
        ..SimConfig::default()
    })
}

pub fn scenario_names() -> Vec<String> {
    (3..=6)
        .flat_map(|t| (1..=12).map(move |r| format!("table{t}-row{r}")))
        .collect()
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.p % self.q != 0 {
            return Err(Error::Config(format!("p = {} is not divisible by q = {}", self.p, self.q)));
        }
        if !(self.snr > 0.0) || !(self.sigma_x2 > 0.0) {
            return Err(Error::Config("snr and sigma_x2 must be positive".into()));
        }
        if self.n < 2 || self.n_test < 1 || self.replicates < 1 {
            return Err(Error::Config("n ≥ 2, n_test ≥ 1 and replicates ≥ 1 are required".into()));
        }
        if self.grid_len < 2 {
            return Err(Error::InsufficientGrid(self.grid_len));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let last = (self.grid_len - 1) as f64;
        (0..self.grid_len).map(|v| v as f64 / last).collect()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        vec![self.p / self.q; self.q]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthCoefficients {
    /// `p × 5`; row `j` holds the basis coefficients of `β_j`.
    pub b: DMatrix<f64>,
    /// Sorted indices of the non-null curves.
    pub active: Vec<usize>,
    pub spec: BasisSpec,
}

impl TruthCoefficients {
    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    /// Stacked coefficient vector, curve-major.
    pub fn stacked(&self) -> DVector<f64> {
        let k = self.b.ncols();
        DVector::from_fn(self.b.nrows() * k, |i, _| self.b[(i / k, i % k)])
    }
}

/// True coefficients: four zero-sum triples placed at offsets `m·p/4`, so
/// with `q = 4` each composition holds one triple and with `q = 1` the
/// single composition holds all twelve curves.
pub fn truth_coefficients(p: usize, q: usize) -> Result<TruthCoefficients> {
    if q == 0 || p % q != 0 {
        return Err(Error::Config(format!("p = {p} is not divisible by q = {q}")));
    }
    if p / q < 5 {
        return Err(Error::InsufficientBlock(p / q));
    }
    if p % 4 != 0 || 4 % q != 0 {
        return Err(Error::Config(format!(
            "the four active triples need p divisible by 4 and q dividing 4, got p = {p}, q = {q}"
        )));
    }
    let stride = p / 4;
    if stride < 3 {
        return Err(Error::InsufficientBlock(stride));
    }
    let mut b = DMatrix::zeros(p, TRUTH_BASIS);
    let mut active = Vec::with_capacity(12);
    for (m, triple) in ACTIVE_TRIPLES.iter().enumerate() {
        for (r, row) in triple.iter().enumerate() {
            let j = m * stride + r;
            for (a, &v) in row.iter().enumerate() {
                b[(j, a)] = v;
            }
            active.push(j);
        }
    }
    Ok(TruthCoefficients {
        b,
        active,
        spec: BasisSpec::new(4, TRUTH_BASIS, (0.0, 1.0))?,
    })
}

fn lower_cholesky(m: DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.l())
        .ok_or(Error::InvalidCorrelation(rho))
}

/// Draws `V × p_j` latent matrices whose time-major vectorization is
/// `N(0, σ_X² (Σ_T ⊗ Σ_X))` with AR(1) `Σ_T` and compound-symmetry `Σ_X`.
#[derive(Debug, Clone)]
pub struct LatentSampler {
    l_t: DMatrix<f64>,
    l_x: DMatrix<f64>,
    scale: f64,
}

impl LatentSampler {
    pub fn new(steps: usize, parts: usize, rho_x: f64, rho_t: f64, sigma_x2: f64) -> Result<Self> {
        if !(rho_t.abs() < 1.0) {
            return Err(Error::InvalidCorrelation(rho_t));
        }
        if !(rho_x < 1.0) || (parts > 1 && !(rho_x > -1.0 / (parts as f64 - 1.0))) {
            return Err(Error::InvalidCorrelation(rho_x));
        }
        let sigma_t = DMatrix::from_fn(steps, steps, |s, t| rho_t.powi((s as i32 - t as i32).abs()));
        let sigma_x = DMatrix::from_fn(parts, parts, |a, b| if a == b { 1.0 } else { rho_x });
        Ok(Self {
            l_t: lower_cholesky(sigma_t, rho_t)?,
            l_x: lower_cholesky(sigma_x, rho_x)?,
            scale: sigma_x2.sqrt(),
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DMatrix<f64> {
        let xi = DMatrix::from_fn(self.l_t.nrows(), self.l_x.nrows(), |_, _| {
            StandardNormal.sample(rng)
        });
        (&self.l_t * xi * self.l_x.transpose()) * self.scale
    }
}

fn softmax_rows(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = w.clone();
    for mut row in out.row_iter_mut() {
        let max = row.max();
        row.apply(|x| *x = (*x - max).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Softmax-normalized Gaussian compositions for `n` units.
pub fn gen_compositions<R: Rng>(cfg: &SimConfig, n: usize, rng: &mut R) -> Result<Vec<CompositionBlock>> {
    cfg.validate()?;
    let sizes = cfg.block_sizes();
    let sampler = LatentSampler::new(cfg.grid_len, sizes[0], cfg.rho_x, cfg.rho_t, cfg.sigma_x2)?;
    let mut blocks: Vec<CompositionBlock> = sizes
        .iter()
        .enumerate()
        .map(|(j, &s)| CompositionBlock {
            name: format!("c{}", j + 1),
            parts: (1..=s).map(|l| format!("c{}x{l}", j + 1)).collect(),
            shares: vec![DMatrix::zeros(n, s); cfg.grid_len],
        })
        .collect();
    for i in 0..n {
        for block in &mut blocks {
            let x = softmax_rows(&sampler.sample(rng));
            for (v, slice) in block.shares.iter_mut().enumerate() {
                slice.row_mut(i).copy_from(&x.row(v));
            }
        }
    }
    Ok(blocks)
}

/// Noise variance giving `Var(signal entries) / σ² = snr`, with the
/// variance pooled over all units and grid points.
pub fn calibrate_noise(signal: &DMatrix<f64>, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::Config(format!("snr must be positive, got {snr}")));
    }
    let m = signal.len();
    if m < 2 {
        return Err(Error::DegenerateSignal);
    }
    let mean = signal.mean();
    let var = signal.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
    if !(var > 0.0) {
        return Err(Error::DegenerateSignal);
    }
    Ok(var / snr)
}

/// `Σ_l log x_il(t_v) β_l(t_v)` for every unit and grid point.
pub fn signal(blocks: &[CompositionBlock], truth: &TruthCoefficients, grid: &[f64]) -> Result<DMatrix<f64>> {
    let n = blocks.first().map_or(0, |b| b.shares.first().map_or(0, |s| s.nrows()));
    let coefs = truth.stacked();
    let mut out = DMatrix::zeros(n, grid.len());
    for (v, &t) in grid.iter().enumerate() {
        let beta = truth.spec.curves_at(coefs.as_slice(), t)?;
        let mut start = 0;
        for block in blocks {
            let slice = &block.shares[v];
            for l in 0..slice.ncols() {
                let bl = beta[start + l];
                if bl != 0.0 {
                    for i in 0..n {
                        out[(i, v)] += slice[(i, l)].ln() * bl;
                    }
                }
            }
            start += slice.ncols();
        }
        if start != truth.p() {
            return Err(Error::Dimension(format!("{start} parts for {} curves", truth.p())));
        }
    }
    Ok(out)
}

/// Signal plus iid `N(0, σ²)` noise.
pub fn gen_response<R: Rng>(
    blocks: &[CompositionBlock],
    truth: &TruthCoefficients,
    grid: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut y = signal(blocks, truth, grid)?;
    add_noise(&mut y, sigma2, rng);
    Ok(y)
}

fn add_noise<R: Rng>(y: &mut DMatrix<f64>, sigma2: f64, rng: &mut R) {
    let sd = sigma2.sqrt();
    for e in y.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *e += sd * z;
    }
}

fn panel_from(blocks: Vec<CompositionBlock>, y: DMatrix<f64>, grid: Vec<f64>, prefix: &str) -> Result<FunctionalPanel> {
    let units = (0..y.nrows()).map(|i| format!("{prefix}{}", i + 1)).collect();
    FunctionalPanel::new(units, grid, y, blocks, Vec::new())
}

/// One replicate's training and test panels.
#[derive(Debug, Clone)]
pub struct SimData {
    pub train: FunctionalPanel,
    pub test: FunctionalPanel,
    pub sigma2: f64,
}

/// Draws a training panel, calibrates the noise on its signal, then draws
/// an independent test panel with the same noise level.
pub fn simulate<R: Rng>(cfg: &SimConfig, truth: &TruthCoefficients, rng: &mut R) -> Result<SimData> {
    let grid = cfg.grid();
    let blocks = gen_compositions(cfg, cfg.n, rng)?;
    let mut y = signal(&blocks, truth, &grid)?;
    let sigma2 = calibrate_noise(&y, cfg.snr)?;
    add_noise(&mut y, sigma2, rng);
    let train = panel_from(blocks, y, grid.clone(), "train")?;
    let test_blocks = gen_compositions(cfg, cfg.n_test, rng)?;
    let y_test = gen_response(&test_blocks, truth, &grid, sigma2, rng)?;
    let test = panel_from(test_blocks, y_test, grid, "test")?;
    Ok(SimData { train, test, sigma2 })
}

/// `Σ_v ‖y(t_v) − Z_c β̂_c(t_v) − Z β̂(t_v)‖² / (V n)` on a panel, with
/// full-part coefficients `b` and control coefficients `b_c`.
pub fn prediction_error(
    b: &DVector<f64>,
    b_c: &DVector<f64>,
    spec: &BasisSpec,
    panel: &FunctionalPanel,
) -> Result<f64> {
    let data = crate::design::RegressionData::from_panel(panel)?;
    let yhat = crate::solver::predict_with(b, b_c, &data.z, &data.zc, spec, &data.grid)?;
    let r = &data.y - yhat;
    Ok(r.norm_squared() / r.len() as f64)
}

/// `100 · Σ_j (∫ (β̂_j − β_j)²)^{1/2} / p` on a 501-point trapezoid grid.
pub fn estimation_error(b: &DVector<f64>, spec: &BasisSpec, truth: &TruthCoefficients) -> Result<f64> {
    let p = truth.p();
    if b.len() != p * spec.count() {
        return Err(Error::Dimension("estimate and truth have different curve counts".into()));
    }
    let (lo, hi) = truth.spec.domain();
    let grid: Vec<f64> = (0..FINE_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (FINE_GRID - 1) as f64)
        .collect();
    let w = trapezoid_weights(&grid)?;
    let coefs = truth.stacked();
    let mut sq = vec![0.0; p];
    for (&t, wv) in grid.iter().zip(&w) {
        let est = spec.curves_at(b.as_slice(), t)?;
        let tru = truth.spec.curves_at(coefs.as_slice(), t)?;
        for j in 0..p {
            sq[j] += wv * (est[j] - tru[j]).powi(2);
        }
    }
    Ok(100.0 * sq.iter().map(|s| s.sqrt()).sum::<f64>() / p as f64)
}

/// `(|Ŝ∖S| / |Sᶜ|, |S∖Ŝ| / |S|)` as fractions.
pub fn fpr_fnr(s_hat: &[usize], s_true: &[usize], p: usize) -> Result<(f64, f64)> {
    let mut truth = vec![false; p];
    for &j in s_true {
        truth[j] = true;
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::UndefinedRate("false negative rate: no true positives"));
    }
    if positives == p {
        return Err(Error::UndefinedRate("false positive rate: no true negatives"));
    }
    let mut fp = 0;
    let mut tp = 0;
    let mut seen = vec![false; p];
    for &j in s_hat {
        if j >= p || seen[j] {
            continue;
        }
        seen[j] = true;
        if truth[j] {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    Ok((
        fp as f64 / (p - positives) as f64,
        (positives - tp) as f64 / positives as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    Cgl,
    Bgl,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Cgl => "CGL",
            MethodKind::Bgl => "BGL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CGL" => Ok(MethodKind::Cgl),
            "BGL" => Ok(MethodKind::Bgl),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

/// Metrics of one fitted replicate; rates are percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateMetrics {
    pub fpr: f64,
    pub fnr: f64,
    pub prediction_error: f64,
    pub estimation_error: f64,
    pub converged: bool,
    pub lambda: f64,
    pub k: usize,
}

/// Tuning used inside every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySettings {
    pub cv: CvSettings,
    pub folds: usize,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            cv: CvSettings::default(),
            folds: 10,
        }
    }
}

fn stable_hash(s: &str) -> u64 {
    // FNV-1a: stable across platforms and releases.
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Stream id of replicate `rep` of a scenario; `lane` separates the data
/// draws from the baseline's reference draws.
fn replicate_stream(scenario: &str, rep: usize, lane: u64) -> u64 {
    stable_hash(scenario)
        .wrapping_add((rep as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(lane)
}

/// Runs one replicate of a scenario for every requested method. The data
/// and folds are shared across methods.
pub fn run_replicate(
    name: &str,
    cfg: &SimConfig,
    truth: &TruthCoefficients,
    rep: usize,
    methods: &[MethodKind],
    settings: &StudySettings,
) -> Result<Vec<ReplicateMetrics>> {
    let mut rng = stream_rng(cfg.seed, replicate_stream(name, rep, 0));
    let data = simulate(cfg, truth, &mut rng)?;
    let folds = kfold_partition(cfg.n, settings.folds, &mut rng)?;
    let sizes = cfg.block_sizes();
    methods
        .iter()
        .map(|&kind| {
            let method = match kind {
                MethodKind::Cgl => Method::Constrained,
                MethodKind::Bgl => {
                    let mut r = stream_rng(cfg.seed, replicate_stream(name, rep, 1));
                    Method::Baseline {
                        references: random_references(&sizes, &mut r),
                    }
                }
            };
            let cv = cross_validate(&data.train, &method, &settings.cv, &folds)?;
            let (lambda, k) = cv.chosen;
            let tuned = fit_at(&data.train, &method, &settings.cv, lambda, k)?;
            let report = active_set(&tuned.coefficients, &tuned.spec, &data.train.grid, cfg.p)?;
            let (fpr, fnr) = fpr_fnr(&report.active_set, &truth.active, cfg.p)?;
            Ok(ReplicateMetrics {
                fpr: 100.0 * fpr,
                fnr: 100.0 * fnr,
                prediction_error: prediction_error(
                    &tuned.coefficients,
                    &tuned.fit.b_c_hat,
                    &tuned.spec,
                    &data.test,
                )?,
                estimation_error: estimation_error(&tuned.coefficients, &tuned.spec, truth)?,
                converged: tuned.fit.converged,
                lambda,
                k,
            })
        })
        .collect()
}

/// One line of the study table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub scenario: String,
    pub rho_x: f64,
    pub rho_t: f64,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub snr: f64,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub se: Option<f64>,
    pub replicates: usize,
    pub nonconverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    pub fn get(&self, scenario: &str, method: MethodKind, metric: &str) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.method == method.name() && r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const METRICS: [&str; 4] = ["fpr", "fnr", "prediction_error", "estimation_error"];

fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, Some((var / m).sqrt()))
}

/// Runs every scenario for `cfg.replicates` replicates and summarizes the
/// metrics as mean and standard error per scenario, method and metric.
pub fn run_study(
    scenarios: &[(String, SimConfig)],
    methods: &[MethodKind],
    settings: &StudySettings,
) -> Result<StudyTable> {
    let mut rows = Vec::new();
    for (name, cfg) in scenarios {
        cfg.validate()?;
        let truth = truth_coefficients(cfg.p, cfg.q)?;
        let per_rep: Vec<Vec<ReplicateMetrics>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| run_replicate(name, cfg, &truth, rep, methods, settings))
            .collect::<Result<_>>()?;
        for (mi, &kind) in methods.iter().enumerate() {
            let reps: Vec<&ReplicateMetrics> = per_rep.iter().map(|r| &r[mi]).collect();
            let nonconverged = reps.iter().filter(|r| !r.converged).count();
            for metric in METRICS {
                let values: Vec<f64> = reps
                    .iter()
                    .map(|r| match metric {
                        "fpr" => r.fpr,
                        "fnr" => r.fnr,
                        "prediction_error" => r.prediction_error,
                        _ => r.estimation_error,
                    })
                    .collect();
                let (mean, se) = mean_se(&values);
                rows.push(StudyRow {
                    scenario: name.clone(),
                    rho_x: cfg.rho_x,
                    rho_t: cfg.rho_t,
                    n: cfg.n,
                    p: cfg.p,
                    q: cfg.q,
                    snr: cfg.snr,
                    method: kind.name().to_string(),
                    metric: metric.to_string(),
                    mean,
                    se,
                    replicates: cfg.replicates,
                    nonconverged,
                });
            }
        }
    }
    Ok(StudyTable { rows })
}
