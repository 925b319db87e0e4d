//! Tuning: bandwidth rules, detector scaling, simulation-based threshold
//! models, hold-out choice of the l1 tuning parameter and bottom-up merging
//! of multiscale results.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{ChangePoint, ChangePointSet};
use crate::error::{Error, Result};
use crate::factor::{FactorAdjustment, FactorConfig, XiAcvSource};
use crate::rng::{derive_seed, STREAM_CALIBRATION};
use crate::simulate::{gen_dataset, ChiModel, DgpSpec, Scenario};
use crate::stage1::{stage1_grid, Stage1Trace};
use crate::stage2::{build_yule_walker, l1_yule_walker_path, LambdaRule, SequentialDetector, Stage2Params, VarDetector, YuleWalkerSystem};

/// `max(1, floor(G^{1/3}))`, computed with an exact integer correction.
pub fn kernel_bandwidth(g: usize) -> usize {
    let mut r = (g as f64).cbrt().floor() as usize;
    while (r + 1).pow(3) <= g {
        r += 1;
    }
    while r > 0 && r.pow(3) > g {
        r -= 1;
    }
    r.max(1)
}

/// Bandwidth sets for both stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub stage1: Vec<usize>,
    pub stage2: Vec<usize>,
}

impl BandwidthPlan {
    pub fn kernel_bandwidth(&self, g: usize) -> usize {
        kernel_bandwidth(g)
    }

    /// Sorts, de-duplicates and checks `G >= 2(m(G) + 1)` and `2G <= n`.
    pub fn validated(mut self, n: usize, d: usize) -> Result<Self> {
        for set in [&mut self.stage1, &mut self.stage2] {
            set.sort_unstable();
            set.dedup();
        }
        for &g in self.stage1.iter().chain(&self.stage2) {
            let m = kernel_bandwidth(g);
            if g < 2 * (m + 1) {
                return Err(Error::Config(format!("bandwidth G={g} is below 2(m+1)={}", 2 * (m + 1))));
            }
            if 2 * g > n {
                return Err(Error::Config(format!("bandwidth G={g} exceeds n/2 for n={n}")));
            }
        }
        for &g in &self.stage2 {
            if g / 2 <= d {
                return Err(Error::Config(format!("stage-2 bandwidth G={g} too small for VAR order d={d}")));
            }
        }
        Ok(self)
    }
}

/// Stage 1: `{n/10, n/8, n/6, n/4}`; Stage 2: four equispaced integers from
/// `floor(2.5p)` to `floor(n/4)`.
pub fn default_bandwidths(n: usize, p: usize) -> Result<BandwidthPlan> {
    let stage1 = vec![n / 10, n / 8, n / 6, n / 4];
    let lo = 5 * p / 2;
    let hi = n / 4;
    if lo > hi {
        return Err(Error::Config(format!(
            "no stage-2 bandwidths: floor(2.5p)={lo} exceeds floor(n/4)={hi} (n={n}, p={p})"
        )));
    }
    let mut stage2: Vec<usize> = (0..4).map(|k| lo + k * (hi - lo) / 3).collect();
    stage2.dedup();
    Ok(BandwidthPlan { stage1, stage2 })
}

/// Divides each frequency's detector by its value at anchor `v = G`.
pub fn scale_stage1(trace: &Stage1Trace) -> Result<Stage1Trace> {
    let g = trace.bandwidth;
    let Some(base_idx) = trace.anchors.iter().position(|&v| v == g) else {
        return Err(Error::Contract(format!("trace has no anchor at v=G={g} for scaling")));
    };
    let base = trace.values[base_idx].clone();
    if base.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Degenerate(format!("stage-1 scale at v=G={g} has a zero entry")));
    }
    let values = trace
        .values
        .iter()
        .map(|row| row.iter().zip(&base).map(|(t, b)| t / b).collect())
        .collect();
    Ok(Stage1Trace { values, ..trace.clone() })
}

/// Scaled Stage-1 statistic `max_l T_v(omega_l) / T_G(omega_l)` per anchor.
pub fn scaled_stage1_max(trace: &Stage1Trace) -> Result<Vec<f64>> {
    let scaled = scale_stage1(trace)?;
    Ok((0..scaled.anchors.len()).map(|i| scaled.peak(i).1).collect())
}

/// `raw / scale`, where `scale` comes from [`crate::stage2::stage2_scale`].
pub fn scale_stage2(raw: f64, scale: f64) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::Degenerate("stage-2 scale must be positive".into()));
    }
    Ok(raw / scale)
}

/// Which statistic a threshold model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdStage {
    /// Features `(1, log log n, log G)`.
    Stage1,
    /// Features `(1, log log n, log log p, log G)`.
    Stage2,
}

impl ThresholdStage {
    pub fn feature_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::Stage1 => &["intercept", "log_log_n", "log_G"],
            Self::Stage2 => &["intercept", "log_log_n", "log_log_p", "log_G"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn features(self, n: usize, p: usize, g: usize) -> Vec<f64> {
        let lln = (n as f64).ln().ln();
        let lg = (g as f64).ln();
        match self {
            Self::Stage1 => vec![1.0, lln, lg],
            Self::Stage2 => vec![1.0, lln, (p as f64).ln().ln(), lg],
        }
    }
}

/// Log-linear threshold rule fitted to null-simulation percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub stage: ThresholdStage,
    pub features: Vec<String>,
    pub coefficients: Vec<f64>,
    pub tau: f64,
    pub r2_adj: f64,
    pub observations: usize,
}

impl ThresholdModel {
    /// Threshold for the scaled statistic at `(n, p, G)`.
    pub fn threshold(&self, n: usize, p: usize, g: usize) -> f64 {
        let x = self.stage.features(n, p, g);
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>().exp()
    }

    /// Fits `log(percentile)` on the stage features by least squares.
    pub fn fit(stage: ThresholdStage, rows: &[(usize, usize, usize)], log_percentiles: &[f64], tau: f64) -> Result<Self> {
        if rows.is_empty() || rows.len() != log_percentiles.len() {
            return Err(Error::Calibration("need one response per grid cell".into()));
        }
        let k = stage.features(2, 2, 2).len();
        let x = DMatrix::from_fn(rows.len(), k, |i, j| {
            let (n, p, g) = rows[i];
            stage.features(n, p, g)[j]
        });
        let y = DVector::from_column_slice(log_percentiles);
        let (coef, r2_adj) = ols(&x, &y)?;
        Ok(Self {
            stage,
            features: stage.feature_names(),
            coefficients: coef.iter().copied().collect(),
            tau,
            r2_adj,
            observations: rows.len(),
        })
    }
}

/// Least squares via SVD. Under-determined designs get the minimum-norm
/// interpolating solution (reported with `R^2_adj = 1`); a rank-deficient
/// design with at least as many rows as columns is an error.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (rows, cols) = x.shape();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * rows.max(cols) as f64;
    let rank = svd.rank(tol);
    if rows >= cols && rank < cols {
        return Err(Error::Calibration(format!("singular design matrix (rank {rank} < {cols})")));
    }
    let coef = svd.solve(y, tol).map_err(|e| Error::Calibration(e.to_string()))?;
    if rows <= cols {
        return Ok((coef, 1.0));
    }
    let fitted = x * &coef;
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sse: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 1.0 };
    let r2_adj = 1.0 - (1.0 - r2) * (rows - 1) as f64 / (rows - cols) as f64;
    Ok((coef, r2_adj))
}

/// Linear-interpolation sample quantile at level `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Calibration("percentile of an empty sample".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// One `(n, p, q, d)` null-simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    /// Bandwidth plan; the default plan for `(n, p)` when absent.
    #[serde(default)]
    pub bandwidths: Option<BandwidthPlan>,
}

fn default_q() -> usize {
    2
}

fn default_d() -> usize {
    1
}

/// How the Stage-2 null statistic is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Mode {
    /// Autocovariances adjusted by a factor model fitted without changes.
    FactorAdjusted,
    /// Raw autocovariances of `X`.
    Standalone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub grid: Vec<CalibrationCell>,
    pub replicates: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    /// Factor model of the null data.
    #[serde(default = "default_chi")]
    pub chi: ChiModel,
    #[serde(default = "default_mode")]
    pub stage2_mode: Stage2Mode,
    #[serde(default)]
    pub lambda: LambdaRule,
    #[serde(default)]
    pub factor: FactorConfig,
}

fn default_tau() -> f64 {
    0.05
}

fn default_chi() -> ChiModel {
    ChiModel::C1
}

fn default_mode() -> Stage2Mode {
    Stage2Mode::FactorAdjusted
}

impl CalibrationConfig {
    /// Two-by-two grid `n in {500, 1000}`, `p in {20, 40}` with `B = 50`.
    pub fn desk(seed: u64) -> Self {
        let grid = [(500, 20), (500, 40), (1000, 20), (1000, 40)]
            .into_iter()
            .map(|(n, p)| CalibrationCell { n, p, q: 2, d: 1, bandwidths: None })
            .collect();
        Self {
            grid,
            replicates: 50,
            tau: 0.05,
            seed,
            chi: ChiModel::C1,
            stage2_mode: Stage2Mode::FactorAdjusted,
            lambda: LambdaRule::default(),
            factor: FactorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 20 {
            return Err(Error::Config(format!("calibration needs at least 20 replicates, got {}", self.replicates)));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("calibration grid is empty".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.stage2_mode == Stage2Mode::FactorAdjusted && self.chi == ChiModel::None {
            return Err(Error::Config("factor-adjusted stage-2 calibration needs a factor model".into()));
        }
        Ok(())
    }
}

/// Maxima of the scaled statistics on one null replicate, per bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullMaxima {
    pub stage1: Vec<(usize, f64)>,
    pub stage2: Vec<(usize, f64)>,
}

/// Percentiles recorded per `(cell, G)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub stage: ThresholdStage,
    pub n: usize,
    pub p: usize,
    pub g: usize,
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub stage1: ThresholdModel,
    pub stage2: ThresholdModel,
    pub stage2_mode: Stage2Mode,
    pub points: Vec<CalibrationPoint>,
}

fn null_spec(cell: &CalibrationCell, chi: ChiModel, seed: u64) -> DgpSpec {
    DgpSpec {
        n: cell.n,
        p: cell.p,
        q: if chi == ChiModel::None { 0 } else { cell.q },
        d: cell.d,
        scenario: Scenario::Custom,
        chi,
        chi_changes: Vec::new(),
        xi_changes: Vec::new(),
        beta: 1.0,
        seed,
    }
}

/// Scaled null maxima of both stages on one dataset.
pub fn null_maxima(
    x: &crate::panel::PanelSeries,
    plan: &BandwidthPlan,
    d: usize,
    mode: Stage2Mode,
    lambda: LambdaRule,
    factor: &FactorConfig,
) -> Result<NullMaxima> {
    let n = x.len();
    let mut stage1 = Vec::with_capacity(plan.stage1.len());
    for &g in &plan.stage1 {
        let m = kernel_bandwidth(g);
        let trace = Stage1Trace::compute(x, g, m, stage1_grid(n, g)?)?;
        let max = scaled_stage1_max(&trace)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
        stage1.push((g, max));
    }
    let adjustment;
    let source = match mode {
        Stage2Mode::Standalone => XiAcvSource::Raw(x),
        Stage2Mode::FactorAdjusted => {
            let m = plan.stage1.iter().min().map_or(kernel_bandwidth(n), |&g| kernel_bandwidth(g));
            adjustment = FactorAdjustment::fit(x, &[], m, d, factor)?;
            XiAcvSource::Adjusted { x, factors: &adjustment }
        }
    };
    let mut stage2 = Vec::with_capacity(plan.stage2.len());
    for &g in &plan.stage2 {
        let params = Stage2Params { bandwidth: g, order: d, threshold: f64::INFINITY, eta: 0.0, lambda, scale: true };
        let mut det = VarDetector::new(source, params)?;
        let est = det.fit(g)?;
        let mut max = f64::NEG_INFINITY;
        for v in g..=n - g {
            max = max.max(det.detect(&est, v)?);
        }
        stage2.push((g, max));
    }
    Ok(NullMaxima { stage1, stage2 })
}

/// Simulates null datasets over the grid, takes the `100(1 - tau)`th
/// percentile of the scaled maxima per `(cell, G)` and fits the log-linear
/// threshold models. Replicates are independent and run in parallel; every
/// replicate has its own RNG stream, so results do not depend on the
/// number of workers.
pub fn calibrate_thresholds(cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    let plans: Vec<BandwidthPlan> = cfg
        .grid
        .iter()
        .map(|cell| match &cell.bandwidths {
            Some(plan) => plan.clone().validated(cell.n, cell.d),
            None => default_bandwidths(cell.n, cell.p)?.validated(cell.n, cell.d),
        })
        .collect::<Result<_>>()?;
    let units: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|c| (0..cfg.replicates).map(move |b| (c, b)))
        .collect();
    let maxima = units
        .par_iter()
        .map(|&(c, b)| {
            let cell = &cfg.grid[c];
            let seed = derive_seed(cfg.seed, &[STREAM_CALIBRATION, c as u64, b as u64]);
            let data = gen_dataset(&null_spec(cell, cfg.chi, seed))?;
            let x = data.x.demeaned();
            null_maxima(&x, &plans[c], cell.d, cfg.stage2_mode, cfg.lambda, &cfg.factor)
        })
        .collect::<Result<Vec<_>>>()?;

    let level = 1.0 - cfg.tau;
    let mut points = Vec::new();
    for (c, cell) in cfg.grid.iter().enumerate() {
        let reps = &maxima[c * cfg.replicates..(c + 1) * cfg.replicates];
        for (i, &g) in plans[c].stage1.iter().enumerate() {
            let sample: Vec<f64> = reps.iter().map(|r| r.stage1[i].1).collect();
            points.push(CalibrationPoint { stage: ThresholdStage::Stage1, n: cell.n, p: cell.p, g, percentile: percentile(&sample, level)? });
        }
        for (i, &g) in plans[c].stage2.iter().enumerate() {
            let sample: Vec<f64> = reps.iter().map(|r| r.stage2[i].1).collect();
            points.push(CalibrationPoint { stage: ThresholdStage::Stage2, n: cell.n, p: cell.p, g, percentile: percentile(&sample, level)? });
        }
    }
    let fit = |stage: ThresholdStage| {
        let sel: Vec<&CalibrationPoint> = points.iter().filter(|pt| pt.stage == stage).collect();
        if sel.iter().any(|pt| !(pt.percentile > 0.0)) {
            return Err(Error::Calibration(format!("{stage:?} has a non-positive percentile")));
        }
        let rows: Vec<(usize, usize, usize)> = sel.iter().map(|pt| (pt.n, pt.p, pt.g)).collect();
        let y: Vec<f64> = sel.iter().map(|pt| pt.percentile.ln()).collect();
        ThresholdModel::fit(stage, &rows, &y, cfg.tau)
    };
    Ok(CalibrationResult {
        stage1: fit(ThresholdStage::Stage1)?,
        stage2: fit(ThresholdStage::Stage2)?,
        stage2_mode: cfg.stage2_mode,
        points,
    })
}

/// `points` values log-spaced over `[0.01, 1] * |gvec|_inf`.
pub fn lambda_grid(sys: &YuleWalkerSystem, points: usize) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::Config("lambda grid must not be empty".into()));
    }
    let top = sys.gvec.amax();
    if !(top > 0.0) {
        return Err(Error::Degenerate("Yule-Walker target is identically zero".into()));
    }
    if points == 1 {
        return Ok(vec![top]);
    }
    let (lo, hi) = (0.01f64.ln(), 0.0f64);
    Ok((0..points)
        .map(|i| top * (lo + (hi - lo) * i as f64 / (points - 1) as f64).exp())
        .collect())
}

/// Hold-out choice of lambda on the window `I_anchor(G)`: fit on the first
/// `floor(G/2)` points, score `|Gmat_2 beta - gvec_2|_inf` on the rest,
/// return the minimiser (smallest lambda on ties).
pub fn cv_lambda(source: &XiAcvSource<'_>, anchor: usize, g: usize, d: usize, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid must not be empty".into()));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let h = g / 2;
    if h <= d || g - h <= d || anchor < g {
        return Err(Error::Config(format!("cross-validation window G={g} too small for d={d}")));
    }
    let train = build_yule_walker(&source.acv_set(anchor - (g - h), h, d)?, d)?;
    let test = build_yule_walker(&source.acv_set(anchor, g - h, d)?, d)?;
    cv_lambda_on(&train, &test, grid)
}

/// Hold-out selection given explicit training and test systems.
pub fn cv_lambda_on(train: &YuleWalkerSystem, test: &YuleWalkerSystem, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid must not be empty".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let fits = l1_yule_walker_path(train, &sorted)?;
    let mut best = (sorted[0], f64::INFINITY);
    for (&lambda, beta) in sorted.iter().zip(&fits) {
        let score = test.residual(beta)?.amax();
        if score < best.1 {
            best = (lambda, score);
        }
    }
    Ok(best.0)
}

/// Bottom-up merge: keep everything from the finest bandwidth, then accept
/// an estimate at `G_h` only if it is at least `G_h / 2` away from every
/// estimate accepted so far.
pub fn multiscale_merge(results: &[(usize, ChangePointSet)]) -> ChangePointSet {
    let mut levels: Vec<&(usize, ChangePointSet)> = results.iter().collect();
    levels.sort_by_key(|(g, _)| *g);
    let mut out = ChangePointSet::new();
    for (h, (g, set)) in levels.into_iter().enumerate() {
        let mut pts: Vec<&ChangePoint> = set.points().iter().collect();
        pts.sort_by_key(|c| c.location);
        for c in pts {
            let far = out.points().iter().all(|a| 2 * a.location.abs_diff(c.location) >= *g);
            if h == 0 || far {
                out.insert(c.clone());
            }
        }
    }
    out
}
