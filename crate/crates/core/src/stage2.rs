//! Stage 2: segmentation of the idiosyncratic VAR component.
//!
//! The VAR parameters enter only through the Yule-Walker system built from
//! local autocovariances. An l1-regularised estimate is fitted at a few
//! anchors, and between fits the sup-norm difference of Yule-Walker
//! residuals over adjacent windows is scanned for exceedances.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{ChangePoint, ChangePointSet, Stage};
use crate::error::{Error, Result};
use crate::factor::XiAcvSource;
use crate::lp::L1Solver;
use crate::panel::PanelSeries;
use crate::spectral::LagCovSet;

/// `Gmat beta = gvec`: block `(r, c)` of `Gmat` is `Gamma(r - c)` and block
/// `r` of `gvec` is `Gamma(r + 1)`, for `r, c = 0..d`.
#[derive(Debug, Clone, PartialEq)]
pub struct YuleWalkerSystem {
    pub gmat: DMatrix<f64>,
    pub gvec: DMatrix<f64>,
}

impl YuleWalkerSystem {
    pub fn dim(&self) -> usize {
        self.gvec.ncols()
    }

    pub fn order(&self) -> usize {
        self.gvec.nrows() / self.gvec.ncols().max(1)
    }

    /// `Gmat beta - gvec`.
    pub fn residual(&self, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if beta.nrows() != self.gmat.ncols() || beta.ncols() != self.gvec.ncols() {
            return Err(Error::Contract(format!(
                "beta is {}x{} but the system expects {}x{}",
                beta.nrows(),
                beta.ncols(),
                self.gmat.ncols(),
                self.gvec.ncols()
            )));
        }
        Ok(&self.gmat * beta - &self.gvec)
    }
}

/// Assembles the Yule-Walker system of order `d` from lags `0..=d`.
pub fn build_yule_walker(acv: &LagCovSet, d: usize) -> Result<YuleWalkerSystem> {
    if d < 1 {
        return Err(Error::Config("VAR order must be at least 1".into()));
    }
    if acv.max_lag() < d {
        return Err(Error::Contract(format!("Yule-Walker order {d} needs lags 0..={d}, have 0..={}", acv.max_lag())));
    }
    let p = acv.dim();
    let mut gmat = DMatrix::zeros(p * d, p * d);
    for r in 0..d {
        for c in 0..d {
            let block = acv.lag(r as isize - c as isize)?;
            gmat.view_mut((r * p, c * p), (p, p)).copy_from(&block);
        }
    }
    let mut gvec = DMatrix::zeros(p * d, p);
    for r in 0..d {
        gvec.view_mut((r * p, 0), (p, p)).copy_from(acv.at(r + 1));
    }
    Ok(YuleWalkerSystem { gmat, gvec })
}

/// An l1-regularised Yule-Walker fit.
#[derive(Debug, Clone, PartialEq)]
pub struct VarEstimate {
    /// `[A_1, ..., A_d]^T`, a `pd x p` matrix.
    pub beta: DMatrix<f64>,
    pub lambda: f64,
    pub anchor: usize,
    /// `|Gmat beta - gvec|_inf`.
    pub residual: f64,
}

impl VarEstimate {
    /// Non-zero entries as `(row, col, value)` triplets.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for c in 0..self.beta.ncols() {
            for r in 0..self.beta.nrows() {
                let v = self.beta[(r, c)];
                if v != 0.0 {
                    out.push((r, c, v));
                }
            }
        }
        out
    }
}

const FEASIBILITY_SLACK: f64 = 1e-7;

/// `argmin |beta|_1` subject to `|Gmat beta - gvec|_inf <= lambda`, solved
/// one column of `gvec` at a time.
pub fn l1_yule_walker(sys: &YuleWalkerSystem, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(l1_yule_walker_path(sys, &[lambda])?.pop().expect("one lambda in, one fit out"))
}

/// Fits for every lambda in `lambdas`, returned in the same order. Each
/// column walks the grid from the largest lambda down, reusing its solver.
pub fn l1_yule_walker_path(sys: &YuleWalkerSystem, lambdas: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("lambda must be positive and finite, got {bad}")));
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let cols = (0..sys.gvec.ncols())
        .into_par_iter()
        .map(|j| {
            let mut solver = L1Solver::new(&sys.gmat)?;
            let mut out = vec![DVector::zeros(sys.gmat.ncols()); lambdas.len()];
            for &i in &order {
                let lambda = lambdas[i];
                let b = solver.solve(sys.gvec.column(j), lambda, j)?;
                let slack = (&sys.gmat * &b - sys.gvec.column(j)).amax();
                if slack > lambda + FEASIBILITY_SLACK {
                    return Err(Error::Numerical(format!(
                        "column {j}: LP solution violates the constraint by {:.3e}",
                        slack - lambda
                    )));
                }
                out[i] = b;
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<DVector<f64>>>>>()?;
    Ok((0..lambdas.len())
        .map(|i| DMatrix::from_columns(&cols.iter().map(|c| c[i].clone()).collect::<Vec<_>>()))
        .collect())
}

/// Fits `beta` on `sys` and records the feasibility residual.
pub fn fit_var(sys: &YuleWalkerSystem, lambda: f64, anchor: usize) -> Result<VarEstimate> {
    let beta = l1_yule_walker(sys, lambda)?;
    let residual = sys.residual(&beta)?.amax();
    Ok(VarEstimate { beta, lambda, anchor, residual })
}

/// `|(GmatL beta - gvecL) - (GmatR beta - gvecR)|_inf`.
pub fn stage2_detector(beta: &DMatrix<f64>, left: &YuleWalkerSystem, right: &YuleWalkerSystem) -> Result<f64> {
    if left.gmat.shape() != right.gmat.shape() || left.gvec.shape() != right.gvec.shape() {
        return Err(Error::Contract("left and right Yule-Walker systems differ in shape".into()));
    }
    let diff = left.residual(beta)? - right.residual(beta)?;
    Ok(diff.amax())
}

/// How the l1 tuning parameter is chosen at each fitting anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// Hold-out selection over a log-spaced grid (see
    /// [`crate::tuning::cv_lambda`]).
    CrossValidated { points: usize },
}

impl Default for LambdaRule {
    fn default() -> Self {
        Self::CrossValidated { points: 10 }
    }
}

/// One Stage-2 scan at a single bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Params {
    pub bandwidth: usize,
    pub order: usize,
    /// Threshold applied to the (scaled) detector.
    pub threshold: f64,
    pub eta: f64,
    pub lambda: LambdaRule,
    /// Divide the detector by the half-window scale of the first `G`
    /// observations.
    pub scale: bool,
}

/// A model the sequential scan can fit and then query for detector values.
pub trait SequentialDetector {
    type Estimate;

    fn fit(&mut self, anchor: usize) -> Result<Self::Estimate>;

    /// Detector at anchor `v`; calls for one estimate arrive with increasing `v`.
    fn detect(&mut self, estimate: &Self::Estimate, v: usize) -> Result<f64>;
}

/// Output of [`sequential_scan`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome<E> {
    pub points: ChangePointSet,
    /// `(v, detector)` for every evaluated anchor, in evaluation order.
    pub trace: Vec<(usize, f64)>,
    pub estimates: Vec<E>,
}

/// The fit-then-screen loop.
///
/// Starting from `v0 = G`: fit at `v0`, find the first `v in [v0, n - G]`
/// whose detector exceeds the threshold (`c_check`), take the maximiser over
/// `[c_check, min(c_check + G, n - G)]` as the change point, then move to
/// `v0 = min(c_check + 2G, c_hat + (eta + 1) G)` and repeat while
/// `v0 <= n - G`.
pub fn sequential_scan<M: SequentialDetector>(
    model: &mut M,
    n: usize,
    g: usize,
    threshold: f64,
    eta: f64,
) -> Result<ScanOutcome<M::Estimate>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("stage-2 eta must lie in [0, 1], got {eta}")));
    }
    let mut out = ScanOutcome { points: ChangePointSet::new(), trace: Vec::new(), estimates: Vec::new() };
    if g < 1 || n < 2 * g {
        return Ok(out);
    }
    let last = n - g;
    let mut v0 = g;
    while v0 <= last {
        let est = model.fit(v0)?;
        let mut exceed = None;
        for v in v0..=last {
            let t = model.detect(&est, v)?;
            out.trace.push((v, t));
            if t > threshold {
                exceed = Some((v, t));
                break;
            }
        }
        let Some((check, t_check)) = exceed else {
            out.estimates.push(est);
            break;
        };
        let end = (check + g).min(last);
        let mut best = (check, t_check);
        for v in check + 1..=end {
            let t = model.detect(&est, v)?;
            out.trace.push((v, t));
            if t > best.1 {
                best = (v, t);
            }
        }
        out.estimates.push(est);
        out.points.insert(ChangePoint { location: best.0, bandwidth: g, stat: best.1, stage: Stage::Var });
        let jump = ((eta + 1.0) * g as f64).floor() as usize;
        v0 = (check + 2 * g).min(best.0 + jump);
    }
    Ok(out)
}

/// Rolling un-normalised lag sums `S_l(v) = sum_{t=v-G+1+l}^{v} X_{t-l} X_t^T`.
struct RollingAcv<'a> {
    x: &'a PanelSeries,
    g: usize,
    max_lag: usize,
    v: usize,
    sums: Vec<DMatrix<f64>>,
    since_exact: usize,
}

const RESYNC_EVERY: usize = 128;

impl<'a> RollingAcv<'a> {
    fn new(x: &'a PanelSeries, g: usize, max_lag: usize, v: usize) -> Result<Self> {
        let mut r = Self { x, g, max_lag, v, sums: Vec::new(), since_exact: 0 };
        r.reset(v)?;
        Ok(r)
    }

    fn reset(&mut self, v: usize) -> Result<()> {
        let set = crate::spectral::local_acv_set(self.x, v, self.g, self.max_lag)?;
        self.sums = set.into_inner().into_iter().map(|m| m * self.g as f64).collect();
        self.v = v;
        self.since_exact = 0;
        Ok(())
    }

    fn seek(&mut self, v: usize) -> Result<()> {
        if v < self.v || v - self.v > self.g || self.since_exact + (v - self.v) > RESYNC_EVERY {
            return self.reset(v);
        }
        while self.v < v {
            let old = self.v;
            let start = old + 1 - self.g; // first time point of the old window
            for (l, s) in self.sums.iter_mut().enumerate() {
                s.ger(1.0, &self.x.obs(old + 1 - l), &self.x.obs(old + 1), 1.0);
                s.ger(-1.0, &self.x.obs(start), &self.x.obs(start + l), 1.0);
            }
            self.v += 1;
            self.since_exact += 1;
        }
        Ok(())
    }

    fn current(&self) -> Result<LagCovSet> {
        let g = self.g as f64;
        LagCovSet::from_nonnegative(self.sums.iter().map(|s| s / g).collect())
    }
}

/// Local idiosyncratic autocovariances for consecutive anchors.
struct XiCursor<'a> {
    source: XiAcvSource<'a>,
    raw: RollingAcv<'a>,
}

impl<'a> XiCursor<'a> {
    fn new(source: XiAcvSource<'a>, g: usize, max_lag: usize, v: usize) -> Result<Self> {
        Ok(Self { source, raw: RollingAcv::new(source.panel(), g, max_lag, v)? })
    }

    fn at(&mut self, v: usize) -> Result<LagCovSet> {
        self.raw.seek(v)?;
        let raw = self.raw.current()?;
        match self.source.factors() {
            None => Ok(raw),
            Some(f) => raw.sub(&f.local_chi_acv_set(v, self.raw.g, self.raw.max_lag)?),
        }
    }
}

/// `max_{0<=l<=d} |Gamma_xi(l)` over the first and second halves of the
/// first `G` observations`|_inf`, the Stage-2 detector scale.
pub fn stage2_scale(source: &XiAcvSource<'_>, g: usize, d: usize) -> Result<f64> {
    let h = g / 2;
    if h <= d {
        return Err(Error::Config(format!("bandwidth G={g} too small for VAR order {d}")));
    }
    let first = source.acv_set(h, h, d)?;
    let second = source.acv_set(g, h, d)?;
    let diff = first.sub(&second)?;
    let scale = (0..=d).map(|l| diff.at(l).amax()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Degenerate(format!("stage-2 scale is zero for G={g}")));
    }
    Ok(scale)
}

/// The Yule-Walker detector on an autocovariance source.
pub struct VarDetector<'a> {
    source: XiAcvSource<'a>,
    params: Stage2Params,
    scale: f64,
    left: Option<XiCursor<'a>>,
    right: Option<XiCursor<'a>>,
}

impl<'a> VarDetector<'a> {
    pub fn new(source: XiAcvSource<'a>, params: Stage2Params) -> Result<Self> {
        let n = source.panel().len();
        if params.order < 1 {
            return Err(Error::Config("VAR order must be at least 1".into()));
        }
        if params.bandwidth <= params.order || 2 * params.bandwidth > n {
            return Err(Error::Config(format!(
                "stage-2 bandwidth G={} must satisfy d < G <= n/2 (d={}, n={n})",
                params.bandwidth, params.order
            )));
        }
        let scale = if params.scale { stage2_scale(&source, params.bandwidth, params.order)? } else { 1.0 };
        Ok(Self { source, params, scale, left: None, right: None })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn system_at(&self, v: usize) -> Result<YuleWalkerSystem> {
        build_yule_walker(&self.source.acv_set(v, self.params.bandwidth, self.params.order)?, self.params.order)
    }
}

impl SequentialDetector for VarDetector<'_> {
    type Estimate = VarEstimate;

    fn fit(&mut self, anchor: usize) -> Result<VarEstimate> {
        let sys = self.system_at(anchor)?;
        let lambda = match self.params.lambda {
            LambdaRule::Fixed(l) => l,
            LambdaRule::CrossValidated { points } => {
                let grid = crate::tuning::lambda_grid(&sys, points)?;
                crate::tuning::cv_lambda(&self.source, anchor, self.params.bandwidth, self.params.order, &grid)?
            }
        };
        fit_var(&sys, lambda, anchor)
    }

    fn detect(&mut self, est: &VarEstimate, v: usize) -> Result<f64> {
        let (g, d) = (self.params.bandwidth, self.params.order);
        let left = match self.left.as_mut() {
            Some(c) => c.at(v)?,
            None => {
                let mut c = XiCursor::new(self.source, g, d, v)?;
                let acv = c.at(v)?;
                self.left = Some(c);
                acv
            }
        };
        let right = match self.right.as_mut() {
            Some(c) => c.at(v + g)?,
            None => {
                let mut c = XiCursor::new(self.source, g, d, v + g)?;
                let acv = c.at(v + g)?;
                self.right = Some(c);
                acv
            }
        };
        // the residual is linear in the autocovariances
        let diff = build_yule_walker(&left.sub(&right)?, d)?;
        Ok(diff.residual(&est.beta)?.amax() / self.scale)
    }
}

/// Stage-2 output for one bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Result {
    pub bandwidth: usize,
    pub scale: f64,
    pub points: ChangePointSet,
    pub trace: Vec<(usize, f64)>,
    pub estimates: Vec<VarEstimate>,
}

impl Stage2Result {
    pub fn lp_solves(&self) -> usize {
        self.estimates.len()
    }
}

/// Runs the sequential Stage-2 scan on `source` at one bandwidth.
pub fn stage2_scan(source: XiAcvSource<'_>, params: &Stage2Params) -> Result<Stage2Result> {
    let n = source.panel().len();
    if params.bandwidth < 1 || n < 2 * params.bandwidth {
        return Ok(Stage2Result {
            bandwidth: params.bandwidth,
            scale: 1.0,
            points: ChangePointSet::new(),
            trace: Vec::new(),
            estimates: Vec::new(),
        });
    }
    let mut det = VarDetector::new(source, *params)?;
    let out = sequential_scan(&mut det, n, params.bandwidth, params.threshold, params.eta)?;
    Ok(Stage2Result {
        bandwidth: params.bandwidth,
        scale: det.scale(),
        points: out.points,
        trace: out.trace,
        estimates: out.estimates,
    })
}
