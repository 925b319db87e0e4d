//! The two-stage segmentation pipeline.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::changepoint::ChangePointSet;
use crate::error::{Error, Result};
use crate::factor::{FactorAdjustment, FactorConfig, SegmentSummary, XiAcvSource};
use crate::panel::PanelSeries;
use crate::stage1::{stage1_grid, stage1_scan, Stage1Params, Stage1Trace};
use crate::stage2::{stage2_scan, LambdaRule, Stage2Params, Stage2Result};
use crate::tuning::{default_bandwidths, kernel_bandwidth, multiscale_merge, scale_stage1, BandwidthPlan, ThresholdModel};

/// Threshold models shipped with the crate, produced by the repository's
/// own null calibration on the desk grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultThresholds {
    pub schema_version: u32,
    pub seed: u64,
    pub replicates: usize,
    pub grid: Vec<(usize, usize)>,
    pub stage1: ThresholdModel,
    /// Stage 2 after factor adjustment.
    pub stage2: ThresholdModel,
    /// Stage 2 on raw autocovariances.
    pub stage2_standalone: ThresholdModel,
}

const DEFAULT_THRESHOLDS_JSON: &str = include_str!("../data/thresholds.json");

static SHIPPED: OnceLock<std::result::Result<DefaultThresholds, String>> = OnceLock::new();

impl DefaultThresholds {
    pub fn shipped() -> Result<&'static Self> {
        SHIPPED
            .get_or_init(|| serde_json::from_str(DEFAULT_THRESHOLDS_JSON).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Calibration(format!("shipped threshold file is invalid: {e}")))
    }
}

/// Threshold for one stage's scaled detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// The shipped calibrated model for the stage and mode.
    Default,
    Fixed(f64),
    Model(ThresholdModel),
}

impl ThresholdRule {
    fn resolve(&self, fallback: impl FnOnce() -> Result<ThresholdModel>, n: usize, p: usize, g: usize) -> Result<f64> {
        let t = match self {
            Self::Fixed(t) => *t,
            Self::Model(model) => model.threshold(n, p, g),
            Self::Default => fallback()?.threshold(n, p, g),
        };
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Config(format!("threshold {t} at G={g} is not a positive finite number")));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// Explicit plan; `None` uses [`default_bandwidths`].
    pub bandwidths: Option<BandwidthPlan>,
    pub order: usize,
    pub stage1_threshold: ThresholdRule,
    pub stage2_threshold: ThresholdRule,
    pub stage1_eta: f64,
    pub stage2_eta: f64,
    pub refine: bool,
    pub lambda: LambdaRule,
    pub factor: FactorConfig,
    /// Skip Stage 1 and the factor adjustment.
    pub no_factor: bool,
    pub demean: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            bandwidths: None,
            order: 1,
            stage1_threshold: ThresholdRule::Default,
            stage2_threshold: ThresholdRule::Default,
            stage1_eta: 0.5,
            stage2_eta: 0.0,
            refine: true,
            lambda: LambdaRule::default(),
            factor: FactorConfig::default(),
            no_factor: false,
            demean: true,
        }
    }
}

impl SegmentConfig {
    /// Bandwidth plan for a panel of size `(n, p)`, checked against `d`.
    pub fn plan(&self, n: usize, p: usize) -> Result<BandwidthPlan> {
        let plan = match &self.bandwidths {
            Some(plan) => plan.clone(),
            None => default_bandwidths(n, p)?,
        };
        let plan = plan.validated(n, self.order)?;
        if !self.no_factor {
            let g_min = *plan
                .stage1
                .first()
                .ok_or_else(|| Error::Config("stage-1 bandwidth set is empty".into()))?;
            if self.order > kernel_bandwidth(g_min) {
                return Err(Error::Config(format!(
                    "VAR order d={} exceeds kernel bandwidth m={} of the smallest stage-1 bandwidth {g_min}",
                    self.order,
                    kernel_bandwidth(g_min)
                )));
            }
        }
        if plan.stage2.is_empty() {
            return Err(Error::Config("stage-2 bandwidth set is empty".into()));
        }
        Ok(plan)
    }
}

/// Everything produced by [`segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResult {
    pub n: usize,
    pub p: usize,
    pub plan: BandwidthPlan,
    pub chi_points: ChangePointSet,
    pub xi_points: ChangePointSet,
    /// Scaled Stage-1 traces, one per bandwidth.
    pub stage1: Vec<(Stage1Trace, f64)>,
    pub stage2: Vec<(Stage2Result, f64)>,
    pub segments: Vec<SegmentSummary>,
}

/// Stage 1 over the factor bandwidths, bottom-up merge, factor adjustment
/// on the merged segmentation, then Stage 2 over the VAR bandwidths and a
/// second merge.
pub fn segment(data: &PanelSeries, cfg: &SegmentConfig) -> Result<SegmentResult> {
    let x = if cfg.demean { data.demeaned() } else { data.clone() };
    let (n, p) = (x.len(), x.dim());
    let plan = cfg.plan(n, p)?;
    let shipped = DefaultThresholds::shipped;

    let mut stage1 = Vec::new();
    let mut chi_points = ChangePointSet::new();
    let mut segments = Vec::new();
    let adjustment = if cfg.no_factor {
        None
    } else {
        let mut levels = Vec::new();
        for &g in &plan.stage1 {
            let m = kernel_bandwidth(g);
            let raw = Stage1Trace::compute(&x, g, m, stage1_grid(n, g)?)?;
            let trace = scale_stage1(&raw)?;
            let threshold = cfg.stage1_threshold.resolve(|| Ok(shipped()?.stage1.clone()), n, p, g)?;
            let params = Stage1Params { threshold, eta: cfg.stage1_eta, refine: cfg.refine };
            levels.push((g, stage1_scan(&trace, &params)));
            stage1.push((trace, threshold));
        }
        chi_points = multiscale_merge(&levels);
        let m = kernel_bandwidth(plan.stage1[0]);
        let adj = FactorAdjustment::fit(&x, &chi_points.locations(), m, cfg.order, &cfg.factor)?;
        segments = adj.segments().iter().map(|s| s.summary()).collect();
        Some(adj)
    };

    let source = match &adjustment {
        Some(factors) => XiAcvSource::Adjusted { x: &x, factors },
        None => XiAcvSource::Raw(&x),
    };
    let mut stage2 = Vec::new();
    let mut levels = Vec::new();
    for &g in &plan.stage2 {
        let threshold = if cfg.no_factor {
            cfg.stage2_threshold.resolve(|| Ok(shipped()?.stage2_standalone.clone()), n, p, g)?
        } else {
            cfg.stage2_threshold.resolve(|| Ok(shipped()?.stage2.clone()), n, p, g)?
        };
        let params = Stage2Params {
            bandwidth: g,
            order: cfg.order,
            threshold,
            eta: cfg.stage2_eta,
            lambda: cfg.lambda,
            scale: true,
        };
        let res = stage2_scan(source, &params)?;
        levels.push((g, res.points.clone()));
        stage2.push((res, threshold));
    }
    let xi_points = multiscale_merge(&levels);
    Ok(SegmentResult { n, p, plan, chi_points, xi_points, stage1, stage2, segments })
}
