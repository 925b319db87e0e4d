//! Run configuration loaded from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fvarseg::factor::{FactorConfig, FactorNumberCriterion};
use fvarseg::simulate::{ChiModel, DgpSpec, Scenario};
use fvarseg::stage2::LambdaRule;
use fvarseg::tuning::{BandwidthPlan, CalibrationCell, CalibrationConfig, Stage2Mode};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// Rows are time points, columns are series.
    #[default]
    RowsTime,
    /// Rows are series, columns are time points.
    ColumnsTime,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    pub data: DataSection,
    pub simulate: SimulateSection,
    pub segment: SegmentSection,
    pub calibrate: CalibrateSection,
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub orientation: Orientation,
}

/// A data-generating scenario. Presets fill the change points and factor
/// model; explicit fields override them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: String,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// Whether the preset places its change points.
    pub changes: bool,
    pub chi: Option<ChiModel>,
    pub chi_changes: Option<Vec<usize>>,
    pub xi_changes: Option<Vec<usize>>,
    pub beta: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            scenario: "m3".into(),
            n: 1000,
            p: 20,
            d: 1,
            q: 2,
            changes: true,
            chi: None,
            chi_changes: None,
            xi_changes: None,
            beta: None,
        }
    }
}

impl SimulateSection {
    pub fn to_spec(&self, seed: u64) -> CliResult<DgpSpec> {
        let scenario: Scenario = self.scenario.parse()?;
        let mut spec = match scenario {
            Scenario::M1 => DgpSpec::m1(self.n, self.p, self.changes, seed),
            Scenario::M2 => DgpSpec::m2(self.n, self.p, self.changes, seed),
            Scenario::M3 => DgpSpec::m3(self.n, self.p, self.d, self.changes, seed),
            Scenario::Custom => DgpSpec {
                n: self.n,
                p: self.p,
                q: self.q,
                d: self.d,
                scenario,
                chi: ChiModel::C1,
                chi_changes: Vec::new(),
                xi_changes: Vec::new(),
                beta: 1.0,
                seed,
            },
        };
        if scenario != Scenario::M3 {
            spec.d = self.d;
            spec.q = self.q;
        }
        if let Some(chi) = self.chi {
            spec.chi = chi;
        }
        if let Some(c) = &self.chi_changes {
            spec.chi_changes = c.clone();
        }
        if let Some(c) = &self.xi_changes {
            spec.xi_changes = c.clone();
        }
        if let Some(b) = self.beta {
            spec.beta = b;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// `"auto"` or explicit sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Keyword(String),
    Explicit(BandwidthPlan),
}

impl Default for BandwidthSetting {
    fn default() -> Self {
        Self::Keyword("auto".into())
    }
}

/// A number, `"default"`, `"calibrate"` or `"model:<path>"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSetting {
    Value(f64),
    Keyword(String),
}

impl Default for ThresholdSetting {
    fn default() -> Self {
        Self::Keyword("default".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    Fixed(f64),
    Default,
    Calibrate,
    Model(PathBuf),
}

impl ThresholdSetting {
    pub fn parse(s: &str) -> Self {
        s.parse::<f64>().map_or_else(|_| Self::Keyword(s.to_string()), Self::Value)
    }

    pub fn source(&self) -> CliResult<ThresholdSource> {
        match self {
            Self::Value(v) if v.is_finite() && *v > 0.0 => Ok(ThresholdSource::Fixed(*v)),
            Self::Value(v) => Err(CliError::Config(format!("threshold must be positive and finite, got {v}"))),
            Self::Keyword(k) if k == "default" => Ok(ThresholdSource::Default),
            Self::Keyword(k) if k == "calibrate" => Ok(ThresholdSource::Calibrate),
            Self::Keyword(k) => match k.strip_prefix("model:") {
                Some(path) if !path.is_empty() => Ok(ThresholdSource::Model(PathBuf::from(path))),
                _ => Err(CliError::Config(format!(
                    "threshold '{k}' not understood; use a number, \"default\", \"calibrate\" or \"model:<path>\""
                ))),
            },
        }
    }
}

/// `"cv"` or a fixed positive value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSetting {
    Value(f64),
    Keyword(String),
}

impl Default for LambdaSetting {
    fn default() -> Self {
        Self::Keyword("cv".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub d: usize,
    pub bandwidths: BandwidthSetting,
    pub stage1_threshold: ThresholdSetting,
    pub stage2_threshold: ThresholdSetting,
    pub stage1_eta: f64,
    pub stage2_eta: f64,
    pub refine: bool,
    pub lambda: LambdaSetting,
    pub lambda_points: usize,
    /// `[segment index, q]` pairs.
    pub q_overrides: Vec<(usize, usize)>,
    pub q_max: Option<usize>,
    /// Information-criterion penalty multiplier; selected per segment when absent.
    pub ic_penalty: Option<f64>,
    pub no_factor: bool,
    pub demean: bool,
    /// Replicates used when thresholds are `"calibrate"`.
    pub calibration_replicates: usize,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            d: 1,
            bandwidths: BandwidthSetting::default(),
            stage1_threshold: ThresholdSetting::default(),
            stage2_threshold: ThresholdSetting::default(),
            stage1_eta: 0.5,
            stage2_eta: 0.0,
            refine: true,
            lambda: LambdaSetting::default(),
            lambda_points: 10,
            q_overrides: Vec::new(),
            q_max: None,
            ic_penalty: None,
            no_factor: false,
            demean: true,
            calibration_replicates: 50,
        }
    }
}

impl SegmentSection {
    pub fn bandwidth_plan(&self) -> CliResult<Option<BandwidthPlan>> {
        match &self.bandwidths {
            BandwidthSetting::Keyword(k) if k == "auto" => Ok(None),
            BandwidthSetting::Keyword(k) => {
                Err(CliError::Config(format!("bandwidths must be \"auto\" or {{ stage1 = [..], stage2 = [..] }}, got '{k}'")))
            }
            BandwidthSetting::Explicit(plan) => Ok(Some(plan.clone())),
        }
    }

    pub fn lambda_rule(&self) -> CliResult<LambdaRule> {
        match &self.lambda {
            LambdaSetting::Value(v) if *v > 0.0 && v.is_finite() => Ok(LambdaRule::Fixed(*v)),
            LambdaSetting::Keyword(k) if k == "cv" => {
                if self.lambda_points == 0 {
                    return Err(CliError::Config("lambda_points must be at least 1".into()));
                }
                Ok(LambdaRule::CrossValidated { points: self.lambda_points })
            }
            other => Err(CliError::Config(format!("lambda must be \"cv\" or a positive number, got {other:?}"))),
        }
    }

    pub fn factor_config(&self) -> FactorConfig {
        FactorConfig {
            criterion: FactorNumberCriterion { q_max: self.q_max, penalty: self.ic_penalty },
            q_overrides: self.q_overrides.clone(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.d < 1 {
            return Err(CliError::Config("d must be at least 1".into()));
        }
        for (name, eta) in [("stage1_eta", self.stage1_eta), ("stage2_eta", self.stage2_eta)] {
            if !(0.0..=1.0).contains(&eta) {
                return Err(CliError::Config(format!("{name} must lie in [0, 1], got {eta}")));
            }
        }
        self.bandwidth_plan()?;
        self.lambda_rule()?;
        self.stage1_threshold.source()?;
        self.stage2_threshold.source()?;
        if self.ic_penalty.is_some_and(|c| !(c > 0.0)) {
            return Err(CliError::Config("ic_penalty must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub grid: Vec<CalibrationCell>,
    pub replicates: usize,
    pub tau: f64,
    pub stage2_mode: Stage2Mode,
    pub chi: ChiModel,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let desk = CalibrationConfig::desk(0);
        Self { grid: desk.grid, replicates: desk.replicates, tau: desk.tau, stage2_mode: desk.stage2_mode, chi: desk.chi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub cells: Vec<SimulateSection>,
    pub replicates: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { cells: vec![SimulateSection::default()], replicates: 10 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = crate::io::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn calibration_config(&self) -> CliResult<CalibrationConfig> {
        let seg = &self.segment;
        let cfg = CalibrationConfig {
            grid: self.calibrate.grid.clone(),
            replicates: self.calibrate.replicates,
            tau: self.calibrate.tau,
            seed: self.seed,
            chi: self.calibrate.chi,
            stage2_mode: self.calibrate.stage2_mode,
            lambda: seg.lambda_rule()?,
            factor: seg.factor_config(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
