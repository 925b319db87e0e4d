//! Two-stage change-point detection for high-dimensional time series made
//! of a factor-driven component and a piecewise-stationary sparse VAR
//! component.
//!
//! Stage 1 scans for changes in the factor part through lag-window spectral
//! estimates; Stage 2 removes the estimated factor autocovariances and scans
//! for changes in the VAR parameters through l1-regularised Yule-Walker
//! estimates.

pub mod changepoint;
pub mod error;
pub mod evaluation;
pub mod factor;
mod lp;
pub mod panel;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod stage1;
pub mod stage2;
pub mod tuning;

pub use changepoint::{ChangePoint, ChangePointSet, Stage};
pub use error::{Error, Result};
pub use factor::{FactorAdjustment, FactorConfig, XiAcvSource};
pub use panel::PanelSeries;
pub use pipeline::{segment, SegmentConfig, SegmentResult, ThresholdRule};
pub use spectral::{LagCovSet, SpectralMatrix};
pub use tuning::{BandwidthPlan, ThresholdModel};
