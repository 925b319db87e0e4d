//! Stage 1: moving-window detection of changes in the factor-driven
//! component through operator-norm differences of local spectral matrices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::{ChangePoint, ChangePointSet, Stage};
use crate::error::{Error, Result};
use crate::panel::PanelSeries;
use crate::spectral::{fourier_frequencies, hermitian_opnorm, local_spectra, WindowSpec};

/// `T_{chi,v}(omega_l, G)` for `l = 0..=m`: the operator norm of the
/// difference between the spectral matrices of `I_v(G)` and `I_{v+G}(G)`.
pub fn stage1_detector(x: &PanelSeries, v: usize, g: usize, m: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if g < 1 || v < g || v + g > n {
        return Err(Error::Range(format!(
            "stage-1 anchor v={v} must satisfy G={g} <= v <= n - G = {}",
            n.saturating_sub(g)
        )));
    }
    let left = local_spectra(x, &WindowSpec::new(v, g, m))?;
    let right = local_spectra(x, &WindowSpec::new(v + g, g, m))?;
    left.iter()
        .zip(&right)
        .map(|(a, b)| hermitian_opnorm(&(&a.mat - &b.mat)))
        .collect()
}

/// Anchors `{G + a b_n : 0 <= a <= floor((n - 2G) / b_n)}` with
/// `b_n = floor(2 ln n)`, falling back to every anchor when `b_n < 1`.
pub fn stage1_grid(n: usize, g: usize) -> Result<Vec<usize>> {
    if g < 1 || n < 2 * g {
        return Err(Error::Config(format!("stage 1 needs n >= 2G, got n={n}, G={g}")));
    }
    let step = (2.0 * (n as f64).ln()).floor() as usize;
    let step = step.max(1);
    Ok((g..=n - g).step_by(step).collect())
}

/// Detector values on a grid of anchors for one bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Trace {
    pub bandwidth: usize,
    pub kernel_bandwidth: usize,
    pub anchors: Vec<usize>,
    /// `values[i][l]` is the detector at `anchors[i]` and frequency `omega_l`.
    pub values: Vec<Vec<f64>>,
}

impl Stage1Trace {
    /// Evaluates the detector at each anchor (in parallel, order preserved).
    pub fn compute(x: &PanelSeries, g: usize, m: usize, anchors: Vec<usize>) -> Result<Self> {
        let values = anchors
            .par_iter()
            .map(|&v| stage1_detector(x, v, g, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bandwidth: g, kernel_bandwidth: m, anchors, values })
    }

    /// Builds a trace from precomputed values (used for synthetic inputs).
    pub fn from_values(bandwidth: usize, anchors: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        if anchors.len() != values.len() {
            return Err(Error::Contract("one value vector per anchor required".into()));
        }
        let width = values.first().map_or(1, Vec::len);
        if width == 0 || values.iter().any(|v| v.len() != width) {
            return Err(Error::Contract("every anchor needs the same non-empty frequency count".into()));
        }
        if anchors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("anchors must be strictly increasing".into()));
        }
        Ok(Self { bandwidth, kernel_bandwidth: width - 1, anchors, values })
    }

    pub fn frequencies(&self) -> Vec<f64> {
        fourier_frequencies(self.kernel_bandwidth)
    }

    /// Frequency index maximising the detector at anchor index `i`
    /// (smallest index on ties) and the maximum.
    pub fn peak(&self, i: usize) -> (usize, f64) {
        self.values[i]
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (l, &t)| if t > best.1 { (l, t) } else { best })
    }

    /// Frequency-averaged detector at anchor index `i`.
    pub fn average(&self, i: usize) -> f64 {
        let row = &self.values[i];
        row.iter().sum::<f64>() / row.len() as f64
    }
}

/// Stage-1 scan settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Params {
    pub threshold: f64,
    pub eta: f64,
    /// Locate each change by the frequency-averaged detector.
    pub refine: bool,
}

impl Default for Stage1Params {
    fn default() -> Self {
        Self { threshold: 1.0, eta: 0.5, refine: true }
    }
}

fn argmax_by<F: Fn(usize) -> f64>(indices: impl Iterator<Item = usize>, score: F) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in indices {
        let s = score(i);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Anchor (from `trace.anchors`) maximising the frequency-averaged detector
/// over the candidate anchor indices; ties go to the smallest anchor.
pub fn stage1_refine_location(trace: &Stage1Trace, candidates: &[usize]) -> Result<usize> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    argmax_by(sorted.into_iter(), |i| trace.average(i))
        .map(|i| trace.anchors[i])
        .ok_or_else(|| Error::Contract("refinement needs at least one candidate".into()))
}

/// Maximum-check scan over a completed trace.
///
/// Anchors whose frequency-wise maximum exceeds the threshold form the
/// candidate set. The strongest candidate is accepted if it is a local
/// maximiser, at its own peak frequency, among grid anchors within
/// `(c - eta G, c + eta G]`; then `{c - G + 1, ..., c + G}` is removed from
/// the candidates, until none remain.
pub fn stage1_scan(trace: &Stage1Trace, params: &Stage1Params) -> ChangePointSet {
    let g = trace.bandwidth;
    let mut active: Vec<bool> = (0..trace.anchors.len())
        .map(|i| trace.peak(i).1 > params.threshold)
        .collect();
    let mut out = ChangePointSet::new();
    let radius = params.eta * g as f64;

    loop {
        let live = || active.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i);
        let chosen = if params.refine {
            argmax_by(live(), |i| trace.average(i))
        } else {
            argmax_by(live(), |i| trace.peak(i).1)
        };
        let Some(ci) = chosen else { break };
        let c = trace.anchors[ci];
        let (freq, peak) = trace.peak(ci);

        let local_max = trace
            .anchors
            .iter()
            .zip(&trace.values)
            .filter(|(&v, _)| (v as f64) > c as f64 - radius && (v as f64) <= c as f64 + radius)
            .all(|(_, row)| peak >= row[freq]);
        if local_max {
            out.insert(ChangePoint { location: c, bandwidth: g, stat: peak, stage: Stage::Factor });
        }

        let lo = c.saturating_sub(g) + 1;
        let hi = c + g;
        for (a, &v) in active.iter_mut().zip(&trace.anchors) {
            if v >= lo && v <= hi {
                *a = false;
            }
        }
    }
    out
}
