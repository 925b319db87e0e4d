//! Post-segmentation factor adjustment.
//!
//! Each segment between estimated factor change points gets a lag-window
//! spectral estimate, which is truncated to its leading `q_k` eigenpairs
//! and inverted back to autocovariances of the factor-driven component.
//! Those segment autocovariances are mixed by window coverage to give the
//! local autocovariance of the factor part, and the idiosyncratic part is
//! what remains of the local autocovariance of `X`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelSeries;
use crate::spectral::{
    check_window, hermitian_eigenvalues, hermitian_top_eigs, local_acv, local_acv_set,
    spectral_from_acv, LagCovSet, SpectralMatrix, C64,
};

const INVERSE_IMAG_TOL: f64 = 1e-8;

/// Spectral matrices of the segment `(start, end]` at `omega_l`,
/// `l = -m..=m` (index `l + m`), treating the segment as one window.
pub fn segment_spectral(x: &PanelSeries, start: usize, end: usize, m: usize) -> Result<Vec<SpectralMatrix>> {
    if end > x.len() || end <= start {
        return Err(Error::Range(format!("segment ({start}, {end}] outside 1..={}", x.len())));
    }
    let len = end - start;
    if len <= m {
        return Err(Error::Config(format!(
            "segment ({start}, {end}] of length {len} is too short for kernel bandwidth {m}"
        )));
    }
    let acv = local_acv_set(x, end, len, m)?;
    let nonneg = crate::spectral::fourier_frequencies(m)
        .into_iter()
        .map(|omega| spectral_from_acv(&acv, m, omega))
        .collect::<Result<Vec<_>>>()?;
    let mut out: Vec<SpectralMatrix> = nonneg[1..].iter().rev().map(SpectralMatrix::conjugate).collect();
    out.extend(nonneg);
    Ok(out)
}

/// `sum_{j <= q} mu_j e_j e_j^*` over the `q` leading eigenpairs.
pub fn truncate_rank(s: &SpectralMatrix, q: usize) -> Result<SpectralMatrix> {
    let (vals, vecs) = hermitian_top_eigs(&s.mat, q)?;
    let p = s.mat.nrows();
    let mut mat = DMatrix::<C64>::zeros(p, p);
    for (j, mu) in vals.iter().enumerate() {
        let e = vecs.column(j);
        mat += (&e * e.adjoint()) * C64::new(*mu, 0.0);
    }
    Ok(SpectralMatrix { omega: s.omega, mat })
}

/// Inverse transform `(2 pi / (2m+1)) sum_{l=-m}^{m} S_l e^{i omega_l lag}`
/// for lags `0..=max_lag`, given `S_l` ordered `l = -m..=m`.
pub fn acv_from_spectrum(spectra: &[SpectralMatrix], max_lag: usize) -> Result<LagCovSet> {
    if spectra.is_empty() || spectra.len() % 2 == 0 {
        return Err(Error::Contract("need spectra at 2m+1 Fourier frequencies".into()));
    }
    let m = (spectra.len() - 1) / 2;
    let denom = (2 * m + 1) as f64;
    let p = spectra[0].mat.nrows();
    for (idx, s) in spectra.iter().enumerate() {
        let expected = 2.0 * PI * (idx as f64 - m as f64) / denom;
        if (s.omega - expected).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "spectrum {idx} is at omega={} but the grid expects {expected}",
                s.omega
            )));
        }
    }
    let scale = spectra
        .iter()
        .flat_map(|s| s.mat.iter())
        .fold(1.0_f64, |acc, z| acc.max(z.norm()));
    let mut mats = Vec::with_capacity(max_lag + 1);
    for lag in 0..=max_lag {
        let mut acc = DMatrix::<C64>::zeros(p, p);
        for s in spectra {
            acc += &s.mat * C64::from_polar(1.0, s.omega * lag as f64);
        }
        acc *= C64::new(2.0 * PI / denom, 0.0);
        let residue = acc.iter().fold(0.0_f64, |a, z| a.max(z.im.abs()));
        if residue > INVERSE_IMAG_TOL * scale {
            return Err(Error::Numerical(format!(
                "inverse transform at lag {lag} left imaginary residue {residue:.3e}"
            )));
        }
        mats.push(acc.map(|z| z.re));
    }
    LagCovSet::from_nonnegative(mats)
}

/// Information-criterion settings for choosing the number of factors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FactorNumberCriterion {
    /// Upper bound on the factor number; `None` means `min(20, p/2)`.
    pub q_max: Option<usize>,
    /// Multiplier on the penalty; `None` selects it per segment with
    /// [`select_penalty_constant`].
    pub penalty: Option<f64>,
}

impl FactorNumberCriterion {
    pub fn q_max_for(&self, p: usize) -> usize {
        self.q_max.unwrap_or_else(|| 20.min(p / 2)).min(p)
    }
}

/// Penalty `min(p, sqrt(G/m))^{-1/2} log(min(p, sqrt(G/m)))` per factor.
pub fn factor_penalty(p: usize, g: usize, m: usize) -> f64 {
    let c = (p as f64).min((g as f64 / m.max(1) as f64).sqrt());
    c.powf(-0.5) * c.ln()
}

/// Minimiser over `q = 0..=q_max` of
/// `log(p^{-1} sum_{j>q} mu_j) + q * c * penalty(G, p, m)`, where `mu_j` are
/// eigenvalues already averaged over frequencies. Ties go to the smaller q.
pub fn estimate_factor_number(avg_eigs: &[f64], g: usize, m: usize, q_max: usize, c: f64) -> Result<usize> {
    let p = avg_eigs.len();
    if q_max > p {
        return Err(Error::Contract(format!("q_max={q_max} exceeds p={p}")));
    }
    let mut sorted = avg_eigs.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.iter().all(|&mu| mu <= 0.0) {
        return Err(Error::Degenerate("all averaged eigenvalues are non-positive".into()));
    }
    let pen = c * factor_penalty(p, g, m);
    let mut best = (0usize, f64::INFINITY);
    for q in 0..=q_max {
        let tail: f64 = sorted[q..].iter().sum();
        if tail <= 0.0 {
            break;
        }
        let ic = (tail / p as f64).ln() + q as f64 * pen;
        if ic < best.1 {
            best = (q, ic);
        }
    }
    Ok(best.0)
}

/// Frequency-averaged eigenvalues (descending) of spectra ordered
/// `l = -m..=m`.
pub fn averaged_eigenvalues(spectra: &[SpectralMatrix]) -> Result<Vec<f64>> {
    let p = spectra.first().map_or(0, |s| s.mat.nrows());
    let mut profile = vec![0.0; p];
    for s in spectra {
        for (acc, mu) in profile.iter_mut().zip(hermitian_eigenvalues(&s.mat)?) {
            *acc += mu;
        }
    }
    profile.iter_mut().for_each(|mu| *mu /= spectra.len() as f64);
    Ok(profile)
}

const STABILITY_SUBSAMPLES: usize = 10;

/// Penalty multipliers searched by [`select_penalty_constant`].
pub fn penalty_grid() -> Vec<f64> {
    (1..=300).map(|i| i as f64 * 0.01).collect()
}

/// Stability choice of the penalty multiplier over nested sub-segments.
///
/// `profiles` holds `(length, averaged eigenvalues)` for sub-segments of
/// increasing length, the last being the full segment. For every `c` in
/// `grid` (ascending) the factor number is estimated on each sub-segment.
/// Among the runs of consecutive grid values on which the estimate agrees
/// across all sub-segments and lies in `1..q_max`, the longest wins (the
/// first on ties); `(c, q)` is its starting value and factor number. With
/// no such run the largest `c` is used.
pub fn select_penalty_constant(profiles: &[(usize, Vec<f64>)], m: usize, q_max: usize, grid: &[f64]) -> Result<(f64, usize)> {
    let Some((full_len, full)) = profiles.last() else {
        return Err(Error::Contract("stability selection needs at least one sub-segment".into()));
    };
    let Some(&c_last) = grid.last() else {
        return Err(Error::Config("penalty grid must not be empty".into()));
    };
    let mut best: Option<(usize, f64, usize)> = None;
    let mut run: Option<(usize, f64, usize)> = None;
    for &c in grid {
        let qs = profiles
            .iter()
            .map(|(len, eigs)| estimate_factor_number(eigs, *len, m, q_max, c))
            .collect::<Result<Vec<_>>>()?;
        let q = *qs.last().unwrap_or(&0);
        let stable = q > 0 && q < q_max && qs.iter().all(|&qj| qj == q);
        run = match run {
            Some((len, c0, q0)) if stable && q0 == q => Some((len + 1, c0, q0)),
            _ if stable => Some((1, c, q)),
            _ => None,
        };
        if let Some(r) = run {
            if best.is_none_or(|b| r.0 > b.0) {
                best = Some(r);
            }
        }
    }
    match best {
        Some((_, c, q)) => Ok((c, q)),
        None => Ok((c_last, estimate_factor_number(full, *full_len, m, q_max, c_last)?)),
    }
}

/// Factor-driven structure estimated on one segment `(start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFactorModel {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub q: usize,
    /// Eigenvalues of the segment spectral matrices averaged over the
    /// `2m + 1` Fourier frequencies, descending.
    pub eigen_profile: Vec<f64>,
    /// Autocovariances of the factor-driven component at lags `0..=d`.
    pub acv_chi: LagCovSet,
}

/// Serialisable summary of a [`SegmentFactorModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub q: usize,
    pub eigen_profile: Vec<f64>,
}

impl SegmentFactorModel {
    pub fn summary(&self) -> SegmentSummary {
        SegmentSummary {
            index: self.index,
            start: self.start,
            end: self.end,
            q: self.q,
            eigen_profile: self.eigen_profile.clone(),
        }
    }
}

/// Factor adjustment settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FactorConfig {
    pub criterion: FactorNumberCriterion,
    /// Per-segment factor numbers overriding the criterion, by segment index.
    #[serde(default)]
    pub q_overrides: Vec<(usize, usize)>,
}

/// Segment factor models for a segmentation of `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorAdjustment {
    n: usize,
    /// `0 = c_0 < c_1 < ... < c_K < c_{K+1} = n`.
    boundaries: Vec<usize>,
    segments: Vec<SegmentFactorModel>,
    max_lag: usize,
}

impl FactorAdjustment {
    /// Estimates one factor model per segment defined by `change_points`,
    /// using kernel bandwidth `m` and keeping autocovariance lags `0..=d`.
    pub fn fit(x: &PanelSeries, change_points: &[usize], m: usize, d: usize, cfg: &FactorConfig) -> Result<Self> {
        let n = x.len();
        if d > m {
            return Err(Error::Config(format!("VAR order d={d} must not exceed kernel bandwidth m={m}")));
        }
        let boundaries = segment_boundaries(change_points, n)?;
        let p = x.dim();
        let q_max = cfg.criterion.q_max_for(p);
        let segments = (0..boundaries.len() - 1)
            .into_par_iter()
            .map(|k| {
                let (start, end) = (boundaries[k], boundaries[k + 1]);
                let len = end - start;
                let forced = cfg.q_overrides.iter().find(|(idx, _)| *idx == k).map(|(_, q)| *q);
                if len < 2 * (m + 1) {
                    log::warn!("segment ({start}, {end}] shorter than 2(m+1); treating it as purely idiosyncratic");
                    return Ok(SegmentFactorModel {
                        index: k,
                        start,
                        end,
                        q: 0,
                        eigen_profile: Vec::new(),
                        acv_chi: LagCovSet::zeros(p, d),
                    });
                }
                let spectra = segment_spectral(x, start, end, m)?;
                let profile = averaged_eigenvalues(&spectra)?;
                let q = match forced {
                    Some(q) if q > p => {
                        return Err(Error::Config(format!("factor number {q} for segment {k} exceeds p={p}")))
                    }
                    Some(q) => q,
                    None => match cfg.criterion.penalty {
                        Some(c) => estimate_factor_number(&profile, len, m, q_max, c)?,
                        None => {
                            let mut profiles = (1..STABILITY_SUBSAMPLES)
                                .map(|j| {
                                    let sub = len / 2 + j * (len - len / 2) / STABILITY_SUBSAMPLES;
                                    let eigs = averaged_eigenvalues(&segment_spectral(x, start, start + sub, m)?)?;
                                    Ok((sub, eigs))
                                })
                                .collect::<Result<Vec<_>>>()?;
                            profiles.push((len, profile.clone()));
                            select_penalty_constant(&profiles, m, q_max, &penalty_grid())?.1
                        }
                    },
                };
                let truncated = spectra.iter().map(|s| truncate_rank(s, q)).collect::<Result<Vec<_>>>()?;
                let acv_chi = acv_from_spectrum(&truncated, d)?;
                Ok(SegmentFactorModel { index: k, start, end, q, eigen_profile: profile, acv_chi })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, boundaries, segments, max_lag: d })
    }

    /// Assembles an adjustment from precomputed segment models.
    pub fn from_segments(n: usize, change_points: &[usize], segments: Vec<SegmentFactorModel>) -> Result<Self> {
        let boundaries = segment_boundaries(change_points, n)?;
        if segments.len() != boundaries.len() - 1 {
            return Err(Error::Contract(format!(
                "{} segments defined but {} models supplied",
                boundaries.len() - 1,
                segments.len()
            )));
        }
        let max_lag = segments.iter().map(|s| s.acv_chi.max_lag()).min().unwrap_or(0);
        Ok(Self { n, boundaries, segments, max_lag })
    }

    pub fn segments(&self) -> &[SegmentFactorModel] {
        &self.segments
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// `(segment index, number of points of I_v(G) in that segment)`; the
    /// counts sum to `G`.
    pub fn weights(&self, v: usize, g: usize) -> Result<Vec<(usize, usize)>> {
        check_window(v, g, self.n)?;
        let lo = v - g;
        Ok(self
            .boundaries
            .windows(2)
            .enumerate()
            .filter_map(|(k, w)| {
                let overlap = w[1].min(v).saturating_sub(w[0].max(lo));
                (overlap > 0).then_some((k, overlap))
            })
            .collect())
    }

    /// Coverage-weighted average of segment autocovariances at `lag`.
    pub fn local_chi_acv(&self, v: usize, g: usize, lag: isize) -> Result<DMatrix<f64>> {
        let l = lag.unsigned_abs();
        if l > self.max_lag {
            return Err(Error::Contract(format!("lag {lag} beyond stored factor lags 0..={}", self.max_lag)));
        }
        let mat = self.chi_nonneg(v, g, l)?;
        Ok(if lag < 0 { mat.transpose() } else { mat })
    }

    fn chi_nonneg(&self, v: usize, g: usize, l: usize) -> Result<DMatrix<f64>> {
        let p = self.segments.first().map_or(0, |s| s.acv_chi.dim());
        let mut out = DMatrix::zeros(p, p);
        for (k, w) in self.weights(v, g)? {
            let seg = self
                .segments
                .get(k)
                .ok_or_else(|| Error::Contract(format!("missing factor model for segment {k}")))?;
            out += seg.acv_chi.at(l) * (w as f64);
        }
        out /= g as f64;
        Ok(out)
    }

    /// Local factor autocovariances at lags `0..=max_lag`.
    pub fn local_chi_acv_set(&self, v: usize, g: usize, max_lag: usize) -> Result<LagCovSet> {
        if max_lag > self.max_lag {
            return Err(Error::Contract(format!("lag {max_lag} beyond stored factor lags 0..={}", self.max_lag)));
        }
        LagCovSet::from_nonnegative((0..=max_lag).map(|l| self.chi_nonneg(v, g, l)).collect::<Result<_>>()?)
    }
}

fn segment_boundaries(change_points: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut b = Vec::with_capacity(change_points.len() + 2);
    b.push(0);
    for &c in change_points {
        if c <= *b.last().unwrap() || c >= n {
            return Err(Error::Contract(format!(
                "change points must be strictly increasing inside (0, {n}), got {change_points:?}"
            )));
        }
        b.push(c);
    }
    b.push(n);
    Ok(b)
}

/// Source of local autocovariances for the idiosyncratic component.
#[derive(Debug, Clone, Copy)]
pub enum XiAcvSource<'a> {
    /// `X_t` is treated as the VAR process itself.
    Raw(&'a PanelSeries),
    /// Local autocovariance of `X_t` minus that of the estimated factor part.
    Adjusted { x: &'a PanelSeries, factors: &'a FactorAdjustment },
}

impl<'a> XiAcvSource<'a> {
    pub fn panel(&self) -> &'a PanelSeries {
        match self {
            Self::Raw(x) | Self::Adjusted { x, .. } => x,
        }
    }

    pub fn factors(&self) -> Option<&'a FactorAdjustment> {
        match self {
            Self::Raw(_) => None,
            Self::Adjusted { factors, .. } => Some(factors),
        }
    }

    /// Local idiosyncratic autocovariances at lags `0..=max_lag` over `I_v(G)`.
    pub fn acv_set(&self, v: usize, g: usize, max_lag: usize) -> Result<LagCovSet> {
        let raw = local_acv_set(self.panel(), v, g, max_lag)?;
        match self.factors() {
            None => Ok(raw),
            Some(f) => raw.sub(&f.local_chi_acv_set(v, g, max_lag)?),
        }
    }
}

/// `Gamma_{xi,v}(lag, G)`: the local autocovariance of `X` minus the local
/// factor autocovariance; without a factor model it is the former.
pub fn local_xi_acv(x: &PanelSeries, v: usize, g: usize, lag: isize, factors: Option<&FactorAdjustment>) -> Result<DMatrix<f64>> {
    let raw = local_acv(x, v, lag, g)?;
    match factors {
        None => Ok(raw),
        Some(f) => Ok(raw - f.local_chi_acv(v, g, lag)?),
    }
}
