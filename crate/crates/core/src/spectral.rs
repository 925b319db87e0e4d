//! Windowed autocovariances, the Bartlett lag-window spectral estimator and
//! Hermitian eigen-utilities shared by both stages.
//!
//! Time indices are 1-based: the window anchored at `v` with bandwidth `G`
//! covers `{v - G + 1, ..., v}`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::panel::PanelSeries;

pub type C64 = Complex<f64>;

const HERMITIAN_TOL: f64 = 1e-10;

/// Bartlett (triangular) kernel.
pub fn bartlett_weight(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

/// Kernel weight `K(lag / m)`; with `m = 0` only lag zero is retained.
pub fn lag_weight(lag: isize, m: usize) -> f64 {
    if m == 0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    bartlett_weight(lag as f64 / m as f64)
}

/// Fourier frequencies `2 pi l / (2m + 1)` for `l = 0..=m`.
pub fn fourier_frequencies(m: usize) -> Vec<f64> {
    let denom = (2 * m + 1) as f64;
    (0..=m).map(|l| 2.0 * PI * l as f64 / denom).collect()
}

/// A moving window `I_v(G)` together with the lag-window truncation `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub anchor: usize,
    pub bandwidth: usize,
    pub kernel_bandwidth: usize,
}

impl WindowSpec {
    pub fn new(anchor: usize, bandwidth: usize, kernel_bandwidth: usize) -> Self {
        Self { anchor, bandwidth, kernel_bandwidth }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_window(self.anchor, self.bandwidth, n)?;
        if self.kernel_bandwidth < 1 || self.kernel_bandwidth >= self.bandwidth {
            return Err(Error::Range(format!(
                "kernel bandwidth m={} must satisfy 1 <= m < G={}",
                self.kernel_bandwidth, self.bandwidth
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_window(v: usize, g: usize, n: usize) -> Result<()> {
    if g < 1 || v < g || v > n {
        return Err(Error::Range(format!(
            "window anchored at v={v} with G={g} does not fit in 1..={n}"
        )));
    }
    Ok(())
}

/// Autocovariances at lags `-max_lag..=max_lag`; only non-negative lags are
/// stored and `Gamma(-l) = Gamma(l)^T` is produced on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCovSet {
    nonneg: Vec<DMatrix<f64>>,
}

impl LagCovSet {
    /// `mats[l]` is the autocovariance at lag `l >= 0`.
    pub fn from_nonnegative(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = mats.first() else {
            return Err(Error::Contract("lag set needs at least lag 0".into()));
        };
        let p = first.nrows();
        if mats.iter().any(|m| m.nrows() != p || m.ncols() != p) {
            return Err(Error::Contract("lag matrices must all be p x p".into()));
        }
        Ok(Self { nonneg: mats })
    }

    pub fn zeros(p: usize, max_lag: usize) -> Self {
        Self { nonneg: vec![DMatrix::zeros(p, p); max_lag + 1] }
    }

    pub fn dim(&self) -> usize {
        self.nonneg[0].nrows()
    }

    pub fn max_lag(&self) -> usize {
        self.nonneg.len() - 1
    }

    /// Stored matrix at a non-negative lag.
    pub fn at(&self, lag: usize) -> &DMatrix<f64> {
        &self.nonneg[lag]
    }

    pub fn at_mut(&mut self, lag: usize) -> &mut DMatrix<f64> {
        &mut self.nonneg[lag]
    }

    /// Matrix at any lag in `-max_lag..=max_lag`.
    pub fn lag(&self, lag: isize) -> Result<DMatrix<f64>> {
        let idx = lag.unsigned_abs();
        let Some(mat) = self.nonneg.get(idx) else {
            return Err(Error::Contract(format!(
                "lag {lag} not present (max lag {})",
                self.max_lag()
            )));
        };
        Ok(if lag < 0 { mat.transpose() } else { mat.clone() })
    }

    /// Elementwise `self - other` over the common lags.
    pub fn sub(&self, other: &LagCovSet) -> Result<LagCovSet> {
        if self.dim() != other.dim() || self.max_lag() != other.max_lag() {
            return Err(Error::Contract("lag sets differ in shape".into()));
        }
        Ok(Self {
            nonneg: self.nonneg.iter().zip(&other.nonneg).map(|(a, b)| a - b).collect(),
        })
    }

    /// Keeps lags `0..=max_lag`.
    pub fn truncated(&self, max_lag: usize) -> Result<LagCovSet> {
        if max_lag > self.max_lag() {
            return Err(Error::Contract(format!(
                "cannot truncate lag set of max lag {} to {max_lag}",
                self.max_lag()
            )));
        }
        Ok(Self { nonneg: self.nonneg[..=max_lag].to_vec() })
    }

    pub fn into_inner(self) -> Vec<DMatrix<f64>> {
        self.nonneg
    }
}

/// `(1/G) sum_{t=v-G+1+l}^{v} X_{t-l} X_t^T` for `l >= 0`, transposed for
/// negative lags. The divisor is `G` for every lag.
pub fn local_acv(x: &PanelSeries, v: usize, lag: isize, g: usize) -> Result<DMatrix<f64>> {
    check_window(v, g, x.len())?;
    let l = lag.unsigned_abs();
    if l >= g {
        return Err(Error::Range(format!("lag {lag} must be smaller than G={g}")));
    }
    let mat = acv_nonneg(x, v, l, g);
    Ok(if lag < 0 { mat.transpose() } else { mat })
}

fn acv_nonneg(x: &PanelSeries, v: usize, l: usize, g: usize) -> DMatrix<f64> {
    // 0-based column of t = v - G + 1 + l
    let start = v - g + l;
    let count = g - l;
    let vals = x.values();
    let lead = vals.columns(start, count);
    let lagged = vals.columns(start - l, count);
    let mut out = lagged * lead.transpose();
    out /= g as f64;
    out
}

/// Local autocovariances at lags `0..=max_lag` over `I_v(G)`.
pub fn local_acv_set(x: &PanelSeries, v: usize, g: usize, max_lag: usize) -> Result<LagCovSet> {
    check_window(v, g, x.len())?;
    if max_lag >= g {
        return Err(Error::Range(format!("max lag {max_lag} must be smaller than G={g}")));
    }
    Ok(LagCovSet { nonneg: (0..=max_lag).map(|l| acv_nonneg(x, v, l, g)).collect() })
}

/// A `p x p` Hermitian spectral density matrix at frequency `omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    pub omega: f64,
    pub mat: DMatrix<C64>,
}

impl SpectralMatrix {
    /// Value at `-omega`; for real data this is the complex conjugate.
    pub fn conjugate(&self) -> SpectralMatrix {
        SpectralMatrix { omega: -self.omega, mat: self.mat.map(|z| z.conj()) }
    }
}

/// `(2 pi)^{-1} sum_{|l| <= m} K(l/m) Gamma(l) e^{-i l omega}` for a given
/// lag set. The result is Hermitian by construction and real at `omega = 0`.
pub fn spectral_from_acv(acv: &LagCovSet, m: usize, omega: f64) -> Result<SpectralMatrix> {
    if acv.max_lag() < m {
        return Err(Error::Contract(format!(
            "kernel bandwidth {m} exceeds available lags {}",
            acv.max_lag()
        )));
    }
    let p = acv.dim();
    let mut re = acv.at(0).clone();
    let mut im = DMatrix::<f64>::zeros(p, p);
    for l in 1..=m {
        let w = lag_weight(l as isize, m);
        if w == 0.0 {
            continue;
        }
        let gam = acv.at(l);
        let (s, c) = (l as f64 * omega).sin_cos();
        // Gamma(l) e^{-i l w} + Gamma(l)^T e^{i l w}
        for j in 0..p {
            for i in 0..p {
                let a = gam[(i, j)];
                let b = gam[(j, i)];
                re[(i, j)] += w * c * (a + b);
                im[(i, j)] += w * s * (b - a);
            }
        }
    }
    let scale = 1.0 / (2.0 * PI);
    let mat = DMatrix::from_fn(p, p, |i, j| C64::new(re[(i, j)] * scale, im[(i, j)] * scale));
    Ok(SpectralMatrix { omega, mat })
}

/// Local spectral density matrix of `X` over the window `w`.
pub fn local_spectral(x: &PanelSeries, w: &WindowSpec, omega: f64) -> Result<SpectralMatrix> {
    w.validate(x.len())?;
    let acv = local_acv_set(x, w.anchor, w.bandwidth, w.kernel_bandwidth)?;
    spectral_from_acv(&acv, w.kernel_bandwidth, omega)
}

/// Spectral matrices of the window at every Fourier frequency `omega_l`,
/// `l = 0..=m`.
pub fn local_spectra(x: &PanelSeries, w: &WindowSpec) -> Result<Vec<SpectralMatrix>> {
    w.validate(x.len())?;
    let acv = local_acv_set(x, w.anchor, w.bandwidth, w.kernel_bandwidth)?;
    fourier_frequencies(w.kernel_bandwidth)
        .into_iter()
        .map(|omega| spectral_from_acv(&acv, w.kernel_bandwidth, omega))
        .collect()
}

fn check_hermitian(h: &DMatrix<C64>) -> Result<()> {
    if !h.is_square() {
        return Err(Error::Contract(format!("matrix is {}x{}, not square", h.nrows(), h.ncols())));
    }
    let scale = h.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
    let p = h.nrows();
    for j in 0..p {
        for i in 0..=j {
            let gap = (h[(i, j)] - h[(j, i)].conj()).norm();
            if gap > HERMITIAN_TOL * scale {
                return Err(Error::Contract(format!(
                    "matrix not Hermitian at ({i}, {j}): asymmetry {gap:.3e}"
                )));
            }
        }
    }
    Ok(())
}

fn symmetrised(h: &DMatrix<C64>) -> DMatrix<C64> {
    let mut s = h.clone();
    s += h.adjoint();
    s.scale_mut(0.5);
    s
}

/// Eigenvalues of a Hermitian matrix, sorted descending.
pub fn hermitian_eigenvalues(h: &DMatrix<C64>) -> Result<Vec<f64>> {
    check_hermitian(h)?;
    let mut vals: Vec<f64> = symmetrised(h).symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Spectral norm of a Hermitian matrix: the largest absolute eigenvalue.
pub fn hermitian_opnorm(h: &DMatrix<C64>) -> Result<f64> {
    check_hermitian(h)?;
    if h.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(symmetrised(h)
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, mu| acc.max(mu.abs())))
}

/// The `q` largest eigenvalues (by signed value, descending) with their
/// orthonormal eigenvectors as the columns of the returned matrix.
pub fn hermitian_top_eigs(h: &DMatrix<C64>, q: usize) -> Result<(Vec<f64>, DMatrix<C64>)> {
    check_hermitian(h)?;
    let p = h.nrows();
    if q > p {
        return Err(Error::Contract(format!("requested {q} eigenpairs of a {p}x{p} matrix")));
    }
    if q == 0 {
        return Ok((Vec::new(), DMatrix::zeros(p, 0)));
    }
    let eig = symmetrised(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order[..q].iter().map(|&j| eig.eigenvalues[j]).collect();
    let vectors = DMatrix::from_fn(p, q, |i, k| eig.eigenvectors[(i, order[k])]);
    Ok((values, vectors))
}
