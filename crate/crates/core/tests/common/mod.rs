//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fvarseg::spectral::C64;
use fvarseg::PanelSeries;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_panel(seed: u64, p: usize, n: usize) -> PanelSeries {
    let mut r = rng(seed);
    PanelSeries::new(DMatrix::from_fn(p, n, |_, _| r.sample(StandardNormal))).unwrap()
}

/// `(1/G) sum_{t=v-G+1+lag}^{v} X_{t-lag} X_t^T` by explicit loops, with
/// negative lags by transposition.
pub fn brute_acv(x: &PanelSeries, v: usize, lag: isize, g: usize) -> DMatrix<f64> {
    let vals = x.values();
    let p = vals.nrows();
    let l = lag.unsigned_abs();
    let mut out = DMatrix::zeros(p, p);
    for t in (v - g + 1 + l)..=v {
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] += vals[(i, t - l - 1)] * vals[(j, t - 1)];
            }
        }
    }
    out /= g as f64;
    if lag < 0 {
        out.transpose()
    } else {
        out
    }
}

pub fn bartlett(lag: isize, m: usize) -> f64 {
    if m == 0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    (1.0 - (lag.unsigned_abs() as f64) / m as f64).max(0.0)
}

/// `(2 pi)^{-1} sum_{|l| <= m} K(l/m) Gamma(l) e^{-i l omega}` term by term.
pub fn brute_spectral(x: &PanelSeries, v: usize, g: usize, m: usize, omega: f64) -> DMatrix<C64> {
    let p = x.dim();
    let mut out = DMatrix::from_element(p, p, C64::new(0.0, 0.0));
    for lag in -(m as isize)..=(m as isize) {
        let gam = brute_acv(x, v, lag, g);
        let w = bartlett(lag, m);
        let phase = C64::new((lag as f64 * omega).cos(), -(lag as f64 * omega).sin());
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] += phase * (w * gam[(i, j)]);
            }
        }
    }
    out / C64::new(2.0 * PI, 0.0)
}

/// Cyclic Jacobi eigenvalues of a real symmetric matrix, descending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].powi(2)).sum();
        let scale: f64 = m.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for pp in 0..n {
            for q in pp + 1..n {
                if m[(pp, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(pp, pp)]) / (2.0 * m[(pp, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, pp)];
                    let mkq = m[(k, q)];
                    m[(k, pp)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(pp, k)];
                    let mqk = m[(q, k)];
                    m[(pp, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Eigenvalues of a Hermitian matrix through the real embedding
/// `[[Re, -Im], [Im, Re]]`, whose spectrum repeats each one twice.
pub fn hermitian_eigenvalues_oracle(h: &DMatrix<C64>) -> Vec<f64> {
    let p = h.nrows();
    let big = DMatrix::from_fn(2 * p, 2 * p, |i, j| {
        let (bi, bj) = (i / p, j / p);
        let z = h[(i % p, j % p)];
        match (bi, bj) {
            (0, 0) | (1, 1) => z.re,
            (0, 1) => -z.im,
            _ => z.im,
        }
    });
    jacobi_eigenvalues(&big).into_iter().step_by(2).collect()
}

pub fn random_hermitian(r: &mut impl Rng, p: usize) -> DMatrix<C64> {
    let a = DMatrix::from_fn(p, p, |_, _| C64::new(r.sample(StandardNormal), r.sample(StandardNormal)));
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// Minimum of `|b|_1` subject to `|A b - y|_inf <= lambda` by enumerating
/// every vertex cut out by `k` of the hyperplanes `a_r b = y_r +- lambda`
/// and `b_i = 0`. Returns `None` when no vertex is feasible.
pub fn lp_vertex_oracle(a: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Option<(f64, DVector<f64>)> {
    let k = a.ncols();
    let mut planes: Vec<(DVector<f64>, f64)> = Vec::new();
    for r in 0..a.nrows() {
        let row = a.row(r).transpose();
        planes.push((row.clone(), y[r] + lambda));
        planes.push((row, y[r] - lambda));
    }
    for i in 0..k {
        let mut e = DVector::zeros(k);
        e[i] = 1.0;
        planes.push((e, 0.0));
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let m = DMatrix::from_fn(k, k, |i, j| planes[idx[i]].0[j]);
        let rhs = DVector::from_fn(k, |i, _| planes[idx[i]].1);
        if let Some(b) = m.clone().lu().solve(&rhs) {
            if (&m * &b - &rhs).amax() < 1e-9 {
                let feasible = (a * &b - y).amax() <= lambda + 1e-9;
                let obj = b.iter().map(|v| v.abs()).sum::<f64>();
                if feasible && best.as_ref().is_none_or(|(o, _)| obj < *o) {
                    best = Some((obj, b));
                }
            }
        }
        // next k-combination
        let total = planes.len();
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < total - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Autocovariances `rho^|l| / (1 - rho^2)` of a unit-variance AR(1).
pub fn ar1_gamma(rho: f64, lag: usize) -> f64 {
    rho.powi(lag as i32) / (1.0 - rho * rho)
}

/// Scalar AR(1) with a coefficient change, as a 1 x n panel.
pub fn piecewise_ar1(seed: u64, n: usize, change: usize, before: f64, after: f64) -> PanelSeries {
    let mut r = rng(seed);
    let burn = 200;
    let mut x = 0.0;
    let mut out = Vec::with_capacity(n);
    for t in 0..burn + n {
        let rho = if t < burn + change { before } else { after };
        x = rho * x + r.sample::<f64, _>(StandardNormal);
        if t >= burn {
            out.push(x);
        }
    }
    PanelSeries::new(DMatrix::from_row_slice(1, n, &out)).unwrap()
}
