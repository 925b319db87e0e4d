//! Synthetic data: factor-driven components (static MA loadings, or
//! dynamic AR(1) filters), piecewise-stationary sparse VAR processes on
//! Erdos-Renyi graphs, and the composite scenarios built from them.
//!
//! Innovation streams run continuously across change points; only the
//! coefficients switch. Pre-sample behaviour: the MA loadings use two
//! pre-sample shocks, the AR(1) filters a 100-step burn-in and the VAR a
//! 200-step burn-in, all under the first segment's coefficients.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelSeries;
use crate::rng::{stream, STREAM_CHI, STREAM_VAR};

pub const C2_BURN_IN: usize = 100;
pub const VAR_BURN_IN: usize = 200;
const EDGE_WEIGHT: f64 = 0.4;
const MAX_GRAPH_DRAWS: usize = 10;

/// How the factor-driven component is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChiModel {
    /// No factor-driven component.
    None,
    /// Second-order MA loadings (admits a static factor representation).
    C1,
    /// AR(1) filtered factors (no static representation).
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    M1,
    M2,
    M3,
    #[serde(rename = "custom")]
    Custom,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            "m3" => Ok(Self::M3),
            "custom" => Ok(Self::Custom),
            other => Err(Error::Config(format!("unknown scenario '{other}'; valid options: m1, m2, m3, custom"))),
        }
    }
}

/// Full description of one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub p: usize,
    /// Number of common shocks.
    pub q: usize,
    /// VAR order.
    pub d: usize,
    pub scenario: Scenario,
    pub chi: ChiModel,
    pub chi_changes: Vec<usize>,
    pub xi_changes: Vec<usize>,
    /// Decay of the VAR coefficients across changes.
    pub beta: f64,
    pub seed: u64,
}

fn floor_frac(n: usize, num: usize, den: usize) -> usize {
    n * num / den
}

impl DgpSpec {
    /// Static-loading factors plus VAR(1); factor changes at n/4, n/2, 3n/4
    /// when `chi_changes` is set, VAR changes at 3n/8 and 5n/8.
    pub fn m1(n: usize, p: usize, chi_changes: bool, seed: u64) -> Self {
        Self {
            n,
            p,
            q: 2,
            d: 1,
            scenario: Scenario::M1,
            chi: ChiModel::C1,
            chi_changes: if chi_changes {
                vec![floor_frac(n, 1, 4), floor_frac(n, 1, 2), floor_frac(n, 3, 4)]
            } else {
                Vec::new()
            },
            xi_changes: vec![floor_frac(n, 3, 8), floor_frac(n, 5, 8)],
            beta: 1.0,
            seed,
        }
    }

    /// Dynamic factors plus VAR(1); changes (when set) at n/3 and 2n/3 in
    /// the factors, and always at n/3 and 2n/3 in the VAR.
    pub fn m2(n: usize, p: usize, chi_changes: bool, seed: u64) -> Self {
        let thirds = vec![floor_frac(n, 1, 3), floor_frac(n, 2, 3)];
        Self {
            n,
            p,
            q: 2,
            d: 1,
            scenario: Scenario::M2,
            chi: ChiModel::C2,
            chi_changes: if chi_changes { thirds.clone() } else { Vec::new() },
            xi_changes: thirds,
            beta: 1.0,
            seed,
        }
    }

    /// Pure VAR(d) with beta = 0.6 (d = 1) or 0.8 (d = 2); changes at 3n/8
    /// and 5n/8 when `xi_changes` is set.
    pub fn m3(n: usize, p: usize, d: usize, xi_changes: bool, seed: u64) -> Self {
        Self {
            n,
            p,
            q: 0,
            d,
            scenario: Scenario::M3,
            chi: ChiModel::None,
            chi_changes: Vec::new(),
            xi_changes: if xi_changes { vec![floor_frac(n, 3, 8), floor_frac(n, 5, 8)] } else { Vec::new() },
            beta: if d == 1 { 0.6 } else { 0.8 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return Err(Error::Config(format!("need n >= 2 and p >= 1, got n={}, p={}", self.n, self.p)));
        }
        if self.chi != ChiModel::None && (self.q < 1 || self.q > self.p) {
            return Err(Error::Config(format!("factor number q={} must satisfy 1 <= q <= p={}", self.q, self.p)));
        }
        if self.d < 1 {
            return Err(Error::Config("VAR order d must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        for (name, cps) in [("chi_changes", &self.chi_changes), ("xi_changes", &self.xi_changes)] {
            let mut prev = 0;
            for &c in cps {
                if c <= prev || c >= self.n {
                    return Err(Error::Config(format!(
                        "{name} must be strictly increasing inside (0, {}), got {cps:?}",
                        self.n
                    )));
                }
                prev = c;
            }
        }
        Ok(())
    }

    /// Message when adjacent change points are closer than `2 g`.
    pub fn spacing_warning(&self, g: usize) -> Option<String> {
        let close = |cps: &[usize]| {
            let mut b = vec![0];
            b.extend_from_slice(cps);
            b.push(self.n);
            b.windows(2).any(|w| w[1] - w[0] < 2 * g)
        };
        (close(&self.chi_changes) || close(&self.xi_changes))
            .then(|| format!("change points closer than 2G = {} for G = {g}", 2 * g))
    }
}

fn segment_of(t: usize, changes: &[usize]) -> usize {
    // t is 1-based; segment k covers (c_k, c_{k+1}]
    changes.partition_point(|&c| c < t)
}

fn normal_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// MA loadings `(B_0, B_1, B_2)` of one segment, each `p x q`.
pub type MaLoadings = [DMatrix<f64>; 3];

/// `chi_it = sum_j (B0 + B1 L + B2 L^2)_{ij} u_jt` with segment-specific
/// loadings. `u` is `q x (n + 2)`; its first two columns are pre-sample.
pub fn c1_filter(loadings: &[MaLoadings], changes: &[usize], u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if loadings.len() != changes.len() + 1 {
        return Err(Error::Contract("one loading set per segment required".into()));
    }
    let p = loadings[0][0].nrows();
    let n = u.ncols().checked_sub(2).ok_or_else(|| Error::Contract("u needs two pre-sample columns".into()))?;
    let mut chi = DMatrix::zeros(p, n);
    for t in 1..=n {
        let k = segment_of(t, changes);
        let col = t + 1;
        let mut x = &loadings[k][0] * u.column(col);
        x += &loadings[k][1] * u.column(col - 1);
        x += &loadings[k][2] * u.column(col - 2);
        chi.set_column(t - 1, &x);
    }
    Ok(chi)
}

/// `chi_it = sum_j a_ij (1 - alpha_ij L)^{-1} u_jt` with the AR
/// coefficients switching at the change points. `u` is
/// `q x (burn_in + n)`; the filters start at zero before the burn-in.
pub fn c2_filter(a: &DMatrix<f64>, alphas: &[DMatrix<f64>], changes: &[usize], u: &DMatrix<f64>, burn_in: usize) -> Result<DMatrix<f64>> {
    if alphas.len() != changes.len() + 1 {
        return Err(Error::Contract("one AR coefficient set per segment required".into()));
    }
    let (p, q) = a.shape();
    let n = u.ncols().checked_sub(burn_in).ok_or_else(|| Error::Contract("u shorter than burn-in".into()))?;
    let mut state = DMatrix::<f64>::zeros(p, q);
    let mut chi = DMatrix::zeros(p, n);
    for s in 0..u.ncols() {
        let t = s as isize - burn_in as isize + 1;
        let k = if t < 1 { 0 } else { segment_of(t as usize, changes) };
        for j in 0..q {
            let shock = u[(j, s)];
            for i in 0..p {
                state[(i, j)] = alphas[k][(i, j)] * state[(i, j)] + shock;
            }
        }
        if t >= 1 {
            for i in 0..p {
                chi[(i, t as usize - 1)] = (0..q).map(|j| a[(i, j)] * state[(i, j)]).sum();
            }
        }
    }
    Ok(chi)
}

/// `xi_t = sum_l A_l^{[k]} xi_{t-l} + eps_t` with `eps` of shape
/// `p x (burn_in + n)` and zero initial values before the burn-in.
pub fn var_filter(coefs: &[Vec<DMatrix<f64>>], changes: &[usize], eps: &DMatrix<f64>, burn_in: usize) -> Result<DMatrix<f64>> {
    if coefs.len() != changes.len() + 1 {
        return Err(Error::Contract("one coefficient set per segment required".into()));
    }
    let p = eps.nrows();
    let total = eps.ncols();
    let n = total.checked_sub(burn_in).ok_or_else(|| Error::Contract("innovations shorter than burn-in".into()))?;
    let mut path = DMatrix::<f64>::zeros(p, total);
    for s in 0..total {
        let t = s as isize - burn_in as isize + 1;
        let k = if t < 1 { 0 } else { segment_of(t as usize, changes) };
        let mut x: DVector<f64> = eps.column(s).into_owned();
        for (l, a) in coefs[k].iter().enumerate() {
            if s > l {
                x += a * path.column(s - l - 1);
            }
        }
        path.set_column(s, &x);
    }
    Ok(path.columns(burn_in, n).into_owned())
}

/// Generated factor-driven component with its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiComponent {
    pub values: DMatrix<f64>,
    pub coefficients: ChiCoefficients,
    /// Rows whose coefficients were changed at each change point.
    pub redrawn: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChiCoefficients {
    C1(Vec<MaLoadings>),
    C2 { a: DMatrix<f64>, alphas: Vec<DMatrix<f64>> },
}

fn redraw_set(rng: &mut ChaCha20Rng, p: usize) -> Vec<usize> {
    let mut rows = sample(rng, p, p / 2).into_vec();
    rows.sort_unstable();
    rows
}

fn shock_sd(j: usize) -> f64 {
    if j == 0 { 1.0 } else { 0.5 }
}

/// Static-loading factor component; at each change the loadings of a random
/// half of the rows are redrawn.
pub fn gen_chi_c1(spec: &DgpSpec, seed: u64) -> Result<ChiComponent> {
    spec.validate()?;
    let (n, p, q) = (spec.n, spec.p, spec.q);
    let mut rng = stream(seed, &[STREAM_CHI, 1]);
    let mut loadings: Vec<MaLoadings> = vec![[
        normal_matrix(&mut rng, p, q),
        normal_matrix(&mut rng, p, q),
        normal_matrix(&mut rng, p, q),
    ]];
    let mut redrawn = Vec::new();
    for _ in &spec.chi_changes {
        let mut next = loadings.last().unwrap().clone();
        let rows = redraw_set(&mut rng, p);
        for &i in &rows {
            for j in 0..q {
                for b in next.iter_mut() {
                    b[(i, j)] = rng.sample(StandardNormal);
                }
            }
        }
        loadings.push(next);
        redrawn.push(rows);
    }
    let mut u = normal_matrix(&mut rng, q, n + 2);
    for (j, mut row) in u.row_iter_mut().enumerate() {
        row *= shock_sd(j);
    }
    let values = c1_filter(&loadings, &spec.chi_changes, &u)?;
    Ok(ChiComponent { values, coefficients: ChiCoefficients::C1(loadings), redrawn })
}

/// Dynamic factor component; at each change the AR coefficients of a random
/// half of the rows flip sign.
pub fn gen_chi_c2(spec: &DgpSpec, seed: u64) -> Result<ChiComponent> {
    spec.validate()?;
    let (n, p, q) = (spec.n, spec.p, spec.q);
    let mut rng = stream(seed, &[STREAM_CHI, 2]);
    let unit = Uniform::new_inclusive(-1.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let ar = Uniform::new_inclusive(-0.8, 0.8).map_err(|e| Error::Config(e.to_string()))?;
    let a = DMatrix::from_fn(p, q, |_, _| unit.sample(&mut rng));
    let mut alphas = vec![DMatrix::from_fn(p, q, |_, _| ar.sample(&mut rng))];
    let mut redrawn = Vec::new();
    for _ in &spec.chi_changes {
        let mut next = alphas.last().unwrap().clone();
        let rows = redraw_set(&mut rng, p);
        for &i in &rows {
            for j in 0..q {
                next[(i, j)] = -next[(i, j)];
            }
        }
        alphas.push(next);
        redrawn.push(rows);
    }
    let u = normal_matrix(&mut rng, q, C2_BURN_IN + n);
    let values = c2_filter(&a, &alphas, &spec.chi_changes, &u, C2_BURN_IN)?;
    Ok(ChiComponent { values, coefficients: ChiCoefficients::C2 { a, alphas }, redrawn })
}

/// Spectral radius of the VAR companion matrix.
pub fn companion_radius(coefs: &[DMatrix<f64>]) -> f64 {
    let d = coefs.len();
    if d == 0 {
        return 0.0;
    }
    let p = coefs[0].nrows();
    let mut comp = DMatrix::zeros(p * d, p * d);
    for (l, a) in coefs.iter().enumerate() {
        comp.view_mut((0, l * p), (p, p)).copy_from(a);
    }
    for l in 1..d {
        comp.view_mut((l * p, (l - 1) * p), (p, p)).fill_with_identity();
    }
    let dim = comp.nrows();
    match nalgebra::Schur::try_new(comp.clone(), f64::EPSILON, 1000 * dim) {
        Some(schur) => schur.complex_eigenvalues().iter().fold(0.0, |acc, z| acc.max(z.norm())),
        // defective matrices can stall the QR iteration; fall back to the
        // Gelfand bound |A^k|^(1/k) at k = 2^20, an upper bound on the radius
        None => gelfand_radius(comp),
    }
}

fn gelfand_radius(mut a: DMatrix<f64>) -> f64 {
    // invariant: A^k = exp(log_scale) * a
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..20 {
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale = 2.0 * (log_scale + norm.ln());
        a = &a * &a;
        k *= 2.0;
    }
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    ((log_scale + norm.ln()) / k).exp()
}

fn erdos_renyi_matrix(rng: &mut ChaCha20Rng, p: usize, target_norm: f64) -> Option<DMatrix<f64>> {
    let prob = 1.0 / p as f64;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            if i != j && rng.random::<f64>() < prob {
                a[(i, j)] = EDGE_WEIGHT;
            }
        }
    }
    let norm = a.clone().singular_values().max();
    if norm == 0.0 {
        return None;
    }
    Some(a * (target_norm / norm))
}

/// Generated VAR component with the per-segment transition matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct VarComponent {
    pub values: DMatrix<f64>,
    /// `coefficients[k][l]` is `A_{l+1}` in segment `k`.
    pub coefficients: Vec<Vec<DMatrix<f64>>>,
    /// Graph draws rejected for being empty or non-stationary.
    pub rejected_draws: usize,
}

/// Piecewise-stationary VAR(d) on a directed Erdos-Renyi graph with edge
/// probability `1/p`. Entries are 0.4 on edges, rescaled to spectral norm 1
/// (d = 1) or 0.5 per lag (d = 2); across change `k` the coefficients
/// become `-beta^k` times the previous ones.
pub fn gen_piecewise_var(spec: &DgpSpec, seed: u64) -> Result<VarComponent> {
    spec.validate()?;
    let (n, p, d) = (spec.n, spec.p, spec.d);
    if p < 2 {
        return Err(Error::Config("the Erdos-Renyi VAR generator needs p >= 2".into()));
    }
    let target = if d == 1 { 1.0 } else { 0.5 };
    let mut rng = stream(seed, &[STREAM_VAR]);
    let mut rejected = 0;
    let base = loop {
        if rejected >= MAX_GRAPH_DRAWS {
            return Err(Error::Config(format!(
                "no stationary non-empty VAR graph after {MAX_GRAPH_DRAWS} draws (p={p}, d={d})"
            )));
        }
        let draw: Option<Vec<DMatrix<f64>>> = (0..d).map(|_| erdos_renyi_matrix(&mut rng, p, target)).collect();
        match draw {
            Some(coefs) if companion_radius(&coefs) < 1.0 - 1e-8 => break coefs,
            _ => {
                rejected += 1;
                log::debug!("rejected VAR graph draw {rejected}");
            }
        }
    };
    let mut coefficients = vec![base];
    for k in 1..=spec.xi_changes.len() {
        let factor = -spec.beta.powi(k as i32);
        let next: Vec<DMatrix<f64>> = coefficients[k - 1].iter().map(|a| a * factor).collect();
        if companion_radius(&next) >= 1.0 {
            return Err(Error::Numerical(format!("segment {k} VAR is not stationary")));
        }
        coefficients.push(next);
    }
    let eps = normal_matrix(&mut rng, p, VAR_BURN_IN + n);
    let values = var_filter(&coefficients, &spec.xi_changes, &eps, VAR_BURN_IN)?;
    Ok(VarComponent { values, coefficients, rejected_draws: rejected })
}

/// Ground truth accompanying a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: DgpSpec,
    pub chi_changes: Vec<usize>,
    pub xi_changes: Vec<usize>,
    /// `var_coefficients[k][l]` as row-major `p x p` entries.
    pub var_coefficients: Vec<Vec<Vec<f64>>>,
}

/// `X = chi + xi`, with both components retained.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub x: PanelSeries,
    pub chi: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub truth: Truth,
}

pub fn gen_dataset(spec: &DgpSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let chi = match spec.chi {
        ChiModel::None => DMatrix::zeros(spec.p, spec.n),
        ChiModel::C1 => gen_chi_c1(spec, spec.seed)?.values,
        ChiModel::C2 => gen_chi_c2(spec, spec.seed)?.values,
    };
    let var = gen_piecewise_var(spec, spec.seed)?;
    let x = PanelSeries::new(&chi + &var.values)?;
    let var_coefficients = var
        .coefficients
        .iter()
        .map(|seg| seg.iter().map(|a| a.transpose().iter().copied().collect()).collect())
        .collect();
    let chi_changes = if spec.chi == ChiModel::None { Vec::new() } else { spec.chi_changes.clone() };
    Ok(GeneratedDataset {
        x,
        chi,
        xi: var.values,
        truth: Truth { spec: spec.clone(), chi_changes, xi_changes: spec.xi_changes.clone(), var_coefficients },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelfand_radius_bounds() {
        let nilpotent = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(gelfand_radius(nilpotent), 0.0);
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -0.9, 0.2]));
        assert!((gelfand_radius(diag) - 0.9).abs() < 1e-6);
        let jordan = DMatrix::from_row_slice(2, 2, &[0.8, 1.0, 0.0, 0.8]);
        let r = gelfand_radius(jordan);
        assert!(r >= 0.8 && r < 0.8001, "{r}");
    }
    use approx::assert_abs_diff_eq;

    #[test]
    fn c1_passthrough() {
        let ones = DMatrix::from_element(1, 1, 1.0);
        let zeros = DMatrix::zeros(1, 1);
        let loadings = vec![[ones, zeros.clone(), zeros]];
        let u = DMatrix::from_row_slice(1, 6, &[9.0, 9.0, 1.0, -2.0, 3.0, 0.5]);
        let chi = c1_filter(&loadings, &[], &u).unwrap();
        assert_eq!(chi.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn c2_impulse_response_and_no_memory() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let alphas = vec![DMatrix::from_element(1, 1, 0.5)];
        let mut u = DMatrix::zeros(1, 8);
        u[(0, 0)] = 1.0;
        let chi = c2_filter(&a, &alphas, &[], &u, 0).unwrap();
        for t in 0..8 {
            assert_abs_diff_eq!(chi[(0, t)], 0.5f64.powi(t as i32), epsilon = 1e-15);
        }
        let a = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 0.25, 0.75]);
        let u = DMatrix::from_fn(2, 10, |j, s| (j as f64 + 1.0) * (s as f64 - 4.0));
        let chi = c2_filter(&a, &[DMatrix::zeros(2, 2)], &[], &u, 3).unwrap();
        assert!((chi - &a * u.columns(3, 7)).amax() < 1e-14);
    }

    #[test]
    fn c1_change_keeps_unselected_rows() {
        let spec = DgpSpec::m1(200, 10, true, 5);
        let comp = gen_chi_c1(&spec, 5).unwrap();
        let ChiCoefficients::C1(l) = &comp.coefficients else { panic!() };
        assert_eq!(l.len(), 4);
        for (k, rows) in comp.redrawn.iter().enumerate() {
            assert_eq!(rows.len(), 5);
            for i in 0..10 {
                let same = (0..3).all(|b| l[k][b].row(i) == l[k + 1][b].row(i));
                assert_eq!(same, !rows.contains(&i));
            }
        }
    }

    #[test]
    fn c2_flip_rows() {
        let spec = DgpSpec::m2(300, 7, true, 9);
        let comp = gen_chi_c2(&spec, 9).unwrap();
        let ChiCoefficients::C2 { alphas, .. } = &comp.coefficients else { panic!() };
        for (k, rows) in comp.redrawn.iter().enumerate() {
            assert_eq!(rows.len(), 3);
            for i in 0..7 {
                for j in 0..2 {
                    let want = if rows.contains(&i) { -alphas[k][(i, j)] } else { alphas[k][(i, j)] };
                    assert_eq!(alphas[k + 1][(i, j)], want);
                }
            }
        }
    }

    #[test]
    fn var_construction() {
        let mut spec = DgpSpec::m3(400, 12, 1, true, 3);
        spec.beta = 1.0;
        let v = gen_piecewise_var(&spec, 3).unwrap();
        let a0 = &v.coefficients[0][0];
        assert_abs_diff_eq!(a0.clone().singular_values().max(), 1.0, epsilon = 1e-10);
        assert_eq!(&v.coefficients[1][0], &(-a0));
        assert!(a0.iter().all(|&x| x == 0.0 || x > 0.0));
        assert_eq!(gen_piecewise_var(&spec, 3).unwrap(), v);

        let spec2 = DgpSpec::m3(400, 12, 2, false, 4);
        let v2 = gen_piecewise_var(&spec2, 4).unwrap();
        for a in &v2.coefficients[0] {
            assert_abs_diff_eq!(a.clone().singular_values().max(), 0.5, epsilon = 1e-10);
        }
        assert!(companion_radius(&v2.coefficients[0]) < 1.0);

        let mut scalar = DgpSpec::m3(100, 1, 1, false, 1);
        scalar.p = 1;
        assert!(matches!(gen_piecewise_var(&scalar, 1), Err(Error::Config(_))));
    }

    #[test]
    fn var_filter_matches_recursion() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let b = DMatrix::from_element(1, 1, -0.5);
        let eps = DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, 1.0, 0.0]);
        let x = var_filter(&[vec![a], vec![b]], &[2], &eps, 0).unwrap();
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5, -0.25, 1.125, -0.5625]);
    }

    #[test]
    fn scenarios() {
        let m3 = gen_dataset(&DgpSpec::m3(400, 10, 1, true, 1)).unwrap();
        assert!(m3.chi.iter().all(|&v| v == 0.0));
        assert_eq!(m3.truth.xi_changes, vec![150, 250]);
        let m1 = DgpSpec::m1(2000, 50, true, 1);
        assert_eq!(m1.xi_changes, vec![750, 1250]);
        assert_eq!(m1.chi_changes, vec![500, 1000, 1500]);
        let ds = gen_dataset(&DgpSpec::m1(300, 8, true, 2)).unwrap();
        assert_eq!(ds.x.values(), &(&ds.chi + &ds.xi));
        assert_eq!(ds.x.dim(), 8);
        assert_eq!(ds.x.len(), 300);
        assert_eq!(gen_dataset(&DgpSpec::m1(300, 8, true, 2)).unwrap(), ds);
        let ds2 = gen_dataset(&DgpSpec::m2(300, 8, true, 2)).unwrap();
        assert_eq!(ds2.x.values(), &(&ds2.chi + &ds2.xi));
        assert!("m4".parse::<Scenario>().is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = DgpSpec::m1(300, 8, true, 2);
        s.q = 9;
        assert!(matches!(gen_dataset(&s), Err(Error::Config(_))));
        let mut s = DgpSpec::m1(300, 8, true, 2);
        s.xi_changes = vec![200, 100];
        assert!(s.validate().is_err());
    }
}
