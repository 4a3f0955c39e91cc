//! Contamination, stability audits, clipping, samplers and a filter-based
//! robust k-ePCA built on the deflation driver.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::adversarial::CoordinateLaw;
use crate::deflation::{black_box_pca, DeflationTrace};
use crate::error::{invalid, Error, Result};
use crate::linalg::{random_unit_vector, Frame, Projector, SymMatrix};
use crate::oracles::{Diagnostics, MatrixAccess, OneOracle, OracleAnswer};

/// `T_R(x) = min(1, sqrt(R)/||x||) x`. `r` is the squared radius.
pub fn clip(x: &DVector<f64>, r: f64) -> DVector<f64> {
    let n2 = x.norm_squared();
    if n2 <= r {
        x.clone()
    } else {
        x * (r / n2).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Squared clip radius.
    pub r: f64,
    pub rho: f64,
    pub p: u32,
    pub cp: f64,
}

impl ClipConfig {
    /// Smallest radius for which the clipped covariance is within
    /// `rho ||Sigma||` of `Sigma`: `R = (C_p^p / rho)^{2/(p-2)} Tr(Sigma)`.
    pub fn for_bias(rho: f64, p: u32, cp: f64, trace: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 0.5) {
            return Err(invalid(format!("rho = {rho} outside (0, 1/2)")));
        }
        check_hc(p, cp)?;
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(invalid("trace must be positive"));
        }
        let pf = p as f64;
        let r = (cp.powf(pf) / rho).powf(2.0 / (pf - 2.0)) * trace;
        Ok(ClipConfig { r, rho, p, cp })
    }

    /// Bias bound along `u`, relative to `u^T Sigma u`:
    /// `C_p^p (Tr / R)^{p/2 - 1}`.
    pub fn relative_bias_bound(&self, trace: f64) -> f64 {
        self.cp.powf(self.p as f64) * (trace / self.r).powf(self.p as f64 / 2.0 - 1.0)
    }

    /// Markov bound on `Pr(||x|| >= sqrt(R))`: `C_p^p (Tr / R)^{p/2}`.
    pub fn tail_bound(&self, trace: f64) -> f64 {
        self.cp.powf(self.p as f64) * (trace / self.r).powf(self.p as f64 / 2.0)
    }

    /// Value of [`Self::tail_bound`] at the radius chosen by [`Self::for_bias`].
    pub fn tail_at_bias_radius(&self) -> f64 {
        let pf = self.p as f64;
        (self.rho / (self.cp * self.cp)).powf(pf / (pf - 2.0))
    }
}

fn check_hc(p: u32, cp: f64) -> Result<()> {
    if p < 4 || p % 2 == 1 {
        return Err(invalid(format!("p = {p} must be an even integer >= 4")));
    }
    if !(cp >= 1.0 && cp.is_finite()) {
        return Err(invalid(format!("C_p = {cp} must be >= 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CorruptStrategy {
    /// All outliers at `+-magnitude * v`. Without a direction, `v` is the
    /// bottom eigenvector of the clean second moment.
    Spike { direction: Option<Vec<f64>>, magnitude: f64 },
    /// Outliers in a tight Gaussian blob of radius `spread` around
    /// `magnitude * v` for a seeded random unit `v`.
    Cluster { magnitude: f64, spread: f64 },
    /// Chosen inliers replaced by `-amplify * x`.
    Mirror { amplify: f64 },
}

impl CorruptStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptStrategy::Spike { .. } => "spike",
            CorruptStrategy::Cluster { .. } => "cluster",
            CorruptStrategy::Mirror { .. } => "mirror",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContaminatedSample {
    pub points: Vec<DVector<f64>>,
    pub inlier_mask: Vec<bool>,
    pub eps: f64,
}

impl ContaminatedSample {
    pub fn outliers(&self) -> usize {
        self.inlier_mask.iter().filter(|b| !**b).count()
    }
}

pub fn outlier_count(n: usize, eps: f64) -> usize {
    ((eps * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Replaces exactly `ceil(eps n)` points, chosen by a seeded shuffle.
pub fn corrupt(samples: &[DVector<f64>], eps: f64, strategy: &CorruptStrategy, seed: u64) -> Result<ContaminatedSample> {
    if !(0.0..0.5).contains(&eps) {
        return Err(invalid(format!("eps = {eps} outside [0, 1/2)")));
    }
    let n = samples.len();
    let mut points = samples.to_vec();
    let mut mask = vec![true; n];
    let m = outlier_count(n, eps);
    if m == 0 {
        return Ok(ContaminatedSample { points, inlier_mask: mask, eps });
    }
    let d = samples[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let chosen = &idx[..m];
    match strategy {
        CorruptStrategy::Spike { direction, magnitude } => {
            let v = match direction {
                Some(v) => {
                    let v = DVector::from_column_slice(v);
                    if v.len() != d || v.norm() == 0.0 {
                        return Err(invalid("spike direction has wrong length or is zero"));
                    }
                    v.normalize()
                }
                None => {
                    let s = second_moment(samples)?;
                    let sp = s.eig();
                    sp.vectors.column(d - 1)
                }
            };
            for (j, &i) in chosen.iter().enumerate() {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                points[i] = &v * (sign * magnitude);
            }
        }
        CorruptStrategy::Cluster { magnitude, spread } => {
            let v = random_unit_vector(d, &mut rng);
            for &i in chosen {
                let noise = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                points[i] = &v * *magnitude + noise * (*spread / (d as f64).sqrt());
            }
        }
        CorruptStrategy::Mirror { amplify } => {
            for &i in chosen {
                points[i] = &samples[i] * (-*amplify);
            }
        }
    }
    for &i in chosen {
        mask[i] = false;
    }
    Ok(ContaminatedSample { points, inlier_mask: mask, eps })
}

/// `(1/n) sum x x^T`.
pub fn second_moment(points: &[DVector<f64>]) -> Result<SymMatrix> {
    let x = stack(points)?;
    SymMatrix::new(x.transpose() * &x / points.len() as f64)
}

fn stack(points: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let Some(first) = points.first() else {
        return Err(invalid("empty point set"));
    };
    let d = first.len();
    if points.iter().any(|x| x.len() != d) {
        return Err(invalid("points have differing dimensions"));
    }
    Ok(DMatrix::from_fn(points.len(), d, |i, j| points[i][j]))
}

/// A weighting given by the mass removed from individual points; all other
/// points keep weight 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighting {
    pub removed: Vec<(usize, f64)>,
}

impl Weighting {
    pub fn none() -> Self {
        Weighting { removed: Vec::new() }
    }

    /// Remove `eps n` mass in the given order: whole points, then a
    /// fraction of the next one, so `E[w] = 1 - eps`.
    pub fn from_order(order: &[usize], eps: f64) -> Self {
        let mass = eps * order.len() as f64;
        let whole = (mass.floor() as usize).min(order.len());
        let mut removed: Vec<(usize, f64)> = order[..whole].iter().map(|&i| (i, 1.0)).collect();
        let frac = mass - whole as f64;
        if frac > 0.0 && whole < order.len() {
            removed.push((order[whole], frac));
        }
        Weighting { removed }
    }

    pub fn removed_mass(&self) -> f64 {
        self.removed.iter().map(|r| r.1).sum()
    }

    pub fn dense(&self, n: usize) -> Vec<f64> {
        let mut w = vec![1.0; n];
        for &(i, m) in &self.removed {
            w[i] -= m;
        }
        w
    }
}

/// `Sigma_w = E[w x x^T] / E[w]`, or `None` if no mass is left.
pub fn weighted_second_moment(points: &[DVector<f64>], full: &SymMatrix, w: &Weighting) -> Option<SymMatrix> {
    let n = points.len() as f64;
    let keep = n - w.removed_mass();
    if keep <= 1e-12 * n {
        return None;
    }
    let mut s = full.matrix() * n;
    for &(i, m) in &w.removed {
        let x = &points[i];
        s -= x * x.transpose() * m;
    }
    SymMatrix::new(s / keep).ok()
}

/// Smallest `g` with `(1 - g) S <= S_w <= (1 + g) S`, measured on
/// `range(S)`. Mass of `S_w` outside `range(S)` gives infinity.
pub fn loewner_violation(sigma_w: &SymMatrix, sigma_ref: &SymMatrix) -> f64 {
    let sp = sigma_ref.eig();
    let top = sp.values.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..sp.dim()).filter(|&i| sp.values[i] > 1e-12 * top.max(1e-300)).collect();
    if keep.is_empty() {
        return if sigma_w.op_norm() > 0.0 { f64::INFINITY } else { 0.0 };
    }
    let d = sigma_ref.dim();
    let v = sp.vectors.matrix();
    let w = DMatrix::from_fn(d, keep.len(), |i, j| v[(i, keep[j])] / sp.values[keep[j]].sqrt());
    let a = w.transpose() * sigma_w.matrix() * &w;
    let basis = DMatrix::from_fn(d, keep.len(), |i, j| v[(i, keep[j])]);
    let q = DMatrix::identity(d, d) - &basis * basis.transpose();
    let leak = crate::linalg::op_norm(&(&q * sigma_w.matrix() * &q));
    if leak > 1e-9 * sigma_w.op_norm().max(top) {
        return f64::INFINITY;
    }
    let ev = SymMatrix::new(a).map(|s| s.eig().values).unwrap_or_default();
    ev.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub eps: f64,
    pub gamma: f64,
    pub sigma_ref: SymMatrix,
    /// Worst violation over all audited weightings.
    pub audit: f64,
    pub trials: usize,
    pub pass: bool,
}

pub const DEFAULT_AUDIT_TRIALS: usize = 500;
const EXTREMAL_DIRECTIONS: usize = 3;

/// The weightings a stability audit inspects: no removal, `trials` random
/// removals, and greedy removals by `<u, x>^2` (largest first and smallest
/// first) along the top and bottom eigenvectors of `sigma_ref`.
pub fn audit_weightings(points: &[DVector<f64>], eps: f64, sigma_ref: &SymMatrix, trials: usize, seed: u64) -> Vec<Weighting> {
    let n = points.len();
    let mut out = vec![Weighting::none()];
    out.extend((0..trials).into_par_iter().map(|t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Weighting::from_order(&order, eps)
    }).collect::<Vec<_>>());
    let sp = sigma_ref.eig();
    let d = sp.dim();
    let mut dirs: Vec<usize> = (0..EXTREMAL_DIRECTIONS.min(d)).collect();
    dirs.extend((d.saturating_sub(EXTREMAL_DIRECTIONS)..d).filter(|i| *i >= EXTREMAL_DIRECTIONS.min(d)));
    for i in dirs {
        let u = sp.vectors.column(i);
        let s: Vec<f64> = points.iter().map(|x| x.dot(&u).powi(2)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| s[*b].total_cmp(&s[*a]).then(a.cmp(b)));
        out.push(Weighting::from_order(&order, eps));
        order.reverse();
        out.push(Weighting::from_order(&order, eps));
    }
    out
}

pub fn stability_audit(
    points: &[DVector<f64>],
    eps: f64,
    gamma: f64,
    sigma_ref: &SymMatrix,
    trials: usize,
    seed: u64,
) -> Result<StabilityCertificate> {
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(invalid(format!("eps = {eps} outside [0, 1]")));
    }
    let full = second_moment(points)?;
    if full.dim() != sigma_ref.dim() {
        return Err(invalid("reference covariance dimension differs from points"));
    }
    let ws = audit_weightings(points, eps, sigma_ref, trials, seed);
    let audit = ws
        .par_iter()
        .map(|w| match weighted_second_moment(points, &full, w) {
            Some(s) => loewner_violation(&s, sigma_ref),
            None => f64::INFINITY,
        })
        .reduce(|| 0.0, f64::max);
    Ok(StabilityCertificate { eps, gamma, sigma_ref: sigma_ref.clone(), audit, trials, pass: audit <= gamma })
}

/// Median of a chi-square(1) variable.
fn chi2_median() -> f64 {
    let q = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.75);
    q * q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub rounds: usize,
    pub removed_mass: f64,
    /// Mean score over the robust scale at exit; 1 on Gaussian-like data.
    pub balance: f64,
}

/// Quantile soft filter. Scores are `<x, v>^2` for the current top
/// direction `v` of the weighted second moment (projected by `p`). The data
/// count as balanced when the weighted mean score is at most `1 + gamma`
/// times the scale implied by the weighted median under a Gaussian
/// reference. Otherwise points above the `(1 - 2 eps)` score quantile are
/// scaled by `1 - s / s_max`. Stops when balanced, when `2 eps` of the mass
/// is gone, or after `ceil(4 / gamma)` rounds.
pub fn filter_1epca_projected(
    x: &DMatrix<f64>,
    full: &DMatrix<f64>,
    p: &Projector,
    eps: f64,
    gamma: f64,
) -> Result<(DVector<f64>, FilterReport)> {
    let (n, d) = (x.nrows(), x.ncols());
    if p.dim() != d {
        return Err(invalid("projector dimension differs from points"));
    }
    let pm = p.matrix().matrix();
    let nf = n as f64;
    let mut w = vec![1.0; n];
    let mut acc = full * nf;
    let budget = 2.0 * eps * nf;
    let max_rounds = if gamma > 0.0 { (4.0 / gamma).ceil() as usize } else { 1 };
    let m0 = chi2_median();
    let mut removed = 0.0;
    let mut rounds = 0;
    loop {
        let total: f64 = w.iter().sum();
        if total <= 1e-12 * nf {
            return Err(Error::FilterCollapse);
        }
        let pw = SymMatrix::new(pm * &acc * pm / total)?;
        let v = pw.eig().vectors.column(0);
        let proj = x * &v;
        let s: Vec<f64> = proj.iter().map(|t| t * t).collect();
        let mut active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
        active.sort_by(|a, b| s[*a].total_cmp(&s[*b]));
        let mean = active.iter().map(|&i| w[i] * s[i]).sum::<f64>() / total;
        let mut cum = 0.0;
        let mut med = 0.0;
        for &i in &active {
            cum += w[i];
            if cum >= total / 2.0 {
                med = s[i];
                break;
            }
        }
        let balance = if med > 0.0 { mean / (med / m0) } else if mean > 0.0 { f64::INFINITY } else { 1.0 };
        let done = balance <= 1.0 + gamma || removed >= budget || rounds >= max_rounds;
        if done {
            let v = pm * v;
            let nv = v.norm();
            let v = if nv > 0.0 { v / nv } else { v };
            return Ok((v, FilterReport { rounds, removed_mass: removed / nf, balance }));
        }
        rounds += 1;
        let cut = ((1.0 - 2.0 * eps) * active.len() as f64).floor() as usize;
        let smax = s[*active.last().expect("active set nonempty")];
        if smax <= 0.0 || cut >= active.len() {
            continue;
        }
        for &i in &active[cut..] {
            let nw = w[i] * (1.0 - s[i] / smax).max(0.0);
            let dw = w[i] - nw;
            if dw > 0.0 {
                let xi = x.row(i).transpose();
                acc -= &xi * xi.transpose() * dw;
                removed += dw;
                w[i] = nw;
            }
        }
    }
}

pub fn filter_1epca(points: &[DVector<f64>], eps: f64, gamma: f64) -> Result<DVector<f64>> {
    let x = stack(points)?;
    let full = x.transpose() * &x / points.len() as f64;
    Ok(filter_1epca_projected(&x, &full, &Projector::identity(x.ncols()), eps, gamma)?.0)
}

/// The filter as a 1-PCA oracle over a fixed sample set. Every call reuses
/// the same points; only the projector changes.
pub struct FilterOracle {
    eps: f64,
    gamma: f64,
    cache: Option<(usize, usize, DMatrix<f64>, DMatrix<f64>)>,
    pub reports: Vec<FilterReport>,
}

impl FilterOracle {
    pub fn new(eps: f64, gamma: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&eps) || !(gamma > 0.0) {
            return Err(invalid("need eps in [0, 1/2) and gamma > 0"));
        }
        Ok(FilterOracle { eps, gamma, cache: None, reports: Vec::new() })
    }
}

impl OneOracle for FilterOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        let MatrixAccess::Samples(points) = access else {
            return Err(invalid("filter oracle needs a fixed sample set"));
        };
        let key = (points.as_ptr() as usize, points.len());
        if self.cache.as_ref().map(|c| (c.0, c.1)) != Some(key) {
            let x = stack(points)?;
            let full = x.transpose() * &x / points.len() as f64;
            self.cache = Some((key.0, key.1, x, full));
        }
        let (_, _, x, full) = self.cache.as_ref().expect("cache filled");
        let (v, report) = filter_1epca_projected(x, full, p, self.eps, self.gamma)?;
        self.reports.push(report);
        Ok(OracleAnswer {
            vector: v,
            diagnostics: Diagnostics {
                iterations: report.rounds,
                residual: Some(report.removed_mass),
                samples: points.len(),
                ..Default::default()
            },
        })
    }
}

pub fn robust_kpca(points: &[DVector<f64>], eps: f64, gamma: f64, k: usize) -> Result<(Frame, DeflationTrace)> {
    let mut oracle = FilterOracle::new(eps, gamma)?;
    let trace = black_box_pca(&mut MatrixAccess::Samples(points), k, &mut oracle)?;
    Ok((trace.frame(), trace))
}

/// Symmetric square root of a PSD matrix.
pub fn psd_sqrt(sigma: &SymMatrix) -> Result<DMatrix<f64>> {
    let sp = sigma.eig();
    let top = sp.values.first().copied().unwrap_or(0.0).abs().max(1.0);
    if sp.values.iter().any(|&l| l < -1e-12 * top) {
        return Err(invalid("covariance is not PSD"));
    }
    let v = sp.vectors.matrix();
    let s = DMatrix::from_diagonal(&DVector::from_iterator(sp.dim(), sp.values.iter().map(|l| l.max(0.0).sqrt())));
    Ok(v * s * v.transpose())
}

/// Gaussian samples with covariance `sigma`.
pub fn sampler_subgaussian(sigma: &SymMatrix, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let root = psd_sqrt(sigma)?;
    let d = sigma.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| &root * DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))).collect())
}

/// A symmetric two-point coordinate law, rescaled to unit variance, whose
/// p-th moment ratio is `0.9 C_p` (or 1 if that is below 1).
pub fn hypercontractive_law(p: u32, cp: f64) -> Result<(CoordinateLaw, f64)> {
    check_hc(p, cp)?;
    let pf = p as f64;
    let gauss = (1..p).step_by(2).map(|j| j as f64).product::<f64>().powf(1.0 / pf);
    if cp < gauss {
        return Err(invalid(format!("C_p = {cp} below the Gaussian ratio {gauss:.4} at p = {p}")));
    }
    let target = (0.9 * cp).max(1.0);
    let eps = 0.5 * 0.01f64.min(target.powf(-2.0 * pf / (pf - 2.0)));
    let ratio = |a: f64| CoordinateLaw { eps, spike: a }.moment_ratio(p);
    let (mut lo, mut hi) = (1.0, 2.0);
    while ratio(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let law = CoordinateLaw { eps, spike: lo };
    let scale = 1.0 / law.variance().sqrt();
    Ok((law, scale))
}

/// `sigma^{1/2}` times a vector of i.i.d. unit-variance coordinates from
/// [`hypercontractive_law`].
pub fn sampler_hypercontractive(p: u32, cp: f64, sigma: &SymMatrix, n: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let (law, scale) = hypercontractive_law(p, cp)?;
    let root = psd_sqrt(sigma)?;
    let d = sigma.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| &root * DVector::from_fn(d, |_, _| scale * law.sample(&mut rng))).collect())
}

/// Streaming version of [`sampler_hypercontractive`].
pub struct HypercontractiveStream {
    root: DMatrix<f64>,
    law: CoordinateLaw,
    scale: f64,
    rng: ChaCha8Rng,
    remaining: usize,
}

impl HypercontractiveStream {
    pub fn new(p: u32, cp: f64, sigma: &SymMatrix, n: usize, seed: u64) -> Result<Self> {
        let (law, scale) = hypercontractive_law(p, cp)?;
        Ok(HypercontractiveStream { root: psd_sqrt(sigma)?, law, scale, rng: ChaCha8Rng::seed_from_u64(seed), remaining: n })
    }
}

impl crate::oracles::SampleSource for HypercontractiveStream {
    fn dim(&self) -> usize {
        self.root.nrows()
    }

    fn next_sample(&mut self) -> Option<DVector<f64>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let d = self.root.nrows();
        let z = DVector::from_fn(d, |_, _| self.scale * self.law.sample(&mut self.rng));
        Some(&self.root * z)
    }
}

/// `(X_{2i-1} - X_{2i}) / sqrt(2)`.
pub fn symmetrize(points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    points.chunks_exact(2).map(|c| (&c[0] - &c[1]) / std::f64::consts::SQRT_2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::epca_error;

    #[test]
    fn clip_examples() {
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(clip(&x, 25.0), x);
        let y = clip(&x, 6.25);
        assert!((y - &x / 2.0).norm() < 1e-12);
    }

    #[test]
    fn clip_config_tail_at_bias_radius() {
        let c = ClipConfig::for_bias(0.1, 4, 2.0, 7.0).unwrap();
        assert!((c.r - 160.0 * 7.0).abs() < 1e-9);
        assert!((c.tail_bound(7.0) - c.tail_at_bias_radius()).abs() < 1e-15);
        assert!((c.relative_bias_bound(7.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn corrupt_counts() {
        let xs = sampler_subgaussian(&SymMatrix::identity(3), 100, 1).unwrap();
        let s = corrupt(&xs, 0.1, &CorruptStrategy::Mirror { amplify: 5.0 }, 2).unwrap();
        assert_eq!(s.outliers(), 10);
        let s = corrupt(&xs, 0.0, &CorruptStrategy::Mirror { amplify: 5.0 }, 2).unwrap();
        assert_eq!(s.points, xs);
        assert!(corrupt(&xs, 0.5, &CorruptStrategy::Mirror { amplify: 5.0 }, 2).is_err());
    }

    #[test]
    fn spike_biases_naive_estimate() {
        let sigma = SymMatrix::from_diagonal(&[2.0, 1.0, 1.0, 1.0]).unwrap();
        let xs = sampler_subgaussian(&sigma, 4000, 3).unwrap();
        let v = vec![0.0, 0.0, 0.0, 1.0];
        let s = corrupt(&xs, 0.05, &CorruptStrategy::Spike { direction: Some(v), magnitude: 20.0 }, 4).unwrap();
        let top = second_moment(&s.points).unwrap().eig().vectors.column(0);
        assert!(top[3].abs() > 0.9);
        let f = filter_1epca(&s.points, 0.05, 0.2).unwrap();
        assert!(f[0].abs() > 0.95);
    }

    #[test]
    fn filter_clean_matches_top_eigvec() {
        let sigma = SymMatrix::from_diagonal(&[3.0, 1.0, 1.0]).unwrap();
        let xs = sampler_subgaussian(&sigma, 2000, 5).unwrap();
        let f = filter_1epca(&xs, 0.0, 0.1).unwrap();
        let top = second_moment(&xs).unwrap().eig().vectors.column(0);
        assert!((f.dot(&top).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn robust_kpca_full_basis() {
        let xs = sampler_subgaussian(&SymMatrix::identity(3), 200, 6).unwrap();
        let (u, _) = robust_kpca(&xs, 0.0, 0.1, 3).unwrap();
        let emp = second_moment(&xs).unwrap();
        assert!((crate::metrics::energy(&emp, &u) - emp.trace()).abs() < 1e-9);
        assert!(epca_error(&emp, &u).unwrap().epsilon_achieved.abs() < 1e-9);
    }

    #[test]
    fn audit_single_point_fails() {
        let xs = vec![DVector::from_vec(vec![1.0, 0.0])];
        let c = stability_audit(&xs, 1.0, 0.5, &SymMatrix::identity(2), 3, 0).unwrap();
        assert!(!c.pass && c.audit.is_infinite());
    }

    #[test]
    fn audit_gaussian_passes() {
        let xs = sampler_subgaussian(&SymMatrix::identity(4), 20_000, 8).unwrap();
        let eps: f64 = 0.05;
        let gamma = 5.0 * eps * (1.0 / eps).ln();
        let c = stability_audit(&xs, eps, gamma, &SymMatrix::identity(4), 50, 9).unwrap();
        assert!(c.pass, "audit {}", c.audit);
    }

    #[test]
    fn hypercontractive_law_ratio() {
        let (law, scale) = hypercontractive_law(4, 2.0).unwrap();
        assert!((law.moment_ratio(4) - 1.8).abs() < 1e-9);
        assert!((law.variance() * scale * scale - 1.0).abs() < 1e-12);
        assert!(hypercontractive_law(4, 1.2).is_err());
    }

    #[test]
    fn symmetrize_keeps_covariance() {
        let sigma = SymMatrix::from_diagonal(&[2.0, 1.0]).unwrap();
        let xs: Vec<_> = sampler_subgaussian(&sigma, 40_000, 10).unwrap().into_iter().map(|x| x.add_scalar(1.0)).collect();
        let ys = symmetrize(&xs);
        let s = second_moment(&ys).unwrap();
        assert!((s.get(0, 0) - 2.0).abs() < 0.1 && (s.get(1, 1) - 1.0).abs() < 0.05);
        let odd: f64 = ys.iter().map(|y| y[0].powi(3)).sum::<f64>() / ys.len() as f64;
        assert!(odd.abs() < 0.15);
    }

    #[test]
    fn sampler_rejects_indefinite() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]).unwrap();
        assert!(sampler_subgaussian(&m, 1, 0).is_err());
    }
}
