//! Streaming k-cPCA on clipped heavy-tailed data, and the transfer of a
//! cPCA guarantee from a perturbed covariance back to the original.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::deflation::{black_box_pca, CpcaSchedule, DeflationTrace};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cond_k, eig_sym, op_norm, Frame, SymMatrix};
use crate::oracles::{oja_required_samples, MatrixAccess, OjaOracle, OjaSchedule, OracleBudget, SampleSource};
use crate::robust::clip;

pub const DEFAULT_C_R: f64 = 4.0;
pub const DEFAULT_N_CONST: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub big_delta: f64,
    pub big_gamma: f64,
    pub p: u32,
    pub cp: f64,
    pub beta: f64,
    /// `kappa_k` of the stream covariance, assumed known.
    pub kappa: f64,
    pub c_r: f64,
    pub n_const: f64,
    /// `false` runs the same pipeline without clipping.
    pub clip: bool,
    pub seed: u64,
}

impl StreamConfig {
    pub fn new(n: usize, d: usize, k: usize, big_delta: f64, big_gamma: f64, kappa: f64) -> Self {
        StreamConfig {
            n,
            d,
            k,
            big_delta,
            big_gamma,
            p: 4,
            cp: 2.0,
            beta: 0.1,
            kappa,
            c_r: DEFAULT_C_R,
            n_const: DEFAULT_N_CONST,
            clip: true,
            seed: 0,
        }
    }

    /// `(C_p^2 kappa sqrt(k) / (Gamma sqrt(Delta)))^{1/(p-2)}`.
    pub fn alpha(&self) -> f64 {
        let base = self.cp * self.cp * self.kappa * (self.k as f64).sqrt() / (self.big_gamma * self.big_delta.sqrt());
        base.powf(1.0 / (self.p as f64 - 2.0))
    }

    /// Squared clip radius for a given trace estimate.
    pub fn radius(&self, trace: f64) -> f64 {
        self.c_r * self.alpha() * trace
    }

    /// Samples set aside to estimate the trace: `min(n/10, 10 d)`.
    pub fn trace_samples(&self) -> usize {
        (self.n / 10).min(10 * self.d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.k > self.d {
            return Err(invalid("need 1 <= k <= d"));
        }
        if self.p < 4 || self.p % 2 == 1 || !(self.cp >= 1.0) {
            return Err(invalid("need even p >= 4 and C_p >= 1"));
        }
        if !(self.big_delta > 0.0 && self.big_delta <= 1.0 && self.big_gamma > 0.0 && self.big_gamma < 1.0) {
            return Err(invalid("need Delta in (0, 1] and Gamma in (0, 1)"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) || !(self.kappa >= 1.0) {
            return Err(invalid("need beta in (0, 1) and kappa >= 1"));
        }
        if self.big_delta * self.kappa * self.kappa > self.big_gamma * self.big_gamma {
            return Err(Error::RegimeRejected(format!(
                "Delta kappa^2 = {:e} exceeds Gamma^2 = {:e}",
                self.big_delta * self.kappa * self.kappa,
                self.big_gamma * self.big_gamma
            )));
        }
        Ok(())
    }
}

/// Clips every sample on the way through and counts what it hands out.
pub struct ClippedSource<'a> {
    inner: &'a mut dyn SampleSource,
    r: f64,
    pub consumed: usize,
    pub clipped: usize,
}

impl<'a> ClippedSource<'a> {
    pub fn new(inner: &'a mut dyn SampleSource, r: f64) -> Self {
        ClippedSource { inner, r, consumed: 0, clipped: 0 }
    }
}

impl SampleSource for ClippedSource<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn next_sample(&mut self) -> Option<DVector<f64>> {
        let x = self.inner.next_sample()?;
        self.consumed += 1;
        if x.norm_squared() > self.r {
            self.clipped += 1;
        }
        Some(clip(&x, self.r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineRun {
    pub frame: Frame,
    pub trace: DeflationTrace,
    pub trace_estimate: f64,
    /// Squared clip radius used (infinite when clipping is off).
    pub radius: f64,
    pub segment_len: usize,
    pub clipped: usize,
    pub schedule: CpcaSchedule,
    /// Samples fell short of the per-call requirement.
    pub budget_warning: bool,
}

pub fn online_kcpca(stream: &mut dyn SampleSource, cfg: &StreamConfig) -> Result<OnlineRun> {
    cfg.validate()?;
    if stream.dim() != cfg.d {
        return Err(invalid("stream dimension differs from config"));
    }
    let m = cfg.trace_samples();
    let mut tr = 0.0;
    for i in 0..m {
        let x = stream.next_sample().ok_or_else(|| Error::BudgetExhausted {
            iterations: i,
            achieved: f64::NAN,
            target: cfg.n as f64,
        })?;
        tr += x.norm_squared();
    }
    let trace_estimate = if m > 0 { tr / m as f64 } else { f64::NAN };
    let radius = if cfg.clip && trace_estimate.is_finite() { cfg.radius(trace_estimate) } else { f64::INFINITY };
    let segment_len = (cfg.n - m) / cfg.k;
    if segment_len == 0 {
        return Err(Error::BudgetExhausted { iterations: 0, achieved: 0.0, target: cfg.k as f64 });
    }
    let schedule = CpcaSchedule::new(cfg.k, cfg.big_delta, cfg.big_gamma)?;
    let (delta, gamma) = (schedule.delta, schedule.gamma);
    let budget = OracleBudget::cpca(delta, gamma, 0, cfg.seed)?;
    budget.check_stream_precondition()?;
    let mut oracle = OjaOracle::new(&budget, segment_len)?
        .with_schedule(OjaSchedule::default())
        .with_confidence(cfg.beta / cfg.k as f64, cfg.n_const);
    let mut src = ClippedSource::new(stream, radius);
    let trace = black_box_pca(&mut MatrixAccess::Stream(&mut src), cfg.k, &mut oracle)?;
    let required = oja_required_samples(cfg.d, delta, gamma, cfg.beta / cfg.k as f64, cfg.n_const);
    let budget_warning = (segment_len as f64) < required || trace.steps.iter().any(|s| s.diagnostics.budget_warning);
    Ok(OnlineRun {
        frame: trace.frame(),
        clipped: src.clipped,
        trace,
        trace_estimate,
        radius,
        segment_len,
        schedule,
        budget_warning,
    })
}

/// `(8k (rho / (gamma lambda_k))^2 + 2 delta, 2 gamma)`.
pub fn perturbation_transfer(delta: f64, gamma: f64, rho: f64, lambda_k: f64, k: usize) -> Result<(f64, f64)> {
    if delta.max(gamma) > 0.1 || delta < 0.0 || gamma < 0.0 || k == 0 || !(lambda_k > 0.0) || rho < 0.0 {
        return Err(invalid("need 0 <= delta, gamma <= 1/10, k >= 1, lambda_k > 0, rho >= 0"));
    }
    let limit = gamma * lambda_k / 2.0;
    if rho >= limit {
        return Err(Error::PerturbationTooLarge { rho, limit });
    }
    let r = rho / (gamma * lambda_k);
    Ok((8.0 * k as f64 * r * r + 2.0 * delta, 2.0 * gamma))
}

/// `rho = sqrt(delta / (8k)) gamma lambda_k`.
pub fn transfer_radius(delta: f64, gamma: f64, lambda_k: f64, k: usize) -> f64 {
    (delta / (8.0 * k as f64)).sqrt() * gamma * lambda_k
}

/// Whether `kappa_k(Sigma_hat) <= 2 kappa_k(Sigma)`.
pub fn kappa_transfer_check(sigma: &SymMatrix, sigma_hat: &SymMatrix, gamma: f64, k: usize) -> Result<bool> {
    if sigma.dim() != sigma_hat.dim() {
        return Err(invalid("dimension mismatch"));
    }
    let lk = eig_sym(sigma)?.lambda(k);
    let rho = op_norm(&(sigma.matrix() - sigma_hat.matrix()));
    let limit = gamma * lk / 2.0;
    if rho > limit {
        return Err(Error::PerturbationTooLarge { rho, limit });
    }
    Ok(cond_k(sigma_hat, k)? <= 2.0 * cond_k(sigma, k)? + 1e-9)
}
