//! Approximate 1-PCA oracles.
//!
//! An oracle receives access to `M` (an explicit matrix, a fixed sample set
//! or a stream) and a projector `P`, and returns a unit vector in `span(P)`
//! that approximately maximizes `u^T P M P u`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{random_unit_vector, Frame, Projector, Spectrum, SymMatrix, SPAN_TOL};

/// A source of i.i.d. samples consumed one at a time.
pub trait SampleSource {
    fn dim(&self) -> usize;
    fn next_sample(&mut self) -> Option<DVector<f64>>;
}

impl<I: Iterator<Item = DVector<f64>>> SampleSource for (usize, I) {
    fn dim(&self) -> usize {
        self.0
    }
    fn next_sample(&mut self) -> Option<DVector<f64>> {
        self.1.next()
    }
}

pub enum MatrixAccess<'a> {
    Explicit(&'a SymMatrix),
    /// A fixed sample set; `M` is its second moment. Reused across calls.
    Samples(&'a [DVector<f64>]),
    Stream(&'a mut dyn SampleSource),
}

impl MatrixAccess<'_> {
    pub fn dim(&self) -> usize {
        match self {
            MatrixAccess::Explicit(m) => m.dim(),
            MatrixAccess::Samples(s) => s.first().map_or(0, |x| x.len()),
            MatrixAccess::Stream(s) => s.dim(),
        }
    }

    pub fn explicit(&self) -> Option<&SymMatrix> {
        match self {
            MatrixAccess::Explicit(m) => Some(m),
            _ => None,
        }
    }

    fn require_explicit(&self, who: &str) -> Result<&SymMatrix> {
        self.explicit().ok_or_else(|| invalid(format!("{who} oracle needs an explicit matrix")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Oracle-specific achieved residual: certified mass for power
    /// iteration, spent energy error for the adversary.
    pub residual: Option<f64>,
    pub samples: usize,
    /// `P M P` vanished and the vector is an arbitrary unit vector in span(P).
    pub null_residual: bool,
    /// The requested budget was not certifiably met.
    pub budget_warning: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAnswer {
    pub vector: DVector<f64>,
    pub diagnostics: Diagnostics,
}

pub trait OneOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer>;
}

impl<T: OneOracle + ?Sized> OneOracle for Box<T> {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        (**self).query(access, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contract {
    Epca { epsilon: f64 },
    Cpca { delta: f64, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub contract: Contract,
    pub max_iters: usize,
    pub rng_seed: u64,
}

impl OracleBudget {
    pub fn epca(epsilon: f64, max_iters: usize, rng_seed: u64) -> Result<Self> {
        unit_interval("epsilon", epsilon)?;
        Ok(OracleBudget { contract: Contract::Epca { epsilon }, max_iters, rng_seed })
    }

    pub fn cpca(delta: f64, gamma: f64, max_iters: usize, rng_seed: u64) -> Result<Self> {
        unit_interval("delta", delta)?;
        unit_interval("gamma", gamma)?;
        Ok(OracleBudget { contract: Contract::Cpca { delta, gamma }, max_iters, rng_seed })
    }

    pub fn cpca_params(&self) -> Result<(f64, f64)> {
        match self.contract {
            Contract::Cpca { delta, gamma } => Ok((delta, gamma)),
            Contract::Epca { .. } => Err(invalid("budget carries an ePCA contract")),
        }
    }

    /// `delta <= gamma^2 / 256`, required of streaming oracles.
    pub fn check_stream_precondition(&self) -> Result<()> {
        let (delta, gamma) = self.cpca_params()?;
        if delta > gamma * gamma / 256.0 {
            return Err(Error::PrecondUnmet(format!(
                "delta = {delta:e} exceeds gamma^2/256 = {:e}",
                gamma * gamma / 256.0
            )));
        }
        Ok(())
    }
}

fn unit_interval(name: &str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(invalid(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(())
}

/// `P M P` restricted to `span(P)`: an orthonormal basis `B` of the range
/// and the spectrum of `B^T M B`.
pub struct Restricted {
    pub basis: Frame,
    pub spectrum: Spectrum,
}

impl Restricted {
    pub fn new(m: &SymMatrix, p: &Projector) -> Result<Self> {
        if m.dim() != p.dim() {
            return Err(invalid("matrix and projector dimensions differ"));
        }
        let basis = p.range_frame();
        if basis.cols() == 0 {
            return Err(Error::NullResidualSpace);
        }
        let b = basis.matrix();
        let a = SymMatrix::new(b.transpose() * m.matrix() * b)?;
        Ok(Restricted { spectrum: a.eig(), basis })
    }

    pub fn lift(&self, y: &DVector<f64>) -> DVector<f64> {
        self.basis.matrix() * y
    }

    pub fn top(&self) -> f64 {
        self.spectrum.values[0]
    }

    fn vanishes(&self, m: &SymMatrix) -> bool {
        self.top() <= 1e-14 * m.frobenius().max(1.0)
    }
}

/// Returns the exact top eigenvector of `P M P` within span(P).
#[derive(Debug, Clone, Default)]
pub struct ExactOracle;

impl OneOracle for ExactOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        let m = access.require_explicit("exact")?;
        let r = Restricted::new(m, p)?;
        let null = r.vanishes(m);
        let v = r.lift(&r.spectrum.vectors.column(0));
        Ok(OracleAnswer {
            vector: v,
            diagnostics: Diagnostics { residual: Some(0.0), null_residual: null, ..Default::default() },
        })
    }
}

/// Power iteration with an internal eigendecomposition that certifies the
/// `(delta, gamma)` contract before returning.
#[derive(Debug, Clone)]
pub struct PowerOracle {
    delta: f64,
    gamma: f64,
    max_iters: usize,
    check_every: usize,
    rng: ChaCha8Rng,
}

impl PowerOracle {
    pub fn new(budget: &OracleBudget) -> Result<Self> {
        let (delta, gamma) = budget.cpca_params()?;
        Ok(PowerOracle {
            delta,
            gamma,
            max_iters: budget.max_iters,
            check_every: 1,
            rng: ChaCha8Rng::seed_from_u64(budget.rng_seed),
        })
    }

    /// Only test the certificate every `n` iterations.
    pub fn check_every(mut self, n: usize) -> Self {
        self.check_every = n.max(1);
        self
    }
}

impl OneOracle for PowerOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        let m = access.require_explicit("power")?;
        let r = Restricted::new(m, p)?;
        let dim = r.basis.cols();
        let mut y = random_unit_vector(dim, &mut self.rng);
        if r.vanishes(m) {
            return Ok(OracleAnswer {
                vector: r.lift(&y),
                diagnostics: Diagnostics { null_residual: true, ..Default::default() },
            });
        }
        let thr = (1.0 - self.gamma) * r.top();
        let first_small = r.spectrum.values.iter().filter(|&&x| x >= thr).count();
        let small = r.spectrum.vectors.slice(first_small..dim);
        let small_t = small.matrix().transpose();
        let a = {
            let b = r.basis.matrix();
            b.transpose() * m.matrix() * b
        };
        let mass = |y: &DVector<f64>| (&small_t * y).norm_squared();

        let mut it = 0;
        let mut achieved = mass(&y);
        while achieved > self.delta {
            if it >= self.max_iters {
                return Err(Error::BudgetExhausted { iterations: it, achieved, target: self.delta });
            }
            for _ in 0..self.check_every {
                let z = &a * &y;
                let n = z.norm();
                if n == 0.0 {
                    break;
                }
                y = z / n;
                it += 1;
            }
            achieved = mass(&y);
        }
        Ok(OracleAnswer {
            vector: r.lift(&y),
            diagnostics: Diagnostics { iterations: it, residual: Some(achieved), ..Default::default() },
        })
    }
}

/// Adversarial ePCA oracle that spends its whole error budget: it mixes the
/// top eigenvector of the restricted matrix with the bottom one so the
/// per-call energy error is exactly `epsilon` whenever that is achievable.
#[derive(Debug, Clone)]
pub struct AdversarialEpcaOracle {
    epsilon: f64,
}

impl AdversarialEpcaOracle {
    pub fn new(epsilon: f64) -> Result<Self> {
        unit_interval("epsilon", epsilon)?;
        Ok(AdversarialEpcaOracle { epsilon })
    }
}

impl OneOracle for AdversarialEpcaOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        let m = access.require_explicit("adversarial")?;
        let r = Restricted::new(m, p)?;
        let dim = r.basis.cols();
        let top = r.lift(&r.spectrum.vectors.column(0));
        if dim == 1 || self.epsilon == 0.0 {
            return Ok(OracleAnswer {
                vector: top,
                diagnostics: Diagnostics { residual: Some(0.0), null_residual: r.vanishes(m), ..Default::default() },
            });
        }
        let worst = r.lift(&r.spectrum.vectors.column(dim - 1));
        let (hi, lo) = (r.spectrum.values[0], r.spectrum.values[dim - 1]);
        // mixing weight t with t (hi - lo) / hi = epsilon
        let t = if hi > lo { self.epsilon * hi / (hi - lo) } else { f64::INFINITY };
        let (v, achieved) = if t >= 1.0 {
            let e = if hi > 0.0 { 1.0 - lo / hi } else { 0.0 };
            (worst, e)
        } else {
            ((1.0 - t).sqrt() * top + t.sqrt() * worst, self.epsilon)
        };
        let v = p.apply(&v);
        let n = v.norm();
        Ok(OracleAnswer {
            vector: v / n,
            diagnostics: Diagnostics { residual: Some(achieved), null_residual: r.vanishes(m), ..Default::default() },
        })
    }
}

/// Replays a fixed list of answers, then defers to an optional fallback.
pub struct ScriptedOracle {
    answers: Vec<DVector<f64>>,
    next: usize,
    fallback: Option<Box<dyn OneOracle>>,
}

impl ScriptedOracle {
    pub fn new(answers: Vec<DVector<f64>>) -> Self {
        ScriptedOracle { answers, next: 0, fallback: None }
    }

    pub fn with_fallback(mut self, oracle: Box<dyn OneOracle>) -> Self {
        self.fallback = Some(oracle);
        self
    }
}

impl OneOracle for ScriptedOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        let step = self.next + 1;
        let Some(u) = self.answers.get(self.next).cloned() else {
            return match self.fallback.as_mut() {
                Some(f) => {
                    self.next += 1;
                    f.query(access, p)
                }
                None => Err(Error::OracleContractViolation { step, reason: "script exhausted".into() }),
            };
        };
        self.next += 1;
        if u.len() != p.dim() {
            return Err(Error::OracleContractViolation { step, reason: "answer has wrong length".into() });
        }
        let res = p.span_residual(&u);
        if res > SPAN_TOL {
            return Err(Error::OracleContractViolation {
                step,
                reason: format!("scripted answer leaves span(P) by {res:e}"),
            });
        }
        Ok(OracleAnswer { vector: u, diagnostics: Diagnostics { residual: None, ..Default::default() } })
    }
}

/// Step-size schedule for Oja's rule. The first `warmup` fraction of the
/// samples use `eta0 = warm_scale / tr`, where `tr` is the running mean of
/// `||P x||^2`; afterwards `eta_t = c / (lambda_hat (t + t0))` with `t0`
/// chosen so the two phases join continuously.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OjaSchedule {
    pub warmup: f64,
    pub warm_scale: f64,
    pub c: f64,
}

impl Default for OjaSchedule {
    fn default() -> Self {
        OjaSchedule { warmup: 0.5, warm_scale: 0.5, c: 2.0 }
    }
}

/// Sample count below which the streaming oracle flags its budget as
/// uncertifiable: `n_const * d / (delta gamma^2) * ln(d / beta)`.
pub fn oja_required_samples(d: usize, delta: f64, gamma: f64, beta: f64, n_const: f64) -> f64 {
    n_const * d as f64 / (delta * gamma * gamma) * (d as f64 / beta).ln()
}

/// Single-pass Oja iteration on `samples_per_call` samples per query.
#[derive(Debug, Clone)]
pub struct OjaOracle {
    delta: f64,
    gamma: f64,
    samples_per_call: usize,
    schedule: OjaSchedule,
    beta: f64,
    n_const: f64,
    rng: ChaCha8Rng,
}

impl OjaOracle {
    pub fn new(budget: &OracleBudget, samples_per_call: usize) -> Result<Self> {
        let (delta, gamma) = budget.cpca_params()?;
        if samples_per_call == 0 {
            return Err(invalid("Oja needs at least one sample per call"));
        }
        Ok(OjaOracle {
            delta,
            gamma,
            samples_per_call,
            schedule: OjaSchedule::default(),
            beta: 0.1,
            n_const: 8.0,
            rng: ChaCha8Rng::seed_from_u64(budget.rng_seed),
        })
    }

    pub fn with_schedule(mut self, s: OjaSchedule) -> Self {
        self.schedule = s;
        self
    }

    pub fn with_confidence(mut self, beta: f64, n_const: f64) -> Self {
        self.beta = beta;
        self.n_const = n_const;
        self
    }

    fn run<F: FnMut() -> Option<DVector<f64>>>(&mut self, p: &Projector, mut next: F) -> OracleAnswer {
        let d = p.dim();
        let pm: &DMatrix<f64> = p.matrix().matrix();
        let mut w = p.apply(&random_unit_vector(d, &mut self.rng));
        let wn = w.norm();
        if wn > 0.0 {
            w /= wn;
        }
        let n = self.samples_per_call;
        let warm = ((n as f64) * self.schedule.warmup).floor() as usize;
        let lam_from = warm / 2;
        let (mut tr_sum, mut lam_sum, mut lam_cnt) = (0.0, 0.0, 0usize);
        let (mut lam_hat, mut t0) = (0.0, 0.0);
        let mut used = 0;
        for t in 0..n {
            let Some(x) = next() else { break };
            used += 1;
            let px = pm * x;
            let proj = px.dot(&w);
            let eta = if t < warm {
                tr_sum += px.norm_squared();
                if t >= lam_from {
                    lam_sum += proj * proj;
                    lam_cnt += 1;
                }
                self.schedule.warm_scale / (tr_sum / (t + 1) as f64).max(1e-300)
            } else {
                if t == warm {
                    let eta0 = self.schedule.warm_scale / (tr_sum / warm.max(1) as f64).max(1e-300);
                    lam_hat = if lam_cnt > 0 { lam_sum / lam_cnt as f64 } else { 1.0 / eta0 };
                    lam_hat = lam_hat.max(1e-300);
                    t0 = self.schedule.c / (lam_hat * eta0);
                }
                self.schedule.c / (lam_hat * ((t - warm) as f64 + t0))
            };
            w += eta * proj * &px;
            w = pm * &w;
            let nw = w.norm();
            if nw > 0.0 && nw.is_finite() {
                w /= nw;
            }
        }
        let required = oja_required_samples(d, self.delta.max(1e-300), self.gamma.max(1e-300), self.beta, self.n_const);
        OracleAnswer {
            vector: w,
            diagnostics: Diagnostics {
                iterations: used,
                residual: None,
                samples: used,
                null_residual: false,
                budget_warning: (used as f64) < required || used < n,
            },
        }
    }
}

impl OneOracle for OjaOracle {
    fn query(&mut self, access: &mut MatrixAccess<'_>, p: &Projector) -> Result<OracleAnswer> {
        match access {
            MatrixAccess::Stream(s) => {
                if s.dim() != p.dim() {
                    return Err(invalid("stream and projector dimensions differ"));
                }
                Ok(self.run(p, || s.next_sample()))
            }
            MatrixAccess::Samples(xs) => {
                let mut it = xs.iter().cloned();
                Ok(self.run(p, || it.next()))
            }
            MatrixAccess::Explicit(_) => Err(invalid("Oja oracle needs samples")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{cpca_mass, epca_error};

    fn e(d: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(d);
        v[i] = 1.0;
        v
    }

    fn diag(v: &[f64]) -> SymMatrix {
        SymMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn exact_examples() {
        let m = diag(&[3.0, 2.0, 1.0]);
        let mut o = ExactOracle;
        let a = o.query(&mut MatrixAccess::Explicit(&m), &Projector::identity(3)).unwrap();
        assert!((a.vector[0].abs() - 1.0).abs() < 1e-12);
        let p = Projector::complement(&Frame::basis(3, &[0]).unwrap());
        let a = o.query(&mut MatrixAccess::Explicit(&m), &p).unwrap();
        assert!((a.vector[1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_null_residual_flagged() {
        let m = diag(&[1.0, 0.0, 0.0]);
        let p = Projector::complement(&Frame::basis(3, &[0]).unwrap());
        let a = ExactOracle.query(&mut MatrixAccess::Explicit(&m), &p).unwrap();
        assert!(a.diagnostics.null_residual);
        assert!(p.span_residual(&a.vector) < 1e-12);
    }

    #[test]
    fn power_gapped_two_by_two() {
        let m = diag(&[2.0, 1.0]);
        let b = OracleBudget::cpca(1e-6, 0.1, 10_000, 7).unwrap();
        let a = PowerOracle::new(&b).unwrap().query(&mut MatrixAccess::Explicit(&m), &Projector::identity(2)).unwrap();
        let f = Frame::from_columns(2, &[a.vector.clone()]).unwrap();
        assert!(cpca_mass(&m, &f, 0.1).unwrap().delta_achieved <= 1e-6);
        assert!(a.vector[0].abs() > 0.999);
    }

    #[test]
    fn power_identity_iteration_zero() {
        let m = SymMatrix::identity(5);
        let b = OracleBudget::cpca(0.0, 0.1, 10, 1).unwrap();
        let a = PowerOracle::new(&b).unwrap().query(&mut MatrixAccess::Explicit(&m), &Projector::identity(5)).unwrap();
        assert_eq!(a.diagnostics.iterations, 0);
    }

    #[test]
    fn power_mixing_above_threshold_is_fine() {
        let gamma = 0.2;
        let m = diag(&[1.0, 1.0 - gamma / 2.0, 0.0]);
        let b = OracleBudget::cpca(1e-10, gamma, 100_000, 3).unwrap();
        let a = PowerOracle::new(&b).unwrap().query(&mut MatrixAccess::Explicit(&m), &Projector::identity(3)).unwrap();
        assert!(a.vector[2].abs() < 1e-5);
    }

    #[test]
    fn power_budget_exhausted() {
        let m = diag(&[1.0, 0.999, 0.5]);
        let b = OracleBudget::cpca(1e-12, 0.0001, 3, 3).unwrap();
        let r = PowerOracle::new(&b).unwrap().query(&mut MatrixAccess::Explicit(&m), &Projector::identity(3));
        assert!(matches!(r, Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn adversary_spends_budget() {
        let m = diag(&[1.0, 1.0, 0.0, 0.0]);
        let mut o = AdversarialEpcaOracle::new(0.1).unwrap();
        let a = o.query(&mut MatrixAccess::Explicit(&m), &Projector::identity(4)).unwrap();
        let f = Frame::from_columns(4, &[a.vector]).unwrap();
        assert!((epca_error(&m, &f).unwrap().epsilon_achieved - 0.1).abs() < 1e-12);
    }

    #[test]
    fn adversary_zero_eps_is_exact() {
        let m = diag(&[3.0, 2.0, 1.0]);
        let a = AdversarialEpcaOracle::new(0.0).unwrap().query(&mut MatrixAccess::Explicit(&m), &Projector::identity(3)).unwrap();
        assert!((a.vector[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scripted_replay_and_violation() {
        let m = SymMatrix::identity(3);
        let mut o = ScriptedOracle::new(vec![e(3, 0), e(3, 0)]);
        let p = Projector::identity(3);
        let a = o.query(&mut MatrixAccess::Explicit(&m), &p).unwrap();
        let p = p.deflate(&a.vector).unwrap();
        assert!(matches!(o.query(&mut MatrixAccess::Explicit(&m), &p), Err(Error::OracleContractViolation { step: 2, .. })));
        assert!(matches!(o.query(&mut MatrixAccess::Explicit(&m), &p), Err(Error::OracleContractViolation { .. })));
    }

    #[test]
    fn oja_constant_stream_recovers_direction() {
        let v = DVector::from_column_slice(&[0.6, 0.8, 0.0]);
        let b = OracleBudget::cpca(1e-3, 0.5, 0, 11).unwrap();
        let mut o = OjaOracle::new(&b, 200).unwrap();
        let mut sign = 1.0;
        let mut src = (3usize, std::iter::repeat_with(move || {
            sign = -sign;
            &v * sign
        }));
        let a = o.query(&mut MatrixAccess::Stream(&mut src), &Projector::identity(3)).unwrap();
        assert!((a.vector.dot(&DVector::from_column_slice(&[0.6, 0.8, 0.0])).abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn stream_precondition() {
        assert!(OracleBudget::cpca(1e-4, 0.2, 0, 0).unwrap().check_stream_precondition().is_ok());
        assert!(OracleBudget::cpca(1e-2, 0.2, 0, 0).unwrap().check_stream_precondition().is_err());
        assert!(OracleBudget::cpca(1.5, 0.2, 0, 0).is_err());
    }
}
