//! Explicit instances on which deflation with cPCA oracles loses its
//! guarantee, and the product-distribution family used for robust lower
//! bounds.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deflation::{black_box_pca, DeflationTrace};
use crate::error::{invalid, Error, Result};
use crate::linalg::{Frame, SymMatrix};
use crate::metrics::cpca_mass;
use crate::oracles::{ExactOracle, MatrixAccess, ScriptedOracle};

/// `g(Delta, kappa) = nu Delta^alpha kappa^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFunction {
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RegimeFunction {
    pub fn new(nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(nu > 0.0 && alpha > 0.0 && beta > 0.0) || ![nu, alpha, beta].iter().all(|x| x.is_finite()) {
            return Err(invalid("nu, alpha, beta must be positive and finite"));
        }
        Ok(RegimeFunction { nu, alpha, beta })
    }

    pub fn eval(&self, big_delta: f64, kappa: f64) -> f64 {
        self.nu * big_delta.powf(self.alpha) * kappa.powf(self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Witness {
    /// `diag(kappa, 1, 1 - 2 Gamma)`; covers `alpha > 1` or `beta < 1`.
    Linear,
    /// `diag(2, 1, 1 - 2 Gamma)`; covers `1/2 < alpha <= 1`.
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum RegimeClass {
    Invalid { witness: Witness },
    ValidCandidate,
}

pub fn regime_classify(g: &RegimeFunction) -> RegimeClass {
    if g.alpha > 1.0 || g.beta < 1.0 {
        RegimeClass::Invalid { witness: Witness::Linear }
    } else if g.alpha > 0.5 {
        RegimeClass::Invalid { witness: Witness::Sqrt }
    } else {
        RegimeClass::ValidCandidate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub big_delta: f64,
    pub big_gamma: f64,
    /// Mass budget of the scripted first answer.
    pub delta: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    /// Fixed oracle overhead `C`.
    pub big_c: f64,
    /// Lower window constant `c` (sqrt instances only).
    pub c: Option<f64>,
    /// `K = min(c/10, 1/(10 C), 1/100)` (sqrt instances only).
    pub k_const: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleInstance {
    pub witness: Witness,
    pub matrix: SymMatrix,
    pub scripted_answers: [Vec<f64>; 2],
    pub params: InstanceParams,
    pub meta: InstanceMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WitnessRun {
    pub trace: DeflationTrace,
    pub mass: f64,
}

impl CounterexampleInstance {
    pub fn u1(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.scripted_answers[0])
    }

    pub fn u2(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.scripted_answers[1])
    }

    /// Mass of `u1` below `lambda_1(M)`, i.e. its `(., 0)`-1-cPCA error.
    pub fn u1_mass(&self) -> Result<f64> {
        let f = Frame::from_columns(3, &[self.u1()])?;
        Ok(cpca_mass(&self.matrix, &f, 0.0)?.delta_achieved)
    }

    /// Top eigenvalue of `(I - u1 u1^T) M (I - u1 u1^T)`.
    pub fn residual_top(&self) -> Result<f64> {
        let f = Frame::from_columns(3, &[self.u1()])?;
        Ok(self.matrix.deflate_by(&f).eig().values[0])
    }

    /// Two deflation steps: the scripted `u1`, then an exact oracle.
    pub fn run_witness(&self) -> Result<WitnessRun> {
        let mass = self.u1_mass()?;
        if mass > self.params.delta * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::PrecondUnmet(format!("u1 mass {mass:e} exceeds delta {:e}", self.params.delta)));
        }
        let mut oracle = ScriptedOracle::new(vec![self.u1()]).with_fallback(Box::new(ExactOracle));
        let trace = black_box_pca(&mut MatrixAccess::Explicit(&self.matrix), 2, &mut oracle)?;
        let mass = cpca_mass(&self.matrix, &trace.frame(), self.params.big_gamma)?.delta_achieved;
        Ok(WitnessRun { trace, mass })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let inst: CounterexampleInstance = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        inst.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.dim() != 3 {
            return Err(invalid("instance matrix must be 3x3"));
        }
        for i in 0..3 {
            for j in 0..3 {
                if i != j && m.get(i, j) != 0.0 {
                    return Err(invalid("instance matrix must be diagonal"));
                }
            }
            if m.get(i, i) < 0.0 {
                return Err(invalid("instance matrix must be PSD"));
            }
        }
        for a in &self.scripted_answers {
            if a.len() != 3 || a.iter().any(|x| !x.is_finite()) {
                return Err(invalid("scripted answers must be finite 3-vectors"));
            }
        }
        let p = &self.params;
        if ![p.big_delta, p.big_gamma, p.delta, p.kappa].iter().all(|x| x.is_finite()) {
            return Err(invalid("non-finite parameters"));
        }
        Ok(())
    }
}

/// `Gamma / (Delta (kappa - 1)) <= min(1/(2C), 1/4)`, plus `Gamma <= 1/2`
/// so the matrix stays PSD.
pub fn linear_window(big_delta: f64, kappa: f64, big_c: f64, big_gamma: f64) -> bool {
    kappa > 1.0
        && big_delta > 0.0
        && big_delta <= 1.0
        && big_c >= 1.0
        && (0.0..=0.5).contains(&big_gamma)
        && big_gamma / (big_delta * (kappa - 1.0)) <= (1.0 / (2.0 * big_c)).min(0.25)
}

pub fn build_linear_regime_instance(big_delta: f64, kappa: f64, big_c: f64, big_gamma: f64) -> Result<CounterexampleInstance> {
    if !linear_window(big_delta, kappa, big_c, big_gamma) {
        return Err(Error::NotInRegime(format!(
            "Gamma = {big_gamma:e} with Delta = {big_delta:e}, kappa = {kappa}, C = {big_c}"
        )));
    }
    let delta = big_delta / big_c;
    let matrix = SymMatrix::from_diagonal(&[kappa, 1.0, 1.0 - 2.0 * big_gamma])?;
    let u1 = vec![(1.0 - delta).sqrt(), 0.0, delta.sqrt()];
    let u2 = vec![-delta.sqrt(), 0.0, (1.0 - delta).sqrt()];
    Ok(CounterexampleInstance {
        witness: Witness::Linear,
        matrix,
        scripted_answers: [u1, u2],
        params: InstanceParams { big_delta, big_gamma, delta, kappa },
        meta: InstanceMeta { big_c, c: None, k_const: None },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqrtRegimeParams {
    pub big_delta: f64,
    pub big_c: f64,
    pub c: f64,
    /// Defaults to the upper window edge `K sqrt(Delta)`.
    pub big_gamma: Option<f64>,
}

impl SqrtRegimeParams {
    pub fn new(big_delta: f64) -> Self {
        SqrtRegimeParams { big_delta, big_c: 1.0, c: 0.5, big_gamma: None }
    }

    pub fn k_const(&self) -> f64 {
        (self.c / 10.0).min(1.0 / (10.0 * self.big_c)).min(0.01)
    }

    /// `[c Delta, K sqrt(Delta)]`.
    pub fn window(&self) -> (f64, f64) {
        (self.c * self.big_delta, self.k_const() * self.big_delta.sqrt())
    }

    pub fn gamma(&self) -> f64 {
        self.big_gamma.unwrap_or(self.window().1)
    }
}

/// Closed form for the top eigenvalue of the deflated sqrt instance.
pub fn sqrt_instance_lambda(delta: f64, big_gamma: f64) -> f64 {
    let (d, g) = (delta, big_gamma);
    let root = (4.0 * g * g + d * d + d * g * (2.0 * d + d * g - 4.0 * g)).sqrt();
    1.0 + d / 2.0 + d * g / 2.0 + (root / 2.0 - g)
}

pub fn build_sqrt_regime_instance(p: &SqrtRegimeParams) -> Result<CounterexampleInstance> {
    let (lo, hi) = p.window();
    let gamma = p.gamma();
    if !(p.big_delta > 0.0 && p.big_delta < 1.0 && p.c > 0.0 && p.big_c >= 1.0) {
        return Err(invalid("need 0 < Delta < 1, c > 0, C >= 1"));
    }
    if !(lo <= gamma && gamma <= hi) {
        return Err(Error::NotInRegime(format!("Gamma = {gamma:e} outside [{lo:e}, {hi:e}]")));
    }
    let k = p.k_const();
    let delta = 10.0 * k * p.big_delta;
    let matrix = SymMatrix::from_diagonal(&[2.0, 1.0, 1.0 - 2.0 * gamma])?;
    let u1v = vec![(1.0 - delta).sqrt(), (delta / 2.0).sqrt(), (delta / 2.0).sqrt()];
    let u1 = Frame::from_columns(3, &[DVector::from_column_slice(&u1v)])?;
    let s = matrix.deflate_by(&u1).eig();
    let u2: Vec<f64> = s.vectors.column(0).iter().copied().collect();
    Ok(CounterexampleInstance {
        witness: Witness::Sqrt,
        matrix,
        scripted_answers: [u1v, u2],
        params: InstanceParams { big_delta: p.big_delta, big_gamma: gamma, delta, kappa: 2.0 },
        meta: InstanceMeta { big_c: p.big_c, c: Some(p.c), k_const: Some(k) },
    })
}

impl Witness {
    /// Searches for parameters inside the construction window for `g`
    /// with oracle overhead `C`, then builds the instance.
    pub fn construct(&self, g: &RegimeFunction, big_c: f64) -> Result<CounterexampleInstance> {
        match self {
            Witness::Linear => {
                if !(g.alpha > 1.0 || g.beta < 1.0) {
                    return Err(Error::NotInRegime("linear witness needs alpha > 1 or beta < 1".into()));
                }
                // Gamma must stay in [0, 1/2]; for alpha <= beta < 1 that
                // bound and the window cannot hold together.
                for j in 1..64 {
                    let kappa = 1.0 + 2f64.powi(j - 1);
                    for i in 0..64 {
                        let d = 0.5f64.powi(i);
                        let gamma = g.eval(d, kappa);
                        if linear_window(d, kappa, big_c, gamma) {
                            return build_linear_regime_instance(d, kappa, big_c, gamma);
                        }
                    }
                }
                Err(Error::NotInRegime("no linear-window parameters with Gamma <= 1/2".into()))
            }
            Witness::Sqrt => {
                if !(g.alpha > 0.5 && g.alpha <= 1.0) {
                    return Err(Error::NotInRegime("sqrt witness needs 1/2 < alpha <= 1".into()));
                }
                let edge: f64 = 1e-2;
                let c = g.nu * 2f64.powf(g.beta) * edge.powf(g.alpha - 1.0);
                let mut d = edge;
                for _ in 0..400 {
                    let p = SqrtRegimeParams { big_delta: d, big_c, c, big_gamma: Some(g.eval(d, 2.0)) };
                    let (lo, hi) = p.window();
                    let gamma = p.gamma();
                    if gamma >= lo && gamma <= hi && 10.0 * p.k_const() * d <= gamma {
                        return build_sqrt_regime_instance(&p);
                    }
                    d *= 0.5;
                }
                Err(Error::NotInRegime("no sqrt-window parameters found".into()))
            }
        }
    }
}

/// Symmetric two-point mixture: `+-1` with probability `1 - eps`, `+-spike`
/// with probability `eps`. `eps = 0` is the Rademacher law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateLaw {
    pub eps: f64,
    pub spike: f64,
}

impl CoordinateLaw {
    pub fn rademacher() -> Self {
        CoordinateLaw { eps: 0.0, spike: 1.0 }
    }

    /// Exact `E[X^q]`.
    pub fn moment(&self, q: u32) -> f64 {
        if q % 2 == 1 {
            return 0.0;
        }
        (1.0 - self.eps) + self.eps * self.spike.powi(q as i32)
    }

    pub fn variance(&self) -> f64 {
        self.moment(2)
    }

    /// `E[X^p]^{1/p} / E[X^2]^{1/2}`.
    pub fn moment_ratio(&self, p: u32) -> f64 {
        self.moment(p).powf(1.0 / p as f64) / self.variance().sqrt()
    }

    /// Total variation distance to the Rademacher law.
    pub fn tv_to_rademacher(&self) -> f64 {
        if self.spike == 1.0 {
            0.0
        } else {
            self.eps
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if self.eps > 0.0 && rng.random::<f64>() < self.eps {
            sign * self.spike
        } else {
            sign
        }
    }
}

pub const LOWERBOUND_MAX_DIM: usize = 64;

/// `D_0` (Rademacher product) and `D_i`, `i = 1..d`, where coordinate `i`
/// follows the spiked mixture, giving `Sigma_i = I + s e_i e_i^T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundFamily {
    pub d: usize,
    pub p: u32,
    pub cp: f64,
    pub eps: f64,
    pub s: f64,
    pub law: CoordinateLaw,
}

pub fn lowerbound_family(d: usize, p: u32, cp: f64, eps: f64) -> Result<LowerBoundFamily> {
    if d == 0 || d > LOWERBOUND_MAX_DIM {
        return Err(invalid(format!("d = {d} outside [1, {LOWERBOUND_MAX_DIM}]")));
    }
    if p < 4 || p % 2 == 1 {
        return Err(invalid(format!("p = {p} must be an even integer >= 4")));
    }
    if !(cp > 2.0 && cp.is_finite()) {
        return Err(invalid(format!("C_p = {cp} must exceed 2")));
    }
    let pf = p as f64;
    if !(eps > 0.0 && eps < 1.0) || eps > (cp * cp / 8.0).powf(pf / 2.0) {
        return Err(invalid(format!("eps = {eps} outside (0, min(1, (C_p^2/8)^(p/2)))")));
    }
    let s = eps * (0.25 * cp * cp * eps.powf(-2.0 / pf) - 1.0);
    let law = CoordinateLaw { eps, spike: 0.5 * cp * eps.powf(-1.0 / pf) };
    Ok(LowerBoundFamily { d, p, cp, eps, s, law })
}

impl LowerBoundFamily {
    /// Covariance of `D_i` (`i = 0` is the null member).
    pub fn covariance(&self, i: usize) -> Result<SymMatrix> {
        if i > self.d {
            return Err(invalid("member index out of range"));
        }
        let mut diag = vec![1.0; self.d];
        if i > 0 {
            diag[i - 1] += self.s;
        }
        SymMatrix::from_diagonal(&diag)
    }

    pub fn sample<R: Rng + ?Sized>(&self, i: usize, n: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        if i > self.d {
            return Err(invalid("member index out of range"));
        }
        let rad = CoordinateLaw::rademacher();
        Ok((0..n)
            .map(|_| DVector::from_fn(self.d, |j, _| if j + 1 == i { self.law.sample(rng) } else { rad.sample(rng) }))
            .collect())
    }
}
