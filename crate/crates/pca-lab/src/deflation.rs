//! The deflation driver and verifiers for its ePCA and cPCA guarantees.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cond_k, Frame, Projector, SymMatrix, NORM_TOL, SPAN_TOL};
use crate::metrics::{cpca_mass, cpca_mass_with, epca_error};
use crate::oracles::{Diagnostics, MatrixAccess, OneOracle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub vector: Vec<f64>,
    pub rank_before: usize,
    /// `1 - u^T P M P u / lambda_1(P M P)` when `M` is explicit.
    pub achieved_epsilon: Option<f64>,
    /// `lambda_1(P M P)` when `M` is explicit.
    pub residual_top: Option<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeflationTrace {
    pub dim: usize,
    pub steps: Vec<StepRecord>,
}

impl DeflationTrace {
    pub fn k(&self) -> usize {
        self.steps.len()
    }

    pub fn frame(&self) -> Frame {
        let cols: Vec<_> = self.steps.iter().map(|s| DVector::from_column_slice(&s.vector)).collect();
        Frame::from_columns(self.dim, &cols).expect("driver keeps answers orthonormal")
    }

    /// `P_{i}` with `i` answers projected out (`P_0 = I`).
    pub fn projector_after(&self, i: usize) -> Projector {
        Projector::complement(&self.frame().slice(0..i))
    }

    /// Boundaries of the sample segments consumed by each call.
    pub fn sample_segments(&self) -> Vec<(usize, usize)> {
        let mut at = 0;
        self.steps
            .iter()
            .map(|s| {
                let seg = (at, at + s.diagnostics.samples);
                at = seg.1;
                seg
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: DeflationTrace = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if t.steps.iter().any(|s| s.vector.len() != t.dim) {
            return Err(Error::Parse("step vector length differs from dim".into()));
        }
        if t.steps.len() > t.dim {
            return Err(Error::Parse("more steps than dimensions".into()));
        }
        let cols: Vec<_> = t.steps.iter().map(|s| DVector::from_column_slice(&s.vector)).collect();
        Frame::from_columns(t.dim, &cols).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(t)
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::OracleContractViolation { reason, .. } => Error::OracleContractViolation { step, reason },
        other => other,
    }
}

/// Runs `k` oracle calls, projecting each answer out of the next query.
pub fn black_box_pca(access: &mut MatrixAccess<'_>, k: usize, oracle: &mut dyn OneOracle) -> Result<DeflationTrace> {
    let d = access.dim();
    if d == 0 {
        return Err(invalid("empty matrix access"));
    }
    if k == 0 || k > d {
        return Err(invalid(format!("k = {k} outside [1, {d}]")));
    }
    let mut p = Projector::identity(d);
    let mut steps = Vec::with_capacity(k);
    for step in 1..=k {
        let ans = oracle.query(access, &p).map_err(|e| at_step(e, step))?;
        let u = ans.vector;
        if u.len() != d {
            return Err(Error::OracleContractViolation { step, reason: "answer has wrong length".into() });
        }
        let n = u.norm();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
            return Err(Error::OracleContractViolation { step, reason: format!("answer norm {n} is not 1") });
        }
        let res = p.span_residual(&u);
        if res > SPAN_TOL {
            return Err(Error::OracleContractViolation {
                step,
                reason: format!("answer leaves span(P) by {res:e}"),
            });
        }
        let u = p.apply(&u);
        let u = &u / u.norm();

        let (achieved_epsilon, residual_top) = match access.explicit() {
            Some(m) => {
                let pmp = m.sandwich(&p);
                let top = pmp.eig().values[0];
                let e = if top > 0.0 { 1.0 - pmp.quad(&u) / top } else { 0.0 };
                (Some(e), Some(top))
            }
            None => (None, None),
        };
        steps.push(StepRecord {
            step,
            vector: u.iter().copied().collect(),
            rank_before: p.rank(),
            achieved_epsilon,
            residual_top,
            diagnostics: ans.diagnostics,
        });
        p = p.deflate(&u).map_err(|e| at_step(e, step))?;
    }
    Ok(DeflationTrace { dim: d, steps })
}

/// Slack allowed on the per-call energy error when checking the premise.
pub const PER_CALL_SLACK: f64 = 1e-10;

/// Runs the driver and checks the output is an `eps`-k-ePCA, given that
/// every call was measured to be an `eps`-1-ePCA of its residual.
pub fn verify_epca_theorem(m: &SymMatrix, k: usize, oracle: &mut dyn OneOracle, eps: f64) -> Result<bool> {
    let trace = black_box_pca(&mut MatrixAccess::Explicit(m), k, oracle)?;
    for s in &trace.steps {
        let e = s.achieved_epsilon.unwrap_or(0.0);
        if e > eps + PER_CALL_SLACK {
            return Err(Error::PrecondUnmet(format!("call {} had energy error {e:e} > {eps:e}", s.step)));
        }
    }
    Ok(epca_error(m, &trace.frame())?.epsilon_achieved <= eps + 1e-8)
}

fn ceil_log2(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// The parameter chain taking a target `(Delta, Gamma)` for the k-column
/// output to the `(delta, gamma)` each 1-PCA call must meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpcaSchedule {
    pub k: usize,
    pub big_delta: f64,
    pub big_gamma: f64,
    pub delta_bar: f64,
    pub delta_prime: f64,
    pub delta: f64,
    pub gamma_bar: f64,
    pub gamma_prime: f64,
    pub gamma: f64,
}

impl CpcaSchedule {
    pub fn new(k: usize, big_delta: f64, big_gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        let kf = k as f64;
        let l = ceil_log2(k) as i32;
        let delta_bar = big_delta / (640.0 * kf * kf);
        let delta_prime = delta_bar / (18.0 * kf * kf);
        let delta = delta_prime / (132.0 * kf * kf).powi(l);
        let gamma_bar = big_gamma / (10.0 * kf);
        let gamma_prime = gamma_bar / (2.0 * kf);
        let gamma = gamma_prime / 2f64.powi(l);
        Ok(CpcaSchedule { k, big_delta, big_gamma, delta_bar, delta_prime, delta, gamma_bar, gamma_prime, gamma })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpcaVerdict {
    pub pass: bool,
    pub mass: f64,
    pub kappa: f64,
    pub schedule: CpcaSchedule,
    pub trace: DeflationTrace,
}

/// Runs the driver with oracles built for the derived per-call budget and
/// checks the output is a `(Delta, Gamma)`-k-cPCA.
pub fn verify_cpca_theorem<F>(m: &SymMatrix, k: usize, big_delta: f64, big_gamma: f64, factory: F) -> Result<CpcaVerdict>
where
    F: FnOnce(&CpcaSchedule) -> Result<Box<dyn OneOracle>>,
{
    let kappa = cond_k(m, k)?;
    if big_delta * kappa * kappa > big_gamma * big_gamma {
        return Err(Error::RegimeRejected(format!(
            "Delta kappa^2 = {:e} exceeds Gamma^2 = {:e}",
            big_delta * kappa * kappa,
            big_gamma * big_gamma
        )));
    }
    let schedule = CpcaSchedule::new(k, big_delta, big_gamma)?;
    let mut oracle = factory(&schedule)?;
    let trace = black_box_pca(&mut MatrixAccess::Explicit(m), k, &mut oracle)?;
    let mass = cpca_mass(m, &trace.frame(), big_gamma)?.delta_achieved;
    Ok(CpcaVerdict { pass: mass <= big_delta + 1e-8, mass, kappa, schedule, trace })
}

/// Bucket boundaries `K_1 < ... < K_r = k` from the spectral gaps
/// `lambda_{i+1} < (1 - gamma_bar) lambda_i`, `i < min(k, d)`.
pub fn gap_buckets(m: &SymMatrix, k: usize, gamma_bar: f64) -> Result<Vec<usize>> {
    let d = m.dim();
    if k == 0 || k > d {
        return Err(invalid(format!("k = {k} outside [1, {d}]")));
    }
    let s = m.eig();
    let mut out: Vec<usize> = (1..k.min(d)).filter(|&i| s.lambda(i + 1) < (1.0 - gamma_bar) * s.lambda(i)).collect();
    out.push(k);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    /// Inside a gap-free bucket.
    Nogap,
    /// Across a spectral gap.
    Gapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditNode {
    pub kind: MergeKind,
    pub height: u32,
    pub start: usize,
    pub end: usize,
    pub gamma: f64,
    pub measured: f64,
    /// Bound from the two children's measured masses.
    pub predicted_step: f64,
    /// Bound from the worst leaf mass, compounded over the height.
    pub predicted_tree: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub start: usize,
    pub end: usize,
    pub kappa: f64,
    pub well_conditioned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub buckets: Vec<BucketReport>,
    pub nodes: Vec<AuditNode>,
}

impl AuditReport {
    pub fn all_hold(&self) -> bool {
        self.nodes.iter().all(|n| n.holds)
    }
}

struct Block {
    start: usize,
    end: usize,
    gamma: f64,
    mass: f64,
    leaf_max: f64,
    height: u32,
}

/// Pairs blocks bottom-up and records each merge.
fn merge_tree(
    m: &SymMatrix,
    u: &Frame,
    mut level: Vec<Block>,
    kind: MergeKind,
    nodes: &mut Vec<AuditNode>,
) -> Result<Block> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(a) = it.next() {
            let Some(b) = it.next() else {
                next.push(a);
                continue;
            };
            let gamma = b.gamma.max(a.gamma) * 2.0;
            let gamma = gamma.min(1.0);
            let res = m.deflate_by(&u.slice(0..a.start));
            let w = u.slice(a.start..b.end);
            let measured = cpca_mass_with(&res.eig(), &w, gamma)?.delta_achieved;
            let height = a.height.max(b.height) + 1;
            let leaf_max = a.leaf_max.max(b.leaf_max);
            let width = (b.end - a.start) as f64;
            let k1 = (a.end - a.start) as f64;
            let (predicted_step, predicted_tree) = match kind {
                MergeKind::Gapped => (2.0 * (a.mass + b.mass), 4f64.powi(height as i32) * leaf_max),
                MergeKind::Nogap => (
                    130.0 * k1 * k1 * a.mass + 2.0 * b.mass,
                    (132.0 * width * width).powi(height as i32) * leaf_max,
                ),
            };
            let holds = measured <= predicted_step.min(predicted_tree) + 1e-8;
            nodes.push(AuditNode {
                kind,
                height,
                start: a.start,
                end: b.end,
                gamma,
                measured,
                predicted_step,
                predicted_tree,
                holds,
            });
            next.push(Block { start: a.start, end: b.end, gamma, mass: measured, leaf_max, height });
        }
        level = next;
    }
    Ok(level.pop().expect("non-empty level"))
}

/// Post-hoc audit of a finished trace against the dyadic merge bounds.
/// `gamma` is the per-call gap parameter the oracles were run with.
pub fn dyadic_merge_audit(trace: &DeflationTrace, m: &SymMatrix, boundaries: &[usize], gamma: f64) -> Result<AuditReport> {
    let u = trace.frame();
    let k = u.cols();
    if boundaries.last() != Some(&k) || boundaries.windows(2).any(|w| w[0] >= w[1]) || boundaries[0] == 0 {
        return Err(invalid("boundaries must increase strictly and end at k"));
    }
    let mut nodes = Vec::new();
    let mut buckets = Vec::new();
    let mut roots = Vec::new();
    let mut start = 0;
    for &end in boundaries {
        let res = m.deflate_by(&u.slice(0..start));
        let kappa = cond_k(&res, end - start).unwrap_or(f64::INFINITY);
        buckets.push(BucketReport { start, end, kappa, well_conditioned: kappa <= 2.0 });
        let mut leaves = Vec::new();
        for i in start..end {
            let res = m.deflate_by(&u.slice(0..i));
            let mass = cpca_mass_with(&res.eig(), &u.slice(i..i + 1), gamma)?.delta_achieved;
            leaves.push(Block { start: i, end: i + 1, gamma, mass, leaf_max: mass, height: 0 });
        }
        let root = merge_tree(m, &u, leaves, MergeKind::Nogap, &mut nodes)?;
        roots.push(root);
        start = end;
    }
    let g = roots.iter().map(|b| b.gamma).fold(0.0, f64::max);
    let mut leaves = Vec::new();
    for b in roots {
        let res = m.deflate_by(&u.slice(0..b.start));
        let mass = cpca_mass_with(&res.eig(), &u.slice(b.start..b.end), g)?.delta_achieved;
        leaves.push(Block { start: b.start, end: b.end, gamma: g, mass, leaf_max: mass, height: 0 });
    }
    if leaves.len() > 1 {
        merge_tree(m, &u, leaves, MergeKind::Gapped, &mut nodes)?;
    }
    Ok(AuditReport { buckets, nodes })
}
