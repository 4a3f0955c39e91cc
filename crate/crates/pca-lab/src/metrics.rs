//! Energy (ePCA) and correlation (cPCA) approximation metrics, their
//! conversions, head guarantees and the two-block composition bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{frob_overlap, op_norm, Frame, Spectrum, SymMatrix};

/// Below this a Ky Fan norm or `lambda_k` counts as zero.
pub const DEGENERATE_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpcaReport {
    pub energy: f64,
    pub ky_fan_k: f64,
    pub epsilon_achieved: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpcaReport {
    pub gamma: f64,
    pub delta_achieved: f64,
    pub threshold: f64,
}

/// `<U U^T, M>`, summed column by column.
pub fn energy(m: &SymMatrix, u: &Frame) -> f64 {
    (0..u.cols()).map(|i| m.quad(&u.column(i))).sum()
}

pub fn epca_error(m: &SymMatrix, u: &Frame) -> Result<EpcaReport> {
    epca_error_with(&m.eig(), m, u)
}

pub(crate) fn epca_error_with(s: &Spectrum, m: &SymMatrix, u: &Frame) -> Result<EpcaReport> {
    check_frame(m, u)?;
    let k = u.cols();
    let kf: f64 = s.values[..k].iter().sum();
    if kf <= DEGENERATE_TOL {
        return Err(Error::DegenerateTarget(format!("Ky Fan {k}-norm is {kf:e}")));
    }
    let e = energy(m, u);
    Ok(EpcaReport { energy: e, ky_fan_k: kf, epsilon_achieved: 1.0 - e / kf })
}

fn check_frame(m: &SymMatrix, u: &Frame) -> Result<()> {
    if u.rows() != m.dim() {
        return Err(invalid("frame and matrix dimensions differ"));
    }
    if u.cols() == 0 {
        return Err(invalid("frame has no columns"));
    }
    Ok(())
}

/// `||(V^{<(1-Gamma) lambda_k})^T U||_F^2` with `k = cols(U)`.
pub fn cpca_mass(m: &SymMatrix, u: &Frame, gamma: f64) -> Result<CpcaReport> {
    cpca_mass_with(&m.eig(), u, gamma)
}

pub fn cpca_mass_with(s: &Spectrum, u: &Frame, gamma: f64) -> Result<CpcaReport> {
    if u.rows() != s.dim() || u.cols() == 0 {
        return Err(invalid("frame shape does not fit the spectrum"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid(format!("Gamma = {gamma} outside [0, 1]")));
    }
    let k = u.cols();
    let lk = s.lambda(k);
    if lk <= DEGENERATE_TOL {
        return Err(Error::DegenerateTarget(format!("lambda_{k} = {lk:e}")));
    }
    let threshold = (1.0 - gamma) * lk;
    let (_, small) = s.split(threshold);
    Ok(CpcaReport { gamma, delta_achieved: frob_overlap(&small, u), threshold })
}

/// ePCA to cPCA: an `eps`-k-ePCA is a `(bound, Gamma)`-k-cPCA.
pub fn etoc_convert(eps: f64, m: &SymMatrix, k: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid(format!("Gamma = {gamma} must lie in (0, 1)")));
    }
    if k == 0 || k > m.dim() {
        return Err(invalid(format!("k = {k} outside [1, {}]", m.dim())));
    }
    let s = m.eig();
    let lk = s.lambda(k);
    if lk <= DEGENERATE_TOL {
        return Err(Error::DegenerateTarget(format!("lambda_{k} = {lk:e}")));
    }
    let kf: f64 = s.values[..k].iter().sum();
    Ok(eps * kf / (gamma * lk))
}

/// cPCA to ePCA for a single vector: a `(Delta, Gamma)`-1-cPCA is a
/// `(Gamma + Delta)`-1-ePCA. No k > 1 analogue is provided.
pub fn ctoe_convert(delta: f64, gamma: f64) -> f64 {
    gamma + delta
}

/// Eigen-split used by the residual identity and the composition bound.
struct Blocks {
    l: DMatrix<f64>,
    lam: DVector<f64>,
    s: DMatrix<f64>,
    sig: DVector<f64>,
    lt: DMatrix<f64>,
    lamt: DVector<f64>,
}

fn blocks(m: &SymMatrix, u: &Frame, k: usize, gamma: f64, k2: usize, gamma2: f64) -> Result<Blocks> {
    let d = m.dim();
    if u.rows() != d {
        return Err(invalid("frame and matrix dimensions differ"));
    }
    if k == 0 || k > d || k2 == 0 || k2 > d - u.cols() {
        return Err(invalid(format!("block sizes k={k}, k2={k2} do not fit d={d}")));
    }
    let sp = m.eig();
    let lk = sp.lambda(k);
    let r = sp.values.iter().filter(|&&x| x >= (1.0 - gamma) * lk).count();
    let v = sp.vectors.matrix();

    let mt = m.deflate_by(u);
    let st = mt.eig();
    let lk2 = st.lambda(k2);
    if lk2 <= DEGENERATE_TOL * sp.lambda(1).max(1.0) {
        return Err(Error::DegenerateResidual);
    }
    let rt = st.values.iter().filter(|&&x| x >= (1.0 - gamma2) * lk2).count();

    Ok(Blocks {
        l: v.columns(0, r).into_owned(),
        lam: DVector::from_column_slice(&sp.values[..r]),
        s: v.columns(r, d - r).into_owned(),
        sig: DVector::from_column_slice(&sp.values[r..]),
        lt: st.vectors.matrix().columns(0, rt).into_owned(),
        lamt: DVector::from_column_slice(&st.values[..rt]),
    })
}

/// Frobenius residual of the deflation identity
/// `S^T Lt = (I - S^T U U^T S) Sig S^T Lt Lamt^-1 - S^T U U^T L Lam L^T Lt Lamt^-1`
/// where `L, S` split the eigenvectors of `M` at `(1-gamma) lambda_k(M)`,
/// `k = cols(U) + k2`, and `Lt` is the large eigenspace of
/// `Mt = (I - U U^T) M (I - U U^T)` at `(1-gamma2) lambda_{k2}(Mt)`.
pub fn wedin_residual(m: &SymMatrix, u: &Frame, k2: usize, gamma: f64, gamma2: f64) -> Result<f64> {
    let b = blocks(m, u, u.cols() + k2, gamma, k2, gamma2)?;
    let um = u.matrix();
    let st_u = b.s.transpose() * um;
    let lhs = b.s.transpose() * &b.lt;
    let inv = DMatrix::from_diagonal(&b.lamt.map(|x| 1.0 / x));
    let sig = DMatrix::from_diagonal(&b.sig);
    let lam = DMatrix::from_diagonal(&b.lam);
    let eye = DMatrix::identity(b.s.ncols(), b.s.ncols());
    let t1 = (eye - &st_u * st_u.transpose()) * sig * &lhs * &inv;
    let t2 = &st_u * (um.transpose() * &b.l) * lam * (b.l.transpose() * &b.lt) * &inv;
    Ok((lhs - t1 + t2).norm())
}

/// Upper bound on the cPCA mass of `[U1 U2]` at `max(g1, 2 g2)` when `U1`
/// is a `(d1, g1)`-cPCA of `M` and `U2` a `(d2, g2)`-cPCA of the residual.
pub fn compose_bound(
    m: &SymMatrix,
    u1: &Frame,
    u2: &Frame,
    d1: f64,
    d2: f64,
    g1: f64,
    g2: f64,
) -> Result<f64> {
    for (name, x) in [("delta1", d1), ("delta2", d2), ("gamma1", g1), ("gamma2", g2)] {
        if !(0.0..=0.1).contains(&x) {
            return Err(invalid(format!("{name} = {x} outside [0, 1/10]")));
        }
    }
    if u1.rows() != u2.rows() {
        return Err(invalid("frames have different row dimension"));
    }
    let cross = (u1.matrix().transpose() * u2.matrix()).abs().max();
    if cross > 1e-8 {
        return Err(Error::OracleContractViolation {
            step: u1.cols() + 1,
            reason: format!("U2 not orthogonal to U1 (max |U1^T U2| = {cross:e})"),
        });
    }
    let k = u1.cols() + u2.cols();
    let gamma = g1.max(2.0 * g2);
    let lk = m.eig().lambda(k);
    if lk <= DEGENERATE_TOL {
        return Err(Error::DegenerateTarget(format!("lambda_{k} = {lk:e}")));
    }
    let b = blocks(m, u1, k, gamma, u2.cols(), g2)?;
    let x = u1.matrix().transpose() * &b.l * DMatrix::from_diagonal(&b.lam) * (b.l.transpose() * &b.lt);
    let op = op_norm(&x);
    let cross_term = if d1 == 0.0 { 0.0 } else { 4.0 * d1 / (g2 * g2) * op * op / (lk * lk) };
    Ok(d1 + 2.0 * d2 + cross_term)
}

/// `(h, omega, delta)` head guarantee. `delta` is the measured tail overlap
/// once a frame has been attached with [`HeadGuarantee::measure`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadGuarantee {
    pub h: usize,
    pub omega: f64,
    pub delta: f64,
    /// `lambda_{h+1} / lambda_m`
    pub ratio: f64,
    /// `(1 - gamma)^{-(m-h-1)}`
    pub ratio_bound: f64,
}

impl HeadGuarantee {
    /// Fill `delta` with `||(V^{>=lambda_h})^T U_perp||_F^2` for a frame `U`.
    pub fn measure(mut self, m: &SymMatrix, u: &Frame) -> Result<Self> {
        if self.h == 0 {
            self.delta = 0.0;
            return Ok(self);
        }
        let s = m.eig();
        let (head, _) = s.split(s.lambda(self.h));
        let perp = crate::linalg::Projector::complement(u).range_frame();
        self.delta = frob_overlap(&head, &perp);
        Ok(self)
    }
}

pub fn find_head_index(m: &SymMatrix, mm: usize, gamma: f64) -> Result<HeadGuarantee> {
    let d = m.dim();
    if mm == 0 || mm > d {
        return Err(invalid(format!("m = {mm} outside [1, {d}]")));
    }
    if !(gamma > 0.0 && gamma <= 0.1) {
        return Err(invalid(format!("gamma = {gamma} outside (0, 1/10]")));
    }
    let s = m.eig();
    let lm = s.lambda(mm);
    if lm <= DEGENERATE_TOL {
        return Err(Error::DegenerateTarget(format!("lambda_{mm} = {lm:e}")));
    }
    let h = (1..mm).rev().find(|&h| s.lambda(h + 1) <= (1.0 - gamma) * s.lambda(h)).unwrap_or(0);
    let ratio = s.lambda(h + 1) / lm;
    let ratio_bound = (1.0 - gamma).powi(-((mm - h - 1) as i32));
    Ok(HeadGuarantee { h, omega: 2.0 * mm as f64 * gamma, delta: 0.0, ratio, ratio_bound })
}

/// `||Q_U M Q_U - Q_V M Q_V||_op` for two frames of equal width.
pub fn residual_distance(m: &SymMatrix, u: &Frame, v: &Frame) -> f64 {
    let a = m.deflate_by(u);
    let b = m.deflate_by(v);
    op_norm(&(a.matrix() - b.matrix()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_frame, random_psd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> SymMatrix {
        SymMatrix::from_diagonal(v).unwrap()
    }

    #[test]
    fn epca_exact_top_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_psd(6, &mut rng);
        let u = m.eig().top(3);
        let r = epca_error(&m, &u).unwrap();
        assert!(r.epsilon_achieved.abs() < 1e-12);
    }

    #[test]
    fn epca_mixed_basis_example() {
        let eps = 0.1f64;
        let (a, b) = ((1.0 - eps).sqrt(), eps.sqrt());
        let u = DMatrix::from_columns(&[
            DVector::from_column_slice(&[a, 0.0, b, 0.0]),
            DVector::from_column_slice(&[0.0, a, 0.0, b]),
        ]);
        let r = epca_error(&diag(&[1.0, 1.0, 0.0, 0.0]), &Frame::new(u).unwrap()).unwrap();
        assert!((r.epsilon_achieved - 0.1).abs() < 1e-12);
    }

    #[test]
    fn epca_degenerate() {
        let u = Frame::basis(2, &[0]).unwrap();
        assert!(matches!(epca_error(&diag(&[0.0, 0.0]), &u), Err(Error::DegenerateTarget(_))));
    }

    #[test]
    fn cpca_gapped_zero() {
        let u = Frame::basis(3, &[0, 1]).unwrap();
        let r = cpca_mass(&diag(&[3.0, 2.0, 1.0]), &u, 0.1).unwrap();
        assert_eq!(r.delta_achieved, 0.0);
        assert!((r.threshold - 1.8).abs() < 1e-15);
    }

    #[test]
    fn conversions() {
        assert_eq!(etoc_convert(0.0, &diag(&[1.0; 6]), 5, 0.5).unwrap(), 0.0);
        let b = etoc_convert(0.01, &SymMatrix::identity(6), 5, 0.5).unwrap();
        assert!((b - 0.1).abs() < 1e-15);
        assert!(etoc_convert(0.01, &SymMatrix::identity(6), 5, 0.0).is_err());
        assert_eq!(ctoe_convert(0.0, 0.0), 0.0);
        assert!((ctoe_convert(0.1, 0.2) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn wedin_commuting_case() {
        let m = diag(&[4.0, 3.0, 2.0, 1.0, 0.5]);
        let u = Frame::basis(5, &[0]).unwrap();
        let r = wedin_residual(&m, &u, 2, 0.1, 0.1).unwrap();
        assert!(r < 1e-14, "{r}");
    }

    #[test]
    fn wedin_degenerate_residual() {
        let m = diag(&[1.0, 1.0, 0.0]);
        let u = Frame::basis(3, &[0, 1]).unwrap();
        assert_eq!(wedin_residual(&m, &u, 1, 0.1, 0.1), Err(Error::DegenerateResidual));
    }

    #[test]
    fn compose_exact_is_zero() {
        let m = diag(&[3.0, 2.0, 1.0, 0.5]);
        let u1 = Frame::basis(4, &[0]).unwrap();
        let u2 = Frame::basis(4, &[1]).unwrap();
        assert_eq!(compose_bound(&m, &u1, &u2, 0.0, 0.0, 0.05, 0.05).unwrap(), 0.0);
        assert!(compose_bound(&m, &u1, &u2, 0.2, 0.0, 0.05, 0.05).is_err());
        assert!(matches!(
            compose_bound(&m, &u1, &u1, 0.0, 0.0, 0.05, 0.05),
            Err(Error::OracleContractViolation { .. })
        ));
    }

    #[test]
    fn head_index_examples() {
        let g = find_head_index(&diag(&[2.0, 1.0, 1.0, 1.0]), 3, 0.1).unwrap();
        assert_eq!(g.h, 1);
        let g = find_head_index(&SymMatrix::identity(5), 4, 0.1).unwrap();
        assert_eq!(g.h, 0);
        let gamma = 0.05f64;
        let eigs: Vec<f64> = (1..=6).map(|i| (1.0 - 2.0 * gamma).powi(i)).collect();
        let g = find_head_index(&diag(&eigs), 5, gamma).unwrap();
        assert_eq!(g.h, 4);
        assert!(g.ratio <= g.ratio_bound && g.ratio_bound <= 1.0 + g.omega);
        assert!(find_head_index(&diag(&[1.0, 0.0]), 2, 0.1).is_err());
    }

    #[test]
    fn head_measure_exact_frame() {
        let m = diag(&[3.0, 1.0, 1.0, 0.2]);
        let g = find_head_index(&m, 3, 0.1).unwrap().measure(&m, &Frame::basis(4, &[0, 1, 2]).unwrap()).unwrap();
        assert_eq!(g.h, 1);
        assert!(g.delta < 1e-20);
    }

    #[test]
    fn mass_matches_explicit_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_psd(8, &mut rng);
        let u = random_frame(8, 3, &mut rng);
        let gamma = 0.3;
        let s = m.eig();
        let thr = (1.0 - gamma) * s.lambda(3);
        let mut brute = 0.0;
        for (i, &lam) in s.values.iter().enumerate() {
            if lam < thr {
                let v = s.vectors.column(i);
                for j in 0..3 {
                    brute += v.dot(&u.column(j)).powi(2);
                }
            }
        }
        let r = cpca_mass(&m, &u, gamma).unwrap();
        assert!((r.delta_achieved - brute).abs() < 1e-12);
    }
}
