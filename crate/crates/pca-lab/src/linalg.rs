//! Dense symmetric linear algebra used throughout the crate.
//!
//! Matrices are small (d in the low hundreds at most), so everything is
//! dense and the eigensolver is a plain cyclic Jacobi sweep.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative off-diagonal Frobenius mass at which Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues at or below this are treated as zero by `cond_k`.
pub const SINGULAR_TOL: f64 = 1e-14;

/// A real symmetric matrix. Construction symmetrizes the input so
/// `m[(i, j)] == m[(j, i)]` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(invalid(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(invalid("matrix has dimension 0"));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(invalid("matrix has non-finite entries"));
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(mut m: DMatrix<f64>) -> Self {
        let d = m.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        SymMatrix { m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(invalid("rows have inconsistent lengths"));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix { m: DMatrix::identity(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|i| self.m.row(i).iter().copied().collect()).collect()
    }

    pub fn frobenius(&self) -> f64 {
        self.m.norm()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.m * v))
    }

    pub fn eig(&self) -> Spectrum {
        jacobi_eig(&self.m)
    }

    /// `P M P`.
    pub fn sandwich(&self, p: &Projector) -> SymMatrix {
        let pm = p.matrix().matrix() * &self.m;
        Self::symmetrized(pm * p.matrix().matrix())
    }

    /// `Q M Q` with `Q = I - U U^T`.
    pub fn deflate_by(&self, u: &Frame) -> SymMatrix {
        self.sandwich(&Projector::complement(u))
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(invalid("dimension mismatch"));
        }
        Ok(Self::symmetrized(&self.m + &other.m))
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        Self::symmetrized(&self.m * s)
    }

    pub fn op_norm(&self) -> f64 {
        let s = self.eig();
        s.values[0].abs().max(s.values[self.dim() - 1].abs())
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    m: DMatrix<f64>,
}

/// Entrywise tolerance on `F^T F - I`.
pub const FRAME_TOL: f64 = 1e-10;

impl Frame {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(invalid("frame has non-finite entries"));
        }
        if m.ncols() > m.nrows() {
            return Err(invalid("frame has more columns than rows"));
        }
        let g = m.transpose() * &m;
        let r = m.ncols();
        for i in 0..r {
            for j in 0..r {
                let want = if i == j { 1.0 } else { 0.0 };
                if (g[(i, j)] - want).abs() > FRAME_TOL {
                    return Err(invalid(format!(
                        "columns not orthonormal (gram[{i},{j}] = {})",
                        g[(i, j)]
                    )));
                }
            }
        }
        Ok(Frame { m })
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Frame { m }
    }

    pub fn empty(d: usize) -> Self {
        Frame { m: DMatrix::zeros(d, 0) }
    }

    pub fn from_columns(d: usize, cols: &[DVector<f64>]) -> Result<Self> {
        if cols.iter().any(|c| c.len() != d) {
            return Err(invalid("column length mismatch"));
        }
        if cols.is_empty() {
            return Ok(Self::empty(d));
        }
        Self::new(DMatrix::from_columns(cols))
    }

    /// Standard basis vectors `e_i` for the given indices.
    pub fn basis(d: usize, idx: &[usize]) -> Result<Self> {
        let cols: Vec<_> = idx
            .iter()
            .map(|&i| {
                let mut v = DVector::zeros(d);
                v[i] = 1.0;
                v
            })
            .collect();
        Self::from_columns(d, &cols)
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn column(&self, i: usize) -> DVector<f64> {
        self.m.column(i).into_owned()
    }

    pub fn columns(&self) -> Vec<DVector<f64>> {
        (0..self.cols()).map(|i| self.column(i)).collect()
    }

    pub fn concat(&self, other: &Frame) -> Result<Frame> {
        if self.rows() != other.rows() {
            return Err(invalid("row dimension mismatch"));
        }
        let mut cols = self.columns();
        cols.extend(other.columns());
        Frame::from_columns(self.rows(), &cols)
    }

    /// Columns `range.start..range.end` as a new frame.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Frame {
        Frame { m: self.m.columns(range.start, range.len()).into_owned() }
    }

    pub fn projector(&self) -> Projector {
        Projector::onto(self)
    }
}

/// Orthogonal projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    m: SymMatrix,
    rank: usize,
}

impl Projector {
    pub fn identity(d: usize) -> Self {
        Projector { m: SymMatrix::identity(d), rank: d }
    }

    pub fn onto(f: &Frame) -> Self {
        let m = SymMatrix::symmetrized(f.matrix() * f.matrix().transpose());
        Projector { m, rank: f.cols() }
    }

    /// `I - F F^T`.
    pub fn complement(f: &Frame) -> Self {
        let d = f.rows();
        let m = DMatrix::identity(d, d) - f.matrix() * f.matrix().transpose();
        Projector { m: SymMatrix::symmetrized(m), rank: d - f.cols() }
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.m
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.m.matrix() * v
    }

    /// Distance `||P u - u||`.
    pub fn span_residual(&self, u: &DVector<f64>) -> f64 {
        (self.apply(u) - u).norm()
    }

    /// Orthonormal basis of the range, from the eigenvectors of `P` with
    /// eigenvalue above one half.
    pub fn range_frame(&self) -> Frame {
        let s = self.m.eig();
        let r = s.values.iter().filter(|&&x| x > 0.5).count();
        s.vectors.slice(0..r)
    }

    pub fn deflate(&self, u: &DVector<f64>) -> Result<Projector> {
        deflate_projector(self, u)
    }
}

/// Eigendecomposition with eigenvalues sorted nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Frame,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `lambda_i` with 1-based `i`.
    pub fn lambda(&self, i: usize) -> f64 {
        self.values[i - 1]
    }

    pub fn top(&self, k: usize) -> Frame {
        self.vectors.slice(0..k)
    }

    /// `(V^{>=t}, V^{<t})`. The comparison is exact, no fuzz.
    pub fn split(&self, threshold: f64) -> (Frame, Frame) {
        let r = self.values.iter().filter(|&&x| x >= threshold).count();
        (self.vectors.slice(0..r), self.vectors.slice(r..self.dim()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = self.vectors.matrix();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.values));
        v * lam * v.transpose()
    }
}

fn jacobi_eig(m: &DMatrix<f64>) -> Spectrum {
    let n = m.nrows();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = m[(i, j)];
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = m.norm();
    let tol = JACOBI_TOL * fro;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[p * n + r];
                    let aqr = a[q * n + r];
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for r in 0..n {
                    let vrp = v[r * n + p];
                    let vrq = v[r * n + q];
                    v[r * n + p] = c * vrp - s * vrq;
                    v[r * n + q] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &src) in order.iter().enumerate() {
        let mut best = 0;
        for r in 0..n {
            if v[r * n + src].abs() > v[best * n + src].abs() {
                best = r;
            }
        }
        let sign = if v[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vecs[(r, c)] = sign * v[r * n + src];
        }
    }
    Spectrum { values, vectors: Frame::new_unchecked(vecs) }
}

pub fn eig_sym(m: &SymMatrix) -> Result<Spectrum> {
    if m.matrix().iter().any(|x| !x.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    Ok(m.eig())
}

/// Sum of the `k` largest eigenvalues.
pub fn ky_fan(m: &SymMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > m.dim() {
        return Err(invalid(format!("k = {k} outside [1, {}]", m.dim())));
    }
    Ok(m.eig().values[..k].iter().sum())
}

/// `lambda_1 / lambda_k`.
pub fn cond_k(m: &SymMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > m.dim() {
        return Err(invalid(format!("k = {k} outside [1, {}]", m.dim())));
    }
    let s = m.eig();
    cond_k_of(&s, k)
}

pub(crate) fn cond_k_of(s: &Spectrum, k: usize) -> Result<f64> {
    let lk = s.lambda(k);
    if lk <= SINGULAR_TOL {
        return Err(Error::SingularTopSpace { lambda_k: lk });
    }
    Ok(s.lambda(1) / lk)
}

pub fn eigenspace_split(m: &SymMatrix, threshold: f64) -> Result<(Frame, Frame)> {
    if !threshold.is_finite() {
        return Err(invalid("threshold must be finite"));
    }
    Ok(m.eig().split(threshold))
}

/// Tolerance on `||P u - u||` for accepting `u` as lying in `span(P)`.
pub const SPAN_TOL: f64 = 1e-8;
/// Tolerance on `| ||u|| - 1 |`.
pub const NORM_TOL: f64 = 1e-10;

/// `P - u u^T`, after checking `u` is a unit vector in the range of `P`.
pub fn deflate_projector(p: &Projector, u: &DVector<f64>) -> Result<Projector> {
    if u.len() != p.dim() {
        return Err(invalid("vector length does not match projector"));
    }
    let norm = u.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::OracleContractViolation {
            step: 0,
            reason: format!("answer norm {norm} is not 1"),
        });
    }
    let res = p.span_residual(u);
    if res > SPAN_TOL {
        return Err(Error::OracleContractViolation {
            step: 0,
            reason: format!("answer leaves span(P) by {res:e}"),
        });
    }
    if p.rank == 0 {
        return Err(Error::OracleContractViolation {
            step: 0,
            reason: "projector already has rank 0".into(),
        });
    }
    let m = p.m.matrix() - u * u.transpose();
    Ok(Projector { m: SymMatrix::symmetrized(m), rank: p.rank - 1 })
}

/// Overlap of two frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    /// `||A^T B||_F^2`
    pub frob_sq: f64,
    /// `sigma_1(A^T B)`
    pub op: f64,
}

pub fn subspace_overlap(a: &Frame, b: &Frame) -> Result<Overlap> {
    if a.rows() != b.rows() {
        return Err(invalid("frames have different row dimension"));
    }
    if a.cols() == 0 || b.cols() == 0 {
        return Ok(Overlap { frob_sq: 0.0, op: 0.0 });
    }
    let c = a.matrix().transpose() * b.matrix();
    let frob_sq = c.norm_squared();
    let g = SymMatrix::symmetrized(c.transpose() * &c);
    let top = g.eig().values[0].max(0.0);
    Ok(Overlap { frob_sq, op: top.sqrt() })
}

/// `||A^T B||_F^2` without the spectral part.
pub(crate) fn frob_overlap(a: &Frame, b: &Frame) -> f64 {
    if a.cols() == 0 || b.cols() == 0 {
        return 0.0;
    }
    (a.matrix().transpose() * b.matrix()).norm_squared()
}

/// Largest singular value of an arbitrary matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let g = if m.nrows() >= m.ncols() { m.transpose() * m } else { m * m.transpose() };
    SymMatrix::symmetrized(g).eig().values[0].max(0.0).sqrt()
}

pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn random_frame<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> Frame {
    let q = random_orthogonal(d, rng);
    Frame::new_unchecked(q.columns(0, r).into_owned())
}

/// `Q diag(eigs) Q^T` for a Haar-random `Q`.
pub fn rotated_diagonal<R: Rng + ?Sized>(eigs: &[f64], rng: &mut R) -> Result<SymMatrix> {
    let q = random_orthogonal(eigs.len(), rng);
    let lam = DMatrix::from_diagonal(&DVector::from_column_slice(eigs));
    SymMatrix::new(&q * lam * q.transpose())
}

/// Wishart-like PSD matrix `G G^T / d`.
pub fn random_psd<R: Rng + ?Sized>(d: usize, rng: &mut R) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymMatrix::symmetrized(&g * g.transpose() / d as f64)
}

pub fn random_symmetric<R: Rng + ?Sized>(d: usize, scale: f64, rng: &mut R) -> SymMatrix {
    let g = DMatrix::from_fn(d, d, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    SymMatrix::symmetrized(g)
}
