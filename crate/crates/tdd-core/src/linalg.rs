//! Dense and sparse real linear algebra used by the construction.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Index;

use nalgebra::{DMatrix, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Real symmetric matrix. Constructors reject or repair asymmetry so that
/// `m[(i, j)] == m[(j, i)]` holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Checked constructor: square, finite and exactly symmetric.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::NotSymmetric);
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// (M + Mᵀ)/2, written so both triangles hold the identical value.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square());
        let n = m.nrows();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            s[(i, i)] = m[(i, i)];
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymMatrix(s)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn scalar(x: f64) -> Self {
        SymMatrix(DMatrix::from_element(1, 1, x))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        SymMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, a: f64) -> Self {
        SymMatrix(&self.0 * a)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 - &other.0)
    }

    /// C·M·Cᵀ for a (possibly rectangular) C.
    pub fn congruence(&self, c: &DMatrix<f64>) -> Self {
        SymMatrix::symmetrize(&(c * &self.0 * c.transpose()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim() == 1 {
            return vec![self.0[(0, 0)]];
        }
        SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.eigenvalues().into_iter().fold(0.0, |a, l| a.max(l.abs()))
    }

    /// y += a·M·x
    pub fn mul_add(&self, a: f64, x: &[f64], y: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += self.0[(i, j)] * x[j];
            }
            y[i] += a * s;
        }
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

/// Real antisymmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix(DMatrix<f64>);

impl SkewMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = m.nrows();
        for i in 0..n {
            for j in 0..=i {
                if m[(i, j)] != -m[(j, i)] {
                    return Err(Error::NotSkew);
                }
            }
        }
        Ok(SkewMatrix(m))
    }

    /// (M − Mᵀ)/2.
    pub fn antisymmetrize(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square());
        let n = m.nrows();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] - m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = -v;
            }
        }
        SkewMatrix(s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Default clamping threshold for slightly negative eigenvalues.
pub fn default_tol_eig(m: &SymMatrix) -> f64 {
    1e-10 * m.spectral_norm()
}

/// Unique PSD square root with the default eigenvalue tolerance.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let tol = default_tol_eig(m);
    psd_sqrt_tol(m, tol)
}

/// Unique PSD square root; eigenvalues in [−tol_eig, 0) are clamped to zero.
pub fn psd_sqrt_tol(m: &SymMatrix, tol_eig: f64) -> Result<SymMatrix> {
    let n = m.dim();
    if n == 1 {
        let x = m[(0, 0)];
        if x < -tol_eig {
            return Err(Error::NotPSD { min_eig: x });
        }
        return Ok(SymMatrix::scalar(x.max(0.0).sqrt()));
    }
    if m.is_diagonal() {
        let d = m.diagonal();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -tol_eig {
            return Err(Error::NotPSD { min_eig: min });
        }
        let s: Vec<f64> = d.iter().map(|x| x.max(0.0).sqrt()).collect();
        return Ok(SymMatrix::from_diagonal(&s));
    }
    let eig = SymmetricEigen::new(m.as_matrix().clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol_eig {
        return Err(Error::NotPSD { min_eig: min });
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let r = l.max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, k)] *= r;
        }
    }
    Ok(SymMatrix::symmetrize(&(scaled * q.transpose())))
}

/// Function of −A² applied through its eigendecomposition, i.e.
/// Q·diag(g(s_k))·Qᵀ with s_k = √λ_k(−A²).
fn spectral_fn(a: &SkewMatrix, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let am = a.as_matrix();
    let neg_sq = SymMatrix::symmetrize(&(am.transpose() * am));
    let eig = SymmetricEigen::new(neg_sq.into_inner());
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let v = g(l.max(0.0).sqrt());
        for i in 0..q.nrows() {
            scaled[(i, k)] *= v;
        }
    }
    scaled * q.transpose()
}

/// exp(tA) for skew A, written as cos(tS) + A·S⁻¹sin(tS) with S = √(−A²).
pub fn skew_exp(a: &SkewMatrix, t: f64) -> Result<DMatrix<f64>> {
    let n = a.dim();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let c = spectral_fn(a, |s| (t * s).cos());
    let sn = spectral_fn(a, |s| if s * t.abs() < 1e-8 { t } else { (t * s).sin() / s });
    let q = c + a.as_matrix() * sn;
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(q)
}

/// ∫₀ᵗ exp(sA) ds for skew A.
pub fn skew_exp_integral(a: &SkewMatrix, t: f64) -> Result<DMatrix<f64>> {
    let n = a.dim();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let si = spectral_fn(a, |s| if s * t.abs() < 1e-8 { t } else { (t * s).sin() / s });
    let ci = spectral_fn(a, |s| {
        if s * t.abs() < 1e-6 {
            0.5 * t * t
        } else {
            let h = (0.5 * t * s).sin();
            2.0 * h * h / (s * s)
        }
    });
    let q = si + a.as_matrix() * ci;
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(q)
}

/// True iff JᵀJ = I and J² = −I to 1e−12 (Frobenius).
pub fn check_symplectic(j: &DMatrix<f64>) -> Result<bool> {
    if !j.is_square() {
        return Err(Error::DimensionMismatch { expected: j.nrows(), found: j.ncols() });
    }
    let n = j.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let orth = (j.transpose() * j - &id).norm();
    let sq = (j * j + &id).norm();
    Ok(orth <= 1e-12 && sq <= 1e-12)
}

/// Canonical symplectic matrix [[0, −I], [I, 0]] of size 2n.
pub fn canonical_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Csr::from_triplets(m.nrows(), m.ncols(), t)
    }

    /// Duplicate entries are summed; exact zeros are dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            assert!(i < rows && j < cols, "triplet out of bounds");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let mut c = Csr { rows, cols, indptr, indices, values };
        c.prune();
        c
    }

    fn prune(&mut self) {
        let mut indptr = vec![0usize; self.rows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                if self.values[k] != 0.0 {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[i + 1] = indices.len();
        }
        self.indptr = indptr;
        self.indices = indices;
        self.values = values;
    }

    pub fn identity(n: usize) -> Self {
        Csr::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map(|(_, v)| v).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn transpose(&self) -> Csr {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                t.push((j, i, v));
            }
        }
        Csr::from_triplets(self.cols, self.rows, t)
    }

    pub fn scale(&self, a: f64) -> Csr {
        let mut c = self.clone();
        for v in c.values.iter_mut() {
            *v *= a;
        }
        c.prune();
        c
    }

    /// y = A·x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    /// y += a·A·x
    pub fn mul_vec_add(&self, a: f64, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows) {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            *yi += a * s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.mul_vec(x, &mut y);
        y
    }

    /// Sparse product self·other (Gustavson).
    pub fn mul(&self, other: &Csr) -> Csr {
        assert_eq!(self.cols, other.rows);
        let mut acc = vec![0.0; other.cols];
        let mut mark = vec![usize::MAX; other.cols];
        let mut t = Vec::new();
        for i in 0..self.rows {
            let mut touched = Vec::new();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if mark[j] != i {
                        mark[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            for j in touched {
                t.push((i, j, acc[j]));
            }
        }
        Csr::from_triplets(self.rows, other.cols, t)
    }

    pub fn add(&self, other: &Csr) -> Csr {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.rows {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
            t.extend(other.row(i).map(|(j, v)| (i, j, v)));
        }
        Csr::from_triplets(self.rows, self.cols, t)
    }

    /// (lower, upper) bandwidth.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.rows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// Sparse check of JᵀJ = I and J² = −I.
pub fn check_symplectic_sparse(j: &Csr) -> Result<bool> {
    if j.rows != j.cols {
        return Err(Error::DimensionMismatch { expected: j.rows, found: j.cols });
    }
    let n = j.rows;
    let id = Csr::identity(n);
    let orth = j.transpose().mul(j).add(&id.scale(-1.0));
    let sq = j.mul(j).add(&id);
    let fro = |c: &Csr| c.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(fro(&orth) <= 1e-12 && fro(&sq) <= 1e-12)
}

/// Banded LU without pivoting; used only for matrices whose symmetric
/// part is positive definite, where all leading minors are nonzero.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    // row-major band storage: a[i][j - i + kl] for |j - i| within band
    band: Vec<f64>,
}

impl BandedLu {
    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * self.width() + j + self.kl - i]
    }

    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let w = self.width();
        &mut self.band[i * w + j + self.kl - i]
    }

    pub fn factor(m: &Csr) -> Option<Self> {
        let n = m.rows;
        let (kl, ku) = m.bandwidth();
        // fill-in stays inside the band without pivoting
        let mut lu = BandedLu { n, kl, ku, band: vec![0.0; n * (kl + ku + 1)] };
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for (j, v) in m.row(i) {
                *lu.at_mut(i, j) += v;
                scale = scale.max(v.abs());
            }
        }
        for k in 0..n {
            let p = lu.at(k, k);
            if !(p.abs() > 1e-13 * scale.max(1.0)) {
                return None;
            }
            let imax = (k + kl).min(n - 1);
            let jmax = (k + ku).min(n - 1);
            for i in k + 1..=imax {
                let l = lu.at(i, k) / p;
                *lu.at_mut(i, k) = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let u = lu.at(k, j);
                        *lu.at_mut(i, j) -= l * u;
                    }
                }
            }
        }
        Some(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut s = b[i];
            for j in lo..i {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }
}

/// Factorised square system: banded when that pays off, dense partial-pivot LU otherwise.
#[derive(Debug, Clone)]
pub enum LinearSolver {
    Banded(BandedLu),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl LinearSolver {
    pub fn new(m: &Csr) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch { expected: m.rows, found: m.cols });
        }
        let n = m.rows;
        let (kl, ku) = m.bandwidth();
        if n > 8 && (kl + ku + 1) * 4 < n {
            if let Some(b) = BandedLu::factor(m) {
                return Ok(LinearSolver::Banded(b));
            }
        }
        let lu = m.to_dense().lu();
        if !lu.is_invertible() {
            return Err(Error::SingularStep);
        }
        Ok(LinearSolver::Dense(lu))
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            LinearSolver::Banded(lu) => lu.solve_in_place(b),
            LinearSolver::Dense(lu) => {
                let mut v = nalgebra::DVector::from_column_slice(b);
                lu.solve_mut(&mut v);
                b.copy_from_slice(v.as_slice());
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
