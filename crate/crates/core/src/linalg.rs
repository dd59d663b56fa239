//! Dense symmetric linear algebra: Cholesky, SPD solves, the generalized
//! symmetric eigenproblem `A v = θ M v` and Gram–Schmidt in a mass inner product.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dimension accepted by the dense routines.
pub const MAX_DIM: usize = 4096;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_OFF_TOL: f64 = 1e-14;
const GRAM_SCHMIDT_RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("Jacobi iteration did not converge within {sweeps} sweeps (off-norm ratio {ratio:e})")]
    NoConvergence { sweeps: usize, ratio: f64 },
    #[error("vector {index} is numerically dependent on its predecessors")]
    RankDeficient { index: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("entries ({i},{j}) and ({j},{i}) differ")]
    NotSymmetric { i: usize, j: usize },
    #[error("invalid dimension {0} (must be between 1 and {MAX_DIM})")]
    InvalidDimension(usize),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

fn check_dim(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DIM {
        Err(LinalgError::InvalidDimension(n))
    } else {
        Ok(())
    }
}

/// Dense symmetric matrix. Every write updates both triangles, so
/// `get(i, j) == get(j, i)` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Self { n, data: vec![0.0; n * n] })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len())?;
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * m.n + i] = d;
        }
        Ok(m)
    }

    /// Builds from `f(i, j)` evaluated on the lower triangle (`i >= j`).
    pub fn from_lower_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(n)?;
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        Ok(m)
    }

    /// Builds from full rows, rejecting any asymmetry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        check_dim(n)?;
        for r in rows {
            if r.len() != n {
                return Err(LinalgError::DimensionMismatch { expected: n, found: r.len() });
            }
        }
        for (i, row) in rows.iter().enumerate() {
            for (j, &a) in row.iter().enumerate().take(i) {
                if a != rows[j][i] {
                    return Err(LinalgError::NotSymmetric { i, j });
                }
            }
        }
        Self::from_lower_fn(n, |i, j| rows[i][j])
    }

    /// Builds from the row-major packed lower triangle.
    pub fn from_lower(n: usize, lower: &[f64]) -> Result<Self> {
        check_dim(n)?;
        let expected = n * (n + 1) / 2;
        if lower.len() != expected {
            return Err(LinalgError::DimensionMismatch { expected, found: lower.len() });
        }
        Self::from_lower_fn(n, |i, j| lower[i * (i + 1) / 2 + j])
    }

    /// Row-major packed lower triangle.
    pub fn to_lower(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n + 1) / 2);
        for i in 0..self.n {
            out.extend_from_slice(&self.data[i * self.n..i * self.n + i + 1]);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        let cur = self.get(i, j);
        self.set(i, j, cur + v);
    }

    /// Row-major view of the full matrix.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// True when all off-diagonal entries are exactly zero.
    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// Bilinear form `xᵀ S y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| c * v).collect() }
    }

    /// `self + c·other`.
    pub fn add_scaled(&self, c: f64, other: &SymMatrix) -> Result<Self> {
        if other.n != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, found: other.n });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect();
        Ok(Self { n: self.n, data })
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix { rows: self.n, cols: self.n, data: self.data.clone() }
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Packed<'a> {
            dim: usize,
            lower: &'a [f64],
        }
        Packed { dim: self.n, lower: &self.to_lower() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Packed {
            dim: usize,
            lower: Vec<f64>,
        }
        let p = Packed::deserialize(d)?;
        SymMatrix::from_lower(p.dim, &p.lower).map_err(serde::de::Error::custom)
    }
}

/// Dense rectangular matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::DimensionMismatch { expected: c, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        let mut m = Self::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            if col.len() != r {
                return Err(LinalgError::DimensionMismatch { expected: r, found: col.len() });
            }
            for (i, v) in col.iter().enumerate() {
                m.data[i * c + j] = *v;
            }
        }
        Ok(m)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch { expected: self.cols, found: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_identity(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..self.cols).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `y += a·x`.
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn scale(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &SymMatrix) -> Result<Self> {
        let n = m.dim();
        let max_diag = m.diag().into_iter().fold(0.0_f64, f64::max);
        let threshold = n as f64 * f64::EPSILON * max_diag;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j = j * n;
            let pivot = m.get(j, j) - dot(&l[row_j..row_j + j], &l[row_j..row_j + j]);
            if pivot.is_nan() || pivot <= threshold {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot });
            }
            let ljj = pivot.sqrt();
            l[row_j + j] = ljj;
            for i in j + 1..n {
                let row_i = i * n;
                let s = m.get(i, j) - dot(&l[row_i..row_i + j], &l[row_j..row_j + j]);
                l[row_i + j] = s / ljj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> Matrix {
        Matrix { rows: self.n, cols: self.n, data: self.l.clone() }
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            b[i] = (b[i] - dot(row, &b[..i])) / self.l[i * n + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn solve_upper_in_place(&self, y: &mut [f64]) {
        let n = self.n;
        for i in (0..n).rev() {
            y[i] /= self.l[i * n + i];
            let yi = y[i];
            let row = &self.l[i * n..i * n + i];
            for (k, lik) in row.iter().enumerate() {
                y[k] -= lik * yi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, found: b.len() });
        }
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        Ok(x)
    }
}

/// Lower-triangular factor of an SPD matrix.
pub fn cholesky(m: &SymMatrix) -> Result<Matrix> {
    Ok(Cholesky::factor(m)?.lower())
}

/// Solves `M x = b` for SPD `M`.
pub fn solve_spd(m: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != m.dim() {
        return Err(LinalgError::DimensionMismatch { expected: m.dim(), found: b.len() });
    }
    Cholesky::factor(m)?.solve(b)
}

/// Eigenpairs of `A v = θ M v`: ascending eigenvalues, M-orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
}

/// `C = L⁻¹ A L⁻ᵀ`, symmetrized, as a full row-major buffer.
fn reduce_to_standard(a: &SymMatrix, chol: &Cholesky) -> Vec<f64> {
    let n = a.dim();
    // A is symmetric, so its columns are its rows. Xᵀ holds X = L⁻¹A column-wise.
    let mut xt = vec![0.0; n * n];
    for j in 0..n {
        let col = &mut xt[j * n..(j + 1) * n];
        col.copy_from_slice(a.row(j));
        chol.solve_lower_in_place(col);
    }
    // Cᵀ = L⁻¹ Xᵀ; column i of Xᵀ is row i of X.
    let mut c = vec![0.0; n * n];
    let mut buf = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            buf[j] = xt[j * n + i];
        }
        chol.solve_lower_in_place(&mut buf);
        c[i * n..(i + 1) * n].copy_from_slice(&buf);
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[i * n + j] + c[j * n + i]);
            c[i * n + j] = s;
            c[j * n + i] = s;
        }
    }
    c
}

fn off_diagonal_norm(c: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += c[i * n + j] * c[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi on a full symmetric buffer. Returns eigenvalues (diagonal)
/// and eigenvectors as rows of the returned buffer.
fn jacobi(c: &mut [f64], n: usize) -> Result<Vec<f64>> {
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }
    let total = norm2(c);
    if total == 0.0 {
        return Ok(vt);
    }
    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(c, n);
        if off <= JACOBI_OFF_TOL * total {
            return Ok(vt);
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NoConvergence { sweeps, ratio: off / total });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = c[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = c[p * n + p];
                let aqq = c[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                c[p * n + p] = app - t * apq;
                c[q * n + q] = aqq + t * apq;
                c[p * n + q] = 0.0;
                c[q * n + p] = 0.0;
                let (head, tail) = c.split_at_mut(q * n);
                let row_p = &mut head[p * n..(p + 1) * n];
                let row_q = &mut tail[..n];
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = row_p[k];
                    let akq = row_q[k];
                    row_p[k] = cs * akp - sn * akq;
                    row_q[k] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    c[k * n + p] = c[p * n + k];
                    c[k * n + q] = c[q * n + k];
                }
                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for k in 0..n {
                    let a = vp[k];
                    let b = vq[k];
                    vp[k] = cs * a - sn * b;
                    vq[k] = sn * a + cs * b;
                }
            }
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let peak = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * peak) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn check_pair(a: &SymMatrix, m: &SymMatrix) -> Result<()> {
    if a.dim() != m.dim() {
        return Err(LinalgError::DimensionMismatch { expected: m.dim(), found: a.dim() });
    }
    Ok(())
}

/// Solves `A v = θ M v` for symmetric `A` and SPD `M` via Cholesky reduction
/// and cyclic Jacobi. Output is deterministic: eigenvalues ascending, each
/// eigenvector's first significant component positive.
pub fn eig_sym_generalized(a: &SymMatrix, m: &SymMatrix) -> Result<EigResult> {
    check_pair(a, m)?;
    let n = a.dim();
    let chol = Cholesky::factor(m)?;
    let mut c = reduce_to_standard(a, &chol);
    let vt = jacobi(&mut c, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| c[i * n + i].total_cmp(&c[j * n + j]).then(i.cmp(&j)));
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for &k in &order {
        eigenvalues.push(c[k * n + k]);
        let mut v = vt[k * n..(k + 1) * n].to_vec();
        chol.solve_upper_in_place(&mut v);
        fix_sign(&mut v);
        eigenvectors.push(v);
    }
    Ok(EigResult { eigenvalues, eigenvectors })
}

/// Eigenvalues only, ascending: Householder tridiagonalization followed by
/// implicit QL. Much cheaper than Jacobi when eigenvectors are not needed.
pub fn eigvals_sym_generalized(a: &SymMatrix, m: &SymMatrix) -> Result<Vec<f64>> {
    check_pair(a, m)?;
    let n = a.dim();
    let chol = Cholesky::factor(m)?;
    let mut c = reduce_to_standard(a, &chol);
    let (mut d, mut e) = tridiagonalize(&mut c, n);
    implicit_ql(&mut d, &mut e)?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Householder reduction of a full symmetric buffer to tridiagonal form.
/// Returns the diagonal and the subdiagonal (`e[i]` couples `i` and `i+1`).
fn tridiagonalize(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1;
        for i in 0..m {
            v[i] = a[(k + 1 + i) * n + k];
        }
        let alpha = norm2(&v[..m]);
        d[k] = a[k * n + k];
        if alpha == 0.0 {
            e[k] = 0.0;
            continue;
        }
        let sigma = if v[0] >= 0.0 { -alpha } else { alpha };
        e[k] = sigma;
        v[0] -= sigma;
        let vnorm2 = dot(&v[..m], &v[..m]);
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // w = beta·A22 v; then w -= (beta/2)(wᵀv) v; A22 -= v wᵀ + w vᵀ.
        for i in 0..m {
            let row = &a[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + n];
            w[i] = beta * dot(row, &v[..m]);
        }
        let kappa = 0.5 * beta * dot(&w[..m], &v[..m]);
        for i in 0..m {
            w[i] -= kappa * v[i];
        }
        for i in 0..m {
            let (vi, wi) = (v[i], w[i]);
            let row = &mut a[(k + 1 + i) * n + k + 1..(k + 1 + i) * n + n];
            for j in 0..m {
                row[j] -= vi * w[j] + wi * v[j];
            }
        }
    }
    if n >= 2 {
        d[n - 2] = a[(n - 2) * n + n - 2];
        e[n - 2] = a[(n - 1) * n + n - 2];
    }
    d[n - 1] = a[(n - 1) * n + n - 1];
    e[n - 1] = 0.0;
    (d, e)
}

/// Implicit QL with Wilkinson-type shifts on a symmetric tridiagonal matrix.
fn implicit_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(LinalgError::NoConvergence { sweeps: iter, ratio: e[l].abs() });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Modified Gram–Schmidt in the `M` inner product, with one reorthogonalization pass.
pub fn gram_schmidt_m(vectors: &[Vec<f64>], m: &SymMatrix) -> Result<Vec<Vec<f64>>> {
    let n = m.dim();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    let mut out_m: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for (idx, v) in vectors.iter().enumerate() {
        if v.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, found: v.len() });
        }
        let input_norm = m.bilinear(v, v).max(0.0).sqrt();
        let mut w = v.clone();
        for _ in 0..2 {
            for (q, mq) in out.iter().zip(&out_m) {
                let c = dot(mq, &w);
                axpy(-c, q, &mut w);
            }
        }
        let mw = m.matvec(&w);
        let wn = dot(&w, &mw).max(0.0).sqrt();
        if wn.is_nan() || wn < GRAM_SCHMIDT_RANK_TOL * input_norm || wn == 0.0 {
            return Err(LinalgError::RankDeficient { index: idx });
        }
        out.push(scale(1.0 / wn, &w));
        out_m.push(scale(1.0 / wn, &mw));
    }
    Ok(out)
}
