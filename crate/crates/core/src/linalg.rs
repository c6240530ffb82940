//! Small dense and banded linear algebra kernels.
//!
//! The grids here are uniform and lexicographically ordered, so every matrix
//! the crate assembles is symmetric with a fixed half bandwidth (1 in 1D,
//! cells+1 in 2D). A banded LDLᵀ factorisation without pivoting covers both
//! the definite systems (stiffness, monotone Jacobians) and the mildly
//! indefinite shifted systems met while polishing critical points; callers
//! are expected to fall back to a safer step when [`BandedLdlt::factor`]
//! reports a breakdown.

use crate::error::Error;

/// Symmetric banded matrix stored by diagonals.
///
/// `bands[d][i]` holds the entry at `(i, i + d)` for `d = 0..=half_bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    bands: Vec<Vec<f64>>,
}

impl BandedMatrix {
    /// Zero matrix of size `n` with the given half bandwidth.
    #[must_use]
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        let m = half_bandwidth.min(n.saturating_sub(1));
        let bands = (0..=m).map(|d| vec![0.0; n - d]).collect();
        BandedMatrix { n, bands }
    }

    #[must_use]
    pub fn size(&self) -> usize {
        self.n
    }

    #[must_use]
    pub fn half_bandwidth(&self) -> usize {
        self.bands.len() - 1
    }

    /// Adds `value` at `(i, j)` and, implicitly, at `(j, i)`.
    ///
    /// Panics if `|i - j|` exceeds the half bandwidth.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let (lo, d) = if i <= j { (i, j - i) } else { (j, i - j) };
        self.bands[d][lo] += value;
    }

    #[must_use]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, d) = if i <= j { (i, j - i) } else { (j, i - j) };
        if d < self.bands.len() {
            self.bands[d][lo]
        } else {
            0.0
        }
    }

    /// y = A x.
    #[must_use]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            y[i] += self.bands[0][i] * x[i];
        }
        for d in 1..self.bands.len() {
            for i in 0..self.n - d {
                let a = self.bands[d][i];
                y[i] += a * x[i + d];
                y[i + d] += a * x[i];
            }
        }
        y
    }
}

/// LDLᵀ factorisation of a symmetric banded matrix, no pivoting.
#[derive(Debug, Clone)]
pub struct BandedLdlt {
    n: usize,
    m: usize,
    /// Unit lower triangle by diagonals: `low[d - 1][j] = L[j + d][j]`.
    low: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl BandedLdlt {
    /// Factors `a`. Fails when a pivot falls below `breakdown` in magnitude,
    /// which signals a (numerically) singular matrix.
    pub fn factor(a: &BandedMatrix, breakdown: f64) -> Result<Self, Error> {
        let n = a.n;
        let m = a.half_bandwidth();
        let mut low: Vec<Vec<f64>> = (1..=m).map(|d| vec![0.0; n - d]).collect();
        let mut diag = vec![0.0; n];
        // Work column by column; only the previous m columns couple.
        for j in 0..n {
            let k0 = j.saturating_sub(m);
            let mut d = a.bands[0][j];
            for k in k0..j {
                let l = low[j - k - 1][k];
                d -= l * l * diag[k];
            }
            if d.abs() <= breakdown || !d.is_finite() {
                return Err(Error::LinearSolve(format!(
                    "pivot {d:.3e} at column {j} (breakdown threshold {breakdown:.3e})"
                )));
            }
            diag[j] = d;
            let imax = (j + m).min(n - 1);
            for i in j + 1..=imax {
                let mut s = a.get(i, j);
                let kk0 = i.saturating_sub(m).max(k0);
                for k in kk0..j {
                    s -= low[i - k - 1][k] * low[j - k - 1][k] * diag[k];
                }
                low[i - j - 1][j] = s / d;
            }
        }
        Ok(BandedLdlt { n, m, low, diag })
    }

    /// Solves A x = b in place of a fresh vector.
    #[must_use]
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        // L z = b
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                let imax = (j + self.m).min(self.n - 1);
                for i in j + 1..=imax {
                    x[i] -= self.low[i - j - 1][j] * xj;
                }
            }
        }
        // D y = z
        for j in 0..self.n {
            x[j] /= self.diag[j];
        }
        // Lᵀ x = y
        for j in (0..self.n).rev() {
            let imax = (j + self.m).min(self.n - 1);
            let mut s = x[j];
            for i in j + 1..=imax {
                s -= self.low[i - j - 1][j] * x[i];
            }
            x[j] = s;
        }
        x
    }

    /// True when every pivot is positive, i.e. the matrix was positive definite.
    #[must_use]
    pub fn is_positive_definite(&self) -> bool {
        self.diag.iter().all(|&d| d > 0.0)
    }
}

/// Eigendecomposition of a small dense symmetric matrix by cyclic Jacobi.
///
/// Returns eigenvalues in ascending order with the matching orthonormal
/// columns in `vectors` (row-major `n x n`, column `k` is eigenvector `k`).
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>), Error> {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let idx = |i: usize, j: usize| i * n + j;
    for sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + frobenius(&a, n)) {
            break;
        }
        if sweep == 99 {
            return Err(Error::LinearSolve("jacobi sweep limit reached".into()));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[idx(k, p)];
                    let vkq = v[idx(k, q)];
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[idx(i, i)].partial_cmp(&a[idx(j, j)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[idx(i, i)]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[idx(k, new_col)] = v[idx(k, old_col)];
        }
    }
    Ok((values, vectors))
}

/// Solves the small dense generalised symmetric problem `A y = θ B y` with
/// `B` positive definite, via a Cholesky reduction to standard form.
///
/// Returns ascending eigenvalues and B-orthonormal eigenvector columns.
pub fn generalized_symmetric_eigen(
    a: &[f64],
    b: &[f64],
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>), Error> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n * n);
    let l = dense_cholesky(b, n)?;
    // C = L^{-1} A L^{-T}, built column by column.
    let mut c = vec![0.0; n * n];
    for col in 0..n {
        // w = A L^{-T} e_col: first t = L^{-T} e_col, then w = A t.
        let mut t = vec![0.0; n];
        t[col] = 1.0;
        back_substitute_transpose(&l, n, &mut t);
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * t[k];
            }
            w[i] = s;
        }
        forward_substitute(&l, n, &mut w);
        for i in 0..n {
            c[i * n + col] = w[i];
        }
    }
    // Symmetrise away roundoff before Jacobi.
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (c[i * n + j] + c[j * n + i]);
            c[i * n + j] = s;
            c[j * n + i] = s;
        }
    }
    let (values, z) = jacobi_eigen(&c, n)?;
    // y = L^{-T} z, column by column.
    let mut vectors = vec![0.0; n * n];
    for col in 0..n {
        let mut y: Vec<f64> = (0..n).map(|k| z[k * n + col]).collect();
        back_substitute_transpose(&l, n, &mut y);
        for i in 0..n {
            vectors[i * n + col] = y[i];
        }
    }
    Ok((values, vectors))
}

/// Dense lower Cholesky factor of a symmetric positive definite matrix.
fn dense_cholesky(b: &[f64], n: usize) -> Result<Vec<f64>, Error> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = b[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::LinearSolve(format!(
                        "cholesky pivot {s:.3e} at row {i}"
                    )));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// x ← L⁻¹ x for lower triangular L.
fn forward_substitute(l: &[f64], n: usize, x: &mut [f64]) {
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
}

/// x ← L⁻ᵀ x for lower triangular L.
fn back_substitute_transpose(l: &[f64], n: usize, x: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
}

fn frobenius(a: &[f64], n: usize) -> f64 {
    a.iter().take(n * n).map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean inner product.
#[must_use]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Euclidean norm.
#[must_use]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// y ← y + alpha x.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
