//! Small symmetric matrices (n = 2 or 3) with a Jacobi eigensolver.
//!
//! Everything in the operator catalog is driven by eigenvalues of 2x2 and
//! 3x3 symmetric matrices, so the eigensolver is hand-rolled cyclic Jacobi:
//! deterministic, backward stable, and free of external dependencies.

use crate::error::{Error, Result};

/// Real symmetric n x n matrix stored as the upper triangle, row-major:
/// for n = 3 the entry order is (0,0),(0,1),(0,2),(1,1),(1,2),(2,2).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    pub fn zero(n: usize) -> Self {
        SymMatrix {
            n,
            entries: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = SymMatrix::zero(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = SymMatrix::zero(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Build from full rows, requiring symmetry up to exact equality of the
    /// mirrored entries (callers with approximate data symmetrize first).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if !(n == 2 || n == 3) {
            return Err(Error::InvalidDimension(n));
        }
        for row in rows {
            if row.len() != n {
                return Err(Error::InvalidOperator(format!(
                    "matrix row has {} entries, expected {}",
                    row.len(),
                    n
                )));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::InvalidOperator(format!(
                        "matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let mut m = SymMatrix::zero(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, rows[i][j]);
            }
        }
        Ok(m)
    }

    /// Rank-one t * e (x) e for a direction vector e.
    pub fn rank_one(e: &[f64], t: f64) -> Self {
        let n = e.len();
        let mut m = SymMatrix::zero(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, t * e[i] * e[j]);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        // offset of row r in the packed upper triangle
        r * self.n - r * (r + 1) / 2 + c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[self.idx(i, j)]
    }

    /// Sets the (i,j) and (j,i) entries.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.entries[k] = v;
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n);
        SymMatrix {
            n: self.n,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        assert_eq!(self.n, other.n);
        SymMatrix {
            n: self.n,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix {
            n: self.n,
            entries: self.entries.iter().map(|a| a * s).collect(),
        }
    }

    /// Frobenius inner product <A, B> = sum_ij A_ij B_ij.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Spectral norm max |kappa_i|.
    pub fn spectral_norm(&self) -> f64 {
        let (kappa, _) = self.eigen();
        kappa.iter().fold(0.0_f64, |a, k| a.max(k.abs()))
    }

    /// Eigenvalues (nondecreasing) and the orthogonal matrix Q whose COLUMNS
    /// are the matching eigenvectors, via cyclic Jacobi rotations.
    pub fn eigen(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.n;
        let mut a = self.to_rows();
        let mut q = vec![vec![0.0; n]; n];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 1.0;
        }

        let scale = self
            .entries
            .iter()
            .fold(0.0_f64, |acc, e| acc.max(e.abs()))
            .max(f64::MIN_POSITIVE);
        let tol = 1e-15 * scale;

        for _sweep in 0..50 {
            let mut off = 0.0_f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    off = off.max(a[i][j].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..n {
                for r in (p + 1)..n {
                    let apr = a[p][r];
                    if apr.abs() <= tol * 1e-2 {
                        continue;
                    }
                    // classic Jacobi rotation annihilating a[p][r]
                    let theta = (a[r][r] - a[p][p]) / (2.0 * apr);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k][p];
                        let akr = a[k][r];
                        a[k][p] = c * akp - s * akr;
                        a[k][r] = s * akp + c * akr;
                    }
                    for k in 0..n {
                        let apk = a[p][k];
                        let ark = a[r][k];
                        a[p][k] = c * apk - s * ark;
                        a[r][k] = s * apk + c * ark;
                    }
                    for row in q.iter_mut() {
                        let qkp = row[p];
                        let qkr = row[r];
                        row[p] = c * qkp - s * qkr;
                        row[r] = s * qkp + c * qkr;
                    }
                }
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
        let kappa: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
        let qs: Vec<Vec<f64>> = (0..n)
            .map(|row| order.iter().map(|&col| q[row][col]).collect())
            .collect();
        (kappa, qs)
    }

    /// Reassemble Q diag(w) Q^T for per-eigenvalue weights w (same order as
    /// the eigenvalues returned by [`eigen`](Self::eigen)).
    pub fn from_eigen(q: &[Vec<f64>], w: &[f64]) -> SymMatrix {
        let n = w.len();
        let mut m = SymMatrix::zero(n);
        for i in 0..n {
            for j in i..n {
                let mut v = 0.0;
                for (k, &wk) in w.iter().enumerate() {
                    v += q[i][k] * wk * q[j][k];
                }
                m.set(i, j, v);
            }
        }
        m
    }

    /// True iff other - self is positive semidefinite (up to a tiny slack).
    pub fn le_loewner(&self, other: &SymMatrix) -> bool {
        let d = other.sub(self);
        let (kappa, _) = d.eigen();
        kappa[0] >= -1e-12 * (1.0 + d.frobenius_norm())
    }

    /// Cache key: entries rounded to 12 decimal digits.
    pub fn quantized(&self) -> Vec<i64> {
        self.entries
            .iter()
            .map(|e| (e * 1e12).round() as i64)
            .collect()
    }
}

/// k-th elementary symmetric polynomial of the given values.
pub fn elementary_symmetric(vals: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > vals.len() {
        return 0.0;
    }
    // e_k via the Newton-free recurrence on prefixes: O(n k), exact for small n.
    let mut e = vec![0.0_f64; k + 1];
    e[0] = 1.0;
    for &v in vals {
        for j in (1..=k).rev() {
            e[j] += v * e[j - 1];
        }
    }
    e[k]
}
