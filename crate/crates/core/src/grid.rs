//! Periodic uniform grid on the unit torus [0,1)^n with finite-difference
//! stencils, exact node-average means, and second-difference quotients.
//!
//! The torus has side length 1; a grid has m nodes per axis at coordinates
//! k/m and all index arithmetic wraps modulo m. Means are node averages,
//! which is the trapezoid rule on the torus: exact for the trigonometric
//! polynomials used throughout the tests and second-order for everything
//! else.

use crate::error::{Error, Result};
use crate::sym::SymMatrix;

/// Uniform periodic grid on [0,1)^n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    n: usize,
    m: usize,
}

/// Make a grid with n in {2,3} and even m >= 8; spacing is h = 1/m.
pub fn make_grid(n: usize, m: usize) -> Result<TorusGrid> {
    if !(n == 2 || n == 3) {
        return Err(Error::InvalidDimension(n));
    }
    if m < 8 || m % 2 != 0 {
        return Err(Error::InvalidResolution(m));
    }
    Ok(TorusGrid { n, m })
}

impl TorusGrid {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn node_count(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    /// Wrap a (possibly negative) axis index into 0..m. Power-of-two grids
    /// take the bit-mask fast path, which is exact.
    #[inline]
    pub fn wrap(&self, k: isize) -> usize {
        let m = self.m as isize;
        if self.m.is_power_of_two() {
            (k & (m - 1)) as usize
        } else {
            k.rem_euclid(m) as usize
        }
    }

    /// Flat row-major index of multi-index `idx` (already in range).
    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0usize;
        for &k in idx {
            f = f * self.m + k;
        }
        f
    }

    /// Multi-index of flat index `f`.
    #[inline]
    pub fn unflat(&self, mut f: usize) -> Vec<usize> {
        let mut idx = vec![0usize; self.n];
        for a in (0..self.n).rev() {
            idx[a] = f % self.m;
            f /= self.m;
        }
        idx
    }

    /// Flat index of the node shifted by `d` (in axis steps) from `idx`.
    #[inline]
    pub fn shifted(&self, idx: &[usize], d: &[isize]) -> usize {
        let mut f = 0usize;
        for (a, &k) in idx.iter().enumerate() {
            f = f * self.m + self.wrap(k as isize + d[a]);
        }
        f
    }

    /// Coordinates of the node with flat index `f`.
    pub fn coords(&self, f: usize) -> Vec<f64> {
        self.unflat(f)
            .into_iter()
            .map(|k| k as f64 * self.spacing())
            .collect()
    }
}

/// Real-valued samples on the nodes of a [`TorusGrid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: TorusGrid) -> Self {
        GridFunction {
            grid,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        GridFunction {
            grid,
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.node_count());
        GridFunction { grid, values }
    }

    /// Sample a function of the node coordinates (row-major node order).
    pub fn sample<F: FnMut(&[f64]) -> f64>(grid: TorusGrid, mut f: F) -> Self {
        let values = (0..grid.node_count())
            .map(|i| f(&grid.coords(i)))
            .collect();
        GridFunction { grid, values }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Node-average mean, compensated (Neumaier) so that the telescoping
    /// identities hold to roundoff even for stencil-sized values.
    pub fn mean(&self) -> f64 {
        neumaier_sum(&self.values) / self.values.len() as f64
    }

    /// Returns a copy with the mean subtracted; the result has |mean| at
    /// roundoff scale.
    pub fn project_mean_zero(&self) -> GridFunction {
        let mu = self.mean();
        GridFunction {
            grid: self.grid,
            values: self.values.iter().map(|v| v - mu).collect(),
        }
    }

    /// Central-difference Hessian at the node with flat index `f`:
    /// diagonal (u(x+h e_i)+u(x-h e_i)-2u(x))/h^2, off-diagonal via the
    /// symmetric four-point cross stencil; all indices wrap.
    pub fn discrete_hessian(&self, f: usize) -> SymMatrix {
        hessian_at(&self.grid, &self.values, f)
    }

    /// Periodic multilinear interpolation at an arbitrary point (coordinates
    /// taken modulo 1).
    pub fn interp(&self, x: &[f64]) -> f64 {
        let g = self.grid;
        let n = g.dim();
        let m = g.m as f64;
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0f64; n];
        for a in 0..n {
            let t = (x[a].rem_euclid(1.0)) * m;
            let k = t.floor();
            base[a] = g.wrap(k as isize);
            frac[a] = t - k;
        }
        let corners = 1usize << n;
        let mut v = 0.0;
        let mut d = vec![0isize; n];
        for c in 0..corners {
            let mut w = 1.0;
            for a in 0..n {
                if c >> a & 1 == 1 {
                    d[a] = 1;
                    w *= frac[a];
                } else {
                    d[a] = 0;
                    w *= 1.0 - frac[a];
                }
            }
            v += w * self.values[g.shifted(&base, &d)];
        }
        v
    }

    /// Text dump: header line "n m", then m^n values one per line, row-major.
    pub fn dump(&self) -> String {
        let mut s = String::with_capacity(self.values.len() * 20 + 16);
        s.push_str(&format!("{} {}\n", self.grid.dim(), self.grid.points_per_axis()));
        for v in &self.values {
            s.push_str(&format!("{v:?}\n"));
        }
        s
    }

    pub fn parse_dump(text: &str) -> Result<GridFunction> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::ConfigError("empty grid dump".into()))?;
        let mut parts = header.split_whitespace();
        let n: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::ConfigError("bad grid dump header".into()))?;
        let m: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::ConfigError("bad grid dump header".into()))?;
        let grid = make_grid(n, m)?;
        let mut values = Vec::with_capacity(grid.node_count());
        for line in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            values.push(
                t.parse::<f64>()
                    .map_err(|e| Error::ConfigError(format!("bad value in grid dump: {e}")))?,
            );
        }
        if values.len() != grid.node_count() {
            return Err(Error::ConfigError(format!(
                "grid dump has {} values, expected {}",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(GridFunction { grid, values })
    }
}

/// Central-difference Hessian of raw node values (see
/// [`GridFunction::discrete_hessian`]); operating on slices lets solver
/// inner loops avoid cloning grid functions.
pub fn hessian_at(grid: &TorusGrid, values: &[f64], f: usize) -> SymMatrix {
    let n = grid.dim();
    let h2 = grid.spacing() * grid.spacing();
    let idx = grid.unflat(f);
    let u0 = values[f];
    let mut hess = SymMatrix::zero(n);
    let mut d = vec![0isize; n];
    for i in 0..n {
        d.iter_mut().for_each(|x| *x = 0);
        d[i] = 1;
        let up = values[grid.shifted(&idx, &d)];
        d[i] = -1;
        let um = values[grid.shifted(&idx, &d)];
        hess.set(i, i, (up + um - 2.0 * u0) / h2);
        for j in (i + 1)..n {
            d.iter_mut().for_each(|x| *x = 0);
            d[i] = 1;
            d[j] = 1;
            let upp = values[grid.shifted(&idx, &d)];
            d[i] = -1;
            d[j] = -1;
            let umm = values[grid.shifted(&idx, &d)];
            d[i] = 1;
            d[j] = -1;
            let upm = values[grid.shifted(&idx, &d)];
            d[i] = -1;
            d[j] = 1;
            let ump = values[grid.shifted(&idx, &d)];
            hess.set(i, j, (upp + umm - upm - ump) / (4.0 * h2));
        }
    }
    hess
}

/// Second-difference quotient (u(x+e)+u(x-e)-2u(x))/|e|^2 of a point-sampled
/// function along a nonzero integer lattice direction. On the lattice it
/// annihilates 1-periodic parts exactly and reads off e^T A e / |e|^2 from
/// the quadratic part.
pub fn second_difference<F: Fn(&[f64]) -> f64>(u: F, e: &[i64], x: &[f64]) -> Result<f64> {
    if e.iter().all(|&c| c == 0) {
        return Err(Error::ZeroDirection);
    }
    let norm2: f64 = e.iter().map(|&c| (c * c) as f64).sum();
    let xp: Vec<f64> = x.iter().zip(e).map(|(xi, &ei)| xi + ei as f64).collect();
    let xm: Vec<f64> = x.iter().zip(e).map(|(xi, &ei)| xi - ei as f64).collect();
    Ok((u(&xp) + u(&xm) - 2.0 * u(x)) / norm2)
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(vals: &[f64]) -> f64 {
    let mut s = 0.0_f64;
    let mut c = 0.0_f64;
    for &v in vals {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}
