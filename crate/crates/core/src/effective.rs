//! The homogenized operator Fbar evaluated through cached cell solves, plus
//! probes for the structure it inherits from F.
//!
//! Fbar(A) is the beta of the cell problem at A. The probes check, at
//! discretization accuracy:
//!
//! * ellipticity with the same constants as F, tested on rank-one
//!   increments t e (x) e where every standard matrix norm agrees on the
//!   value t;
//! * concavity (or convexity) via midpoint margins;
//! * the sigma_k mean identity <sigma_k(A + D^2 v)> = sigma_k(A);
//! * the solvability criterion Fbar(A) = <f>.
//!
//! All probe tolerances are proportional to h^2: the underlying identities
//! are exact in the continuum and the discretization is second order.

use std::collections::HashMap;

use serde::Serialize;

use crate::cell::{solve_cell, CellProblem, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{neumaier_sum, GridFunction, TorusGrid};
use crate::operators::{cone_check, Concavity, OperatorSpec};
use crate::parallel::par_fill;
use crate::sym::{elementary_symmetric, SymMatrix};

/// A -> Fbar(A) for fixed (op, f, grid), with a quantized cache.
///
/// The identity of Fbar deliberately includes f: caches are never shared
/// across data, since for nonlinear F the homogenized operator may depend
/// on f.
pub struct EffectiveOperator {
    op: OperatorSpec,
    f: GridFunction,
    grid: TorusGrid,
    pub options: SolverOptions,
    cache: HashMap<Vec<i64>, f64>,
}

impl EffectiveOperator {
    pub fn new(grid: TorusGrid, op: OperatorSpec, f: GridFunction) -> Self {
        assert_eq!(f.grid(), grid);
        EffectiveOperator {
            op,
            f,
            grid,
            options: SolverOptions::default(),
            cache: HashMap::new(),
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.op
    }

    /// Mean of the raw (unsubtracted) data.
    pub fn raw_data_mean(&self) -> f64 {
        self.f.mean()
    }

    fn problem_at(&self, a: &SymMatrix) -> CellProblem {
        CellProblem {
            grid: self.grid,
            op: self.op.clone(),
            a: a.clone(),
            f: self.f.clone(),
            options: self.options.clone(),
        }
    }

    /// Fbar(A) = beta of the cell solve, cached on A quantized to 12
    /// decimal digits; cache hits are bit-identical.
    pub fn effective(&mut self, a: &SymMatrix) -> Result<f64> {
        let key = a.quantized();
        if let Some(&beta) = self.cache.get(&key) {
            return Ok(beta);
        }
        let sol = solve_cell(&self.problem_at(a))?;
        self.cache.insert(key, sol.beta);
        Ok(sol.beta)
    }

    /// Full cell solution at A (uncached payload; beta still lands in the
    /// cache).
    pub fn solve(&mut self, a: &SymMatrix) -> Result<crate::cell::CellSolution> {
        let sol = solve_cell(&self.problem_at(a))?;
        self.cache.insert(a.quantized(), sol.beta);
        Ok(sol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityProbe {
    pub delta: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compare Fbar(M + t e(x)e) - Fbar(M) against [lambda t, Lambda t] with
/// slack 10 h^2 (1 + |M| + t).
pub fn ellipticity_probe(
    eo: &mut EffectiveOperator,
    m: &SymMatrix,
    e: &[f64],
    t: f64,
) -> Result<EllipticityProbe> {
    let (lambda, big_lambda) = eo.op.ellipticity().ok_or_else(|| {
        Error::ProbeNotApplicable(
            "operator has no unconditional ellipticity constants".into(),
        )
    })?;
    let norm_e: f64 = e.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !(norm_e > 0.0) || t < 0.0 {
        return Err(Error::ProbeNotApplicable(
            "need a nonzero direction and t >= 0".into(),
        ));
    }
    let unit: Vec<f64> = e.iter().map(|c| c / norm_e).collect();
    let bumped = m.add(&SymMatrix::rank_one(&unit, t));
    let base = eo.effective(m)?;
    let shifted = eo.effective(&bumped)?;
    let delta = shifted - base;
    let h = eo.grid.spacing();
    let tol = 10.0 * h * h * (1.0 + m.spectral_norm() + t);
    let lower = lambda * t;
    let upper = big_lambda * t;
    let pass = delta >= lower - tol && delta <= upper + tol;
    Ok(EllipticityProbe {
        delta,
        lower,
        upper,
        tol,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcavityProbe {
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Midpoint concavity margin Fbar((M+N)/2) - (Fbar(M) + Fbar(N))/2, which
/// must be >= -tol when F is concave.
pub fn concavity_probe(
    eo: &mut EffectiveOperator,
    m: &SymMatrix,
    n: &SymMatrix,
) -> Result<ConcavityProbe> {
    match eo.op.concavity() {
        Concavity::Concave | Concavity::Linear => {}
        other => {
            return Err(Error::ProbeNotApplicable(format!(
                "operator is {other:?}, not concave; use the convexity probe"
            )))
        }
    }
    let margin = midpoint_margin(eo, m, n)?;
    let h = eo.grid.spacing();
    let tol = 10.0 * h * h * (1.0 + m.spectral_norm() + n.spectral_norm());
    Ok(ConcavityProbe {
        margin,
        tol,
        pass: margin >= -tol,
    })
}

/// Mirrored probe for convex operators: (Fbar(M) + Fbar(N))/2 - Fbar((M+N)/2)
/// must be >= -tol.
pub fn convexity_probe(
    eo: &mut EffectiveOperator,
    m: &SymMatrix,
    n: &SymMatrix,
) -> Result<ConcavityProbe> {
    match eo.op.concavity() {
        Concavity::Convex | Concavity::Linear => {}
        other => {
            return Err(Error::ProbeNotApplicable(format!(
                "operator is {other:?}, not convex; use the concavity probe"
            )))
        }
    }
    let margin = -midpoint_margin(eo, m, n)?;
    let h = eo.grid.spacing();
    let tol = 10.0 * h * h * (1.0 + m.spectral_norm() + n.spectral_norm());
    Ok(ConcavityProbe {
        margin,
        tol,
        pass: margin >= -tol,
    })
}

fn midpoint_margin(eo: &mut EffectiveOperator, m: &SymMatrix, n: &SymMatrix) -> Result<f64> {
    let mid = m.add(n).scale(0.5);
    let f_mid = eo.effective(&mid)?;
    let f_m = eo.effective(m)?;
    let f_n = eo.effective(n)?;
    Ok(f_mid - 0.5 * f_m - 0.5 * f_n)
}

/// |<sigma_k(A + D^2 v)> - sigma_k(A)|, the discrete residue of the Reilly
/// mean identity; requires A + D^2 v inside Gamma_k at every node.
pub fn reilly_check(grid: &TorusGrid, a: &SymMatrix, v: &GridFunction, k: usize) -> Result<f64> {
    assert_eq!(v.grid(), *grid);
    let total = grid.node_count();
    let mut vals = vec![0.0; total];
    let values = v.values();
    par_fill(&mut vals, |f| {
        let m = a.add(&crate::grid::hessian_at(grid, values, f));
        if cone_check(&m, k) {
            let (kappa, _) = m.eigen();
            elementary_symmetric(&kappa, k)
        } else {
            f64::NAN
        }
    });
    if vals.iter().any(|x| x.is_nan()) {
        return Err(Error::ConeViolation);
    }
    let mean = neumaier_sum(&vals) / total as f64;
    let (kappa_a, _) = a.eigen();
    Ok((mean - elementary_symmetric(&kappa_a, k)).abs())
}

/// Theorem-level solvability: true iff |Fbar(A) - <f_raw>| <= 10 h^2.
pub fn solvability_check(eo: &mut EffectiveOperator, a: &SymMatrix) -> Result<bool> {
    let beta = eo.effective(a)?;
    let h = eo.grid.spacing();
    Ok((beta - eo.raw_data_mean()).abs() <= 10.0 * h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sin_field(grid: TorusGrid) -> GridFunction {
        GridFunction::sample(grid, |x| (2.0 * PI * x[0]).sin())
    }

    #[test]
    fn trace_effective_is_trace() {
        let grid = make_grid(2, 32).unwrap();
        let mut eo = EffectiveOperator::new(grid, OperatorSpec::trace(), sin_field(grid));
        let a = SymMatrix::from_diag(&[1.0, 2.0]);
        assert!((eo.effective(&a).unwrap() - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_data_gives_f_of_a() {
        let grid = make_grid(2, 16).unwrap();
        let f = GridFunction::constant(grid, 2.0);
        let mut eo =
            EffectiveOperator::new(grid, OperatorSpec::pucci_plus(1.0, 2.0).unwrap(), f);
        let a = SymMatrix::from_diag(&[1.0, -0.5]);
        // M+(diag(1,-0.5)) = 2*1 + 1*(-0.5)
        assert_eq!(eo.effective(&a).unwrap(), 1.5);
    }

    #[test]
    fn cache_hits_are_bit_identical() {
        let grid = make_grid(2, 32).unwrap();
        let mut eo = EffectiveOperator::new(
            grid,
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            sin_field(grid),
        );
        let mut a = SymMatrix::from_diag(&[1.0, 0.5]);
        a.set(0, 1, 0.25);
        let b0 = eo.effective(&a).unwrap();
        // perturbation below the 12-digit quantization
        let mut a2 = a.clone();
        a2.set(0, 1, 0.25 + 1e-14);
        let b1 = eo.effective(&a2).unwrap();
        assert_eq!(b0.to_bits(), b1.to_bits());
    }

    #[test]
    fn ellipticity_probe_trace_is_exact() {
        let grid = make_grid(2, 32).unwrap();
        let mut eo = EffectiveOperator::new(grid, OperatorSpec::trace(), sin_field(grid));
        let m = SymMatrix::from_diag(&[0.3, -0.2]);
        let probe = ellipticity_probe(&mut eo, &m, &[1.0, 0.0], 0.3).unwrap();
        assert!((probe.delta - 0.3).abs() <= 1e-10);
        assert!(probe.pass);
        // degenerate t = 0 passes trivially with delta = 0
        let zero = ellipticity_probe(&mut eo, &m, &[0.6, 0.8], 0.0).unwrap();
        assert_eq!(zero.delta, 0.0);
        assert!(zero.pass);
    }

    #[test]
    fn ellipticity_probe_pucci_bounds() {
        let grid = make_grid(2, 64).unwrap();
        let mut eo = EffectiveOperator::new(
            grid,
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            sin_field(grid),
        );
        let probe = ellipticity_probe(&mut eo, &SymMatrix::zero(2), &[1.0, 0.0], 1.0).unwrap();
        assert!(probe.pass, "delta {} outside [1, 2] + tol", probe.delta);
        assert!(probe.delta >= 1.0 - probe.tol && probe.delta <= 2.0 + probe.tol);
    }

    #[test]
    fn concavity_probe_contracts() {
        let grid = make_grid(2, 32).unwrap();
        let f = sin_field(grid);
        // trace: margin is exactly zero
        let mut eo_tr = EffectiveOperator::new(grid, OperatorSpec::trace(), f.clone());
        let m = SymMatrix::from_diag(&[0.5, -0.25]);
        let n = SymMatrix::from_diag(&[1.0, 0.75]);
        let p = concavity_probe(&mut eo_tr, &m, &n).unwrap();
        assert!(p.margin.abs() <= 1e-10);
        assert!(p.pass);

        // Bellman min: concave, margin >= -tol
        let members = vec![SymMatrix::identity(2), SymMatrix::from_diag(&[2.0, 0.5])];
        let mut eo_bm = EffectiveOperator::new(
            grid,
            OperatorSpec::bellman_min(members).unwrap(),
            f.clone(),
        );
        let n2 = SymMatrix::from_diag(&[1.0, -0.2]);
        let p2 = concavity_probe(&mut eo_bm, &SymMatrix::zero(2), &n2).unwrap();
        assert!(p2.pass, "margin {} < -tol {}", p2.margin, p2.tol);

        // convex operator requested for a concavity probe
        let mut eo_pp =
            EffectiveOperator::new(grid, OperatorSpec::pucci_plus(1.0, 2.0).unwrap(), f);
        assert!(matches!(
            concavity_probe(&mut eo_pp, &m, &n),
            Err(Error::ProbeNotApplicable(_))
        ));
        let p3 = convexity_probe(&mut eo_pp, &SymMatrix::zero(2), &n2).unwrap();
        assert!(p3.pass);
    }

    #[test]
    fn reilly_identity() {
        let grid = make_grid(2, 32).unwrap();
        let a = SymMatrix::from_diag(&[1.5, 1.0]);
        // v = 0: deviation vanishes identically
        let zero = GridFunction::zeros(grid);
        assert_eq!(reilly_check(&grid, &a, &zero, 2).unwrap(), 0.0);
        // k = 1 telescopes for any periodic v that keeps the iterate in
        // the cone (sigma_1 > 0 nodewise is the k = 1 precondition)
        let v = GridFunction::sample(grid, |x| {
            0.01 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()
                + 0.005 * (4.0 * PI * x[1]).sin()
        });
        assert!(reilly_check(&grid, &a, &v, 1).unwrap() <= 1e-12);
        // cone violation surfaces
        let big = GridFunction::sample(grid, |x| 10.0 * (2.0 * PI * x[0]).sin());
        assert!(matches!(
            reilly_check(&grid, &SymMatrix::identity(2), &big, 2),
            Err(Error::ConeViolation)
        ));
    }

    #[test]
    fn reilly_k2_deviation_refines_at_second_order() {
        let amp = 0.02;
        let sample = |grid: TorusGrid| {
            GridFunction::sample(grid, |x| {
                amp * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin()
            })
        };
        let g32 = make_grid(2, 32).unwrap();
        let g64 = make_grid(2, 64).unwrap();
        let a = SymMatrix::identity(2);
        let d32 = reilly_check(&g32, &a, &sample(g32), 2).unwrap();
        let d64 = reilly_check(&g64, &a, &sample(g64), 2).unwrap();
        let order = (d32 / d64).log2();
        assert!(order >= 1.7, "observed order {order}, dev {d32} -> {d64}");
    }

    #[test]
    fn solvability_detects_matched_and_mismatched_means() {
        let grid = make_grid(2, 32).unwrap();
        let f = GridFunction::sample(grid, |x| 3.0 + (2.0 * PI * x[0]).sin());
        let mut eo = EffectiveOperator::new(grid, OperatorSpec::trace(), f);
        assert!(solvability_check(&mut eo, &SymMatrix::from_diag(&[1.0, 2.0])).unwrap());
        assert!(!solvability_check(&mut eo, &SymMatrix::from_diag(&[1.0, 1.0])).unwrap());
    }

    #[test]
    fn effective_operator_is_monotone_on_random_pairs() {
        let grid = make_grid(2, 32).unwrap();
        let mut eo = EffectiveOperator::new(
            grid,
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            sin_field(grid),
        );
        let h = grid.spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let mut m = SymMatrix::zero(2);
            for i in 0..2 {
                for j in i..2 {
                    m.set(i, j, rng.gen_range(-0.5..0.5));
                }
            }
            // random PSD bump
            let e = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let t = rng.gen_range(0.0..0.8);
            let bump = SymMatrix::rank_one(&e, t);
            let upper = m.add(&bump);
            let fm = eo.effective(&m).unwrap();
            let fu = eo.effective(&upper).unwrap();
            let tol = 10.0 * h * h * (1.0 + m.spectral_norm() + upper.spectral_norm());
            assert!(fm <= fu + tol, "monotonicity violated: {fm} > {fu} + {tol}");
        }
    }

    #[test]
    fn constant_shift_of_data_changes_no_outcome() {
        let grid = make_grid(2, 32).unwrap();
        let f = sin_field(grid);
        let f_shift =
            GridFunction::from_values(grid, f.values().iter().map(|v| v + 4.0).collect());
        let mut eo0 = EffectiveOperator::new(
            grid,
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            f,
        );
        let mut eo1 = EffectiveOperator::new(
            grid,
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            f_shift,
        );
        let m = SymMatrix::from_diag(&[0.4, -0.1]);
        let p0 = ellipticity_probe(&mut eo0, &m, &[0.8, 0.6], 0.5).unwrap();
        let p1 = ellipticity_probe(&mut eo1, &m, &[0.8, 0.6], 0.5).unwrap();
        assert_eq!(p0.pass, p1.pass);
        assert!((p0.delta - p1.delta).abs() <= 1e-12);
    }
}
