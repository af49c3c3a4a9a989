//! Invariant measure of a linear non-divergence operator and the closed-form
//! linear effective operator.
//!
//! The measure m is the positive periodic solution of the discrete adjoint
//! equation D_ij(a_ij m) = 0 with mean 1. Because the central-difference
//! stencils are symmetric as matrices, the discrete transpose of
//! `L = a_ij(x) D_ij` acts by applying the same stencils to the product
//! fields a_ij(x) m(x), which is exactly the non-divergence adjoint. The
//! bordered system [L^T m - b 1 = 0; <m> = 1] is solved directly; b vanishes
//! identically because constants are in the kernel of L.
//!
//! Pairing the cell equation with m kills the corrector term and yields the
//! explicit formula
//!
//! ```text
//! Fbar(A) = A_ij <a_ij m> - <f m> + <f>,
//! ```
//!
//! which is an exact identity of the discrete system, so it cross-validates
//! the Newton cell solver to linear-solver accuracy.

use crate::error::{Error, Result};
use crate::grid::{neumaier_sum, GridFunction, TorusGrid};
use crate::linsolve::{solve_bordered, SpectralPreconditioner};
use crate::operators::{OperatorKind, OperatorSpec};
use crate::parallel::{par_fill, par_node_fill};
use crate::sym::SymMatrix;

#[derive(Debug, Clone)]
pub struct MeasureSolution {
    /// Invariant measure, mean 1.
    pub m: GridFunction,
    /// min over nodes of m; positive for a usable measure.
    pub positivity_margin: f64,
    /// |L^T m|_inf.
    pub adjoint_residual: f64,
}

fn require_linear(op: &OperatorSpec) -> Result<()> {
    match op.kind() {
        OperatorKind::LinearNondivergence { .. } => Ok(()),
        _ => Err(Error::InvalidOperator(
            "invariant measure needs a linear non-divergence operator".into(),
        )),
    }
}

/// Sample the packed coefficient rows at every node.
fn sample_coefficients(grid: &TorusGrid, op: &OperatorSpec) -> Vec<f64> {
    let n = grid.dim();
    let tri = n * (n + 1) / 2;
    let mut coeffs = vec![0.0; grid.node_count() * tri];
    par_node_fill(&mut coeffs, tri, |f, row| {
        let c = op.coefficients_at(&grid.coords(f)).unwrap();
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                row[k] = c.get(i, j);
                k += 1;
            }
        }
    });
    coeffs
}

/// Apply the adjoint: out(y) = sum_ij (stencil_ij applied to a_ij w)(y),
/// with off-diagonal pairs counted twice.
fn apply_adjoint(grid: &TorusGrid, coeffs: &[f64], w: &[f64], out: &mut [f64]) {
    let n = grid.dim();
    let tri = n * (n + 1) / 2;
    let total = grid.node_count();
    let h2 = grid.spacing() * grid.spacing();
    // product fields a_ij(x) w(x), packed like the coefficients
    let mut prod = vec![0.0; total * tri];
    par_node_fill(&mut prod, tri, |f, row| {
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = coeffs[f * tri + k] * w[f];
        }
    });
    par_fill(out, |f| {
        let idx = grid.unflat(f);
        let mut d = vec![0isize; n];
        let mut s = 0.0;
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let field = |node: usize| prod[node * tri + k];
                if i == j {
                    d.iter_mut().for_each(|x| *x = 0);
                    d[i] = 1;
                    let up = field(grid.shifted(&idx, &d));
                    d[i] = -1;
                    let um = field(grid.shifted(&idx, &d));
                    s += (up + um - 2.0 * field(f)) / h2;
                } else {
                    d.iter_mut().for_each(|x| *x = 0);
                    d[i] = 1;
                    d[j] = 1;
                    let upp = field(grid.shifted(&idx, &d));
                    d[i] = -1;
                    d[j] = -1;
                    let umm = field(grid.shifted(&idx, &d));
                    d[i] = 1;
                    d[j] = -1;
                    let upm = field(grid.shifted(&idx, &d));
                    d[i] = -1;
                    d[j] = 1;
                    let ump = field(grid.shifted(&idx, &d));
                    s += 2.0 * (upp + umm - upm - ump) / (4.0 * h2);
                }
                k += 1;
            }
        }
        s
    });
}

/// Solve [L^T m = 0; <m> = 1] for the invariant measure of the linear
/// operator `op` on `grid`.
pub fn solve_invariant_measure(grid: &TorusGrid, op: &OperatorSpec) -> Result<MeasureSolution> {
    require_linear(op)?;
    op.validate_on_grid(grid)?;
    let n = grid.dim();
    let tri = n * (n + 1) / 2;
    let total = grid.node_count();
    let coeffs = sample_coefficients(grid, op);

    let mut abar = SymMatrix::zero(n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let column: Vec<f64> = (0..total).map(|f| coeffs[f * tri + k]).collect();
            abar.set(i, j, neumaier_sum(&column) / total as f64);
            k += 1;
        }
    }
    let precond = SpectralPreconditioner::new(*grid, &abar);
    let apply = |w: &[f64], out: &mut [f64]| apply_adjoint(grid, &coeffs, w, out);

    let zeros = vec![0.0; total];
    let sol = solve_bordered(apply, &precond, &zeros, 1.0).map_err(|e| match e {
        Error::LinearSolveFailure { .. } => Error::SingularAdjoint,
        other => other,
    })?;

    let mut lt_m = vec![0.0; total];
    apply_adjoint(grid, &coeffs, &sol.h, &mut lt_m);
    let adjoint_residual = lt_m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let a_sup = coeffs.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if adjoint_residual > 1e-10 * a_sup.max(1.0) {
        return Err(Error::SingularAdjoint);
    }

    let positivity_margin = sol.h.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if positivity_margin <= 0.0 {
        return Err(Error::NonPositiveMeasure {
            min: positivity_margin,
        });
    }

    Ok(MeasureSolution {
        m: GridFunction::from_values(*grid, sol.h),
        positivity_margin,
        adjoint_residual,
    })
}

/// Weighted coefficient means <a_ij m>, the tensor entering the linear
/// effective operator.
pub fn weighted_coefficient_means(
    grid: &TorusGrid,
    op: &OperatorSpec,
    ms: &MeasureSolution,
) -> Result<SymMatrix> {
    require_linear(op)?;
    let n = grid.dim();
    let tri = n * (n + 1) / 2;
    let total = grid.node_count();
    let coeffs = sample_coefficients(grid, op);
    let mvals = ms.m.values();
    let mut out = SymMatrix::zero(n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            let column: Vec<f64> = (0..total).map(|f| coeffs[f * tri + k] * mvals[f]).collect();
            out.set(i, j, neumaier_sum(&column) / total as f64);
            k += 1;
        }
    }
    Ok(out)
}

/// Closed-form effective value A_ij <a_ij m> - <f m> + <f> using discrete
/// means.
pub fn linear_effective(
    a_matrix: &SymMatrix,
    op: &OperatorSpec,
    f: &GridFunction,
    ms: &MeasureSolution,
) -> Result<f64> {
    let grid = f.grid();
    let am = weighted_coefficient_means(&grid, op, ms)?;
    let fm: Vec<f64> = f
        .values()
        .iter()
        .zip(ms.m.values())
        .map(|(fv, mv)| fv * mv)
        .collect();
    let mean_fm = neumaier_sum(&fm) / fm.len() as f64;
    Ok(a_matrix.inner(&am) - mean_fm + f.mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{solve_cell, CellProblem};
    use crate::expr::parse_field;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn oscillatory_operator(n_dim: usize, amp: f64) -> OperatorSpec {
        let a11 = parse_field(&format!("1 + {amp}*sin(2*pi*x1)"), n_dim).unwrap();
        let zero = parse_field("0", n_dim).unwrap();
        let one = parse_field("1", n_dim).unwrap();
        let rows = match n_dim {
            2 => vec![vec![a11, zero.clone()], vec![zero, one]],
            _ => unreachable!(),
        };
        OperatorSpec::linear_nondivergence(rows, 1.0 - amp - 1e-9, 1.0 + amp + 1e-9).unwrap()
    }

    #[test]
    fn constant_coefficients_give_unit_measure() {
        let grid = make_grid(2, 16).unwrap();
        let one = parse_field("1", 2).unwrap();
        let zero = parse_field("0", 2).unwrap();
        let op = OperatorSpec::linear_nondivergence(
            vec![vec![one.clone(), zero.clone()], vec![zero, one]],
            1.0,
            1.0,
        )
        .unwrap();
        let ms = solve_invariant_measure(&grid, &op).unwrap();
        for v in ms.m.values() {
            assert!((v - 1.0).abs() <= 1e-12);
        }
        assert!((ms.m.mean() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn oscillatory_coefficient_matches_closed_form() {
        let grid = make_grid(2, 64).unwrap();
        let op = oscillatory_operator(2, 0.5);
        let ms = solve_invariant_measure(&grid, &op).unwrap();
        assert!(ms.positivity_margin > 0.0);
        assert!(ms.adjoint_residual <= 1e-10 * 1.5);

        // quadrature oracle for <1/a11>: fine trapezoid vs 1/sqrt(1-q^2)
        let q = 0.5_f64;
        let fine = 8192;
        let trap: f64 = (0..fine)
            .map(|k| {
                let x = k as f64 / fine as f64;
                1.0 / (1.0 + q * (2.0 * PI * x).sin())
            })
            .sum::<f64>()
            / fine as f64;
        let closed = 1.0 / (1.0 - q * q).sqrt();
        assert!((trap - closed).abs() <= 1e-12);

        // m(x) = (1/a11(x)) / <1/a11>, with the continuum normalization
        let mut worst = 0.0_f64;
        for (f, v) in ms.m.values().iter().enumerate() {
            let x = grid.coords(f);
            let expect = (1.0 / (1.0 + q * (2.0 * PI * x[0]).sin())) / closed;
            worst = worst.max((v - expect).abs());
        }
        assert!(worst <= 1e-3, "closed-form mismatch {worst}");
    }

    #[test]
    fn kernel_is_invariant_under_coefficient_scaling() {
        let grid = make_grid(2, 32).unwrap();
        let a11 = parse_field("1 + 0.5*sin(2*pi*x1)", 2).unwrap();
        let zero = parse_field("0", 2).unwrap();
        let one = parse_field("1", 2).unwrap();
        let op = OperatorSpec::linear_nondivergence(
            vec![vec![a11, zero.clone()], vec![zero.clone(), one]],
            0.4,
            1.6,
        )
        .unwrap();
        let a11s = parse_field("3*(1 + 0.5*sin(2*pi*x1))", 2).unwrap();
        let three = parse_field("3", 2).unwrap();
        let op_scaled = OperatorSpec::linear_nondivergence(
            vec![vec![a11s, zero.clone()], vec![zero, three]],
            1.2,
            4.8,
        )
        .unwrap();
        let m0 = solve_invariant_measure(&grid, &op).unwrap();
        let m1 = solve_invariant_measure(&grid, &op_scaled).unwrap();
        for (a, b) in m0.m.values().iter().zip(m1.m.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn linear_effective_trace_case() {
        let grid = make_grid(2, 16).unwrap();
        let one = parse_field("1", 2).unwrap();
        let zero = parse_field("0", 2).unwrap();
        let op = OperatorSpec::linear_nondivergence(
            vec![vec![one.clone(), zero.clone()], vec![zero, one]],
            1.0,
            1.0,
        )
        .unwrap();
        let ms = solve_invariant_measure(&grid, &op).unwrap();
        let f = GridFunction::sample(grid, |x| 0.7 + (2.0 * PI * x[0]).sin());
        let a = SymMatrix::from_diag(&[1.0, 2.0]);
        let val = linear_effective(&a, &op, &f, &ms).unwrap();
        assert!((val - 3.0).abs() <= 1e-11);
    }

    #[test]
    fn cross_validates_the_cell_solver() {
        let grid = make_grid(2, 64).unwrap();
        let op = oscillatory_operator(2, 0.5);
        let f = GridFunction::sample(grid, |x| (2.0 * PI * x[0]).sin());
        let a = SymMatrix::identity(2);
        let ms = solve_invariant_measure(&grid, &op).unwrap();
        let explicit = linear_effective(&a, &op, &f, &ms).unwrap();
        let cell = solve_cell(&CellProblem::new(grid, op, a, f)).unwrap();
        assert!(
            (explicit - cell.beta).abs() <= 1e-6,
            "explicit {explicit} vs cell {}",
            cell.beta
        );
    }

    #[test]
    fn solvability_criterion_via_manufactured_data() {
        // build f = a_ij (A_ij + D_ij v) from a chosen corrector; then
        // beta = <f> and the two sides of the Remark criterion coincide
        let grid = make_grid(2, 32).unwrap();
        let op = oscillatory_operator(2, 0.3);
        let a = SymMatrix::from_diag(&[1.0, 2.0]);
        let v = GridFunction::sample(grid, |x| {
            0.05 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()
        })
        .project_mean_zero();
        let f = GridFunction::from_values(
            grid,
            (0..grid.node_count())
                .map(|node| {
                    let hess = v.discrete_hessian(node);
                    let c = op.coefficients_at(&grid.coords(node)).unwrap();
                    c.inner(&a.add(&hess))
                })
                .collect(),
        );
        let ms = solve_invariant_measure(&grid, &op).unwrap();
        let am = weighted_coefficient_means(&grid, &op, &ms).unwrap();
        let lhs = a.inner(&am);
        let fm: Vec<f64> = f
            .values()
            .iter()
            .zip(ms.m.values())
            .map(|(x, y)| x * y)
            .collect();
        let rhs = neumaier_sum(&fm) / fm.len() as f64;
        assert!((lhs - rhs).abs() <= 1e-9, "criterion sides {lhs} vs {rhs}");
        // and the cell solver agrees that beta = <f>
        let sol = solve_cell(&CellProblem::new(grid, op, a, f.clone())).unwrap();
        assert!((sol.beta - f.mean()).abs() <= 1e-9);
    }
}
