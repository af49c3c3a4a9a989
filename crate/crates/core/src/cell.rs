//! Discrete cell problems on the torus.
//!
//! For an operator F from the catalog, a matrix A and periodic data f, the
//! cell problem asks for a mean-zero corrector v and a constant beta with
//!
//! ```text
//! F(A + D^2 v) - beta = f - <f>   on [0,1)^n.
//! ```
//!
//! The solver is a damped semismooth Newton iteration wrapped in a
//! continuation in t that scales the right side from 0 (where v = 0,
//! beta = F(A) is exact) to 1. Each Newton step solves the bordered system
//!
//! ```text
//! L h - b 1 = -G,    <h> = 0,
//! ```
//!
//! where L is assembled from the operator linearization at the current
//! iterate and G is the current residual. The continuation step starts at 1
//! and halves on Newton failure; falling below 2^-10 aborts. For sigma_k
//! operators every damped update is additionally guarded by a cone check at
//! all nodes.

use crate::error::{Error, Result};
use crate::grid::{hessian_at, GridFunction, TorusGrid};
use crate::linsolve::{solve_bordered, SpectralPreconditioner};
use crate::operators::{cone_check, eval_operator, linearize, OperatorSpec};
use crate::parallel::{par_fill, par_node_fill};
use crate::sym::SymMatrix;

pub const MIN_CONTINUATION_STEP: f64 = 1.0 / 1024.0; // 2^-10

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Newton stopping tolerance on the residual infinity norm.
    pub tolerance: f64,
    pub max_newton: usize,
    /// Armijo halvings per Newton step.
    pub max_damping: usize,
    /// Optional starting corrector (projected to mean zero); defaults to 0.
    pub initial_v: Option<GridFunction>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_newton: 50,
            max_damping: 30,
            initial_v: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellProblem {
    pub grid: TorusGrid,
    pub op: OperatorSpec,
    pub a: SymMatrix,
    /// Raw data; the mean is subtracted internally before solving.
    pub f: GridFunction,
    pub options: SolverOptions,
}

impl CellProblem {
    pub fn new(grid: TorusGrid, op: OperatorSpec, a: SymMatrix, f: GridFunction) -> Self {
        CellProblem {
            grid,
            op,
            a,
            f,
            options: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    /// Mean-zero corrector.
    pub v: GridFunction,
    /// Homogenized value: F(A + D^2 v) - beta = f - <f>.
    pub beta: f64,
    /// Infinity norm of the final residual.
    pub residual: f64,
    /// Total Newton iterations across the continuation path.
    pub iterations: usize,
    /// Continuation values reached, starting at 0.
    pub t_path: Vec<f64>,
}

struct NodeCache {
    coords: Vec<f64>, // n per node
    n: usize,
}

impl NodeCache {
    fn new(grid: &TorusGrid) -> Self {
        let n = grid.dim();
        let mut coords = vec![0.0; grid.node_count() * n];
        par_node_fill(&mut coords, n, |f, row| {
            row.copy_from_slice(&grid.coords(f));
        });
        NodeCache { coords, n }
    }

    #[inline]
    fn at(&self, node: usize) -> &[f64] {
        &self.coords[node * self.n..(node + 1) * self.n]
    }
}

fn residual_values(
    grid: &TorusGrid,
    op: &OperatorSpec,
    a: &SymMatrix,
    v: &[f64],
    beta: f64,
    rhs: &[f64],
    nodes: &NodeCache,
    out: &mut [f64],
) {
    par_fill(out, |f| {
        let m = a.add(&hessian_at(grid, v, f));
        eval_operator(op, &m, nodes.at(f)) - beta - rhs[f]
    });
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Max-norm of F(A + D^2 v) - beta - (f - <f>) over the nodes.
pub fn residual_norm(p: &CellProblem, v: &GridFunction, beta: f64) -> f64 {
    let nodes = NodeCache::new(&p.grid);
    let g = p.f.project_mean_zero();
    let mut r = vec![0.0; p.grid.node_count()];
    residual_values(
        &p.grid,
        &p.op,
        &p.a,
        v.values(),
        beta,
        g.values(),
        &nodes,
        &mut r,
    );
    inf_norm(&r)
}

fn cone_ok_everywhere(grid: &TorusGrid, a: &SymMatrix, v: &[f64], k: usize) -> bool {
    let total = grid.node_count();
    let mut flags = vec![0.0; total];
    par_fill(&mut flags, |f| {
        let m = a.add(&hessian_at(grid, v, f));
        if cone_check(&m, k) {
            0.0
        } else {
            1.0
        }
    });
    flags.iter().all(|&x| x == 0.0)
}

enum NewtonOutcome {
    Converged { iterations: usize },
    Failed { cone: bool },
}

#[allow(clippy::too_many_arguments)]
fn newton_at_t(
    p: &CellProblem,
    nodes: &NodeCache,
    rhs_t: &[f64],
    v: &mut Vec<f64>,
    beta: &mut f64,
    sigma_k: Option<usize>,
    tri: usize,
) -> Result<NewtonOutcome> {
    let grid = &p.grid;
    let total = grid.node_count();
    let n = grid.dim();
    let mut residual = vec![0.0; total];
    let mut coeffs = vec![0.0; total * tri];
    let mut trial = vec![0.0; total];
    let mut trial_res = vec![0.0; total];

    residual_values(grid, &p.op, &p.a, v, *beta, rhs_t, nodes, &mut residual);
    let mut res_norm = inf_norm(&residual);

    for iter in 0..p.options.max_newton {
        if res_norm <= p.options.tolerance {
            return Ok(NewtonOutcome::Converged { iterations: iter });
        }

        // linearization coefficients at the current iterate; a NaN row marks
        // a degenerate sigma_k linearization
        par_node_fill(&mut coeffs, tri, |f, row| {
            let m = p.a.add(&hessian_at(grid, v, f));
            match linearize(&p.op, &m, nodes.at(f)) {
                Ok(c) => {
                    let mut k = 0;
                    for i in 0..n {
                        for j in i..n {
                            row[k] = c.get(i, j);
                            k += 1;
                        }
                    }
                }
                Err(_) => row.iter_mut().for_each(|x| *x = f64::NAN),
            }
        });
        if coeffs.iter().any(|c| c.is_nan()) {
            return Ok(NewtonOutcome::Failed { cone: true });
        }

        // mean coefficients drive the spectral preconditioner
        let mut abar = SymMatrix::zero(n);
        {
            let mut k = 0;
            for i in 0..n {
                for j in i..n {
                    let column: Vec<f64> =
                        (0..total).map(|f| coeffs[f * tri + k]).collect();
                    abar.set(i, j, crate::grid::neumaier_sum(&column) / total as f64);
                    k += 1;
                }
            }
        }
        let precond = SpectralPreconditioner::new(*grid, &abar);

        let apply = |w: &[f64], out: &mut [f64]| {
            par_fill(out, |f| {
                let hess = hessian_at(grid, w, f);
                let row = &coeffs[f * tri..(f + 1) * tri];
                let mut s = 0.0;
                let mut k = 0;
                for i in 0..n {
                    for j in i..n {
                        let weight = if i == j { 1.0 } else { 2.0 };
                        s += weight * row[k] * hess.get(i, j);
                        k += 1;
                    }
                }
                s
            });
        };

        let neg_res: Vec<f64> = residual.iter().map(|r| -r).collect();
        let step = solve_bordered(apply, &precond, &neg_res, 0.0)?;

        // Armijo damping on the residual norm, with the sigma_k cone guard
        let mut alpha = 1.0_f64;
        let mut accepted = false;
        let mut cone_fail = false;
        for _ in 0..=p.options.max_damping {
            for i in 0..total {
                trial[i] = v[i] + alpha * step.h[i];
            }
            let beta_trial = *beta + alpha * step.b;
            if let Some(k) = sigma_k {
                if !cone_ok_everywhere(grid, &p.a, &trial, k) {
                    cone_fail = true;
                    alpha *= 0.5;
                    continue;
                }
            }
            residual_values(
                grid, &p.op, &p.a, &trial, beta_trial, rhs_t, nodes, &mut trial_res,
            );
            let trial_norm = inf_norm(&trial_res);
            if trial_norm <= (1.0 - 1e-4 * alpha) * res_norm {
                std::mem::swap(v, &mut trial);
                *beta = beta_trial;
                std::mem::swap(&mut residual, &mut trial_res);
                res_norm = trial_norm;
                accepted = true;
                cone_fail = false;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Ok(NewtonOutcome::Failed { cone: cone_fail });
        }
    }

    if res_norm <= p.options.tolerance {
        Ok(NewtonOutcome::Converged {
            iterations: p.options.max_newton,
        })
    } else {
        Ok(NewtonOutcome::Failed { cone: false })
    }
}

/// Solve the cell problem by Newton continuation.
pub fn solve_cell(p: &CellProblem) -> Result<CellSolution> {
    let grid = &p.grid;
    let total = grid.node_count();
    let n = grid.dim();
    let tri = n * (n + 1) / 2;
    assert_eq!(p.f.grid(), *grid, "data lives on a different grid");
    assert_eq!(p.a.dim(), n, "matrix dimension mismatch");

    p.op.validate_on_grid(grid)?;
    let sigma_k = p.op.sigma_k_order();
    let g = p.f.project_mean_zero();

    if let Some(k) = sigma_k {
        if !cone_check(&p.a, k) {
            return Err(Error::ConeViolation);
        }
        let sk = eval_operator(&p.op, &p.a, &vec![0.0; n]);
        let min_rhs = g
            .values()
            .iter()
            .fold(f64::INFINITY, |acc, &gi| acc.min(gi + sk));
        if min_rhs <= 0.0 {
            return Err(Error::RightSideNotAdmissible(format!(
                "min(f - <f> + sigma_k(A)) = {min_rhs:.6e} must be positive"
            )));
        }
    }

    let nodes = NodeCache::new(grid);

    let mut v: Vec<f64> = match &p.options.initial_v {
        Some(v0) => {
            assert_eq!(v0.grid(), *grid);
            v0.project_mean_zero().values().to_vec()
        }
        None => vec![0.0; total],
    };
    // beta starts at <F(A + D^2 v0)>, which is F(A) exactly for v0 = 0
    let mut beta = {
        let mut vals = vec![0.0; total];
        par_fill(&mut vals, |f| {
            let m = p.a.add(&hessian_at(grid, &v, f));
            eval_operator(&p.op, &m, nodes.at(f))
        });
        crate::grid::neumaier_sum(&vals) / total as f64
    };

    let mut iterations = 0usize;
    let mut t_path = vec![0.0];
    let mut t_reached = 0.0_f64;
    let mut step = 1.0_f64;
    let mut rhs_t = vec![0.0; total];

    while t_reached < 1.0 {
        let t_target = (t_reached + step).min(1.0);
        for (slot, gv) in rhs_t.iter_mut().zip(g.values()) {
            *slot = t_target * gv;
        }
        let mut v_try = v.clone();
        let mut beta_try = beta;
        match newton_at_t(p, &nodes, &rhs_t, &mut v_try, &mut beta_try, sigma_k, tri)? {
            NewtonOutcome::Converged {
                iterations: it, ..
            } => {
                iterations += it;
                v = v_try;
                beta = beta_try;
                t_reached = t_target;
                t_path.push(t_reached);
                step = (step * 2.0).min(1.0);
            }
            NewtonOutcome::Failed { cone } => {
                step *= 0.5;
                if step < MIN_CONTINUATION_STEP {
                    return Err(if cone {
                        Error::ConeViolation
                    } else {
                        Error::NewtonDivergence { t: t_target }
                    });
                }
            }
        }
    }

    // subtracting the mean leaves D^2 v (and hence the residual) untouched
    let mut v_out = GridFunction::from_values(*grid, v);
    v_out = v_out.project_mean_zero();
    let residual = residual_norm(p, &v_out, beta);

    Ok(CellSolution {
        v: v_out,
        beta,
        residual,
        iterations,
        t_path,
    })
}
