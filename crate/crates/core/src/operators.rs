//! Catalog of elliptic operators F acting on symmetric matrices, with
//! pointwise evaluation F(M) and a deterministic linearization F_ij(M).
//!
//! The catalog covers the trace, linear non-divergence operators with
//! expression coefficients, the Pucci extremal operators M+/M- with
//! constants (lambda, Lambda), Bellman min/max over finite families of
//! constant coefficient matrices, and the k-Hessian sigma_k. Where F has
//! kinks (Pucci at a zero eigenvalue, Bellman at a tie) the linearization
//! returns the subgradient selected by a fixed tie-break rule, so the whole
//! catalog is deterministic.

use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::grid::TorusGrid;
use crate::sym::{elementary_symmetric, SymMatrix};

/// Concavity classification used by the probe machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concavity {
    /// Linear operators are both concave and convex.
    Linear,
    Concave,
    Convex,
    /// sigma_k: concavity statements only hold on the Gamma_k cone.
    ConditionalOnCone,
}

#[derive(Debug, Clone)]
pub enum OperatorKind {
    Trace,
    LinearNondivergence {
        /// upper-triangle coefficient expressions, row-major
        a: Vec<FieldExpr>,
        lambda: f64,
        big_lambda: f64,
        n: usize,
    },
    PucciPlus {
        lambda: f64,
        big_lambda: f64,
    },
    PucciMinus {
        lambda: f64,
        big_lambda: f64,
    },
    BellmanMin {
        members: Vec<SymMatrix>,
        lambda: f64,
        big_lambda: f64,
    },
    BellmanMax {
        members: Vec<SymMatrix>,
        lambda: f64,
        big_lambda: f64,
    },
    HessianSigmaK {
        k: usize,
    },
}

#[derive(Debug, Clone)]
pub struct OperatorSpec {
    kind: OperatorKind,
}

fn check_constants(lambda: f64, big_lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= big_lambda && big_lambda.is_finite()) {
        return Err(Error::InvalidOperator(format!(
            "need 0 < lambda <= Lambda, got ({lambda}, {big_lambda})"
        )));
    }
    Ok(())
}

/// Scaled trace through a single shared code path, so that every catalog
/// member that degenerates to c * tr(M) produces bit-identical arithmetic.
#[inline]
fn scaled_trace(c: f64, m: &SymMatrix) -> f64 {
    c * m.trace()
}

fn bellman_range(members: &[SymMatrix]) -> Result<(f64, f64)> {
    if members.is_empty() {
        return Err(Error::InvalidOperator("Bellman family is empty".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in members {
        let (kappa, _) = a.eigen();
        lo = lo.min(kappa[0]);
        hi = hi.max(kappa[kappa.len() - 1]);
    }
    if lo <= 0.0 {
        return Err(Error::InvalidOperator(format!(
            "Bellman member has eigenvalue {lo} <= 0"
        )));
    }
    Ok((lo, hi))
}

impl OperatorSpec {
    pub fn trace() -> Self {
        OperatorSpec {
            kind: OperatorKind::Trace,
        }
    }

    pub fn pucci_plus(lambda: f64, big_lambda: f64) -> Result<Self> {
        check_constants(lambda, big_lambda)?;
        Ok(OperatorSpec {
            kind: OperatorKind::PucciPlus { lambda, big_lambda },
        })
    }

    pub fn pucci_minus(lambda: f64, big_lambda: f64) -> Result<Self> {
        check_constants(lambda, big_lambda)?;
        Ok(OperatorSpec {
            kind: OperatorKind::PucciMinus { lambda, big_lambda },
        })
    }

    pub fn bellman_min(members: Vec<SymMatrix>) -> Result<Self> {
        let (lambda, big_lambda) = bellman_range(&members)?;
        Ok(OperatorSpec {
            kind: OperatorKind::BellmanMin {
                members,
                lambda,
                big_lambda,
            },
        })
    }

    pub fn bellman_max(members: Vec<SymMatrix>) -> Result<Self> {
        let (lambda, big_lambda) = bellman_range(&members)?;
        Ok(OperatorSpec {
            kind: OperatorKind::BellmanMax {
                members,
                lambda,
                big_lambda,
            },
        })
    }

    /// Coefficients as full rows of expressions; symmetry is checked by
    /// sampling. The declared constants are trusted here and verified
    /// against grid samples by [`validate_on_grid`](Self::validate_on_grid).
    pub fn linear_nondivergence(
        rows: Vec<Vec<FieldExpr>>,
        lambda: f64,
        big_lambda: f64,
    ) -> Result<Self> {
        check_constants(lambda, big_lambda)?;
        let n = rows.len();
        if !(n == 2 || n == 3) {
            return Err(Error::InvalidDimension(n));
        }
        for row in &rows {
            if row.len() != n {
                return Err(Error::InvalidOperator(
                    "coefficient matrix is not square".into(),
                ));
            }
        }
        // sampled symmetry check at a fixed set of probe points
        for s in 0..16 {
            let x: Vec<f64> = (0..n).map(|a| (s * (a + 3)) as f64 * 0.0625).collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = (rows[i][j].eval(&x) - rows[j][i].eval(&x)).abs();
                    if d > 1e-12 * (1.0 + rows[i][j].eval(&x).abs()) {
                        return Err(Error::InvalidOperator(format!(
                            "coefficients not symmetric at ({i},{j})"
                        )));
                    }
                }
            }
        }
        let mut a = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                a.push(rows[i][j].clone());
            }
        }
        Ok(OperatorSpec {
            kind: OperatorKind::LinearNondivergence {
                a,
                lambda,
                big_lambda,
                n,
            },
        })
    }

    pub fn hessian_sigma_k(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidOperator("sigma_k needs k >= 1".into()));
        }
        Ok(OperatorSpec {
            kind: OperatorKind::HessianSigmaK { k },
        })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        match &self.kind {
            OperatorKind::Trace => "trace",
            OperatorKind::LinearNondivergence { .. } => "linear",
            OperatorKind::PucciPlus { .. } => "pucci_plus",
            OperatorKind::PucciMinus { .. } => "pucci_minus",
            OperatorKind::BellmanMin { .. } => "bellman_min",
            OperatorKind::BellmanMax { .. } => "bellman_max",
            OperatorKind::HessianSigmaK { .. } => "hessian_sigma_k",
        }
    }

    /// Ellipticity constants for the uniformly elliptic members; `None` for
    /// sigma_k, whose ellipticity is conditional on a compact subset of the
    /// cone.
    pub fn ellipticity(&self) -> Option<(f64, f64)> {
        match &self.kind {
            OperatorKind::Trace => Some((1.0, 1.0)),
            OperatorKind::LinearNondivergence {
                lambda, big_lambda, ..
            }
            | OperatorKind::PucciPlus { lambda, big_lambda }
            | OperatorKind::PucciMinus { lambda, big_lambda }
            | OperatorKind::BellmanMin {
                lambda, big_lambda, ..
            }
            | OperatorKind::BellmanMax {
                lambda, big_lambda, ..
            } => Some((*lambda, *big_lambda)),
            OperatorKind::HessianSigmaK { .. } => None,
        }
    }

    pub fn concavity(&self) -> Concavity {
        match &self.kind {
            OperatorKind::Trace | OperatorKind::LinearNondivergence { .. } => Concavity::Linear,
            OperatorKind::PucciPlus { .. } | OperatorKind::BellmanMax { .. } => Concavity::Convex,
            OperatorKind::PucciMinus { .. } | OperatorKind::BellmanMin { .. } => {
                Concavity::Concave
            }
            OperatorKind::HessianSigmaK { .. } => Concavity::ConditionalOnCone,
        }
    }

    pub fn sigma_k_order(&self) -> Option<usize> {
        match &self.kind {
            OperatorKind::HessianSigmaK { k } => Some(*k),
            _ => None,
        }
    }

    /// Sample the coefficient matrix of a linear operator at a point.
    pub fn coefficients_at(&self, x: &[f64]) -> Option<SymMatrix> {
        match &self.kind {
            OperatorKind::LinearNondivergence { a, n, .. } => {
                let mut c = SymMatrix::zero(*n);
                let mut k = 0;
                for i in 0..*n {
                    for j in i..*n {
                        c.set(i, j, a[k].eval(x));
                        k += 1;
                    }
                }
                Some(c)
            }
            _ => None,
        }
    }

    /// For LinearNondivergence: verify the sampled coefficient eigenvalues
    /// stay inside [lambda, Lambda] at every grid node.
    pub fn validate_on_grid(&self, grid: &TorusGrid) -> Result<()> {
        if let OperatorKind::LinearNondivergence {
            lambda, big_lambda, ..
        } = &self.kind
        {
            let slack = 1e-10 * (1.0 + big_lambda);
            for f in 0..grid.node_count() {
                let x = grid.coords(f);
                let c = self.coefficients_at(&x).unwrap();
                let (kappa, _) = c.eigen();
                if kappa[0] < lambda - slack || kappa[kappa.len() - 1] > big_lambda + slack {
                    return Err(Error::InvalidOperator(format!(
                        "coefficient eigenvalues [{:.6}, {:.6}] at node {} leave [{lambda}, {big_lambda}]",
                        kappa[0],
                        kappa[kappa.len() - 1],
                        f
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pointwise evaluation F(M); `x` is consulted only by the linear
/// non-divergence member.
pub fn eval_operator(spec: &OperatorSpec, m: &SymMatrix, x: &[f64]) -> f64 {
    match &spec.kind {
        OperatorKind::Trace => m.trace(),
        OperatorKind::LinearNondivergence { .. } => {
            spec.coefficients_at(x).unwrap().inner(m)
        }
        OperatorKind::PucciPlus { lambda, big_lambda } => {
            if lambda == big_lambda {
                return scaled_trace(*lambda, m);
            }
            let (kappa, _) = m.eigen();
            kappa
                .iter()
                .map(|&k| if k > 0.0 { big_lambda * k } else { lambda * k })
                .sum()
        }
        OperatorKind::PucciMinus { lambda, big_lambda } => {
            if lambda == big_lambda {
                return scaled_trace(*lambda, m);
            }
            let (kappa, _) = m.eigen();
            kappa
                .iter()
                .map(|&k| if k > 0.0 { lambda * k } else { big_lambda * k })
                .sum()
        }
        OperatorKind::BellmanMin { members, .. } => members
            .iter()
            .map(|a| a.inner(m))
            .fold(f64::INFINITY, f64::min),
        OperatorKind::BellmanMax { members, .. } => members
            .iter()
            .map(|a| a.inner(m))
            .fold(f64::NEG_INFINITY, f64::max),
        OperatorKind::HessianSigmaK { k } => {
            let (kappa, _) = m.eigen();
            elementary_symmetric(&kappa, *k)
        }
    }
}

/// Deterministic linearization: a coefficient matrix c with
/// F(M + eps N) = F(M) + eps <c, N> + o(eps) along smooth directions, and a
/// fixed subgradient selection at kinks. Pucci eigenvalues within
/// 1e-10 * (1 + |M|) of zero take the Lambda weight for M+ and the lambda
/// weight for M-; Bellman ties resolve to the lowest member index.
pub fn linearize(spec: &OperatorSpec, m: &SymMatrix, x: &[f64]) -> Result<SymMatrix> {
    let n = m.dim();
    match &spec.kind {
        OperatorKind::Trace => Ok(SymMatrix::identity(n)),
        OperatorKind::LinearNondivergence { .. } => Ok(spec.coefficients_at(x).unwrap()),
        OperatorKind::PucciPlus { lambda, big_lambda } => {
            if lambda == big_lambda {
                return Ok(SymMatrix::identity(n).scale(*lambda));
            }
            let eps = 1e-10 * (1.0 + m.frobenius_norm());
            let (kappa, q) = m.eigen();
            let w: Vec<f64> = kappa
                .iter()
                .map(|&k| if k >= -eps { *big_lambda } else { *lambda })
                .collect();
            Ok(SymMatrix::from_eigen(&q, &w))
        }
        OperatorKind::PucciMinus { lambda, big_lambda } => {
            if lambda == big_lambda {
                return Ok(SymMatrix::identity(n).scale(*lambda));
            }
            let eps = 1e-10 * (1.0 + m.frobenius_norm());
            let (kappa, q) = m.eigen();
            let w: Vec<f64> = kappa
                .iter()
                .map(|&k| if k >= -eps { *lambda } else { *big_lambda })
                .collect();
            Ok(SymMatrix::from_eigen(&q, &w))
        }
        OperatorKind::BellmanMin { members, .. } => {
            let mut best = 0usize;
            let mut val = members[0].inner(m);
            for (i, a) in members.iter().enumerate().skip(1) {
                let v = a.inner(m);
                if v < val {
                    val = v;
                    best = i;
                }
            }
            Ok(members[best].clone())
        }
        OperatorKind::BellmanMax { members, .. } => {
            let mut best = 0usize;
            let mut val = members[0].inner(m);
            for (i, a) in members.iter().enumerate().skip(1) {
                let v = a.inner(m);
                if v > val {
                    val = v;
                    best = i;
                }
            }
            Ok(members[best].clone())
        }
        OperatorKind::HessianSigmaK { k } => {
            let (kappa, q) = m.eigen();
            // polarized sigma_k^{ij}: weight on kappa_i is sigma_{k-1} of the
            // remaining eigenvalues
            let mut w = Vec::with_capacity(n);
            for i in 0..n {
                let others: Vec<f64> = kappa
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &v)| v)
                    .collect();
                w.push(elementary_symmetric(&others, *k - 1));
            }
            if w.iter().any(|&wi| wi <= 0.0) {
                return Err(Error::DegenerateLinearization);
            }
            Ok(SymMatrix::from_eigen(&q, &w))
        }
    }
}

/// True iff sigma_j(kappa(M)) > 0 for every j <= k.
pub fn cone_check(m: &SymMatrix, k: usize) -> bool {
    let (kappa, _) = m.eigen();
    (1..=k).all(|j| elementary_symmetric(&kappa, j) > 0.0)
}

/// Pucci extremal values for arbitrary constants; used by the sandwich
/// property tests and the exterior barrier.
pub fn pucci_plus_value(lambda: f64, big_lambda: f64, m: &SymMatrix) -> f64 {
    let (kappa, _) = m.eigen();
    kappa
        .iter()
        .map(|&k| if k > 0.0 { big_lambda * k } else { lambda * k })
        .sum()
}

pub fn pucci_minus_value(lambda: f64, big_lambda: f64, m: &SymMatrix) -> f64 {
    let (kappa, _) = m.eigen();
    kappa
        .iter()
        .map(|&k| if k > 0.0 { lambda * k } else { big_lambda * k })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_field;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> SymMatrix {
        let mut m = SymMatrix::zero(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, rng.gen_range(-scale..scale));
            }
        }
        m
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> SymMatrix {
        let b = random_sym(n, rng, scale);
        let (kappa, q) = b.eigen();
        let w: Vec<f64> = kappa.iter().map(|k| k.abs()).collect();
        SymMatrix::from_eigen(&q, &w)
    }

    #[test]
    fn pucci_plus_on_mixed_diagonal() {
        let op = OperatorSpec::pucci_plus(1.0, 2.0).unwrap();
        let m = SymMatrix::from_diag(&[2.0, -1.0]);
        assert_eq!(eval_operator(&op, &m, &[0.0, 0.0]), 3.0);
        let lin = linearize(&op, &m, &[0.0, 0.0]).unwrap();
        assert!((lin.get(0, 0) - 2.0).abs() <= 1e-12);
        assert!((lin.get(1, 1) - 1.0).abs() <= 1e-12);
        assert!(lin.get(0, 1).abs() <= 1e-12);
    }

    #[test]
    fn sigma2_values_and_cofactor_rule() {
        let op = OperatorSpec::hessian_sigma_k(2).unwrap();
        let m = SymMatrix::from_diag(&[1.0, 2.0, 3.0]);
        assert_eq!(eval_operator(&op, &m, &[0.0; 3]), 11.0);
        let lin = linearize(&op, &m, &[0.0; 3]).unwrap();
        assert!((lin.get(0, 0) - 5.0).abs() <= 1e-12);
        assert!((lin.get(1, 1) - 4.0).abs() <= 1e-12);
        assert!((lin.get(2, 2) - 3.0).abs() <= 1e-12);
    }

    #[test]
    fn sigma_k_linearization_degenerates_outside_cone() {
        let op = OperatorSpec::hessian_sigma_k(2).unwrap();
        let m = SymMatrix::from_diag(&[-1.0, 5.0]);
        assert!(matches!(
            linearize(&op, &m, &[0.0, 0.0]),
            Err(Error::DegenerateLinearization)
        ));
    }

    #[test]
    fn trace_is_linear() {
        let op = OperatorSpec::trace();
        let m = SymMatrix::from_diag(&[1.0, 2.0]);
        assert_eq!(eval_operator(&op, &m, &[0.0, 0.0]), 3.0);
        let lin = linearize(&op, &m, &[0.0, 0.0]).unwrap();
        assert_eq!(lin, SymMatrix::identity(2));
    }

    #[test]
    fn cone_membership() {
        assert!(!cone_check(&SymMatrix::from_diag(&[-1.0, 5.0]), 2));
        assert!(cone_check(&SymMatrix::identity(3), 3));
        let m = SymMatrix::from_diag(&[3.0, -0.5, -0.5]);
        assert!(cone_check(&m, 1));
        // brute-force oracle for sigma_2
        let sigma2 = 3.0 * -0.5 + 3.0 * -0.5 + 0.25;
        assert!(sigma2 < 0.0);
        assert!(!cone_check(&m, 2));
    }

    #[test]
    fn degenerate_pucci_is_scaled_trace_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let lambda = rng.gen_range(0.1..3.0);
            let m = random_sym(2, &mut rng, 2.0);
            let plus = OperatorSpec::pucci_plus(lambda, lambda).unwrap();
            let minus = OperatorSpec::pucci_minus(lambda, lambda).unwrap();
            let expect = lambda * m.trace();
            assert_eq!(eval_operator(&plus, &m, &[0.0, 0.0]), expect);
            assert_eq!(eval_operator(&minus, &m, &[0.0, 0.0]), expect);
        }
    }

    #[test]
    fn pucci_sandwich_for_uniformly_elliptic_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a11 = parse_field("1 + 0.25*sin(2*pi*x1)", 2).unwrap();
        let zero = parse_field("0", 2).unwrap();
        let one = parse_field("1", 2).unwrap();
        let ops = vec![
            OperatorSpec::trace(),
            OperatorSpec::pucci_plus(0.5, 2.0).unwrap(),
            OperatorSpec::pucci_minus(0.5, 2.0).unwrap(),
            OperatorSpec::bellman_min(vec![
                SymMatrix::identity(2),
                SymMatrix::from_diag(&[2.0, 0.5]),
            ])
            .unwrap(),
            OperatorSpec::bellman_max(vec![
                SymMatrix::identity(2),
                SymMatrix::from_diag(&[2.0, 0.5]),
            ])
            .unwrap(),
            OperatorSpec::linear_nondivergence(
                vec![vec![a11, zero.clone()], vec![zero, one]],
                0.5,
                2.0,
            )
            .unwrap(),
        ];
        for op in &ops {
            let (lo, hi) = op.ellipticity().unwrap();
            for _ in 0..100 {
                let m = random_sym(2, &mut rng, 3.0);
                let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let v = eval_operator(op, &m, &x);
                let plus = pucci_plus_value(lo, hi, &m);
                let minus = pucci_minus_value(lo, hi, &m);
                let slack = 1e-10 * (1.0 + m.frobenius_norm());
                assert!(
                    minus - slack <= v && v <= plus + slack,
                    "{} violated sandwich: {minus} <= {v} <= {plus}",
                    op.name()
                );
            }
        }
    }

    #[test]
    fn degenerate_elliptic_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ops = vec![
            OperatorSpec::trace(),
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            OperatorSpec::pucci_minus(1.0, 2.0).unwrap(),
            OperatorSpec::bellman_min(vec![
                SymMatrix::identity(2),
                SymMatrix::from_diag(&[2.0, 0.5]),
            ])
            .unwrap(),
        ];
        for op in &ops {
            for _ in 0..100 {
                let m = random_sym(2, &mut rng, 2.0);
                let d = random_psd(2, &mut rng, 1.0);
                let n = m.add(&d);
                let slack = 1e-10 * (1.0 + m.frobenius_norm() + n.frobenius_norm());
                assert!(
                    eval_operator(op, &m, &[0.0, 0.0])
                        <= eval_operator(op, &n, &[0.0, 0.0]) + slack
                );
            }
        }
    }

    #[test]
    fn linearize_is_consistent_with_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ops = vec![
            OperatorSpec::pucci_plus(1.0, 2.0).unwrap(),
            OperatorSpec::pucci_minus(1.0, 2.0).unwrap(),
            OperatorSpec::hessian_sigma_k(2).unwrap(),
        ];
        for op in &ops {
            for _ in 0..20 {
                // keep iterates away from kinks / inside the cone
                let base = SymMatrix::identity(2).add(&random_sym(2, &mut rng, 0.2));
                let dir = random_sym(2, &mut rng, 1.0);
                let lin = linearize(op, &base, &[0.0, 0.0]).unwrap();
                let f0 = eval_operator(op, &base, &[0.0, 0.0]);
                let mut prev_err = f64::INFINITY;
                for eps in [1e-4, 1e-5] {
                    let f1 = eval_operator(op, &base.add(&dir.scale(eps)), &[0.0, 0.0]);
                    let err = (f1 - f0 - eps * lin.inner(&dir)).abs();
                    assert!(err <= 50.0 * eps * eps * (1.0 + dir.frobenius_norm().powi(2)));
                    assert!(err <= prev_err + 1e-14);
                    prev_err = err;
                }
            }
        }
    }

    #[test]
    fn bellman_tie_break_prefers_lowest_index() {
        let op = OperatorSpec::bellman_min(vec![
            SymMatrix::identity(2),
            SymMatrix::identity(2),
        ])
        .unwrap();
        let m = SymMatrix::from_diag(&[1.0, -2.0]);
        let lin = linearize(&op, &m, &[0.0, 0.0]).unwrap();
        assert_eq!(lin, SymMatrix::identity(2));
    }

    #[test]
    fn linear_operator_grid_validation() {
        let g = crate::grid::make_grid(2, 16).unwrap();
        let a11 = parse_field("1 + 0.5*sin(2*pi*x1)", 2).unwrap();
        let zero = parse_field("0", 2).unwrap();
        let one = parse_field("1", 2).unwrap();
        let ok = OperatorSpec::linear_nondivergence(
            vec![vec![a11.clone(), zero.clone()], vec![zero.clone(), one.clone()]],
            0.5,
            1.5,
        )
        .unwrap();
        assert!(ok.validate_on_grid(&g).is_ok());
        let too_tight =
            OperatorSpec::linear_nondivergence(vec![vec![a11, zero.clone()], vec![zero, one]], 0.9, 1.5)
                .unwrap();
        assert!(too_tight.validate_on_grid(&g).is_err());
    }
}
