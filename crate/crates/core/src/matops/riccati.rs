use super::{
    ensure_finite, ensure_square, inf_norm, is_controllable, is_observable, mahler_measure,
    min_sym_eigenvalue, symmetrize, RealMatrix, RealVector,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 1_000_000,
        }
    }
}

/// One step of the prediction-form Riccati recursion
/// `P+ = A P A' + Q - A P C' (C P C' + R)^-1 C P A'`, symmetrized.
pub fn riccati_step(
    a: &RealMatrix,
    c: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
    p: &RealMatrix,
) -> Result<RealMatrix> {
    let pct = p * c.transpose();
    let innov = c * &pct + r;
    let inv = innov.try_inverse().ok_or(Error::SingularInnovation)?;
    let apct = a * &pct;
    let next = a * p * a.transpose() + q - &apct * inv * apct.transpose();
    Ok(symmetrize(&next))
}

pub fn solve_dare_fixed_point(
    a: &RealMatrix,
    c: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
) -> Result<RealMatrix> {
    solve_dare_fixed_point_with(a, c, q, r, &DareOptions::default())
}

/// Steady-state prediction covariance, by iterating the Riccati recursion from
/// `P0 = Q` until the max-abs change is at most `opts.tol`.
pub fn solve_dare_fixed_point_with(
    a: &RealMatrix,
    c: &RealMatrix,
    q: &RealMatrix,
    r: &RealMatrix,
    opts: &DareOptions,
) -> Result<RealMatrix> {
    let n = ensure_square(a)?;
    let m = c.nrows();
    if c.ncols() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "A {n}x{n}, C {}x{}, Q {:?}, R {:?}",
            c.nrows(),
            c.ncols(),
            q.shape(),
            r.shape()
        )));
    }
    for (mat, what) in [(a, "A"), (c, "C"), (q, "Q"), (r, "R")] {
        ensure_finite(mat, what)?;
    }
    if !is_observable(a, c)? {
        return Err(Error::NotObservable);
    }
    let mut p = symmetrize(q);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = riccati_step(a, c, q, r, &p)?;
        change = inf_norm(&(&next - &p));
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= opts.tol {
            return Ok(p);
        }
    }
    Err(Error::MaxIterationsExceeded {
        what: "DARE fixed point",
        iterations: opts.max_iter,
        last_change: change,
    })
}

/// `K = P C' (C P C' + R)^-1`.
pub fn kalman_gain(p: &RealMatrix, c: &RealMatrix, r: &RealMatrix) -> Result<RealMatrix> {
    let pct = p * c.transpose();
    let innov = c * &pct + r;
    let inv = innov.try_inverse().ok_or(Error::SingularInnovation)?;
    Ok(pct * inv)
}

#[derive(Debug, Clone, Copy)]
pub struct ModifiedRiccatiOptions {
    /// Shift added each step; `None` selects [`default_epsilon`].
    pub epsilon: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModifiedRiccatiOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            tol: 1e-12,
            max_iter: 1_000_000,
        }
    }
}

/// `1e-6 * trace(S'S)`, floored at `1e-6`.
pub fn default_epsilon(s: &RealMatrix) -> f64 {
    1e-6 * (s.transpose() * s).trace().max(1.0)
}

/// `P - S'PS + (1 - zeta^2) S'PBB'PS / (B'PB)`.
pub fn modified_riccati_residual(
    s: &RealMatrix,
    b: &RealVector,
    zeta: f64,
    p: &RealMatrix,
) -> RealMatrix {
    let spb = s.transpose() * (p * b);
    let bpb = b.dot(&(p * b));
    let res = p - s.transpose() * p * s + (&spb * spb.transpose()) * ((1.0 - zeta * zeta) / bpb);
    symmetrize(&res)
}

pub fn solve_modified_riccati(
    s: &RealMatrix,
    b: &RealVector,
    zeta: f64,
    epsilon: f64,
) -> Result<RealMatrix> {
    solve_modified_riccati_with(
        s,
        b,
        zeta,
        &ModifiedRiccatiOptions {
            epsilon: Some(epsilon),
            ..Default::default()
        },
    )
}

/// Positive definite `P` satisfying the strict modified Riccati inequality.
///
/// Iterates `P <- S'PS - (1 - zeta^2) S'PB (B'PB)^-1 B'PS + eps I` from the
/// identity. At the fixed point the residual of the inequality is exactly
/// `eps I`; the returned matrix is checked to have residual eigenvalues of at
/// least `eps / 2`.
pub fn solve_modified_riccati_with(
    s: &RealMatrix,
    b: &RealVector,
    zeta: f64,
    opts: &ModifiedRiccatiOptions,
) -> Result<RealMatrix> {
    let n = ensure_square(s)?;
    if b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows, S is {n}x{n}",
            b.len()
        )));
    }
    ensure_finite(s, "S")?;
    let mahler = mahler_measure(s)?;
    if !(zeta > 0.0 && zeta <= 1.0) || zeta * mahler >= 1.0 {
        return Err(Error::InfeasibleZeta { zeta, mahler });
    }
    let bm = RealMatrix::from_column_slice(n, 1, b.as_slice());
    if !is_controllable(s, &bm)? {
        return Err(Error::NotControllable);
    }
    let eps = opts.epsilon.unwrap_or_else(|| default_epsilon(s));
    let shift = RealMatrix::identity(n, n) * eps;
    let loss = 1.0 - zeta * zeta;

    let mut p = RealMatrix::identity(n, n);
    let mut change = f64::INFINITY;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let pb = &p * b;
        let spb = s.transpose() * &pb;
        let bpb = b.dot(&pb);
        let next = symmetrize(
            &(s.transpose() * &p * s - (&spb * spb.transpose()) * (loss / bpb) + &shift),
        );
        change = inf_norm(&(&next - &p)) / inf_norm(&next);
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::MaxIterationsExceeded {
            what: "modified Riccati fixed point",
            iterations: opts.max_iter,
            last_change: change,
        });
    }
    let margin = min_sym_eigenvalue(&modified_riccati_residual(s, b, zeta, &p));
    if min_sym_eigenvalue(&p) <= 0.0 || margin < 0.5 * eps {
        return Err(Error::ConvergenceFailure {
            what: "modified Riccati residual certificate",
            iterations: opts.max_iter,
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> RealMatrix {
        RealMatrix::from_element(1, 1, x)
    }

    /// Plain scalar Riccati recursion, independent of the matrix code path.
    fn scalar_recursion(a: f64, c: f64, q: f64, r: f64, steps: usize) -> f64 {
        let mut p = q;
        for _ in 0..steps {
            p = a * a * p + q - (a * p * c) * (a * p * c) / (c * p * c + r);
        }
        p
    }

    #[test]
    fn dare_zero_noise_stable() {
        let p =
            solve_dare_fixed_point(&scalar(0.5), &scalar(1.0), &scalar(0.0), &scalar(1.0)).unwrap();
        assert_eq!(p[(0, 0)], 0.0);
    }

    #[test]
    fn dare_scalar_matches_long_recursion() {
        let oracle = scalar_recursion(1.1, 1.0, 0.5, 2.0, 1_000_000);
        let p =
            solve_dare_fixed_point(&scalar(1.1), &scalar(1.0), &scalar(0.5), &scalar(2.0)).unwrap();
        assert!(
            (p[(0, 0)] - oracle).abs() <= 1e-10,
            "{} vs {oracle}",
            p[(0, 0)]
        );
    }

    #[test]
    fn dare_rejects_unobservable() {
        let a = RealMatrix::identity(2, 2);
        let c = RealMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let q = RealMatrix::identity(2, 2);
        assert!(matches!(
            solve_dare_fixed_point(&a, &c, &q, &scalar(1.0)),
            Err(Error::NotObservable)
        ));
    }

    #[test]
    fn dare_singular_innovation() {
        // C P0 C' + R = 0 with Q = 0, R = 0
        let err = solve_dare_fixed_point(&scalar(0.5), &scalar(1.0), &scalar(0.0), &scalar(0.0));
        assert!(matches!(err, Err(Error::SingularInnovation)));
    }

    #[test]
    fn dare_iteration_cap() {
        let opts = DareOptions {
            tol: 1e-12,
            max_iter: 3,
        };
        let err = solve_dare_fixed_point_with(
            &scalar(1.1),
            &scalar(1.0),
            &scalar(0.5),
            &scalar(2.0),
            &opts,
        );
        assert!(matches!(err, Err(Error::MaxIterationsExceeded { .. })));
    }

    #[test]
    fn gain_examples() {
        let k = kalman_gain(&scalar(0.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        // 1 / (1 + 1)
        let k = kalman_gain(&scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn modified_riccati_scalar_certificate() {
        let s = scalar(1.1);
        let b = RealVector::from_element(1, 1.0);
        let eps = 1e-3;
        let p = solve_modified_riccati(&s, &b, 0.5, eps).unwrap();
        // p - 1.21 p + 0.75 * 1.21 p = 0.3025 p... at the fixed point equals eps
        let direct = p[(0, 0)] - 1.21 * p[(0, 0)] + 0.75 * 1.21 * p[(0, 0)];
        assert!(direct > 0.0);
        assert!((direct - eps).abs() < 1e-9);
        assert!((p[(0, 0)] - eps / 0.6975).abs() < 1e-9);
    }

    #[test]
    fn modified_riccati_stable_plant() {
        let s = RealMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.0, -0.3]);
        let b = RealVector::from_row_slice(&[1.0, 1.0]);
        let eps = default_epsilon(&s);
        let p = solve_modified_riccati(&s, &b, 0.999, eps).unwrap();
        let res = modified_riccati_residual(&s, &b, 0.999, &p);
        assert!(min_sym_eigenvalue(&res) >= eps / 2.0);
    }

    #[test]
    fn modified_riccati_infeasible_zeta() {
        let s = RealMatrix::from_diagonal(&RealVector::from_row_slice(&[2.0, 0.5]));
        let b = RealVector::from_row_slice(&[1.0, 1.0]);
        assert!(matches!(
            solve_modified_riccati(&s, &b, 0.5, 1e-6),
            Err(Error::InfeasibleZeta { .. })
        ));
    }

    #[test]
    fn modified_riccati_not_controllable() {
        let s = RealMatrix::from_diagonal(&RealVector::from_row_slice(&[1.1, 0.5]));
        let b = RealVector::from_row_slice(&[0.0, 1.0]);
        assert!(matches!(
            solve_modified_riccati(&s, &b, 0.5, 1e-6),
            Err(Error::NotControllable)
        ));
    }
}
