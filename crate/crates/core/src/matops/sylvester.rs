use nalgebra::{Schur, LU};

use super::{eigenvalues, ensure_square, to_complex, CMatrix, CVector, RealMatrix, C64};
use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-10;
const COLLISION_TOL: f64 = 1e-10;

/// `G A - Lambda G - RHS`.
pub fn sylvester_residual(lambda: &CMatrix, a: &RealMatrix, rhs: &CMatrix, g: &CMatrix) -> CMatrix {
    g * to_complex(a) - lambda * g - rhs
}

fn complex_eigenvalues(m: &CMatrix) -> Result<Vec<C64>> {
    let n = m.nrows();
    let upper = (0..n).all(|j| (j + 1..n).all(|i| m[(i, j)] == C64::new(0.0, 0.0)));
    if upper {
        return Ok(m.diagonal().iter().copied().collect());
    }
    let schur =
        Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::ConvergenceFailure {
            what: "complex Schur decomposition",
            iterations: 10_000,
        })?;
    let (_, t) = schur.unpack();
    Ok(t.diagonal().iter().copied().collect())
}

/// Unique `G` with `G A - Lambda G = RHS`.
///
/// Solved through the Kronecker form `(A' (x) I - I (x) Lambda) vec(G) = vec(RHS)`
/// with one step of iterative refinement; intended for the small dense
/// systems of the decomposition layer.
pub fn solve_sylvester(lambda: &CMatrix, a: &RealMatrix, rhs: &CMatrix) -> Result<CMatrix> {
    let n = ensure_square(a)?;
    let p = lambda.nrows();
    if lambda.ncols() != p || rhs.shape() != (p, n) {
        return Err(Error::DimensionMismatch(format!(
            "Lambda {:?}, A {n}x{n}, RHS {:?}",
            lambda.shape(),
            rhs.shape()
        )));
    }
    let scale = a.norm() + lambda.norm();
    let spec_a = eigenvalues(a)?;
    let spec_l = complex_eigenvalues(lambda)?;
    for la in &spec_a {
        for ll in &spec_l {
            if (la - ll).norm() <= COLLISION_TOL * scale.max(1.0) {
                return Err(Error::CommonEigenvalue(format!("{la}")));
            }
        }
    }

    let dim = p * n;
    let mut sys = CMatrix::zeros(dim, dim);
    // vec is column-major: entry (r, c) of G sits at c * p + r.
    for c in 0..n {
        for r in 0..p {
            let row = c * p + r;
            for k in 0..n {
                sys[(row, k * p + r)] += C64::new(a[(k, c)], 0.0);
            }
            for k in 0..p {
                sys[(row, c * p + k)] -= lambda[(r, k)];
            }
        }
    }
    let lu = LU::new(sys);
    let b = CVector::from_iterator(dim, rhs.iter().copied());
    let mut x = lu.solve(&b).ok_or(Error::SingularSolve("Sylvester"))?;
    let g0 = CMatrix::from_column_slice(p, n, x.as_slice());
    let r0 = sylvester_residual(lambda, a, rhs, &g0);
    let rv = CVector::from_iterator(dim, r0.iter().copied());
    if let Some(dx) = lu.solve(&rv) {
        x -= dx;
    }
    let g = CMatrix::from_column_slice(p, n, x.as_slice());
    let res = sylvester_residual(lambda, a, rhs, &g).norm();
    if !res.is_finite() || res > RESIDUAL_TOL * scale.max(1.0) * g.norm().max(1.0) {
        return Err(Error::SingularSolve("Sylvester (residual check)"));
    }
    Ok(g)
}
