//! Dense linear-algebra and control primitives shared by the other modules.

mod riccati;
mod sylvester;

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector, Schur, SVD};

use crate::error::{Error, Result};

pub use riccati::{
    default_epsilon, kalman_gain, modified_riccati_residual, riccati_step, solve_dare_fixed_point,
    solve_dare_fixed_point_with, solve_modified_riccati, solve_modified_riccati_with, DareOptions,
    ModifiedRiccatiOptions,
};
pub use sylvester::{solve_sylvester, sylvester_residual};

pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;
pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-9;

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigenvalues with column-aligned eigenvectors.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<C64>,
    pub eigenvectors: CMatrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// True when every eigenvalue has `|Im| <= tol * max(1, |lambda|)`.
    pub fn is_real(&self, tol: f64) -> bool {
        self.eigenvalues
            .iter()
            .all(|l| l.im.abs() <= tol * l.norm().max(1.0))
    }

    pub fn diagonal(&self) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_vec(self.eigenvalues.clone()))
    }

    /// `V diag(lambda) V^-1`, or `None` when `V` is singular.
    pub fn reconstruct(&self) -> Option<CMatrix> {
        let vinv = self.eigenvectors.clone().try_inverse()?;
        Some(&self.eigenvectors * self.diagonal() * vinv)
    }

    /// Smallest pairwise eigenvalue gap (infinite for dimension < 2).
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (i, a) in self.eigenvalues.iter().enumerate() {
            for b in &self.eigenvalues[i + 1..] {
                gap = gap.min((a - b).norm());
            }
        }
        gap
    }
}

pub fn ensure_square(m: &RealMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &RealMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn to_complex(m: &RealMatrix) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

pub fn inf_norm(m: &RealMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &RealMatrix) -> RealMatrix {
    (m + m.transpose()) * 0.5
}

fn cmp_eigen(a: &C64, b: &C64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

/// Eigenvalues only, sorted by (real, imaginary) part.
pub fn eigenvalues(m: &RealMatrix) -> Result<Vec<C64>> {
    let n = ensure_square(m)?;
    ensure_finite(m, "eigenvalue input")?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(
        Error::ConvergenceFailure {
            what: "real Schur decomposition",
            iterations: SCHUR_MAX_ITER,
        },
    )?;
    let mut vals: Vec<C64> = schur.complex_eigenvalues().iter().copied().collect();
    vals.sort_by(cmp_eigen);
    Ok(vals)
}

/// Full eigen-decomposition, eigenvalues sorted by (real, imaginary) part.
///
/// Eigenvectors are unit-norm with their largest-magnitude entry real and
/// positive, so the decomposition is reproducible. Clusters of numerically
/// equal eigenvalues receive an orthonormal basis of the joint null space.
pub fn eig(m: &RealMatrix) -> Result<Spectrum> {
    let n = ensure_square(m)?;
    let vals = eigenvalues(m)?;
    let scale = m.norm().max(1.0);
    let cluster_tol = 1e-9 * scale;

    let mut vecs = CMatrix::zeros(n, n);
    let mut j = 0;
    while j < n {
        let mut end = j + 1;
        while end < n && (vals[end] - vals[j]).norm() <= cluster_tol {
            end += 1;
        }
        let k = end - j;
        let center = vals[j..end].iter().sum::<C64>() / k as f64;
        let basis = null_vectors(m, center, k);
        for (offset, v) in basis.into_iter().enumerate() {
            vecs.set_column(j + offset, &normalize_phase(v));
        }
        j = end;
    }
    Ok(Spectrum {
        eigenvalues: vals,
        eigenvectors: vecs,
    })
}

/// Right singular vectors of `M - lambda I` for its `k` smallest singular values.
fn null_vectors(m: &RealMatrix, lambda: C64, k: usize) -> Vec<CVector> {
    let n = m.nrows();
    if lambda.im == 0.0 {
        let shifted = m - RealMatrix::identity(n, n) * lambda.re;
        let svd = SVD::new(shifted, false, true);
        let vt = svd.v_t.expect("v_t requested");
        smallest_indices(svd.singular_values.as_slice(), k)
            .into_iter()
            .map(|i| vt.row(i).transpose().map(|x| C64::new(x, 0.0)))
            .collect()
    } else {
        let shifted = to_complex(m) - CMatrix::identity(n, n) * lambda;
        let svd = SVD::new(shifted, false, true);
        let vt = svd.v_t.expect("v_t requested");
        smallest_indices(svd.singular_values.as_slice(), k)
            .into_iter()
            .map(|i| vt.row(i).transpose().map(|x| x.conj()))
            .collect()
    }
}

fn smallest_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn normalize_phase(mut v: CVector) -> CVector {
    let norm = v.norm();
    if norm == 0.0 {
        return v;
    }
    let pivot = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let phase = v[pivot] / v[pivot].norm();
    let scale = phase.conj() / norm;
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// Product of `|lambda|` over eigenvalues on or outside the unit circle; 1 if none.
pub fn mahler_measure(m: &RealMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|l| l.norm())
        .filter(|&r| r >= 1.0)
        .product())
}

/// Numerical rank with singular-value threshold `tol * sigma_max`.
pub fn rank(m: &RealMatrix, tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// `[C; CA; ...; CA^(n-1)]`.
pub fn observability_matrix(a: &RealMatrix, c: &RealMatrix) -> Result<RealMatrix> {
    let n = ensure_square(a)?;
    if c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C has {} columns, A is {n}x{n}",
            c.ncols()
        )));
    }
    let p = c.nrows();
    let mut obs = RealMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for i in 0..n {
        obs.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    Ok(obs)
}

/// `[B, SB, ..., S^(n-1)B]`.
pub fn controllability_matrix(s: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    let n = ensure_square(s)?;
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows, S is {n}x{n}",
            b.nrows()
        )));
    }
    let p = b.ncols();
    let mut ctrb = RealMatrix::zeros(n, p * n);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * p), (n, p)).copy_from(&block);
        block = s * &block;
    }
    Ok(ctrb)
}

pub fn is_observable(a: &RealMatrix, c: &RealMatrix) -> Result<bool> {
    let obs = observability_matrix(a, c)?;
    Ok(rank(&obs, RANK_TOL) == a.nrows())
}

pub fn is_controllable(s: &RealMatrix, b: &RealMatrix) -> Result<bool> {
    let ctrb = controllability_matrix(s, b)?;
    Ok(rank(&ctrb, RANK_TOL) == s.nrows())
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &RealMatrix) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(v: &[f64]) -> RealMatrix {
        RealMatrix::from_diagonal(&RealVector::from_row_slice(v))
    }

    fn assert_pairs(m: &RealMatrix, spec: &Spectrum) {
        let cm = to_complex(m);
        let tol = 1e-10 * m.norm().max(1.0);
        for (j, l) in spec.eigenvalues.iter().enumerate() {
            let v = spec.eigenvectors.column(j);
            let r = &cm * v - v * *l;
            assert!(r.norm() <= tol, "pair {j} residual {}", r.norm());
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eig_diagonal() {
        let m = diag(&[1.1, 0.9]);
        let s = eig(&m).unwrap();
        assert_eq!(s.eigenvalues, vec![C64::new(0.9, 0.0), C64::new(1.1, 0.0)]);
        assert_pairs(&m, &s);
    }

    #[test]
    fn eig_identity_has_full_basis() {
        let m = RealMatrix::identity(3, 3);
        let s = eig(&m).unwrap();
        assert!(s
            .eigenvalues
            .iter()
            .all(|l| (l - C64::new(1.0, 0.0)).norm() < 1e-14));
        assert_pairs(&m, &s);
        assert!(s.eigenvectors.clone().try_inverse().is_some());
    }

    #[test]
    fn eig_rotation_is_plus_minus_i() {
        // lambda^2 + 1 = 0
        let m = RealMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let s = eig(&m).unwrap();
        assert!((s.eigenvalues[0] - C64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((s.eigenvalues[1] - C64::new(0.0, 1.0)).norm() < 1e-14);
        assert_pairs(&m, &s);
    }

    #[test]
    fn eig_rejects_non_square() {
        assert!(matches!(
            eig(&RealMatrix::zeros(2, 3)),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn eig_reconstructs_distinct_spectrum() {
        let m = RealMatrix::from_row_slice(3, 3, &[0.2, 1.0, -0.3, 0.4, 0.1, 0.7, -0.5, 0.3, 0.9]);
        let s = eig(&m).unwrap();
        let rec = s.reconstruct().unwrap();
        let err = (rec - to_complex(&m)).norm();
        assert!(err <= 1e-8 * m.norm(), "reconstruction {err}");
    }

    #[test]
    fn mahler_examples() {
        assert!((mahler_measure(&diag(&[0.9, 1.1])).unwrap() - 1.1).abs() < 1e-14);
        assert_eq!(mahler_measure(&diag(&[0.5, 0.5])).unwrap(), 1.0);
        // |2| * |-3|
        assert!((mahler_measure(&diag(&[2.0, -3.0, 0.1])).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn mahler_equals_abs_det_when_all_unstable() {
        let m = RealMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let det = m.determinant().abs();
        assert!((mahler_measure(&m).unwrap() - det).abs() < 1e-10 * det);
    }

    #[test]
    fn observability_examples() {
        let c = RealMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(!is_observable(&RealMatrix::identity(2, 2), &c).unwrap());
        let a = diag(&[0.9, 1.1]);
        let c_all = RealMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, -1.0]);
        assert!(is_observable(&a, &c_all).unwrap());
        assert!(!is_observable(&a, &c).unwrap());
    }

    #[test]
    fn controllability_example() {
        // det [B, SB] = det [[1, 1], [1, 2]] = 1
        let s = diag(&[1.0, 2.0]);
        let b = RealMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(is_controllable(&s, &b).unwrap());
        let b0 = RealMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(!is_controllable(&s, &b0).unwrap());
    }

    #[test]
    fn observability_dimension_mismatch() {
        let c = RealMatrix::zeros(1, 3);
        assert!(matches!(
            is_observable(&RealMatrix::identity(2, 2), &c),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
