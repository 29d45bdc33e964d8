//! Lossless split of the steady-state Kalman filter into single-measurement
//! local filters whose fixed linear combination recovers the central estimate.
//!
//! With `A - KCA = V diag(lambda) V^-1`, each sensor runs
//! `xi(k+1) = S xi(k) + 1 z(k)`, `z(k) = y_i(k+1) - beta' xi(k)`, where
//! `S = diag(lambda) + 1 beta'`, and `xhat = sum_i F_i xi_i` with
//! `F_i = V diag(V^-1 K_i)`.
//!
//! [`Realization`] carries the simulation-side matrices in a real basis (a
//! conjugate pair `(xi_j, xi_l)` becomes `(xi_j + xi_l, i (xi_j - xi_l))`) and
//! in the scalar type of the simulation, refined to that precision.

use nalgebra::{Complex, DMatrix, DVector, LU, SVD};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kalman::{closed_loop, closed_loop_in, KalmanDesign};
use crate::matops::{
    eig, eigenvalues, is_observable, solve_sylvester, sylvester_residual, CMatrix, CVector,
    RealMatrix, C64,
};
use crate::plantsim::{stream, SensorSuite};
use crate::precision::{matvec, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompOptions {
    /// Relative distance below which two eigenvalues count as equal.
    pub collision_tol: f64,
    /// Perturbation entries are uniform in `+-perturb_scale * |K|`.
    pub perturb_scale: f64,
    pub max_retries: usize,
    pub allow_complex: bool,
    pub beta_tol: f64,
    pub seed: u64,
}

impl Default for DecompOptions {
    fn default() -> Self {
        Self {
            collision_tol: 1e-8,
            perturb_scale: 1e-6,
            max_retries: 20,
            allow_complex: false,
            beta_tol: 1e-8,
            seed: 0x6b1d_5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub v: CMatrix,
    pub lambda: Vec<C64>,
    pub beta: CVector,
    pub g: Vec<CMatrix>,
    pub s: CMatrix,
    pub f: Vec<CMatrix>,
    /// Gain actually decomposed; differs from the design gain after perturbation.
    pub k_used: RealMatrix,
    /// `A - K_used C A`.
    pub a_cl: RealMatrix,
    pub a: RealMatrix,
    pub c: RealMatrix,
    /// Number of perturbations applied before the assumptions held.
    pub perturbations: usize,
}

fn assumptions_hold(vals: &[C64], plant: &[C64], tol: f64) -> bool {
    let distinct = vals
        .iter()
        .enumerate()
        .all(|(i, a)| vals[i + 1..].iter().all(|b| (a - b).norm() > tol));
    let disjoint = vals
        .iter()
        .all(|a| plant.iter().all(|b| (a - b).norm() > tol));
    distinct && disjoint
}

/// `F_i = V diag(V^-1 K_i)` for every column of `k`.
pub fn fusion_blocks(v: &CMatrix, k: &RealMatrix) -> Result<Vec<CMatrix>> {
    let lu = LU::new(v.clone());
    (0..k.ncols())
        .map(|i| {
            let ki = k.column(i).map(|x| C64::new(x, 0.0));
            let w = lu.solve(&ki).ok_or(Error::SingularSolve("V^-1 K_i"))?;
            Ok(v * CMatrix::from_diagonal(&w))
        })
        .collect()
}

impl Decomposition {
    pub fn build(design: &KalmanDesign, sensors: &SensorSuite) -> Result<Self> {
        Self::build_with(design, sensors, &DecompOptions::default())
    }

    pub fn build_with(
        design: &KalmanDesign,
        sensors: &SensorSuite,
        opts: &DecompOptions,
    ) -> Result<Self> {
        let a = &design.a;
        let c = &sensors.c;
        if c.ncols() != a.nrows() || design.k.shape() != (a.nrows(), c.nrows()) {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, C {:?}, K {:?}",
                a.shape(),
                c.shape(),
                design.k.shape()
            )));
        }
        if !is_observable(a, c)? {
            return Err(Error::NotObservable);
        }
        let plant = eigenvalues(a)?;
        let knorm = design.k.norm();
        let mut k = design.k.clone();
        for attempt in 0..=opts.max_retries {
            let a_cl = closed_loop(a, c, &k);
            let tol = opts.collision_tol * a_cl.norm().max(1.0);
            let spectrum = eig(&a_cl)?;
            if assumptions_hold(&spectrum.eigenvalues, &plant, tol) {
                if !spectrum.is_real(1e-12) && !opts.allow_complex {
                    return Err(Error::ComplexSpectrumDisallowed);
                }
                return Self::assemble(
                    a,
                    c,
                    k,
                    a_cl,
                    spectrum.eigenvalues,
                    spectrum.eigenvectors,
                    attempt,
                    opts,
                );
            }
            if attempt < opts.max_retries {
                let mut rng = stream(opts.seed, attempt as u64);
                let amp = opts.perturb_scale * knorm;
                k = design.k.map(|x| x + amp * rng.gen_range(-1.0..=1.0));
            }
        }
        Err(Error::PerturbationExhausted(opts.max_retries))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        a: &RealMatrix,
        c: &RealMatrix,
        k_used: RealMatrix,
        a_cl: RealMatrix,
        mut lambda: Vec<C64>,
        mut v: CMatrix,
        perturbations: usize,
        opts: &DecompOptions,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = c.nrows();
        for l in lambda.iter_mut() {
            if l.im.abs() <= 1e-12 * l.norm().max(1.0) {
                l.im = 0.0;
            }
        }
        for (j, l) in lambda.iter().enumerate() {
            if l.im == 0.0 {
                v.column_mut(j).iter_mut().for_each(|x| x.im = 0.0);
            }
        }
        let lam = CMatrix::from_diagonal(&CVector::from_vec(lambda.clone()));
        let ca = c * a;
        let ones = CVector::from_element(n, C64::new(1.0, 0.0));

        let mut g = Vec::with_capacity(m);
        for i in 0..m {
            let rhs = &ones * ca.row(i).map(|x| C64::new(x, 0.0));
            g.push(solve_sylvester(&lam, a, &rhs)?);
        }

        // beta' [G_1 .. G_m] = [C_1 A .. C_m A]
        let mut stacked = CMatrix::zeros(n, m * n);
        let mut target = CVector::zeros(m * n);
        for i in 0..m {
            stacked.columns_mut(i * n, n).copy_from(&g[i]);
            for col in 0..n {
                target[i * n + col] = C64::new(ca[(i, col)], 0.0);
            }
        }
        let system = stacked.transpose();
        let svd = SVD::new(system.clone(), true, true);
        let beta = svd
            .solve(&target, 1e-14 * svd.singular_values.max())
            .map_err(|_| Error::SingularSolve("beta least squares"))?;
        let residual = (&system * &beta - &target).norm();
        if !residual.is_finite() || residual > opts.beta_tol * target.norm().max(1.0) {
            return Err(Error::InconsistentBetaSystem(residual));
        }

        let s = &lam + &ones * beta.transpose();
        let f = fusion_blocks(&v, &k_used)?;
        Ok(Self {
            v,
            lambda,
            beta,
            g,
            s,
            f,
            k_used,
            a_cl,
            a: a.clone(),
            c: c.clone(),
            perturbations,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_real(&self) -> bool {
        self.lambda.iter().all(|l| l.im == 0.0)
    }

    pub fn lambda_matrix(&self) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_vec(self.lambda.clone()))
    }

    /// `|V Lambda V^-1 - (A - K C A)| / |A - K C A|`.
    pub fn reconstruction_error(&self) -> Result<f64> {
        let vinv = self
            .v
            .clone()
            .try_inverse()
            .ok_or(Error::SingularSolve("eigenvector matrix"))?;
        let rec = &self.v * self.lambda_matrix() * vinv;
        let a_cl = crate::matops::to_complex(&self.a_cl);
        Ok((rec - &a_cl).norm() / a_cl.norm().max(f64::MIN_POSITIVE))
    }

    /// `max |det(mu I - S)| / (1 + |S|)^n` over the eigenvalues `mu` of `A`;
    /// zero when `S` and `A` share their spectrum.
    pub fn spectrum_mismatch(&self) -> Result<f64> {
        let n = self.state_dim();
        let scale = (1.0 + self.s.norm()).powi(n as i32);
        Ok(eigenvalues(&self.a)?
            .into_iter()
            .map(|mu| {
                (CMatrix::identity(n, n) * mu - &self.s)
                    .determinant()
                    .norm()
                    / scale
            })
            .fold(0.0, f64::max))
    }

    /// `max_i |beta' G_i - C_i A|`.
    pub fn beta_residual(&self) -> f64 {
        let ca = &self.c * &self.a;
        self.g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let lhs = self.beta.transpose() * gi;
                (0..lhs.ncols())
                    .map(|j| (lhs[(0, j)] - ca[(i, j)]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `max_i |G_i A - Lambda G_i - 1 C_i A|`.
    pub fn sylvester_residual(&self) -> f64 {
        let n = self.state_dim();
        let lam = self.lambda_matrix();
        let ca = &self.c * &self.a;
        let ones = CVector::from_element(n, C64::new(1.0, 0.0));
        self.g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                let rhs = &ones * ca.row(i).map(|x| C64::new(x, 0.0));
                sylvester_residual(&lam, &self.a, &rhs, gi).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `[F_1 .. F_m]`, acting on the stacked (complex-basis) local states.
    pub fn fusion_matrix(&self) -> CMatrix {
        let n = self.state_dim();
        let mut out = CMatrix::zeros(n, n * self.sensor_count());
        for (i, fi) in self.f.iter().enumerate() {
            out.columns_mut(i * n, n).copy_from(fi);
        }
        out
    }

    /// Local filter matrices in a real basis, refined to the precision of `T`.
    pub fn realize<T: Real>(&self) -> Result<Realization<T>> {
        realize(self)
    }
}

type Cx<T> = Complex<T>;

fn cx<T: Real>(c: C64) -> Cx<T> {
    Cx::new(T::from_f64(c.re), T::from_f64(c.im))
}

fn cx64<T: Real>(c: Cx<T>) -> C64 {
    C64::new(c.re.to_f64(), c.im.to_f64())
}

fn cmatvec<T: Real>(m: &DMatrix<Cx<T>>, v: &DVector<Cx<T>>) -> DVector<Cx<T>> {
    let mut out = DVector::from_element(m.nrows(), Cx::new(T::zero(), T::zero()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out[i] = out[i] + m[(i, j)] * v[j];
        }
    }
    out
}

fn cmatmul<T: Real>(a: &DMatrix<Cx<T>>, b: &DMatrix<Cx<T>>) -> DMatrix<Cx<T>> {
    let mut out = DMatrix::from_element(a.nrows(), b.ncols(), Cx::new(T::zero(), T::zero()));
    for j in 0..b.ncols() {
        for k in 0..a.ncols() {
            let bkj = b[(k, j)];
            for i in 0..a.nrows() {
                out[(i, j)] = out[(i, j)] + a[(i, k)] * bkj;
            }
        }
    }
    out
}

const NEWTON_STEPS: usize = 6;

/// Eigenpair of `m` polished by Newton's method with the residual evaluated in
/// `T` and corrections solved in f64. The pivot entry of `v` is pinned to 1.
fn refine_eigenpair<T: Real>(
    m: &RealMatrix,
    mt: &DMatrix<Cx<T>>,
    lambda: C64,
    v: &CVector,
) -> (Cx<T>, DVector<Cx<T>>) {
    let n = m.nrows();
    let pivot = (0..v.len())
        .max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm()).then(b.cmp(&a)))
        .unwrap_or(0);
    let v0 = v / v[pivot];
    let mut lam: Cx<T> = cx(lambda);
    let mut vt: DVector<Cx<T>> = v0.map(cx);
    for _ in 0..NEWTON_STEPS {
        let mv = cmatvec(mt, &vt);
        let r: CVector = DVector::from_fn(n, |i, _| cx64(mv[i] - vt[i] * lam));
        let lam64 = cx64(lam);
        let v64 = vt.map(cx64);
        let mut jac = CMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = C64::new(m[(i, j)], 0.0);
            }
            jac[(i, i)] -= lam64;
            jac[(i, n)] = -v64[i];
        }
        jac[(n, pivot)] = C64::new(1.0, 0.0);
        let mut rhs = CVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -r[i];
        }
        let Some(delta) = LU::new(jac).solve(&rhs) else {
            break;
        };
        for i in 0..n {
            vt[i] = vt[i] + cx(delta[i]);
        }
        vt[pivot] = Cx::new(T::one(), T::zero());
        lam = lam + cx(delta[n]);
    }
    (lam, vt)
}

/// Solves `V w = b` by iterative refinement with residuals in `T`.
fn refined_solve<T: Real>(v: &DMatrix<Cx<T>>, b: &DVector<Cx<T>>) -> Result<DVector<Cx<T>>> {
    let lu = LU::new(v.map(cx64));
    let mut w: DVector<Cx<T>> = lu
        .solve(&b.map(cx64))
        .ok_or(Error::SingularSolve("V^-1 K_i"))?
        .map(cx);
    for _ in 0..NEWTON_STEPS {
        let vw = cmatvec(v, &w);
        let r: CVector = DVector::from_fn(b.len(), |i, _| cx64(b[i] - vw[i]));
        let Some(delta) = lu.solve(&r) else {
            break;
        };
        for i in 0..w.len() {
            w[i] = w[i] + cx(delta[i]);
        }
    }
    Ok(w)
}

/// `a / b` with the real divisions done by [`Real::quot`].
fn cdiv<T: Real>(a: Cx<T>, b: Cx<T>) -> Cx<T> {
    let d = b.re * b.re + b.im * b.im;
    Cx::new(
        (a.re * b.re + a.im * b.im).quot(d),
        (a.im * b.re - a.re * b.im).quot(d),
    )
}

/// `det(lambda I - A)` by Gaussian elimination with partial pivoting in `T`.
fn char_poly_at<T: Real>(a: &RealMatrix, lambda: Cx<T>) -> Cx<T> {
    let n = a.nrows();
    let mut m: DMatrix<Cx<T>> = DMatrix::from_fn(n, n, |i, j| {
        let entry = Cx::new(-T::from_f64(a[(i, j)]), T::zero());
        if i == j {
            entry + lambda
        } else {
            entry
        }
    });
    let mut det = Cx::new(T::one(), T::zero());
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| {
                cx64(m[(x, col)])
                    .norm()
                    .total_cmp(&cx64(m[(y, col)]).norm())
            })
            .unwrap_or(col);
        if cx64(m[(pivot, col)]).norm() == 0.0 {
            return Cx::new(T::zero(), T::zero());
        }
        if pivot != col {
            m.swap_rows(pivot, col);
            det = -det;
        }
        let p = m[(col, col)];
        det = det * p;
        for r in col + 1..n {
            let factor = cdiv(m[(r, col)], p);
            for c in col..n {
                let sub = factor * m[(col, c)];
                m[(r, c)] = m[(r, c)] - sub;
            }
        }
    }
    det
}

/// `(upper, lower)` indices of each conjugate pair, then the real indices.
type SpectrumSplit = (Vec<(usize, usize)>, Vec<usize>);

fn conjugate_pairs(lambda: &[C64]) -> Result<SpectrumSplit> {
    let mut pairs = Vec::new();
    let mut reals = Vec::new();
    let mut used = vec![false; lambda.len()];
    for (j, l) in lambda.iter().enumerate() {
        if l.im == 0.0 {
            reals.push(j);
            used[j] = true;
        }
    }
    for j in 0..lambda.len() {
        if used[j] || lambda[j].im < 0.0 {
            continue;
        }
        let partner = (0..lambda.len())
            .filter(|&l| !used[l] && lambda[l].im < 0.0)
            .min_by(|&a, &b| {
                (lambda[a] - lambda[j].conj())
                    .norm()
                    .total_cmp(&(lambda[b] - lambda[j].conj()).norm())
            })
            .ok_or(Error::ImaginaryResidue(lambda[j].im))?;
        used[j] = true;
        used[partner] = true;
        pairs.push((j, partner));
    }
    if used.iter().any(|u| !u) {
        return Err(Error::ImaginaryResidue(f64::NAN));
    }
    Ok((pairs, reals))
}

/// Simulation-side local filter data in a real basis.
#[derive(Debug, Clone)]
pub struct Realization<T: Real> {
    pub s: DMatrix<T>,
    pub ones: DVector<T>,
    pub beta: DVector<T>,
    /// One `n x n` block per sensor.
    pub f: Vec<DMatrix<T>>,
}

fn realize<T: Real>(dec: &Decomposition) -> Result<Realization<T>> {
    let n = dec.state_dim();
    let m = dec.sensor_count();
    let zero = Cx::new(T::zero(), T::zero());
    let (pairs, reals) = conjugate_pairs(&dec.lambda)?;
    let mt: DMatrix<Cx<T>> =
        closed_loop_in::<T>(&dec.a, &dec.c, &dec.k_used).map(|x| Cx::new(x, T::zero()));

    let mut lambda: Vec<Cx<T>> = vec![zero; n];
    let mut v: DMatrix<Cx<T>> = DMatrix::from_element(n, n, zero);
    for &j in &reals {
        let (l, vj) =
            refine_eigenpair::<T>(&dec.a_cl, &mt, dec.lambda[j], &dec.v.column(j).into_owned());
        lambda[j] = Cx::new(l.re, T::zero());
        v.set_column(j, &vj.map(|x| Cx::new(x.re, T::zero())));
    }
    for &(j, l) in &pairs {
        let (lj, vj) =
            refine_eigenpair::<T>(&dec.a_cl, &mt, dec.lambda[j], &dec.v.column(j).into_owned());
        lambda[j] = lj;
        lambda[l] = lj.conj();
        v.set_column(l, &vj.map(|x| x.conj()));
        v.set_column(j, &vj);
    }

    // Cancelling the plant modes in z needs beta at working precision.
    let mut beta: DVector<Cx<T>> = DVector::from_fn(n, |j, _| {
        let mut denom = Cx::new(T::one(), T::zero());
        for (l, other) in lambda.iter().enumerate() {
            if l != j {
                denom = denom * (lambda[j] - *other);
            }
        }
        -cdiv(char_poly_at(&dec.a, lambda[j]), denom)
    });
    for &j in &reals {
        beta[j].im = T::zero();
    }
    for &(j, l) in &pairs {
        beta[l] = beta[j].conj();
    }
    let drift = (0..n)
        .map(|j| (cx64(beta[j]) - dec.beta[j]).norm())
        .fold(0.0, f64::max);
    if drift > 1e-6 * (1.0 + dec.beta.norm()) {
        return Err(Error::InconsistentBetaSystem(drift));
    }

    // S = Lambda + 1 beta'
    let mut s: DMatrix<Cx<T>> = DMatrix::from_fn(n, n, |_, c| beta[c]);
    for j in 0..n {
        s[(j, j)] = s[(j, j)] + lambda[j];
    }

    let mut f: Vec<DMatrix<Cx<T>>> = Vec::with_capacity(m);
    for i in 0..m {
        let ki: DVector<Cx<T>> = dec
            .k_used
            .column(i)
            .map(|x| Cx::new(T::from_f64(x), T::zero()));
        let w = refined_solve(&v, &ki)?;
        let mut fi = v.clone();
        for j in 0..n {
            let wj = w[j];
            fi.column_mut(j).iter_mut().for_each(|x| *x = *x * wj);
        }
        f.push(fi);
    }

    // Basis change x = T xi and its inverse; entries are exact in binary.
    let one = Cx::new(T::one(), T::zero());
    let half = Cx::new(T::from_f64(0.5), T::zero());
    let i_unit = Cx::new(T::zero(), T::one());
    let mut tm: DMatrix<Cx<T>> = DMatrix::from_element(n, n, zero);
    let mut tinv: DMatrix<Cx<T>> = DMatrix::from_element(n, n, zero);
    for &j in &reals {
        tm[(j, j)] = one;
        tinv[(j, j)] = one;
    }
    for &(j, l) in &pairs {
        tm[(j, j)] = one;
        tm[(j, l)] = one;
        tm[(l, j)] = i_unit;
        tm[(l, l)] = -i_unit;
        tinv[(j, j)] = half;
        tinv[(l, j)] = half;
        tinv[(j, l)] = -(i_unit * half);
        tinv[(l, l)] = i_unit * half;
    }

    let ones_c: DVector<Cx<T>> = DVector::from_element(n, one);
    let s_r = cmatmul(&cmatmul(&tm, &s), &tinv);
    let ones_r = cmatvec(&tm, &ones_c);
    let beta_r = cmatmul(&DMatrix::from_row_slice(1, n, beta.as_slice()), &tinv);
    let f_r: Vec<DMatrix<Cx<T>>> = f.iter().map(|fi| cmatmul(fi, &tinv)).collect();

    let mut residue = 0.0f64;
    let mut scale = 1.0f64;
    let mut take_re = |m: &DMatrix<Cx<T>>| -> DMatrix<T> {
        m.map(|x| {
            residue = residue.max(x.im.to_f64().abs());
            scale = scale.max(x.re.to_f64().abs());
            x.re
        })
    };
    let s_out = take_re(&s_r);
    let ones_out = take_re(&DMatrix::from_column_slice(n, 1, ones_r.as_slice()));
    let beta_out = take_re(&beta_r);
    let f_out: Vec<DMatrix<T>> = f_r.iter().map(&mut take_re).collect();
    if residue > 1e-8 * scale {
        return Err(Error::ImaginaryResidue(residue));
    }
    Ok(Realization {
        s: s_out,
        ones: DVector::from_column_slice(ones_out.as_slice()),
        beta: DVector::from_column_slice(beta_out.as_slice()),
        f: f_out,
    })
}

/// Local filter state `xi_i(k)` and last output `z_i(k - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFilterState<T: Real> {
    pub xi: DVector<T>,
    pub z_last: T,
}

impl<T: Real> LocalFilterState<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            xi: DVector::from_element(n, T::zero()),
            z_last: T::zero(),
        }
    }
}

impl<T: Real> Realization<T> {
    pub fn state_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.f.len()
    }

    /// `z = y_next - beta' xi`, `xi+ = S xi + 1 z`.
    pub fn local_filter_step(&self, state: &LocalFilterState<T>, y_next: T) -> LocalFilterState<T> {
        let mut bx = T::zero();
        for (b, x) in self.beta.iter().zip(state.xi.iter()) {
            bx += *b * *x;
        }
        let z = y_next - bx;
        let mut xi = matvec(&self.s, &state.xi);
        for (x, o) in xi.iter_mut().zip(self.ones.iter()) {
            *x += *o * z;
        }
        LocalFilterState { xi, z_last: z }
    }

    /// `[F_1 .. F_m]`.
    pub fn fusion_matrix(&self) -> DMatrix<T> {
        let n = self.state_dim();
        let mut out = DMatrix::from_element(n, n * self.sensor_count(), T::zero());
        for (i, fi) in self.f.iter().enumerate() {
            out.columns_mut(i * n, n).copy_from(fi);
        }
        out
    }

    /// `sum_i F_i xi_i`.
    pub fn fuse(&self, xis: &[DVector<T>]) -> DVector<T> {
        let n = self.state_dim();
        let mut out = DVector::from_element(n, T::zero());
        for (fi, xi) in self.f.iter().zip(xis) {
            out += matvec(fi, xi);
        }
        out
    }
}
