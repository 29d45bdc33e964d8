//! Centralized steady-state Kalman filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matops::{eigenvalues, kalman_gain, solve_dare_fixed_point, RealMatrix};
use crate::plantsim::{PlantModel, SensorSuite, Trajectory};
use crate::precision::{cast_matrix, matvec, Real};

/// Steady-state filter `xhat(k+1) = (A - KCA) xhat(k) + K y(k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanDesign {
    /// Steady-state prediction error covariance.
    pub p: RealMatrix,
    pub k: RealMatrix,
    pub a_cl: RealMatrix,
    pub a: RealMatrix,
    pub c: RealMatrix,
}

/// `A - K C A`, evaluated the same way everywhere it is needed.
pub fn closed_loop(a: &RealMatrix, c: &RealMatrix, k: &RealMatrix) -> RealMatrix {
    a - k * (c * a)
}

/// `A - K C A` formed in the working precision from the f64 factors.
///
/// Unstable plants make `|xhat|` large, so the rounding of an f64 closed-loop
/// matrix would feed an O(eps |xhat|) error into every recursion that uses it.
pub fn closed_loop_in<T: Real>(a: &RealMatrix, c: &RealMatrix, k: &RealMatrix) -> DMatrix<T> {
    let (at, ct, kt): (DMatrix<T>, DMatrix<T>, DMatrix<T>) =
        (cast_matrix(a), cast_matrix(c), cast_matrix(k));
    let ca = matmul(&ct, &at);
    let kca = matmul(&kt, &ca);
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| at[(i, j)] - kca[(i, j)])
}

fn matmul<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>) -> DMatrix<T> {
    DMatrix::from_fn(x.nrows(), y.ncols(), |i, j| {
        let mut acc = T::zero();
        for l in 0..x.ncols() {
            acc += x[(i, l)] * y[(l, j)];
        }
        acc
    })
}

pub fn spectral_radius(m: &RealMatrix) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

impl KalmanDesign {
    pub fn design(model: &PlantModel, sensors: &SensorSuite) -> Result<Self> {
        model.validate()?;
        sensors.validate()?;
        let p = solve_dare_fixed_point(&model.a, &sensors.c, &model.q, &sensors.r)?;
        let k = kalman_gain(&p, &sensors.c, &sensors.r)?;
        let design = Self {
            a_cl: closed_loop(&model.a, &sensors.c, &k),
            a: model.a.clone(),
            c: sensors.c.clone(),
            p,
            k,
        };
        let rho = spectral_radius(&design.a_cl)?;
        if rho >= 1.0 {
            return Err(Error::UnstableClosedLoop(rho));
        }
        Ok(design)
    }

    /// Same plant with gain `k` substituted (covariance kept as designed).
    pub fn with_gain(&self, k: RealMatrix) -> Self {
        Self {
            a_cl: closed_loop(&self.a, &self.c, &k),
            k,
            p: self.p.clone(),
            a: self.a.clone(),
            c: self.c.clone(),
        }
    }

    /// Error covariance of `xhat(k)`, which already includes `y(k)`: `(I - KC) P`.
    pub fn filtered_covariance(&self) -> RealMatrix {
        let n = self.p.nrows();
        let ikc = RealMatrix::identity(n, n) - &self.k * &self.c;
        crate::matops::symmetrize(&(ikc * &self.p))
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.c.nrows()
    }
}

/// Centralized estimates `xhat(0..=T)` from `xhat(0) = 0`.
pub fn run_centralized<T: Real>(
    design: &KalmanDesign,
    traj: &Trajectory<T>,
) -> Result<Vec<DVector<T>>> {
    let n = design.state_dim();
    if traj.x(0).len() != n || traj.y(1).len() != design.sensor_count() {
        return Err(Error::DimensionMismatch(format!(
            "filter is {n} states x {} sensors, trajectory {} x {}",
            design.sensor_count(),
            traj.x(0).len(),
            traj.y(1).len()
        )));
    }
    let a_cl: DMatrix<T> = closed_loop_in(&design.a, &design.c, &design.k);
    let k: DMatrix<T> = cast_matrix(&design.k);
    let mut xhat = DVector::from_element(n, T::zero());
    let mut out = Vec::with_capacity(traj.horizon() + 1);
    out.push(xhat.clone());
    for step in 1..=traj.horizon() {
        xhat = matvec(&a_cl, &xhat) + matvec(&k, traj.y(step));
        out.push(xhat.clone());
    }
    Ok(out)
}
