//! Plant, sensor and agent-noise simulation.
//!
//! Every random entity (initial state, process noise, each sensor, each agent)
//! draws from its own ChaCha stream derived from the trial seed, so changing
//! the triggering parameters never changes a noise realization.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{ensure_finite, ensure_square, min_sym_eigenvalue, RealMatrix, RealVector};
use crate::precision::{cast_matrix, Real};

const PSD_TOL: f64 = 1e-10;

const STREAM_X0: u64 = 0;
const STREAM_PROCESS: u64 = 1;
const STREAM_SENSOR_BASE: u64 = 2;
const STREAM_AGENT_JOINT: u64 = 1 << 32;
const STREAM_AGENT_BASE: u64 = (1 << 32) + 1;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `trial` of a Monte Carlo run with master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    mix(master ^ mix(trial.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Independent random stream `entity` under `seed`.
pub fn stream(seed: u64, entity: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(entity);
    rng
}

fn ensure_psd(m: &RealMatrix, what: &'static str) -> Result<()> {
    ensure_finite(m, what)?;
    let asym = (m - m.transpose()).abs().max();
    if asym > PSD_TOL * (1.0 + m.abs().max()) {
        return Err(Error::InvalidSpec(format!("{what} is not symmetric")));
    }
    if m.nrows() > 0 && min_sym_eigenvalue(m) < -PSD_TOL * (1.0 + m.abs().max()) {
        return Err(Error::InvalidSpec(format!(
            "{what} is not positive semidefinite"
        )));
    }
    Ok(())
}

/// Lower-triangular `L` with `L L' = cov` for positive semidefinite `cov`.
///
/// Zero pivots zero their column, so perfectly correlated components come out
/// bit-identical.
pub fn psd_factor(cov: &RealMatrix) -> RealMatrix {
    let n = cov.nrows();
    let mut l = RealMatrix::zeros(n, n);
    let tol = PSD_TOL * (1.0 + cov.abs().max());
    for j in 0..n {
        let mut d = cov[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..n {
            let mut s = cov[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    l
}

fn gaussian(rng: &mut ChaCha8Rng, factor: &RealMatrix) -> RealVector {
    let g = RealVector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * g
}

/// `x(k+1) = A x(k) + w(k)`, `w ~ N(0, Q)`, `x(0) ~ N(0, x0_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: RealMatrix,
    pub q: RealMatrix,
    pub x0_cov: RealMatrix,
}

impl PlantModel {
    pub fn new(a: RealMatrix, q: RealMatrix, x0_cov: RealMatrix) -> Result<Self> {
        let model = Self { a, q, x0_cov };
        model.validate()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = ensure_square(&self.a)?;
        ensure_finite(&self.a, "A")?;
        if self.q.shape() != (n, n) || self.x0_cov.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "A is {n}x{n}, Q {:?}, x0_cov {:?}",
                self.q.shape(),
                self.x0_cov.shape()
            )));
        }
        ensure_psd(&self.q, "Q")?;
        ensure_psd(&self.x0_cov, "x0_cov")
    }

    /// Same dynamics with all noise switched off.
    pub fn noiseless(&self) -> Self {
        let n = self.dim();
        Self {
            a: self.a.clone(),
            q: RealMatrix::zeros(n, n),
            x0_cov: RealMatrix::zeros(n, n),
        }
    }
}

/// Scalar sensors `y_i = C_i x + v_i`, stacked as `y = C x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSuite {
    /// Row `i` is `C_i`.
    pub c: RealMatrix,
    pub r: RealMatrix,
}

impl SensorSuite {
    pub fn new(c: RealMatrix, r: RealMatrix) -> Result<Self> {
        let suite = Self { c, r };
        suite.validate()?;
        Ok(suite)
    }

    pub fn count(&self) -> usize {
        self.c.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn row(&self, i: usize) -> RealMatrix {
        self.c.rows(i, 1).into_owned()
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.c, "C")?;
        let m = self.count();
        if self.r.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "{m} sensors but R is {:?}",
                self.r.shape()
            )));
        }
        ensure_psd(&self.r, "R")
    }

    pub fn noiseless(&self) -> Self {
        let m = self.count();
        Self {
            c: self.c.clone(),
            r: RealMatrix::zeros(m, m),
        }
    }
}

/// States `x(0..=T)` and stacked measurements `y(1..=T)`.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub states: Vec<DVector<T>>,
    measurements: Vec<DVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.measurements.len()
    }

    pub fn x(&self, k: usize) -> &DVector<T> {
        &self.states[k]
    }

    /// Measurement `y(k)` for `1 <= k <= T`.
    pub fn y(&self, k: usize) -> &DVector<T> {
        assert!(k >= 1, "measurements start at k = 1");
        &self.measurements[k - 1]
    }

    pub fn from_parts(states: Vec<DVector<T>>, measurements: Vec<DVector<T>>) -> Result<Self> {
        if states.len() != measurements.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} states for {} measurements",
                states.len(),
                measurements.len()
            )));
        }
        Ok(Self {
            states,
            measurements,
        })
    }

    /// One row per step: `k, x_0.., y_0..` (measurement cells empty at k = 0).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.states[0].len();
        let m = self.measurements.first().map_or(0, |y| y.len());
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["k".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("y{i}")));
        writeln!(out, "{}", header.join(","))?;
        for k in 0..=self.horizon() {
            let mut row = vec![k.to_string()];
            row.extend(self.states[k].iter().map(|v| format!("{:e}", v.to_f64())));
            if k == 0 {
                row.extend(std::iter::repeat_n(String::new(), m));
            } else {
                row.extend(self.y(k).iter().map(|v| format!("{:e}", v.to_f64())));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates `T` steps. Deterministic in `seed`; `x(0)`, `w` and each sensor's
/// `v_i` come from mutually independent streams.
pub fn simulate_plant<T: Real>(
    model: &PlantModel,
    sensors: &SensorSuite,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory<T>> {
    model.validate()?;
    sensors.validate()?;
    let n = model.dim();
    if sensors.state_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "plant has {n} states, C has {} columns",
            sensors.state_dim()
        )));
    }
    if horizon == 0 {
        return Err(Error::DimensionMismatch(
            "horizon must be at least 1".into(),
        ));
    }
    let m = sensors.count();
    let lq = psd_factor(&model.q);
    let lr = psd_factor(&sensors.r);
    let l0 = psd_factor(&model.x0_cov);
    let a: DMatrix<T> = cast_matrix(&model.a);
    let c: DMatrix<T> = cast_matrix(&sensors.c);

    let mut rng_x0 = stream(seed, STREAM_X0);
    let mut rng_w = stream(seed, STREAM_PROCESS);
    let mut rng_v: Vec<ChaCha8Rng> = (0..m)
        .map(|i| stream(seed, STREAM_SENSOR_BASE + i as u64))
        .collect();

    let mut x: DVector<T> = gaussian(&mut rng_x0, &l0).map(T::from_f64);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon);
    states.push(x.clone());
    for _ in 0..horizon {
        let w = gaussian(&mut rng_w, &lq);
        let g = RealVector::from_fn(m, |i, _| StandardNormal.sample(&mut rng_v[i]));
        let v = &lr * g;
        x = crate::precision::matvec(&a, &x) + w.map(T::from_f64);
        let y = crate::precision::matvec(&c, &x) + v.map(T::from_f64);
        states.push(x.clone());
        measurements.push(y);
    }
    Ok(Trajectory {
        states,
        measurements,
    })
}

fn default_cap() -> f64 {
    10.0
}

/// Scalar agent-noise process `z_i(k)`: zero mean, bounded covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    GaussianIid {
        variance: f64,
    },
    /// Standard deviation `min(gain * |eta_i(k)|, cap)`.
    StateDependent {
        gain: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `z(k) = phi z(k-1) + e(k)`, `e ~ N(0, variance)`, `z(-1) = 0`.
    Ar1Correlated {
        phi: f64,
        variance: f64,
    },
    /// Joint Gaussian across agents with the given covariance.
    CrossCorrelated {
        covariance: Vec<Vec<f64>>,
    },
}

impl NoiseSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            NoiseSpec::GaussianIid { .. } => "gaussian_iid",
            NoiseSpec::StateDependent { .. } => "state_dependent",
            NoiseSpec::Ar1Correlated { .. } => "ar1_correlated",
            NoiseSpec::CrossCorrelated { .. } => "cross_correlated",
        }
    }

    pub fn validate(&self, agents: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self {
            NoiseSpec::GaussianIid { variance } => {
                if !(variance.is_finite() && *variance >= 0.0) {
                    return bad(format!("variance {variance}"));
                }
            }
            NoiseSpec::StateDependent { gain, cap } => {
                if !(gain.is_finite() && *gain >= 0.0) {
                    return bad(format!("gain {gain}"));
                }
                if !(cap.is_finite() && *cap > 0.0) {
                    return bad(format!("cap {cap}"));
                }
            }
            NoiseSpec::Ar1Correlated { phi, variance } => {
                if phi.is_nan() || phi.abs() >= 1.0 {
                    return bad(format!("AR coefficient {phi} outside (-1, 1)"));
                }
                if !(variance.is_finite() && *variance >= 0.0) {
                    return bad(format!("variance {variance}"));
                }
            }
            NoiseSpec::CrossCorrelated { covariance } => {
                let cov = rows_to_matrix(covariance)
                    .ok_or_else(|| Error::InvalidSpec("ragged covariance".into()))?;
                if cov.shape() != (agents, agents) {
                    return bad(format!(
                        "covariance is {:?} for {agents} agents",
                        cov.shape()
                    ));
                }
                ensure_psd(&cov, "cross covariance")?;
            }
        }
        Ok(())
    }

    /// Upper bound on `var(z_i(k))` along any trajectory.
    pub fn variance_bound(&self) -> f64 {
        match self {
            NoiseSpec::GaussianIid { variance } => *variance,
            NoiseSpec::StateDependent { cap, .. } => cap * cap,
            NoiseSpec::Ar1Correlated { phi, variance } => variance / (1.0 - phi * phi),
            NoiseSpec::CrossCorrelated { covariance } => covariance
                .iter()
                .enumerate()
                .map(|(i, row)| row[i])
                .fold(0.0, f64::max),
        }
    }
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<RealMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(RealMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Stateful sampler for all agents' noises under one [`NoiseSpec`].
#[derive(Debug, Clone)]
pub struct NoiseProcess {
    spec: NoiseSpec,
    agent_rngs: Vec<ChaCha8Rng>,
    joint_rng: ChaCha8Rng,
    joint_factor: Option<RealMatrix>,
    joint_cache: Option<(usize, RealVector)>,
    ar_state: Vec<f64>,
}

impl NoiseProcess {
    pub fn new(spec: NoiseSpec, agents: usize, seed: u64) -> Result<Self> {
        spec.validate(agents)?;
        let joint_factor = match &spec {
            NoiseSpec::CrossCorrelated { covariance } => {
                Some(psd_factor(&rows_to_matrix(covariance).expect("validated")))
            }
            _ => None,
        };
        Ok(Self {
            agent_rngs: (0..agents)
                .map(|i| stream(seed, STREAM_AGENT_BASE + i as u64))
                .collect(),
            joint_rng: stream(seed, STREAM_AGENT_JOINT),
            joint_factor,
            joint_cache: None,
            ar_state: vec![0.0; agents],
            spec,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn agents(&self) -> usize {
        self.agent_rngs.len()
    }

    /// Draws `z_agent(k)`. Call once per agent per round, rounds in order.
    pub fn sample_agent_noise(&mut self, agent: usize, k: usize, state_norm: f64) -> f64 {
        match &self.spec {
            NoiseSpec::GaussianIid { variance } => {
                let g: f64 = StandardNormal.sample(&mut self.agent_rngs[agent]);
                variance.sqrt() * g
            }
            NoiseSpec::StateDependent { gain, cap } => {
                let g: f64 = StandardNormal.sample(&mut self.agent_rngs[agent]);
                let sd = (gain * state_norm).min(*cap);
                if sd.is_finite() {
                    sd * g
                } else {
                    cap * g
                }
            }
            NoiseSpec::Ar1Correlated { phi, variance } => {
                let g: f64 = StandardNormal.sample(&mut self.agent_rngs[agent]);
                let z = phi * self.ar_state[agent] + variance.sqrt() * g;
                self.ar_state[agent] = z;
                z
            }
            NoiseSpec::CrossCorrelated { .. } => {
                let fresh = !matches!(&self.joint_cache, Some((kk, _)) if *kk == k);
                if fresh {
                    let factor = self.joint_factor.as_ref().expect("cross factor");
                    let z = gaussian(&mut self.joint_rng, factor);
                    self.joint_cache = Some((k, z));
                }
                self.joint_cache.as_ref().expect("cached").1[agent]
            }
        }
    }

    /// Noise for every agent at round `k`.
    pub fn sample_round(&mut self, k: usize, state_norms: &[f64]) -> Vec<f64> {
        (0..self.agents())
            .map(|i| self.sample_agent_noise(i, k, state_norms.get(i).copied().unwrap_or(0.0)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> (PlantModel, SensorSuite) {
        let a = RealMatrix::from_diagonal(&RealVector::from_row_slice(&[0.9, 1.1]));
        let plant = PlantModel::new(
            a,
            RealMatrix::identity(2, 2) * 0.5,
            RealMatrix::identity(2, 2),
        )
        .unwrap();
        let c = RealMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, -1.0]);
        (
            plant,
            SensorSuite::new(c, RealMatrix::identity(4, 4) * 2.0).unwrap(),
        )
    }

    #[test]
    fn noiseless_zero_start_stays_zero() {
        let (plant, sensors) = example();
        let traj = simulate_plant::<f64>(&plant.noiseless(), &sensors.noiseless(), 20, 7).unwrap();
        assert!(traj.states.iter().all(|x| x.norm() == 0.0));
        assert!((1..=20).all(|k| traj.y(k).norm() == 0.0));
    }

    #[test]
    fn identity_dynamics_noiseless_is_constant() {
        let plant = PlantModel::new(
            RealMatrix::identity(2, 2),
            RealMatrix::zeros(2, 2),
            RealMatrix::zeros(2, 2),
        )
        .unwrap();
        let sensors =
            SensorSuite::new(RealMatrix::identity(2, 2), RealMatrix::zeros(2, 2)).unwrap();
        let traj = simulate_plant::<f64>(&plant, &sensors, 5, 1).unwrap();
        assert!(traj.states.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (plant, sensors) = example();
        let a = simulate_plant::<f64>(&plant, &sensors, 50, 11).unwrap();
        let b = simulate_plant::<f64>(&plant, &sensors, 50, 11).unwrap();
        let c = simulate_plant::<f64>(&plant, &sensors, 50, 12).unwrap();
        assert_eq!(a.states, b.states);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn double_double_trajectory_matches_f64_early() {
        let (plant, sensors) = example();
        let a = simulate_plant::<f64>(&plant, &sensors, 10, 3).unwrap();
        let b = simulate_plant::<crate::DoubleDouble>(&plant, &sensors, 10, 3).unwrap();
        for k in 0..=10 {
            let d = (&a.states[k] - crate::precision::to_f64_vector(&b.states[k])).norm();
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let (plant, _) = example();
        let sensors =
            SensorSuite::new(RealMatrix::identity(3, 3), RealMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            simulate_plant::<f64>(&plant, &sensors, 5, 0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn psd_factor_handles_singular() {
        let cov = RealMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&cov);
        assert_eq!(l.row(0), l.row(1));
        assert!((&l * l.transpose() - cov).norm() < 1e-14);
    }

    #[test]
    fn zero_variance_iid_is_zero() {
        let mut p = NoiseProcess::new(NoiseSpec::GaussianIid { variance: 0.0 }, 3, 1).unwrap();
        for k in 0..100 {
            assert!(p.sample_round(k, &[1.0; 3]).iter().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn perfectly_correlated_agents_agree() {
        let spec = NoiseSpec::CrossCorrelated {
            covariance: vec![
                vec![1.0, 1.0, 0.0],
                vec![1.0, 1.0, 0.0],
                vec![0.0, 0.0, 2.0],
            ],
        };
        let mut p = NoiseProcess::new(spec, 3, 5).unwrap();
        for k in 0..200 {
            let z = p.sample_round(k, &[0.0; 3]);
            assert_eq!(z[0], z[1]);
        }
    }

    #[test]
    fn state_dependent_noise_is_capped() {
        let spec = NoiseSpec::StateDependent {
            gain: 1.0,
            cap: 0.5,
        };
        let mut p = NoiseProcess::new(spec, 1, 2).unwrap();
        let mut big = 0.0f64;
        for k in 0..20_000 {
            big = big.max(p.sample_agent_noise(0, k, 1e9).abs());
        }
        // |z| <= 0.5 * |g|, and |g| < 6 for 2e4 normal draws in practice
        assert!(big < 0.5 * 6.0);
        let mut p = NoiseProcess::new(
            NoiseSpec::StateDependent {
                gain: 1.0,
                cap: 0.5,
            },
            1,
            2,
        )
        .unwrap();
        assert_eq!(p.sample_agent_noise(0, 0, 0.0), 0.0);
    }

    #[test]
    fn invalid_specs() {
        assert!(NoiseSpec::Ar1Correlated {
            phi: 1.0,
            variance: 1.0
        }
        .validate(1)
        .is_err());
        assert!(NoiseSpec::GaussianIid { variance: -1.0 }
            .validate(1)
            .is_err());
        assert!(NoiseSpec::CrossCorrelated {
            covariance: vec![vec![1.0]]
        }
        .validate(2)
        .is_err());
        assert!(NoiseSpec::CrossCorrelated {
            covariance: vec![vec![1.0, 2.0], vec![2.0, 1.0]]
        }
        .validate(2)
        .is_err());
    }

    #[test]
    fn noise_spec_toml_shape() {
        let spec: NoiseSpec =
            toml::from_str("kind = \"ar1_correlated\"\nphi = 0.5\nvariance = 1.0").unwrap();
        assert_eq!(
            spec,
            NoiseSpec::Ar1Correlated {
                phi: 0.5,
                variance: 1.0
            }
        );
        let spec: NoiseSpec = toml::from_str("kind = \"state_dependent\"\ngain = 0.2").unwrap();
        assert_eq!(
            spec,
            NoiseSpec::StateDependent {
                gain: 0.2,
                cap: 10.0
            }
        );
    }
}
