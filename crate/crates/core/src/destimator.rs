//! Event-based distributed estimator.
//!
//! Sensor `i` runs its local filter, feeds the filter output `z_i` into a
//! synchronization network over the stacked local states (`m` blocks of `S`,
//! input vector `e_i (x) 1`), and reads its estimate as `m F eta_i`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomp::{DecompOptions, Decomposition, LocalFilterState, Realization};
use crate::error::{Error, Result};
use crate::kalman::{run_centralized, KalmanDesign};
use crate::matops::RealVector;
use crate::netgraph::CommGraph;
use crate::plantsim::{simulate_plant, trial_seed, PlantModel, SensorSuite, Trajectory};
use crate::precision::{matvec, norm_sq, to_f64_matrix, to_f64_vector, Real};
use crate::syncctl::{
    choose_zeta, default_input_vector, design_gamma, network_step, EventRecord, NetworkDynamics,
    NetworkState, SyncDesign, TriggerParams, TriggerPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    Event,
    Full,
}

/// Everything fixed across trials: designs, decomposition and lifted dynamics.
#[derive(Debug, Clone)]
pub struct EstimatorSetup<T: Real> {
    pub plant: PlantModel,
    pub sensors: SensorSuite,
    pub graph: CommGraph,
    /// Centralized filter running on the decomposed gain.
    pub kalman: KalmanDesign,
    /// Design before any perturbation of the gain.
    pub nominal: KalmanDesign,
    pub decomposition: Decomposition,
    pub realization: Realization<T>,
    pub sync: SyncDesign,
    dynamics: NetworkDynamics<T>,
    inputs: Vec<DVector<T>>,
    /// `m [F_1 .. F_m]`.
    local_readout: DMatrix<T>,
}

/// Optional overrides for [`EstimatorSetup::build`].
#[derive(Debug, Clone, Default)]
pub struct SetupOptions {
    pub zeta: Option<f64>,
    pub b: Option<RealVector>,
    pub decomp: DecompOptions,
    pub b_seed: u64,
}

impl<T: Real> EstimatorSetup<T> {
    pub fn build(
        plant: &PlantModel,
        sensors: &SensorSuite,
        graph: &CommGraph,
        opts: &SetupOptions,
    ) -> Result<Self> {
        let m = sensors.count();
        if graph.node_count() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} sensors on a {}-node graph",
                graph.node_count()
            )));
        }
        let nominal = KalmanDesign::design(plant, sensors)?;
        let decomposition = Decomposition::build_with(&nominal, sensors, &opts.decomp)?;
        let kalman = nominal.with_gain(decomposition.k_used.clone());
        let realization = decomposition.realize::<T>()?;
        let s64 = to_f64_matrix(&realization.s);
        let spec = graph.spectrum()?;
        let zeta = choose_zeta(&s64, &spec, opts.zeta)?;
        let b = match &opts.b {
            Some(b) => b.clone(),
            None => default_input_vector(&s64, opts.b_seed)?,
        };
        let sync = design_gamma(&s64, &b, &spec, zeta)?;
        let dynamics = NetworkDynamics::with_state_matrix(&sync, realization.s.clone(), m);
        let n = plant.dim();
        let inputs = (0..m)
            .map(|i| {
                let mut l = DVector::from_element(m * n, T::zero());
                l.rows_mut(i * n, n).copy_from(&realization.ones);
                l
            })
            .collect();
        let local_readout = realization.fusion_matrix() * T::from_f64(m as f64);
        Ok(Self {
            plant: plant.clone(),
            sensors: sensors.clone(),
            graph: graph.clone(),
            kalman,
            nominal,
            decomposition,
            realization,
            sync,
            dynamics,
            inputs,
            local_readout,
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.count()
    }

    pub fn state_dim(&self) -> usize {
        self.plant.dim()
    }

    pub fn dynamics(&self) -> &NetworkDynamics<T> {
        &self.dynamics
    }

    /// `eta_i` block `j` as a vector.
    fn block(&self, eta: &DVector<T>, j: usize) -> DVector<T> {
        let n = self.state_dim();
        eta.rows(j * n, n).into_owned()
    }

    /// Local estimate `m F eta_i`.
    pub fn local_estimate(&self, eta: &DVector<T>) -> DVector<T> {
        matvec(&self.local_readout, eta)
    }
}

/// Sensor `i`'s local filter and current estimate; its network state lives in
/// the accompanying [`NetworkState`].
#[derive(Debug, Clone)]
pub struct SensorNode<T: Real> {
    pub index: usize,
    pub local_filter: LocalFilterState<T>,
    pub x_breve: DVector<T>,
}

/// Nodes and network state at `k = 0`: all zero, initial round broadcast.
pub fn initial_state<T: Real>(setup: &EstimatorSetup<T>) -> (Vec<SensorNode<T>>, NetworkState<T>) {
    let (m, n) = (setup.sensor_count(), setup.state_dim());
    let nodes = (0..m)
        .map(|index| SensorNode {
            index,
            local_filter: LocalFilterState::zeros(n),
            x_breve: DVector::from_element(n, T::zero()),
        })
        .collect();
    let network = NetworkState::new(vec![DVector::from_element(m * n, T::zero()); m]);
    (nodes, network)
}

/// One round of the estimator from `k` to `k + 1` given `y(k + 1)`.
pub fn step<T: Real>(
    setup: &EstimatorSetup<T>,
    nodes: &mut [SensorNode<T>],
    network: &mut NetworkState<T>,
    y_next: &DVector<T>,
    policy: &TriggerPolicy,
) -> Result<Vec<bool>> {
    let m = setup.sensor_count();
    if nodes.len() != m || y_next.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} sensors, {} nodes, {} measurements",
            nodes.len(),
            y_next.len()
        )));
    }
    let mut z = Vec::with_capacity(m);
    for node in nodes.iter_mut() {
        node.local_filter = setup
            .realization
            .local_filter_step(&node.local_filter, y_next[node.index]);
        z.push(node.local_filter.z_last);
    }
    let outcome = network_step(
        network,
        &setup.graph,
        &setup.dynamics,
        &z,
        &setup.inputs,
        policy,
    )?;
    for node in nodes.iter_mut() {
        node.x_breve = setup.local_estimate(&network.agents[node.index].eta);
    }
    Ok(outcome.triggered)
}

/// Per-step record of one estimator run.
#[derive(Debug, Clone)]
pub struct TrialTrace {
    pub mode: TrialMode,
    /// `x_breve_i(k) - x(k)`, indexed `[k][i]`.
    pub local_errors: Vec<Vec<RealVector>>,
    /// `xhat(k) - x(k)`.
    pub central_errors: Vec<RealVector>,
    /// `[k][i]`; row 0 is the mandatory initial broadcast.
    pub triggered: Vec<Vec<bool>>,
    /// `|(1/m) sum_i x_breve_i(k) - xhat(k)|`.
    pub avg_identity: Vec<f64>,
    /// `|sum_i F_i xi_i(k) - xhat(k)|`.
    pub lossless: Vec<f64>,
    /// `max_j |xi_j(k) - sum_i eta_ij(k)|`.
    pub split_identity: Vec<f64>,
    /// Relative residual of the network average recursion, `k >= 1`.
    pub consistency: Vec<f64>,
    pub max_xhat_norm: f64,
    pub event_log: Vec<EventRecord>,
}

impl TrialTrace {
    pub fn horizon(&self) -> usize {
        self.central_errors.len() - 1
    }

    pub fn sensor_count(&self) -> usize {
        self.local_errors[0].len()
    }

    /// `|x_breve_i(k) - x(k)|^2`.
    pub fn sq_error(&self, k: usize, i: usize) -> f64 {
        self.local_errors[k][i].norm_squared()
    }

    /// Non-triggered log entries whose error reached the threshold.
    pub fn trigger_violations(&self) -> usize {
        self.event_log
            .iter()
            .filter(|e| e.k > 0 && !e.triggered && e.eps_sq >= e.threshold)
            .count()
    }
}

/// Runs the estimator along `traj`, comparing against `xhat`.
pub fn run_on_trajectory<T: Real>(
    setup: &EstimatorSetup<T>,
    traj: &Trajectory<T>,
    xhat: &[DVector<T>],
    mode: TrialMode,
    params: &TriggerParams,
) -> Result<TrialTrace> {
    let policy = match mode {
        TrialMode::Event => TriggerPolicy::Event(*params),
        TrialMode::Full => TriggerPolicy::Always,
    };
    let (m, n) = (setup.sensor_count(), setup.state_dim());
    let horizon = traj.horizon();
    let (mut nodes, mut network) = initial_state(setup);

    let mut trace = TrialTrace {
        mode,
        local_errors: Vec::with_capacity(horizon + 1),
        central_errors: Vec::with_capacity(horizon + 1),
        triggered: Vec::with_capacity(horizon + 1),
        avg_identity: Vec::with_capacity(horizon + 1),
        lossless: Vec::with_capacity(horizon + 1),
        split_identity: Vec::with_capacity(horizon + 1),
        consistency: Vec::with_capacity(horizon),
        max_xhat_norm: 0.0,
        event_log: Vec::new(),
    };
    let inv_m = T::one().quot(T::from_f64(m as f64));
    let mut record =
        |k: usize, nodes: &[SensorNode<T>], network: &NetworkState<T>, fired: Vec<bool>| {
            let x = traj.x(k);
            let xh = &xhat[k];
            trace.central_errors.push(to_f64_vector(&(xh - x)));
            trace.local_errors.push(
                nodes
                    .iter()
                    .map(|nd| to_f64_vector(&(&nd.x_breve - x)))
                    .collect(),
            );
            trace.triggered.push(fired);

            let mut avg = DVector::from_element(n, T::zero());
            for nd in nodes {
                avg += &nd.x_breve;
            }
            avg *= inv_m;
            trace.avg_identity.push(norm_sq(&(avg - xh)).sqrt());

            let xis: Vec<DVector<T>> = nodes.iter().map(|nd| nd.local_filter.xi.clone()).collect();
            trace
                .lossless
                .push(norm_sq(&(setup.realization.fuse(&xis) - xh)).sqrt());

            let mut split = 0.0f64;
            for (j, xi) in xis.iter().enumerate() {
                let mut sum = DVector::from_element(n, T::zero());
                for agent in &network.agents {
                    sum += setup.block(&agent.eta, j);
                }
                split = split.max(norm_sq(&(sum - xi)).sqrt());
            }
            trace.split_identity.push(split);
            trace.max_xhat_norm = trace.max_xhat_norm.max(norm_sq(xh).sqrt());
        };

    record(0, &nodes, &network, vec![true; m]);
    for k in 1..=horizon {
        let fired = step(setup, &mut nodes, &mut network, traj.y(k), &policy)?;
        record(k, &nodes, &network, fired);
    }
    trace.consistency = std::mem::take(&mut network.consistency);
    trace.event_log = std::mem::take(&mut network.event_log);
    Ok(trace)
}

/// Simulates a plant trajectory for `seed` and runs the requested modes on it.
pub fn run_trial<T: Real>(
    setup: &EstimatorSetup<T>,
    params: &TriggerParams,
    horizon: usize,
    seed: u64,
    modes: &[TrialMode],
) -> Result<Vec<TrialTrace>> {
    let traj = simulate_plant::<T>(&setup.plant, &setup.sensors, horizon, seed)?;
    let xhat = run_centralized(&setup.kalman, &traj)?;
    modes
        .iter()
        .map(|&mode| run_on_trajectory(setup, &traj, &xhat, mode, params))
        .collect()
}

fn steady_start(horizon: usize) -> usize {
    horizon - horizon / 2 + 1
}

/// Scalar metrics of one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Mean of `|x_breve_i - x|^2` over the steady window (last half).
    pub steady_mse: Vec<f64>,
    pub whole_mse: Vec<f64>,
    pub central_steady_mse: f64,
    /// Broadcasts over agent-steps, `k >= 1`.
    pub comm_rate: f64,
    pub max_avg_identity: f64,
    pub max_lossless: f64,
    pub max_split_identity: f64,
    pub max_consistency: f64,
    pub max_xhat_norm: f64,
    pub trigger_violations: usize,
}

impl RunMetrics {
    pub fn from_trace(trace: &TrialTrace) -> Self {
        let horizon = trace.horizon();
        let m = trace.sensor_count();
        let start = steady_start(horizon);
        let window = (horizon + 1 - start) as f64;
        let steady_mse = (0..m)
            .map(|i| (start..=horizon).map(|k| trace.sq_error(k, i)).sum::<f64>() / window)
            .collect();
        let whole_mse = (0..m)
            .map(|i| (1..=horizon).map(|k| trace.sq_error(k, i)).sum::<f64>() / horizon as f64)
            .collect();
        let central_steady_mse = (start..=horizon)
            .map(|k| trace.central_errors[k].norm_squared())
            .sum::<f64>()
            / window;
        let fired: usize = trace.triggered[1..]
            .iter()
            .map(|row| row.iter().filter(|&&t| t).count())
            .sum();
        let fold_max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        Self {
            steady_mse,
            whole_mse,
            central_steady_mse,
            comm_rate: fired as f64 / (m * horizon) as f64,
            max_avg_identity: fold_max(&trace.avg_identity),
            max_lossless: fold_max(&trace.lossless),
            max_split_identity: fold_max(&trace.split_identity),
            max_consistency: fold_max(&trace.consistency),
            max_xhat_norm: trace.max_xhat_norm,
            trigger_violations: trace.trigger_violations(),
        }
    }

    pub fn mean_steady_mse(&self) -> f64 {
        self.steady_mse.iter().sum::<f64>() / self.steady_mse.len() as f64
    }

    pub fn mean_whole_mse(&self) -> f64 {
        self.whole_mse.iter().sum::<f64>() / self.whole_mse.len() as f64
    }
}

/// Compact per-trial result kept by the Monte Carlo driver.
#[derive(Debug, Clone)]
pub struct TrialSummary {
    pub trial: usize,
    pub event: Option<RunMetrics>,
    pub full: Option<RunMetrics>,
    /// `|x_breve_i(k) - x(k)|^2` per mode, `[k][i]`.
    pub event_sq_err: Option<Vec<Vec<f64>>>,
    pub full_sq_err: Option<Vec<Vec<f64>>>,
    pub central_sq_err: Vec<f64>,
    pub event_triggered: Option<Vec<Vec<bool>>>,
    pub event_avg_identity: Option<Vec<f64>>,
    pub full_avg_identity: Option<Vec<f64>>,
}

fn summarize(trial: usize, traces: Vec<TrialTrace>) -> TrialSummary {
    let mut out = TrialSummary {
        trial,
        event: None,
        full: None,
        event_sq_err: None,
        full_sq_err: None,
        central_sq_err: Vec::new(),
        event_triggered: None,
        event_avg_identity: None,
        full_avg_identity: None,
    };
    for trace in traces {
        let sq: Vec<Vec<f64>> = (0..=trace.horizon())
            .map(|k| {
                (0..trace.sensor_count())
                    .map(|i| trace.sq_error(k, i))
                    .collect()
            })
            .collect();
        out.central_sq_err = trace
            .central_errors
            .iter()
            .map(|e| e.norm_squared())
            .collect();
        let metrics = RunMetrics::from_trace(&trace);
        match trace.mode {
            TrialMode::Event => {
                out.event = Some(metrics);
                out.event_sq_err = Some(sq);
                out.event_avg_identity = Some(trace.avg_identity);
                out.event_triggered = Some(trace.triggered);
            }
            TrialMode::Full => {
                out.full = Some(metrics);
                out.full_sq_err = Some(sq);
                out.full_avg_identity = Some(trace.avg_identity);
            }
        }
    }
    out
}

/// Sample mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Self { mean, ci95: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            ci95: 1.96 * (var / n).sqrt(),
        }
    }
}

/// Per-mode aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub steady_mse: Vec<Estimate>,
    pub whole_mse: Vec<Estimate>,
    pub comm_rate: Estimate,
    /// Trial-averaged `|x_breve_i(k) - x(k)|^2`, `[i][k]`.
    #[serde(skip)]
    pub mse_trace: Vec<Vec<f64>>,
    pub max_avg_identity: f64,
    /// Max over trials of `max_avg_identity / (1 + max_k |xhat(k)|)`.
    pub max_avg_identity_relative: f64,
    pub max_lossless: f64,
    pub max_split_identity: f64,
    pub max_consistency: f64,
    pub trigger_violations: usize,
}

/// Relative MSE increase of event over full transmission on paired trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub steady: Estimate,
    pub whole: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub horizon: usize,
    pub event: Option<ModeSummary>,
    pub full: Option<ModeSummary>,
    pub perf_loss: Option<LossEstimate>,
    pub central_steady_mse: Estimate,
    /// Trial-averaged `|xhat(k) - x(k)|^2`.
    #[serde(skip)]
    pub central_mse_trace: Vec<f64>,
}

fn mode_summary<'a>(
    metrics: impl Iterator<Item = &'a RunMetrics> + Clone,
    traces: impl Iterator<Item = &'a Vec<Vec<f64>>>,
    horizon: usize,
    m: usize,
) -> ModeSummary {
    let collect = |f: &dyn Fn(&RunMetrics) -> f64| -> Vec<f64> { metrics.clone().map(f).collect() };
    let steady_mse = (0..m)
        .map(|i| Estimate::from_samples(&collect(&|r| r.steady_mse[i])))
        .collect();
    let whole_mse = (0..m)
        .map(|i| Estimate::from_samples(&collect(&|r| r.whole_mse[i])))
        .collect();
    let fold = |f: &dyn Fn(&RunMetrics) -> f64| collect(f).into_iter().fold(0.0, f64::max);
    let mut mse_trace = vec![vec![0.0; horizon + 1]; m];
    let mut count = 0usize;
    for sq in traces {
        count += 1;
        for (k, row) in sq.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                mse_trace[i][k] += v;
            }
        }
    }
    mse_trace
        .iter_mut()
        .flatten()
        .for_each(|v| *v /= count as f64);
    ModeSummary {
        steady_mse,
        whole_mse,
        comm_rate: Estimate::from_samples(&collect(&|r| r.comm_rate)),
        mse_trace,
        max_avg_identity: fold(&|r| r.max_avg_identity),
        max_avg_identity_relative: fold(&|r| r.max_avg_identity / (1.0 + r.max_xhat_norm)),
        max_lossless: fold(&|r| r.max_lossless),
        max_split_identity: fold(&|r| r.max_split_identity),
        max_consistency: fold(&|r| r.max_consistency),
        trigger_violations: metrics.clone().map(|r| r.trigger_violations).sum(),
    }
}

/// Ratio of mean paired differences to the mean full-transmission MSE, with a
/// delta-method half-width.
fn paired_loss(event: &[f64], full: &[f64]) -> Estimate {
    let diffs: Vec<f64> = event.iter().zip(full).map(|(e, f)| e - f).collect();
    let d = Estimate::from_samples(&diffs);
    let base = full.iter().sum::<f64>() / full.len() as f64;
    Estimate {
        mean: d.mean / base,
        ci95: d.ci95 / base,
    }
}

/// Aggregates trial summaries in trial order.
pub fn aggregate(summaries: &[TrialSummary], horizon: usize, m: usize) -> MonteCarloSummary {
    let has_event = summaries.iter().all(|s| s.event.is_some());
    let has_full = summaries.iter().all(|s| s.full.is_some());
    let event = has_event.then(|| {
        mode_summary(
            summaries.iter().filter_map(|s| s.event.as_ref()),
            summaries.iter().filter_map(|s| s.event_sq_err.as_ref()),
            horizon,
            m,
        )
    });
    let full = has_full.then(|| {
        mode_summary(
            summaries.iter().filter_map(|s| s.full.as_ref()),
            summaries.iter().filter_map(|s| s.full_sq_err.as_ref()),
            horizon,
            m,
        )
    });
    let perf_loss = (has_event && has_full).then(|| {
        let pick =
            |f: &dyn Fn(&TrialSummary) -> f64| -> Vec<f64> { summaries.iter().map(f).collect() };
        LossEstimate {
            steady: paired_loss(
                &pick(&|s| s.event.as_ref().unwrap().mean_steady_mse()),
                &pick(&|s| s.full.as_ref().unwrap().mean_steady_mse()),
            ),
            whole: paired_loss(
                &pick(&|s| s.event.as_ref().unwrap().mean_whole_mse()),
                &pick(&|s| s.full.as_ref().unwrap().mean_whole_mse()),
            ),
        }
    });
    let central: Vec<f64> = summaries
        .iter()
        .map(|s| {
            s.event
                .as_ref()
                .or(s.full.as_ref())
                .map_or(f64::NAN, |r| r.central_steady_mse)
        })
        .collect();
    let mut central_mse_trace = vec![0.0; horizon + 1];
    for s in summaries {
        for (k, v) in s.central_sq_err.iter().enumerate() {
            central_mse_trace[k] += v;
        }
    }
    central_mse_trace
        .iter_mut()
        .for_each(|v| *v /= summaries.len() as f64);
    MonteCarloSummary {
        trials: summaries.len(),
        horizon,
        event,
        full,
        perf_loss,
        central_steady_mse: Estimate::from_samples(&central),
        central_mse_trace,
    }
}

/// Runs `trials` seeded trials on `workers` threads (0 = all cores).
///
/// Trial `t` uses seed `trial_seed(master_seed, t)`; results are identical
/// for any worker count.
pub fn monte_carlo<T: Real>(
    setup: &EstimatorSetup<T>,
    params: &TriggerParams,
    horizon: usize,
    trials: usize,
    master_seed: u64,
    modes: &[TrialMode],
    workers: usize,
) -> Result<(MonteCarloSummary, Vec<TrialSummary>)> {
    if trials == 0 {
        return Err(Error::DimensionMismatch(
            "at least one trial is required".into(),
        ));
    }
    params.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    let summaries: Vec<TrialSummary> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let traces = run_trial(
                    setup,
                    params,
                    horizon,
                    trial_seed(master_seed, t as u64),
                    modes,
                )?;
                Ok(summarize(t, traces))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = aggregate(&summaries, horizon, setup.sensor_count());
    Ok((summary, summaries))
}
