//! Standalone synchronization experiments: agents driven by a noise process
//! instead of local Kalman filters.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::destimator::Estimate;
use crate::error::{Error, Result};
use crate::matops::RealVector;
use crate::netgraph::CommGraph;
use crate::plantsim::{stream, trial_seed, NoiseProcess, NoiseSpec};
use crate::precision::{cast_vector, norm_sq, Real};
use crate::syncctl::{
    network_step, NetworkDynamics, NetworkState, SyncDesign, TriggerParams, TriggerPolicy,
};

const STREAM_INITIAL: u64 = 0;

/// Fixed parts of a sync-only scenario.
#[derive(Debug, Clone)]
pub struct SyncSetup<T: Real> {
    pub design: SyncDesign,
    pub graph: CommGraph,
    pub inputs: Vec<DVector<T>>,
    pub initial_variance: f64,
    dynamics: NetworkDynamics<T>,
}

impl<T: Real> SyncSetup<T> {
    pub fn new(
        design: SyncDesign,
        graph: CommGraph,
        inputs: &[RealVector],
        initial_variance: f64,
    ) -> Result<Self> {
        let n = design.dim();
        if inputs.len() != graph.node_count() || inputs.iter().any(|l| l.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "{} input vectors for {} agents of dimension {n}",
                inputs.len(),
                graph.node_count()
            )));
        }
        Ok(Self {
            dynamics: NetworkDynamics::new(&design),
            inputs: inputs.iter().map(cast_vector).collect(),
            design,
            graph,
            initial_variance,
        })
    }

    pub fn dynamics(&self) -> &NetworkDynamics<T> {
        &self.dynamics
    }
}

/// One realization of the agent network.
#[derive(Debug, Clone)]
pub struct SyncTrace {
    /// `eta_i(k) - etabar(k)`, `[k][i]`.
    pub deviations: Vec<Vec<RealVector>>,
    pub consistency: Vec<f64>,
    pub triggered: Vec<Vec<bool>>,
    /// Non-trigger steps whose error reached the threshold.
    pub violations: usize,
}

impl SyncTrace {
    /// Broadcast fraction over agents and steps `k >= 1`.
    pub fn comm_rate(&self) -> f64 {
        let total: usize = self.triggered.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        self.triggered.iter().flatten().filter(|&&t| t).count() as f64 / total as f64
    }
}

fn deviations<T: Real>(network: &NetworkState<T>) -> Vec<RealVector> {
    let inv_m = T::one().quot(T::from_f64(network.len() as f64));
    let sum = network.sum();
    network
        .agents
        .iter()
        .map(|a| RealVector::from_fn(sum.len(), |r, _| (a.eta[r] - sum[r] * inv_m).to_f64()))
        .collect()
}

pub fn run_sync_trial<T: Real>(
    setup: &SyncSetup<T>,
    noise: &NoiseSpec,
    policy: &TriggerPolicy,
    horizon: usize,
    seed: u64,
) -> Result<SyncTrace> {
    let m = setup.graph.node_count();
    let n = setup.design.dim();
    let mut init_rng = stream(seed, STREAM_INITIAL);
    let sd = setup.initial_variance.sqrt();
    let initial: Vec<DVector<T>> = (0..m)
        .map(|_| {
            DVector::from_fn(n, |_, _| {
                let g: f64 = StandardNormal.sample(&mut init_rng);
                T::from_f64(sd * g)
            })
        })
        .collect();
    let mut network = NetworkState::new(initial);
    let mut process = NoiseProcess::new(noise.clone(), m, seed)?;
    let mut trace = SyncTrace {
        deviations: vec![deviations(&network)],
        consistency: Vec::with_capacity(horizon),
        triggered: Vec::with_capacity(horizon),
        violations: 0,
    };
    for k in 0..horizon {
        let norms: Vec<f64> = network
            .agents
            .iter()
            .map(|a| norm_sq(&a.eta).sqrt())
            .collect();
        let z: Vec<T> = process
            .sample_round(k, &norms)
            .into_iter()
            .map(T::from_f64)
            .collect();
        let outcome = network_step(
            &mut network,
            &setup.graph,
            &setup.dynamics,
            &z,
            &setup.inputs,
            policy,
        )?;
        trace.consistency.push(outcome.consistency_residual);
        trace.triggered.push(outcome.triggered);
        trace.deviations.push(deviations(&network));
    }
    trace.violations = network
        .event_log
        .iter()
        .filter(|e| e.k > 0 && !e.triggered && e.eps_sq >= e.threshold)
        .count();
    Ok(trace)
}

/// Monte Carlo result for one noise kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub noise: NoiseSpec,
    pub trials: usize,
    pub horizon: usize,
    pub comm_rate: Estimate,
    pub max_consistency_residual: f64,
    pub trigger_violations: usize,
    /// Per agent: max over the last half of `trace cov(eta_i - etabar)`.
    pub steady_max_cov_trace: Vec<f64>,
    /// Per agent: that maximum divided by the median over the same window.
    pub plateau_ratio: Vec<f64>,
    /// `trace cov(eta_i(k) - etabar(k))`, `[i][k]`.
    #[serde(skip)]
    pub cov_trace: Vec<Vec<f64>>,
    /// Largest consistency residual over trials at each step.
    #[serde(skip)]
    pub consistency_trace: Vec<f64>,
}

pub fn sync_monte_carlo<T: Real>(
    setup: &SyncSetup<T>,
    noise: &NoiseSpec,
    params: &TriggerParams,
    horizon: usize,
    trials: usize,
    master_seed: u64,
    workers: usize,
) -> Result<SyncSummary> {
    if trials == 0 {
        return Err(Error::DimensionMismatch(
            "at least one trial is required".into(),
        ));
    }
    params.validate()?;
    let policy = TriggerPolicy::Event(*params);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidSpec(format!("thread pool: {e}")))?;
    let traces: Vec<SyncTrace> = pool.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                run_sync_trial(
                    setup,
                    noise,
                    &policy,
                    horizon,
                    trial_seed(master_seed, t as u64),
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let m = setup.graph.node_count();
    let n = setup.design.dim();
    let count = trials as f64;
    let mut cov_trace = vec![vec![0.0; horizon + 1]; m];
    for (i, row) in cov_trace.iter_mut().enumerate() {
        for (k, slot) in row.iter_mut().enumerate() {
            let mut mean = RealVector::zeros(n);
            let mut second = 0.0;
            for t in &traces {
                let d = &t.deviations[k][i];
                mean += d;
                second += d.norm_squared();
            }
            mean /= count;
            *slot = second / count - mean.norm_squared();
        }
    }
    let start = horizon - horizon / 2 + 1;
    let mut steady_max_cov_trace = Vec::with_capacity(m);
    let mut plateau_ratio = Vec::with_capacity(m);
    for row in &cov_trace {
        let mut window: Vec<f64> = row[start.min(horizon)..].to_vec();
        window.sort_by(f64::total_cmp);
        let max = window.last().copied().unwrap_or(0.0);
        let median = window[window.len() / 2];
        steady_max_cov_trace.push(max);
        plateau_ratio.push(if median > 0.0 { max / median } else { 1.0 });
    }
    let consistency_trace: Vec<f64> = (0..horizon)
        .map(|k| traces.iter().map(|t| t.consistency[k]).fold(0.0, f64::max))
        .collect();
    let rates: Vec<f64> = traces.iter().map(SyncTrace::comm_rate).collect();
    Ok(SyncSummary {
        noise: noise.clone(),
        trials,
        horizon,
        comm_rate: Estimate::from_samples(&rates),
        max_consistency_residual: consistency_trace.iter().copied().fold(0.0, f64::max),
        trigger_violations: traces.iter().map(|t| t.violations).sum(),
        steady_max_cov_trace,
        plateau_ratio,
        cov_trace,
        consistency_trace,
    })
}
