//! Event-triggered synchronization of identical linear agents
//! `eta_i(k+1) = S eta_i + B u_i + L_i z_i`, `u_i = Gamma sum_j a_ij (etahat_j - etahat_i)`,
//! where `etahat_i(k) = S^(k - k_s) eta_i(k_s)` is the open-loop propagation of the
//! last broadcast. Agent `i` broadcasts when `|etahat_i - eta_i|^2 >= c0 + c1 rho^k`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{
    default_epsilon, is_controllable, mahler_measure, min_sym_eigenvalue,
    modified_riccati_residual, solve_modified_riccati, RealMatrix, RealVector,
};
use crate::netgraph::{CommGraph, LaplacianSpectrum};
use crate::precision::{cast_matrix, cast_vector, dist_sq, matvec, norm_sq, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerParams {
    pub c0: f64,
    pub c1: f64,
    pub rho: f64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self {
            c0: 0.1,
            c1: 1.0,
            rho: 0.95,
        }
    }
}

impl TriggerParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidTrigger(m));
        if !(self.c0.is_finite() && self.c0 >= 0.0) {
            return bad(format!("c0 = {}", self.c0));
        }
        if !(self.c1.is_finite() && self.c1 >= 0.0) {
            return bad(format!("c1 = {}", self.c1));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho = {} outside (0, 1)", self.rho));
        }
        Ok(())
    }

    /// `c0 + c1 rho^k`.
    pub fn threshold(&self, k: usize) -> f64 {
        self.c0 + self.c1 * self.rho.powf(k as f64)
    }
}

/// `Always` broadcasts every step (full transmission).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerPolicy {
    Event(TriggerParams),
    Always,
}

impl TriggerPolicy {
    pub fn threshold(&self, k: usize) -> f64 {
        match self {
            TriggerPolicy::Event(p) => p.threshold(k),
            TriggerPolicy::Always => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCertificate {
    pub mahler: f64,
    /// `(1 + mu2/mu_m) / (1 - mu2/mu_m)`; infinite when `mu2 = mu_m`.
    pub threshold: f64,
    pub feasible: bool,
}

/// Errors with [`Error::Infeasible`] unless `Mahler(S) < threshold`.
pub fn check_feasibility(
    s: &RealMatrix,
    spec: &LaplacianSpectrum,
) -> Result<FeasibilityCertificate> {
    let mahler = mahler_measure(s)?;
    let threshold = spec.feasibility_threshold()?;
    if mahler >= threshold {
        return Err(Error::Infeasible { mahler, threshold });
    }
    Ok(FeasibilityCertificate {
        mahler,
        threshold,
        feasible: true,
    })
}

/// Validates `requested` against `Mahler(S) < 1/zeta <= threshold`, or picks the
/// midpoint of that interval in `1/zeta` (`Mahler + 1` when unbounded).
pub fn choose_zeta(
    s: &RealMatrix,
    spec: &LaplacianSpectrum,
    requested: Option<f64>,
) -> Result<f64> {
    let cert = check_feasibility(s, spec)?;
    let (lo, hi) = (cert.mahler, cert.threshold);
    let out_of_range = |zeta: f64| Error::ZetaOutOfRange {
        zeta,
        mahler: lo,
        threshold: hi,
    };
    match requested {
        Some(zeta) => {
            let inv = 1.0 / zeta;
            if !(zeta > 0.0 && zeta <= 1.0) || !(lo < inv && inv <= hi) {
                return Err(out_of_range(zeta));
            }
            Ok(zeta)
        }
        None => {
            let inv = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                lo + 1.0
            };
            Ok(1.0 / inv)
        }
    }
}

/// `2/(mu2 + mu_m) * B'PS / (B'PB)`; invariant under positive scaling of `P`.
pub fn gamma_from_lyapunov(
    s: &RealMatrix,
    b: &RealVector,
    p: &RealMatrix,
    mu2: f64,
    mu_m: f64,
) -> RealVector {
    let pb = p * b;
    let bpb = b.dot(&pb);
    (s.transpose() * pb) * (2.0 / ((mu2 + mu_m) * bpb))
}

/// `1_n` when `(S, 1_n)` is controllable, otherwise the first seeded Gaussian
/// draw that is.
pub fn default_input_vector(s: &RealMatrix, seed: u64) -> Result<RealVector> {
    let n = s.nrows();
    let ones = RealVector::from_element(n, 1.0);
    if is_controllable(s, &RealMatrix::from_column_slice(n, 1, ones.as_slice()))? {
        return Ok(ones);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let b = RealVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        if is_controllable(s, &RealMatrix::from_column_slice(n, 1, b.as_slice()))? {
            return Ok(b);
        }
    }
    Err(Error::NotControllable)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncDesign {
    pub s: RealMatrix,
    pub b: RealVector,
    /// Row gain, stored as a vector.
    pub gamma: RealVector,
    pub p_lyap: RealMatrix,
    pub zeta: f64,
    pub epsilon: f64,
    pub mu2: f64,
    pub mu_m: f64,
    pub certificate: FeasibilityCertificate,
    /// Smallest eigenvalue of the Riccati-inequality residual.
    pub margin: f64,
}

impl SyncDesign {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

pub fn design_gamma(
    s: &RealMatrix,
    b: &RealVector,
    spec: &LaplacianSpectrum,
    zeta: f64,
) -> Result<SyncDesign> {
    let certificate = check_feasibility(s, spec)?;
    let zeta = choose_zeta(s, spec, Some(zeta))?;
    let epsilon = default_epsilon(s);
    let p = solve_modified_riccati(s, b, zeta, epsilon)?;
    let margin = min_sym_eigenvalue(&modified_riccati_residual(s, b, zeta, &p));
    let (mu2, mu_m) = (spec.mu2(), spec.mu_max());
    let gamma = if spec.len() <= 1 {
        RealVector::zeros(s.nrows())
    } else {
        gamma_from_lyapunov(s, b, &p, mu2, mu_m)
    };
    Ok(SyncDesign {
        s: s.clone(),
        b: b.clone(),
        gamma,
        p_lyap: p,
        zeta,
        epsilon,
        mu2,
        mu_m,
        certificate,
        margin,
    })
}

/// Per-agent dynamics `I_blocks (x) S` with input map `I_blocks (x) (B Gamma)`.
#[derive(Debug, Clone)]
pub struct NetworkDynamics<T: Real> {
    s: DMatrix<T>,
    bg: DMatrix<T>,
    gamma: DVector<T>,
    b: DVector<T>,
    blocks: usize,
}

impl<T: Real> NetworkDynamics<T> {
    pub fn new(design: &SyncDesign) -> Self {
        Self::lifted(design, 1)
    }

    /// Dynamics on `blocks` stacked copies of the design state.
    pub fn lifted(design: &SyncDesign, blocks: usize) -> Self {
        Self::with_state_matrix(design, cast_matrix(&design.s), blocks)
    }

    /// Like [`Self::lifted`], with `S` supplied at full working precision.
    ///
    /// Every party that propagates the same local states (local filters,
    /// held-state predictions) must use bit-identical `S`.
    pub fn with_state_matrix(design: &SyncDesign, s: DMatrix<T>, blocks: usize) -> Self {
        let bg = &design.b * design.gamma.transpose();
        Self {
            s,
            bg: cast_matrix(&bg),
            gamma: cast_vector(&design.gamma),
            b: cast_vector(&design.b),
            blocks,
        }
    }

    pub fn block_dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn dim(&self) -> usize {
        self.block_dim() * self.blocks
    }

    fn blockwise(&self, m: &DMatrix<T>, v: &DVector<T>) -> DVector<T> {
        let n = self.block_dim();
        let mut out = DVector::from_element(self.dim(), T::zero());
        for blk in 0..self.blocks {
            let part = matvec(m, &v.rows(blk * n, n).into_owned());
            out.rows_mut(blk * n, n).copy_from(&part);
        }
        out
    }

    pub fn apply_s(&self, v: &DVector<T>) -> DVector<T> {
        self.blockwise(&self.s, v)
    }

    /// `(I (x) B Gamma) v`.
    pub fn apply_input(&self, v: &DVector<T>) -> DVector<T> {
        self.blockwise(&self.bg, v)
    }

    /// `(I (x) Gamma) nu`: one scalar input per block.
    pub fn control_input(&self, nu: &DVector<T>) -> DVector<T> {
        let n = self.block_dim();
        DVector::from_fn(self.blocks, |blk, _| {
            let mut acc = T::zero();
            for j in 0..n {
                acc += self.gamma[j] * nu[blk * n + j];
            }
            acc
        })
    }

    pub fn input_vector(&self) -> &DVector<T> {
        &self.b
    }
}

#[derive(Debug, Clone)]
pub struct AgentState<T: Real> {
    pub eta: DVector<T>,
    pub last_broadcast_value: DVector<T>,
    pub last_broadcast_time: usize,
    /// Broadcasts after the mandatory initial one.
    pub trigger_count: usize,
    held: DVector<T>,
    held_time: usize,
}

impl<T: Real> AgentState<T> {
    /// State at `k = 0`, already broadcast.
    pub fn new(eta: DVector<T>) -> Self {
        Self {
            last_broadcast_value: eta.clone(),
            held: eta.clone(),
            eta,
            last_broadcast_time: 0,
            trigger_count: 0,
            held_time: 0,
        }
    }

    fn broadcast(&mut self, k: usize) {
        self.last_broadcast_value = self.eta.clone();
        self.last_broadcast_time = k;
        self.held = self.eta.clone();
        self.held_time = k;
    }

    /// Moves the cached held state forward to `k`.
    fn advance_held(&mut self, k: usize, dynamics: &NetworkDynamics<T>) -> Result<&DVector<T>> {
        if k < self.held_time {
            self.held = held_state(self, k, dynamics)?;
        } else {
            while self.held_time < k {
                self.held = dynamics.apply_s(&self.held);
                self.held_time += 1;
            }
        }
        self.held_time = k;
        Ok(&self.held)
    }
}

/// `S^(k - k_s) eta(k_s)`.
pub fn held_state<T: Real>(
    agent: &AgentState<T>,
    k: usize,
    dynamics: &NetworkDynamics<T>,
) -> Result<DVector<T>> {
    if k < agent.last_broadcast_time {
        return Err(Error::ClockSkew {
            requested: k,
            broadcast: agent.last_broadcast_time,
        });
    }
    if k >= agent.held_time && agent.held_time >= agent.last_broadcast_time {
        let mut h = agent.held.clone();
        for _ in agent.held_time..k {
            h = dynamics.apply_s(&h);
        }
        return Ok(h);
    }
    let mut h = agent.last_broadcast_value.clone();
    for _ in agent.last_broadcast_time..k {
        h = dynamics.apply_s(&h);
    }
    Ok(h)
}

/// One agent's trigger check at a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub k: usize,
    pub agent: usize,
    pub triggered: bool,
    pub eps_sq: f64,
    pub threshold: f64,
}

/// Squared prediction error, threshold and firing decision at the agent's current step.
pub fn evaluate_trigger<T: Real>(
    agent: &AgentState<T>,
    k: usize,
    policy: &TriggerPolicy,
    dynamics: &NetworkDynamics<T>,
) -> Result<(bool, f64, f64)> {
    let held = held_state(agent, k, dynamics)?;
    let eps_sq = dist_sq(&held, &agent.eta);
    let threshold = policy.threshold(k);
    let fire = k == 0 || matches!(policy, TriggerPolicy::Always) || eps_sq - threshold >= 0.0;
    Ok((fire, eps_sq, threshold))
}

#[derive(Debug, Clone)]
pub struct NetworkState<T: Real> {
    pub agents: Vec<AgentState<T>>,
    pub k: usize,
    pub event_log: Vec<EventRecord>,
    /// Relative residual of the average recursion at each completed step.
    pub consistency: Vec<f64>,
    pub record_events: bool,
}

impl<T: Real> NetworkState<T> {
    /// All agents broadcast their initial states at `k = 0`.
    pub fn new(initial: Vec<DVector<T>>) -> Self {
        let event_log = (0..initial.len())
            .map(|agent| EventRecord {
                k: 0,
                agent,
                triggered: true,
                eps_sq: 0.0,
                threshold: 0.0,
            })
            .collect();
        Self {
            agents: initial.into_iter().map(AgentState::new).collect(),
            k: 0,
            event_log,
            consistency: Vec::new(),
            record_events: true,
        }
    }

    pub fn without_log(mut self) -> Self {
        self.record_events = false;
        self.event_log.clear();
        self
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn sum(&self) -> DVector<T> {
        let mut acc = DVector::from_element(self.agents[0].eta.len(), T::zero());
        for a in &self.agents {
            acc += &a.eta;
        }
        acc
    }
}

/// `sum_j a_ij (etahat_j - etahat_i)`.
pub fn consensus_term<T: Real>(i: usize, held: &[DVector<T>], graph: &CommGraph) -> DVector<T> {
    let mut nu = DVector::from_element(held[i].len(), T::zero());
    for (j, w) in graph.neighbors(i) {
        let w = T::from_f64(w);
        for r in 0..nu.len() {
            nu[r] += w * (held[j][r] - held[i][r]);
        }
    }
    nu
}

/// `u_i(k)`: one scalar per block of the state.
pub fn control_input<T: Real>(
    i: usize,
    network: &NetworkState<T>,
    graph: &CommGraph,
    dynamics: &NetworkDynamics<T>,
    k: usize,
) -> Result<DVector<T>> {
    let held = network
        .agents
        .iter()
        .map(|a| held_state(a, k, dynamics))
        .collect::<Result<Vec<_>>>()?;
    Ok(dynamics.control_input(&consensus_term(i, &held, graph)))
}

/// Which agents broadcast during one synchronous round.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub triggered: Vec<bool>,
    pub consistency_residual: f64,
}

/// One synchronous round from `k` to `k + 1`:
/// held states at `k`, all inputs, all state updates, clock advance, then
/// triggers and broadcasts on the new states.
pub fn network_step<T: Real>(
    network: &mut NetworkState<T>,
    graph: &CommGraph,
    dynamics: &NetworkDynamics<T>,
    noises: &[T],
    inputs: &[DVector<T>],
    policy: &TriggerPolicy,
) -> Result<StepOutcome> {
    let m = network.len();
    let d = dynamics.dim();
    if graph.node_count() != m || noises.len() != m || inputs.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} agents, graph {}, {} noises, {} input vectors",
            graph.node_count(),
            noises.len(),
            inputs.len()
        )));
    }
    if network.agents.iter().any(|a| a.eta.len() != d) || inputs.iter().any(|l| l.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "agent states must have dimension {d}"
        )));
    }
    let k = network.k;

    let mut held = Vec::with_capacity(m);
    for agent in network.agents.iter_mut() {
        held.push(agent.advance_held(k, dynamics)?.clone());
    }

    let before = network.sum();
    let mut drive = DVector::from_element(d, T::zero());
    for i in 0..m {
        let nu = consensus_term(i, &held, graph);
        let agent = &mut network.agents[i];
        let mut next = dynamics.apply_s(&agent.eta) + dynamics.apply_input(&nu);
        for r in 0..d {
            let lz = inputs[i][r] * noises[i];
            next[r] += lz;
            drive[r] += lz;
        }
        agent.eta = next;
    }
    network.k = k + 1;

    let after = network.sum();
    let expected = dynamics.apply_s(&before) + drive;
    let residual = dist_sq(&after, &expected).sqrt() / norm_sq(&after).sqrt().max(1.0);
    network.consistency.push(residual);

    let mut triggered = vec![false; m];
    for (i, agent) in network.agents.iter_mut().enumerate() {
        agent.advance_held(k + 1, dynamics)?;
        let (fire, eps_sq, threshold) = evaluate_trigger(agent, k + 1, policy, dynamics)?;
        if fire {
            agent.broadcast(k + 1);
            agent.trigger_count += 1;
        }
        triggered[i] = fire;
        if network.record_events {
            network.event_log.push(EventRecord {
                k: k + 1,
                agent: i,
                triggered: fire,
                eps_sq,
                threshold,
            });
        }
    }
    Ok(StepOutcome {
        triggered,
        consistency_residual: residual,
    })
}
