//! Configuration, presets, experiment orchestration and output files.

mod config;
mod output;
pub mod sync_only;

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

pub use config::{
    load_config, DesignSection, EstimationScenario, GraphSpec, PlantSection, RunConfig, RunMode,
    RunSection, SensorSection, SyncScenario, SyncSection,
};
pub use sync_only::{run_sync_trial, sync_monte_carlo, SyncSetup, SyncSummary, SyncTrace};

use crate::decomp::DecompOptions;
use crate::destimator::{
    monte_carlo, run_trial, Estimate, EstimatorSetup, MonteCarloSummary, SetupOptions, TrialMode,
};
use crate::error::{Error, Result};
use crate::kalman::spectral_radius;
use crate::matops::RealMatrix;
use crate::plantsim::trial_seed;
use crate::precision::{to_f64_matrix, to_f64_vector, DoubleDouble, Precision, Real};
use crate::syncctl::{
    choose_zeta, design_gamma, FeasibilityCertificate, SyncDesign, TriggerParams,
};

use output::Outputs;

const PRESETS: &[(&str, &str)] = &[
    (
        "ring_example",
        include_str!("../../presets/ring_example.toml"),
    ),
    ("sync_demo", include_str!("../../presets/sync_demo.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// Raw TOML of a bundled preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let text = preset_source(name).ok_or_else(|| {
        let known: Vec<_> = preset_names().collect();
        Error::Parse(format!(
            "unknown preset {name:?} (known: {})",
            known.join(", ")
        ))
    })?;
    RunConfig::from_toml_str(text)
}

/// Invocation settings that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where to write CSV/JSON artifacts; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
}

fn rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncDesignReport {
    pub gamma: Vec<f64>,
    pub b: Vec<f64>,
    pub zeta: f64,
    pub epsilon: f64,
    pub laplacian_spectrum: Vec<f64>,
    pub mu2: f64,
    pub mu_m: f64,
    pub certificate: FeasibilityCertificate,
    /// Smallest eigenvalue of the strict-inequality residual; positive when certified.
    pub riccati_margin: f64,
    pub p_lyap: Vec<Vec<f64>>,
}

impl SyncDesignReport {
    fn new(design: &SyncDesign, laplacian_spectrum: Vec<f64>) -> Self {
        Self {
            gamma: design.gamma.iter().copied().collect(),
            b: design.b.iter().copied().collect(),
            zeta: design.zeta,
            epsilon: design.epsilon,
            laplacian_spectrum,
            mu2: design.mu2,
            mu_m: design.mu_m,
            certificate: design.certificate,
            riccati_margin: design.margin,
            p_lyap: rows(&design.p_lyap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub gain: Vec<Vec<f64>>,
    pub prediction_covariance: Vec<Vec<f64>>,
    pub prediction_covariance_trace: f64,
    pub filtered_covariance_trace: f64,
    pub closed_loop_spectral_radius: f64,
    /// Local-filter state matrix `S = Lambda + 1 beta'` in the simulated coordinates.
    pub local_filter_matrix: Vec<Vec<f64>>,
    pub local_filter_beta: Vec<f64>,
    /// Normalized `|det(mu I - S)|` at the plant eigenvalues `mu`.
    pub local_filter_spectrum_mismatch: f64,
    /// Gain perturbations needed to meet the eigenvalue assumptions.
    pub gain_perturbations: usize,
}

/// Achieved communication/accuracy pair of the configured trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tradeoff {
    pub trigger: TriggerParams,
    pub comm_rate: Estimate,
    pub perf_loss_steady: Estimate,
    pub perf_loss_whole: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationReport {
    pub seed: u64,
    pub precision: Precision,
    pub filter: FilterReport,
    pub sync: SyncDesignReport,
    pub results: MonteCarloSummary,
    pub tradeoff: Option<Tradeoff>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncReport {
    pub seed: u64,
    pub precision: Precision,
    pub sync: SyncDesignReport,
    pub scenarios: Vec<SyncSummary>,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Estimation(Box<EstimationReport>),
    SyncOnly(Box<SyncReport>),
}

impl Report {
    pub fn config(&self) -> &RunConfig {
        match self {
            Report::Estimation(r) => &r.config,
            Report::SyncOnly(r) => &r.config,
        }
    }

    pub fn sync_design(&self) -> &SyncDesignReport {
        match self {
            Report::Estimation(r) => &r.sync,
            Report::SyncOnly(r) => &r.sync,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One-screen human summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let d = self.sync_design();
        let cert = &d.certificate;
        let _ = writeln!(
            s,
            "feasibility: Mahler = {:.4} < threshold = {:.4}  (mu2 = {:.4}, mu_m = {:.4}, zeta = {})",
            cert.mahler, cert.threshold, d.mu2, d.mu_m, d.zeta
        );
        let _ = writeln!(
            s,
            "Gamma = {:?}  (Riccati margin {:.3e})",
            d.gamma, d.riccati_margin
        );
        match self {
            Report::Estimation(r) => {
                let res = &r.results;
                let _ = writeln!(
                    s,
                    "trials = {}, horizon = {}, central steady MSE = {:.4} (filtered cov trace {:.4})",
                    res.trials, res.horizon, res.central_steady_mse.mean, r.filter.filtered_covariance_trace
                );
                for (label, mode) in [("event", &res.event), ("full", &res.full)] {
                    let Some(mode) = mode else { continue };
                    let mse: Vec<String> = mode
                        .steady_mse
                        .iter()
                        .map(|e| format!("{:.4}+-{:.4}", e.mean, e.ci95))
                        .collect();
                    let _ = writeln!(
                        s,
                        "{label:>5}: comm rate {:.4}+-{:.4}, steady MSE [{}]",
                        mode.comm_rate.mean,
                        mode.comm_rate.ci95,
                        mse.join(", ")
                    );
                    let _ = writeln!(
                        s,
                        "       identity residual {:.2e} (relative {:.2e}), consistency {:.2e}, trigger violations {}",
                        mode.max_avg_identity, mode.max_avg_identity_relative, mode.max_consistency, mode.trigger_violations
                    );
                }
                if let Some(t) = &r.tradeoff {
                    let _ = writeln!(
                        s,
                        "performance loss: steady {:.4}+-{:.4}, whole {:.4}+-{:.4}",
                        t.perf_loss_steady.mean,
                        t.perf_loss_steady.ci95,
                        t.perf_loss_whole.mean,
                        t.perf_loss_whole.ci95
                    );
                }
            }
            Report::SyncOnly(r) => {
                for sc in &r.scenarios {
                    let _ = writeln!(
                        s,
                        "{:>16}: comm rate {:.4}, consistency {:.2e}, steady cov trace max {:?}, plateau ratio {:?}, violations {}",
                        sc.noise.kind(),
                        sc.comm_rate.mean,
                        sc.max_consistency_residual,
                        sc.steady_max_cov_trace.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
                        sc.plateau_ratio.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>(),
                        sc.trigger_violations
                    );
                }
            }
        }
        s
    }
}

/// Reloads the configuration echoed in an aggregate JSON document.
pub fn config_from_aggregate(json: &str) -> Result<RunConfig> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    let config = value
        .get("config")
        .ok_or_else(|| Error::Parse("aggregate has no config echo".into()))?;
    RunConfig::from_json_str(&config.to_string())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub aggregate_json: String,
    pub files: Vec<PathBuf>,
}

pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    match (config.run.mode.is_estimation(), config.run.precision) {
        (true, Precision::F64) => run_estimation::<f64>(config, opts),
        (true, Precision::DoubleDouble) => run_estimation::<DoubleDouble>(config, opts),
        (false, Precision::F64) => run_sync::<f64>(config, opts),
        (false, Precision::DoubleDouble) => run_sync::<DoubleDouble>(config, opts),
    }
}

fn modes(mode: RunMode) -> Vec<TrialMode> {
    match mode {
        RunMode::Event => vec![TrialMode::Event],
        RunMode::Full => vec![TrialMode::Full],
        _ => vec![TrialMode::Event, TrialMode::Full],
    }
}

pub fn build_estimator<T: Real>(config: &RunConfig) -> Result<EstimatorSetup<T>> {
    let scenario = config.estimation_scenario()?;
    let opts = SetupOptions {
        zeta: config.design.zeta,
        b: scenario.b,
        decomp: DecompOptions {
            allow_complex: config.design.allow_complex,
            ..Default::default()
        },
        b_seed: config.run.seed,
    };
    EstimatorSetup::build(&scenario.plant, &scenario.sensors, &scenario.graph, &opts)
}

fn run_estimation<T: Real>(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let setup = build_estimator::<T>(config)?;
    let run = &config.run;
    let modes = modes(run.mode);
    let (results, trials) = monte_carlo(
        &setup,
        &config.trigger,
        run.horizon,
        run.trials,
        run.seed,
        &modes,
        opts.workers,
    )?;
    let tradeoff = match (&results.event, &results.perf_loss) {
        (Some(ev), Some(loss)) => Some(Tradeoff {
            trigger: config.trigger,
            comm_rate: ev.comm_rate,
            perf_loss_steady: loss.steady,
            perf_loss_whole: loss.whole,
        }),
        _ => None,
    };
    let filter = FilterReport {
        gain: rows(&setup.kalman.k),
        prediction_covariance: rows(&setup.kalman.p),
        prediction_covariance_trace: setup.kalman.p.trace(),
        filtered_covariance_trace: setup.kalman.filtered_covariance().trace(),
        closed_loop_spectral_radius: spectral_radius(&setup.kalman.a_cl)?,
        local_filter_matrix: rows(&to_f64_matrix(&setup.realization.s)),
        local_filter_beta: to_f64_vector(&setup.realization.beta)
            .iter()
            .copied()
            .collect(),
        local_filter_spectrum_mismatch: setup.decomposition.spectrum_mismatch()?,
        gain_perturbations: setup.decomposition.perturbations,
    };
    let spectrum = setup.graph.spectrum()?.mu;
    let report = Report::Estimation(Box::new(EstimationReport {
        seed: run.seed,
        precision: run.precision,
        filter,
        sync: SyncDesignReport::new(&setup.sync, spectrum),
        results,
        tradeoff,
        config: config.clone(),
    }));
    let aggregate_json = report.to_json()?;
    let mut files = Vec::new();
    if let Some(dir) = &opts.out_dir {
        let event_log = if modes.contains(&TrialMode::Event) {
            let traces = run_trial(
                &setup,
                &config.trigger,
                run.horizon,
                trial_seed(run.seed, 0),
                &[TrialMode::Event],
            )?;
            traces.into_iter().next().map(|t| t.event_log)
        } else {
            None
        };
        let Report::Estimation(r) = &report else {
            unreachable!()
        };
        files = Outputs::write_all(dir, |out| {
            out.json("aggregate.json", &aggregate_json)?;
            let shown = &trials[..run.trace_trials.min(trials.len())];
            if r.results.event.is_some() {
                out.trial_trace("trace_event.csv", shown, TrialMode::Event)?;
            }
            if r.results.full.is_some() {
                out.trial_trace("trace_full.csv", shown, TrialMode::Full)?;
            }
            out.mean_mse("mse_mean.csv", &r.results)?;
            if let Some(log) = &event_log {
                out.event_log("events.csv", log)?;
            }
            Ok(())
        })?;
    }
    Ok(RunOutcome {
        report,
        aggregate_json,
        files,
    })
}

/// Synchronization design for a sync-only configuration.
pub fn build_sync_design(config: &RunConfig) -> Result<(SyncScenario, SyncDesign)> {
    let scenario = config.sync_scenario()?;
    let spec = scenario.graph.spectrum()?;
    let zeta = choose_zeta(&scenario.s, &spec, config.design.zeta)?;
    let design = design_gamma(&scenario.s, &scenario.b, &spec, zeta)?;
    Ok((scenario, design))
}

fn run_sync<T: Real>(config: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let (scenario, design) = build_sync_design(config)?;
    let sync = config.sync.as_ref().expect("validated");
    let spectrum = scenario.graph.spectrum()?.mu;
    let setup = SyncSetup::<T>::new(
        design.clone(),
        scenario.graph,
        &scenario.inputs,
        sync.initial_variance,
    )?;
    let run = &config.run;
    let scenarios = sync
        .noise
        .iter()
        .map(|noise| {
            sync_monte_carlo(
                &setup,
                noise,
                &config.trigger,
                run.horizon,
                run.trials,
                run.seed,
                opts.workers,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let report = Report::SyncOnly(Box::new(SyncReport {
        seed: run.seed,
        precision: run.precision,
        sync: SyncDesignReport::new(&design, spectrum),
        scenarios,
        config: config.clone(),
    }));
    let aggregate_json = report.to_json()?;
    let mut files = Vec::new();
    if let Some(dir) = &opts.out_dir {
        let Report::SyncOnly(r) = &report else {
            unreachable!()
        };
        files = Outputs::write_all(dir, |out| {
            out.json("aggregate.json", &aggregate_json)?;
            out.sync_trace("sync_trace.csv", &r.scenarios)
        })?;
    }
    Ok(RunOutcome {
        report,
        aggregate_json,
        files,
    })
}
