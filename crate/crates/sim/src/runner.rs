//! Monte Carlo evaluation of the beamforming schemes.
//!
//! Trial `j` draws its trajectories, channels, estimation error and random
//! phases from streams keyed by `(seed, j, purpose)` only, so every sweep
//! point sees the same underlying randomness (common random numbers) and a
//! trial's outcome never depends on which worker runs it. Episodes are
//! anchored at the served slot, so the served users' positions are the same
//! at every speed and only the history (and the stale CSI) moves with it.

use std::time::{Duration, Instant};

use irsbf_core::baselines::{fp_wsr_maximize, random_mrt};
use irsbf_core::channel::{apply_ce_error, ChannelRealization, EstimationModel};
use irsbf_core::metrics::{coherence_time, protocol_throughput, sinrs_effective, wsr, PhaseConfig, ProtocolParams};
use irsbf_core::rng::{stream, Purpose};
use irsbf_core::scenario::{Scenario, SPEED_OF_LIGHT};
use irsbf_core::ComplexMatrix;
use irsbf_nets::dataset::features_from_states;
use irsbf_nets::train::{beamform_online, predict_online};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Scheme, SweepVariable};
use crate::models::{DlpbModels, ModelSet};
use crate::{Error, Result};

/// Outcome of one scheme in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scheme: Scheme,
    /// Sweep value in the sweep variable's user unit.
    pub sweep_value: f64,
    pub trial: usize,
    /// Weighted sum-rate in bits/s/Hz.
    pub wsr: f64,
    /// WSR times the fraction of the coherence interval left after pilots
    /// (0 when the pilots do not fit, see `frame_feasible`).
    pub protocol_wsr: f64,
    pub frame_feasible: bool,
    pub sinr: Vec<f64>,
    /// Outer iterations of the optimizer, for the optimizer-based schemes.
    pub iterations: Option<usize>,
    /// Time spent on the scheme; not part of any report since it varies
    /// from run to run.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Everything a trial needs besides its index.
struct PointContext<'a> {
    cfg: &'a ExperimentConfig,
    scenario: Scenario,
    tau: usize,
    value: f64,
    models: Option<&'a DlpbModels>,
    coherence: f64,
}

/// Evaluates every configured scheme at every sweep point over `cfg.trials`
/// trials. Rows are ordered by sweep point, then trial, then scheme (in the
/// configured order).
pub fn run_monte_carlo(cfg: &ExperimentConfig, models: Option<&ModelSet>) -> Result<Vec<TrialResult>> {
    let needs_models = cfg.schemes.contains(&Scheme::Dlpb);
    let models = match models {
        Some(m) if needs_models => {
            if m.len() != 1 && m.len() != cfg.points.len() {
                return Err(Error::Config(format!(
                    "{} network pairs for {} sweep points",
                    m.len(),
                    cfg.points.len()
                )));
            }
            Some(m)
        }
        None if needs_models => {
            return Err(Error::MissingCheckpoint("the dlpb scheme needs trained networks".into()));
        }
        _ => None,
    };
    let mut rows = Vec::with_capacity(cfg.points.len() * cfg.trials * cfg.schemes.len());
    for i in 0..cfg.points.len() {
        let setup = cfg.point(i);
        let point_models = models.map(|m| m.for_point(i));
        if let Some(m) = point_models {
            m.check_fits(&setup.scenario, setup.tau)?;
        }
        let protocol = ProtocolParams {
            carrier_freq: setup.scenario.carrier_freq,
            symbol_duration: setup.scenario.symbol_duration,
            avg_speed: setup.scenario.mobility.mean_speed(),
            wave_speed: SPEED_OF_LIGHT,
        };
        let ctx = PointContext {
            cfg,
            coherence: coherence_time(&protocol)?,
            scenario: setup.scenario,
            tau: setup.tau,
            value: cfg.points[i].value,
            models: point_models,
        };
        let trials = (0..cfg.trials).into_par_iter().map(|j| run_trial(&ctx, j)).collect::<Result<Vec<_>>>()?;
        rows.extend(trials.into_iter().flatten());
    }
    Ok(rows)
}

/// Evaluates the predictive scheme with one network pair at every user count
/// in `users`, without retraining. Both networks are shared across users, so
/// no user count may require reshaping a parameter; a structural error here
/// means the scalability property is broken.
pub fn scalability_eval(base: &ExperimentConfig, models: &DlpbModels, users: &[usize]) -> Result<Vec<TrialResult>> {
    let mut source = base.source.clone();
    source.schemes = vec![Scheme::Dlpb];
    source.sweep.variable = SweepVariable::Users;
    source.sweep.values = users.iter().map(|&k| k as f64).collect();
    source.dlpb.checkpoints.clear();
    let cfg = ExperimentConfig::parse(source)?;
    run_monte_carlo(&cfg, Some(&ModelSet::shared(models.clone())))
}

fn run_trial(ctx: &PointContext<'_>, trial: usize) -> Result<Vec<TrialResult>> {
    let cfg = ctx.cfg;
    let s = &ctx.scenario;
    let j = trial as u64;
    let slots = ctx.tau.max(cfg.stale_lag) + 1;
    let t = slots - 1;
    let episode = s.sample_episode_anchored(slots, &mut stream(cfg.seed, j, Purpose::Trajectory));
    let truth = s.realize(&episode.locations_at(t), &mut stream(cfg.seed, j, Purpose::Channel))?;
    let budget = s.budget();

    cfg.schemes
        .iter()
        .map(|&scheme| {
            let start = Instant::now();
            let (sinr, iterations) = match scheme {
                Scheme::Dlpb => {
                    let models = ctx.models.ok_or_else(|| Error::MissingCheckpoint("dlpb networks".into()))?;
                    let states = (t - ctx.tau..t)
                        .map(|u| s.los_state(&episode.locations_at(u)))
                        .collect::<irsbf_core::Result<Vec<_>>>()?;
                    let phases = predict_online(&features_from_states(&states)?, &models.phase)?;
                    let h = truth.effective_channels(&phases)?;
                    let h_hat = apply_ce_error(
                        &h,
                        &EstimationModel { nmse: cfg.nmse },
                        h.norm_squared(),
                        &mut stream(cfg.seed, j, Purpose::Estimation),
                    );
                    let beams = beamform_online(&h_hat, &models.beam, s.power)?;
                    (sinrs_effective(&h, beams.matrix(), &budget.noise_power)?, None)
                }
                Scheme::FpIcsi => {
                    let (phases, beams, trace) = fp_wsr_maximize(&truth, &budget, s.power, cfg.fp_tol, cfg.fp_max_iters)?;
                    (evaluate(&truth, &phases, beams.matrix(), &budget.noise_power)?, Some(trace.iterations()))
                }
                Scheme::NaiveFp => {
                    let stale = s.realize(&episode.locations_at(t - cfg.stale_lag), &mut stream(cfg.seed, j, Purpose::StaleChannel))?;
                    let (phases, beams, trace) = fp_wsr_maximize(&stale, &budget, s.power, cfg.fp_tol, cfg.fp_max_iters)?;
                    (evaluate(&truth, &phases, beams.matrix(), &budget.noise_power)?, Some(trace.iterations()))
                }
                Scheme::RandomMrt => {
                    let (phases, beams, _) = random_mrt(&truth, &budget, s.power, &mut stream(cfg.seed, j, Purpose::RandomPhase))?;
                    (evaluate(&truth, &phases, beams.matrix(), &budget.noise_power)?, None)
                }
            };
            let rate = wsr(&sinr, &budget.weights);
            let adjusted = protocol_throughput(
                rate,
                s.num_users,
                s.geometry.num_irs_elements(),
                s.symbol_duration,
                ctx.coherence,
                scheme.pilots(),
            );
            let (protocol_wsr, frame_feasible) = match adjusted {
                Ok(r) => (r, true),
                Err(irsbf_core::Error::InfeasibleFrame(_)) => (0.0, false),
                Err(e) => return Err(e.into()),
            };
            Ok(TrialResult {
                scheme,
                sweep_value: ctx.value,
                trial,
                wsr: rate,
                protocol_wsr,
                frame_feasible,
                sinr,
                iterations,
                wall_time: start.elapsed(),
            })
        })
        .collect()
}

/// SINRs on the true channels for the given phases and beams.
fn evaluate(truth: &ChannelRealization, phases: &PhaseConfig, w: &ComplexMatrix, noise: &[f64]) -> Result<Vec<f64>> {
    Ok(sinrs_effective(&truth.effective_channels(phases)?, w, noise)?)
}
