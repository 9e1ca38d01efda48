//! Offline training of both networks and the online two-stage procedure.

use irsbf_autograd::{Adam, ParamSet, Tape, Var};
use irsbf_core::metrics::{BeamMatrix, PhaseConfig};
use irsbf_core::rng::{stream, Purpose};
use irsbf_core::scenario::Scenario;
use irsbf_core::ComplexMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_indices, BeamDataset, PhaseDataset};
use crate::features::{build_icsi_input, FeatureTensor, IcsiInput};
use crate::iafnn::{IaFnn, IaFnnConfig};
use crate::lacl::{LaClConfig, LaClGnn};
use crate::{Error, Result};

/// Losses are evaluated over data sets in chunks of this many examples.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds initialization and mini-batch shuffling.
    pub seed: u64,
    /// Fraction of the dataset held out from training.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, learning_rate: 1e-3, seed: 0, holdout: 0.1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config("need a positive learning rate and a hold-out fraction in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Loss curve of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean mini-batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Full training-set loss after every epoch.
    pub train_losses: Vec<f64>,
    /// Training-set loss at initialization.
    pub initial_loss: f64,
    /// Training-set loss of the returned parameters.
    pub final_loss: f64,
    pub heldout_initial: Option<f64>,
    pub heldout_final: Option<f64>,
    /// Epoch whose parameters were returned (0 = initialization).
    pub best_epoch: usize,
}

type BatchLoss<'a> = dyn for<'t> Fn(&[Var<'t>], &[usize]) -> Result<Var<'t>> + 'a;

/// Pins a closure to the higher-ranked loss signature.
fn batch_loss<F>(f: F) -> F
where
    F: for<'t> Fn(&[Var<'t>], &[usize]) -> Result<Var<'t>>,
{
    f
}

fn mean_loss(params: &ParamSet, idx: &[usize], loss: &BatchLoss<'_>) -> Result<f64> {
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let vars = params.bind(&tape);
        total += loss(&vars, chunk)?.value().item()? * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Mini-batch Adam on `loss`; keeps the parameters with the lowest
/// training-set loss seen after any epoch (or at initialization).
fn fit(params: &mut ParamSet, n: usize, cfg: &TrainConfig, loss: &BatchLoss<'_>) -> Result<TrainReport> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let (train, held) = split_indices(n, cfg.holdout);
    let (train, held): (Vec<usize>, Vec<usize>) = (train.collect(), held.collect());
    let held_loss = |p: &ParamSet| if held.is_empty() { Ok(None) } else { mean_loss(p, &held, loss).map(Some) };
    let initial_loss = mean_loss(params, &train, loss)?;
    if !initial_loss.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    let heldout_initial = held_loss(params)?;
    let mut best = (initial_loss, 0, params.clone());
    let mut adam = Adam::new(params, cfg.learning_rate);
    let mut order = train.clone();
    let (mut epoch_losses, mut train_losses) = (Vec::with_capacity(cfg.epochs), Vec::with_capacity(cfg.epochs));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, epoch as u64, Purpose::Shuffle));
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let vars = params.bind(&tape);
            let value = loss(&vars, batch)?;
            let v = value.value().item()?;
            if !v.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum += v * batch.len() as f64;
            let grads = tape.backward(value)?;
            let grads: Vec<_> = vars.iter().map(|v| grads.wrt(*v)).collect();
            adam.step(params, &grads)?;
        }
        epoch_losses.push(sum / order.len() as f64);
        let full = mean_loss(params, &train, loss)?;
        if !full.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        train_losses.push(full);
        if full < best.0 {
            best = (full, epoch, params.clone());
        }
    }
    let (final_loss, best_epoch, best_params) = best;
    *params = best_params;
    Ok(TrainReport {
        epoch_losses,
        train_losses,
        initial_loss,
        final_loss,
        heldout_initial,
        heldout_final: held_loss(params)?,
        best_epoch,
    })
}

/// Trains the phase network on `dataset` (unsupervised: the loss is the
/// negative WSR on the target slot's LoS channels).
pub fn train_lacl(dataset: &PhaseDataset, config: LaClConfig, cfg: &TrainConfig) -> Result<(LaClGnn, TrainReport)> {
    let s = &dataset.scenario;
    if (config.n, config.m, config.tau) != (s.geometry.num_irs_elements(), s.geometry.num_ap_antennas, dataset.tau) {
        return Err(Error::Config(format!(
            "network expects N={}, M={}, τ={} but the dataset has N={}, M={}, τ={}",
            config.n,
            config.m,
            config.tau,
            s.geometry.num_irs_elements(),
            s.geometry.num_ap_antennas,
            dataset.tau
        )));
    }
    let mut net = LaClGnn::new(config, cfg.seed)?;
    let budget = s.budget();
    let structure = net.clone();
    let loss = batch_loss(|vars, idx| {
        let feats: Vec<_> = idx.iter().map(|i| dataset.examples[*i].features.as_slice()).collect();
        let targets: Vec<_> = idx.iter().map(|i| dataset.examples[*i].cascaded.as_slice()).collect();
        structure.loss_vars(vars, &feats, &targets, &budget, s.power)
    });
    let report = fit(net.params_mut(), dataset.examples.len(), cfg, &loss)?;
    Ok((net, report))
}

/// Beam-network configuration whose input scale is `1/σ` for the scenario.
pub fn iafnn_config_for(scenario: &Scenario) -> IaFnnConfig {
    IaFnnConfig { input_scale: 1.0 / scenario.noise_power.sqrt(), ..IaFnnConfig::new(scenario.geometry.num_ap_antennas) }
}

/// Trains the beam network on `(Ĥ, H)` pairs: beams come from `Ĥ`, rates
/// from `H`.
pub fn train_iafnn(dataset: &BeamDataset, config: IaFnnConfig, cfg: &TrainConfig) -> Result<(IaFnn, TrainReport)> {
    let s = &dataset.scenario;
    if config.m != s.geometry.num_ap_antennas {
        return Err(Error::Config(format!("network expects M={} but the dataset has M={}", config.m, s.geometry.num_ap_antennas)));
    }
    let mut net = IaFnn::new(config, cfg.seed)?;
    let budget = s.budget();
    let inputs: Vec<IcsiInput> = dataset.examples.iter().map(|e| build_icsi_input(&e.h_hat)).collect::<Result<_>>()?;
    let structure = net.clone();
    let loss = batch_loss(|vars, idx| {
        let x: Vec<_> = idx.iter().map(|i| &inputs[*i]).collect();
        let h: Vec<_> = idx.iter().map(|i| &dataset.examples[*i].h).collect();
        structure.loss_vars(vars, &x, &h, &budget, s.power)
    });
    let report = fit(net.params_mut(), dataset.examples.len(), cfg, &loss)?;
    Ok((net, report))
}

/// Next-slot IRS phases from the users' histories (one tensor per user).
pub fn predict_online(histories: &[FeatureTensor], net: &LaClGnn) -> Result<PhaseConfig> {
    let tau = net.config().tau;
    if let Some(bad) = histories.iter().find(|f| f.tau != tau) {
        return Err(Error::History { expected: tau, got: bad.tau });
    }
    Ok(net.forward(histories, 1.0)?.phases)
}

/// AP beams from estimated effective channels (K x M, row k = `ĥ_k^H`).
pub fn beamform_online(h_hat: &ComplexMatrix, net: &IaFnn, power: f64) -> Result<BeamMatrix> {
    net.forward(&build_icsi_input(h_hat)?, power)
}
