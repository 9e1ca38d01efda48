//! Trained network pairs used by the predictive scheme.

use std::path::Path;

use irsbf_core::rng::{stream, Purpose};
use irsbf_core::scenario::Scenario;
use irsbf_nets::dataset::{generate_dataset_beam, generate_dataset_phase};
use irsbf_nets::train::{iafnn_config_for, train_iafnn, train_lacl, TrainConfig, TrainReport};
use irsbf_nets::{IaFnn, LaClConfig, LaClGnn};
use rand::RngCore;

use crate::config::{CheckpointPair, ExperimentConfig, TrainingPlan};
use crate::{Error, Result};

/// A phase network and the beam network trained on its predictions.
#[derive(Debug, Clone)]
pub struct DlpbModels {
    pub phase: LaClGnn,
    pub beam: IaFnn,
}

/// Loss curves of both training stages.
#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub phase: TrainReport,
    pub beam: TrainReport,
}

impl DlpbModels {
    pub fn load(pair: &CheckpointPair) -> Result<Self> {
        for path in [&pair.phase, &pair.beam] {
            if !path.is_file() {
                return Err(Error::MissingCheckpoint(path.display().to_string()));
            }
        }
        Ok(Self { phase: LaClGnn::load(&pair.phase)?, beam: IaFnn::load(&pair.beam)? })
    }

    pub fn save(&self, pair: &CheckpointPair) -> Result<()> {
        self.phase.save(&pair.phase)?;
        self.beam.save(&pair.beam)?;
        Ok(())
    }

    /// Checks that the networks accept inputs of `scenario` with `tau`
    /// history slots. The user count never matters: both networks are
    /// shared across users.
    pub fn check_fits(&self, scenario: &Scenario, tau: usize) -> Result<()> {
        let p = self.phase.config();
        let (n, m) = (scenario.geometry.num_irs_elements(), scenario.geometry.num_ap_antennas);
        if (p.n, p.m, p.tau) != (n, m, tau) {
            return Err(Error::Structural(format!(
                "phase network expects N={}, M={}, τ={} but the experiment has N={n}, M={m}, τ={tau}",
                p.n, p.m, p.tau
            )));
        }
        if self.beam.config().m != m {
            return Err(Error::Structural(format!("beam network expects M={} but the experiment has M={m}", self.beam.config().m)));
        }
        Ok(())
    }
}

/// The networks of an experiment: one pair shared by every sweep point or one
/// pair per point.
#[derive(Debug, Clone)]
pub struct ModelSet {
    models: Vec<DlpbModels>,
}

impl ModelSet {
    pub fn shared(models: DlpbModels) -> Self {
        Self { models: vec![models] }
    }

    pub fn per_point(models: Vec<DlpbModels>) -> Self {
        Self { models }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[DlpbModels] {
        &self.models
    }

    /// Networks serving sweep point `i`.
    pub fn for_point(&self, i: usize) -> &DlpbModels {
        &self.models[if self.models.len() == 1 { 0 } else { i }]
    }

    /// Loads the checkpoints listed in the configuration.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        if cfg.checkpoints.is_empty() {
            return Err(Error::MissingCheckpoint("the configuration lists no checkpoints".into()));
        }
        Ok(Self { models: cfg.checkpoints.iter().map(DlpbModels::load).collect::<Result<_>>()? })
    }

    /// Saves every pair as `{prefix}-{i}-phase.ckpt` / `{prefix}-{i}-beam.ckpt`
    /// inside `dir`, returning the file names relative to `dir`.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<Vec<CheckpointPair>> {
        std::fs::create_dir_all(dir)?;
        self.models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let rel = CheckpointPair {
                    phase: format!("{prefix}-{i}-phase.ckpt").into(),
                    beam: format!("{prefix}-{i}-beam.ckpt").into(),
                };
                m.save(&CheckpointPair { phase: dir.join(&rel.phase), beam: dir.join(&rel.beam) })?;
                Ok(rel)
            })
            .collect()
    }
}

/// Seeds of the four training stages (phase data, phase init, beam data,
/// beam init) for network pair `index`.
fn stage_seeds(seed: u64, index: usize) -> [u64; 4] {
    let mut rng = stream(seed, index as u64, Purpose::Init);
    std::array::from_fn(|_| rng.next_u64())
}

/// Runs both training stages on `scenario`: the phase network on LoS
/// histories, then the beam network on effective channels produced with the
/// phase network's predictions and estimation error of NMSE `nmse`.
pub fn train_models(
    scenario: &Scenario,
    lacl: LaClConfig,
    plan: &TrainingPlan,
    nmse: f64,
    seed: u64,
    index: usize,
) -> Result<(DlpbModels, TrainingRecord)> {
    let [data_phase, init_phase, data_beam, init_beam] = stage_seeds(seed, index);
    let phase_data = generate_dataset_phase(scenario, lacl.tau, plan.examples, data_phase)?;
    let (phase, phase_report) = train_lacl(&phase_data, lacl, &TrainConfig { seed: init_phase, ..plan.optimizer.clone() })?;
    let beam_data = generate_dataset_beam(&phase, scenario, nmse, plan.examples, data_beam)?;
    let (beam, beam_report) =
        train_iafnn(&beam_data, iafnn_config_for(scenario), &TrainConfig { seed: init_beam, ..plan.optimizer.clone() })?;
    Ok((DlpbModels { phase, beam }, TrainingRecord { phase: phase_report, beam: beam_report }))
}

/// Trains every network pair the experiment needs (see
/// [`ExperimentConfig::model_count`]), calling `progress` after each pair.
pub fn train_for_experiment(
    cfg: &ExperimentConfig,
    mut progress: impl FnMut(usize, &TrainingRecord),
) -> Result<ModelSet> {
    let models = (0..cfg.model_count())
        .map(|i| {
            let setup = cfg.training_setup(i);
            let lacl = LaClConfig { tau: setup.tau, ..cfg.lacl };
            let (models, record) = train_models(&setup.scenario, lacl, &cfg.training, cfg.nmse, cfg.seed, i)?;
            progress(i, &record);
            Ok(models)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelSet { models })
}
