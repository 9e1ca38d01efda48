//! Training sets for both networks and their on-disk form.
//!
//! Files are JSON documents that embed the generating scenario, the seed and
//! every example; complex matrices are stored as `{rows, cols, re, im}` with
//! column-major entries.

use std::path::Path;

use irsbf_core::channel::{apply_ce_error, cascaded_los, EstimationModel};
use irsbf_core::geometry::Vec3;
use irsbf_core::rng::{stream, Purpose};
use irsbf_core::scenario::{LosState, Scenario};
use irsbf_core::{ComplexMatrix, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{build_feature_input, FeatureTensor};
use crate::lacl::LaClGnn;
use crate::{Error, Result};

/// Examples are predicted in chunks of this many during dataset generation.
const PREDICT_CHUNK: usize = 256;

mod cmat {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Record {
        rows: usize,
        cols: usize,
        re: Vec<f64>,
        im: Vec<f64>,
    }

    impl From<&ComplexMatrix> for Record {
        fn from(m: &ComplexMatrix) -> Self {
            Record {
                rows: m.nrows(),
                cols: m.ncols(),
                re: m.iter().map(|z| z.re).collect(),
                im: m.iter().map(|z| z.im).collect(),
            }
        }
    }

    impl TryFrom<Record> for ComplexMatrix {
        type Error = String;
        fn try_from(r: Record) -> std::result::Result<Self, String> {
            if r.re.len() != r.rows * r.cols || r.im.len() != r.re.len() {
                return Err(format!("{}x{} matrix with {} entries", r.rows, r.cols, r.re.len()));
            }
            Ok(ComplexMatrix::from_iterator(r.rows, r.cols, r.re.iter().zip(&r.im).map(|(a, b)| C64::new(*a, *b))))
        }
    }

    pub fn serialize<S: Serializer>(m: &ComplexMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        Record::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexMatrix, D::Error> {
        ComplexMatrix::try_from(Record::deserialize(d)?).map_err(serde::de::Error::custom)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[ComplexMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
            v.iter().map(Record::from).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ComplexMatrix>, D::Error> {
            Vec::<Record>::deserialize(d)?
                .into_iter()
                .map(|r| ComplexMatrix::try_from(r).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// One phase-network example: per-user histories and the LoS channels of
/// the slot to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseExample {
    pub features: Vec<FeatureTensor>,
    /// Per user, `diag(conj(f̄_k)) Ḡ · sqrt(α^AI α^IU_k)` at the target slot (N x M).
    #[serde(with = "cmat::vec")]
    pub cascaded: Vec<ComplexMatrix>,
    /// User locations at the target slot.
    pub locations: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDataset {
    pub scenario: Scenario,
    pub tau: usize,
    pub seed: u64,
    pub examples: Vec<PhaseExample>,
}

/// One beam-network example: estimated and true effective channels (K x M,
/// row k = `h_k^H`) for the phases predicted by the phase network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamExample {
    #[serde(with = "cmat")]
    pub h_hat: ComplexMatrix,
    #[serde(with = "cmat")]
    pub h: ComplexMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamDataset {
    pub scenario: Scenario,
    pub nmse: f64,
    pub seed: u64,
    pub examples: Vec<BeamExample>,
}

/// Cascaded LoS channel of user `k` without path loss.
pub fn cascaded_unscaled(state: &LosState, k: usize) -> Result<ComplexMatrix> {
    Ok(cascaded_los(&state.los.f_bar[k], &state.los.g_bar)?)
}

/// Cascaded LoS channel of user `k` scaled by the path losses of both hops.
pub fn cascaded_scaled(state: &LosState, k: usize) -> Result<ComplexMatrix> {
    let amp = (state.pathloss_ap_irs * state.pathloss_user[k]).sqrt();
    Ok(cascaded_unscaled(state, k)?.scale(amp))
}

/// Feature tensors for every user from LoS states of slots `t−τ..t−1`
/// (chronological order, as produced by the simulator).
pub fn features_from_states(states: &[LosState]) -> Result<Vec<FeatureTensor>> {
    let tau = states.len();
    let k = states.first().map_or(0, |s| s.los.num_users());
    (0..k)
        .map(|u| {
            let history = states.iter().rev().map(|s| cascaded_unscaled(s, u)).collect::<Result<Vec<_>>>()?;
            build_feature_input(&history, tau)
        })
        .collect()
}

/// LoS states of `slots` consecutive slots of a fresh episode.
fn episode_states<R: rand::Rng + ?Sized>(scenario: &Scenario, slots: usize, rng: &mut R) -> Result<(Vec<LosState>, Vec<Vec3>)> {
    let episode = scenario.sample_episode(slots, rng);
    let states = (0..slots).map(|t| scenario.los_state(&episode.locations_at(t))).collect::<irsbf_core::Result<Vec<_>>>()?;
    Ok((states, episode.locations_at(slots - 1)))
}

/// Simulates `count` independent episodes of `τ + 1` slots: the first `τ`
/// slots form the history, the last one is the prediction target.
pub fn generate_dataset_phase(scenario: &Scenario, tau: usize, count: usize, seed: u64) -> Result<PhaseDataset> {
    if tau == 0 {
        return Err(Error::History { expected: 1, got: 0 });
    }
    scenario.validate()?;
    let examples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64, Purpose::Dataset);
            let (states, locations) = episode_states(scenario, tau + 1, &mut rng)?;
            let target = &states[tau];
            Ok(PhaseExample {
                features: features_from_states(&states[..tau])?,
                cascaded: (0..scenario.num_users).map(|k| cascaded_scaled(target, k)).collect::<Result<_>>()?,
                locations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseDataset { scenario: scenario.clone(), tau, seed, examples })
}

/// Builds `(Ĥ, H)` pairs: phases are predicted by `phase_net` from fresh
/// histories, the full Rician channels of the target slot give the true
/// effective channels, and estimation error with NMSE `nmse` gives `Ĥ`.
pub fn generate_dataset_beam(
    phase_net: &LaClGnn,
    scenario: &Scenario,
    nmse: f64,
    count: usize,
    seed: u64,
) -> Result<BeamDataset> {
    scenario.validate()?;
    if !(nmse >= 0.0 && nmse.is_finite()) {
        return Err(Error::Config("NMSE must be non-negative".into()));
    }
    let tau = phase_net.config().tau;
    let episodes = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64, Purpose::Trajectory);
            let (states, locations) = episode_states(scenario, tau + 1, &mut rng)?;
            Ok((features_from_states(&states[..tau])?, locations))
        })
        .collect::<Result<Vec<_>>>()?;
    let phases = episodes
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let feats: Vec<&[FeatureTensor]> = chunk.iter().map(|(f, _)| f.as_slice()).collect();
            phase_net.forward_batch(&feats, scenario.power)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .map(|out| out.phases);
    let model = EstimationModel { nmse };
    let examples = episodes
        .par_iter()
        .zip(phases.collect::<Vec<_>>())
        .enumerate()
        .map(|(i, ((_, locations), phases))| {
            let ch = scenario.realize(locations, &mut stream(seed, i as u64, Purpose::Channel))?;
            let h = ch.effective_channels(&phases)?;
            let h_hat = apply_ce_error(&h, &model, h.norm_squared(), &mut stream(seed, i as u64, Purpose::Estimation));
            Ok(BeamExample { h_hat, h })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamDataset { scenario: scenario.clone(), nmse, seed, examples })
}

/// Index split: the last `⌈holdout·n⌉` examples are held out (at least one
/// example stays in the training part).
pub fn split_indices(n: usize, holdout: f64) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let held = ((holdout * n as f64).ceil() as usize).min(n.saturating_sub(1));
    (0..n - held, n - held..n)
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(file, value)?;
    Ok(())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

impl PhaseDataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Self = load_json(path)?;
        d.validate()?;
        Ok(d)
    }

    /// All examples share (N, M, K, τ).
    pub fn validate(&self) -> Result<()> {
        let (n, m, k) = (self.scenario.geometry.num_irs_elements(), self.scenario.geometry.num_ap_antennas, self.scenario.num_users);
        for ex in &self.examples {
            if ex.features.len() != k || ex.cascaded.len() != k {
                return Err(Error::Shape(format!("example has {} users, dataset has {k}", ex.features.len())));
            }
            for f in &ex.features {
                f.validate()?;
                if (f.tau, f.n, f.m) != (self.tau, n, m) {
                    return Err(Error::Shape("feature tensor dimensions differ from the dataset".into()));
                }
            }
            if ex.cascaded.iter().any(|c| c.shape() != (n, m)) {
                return Err(Error::Shape("cascaded channel dimensions differ from the dataset".into()));
            }
        }
        Ok(())
    }
}

impl BeamDataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Self = load_json(path)?;
        let shape = (d.scenario.num_users, d.scenario.geometry.num_ap_antennas);
        if d.examples.iter().any(|e| e.h.shape() != shape || e.h_hat.shape() != shape) {
            return Err(Error::Shape("channel dimensions differ from the dataset".into()));
        }
        Ok(d)
    }

    /// `Σ‖Ĥ − H‖² / Σ‖H‖²` over all examples.
    pub fn empirical_nmse(&self) -> f64 {
        let err: f64 = self.examples.iter().map(|e| (&e.h_hat - &e.h).norm_squared()).sum();
        let pow: f64 = self.examples.iter().map(|e| e.h.norm_squared()).sum();
        err / pow
    }
}
