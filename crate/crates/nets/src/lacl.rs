//! Location-aware convolutional-LSTM graph neural network: predicts next-slot
//! IRS phases (and auxiliary AP beams) from each user's history of cascaded
//! LoS channels.
//!
//! Graph: one IRS node and one node per user. Per-user feature mapping
//! (conv → pool → projection → LSTM) and every user-side block share a single
//! parameter set, so one trained model serves any number of users and its
//! outputs are equivariant under user permutations.

use std::f64::consts::TAU;
use std::path::Path;

use irsbf_autograd::{checkpoint, CVar, ParamSet, Tape, Var};
use irsbf_core::metrics::{BeamMatrix, LinkBudget, PhaseConfig};
use irsbf_core::rng::{stream, Purpose};
use irsbf_core::ComplexMatrix;
use serde::{Deserialize, Serialize};

use crate::features::{beam_matrix, complex_batch, negative_mean_wsr, normalize_beams, stack_features, FeatureTensor};
use crate::layers::{ConvPool, Dense, Lstm, Mlp};
use crate::{Error, Result};

const KIND: &str = "lacl-gnn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaClConfig {
    /// IRS elements N.
    pub n: usize,
    /// AP antennas M.
    pub m: usize,
    /// History length τ.
    pub tau: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    /// Width of the projected per-slot feature and of the LSTM state.
    pub feature: usize,
    /// Width of the combination networks and generation heads.
    pub width: usize,
    /// Number of aggregation-combination layers D.
    pub layers: usize,
}

impl LaClConfig {
    /// Reduced model for N = 16, M = 4.
    pub fn desk() -> Self {
        Self { n: 16, m: 4, tau: 3, conv_channels: 4, kernel: 3, pool: 3, feature: 64, width: 128, layers: 2 }
    }

    /// Full-size model for N = 100, M = 6.
    pub fn full() -> Self {
        Self { n: 100, m: 6, tau: 5, width: 512, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.n, self.m, self.tau, self.conv_channels, self.pool, self.feature, self.width, self.layers];
        if positive.contains(&0) {
            return Err(Error::Config("all network sizes must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("convolution kernel must be odd".into()));
        }
        Ok(())
    }

    /// Length of the flattened pooled feature map.
    pub fn flatten_size(&self) -> usize {
        self.conv_channels * self.n.div_ceil(self.pool) * self.m.div_ceil(self.pool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    conv: ConvPool,
    project: Dense,
    lstm: Lstm,
    irs_init: Mlp,
    irs_combine: Vec<Mlp>,
    user_combine: Vec<Mlp>,
    phase_head: Mlp,
    beam_head: Mlp,
}

/// The network: configuration, parameters and their wiring.
#[derive(Debug, Clone, PartialEq)]
pub struct LaClGnn {
    config: LaClConfig,
    params: ParamSet,
    layout: Layout,
}

/// Phases for the next slot and the auxiliary beams found alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveOutput {
    pub phases: PhaseConfig,
    pub aux_beams: BeamMatrix,
}

/// Raw (tape) outputs of a batched forward pass.
pub struct LaClVars<'t> {
    /// Phases `B x N` in (0, 2π).
    pub psi: Var<'t>,
    /// Normalized beams, real and imaginary parts `B x K x M`.
    pub beams: (Var<'t>, Var<'t>),
}

impl LaClGnn {
    /// Fresh network with deterministic initialization from `seed`.
    pub fn new(config: LaClConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 0, Purpose::Init);
        let mut ps = ParamSet::new();
        let c = &config;
        let (f, w) = (c.feature, c.width);
        let conv = ConvPool::new(&mut ps, "clstm.conv", 2, c.conv_channels, c.kernel, c.pool, &mut rng)?;
        let project = Dense::new(&mut ps, "clstm.project", c.flatten_size(), f, crate::layers::Activation::Linear, &mut rng)?;
        let lstm = Lstm::new(&mut ps, "clstm.lstm", f, f, &mut rng)?;
        let irs_init = Mlp::new(&mut ps, "irs_init", &[f, f, f], &mut rng)?;
        let mut irs_combine = Vec::with_capacity(c.layers);
        let mut user_combine = Vec::with_capacity(c.layers);
        for d in 0..c.layers {
            let inw = if d == 0 { f } else { w };
            irs_combine.push(Mlp::new(&mut ps, &format!("gnn{}.irs", d + 1), &[2 * inw, w, w, w], &mut rng)?);
            user_combine.push(Mlp::new(&mut ps, &format!("gnn{}.user", d + 1), &[3 * inw, w, w, w], &mut rng)?);
        }
        let phase_head = Mlp::new(&mut ps, "head.phase", &[w, w, w, c.n], &mut rng)?;
        let beam_head = Mlp::new(&mut ps, "head.beam", &[w, w, w, 2 * c.m], &mut rng)?;
        let layout = Layout { conv, project, lstm, irs_init, irs_combine, user_combine, phase_head, beam_head };
        Ok(Self { config, params: ps, layout })
    }

    pub fn config(&self) -> &LaClConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Per-user feature mapping. `images` is the stacked convolution input
    /// (`B·K·τ x 2 x N x M`, see [`stack_features`]); returns `v_k^1` for every
    /// (example, user) row, `B·K x feature`.
    pub fn clstm<'t>(&self, vars: &[Var<'t>], images: &Var<'t>) -> Result<Var<'t>> {
        let c = &self.config;
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != [2, c.n, c.m] || shape[0] % c.tau != 0 {
            return Err(Error::Shape(format!("CLSTM input {shape:?} for N={}, M={}, τ={}", c.n, c.m, c.tau)));
        }
        let rows = shape[0];
        let pooled = self.layout.conv.forward(vars, images)?.reshape(&[rows, c.flatten_size()])?;
        let projected = self.layout.project.forward(vars, &pooled)?.reshape(&[rows / c.tau, c.tau * c.feature])?;
        let steps = (0..c.tau)
            .map(|s| projected.slice_cols(s * c.feature, c.feature))
            .collect::<irsbf_autograd::Result<Vec<_>>>()?;
        self.layout.lstm.forward(vars, &steps)
    }

    /// IRS-node initialization from the mean of each example's user features.
    pub fn irs_node_init<'t>(&self, vars: &[Var<'t>], users: &Var<'t>, k: usize) -> Result<Var<'t>> {
        self.layout.irs_init.forward(vars, &users.group_mean(k)?)
    }

    /// Aggregation-combination layer `d` (0-based): the IRS node combines its
    /// state with the mean over users; each user combines the IRS state, its
    /// own state and the elementwise max over the other users.
    pub fn gnn_layer<'t>(
        &self,
        vars: &[Var<'t>],
        d: usize,
        irs: &Var<'t>,
        users: &Var<'t>,
        k: usize,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (Some(irs_net), Some(user_net)) = (self.layout.irs_combine.get(d), self.layout.user_combine.get(d)) else {
            return Err(Error::Shape(format!("layer {d} of {}", self.config.layers)));
        };
        let mean = users.group_mean(k)?;
        let new_irs = irs_net.forward(vars, &Var::concat_cols(&[*irs, mean])?)?;
        let others = users.group_max_others(k)?;
        let new_users = user_net.forward(vars, &Var::concat_cols(&[irs.repeat_rows(k)?, *users, others])?)?;
        Ok((new_irs, new_users))
    }

    /// Phases `2π·sigmoid(head(v_0^D))`, `B x N`.
    pub fn generate_phase<'t>(&self, vars: &[Var<'t>], irs: &Var<'t>) -> Result<Var<'t>> {
        Ok(self.layout.phase_head.forward(vars, irs)?.sigmoid().scale(TAU))
    }

    /// Per-user linear head followed by Frobenius normalization to `power`.
    pub fn generate_aux_beam<'t>(
        &self,
        vars: &[Var<'t>],
        users: &Var<'t>,
        k: usize,
        power: f64,
    ) -> Result<(Var<'t>, Var<'t>)> {
        normalize_beams(&self.layout.beam_head.forward(vars, users)?, k, self.config.m, power)
    }

    /// Full batched forward pass on the tape.
    pub fn forward_vars<'t>(&self, vars: &[Var<'t>], images: &Var<'t>, k: usize, power: f64) -> Result<LaClVars<'t>> {
        let mut users = self.clstm(vars, images)?;
        let mut irs = self.irs_node_init(vars, &users, k)?;
        for d in 0..self.config.layers {
            (irs, users) = self.gnn_layer(vars, d, &irs, &users, k)?;
        }
        Ok(LaClVars { psi: self.generate_phase(vars, &irs)?, beams: self.generate_aux_beam(vars, &users, k, power)? })
    }

    /// Forward pass for a batch of examples sharing one user count.
    pub fn forward_batch(&self, examples: &[&[FeatureTensor]], power: f64) -> Result<Vec<PredictiveOutput>> {
        let (images, k) = stack_features(examples)?;
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let out = self.forward_vars(&vars, &tape.constant(images), k, power)?;
        let (psi, re, im) = (out.psi.value(), out.beams.0.value(), out.beams.1.value());
        let n = self.config.n;
        (0..examples.len())
            .map(|b| {
                Ok(PredictiveOutput {
                    phases: PhaseConfig::new(psi.data()[b * n..(b + 1) * n].to_vec())?,
                    aux_beams: BeamMatrix::new(beam_matrix(&re, &im, b), power)?,
                })
            })
            .collect()
    }

    /// Forward pass for one example (one feature tensor per user).
    pub fn forward(&self, features: &[FeatureTensor], power: f64) -> Result<PredictiveOutput> {
        Ok(self.forward_batch(&[features], power)?.remove(0))
    }

    /// Training objective on the tape: negative mean WSR over the batch, with
    /// rates evaluated on the LoS channels of the predicted slot.
    ///
    /// `cascaded[b][k]` is user k's path-loss-scaled cascaded LoS channel
    /// `diag(conj(f̄_k)) Ḡ · sqrt(α^AI α^IU_k)` (N x M) in example b.
    pub fn loss_vars<'t>(
        &self,
        vars: &[Var<'t>],
        examples: &[&[FeatureTensor]],
        cascaded: &[&[ComplexMatrix]],
        budget: &LinkBudget,
        power: f64,
    ) -> Result<Var<'t>> {
        let tape = vars.first().map(|v| v.tape()).ok_or(Error::EmptyDataset)?;
        let (images, k) = stack_features(examples)?;
        budget.validate(k)?;
        if cascaded.len() != examples.len() || cascaded.iter().any(|c| c.len() != k) {
            return Err(Error::Shape("one cascaded channel per user and example is required".into()));
        }
        let (n, m, b) = (self.config.n, self.config.m, examples.len());
        let joined: Vec<ComplexMatrix> = cascaded
            .iter()
            .map(|users| {
                let mut out = ComplexMatrix::zeros(n, k * m);
                for (u, h) in users.iter().enumerate() {
                    if h.shape() != (n, m) {
                        return Err(Error::Shape(format!("cascaded channel {:?}, expected {:?}", h.shape(), (n, m))));
                    }
                    out.columns_mut(u * m, m).copy_from(h);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let (scale, noise) = normalized_noise(budget);
        let hc = complex_batch(tape, &joined.iter().collect::<Vec<_>>(), scale)?;
        let out = self.forward_vars(vars, &tape.constant(images), k, power)?;
        let c = CVar::from_phase(&out.psi).reshape(&[b, 1, n])?;
        let effective = c.matmul(&hc)?.reshape(&[b, k, m])?;
        negative_mean_wsr(&effective, out.beams, &budget.weights, &noise)
    }

    /// Value of the training objective.
    pub fn loss(
        &self,
        examples: &[&[FeatureTensor]],
        cascaded: &[&[ComplexMatrix]],
        budget: &LinkBudget,
        power: f64,
    ) -> Result<f64> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        Ok(self.loss_vars(&vars, examples, cascaded, budget, power)?.value().item()?)
    }

    /// Serialized checkpoint (parameters plus configuration).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(checkpoint::to_bytes(&self.params, &self.meta())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = checkpoint::from_bytes(bytes)?;
        Self::from_parts(params, &meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, &self.params, &self.meta())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = checkpoint::load(path)?;
        Self::from_parts(params, &meta)
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "kind": KIND, "config": self.config })
    }

    fn from_parts(params: ParamSet, meta: &serde_json::Value) -> Result<Self> {
        if meta.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(Error::Checkpoint(format!("not a {KIND} checkpoint")));
        }
        let config: LaClConfig = serde_json::from_value(meta["config"].clone())?;
        let mut net = Self::new(config, 0)?;
        net.params.check_compatible(&params)?;
        net.params = params;
        Ok(net)
    }
}

/// Channel scale `1/σ_0` and normalized noise powers `σ_k²/σ_0²`, with the
/// first user's noise power as the reference.
pub(crate) fn normalized_noise(budget: &LinkBudget) -> (f64, Vec<f64>) {
    let reference = budget.noise_power[0];
    (1.0 / reference.sqrt(), budget.noise_power.iter().map(|s| s / reference).collect())
}

/// Makes a tensor of the given shape from a generator (test helper).
#[cfg(test)]
pub(crate) fn tensor_from(shape: &[usize], mut f: impl FnMut() -> f64) -> irsbf_autograd::Tensor {
    let n = shape.iter().product();
    irsbf_autograd::Tensor::new(shape.to_vec(), (0..n).map(|_| f()).collect()).unwrap()
}
