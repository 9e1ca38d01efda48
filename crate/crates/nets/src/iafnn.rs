//! Instantaneous-CSI-aware fully-connected network: maps estimated effective
//! channels to a power-normalized AP beamforming matrix.
//!
//! Each user's channel passes through a shared branch (FC1); the per-user
//! features are pooled (mean and max over users) and every user's beam is
//! generated by a shared second branch (FC2) from its own feature and the
//! pooled context, followed by Frobenius normalization.

use std::path::Path;

use irsbf_autograd::{checkpoint, ParamSet, Tape, Var};
use irsbf_core::metrics::{BeamMatrix, LinkBudget};
use irsbf_core::rng::{stream, Purpose};
use irsbf_core::ComplexMatrix;
use serde::{Deserialize, Serialize};

use crate::features::{beam_matrix, complex_batch, negative_mean_wsr, normalize_beams, stack_icsi, IcsiInput};
use crate::lacl::normalized_noise;
use crate::layers::Mlp;
use crate::{Error, Result};

const KIND: &str = "ia-fnn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaFnnConfig {
    /// AP antennas M.
    pub m: usize,
    /// FC1 layer widths; the last entry is the per-user feature width.
    pub fc1: Vec<usize>,
    /// FC2 hidden widths; the output layer (2M) is appended.
    pub fc2: Vec<usize>,
    /// Factor applied to channel entries before the first layer (typically
    /// `1/σ`, so that inputs are of order one).
    pub input_scale: f64,
}

impl IaFnnConfig {
    pub fn new(m: usize) -> Self {
        Self { m, fc1: vec![32, 16, 16], fc2: vec![64, 32], input_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.fc1.is_empty() || self.fc1.contains(&0) || self.fc2.contains(&0) {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::Config("input scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layout {
    fc1: Mlp,
    fc2: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IaFnn {
    config: IaFnnConfig,
    params: ParamSet,
    layout: Layout,
}

impl IaFnn {
    pub fn new(config: IaFnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, 1, Purpose::Init);
        let mut ps = ParamSet::new();
        let mut w1 = vec![2 * config.m];
        w1.extend(&config.fc1);
        let fc1 = Mlp::new(&mut ps, "fc1", &w1, &mut rng)?;
        let mut w2 = vec![3 * fc1.outputs()];
        w2.extend(&config.fc2);
        w2.push(2 * config.m);
        let fc2 = Mlp::new(&mut ps, "fc2", &w2, &mut rng)?;
        Ok(Self { config, params: ps, layout: Layout { fc1, fc2 } })
    }

    pub fn config(&self) -> &IaFnnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Batched forward pass on the tape. `x` holds `B·K x 2M` rows from
    /// [`stack_icsi`]; returns normalized beams `(Re, Im)`, each `B x K x M`.
    pub fn forward_vars<'t>(&self, vars: &[Var<'t>], x: &Var<'t>, k: usize, power: f64) -> Result<(Var<'t>, Var<'t>)> {
        let own = self.layout.fc1.forward(vars, x)?;
        let mean = own.group_mean(k)?.repeat_rows(k)?;
        let max = own.group_max(k)?.repeat_rows(k)?;
        let raw = self.layout.fc2.forward(vars, &Var::concat_cols(&[own, mean, max])?)?;
        normalize_beams(&raw, k, self.config.m, power)
    }

    pub fn forward_batch(&self, inputs: &[&IcsiInput], power: f64) -> Result<Vec<BeamMatrix>> {
        let (x, k) = stack_icsi(inputs, self.config.input_scale)?;
        if inputs[0].m != self.config.m {
            return Err(Error::Shape(format!("input has M={}, network expects {}", inputs[0].m, self.config.m)));
        }
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let (re, im) = self.forward_vars(&vars, &tape.constant(x), k, power)?;
        let (re, im) = (re.value(), im.value());
        (0..inputs.len()).map(|b| Ok(BeamMatrix::new(beam_matrix(&re, &im, b), power)?)).collect()
    }

    pub fn forward(&self, input: &IcsiInput, power: f64) -> Result<BeamMatrix> {
        Ok(self.forward_batch(&[input], power)?.remove(0))
    }

    /// Training objective on the tape: negative mean WSR evaluated on the
    /// true channels `h_true` with beams computed from the estimates.
    pub fn loss_vars<'t>(
        &self,
        vars: &[Var<'t>],
        estimates: &[&IcsiInput],
        h_true: &[&ComplexMatrix],
        budget: &LinkBudget,
        power: f64,
    ) -> Result<Var<'t>> {
        let tape = vars.first().map(|v| v.tape()).ok_or(Error::EmptyDataset)?;
        let (x, k) = stack_icsi(estimates, self.config.input_scale)?;
        budget.validate(k)?;
        if h_true.len() != estimates.len() || h_true.iter().any(|h| h.shape() != (k, self.config.m)) {
            return Err(Error::Shape("true channels must be K x M per example".into()));
        }
        let (scale, noise) = normalized_noise(budget);
        let channels = complex_batch(tape, h_true, scale)?;
        let beams = self.forward_vars(vars, &tape.constant(x), k, power)?;
        negative_mean_wsr(&channels, beams, &budget.weights, &noise)
    }

    pub fn loss(&self, estimates: &[&IcsiInput], h_true: &[&ComplexMatrix], budget: &LinkBudget, power: f64) -> Result<f64> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        Ok(self.loss_vars(&vars, estimates, h_true, budget, power)?.value().item()?)
    }

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
            return Err(Error::Checkpoint(format!("not an {KIND} checkpoint")));
        }
        let config: IaFnnConfig = serde_json::from_value(meta["config"].clone())?;
        let mut net = Self::new(config, 0)?;
        net.params.check_compatible(&params)?;
        net.params = params;
        Ok(net)
    }
}
