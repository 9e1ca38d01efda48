//! SINR and weighted sum-rate evaluation, plus pilot-overhead accounting.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::channel::ChannelRealization;
use crate::{ComplexMatrix, Error, Result, C64};

/// IRS phase shifts `φ_n ∈ [0, 2π)`; the reflection coefficients are
/// `c_n = e^{jφ_n}` and `Φ = diag(c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    phases: Vec<f64>,
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl PhaseConfig {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("phase shifts must be finite".into()));
        }
        Ok(Self { phases: phases.into_iter().map(wrap_phase).collect() })
    }

    pub fn zeros(n: usize) -> Self {
        Self { phases: vec![0.0; n] }
    }

    /// Builds the configuration from unit-modulus (or any nonzero) coefficients.
    pub fn from_coefficients(c: &[C64]) -> Result<Self> {
        Self::new(c.iter().map(|z| z.arg()).collect())
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn coefficients(&self) -> Vec<C64> {
        self.phases.iter().map(|p| C64::from_polar(1.0, *p)).collect()
    }
}

/// Transmit beamformer `W = [w_1, ..., w_K]` (M x K) under a sum-power budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMatrix {
    w: ComplexMatrix,
    power_budget: f64,
}

impl BeamMatrix {
    pub fn new(w: ComplexMatrix, power_budget: f64) -> Result<Self> {
        if !(power_budget > 0.0) {
            return Err(Error::InvalidParameter("power budget must be positive".into()));
        }
        if w.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidParameter("beamformer entries must be finite".into()));
        }
        let power = w.norm_squared();
        if power > power_budget + 1e-9 * power_budget.max(1.0) {
            return Err(Error::PowerBudget { power, budget: power_budget });
        }
        Ok(Self { w, power_budget })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.w
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.w
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    pub fn power(&self) -> f64 {
        self.w.norm_squared()
    }

    pub fn num_antennas(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.w.ncols()
    }
}

/// Per-user noise powers and rate weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub noise_power: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LinkBudget {
    pub fn uniform(k: usize, noise_power: f64) -> Self {
        Self { noise_power: vec![noise_power; k], weights: vec![1.0; k] }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.noise_power.len() != k || self.weights.len() != k {
            return Err(Error::Dimension(format!(
                "{k} users but {} noise powers and {} weights",
                self.noise_power.len(),
                self.weights.len()
            )));
        }
        if self.noise_power.iter().any(|s| !(*s > 0.0)) || self.weights.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidParameter("noise powers must be positive and weights non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub carrier_freq: f64,
    pub symbol_duration: f64,
    /// Average user speed in m/s.
    pub avg_speed: f64,
    pub wave_speed: f64,
}

/// SINRs for all users given stacked effective rows `H` (K x M, row k is
/// `h_k^H`) and beamformer `W` (M x K).
pub fn sinrs_effective(h: &ComplexMatrix, w: &ComplexMatrix, noise: &[f64]) -> Result<Vec<f64>> {
    let k = h.nrows();
    if w.nrows() != h.ncols() || w.ncols() != k || noise.len() != k {
        return Err(Error::Dimension(format!(
            "H is {}x{}, W is {}x{}, {} noise powers",
            k,
            h.ncols(),
            w.nrows(),
            w.ncols(),
            noise.len()
        )));
    }
    let gains = h * w;
    Ok((0..k)
        .map(|u| {
            let signal = gains[(u, u)].norm_sqr();
            let interference: f64 = (0..k).filter(|j| *j != u).map(|j| gains[(u, j)].norm_sqr()).sum();
            signal / (interference + noise[u])
        })
        .collect())
}

/// SINR of user `k` (0-based) for the given phases, beams and channels.
pub fn sinr(
    k: usize,
    phases: &PhaseConfig,
    beams: &BeamMatrix,
    channels: &ChannelRealization,
    budget: &LinkBudget,
) -> Result<f64> {
    if k >= channels.num_users() {
        return Err(Error::InvalidParameter(format!("user {k} out of range")));
    }
    let h = channels.effective_channels(phases)?;
    Ok(sinrs_effective(&h, beams.matrix(), &budget.noise_power)?[k])
}

/// `Σ_k α_k log2(1 + γ_k)`.
pub fn wsr(sinrs: &[f64], weights: &[f64]) -> f64 {
    sinrs.iter().zip(weights).map(|(g, a)| a * (1.0 + g).log2()).sum()
}

/// WSR from effective channels; equals `wsr` over `sinr` when the rows of `H`
/// are `f_k^H Φ G`.
pub fn wsr_effective(h: &ComplexMatrix, w: &ComplexMatrix, budget: &LinkBudget) -> Result<f64> {
    let s = sinrs_effective(h, w, &budget.noise_power)?;
    Ok(wsr(&s, &budget.weights))
}

/// Channel coherence time `T_c ≈ 1 / f_m` with Doppler `f_m = v f_c / c`.
pub fn coherence_time(p: &ProtocolParams) -> Result<f64> {
    if !(p.avg_speed > 0.0) {
        return Err(Error::Domain("coherence time needs a positive speed".into()));
    }
    Ok(p.wave_speed / (p.avg_speed * p.carrier_freq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotScheme {
    /// Full cascaded CSI: K·N pilot symbols per coherence interval.
    FullIcsi,
    /// Predicted phases, MISO estimation only: K pilot symbols.
    Predictive,
}

impl PilotScheme {
    pub fn pilot_symbols(self, k: usize, n: usize) -> usize {
        match self {
            PilotScheme::FullIcsi => k * n,
            PilotScheme::Predictive => k,
        }
    }
}

/// Fraction of the coherence interval left for data.
pub fn data_fraction(k: usize, n: usize, symbol_duration: f64, coherence: f64, scheme: PilotScheme) -> f64 {
    1.0 - scheme.pilot_symbols(k, n) as f64 * symbol_duration / coherence
}

/// Time-averaged rate after pilot overhead: `(1 - K N T_s / T_c) R` for full
/// ICSI and `(1 - K T_s / T_c) R` for the predictive scheme.
pub fn protocol_throughput(
    rate: f64,
    k: usize,
    n: usize,
    symbol_duration: f64,
    coherence: f64,
    scheme: PilotScheme,
) -> Result<f64> {
    let frac = data_fraction(k, n, symbol_duration, coherence, scheme);
    if frac <= 0.0 {
        return Err(Error::InfeasibleFrame(1.0 - frac));
    }
    Ok(frac * rate)
}

/// Ratio of predictive to full-ICSI pilot symbols, `1 / N`.
pub fn pilot_overhead_ratio(k: usize, n: usize) -> Result<f64> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter("need K >= 1 and N >= 1".into()));
    }
    Ok(PilotScheme::Predictive.pilot_symbols(k, n) as f64 / PilotScheme::FullIcsi.pilot_symbols(k, n) as f64)
}
