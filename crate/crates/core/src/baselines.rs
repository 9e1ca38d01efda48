//! Benchmark beamformers: full-CSI alternating WSR optimization, the same
//! optimizer fed stale CSI, and random phases with maximum-ratio transmission.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt::Write as _;

use crate::channel::ChannelRealization;
use crate::metrics::{sinrs_effective, wsr, BeamMatrix, LinkBudget, PhaseConfig};
use crate::{ComplexMatrix, Error, Result, C64};

/// Default stopping increment for the alternating optimizer.
pub const DEFAULT_TOL: f64 = 1e-2;
/// Default iteration cap for the alternating optimizer.
pub const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
}

/// WSR after initialization (entry 0) and after each outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub wsr: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.wsr.len().saturating_sub(1)
    }

    pub fn final_wsr(&self) -> f64 {
        *self.wsr.last().unwrap_or(&0.0)
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.wsr.windows(2).all(|p| p[1] >= p[0] - tol)
    }

    /// `iteration,wsr` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,wsr\n");
        for (i, v) in self.wsr.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }
}

/// Lag between the CSI used by the naive benchmark and the slot it serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleCsiConfig {
    pub lag: usize,
}

impl StaleCsiConfig {
    pub fn new(lag: usize) -> Result<Self> {
        if lag == 0 {
            return Err(Error::InvalidParameter("stale-CSI lag must be at least one slot".into()));
        }
        Ok(Self { lag })
    }
}

/// Maximum-ratio transmission with an equal power split:
/// `w_k = √(P/K) h_k / ‖h_k‖`, where row k of `h` is `h_k^H`.
pub fn mrt(h: &ComplexMatrix, power: f64) -> Result<BeamMatrix> {
    let k = h.nrows();
    if k == 0 {
        return Err(Error::Dimension("MRT needs at least one user".into()));
    }
    let mut w = ComplexMatrix::zeros(h.ncols(), k);
    let amp = (power / k as f64).sqrt();
    for u in 0..k {
        let norm = h.row(u).norm();
        if !(norm > 0.0) {
            return Err(Error::ZeroChannel(u));
        }
        for m in 0..h.ncols() {
            w[(m, u)] = h[(u, m)].conj() * (amp / norm);
        }
    }
    BeamMatrix::new(w, power)
}

/// Phases drawn i.i.d. uniform on `[0, 2π)`.
pub fn random_phase<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PhaseConfig {
    PhaseConfig::new((0..n).map(|_| rng.random_range(0.0..TAU)).collect()).expect("finite phases")
}

/// Per-user channels divided by the noise standard deviation so that the
/// optimizer works at unit noise power.
struct Normalized {
    g: ComplexMatrix,
    /// conj(f_k) / σ_k
    fc: Vec<DVector<C64>>,
    weights: Vec<f64>,
}

impl Normalized {
    fn new(ch: &ChannelRealization, budget: &LinkBudget) -> Result<Self> {
        let k = ch.num_users();
        budget.validate(k)?;
        let fc = ch
            .f
            .iter()
            .zip(&budget.noise_power)
            .map(|(f, s2)| {
                let s = s2.sqrt();
                DVector::from_iterator(f.nrows(), f.iter().map(|z| z.conj() / s))
            })
            .collect();
        Ok(Self { g: ch.g.clone(), fc, weights: budget.weights.clone() })
    }

    fn k(&self) -> usize {
        self.fc.len()
    }

    /// Rows `h_k^H / σ_k` for coefficients `c`.
    fn effective(&self, c: &[C64]) -> ComplexMatrix {
        let n = self.g.nrows();
        let mut rows = ComplexMatrix::zeros(self.k(), self.g.ncols());
        for (u, fc) in self.fc.iter().enumerate() {
            for i in 0..n {
                let s = fc[i] * c[i];
                for m in 0..self.g.ncols() {
                    rows[(u, m)] += s * self.g[(i, m)];
                }
            }
        }
        rows
    }

    fn wsr(&self, c: &[C64], w: &ComplexMatrix) -> f64 {
        let h = self.effective(c);
        let s = sinrs_effective(&h, w, &vec![1.0; self.k()]).expect("consistent dimensions");
        wsr(&s, &self.weights)
    }
}

/// Fixed-Φ beamformer step of the quadratic-transform/Lagrangian-dual scheme.
fn update_beams(h: &ComplexMatrix, w: &ComplexMatrix, weights: &[f64], power: f64) -> ComplexMatrix {
    let (k, m) = (h.nrows(), h.ncols());
    let gains = h * w;
    let mut coef = vec![C64::new(0.0, 0.0); k];
    let mut a = ComplexMatrix::zeros(m, m);
    for u in 0..k {
        let total: f64 = (0..k).map(|j| gains[(u, j)].norm_sqr()).sum::<f64>() + 1.0;
        let signal = gains[(u, u)].norm_sqr();
        let gamma = signal / (total - signal);
        let wt = weights[u] * (1.0 + gamma);
        let y = gains[(u, u)] * wt.sqrt() / total;
        coef[u] = y * wt.sqrt();
        let hu = h.row(u).adjoint();
        a += (&hu * hu.adjoint()).scale(y.norm_sqr());
    }
    let eig = SymmetricEigen::new(a);
    let ut = eig.eigenvectors.adjoint();
    // b = U^H h_k scaled by √α̃_k y_k, one column per user
    let mut b = ComplexMatrix::zeros(m, k);
    for u in 0..k {
        let hu = h.row(u).adjoint();
        b.set_column(u, &((&ut * hu) * coef[u]));
    }
    let lam = &eig.eigenvalues;
    let weight: Vec<f64> = (0..m).map(|i| b.row(i).norm_squared()).collect();
    let power_at = |mu: f64| -> f64 { (0..m).map(|i| weight[i] / (lam[i] + mu).powi(2)).sum() };
    let lam_max = lam.iter().cloned().fold(0.0, f64::max);
    let invertible = lam.iter().all(|l| *l > 1e-12 * lam_max.max(f64::MIN_POSITIVE));
    let mu = if invertible && power_at(0.0) <= power {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = (weight.iter().sum::<f64>() / power).sqrt().max(f64::MIN_POSITIVE);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if power_at(mid) > power {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let mut scaled = b;
    for i in 0..m {
        let d = 1.0 / (lam[i] + mu);
        for u in 0..k {
            scaled[(i, u)] *= d;
        }
    }
    let mut out = &eig.eigenvectors * scaled;
    // guard the budget against last-ulp rounding
    let p = out.norm_squared();
    if p > power {
        out *= C64::from((power / p).sqrt());
    }
    out
}

/// Fixed-W phase step: one sequential sweep of closed-form unit-modulus
/// coordinate updates on the quadratic surrogate.
fn update_phases(nc: &Normalized, c: &[C64], w: &ComplexMatrix) -> Vec<C64> {
    let n = c.len();
    let k = nc.k();
    let gw = &nc.g * w; // N x K
    // a[u][j] = diag(conj f_u) G w_j, so that h_u^H w_j = c^T a[u][j]
    let a: Vec<Vec<DVector<C64>>> = (0..k)
        .map(|u| (0..k).map(|j| nc.fc[u].component_mul(&gw.column(j))).collect())
        .collect();
    let mut u_mat = DMatrix::<C64>::zeros(n, n);
    let mut v = DVector::<C64>::zeros(n);
    for u in 0..k {
        let inner: Vec<C64> = (0..k).map(|j| a[u][j].iter().zip(c).map(|(x, ci)| x * ci).sum()).collect();
        let total: f64 = inner.iter().map(|z| z.norm_sqr()).sum::<f64>() + 1.0;
        let signal = inner[u].norm_sqr();
        let gamma = signal / (total - signal);
        let wt = nc.weights[u] * (1.0 + gamma);
        let eps = inner[u] * wt.sqrt() / total;
        for j in 0..k {
            let conj_a = a[u][j].map(|z| z.conj());
            u_mat += (&conj_a * a[u][j].transpose()).scale(eps.norm_sqr());
        }
        v += a[u][u].map(|z| z.conj()) * (eps * wt.sqrt());
    }
    let mut c = c.to_vec();
    for i in 0..n {
        let mut q = v[i];
        for (j, cj) in c.iter().enumerate() {
            if j != i {
                q -= u_mat[(i, j)] * cj;
            }
        }
        if q.norm() > 0.0 {
            c[i] = C64::from_polar(1.0, q.arg());
        }
    }
    c
}

/// Tuning knobs of the alternating optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpOptions {
    /// Stop once an outer iteration gains less than this (bits/s/Hz).
    pub tol: f64,
    pub max_iters: usize,
    /// Cap on repeated block updates inside one outer iteration; each block
    /// (beams, phases) is refined until its own gain drops below `tol / 100`.
    pub inner_iters: usize,
    /// Extra deterministic phase initializations besides all-zero phases.
    pub restarts: usize,
    /// Try longer steps along the direction of each outer iteration.
    pub extrapolate: bool,
}

impl Default for FpOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iters: DEFAULT_MAX_ITERS, inner_iters: 50, restarts: 8, extrapolate: true }
    }
}

/// Alternating WSR maximization over `(Φ, W)` with full CSI, default options
/// apart from the stopping increment and iteration cap.
pub fn fp_wsr_maximize(
    channels: &ChannelRealization,
    budget: &LinkBudget,
    power: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(PhaseConfig, BeamMatrix, SolverTrace)> {
    fp_wsr_maximize_with(channels, budget, power, &FpOptions { tol, max_iters, ..FpOptions::default() })
}

/// Phase initializations: all-zero phases first, then one per user that
/// co-phases that user's cascaded channel along its dominant AP direction,
/// then fixed-seed uniform draws.
fn initial_phases(nc: &Normalized, restarts: usize) -> Vec<Vec<C64>> {
    let n = nc.g.nrows();
    let mut out = vec![vec![C64::new(1.0, 0.0); n]];
    for fc in nc.fc.iter().take(restarts) {
        let mut cascade = nc.g.clone();
        for (i, f) in fc.iter().enumerate() {
            for z in cascade.row_mut(i).iter_mut() {
                *z *= f;
            }
        }
        let svd = cascade.clone().svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let best = (0..svd.singular_values.len())
            .max_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]))
            .unwrap_or(0);
        let v = vt.row(best).adjoint();
        let proj = &cascade * v;
        out.push(proj.iter().map(|z| if z.norm() > 0.0 { C64::from_polar(1.0, -z.arg()) } else { C64::new(1.0, 0.0) }).collect());
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0x5eed);
    while out.len() < restarts + 1 {
        out.push(random_phase(n, &mut rng).coefficients());
    }
    out
}

/// Safeguarded extrapolation along the step just taken: tries `φ + s Δφ`,
/// `W + s ΔW` for s = 1, 2, 4, ... (beams rescaled into the budget) and keeps
/// the best point, which is never worse than the current one.
fn extrapolate(
    nc: &Normalized,
    start_c: &[C64],
    start_w: &ComplexMatrix,
    c: &mut Vec<C64>,
    w: &mut ComplexMatrix,
    current: f64,
    power: f64,
) -> f64 {
    let dphi: Vec<f64> = c.iter().zip(start_c).map(|(a, b)| (a * b.conj()).arg()).collect();
    let dw = &*w - start_w;
    let mut best = current;
    let mut step = 1.0;
    for _ in 0..20 {
        let cand_c: Vec<C64> = c.iter().zip(&dphi).map(|(z, d)| z * C64::from_polar(1.0, step * d)).collect();
        let mut cand_w = &*w + dw.scale(step);
        let p = cand_w.norm_squared();
        if !(p > 0.0) {
            break;
        }
        if p > power {
            cand_w *= C64::from((power / p).sqrt());
        }
        let r = nc.wsr(&cand_c, &cand_w);
        if !(r > best) {
            break;
        }
        best = r;
        *c = cand_c;
        *w = cand_w;
        step *= 2.0;
    }
    best
}

/// One alternating run from the given coefficients.
fn alternate(nc: &Normalized, c0: Vec<C64>, power: f64, opts: &FpOptions) -> Result<(Vec<C64>, ComplexMatrix, SolverTrace)> {
    let mut c = c0;
    let mut w = mrt(&nc.effective(&c), power)?.into_matrix();
    let mut current = nc.wsr(&c, &w);
    let mut trace = vec![current];
    let mut converged = false;
    let inner_tol = opts.tol / 100.0;
    for _ in 0..opts.max_iters {
        let prev = current;
        let (start_c, start_w) = (c.clone(), w.clone());

        let h = nc.effective(&c);
        for _ in 0..opts.inner_iters.max(1) {
            let w_new = update_beams(&h, &w, &nc.weights, power);
            let r = nc.wsr(&c, &w_new);
            if r < current {
                break;
            }
            let gain = r - current;
            w = w_new;
            current = r;
            if gain < inner_tol {
                break;
            }
        }
        for _ in 0..opts.inner_iters.max(1) {
            let c_new = update_phases(nc, &c, &w);
            let r = nc.wsr(&c_new, &w);
            if r < current {
                break;
            }
            let gain = r - current;
            c = c_new;
            current = r;
            if gain < inner_tol {
                break;
            }
        }

        if opts.extrapolate {
            current = extrapolate(nc, &start_c, &start_w, &mut c, &mut w, current, power);
        }

        trace.push(current);
        if current - prev < opts.tol {
            converged = true;
            break;
        }
    }
    let stop_reason = if converged { StopReason::Converged } else { StopReason::MaxIterations };
    Ok((c, w, SolverTrace { wsr: trace, converged, stop_reason }))
}

/// Alternating WSR maximization over `(Φ, W)` with full CSI.
///
/// Each outer iteration refines the beamformer with the closed-form
/// quadratic-transform/Lagrangian-dual step (power via bisection) and then the
/// phases with sequential closed-form unit-modulus coordinate sweeps on the
/// same surrogate. A run stops once an outer iteration gains less than `tol`
/// or after `max_iters` iterations. A block update that would lower the WSR
/// (possible only through rounding) is rejected, so every trace is monotone.
/// The run from all-zero phases is followed by `restarts` deterministic
/// restarts; the best run is returned together with its trace.
pub fn fp_wsr_maximize_with(
    channels: &ChannelRealization,
    budget: &LinkBudget,
    power: f64,
    opts: &FpOptions,
) -> Result<(PhaseConfig, BeamMatrix, SolverTrace)> {
    if !(power > 0.0) {
        return Err(Error::InvalidParameter("power budget must be positive".into()));
    }
    let nc = Normalized::new(channels, budget)?;
    let mut best: Option<(Vec<C64>, ComplexMatrix, SolverTrace)> = None;
    for c0 in initial_phases(&nc, opts.restarts) {
        let run = alternate(&nc, c0, power, opts)?;
        if best.as_ref().is_none_or(|b| run.2.final_wsr() > b.2.final_wsr()) {
            best = Some(run);
        }
    }
    let (c, w, trace) = best.expect("at least one initialization");
    Ok((PhaseConfig::from_coefficients(&c)?, BeamMatrix::new(w, power)?, trace))
}

/// Runs the optimizer on stale CSI and evaluates its `(Φ, W)` on the true
/// channels of the served slot.
pub fn naive_fp(
    stale: &ChannelRealization,
    truth: &ChannelRealization,
    budget: &LinkBudget,
    power: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, SolverTrace)> {
    let (phases, beams, trace) = fp_wsr_maximize(stale, budget, power, tol, max_iters)?;
    let h = truth.effective_channels(&phases)?;
    let s = sinrs_effective(&h, beams.matrix(), &budget.noise_power)?;
    Ok((wsr(&s, &budget.weights), trace))
}

/// WSR of random phases with MRT on the resulting effective channels.
pub fn random_mrt<R: Rng + ?Sized>(
    channels: &ChannelRealization,
    budget: &LinkBudget,
    power: f64,
    rng: &mut R,
) -> Result<(PhaseConfig, BeamMatrix, f64)> {
    let phases = random_phase(channels.num_irs_elements(), rng);
    let h = channels.effective_channels(&phases)?;
    let beams = mrt(&h, power)?;
    let s = sinrs_effective(&h, beams.matrix(), &budget.noise_power)?;
    let r = wsr(&s, &budget.weights);
    Ok((phases, beams, r))
}
