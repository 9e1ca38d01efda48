//! Real-valued network inputs built from complex channels.

use irsbf_autograd::{CVar, Tape, Tensor, Var};
use irsbf_core::{ComplexMatrix, C64};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// History of one user's cascaded LoS channels as a `τ x N x M x 2` tensor.
///
/// Layout (row-major): `data[((s·N + n)·M + m)·2 + c]`, where slot `s = 0`
/// is the most recent history slot (`t − 1`), `s = τ − 1` the oldest
/// (`t − τ`), and `c = 0 / 1` selects the real / imaginary part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub tau: usize,
    pub n: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

/// Maps `τ` cascaded LoS channels (each N x M, most recent first) to a
/// [`FeatureTensor`]. `expected_tau` is the history length the caller needs.
pub fn build_feature_input(history: &[ComplexMatrix], expected_tau: usize) -> Result<FeatureTensor> {
    if history.len() != expected_tau || expected_tau == 0 {
        return Err(Error::History { expected: expected_tau, got: history.len() });
    }
    let (n, m) = history[0].shape();
    let mut data = Vec::with_capacity(expected_tau * n * m * 2);
    for h in history {
        if h.shape() != (n, m) {
            return Err(Error::Shape(format!("history slot is {:?}, expected {:?}", h.shape(), (n, m))));
        }
        for i in 0..n {
            for j in 0..m {
                let z = h[(i, j)];
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::Shape("non-finite channel entry".into()));
                }
                data.push(z.re);
                data.push(z.im);
            }
        }
    }
    Ok(FeatureTensor { tau: expected_tau, n, m, data })
}

impl FeatureTensor {
    /// Inverse of [`build_feature_input`].
    pub fn to_history(&self) -> Vec<ComplexMatrix> {
        (0..self.tau)
            .map(|s| {
                ComplexMatrix::from_fn(self.n, self.m, |i, j| {
                    let at = ((s * self.n + i) * self.m + j) * 2;
                    C64::new(self.data[at], self.data[at + 1])
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.tau * self.n * self.m * 2 || self.tau == 0 {
            return Err(Error::Shape(format!(
                "feature tensor {}x{}x{}x2 holds {} values",
                self.tau,
                self.n,
                self.m,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite feature".into()));
        }
        Ok(())
    }

    /// Appends the slots in chronological order (oldest first) as
    /// `2 x N x M` images to `out`.
    fn push_images(&self, out: &mut Vec<f64>) {
        let (n, m) = (self.n, self.m);
        for s in (0..self.tau).rev() {
            for c in 0..2 {
                for i in 0..n {
                    for j in 0..m {
                        out.push(self.data[((s * n + i) * m + j) * 2 + c]);
                    }
                }
            }
        }
    }
}

/// Stacks `examples` (each one tensor per user, all with `k` users) into the
/// convolution input `B·K·τ x 2 x N x M`, rows ordered (example, user, slot)
/// with slots oldest first.
pub fn stack_features(examples: &[&[FeatureTensor]]) -> Result<(Tensor, usize)> {
    let Some(first) = examples.first().and_then(|e| e.first()) else {
        return Err(Error::EmptyDataset);
    };
    let k = examples[0].len();
    let (tau, n, m) = (first.tau, first.n, first.m);
    let mut data = Vec::with_capacity(examples.len() * k * tau * 2 * n * m);
    for users in examples {
        if users.len() != k {
            return Err(Error::Shape(format!("batch mixes {} and {} users", k, users.len())));
        }
        for f in users.iter() {
            f.validate()?;
            if (f.tau, f.n, f.m) != (tau, n, m) {
                return Err(Error::Shape(format!(
                    "feature tensor {}x{}x{} does not match {}x{}x{}",
                    f.tau, f.n, f.m, tau, n, m
                )));
            }
            f.push_images(&mut data);
        }
    }
    Ok((Tensor::new(vec![examples.len() * k * tau, 2, n, m], data)?, k))
}

/// Estimated effective channels as an `M x K x 2` tensor.
///
/// Column `k` carries the user's channel vector `ĥ_k` (the conjugate of the
/// k-th row `ĥ_k^H` of the K x M effective-channel matrix):
/// `data[(m·K + k)·2 + c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcsiInput {
    pub m: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

/// Maps K x M estimated effective channels (rows `ĥ_k^H`) to an [`IcsiInput`].
pub fn build_icsi_input(h_hat: &ComplexMatrix) -> Result<IcsiInput> {
    let (k, m) = h_hat.shape();
    if k == 0 || m == 0 {
        return Err(Error::Shape(format!("effective channels are {k}x{m}")));
    }
    if h_hat.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Shape("non-finite channel entry".into()));
    }
    let mut data = Vec::with_capacity(m * k * 2);
    for a in 0..m {
        for u in 0..k {
            let h = h_hat[(u, a)].conj();
            data.push(h.re);
            data.push(h.im);
        }
    }
    Ok(IcsiInput { m, k, data })
}

impl IcsiInput {
    /// Inverse of [`build_icsi_input`].
    pub fn to_channels(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.k, self.m, |u, a| {
            let at = (a * self.k + u) * 2;
            C64::new(self.data[at], self.data[at + 1]).conj()
        })
    }

    /// Per-user rows `[Re ĥ_k, Im ĥ_k]` (2M wide) scaled by `scale`.
    fn push_rows(&self, scale: f64, out: &mut Vec<f64>) {
        for u in 0..self.k {
            for c in 0..2 {
                for a in 0..self.m {
                    out.push(scale * self.data[(a * self.k + u) * 2 + c]);
                }
            }
        }
    }
}

/// Stacks inputs with equal (M, K) into `B·K x 2M` rows ordered (example, user).
pub fn stack_icsi(inputs: &[&IcsiInput], scale: f64) -> Result<(Tensor, usize)> {
    let Some(first) = inputs.first() else {
        return Err(Error::EmptyDataset);
    };
    let (m, k) = (first.m, first.k);
    let mut data = Vec::with_capacity(inputs.len() * k * 2 * m);
    for x in inputs {
        if (x.m, x.k) != (m, k) || x.data.len() != m * k * 2 {
            return Err(Error::Shape(format!("input is {}x{}, batch is {m}x{k}", x.m, x.k)));
        }
        x.push_rows(scale, &mut data);
    }
    Ok((Tensor::new(vec![inputs.len() * k, 2 * m], data)?, k))
}

/// Complex matrices of equal shape stacked as a `B x R x C` constant pair.
pub fn complex_batch<'t>(tape: &'t Tape, mats: &[&ComplexMatrix], scale: f64) -> Result<CVar<'t>> {
    let Some(first) = mats.first() else {
        return Err(Error::EmptyDataset);
    };
    let (r, c) = first.shape();
    let mut re = Vec::with_capacity(mats.len() * r * c);
    let mut im = Vec::with_capacity(mats.len() * r * c);
    for mat in mats {
        if mat.shape() != (r, c) {
            return Err(Error::Shape(format!("{:?} vs {:?}", mat.shape(), (r, c))));
        }
        for i in 0..r {
            for j in 0..c {
                re.push(scale * mat[(i, j)].re);
                im.push(scale * mat[(i, j)].im);
            }
        }
    }
    let shape = vec![mats.len(), r, c];
    Ok(CVar::constant(tape, Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?))
}

/// Normalizes per-user head outputs (`B·K x 2M`, real parts then imaginary
/// parts) so every example's beam matrix has squared Frobenius norm `power`.
/// Returns `(Re W, Im W)` as `B x K x M` (row k of example b is `w_k^T`).
pub fn normalize_beams<'t>(raw: &Var<'t>, k: usize, m: usize, power: f64) -> Result<(Var<'t>, Var<'t>)> {
    let rows = raw.shape()[0];
    if raw.shape() != [rows, 2 * m] || k == 0 || rows % k != 0 {
        return Err(Error::Shape(format!("beam head output {:?} for K={k}, M={m}", raw.shape())));
    }
    let b = rows / k;
    let per_example = raw.square().sum_cols()?.group_mean(k)?.scale(k as f64);
    if per_example.value().data().iter().any(|v| *v == 0.0) {
        return Err(Error::ZeroBeam);
    }
    let norm = per_example.sqrt().scale(1.0 / power.sqrt()).repeat_rows(k)?;
    let z = raw.div_column(&norm)?;
    let re = z.slice_cols(0, m)?.reshape(&[b, k, m])?;
    let im = z.slice_cols(m, m)?.reshape(&[b, k, m])?;
    Ok((re, im))
}

/// Negative mean weighted sum rate of a batch.
///
/// `channels` is `B x K x M` (row k = `h_k^H`, already divided by the noise
/// reference `σ_0`), `beams` the `(Re, Im)` pair from [`normalize_beams`];
/// `noise` holds `σ_k² / σ_0²`.
pub fn negative_mean_wsr<'t>(
    channels: &CVar<'t>,
    beams: (Var<'t>, Var<'t>),
    weights: &[f64],
    noise: &[f64],
) -> Result<Var<'t>> {
    let w = CVar::new(beams.0, beams.1);
    let p = channels.matmul_t(&w)?.abs2()?;
    Ok(p.weighted_rates(weights, noise)?.mean().neg())
}

/// Extracts example `b`'s beam matrix (M x K, column k = `w_k`).
pub fn beam_matrix(re: &Tensor, im: &Tensor, b: usize) -> ComplexMatrix {
    let (k, m) = (re.shape()[1], re.shape()[2]);
    ComplexMatrix::from_fn(m, k, |a, u| {
        let at = (b * k + u) * m + a;
        C64::new(re.data()[at], im.data()[at])
    })
}
