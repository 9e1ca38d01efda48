//! Central-difference gradient checking.

use crate::{Result, Tape, Tensor, Var};

/// Denominator floor of the relative error.
pub const ERROR_FLOOR: f64 = 1e-6;

/// Maximum over all parameter coordinates of
/// `|analytic − numeric| / (|analytic| + |numeric| + ERROR_FLOOR)`, where the
/// numeric derivative is the central difference with step `eps`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.param(p)).collect();
        f(&tape, &vars)?.value().item()
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + ERROR_FLOOR));
        }
    }
    Ok(worst)
}
