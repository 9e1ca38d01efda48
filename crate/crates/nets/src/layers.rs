//! Parameterized building blocks shared by both networks.
//!
//! A layer only records which entries of a [`ParamSet`] it owns; forward
//! passes receive the tape-bound parameter variables (in `ParamSet` order)
//! and index into them.

use irsbf_autograd::{ParamId, ParamSet, Tensor, Var};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::Result;

/// How the weights feeding an activation are scaled at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// Uniform fan-in initialization: `U(-a, a)` with `a = sqrt(6 / fan_in)`
/// before a ReLU and `a = sqrt(3 / fan_in)` otherwise.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, act: Activation, rng: &mut R) -> Tensor {
    let gain = match act {
        Activation::Relu => 6.0,
        Activation::Linear => 3.0,
    };
    let a = (gain / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect()).expect("finite init")
}

/// `rows x (blocks · rows)` matrix whose square blocks are random orthogonal
/// matrices (QR of a Gaussian matrix with the sign of R's diagonal fixed).
pub fn orthogonal_blocks<R: Rng + ?Sized>(rows: usize, blocks: usize, rng: &mut R) -> Tensor {
    let mut data = vec![0.0; rows * rows * blocks];
    for blk in 0..blocks {
        let g = DMatrix::<f64>::from_fn(rows, rows, |_, _| StandardNormal.sample(rng));
        let (q, r) = g.qr().unpack();
        for j in 0..rows {
            let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..rows {
                data[i * rows * blocks + blk * rows + j] = sign * q[(i, j)];
            }
        }
    }
    Tensor::new(vec![rows, rows * blocks], data).expect("finite init")
}

/// Affine layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        act: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.push(format!("{name}.w"), uniform_fan_in(&[inputs, outputs], inputs, act, rng))?;
        let b = params.push(format!("{name}.b"), Tensor::zeros(&[outputs]))?;
        Ok(Self { w, b, inputs, outputs })
    }

    pub fn forward<'t>(&self, vars: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.dense(&vars[self.w.0], &vars[self.b.0])?)
    }
}

/// Stack of dense layers with ReLU between layers and a linear last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`.
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, widths: &[usize], rng: &mut R) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 < n { Activation::Relu } else { Activation::Linear };
                Dense::new(params, &format!("{name}.{i}"), widths[i], widths[i + 1], act, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<'t>(&self, vars: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        let mut h = *x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(vars, &h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }
}

/// Same-padded convolution followed by ReLU and max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvPool {
    pub w: ParamId,
    pub b: ParamId,
    pub pool: usize,
}

impl ConvPool {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pool: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let w = params.push(
            format!("{name}.w"),
            uniform_fan_in(&[out_channels, in_channels, kernel, kernel], fan_in, Activation::Relu, rng),
        )?;
        let b = params.push(format!("{name}.b"), Tensor::zeros(&[out_channels]))?;
        Ok(Self { w, b, pool })
    }

    /// `x`: B x Cin x H x W -> B x Cout x ⌈H/pool⌉ x ⌈W/pool⌉.
    pub fn forward<'t>(&self, vars: &[Var<'t>], x: &Var<'t>) -> Result<Var<'t>> {
        Ok(x.conv2d(&vars[self.w.0], &vars[self.b.0])?.relu().max_pool2d(self.pool, self.pool)?)
    }
}

/// Long short-term memory cell with gate order (input, forget, cell, output).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let w_x = params.push(
            format!("{name}.w_x"),
            uniform_fan_in(&[inputs, 4 * hidden], inputs, Activation::Linear, rng),
        )?;
        let w_h = params.push(format!("{name}.w_h"), orthogonal_blocks(hidden, 4, rng))?;
        let b = params.push(format!("{name}.b"), Tensor::zeros(&[4 * hidden]))?;
        Ok(Self { w_x, w_h, b, hidden })
    }

    /// Runs the cell over `steps` (each R x inputs) from a zero state and
    /// returns the final hidden state (R x hidden).
    pub fn forward<'t>(&self, vars: &[Var<'t>], steps: &[Var<'t>]) -> Result<Var<'t>> {
        let hdim = self.hidden;
        let Some(first) = steps.first() else {
            return Err(crate::Error::Shape("recurrent cell needs at least one step".into()));
        };
        let rows = first.shape()[0];
        let tape = first.tape();
        let mut h = tape.constant(Tensor::zeros(&[rows, hdim]));
        let mut c = tape.constant(Tensor::zeros(&[rows, hdim]));
        for x in steps {
            let z = x.dense(&vars[self.w_x.0], &vars[self.b.0])?.add(&h.matmul(&vars[self.w_h.0])?)?;
            let i = z.slice_cols(0, hdim)?.sigmoid();
            let f = z.slice_cols(hdim, hdim)?.sigmoid();
            let g = z.slice_cols(2 * hdim, hdim)?.tanh();
            let o = z.slice_cols(3 * hdim, hdim)?.sigmoid();
            c = f.mul(&c)?.add(&i.mul(&g)?)?;
            h = o.mul(&c.tanh())?;
        }
        Ok(h)
    }
}
