//! Complex arithmetic over pairs of real variables.

use crate::{Result, Tape, Tensor, Var};

/// A complex-valued tensor as separate real and imaginary parts of equal shape.
#[derive(Debug, Clone, Copy)]
pub struct CVar<'t> {
    pub re: Var<'t>,
    pub im: Var<'t>,
}

impl<'t> CVar<'t> {
    pub fn new(re: Var<'t>, im: Var<'t>) -> Self {
        Self { re, im }
    }

    /// A constant complex tensor from its parts.
    pub fn constant(tape: &'t Tape, re: Tensor, im: Tensor) -> Self {
        Self { re: tape.constant(re), im: tape.constant(im) }
    }

    /// `e^{jψ}` elementwise.
    pub fn from_phase(psi: &Var<'t>) -> Self {
        Self { re: psi.cos(), im: psi.sin() }
    }

    /// Elementwise product.
    pub fn mul(&self, o: &CVar<'t>) -> Result<CVar<'t>> {
        let re = self.re.mul(&o.re)?.sub(&self.im.mul(&o.im)?)?;
        let im = self.re.mul(&o.im)?.add(&self.im.mul(&o.re)?)?;
        Ok(Self { re, im })
    }

    /// Matrix product `A B` (2-D or batched 3-D, no conjugation).
    pub fn matmul(&self, o: &CVar<'t>) -> Result<CVar<'t>> {
        let re = self.re.matmul(&o.re)?.sub(&self.im.matmul(&o.im)?)?;
        let im = self.re.matmul(&o.im)?.add(&self.im.matmul(&o.re)?)?;
        Ok(Self { re, im })
    }

    /// Matrix product `A Bᵀ` (plain transpose, no conjugation).
    pub fn matmul_t(&self, o: &CVar<'t>) -> Result<CVar<'t>> {
        let re = self.re.matmul_t(&o.re)?.sub(&self.im.matmul_t(&o.im)?)?;
        let im = self.re.matmul_t(&o.im)?.add(&self.im.matmul_t(&o.re)?)?;
        Ok(Self { re, im })
    }

    /// `|z|²` elementwise.
    pub fn abs2(&self) -> Result<Var<'t>> {
        self.re.square().add(&self.im.square())
    }

    /// Sum of `|z|²` over all entries.
    pub fn sq_norm(&self) -> Result<Var<'t>> {
        Ok(self.abs2()?.sum())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<CVar<'t>> {
        Ok(Self { re: self.re.reshape(shape)?, im: self.im.reshape(shape)? })
    }
}
