//! Named parameter storage shared by every network component.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Whether weight decay applies.
    pub decay: bool,
}

/// Ordered parameter list; insertion order is the canonical order for
/// checkpoints, gradient vectors and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param {
            name,
            tensor: tensor.with_requires_grad(true),
            decay,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    /// Adds a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        self.add_scaled(name, shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
    }

    /// He-uniform init, for weights feeding a ReLU.
    pub fn add_he(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        self.add_scaled(name, shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
    }

    fn add_scaled(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<ParamId> {
        let t = Tensor::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.add(name, t, true)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Records every parameter as a gradient-tracking leaf on `tape`.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.param(p.tensor.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| tape.constant(p.tensor.clone())).collect(),
        }
    }
}

/// Parameter handles on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps handles created elsewhere, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter after `tape.backward`, in store order.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| tape.grad(v).map(Tensor::into_data).unwrap_or_default())
            .collect()
    }
}
