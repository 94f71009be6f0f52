//! Named parameter storage and the small layers built on it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered map from parameter names to values. Insertion order is stable,
/// so iteration (and therefore optimizer updates and serialization) is
/// deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.values.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Sets every parameter whose name starts with `prefix` to `value`.
    pub fn fill_prefix(&mut self, prefix: &str, value: f64) -> usize {
        let mut touched = 0;
        for (name, t) in self.names.iter().zip(&mut self.values) {
            if name.starts_with(prefix) {
                t.data_mut().fill(value);
                touched += 1;
            }
        }
        touched
    }

    /// Replaces values with those of `other`, which must hold the same
    /// names and shapes in the same order.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Checkpoint("parameter names do not match the network".into()));
        }
        for ((name, dst), src) in self.names.iter().zip(&mut self.values).zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored shape {:?}, network expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    /// Records every parameter on `tape` as a gradient-receiving leaf.
    pub fn bind(&self, tape: &Tape) -> BoundParams {
        BoundParams {
            vars: self.values.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &Tape) -> BoundParams {
        BoundParams {
            vars: self.values.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// Parameters recorded on one tape.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps vars already on a tape, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    /// Gradients in store order, zeros where a parameter was unused.
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape().to_vec())))
            .collect()
    }
}

/// A convolution with bias, `kernel ∈ {1, 3}`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

impl Conv2d {
    /// Weights and bias uniform in `±sqrt(1 / fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / (c_in * kernel * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(vec![c_out, c_in, kernel, kernel], -bound, bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::uniform(vec![c_out], -bound, bound, rng));
        Self { weight, bias, stride }
    }

    pub fn forward(&self, p: &BoundParams, x: &Var) -> Result<Var> {
        x.conv2d(p.var(self.weight), Some(p.var(self.bias)), self.stride)
    }
}

/// Channel layer normalization with a learned per-channel gain and shift
/// (initialized to 1 and 0).
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(vec![channels])),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(vec![channels])),
        }
    }

    pub fn forward(&self, p: &BoundParams, x: &Var) -> Result<Var> {
        x.layer_norm()?.channel_affine(p.var(self.gain), p.var(self.shift))
    }
}
