//! Network definitions at configurable desk scale.
//!
//! Parameters live in a [`ParamStore`] and are bound onto a fresh
//! [`Graph`] for each forward pass, so a model is immutable during inference
//! and any number of graphs can read it concurrently.

mod discriminator;
mod generator;
mod upsampler;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{GenOutput, GeneratorConfig, InpaintNet};
pub use upsampler::{GuidedUpsampler, UpsamplerConfig, UpsamplerOutput};

use rand::Rng;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dSpec, Graph, SpectralWeight, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Put every parameter on `g`; trainable ones accumulate gradients.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(self.values.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
    }

    pub fn export(&self, prefix: &str, out: &mut Container) {
        for (n, v) in self.names.iter().zip(&self.values) {
            out.push(format!("{prefix}/{n}"), v.clone());
        }
    }

    pub fn import(&mut self, prefix: &str, src: &Container) -> Result<()> {
        for (n, v) in self.names.iter().zip(self.values.iter_mut()) {
            let key = format!("{prefix}/{n}");
            let t = src.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.shape() != v.shape() {
                return Err(Error::Checkpoint(format!("{key}: shape {:?}, model expects {:?}", t.shape(), v.shape())));
            }
            *v = t.clone();
        }
        Ok(())
    }

    /// Order-sensitive FNV-1a digest of every parameter bit pattern.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for x in v.data() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Graph handles for a [`ParamStore`] bound onto one graph.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn grads(&self, g: &Graph) -> Vec<Option<Tensor>> {
        self.0.iter().map(|&v| g.grad(v).cloned()).collect()
    }
}

/// Convolution layer with bias; optionally spectrally normalized.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
    pub spectral: Option<usize>,
}

impl Conv {
    /// Kaiming-uniform weights, zero bias. Padding keeps "same" extents at
    /// stride 1.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (cin * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let w = Tensor::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-bound..bound));
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        let padding = dilation * (k - 1) / 2;
        Self { weight, bias, spec: Conv2dSpec::new(stride, padding, dilation), spectral: None }
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, b.var(self.weight), Some(b.var(self.bias)), self.spec)?)
    }

    pub fn forward_spectral(&self, g: &mut Graph, b: &Bound, x: Var, sn: &SpectralWeight) -> Result<Var> {
        let w = sn.apply(g, b.var(self.weight))?;
        Ok(g.conv2d(x, w, Some(b.var(self.bias)), self.spec)?)
    }
}

/// `0.5 * (tanh(x) + 1)`, mapping to `(0, 1)`.
pub(crate) fn to_unit_range(g: &mut Graph, x: Var) -> Var {
    let t = g.tanh(x);
    g.affine(t, 0.5, 0.5)
}

pub(crate) fn conv_elu(g: &mut Graph, b: &Bound, conv: &Conv, x: Var) -> Result<Var> {
    let y = conv.forward(g, b, x)?;
    Ok(g.elu(y))
}
