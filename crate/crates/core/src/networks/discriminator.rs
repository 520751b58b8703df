use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, Conv, ParamStore};
use crate::checkpoint::Container;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Graph, SpectralWeight, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub stages: usize,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 16, stages: 4, seed: 1 }
    }
}

/// PatchGAN: stride-2 5x5 convs and a 1x1 scoring conv, every one spectrally
/// normalized. A 64x64 input gives a 4x4 score map whose elements each see a
/// 61x61 window.
#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    layers: Vec<Conv>,
    spectral: Vec<SpectralWeight>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig) -> Result<Self> {
        if config.base_channels == 0 || config.stages == 0 {
            return Err(invalid("discriminator needs base_channels > 0 and stages > 0"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let width = |i: usize| config.base_channels << i.min(2);
        let mut layers = Vec::new();
        let mut cin = 3;
        for i in 0..config.stages {
            layers.push(Conv::new(&mut params, &format!("disc.s{i}"), cin, width(i), 5, 2, 1, &mut rng));
            cin = width(i);
        }
        layers.push(Conv::new(&mut params, "disc.score", cin, 1, 1, 1, 1, &mut rng));
        let mut spectral = Vec::new();
        for (i, layer) in layers.iter_mut().enumerate() {
            spectral.push(SpectralWeight::new(layer.out_channels(&params), &mut rng));
            layer.spectral = Some(i);
        }
        Ok(Self { config, params, layers, spectral })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layers(&self) -> &[Conv] {
        &self.layers
    }

    pub fn spectral(&self) -> &[SpectralWeight] {
        &self.spectral
    }

    /// One power-iteration step per layer on the current weights.
    pub fn power_iterate(&mut self) {
        for (layer, sn) in self.layers.iter().zip(self.spectral.iter_mut()) {
            sn.power_iterate(self.params.get(layer.weight));
        }
    }

    /// Weights as used in the forward pass (`W / sigma`).
    pub fn effective_weights(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .zip(&self.spectral)
            .map(|(layer, sn)| {
                let w = self.params.get(layer.weight);
                let s = sn.sigma(w);
                w.map(|x| x / s)
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let (_, c, _, _) = g.value(x).dims4()?;
        if c != 3 {
            return Err(crate::error::extent(format!("discriminator expects RGB, got {c} channels")));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let sn = &self.spectral[layer.spectral.expect("discriminator conv without spectral state")];
            h = layer.forward_spectral(g, b, h, sn)?;
            if i < last {
                h = g.elu(h);
            }
        }
        Ok(h)
    }

    pub fn score(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let s = self.forward(&mut g, &b, xv)?;
        Ok(g.value(s).clone())
    }

    /// Parameters under `prefix/` and u-vectors under `prefix.u/`.
    pub fn export(&self, prefix: &str, out: &mut Container) {
        self.params.export(prefix, out);
        for (i, sn) in self.spectral.iter().enumerate() {
            out.push(format!("{prefix}.u/{i}"), Tensor::new(&[sn.u.len()], sn.u.clone()).expect("u shape"));
        }
    }

    pub fn import(&mut self, prefix: &str, src: &Container) -> Result<()> {
        self.params.import(prefix, src)?;
        for (i, sn) in self.spectral.iter_mut().enumerate() {
            let key = format!("{prefix}.u/{i}");
            let t = src.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if t.numel() != sn.u.len() {
                return Err(Error::Checkpoint(format!("{key}: length {} vs {}", t.numel(), sn.u.len())));
            }
            sn.u = t.data().to_vec();
        }
        Ok(())
    }
}
