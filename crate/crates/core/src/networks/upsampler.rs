use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_elu, to_unit_range, Bound, Conv, ParamStore};
use crate::error::{extent, invalid, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsamplerConfig {
    pub base_channels: usize,
    pub lr_resolution: usize,
    /// Side of a patch on the similarity feature map (LR/4).
    pub sim_patch: usize,
    pub seed: u64,
}

impl Default for UpsamplerConfig {
    fn default() -> Self {
        Self { base_channels: 8, lr_resolution: 64, sim_patch: 2, seed: 2 }
    }
}

impl UpsamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.sim_patch == 0 {
            return Err(invalid("upsampler needs base_channels > 0 and sim_patch > 0"));
        }
        if self.lr_resolution % (4 * self.sim_patch) != 0 {
            return Err(invalid(format!(
                "LR resolution {} must be divisible by 4 * sim_patch ({})",
                self.lr_resolution, self.sim_patch
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpsamplerOutput {
    pub similarity: Var,
    pub features: Var,
}

/// The similarity net (LR image to LR/4 features) and the reconstruction
/// encoder-decoder with mirrored skips plus a two-conv RGB head.
#[derive(Debug, Clone)]
pub struct GuidedUpsampler {
    config: UpsamplerConfig,
    params: ParamStore,
    sim: Vec<Conv>,
    enc: Vec<Conv>,
    dec: Vec<Conv>,
    rgb: [Conv; 2],
}

impl GuidedUpsampler {
    pub fn new(config: UpsamplerConfig) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut p = ParamStore::default();
        let sim = vec![
            Conv::new(&mut p, "sim.0", 3, c, 3, 1, 1, &mut rng),
            Conv::new(&mut p, "sim.1", c, 2 * c, 3, 2, 1, &mut rng),
            Conv::new(&mut p, "sim.2", 2 * c, 2 * c, 3, 2, 1, &mut rng),
        ];
        let enc = vec![
            Conv::new(&mut p, "rec.enc0", 4, c, 3, 1, 1, &mut rng),
            Conv::new(&mut p, "rec.enc1", c, 2 * c, 3, 2, 1, &mut rng),
            Conv::new(&mut p, "rec.enc2", 2 * c, 4 * c, 3, 2, 1, &mut rng),
        ];
        let dec = vec![
            Conv::new(&mut p, "rec.dec1", 4 * c + 2 * c, 2 * c, 3, 1, 1, &mut rng),
            Conv::new(&mut p, "rec.dec0", 2 * c + c, c, 3, 1, 1, &mut rng),
        ];
        let rgb = [
            Conv::new(&mut p, "rgb.0", c, c, 3, 1, 1, &mut rng),
            Conv::new(&mut p, "rgb.1", c, 3, 3, 1, 1, &mut rng),
        ];
        Ok(Self { config, params: p, sim, enc, dec, rgb })
    }

    pub fn config(&self) -> &UpsamplerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn similarity_features(&self, g: &mut Graph, b: &Bound, lr: Var) -> Result<Var> {
        let (_, c, h, w) = g.value(lr).dims4()?;
        if c != 3 || h % 4 != 0 || w % 4 != 0 {
            return Err(extent(format!("similarity net needs RGB with extents divisible by 4, got {:?}", g.value(lr).shape())));
        }
        let a = conv_elu(g, b, &self.sim[0], lr)?;
        let a = conv_elu(g, b, &self.sim[1], a)?;
        self.sim[2].forward(g, b, a)
    }

    /// HR feature map at full HR resolution from the zeroed HR input and mask.
    pub fn reconstruction_features(&self, g: &mut Graph, b: &Bound, hr: Var, m: Var) -> Result<Var> {
        self.reconstruct(g, b, hr, m, true)
    }

    fn reconstruct(&self, g: &mut Graph, b: &Bound, hr: Var, m: Var, skips: bool) -> Result<Var> {
        let (n, c, h, w) = g.value(hr).dims4()?;
        if c != 3 || g.value(m).shape() != [n, 1, h, w] || h % 4 != 0 || w % 4 != 0 {
            return Err(extent(format!(
                "reconstruction net needs [N,3,H,W] and [N,1,H,W] with H, W divisible by 4, got {:?} and {:?}",
                g.value(hr).shape(),
                g.value(m).shape()
            )));
        }
        let x = g.concat(&[hr, m])?;
        let e0 = conv_elu(g, b, &self.enc[0], x)?;
        let e1 = conv_elu(g, b, &self.enc[1], e0)?;
        let e2 = conv_elu(g, b, &self.enc[2], e1)?;
        let skip = |g: &mut Graph, v: Var| {
            if skips {
                v
            } else {
                let zero = Tensor::zeros(g.value(v).shape());
                g.constant(zero)
            }
        };
        let s1 = skip(g, e1);
        let s0 = skip(g, e0);
        let u = g.upsample_nearest2x(e2)?;
        let cat = g.concat(&[u, s1])?;
        let d1 = conv_elu(g, b, &self.dec[0], cat)?;
        let u = g.upsample_nearest2x(d1)?;
        let cat = g.concat(&[u, s0])?;
        conv_elu(g, b, &self.dec[1], cat)
    }

    pub fn to_rgb(&self, g: &mut Graph, b: &Bound, features: Var) -> Result<Var> {
        let h = conv_elu(g, b, &self.rgb[0], features)?;
        let out = self.rgb[1].forward(g, b, h)?;
        Ok(to_unit_range(g, out))
    }

    /// Check the 2x extent contract between an LR result and an HR input.
    pub fn check_pair(lr: (usize, usize), hr: (usize, usize)) -> Result<()> {
        if hr.0 != 2 * lr.0 || hr.1 != 2 * lr.1 {
            return Err(extent(format!(
                "HR extents {}x{} must be exactly twice LR extents {}x{}",
                hr.0, hr.1, lr.0, lr.1
            )));
        }
        Ok(())
    }

    /// Both feature maps for an LR result / HR input pair.
    pub fn features(&self, g: &mut Graph, b: &Bound, lr: Var, hr: Var, m: Var) -> Result<UpsamplerOutput> {
        let (_, _, lh, lw) = g.value(lr).dims4()?;
        let (_, _, hh, hw) = g.value(hr).dims4()?;
        Self::check_pair((lh, lw), (hh, hw))?;
        let similarity = self.similarity_features(g, b, lr)?;
        let features = self.reconstruction_features(g, b, hr, m)?;
        Ok(UpsamplerOutput { similarity, features })
    }
}
