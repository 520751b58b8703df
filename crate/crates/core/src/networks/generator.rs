use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_elu, to_unit_range, Bound, Conv, ParamStore};
use crate::error::{invalid, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_channels: usize,
    pub input_resolution: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { base_channels: 16, input_resolution: 64, depth: 3, seed: 0 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.depth == 0 || self.depth > 6 {
            return Err(invalid(format!(
                "generator needs base_channels > 0 and 1 <= depth <= 6, got {} / {}",
                self.base_channels, self.depth
            )));
        }
        if self.input_resolution == 0 || self.input_resolution % (1 << self.depth) != 0 {
            return Err(invalid(format!(
                "input resolution {} not divisible by 2^{}",
                self.input_resolution, self.depth
            )));
        }
        Ok(())
    }

    /// Channel width at encoder level `i` (level 0 is full resolution).
    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level.min(2)
    }

    /// Extents accepted by the generator: any size divisible by `2^depth`.
    /// The configured resolution is the training size; inference on larger
    /// frames of the same divisibility is allowed.
    pub fn accepts(&self, h: usize, w: usize) -> bool {
        let q = 1 << self.depth;
        h > 0 && w > 0 && h % q == 0 && w % q == 0
    }
}

/// Strided encoder followed by two dilated bottleneck convs.
#[derive(Debug, Clone)]
struct Encoder {
    stem: Conv,
    down: Vec<Conv>,
    bottleneck: Vec<Conv>,
}

impl Encoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let stem = Conv::new(store, &format!("{name}.stem"), 4, cfg.width(0), 3, 1, 1, rng);
        let down = (1..=cfg.depth)
            .map(|i| Conv::new(store, &format!("{name}.down{i}"), cfg.width(i - 1), cfg.width(i), 3, 2, 1, rng))
            .collect();
        let wd = cfg.width(cfg.depth);
        let bottleneck = [2, 4]
            .iter()
            .enumerate()
            .map(|(i, &d)| Conv::new(store, &format!("{name}.dilated{i}"), wd, wd, 3, 1, d, rng))
            .collect();
        Self { stem, down, bottleneck }
    }

    /// Features per level `0..=depth`, then the bottleneck output.
    fn forward(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<(Vec<Var>, Var)> {
        let mut feats = vec![conv_elu(g, b, &self.stem, x)?];
        for conv in &self.down {
            let prev = *feats.last().expect("stem feature");
            feats.push(conv_elu(g, b, conv, prev)?);
        }
        let mut h = *feats.last().expect("deepest feature");
        for conv in &self.bottleneck {
            h = conv_elu(g, b, conv, h)?;
        }
        Ok((feats, h))
    }
}

/// Nearest-upsample then conv, one stage per level, ending in an RGB head.
#[derive(Debug, Clone)]
struct ImageDecoder {
    up: Vec<Conv>,
    head: Conv,
}

impl ImageDecoder {
    fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let up = (0..cfg.depth)
            .rev()
            .map(|i| Conv::new(store, &format!("{name}.up{i}"), cfg.width(i + 1), cfg.width(i), 3, 1, 1, rng))
            .collect();
        let head = Conv::new(store, &format!("{name}.rgb"), cfg.width(0), 3, 3, 1, 1, rng);
        Self { up, head }
    }

    /// Returns the image and the decoder features from coarsest to finest.
    fn forward(&self, g: &mut Graph, b: &Bound, bottleneck: Var) -> Result<(Var, Vec<Var>)> {
        let mut h = bottleneck;
        let mut taps = Vec::with_capacity(self.up.len());
        for conv in &self.up {
            let u = g.upsample_nearest2x(h)?;
            h = conv_elu(g, b, conv, u)?;
            taps.push(h);
        }
        let rgb = self.head.forward(g, b, h)?;
        Ok((to_unit_range(g, rgb), taps))
    }
}

/// Reads the bottleneck, the encoder skip and a 1x1 projection of the image
/// decoder feature at every level.
#[derive(Debug, Clone)]
struct ConfidenceDecoder {
    entry: Conv,
    project: Vec<Conv>,
    up: Vec<Conv>,
    head: Conv,
}

impl ConfidenceDecoder {
    fn new(store: &mut ParamStore, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let half = |i: usize| (cfg.width(i) / 2).max(1);
        let entry = Conv::new(store, "conf.entry", cfg.width(cfg.depth), half(cfg.depth), 3, 1, 1, rng);
        let mut project = Vec::new();
        let mut up = Vec::new();
        for i in (0..cfg.depth).rev() {
            project.push(Conv::new(store, &format!("conf.proj{i}"), cfg.width(i), half(i), 1, 1, 1, rng));
            let cin = half(i + 1) + cfg.width(i) + half(i);
            up.push(Conv::new(store, &format!("conf.up{i}"), cin, half(i), 3, 1, 1, rng));
        }
        let head = Conv::new(store, "conf.head", half(0), 1, 3, 1, 1, rng);
        Self { entry, project, up, head }
    }

    fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        enc: &[Var],
        bottleneck: Var,
        dec: &[Var],
        taps: Taps,
    ) -> Result<Var> {
        let mut h = conv_elu(g, b, &self.entry, bottleneck)?;
        let depth = enc.len() - 1;
        for (k, (proj, conv)) in self.project.iter().zip(&self.up).enumerate() {
            let level = depth - 1 - k;
            let tap = match taps {
                Taps::Live => dec[k],
                Taps::Zeroed => {
                    let zero = Tensor::zeros(g.value(dec[k]).shape());
                    g.constant(zero)
                }
            };
            let p = conv_elu(g, b, proj, tap)?;
            let u = g.upsample_nearest2x(h)?;
            let cat = g.concat(&[u, enc[level], p])?;
            h = conv_elu(g, b, conv, cat)?;
        }
        let logits = self.head.forward(g, b, h)?;
        Ok(g.sigmoid(logits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
enum Taps {
    Live,
    Zeroed,
}

#[derive(Debug, Clone, Copy)]
pub struct GenOutput {
    pub coarse: Var,
    pub fine: Var,
    pub confidence: Var,
}

/// Coarse network plus the fine network with image and confidence decoders.
#[derive(Debug, Clone)]
pub struct InpaintNet {
    config: GeneratorConfig,
    params: ParamStore,
    coarse_enc: Encoder,
    coarse_dec: ImageDecoder,
    fine_enc: Encoder,
    fine_dec: ImageDecoder,
    conf_dec: ConfidenceDecoder,
}

impl InpaintNet {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let coarse_enc = Encoder::new(&mut params, "coarse.enc", &config, &mut rng);
        let coarse_dec = ImageDecoder::new(&mut params, "coarse.dec", &config, &mut rng);
        let fine_enc = Encoder::new(&mut params, "fine.enc", &config, &mut rng);
        let fine_dec = ImageDecoder::new(&mut params, "fine.dec", &config, &mut rng);
        let conf_dec = ConfidenceDecoder::new(&mut params, &config, &mut rng);
        Ok(Self { config, params, coarse_enc, coarse_dec, fine_enc, fine_dec, conf_dec })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_inputs(&self, g: &Graph, z: Var, m: Var) -> Result<()> {
        let (n, c, h, w) = g.value(z).dims4()?;
        let (mn, mc, mh, mw) = g.value(m).dims4()?;
        if c != 3 || mc != 1 || (n, h, w) != (mn, mh, mw) {
            return Err(crate::error::extent(format!(
                "generator expects [N,3,H,W] image and [N,1,H,W] mask, got {:?} and {:?}",
                g.value(z).shape(),
                g.value(m).shape()
            )));
        }
        if !self.config.accepts(h, w) {
            return Err(crate::error::extent(format!(
                "{h}x{w} input is not divisible by 2^{}",
                self.config.depth
            )));
        }
        Ok(())
    }

    pub fn coarse_forward(&self, g: &mut Graph, b: &Bound, z: Var, m: Var) -> Result<Var> {
        self.check_inputs(g, z, m)?;
        let x = g.concat(&[z, m])?;
        let (_, bottleneck) = self.coarse_enc.forward(g, b, x)?;
        Ok(self.coarse_dec.forward(g, b, bottleneck)?.0)
    }

    /// Fine pass on `coarse∘m + z`; returns `(y, c)`.
    pub fn fine_forward(&self, g: &mut Graph, b: &Bound, coarse: Var, z: Var, m: Var) -> Result<(Var, Var)> {
        self.fine_with(g, b, coarse, z, m, Taps::Live)
    }

    fn fine_with(&self, g: &mut Graph, b: &Bound, coarse: Var, z: Var, m: Var, taps: Taps) -> Result<(Var, Var)> {
        self.check_inputs(g, z, m)?;
        let m3 = g.expand_channels(m, 3)?;
        let hole = g.mul(coarse, m3)?;
        let merged = g.add(hole, z)?;
        let x = g.concat(&[merged, m])?;
        let (enc, bottleneck) = self.fine_enc.forward(g, b, x)?;
        let (y, dec) = self.fine_dec.forward(g, b, bottleneck)?;
        // The confidence decoder reads shared features but trains alone.
        let enc: Vec<Var> = enc.into_iter().map(|v| g.detach(v)).collect();
        let dec: Vec<Var> = dec.into_iter().map(|v| g.detach(v)).collect();
        let bottleneck = g.detach(bottleneck);
        let c = self.conf_dec.forward(g, b, &enc, bottleneck, &dec, taps)?;
        Ok((y, c))
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, z: Var, m: Var) -> Result<GenOutput> {
        let coarse = self.coarse_forward(g, b, z, m)?;
        let (fine, confidence) = self.fine_forward(g, b, coarse, z, m)?;
        Ok(GenOutput { coarse, fine, confidence })
    }

    /// Forward pass without gradients on plain tensors: `(coarse, y, c)`.
    pub fn infer(&self, z: &Tensor, m: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let mv = g.constant(m.clone());
        let out = self.forward(&mut g, &b, zv, mv)?;
        Ok((g.value(out.coarse).clone(), g.value(out.fine).clone(), g.value(out.confidence).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(g: &mut Graph, n: usize, s: usize) -> (Var, Var) {
        let m = Tensor::from_fn(&[n, 1, s, s], |i| ((i % s) > s / 3 && (i / s) % s < s / 2) as u8 as f64);
        let z = Tensor::from_fn(&[n, 3, s, s], |i| {
            let p = i % (s * s);
            (1.0 - m.data()[(i / (3 * s * s)) * s * s + p]) * ((i * 37 % 101) as f64 / 101.0)
        });
        (g.constant(z), g.constant(m))
    }

    #[test]
    fn decoder_taps_feed_confidence() {
        let cfg = GeneratorConfig { base_channels: 4, input_resolution: 16, depth: 2, seed: 3 };
        let net = InpaintNet::new(cfg).unwrap();
        let mut g = Graph::new();
        let b = net.params.bind(&mut g, false);
        let (z, m) = inputs(&mut g, 1, 16);
        let coarse = net.coarse_forward(&mut g, &b, z, m).unwrap();
        let (y_live, c_live) = net.fine_with(&mut g, &b, coarse, z, m, Taps::Live).unwrap();
        let (y_zero, c_zero) = net.fine_with(&mut g, &b, coarse, z, m, Taps::Zeroed).unwrap();
        assert_eq!(g.value(y_live), g.value(y_zero));
        let diff: f64 = g
            .value(c_live)
            .data()
            .iter()
            .zip(g.value(c_zero).data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "confidence ignores decoder features (diff {diff})");
    }
}
