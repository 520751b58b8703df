//! Hinge adversarial, image reconstruction and confidence objectives.

use serde::{Deserialize, Serialize};

use crate::error::{extent, invalid, Result};
use crate::networks::{Bound, Discriminator};
use crate::tensor::{Graph, Var};

/// Anything that maps an RGB batch to a score map on a graph.
pub trait Critic {
    fn score(&self, g: &mut Graph, img: Var) -> Result<Var>;
}

impl<F> Critic for F
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    fn score(&self, g: &mut Graph, img: Var) -> Result<Var> {
        self(g, img)
    }
}

/// A discriminator with its parameters bound onto the graph being built.
pub struct BoundCritic<'a> {
    pub net: &'a Discriminator,
    pub bound: &'a Bound,
}

impl Critic for BoundCritic<'_> {
    fn score(&self, g: &mut Graph, img: Var) -> Result<Var> {
        self.net.forward(g, self.bound, img)
    }
}

/// How an L1 distance is reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Mean over every element.
    Mean,
    /// Per sample, the sum over pixels of the channel-mean absolute
    /// difference; then the mean over the batch.
    PixelSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adversarial: f64,
    pub fine_l1: f64,
    pub coarse_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adversarial: 1.0, fine_l1: 1.0, coarse_l1: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub d_loss: f64,
    pub g_hinge: f64,
    pub g_l1_fine: f64,
    pub g_l1_coarse: f64,
    pub conf_main: f64,
    pub conf_penalty_l1: f64,
    pub conf_penalty_l2: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn fields(&self) -> [(&'static str, f64); 8] {
        [
            ("d_loss", self.d_loss),
            ("g_hinge", self.g_hinge),
            ("g_l1_fine", self.g_l1_fine),
            ("g_l1_coarse", self.g_l1_coarse),
            ("conf_main", self.conf_main),
            ("conf_penalty_l1", self.conf_penalty_l1),
            ("conf_penalty_l2", self.conf_penalty_l2),
            ("lambda", self.lambda),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.fields().iter().all(|(_, v)| v.is_finite())
    }

    /// Field-wise mean, used to average the unrolled passes.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            d_loss: sum(|b| b.d_loss),
            g_hinge: sum(|b| b.g_hinge),
            g_l1_fine: sum(|b| b.g_l1_fine),
            g_l1_coarse: sum(|b| b.g_l1_coarse),
            conf_main: sum(|b| b.conf_main),
            conf_penalty_l1: sum(|b| b.conf_penalty_l1),
            conf_penalty_l2: sum(|b| b.conf_penalty_l2),
            lambda: items.first().map_or(0.0, |b| b.lambda),
        }
    }
}

fn same_image_shape(g: &Graph, vars: &[Var], m: Var) -> Result<()> {
    let shape = g.value(vars[0]).shape().to_vec();
    let (n, c, h, w) = g.value(vars[0]).dims4()?;
    if c != 3 {
        return Err(extent(format!("expected RGB batch, got {shape:?}")));
    }
    for &v in vars {
        if g.value(v).shape() != shape.as_slice() {
            return Err(extent(format!("{:?} vs {shape:?}", g.value(v).shape())));
        }
    }
    if g.value(m).shape() != [n, 1, h, w] {
        return Err(extent(format!("mask {:?} vs image {shape:?}", g.value(m).shape())));
    }
    Ok(())
}

/// `y∘m + z`.
pub fn composite(g: &mut Graph, y: Var, z: Var, m: Var) -> Result<Var> {
    let m3 = g.expand_channels(m, 3)?;
    let hole = g.mul(y, m3)?;
    Ok(g.add(hole, z)?)
}

/// Mean of `relu(1 - s)`.
pub fn hinge_real(g: &mut Graph, s: Var) -> Var {
    let t = g.one_minus(s);
    let r = g.relu(t);
    g.mean(r)
}

/// Mean of `relu(1 + s)`.
pub fn hinge_fake(g: &mut Graph, s: Var) -> Var {
    let t = g.affine(s, 1.0, 1.0);
    let r = g.relu(t);
    g.mean(r)
}

pub fn l1(g: &mut Graph, a: Var, b: Var, reduction: Reduction) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(match reduction {
        Reduction::Mean => g.mean(d),
        Reduction::PixelSum => {
            let channels = g.value(d).shape().get(1).copied().unwrap_or(1).max(1);
            let s = g.sum_per_sample(d)?;
            let s = g.mean(s);
            g.affine(s, 1.0 / channels as f64, 0.0)
        }
    })
}

/// `mean relu(1 - D(x)) + mean relu(1 + D(y∘m + z))`.
pub fn discriminator_loss(g: &mut Graph, d: &impl Critic, x: Var, y: Var, z: Var, m: Var) -> Result<Var> {
    same_image_shape(g, &[x, y, z], m)?;
    let fake = composite(g, y, z, m)?;
    let sr = d.score(g, x)?;
    let sf = d.score(g, fake)?;
    let real = hinge_real(g, sr);
    let fake = hinge_fake(g, sf);
    Ok(g.add(real, fake)?)
}

#[derive(Debug, Clone, Copy)]
pub struct ImageLoss {
    pub hinge: Var,
    pub l1: Var,
    /// `adversarial * hinge + l1`.
    pub total: Var,
}

/// `mean relu(1 - D(y∘m + z))` plus the L1 distance between `y` and `x`.
pub fn image_loss(
    g: &mut Graph,
    d: &impl Critic,
    y: Var,
    z: Var,
    m: Var,
    x: Var,
    adversarial: f64,
    reduction: Reduction,
) -> Result<ImageLoss> {
    same_image_shape(g, &[y, z, x], m)?;
    let comp = composite(g, y, z, m)?;
    let s = d.score(g, comp)?;
    let hinge = hinge_real(g, s);
    let l1 = l1(g, y, x, reduction)?;
    let weighted = g.affine(hinge, adversarial, 0.0);
    let total = g.add(weighted, l1)?;
    Ok(ImageLoss { hinge, l1, total })
}

/// Image loss with the per-element mean L1.
pub fn generator_image_loss(
    g: &mut Graph,
    d: &impl Critic,
    y: Var,
    z: Var,
    m: Var,
    x: Var,
    adversarial: f64,
) -> Result<ImageLoss> {
    image_loss(g, d, y, z, m, x, adversarial, Reduction::Mean)
}

#[derive(Debug, Clone, Copy)]
pub struct ConfidenceLoss {
    /// Image loss of the blend `y∘c + x∘(1-c)`.
    pub main: Var,
    pub penalty_l1: Var,
    pub penalty_l2: Var,
    pub total: Var,
}

/// Confidence objective: the image loss of `y'∘c + x∘(1-c)` with
/// `y' = y∘m + z`, plus
/// `λ (‖(1-c)∘m‖₁ + ‖(1-c)∘m‖₂)`.
///
/// `y` is detached, so only `c` receives gradient. Norms are raw per-sample
/// sums and Euclidean norms averaged over the batch. The blend's L1 sums the
/// per-pixel channel-mean error, so `λ` acts as a per-pixel error threshold.
#[allow(clippy::too_many_arguments)]
pub fn confidence_loss(
    g: &mut Graph,
    d: &impl Critic,
    y: Var,
    c: Var,
    z: Var,
    m: Var,
    x: Var,
    lambda: f64,
    adversarial: f64,
) -> Result<ConfidenceLoss> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("confidence loss needs lambda > 0, got {lambda}")));
    }
    same_image_shape(g, &[y, z, x], m)?;
    if g.value(c).shape() != g.value(m).shape() {
        return Err(extent(format!("confidence {:?} vs mask {:?}", g.value(c).shape(), g.value(m).shape())));
    }
    let y = g.detach(y);
    // Outside the hole the composite equals x, so only hole pixels carry loss.
    let y = composite(g, y, z, m)?;
    let c3 = g.expand_channels(c, 3)?;
    let yc = g.mul(y, c3)?;
    let inv3 = g.one_minus(c3);
    let xc = g.mul(x, inv3)?;
    let blend = g.add(yc, xc)?;
    let main = image_loss(g, d, blend, z, m, x, adversarial, Reduction::PixelSum)?.total;

    let inv = g.one_minus(c);
    let gap = g.mul(inv, m)?;
    let p1 = g.sum_per_sample(gap)?;
    let penalty_l1 = g.mean(p1);
    let sq = g.mul(gap, gap)?;
    let sq = g.sum_per_sample(sq)?;
    let norm = g.sqrt(sq);
    let penalty_l2 = g.mean(norm);

    let pen = g.add(penalty_l1, penalty_l2)?;
    let pen = g.affine(pen, lambda, 0.0);
    let total = g.add(main, pen)?;
    Ok(ConfidenceLoss { main, penalty_l1, penalty_l2, total })
}

/// Penalty form used by [`binary_confidence_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    /// `λ((|H|-|C|) + sqrt(|H|-|C|))`.
    L1L2,
    /// `λ(|H|-|C|)`.
    L1,
}

pub const ORACLE_MAX_HOLE: usize = 20;

/// Objective of a binary confidence set `chosen` over per-pixel losses.
pub fn binary_objective(local: &[f64], chosen: &[bool], lambda: f64, penalty: Penalty) -> f64 {
    let kept: f64 = local.iter().zip(chosen).filter(|(_, &c)| c).map(|(l, _)| l).sum();
    let missing = chosen.iter().filter(|&&c| !c).count() as f64;
    kept + lambda
        * match penalty {
            Penalty::L1L2 => missing + missing.sqrt(),
            Penalty::L1 => missing,
        }
}

/// Exhaustive minimizer over all `2^|H|` binary confidence sets. Ties go to
/// the subset with the smallest bitmask.
pub fn binary_confidence_oracle(local: &[f64], lambda: f64, penalty: Penalty) -> Result<Vec<bool>> {
    if local.len() > ORACLE_MAX_HOLE {
        return Err(invalid(format!("oracle limited to {ORACLE_MAX_HOLE} pixels, got {}", local.len())));
    }
    let n = local.len();
    let mut best = (f64::INFINITY, 0u32);
    let mut chosen = vec![false; n];
    for bits in 0u32..(1u32 << n) {
        for (i, c) in chosen.iter_mut().enumerate() {
            *c = bits >> i & 1 == 1;
        }
        let v = binary_objective(local, &chosen, lambda, penalty);
        if v < best.0 {
            best = (v, bits);
        }
    }
    Ok((0..n).map(|i| best.1 >> i & 1 == 1).collect())
}
