//! Adversarial training with the two-pass unroll, validation-driven stopping,
//! checkpointing and the ablation harness.

mod ablation;
mod config;

pub use ablation::{
    ablation_run, distance_split, format_ablation_table, run_predefined, AblationFlags, AblationRow,
};
pub use config::TrainConfig;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::datagen::{make_batch, mix_seed, DirectoryPool, ImagePool, MaskSampler, ProceduralPool, Sample};
use crate::error::{invalid, Error, Result};
use crate::image::{Image, Mask};
use crate::iterate::{self, training_unroll};
use crate::losses::{confidence_loss, discriminator_loss, image_loss, l1, BoundCritic, LossBreakdown, Reduction};
use crate::metrics::{confidence_partition_eval, psnr, region_metrics};
use crate::networks::{Discriminator, GuidedUpsampler, InpaintNet, ParamStore};
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor, Var};
use crate::upsample::{grid_for, upsample_forward};

pub const CHECKPOINT_FORMAT: &str = "confill-checkpoint";
const VAL_SALT: u64 = 0x7661_6c69_6461_7465;
const UPS_SALT: u64 = 0x7570_7361_6d70_6c65;

pub type SharedPool = Arc<dyn ImagePool + Send + Sync>;

/// Hides saliency so no hole is trimmed.
struct NoSaliency(SharedPool);

impl ImagePool for NoSaliency {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn get(&self, index: usize) -> Result<(Image, Option<Mask>)> {
        Ok((self.0.get(index)?.0, None))
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub step: u64,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl Batch {
    /// `(x, m, z)` stacked as `[N,3,H,W]`, `[N,1,H,W]`, `[N,3,H,W]`.
    pub fn tensors(&self) -> Result<(Tensor, Tensor, Tensor)> {
        let x: Vec<Tensor> = self.samples.iter().map(|s| s.x.to_tensor()).collect();
        let m: Vec<Tensor> = self.samples.iter().map(|s| s.m.to_tensor()).collect();
        let z: Vec<Tensor> = self.samples.iter().map(|s| s.z.to_tensor()).collect();
        Ok((Tensor::cat(&x)?, Tensor::cat(&m)?, Tensor::cat(&z)?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    /// Mean PSNR after the final iteration.
    pub psnr: f64,
    /// Mean PSNR after each iteration `1..=T`.
    pub psnr_by_t: Vec<f64>,
    /// Mean hole-region L1 after the final iteration.
    pub hole_l1: f64,
    /// Share of samples whose first-pass hole pixels with `c > 0.5` have
    /// strictly lower L1 than those with `c <= 0.5`. Samples missing either
    /// side count as failures.
    pub confidence_share: f64,
    /// Samples where both confidence sides were present.
    pub confidence_both_sides: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps_run: u64,
    pub stopped_early: bool,
    pub best_psnr: Option<f64>,
    /// `(step, psnr)` each time a new best checkpoint was selected.
    pub best_history: Vec<(u64, f64)>,
    pub validations: Vec<(u64, Validation)>,
    pub last: Option<LossBreakdown>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpsamplerLoss {
    pub d_loss: f64,
    pub hinge: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    format: String,
    train: TrainConfig,
    generator: crate::networks::GeneratorConfig,
    discriminator: crate::networks::DiscriminatorConfig,
    upsampler: crate::networks::UpsamplerConfig,
    step: u64,
    ups_step: u64,
    best_psnr: Option<f64>,
    stale: usize,
    /// Batches are a pure function of `(seed, step)`; the next batch seed is
    /// recorded for inspection.
    next_batch_seed: u64,
    adam_steps: [u64; 4],
}

/// Validation sample from a held-out procedural pool with a guaranteed
/// nonempty hole.
pub fn held_out_samples(config: &TrainConfig, n: usize, salt: u64) -> Result<Vec<Sample>> {
    let sampler = config.eval_sampler()?;
    let r = config.resolution;
    let pool = ProceduralPool { resolution: r, base_seed: mix_seed(config.seed ^ salt, 1), size: usize::MAX };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (x, _) = pool.get(i)?;
        let mut k = 0u64;
        let m = loop {
            let m = sampler.sample(r, r, mix_seed(config.seed ^ salt, ((i as u64) << 16) | k))?;
            if !m.is_empty() && m.count() < r * r {
                break m;
            }
            k += 1;
        };
        out.push(Sample::new(x, m, false)?);
    }
    Ok(out)
}

pub struct Trainer {
    config: TrainConfig,
    pub gen: InpaintNet,
    pub disc: Discriminator,
    pub ups: GuidedUpsampler,
    pub ups_disc: Discriminator,
    g_opt: AdamState,
    d_opt: AdamState,
    u_opt: AdamState,
    ud_opt: AdamState,
    step: u64,
    ups_step: u64,
    best_psnr: Option<f64>,
    stale: usize,
    pool_a: SharedPool,
    pool_b: SharedPool,
    sampler: MaskSampler,
    val: Vec<Sample>,
}

fn adam(config: &TrainConfig, params: &ParamStore) -> AdamState {
    AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, params.values())
}

fn pools(config: &TrainConfig) -> Result<(SharedPool, SharedPool)> {
    let procedural = |salt: u64| -> SharedPool {
        Arc::new(ProceduralPool { resolution: config.resolution, base_seed: mix_seed(config.seed, salt), size: config.pool_size })
    };
    let a: SharedPool = match &config.image_dir_a {
        Some(dir) => Arc::new(DirectoryPool::open(dir, config.saliency_dir.as_deref())?),
        None => procedural(0xa),
    };
    let b: SharedPool = match &config.image_dir_b {
        Some(dir) => Arc::new(DirectoryPool::open(dir, config.saliency_dir.as_deref())?),
        None => procedural(0xb),
    };
    if config.realistic_data {
        Ok((a, b))
    } else {
        Ok((Arc::new(NoSaliency(a)), Arc::new(NoSaliency(b))))
    }
}

fn mean_var(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(g.affine(acc, 1.0 / vars.len() as f64, 0.0))
}

fn check_finite(step: u64, batch_seed: u64, fields: &[(&str, f64)]) -> Result<()> {
    let bad: Vec<String> = fields.iter().filter(|(_, v)| !v.is_finite()).map(|(k, v)| format!("{k}={v}")).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, batch_seed, detail: bad.join(", ") })
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let gen = InpaintNet::new(config.generator())?;
        let disc = Discriminator::new(config.discriminator())?;
        let ups = GuidedUpsampler::new(config.upsampler())?;
        let mut ud = config.discriminator();
        ud.seed = mix_seed(ud.seed, UPS_SALT);
        let ups_disc = Discriminator::new(ud)?;
        let (pool_a, pool_b) = pools(&config)?;
        let sampler = config.sampler()?;
        let val = held_out_samples(&config, config.validation_size, VAL_SALT)?;
        Ok(Self {
            g_opt: adam(&config, gen.params()),
            d_opt: adam(&config, disc.params()),
            u_opt: adam(&config, ups.params()),
            ud_opt: adam(&config, ups_disc.params()),
            config,
            gen,
            disc,
            ups,
            ups_disc,
            step: 0,
            ups_step: 0,
            best_psnr: None,
            stale: 0,
            pool_a,
            pool_b,
            sampler,
            val,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn ups_step(&self) -> u64 {
        self.ups_step
    }

    pub fn validation_set(&self) -> &[Sample] {
        &self.val
    }

    pub fn batch_seed(&self, step: u64) -> u64 {
        mix_seed(self.config.seed, step)
    }

    pub fn batch(&self, step: u64) -> Result<Batch> {
        let seed = self.batch_seed(step);
        let samples = make_batch(&*self.pool_a, &*self.pool_b, self.config.batch_size, seed, &self.sampler)?;
        Ok(Batch { step, seed, samples })
    }

    /// One discriminator update then one generator update, both over the
    /// unrolled passes.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let cfg = self.config.clone();
        let w = cfg.weights();
        let (x, m, z) = batch.tensors()?;

        let mut g = Graph::new();
        let gb = self.gen.params().bind(&mut g, true);
        let passes = training_unroll(&mut g, &self.gen, &gb, &z, &m, cfg.t_train)?;

        self.disc.power_iterate();
        let d_loss = {
            let mut dg = Graph::new();
            let db = self.disc.params().bind(&mut dg, true);
            let critic = BoundCritic { net: &self.disc, bound: &db };
            let xv = dg.constant(x.clone());
            let mut terms = Vec::with_capacity(passes.len());
            for p in &passes {
                let y = dg.constant(g.value(p.out.fine).clone());
                let zv = dg.constant(g.value(p.z).clone());
                let mv = dg.constant(g.value(p.m).clone());
                terms.push(discriminator_loss(&mut dg, &critic, xv, y, zv, mv)?);
            }
            let loss = mean_var(&mut dg, &terms)?;
            let value = dg.value(loss).item();
            check_finite(self.step, batch.seed, &[("d_loss", value)])?;
            dg.backward(loss)?;
            let grads = db.grads(&dg);
            self.d_opt.step(self.disc.params_mut().values_mut(), &grads)?;
            value
        };

        let db = self.disc.params().bind(&mut g, false);
        let critic = BoundCritic { net: &self.disc, bound: &db };
        let xv = g.constant(x);
        let mut totals = Vec::with_capacity(passes.len());
        let mut parts = Vec::with_capacity(passes.len());
        for p in &passes {
            let il = image_loss(&mut g, &critic, p.out.fine, p.z, p.m, xv, w.adversarial, Reduction::Mean)?;
            let coarse = l1(&mut g, p.out.coarse, xv, Reduction::Mean)?;
            let cl = confidence_loss(&mut g, &critic, p.out.fine, p.out.confidence, p.z, p.m, xv, cfg.lambda, w.adversarial)?;
            let a = g.affine(il.hinge, w.adversarial, 0.0);
            let f = g.affine(il.l1, w.fine_l1, 0.0);
            let c = g.affine(coarse, w.coarse_l1, 0.0);
            let s = g.add(a, f)?;
            let s = g.add(s, c)?;
            totals.push(if self.step >= cfg.confidence_warmup { g.add(s, cl.total)? } else { s });
            parts.push(LossBreakdown {
                d_loss,
                g_hinge: g.value(il.hinge).item(),
                g_l1_fine: g.value(il.l1).item(),
                g_l1_coarse: g.value(coarse).item(),
                conf_main: g.value(cl.main).item(),
                conf_penalty_l1: g.value(cl.penalty_l1).item(),
                conf_penalty_l2: g.value(cl.penalty_l2).item(),
                lambda: cfg.lambda,
            });
        }
        let total = mean_var(&mut g, &totals)?;
        let breakdown = LossBreakdown::mean(&parts);
        check_finite(self.step, batch.seed, &breakdown.fields())?;
        g.backward(total)?;
        let mut grads = gb.grads(&g);
        drop(g);
        if self.step < cfg.confidence_warmup {
            // The confidence decoder is outside the graph during warm-up.
            for (gr, v) in grads.iter_mut().zip(self.gen.params().values()) {
                gr.get_or_insert_with(|| Tensor::zeros(v.shape()));
            }
        }
        self.g_opt.step(self.gen.params_mut().values_mut(), &grads)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// Mean PSNR of `T`-iteration inference on the held-out set, plus the
    /// hole L1 and confidence-direction statistics.
    pub fn validate(&self) -> Result<Validation> {
        validate_generator(&self.gen, &self.val, self.config.val_iterations)
    }

    /// Train until `max_steps` or until validation PSNR stops improving for
    /// `patience` validations. Batches are synthesized on a background
    /// thread, at most two ahead.
    pub fn fit(&mut self, out_dir: Option<&Path>, mut log: Option<&mut dyn Write>) -> Result<FitReport> {
        let mut report = FitReport { best_psnr: self.best_psnr, ..Default::default() };
        let start = Instant::now();
        let (first, end) = (self.step, self.config.max_steps);
        if first >= end {
            return Ok(report);
        }
        let (pa, pb) = (self.pool_a.clone(), self.pool_b.clone());
        let sampler = self.sampler.clone();
        let (bs, seed) = (self.config.batch_size, self.config.seed);
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Batch>>(2);
            scope.spawn(move || {
                for step in first..end {
                    let bseed = mix_seed(seed, step);
                    let b = make_batch(&*pa, &*pb, bs, bseed, &sampler).map(|samples| Batch { step, seed: bseed, samples });
                    if tx.send(b).is_err() {
                        break;
                    }
                }
            });
            for batch in rx.iter() {
                let batch = batch?;
                let losses = self.train_step(&batch)?;
                report.steps_run += 1;
                report.last = Some(losses);
                if let Some(w) = log.as_deref_mut() {
                    let mut rec = serde_json::to_value(losses).expect("breakdown serializes");
                    rec["step"] = self.step.into();
                    rec["wall_time"] = start.elapsed().as_secs_f64().into();
                    writeln!(w, "{rec}")?;
                }
                if self.step % self.config.validation_every == 0 || self.step == end {
                    let v = self.validate()?;
                    if let Some(w) = log.as_deref_mut() {
                        let rec = serde_json::json!({
                            "step": self.step,
                            "val_psnr": v.psnr,
                            "val_psnr_by_t": v.psnr_by_t,
                            "val_hole_l1": v.hole_l1,
                            "val_confidence_share": v.confidence_share,
                            "wall_time": start.elapsed().as_secs_f64(),
                        });
                        writeln!(w, "{rec}")?;
                    }
                    if self.best_psnr.is_none_or(|b| v.psnr > b) {
                        self.best_psnr = Some(v.psnr);
                        self.stale = 0;
                        report.best_history.push((self.step, v.psnr));
                        if let Some(dir) = out_dir {
                            self.save(dir.join("best.ckpt"))?;
                        }
                    } else {
                        self.stale += 1;
                    }
                    report.validations.push((self.step, v));
                    if self.stale >= self.config.patience {
                        report.stopped_early = true;
                        break;
                    }
                }
            }
            Ok(())
        })?;
        report.best_psnr = self.best_psnr;
        if let Some(dir) = out_dir {
            self.save(dir.join("last.ckpt"))?;
        }
        Ok(report)
    }

    fn ups_batch(&self, step: u64) -> Result<Vec<Sample>> {
        let r = 2 * self.config.resolution;
        let seed = mix_seed(self.config.seed ^ UPS_SALT, step);
        let pool = ProceduralPool { resolution: r, base_seed: mix_seed(self.config.seed, UPS_SALT), size: self.config.pool_size };
        (0..self.config.ups_batch_size as u64)
            .map(|k| {
                let s = mix_seed(seed, k);
                let (x, _) = pool.get((s % pool.size as u64) as usize)?;
                let m = self.sampler.sample(r, r, mix_seed(s, 1))?;
                Sample::new(x, m, false)
            })
            .collect()
    }

    /// One upsampler update. The LR input is the downsampled ground truth.
    pub fn train_upsampler_step(&mut self) -> Result<UpsamplerLoss> {
        let samples = self.ups_batch(self.ups_step)?;
        let seed = mix_seed(self.config.seed ^ UPS_SALT, self.ups_step);
        let mut grids = Vec::with_capacity(samples.len());
        let mut lr = Vec::with_capacity(samples.len());
        for s in &samples {
            let grid = grid_for(&self.ups, &s.m.downsample2x_any()?)?;
            grids.push(if grid.valid.is_empty() { grid.without_holes() } else { grid });
            lr.push(s.x.downsample2x()?.to_tensor());
        }
        let x = Tensor::cat(&samples.iter().map(|s| s.x.to_tensor()).collect::<Vec<_>>())?;
        let z = Tensor::cat(&samples.iter().map(|s| s.z.to_tensor()).collect::<Vec<_>>())?;
        let m = Tensor::cat(&samples.iter().map(|s| s.m.to_tensor()).collect::<Vec<_>>())?;
        let adv = self.config.adversarial_weight;

        let mut g = Graph::new();
        let ub = self.ups.params().bind(&mut g, true);
        let lrv = g.constant(Tensor::cat(&lr)?);
        let zv = g.constant(z.clone());
        let mv = g.constant(m.clone());
        let rgb = upsample_forward(&mut g, &self.ups, &ub, lrv, zv, mv, &grids)?;

        self.ups_disc.power_iterate();
        let d_loss = {
            let mut dg = Graph::new();
            let db = self.ups_disc.params().bind(&mut dg, true);
            let critic = BoundCritic { net: &self.ups_disc, bound: &db };
            let xv = dg.constant(x.clone());
            let y = dg.constant(g.value(rgb).clone());
            let zd = dg.constant(z);
            let md = dg.constant(m);
            let loss = discriminator_loss(&mut dg, &critic, xv, y, zd, md)?;
            let value = dg.value(loss).item();
            check_finite(self.ups_step, seed, &[("ups_d_loss", value)])?;
            dg.backward(loss)?;
            let grads = db.grads(&dg);
            self.ud_opt.step(self.ups_disc.params_mut().values_mut(), &grads)?;
            value
        };

        let db = self.ups_disc.params().bind(&mut g, false);
        let critic = BoundCritic { net: &self.ups_disc, bound: &db };
        let xv = g.constant(x);
        let il = image_loss(&mut g, &critic, rgb, zv, mv, xv, adv, Reduction::Mean)?;
        let out = UpsamplerLoss { d_loss, hinge: g.value(il.hinge).item(), l1: g.value(il.l1).item() };
        check_finite(self.ups_step, seed, &[("ups_hinge", out.hinge), ("ups_l1", out.l1)])?;
        g.backward(il.total)?;
        let grads = ub.grads(&g);
        drop(g);
        self.u_opt.step(self.ups.params_mut().values_mut(), &grads)?;
        self.ups_step += 1;
        Ok(out)
    }

    pub fn fit_upsampler(&mut self, steps: u64, mut log: Option<&mut dyn Write>) -> Result<Option<UpsamplerLoss>> {
        let start = Instant::now();
        let mut last = None;
        for _ in 0..steps {
            let l = self.train_upsampler_step()?;
            if let Some(w) = log.as_deref_mut() {
                let mut rec = serde_json::to_value(l).expect("loss serializes");
                rec["ups_step"] = self.ups_step.into();
                rec["wall_time"] = start.elapsed().as_secs_f64().into();
                writeln!(w, "{rec}")?;
            }
            last = Some(l);
        }
        Ok(last)
    }

    fn meta(&self) -> Meta {
        Meta {
            format: CHECKPOINT_FORMAT.to_owned(),
            train: self.config.clone(),
            generator: *self.gen.config(),
            discriminator: *self.disc.config(),
            upsampler: *self.ups.config(),
            step: self.step,
            ups_step: self.ups_step,
            best_psnr: self.best_psnr,
            stale: self.stale,
            next_batch_seed: self.batch_seed(self.step),
            adam_steps: [self.g_opt.step, self.d_opt.step, self.u_opt.step, self.ud_opt.step],
        }
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::to_string(&self.meta()).expect("meta serializes");
        let mut c = Container::new(meta);
        self.gen.params().export("gen", &mut c);
        self.disc.export("disc", &mut c);
        self.ups.params().export("ups", &mut c);
        self.ups_disc.export("ups_disc", &mut c);
        for (name, opt) in [("g", &self.g_opt), ("d", &self.d_opt), ("u", &self.u_opt), ("ud", &self.ud_opt)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                c.push(format!("adam.{name}.m/{i}"), m.clone());
                c.push(format!("adam.{name}.v/{i}"), v.clone());
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&c.meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", meta.format)));
        }
        let mut t = Self::new(meta.train)?;
        if *t.gen.config() != meta.generator || *t.disc.config() != meta.discriminator || *t.ups.config() != meta.upsampler {
            return Err(Error::Checkpoint("network configs disagree with the training config".into()));
        }
        t.gen.params_mut().import("gen", c)?;
        t.disc.import("disc", c)?;
        t.ups.params_mut().import("ups", c)?;
        t.ups_disc.import("ups_disc", c)?;
        let opts = [&mut t.g_opt, &mut t.d_opt, &mut t.u_opt, &mut t.ud_opt];
        for ((name, opt), steps) in ["g", "d", "u", "ud"].into_iter().zip(opts).zip(meta.adam_steps) {
            for i in 0..opt.m.len() {
                for (kind, buf) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                    let key = format!("adam.{name}.{kind}/{i}");
                    let src = c.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                    if src.shape() != buf.shape() {
                        return Err(Error::Checkpoint(format!("{key}: shape mismatch")));
                    }
                    *buf = src.clone();
                }
            }
            opt.step = steps;
        }
        t.step = meta.step;
        t.ups_step = meta.ups_step;
        t.best_psnr = meta.best_psnr;
        t.stale = meta.stale;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Validation statistics for any generator over prepared samples.
pub fn validate_generator(gen: &impl iterate::Generator, samples: &[Sample], iterations: usize) -> Result<Validation> {
    if samples.is_empty() {
        return Err(invalid("validation set is empty"));
    }
    let mut v = Validation { psnr_by_t: vec![0.0; iterations], samples: samples.len(), ..Default::default() };
    let (mut l1_sum, mut l1_n, mut ok) = (0.0, 0usize, 0usize);
    for s in samples {
        let (y, trace) = iterate::run(gen, &s.z, &s.m, iterations)?;
        for (acc, step) in v.psnr_by_t.iter_mut().zip(&trace.steps) {
            *acc += psnr(&step.y, &s.x)?;
        }
        if let Some(r) = region_metrics(&y, &s.x, &s.m)? {
            l1_sum += r.l1;
            l1_n += 1;
        }
        let first = &trace.steps[0];
        if let (Some(hi), Some(lo)) = confidence_partition_eval(&first.y, &s.x, &first.c, &s.m, 0.5)? {
            v.confidence_both_sides += 1;
            if hi.l1 < lo.l1 {
                ok += 1;
            }
        }
    }
    let n = samples.len() as f64;
    v.psnr_by_t.iter_mut().for_each(|p| *p /= n);
    v.psnr = *v.psnr_by_t.last().expect("iterations >= 1");
    v.hole_l1 = if l1_n > 0 { l1_sum / l1_n as f64 } else { 0.0 };
    v.confidence_share = ok as f64 / n;
    Ok(v)
}

/// Default output layout of a training run.
pub fn run_paths(out_dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (out_dir.join("best.ckpt"), out_dir.join("last.ckpt"), out_dir.join("train_log.jsonl"))
}

