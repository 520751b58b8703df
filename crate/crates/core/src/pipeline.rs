//! Inference entry points shared by the CLI and the HTTP service.

use std::path::Path;
use std::time::Instant;

use serde::Deserialize;

use crate::checkpoint::Container;
use crate::error::{extent, invalid, Error, Result};
use crate::image::{check_extent, Image, Mask};
use crate::iterate::{self, IterationTrace};
use crate::networks::{GeneratorConfig, GuidedUpsampler, InpaintNet, UpsamplerConfig};
use crate::upsample::{guided_upsample, Controls};

/// Networks needed at inference time.
#[derive(Debug, Clone)]
pub struct Model {
    pub id: String,
    pub gen: InpaintNet,
    pub ups: Option<GuidedUpsampler>,
}

#[derive(Deserialize)]
struct ModelMeta {
    generator: GeneratorConfig,
    upsampler: Option<UpsamplerConfig>,
}

impl Model {
    pub fn from_container(id: impl Into<String>, c: &Container) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_str(&c.meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut gen = InpaintNet::new(meta.generator)?;
        gen.params_mut().import("gen", c)?;
        let ups = match meta.upsampler {
            Some(cfg) => {
                let mut u = GuidedUpsampler::new(cfg)?;
                u.params_mut().import("ups", c)?;
                Some(u)
            }
            None => None,
        };
        Ok(Self { id: id.into(), gen, ups })
    }

    /// Load a checkpoint; the id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_container(id, &Container::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Iterative filling at the input resolution.
    #[default]
    Direct,
    /// Iterative filling on the 2x-downsampled input, then guided upsampling
    /// and a residual pass at full resolution.
    Upsampled,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "upsampled" => Ok(Mode::Upsampled),
            _ => Err(invalid(format!("mode must be direct or upsampled, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InpaintOutput {
    pub image: Image,
    /// Trace of the main pass (LR in upsampled mode), cropped to the
    /// processed extents.
    pub trace: IterationTrace,
    /// Hole pixels handed to the full-resolution residual pass.
    pub residual: Option<Mask>,
    /// Guided upsampling had no valid context and the LR result was
    /// upsampled by pixel replication instead.
    pub fallback: bool,
    pub timings: Vec<(&'static str, f64)>,
}

fn round_up(v: usize, q: usize) -> usize {
    v.div_ceil(q) * q
}

fn pad_image(img: &Image, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |c, y, x| img.get(c, y.min(img.height() - 1), x.min(img.width() - 1)))
}

fn pad_mask(m: &Mask, w: usize, h: usize) -> Mask {
    Mask::from_fn(w, h, |y, x| y < m.height() && x < m.width() && m.get(y, x))
}

fn crop_image(img: &Image, w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |c, y, x| img.get(c, y, x))
}

fn crop_mask(m: &Mask, w: usize, h: usize) -> Mask {
    Mask::from_fn(w, h, |y, x| m.get(y, x))
}

fn crop_trace(trace: IterationTrace, w: usize, h: usize) -> IterationTrace {
    if trace.steps.first().is_none_or(|s| s.y.width() == w && s.y.height() == h) {
        return trace;
    }
    IterationTrace {
        steps: trace
            .steps
            .into_iter()
            .map(|s| iterate::TraceStep {
                t: s.t,
                m: crop_mask(&s.m, w, h),
                c: crate::image::GrayMap::new(w, h, (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| s.c.get(y, x)).collect())
                    .expect("cropped extents"),
                u: crop_mask(&s.u, w, h),
                y: crop_image(&s.y, w, h),
            })
            .collect(),
    }
}

/// Fill `hole` in `image` with `iterations` confidence-feedback passes.
/// Pixels outside the hole are returned unchanged. Frames whose extents do not
/// suit the networks are edge-padded (padding counts as known) and cropped
/// back.
pub fn inpaint(
    model: &Model,
    image: &Image,
    hole: &Mask,
    iterations: usize,
    mode: Mode,
    controls: &Controls,
) -> Result<InpaintOutput> {
    check_extent(image, hole)?;
    if iterations == 0 {
        return Err(invalid("iterations must be at least 1"));
    }
    match mode {
        Mode::Direct => direct(model, image, hole, iterations),
        Mode::Upsampled => upsampled(model, image, hole, iterations, controls),
    }
}

fn direct(model: &Model, image: &Image, hole: &Mask, iterations: usize) -> Result<InpaintOutput> {
    let t0 = Instant::now();
    let q = 1 << model.gen.config().depth;
    let (w, h) = (image.width(), image.height());
    let (pw, ph) = (round_up(w, q), round_up(h, q));
    let img = pad_image(image, pw, ph);
    let m = pad_mask(hole, pw, ph);
    let (y, trace) = iterate::run(&model.gen, &img.knock_out(&m)?, &m, iterations)?;
    let out = image.composite(&crop_image(&y, w, h), hole)?;
    Ok(InpaintOutput {
        image: out,
        trace: crop_trace(trace, w, h),
        residual: None,
        fallback: false,
        timings: vec![("iterate", t0.elapsed().as_secs_f64())],
    })
}

fn upsampled(model: &Model, image: &Image, hole: &Mask, iterations: usize, controls: &Controls) -> Result<InpaintOutput> {
    let ups = model.ups.as_ref().ok_or_else(|| invalid("checkpoint has no guided upsampler"))?;
    let (w, h) = (image.width(), image.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(extent(format!("upsampled mode needs even extents, got {w}x{h}")));
    }
    for r in [&controls.avoid, &controls.use_region].into_iter().flatten() {
        check_extent(image, r)?;
    }
    let mut timings = Vec::new();
    let q = 2 * lcm(1 << model.gen.config().depth, 4 * ups.config().sim_patch);
    let (pw, ph) = (round_up(w, q), round_up(h, q));
    let hr = pad_image(image, pw, ph);
    let hr_m = pad_mask(hole, pw, ph);

    let t = Instant::now();
    let lr = hr.downsample2x()?;
    let lr_m = hr_m.downsample2x_any()?;
    let (y_lr, trace) = iterate::run(&model.gen, &lr.knock_out(&lr_m)?, &lr_m, iterations)?;
    timings.push(("iterate_lr", t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let lr_controls = Controls {
        avoid: controls.avoid.as_ref().map(|a| pad_mask(a, pw, ph).downsample2x_any()).transpose()?,
        use_region: controls.use_region.as_ref().map(|u| pad_mask(u, pw, ph).downsample2x_any()).transpose()?,
    };
    let (mut y, residual, fallback) = match guided_upsample(ups, &y_lr, &hr, &hr_m, &lr_controls) {
        Ok(u) => (u.image, u.residual, false),
        Err(Error::NoValidContext) => (hr.composite(&y_lr.upsample2x(), &hr_m)?, Mask::empty(pw, ph), true),
        Err(e) => return Err(e),
    };
    timings.push(("guided_upsample", t.elapsed().as_secs_f64()));

    if !residual.is_empty() {
        let t = Instant::now();
        y = iterate::run(&model.gen, &y.knock_out(&residual)?, &residual, iterations)?.0;
        timings.push(("residual", t.elapsed().as_secs_f64()));
    }
    let out = image.composite(&crop_image(&y, w, h), hole)?;
    Ok(InpaintOutput {
        image: out,
        trace: crop_trace(trace, w.div_ceil(2), h.div_ceil(2)),
        residual: Some(crop_mask(&residual, w, h)),
        fallback,
        timings,
    })
}

fn lcm(a: usize, b: usize) -> usize {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    a / gcd(a, b) * b
}
