//! Confidence-feedback iterative filling.
//!
//! Each pass fills the current hole, keeps the pixels whose confidence rose
//! above the recorded value, and shrinks the hole by exactly those pixels.

use std::path::Path;

use crate::error::{invalid, Result};
use crate::image::{check_extent, ConfidenceMap, GrayMap, Image, Mask};
use crate::networks::{Bound, GenOutput, InpaintNet};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_ITERATIONS: usize = 4;

/// One fill of an incomplete image: the full predicted image and a per-pixel
/// confidence in `[0, 1]`, both at the input extents.
pub trait Generator {
    fn fill(&self, z: &Image, m: &Mask) -> Result<(Image, ConfidenceMap)>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn fill(&self, z: &Image, m: &Mask) -> Result<(Image, ConfidenceMap)> {
        (**self).fill(z, m)
    }
}

impl Generator for InpaintNet {
    fn fill(&self, z: &Image, m: &Mask) -> Result<(Image, ConfidenceMap)> {
        check_extent(z, m)?;
        let (_, y, c) = self.infer(&z.to_tensor(), &m.to_tensor())?;
        Ok((Image::from_tensor(&y, 0)?, GrayMap::new(z.width(), z.height(), c.into_data())?))
    }
}

/// `1` where `d > 0`; ties are not updates.
pub fn binarize(d: &GrayMap) -> Mask {
    Mask::from_fn(d.width(), d.height(), |y, x| d.get(y, x) > 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub m: Mask,
    pub c: ConfidenceMap,
    pub u: Mask,
    pub y: Image,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub steps: Vec<TraceStep>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Writes `tNN_y.png`, `tNN_c.png`, `tNN_m.png` and `tNN_u.png` per step.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for s in &self.steps {
            let stem = format!("t{:02}", s.t);
            s.y.save(dir.join(format!("{stem}_y.png")))?;
            std::fs::write(dir.join(format!("{stem}_c.png")), s.c.encode_png()?)?;
            s.m.save(dir.join(format!("{stem}_m.png")))?;
            s.u.save(dir.join(format!("{stem}_u.png")))?;
        }
        Ok(())
    }
}

/// `(z_t, m_t, c_{t-1}, y_{t-1}, t)`.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub t: usize,
    pub z: Image,
    pub m: Mask,
    pub c_prev: ConfidenceMap,
    pub y_prev: Option<Image>,
    z1: Image,
    m1: Mask,
}

impl IterationState {
    pub fn start(z1: &Image, m1: &Mask) -> Result<Self> {
        check_extent(z1, m1)?;
        let plane = z1.width() * z1.height();
        if z1.data().iter().enumerate().any(|(i, &v)| v != 0.0 && m1.bits()[i % plane] != 0) {
            return Err(invalid("incomplete image must be zero inside the hole"));
        }
        let c0 = GrayMap::new(m1.width(), m1.height(), m1.bits().iter().map(|&b| 0.5 * b as f64).collect())?;
        Ok(Self { t: 1, z: z1.clone(), m: m1.clone(), c_prev: c0, y_prev: None, z1: z1.clone(), m1: m1.clone() })
    }

    pub fn step(&mut self, gen: &impl Generator) -> Result<TraceStep> {
        let (g, conf) = gen.fill(&self.z, &self.m)?;
        check_extent(&g, &self.m)?;
        check_extent(&conf, &self.m)?;
        let c = conf.masked(&self.m)?;
        let prev = self.c_prev.masked(&self.m)?;
        let d = GrayMap::new(c.width(), c.height(), c.data().iter().zip(prev.data()).map(|(a, b)| a - b).collect())?;
        let u = binarize(&d);
        let m_next = self.m.minus(&u)?;
        let y = match &self.y_prev {
            None => self.z1.composite(&g, &self.m1)?,
            Some(prev) => prev.composite(&g, &u)?,
        };
        let step = TraceStep { t: self.t, m: self.m.clone(), c: c.clone(), u, y: y.clone() };
        self.z = y.knock_out(&m_next)?;
        self.m = m_next;
        self.c_prev = c;
        self.y_prev = Some(y);
        self.t += 1;
        Ok(step)
    }
}

/// Run `iterations` passes and return the final image with the full trace.
pub fn run(gen: &impl Generator, z1: &Image, m1: &Mask, iterations: usize) -> Result<(Image, IterationTrace)> {
    if iterations == 0 {
        return Err(invalid("iteration count must be at least 1"));
    }
    let mut state = IterationState::start(z1, m1)?;
    let mut trace = IterationTrace::default();
    for _ in 0..iterations {
        trace.steps.push(state.step(gen)?);
    }
    let y = state.y_prev.expect("at least one pass ran");
    Ok((y, trace))
}

/// One generator pass recorded during training.
#[derive(Debug, Clone, Copy)]
pub struct UnrollPass {
    pub z: Var,
    pub m: Var,
    pub out: GenOutput,
}

/// Batched update rule on plain tensors; returns `(y_t, c_t, m_{t+1}, z_{t+1})`.
fn advance(
    y_prev: Option<&Tensor>,
    z: &Tensor,
    m: &Tensor,
    c_prev: &Tensor,
    g: &Tensor,
    conf: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let (n, _, h, w) = g.dims4()?;
    let plane = h * w;
    let c = conf.zip_map(m, |a, b| a * b)?;
    let mut u = vec![false; n * plane];
    for (i, ui) in u.iter_mut().enumerate() {
        *ui = c.data()[i] - c_prev.data()[i] * m.data()[i] > 0.0;
    }
    let m_next = Tensor::from_fn(m.shape(), |i| if u[i] { 0.0 } else { m.data()[i] });
    let pix = |i: usize| (i / (3 * plane)) * plane + i % plane;
    let y = Tensor::from_fn(g.shape(), |i| match y_prev {
        None => {
            if m.data()[pix(i)] != 0.0 {
                g.data()[i]
            } else {
                z.data()[i]
            }
        }
        Some(prev) => {
            if u[pix(i)] {
                g.data()[i]
            } else {
                prev.data()[i]
            }
        }
    });
    let z_next = Tensor::from_fn(g.shape(), |i| if m_next.data()[pix(i)] != 0.0 { 0.0 } else { y.data()[i] });
    Ok((y, c, m_next, z_next))
}

/// Training unroll: pass `t + 1` starts from constants derived from pass
/// `t`, so no gradient crosses a pass boundary.
pub fn training_unroll(
    g: &mut Graph,
    net: &InpaintNet,
    bound: &Bound,
    z1: &Tensor,
    m1: &Tensor,
    passes: usize,
) -> Result<Vec<UnrollPass>> {
    if passes == 0 {
        return Err(invalid("training unroll needs at least one pass"));
    }
    let mut z = z1.clone();
    let mut m = m1.clone();
    let mut c_prev = m1.map(|v| 0.5 * v);
    let mut y_prev: Option<Tensor> = None;
    let mut out = Vec::with_capacity(passes);
    for t in 0..passes {
        let zv = g.constant(z.clone());
        let mv = g.constant(m.clone());
        let o = net.forward(g, bound, zv, mv)?;
        out.push(UnrollPass { z: zv, m: mv, out: o });
        if t + 1 == passes {
            break;
        }
        let (y, c, m_next, z_next) =
            advance(y_prev.as_ref(), &z, &m, &c_prev, g.value(o.fine), g.value(o.confidence))?;
        y_prev = Some(y);
        c_prev = c;
        m = m_next;
        z = z_next;
    }
    Ok(out)
}
