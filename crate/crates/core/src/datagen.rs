//! Training/evaluation pair synthesis: free-form strokes, object-shaped holes
//! with random placement, saliency subtraction, procedural scenes and the
//! half-and-half batch mixing policy.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::{check_extent, Image, Mask};

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeParams {
    pub n_strokes: usize,
    pub max_vertices: usize,
    /// Brush diameter range as a fraction of the shorter canvas side.
    pub brush_width_range: (f64, f64),
    /// Maximum per-vertex turn, radians.
    pub angle_jitter: f64,
    /// Maximum segment length as a fraction of the shorter canvas side.
    pub max_segment: f64,
}

impl Default for StrokeParams {
    fn default() -> Self {
        Self {
            n_strokes: 3,
            max_vertices: 6,
            brush_width_range: (0.06, 0.16),
            angle_jitter: std::f64::consts::FRAC_PI_2,
            max_segment: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrokeMask {
    pub mask: Mask,
    /// Set when the parameters cannot produce any stroke.
    pub degenerate: bool,
}

fn stamp_capsule(m: &mut Mask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (w, h) = (m.width() as isize, m.height() as isize);
    let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as isize;
    let x1 = ((a.0.max(b.0) + radius).ceil() as isize).min(w - 1);
    let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as isize;
    let y1 = ((a.1.max(b.1) + radius).ceil() as isize).min(h - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in y0.max(0)..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
            if (px - cx).powi(2) + (py - cy).powi(2) <= radius * radius {
                m.set(y as usize, x as usize, true);
            }
        }
    }
}

/// Union of piecewise-linear brush strokes with round caps.
pub fn random_stroke_mask(
    width: usize,
    height: usize,
    seed: u64,
    params: &StrokeParams,
) -> Result<StrokeMask> {
    if width < 16 || height < 16 {
        return Err(invalid(format!(
            "stroke canvas {width}x{height} is smaller than 16x16"
        )));
    }
    let mut mask = Mask::empty(width, height);
    if params.n_strokes == 0 || params.max_vertices == 0 {
        return Ok(StrokeMask {
            mask,
            degenerate: true,
        });
    }
    let (lo, hi) = params.brush_width_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(invalid("brush_width_range must satisfy 0 < min <= max"));
    }
    let side = width.min(height) as f64;
    let mut rng = seeded(seed);
    for _ in 0..params.n_strokes {
        let mut p = (
            rng.gen_range(0.0..width as f64),
            rng.gen_range(0.0..height as f64),
        );
        let radius = 0.5 * side * if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let vertices = rng.gen_range(1..=params.max_vertices);
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        stamp_capsule(&mut mask, p, p, radius);
        for _ in 0..vertices {
            if params.angle_jitter > 0.0 {
                heading += rng.gen_range(-params.angle_jitter..=params.angle_jitter);
            }
            let len = rng.gen_range(0.0..=params.max_segment * side);
            let q = (
                (p.0 + len * heading.cos()).clamp(0.0, width as f64 - 1e-9),
                (p.1 + len * heading.sin()).clamp(0.0, height as f64 - 1e-9),
            );
            stamp_capsule(&mut mask, p, q, radius);
            p = q;
        }
    }
    Ok(StrokeMask {
        mask,
        degenerate: false,
    })
}

/// Axis-aligned rectangular hole, the classic "square hole" baseline.
pub fn random_rect_mask(width: usize, height: usize, seed: u64) -> Mask {
    let mut rng = seeded(seed);
    let rw = rng.gen_range(width / 8..=width / 2).max(1);
    let rh = rng.gen_range(height / 8..=height / 2).max(1);
    let x0 = rng.gen_range(0..=width - rw);
    let y0 = rng.gen_range(0..=height - rh);
    Mask::from_fn(width, height, |y, x| {
        (y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x)
    })
}

/// Object-like silhouette: a union of overlapping ellipses around a centre,
/// filling most of a `size x size` box.
pub fn procedural_object_mask(size: usize, seed: u64) -> Mask {
    let mut rng = seeded(seed);
    let s = size as f64;
    let lobes = rng.gen_range(2..=5);
    let blobs: Vec<(f64, f64, f64, f64, f64)> = (0..lobes)
        .map(|_| {
            let cx = s * rng.gen_range(0.35..0.65);
            let cy = s * rng.gen_range(0.3..0.7);
            let rx = s * rng.gen_range(0.12..0.3);
            let ry = s * rng.gen_range(0.15..0.35);
            let rot = rng.gen_range(0.0..std::f64::consts::PI);
            (cx, cy, rx, ry, rot)
        })
        .collect();
    Mask::from_fn(size, size, |y, x| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        blobs.iter().any(|&(cx, cy, rx, ry, rot)| {
            let (dx, dy) = (px - cx, py - cy);
            let (u, v) = (
                dx * rot.cos() + dy * rot.sin(),
                -dx * rot.sin() + dy * rot.cos(),
            );
            (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
        })
    })
}

fn scale_nearest(object: &Mask, scale: f64) -> Mask {
    let sw = ((object.width() as f64 * scale).round() as usize).max(1);
    let sh = ((object.height() as f64 * scale).round() as usize).max(1);
    Mask::from_fn(sw, sh, |y, x| {
        let oy = ((y as f64 + 0.5) / scale).floor() as usize;
        let ox = ((x as f64 + 0.5) / scale).floor() as usize;
        object.get(oy.min(object.height() - 1), ox.min(object.width() - 1))
    })
}

/// Paste `object` scaled by `scale` with its top-left corner at `offset`,
/// clipped to a `canvas` of `(width, height)`.
pub fn place_object_mask_at(
    object: &Mask,
    canvas: (usize, usize),
    scale: f64,
    offset: (isize, isize),
) -> Result<Mask> {
    if object.is_empty() {
        return Err(invalid("object mask is empty"));
    }
    if !(scale > 0.0) {
        return Err(invalid("scale must be positive"));
    }
    let scaled = scale_nearest(object, scale);
    Ok(paste(&scaled, canvas, offset))
}

fn paste(scaled: &Mask, (w, h): (usize, usize), (ox, oy): (isize, isize)) -> Mask {
    let mut out = Mask::empty(w, h);
    for y in 0..scaled.height() {
        for x in 0..scaled.width() {
            let (cx, cy) = (x as isize + ox, y as isize + oy);
            if scaled.get(y, x) && cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                out.set(cy as usize, cx as usize, true);
            }
        }
    }
    out
}

/// Randomly scaled and translated copy of `object` keeping at least a quarter
/// of its scaled area on the canvas; falls back to centred placement after
/// 100 rejected draws.
pub fn place_object_mask(
    object: &Mask,
    canvas: (usize, usize),
    seed: u64,
    scale_range: (f64, f64),
) -> Result<Mask> {
    if object.is_empty() {
        return Err(invalid("object mask is empty"));
    }
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(invalid("scale_range must satisfy 0 < min <= max"));
    }
    let mut rng = seeded(seed);
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let scaled = scale_nearest(object, scale);
    let area = scaled.count();
    let (w, h) = canvas;
    let (sw, sh) = (scaled.width() as isize, scaled.height() as isize);
    for _ in 0..100 {
        let ox = rng.gen_range(-sw + 1..w as isize);
        let oy = rng.gen_range(-sh + 1..h as isize);
        let placed = paste(&scaled, canvas, (ox, oy));
        if 4 * placed.count() >= area {
            return Ok(placed);
        }
    }
    let centred = ((w as isize - sw) / 2, (h as isize - sh) / 2);
    Ok(paste(&scaled, canvas, centred))
}

/// Remove salient-object pixels from a hole: `hole AND NOT salient`.
pub fn subtract_saliency(hole: &Mask, salient: &Mask) -> Result<Mask> {
    check_extent(hole, salient)?;
    hole.minus(salient)
}

/// A synthetic scene and the raster of its foreground shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub saliency: Mask,
}

fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    let h = mix_seed(
        seed,
        (x as u64).wrapping_mul(0x1F1F_1F1F) ^ (y as u64).wrapping_mul(0x7A3B_9D21),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise in `[0, 1)`.
fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (xi, yi) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - xi as f64, y - yi as f64);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let a = lattice(seed, xi, yi);
    let b = lattice(seed, xi + 1, yi);
    let c = lattice(seed, xi, yi + 1);
    let d = lattice(seed, xi + 1, yi + 1);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    },
    Triangle {
        a: (f64, f64),
        b: (f64, f64),
        c: (f64, f64),
    },
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px < x1 && py >= y0 && py < y1,
            Shape::Triangle { a, b, c } => {
                let s = |p: (f64, f64), q: (f64, f64)| {
                    (q.0 - p.0) * (py - p.1) - (q.1 - p.1) * (px - p.0)
                };
                let (d1, d2, d3) = (s(a, b), s(b, c), s(c, a));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    }
}

/// Deterministic scene: vertical-gradient sky, value-noise textured ground
/// with a few stripes, and one to three solid foreground shapes whose union
/// is the saliency mask.
pub fn procedural_image(width: usize, height: usize, seed: u64) -> Scene {
    let layout = SceneLayout::draw(width, height, seed);
    layout.render(width, height)
}

struct SceneLayout {
    sky_top: [f64; 3],
    sky_bottom: [f64; 3],
    horizon: f64,
    ground: [f64; 3],
    noise_seed: u64,
    freq: f64,
    stripe_angle: f64,
    stripe_period: f64,
    shapes: Vec<(Shape, [f64; 3])>,
}

impl SceneLayout {
    fn draw(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let (w, h) = (width as f64, height as f64);
        let sky_top = [
            rng.gen_range(0.1..0.4),
            rng.gen_range(0.3..0.6),
            rng.gen_range(0.6..0.95),
        ];
        let sky_bottom = [
            rng.gen_range(0.6..0.9),
            rng.gen_range(0.6..0.9),
            rng.gen_range(0.7..1.0),
        ];
        let horizon = h * rng.gen_range(0.35..0.65);
        let ground = [
            rng.gen_range(0.2..0.6),
            rng.gen_range(0.25..0.6),
            rng.gen_range(0.05..0.35),
        ];
        let noise_seed = rng.gen::<u64>();
        let freq = rng.gen_range(4.0..10.0) / w.max(h) * 4.0;
        let stripe_angle: f64 = rng.gen_range(-0.6..0.6);
        let stripe_period = rng.gen_range(6.0..14.0) * w / 64.0;

        let n_shapes = rng.gen_range(1..=3);
        let mut shapes = Vec::with_capacity(n_shapes);
        for _ in 0..n_shapes {
            let colour = [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ];
            let cx = w * rng.gen_range(0.15..0.85);
            let cy = h * rng.gen_range(0.25..0.85);
            let size = w.min(h) * rng.gen_range(0.08..0.2);
            let shape = match rng.gen_range(0..3) {
                0 => Shape::Disc { cx, cy, r: size },
                1 => Shape::Rect {
                    x0: cx - size,
                    y0: cy - 0.7 * size,
                    x1: cx + size,
                    y1: cy + 0.7 * size,
                },
                _ => Shape::Triangle {
                    a: (cx, cy - size),
                    b: (cx - size, cy + size),
                    c: (cx + size, cy + size),
                },
            };
            shapes.push((shape, colour));
        }
        Self {
            sky_top,
            sky_bottom,
            horizon,
            ground,
            noise_seed,
            freq,
            stripe_angle,
            stripe_period,
            shapes,
        }
    }

    fn render(&self, width: usize, height: usize) -> Scene {
        let Self {
            sky_top,
            sky_bottom,
            horizon,
            ground,
            noise_seed,
            freq,
            stripe_angle,
            stripe_period,
            ref shapes,
        } = *self;
        let mut saliency = Mask::empty(width, height);
        let mut image = Image::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut rgb = if py < horizon {
                    let t = py / horizon;
                    [0, 1, 2].map(|c| sky_top[c] + (sky_bottom[c] - sky_top[c]) * t)
                } else {
                    let n = value_noise(noise_seed, px * freq, py * freq);
                    let along = px * stripe_angle.cos() + (py - horizon) * stripe_angle.sin() * 3.0;
                    let stripe = if (along / stripe_period).rem_euclid(1.0) < 0.5 {
                        0.08
                    } else {
                        -0.08
                    };
                    let shade = 0.75 + 0.5 * (n - 0.5) + stripe;
                    ground.map(|g| g * shade * 1.3)
                };
                for (shape, colour) in shapes {
                    if shape.contains(px, py) {
                        rgb = *colour;
                        saliency.set(y, x, true);
                    }
                }
                for (c, v) in rgb.iter().enumerate() {
                    image.set(c, y, x, v.clamp(0.0, 1.0));
                }
            }
        }
        Scene { image, saliency }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Object silhouettes from the library (or procedural blobs when the
    /// library is empty), randomly placed.
    Object,
    RandomStroke,
    /// Axis-aligned rectangles; used by the non-realistic ablation variant.
    Rectangle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSource {
    pub kind: MaskKind,
    pub probability: f64,
}

/// Draws hole masks from a weighted mix of sources.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    sources: Vec<MaskSource>,
    pub stroke: StrokeParams,
    pub scale_range: (f64, f64),
    library: Vec<Mask>,
}

impl MaskSampler {
    pub fn new(
        sources: Vec<MaskSource>,
        stroke: StrokeParams,
        scale_range: (f64, f64),
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(invalid("no mask sources"));
        }
        if sources.iter().any(|s| !(s.probability >= 0.0)) {
            return Err(invalid("mask source probabilities must be non-negative"));
        }
        let total: f64 = sources.iter().map(|s| s.probability).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "mask source probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            sources,
            stroke,
            scale_range,
            library: Vec::new(),
        })
    }

    /// Equal mix of object-shaped and stroke holes.
    pub fn realistic() -> Self {
        Self::mix(0.5, MaskKind::Object)
    }

    /// Equal mix of rectangles and strokes ("irregular and square holes").
    pub fn synthetic() -> Self {
        Self::mix(0.5, MaskKind::Rectangle)
    }

    /// `object_share` of `kind` holes, the rest strokes.
    pub fn mix(object_share: f64, kind: MaskKind) -> Self {
        Self::new(
            vec![
                MaskSource {
                    kind,
                    probability: object_share,
                },
                MaskSource {
                    kind: MaskKind::RandomStroke,
                    probability: 1.0 - object_share,
                },
            ],
            StrokeParams::default(),
            (0.5, 1.5),
        )
        .expect("valid built-in mix")
    }

    pub fn with_library(mut self, library: Vec<Mask>) -> Result<Self> {
        if library.iter().any(Mask::is_empty) {
            return Err(invalid("object library contains an empty mask"));
        }
        self.library = library;
        Ok(self)
    }

    /// Load every `*.png` in `dir` as an object mask (any nonzero pixel).
    pub fn load_library(dir: impl AsRef<Path>) -> Result<Vec<Mask>> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(Mask::load)
            .filter(|m| !matches!(m, Ok(m) if m.is_empty()))
            .collect()
    }

    pub fn sources(&self) -> &[MaskSource] {
        &self.sources
    }

    pub fn sample(&self, width: usize, height: usize, seed: u64) -> Result<Mask> {
        let mut rng = seeded(seed);
        let pick: f64 = rng.gen();
        let mut acc = 0.0;
        let mut kind = self.sources.last().expect("nonempty").kind;
        for s in &self.sources {
            acc += s.probability;
            if pick < acc {
                kind = s.kind;
                break;
            }
        }
        let child = rng.gen::<u64>();
        match kind {
            MaskKind::RandomStroke => {
                Ok(random_stroke_mask(width, height, child, &self.stroke)?.mask)
            }
            MaskKind::Rectangle => Ok(random_rect_mask(width, height, child)),
            MaskKind::Object => {
                let object = if self.library.is_empty() {
                    procedural_object_mask(width.min(height) * 3 / 5, mix_seed(child, 1))
                } else {
                    self.library[rng.gen_range(0..self.library.len())].clone()
                };
                place_object_mask(
                    &object,
                    (width, height),
                    mix_seed(child, 2),
                    self.scale_range,
                )
            }
        }
    }
}

/// Ground truth `x`, hole `m` and incomplete image `z = x * (1 - m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Image,
    pub m: Mask,
    pub z: Image,
    /// Drawn from the saliency pool (holes had salient pixels removed).
    pub salient_pool: bool,
}

impl Sample {
    pub fn new(x: Image, m: Mask, salient_pool: bool) -> Result<Self> {
        let z = x.knock_out(&m)?;
        Ok(Self {
            x,
            m,
            z,
            salient_pool,
        })
    }
}

/// Indexed source of images, optionally with a saliency mask.
pub trait ImagePool: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<(Image, Option<Mask>)>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Procedural scenes at a fixed resolution, indexed by seed offset.
#[derive(Debug, Clone)]
pub struct ProceduralPool {
    pub resolution: usize,
    pub base_seed: u64,
    pub size: usize,
}

impl ImagePool for ProceduralPool {
    fn len(&self) -> usize {
        self.size
    }

    fn get(&self, index: usize) -> Result<(Image, Option<Mask>)> {
        let scene = procedural_image(
            self.resolution,
            self.resolution,
            mix_seed(self.base_seed, index as u64),
        );
        Ok((scene.image, Some(scene.saliency)))
    }
}

/// PNG images from a directory, with optional same-named saliency masks in a
/// sibling directory.
#[derive(Debug, Clone)]
pub struct DirectoryPool {
    images: Vec<std::path::PathBuf>,
    saliency_dir: Option<std::path::PathBuf>,
}

impl DirectoryPool {
    pub fn open(images: impl AsRef<Path>, saliency_dir: Option<&Path>) -> Result<Self> {
        let mut paths: Vec<_> = std::fs::read_dir(images)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        Ok(Self {
            images: paths,
            saliency_dir: saliency_dir.map(Path::to_path_buf),
        })
    }
}

impl ImagePool for DirectoryPool {
    fn len(&self) -> usize {
        self.images.len()
    }

    fn get(&self, index: usize) -> Result<(Image, Option<Mask>)> {
        let path = &self.images[index % self.images.len()];
        let image = Image::load(path)?;
        let saliency = match (&self.saliency_dir, path.file_name()) {
            (Some(dir), Some(name)) if dir.join(name).exists() => Some(Mask::load(dir.join(name))?),
            _ => None,
        };
        Ok((image, saliency))
    }
}

/// Draw `batch_size` samples, half from each pool. Holes on `pool_b` images
/// have their salient pixels removed; `pool_a` holes are left as drawn.
pub fn make_batch(
    pool_a: &dyn ImagePool,
    pool_b: &dyn ImagePool,
    batch_size: usize,
    seed: u64,
    sampler: &MaskSampler,
) -> Result<Vec<Sample>> {
    if batch_size % 2 != 0 {
        return Err(invalid(format!("batch size {batch_size} must be even")));
    }
    if pool_a.is_empty() || pool_b.is_empty() {
        return Err(invalid("image pools must be nonempty"));
    }
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(batch_size);
    for k in 0..batch_size {
        let from_b = k % 2 == 1;
        let pool = if from_b { pool_b } else { pool_a };
        let (x, saliency) = pool.get(rng.gen_range(0..pool.len()))?;
        let mut m = sampler.sample(x.width(), x.height(), rng.gen())?;
        if from_b {
            if let Some(s) = saliency {
                m = subtract_saliency(&m, &s)?;
            }
        }
        out.push(Sample::new(x, m, from_b)?);
    }
    Ok(out)
}
