//! Guided upsampling by patch voting.
//!
//! The similarity features of the LR result and the HR reconstruction
//! features are split into the same grid of cells. Every hole cell of the HR
//! feature map is replaced by a softmax-weighted sum of the valid cells,
//! weighted by cosine similarity in the LR feature space.

use crate::error::{extent, invalid, Error, Result};
use crate::image::{check_extent, Image, Mask};
use crate::networks::{Bound, GuidedUpsampler};
use crate::tensor::{CustomBackward, Graph, Tensor, TensorError, Var};

/// Norm floor for cosine similarity.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    /// Cell size on the LR image, the similarity map and the HR feature map.
    pub lr_patch: (usize, usize),
    pub sim_patch: (usize, usize),
    pub hr_patch: (usize, usize),
    /// Cells available as sources, ascending.
    pub valid: Vec<usize>,
    /// Cells with no known LR pixel, ascending.
    pub hole: Vec<usize>,
    /// Cells that had at least one known pixel before user control.
    pub context: Vec<usize>,
}

fn split(extents: (usize, usize), grid: (usize, usize), what: &str) -> Result<(usize, usize)> {
    if grid.0 == 0 || grid.1 == 0 || extents.0 % grid.0 != 0 || extents.1 % grid.1 != 0 || extents.0 == 0 || extents.1 == 0 {
        return Err(invalid(format!(
            "{what} extents {}x{} are not divisible by a {}x{} grid",
            extents.0, extents.1, grid.0, grid.1
        )));
    }
    Ok((extents.0 / grid.0, extents.1 / grid.1))
}

impl PatchGrid {
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// `(y0, x0)` of `cell` for a map with the given patch size.
    pub fn origin(&self, cell: usize, patch: (usize, usize)) -> (usize, usize) {
        ((cell / self.cols) * patch.0, (cell % self.cols) * patch.1)
    }

    fn touches(&self, cell: usize, region: &Mask) -> bool {
        let (y0, x0) = self.origin(cell, self.lr_patch);
        (y0..y0 + self.lr_patch.0).any(|y| (x0..x0 + self.lr_patch.1).any(|x| region.get(y, x)))
    }

    /// The same grid with no hole cells, so voting is a no-op.
    pub fn without_holes(&self) -> PatchGrid {
        let mut g = self.clone();
        g.hole.clear();
        g
    }
}

/// Classify cells of a `grid` over the LR mask: a cell is valid iff its window
/// holds at least one pixel outside the hole.
pub fn build_grid(
    lr_mask: &Mask,
    sim_extents: (usize, usize),
    hr_extents: (usize, usize),
    grid: (usize, usize),
) -> Result<PatchGrid> {
    let lr_patch = split((lr_mask.height(), lr_mask.width()), grid, "LR mask")?;
    let sim_patch = split(sim_extents, grid, "similarity feature")?;
    let hr_patch = split(hr_extents, grid, "HR feature")?;
    let mut g = PatchGrid {
        rows: grid.0,
        cols: grid.1,
        lr_patch,
        sim_patch,
        hr_patch,
        valid: Vec::new(),
        hole: Vec::new(),
        context: Vec::new(),
    };
    for cell in 0..g.cells() {
        let (y0, x0) = g.origin(cell, lr_patch);
        let known = (y0..y0 + lr_patch.0).any(|y| (x0..x0 + lr_patch.1).any(|x| !lr_mask.get(y, x)));
        if known {
            g.valid.push(cell);
        } else {
            g.hole.push(cell);
        }
    }
    g.context = g.valid.clone();
    Ok(g)
}

/// Drop cells touching `avoid` from V; with `use_region`, keep only cells
/// touching it. Regions are at LR image resolution.
pub fn apply_user_control(grid: &PatchGrid, avoid: Option<&Mask>, use_region: Option<&Mask>) -> Result<PatchGrid> {
    let lr = (grid.rows * grid.lr_patch.0, grid.cols * grid.lr_patch.1);
    for r in [avoid, use_region].into_iter().flatten() {
        if (r.height(), r.width()) != lr {
            return Err(extent(format!("control region {}x{} vs LR {}x{}", r.height(), r.width(), lr.0, lr.1)));
        }
    }
    let mut out = grid.clone();
    out.valid.retain(|&c| {
        avoid.is_none_or(|a| !grid.touches(c, a)) && use_region.is_none_or(|u| grid.touches(c, u))
    });
    if out.valid.is_empty() && !out.hole.is_empty() {
        return Err(Error::NoValidContext);
    }
    Ok(out)
}

/// Borrowed `[C,H,W]` feature map.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMap<'a> {
    pub data: &'a [f64],
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl<'a> FeatureMap<'a> {
    pub fn new(data: &'a [f64], channels: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(extent(format!("{channels}x{height}x{width} map needs {} values, got {}", channels * height * width, data.len())));
        }
        Ok(Self { data, channels, height, width })
    }

    /// Sample `n` of an `[N,C,H,W]` tensor.
    pub fn sample(t: &'a Tensor, n: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        Self::new(t.sample(n), c, h, w)
    }

    fn check(&self, grid: &PatchGrid, patch: (usize, usize)) -> Result<()> {
        if (self.height, self.width) != (grid.rows * patch.0, grid.cols * patch.1) {
            return Err(extent(format!(
                "feature map {}x{} does not match a {}x{} grid of {}x{} patches",
                self.height, self.width, grid.rows, grid.cols, patch.0, patch.1
            )));
        }
        Ok(())
    }

    /// Flatten one cell, channel-major then row-major.
    fn patch(&self, grid: &PatchGrid, cell: usize, patch: (usize, usize)) -> Vec<f64> {
        let (y0, x0) = grid.origin(cell, patch);
        let mut v = Vec::with_capacity(self.channels * patch.0 * patch.1);
        for c in 0..self.channels {
            for y in y0..y0 + patch.0 {
                let row = (c * self.height + y) * self.width;
                v.extend_from_slice(&self.data[row + x0..row + x0 + patch.1]);
            }
        }
        v
    }
}

fn scatter(dst: &mut [f64], fm: (usize, usize, usize), grid: &PatchGrid, cell: usize, patch: (usize, usize), src: &[f64], add: bool) {
    let (channels, height, width) = fm;
    let (y0, x0) = grid.origin(cell, patch);
    let mut k = 0;
    for c in 0..channels {
        for y in y0..y0 + patch.0 {
            let row = (c * height + y) * width;
            for d in &mut dst[row + x0..row + x0 + patch.1] {
                if add {
                    *d += src[k];
                } else {
                    *d = src[k];
                }
                k += 1;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Raw cosine similarities, `|H|` rows by `|V|` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub s: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.cols + j]
    }

    pub fn softmax(&self) -> Vec<f64> {
        softmax_rows(&self.s, self.cols)
    }
}

struct Patches {
    hole: Vec<Vec<f64>>,
    valid: Vec<Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt().max(NORM_FLOOR)
}

fn similarity_patches(sim: &FeatureMap, grid: &PatchGrid) -> Result<Patches> {
    sim.check(grid, grid.sim_patch)?;
    Ok(Patches {
        hole: grid.hole.iter().map(|&c| sim.patch(grid, c, grid.sim_patch)).collect(),
        valid: grid.valid.iter().map(|&c| sim.patch(grid, c, grid.sim_patch)).collect(),
    })
}

fn cosine(p: &Patches) -> SimilarityMatrix {
    let hn: Vec<f64> = p.hole.iter().map(|v| norm(v)).collect();
    let vn: Vec<f64> = p.valid.iter().map(|v| norm(v)).collect();
    let mut s = Vec::with_capacity(p.hole.len() * p.valid.len());
    for (a, na) in p.hole.iter().zip(&hn) {
        for (b, nb) in p.valid.iter().zip(&vn) {
            s.push(dot(a, b) / (na * nb));
        }
    }
    SimilarityMatrix { rows: p.hole.len(), cols: p.valid.len(), s }
}

/// Cosine similarity between every hole cell and every valid cell of `sim`.
pub fn cosine_similarity(sim: &FeatureMap, grid: &PatchGrid) -> Result<SimilarityMatrix> {
    Ok(cosine(&similarity_patches(sim, grid)?))
}

/// Row-wise softmax of a row-major matrix with `cols` columns.
pub fn softmax_rows(s: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.len());
    if cols == 0 {
        return out;
    }
    for row in s.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    out
}

/// Replace every hole cell of `hr` by `sum_j w_ij * phi_j` over valid cells.
pub fn patch_vote(hr: &FeatureMap, grid: &PatchGrid, weights: &[f64]) -> Result<Vec<f64>> {
    hr.check(grid, grid.hr_patch)?;
    let mut out = hr.data.to_vec();
    if grid.hole.is_empty() {
        return Ok(out);
    }
    if grid.valid.is_empty() {
        return Err(Error::NoValidContext);
    }
    let (nh, nv) = (grid.hole.len(), grid.valid.len());
    if weights.len() != nh * nv {
        return Err(invalid(format!("vote weights need {nh}x{nv} entries, got {}", weights.len())));
    }
    let phi: Vec<Vec<f64>> = grid.valid.iter().map(|&c| hr.patch(grid, c, grid.hr_patch)).collect();
    let dims = (hr.channels, hr.height, hr.width);
    for (i, &cell) in grid.hole.iter().enumerate() {
        let mut acc = vec![0.0; phi[0].len()];
        for (j, p) in phi.iter().enumerate() {
            let w = weights[i * nv + j];
            acc.iter_mut().zip(p).for_each(|(a, v)| *a += w * v);
        }
        scatter(&mut out, dims, grid, cell, grid.hr_patch, &acc, false);
    }
    Ok(out)
}

/// Per-sample cache for the backward pass of [`vote`].
struct VoteSample {
    grid: PatchGrid,
    patches: Patches,
    s: SimilarityMatrix,
    weights: Vec<f64>,
}

struct VoteRule {
    samples: Vec<VoteSample>,
}

impl CustomBackward for VoteRule {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>, TensorError> {
        let (sim, hr) = (inputs[0], inputs[1]);
        let (_, sc, sh, sw) = sim.dims4()?;
        let (_, hc, hh, hw) = hr.dims4()?;
        let mut d_sim = Tensor::zeros(sim.shape());
        let mut d_hr = grad_out.clone();
        for (n, vs) in self.samples.iter().enumerate() {
            let grid = &vs.grid;
            if grid.hole.is_empty() {
                continue;
            }
            let go = FeatureMap { data: grad_out.sample(n), channels: hc, height: hh, width: hw };
            let hrf = FeatureMap { data: hr.sample(n), channels: hc, height: hh, width: hw };
            let (nh, nv) = (grid.hole.len(), grid.valid.len());
            let g_hole: Vec<Vec<f64>> = grid.hole.iter().map(|&c| go.patch(grid, c, grid.hr_patch)).collect();
            let phi: Vec<Vec<f64>> = grid.valid.iter().map(|&c| hrf.patch(grid, c, grid.hr_patch)).collect();

            let dh = d_hr.sample_mut(n);
            let zero = vec![0.0; g_hole[0].len()];
            for &c in &grid.hole {
                scatter(dh, (hc, hh, hw), grid, c, grid.hr_patch, &zero, false);
            }
            for (j, &c) in grid.valid.iter().enumerate() {
                let mut acc = vec![0.0; zero.len()];
                for (i, gi) in g_hole.iter().enumerate() {
                    let w = vs.weights[i * nv + j];
                    acc.iter_mut().zip(gi).for_each(|(a, g)| *a += w * g);
                }
                scatter(dh, (hc, hh, hw), grid, c, grid.hr_patch, &acc, true);
            }

            let mut ds = vec![0.0; nh * nv];
            for i in 0..nh {
                let gw: Vec<f64> = phi.iter().map(|p| dot(&g_hole[i], p)).collect();
                let row = &vs.weights[i * nv..(i + 1) * nv];
                let avg: f64 = row.iter().zip(&gw).map(|(w, g)| w * g).sum();
                for j in 0..nv {
                    ds[i * nv + j] = row[j] * (gw[j] - avg);
                }
            }

            let p = &vs.patches;
            let hn: Vec<f64> = p.hole.iter().map(|v| norm(v)).collect();
            let vn: Vec<f64> = p.valid.iter().map(|v| norm(v)).collect();
            let mut dp_hole = vec![vec![0.0; p.hole[0].len()]; nh];
            let mut dp_valid = vec![vec![0.0; p.valid[0].len()]; nv];
            for i in 0..nh {
                for j in 0..nv {
                    let g = ds[i * nv + j];
                    if g == 0.0 {
                        continue;
                    }
                    let s = vs.s.get(i, j);
                    let inv = 1.0 / (hn[i] * vn[j]);
                    let ki = if hn[i] > NORM_FLOOR { s / (hn[i] * hn[i]) } else { 0.0 };
                    let kj = if vn[j] > NORM_FLOOR { s / (vn[j] * vn[j]) } else { 0.0 };
                    for k in 0..p.hole[i].len() {
                        dp_hole[i][k] += g * (p.valid[j][k] * inv - ki * p.hole[i][k]);
                        dp_valid[j][k] += g * (p.hole[i][k] * inv - kj * p.valid[j][k]);
                    }
                }
            }
            let dsn = d_sim.sample_mut(n);
            for (i, &c) in grid.hole.iter().enumerate() {
                scatter(dsn, (sc, sh, sw), grid, c, grid.sim_patch, &dp_hole[i], true);
            }
            for (j, &c) in grid.valid.iter().enumerate() {
                scatter(dsn, (sc, sh, sw), grid, c, grid.sim_patch, &dp_valid[j], true);
            }
        }
        Ok(vec![Some(d_sim), Some(d_hr)])
    }
}

/// Patch vote recorded on the graph, one grid per sample. Gradients flow to
/// both the similarity features and the HR features.
pub fn vote(g: &mut Graph, sim: Var, hr: Var, grids: &[PatchGrid]) -> Result<Var> {
    let (n, _, _, _) = g.value(sim).dims4()?;
    let (hn, _, _, _) = g.value(hr).dims4()?;
    if n != hn || grids.len() != n {
        return Err(extent(format!("vote needs one grid per sample: {n} similarity, {hn} HR, {} grids", grids.len())));
    }
    let mut out = g.value(hr).clone();
    let mut samples = Vec::with_capacity(n);
    for (i, grid) in grids.iter().enumerate() {
        let simf = FeatureMap::sample(g.value(sim), i)?;
        let hrf = FeatureMap::sample(g.value(hr), i)?;
        let patches = similarity_patches(&simf, grid)?;
        let s = cosine(&patches);
        let weights = s.softmax();
        let voted = patch_vote(&hrf, grid, &weights)?;
        out.sample_mut(i).copy_from_slice(&voted);
        samples.push(VoteSample { grid: grid.clone(), patches, s, weights });
    }
    Ok(g.custom(&[sim, hr], out, Box::new(VoteRule { samples })))
}

/// Avoid / use regions at LR resolution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Controls {
    pub avoid: Option<Mask>,
    pub use_region: Option<Mask>,
}

#[derive(Debug, Clone)]
pub struct Upsampled {
    pub image: Image,
    pub residual: Mask,
    pub grid: Option<PatchGrid>,
}

/// Hole pixels that fall inside a cell with known context.
pub fn residual_mask(grid: &PatchGrid, hr_mask: &Mask) -> Result<Mask> {
    let hr = (grid.rows * grid.hr_patch.0, grid.cols * grid.hr_patch.1);
    if (hr_mask.height(), hr_mask.width()) != hr {
        return Err(extent(format!("HR mask {}x{} vs grid {}x{}", hr_mask.height(), hr_mask.width(), hr.0, hr.1)));
    }
    let mut out = Mask::empty(hr_mask.width(), hr_mask.height());
    for &c in &grid.context {
        let (y0, x0) = grid.origin(c, grid.hr_patch);
        for y in y0..y0 + grid.hr_patch.0 {
            for x in x0..x0 + grid.hr_patch.1 {
                if hr_mask.get(y, x) {
                    out.set(y, x, true);
                }
            }
        }
    }
    Ok(out)
}

/// Grid for an LR/HR pair under the network's patch size.
pub fn grid_for(net: &GuidedUpsampler, lr_mask: &Mask) -> Result<PatchGrid> {
    let (lh, lw) = (lr_mask.height(), lr_mask.width());
    let p = net.config().sim_patch;
    if lh % (4 * p) != 0 || lw % (4 * p) != 0 {
        return Err(extent(format!("LR extents {lh}x{lw} must be divisible by {}", 4 * p)));
    }
    build_grid(lr_mask, (lh / 4, lw / 4), (2 * lh, 2 * lw), (lh / (4 * p), lw / (4 * p)))
}

/// Image forward on the graph: features, vote, RGB head.
pub fn upsample_forward(
    g: &mut Graph,
    net: &GuidedUpsampler,
    b: &Bound,
    lr: Var,
    hr_z: Var,
    hr_m: Var,
    grids: &[PatchGrid],
) -> Result<Var> {
    let f = net.features(g, b, lr, hr_z, hr_m)?;
    let voted = vote(g, f.similarity, f.features, grids)?;
    net.to_rgb(g, b, voted)
}

/// Upsample an LR result guided by the HR input. Pixels outside the hole are
/// copied from `hr_input`.
pub fn guided_upsample(
    net: &GuidedUpsampler,
    lr_result: &Image,
    hr_input: &Image,
    hr_mask: &Mask,
    controls: &Controls,
) -> Result<Upsampled> {
    check_extent(hr_input, hr_mask)?;
    GuidedUpsampler::check_pair((lr_result.height(), lr_result.width()), (hr_input.height(), hr_input.width()))?;
    if hr_mask.is_empty() {
        return Ok(Upsampled { image: hr_input.clone(), residual: hr_mask.clone(), grid: None });
    }
    let lr_mask = hr_mask.downsample2x_any()?;
    let base = grid_for(net, &lr_mask)?;
    let grid = apply_user_control(&base, controls.avoid.as_ref(), controls.use_region.as_ref())?;
    if grid.valid.is_empty() && !grid.hole.is_empty() {
        return Err(Error::NoValidContext);
    }
    let hr_z = hr_input.knock_out(hr_mask)?;
    let mut g = Graph::new();
    let b = net.params().bind(&mut g, false);
    let lr = g.constant(lr_result.to_tensor());
    let hz = g.constant(hr_z.to_tensor());
    let hm = g.constant(hr_mask.to_tensor());
    let rgb = upsample_forward(&mut g, net, &b, lr, hz, hm, std::slice::from_ref(&grid))?;
    let fill = Image::from_tensor(g.value(rgb), 0)?;
    let image = hr_input.composite(&fill, hr_mask)?;
    let residual = residual_mask(&base, hr_mask)?;
    Ok(Upsampled { image, residual, grid: Some(grid) })
}
