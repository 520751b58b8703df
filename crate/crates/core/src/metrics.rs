//! L1, PSNR and SSIM, whole-image and restricted to pixel sets.

use serde::{Deserialize, Serialize};

use crate::error::{extent, invalid, Result};
use crate::image::{check_extent, ConfidenceMap, Image, Mask};

pub const PSNR_CAP: f64 = 99.0;
pub const MSE_FLOOR: f64 = 1e-10;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_BIN_EDGES: [f64; 9] = [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    check_extent(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_extent(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64)
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalized 1-D Gaussian taps for offsets `-R..=R`.
fn taps() -> [f64; 2 * SSIM_RADIUS + 1] {
    let mut t = [0.0; 2 * SSIM_RADIUS + 1];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Gaussian-weighted local mean with the window clipped to the image and its
/// weights renormalized. The clipped window is a rectangle, so the filter
/// stays separable.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let t = taps();
    let r = SSIM_RADIUS as isize;
    let pass = |src: &[f64], len: usize, stride: usize, count: usize, step: usize| {
        let mut out = vec![0.0; src.len()];
        for line in 0..count {
            let base = line * step;
            for i in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                for k in -r..=r {
                    let j = i as isize + k;
                    if j >= 0 && (j as usize) < len {
                        let wt = t[(k + r) as usize];
                        acc += wt * src[base + j as usize * stride];
                        norm += wt;
                    }
                }
                out[base + i * stride] = acc / norm;
            }
        }
        out
    };
    let rows = pass(src, w, 1, h, w);
    pass(&rows, h, w, w, 1)
}

/// Per-pixel SSIM map of one channel.
pub fn ssim_map(a: &[f64], b: &[f64], w: usize, h: usize) -> Vec<f64> {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = blur(a, w, h);
    let mu_b = blur(b, w, h);
    let aa = blur(&prod(a, a), w, h);
    let bb = blur(&prod(b, b), w, h);
    let ab = blur(&prod(a, b), w, h);
    (0..w * h)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect()
}

fn channel_maps(a: &Image, b: &Image) -> Vec<Vec<f64>> {
    let plane = a.width() * a.height();
    (0..3)
        .map(|c| {
            let r = c * plane..(c + 1) * plane;
            ssim_map(&a.data()[r.clone()], &b.data()[r], a.width(), a.height())
        })
        .collect()
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_extent(a, b)?;
    let maps = channel_maps(a, b);
    Ok(maps.iter().map(|m| m.iter().sum::<f64>() / m.len() as f64).sum::<f64>() / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub pixels: usize,
}

/// Metrics over the pixels of `region`; SSIM averages the map at window
/// centres inside the region. `None` when the region is empty.
pub fn region_metrics(a: &Image, b: &Image, region: &Mask) -> Result<Option<RegionMetrics>> {
    check_extent(a, b)?;
    check_extent(a, region)?;
    let n = region.count();
    if n == 0 {
        return Ok(None);
    }
    let plane = a.width() * a.height();
    let (mut abs, mut sq) = (0.0, 0.0);
    for c in 0..3 {
        for (p, &bit) in region.bits().iter().enumerate() {
            if bit != 0 {
                let d = a.data()[c * plane + p] - b.data()[c * plane + p];
                abs += d.abs();
                sq += d * d;
            }
        }
    }
    let maps = channel_maps(a, b);
    let ssim = maps
        .iter()
        .map(|m| m.iter().zip(region.bits()).filter(|(_, &bit)| bit != 0).map(|(v, _)| v).sum::<f64>() / n as f64)
        .sum::<f64>()
        / 3.0;
    let count = (3 * n) as f64;
    Ok(Some(RegionMetrics { l1: abs / count, psnr: psnr_from_mse(sq / count), ssim, pixels: n }))
}

/// Metrics over hole pixels with confidence above / at-or-below `threshold`.
pub fn confidence_partition_eval(
    y: &Image,
    x: &Image,
    c: &ConfidenceMap,
    m: &Mask,
    threshold: f64,
) -> Result<(Option<RegionMetrics>, Option<RegionMetrics>)> {
    check_extent(y, c)?;
    check_extent(y, m)?;
    let high = Mask::from_fn(m.width(), m.height(), |r, q| m.get(r, q) && c.get(r, q) > threshold);
    let low = m.minus(&high)?;
    Ok((region_metrics(y, x, &high)?, region_metrics(y, x, &low)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub hole_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf_high: Option<RegionMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf_low: Option<RegionMetrics>,
}

impl EvalRecord {
    pub fn compute(id: impl Into<String>, y: &Image, x: &Image, m: &Mask, c: Option<&ConfidenceMap>) -> Result<Self> {
        let (conf_high, conf_low) = match c {
            Some(c) => confidence_partition_eval(y, x, c, m, 0.5)?,
            None => (None, None),
        };
        Ok(Self {
            id: id.into(),
            l1: l1(y, x)?,
            psnr: psnr(y, x)?,
            ssim: ssim(y, x)?,
            hole_ratio: m.hole_ratio(),
            conf_high,
            conf_low,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl BinStats {
    pub fn label(&self) -> String {
        format!("[{:.2},{:.2})", self.lo, self.hi)
    }
}

/// Mean metrics per hole-ratio bin `[edge_k, edge_{k+1})`, with an implicit
/// first bin from 0 and a last bin up to 1 (inclusive). Empty bins are
/// omitted.
pub fn binned_report(records: &[EvalRecord], edges: &[f64]) -> Result<Vec<BinStats>> {
    if records.is_empty() {
        return Err(invalid("binned report needs at least one record"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) || edges.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(invalid("bin edges must be strictly increasing within [0, 1]"));
    }
    let mut bounds = vec![0.0];
    bounds.extend_from_slice(edges);
    bounds.push(1.0);
    bounds.dedup();
    let nbins = bounds.len() - 1;
    let mut acc = vec![(0usize, 0.0, 0.0, 0.0); nbins];
    for r in records {
        if !(0.0..=1.0).contains(&r.hole_ratio) {
            return Err(extent(format!("hole ratio {} outside [0, 1]", r.hole_ratio)));
        }
        let k = bounds[1..nbins].iter().take_while(|&&e| r.hole_ratio >= e).count();
        let a = &mut acc[k];
        a.0 += 1;
        a.1 += r.l1;
        a.2 += r.psnr;
        a.3 += r.ssim;
    }
    Ok(acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(k, &(n, l1, psnr, ssim))| {
            let d = n as f64;
            BinStats { lo: bounds[k], hi: bounds[k + 1], n, l1: l1 / d, psnr: psnr / d, ssim: ssim / d }
        })
        .collect())
}

pub fn bins_csv(bins: &[BinStats]) -> String {
    let mut s = String::from("ratio_bin,l1,psnr,ssim,n\n");
    for b in bins {
        s.push_str(&format!("{},{},{},{},{}\n", b.label(), b.l1, b.psnr, b.ssim, b.n));
    }
    s
}

pub fn records_jsonl(records: &[EvalRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| invalid(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn summarize(records: &[EvalRecord]) -> Summary {
    let n = records.len().max(1) as f64;
    Summary {
        n: records.len(),
        l1: records.iter().map(|r| r.l1).sum::<f64>() / n,
        psnr: records.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: records.iter().map(|r| r.ssim).sum::<f64>() / n,
    }
}

pub fn summary_table(summary: &Summary, bins: &[BinStats]) -> String {
    let mut s = format!(
        "samples {}\nmean l1 {:.6}  psnr {:.4}  ssim {:.6}\n\n{:<14}{:>6}{:>12}{:>10}{:>10}\n",
        summary.n, summary.l1, summary.psnr, summary.ssim, "hole ratio", "n", "l1", "psnr", "ssim"
    );
    for b in bins {
        s.push_str(&format!("{:<14}{:>6}{:>12.6}{:>10.4}{:>10.6}\n", b.label(), b.n, b.l1, b.psnr, b.ssim));
    }
    s
}
