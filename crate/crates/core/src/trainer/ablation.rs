use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{invalid, Result};
use crate::image::{check_extent, Image, Mask};
use crate::iterate::{self, Generator};
use crate::metrics::{l1, psnr, ssim};

/// Component switches: iterative filling, confidence feedback, realistic
/// training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub it: bool,
    pub cf: bool,
    pub rt: bool,
}

impl AblationFlags {
    /// The four table rows, top to bottom.
    pub const ROWS: [AblationFlags; 4] = [
        AblationFlags { it: false, cf: false, rt: false },
        AblationFlags { it: true, cf: false, rt: false },
        AblationFlags { it: true, cf: true, rt: false },
        AblationFlags { it: true, cf: true, rt: true },
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    pub l1: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub n: usize,
}

/// Split the hole into `parts` rings by Euclidean distance to the nearest
/// known pixel, boundary first. Pixels are ranked by `(distance, index)` and
/// cut into equal-count chunks, so every part is nonempty when the hole has
/// at least `parts` pixels.
pub fn distance_split(m: &Mask, parts: usize) -> Result<Vec<Mask>> {
    if parts == 0 || m.count() < parts {
        return Err(invalid(format!("cannot split a {}-pixel hole into {parts} parts", m.count())));
    }
    let (w, h) = (m.width(), m.height());
    let known: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| {
            !m.get(y, x)
                && [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && m.get(ny as usize, nx as usize)
                })
        })
        .map(|(y, x)| (y as i64, x as i64))
        .collect();
    let mut ranked: Vec<(i64, usize)> = (0..h * w)
        .filter(|&i| m.bits()[i] != 0)
        .map(|i| {
            let (y, x) = ((i / w) as i64, (i % w) as i64);
            let d = known.iter().map(|&(ky, kx)| (ky - y).pow(2) + (kx - x).pow(2)).min().unwrap_or(i64::MAX);
            (d, i)
        })
        .collect();
    ranked.sort_unstable();
    let n = ranked.len();
    Ok((0..parts)
        .map(|p| {
            let mut part = Mask::empty(w, h);
            for &(_, i) in &ranked[p * n / parts..(p + 1) * n / parts] {
                part.set(i / w, i % w, true);
            }
            part
        })
        .collect())
}

/// Predefined boundary-to-centre schedule: pass `k` fills the remaining hole
/// and keeps only ring `k`.
pub fn run_predefined(gen: &impl Generator, z1: &Image, m1: &Mask, parts: usize) -> Result<Image> {
    check_extent(z1, m1)?;
    if m1.is_empty() {
        return Ok(z1.clone());
    }
    let parts = parts.min(m1.count());
    let rings = distance_split(m1, parts)?;
    let mut y = z1.clone();
    let mut remaining = m1.clone();
    for ring in &rings {
        let z = y.knock_out(&remaining)?;
        let (fill, _) = gen.fill(&z, &remaining)?;
        y = y.composite(&fill, ring)?;
        remaining = remaining.minus(ring)?;
    }
    Ok(y)
}

/// Evaluate one row on `samples`. IT without CF runs the predefined schedule
/// with `iterations` rings; IT with CF runs confidence feedback; neither is a
/// single pass. RT only labels which model the caller passed in.
pub fn ablation_run(gen: &impl Generator, flags: AblationFlags, samples: &[Sample], iterations: usize) -> Result<AblationRow> {
    if flags.cf && !flags.it {
        return Err(invalid("confidence feedback requires iterative filling"));
    }
    if samples.is_empty() {
        return Err(invalid("ablation needs samples"));
    }
    let (mut sl1, mut sp, mut ss) = (0.0, 0.0, 0.0);
    for s in samples {
        let y = match (flags.it, flags.cf) {
            (false, _) => iterate::run(gen, &s.z, &s.m, 1)?.0,
            (true, false) => run_predefined(gen, &s.z, &s.m, iterations)?,
            (true, true) => iterate::run(gen, &s.z, &s.m, iterations)?.0,
        };
        sl1 += l1(&y, &s.x)?;
        sp += psnr(&y, &s.x)?;
        ss += ssim(&y, &s.x)?;
    }
    let n = samples.len() as f64;
    Ok(AblationRow { flags, l1: sl1 / n, psnr: sp / n, ssim: ss / n, n: samples.len() })
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { " " };
    let mut s = format!("{:^4}{:^4}{:^4}{:>12}{:>10}{:>10}\n", "IT", "CF", "RT", "L1", "PSNR", "SSIM");
    for r in rows {
        s.push_str(&format!(
            "{:^4}{:^4}{:^4}{:>12.6}{:>10.4}{:>10.6}\n",
            mark(r.flags.it),
            mark(r.flags.cf),
            mark(r.flags.rt),
            r.l1,
            r.psnr,
            r.ssim
        ));
    }
    s
}
