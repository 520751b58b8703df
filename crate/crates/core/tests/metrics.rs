mod common;

use common::rng;
use confill::metrics::{
    binned_report, bins_csv, confidence_partition_eval, l1, mse, psnr, region_metrics, ssim, EvalRecord, DEFAULT_BIN_EDGES,
    PSNR_CAP,
};
use confill::{GrayMap, Image, Mask};
use proptest::prelude::*;
use rand::Rng;

fn random_image(seed: u64, w: usize, h: usize) -> Image {
    let mut r = rng(seed);
    Image::from_fn(w, h, |_, _, _| r.gen_range(0.0..1.0))
}

/// Per-pixel SSIM with an explicit 2-D window, weights clipped to the image
/// and renormalized, and centred second moments.
fn naive_ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut win = Vec::new();
            for dy in -5isize..=5 {
                for dx in -5isize..=5 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        let wt = (-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        win.push((wt, yy as usize * w + xx as usize));
                    }
                }
            }
            let z: f64 = win.iter().map(|p| p.0).sum();
            let mean = |v: &[f64]| win.iter().map(|&(wt, i)| wt * v[i]).sum::<f64>() / z;
            let (ma, mb) = (mean(a), mean(b));
            let va = win.iter().map(|&(wt, i)| wt * (a[i] - ma).powi(2)).sum::<f64>() / z;
            let vb = win.iter().map(|&(wt, i)| wt * (b[i] - mb).powi(2)).sum::<f64>() / z;
            let cov = win.iter().map(|&(wt, i)| wt * (a[i] - ma) * (b[i] - mb)).sum::<f64>() / z;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / (w * h) as f64
}

#[test]
fn metrics_match_naive_oracles_on_random_pairs() {
    for seed in 0..20 {
        let (a, b) = (random_image(seed, 8, 8), random_image(seed + 100, 8, 8));
        let n = a.data().len() as f64;
        let l1_ref: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
        let mse_ref: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n;
        let psnr_ref = -10.0 * mse_ref.log10();
        let ssim_ref = (0..3).map(|c| naive_ssim_channel(&a.data()[c * 64..][..64], &b.data()[c * 64..][..64], 8, 8)).sum::<f64>() / 3.0;
        assert!((l1(&a, &b).unwrap() - l1_ref).abs() < 1e-9);
        assert!((mse(&a, &b).unwrap() - mse_ref).abs() < 1e-9);
        assert!((psnr(&a, &b).unwrap() - psnr_ref).abs() < 1e-9);
        assert!((ssim(&a, &b).unwrap() - ssim_ref).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn ssim_matches_the_oracle_on_rectangles() {
    let (a, b) = (random_image(1, 13, 7), random_image(2, 13, 7));
    let reference = (0..3).map(|c| naive_ssim_channel(&a.data()[c * 91..][..91], &b.data()[c * 91..][..91], 13, 7)).sum::<f64>() / 3.0;
    assert!((ssim(&a, &b).unwrap() - reference).abs() < 1e-9);
}

#[test]
fn identity_is_exact() {
    let a = random_image(3, 9, 6);
    assert_eq!(l1(&a, &a).unwrap(), 0.0);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}

#[test]
fn complement_of_binary_image() {
    let mut r = rng(4);
    let a = Image::from_fn(8, 8, |_, _, _| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
    let b = Image::from_fn(8, 8, |c, y, x| 1.0 - a.get(c, y, x));
    assert_eq!(l1(&a, &b).unwrap(), 1.0);
    assert_eq!(mse(&a, &b).unwrap(), 1.0);
    assert_eq!(psnr(&a, &b).unwrap(), 0.0);
}

#[test]
fn extent_mismatch_is_rejected() {
    let (a, b) = (Image::zeros(4, 4), Image::zeros(4, 5));
    assert!(l1(&a, &b).is_err() && psnr(&a, &b).is_err() && ssim(&a, &b).is_err());
}

#[test]
fn region_metrics_cover_only_the_region() {
    let a = random_image(5, 8, 8);
    let mut b = a.clone();
    let region = Mask::from_fn(8, 8, |y, x| y < 2 && x < 3);
    for y in 0..2 {
        for x in 0..3 {
            for c in 0..3 {
                b.set(c, y, x, a.get(c, y, x) + 0.25);
            }
        }
    }
    let r = region_metrics(&a, &b, &region).unwrap().unwrap();
    assert_eq!(r.pixels, 6);
    assert!((r.l1 - 0.25).abs() < 1e-12);
    assert!(region_metrics(&a, &b, &Mask::empty(8, 8)).unwrap().is_none());
}

#[test]
fn confidence_partition_splits_the_hole() {
    let x = random_image(6, 4, 4);
    let y = random_image(7, 4, 4);
    let m = Mask::from_fn(4, 4, |r, _| r < 2);
    let c = GrayMap::new(4, 4, (0..16).map(|i| if i % 4 < 2 { 0.9 } else { 0.5 }).collect()).unwrap();
    let (hi, lo) = confidence_partition_eval(&y, &x, &c, &m, 0.5).unwrap();
    assert_eq!(hi.unwrap().pixels, 4);
    assert_eq!(lo.unwrap().pixels, 4);
    let all_low = GrayMap::full(4, 4, 0.2);
    let (hi, lo) = confidence_partition_eval(&y, &x, &all_low, &m, 0.5).unwrap();
    assert!(hi.is_none() && lo.unwrap().pixels == 8);
}

fn record(ratio: f64, l1: f64) -> EvalRecord {
    EvalRecord { id: String::new(), l1, psnr: 10.0 * l1, ssim: l1 / 2.0, hole_ratio: ratio, conf_high: None, conf_low: None }
}

#[test]
fn bins_average_their_members_and_skip_empty_ones() {
    let records = [record(0.12, 1.0), record(0.14, 3.0), record(0.3, 5.0), record(0.05, 7.0), record(1.0, 9.0)];
    let bins = binned_report(&records, &DEFAULT_BIN_EDGES).unwrap();
    let summary: Vec<(f64, f64, usize, f64)> = bins.iter().map(|b| (b.lo, b.hi, b.n, b.l1)).collect();
    assert_eq!(summary, vec![(0.0, 0.1, 1, 7.0), (0.1, 0.15, 2, 2.0), (0.3, 0.35, 1, 5.0), (0.5, 1.0, 1, 9.0)]);
    assert_eq!(bins[1].psnr, 20.0);
    let csv = bins_csv(&bins);
    assert!(csv.starts_with("ratio_bin,l1,psnr,ssim,n\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn bins_reject_bad_input() {
    assert!(binned_report(&[], &DEFAULT_BIN_EDGES).is_err());
    assert!(binned_report(&[record(0.2, 1.0)], &[0.3, 0.2]).is_err());
    assert!(binned_report(&[record(1.5, 1.0)], &DEFAULT_BIN_EDGES).is_err());
}

#[test]
fn eval_record_carries_confidence_partition() {
    let x = random_image(8, 8, 8);
    let y = random_image(9, 8, 8);
    let m = Mask::from_fn(8, 8, |r, q| r > 2 && q > 2);
    let c = GrayMap::full(8, 8, 0.8);
    let rec = EvalRecord::compute("a", &y, &x, &m, Some(&c)).unwrap();
    assert!(rec.conf_high.is_some() && rec.conf_low.is_none());
    assert!((rec.hole_ratio - 25.0 / 64.0).abs() < 1e-15);
}

proptest! {
    #[test]
    fn metric_ranges(seed in 0u64..500, w in 1usize..12, h in 1usize..12) {
        let (a, b) = (random_image(seed, w, h), random_image(seed + 1, w, h));
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(l1(&a, &b).unwrap() >= 0.0);
        prop_assert!(psnr(&a, &b).unwrap() <= PSNR_CAP);
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }
}
