use confill::datagen::Sample;
use confill::networks::{Discriminator, DiscriminatorConfig, GeneratorConfig, InpaintNet};
use confill::trainer::{
    distance_split, format_ablation_table, validate_generator, ablation_run, AblationFlags, TrainConfig, Trainer,
};
use confill::{Error, Image, Mask};

fn tiny() -> TrainConfig {
    TrainConfig {
        resolution: 16,
        batch_size: 2,
        gen_base_channels: 2,
        gen_depth: 2,
        disc_base_channels: 2,
        disc_stages: 2,
        validation_size: 2,
        validation_every: 5,
        pool_size: 64,
        ups_base_channels: 2,
        ups_batch_size: 2,
        max_steps: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn config_text_round_trips() {
    let cfg = tiny();
    let text = cfg.to_kv();
    assert_eq!(TrainConfig::parse(&text).unwrap(), cfg);
    let parsed = TrainConfig::parse("# comment\nseed = 7\n\nlambda=0.2\nimage_dir_a = none\n").unwrap();
    assert_eq!((parsed.seed, parsed.lambda, parsed.image_dir_a), (7, 0.2, None));
}

#[test]
fn config_errors_name_the_line() {
    for (text, line) in [("seed = 1\nbogus = 2\n", 2), ("seed = 1\nseed = 2\n", 2), ("\n\nlr = fast\n", 3), ("noequals\n", 1)] {
        match TrainConfig::parse(text) {
            Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn config_validation_rejects_bad_values() {
    for bad in [
        TrainConfig { batch_size: 3, ..tiny() },
        TrainConfig { lambda: 0.0, ..tiny() },
        TrainConfig { resolution: 18, ..tiny() },
        TrainConfig { adversarial_weight: -1.0, ..tiny() },
        TrainConfig { t_train: 0, ..tiny() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(tiny().validate().is_ok());
}

fn trajectory(cfg: &TrainConfig, steps: u64) -> (Trainer, Vec<String>) {
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let mut out = Vec::new();
    for s in 0..steps {
        let b = t.batch(s).unwrap();
        let l = t.train_step(&b).unwrap();
        assert!(l.all_finite());
        out.push(format!("{:?}", l.fields().map(|(_, v)| v.to_bits())));
    }
    (t, out)
}

#[test]
fn fixed_seed_training_is_bitwise_reproducible() {
    let (a, la) = trajectory(&tiny(), 10);
    let (b, lb) = trajectory(&tiny(), 10);
    assert_eq!(la, lb);
    assert_eq!(a.gen.params().digest(), b.gen.params().digest());
    assert_eq!(a.disc.params().digest(), b.disc.params().digest());
}

#[test]
fn resumed_training_matches_the_uninterrupted_run() {
    let (full, lf) = trajectory(&tiny(), 11);
    let (half, _) = trajectory(&tiny(), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    half.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    assert_eq!(resumed.step(), 6);
    let mut tail = Vec::new();
    for s in 6..11 {
        let b = resumed.batch(s).unwrap();
        tail.push(format!("{:?}", resumed.train_step(&b).unwrap().fields().map(|(_, v)| v.to_bits())));
    }
    assert_eq!(tail, lf[6..]);
    assert_eq!(resumed.gen.params().digest(), full.gen.params().digest());
    assert_eq!(resumed.disc.params().digest(), full.disc.params().digest());
}

#[test]
fn a_step_updates_both_networks() {
    let mut t = Trainer::new(tiny()).unwrap();
    let (g0, d0) = (t.gen.params().digest(), t.disc.params().digest());
    let b = t.batch(0).unwrap();
    t.train_step(&b).unwrap();
    assert_ne!(t.gen.params().digest(), g0);
    assert_ne!(t.disc.params().digest(), d0);
    assert_eq!(t.step(), 1);
}

#[test]
fn without_adversarial_weight_the_generator_ignores_the_discriminator() {
    let cfg = TrainConfig { adversarial_weight: 0.0, ..tiny() };
    let mut a = Trainer::new(cfg.clone()).unwrap();
    let mut b = Trainer::new(cfg.clone()).unwrap();
    b.disc = Discriminator::new(DiscriminatorConfig { seed: 12345, ..cfg.discriminator() }).unwrap();
    for s in 0..3 {
        let batch = a.batch(s).unwrap();
        let (la, lb) = (a.train_step(&batch).unwrap(), b.train_step(&batch).unwrap());
        assert_eq!(la.g_l1_fine, lb.g_l1_fine);
        assert_ne!(la.d_loss, lb.d_loss);
    }
    assert_eq!(a.gen.params().digest(), b.gen.params().digest());
}

#[test]
fn batches_depend_only_on_seed_and_step() {
    let t = Trainer::new(tiny()).unwrap();
    let u = Trainer::new(tiny()).unwrap();
    let (a, b) = (t.batch(4).unwrap(), u.batch(4).unwrap());
    assert_eq!(a.seed, b.seed);
    assert!(a.samples.iter().zip(&b.samples).all(|(p, q)| p.x == q.x && p.m == q.m));
    assert_ne!(t.batch(5).unwrap().seed, a.seed);
}

#[test]
fn fit_writes_records_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny()).unwrap();
    let mut log = Vec::new();
    let report = t.fit(Some(dir.path()), Some(&mut log)).unwrap();
    assert_eq!(report.steps_run, 11);
    assert_eq!(report.validations.len(), 3);
    let text = String::from_utf8(log).unwrap();
    assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert!(dir.path().join("best.ckpt").exists() && dir.path().join("last.ckpt").exists());
    let back = Trainer::load(dir.path().join("last.ckpt")).unwrap();
    assert_eq!(back.step(), 11);
    assert_eq!(back.gen.params().digest(), t.gen.params().digest());
}

#[test]
fn upsampler_training_runs_and_resumes() {
    let mut t = Trainer::new(tiny()).unwrap();
    let d0 = t.ups.params().digest();
    let l = t.fit_upsampler(2, None).unwrap().unwrap();
    assert!(l.d_loss.is_finite() && l.l1.is_finite());
    assert_ne!(t.ups.params().digest(), d0);
    let back = Trainer::from_container(&t.to_container()).unwrap();
    assert_eq!(back.ups_step(), 2);
    assert_eq!(back.ups.params().digest(), t.ups.params().digest());
}

fn tiny_gen() -> InpaintNet {
    InpaintNet::new(GeneratorConfig { base_channels: 2, input_resolution: 16, depth: 2, seed: 1 }).unwrap()
}

#[test]
fn empty_holes_validate_at_the_psnr_cap() {
    let x = Image::from_fn(16, 16, |c, y, x| ((c + y + x) % 5) as f64 / 5.0);
    let s = Sample::new(x, Mask::empty(16, 16), false).unwrap();
    let v = validate_generator(&tiny_gen(), &[s.clone(), s], 3).unwrap();
    assert_eq!(v.psnr, 99.0);
    assert_eq!(v.psnr_by_t, vec![99.0; 3]);
    assert_eq!(v.hole_l1, 0.0);
}

#[test]
fn distance_split_peels_a_disc_from_the_outside() {
    let m = Mask::from_fn(21, 21, |y, x| (y as f64 - 10.0).powi(2) + (x as f64 - 10.0).powi(2) <= 64.0);
    let parts = distance_split(&m, 4).unwrap();
    let mut union = Mask::empty(21, 21);
    for p in &parts {
        assert!(!p.is_empty());
        assert!(union.and(p).unwrap().is_empty());
        union = union.or(p).unwrap();
    }
    assert_eq!(union, m);
    let counts: Vec<usize> = parts.iter().map(Mask::count).collect();
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    let radius = |p: &Mask| {
        let pts: Vec<f64> = (0..21 * 21).filter(|&i| p.bits()[i] != 0).map(|i| ((i / 21) as f64 - 10.0).hypot((i % 21) as f64 - 10.0)).collect();
        pts.iter().sum::<f64>() / pts.len() as f64
    };
    assert!(parts.windows(2).all(|w| radius(&w[0]) > radius(&w[1])));
    assert!(parts[3].get(10, 10));
    assert!(distance_split(&Mask::from_fn(4, 4, |y, x| y == 0 && x == 0), 2).is_err());
}

#[test]
fn ablation_rows_are_reported() {
    let gen = tiny_gen();
    let x = Image::from_fn(16, 16, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 / 11.0);
    let m = Mask::from_fn(16, 16, |y, x| (4..12).contains(&y) && (5..11).contains(&x));
    let samples = vec![Sample::new(x, m, false).unwrap()];
    let rows: Vec<_> = AblationFlags::ROWS.iter().map(|&f| ablation_run(&gen, f, &samples, 4).unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.n == 1 && r.psnr.is_finite()));
    let table = format_ablation_table(&rows);
    assert_eq!(table.lines().count(), 5);
}
