use super::*;

fn small() -> DatasetConfig {
    DatasetConfig { n_train: 3, n_val: 2, snippets: 64, ..DatasetConfig::default() }
}

#[test]
fn same_seed_same_dataset() {
    let a = generate_dataset(&small()).unwrap();
    assert_eq!(a, generate_dataset(&small()).unwrap());
    let b = generate_dataset(&DatasetConfig { seed: 1, ..small() }).unwrap();
    assert_ne!(a.train[0].snippets, b.train[0].snippets);
    assert_ne!(a.train[0].snippets, a.val[0].snippets);
}

#[test]
fn warp_inverse() {
    for y in [-40.0, -3.0, -0.2, 0.0, 1e-9, 0.7, 5.0, 123.0] {
        assert!((warp(unwarp(y)) - y).abs() <= 1e-12 * y.abs().max(1.0), "{y}");
    }
}

#[test]
fn noiseless_classes_recoverable() {
    let cfg = DatasetConfig { snr: None, ..small() };
    let gen = Generator::new(&cfg).unwrap();
    let (f, d) = (cfg.frames, cfg.frame_dim);
    for i in 0..4 {
        let v = gen.video("train", i).unwrap();
        for s in 0..cfg.snippets {
            let snippet = &v.snippets.data()[s * f * d..(s + 1) * f * d];
            let latent: Vec<Vec<f64>> = snippet.chunks(d).map(|fr| gen.invert_frame(fr)).collect();
            let scores: Vec<f64> = gen
                .patterns
                .iter()
                .map(|p| p.iter().zip(&latent).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum())
                .collect();
            let inside = v.annotations.iter().find(|a| a.start <= s as f64 && (s as f64) < a.end);
            match inside {
                Some(a) => {
                    let best = (0..scores.len()).max_by(|&x, &y| scores[x].total_cmp(&scores[y])).unwrap();
                    assert_eq!(best, a.class);
                    assert!((scores[best] - f as f64).abs() < 1e-9);
                }
                // Background is all zero; distractors are constant across
                // frames, so the alternating patterns score exactly zero.
                None => assert!(scores.iter().all(|s| s.abs() < 1e-9), "{scores:?}"),
            }
        }
    }
}

#[test]
fn thousand_videos_validate() {
    let gen = Generator::new(&DatasetConfig { frames: 1, frame_dim: 1, ..DatasetConfig::default() }).unwrap();
    for i in 0..1000 {
        let v = gen.video("train", i).unwrap();
        v.validate().unwrap();
        assert!((1..=3).contains(&v.annotations.len()));
    }
}

#[test]
fn infeasible_packing_rejected() {
    let cfg = DatasetConfig { snippets: 16, max_actions: 12, min_actions: 12, max_distractors: 6, ..small() };
    assert!(matches!(Generator::new(&cfg), Err(Error::Config(_))));
    assert!(matches!(cfg.check_packing(), Err(Error::Infeasible(_))));
}

#[test]
fn validation_lists_every_error() {
    let cfg = DatasetConfig { snippets: 0, frames: 0, min_actions: 4, snr: Some(-1.0), ..small() };
    let mut errors = Vec::new();
    cfg.validate(&mut errors);
    assert!(errors.len() >= 4, "{errors:?}");
}

#[test]
fn disk_round_trip() {
    let ds = generate_dataset(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path(), false).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    let sum = index_checksum(dir.path()).unwrap();
    assert!(save_dataset(&ds, dir.path(), false).is_err());
    save_dataset(&ds, dir.path(), true).unwrap();
    assert_eq!(index_checksum(dir.path()).unwrap(), sum);

    let bin = dir.path().join("videos/train_0000.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[40] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn augment_shifts_annotations() {
    let v = Generator::new(&small()).unwrap().video("train", 0).unwrap();
    let mut rng = stream(0, "aug");
    assert_eq!(Augment::default().apply(&v, &mut rng).unwrap(), v);
    let a = Augment { noise: 0.0, max_shift: 1 }.apply(&v, &mut rng).unwrap();
    a.validate().unwrap();
    for (x, y) in a.annotations.iter().zip(&v.annotations) {
        assert!((x.start - y.start).abs() <= 1.0 && (x.end - y.end).abs() <= 1.0);
    }
}
