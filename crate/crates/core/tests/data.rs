use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfsnid::data::{generate_dataset, load_image, DataConfig, DatasetManifest, MANIFEST_FILE};
use sfsnid::objectives::brightness_prior_check;

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn four_pairs_two_real_gives_ten_images_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&DataConfig::default(), 3, dir.path()).unwrap();
    let files = files_under(dir.path());
    let pngs = files.iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count();
    assert_eq!(pngs, 10);
    assert_eq!(files.len(), 11);
    let loaded = DatasetManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded.synthetic, m.synthetic);
    assert_eq!(loaded.real_hazy.len(), 2);
    for (hazy, clear) in loaded.synthetic_paths() {
        assert_eq!(load_image(&hazy).unwrap().shape(), &[3, 64, 64]);
        assert!(clear.exists());
    }
}

#[test]
fn same_seed_same_bytes() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = DataConfig {
        image_size: 32,
        ..DataConfig::default()
    };
    generate_dataset(&cfg, 11, a.path()).unwrap();
    generate_dataset(&cfg, 11, b.path()).unwrap();
    generate_dataset(&cfg, 12, c.path()).unwrap();
    let read = |d: &Path| -> Vec<Vec<u8>> {
        files_under(d)
            .iter()
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .map(|p| std::fs::read(p).unwrap())
            .collect()
    };
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn shifted_split_has_brightness_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        synthetic_pairs: 12,
        real_hazy: 12,
        image_size: 32,
        ..DataConfig::default()
    };
    let m = generate_dataset(&cfg, 5, dir.path()).unwrap();
    let mean = |paths: Vec<std::path::PathBuf>| -> (f64, f64) {
        let mus: Vec<f64> = paths.iter().map(|p| load_image(p).unwrap().mean()).collect();
        let mu = mus.iter().sum::<f64>() / mus.len() as f64;
        let var = mus.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (mus.len() - 1) as f64;
        (mu, var / mus.len() as f64)
    };
    let (paired, vp) = mean(m.synthetic_paths().into_iter().map(|(h, _)| h).collect());
    let (real, vr) = mean(m.real_hazy.iter().map(|p| m.resolve(p)).collect());
    let gap = (paired - real).abs();
    assert!(gap > 0.0);
    // Welch statistic well away from zero
    assert!(gap / (vp + vr).sqrt() > 2.0, "gap {gap}, paired {paired}, real {real}");
}

#[test]
fn prior_holds_on_generated_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        synthetic_pairs: 16,
        real_hazy: 0,
        image_size: 32,
        ..DataConfig::default()
    };
    let m = generate_dataset(&cfg, 9, dir.path()).unwrap();
    let (hazy, clear): (Vec<_>, Vec<_>) = m
        .synthetic_paths()
        .iter()
        .map(|(h, c)| (load_image(h).unwrap(), load_image(c).unwrap()))
        .unzip();
    let report = brightness_prior_check(&clear, &hazy, 200, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(report.fraction, 1.0);
}
