use sfsnid_web::{brightness_rgba, night_haze_rgba, rgba_to_tensor, side_by_side, spectrum_rgba};

fn hazy_half(buf: &[u8], size: usize) -> Vec<u8> {
    buf.chunks_exact(8 * size).flat_map(|row| row[4 * size..].to_vec()).collect()
}

#[test]
fn haze_render_is_deterministic_and_brighter() {
    let a = night_haze_rgba(32, 4, 0.3, 0.6, 2, 3.0).unwrap();
    assert_eq!(a.len(), 4 * 64 * 32);
    assert_eq!(a, night_haze_rgba(32, 4, 0.3, 0.6, 2, 3.0).unwrap());
    assert_ne!(a, night_haze_rgba(32, 5, 0.3, 0.6, 2, 3.0).unwrap());
    let clear: Vec<u8> = a.chunks_exact(8 * 32).flat_map(|row| row[..4 * 32].to_vec()).collect();
    let mean = |b: &[u8]| b.iter().map(|&v| v as f64).sum::<f64>() / b.len() as f64;
    assert!(mean(&hazy_half(&a, 32)) > mean(&clear));
    assert!(night_haze_rgba(8, 0, 0.3, 0.6, 2, 3.0).is_err());
    // slider extremes of the demo page
    assert!(night_haze_rgba(128, 0, 1.0, 0.0, 0, 0.5).is_ok());
    assert!(night_haze_rgba(128, 0, 0.05, 1.0, 8, 16.0).is_ok());
    assert!(night_haze_rgba(32, 0, 0.0, 0.6, 2, 3.0).is_err());
}

#[test]
fn rgba_round_trip() {
    let rgba: Vec<u8> = (0..4 * 6 * 5).map(|i| if i % 4 == 3 { 255 } else { (i * 7 % 256) as u8 }).collect();
    let t = rgba_to_tensor(&rgba, 6, 5).unwrap();
    assert_eq!(side_by_side(&[&t]), rgba);
    assert!(rgba_to_tensor(&rgba, 5, 5).is_err());
}

#[test]
fn constant_image_spectrum_is_a_centred_spike() {
    let rgba = [100u8, 100, 100, 255].repeat(16 * 16);
    let out = spectrum_rgba(&rgba, 16, 16).unwrap();
    assert_eq!(out.len(), 4 * 32 * 16);
    let amp = |y: usize, x: usize| out[(y * 32 + x) * 4];
    assert_eq!(amp(8, 8), 255);
    assert_eq!(amp(0, 0), 0);
}

#[test]
fn brightness_target_darkens_with_kappa() {
    let rgba: Vec<u8> = (0..16 * 16).flat_map(|i| [(i % 200) as u8 + 20, 90, 60, 255]).collect();
    let sum_target = |k: f64| -> u64 {
        let out = brightness_rgba(&rgba, 16, 16, 4, k, 1.0).unwrap();
        out.chunks_exact(4 * 32).flat_map(|row| row[4 * 16..].to_vec()).map(u64::from).sum()
    };
    let flat = brightness_rgba(&rgba, 16, 16, 4, 1.0, 1.0).unwrap();
    let (left, right): (Vec<Vec<u8>>, Vec<Vec<u8>>) = flat.chunks_exact(4 * 32).map(|r| (r[..64].to_vec(), r[64..].to_vec())).unzip();
    assert_eq!(left, right);
    assert!(sum_target(2.0) < sum_target(1.3));
    assert!(brightness_rgba(&rgba, 16, 16, 0, 1.3, 1.0).is_err());
}
