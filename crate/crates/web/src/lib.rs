//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every exported function returns an RGBA buffer ready for `ImageData`.
//! The `*_rgba` functions hold the logic and are callable natively.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfsnid::data::{random_scene, synth_nighttime, SceneConfig};
use sfsnid::fourier::spectrum_images;
use sfsnid::objectives::{brightness_target, local_brightness_map};
use sfsnid::{Error, Result, Tensor};
use wasm_bindgen::prelude::*;

/// RGBA bytes to a `[3,H,W]` tensor in `[0,1]`; alpha is dropped.
pub fn rgba_to_tensor(rgba: &[u8], width: usize, height: usize) -> Result<Tensor> {
    if rgba.len() != 4 * width * height {
        return Err(Error::invalid(
            "rgba",
            format!("{} bytes for {width}x{height}", rgba.len()),
        ));
    }
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in rgba.chunks_exact(4).enumerate() {
        for ch in 0..3 {
            data[ch * plane + i] = px[ch] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

/// Places `[3,H,W]` images side by side as opaque RGBA.
pub fn side_by_side(images: &[&Tensor]) -> Vec<u8> {
    let (h, w) = (images[0].shape()[1], images[0].shape()[2]);
    let mut out = Vec::with_capacity(4 * h * w * images.len());
    for y in 0..h {
        for img in images {
            for x in 0..w {
                for ch in 0..3 {
                    let v = img.data()[(ch * h + y) * w + x];
                    out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
                out.push(255);
            }
        }
    }
    out
}

/// Clear scene next to its nighttime haze rendering, `2·size × size`.
pub fn night_haze_rgba(
    size: usize,
    seed: u64,
    t_min: f64,
    airlight: f64,
    lights: usize,
    glow_sigma: f64,
) -> Result<Vec<u8>> {
    if size < 16 {
        return Err(Error::invalid("night_haze", "size must be at least 16"));
    }
    let cfg = SceneConfig {
        t_min,
        airlight: [airlight, airlight],
        lights: [lights, lights],
        glow_sigma: [glow_sigma, glow_sigma],
        ..SceneConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = random_scene(&cfg, size, &mut rng)?;
    let (hazy, clear) = synth_nighttime(&scene, seed)?;
    Ok(side_by_side(&[&clear, &hazy]))
}

/// Centred log-amplitude next to phase, per colour channel, `2·W × H`.
pub fn spectrum_rgba(rgba: &[u8], width: usize, height: usize) -> Result<Vec<u8>> {
    let img = rgba_to_tensor(rgba, width, height)?;
    let (amp, phase) = spectrum_images(&img)?;
    Ok(side_by_side(&[&amp, &phase]))
}

/// Local brightness map `φ` next to the target `ξ·φ^κ`, each window drawn
/// as a flat grey block. Sides are cropped to a multiple of `window`.
pub fn brightness_rgba(
    rgba: &[u8],
    width: usize,
    height: usize,
    window: usize,
    kappa: f64,
    xi: f64,
) -> Result<Vec<u8>> {
    let img = rgba_to_tensor(rgba, width, height)?;
    if window == 0 || window > width.min(height) {
        return Err(Error::invalid("brightness", format!("window {window} does not fit {width}x{height}")));
    }
    let (h, w) = (height - height % window, width - width % window);
    let mut cropped = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for y in 0..h {
            let row = (ch * height + y) * width;
            cropped.extend_from_slice(&img.data()[row..row + w]);
        }
    }
    let phi = local_brightness_map(&Tensor::new(vec![3, h, w], cropped)?, window)?.values;
    let target = brightness_target(&phi, kappa, xi)?;
    let blocks = |m: &Tensor| -> Tensor {
        let cols = w / window;
        let plane: Vec<f64> = (0..h * w).map(|i| m.data()[(i / w / window) * cols + (i % w) / window]).collect();
        Tensor::new(vec![3, h, w], plane.repeat(3)).expect("sized buffer")
    };
    Ok(side_by_side(&[&blocks(&phi), &blocks(&target)]))
}

fn js<T>(r: Result<T>) -> std::result::Result<T, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn night_haze(
    size: u32,
    seed: u32,
    t_min: f64,
    airlight: f64,
    lights: u32,
    glow_sigma: f64,
) -> std::result::Result<Vec<u8>, JsError> {
    js(night_haze_rgba(size as usize, seed as u64, t_min, airlight, lights as usize, glow_sigma))
}

#[wasm_bindgen]
pub fn spectrum(rgba: &[u8], width: u32, height: u32) -> std::result::Result<Vec<u8>, JsError> {
    js(spectrum_rgba(rgba, width as usize, height as usize))
}

#[wasm_bindgen]
pub fn brightness(
    rgba: &[u8],
    width: u32,
    height: u32,
    window: u32,
    kappa: f64,
    xi: f64,
) -> std::result::Result<Vec<u8>, JsError> {
    js(brightness_rgba(rgba, width as usize, height as usize, window as usize, kappa, xi))
}
