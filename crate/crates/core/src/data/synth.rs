//! Haze rendering.
//!
//! Daytime haze follows the scattering model `I = J·t + A·(1−t)`. At night
//! active lights add a glow term, modelled as an isotropic Gaussian spread
//! of each light, plus additive sensor noise:
//!
//! ```text
//! I = J·t + A·(1−t) + Σ_k intensity_k·color_k·exp(−d_k²/2σ_g²) + n
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Airlight {
    Constant([f64; 3]),
    /// `[3,H,W]`.
    Field(Tensor),
}

impl Airlight {
    fn at(&self, ch: usize, i: usize) -> f64 {
        match self {
            Airlight::Constant(c) => c[ch],
            Airlight::Field(t) => t.data()[ch * t.shape()[1] * t.shape()[2] + i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightSource {
    /// `(row, column)` in pixels.
    pub position: (f64, f64),
    pub color: [f64; 3],
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    /// `[3,H,W]` in `[0,1]`.
    pub clear: Tensor,
    /// `[H,W]` in `(0,1]`.
    pub transmission: Tensor,
    pub airlight: Airlight,
    pub lights: Vec<LightSource>,
    /// Glow spread in pixels.
    pub glow_sigma: f64,
    pub noise_sigma: f64,
}

fn in_unit(values: &[f64]) -> bool {
    values.iter().all(|v| (0.0..=1.0).contains(v))
}

impl SynthScene {
    pub fn size(&self) -> (usize, usize) {
        let s = self.clear.shape();
        (s[1], s[2])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::invalid("synth_nighttime", detail));
        let [3, h, w] = *self.clear.shape() else {
            return bad(format!("clear image must be [3,H,W], got {:?}", self.clear.shape()));
        };
        if !in_unit(self.clear.data()) {
            return bad("clear image outside [0,1]".into());
        }
        if self.transmission.shape() != [h, w] {
            return bad(format!("transmission {:?} vs image {h}x{w}", self.transmission.shape()));
        }
        if self.transmission.data().iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
            return bad("transmission outside (0,1]".into());
        }
        match &self.airlight {
            Airlight::Constant(c) if !in_unit(c) => return bad("airlight outside [0,1]".into()),
            Airlight::Field(t) if t.shape() != [3, h, w] || !in_unit(t.data()) => {
                return bad("airlight field must be [3,H,W] in [0,1]".into())
            }
            _ => {}
        }
        for l in &self.lights {
            if !in_unit(&l.color) || !(l.intensity >= 0.0 && l.intensity.is_finite()) {
                return bad(format!("invalid light {l:?}"));
            }
        }
        if !(self.glow_sigma > 0.0 && self.glow_sigma.is_finite()) {
            return bad(format!("glow_sigma must be > 0, got {}", self.glow_sigma));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

/// `J·t + A·(1−t)` clamped to `[0,1]`, for `[3,H,W]` images and an `[H,W]`
/// transmission map.
pub fn synth_daytime(clear: &Tensor, transmission: &Tensor, airlight: &Airlight) -> Result<Tensor> {
    let [3, h, w] = *clear.shape() else {
        return Err(Error::shape("synth_daytime", format!("{:?}", clear.shape())));
    };
    if transmission.shape() != [h, w] {
        return Err(Error::shape(
            "synth_daytime",
            format!("transmission {:?} vs image {h}x{w}", transmission.shape()),
        ));
    }
    Ok(scatter(clear, transmission, airlight, h * w))
}

fn scatter(clear: &Tensor, t: &Tensor, a: &Airlight, plane: usize) -> Tensor {
    let mut out = clear.clone();
    for (k, v) in out.data_mut().iter_mut().enumerate() {
        let (ch, i) = (k / plane, k % plane);
        let tv = t.data()[i];
        *v = (*v * tv + a.at(ch, i) * (1.0 - tv)).clamp(0.0, 1.0);
    }
    out
}

/// Glow of all lights on an `h × w` grid, `[3,H,W]`. The kernel peaks at
/// `intensity·color` on the light position.
pub fn glow(lights: &[LightSource], sigma: f64, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(vec![3, h, w]);
    let d = out.data_mut();
    let inv = 1.0 / (2.0 * sigma * sigma);
    for l in lights {
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - l.position.0, x as f64 - l.position.1);
                let k = l.intensity * (-(dy * dy + dx * dx) * inv).exp();
                for ch in 0..3 {
                    d[(ch * h + y) * w + x] += k * l.color[ch];
                }
            }
        }
    }
    out
}

/// Renders `(hazy, clear)`. Noise is drawn from a generator seeded with
/// `seed`; with `noise_sigma = 0` the result does not depend on it.
pub fn synth_nighttime(scene: &SynthScene, seed: u64) -> Result<(Tensor, Tensor)> {
    scene.validate()?;
    let (h, w) = scene.size();
    let mut hazy = Tensor::zeros(vec![3, h, w]);
    let g = glow(&scene.lights, scene.glow_sigma, h, w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (scene.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, scene.noise_sigma).expect("validated sigma"));
    let plane = h * w;
    for (k, v) in hazy.data_mut().iter_mut().enumerate() {
        let (ch, i) = (k / plane, k % plane);
        let t = scene.transmission.data()[i];
        let mut value = scene.clear.data()[k] * t + scene.airlight.at(ch, i) * (1.0 - t) + g.data()[k];
        if let Some(n) = &noise {
            value += n.sample(&mut rng);
        }
        *v = value.clamp(0.0, 1.0);
    }
    Ok((hazy, scene.clear.clone()))
}

/// `x^γ` per value.
pub fn gamma_correct(image: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma_correct", format!("gamma must be > 0, got {gamma}")));
    }
    Ok(image.map(|v| v.max(0.0).powf(gamma)))
}

/// Smooth noise in `[0,1]`: bilinear interpolation of random lattice values
/// with the given cell size in pixels.
pub fn value_noise<R: Rng + ?Sized>(h: usize, w: usize, cell: f64, rng: &mut R) -> Tensor {
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / cell;
        let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / cell;
            let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Tensor::new(vec![h, w], out).expect("sized buffer")
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Parameter ranges for random scenes. Each `[lo, hi]` pair is sampled
/// uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Peak value of the clear scene.
    pub scene_brightness: [f64; 2],
    pub t_min: f64,
    /// Airlight value, same for all channels before tinting.
    pub airlight: [f64; 2],
    /// Per-channel airlight multipliers.
    pub airlight_tint: [f64; 3],
    pub lights: [usize; 2],
    pub light_intensity: [f64; 2],
    pub glow_sigma: [f64; 2],
    pub noise_sigma: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            scene_brightness: [0.3, 0.5],
            t_min: 0.3,
            airlight: [0.5, 0.7],
            airlight_tint: [1.0, 0.9, 0.75],
            lights: [1, 3],
            light_intensity: [0.3, 0.6],
            glow_sigma: [2.0, 5.0],
            noise_sigma: 0.01,
        }
    }
}

impl SceneConfig {
    /// The unlabeled "real-like" split: dimmer scenes, wider orange glow,
    /// heavier noise.
    pub fn shifted() -> Self {
        Self {
            scene_brightness: [0.2, 0.4],
            airlight: [0.55, 0.8],
            airlight_tint: [1.0, 0.8, 0.55],
            lights: [2, 4],
            light_intensity: [0.4, 0.8],
            glow_sigma: [4.0, 8.0],
            noise_sigma: 0.02,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.scene_brightness, self.airlight, self.light_intensity, self.glow_sigma];
        if ranges.iter().any(|[lo, hi]| !(lo <= hi && *lo >= 0.0)) || self.lights[0] > self.lights[1] {
            return Err(Error::Config("scene ranges must satisfy 0 <= lo <= hi".into()));
        }
        if self.scene_brightness[1] > 1.0 || self.airlight[1] > 1.0 || !in_unit(&self.airlight_tint) {
            return Err(Error::Config("scene colors must lie in [0,1]".into()));
        }
        if !(self.t_min > 0.0 && self.t_min <= 1.0) || self.glow_sigma[0] <= 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::Config("t_min must be in (0,1], glow_sigma > 0, noise_sigma >= 0".into()));
        }
        Ok(())
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// A random night street: smooth colored texture with a few flat blocks,
/// a two-octave transmission field and randomly placed lights.
pub fn random_scene<R: Rng + ?Sized>(cfg: &SceneConfig, size: usize, rng: &mut R) -> Result<SynthScene> {
    cfg.validate()?;
    let (h, w) = (size, size);
    let peak = pick(rng, cfg.scene_brightness);
    let mut clear = Vec::with_capacity(3 * h * w);
    let base = value_noise(h, w, size as f64 / 4.0, rng);
    for _ in 0..3 {
        let detail = value_noise(h, w, size as f64 / 12.0, rng);
        clear.extend(base.data().iter().zip(detail.data()).map(|(b, d)| peak * (0.6 * b + 0.4 * d)));
    }
    let blocks = rng.random_range(2..5);
    for _ in 0..blocks {
        let (bh, bw) = (rng.random_range(size / 8..size / 3 + 1), rng.random_range(size / 8..size / 3 + 1));
        let (y0, x0) = (rng.random_range(0..h - bh), rng.random_range(0..w - bw));
        let color: [f64; 3] = std::array::from_fn(|_| peak * rng.random::<f64>());
        for (ch, c) in color.iter().enumerate() {
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    clear[(ch * h + y) * w + x] = *c;
                }
            }
        }
    }
    let coarse = value_noise(h, w, size as f64 / 3.0, rng);
    let fine = value_noise(h, w, size as f64 / 8.0, rng);
    let transmission = coarse
        .zip_map(&fine, |c, f| cfg.t_min + (1.0 - cfg.t_min) * (2.0 * c + f) / 3.0)?;
    let a = pick(rng, cfg.airlight);
    let airlight = Airlight::Constant(std::array::from_fn(|ch| a * cfg.airlight_tint[ch]));
    let count = rng.random_range(cfg.lights[0]..=cfg.lights[1]);
    let lights = (0..count)
        .map(|_| LightSource {
            position: (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)),
            color: [1.0, rng.random_range(0.6..0.95), rng.random_range(0.3..0.7)],
            intensity: pick(rng, cfg.light_intensity),
        })
        .collect();
    Ok(SynthScene {
        clear: Tensor::new(vec![3, h, w], clear)?,
        transmission,
        airlight,
        lights,
        glow_sigma: pick(rng, cfg.glow_sigma),
        noise_sigma: cfg.noise_sigma,
    })
}
