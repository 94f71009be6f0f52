use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-window mean brightness of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct BrightnessMap {
    /// `[H/γ, W/γ]`.
    pub values: Tensor,
    pub window: usize,
}

/// Mean over channels and each non-overlapping `γ × γ` window of a
/// `[C,H,W]` image. `γ` must divide both sides.
pub fn local_brightness_map(image: &Tensor, window: usize) -> Result<BrightnessMap> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(
            "local_brightness_map",
            format!("expected [C,H,W], got {:?}", image.shape()),
        ));
    };
    let tape = Tape::new();
    let x = tape.constant(image.clone().reshape(vec![1, c, h, w])?);
    let map = x.local_mean(window).map_err(|_| {
        Error::invalid("local_brightness_map", format!("window {window} does not divide {h}x{w}"))
    })?;
    Ok(BrightnessMap {
        values: map.value().clone().reshape(vec![h / window, w / window])?,
        window,
    })
}

/// `ξ·φ^κ` elementwise. Map entries must lie in `[0, 1]`.
pub fn brightness_target(phi: &Tensor, kappa: f64, xi: f64) -> Result<Tensor> {
    // a window mean of values in [0,1] can land an ulp outside
    const SLACK: f64 = 1e-12;
    if let Some(v) = phi.data().iter().find(|v| !(-SLACK..=1.0 + SLACK).contains(*v)) {
        return Err(Error::invalid(
            "loss_brightness",
            format!("input brightness {v} outside [0, 1]"),
        ));
    }
    Ok(phi.map(|v| xi * v.clamp(0.0, 1.0).powf(kappa)))
}

pub(crate) fn pad_to_multiple(x: &Var, window: usize) -> Result<Var> {
    let (_, _, h, w) = x.value().dims4()?;
    let pad = |n: usize| (window - n % window) % window;
    if pad(h) == 0 && pad(w) == 0 {
        return Ok(x.clone());
    }
    x.pad_reflect(pad(h), pad(w))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorReport {
    pub trials: usize,
    pub holds: usize,
    pub fraction: f64,
}

/// Draws `trials` random half-subsets and counts how often the summed mean
/// brightness of the clear subset is strictly below that of the hazy
/// subset. Sets of equal size are treated as paired and share one index
/// draw per trial; otherwise each set is sampled independently.
pub fn brightness_prior_check<R: Rng + ?Sized>(
    clear: &[Tensor],
    hazy: &[Tensor],
    trials: usize,
    rng: &mut R,
) -> Result<PriorReport> {
    if clear.is_empty() {
        return Err(Error::EmptySplit("clear"));
    }
    if hazy.is_empty() {
        return Err(Error::EmptySplit("hazy"));
    }
    let clear_mu: Vec<f64> = clear.iter().map(Tensor::mean).collect();
    let hazy_mu: Vec<f64> = hazy.iter().map(Tensor::mean).collect();
    let k = (clear.len().min(hazy.len()) / 2).max(1);
    let paired = clear.len() == hazy.len();
    let mut holds = 0;
    for _ in 0..trials {
        let yi = sample(rng, clear_mu.len(), k);
        let xi = if paired { yi.clone() } else { sample(rng, hazy_mu.len(), k) };
        let y: f64 = yi.iter().map(|i| clear_mu[i]).sum();
        let x: f64 = xi.iter().map(|i| hazy_mu[i]).sum();
        if y < x {
            holds += 1;
        }
    }
    Ok(PriorReport {
        trials,
        holds,
        fraction: if trials == 0 { 0.0 } else { holds as f64 / trials as f64 },
    })
}
