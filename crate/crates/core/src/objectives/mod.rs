//! Training objectives and full-reference image metrics.
//!
//! The total loss is `L = L_G + α·L_F + β·L_B`:
//!
//! * [`loss_spatial`] (`L_G`): per-pixel mean L1 summed over the three scales.
//! * [`loss_frequency`] (`L_F`): mean of `|Δre| + |Δim|` between spectra.
//! * [`loss_brightness`] (`L_B`): squared gap between the prediction's local
//!   brightness map and `ξ·φ_x^κ` computed from the hazy input.

mod brightness;
mod losses;
mod metrics;

pub use brightness::{
    brightness_prior_check, brightness_target, local_brightness_map, BrightnessMap, PriorReport,
};
pub use losses::{loss_brightness, loss_frequency, loss_spatial, total_loss, LossTerms};
pub use metrics::{psnr, ssim, PSNR_CAP_DB};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::SCALES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_g: f64,
    pub lambda_f: f64,
    pub lambda_b: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Brightness intensity coefficient; larger values pull the target darker.
    pub kappa: f64,
    pub xi: f64,
    /// Brightness window per scale, finest first.
    pub windows: [usize; SCALES],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_g: 1.0,
            lambda_f: 1.0,
            lambda_b: 1.0,
            alpha: 0.1,
            beta: 20.0,
            kappa: 1.3,
            xi: 1.0,
            windows: [16, 8, 4],
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_g, self.lambda_f, self.lambda_b, self.alpha, self.beta];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("loss.kappa must be >= 1, got {}", self.kappa)));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::Config(format!("loss.xi must be > 0, got {}", self.xi)));
        }
        if self.windows.contains(&0) {
            return Err(Error::Config("loss.windows must be positive".into()));
        }
        Ok(())
    }
}
