use super::brightness::{brightness_target, pad_to_multiple};
use super::LossWeights;
use crate::error::{Error, Result};
use crate::fourier::dft2;
use crate::network::SCALES;
use crate::tensor::Var;

/// Loss components of one batch. `brightness` is `None` when `β = 0`.
pub struct LossTerms {
    pub spatial: Var,
    pub frequency: Var,
    pub brightness: Option<Var>,
    pub total: Var,
}

impl LossTerms {
    /// `(L_G, L_F, L_B, total)` as plain numbers.
    pub fn values(&self) -> (f64, f64, f64, f64) {
        (
            self.spatial.value().item(),
            self.frequency.value().item(),
            self.brightness.as_ref().map_or(0.0, |b| b.value().item()),
            self.total.value().item(),
        )
    }
}

fn check_pyramids(op: &'static str, preds: &[Var], other: &[Var]) -> Result<()> {
    if preds.len() != SCALES || other.len() != SCALES {
        return Err(Error::invalid(op, format!("expected {SCALES} scales")));
    }
    for (p, o) in preds.iter().zip(other) {
        if p.shape() != o.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", p.shape(), o.shape())));
        }
    }
    Ok(())
}

fn sum_scales(terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it.next().expect("at least one scale");
    it.try_fold(first, |acc, t| acc.add(&t))
}

/// `Σ_s λ_g · mean|p^s − y^s|`.
pub fn loss_spatial(preds: &[Var], targets: &[Var], w: &LossWeights) -> Result<Var> {
    check_pyramids("loss_spatial", preds, targets)?;
    let terms = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| p.sub(y)?.abs()?.mean()?.scale(w.lambda_g))
        .collect::<Result<Vec<_>>>()?;
    sum_scales(terms)
}

/// `Σ_s λ_f · mean(|Re Δ| + |Im Δ|)` with `Δ = DFT(p^s − y^s)`.
pub fn loss_frequency(preds: &[Var], targets: &[Var], w: &LossWeights) -> Result<Var> {
    check_pyramids("loss_frequency", preds, targets)?;
    let terms = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let spec = dft2(&p.sub(y)?)?;
            spec.real.abs()?.mean()?.add(&spec.imag.abs()?.mean()?)?.scale(w.lambda_f)
        })
        .collect::<Result<Vec<_>>>()?;
    sum_scales(terms)
}

/// `Σ_s λ_b · mean over batch and windows of (φ_p − ξ·φ_x^κ)²`.
///
/// Sizes not divisible by the window are reflect-padded first.
pub fn loss_brightness(preds: &[Var], inputs: &[Var], w: &LossWeights) -> Result<Var> {
    check_pyramids("loss_brightness", preds, inputs)?;
    let terms = preds
        .iter()
        .zip(inputs)
        .zip(w.windows)
        .map(|((p, x), window)| {
            let phi_p = pad_to_multiple(p, window)?.local_mean(window)?;
            let phi_x = pad_to_multiple(&p.tape().constant(x.value().clone()), window)?.local_mean(window)?;
            let target = brightness_target(phi_x.value(), w.kappa, w.xi)?;
            let diff = phi_p.sub(&p.tape().constant(target))?;
            diff.mul(&diff)?.mean()?.scale(w.lambda_b)
        })
        .collect::<Result<Vec<_>>>()?;
    sum_scales(terms)
}

/// `L_G + α·L_F + β·L_B`. The brightness term is skipped entirely when
/// `β = 0`.
pub fn total_loss(preds: &[Var], targets: &[Var], inputs: &[Var], w: &LossWeights) -> Result<LossTerms> {
    let spatial = loss_spatial(preds, targets, w)?;
    let frequency = loss_frequency(preds, targets, w)?;
    let mut total = spatial.add(&frequency.scale(w.alpha)?)?;
    let brightness = if w.beta != 0.0 {
        let b = loss_brightness(preds, inputs, w)?;
        total = total.add(&b.scale(w.beta)?)?;
        Some(b)
    } else {
        None
    };
    Ok(LossTerms {
        spatial,
        frequency,
        brightness,
        total,
    })
}
