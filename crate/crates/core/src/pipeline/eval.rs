use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Stage};
use super::par_map;
use super::train::{infer, Model};
use crate::data::{load_image, save_image, DatasetManifest, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::objectives::{psnr, ssim};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Synthetic pairs, scored against their clear images.
    Synthetic,
    /// Real-like hazy images, scored against clear references when the
    /// manifest has them.
    Real,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Split::Synthetic),
            "real" => Ok(Split::Real),
            _ => Err(Error::invalid("split", format!("unknown split {s:?}; use synthetic or real"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Mean pixel value of the dehazed image.
    pub mean_brightness: f64,
    /// Mean pixel value of the hazy input.
    pub input_brightness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub records: Vec<EvalRecord>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_brightness: f64,
    pub mean_input_brightness: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores one prediction.
pub fn score(image: String, input: &Tensor, prediction: &Tensor, reference: Option<&Tensor>) -> Result<EvalRecord> {
    let (p, s) = match reference {
        Some(r) => (Some(psnr(prediction, r, 1.0)?), Some(ssim(prediction, r)?)),
        None => (None, None),
    };
    Ok(EvalRecord {
        image,
        psnr: p,
        ssim: s,
        mean_brightness: prediction.mean(),
        input_brightness: input.mean(),
    })
}

pub fn summarize(split: Split, records: Vec<EvalRecord>) -> EvalReport {
    EvalReport {
        split,
        mean_psnr: mean(records.iter().filter_map(|r| r.psnr)),
        mean_ssim: mean(records.iter().filter_map(|r| r.ssim)),
        mean_brightness: mean(records.iter().map(|r| r.mean_brightness)).unwrap_or(0.0),
        mean_input_brightness: mean(records.iter().map(|r| r.input_brightness)).unwrap_or(0.0),
        records,
    }
}

/// Dehazes every image of `split` and scores it.
pub fn evaluate(model: &Model, manifest: &DatasetManifest, split: Split) -> Result<EvalReport> {
    let items: Vec<(PathBuf, Option<PathBuf>)> = match split {
        Split::Synthetic => manifest
            .synthetic_paths()
            .into_iter()
            .map(|(x, y)| (x, Some(y)))
            .collect(),
        Split::Real => {
            let refs = manifest.real_clear_reference.as_ref();
            manifest
                .real_hazy
                .iter()
                .enumerate()
                .map(|(i, x)| (manifest.resolve(x), refs.and_then(|r| r.get(i)).map(|p| manifest.resolve(p))))
                .collect()
        }
    };
    if items.is_empty() {
        return Err(Error::EmptySplit(match split {
            Split::Synthetic => "synthetic",
            Split::Real => "real_hazy",
        }));
    }
    let records = par_map(&items, |(x, y)| {
        let input = load_image(x)?;
        let reference = y.as_deref().map(load_image).transpose()?;
        let prediction = infer(model, &input)?;
        score(x.display().to_string(), &input, &prediction, reference.as_ref())
    })?;
    Ok(summarize(split, records))
}

/// Runs inference on every real hazy image, writes the results to
/// `out_dir/pseudo/` and returns (and saves to `out_dir/manifest.toml`) a
/// manifest listing them as pseudo labels. Entries of the input manifest
/// are rewritten as absolute paths.
pub fn generate_pseudo_labels(ckpt: &Checkpoint, manifest: &DatasetManifest, out_dir: &Path) -> Result<DatasetManifest> {
    if ckpt.stage == Stage::Untrained {
        return Err(Error::Checkpoint("pseudo labels need a trained checkpoint".into()));
    }
    if manifest.real_hazy.is_empty() {
        return Err(Error::EmptySplit("real_hazy"));
    }
    let model = Model::from_checkpoint(ckpt)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let absolute = |p: &Path| -> Result<PathBuf> {
        let full = manifest.resolve(p);
        std::path::absolute(&full).map_err(|e| Error::io(&full, e))
    };
    let mut next = DatasetManifest::new(out_dir);
    for pair in &manifest.synthetic {
        next.synthetic.push(crate::data::Pair {
            hazy: absolute(&pair.hazy)?,
            clear: absolute(&pair.clear)?,
        });
    }
    next.real_hazy = manifest.real_hazy.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
    next.real_clear_reference = manifest
        .real_clear_reference
        .as_ref()
        .map(|r| r.iter().map(|p| absolute(p)).collect::<Result<_>>())
        .transpose()?;
    let labels: Vec<PathBuf> = (0..next.real_hazy.len())
        .map(|i| PathBuf::from(format!("pseudo/{i:04}.png")))
        .collect();
    let jobs: Vec<(PathBuf, PathBuf)> = next
        .real_hazy
        .iter()
        .cloned()
        .zip(labels.iter().map(|l| out_dir.join(l)))
        .collect();
    par_map(&jobs, |(x, dst)| save_image(&infer(&model, &load_image(x)?)?, dst))?;
    next.pseudo_labels = Some(labels);
    next.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pairs_score_perfectly() {
        let x = Tensor::full(vec![3, 16, 16], 0.4);
        let records = (0..3)
            .map(|i| score(format!("{i}"), &x, &x, Some(&x)).unwrap())
            .collect();
        let report = summarize(Split::Synthetic, records);
        assert!(report.records.iter().all(|r| r.ssim == Some(1.0) || (r.ssim.unwrap() - 1.0).abs() < 1e-12));
        assert_eq!(report.mean_psnr, Some(100.0));
    }

    #[test]
    fn aggregates_are_record_means() {
        let a = Tensor::full(vec![3, 4, 4], 0.2);
        let b = Tensor::full(vec![3, 4, 4], 0.6);
        let r = summarize(
            Split::Real,
            vec![
                score("a".into(), &b, &a, None).unwrap(),
                score("b".into(), &a, &b, None).unwrap(),
            ],
        );
        assert!((r.mean_brightness - 0.4).abs() < 1e-15);
        assert_eq!(r.mean_psnr, None);
        assert!("real".parse::<Split>().is_ok() && "x".parse::<Split>().is_err());
    }
}
