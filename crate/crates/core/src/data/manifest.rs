//! Dataset manifests and generation of the synthetic toy dataset.
//!
//! A manifest is a TOML file; paths inside it are relative to the
//! manifest's own directory:
//!
//! ```toml
//! version = 1
//! real_hazy = ["real/hazy/0000.png"]
//! real_clear_reference = ["real/clear/0000.png"]   # optional
//! pseudo_labels = ["pseudo/0000.png"]              # optional, 1:1 with real_hazy
//!
//! [[synthetic]]
//! hazy = "synthetic/hazy/0000.png"
//! clear = "synthetic/clear/0000.png"
//! ```

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::save_image;
use super::synth::{gamma_correct, random_scene, synth_nighttime, SceneConfig};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub hazy: PathBuf,
    pub clear: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub real_hazy: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub real_clear_reference: Option<Vec<PathBuf>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_labels: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub synthetic: Vec<Pair>,
    /// Directory the relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            real_hazy: Vec::new(),
            real_clear_reference: None,
            pseudo_labels: None,
            synthetic: Vec::new(),
            root: root.into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = toml::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported manifest version {}", self.version)));
        }
        if let Some(p) = &self.pseudo_labels {
            if p.len() != self.real_hazy.len() {
                return Err(Error::Manifest(format!(
                    "{} pseudo labels for {} real hazy images",
                    p.len(),
                    self.real_hazy.len()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn synthetic_paths(&self) -> Vec<(PathBuf, PathBuf)> {
        self.synthetic
            .iter()
            .map(|p| (self.resolve(&p.hazy), self.resolve(&p.clear)))
            .collect()
    }

    /// `(real hazy, pseudo label)` pairs, empty when no labels exist.
    pub fn pseudo_pairs(&self) -> Vec<(PathBuf, PathBuf)> {
        match &self.pseudo_labels {
            Some(labels) => self
                .real_hazy
                .iter()
                .zip(labels)
                .map(|(x, y)| (self.resolve(x), self.resolve(y)))
                .collect(),
            None => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic_pairs: usize,
    pub real_hazy: usize,
    pub image_size: usize,
    /// Also write the clear scenes behind the real-like split.
    pub write_real_clear: bool,
    /// Exponent applied to every generated image (1 leaves them unchanged).
    pub gamma: f64,
    pub paired: SceneConfig,
    pub real: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synthetic_pairs: 4,
            real_hazy: 2,
            image_size: 64,
            write_real_clear: false,
            gamma: 1.0,
            paired: SceneConfig::default(),
            real: SceneConfig::shifted(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Config("data.image_size must be at least 8".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config("data.gamma must be > 0".into()));
        }
        self.paired.validate()?;
        self.real.validate()
    }
}

/// Stream ids keep the per-scene generators of both splits disjoint.
const REAL_STREAM: u64 = 1 << 32;

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Writes `N` synthetic pairs and `M` real-like hazy images under
/// `out_dir`, plus `manifest.toml`. Every scene draws from its own
/// generator derived from `seed` and its index.
pub fn generate_dataset(cfg: &DataConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = DatasetManifest::new(out_dir);
    let render = |scene_cfg: &SceneConfig, stream: u64| -> Result<_> {
        let mut rng = scene_rng(seed, stream);
        let scene = random_scene(scene_cfg, cfg.image_size, &mut rng)?;
        let (hazy, clear) = synth_nighttime(&scene, rand::Rng::random(&mut rng))?;
        Ok((gamma_correct(&hazy, cfg.gamma)?, gamma_correct(&clear, cfg.gamma)?))
    };
    for i in 0..cfg.synthetic_pairs {
        let (hazy, clear) = render(&cfg.paired, i as u64)?;
        let pair = Pair {
            hazy: PathBuf::from(format!("synthetic/hazy/{i:04}.png")),
            clear: PathBuf::from(format!("synthetic/clear/{i:04}.png")),
        };
        save_image(&hazy, &out_dir.join(&pair.hazy))?;
        save_image(&clear, &out_dir.join(&pair.clear))?;
        manifest.synthetic.push(pair);
    }
    let mut references = Vec::new();
    for i in 0..cfg.real_hazy {
        let (hazy, clear) = render(&cfg.real, REAL_STREAM + i as u64)?;
        let path = PathBuf::from(format!("real/hazy/{i:04}.png"));
        save_image(&hazy, &out_dir.join(&path))?;
        manifest.real_hazy.push(path);
        if cfg.write_real_clear {
            let path = PathBuf::from(format!("real/clear/{i:04}.png"));
            save_image(&clear, &out_dir.join(&path))?;
            references.push(path);
        }
    }
    if cfg.write_real_clear {
        manifest.real_clear_reference = Some(references);
    }
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new(dir.path());
        m.synthetic.push(Pair {
            hazy: "a.png".into(),
            clear: "b.png".into(),
        });
        m.real_hazy.push("c.png".into());
        m.pseudo_labels = Some(vec!["d.png".into()]);
        let path = dir.path().join(MANIFEST_FILE);
        m.save(&path).unwrap();
        assert_eq!(DatasetManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn misaligned_pseudo_labels_rejected() {
        let mut m = DatasetManifest::new(".");
        m.real_hazy = vec!["a.png".into(), "b.png".into()];
        m.pseudo_labels = Some(vec!["p.png".into()]);
        assert!(m.validate().is_err());
    }
}
