//! Synthetic nighttime haze, image files and dataset manifests.

pub mod io;
pub mod manifest;
pub mod synth;

pub use io::{load_image, save_image};
pub use manifest::{generate_dataset, DataConfig, DatasetManifest, Pair, MANIFEST_FILE};
pub use synth::{
    gamma_correct, glow, random_scene, synth_daytime, synth_nighttime, value_noise, Airlight, LightSource,
    SceneConfig, SynthScene,
};
