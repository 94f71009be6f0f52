//! Three-scale encoder-decoder built from SFII blocks.
//!
//! Each scale `s ∈ {0, 1, 2}` has its own trunk:
//!
//! ```text
//! ConvI → [SFII×k → ConvD] × depth → SFII×k → [ConvU → concat skip → C1 → SFII×k] × depth → ConvO
//! ```
//!
//! Scales run coarse to fine. The prediction of scale `s+1` is upsampled
//! (nearest) and concatenated with `x^s` at the input of scale `s`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BoundParams, Conv2d, ParamStore};
use crate::sfii::{SfiiBlock, DEFAULT_WINDOW};
use crate::tensor::{Tensor, Var};

pub const SCALES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub sfii_blocks_per_stage: usize,
    /// Down/upsampling levels inside each scale trunk.
    pub depth: usize,
    pub window: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_channels: 24,
            sfii_blocks_per_stage: 2,
            depth: 2,
            window: DEFAULT_WINDOW,
        }
    }
}

impl NetworkConfig {
    /// The smallest configuration: 4 base channels, one block per stage.
    pub fn tiny() -> Self {
        Self {
            base_channels: 4,
            sfii_blocks_per_stage: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 {
            return Err(Error::Config("network.base_channels must be at least 4".into()));
        }
        if self.sfii_blocks_per_stage < 1 {
            return Err(Error::Config("network.sfii_blocks_per_stage must be at least 1".into()));
        }
        if self.window < 1 {
            return Err(Error::Config("network.window must be positive".into()));
        }
        Ok(())
    }

    /// Input sides must be multiples of this: the pyramid halves twice and
    /// each trunk halves `depth` more times.
    pub fn size_multiple(&self) -> usize {
        4 << self.depth
    }
}

/// Hazy input at three scales, each level the 2×2 average of the previous.
#[derive(Clone, Debug)]
pub struct ImagePyramid {
    pub levels: [Tensor; SCALES],
}

pub fn build_pyramid(image: &Tensor) -> Result<ImagePyramid> {
    let (_, _, h, w) = image.dims4()?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::invalid(
            "build_pyramid",
            format!("{h}x{w} is not divisible by 4; reflect-pad the image first"),
        ));
    }
    let l0 = image.clone();
    let l1 = crate::tensor::avg_pool2x(&l0)?;
    let l2 = crate::tensor::avg_pool2x(&l1)?;
    Ok(ImagePyramid { levels: [l0, l1, l2] })
}

#[derive(Clone, Debug)]
struct EncoderStage {
    blocks: Vec<SfiiBlock>,
    down: Conv2d,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: Conv2d,
    fuse: Conv2d,
    blocks: Vec<SfiiBlock>,
}

#[derive(Clone, Debug)]
struct Trunk {
    conv_in: Conv2d,
    encoders: Vec<EncoderStage>,
    bottleneck: Vec<SfiiBlock>,
    decoders: Vec<DecoderStage>,
    conv_out: Conv2d,
}

impl Trunk {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        cfg: &NetworkConfig,
        rng: &mut R,
    ) -> Self {
        let base = cfg.base_channels;
        let blocks = |store: &mut ParamStore, prefix: &str, c: usize, rng: &mut R| -> Vec<SfiiBlock> {
            (0..cfg.sfii_blocks_per_stage)
                .map(|j| SfiiBlock::new(store, &format!("{prefix}.blk{j}"), c, cfg.window, rng))
                .collect()
        };
        let conv_in = Conv2d::new(store, &format!("{name}.conv_in"), in_channels, base, 3, 1, rng);
        let mut encoders = Vec::with_capacity(cfg.depth);
        for level in 0..cfg.depth {
            let c = base << level;
            let prefix = format!("{name}.enc{level}");
            encoders.push(EncoderStage {
                blocks: blocks(store, &prefix, c, rng),
                down: Conv2d::new(store, &format!("{prefix}.down"), c, 2 * c, 3, 2, rng),
            });
        }
        let bottleneck = blocks(store, &format!("{name}.mid"), base << cfg.depth, rng);
        let mut decoders = Vec::with_capacity(cfg.depth);
        for level in (0..cfg.depth).rev() {
            let c = base << level;
            let prefix = format!("{name}.dec{level}");
            decoders.push(DecoderStage {
                up: Conv2d::new(store, &format!("{prefix}.up"), 2 * c, c, 3, 1, rng),
                fuse: Conv2d::new(store, &format!("{prefix}.fuse"), 2 * c, c, 1, 1, rng),
                blocks: blocks(store, &prefix, c, rng),
            });
        }
        let conv_out = Conv2d::new(store, &format!("{name}.conv_out"), base, 3, 3, 1, rng);
        Self {
            conv_in,
            encoders,
            bottleneck,
            decoders,
            conv_out,
        }
    }

    fn forward(&self, p: &BoundParams, input: &Var) -> Result<Var> {
        let mut x = self.conv_in.forward(p, input)?;
        let mut skips = Vec::with_capacity(self.encoders.len());
        for stage in &self.encoders {
            for blk in &stage.blocks {
                x = blk.forward(p, &x)?;
            }
            skips.push(x.clone());
            x = stage.down.forward(p, &x)?;
        }
        for blk in &self.bottleneck {
            x = blk.forward(p, &x)?;
        }
        for (stage, skip) in self.decoders.iter().zip(skips.iter().rev()) {
            x = stage.up.forward(p, &x.upsample2x()?)?;
            x = stage.fuse.forward(p, &Var::concat_channels(&[&x, skip])?)?;
            for blk in &stage.blocks {
                x = blk.forward(p, &x)?;
            }
        }
        self.conv_out.forward(p, &x)
    }
}

/// The full three-scale network. Parameters live in a separate
/// [`ParamStore`]; this struct only records the wiring.
#[derive(Clone, Debug)]
pub struct Sfsnid {
    cfg: NetworkConfig,
    trunks: Vec<Trunk>,
}

impl Sfsnid {
    pub fn new<R: Rng + ?Sized>(cfg: &NetworkConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let trunks = (0..SCALES)
            .map(|s| {
                let in_channels = if s + 1 < SCALES { 6 } else { 3 };
                Trunk::new(store, &format!("s{s}"), in_channels, cfg, rng)
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            trunks,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Output-layer parameters of scale `s` (weight, bias).
    pub fn conv_out(&self, scale: usize) -> &Conv2d {
        &self.trunks[scale].conv_out
    }

    /// Predictions `[p⁰, p¹, p²]`, each shaped like the matching input level.
    pub fn forward(&self, p: &BoundParams, pyramid: &[Var; SCALES]) -> Result<[Var; SCALES]> {
        let (_, c, h, w) = pyramid[0].value().dims4()?;
        let m = self.cfg.size_multiple();
        if c != 3 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                "network",
                format!("input {:?} must be 3-channel with sides divisible by {m}", pyramid[0].shape()),
            ));
        }
        for s in 1..SCALES {
            let expect = [pyramid[0].shape()[0], 3, h >> s, w >> s];
            if pyramid[s].shape() != expect {
                return Err(Error::shape(
                    "network",
                    format!("pyramid level {s} is {:?}, expected {expect:?}", pyramid[s].shape()),
                ));
            }
        }
        let mut preds: Vec<Option<Var>> = vec![None; SCALES];
        for s in (0..SCALES).rev() {
            let input = match &preds.get(s + 1).cloned().flatten() {
                Some(coarse) => Var::concat_channels(&[&pyramid[s], &coarse.upsample2x()?])?,
                None => pyramid[s].clone(),
            };
            preds[s] = Some(self.trunks[s].forward(p, &input)?);
        }
        let [p0, p1, p2]: [Option<Var>; SCALES] = preds.try_into().expect("three scales");
        Ok([p0.unwrap(), p1.unwrap(), p2.unwrap()])
    }
}

/// Exact number of scalar parameters.
pub fn count_params(store: &ParamStore) -> usize {
    store.count()
}
