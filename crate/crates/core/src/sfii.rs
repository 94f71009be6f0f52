//! Spatial and frequency information interaction (SFII) block.
//!
//! Data flow for a feature map `z`:
//!
//! ```text
//! FSDA(z)  = idft2(polar(SF_A(|F z|), SF_P(arg F z)))
//! FDP(z)   = (FSDA_Q(LN z), FSDA_K(LN z), FSDA_V(LN z))
//! BLP(z)   = WindowAttention(FDP(z)) + z                       = z*
//! BNM(z*)  = Conv3([FSDA_A(z*), Conv3(σ(Conv3 z*)) + z*]) + z*  = z̃
//! SFII(z)  = BNM(BLP(z))
//! ```
//!
//! where each spectrum filter `SF` is a channel-reweighted residual:
//! `S* = σ(C1(S))`, `W = δ(C1(σ(C1(gap S*))))`, `SF(S) = C1(W ⊙ S*) + S`,
//! with `σ` = LeakyReLU and `δ` = sigmoid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fourier::{dft2, idft2, polar, to_amp_phase};
use crate::params::{BoundParams, Conv2d, LayerNorm, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Side length of the attention window.
pub const DEFAULT_WINDOW: usize = 8;

/// Channel weighting filter applied to an amplitude or phase plane stack.
#[derive(Clone, Debug)]
pub struct SpectrumFilter {
    pub pre: Conv2d,
    pub squeeze: Conv2d,
    pub excite: Conv2d,
    pub post: Conv2d,
}

impl SpectrumFilter {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        let hidden = squeeze_width(channels);
        Self {
            pre: Conv2d::new(store, &format!("{name}.pre"), channels, channels, 1, 1, rng),
            squeeze: Conv2d::new(store, &format!("{name}.squeeze"), channels, hidden, 1, 1, rng),
            excite: Conv2d::new(store, &format!("{name}.excite"), hidden, channels, 1, 1, rng),
            post: Conv2d::new(store, &format!("{name}.post"), channels, channels, 1, 1, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, spectrum: &Var) -> Result<Var> {
        let s_star = self.pre.forward(p, spectrum)?.leaky_relu(LEAKY_SLOPE)?;
        let weights = self
            .excite
            .forward(p, &self.squeeze.forward(p, &s_star.global_avg_pool()?)?.leaky_relu(LEAKY_SLOPE)?)?
            .sigmoid()?;
        let s_dot = self.post.forward(p, &s_star.scale_channels(&weights)?)?;
        s_dot.add(spectrum)
    }
}

/// Hidden width of the squeeze/excite pair.
pub fn squeeze_width(channels: usize) -> usize {
    (channels / 4).max(2)
}

/// Frequency spectrum dynamic aggregation: independent filters for the
/// amplitude and phase spectra.
#[derive(Clone, Debug)]
pub struct Fsda {
    pub amplitude: SpectrumFilter,
    pub phase: SpectrumFilter,
}

impl Fsda {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            amplitude: SpectrumFilter::new(store, &format!("{name}.amp"), channels, rng),
            phase: SpectrumFilter::new(store, &format!("{name}.phase"), channels, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, z: &Var) -> Result<Var> {
        let ap = to_amp_phase(&dft2(z)?)?;
        let amplitude = self.amplitude.forward(p, &ap.amplitude)?;
        let phase = self.phase.forward(p, &ap.phase)?;
        idft2(&polar(&amplitude, &phase)?)
    }
}

/// Relative-position index into a `(2w-1)²` bias table for every
/// (query, key) token pair of a `w × w` window.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let side = 2 * window - 1;
    let tokens = window * window;
    let mut index = Vec::with_capacity(tokens * tokens);
    for i in 0..tokens {
        let (yi, xi) = (i / window, i % window);
        for j in 0..tokens {
            let (yj, xj) = (j / window, j % window);
            index.push((yi + window - 1 - yj) * side + (xi + window - 1 - xj));
        }
    }
    index
}

/// Output of windowed attention together with its probability matrices
/// (`[windows, tokens, tokens]`).
pub struct AttentionOutput {
    pub output: Var,
    pub probabilities: Var,
}

/// Single-head self-attention inside non-overlapping `window × window`
/// windows: `softmax(Q·Kᵀ/√d + B)·V` with `d` the channel count.
///
/// Maps whose sides are not multiples of the window are reflect-padded
/// first and cropped afterwards.
pub fn window_attention(q: &Var, k: &Var, v: &Var, bias_table: &Var, window: usize) -> Result<AttentionOutput> {
    let shape = q.shape().to_vec();
    if k.shape() != shape.as_slice() || v.shape() != shape.as_slice() {
        return Err(Error::shape(
            "window_attention",
            format!("Q {:?}, K {:?}, V {:?}", shape, k.shape(), v.shape()),
        ));
    }
    let side = 2 * window - 1;
    if bias_table.shape() != [side * side] {
        return Err(Error::shape(
            "window_attention",
            format!("bias table {:?}, expected [{}]", bias_table.shape(), side * side),
        ));
    }
    let (b, c, h, w) = q.value().dims4()?;
    let (ph, pw) = (h.div_ceil(window) * window, w.div_ceil(window) * window);
    let tile = |x: &Var| -> Result<Var> {
        let x = if (ph, pw) != (h, w) {
            x.pad_reflect(ph - h, pw - w)?
        } else {
            x.clone()
        };
        x.window_partition(window)
    };
    let (qt, kt, vt) = (tile(q)?, tile(k)?, tile(v)?);
    let tokens = window * window;
    let bias = bias_table.gather(&relative_position_index(window), &[tokens, tokens])?;
    let scores = qt
        .matmul(&kt.transpose()?)?
        .scale(1.0 / (c as f64).sqrt())?
        .add_bias_matrix(&bias)?;
    let probabilities = scores.softmax()?;
    let merged = probabilities.matmul(&vt)?.window_merge(window, b, ph, pw)?;
    let output = if (ph, pw) != (h, w) {
        merged.crop(h, w)?
    } else {
        merged
    };
    Ok(AttentionOutput { output, probabilities })
}

/// Bidomain local perception: frequency-domain projection followed by
/// window attention, with a residual connection.
#[derive(Clone, Debug)]
pub struct Blp {
    pub norm: LayerNorm,
    pub query: Fsda,
    pub key: Fsda,
    pub value: Fsda,
    pub position_bias: ParamId,
    pub window: usize,
}

impl Blp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        window: usize,
        rng: &mut R,
    ) -> Self {
        let side = 2 * window - 1;
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), channels),
            query: Fsda::new(store, &format!("{name}.fs_q"), channels, rng),
            key: Fsda::new(store, &format!("{name}.fs_k"), channels, rng),
            value: Fsda::new(store, &format!("{name}.fs_v"), channels, rng),
            position_bias: store.add(
                format!("{name}.position_bias"),
                Tensor::uniform(vec![side * side], -0.02, 0.02, rng),
            ),
            window,
        }
    }

    /// Frequency-domain projection of the normalized input into (Q, K, V).
    pub fn fdp(&self, p: &BoundParams, z: &Var) -> Result<(Var, Var, Var)> {
        let zl = self.norm.forward(p, z)?;
        Ok((
            self.query.forward(p, &zl)?,
            self.key.forward(p, &zl)?,
            self.value.forward(p, &zl)?,
        ))
    }

    pub fn forward(&self, p: &BoundParams, z: &Var) -> Result<Var> {
        let (q, k, v) = self.fdp(p, z)?;
        let attended = window_attention(&q, &k, &v, p.var(self.position_bias), self.window)?;
        attended.output.add(z)
    }
}

/// Bidomain nonlinear mapping: parallel frequency and spatial branches
/// fused by a 3×3 convolution with a residual connection.
#[derive(Clone, Debug)]
pub struct Bnm {
    pub frequency: Fsda,
    pub spatial_in: Conv2d,
    pub spatial_out: Conv2d,
    pub fuse: Conv2d,
}

impl Bnm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rng: &mut R) -> Self {
        Self {
            frequency: Fsda::new(store, &format!("{name}.fs_a"), channels, rng),
            spatial_in: Conv2d::new(store, &format!("{name}.spatial_in"), channels, channels, 3, 1, rng),
            spatial_out: Conv2d::new(store, &format!("{name}.spatial_out"), channels, channels, 3, 1, rng),
            fuse: Conv2d::new(store, &format!("{name}.fuse"), 2 * channels, channels, 3, 1, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, z_star: &Var) -> Result<Var> {
        let z_fn = self.frequency.forward(p, z_star)?;
        let z_sn = self
            .spatial_out
            .forward(p, &self.spatial_in.forward(p, z_star)?.leaky_relu(LEAKY_SLOPE)?)?;
        let joined = Var::concat_channels(&[&z_fn, &z_sn.add(z_star)?])?;
        self.fuse.forward(p, &joined)?.add(z_star)
    }
}

/// One SFII block: BLP followed by BNM. Shape preserving.
#[derive(Clone, Debug)]
pub struct SfiiBlock {
    pub blp: Blp,
    pub bnm: Bnm,
}

impl SfiiBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        window: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            blp: Blp::new(store, &format!("{name}.blp"), channels, window, rng),
            bnm: Bnm::new(store, &format!("{name}.bnm"), channels, rng),
        }
    }

    pub fn forward(&self, p: &BoundParams, z: &Var) -> Result<Var> {
        self.bnm.forward(p, &self.blp.forward(p, z)?)
    }
}
