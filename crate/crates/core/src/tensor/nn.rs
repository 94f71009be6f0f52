//! Convolution, pooling and normalization over `[B, C, H, W]` tensors.

use super::{dims4, Tensor, Var};
use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// Visits every contiguous run of output pixels touched by one weight
    /// tap: `f(weight index, first input index, first output index, len)`.
    /// Input indices advance by `stride`, output indices by one.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let ConvGeom { batch, c_in, c_out, h, w, k, stride, pad, oh, ow } = *self;
        for b in 0..batch {
            for co in 0..c_out {
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let wi = ((co * c_in + ci) * k + ky) * k + kx;
                            let ox0 = pad.saturating_sub(kx).div_ceil(stride);
                            let ox1 = (w + pad).saturating_sub(kx).div_ceil(stride).min(ow);
                            if ox0 >= ox1 {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let in_row = ((b * c_in + ci) * h + iy - pad) * w;
                                let out_row = ((b * c_out + co) * oh + oy) * ow;
                                f(wi, in_row + ox0 * stride + kx - pad, out_row + ox0, ox1 - ox0);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Var {
    /// 2-D convolution with zero "same"-style padding of `kernel / 2`.
    ///
    /// `weight` is `[C_out, C_in, k, k]` and `bias` is `[C_out]`; stride 2
    /// halves (rounding up) the spatial size.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, stride: usize) -> Result<Var> {
        let (batch, c_in, h, w) = dims4("conv2d", self.shape())?;
        let (c_out, k) = match *weight.shape() {
            [co, ci, k1, k2] if ci == c_in && k1 == k2 && k1 % 2 == 1 => (co, k1),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight {:?} does not fit input {:?}", weight.shape(), self.shape()),
                ))
            }
        };
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?}, expected [{c_out}]", b.shape()),
                ));
            }
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        let pad = k / 2;
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { batch, c_in, c_out, h, w, k, stride, pad, oh, ow };

        let x = self.value_rc();
        let wt = weight.value_rc();
        let mut out = vec![0.0; batch * c_out * oh * ow];
        if let Some(b) = bias {
            let bd = b.value().data();
            for (i, plane) in out.chunks_mut(oh * ow).enumerate() {
                plane.fill(bd[i % c_out]);
            }
        }
        {
            let (xd, wd) = (x.data(), wt.data());
            geom.for_each_run(|wi, ii, oi, n| {
                let wv = wd[wi];
                let dst = &mut out[oi..oi + n];
                if stride == 1 {
                    dst.iter_mut().zip(&xd[ii..ii + n]).for_each(|(o, x)| *o += wv * x);
                } else {
                    dst.iter_mut().zip(xd[ii..].iter().step_by(stride)).for_each(|(o, x)| *o += wv * x);
                }
            });
        }
        let value = Tensor::new(vec![batch, c_out, oh, ow], out)?;

        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        self.tape().push(
            "conv2d",
            value,
            &inputs,
            Box::new(move |g, need| {
                let gd = g.data();
                let dx = need[0].then(|| {
                    let mut dx = vec![0.0; x.len()];
                    let wd = wt.data();
                    geom.for_each_run(|wi, ii, oi, n| {
                        let wv = wd[wi];
                        let src = &gd[oi..oi + n];
                        if stride == 1 {
                            dx[ii..ii + n].iter_mut().zip(src).for_each(|(d, g)| *d += wv * g);
                        } else {
                            dx[ii..].iter_mut().step_by(stride).zip(src).for_each(|(d, g)| *d += wv * g);
                        }
                    });
                    Tensor::new(x.shape().to_vec(), dx).unwrap()
                });
                let dw = need[1].then(|| {
                    let mut dw = vec![0.0; wt.len()];
                    let xd = x.data();
                    geom.for_each_run(|wi, ii, oi, n| {
                        let src = &gd[oi..oi + n];
                        dw[wi] += if stride == 1 {
                            xd[ii..ii + n].iter().zip(src).map(|(x, g)| x * g).sum::<f64>()
                        } else {
                            xd[ii..].iter().step_by(stride).zip(src).map(|(x, g)| x * g).sum::<f64>()
                        };
                    });
                    Tensor::new(wt.shape().to_vec(), dw).unwrap()
                });
                let mut grads = vec![dx, dw];
                if need.len() == 3 {
                    grads.push(need[2].then(|| {
                        let mut db = vec![0.0; c_out];
                        for (i, plane) in gd.chunks(oh * ow).enumerate() {
                            db[i % c_out] += plane.iter().sum::<f64>();
                        }
                        Tensor::new(vec![c_out], db).unwrap()
                    }));
                }
                grads
            }),
        )
    }

    /// Mean of each channel plane: `[B,C,H,W] -> [B,C,1,1]`.
    pub fn global_avg_pool(&self) -> Result<Var> {
        let (b, c, h, w) = dims4("global_avg_pool", self.shape())?;
        let plane = h * w;
        let data = self
            .value()
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::new(vec![b, c, 1, 1], data)?;
        let shape = self.shape().to_vec();
        self.tape().push(
            "global_avg_pool",
            value,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Vec::with_capacity(b * c * plane);
                for &gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / plane as f64, plane));
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            }),
        )
    }

    /// Normalizes each spatial token across channels to zero mean and unit
    /// variance (biased variance, epsilon 1e-5). No affine part.
    pub fn layer_norm(&self) -> Result<Var> {
        let (b, c, h, w) = dims4("layer_norm", self.shape())?;
        let plane = h * w;
        let xd = self.value().data();
        let mut y = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; b * plane];
        for bi in 0..b {
            let base = bi * c * plane;
            for t in 0..plane {
                let idx = |ch: usize| base + ch * plane + t;
                let mean = (0..c).map(|ch| xd[idx(ch)]).sum::<f64>() / c as f64;
                let var = (0..c).map(|ch| (xd[idx(ch)] - mean).powi(2)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[bi * plane + t] = inv;
                for ch in 0..c {
                    y[idx(ch)] = (xd[idx(ch)] - mean) * inv;
                }
            }
        }
        let out = std::rc::Rc::new(Tensor::new(self.shape().to_vec(), y)?);
        let value = (*out).clone();
        self.tape().push(
            "layer_norm",
            value,
            &[self],
            Box::new(move |g, _| {
                let (gd, yd) = (g.data(), out.data());
                let mut dx = vec![0.0; gd.len()];
                for bi in 0..b {
                    let base = bi * c * plane;
                    for t in 0..plane {
                        let idx = |ch: usize| base + ch * plane + t;
                        let g_mean = (0..c).map(|ch| gd[idx(ch)]).sum::<f64>() / c as f64;
                        let gy_mean = (0..c).map(|ch| gd[idx(ch)] * yd[idx(ch)]).sum::<f64>() / c as f64;
                        let inv = inv_std[bi * plane + t];
                        for ch in 0..c {
                            dx[idx(ch)] = inv * (gd[idx(ch)] - g_mean - yd[idx(ch)] * gy_mean);
                        }
                    }
                }
                vec![Some(Tensor::new(g.shape().to_vec(), dx).unwrap())]
            }),
        )
    }

    /// Per-channel `x * gain[c] + shift[c]` with `gain`, `shift` of shape `[C]`.
    pub fn channel_affine(&self, gain: &Var, shift: &Var) -> Result<Var> {
        let (_, c, h, w) = dims4("channel_affine", self.shape())?;
        if gain.shape() != [c] || shift.shape() != [c] {
            return Err(Error::shape(
                "channel_affine",
                format!("gain {:?} / shift {:?} for {c} channels", gain.shape(), shift.shape()),
            ));
        }
        let plane = h * w;
        let x = self.value_rc();
        let gn = gain.value_rc();
        let mut y = x.as_ref().clone();
        for (i, p) in y.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            let (a, s) = (gn.data()[ch], shift.value().data()[ch]);
            p.iter_mut().for_each(|v| *v = *v * a + s);
        }
        self.tape().push(
            "channel_affine",
            y,
            &[self, gain, shift],
            Box::new(move |g, need| {
                let mut dgain = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                let mut dx = vec![0.0; g.len()];
                for (i, (gp, xp)) in g.data().chunks(plane).zip(x.data().chunks(plane)).enumerate() {
                    let ch = i % c;
                    let a = gn.data()[ch];
                    for ((d, &gv), &xv) in dx[i * plane..(i + 1) * plane].iter_mut().zip(gp).zip(xp) {
                        *d = gv * a;
                        dgain[ch] += gv * xv;
                        dshift[ch] += gv;
                    }
                }
                vec![
                    need[0].then(|| Tensor::new(g.shape().to_vec(), dx).unwrap()),
                    need[1].then(|| Tensor::new(vec![c], dgain).unwrap()),
                    need[2].then(|| Tensor::new(vec![c], dshift).unwrap()),
                ]
            }),
        )
    }

    /// Multiplies each channel plane by a per-sample weight: `x[B,C,H,W] ⊙ w[B,C,1,1]`.
    pub fn scale_channels(&self, weights: &Var) -> Result<Var> {
        let (b, c, h, w) = dims4("scale_channels", self.shape())?;
        if weights.shape() != [b, c, 1, 1] {
            return Err(Error::shape(
                "scale_channels",
                format!("weights {:?} for input {:?}", weights.shape(), self.shape()),
            ));
        }
        let plane = h * w;
        let x = self.value_rc();
        let wt = weights.value_rc();
        let mut y = x.as_ref().clone();
        for (p, &k) in y.data_mut().chunks_mut(plane).zip(wt.data()) {
            p.iter_mut().for_each(|v| *v *= k);
        }
        self.tape().push(
            "scale_channels",
            y,
            &[self, weights],
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut dx = g.clone();
                    for (p, &k) in dx.data_mut().chunks_mut(plane).zip(wt.data()) {
                        p.iter_mut().for_each(|v| *v *= k);
                    }
                    dx
                });
                let dw = need[1].then(|| {
                    let data = g
                        .data()
                        .chunks(plane)
                        .zip(x.data().chunks(plane))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    Tensor::new(wt.shape().to_vec(), data).unwrap()
                });
                vec![dx, dw]
            }),
        )
    }

    /// Adds a `[M,P]` matrix to every item of a `[N,M,P]` batch.
    pub fn add_bias_matrix(&self, bias: &Var) -> Result<Var> {
        let (m, p) = match *self.shape() {
            [_, m, p] if bias.shape() == [m, p] => (m, p),
            _ => {
                return Err(Error::shape(
                    "add_bias_matrix",
                    format!("{:?} + {:?}", self.shape(), bias.shape()),
                ))
            }
        };
        let mut y = self.value().clone();
        for item in y.data_mut().chunks_mut(m * p) {
            item.iter_mut().zip(bias.value().data()).for_each(|(v, b)| *v += b);
        }
        self.tape().push(
            "add_bias_matrix",
            y,
            &[self, bias],
            Box::new(move |g, need| {
                let db = need[1].then(|| {
                    let mut acc = vec![0.0; m * p];
                    for item in g.data().chunks(m * p) {
                        acc.iter_mut().zip(item).for_each(|(a, v)| *a += v);
                    }
                    Tensor::new(vec![m, p], acc).unwrap()
                });
                vec![need[0].then(|| g.clone()), db]
            }),
        )
    }

    /// Looks up entries of a flat table: `out[i] = table[index[i]]`.
    pub fn gather(&self, index: &[usize], out_shape: &[usize]) -> Result<Var> {
        let table_len = self.value().len();
        if index.iter().any(|&i| i >= table_len) {
            return Err(Error::invalid("gather", format!("index out of range for table of {table_len}")));
        }
        let data = index.iter().map(|&i| self.value().data()[i]).collect();
        let value = Tensor::new(out_shape.to_vec(), data)?;
        let index = index.to_vec();
        let table_shape = self.shape().to_vec();
        self.tape().push(
            "gather",
            value,
            &[self],
            Box::new(move |g, _| {
                let mut dt = Tensor::zeros(table_shape.clone());
                for (&i, &gv) in index.iter().zip(g.data()) {
                    dt.data_mut()[i] += gv;
                }
                vec![Some(dt)]
            }),
        )
    }

    /// Channel-and-window mean: `[B,C,H,W] -> [B,H/γ,W/γ]`, each entry the
    /// mean of the `C·γ²` values under its window. `γ` must divide H and W.
    pub fn local_mean(&self, window: usize) -> Result<Var> {
        let (b, c, h, w) = dims4("local_mean", self.shape())?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::invalid(
                "local_mean",
                format!("window {window} does not divide {h}x{w}"),
            ));
        }
        let (gh, gw) = (h / window, w / window);
        let norm = (c * window * window) as f64;
        let xd = self.value().data();
        let mut out = vec![0.0; b * gh * gw];
        for bi in 0..b {
            for ch in 0..c {
                for y in 0..h {
                    let row = ((bi * c + ch) * h + y) * w;
                    let orow = (bi * gh + y / window) * gw;
                    for x in 0..w {
                        out[orow + x / window] += xd[row + x];
                    }
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= norm);
        let value = Tensor::new(vec![b, gh, gw], out)?;
        let shape = self.shape().to_vec();
        self.tape().push(
            "local_mean",
            value,
            &[self],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; b * c * h * w];
                for bi in 0..b {
                    for ch in 0..c {
                        for y in 0..h {
                            let row = ((bi * c + ch) * h + y) * w;
                            let orow = (bi * gh + y / window) * gw;
                            for x in 0..w {
                                dx[row + x] = g.data()[orow + x / window] / norm;
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(shape.clone(), dx).unwrap())]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn identity_pointwise_conv_is_identity() {
        let tape = Tape::new();
        let mut rng = rand::rng();
        let x = tape.constant(Tensor::uniform(vec![2, 3, 4, 5], -1.0, 1.0, &mut rng));
        let mut eye = Tensor::zeros(vec![3, 3, 1, 1]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = tape.constant(eye);
        let y = x.conv2d(&w, None, 1).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn ones_kernel_center_sums_nine() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
        let y = x.conv2d(&w, None, 1).unwrap();
        assert_eq!(y.value().data()[4], 9.0);
        // corners only see four taps under zero padding
        assert_eq!(y.value().data()[0], 4.0);
    }

    #[test]
    fn strided_conv_halves() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(vec![1, 2, 8, 6]));
        let w = tape.constant(Tensor::ones(vec![4, 2, 3, 3]));
        let y = x.conv2d(&w, None, 2).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 3]);
    }

    #[test]
    fn conv_weight_mismatch_is_reported() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(vec![1, 2, 4, 4]));
        let w = tape.constant(Tensor::ones(vec![1, 3, 3, 3]));
        let err = x.conv2d(&w, None, 1).unwrap_err().to_string();
        assert!(err.contains("conv2d") && err.contains("weight"), "{err}");
    }

    #[test]
    fn global_avg_pool_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 2, 2], vec![0., 1., 2., 3., 5., 5., 5., 5.]).unwrap());
        let y = x.global_avg_pool().unwrap();
        assert_eq!(y.value().data(), &[1.5, 5.0]);
    }

    #[test]
    fn layer_norm_hand_values() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 1, 1], vec![1.0, 3.0]).unwrap());
        let y = x.layer_norm().unwrap();
        let expect = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((y.value().data()[0] + expect).abs() < 1e-15);
        assert!((y.value().data()[1] - expect).abs() < 1e-15);

        let c = tape.constant(Tensor::full(vec![1, 4, 2, 2], 7.0));
        assert!(c.layer_norm().unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_moments() {
        let tape = Tape::new();
        let mut rng = rand::rng();
        let x = tape.constant(Tensor::uniform(vec![2, 6, 3, 3], -4.0, 9.0, &mut rng));
        let y = x.layer_norm().unwrap();
        let yd = y.value().data();
        for b in 0..2 {
            for t in 0..9 {
                let vals: Vec<f64> = (0..6).map(|c| yd[(b * 6 + c) * 9 + t]).collect();
                let mean = vals.iter().sum::<f64>() / 6.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn local_mean_of_checker() {
        let tape = Tape::new();
        let plane = [0.0, 1.0, 1.0, 0.0];
        let data: Vec<f64> = plane.iter().cycle().take(12).cloned().collect();
        let x = tape.constant(Tensor::new(vec![1, 3, 2, 2], data).unwrap());
        let y = x.local_mean(2).unwrap();
        assert_eq!(y.value().data(), &[0.5]);
        assert!(x.local_mean(3).is_err());
    }
}
