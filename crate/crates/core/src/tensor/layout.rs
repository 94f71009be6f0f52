//! Ops that move values around: concatenation, resampling, padding and
//! window partitioning. All are linear, so each backward is the adjoint
//! index map.

use super::{dims4, Tensor, Var};
use crate::error::{Error, Result};

/// Mirror index without repeating the edge sample, extended periodically so
/// that any amount of padding is defined (`n == 1` always maps to 0).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Gather-style linear map `out[i] = in[src[i]]` with its adjoint.
fn index_map(op: &'static str, x: &Var, out_shape: Vec<usize>, src: Vec<usize>) -> Result<Var> {
    let data = src.iter().map(|&i| x.value().data()[i]).collect();
    let value = Tensor::new(out_shape, data)?;
    let in_shape = x.shape().to_vec();
    x.tape().push(
        op,
        value,
        &[x],
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(in_shape.clone());
            let d = dx.data_mut();
            for (&i, &gv) in src.iter().zip(g.data()) {
                d[i] += gv;
            }
            vec![Some(dx)]
        }),
    )
}

impl Var {
    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "nothing to concatenate"))?;
        let (b, _, h, w) = dims4("concat_channels", first.shape())?;
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pb, pc, ph, pw) = dims4("concat_channels", p.shape())?;
            if (pb, ph, pw) != (b, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut data = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (p, &c) in parts.iter().zip(&channels) {
                data.extend_from_slice(&p.value().data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![b, total, h, w], data)?;
        first.tape().push(
            "concat_channels",
            value,
            parts,
            Box::new(move |g, need| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(channels.len());
                for (&c, &needed) in channels.iter().zip(need) {
                    grads.push(needed.then(|| {
                        let mut d = Vec::with_capacity(b * c * plane);
                        for bi in 0..b {
                            let start = (bi * total + offset) * plane;
                            d.extend_from_slice(&g.data()[start..start + c * plane]);
                        }
                        Tensor::new(vec![b, c, h, w], d).unwrap()
                    }));
                    offset += c;
                }
                grads
            }),
        )
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2x(&self) -> Result<Var> {
        let (b, c, h, w) = dims4("upsample2x", self.shape())?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut src = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            for y in 0..oh {
                for x in 0..ow {
                    src.push((plane * h + y / 2) * w + x / 2);
                }
            }
        }
        index_map("upsample2x", self, vec![b, c, oh, ow], src)
    }

    /// 2×2 average pooling; H and W must be even.
    pub fn downsample2x(&self) -> Result<Var> {
        let (b, c, h, w) = dims4("downsample2x", self.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid("downsample2x", format!("odd size {h}x{w}")));
        }
        let value = avg_pool2x(self.value())?;
        let (oh, ow) = (h / 2, w / 2);
        self.tape().push(
            "downsample2x",
            value,
            &[self],
            Box::new(move |g, _| {
                let mut dx = vec![0.0; b * c * h * w];
                for plane in 0..b * c {
                    for y in 0..h {
                        for x in 0..w {
                            dx[(plane * h + y) * w + x] = 0.25 * g.data()[(plane * oh + y / 2) * ow + x / 2];
                        }
                    }
                }
                vec![Some(Tensor::new(vec![b, c, h, w], dx).unwrap())]
            }),
        )
    }

    /// Reflect-pads the bottom and right edges.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Result<Var> {
        let (b, c, h, w) = dims4("pad_reflect", self.shape())?;
        let (oh, ow) = (h + bottom, w + right);
        let mut src = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            for y in 0..oh {
                let sy = reflect_index(y as isize, h);
                for x in 0..ow {
                    src.push((plane * h + sy) * w + reflect_index(x as isize, w));
                }
            }
        }
        index_map("pad_reflect", self, vec![b, c, oh, ow], src)
    }

    /// Keeps the top-left `height × width` region.
    pub fn crop(&self, height: usize, width: usize) -> Result<Var> {
        let (b, c, h, w) = dims4("crop", self.shape())?;
        if height > h || width > w {
            return Err(Error::invalid("crop", format!("{height}x{width} exceeds {h}x{w}")));
        }
        let mut src = Vec::with_capacity(b * c * height * width);
        for plane in 0..b * c {
            for y in 0..height {
                for x in 0..width {
                    src.push((plane * h + y) * w + x);
                }
            }
        }
        index_map("crop", self, vec![b, c, height, width], src)
    }

    /// Splits `[B,C,H,W]` into non-overlapping `win × win` windows of tokens:
    /// `[B·(H/win)·(W/win), win², C]`, windows and tokens in row-major order.
    pub fn window_partition(&self, win: usize) -> Result<Var> {
        let (b, c, h, w) = dims4("window_partition", self.shape())?;
        if win == 0 || h % win != 0 || w % win != 0 {
            return Err(Error::invalid(
                "window_partition",
                format!("window {win} does not tile {h}x{w}"),
            ));
        }
        let src = window_source(b, c, h, w, win);
        let n = b * (h / win) * (w / win);
        index_map("window_partition", self, vec![n, win * win, c], src)
    }

    /// Inverse of [`Var::window_partition`] back to `[B,C,H,W]`.
    pub fn window_merge(&self, win: usize, batch: usize, height: usize, width: usize) -> Result<Var> {
        let c = match *self.shape() {
            [n, t, c] if t == win * win && n * t == batch * height * width => c,
            _ => {
                return Err(Error::shape(
                    "window_merge",
                    format!("{:?} into [{batch},?,{height},{width}] with window {win}", self.shape()),
                ))
            }
        };
        let forward = window_source(batch, c, height, width, win);
        let mut src = vec![0; forward.len()];
        for (token_pos, &pixel) in forward.iter().enumerate() {
            src[pixel] = token_pos;
        }
        index_map("window_merge", self, vec![batch, c, height, width], src)
    }
}

/// For each partitioned position, the flat index of its source pixel.
fn window_source(b: usize, c: usize, h: usize, w: usize, win: usize) -> Vec<usize> {
    let (nh, nw) = (h / win, w / win);
    let mut src = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for by in 0..nh {
            for bx in 0..nw {
                for ty in 0..win {
                    for tx in 0..win {
                        let (y, x) = (by * win + ty, bx * win + tx);
                        for ch in 0..c {
                            src.push(((bi * c + ch) * h + y) * w + x);
                        }
                    }
                }
            }
        }
    }
    src
}

/// 2×2 average pooling on a plain `[B,C,H,W]` tensor.
pub fn avg_pool2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid("downsample2x", format!("odd size {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let mut out = vec![0.0; b * c * oh * ow];
    for plane in 0..b * c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| d[(plane * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(plane * oh + y) * ow + xx] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect_index(5, 1), 0);
    }

    #[test]
    fn concat_adds_channels() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3, 4, 4]));
        let b = tape.constant(Tensor::ones(vec![2, 5, 4, 4]));
        let c = Var::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 8, 4, 4]);
        assert_eq!(c.value().sum(), 2.0 * 5.0 * 16.0);
    }

    #[test]
    fn window_partition_round_trip() {
        let tape = Tape::new();
        let mut rng = rand::rng();
        let x = tape.constant(Tensor::uniform(vec![2, 3, 8, 16], 0.0, 1.0, &mut rng));
        let parts = x.window_partition(4).unwrap();
        assert_eq!(parts.shape(), &[2 * 2 * 4, 16, 3]);
        let back = parts.window_merge(4, 2, 8, 16).unwrap();
        assert_eq!(back.value(), x.value());
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let tape = Tape::new();
        let mut rng = rand::rng();
        let x = tape.constant(Tensor::uniform(vec![1, 2, 4, 4], 0.0, 1.0, &mut rng));
        let y = x.pad_reflect(4, 5).unwrap();
        assert_eq!(y.shape(), &[1, 2, 8, 9]);
        assert_eq!(y.crop(4, 4).unwrap().value(), x.value());
    }

    #[test]
    fn down_of_up_is_identity() {
        let tape = Tape::new();
        let mut rng = rand::rng();
        let x = tape.constant(Tensor::uniform(vec![1, 2, 3, 5], 0.0, 1.0, &mut rng));
        let y = x.upsample2x().unwrap().downsample2x().unwrap();
        assert!(y.value().max_abs_diff(x.value()) < 1e-15);
    }
}
