//! Elementwise maps, reductions and matrix products.

use std::f64::consts::PI;

use super::{same_shape, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape_vars(op: &'static str, a: &Var, b: &Var) -> Result<()> {
    same_shape(op, a.value(), b.value())
}

impl Var {
    /// Elementwise op whose derivative depends on the input and output.
    fn pointwise(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let x = self.value_rc();
        let y = x.map(&f);
        let out = std::rc::Rc::new(y.clone());
        self.tape().push(
            op,
            y,
            &[self],
            Box::new(move |g, _| {
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .zip(out.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(Tensor::new(g.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        same_shape_vars("add", self, other)?;
        let value = self.value().zip_map(other.value(), |a, b| a + b)?;
        self.tape().push(
            "add",
            value,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        same_shape_vars("sub", self, other)?;
        let value = self.value().zip_map(other.value(), |a, b| a - b)?;
        self.tape().push(
            "sub",
            value,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        same_shape_vars("mul", self, other)?;
        let a = self.value_rc();
        let b = other.value_rc();
        let value = a.zip_map(&b, |a, b| a * b)?;
        self.tape().push(
            "mul",
            value,
            &[self, other],
            Box::new(move |g, need| {
                vec![
                    need[0].then(|| g.zip_map(&b, |g, b| g * b).unwrap()),
                    need[1].then(|| g.zip_map(&a, |g, a| g * a).unwrap()),
                ]
            }),
        )
    }

    pub fn scale(&self, k: f64) -> Result<Var> {
        let value = self.value().map(|v| v * k);
        self.tape()
            .push("scale", value, &[self], Box::new(move |g, _| vec![Some(g.map(|v| v * k))]))
    }

    pub fn add_scalar(&self, k: f64) -> Result<Var> {
        let value = self.value().map(|v| v + k);
        self.tape()
            .push("add_scalar", value, &[self], Box::new(|g, _| vec![Some(g.clone())]))
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&self) -> Result<Var> {
        self.pointwise("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Elementwise `x^exponent`. A fractional exponent needs a nonnegative base.
    pub fn power(&self, exponent: f64) -> Result<Var> {
        if exponent.fract() != 0.0 && self.value().data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(
                "power",
                format!("negative base with fractional exponent {exponent}"),
            ));
        }
        self.pointwise(
            "power",
            |x| x.powf(exponent),
            move |x, _| {
                let d = exponent * x.powf(exponent - 1.0);
                if d.is_finite() {
                    d
                } else {
                    0.0
                }
            },
        )
    }

    pub fn cos(&self) -> Result<Var> {
        self.pointwise("cos", f64::cos, |x, _| -x.sin())
    }

    pub fn sin(&self) -> Result<Var> {
        self.pointwise("sin", f64::sin, |x, _| x.cos())
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var> {
        self.pointwise(
            "leaky_relu",
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.pointwise("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    /// `sqrt(a² + b²)`; the gradient at the origin is zero.
    pub fn hypot(a: &Var, b: &Var) -> Result<Var> {
        same_shape_vars("hypot", a, b)?;
        let x = a.value_rc();
        let y = b.value_rc();
        let r = std::rc::Rc::new(x.zip_map(&y, f64::hypot)?);
        let r_out = (*r).clone();
        a.tape().push(
            "hypot",
            r_out,
            &[a, b],
            Box::new(move |g, need| {
                let partial = |num: &Tensor| {
                    let data = g
                        .data()
                        .iter()
                        .zip(num.data())
                        .zip(r.data())
                        .map(|((&g, &n), &r)| if r > 0.0 { g * n / r } else { 0.0 })
                        .collect();
                    Tensor::new(g.shape().to_vec(), data).unwrap()
                };
                vec![need[0].then(|| partial(&x)), need[1].then(|| partial(&y))]
            }),
        )
    }

    /// Quadrant-correct angle of `(x, y)` in `(-π, π]`, with `(0, 0) -> 0`.
    /// The gradient at the origin is zero.
    pub fn atan2(y: &Var, x: &Var) -> Result<Var> {
        same_shape_vars("atan2", y, x)?;
        let yv = y.value_rc();
        let xv = x.value_rc();
        let value = yv.zip_map(&xv, phase_angle)?;
        y.tape().push(
            "atan2",
            value,
            &[y, x],
            Box::new(move |g, need| {
                let n = g.len();
                let mut gy = vec![0.0; n];
                let mut gx = vec![0.0; n];
                for i in 0..n {
                    let (a, b) = (yv.data()[i], xv.data()[i]);
                    let r2 = a * a + b * b;
                    if r2 > 0.0 {
                        gy[i] = g.data()[i] * b / r2;
                        gx[i] = -g.data()[i] * a / r2;
                    }
                }
                let shape = g.shape().to_vec();
                vec![
                    need[0].then(|| Tensor::new(shape.clone(), gy).unwrap()),
                    need[1].then(|| Tensor::new(shape, gx).unwrap()),
                ]
            }),
        )
    }

    /// Softmax along the last axis.
    pub fn softmax(&self) -> Result<Var> {
        let x = self.value();
        let width = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut y = x.clone();
        for row in y.data_mut().chunks_mut(width) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let out = std::rc::Rc::new(y.clone());
        self.tape().push(
            "softmax",
            y,
            &[self],
            Box::new(move |g, _| {
                let mut dx = g.clone();
                for (dx_row, y_row) in dx.data_mut().chunks_mut(width).zip(out.data().chunks(width)) {
                    let dot: f64 = dx_row.iter().zip(y_row).map(|(g, y)| g * y).sum();
                    for (d, &y) in dx_row.iter_mut().zip(y_row) {
                        *d = y * (*d - dot);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn sum(&self) -> Result<Var> {
        let shape = self.shape().to_vec();
        let value = Tensor::scalar(self.value().sum());
        self.tape().push(
            "sum",
            value,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item()))]),
        )
    }

    pub fn mean(&self) -> Result<Var> {
        let shape = self.shape().to_vec();
        let n = self.value().len() as f64;
        let value = Tensor::scalar(self.value().mean());
        self.tape().push(
            "mean",
            value,
            &[self],
            Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.item() / n))]),
        )
    }

    /// Matrix product of `[M,K]·[K,P]`, or batched `[N,M,K]·[N,K,P]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let dims = matmul_dims(self.shape(), other.shape())?;
        let a = self.value_rc();
        let b = other.value_rc();
        let value = Tensor::new(dims.out_shape(self.shape()), batched_matmul(&a, &b, dims, false, false))?;
        self.tape().push(
            "matmul",
            value,
            &[self, other],
            Box::new(move |g, need| {
                let MatDims { n, m, k, p } = dims;
                vec![
                    // dA = dC · Bᵀ
                    need[0].then(|| {
                        let d = MatDims { n, m, k: p, p: k };
                        Tensor::new(a.shape().to_vec(), batched_matmul(g, &b, d, false, true)).unwrap()
                    }),
                    // dB = Aᵀ · dC
                    need[1].then(|| {
                        let d = MatDims { n, m: k, k: m, p };
                        Tensor::new(b.shape().to_vec(), batched_matmul(&a, g, d, true, false)).unwrap()
                    }),
                ]
            }),
        )
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&self) -> Result<Var> {
        let shape = self.shape().to_vec();
        let (n, r, c) = match shape[..] {
            [r, c] => (1, r, c),
            [n, r, c] => (n, r, c),
            _ => return Err(Error::shape("transpose", format!("rank {}", shape.len()))),
        };
        let mut out_shape = shape.clone();
        let len = out_shape.len();
        out_shape.swap(len - 1, len - 2);
        let value = Tensor::new(out_shape, transpose_data(self.value().data(), n, r, c))?;
        self.tape().push(
            "transpose",
            value,
            &[self],
            Box::new(move |g, _| {
                vec![Some(Tensor::new(shape.clone(), transpose_data(g.data(), n, c, r)).unwrap())]
            }),
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `atan2` folded into `(-π, π]`, zero at the origin.
pub(crate) fn phase_angle(y: f64, x: f64) -> f64 {
    if y == 0.0 && x == 0.0 {
        return 0.0;
    }
    let p = y.atan2(x);
    if p <= -PI {
        PI
    } else {
        p
    }
}

#[derive(Clone, Copy, Debug)]
struct MatDims {
    n: usize,
    m: usize,
    k: usize,
    p: usize,
}

impl MatDims {
    fn out_shape(&self, a_shape: &[usize]) -> Vec<usize> {
        if a_shape.len() == 2 {
            vec![self.m, self.p]
        } else {
            vec![self.n, self.m, self.p]
        }
    }
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatDims> {
    let dims = match (a, b) {
        ([m, k], [k2, p]) if k == k2 => MatDims { n: 1, m: *m, k: *k, p: *p },
        ([n, m, k], [n2, k2, p]) if n == n2 && k == k2 => MatDims { n: *n, m: *m, k: *k, p: *p },
        _ => return Err(Error::shape("matmul", format!("{a:?} x {b:?}"))),
    };
    Ok(dims)
}

/// `out[i] = op(A[i]) · op(B[i])` where `op` optionally transposes.
/// `dims` describes the product after transposition.
fn batched_matmul(a: &Tensor, b: &Tensor, dims: MatDims, ta: bool, tb: bool) -> Vec<f64> {
    let MatDims { n, m, k, p } = dims;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m * p];
    for batch in 0..n {
        let a0 = batch * m * k;
        let b0 = batch * k * p;
        let o0 = batch * m * p;
        for i in 0..m {
            let row = &mut out[o0 + i * p..o0 + (i + 1) * p];
            for l in 0..k {
                let av = if ta { ad[a0 + l * m + i] } else { ad[a0 + i * k + l] };
                if av == 0.0 {
                    continue;
                }
                if tb {
                    for (j, o) in row.iter_mut().enumerate() {
                        *o += av * bd[b0 + j * k + l];
                    }
                } else {
                    let brow = &bd[b0 + l * p..b0 + (l + 1) * p];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    out
}

fn transpose_data(data: &[f64], n: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..n {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = data[base + i * c + j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![2, 5], 3.7));
        let y = x.softmax().unwrap();
        assert!(y.value().data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn sigmoid_and_leaky_relu_values() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, -1.0]));
        assert_eq!(x.sigmoid().unwrap().value().data()[0], 0.5);
        assert_eq!(x.leaky_relu(0.01).unwrap().value().data()[1], -0.01);
    }

    #[test]
    fn matmul_by_identity() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let id = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        assert_eq!(a.matmul(&id).unwrap().value(), a.value());
    }

    #[test]
    fn matmul_shape_mismatch_names_op() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = a.matmul(&b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn power_matches_powf_and_rejects_negative_base() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1], &[0.25]));
        let y = x.power(1.3).unwrap();
        assert_eq!(y.value().item(), 0.25f64.powf(1.3));
        let neg = tape.constant(t(&[1], &[-0.5]));
        assert!(neg.power(1.3).is_err());
        assert_eq!(neg.power(2.0).unwrap().value().item(), 0.25);
    }

    #[test]
    fn phase_angle_conventions() {
        assert_eq!(phase_angle(0.0, 0.0), 0.0);
        assert_eq!(phase_angle(0.0, 1.0), 0.0);
        assert_eq!(phase_angle(-0.0, -1.0), PI);
        assert_eq!(phase_angle(4.0, 3.0), 4f64.atan2(3.0));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1], &[1e300]));
        let err = x.mul(&x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "mul" }));
    }

    #[test]
    fn transpose_round_trip() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2, 3], &(0..12).map(f64::from).collect::<Vec<_>>()));
        let b = a.transpose().unwrap();
        assert_eq!(b.shape(), &[2, 3, 2]);
        assert_eq!(b.transpose().unwrap().value(), a.value());
    }
}
