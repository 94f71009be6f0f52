//! Per-channel 2-D discrete Fourier analysis and synthesis.
//!
//! Convention: the forward transform is the unnormalized double sum
//!
//! ```text
//! F(u, v) = Σ_h Σ_w z(h, w) · exp(-j2π(hu/H + wv/W))
//! ```
//!
//! and the inverse carries the `1/(H·W)` factor. Spectra of real inputs
//! are made exactly Hermitian, so self-conjugate bins (DC and the Nyquist
//! rows/columns) have an imaginary part of exactly zero and a phase of
//! exactly `0` or `π`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::rc::Rc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Real and imaginary planes of a spectrum, `[B,C,H,W]` each.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    pub real: Var,
    pub imag: Var,
}

/// Polar form of a spectrum: amplitude `≥ 0` and phase in `(-π, π]`.
#[derive(Clone, Debug)]
pub struct AmpPhase {
    pub amplitude: Var,
    pub phase: Var,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place 1-D transforms over consecutive rows of length `len`.
fn fft_rows(buf: &mut [Complex<f64>], len: usize, inverse: bool) {
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    });
    fft.process(buf);
}

fn transpose_planes(buf: &[Complex<f64>], planes: usize, h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); buf.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            for x in 0..w {
                out[base + x * h + y] = buf[base + y * w + x];
            }
        }
    }
    out
}

/// Unnormalized 2-D transform of every `h × w` plane in `buf`.
fn fft2_planes(buf: Vec<Complex<f64>>, planes: usize, h: usize, w: usize, inverse: bool) -> Vec<Complex<f64>> {
    let mut buf = buf;
    fft_rows(&mut buf, w, inverse);
    let mut t = transpose_planes(&buf, planes, h, w);
    fft_rows(&mut t, h, inverse);
    transpose_planes(&t, planes, w, h)
}

fn split(buf: &[Complex<f64>], shape: &[usize], scale: f64) -> (Tensor, Tensor) {
    let re = buf.iter().map(|c| c.re * scale).collect();
    let im = buf.iter().map(|c| c.im * scale).collect();
    (
        Tensor::new(shape.to_vec(), re).unwrap(),
        Tensor::new(shape.to_vec(), im).unwrap(),
    )
}

fn planes_of(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [lead @ .., h, w] if *h > 0 && *w > 0 => Ok((lead.iter().product(), *h, *w)),
        _ => Err(Error::shape(op, format!("need trailing [H,W] dims, got {shape:?}"))),
    }
}

/// Fast forward transform of a real tensor `[..., H, W]`, any size.
pub fn fft2(z: &Tensor) -> Result<(Tensor, Tensor)> {
    let (planes, h, w) = planes_of("fft2", z.shape())?;
    let buf = z.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let out = fft2_planes(buf, planes, h, w, false);
    let (mut re, mut im) = split(&out, z.shape(), 1.0);
    hermitian_symmetrize(&mut re, &mut im, planes, h, w);
    Ok((re, im))
}

/// Fast inverse transform (with the `1/(H·W)` factor) of a complex spectrum.
pub fn ifft2(real: &Tensor, imag: &Tensor) -> Result<(Tensor, Tensor)> {
    if real.shape() != imag.shape() {
        return Err(Error::shape("ifft2", format!("{:?} vs {:?}", real.shape(), imag.shape())));
    }
    let (planes, h, w) = planes_of("ifft2", real.shape())?;
    let buf = real
        .data()
        .iter()
        .zip(imag.data())
        .map(|(&r, &i)| Complex::new(r, i))
        .collect();
    let out = fft2_planes(buf, planes, h, w, true);
    Ok(split(&out, real.shape(), 1.0 / (h * w) as f64))
}

/// The forward transform evaluated term by term from its definition.
/// `O((HW)²)` per plane; the reference the fast path is tested against.
pub fn dft2_direct(z: &Tensor) -> Result<(Tensor, Tensor)> {
    let (planes, h, w) = planes_of("dft2_direct", z.shape())?;
    let mut re = vec![0.0; z.len()];
    let mut im = vec![0.0; z.len()];
    let d = z.data();
    for p in 0..planes {
        let base = p * h * w;
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        // reduce the phase index exactly before scaling
                        let k = ((y * u) % h) as f64 / h as f64 + ((x * v) % w) as f64 / w as f64;
                        let theta = -2.0 * PI * k;
                        sr += d[base + y * w + x] * theta.cos();
                        si += d[base + y * w + x] * theta.sin();
                    }
                }
                re[base + u * w + v] = sr;
                im[base + u * w + v] = si;
            }
        }
    }
    Ok((
        Tensor::new(z.shape().to_vec(), re)?,
        Tensor::new(z.shape().to_vec(), im)?,
    ))
}

/// Averages each bin with the conjugate of its mirror `(-u, -v)`.
fn hermitian_symmetrize(re: &mut Tensor, im: &mut Tensor, planes: usize, h: usize, w: usize) {
    let (rd, id) = (re.data_mut(), im.data_mut());
    for p in 0..planes {
        let base = p * h * w;
        for u in 0..h {
            for v in 0..w {
                let a = base + u * w + v;
                let b = base + ((h - u) % h) * w + (w - v) % w;
                if b < a {
                    continue;
                }
                let r = 0.5 * (rd[a] + rd[b]);
                let i = 0.5 * (id[a] - id[b]);
                rd[a] = r;
                rd[b] = r;
                id[a] = i;
                id[b] = -i;
            }
        }
    }
}

/// Differentiable forward transform of a real `[B,C,H,W]` feature map.
pub fn dft2(z: &Var) -> Result<ComplexSpectrum> {
    let (planes, h, w) = planes_of("dft2", z.shape())?;
    let (re, im) = fft2(z.value())?;
    let shape = Rc::new(z.shape().to_vec());

    let sh = Rc::clone(&shape);
    let real = z.tape().push(
        "dft2_real",
        re,
        &[z],
        Box::new(move |g, _| {
            // adjoint of z -> Re F(z): Re Σ g e^{+jθ}
            let buf = g.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
            let out = fft2_planes(buf, planes, h, w, true);
            vec![Some(Tensor::new(sh.to_vec(), out.iter().map(|c| c.re).collect()).unwrap())]
        }),
    )?;
    let sh = Rc::clone(&shape);
    let imag = z.tape().push(
        "dft2_imag",
        im,
        &[z],
        Box::new(move |g, _| {
            // adjoint of z -> Im F(z): -Im Σ g e^{+jθ}
            let buf = g.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
            let out = fft2_planes(buf, planes, h, w, true);
            vec![Some(Tensor::new(sh.to_vec(), out.iter().map(|c| -c.im).collect()).unwrap())]
        }),
    )?;
    Ok(ComplexSpectrum { real, imag })
}

/// Differentiable inverse transform; returns the real part of the
/// synthesized map.
pub fn idft2(s: &ComplexSpectrum) -> Result<Var> {
    if s.real.shape() != s.imag.shape() {
        return Err(Error::shape(
            "idft2",
            format!("{:?} vs {:?}", s.real.shape(), s.imag.shape()),
        ));
    }
    let (planes, h, w) = planes_of("idft2", s.real.shape())?;
    let (out, _) = ifft2(s.real.value(), s.imag.value())?;
    let shape = s.real.shape().to_vec();
    let norm = 1.0 / (h * w) as f64;
    s.real.tape().push(
        "idft2",
        out,
        &[&s.real, &s.imag],
        Box::new(move |g, need| {
            let buf = g.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
            let f = fft2_planes(buf, planes, h, w, false);
            vec![
                need[0].then(|| Tensor::new(shape.clone(), f.iter().map(|c| c.re * norm).collect()).unwrap()),
                need[1].then(|| Tensor::new(shape.clone(), f.iter().map(|c| c.im * norm).collect()).unwrap()),
            ]
        }),
    )
}

/// Amplitude `sqrt(re² + im²)` and quadrant-correct phase.
pub fn to_amp_phase(s: &ComplexSpectrum) -> Result<AmpPhase> {
    Ok(AmpPhase {
        amplitude: Var::hypot(&s.real, &s.imag)?,
        phase: Var::atan2(&s.imag, &s.real)?,
    })
}

/// Rebuilds `re = A·cos P`, `im = A·sin P`. Rejects negative amplitudes.
pub fn from_amp_phase(ap: &AmpPhase) -> Result<ComplexSpectrum> {
    if ap.amplitude.value().data().iter().any(|&a| a < 0.0) {
        return Err(Error::invalid("from_amp_phase", "negative amplitude"));
    }
    polar(&ap.amplitude, &ap.phase)
}

/// Polar recomposition without the amplitude sign check. Filtered
/// amplitude planes may dip below zero, where `A·cos P` is still defined.
pub fn polar(amplitude: &Var, phase: &Var) -> Result<ComplexSpectrum> {
    Ok(ComplexSpectrum {
        real: amplitude.mul(&phase.cos()?)?,
        imag: amplitude.mul(&phase.sin()?)?,
    })
}

/// Log-scaled amplitude and phase planes mapped to `[0, 1]` for display.
/// Amplitude uses `ln(1 + A)` divided by the plane maximum; phase uses
/// `(P + π) / 2π`. The spectrum is shifted so that DC sits at the centre.
pub fn spectrum_images(z: &Tensor) -> Result<(Tensor, Tensor)> {
    let (planes, h, w) = planes_of("spectrum_images", z.shape())?;
    let (re, im) = fft2(z)?;
    let mut amp = Tensor::zeros(z.shape().to_vec());
    let mut phase = Tensor::zeros(z.shape().to_vec());
    for p in 0..planes {
        let base = p * h * w;
        let mut max = 0.0f64;
        for u in 0..h {
            for v in 0..w {
                let src = base + u * w + v;
                let dst = base + ((u + h / 2) % h) * w + (v + w / 2) % w;
                let a = re.data()[src].hypot(im.data()[src]).ln_1p();
                max = max.max(a);
                amp.data_mut()[dst] = a;
                phase.data_mut()[dst] =
                    (crate::tensor::phase_angle(im.data()[src], re.data()[src]) + PI) / (2.0 * PI);
            }
        }
        if max > 0.0 {
            amp.data_mut()[base..base + h * w].iter_mut().for_each(|v| *v /= max);
        }
    }
    Ok((amp, phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
    }

    #[test]
    fn constant_image_has_only_dc() {
        let z = Tensor::full(vec![1, 1, 4, 6], 0.7);
        let (re, im) = fft2(&z).unwrap();
        assert!((re.data()[0] - 0.7 * 24.0).abs() < 1e-12);
        assert!(re.data()[1..].iter().all(|v| v.abs() < 1e-12));
        assert!(im.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_by_two_by_hand() {
        // F(0,0)=10, F(0,1)=(1-2)+(3-4)=-2, F(1,0)=(1+2)-(3+4)=-4, F(1,1)=1-2-3+4=0
        let z = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let (re, im) = fft2(&z).unwrap();
        assert_eq!(re.data(), &[10.0, -2.0, -4.0, 0.0]);
        assert!(im.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hermitian_symmetry_of_real_input() {
        let z = random(&[1, 2, 6, 5], 1);
        let (re, im) = fft2(&z).unwrap();
        let (h, w) = (6, 5);
        for p in 0..2 {
            for u in 0..h {
                for v in 0..w {
                    let a = p * 30 + u * w + v;
                    let b = p * 30 + ((h - u) % h) * w + (w - v) % w;
                    assert_eq!(re.data()[a], re.data()[b]);
                    assert_eq!(im.data()[a], -im.data()[b]);
                }
            }
        }
    }

    #[test]
    fn fast_matches_direct_on_mixed_radix() {
        let z = random(&[1, 1, 8, 12], 2);
        let (fr, fi) = fft2(&z).unwrap();
        let (dr, di) = dft2_direct(&z).unwrap();
        assert!(fr.max_abs_diff(&dr) < 1e-8);
        assert!(fi.max_abs_diff(&di) < 1e-8);
    }

    #[test]
    fn one_by_one_is_identity() {
        let z = Tensor::new(vec![1, 1], vec![-3.25]).unwrap();
        let (re, im) = fft2(&z).unwrap();
        assert_eq!(re.data(), &[-3.25]);
        assert_eq!(im.data(), &[0.0]);
    }

    #[test]
    fn inverse_special_spectra() {
        let zero = Tensor::zeros(vec![1, 1, 4, 4]);
        let (r, _) = ifft2(&zero, &zero).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));

        let mut dc = Tensor::zeros(vec![1, 1, 4, 4]);
        dc.data_mut()[0] = 16.0;
        let (r, i) = ifft2(&dc, &zero).unwrap();
        assert!(r.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(i.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn scalar_polar_conventions() {
        let tape = Tape::new();
        let s = ComplexSpectrum {
            real: tape.constant(Tensor::new(vec![3], vec![3.0, 1.0, 0.0]).unwrap()),
            imag: tape.constant(Tensor::new(vec![3], vec![4.0, 0.0, 0.0]).unwrap()),
        };
        let ap = to_amp_phase(&s).unwrap();
        assert_eq!(ap.amplitude.value().data(), &[5.0, 1.0, 0.0]);
        assert_eq!(ap.phase.value().data(), &[4f64.atan2(3.0), 0.0, 0.0]);

        let ap = AmpPhase {
            amplitude: tape.constant(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()),
            phase: tape.constant(Tensor::new(vec![2], vec![1.234, PI / 2.0]).unwrap()),
        };
        let s = from_amp_phase(&ap).unwrap();
        assert_eq!(s.real.value().data()[0], 0.0);
        assert_eq!(s.imag.value().data()[0], 0.0);
        assert!(s.real.value().data()[1].abs() < 1e-16);
        assert_eq!(s.imag.value().data()[1], 1.0);
    }

    #[test]
    fn negative_amplitude_rejected() {
        let tape = Tape::new();
        let ap = AmpPhase {
            amplitude: tape.constant(Tensor::new(vec![1], vec![-0.5]).unwrap()),
            phase: tape.constant(Tensor::zeros(vec![1])),
        };
        assert!(from_amp_phase(&ap).is_err());
        assert!(polar(&ap.amplitude, &ap.phase).is_ok());
    }

    #[test]
    fn round_trips() {
        let tape = Tape::new();
        let z = tape.constant(random(&[2, 3, 8, 8], 3));
        let s = dft2(&z).unwrap();
        assert!(idft2(&s).unwrap().value().max_abs_diff(z.value()) < 1e-6);
        let ap = to_amp_phase(&s).unwrap();
        let back = from_amp_phase(&ap).unwrap();
        assert!(back.real.value().max_abs_diff(s.real.value()) < 1e-6);
        assert!(back.imag.value().max_abs_diff(s.imag.value()) < 1e-6);
        assert!(idft2(&back).unwrap().value().max_abs_diff(z.value()) < 1e-6);
    }

    #[test]
    fn spectrum_images_in_unit_range() {
        let z = random(&[1, 3, 8, 8], 4);
        let (a, p) = spectrum_images(&z).unwrap();
        assert!(a.data().iter().chain(p.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }
}
