use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfsnid::network::build_pyramid;
use sfsnid::objectives::{
    brightness_target, local_brightness_map, loss_brightness, loss_frequency, loss_spatial, total_loss, LossWeights,
};
use sfsnid::{Tape, Tensor, Var};

fn pyr(tape: &Tape, img: &Tensor) -> Vec<Var> {
    build_pyramid(img).unwrap().levels.iter().map(|t| tape.constant(t.clone())).collect()
}

fn image(seed: u64, h: usize, w: usize) -> Tensor {
    Tensor::uniform(vec![1, 3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn naive_spectrum_l1(d: &Tensor) -> f64 {
    let (c, h, w) = (d.shape()[1], d.shape()[2], d.shape()[3]);
    let mut total = 0.0;
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let t = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        let z = d.data()[(ch * h + y) * w + x];
                        re += z * t.cos();
                        im += z * t.sin();
                    }
                }
                total += re.abs() + im.abs();
            }
        }
    }
    total / d.len() as f64
}

fn naive_brightness(p: &Tensor, x: &Tensor, g: usize, kappa: f64, xi: f64) -> f64 {
    let (h, w) = (p.shape()[2], p.shape()[3]);
    let window_mean = |t: &Tensor, wy: usize, wx: usize| {
        let mut s = 0.0;
        for ch in 0..3 {
            for y in wy * g..(wy + 1) * g {
                for xx in wx * g..(wx + 1) * g {
                    s += t.data()[(ch * h + y) * w + xx];
                }
            }
        }
        s / (3 * g * g) as f64
    };
    let mut total = 0.0;
    for wy in 0..h / g {
        for wx in 0..w / g {
            let d = window_mean(p, wy, wx) - xi * window_mean(x, wy, wx).powf(kappa);
            total += d * d;
        }
    }
    total / ((h / g) * (w / g)) as f64
}

#[test]
fn total_loss_matches_component_oracles() {
    let (p, y, x) = (image(1, 16, 16), image(2, 16, 16), image(3, 16, 16));
    let w = LossWeights::default();
    let tape = Tape::new();
    let (pp, yp, xp) = (pyr(&tape, &p), pyr(&tape, &y), pyr(&tape, &x));
    let terms = total_loss(&pp, &yp, &xp, &w).unwrap();

    let (mut lg, mut lf, mut lb) = (0.0, 0.0, 0.0);
    for s in 0..3 {
        let (ps, ys, xs) = (pp[s].value(), yp[s].value(), xp[s].value());
        let diff = ps.zip_map(ys, |a, b| a - b).unwrap();
        lg += diff.data().iter().map(|v| v.abs()).sum::<f64>() / diff.len() as f64;
        lf += naive_spectrum_l1(&diff);
        lb += naive_brightness(ps, xs, w.windows[s], w.kappa, w.xi);
    }
    let (g, f, b, total) = terms.values();
    assert!((g - lg).abs() < 1e-12);
    assert!((f - lf).abs() < 1e-10);
    assert!((b - lb).abs() < 1e-12);
    assert!((total - (lg + w.alpha * lf + w.beta * lb)).abs() < 1e-9);
}

#[test]
fn fixed_points_are_zero() {
    let x = image(4, 32, 32);
    let tape = Tape::new();
    let xp = pyr(&tape, &x);
    let w = LossWeights::default();
    assert_eq!(loss_spatial(&xp, &xp, &w).unwrap().value().item(), 0.0);
    assert_eq!(loss_frequency(&xp, &xp, &w).unwrap().value().item(), 0.0);
    // a prediction whose window means equal ξ·φ_x^κ
    let preds: Vec<Var> = xp
        .iter()
        .zip(w.windows)
        .map(|(xs, g)| {
            let (_, _, h, wd) = xs.value().dims4().unwrap();
            let mut out = Tensor::zeros(vec![1, 3, h, wd]);
            for ch in 0..3 {
                let plane = Tensor::new(vec![3, h, wd], xs.value().data().to_vec()).unwrap();
                let target = brightness_target(&local_brightness_map(&plane, g).unwrap().values, w.kappa, w.xi).unwrap();
                for y in 0..h {
                    for xx in 0..wd {
                        out.data_mut()[(ch * h + y) * wd + xx] = target.data()[(y / g) * (wd / g) + xx / g];
                    }
                }
            }
            tape.constant(out)
        })
        .collect();
    assert!(loss_brightness(&preds, &xp, &w).unwrap().value().item() < 1e-28);
}

#[test]
fn kappa_monotone_on_grid() {
    for i in 1..=1000 {
        let phi = i as f64 / 1001.0;
        let t = Tensor::full(vec![1], phi);
        let lo = brightness_target(&t, 1.3, 1.0).unwrap().item();
        let hi = brightness_target(&t, 1.31, 1.0).unwrap().item();
        assert!(hi < lo, "phi {phi}");
    }
}

#[test]
fn brightness_rejects_inputs_outside_unit_range() {
    let tape = Tape::new();
    let x = pyr(&tape, &image(5, 16, 16).map(|v| v + 1.0));
    assert!(loss_brightness(&x, &x, &LossWeights::default()).is_err());
}

fn shuffle_windows(t: &Tensor, g: usize, seed: u64) -> Tensor {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (t.shape()[2], t.shape()[3]);
    let mut out = t.clone();
    for wy in 0..h / g {
        for wx in 0..w / g {
            let mut idx: Vec<(usize, usize, usize)> = (0..3)
                .flat_map(|c| (0..g).flat_map(move |y| (0..g).map(move |x| (c, wy * g + y, wx * g + x))))
                .collect();
            let src = idx.clone();
            idx.shuffle(&mut rng);
            for ((c, y, x), (sc, sy, sx)) in idx.into_iter().zip(src) {
                out.data_mut()[(c * h + y) * w + x] = t.data()[(sc * h + sy) * w + sx];
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn losses_are_non_negative(a in 0u64..1000, b in 0u64..1000) {
        let tape = Tape::new();
        let (p, y) = (pyr(&tape, &image(a, 16, 16)), pyr(&tape, &image(b + 1000, 16, 16)));
        let w = LossWeights::default();
        prop_assert!(loss_spatial(&p, &y, &w).unwrap().value().item() >= 0.0);
        prop_assert!(loss_frequency(&p, &y, &w).unwrap().value().item() >= 0.0);
        prop_assert!(loss_brightness(&p, &y, &w).unwrap().value().item() >= 0.0);
    }

    #[test]
    fn frequency_loss_ignores_quarter_period_shifts(seed in 0u64..1000, qy in 0usize..4, qx in 0usize..4) {
        let (dy, dx) = (4 * qy, 4 * qx);
        let (p, y) = (image(seed, 16, 16), image(seed + 1, 16, 16));
        let roll = |t: &Tensor| {
            let mut out = t.clone();
            for c in 0..3 {
                for yy in 0..16 {
                    for xx in 0..16 {
                        out.data_mut()[(c * 16 + (yy + dy) % 16) * 16 + (xx + dx) % 16] = t.data()[(c * 16 + yy) * 16 + xx];
                    }
                }
            }
            out
        };
        let tape = Tape::new();
        let single = |t: Tensor| vec![tape.constant(t.clone()), tape.constant(t.clone()), tape.constant(t)];
        let w = LossWeights::default();
        let base = loss_frequency(&single(p.clone()), &single(y.clone()), &w).unwrap().value().item();
        let shifted = loss_frequency(&single(roll(&p)), &single(roll(&y)), &w).unwrap().value().item();
        // quarter-period shifts turn every bin's phasor into a power of i,
        // which only swaps or negates re and im
        prop_assert!((base - shifted).abs() < 1e-10);
    }

    #[test]
    fn brightness_loss_ignores_in_window_shuffles(seed in 0u64..1000) {
        let w = LossWeights::default();
        let (p, x) = (image(seed, 64, 64), image(seed + 7, 64, 64));
        let tape = Tape::new();
        let base = loss_brightness(&pyr(&tape, &p), &pyr(&tape, &x), &w).unwrap().value().item();
        // shuffling inside the coarsest windows of the finest level keeps every
        // window mean at every scale only for scale 0, so compare scale-0 maps
        let ps = shuffle_windows(&p, 16, seed);
        let xs = shuffle_windows(&x, 16, seed + 1);
        let map = |t: &Tensor| local_brightness_map(&Tensor::new(vec![3, 64, 64], t.data().to_vec()).unwrap(), 16).unwrap();
        prop_assert!(map(&ps).values.max_abs_diff(&map(&p).values) < 1e-12);
        prop_assert!(map(&xs).values.max_abs_diff(&map(&x).values) < 1e-12);
        let single = |t: &Tensor| vec![tape.constant(t.clone()); 3];
        let w16 = LossWeights { windows: [16, 16, 16], ..w };
        let a = loss_brightness(&single(&p), &single(&x), &w16).unwrap().value().item();
        let b = loss_brightness(&single(&ps), &single(&xs), &w16).unwrap().value().item();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(base >= 0.0);
    }
}
