//! Finite-difference verification of every backward rule.
//!
//! Each case records one op (or a composite) on a tape, seeds its output
//! with a random cotangent `w` and compares the resulting vector-Jacobian
//! product against central differences of `Σ w·f(x)`. The error of a case
//! is normwise: `max|analytic − numeric| / (max(|analytic|, |numeric|) + 1e-6)`
//! over each checked input, worst input reported.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::Config;
use super::train::Model;
use crate::error::Result;
use crate::fourier::{dft2, idft2, ComplexSpectrum};
use crate::network::build_pyramid;
use crate::objectives::total_loss;
use crate::params::{BoundParams, ParamStore};
use crate::sfii::SfiiBlock;
use crate::tensor::{Tape, Tensor, Var, DIFFERENTIABLE_OPS};

pub const OP_THRESHOLD: f64 = 1e-4;
pub const END_TO_END_THRESHOLD: f64 = 1e-3;

const OP_STEP: f64 = 1e-3;
/// Composites contain kinks (LeakyReLU, |·|); a small step keeps the
/// difference quotient on one side of them.
const COMPOSITE_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub name: String,
    /// The primitive this case covers, or `None` for composites.
    pub op: Option<&'static str>,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    /// Primitive ops with at least one case.
    pub fn covered_ops(&self) -> Vec<&'static str> {
        let mut ops: Vec<_> = self.cases.iter().filter_map(|c| c.op).collect();
        ops.sort_unstable();
        ops.dedup();
        ops
    }

    pub fn missing_ops(&self) -> Vec<&'static str> {
        let covered = self.covered_ops();
        DIFFERENTIABLE_OPS.iter().copied().filter(|op| !covered.contains(op)).collect()
    }
}

type Build<'a> = Box<dyn Fn(&[Var]) -> Result<Var> + 'a>;

struct Case<'a> {
    name: String,
    op: Option<&'static str>,
    inputs: Vec<Tensor>,
    build: Build<'a>,
    step: f64,
    threshold: f64,
    /// Inputs to difference, all when `None`.
    check: Option<Vec<usize>>,
    /// Elements sampled per checked input, all when `None`.
    samples: Option<usize>,
}

impl<'a> Case<'a> {
    fn op(op: &'static str, inputs: Vec<Tensor>, build: impl Fn(&[Var]) -> Result<Var> + 'a) -> Self {
        Self {
            name: op.to_string(),
            op: Some(op),
            inputs,
            build: Box::new(build),
            step: OP_STEP,
            threshold: OP_THRESHOLD,
            check: None,
            samples: None,
        }
    }

    fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

fn weighted_output(build: &Build, inputs: &[Tensor], weights: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = build(&vars)?;
    Ok(out.value().data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

fn run_case(case: &Case, rng: &mut ChaCha8Rng) -> Result<f64> {
    let tape = Tape::new();
    let leaves: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&leaves)?;
    let weights = Tensor::uniform(out.shape().to_vec(), -1.0, 1.0, rng);
    tape.backward_seeded(&out, weights.clone())?;
    let all: Vec<usize> = (0..case.inputs.len()).collect();
    let mut worst: f64 = 0.0;
    for &i in case.check.as_ref().unwrap_or(&all) {
        let analytic = leaves[i].grad().expect("leaf gradient");
        let n = case.inputs[i].len();
        let elements: Vec<usize> = match case.samples {
            Some(k) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut inputs = case.inputs.clone();
        let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
        for j in elements {
            let x0 = case.inputs[i].data()[j];
            inputs[i].data_mut()[j] = x0 + case.step;
            let plus = weighted_output(&case.build, &inputs, &weights)?;
            inputs[i].data_mut()[j] = x0 - case.step;
            let minus = weighted_output(&case.build, &inputs, &weights)?;
            inputs[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * case.step);
            let a = analytic.data()[j];
            diff = diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        worst = worst.max(diff / (scale + 1e-6));
    }
    Ok(worst)
}

/// Uniform values with magnitude in `[0.2, 1)` and random sign.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::uniform(shape.to_vec(), 0.2, 1.0, rng);
    t.data_mut().iter_mut().for_each(|v| {
        if rng.random::<bool>() {
            *v = -*v
        }
    });
    t
}

fn op_cases<'a>(rng: &mut ChaCha8Rng) -> Vec<Case<'a>> {
    let mut u = |shape: &[usize]| Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng);
    let (a, b) = (u(&[2, 3]), u(&[2, 3]));
    let x4 = u(&[2, 3, 4, 4]);
    let small = u(&[1, 2, 4, 4]);
    let mut cases = vec![
        Case::op("add", vec![a.clone(), b.clone()], |v| v[0].add(&v[1])),
        Case::op("sub", vec![a.clone(), b.clone()], |v| v[0].sub(&v[1])),
        Case::op("mul", vec![a.clone(), b.clone()], |v| v[0].mul(&v[1])),
        Case::op("scale", vec![a.clone()], |v| v[0].scale(1.7)),
        Case::op("add_scalar", vec![a.clone()], |v| v[0].add_scalar(0.3)),
        Case::op("cos", vec![a.clone()], |v| v[0].cos()),
        Case::op("sin", vec![a.clone()], |v| v[0].sin()),
        Case::op("sigmoid", vec![a.clone()], |v| v[0].sigmoid()),
        Case::op("softmax", vec![u(&[3, 5])], |v| v[0].softmax()),
        Case::op("sum", vec![a.clone()], |v| v[0].sum()),
        Case::op("mean", vec![a.clone()], |v| v[0].mean()),
        Case::op("matmul", vec![u(&[2, 3, 4]), u(&[2, 4, 5])], |v| v[0].matmul(&v[1])),
        Case::op("matmul", vec![u(&[3, 4]), u(&[4, 2])], |v| v[0].matmul(&v[1])).named("matmul/2d"),
        Case::op("transpose", vec![u(&[2, 3, 4])], |v| v[0].transpose()),
        Case::op("conv2d", vec![u(&[1, 2, 5, 5]), u(&[3, 2, 3, 3]), u(&[3])], |v| {
            v[0].conv2d(&v[1], Some(&v[2]), 1)
        }),
        Case::op("conv2d", vec![u(&[2, 2, 6, 6]), u(&[3, 2, 3, 3]), u(&[3])], |v| {
            v[0].conv2d(&v[1], Some(&v[2]), 2)
        })
        .named("conv2d/stride2"),
        Case::op("conv2d", vec![u(&[1, 3, 4, 4]), u(&[2, 3, 1, 1])], |v| v[0].conv2d(&v[1], None, 1))
            .named("conv2d/1x1"),
        Case::op("global_avg_pool", vec![x4.clone()], |v| v[0].global_avg_pool()),
        Case::op("layer_norm", vec![u(&[2, 4, 3, 3])], |v| v[0].layer_norm()),
        Case::op("channel_affine", vec![x4.clone(), u(&[3]), u(&[3])], |v| {
            v[0].channel_affine(&v[1], &v[2])
        }),
        Case::op("scale_channels", vec![x4.clone(), u(&[2, 3, 1, 1])], |v| v[0].scale_channels(&v[1])),
        Case::op("add_bias_matrix", vec![u(&[2, 4, 4]), u(&[4, 4])], |v| v[0].add_bias_matrix(&v[1])),
        Case::op("gather", vec![u(&[6])], |v| v[0].gather(&[0, 2, 2, 5, 1, 2], &[2, 3])),
        Case::op("concat_channels", vec![small.clone(), u(&[1, 1, 4, 4])], |v| {
            Var::concat_channels(&[&v[0], &v[1]])
        }),
        Case::op("upsample2x", vec![small.clone()], |v| v[0].upsample2x()),
        Case::op("downsample2x", vec![small.clone()], |v| v[0].downsample2x()),
        Case::op("pad_reflect", vec![small.clone()], |v| v[0].pad_reflect(2, 5)),
        Case::op("crop", vec![small.clone()], |v| v[0].crop(3, 2)),
        Case::op("window_partition", vec![u(&[1, 3, 4, 4])], |v| v[0].window_partition(2)),
        Case::op("window_merge", vec![u(&[4, 4, 3])], |v| v[0].window_merge(2, 1, 4, 4)),
        Case::op("local_mean", vec![x4.clone()], |v| v[0].local_mean(2)),
        Case::op("dft2_real", vec![u(&[1, 2, 4, 6])], |v| Ok(dft2(&v[0])?.real)),
        Case::op("dft2_imag", vec![u(&[1, 2, 4, 6])], |v| Ok(dft2(&v[0])?.imag)),
        Case::op("idft2", vec![u(&[1, 2, 4, 4]), u(&[1, 2, 4, 4])], |v| {
            idft2(&ComplexSpectrum {
                real: v[0].clone(),
                imag: v[1].clone(),
            })
        }),
    ];
    let kinked = away_from_zero(&[2, 3], rng);
    let other = away_from_zero(&[2, 3], rng);
    cases.push(Case::op("abs", vec![kinked.clone()], |v| v[0].abs()));
    cases.push(Case::op("leaky_relu", vec![kinked.clone()], |v| v[0].leaky_relu(0.1)));
    cases.push(Case::op("hypot", vec![kinked.clone(), other.clone()], |v| Var::hypot(&v[0], &v[1])));
    cases.push(Case::op("atan2", vec![kinked.clone(), other], |v| Var::atan2(&v[0], &v[1])));
    let base = Tensor::uniform(vec![2, 3], 0.5, 1.5, rng);
    cases.push(Case::op("power", vec![base], |v| v[0].power(1.3)));
    cases
}

fn composite<'a>(name: &str, inputs: Vec<Tensor>, build: Build<'a>) -> Case<'a> {
    Case {
        name: name.to_string(),
        op: None,
        inputs,
        build,
        step: COMPOSITE_STEP,
        threshold: END_TO_END_THRESHOLD,
        check: None,
        samples: None,
    }
}

fn sfii_case<'a>(rng: &mut ChaCha8Rng) -> Case<'a> {
    let mut store = ParamStore::new();
    let block = SfiiBlock::new(&mut store, "blk", 4, 4, rng);
    let x = Tensor::uniform(vec![1, 4, 8, 8], -1.0, 1.0, rng);
    let mut inputs = vec![x];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    let build = move |v: &[Var]| block.forward(&BoundParams::from_vars(v[1..].to_vec()), &v[0]);
    let mut case = composite("sfii_block", inputs, Box::new(build));
    case.samples = Some(6);
    case
}

fn total_loss_case<'a>(cfg: &Config, rng: &mut ChaCha8Rng) -> Result<Case<'a>> {
    let model = Model::init(&cfg.network, rng.random())?;
    let side = cfg.network.size_multiple().max(cfg.loss.windows[0]);
    let hazy = build_pyramid(&Tensor::uniform(vec![1, 3, side, side], 0.0, 1.0, rng))?;
    let clear = build_pyramid(&Tensor::uniform(vec![1, 3, side, side], 0.0, 1.0, rng))?;
    let inputs: Vec<Tensor> = model.params.iter().map(|(_, t)| t.clone()).collect();
    let n = inputs.len();
    let weights = cfg.loss.clone();
    let net = model.net;
    let build = move |v: &[Var]| {
        let tape = v[0].tape();
        let x = hazy.levels.clone().map(|t| tape.constant(t));
        let y = clear.levels.clone().map(|t| tape.constant(t));
        let preds = net.forward(&BoundParams::from_vars(v.to_vec()), &x)?;
        Ok(total_loss(&preds, &y, &x, &weights)?.total)
    };
    let mut case = composite("total_loss", inputs, Box::new(build));
    case.check = Some(sample(rng, n, n.min(48)).into_vec());
    case.samples = Some(2);
    Ok(case)
}

fn evaluate(case: &Case, rng: &mut ChaCha8Rng) -> CaseResult {
    let (err, error) = match run_case(case, rng) {
        Ok(e) => (e, None),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    };
    CaseResult {
        name: case.name.clone(),
        op: case.op,
        max_rel_error: err,
        threshold: case.threshold,
        passed: err <= case.threshold,
        error,
    }
}

/// Runs only the single-op cases.
pub fn run_op_checks(seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = op_cases(&mut rng);
    GradcheckReport {
        cases: cases.iter().map(|c| evaluate(c, &mut rng)).collect(),
    }
}

/// The full suite: every primitive, one SFII block and the total loss
/// through the network described by `cfg`.
pub fn run_gradcheck(cfg: &Config, seed: u64) -> Result<GradcheckReport> {
    let mut report = run_op_checks(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let sfii = sfii_case(&mut rng);
    report.cases.push(evaluate(&sfii, &mut rng));
    let total = total_loss_case(cfg, &mut rng)?;
    report.cases.push(evaluate(&total, &mut rng));
    Ok(report)
}
