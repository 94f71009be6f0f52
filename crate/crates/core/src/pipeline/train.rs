//! Supervised training and pseudo-label fusion retraining.
//!
//! The batch drawn at a given step is a pure function of the seed and the
//! step number, so a run resumed from a checkpoint replays exactly the
//! batches an uninterrupted run would have seen.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, Stage};
use super::config::Config;
use super::optim::Adam;
use crate::data::{load_image, DatasetManifest};
use crate::error::{Error, Result};
use crate::network::{build_pyramid, NetworkConfig, Sfsnid, SCALES};
use crate::objectives::{total_loss, LossWeights};
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";

/// A network together with its parameter values.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Sfsnid,
    pub params: ParamStore,
}

impl Model {
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Sfsnid::new(cfg, &mut params, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { net, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut model = Self::init(&ckpt.config.network, 0)?;
        model.params.load_from(&ckpt.params)?;
        Ok(model)
    }

    /// Predictions at all scales for a `[B,3,H,W]` batch whose sides are
    /// multiples of the network's size multiple.
    pub fn predict(&self, hazy: &Tensor) -> Result<[Tensor; SCALES]> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let pyr = build_pyramid(hazy)?.levels.map(|t| tape.constant(t));
        Ok(self.net.forward(&p, &pyr)?.map(|v| v.value().clone()))
    }
}

/// Dehazes one `[3,H,W]` image: reflect-pads to the size multiple, keeps
/// the finest prediction, crops back and clamps to `[0,1]`.
pub fn infer(model: &Model, image: &Tensor) -> Result<Tensor> {
    let [3, h, w] = *image.shape() else {
        return Err(Error::shape("infer", format!("expected [3,H,W], got {:?}", image.shape())));
    };
    let m = model.net.config().size_multiple();
    let pad = |n: usize| (m - n % m) % m;
    let tape = Tape::new();
    let x = tape.constant(image.clone().reshape(vec![1, 3, h, w])?);
    let x = if pad(h) + pad(w) > 0 {
        info!("padding {h}x{w} input to {}x{}", h + pad(h), w + pad(w));
        x.pad_reflect(pad(h), pad(w))?
    } else {
        x
    };
    let [p0, ..] = model.predict(x.value())?;
    let out = tape.constant(p0).crop(h, w)?;
    out.value().clone().squeeze_batch().map(|t| t.map(|v| v.clamp(0.0, 1.0)))
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub l_g: f64,
    pub l_f: f64,
    pub l_b: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,l_g,l_f,l_b,total";

    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.l_g, self.l_f, self.l_b, self.total)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Records of the steps run by this call.
    pub log: Vec<LossRecord>,
}

/// `(input, target)` images, each `[3,H,W]`.
pub type Example = (Tensor, Tensor);

pub fn load_examples(pairs: &[(PathBuf, PathBuf)]) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|(x, y)| Ok((load_image(x)?, load_image(y)?)))
        .collect()
}

fn steps_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

/// Indices of batch `index` of a shuffled pass over `n` examples.
/// Returns the epoch the batch belongs to.
pub fn batch_indices(n: usize, batch: usize, seed: u64, stream: u64, index: u64) -> (u64, Vec<usize>) {
    let spe = steps_per_epoch(n, batch);
    let (epoch, pos) = (index / spe, (index % spe) as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch + stream);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let end = ((pos + 1) * batch).min(n);
    (epoch, perm[pos * batch..end].to_vec())
}

struct Batch {
    hazy: Tensor,
    target: Tensor,
}

fn assemble(examples: &[Example], indices: &[usize], size: usize, seed: u64, tag: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
    rng.set_stream(tag);
    let mut xs = Vec::with_capacity(indices.len());
    let mut ys = Vec::with_capacity(indices.len());
    for &i in indices {
        let (x, y) = &examples[i];
        if x.shape() != y.shape() {
            return Err(Error::shape("train", format!("pair {i}: {:?} vs {:?}", x.shape(), y.shape())));
        }
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let (ch, cw) = (size.min(h), size.min(w));
        let oy = if h > ch { rng.random_range(0..=h - ch) } else { 0 };
        let ox = if w > cw { rng.random_range(0..=w - cw) } else { 0 };
        xs.push(crop(x, oy, ox, ch, cw));
        ys.push(crop(y, oy, ox, ch, cw));
    }
    Ok(Batch {
        hazy: Tensor::stack(&xs)?,
        target: Tensor::stack(&ys)?,
    })
}

fn crop(img: &Tensor, oy: usize, ox: usize, ch: usize, cw: usize) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if (ch, cw) == (h, w) {
        return img.clone();
    }
    let mut data = Vec::with_capacity(3 * ch * cw);
    for c in 0..3 {
        for y in oy..oy + ch {
            let row = (c * h + y) * w;
            data.extend_from_slice(&img.data()[row + ox..row + ox + cw]);
        }
    }
    Tensor::new(vec![3, ch, cw], data).expect("sized buffer")
}

/// One forward/backward/update.
fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &Batch,
    weights: &LossWeights,
    lr: f64,
    step: u64,
) -> Result<LossRecord> {
    let tape = Tape::new();
    let p = model.params.bind(&tape);
    let inputs = build_pyramid(&batch.hazy)?.levels.map(|t| tape.constant(t));
    let targets = build_pyramid(&batch.target)?.levels.map(|t| tape.constant(t));
    let preds = model.net.forward(&p, &inputs)?;
    let terms = total_loss(&preds, &targets, &inputs, weights)?;
    let (l_g, l_f, l_b, total) = terms.values();
    if !total.is_finite() {
        return Err(Error::Divergence { step, loss: total });
    }
    tape.backward(&terms.total)?;
    adam.step(&mut model.params, &p.grads(), lr)?;
    Ok(LossRecord {
        step,
        l_g,
        l_f,
        l_b,
        total,
    })
}

/// Aborts a run whose loss stays far above its first value.
struct DivergenceGuard {
    factor: f64,
    patience: u64,
    initial: Option<f64>,
    streak: u64,
}

impl DivergenceGuard {
    fn new(cfg: &Config) -> Self {
        Self {
            factor: cfg.train.divergence_factor,
            patience: cfg.train.divergence_patience,
            initial: None,
            streak: 0,
        }
    }

    fn observe(&mut self, rec: &LossRecord) -> Result<()> {
        let initial = *self.initial.get_or_insert(rec.total);
        if rec.total > self.factor * initial {
            self.streak += 1;
            if self.streak >= self.patience {
                return Err(Error::Divergence {
                    step: rec.step,
                    loss: rec.total,
                });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

struct Outputs {
    dir: Option<PathBuf>,
    log: Option<File>,
}

impl Outputs {
    fn open(dir: Option<&Path>, fresh: bool) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self { dir: None, log: None });
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOSS_LOG_FILE);
        let new_file = fresh || !path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .append(!new_file)
            .write(true)
            .truncate(new_file)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if new_file {
            writeln!(file, "{}", LossRecord::CSV_HEADER).map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            log: Some(file),
        })
    }

    fn record(&mut self, rec: &LossRecord) -> Result<()> {
        if let (Some(f), Some(dir)) = (&mut self.log, &self.dir) {
            writeln!(f, "{}", rec.csv()).map_err(|e| Error::io(dir.join(LOSS_LOG_FILE), e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        match &self.dir {
            Some(dir) => ckpt.save(&dir.join(CHECKPOINT_FILE)),
            None => Ok(()),
        }
    }
}

/// Mutable state of a run.
struct Run {
    model: Model,
    adam: Adam,
    step: u64,
    stage_start_step: u64,
}

impl Run {
    fn snapshot(&self, stage: Stage, cfg: &Config) -> Checkpoint {
        Checkpoint {
            stage,
            step: self.step,
            stage_start_step: self.stage_start_step,
            config: cfg.clone(),
            params: self.model.params.clone(),
            optimizer: Some(self.adam.clone()),
        }
    }
}

fn adam_for(cfg: &Config, params: &ParamStore) -> Adam {
    Adam::new(params, cfg.train.beta1, cfg.train.beta2, cfg.train.eps)
}

fn check_network(ckpt: &Checkpoint, cfg: &Config) -> Result<()> {
    if ckpt.config.network != cfg.network {
        return Err(Error::Config(
            "network section differs from the one the checkpoint was trained with".into(),
        ));
    }
    Ok(())
}

/// A fresh, untrained checkpoint for `cfg`.
pub fn initial_checkpoint(cfg: &Config) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Model::init(&cfg.network, cfg.train.seed)?;
    Ok(Checkpoint {
        stage: Stage::Untrained,
        step: 0,
        stage_start_step: 0,
        config: cfg.clone(),
        optimizer: Some(adam_for(cfg, &model.params)),
        params: model.params,
    })
}

/// Stage one: `L_G + α·L_F` on the synthetic pairs (`β` is forced to 0).
///
/// With `resume`, training continues from that checkpoint until the
/// stage's step budget is reached.
pub fn train_supervised(
    manifest: &DatasetManifest,
    cfg: &Config,
    resume: Option<&Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let examples = load_examples(&manifest.synthetic_paths())?;
    if examples.is_empty() {
        return Err(Error::EmptySplit("synthetic"));
    }
    let start = match resume {
        Some(c) if c.stage == Stage::Retrained => {
            return Err(Error::Checkpoint("cannot resume supervised training from a retrained checkpoint".into()))
        }
        Some(c) => {
            check_network(c, cfg)?;
            c.clone()
        }
        None => initial_checkpoint(cfg)?,
    };
    let mut run = Run {
        model: Model::from_checkpoint(&start)?,
        adam: start.optimizer.clone().unwrap_or_else(|| adam_for(cfg, &start.params)),
        step: start.step,
        stage_start_step: start.stage_start_step,
    };
    let t = &cfg.train;
    let spe = steps_per_epoch(examples.len(), t.batch_size);
    let budget = t.steps.unwrap_or(t.epochs * spe);
    let weights = LossWeights { beta: 0.0, ..cfg.loss.clone() };
    let mut out = Outputs::open(out_dir, resume.is_none())?;
    let mut guard = DivergenceGuard::new(cfg);
    let mut log = Vec::new();
    while run.step - run.stage_start_step < budget {
        let (epoch, idx) = batch_indices(examples.len(), t.batch_size, t.seed, 0, run.step);
        let batch = assemble(&examples, &idx, t.image_size, t.seed, run.step)?;
        let rec = train_step(&mut run.model, &mut run.adam, &batch, &weights, t.lr_at(epoch), run.step)?;
        run.step += 1;
        finish_step(&mut out, &mut guard, &rec, &run, Stage::Supervised, cfg)?;
        log.push(rec);
    }
    let checkpoint = run.snapshot(Stage::Supervised, cfg);
    out.checkpoint(&checkpoint)?;
    Ok(TrainOutcome { checkpoint, log })
}

fn finish_step(
    out: &mut Outputs,
    guard: &mut DivergenceGuard,
    rec: &LossRecord,
    run: &Run,
    stage: Stage,
    cfg: &Config,
) -> Result<()> {
    out.record(rec)?;
    if rec.step % 25 == 0 {
        info!("step {} loss {:.6} (L_G {:.6}, L_F {:.6}, L_B {:.6})", rec.step, rec.total, rec.l_g, rec.l_f, rec.l_b);
    }
    guard.observe(rec)?;
    let every = cfg.train.checkpoint_every;
    if every > 0 && run.step % every == 0 {
        out.checkpoint(&run.snapshot(stage, cfg))?;
    }
    Ok(())
}

/// Which pool a retraining step draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSource {
    /// Global index into the synthetic batch sequence.
    Synthetic(u64),
    /// Index into the pseudo-labelled batch sequence.
    Pseudo(u64),
}

/// Round-robin schedule: `ratio` synthetic batches, then one pseudo batch.
/// The synthetic sequence continues where stage one stopped, so without
/// pseudo pairs retraining replays a supervised continuation.
pub fn retrain_source(stage_start: u64, k: u64, ratio: usize, has_pseudo: bool) -> BatchSource {
    if !has_pseudo {
        return BatchSource::Synthetic(stage_start + k);
    }
    let r = ratio as u64;
    let (cycle, j) = (k / (r + 1), k % (r + 1));
    if j < r {
        BatchSource::Synthetic(stage_start + cycle * r + j)
    } else {
        BatchSource::Pseudo(cycle)
    }
}

/// Stage two: synthetic pairs and `(real hazy, pseudo label)` pairs,
/// loss `L_G + α·L_F + β·L_B` with `L_B` against each example's own input.
pub fn retrain_fused(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    cfg: &Config,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ckpt.stage == Stage::Untrained {
        return Err(Error::Checkpoint(
            "retraining needs a checkpoint from supervised training".into(),
        ));
    }
    check_network(ckpt, cfg)?;
    let synthetic = load_examples(&manifest.synthetic_paths())?;
    if synthetic.is_empty() {
        return Err(Error::EmptySplit("synthetic"));
    }
    let pseudo = load_examples(&manifest.pseudo_pairs())?;
    let resuming = ckpt.stage == Stage::Retrained;
    let mut run = Run {
        model: Model::from_checkpoint(ckpt)?,
        adam: ckpt.optimizer.clone().unwrap_or_else(|| adam_for(cfg, &ckpt.params)),
        step: ckpt.step,
        stage_start_step: if resuming { ckpt.stage_start_step } else { ckpt.step },
    };
    let t = &cfg.train;
    let spe = steps_per_epoch(synthetic.len(), t.batch_size);
    let budget = t.retrain_steps.unwrap_or(t.retrain_epochs * spe);
    let mut out = Outputs::open(out_dir, !resuming)?;
    let mut guard = DivergenceGuard::new(cfg);
    let mut log = Vec::new();
    while run.step - run.stage_start_step < budget {
        let k = run.step - run.stage_start_step;
        let (batch, lr_epoch) = match retrain_source(run.stage_start_step, k, t.synthetic_per_pseudo, !pseudo.is_empty()) {
            BatchSource::Synthetic(i) => {
                let (epoch, idx) = batch_indices(synthetic.len(), t.batch_size, t.seed, 0, i);
                (assemble(&synthetic, &idx, t.image_size, t.seed, i)?, epoch)
            }
            BatchSource::Pseudo(i) => {
                let (_, idx) = batch_indices(pseudo.len(), t.batch_size, t.seed, 1, i);
                let last_synthetic = run.stage_start_step + (i + 1) * t.synthetic_per_pseudo as u64 - 1;
                let tag = (1 << 48) + i;
                (assemble(&pseudo, &idx, t.image_size, t.seed, tag)?, last_synthetic / spe)
            }
        };
        let rec = train_step(&mut run.model, &mut run.adam, &batch, &cfg.loss, t.lr_at(lr_epoch), run.step)?;
        run.step += 1;
        finish_step(&mut out, &mut guard, &rec, &run, Stage::Retrained, cfg)?;
        log.push(rec);
    }
    let checkpoint = run.snapshot(Stage::Retrained, cfg);
    out.checkpoint(&checkpoint)?;
    Ok(TrainOutcome { checkpoint, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut seen: Vec<usize> = (0..3).flat_map(|i| batch_indices(10, 4, 1, 0, i).1).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_indices(10, 4, 1, 0, 3).0, 1);
        assert_eq!(batch_indices(10, 4, 1, 0, 5), batch_indices(10, 4, 1, 0, 5));
    }

    #[test]
    fn round_robin_schedule() {
        let got: Vec<BatchSource> = (0..6).map(|k| retrain_source(10, k, 2, true)).collect();
        use BatchSource::*;
        assert_eq!(got, vec![Synthetic(10), Synthetic(11), Pseudo(0), Synthetic(12), Synthetic(13), Pseudo(1)]);
        assert_eq!(retrain_source(10, 4, 2, false), Synthetic(14));
    }

    #[test]
    fn guard_trips_after_patience() {
        let mut cfg = Config::toy();
        cfg.train.divergence_patience = 3;
        let mut g = DivergenceGuard::new(&cfg);
        let rec = |step, total| LossRecord { step, l_g: 0.0, l_f: 0.0, l_b: 0.0, total };
        g.observe(&rec(0, 1.0)).unwrap();
        g.observe(&rec(1, 11.0)).unwrap();
        g.observe(&rec(2, 11.0)).unwrap();
        assert!(matches!(g.observe(&rec(3, 11.0)), Err(Error::Divergence { step: 3, .. })));
    }

    #[test]
    fn infer_pads_and_crops() {
        let model = Model::init(&NetworkConfig::tiny(), 0).unwrap();
        let img = Tensor::full(vec![3, 13, 18], 0.5);
        let out = infer(&model, &img).unwrap();
        assert_eq!(out.shape(), &[3, 13, 18]);
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out, infer(&model, &img).unwrap());
    }
}
