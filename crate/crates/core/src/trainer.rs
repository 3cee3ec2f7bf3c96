//! Alternating-freeze SGD training.
//!
//! Every iteration computes gradients for all parameters. The freeze schedule
//! then decides which groups take an SGD step: temporal kernels for the first
//! `I_s` iterations of each cycle, spatial kernels for the remaining `I_t`, and
//! shared parameters always. A group that does not step keeps its parameters
//! and momentum buffers bitwise unchanged.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{
    clip_blend, random_mask_with, random_temporal_dropout, random_temporal_repeat, standard_augs, translate,
    AugToggles, Clip, FakeKind, MaskParams, MaskShape,
};
use crate::autodiff::{BnMode, Gradients, ParamId, Reduction, Tape};
use crate::error::{Error, Result};
use crate::metrics::{run_eval, DEFAULT_CLIPS_PER_VIDEO};
use crate::model::{Model, Parameter};
use crate::partition::{group_per_param, ParamGroup};
use crate::synth::ClipDataset;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Spatial kernels frozen.
    TemporalUpdate,
    /// Temporal kernels frozen.
    SpatialUpdate,
    /// Nothing frozen.
    Joint,
}

impl Phase {
    pub fn is_active(self, group: ParamGroup) -> bool {
        match (self, group) {
            (_, ParamGroup::Shared) | (Phase::Joint, _) => true,
            (Phase::TemporalUpdate, g) => g == ParamGroup::Temporal,
            (Phase::SpatialUpdate, g) => g == ParamGroup::Spatial,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::TemporalUpdate => "temporal",
            Phase::SpatialUpdate => "spatial",
            Phase::Joint => "joint",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Phase of the iteration that follows `counter` completed ones.
///
/// # Panics
/// If `i_s` or `i_t` is zero.
pub fn active_group(counter: u64, i_s: u64, i_t: u64) -> Phase {
    assert!(i_s >= 1 && i_t >= 1, "freeze ratio {i_s}:{i_t} needs both sides >= 1");
    if counter % (i_s + i_t) < i_s {
        Phase::TemporalUpdate
    } else {
        Phase::SpatialUpdate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeSchedule {
    pub i_s: u64,
    pub i_t: u64,
    /// Completed iterations.
    pub counter: u64,
    /// All groups always active.
    pub naive: bool,
}

impl FreezeSchedule {
    pub fn new(i_s: u64, i_t: u64) -> Result<Self> {
        if i_s == 0 || i_t == 0 {
            return Err(Error::invalid(format!("freeze ratio {i_s}:{i_t} needs both sides >= 1")));
        }
        Ok(FreezeSchedule {
            i_s,
            i_t,
            counter: 0,
            naive: false,
        })
    }

    pub fn naive() -> Self {
        FreezeSchedule {
            i_s: 1,
            i_t: 1,
            counter: 0,
            naive: true,
        }
    }

    pub fn phase(&self) -> Phase {
        if self.naive {
            Phase::Joint
        } else {
            active_group(self.counter, self.i_s, self.i_t)
        }
    }

    pub fn advance(&mut self) {
        self.counter += 1;
    }
}

/// Cosine annealing from `lr0` at `iter = 0` down to 0 at `iter = total`.
pub fn cosine_lr(iter: u64, total: u64, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine schedule needs total_iters >= 1"));
    }
    if iter > total {
        return Err(Error::invalid(format!("iteration {iter} is past the schedule end {total}")));
    }
    Ok(lr0 * (1.0 + (PI * iter as f64 / total as f64).cos()) / 2.0)
}

/// Momentum buffers for every parameter plus the live hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T: Element = f32> {
    pub momentum: Vec<Tensor<T>>,
    pub mu: f64,
    pub lr: f64,
}

impl<T: Element> SgdState<T> {
    pub fn new(params: &[Parameter<T>], mu: f64, lr: f64) -> Self {
        SgdState {
            momentum: params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
            mu,
            lr,
        }
    }
}

/// `v ← μv + g; θ ← θ − αv` for the parameters listed in `members`; every
/// other parameter and buffer is left alone.
pub fn sgd_step<T: Element>(
    params: &mut [Parameter<T>],
    grads: &Gradients<T>,
    state: &mut SgdState<T>,
    members: &[usize],
) -> Result<()> {
    let mu = T::of(state.mu);
    let lr = T::of(state.lr);
    for &i in members {
        let p = &mut params[i];
        let g = grads
            .get(&ParamId(i))
            .ok_or_else(|| Error::invalid(format!("no gradient for `{}`", p.name)))?;
        if g.shape() != p.value.shape() {
            return Err(Error::shape(
                p.name.clone(),
                format!("gradient {:?} vs parameter {:?}", g.shape(), p.value.shape()),
            ));
        }
        let v = &mut state.momentum[i];
        for ((theta, v), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v + g;
            *theta -= lr * *v;
        }
    }
    Ok(())
}

/// Binary cross-entropy on probabilities.
pub fn bce_loss(probs: &[f64], labels: &[f64], reduction: Reduction) -> Result<f64> {
    crate::autodiff::bce_value(probs, labels, reduction)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub clip_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub i_s: u64,
    pub i_t: u64,
    /// Train every group on every iteration.
    pub naive: bool,
    pub seed: u64,
    pub augs: AugToggles,
    /// Append online fakes generated from real clips of the batch.
    pub fake_aug: bool,
    /// Chance that a real clip spawns an online fake.
    pub fake_prob: f64,
    pub same_video_prob: f64,
    pub mask: MaskParams,
    pub reduction: Reduction,
    /// Validation AUC every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub clips_per_video: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            clip_len: 8,
            epochs: 200,
            lr: 0.05,
            momentum: 0.9,
            i_s: 20,
            i_t: 1,
            naive: false,
            seed: 0,
            augs: AugToggles::default(),
            fake_aug: true,
            fake_prob: 0.5,
            same_video_prob: 0.5,
            mask: MaskParams {
                shapes: vec![MaskShape::Ellipse, MaskShape::Polygon],
                blur_sigma: (1.0, 2.0),
                coverage: (0.10, 0.60),
            },
            reduction: Reduction::Mean,
            eval_every: 0,
            clips_per_video: DEFAULT_CLIPS_PER_VIDEO,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("initial learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        for (name, p) in [("fake_prob", self.fake_prob), ("same_video_prob", self.same_video_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<FreezeSchedule> {
        if self.naive {
            Ok(FreezeSchedule::naive())
        } else {
            FreezeSchedule::new(self.i_s, self.i_t)
        }
    }

    pub fn iters_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.batch_size) as u64
    }

    pub fn total_iters(&self, dataset_len: usize) -> u64 {
        self.iters_per_epoch(dataset_len) * self.epochs as u64
    }
}

/// Everything besides the model needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub schedule: FreezeSchedule,
    pub sgd: SgdState<f32>,
    /// Completed iterations.
    pub iteration: u64,
    /// Base seed all per-iteration randomness derives from.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRow {
    Step {
        iter: u64,
        epoch: u64,
        phase: Phase,
        lr: f64,
        loss: f64,
    },
    Eval {
        iter: u64,
        epoch: u64,
        auc: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Written as `#` comment lines before the CSV header.
    pub header: Vec<String>,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match r {
                LogRow::Step { loss, .. } => Some(*loss),
                LogRow::Eval { .. } => None,
            })
            .collect()
    }

    pub fn eval_aucs(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| match r {
                LogRow::Eval { auc, .. } => Some(*auc),
                LogRow::Step { .. } => None,
            })
            .collect()
    }

    /// Columns `iter,epoch,phase,lr,loss,eval_auc`; eval rows carry phase `eval`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for line in &self.header {
            writeln!(out, "# {line}").map_err(|e| Error::io("<log>", e))?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "epoch", "phase", "lr", "loss", "eval_auc"])?;
        for r in &self.rows {
            match r {
                LogRow::Step {
                    iter,
                    epoch,
                    phase,
                    lr,
                    loss,
                } => w.write_record([
                    iter.to_string(),
                    epoch.to_string(),
                    phase.to_string(),
                    format!("{lr:.9e}"),
                    format!("{loss:.9e}"),
                    String::new(),
                ])?,
                LogRow::Eval { iter, epoch, auc } => w.write_record([
                    iter.to_string(),
                    epoch.to_string(),
                    "eval".to_string(),
                    String::new(),
                    String::new(),
                    format!("{auc:.6}"),
                ])?,
            }
        }
        w.flush().map_err(|e| Error::io("<log>", e))?;
        Ok(())
    }
}

/// Outcome of one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iter: u64,
    pub epoch: u64,
    pub phase: Phase,
    pub lr: f64,
    pub loss: f64,
    pub batch_len: usize,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derived_rng(parts: &[u64]) -> ChaCha8Rng {
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = mix(h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15));
    }
    ChaCha8Rng::seed_from_u64(h)
}

const STREAM_ORDER: u64 = 1;
const STREAM_SAMPLE: u64 = 2;

/// Fake built on the fly from a real clip. `others` lists clips usable as a
/// second video for blending.
pub fn online_fake<R: Rng + ?Sized>(
    clip: &Clip,
    others: &[&Clip],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<(FakeKind, Clip)> {
    let kind = FakeKind::ALL[rng.gen_range(0..3)];
    let fake = match kind {
        FakeKind::TemporalDropout => random_temporal_dropout(clip, rng)?,
        FakeKind::TemporalRepeat => random_temporal_repeat(clip, rng)?,
        FakeKind::Blend => {
            let fg = if others.is_empty() || rng.gen_bool(config.same_video_prob) {
                let (h, w) = (clip.height() as isize, clip.width() as isize);
                let dy = rng.gen_range(-(h / 4)..=h / 4);
                let dx = rng.gen_range(-(w / 4)..=w / 4);
                translate(clip, dy, dx)
            } else {
                others[rng.gen_range(0..others.len())].clone()
            };
            let mask = random_mask_with(clip.height(), clip.width(), &config.mask, rng)?;
            clip_blend(&fg, clip, &mask)?
        }
    };
    Ok((kind, fake))
}

/// Drives training of one model over one dataset.
pub struct Trainer {
    model: Model<f32>,
    config: TrainConfig,
    state: TrainState,
    groups: [Vec<usize>; 3],
    log: TrainLog,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = TrainState {
            schedule: config.schedule()?,
            sgd: SgdState::new(model.params(), config.momentum, config.lr),
            iteration: 0,
            seed: config.seed,
        };
        Self::resume(model, config, state)
    }

    /// Continues from a saved state; the next iteration is `state.iteration`.
    pub fn resume(model: Model<f32>, config: TrainConfig, state: TrainState) -> Result<Self> {
        config.validate()?;
        if config.clip_len != model.spec().input_shape[1] {
            return Err(Error::invalid(format!(
                "clip length {} does not match the model input length {}",
                config.clip_len,
                model.spec().input_shape[1]
            )));
        }
        if state.sgd.momentum.len() != model.params().len() {
            return Err(Error::invalid("momentum buffers do not match the model parameters"));
        }
        let mut groups: [Vec<usize>; 3] = Default::default();
        for (i, g) in group_per_param(&model)?.into_iter().enumerate() {
            groups[g.tag() as usize].push(i);
        }
        Ok(Trainer {
            model,
            config,
            state,
            groups,
            log: TrainLog::default(),
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut TrainLog {
        &mut self.log
    }

    /// Indices of the parameters in `group`.
    pub fn members(&self, group: ParamGroup) -> &[usize] {
        &self.groups[group.tag() as usize]
    }

    pub fn into_parts(self) -> (Model<f32>, TrainState, TrainLog) {
        (self.model, self.state, self.log)
    }

    fn check_dataset(&self, data: &ClipDataset) -> Result<()> {
        if data.count_label(0) == 0 || data.count_label(1) == 0 {
            return Err(Error::invalid("training data needs both real and fake clips"));
        }
        let want = &self.model.spec().input_shape;
        if let Some(r) = data.records.iter().find(|r| r.clip.dims() != *want) {
            return Err(Error::shape(
                "clip",
                format!("record {} has dims {:?}, model expects {:?}", r.id, r.clip.dims(), want),
            ));
        }
        Ok(())
    }

    /// Clips and labels of one iteration: the scheduled minibatch plus any
    /// online fakes, all passed through the standard augmentations.
    pub fn batch_for(&self, data: &ClipDataset, iteration: u64) -> Result<(Vec<Clip>, Vec<f64>)> {
        let per_epoch = self.config.iters_per_epoch(data.len());
        let (epoch, pos) = (iteration / per_epoch, (iteration % per_epoch) as usize);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut derived_rng(&[self.state.seed, STREAM_ORDER, epoch]));
        let n = self.config.batch_size;
        let picked = &order[pos * n..((pos + 1) * n).min(data.len())];
        let reals: Vec<&Clip> = data.records.iter().filter(|r| r.label == 0).map(|r| &r.clip).collect();

        let mut clips = Vec::new();
        let mut labels = Vec::new();
        for (j, &idx) in picked.iter().enumerate() {
            let rec = &data.records[idx];
            let mut rng = derived_rng(&[self.state.seed, STREAM_SAMPLE, epoch, (pos * n + j) as u64]);
            let fake = if self.config.fake_aug && rec.label == 0 && rng.gen_bool(self.config.fake_prob) {
                let others: Vec<&Clip> = reals.iter().copied().filter(|c| !std::ptr::eq(*c, &rec.clip)).collect();
                Some(online_fake(&rec.clip, &others, &self.config, &mut rng)?.1)
            } else {
                None
            };
            clips.push(standard_augs(&rec.clip, &mut rng, self.config.augs));
            labels.push(rec.label as f64);
            if let Some(f) = fake {
                clips.push(standard_augs(&f, &mut rng, self.config.augs));
                labels.push(1.0);
            }
        }
        Ok((clips, labels))
    }

    /// One iteration: forward and backward over every parameter, then an SGD
    /// step on the groups the schedule leaves active.
    pub fn step(&mut self, data: &ClipDataset) -> Result<StepRecord> {
        self.check_dataset(data)?;
        let per_epoch = self.config.iters_per_epoch(data.len());
        let total = self.config.total_iters(data.len());
        let iter = self.state.iteration;
        let epoch = iter / per_epoch;
        if iter >= total {
            return Err(Error::invalid(format!("training already finished at iteration {total}")));
        }
        let (clips, labels) = self.batch_for(data, iter)?;
        let refs: Vec<&Tensor<f32>> = clips.iter().map(Clip::tensor).collect();
        let batch = Tensor::stack(&refs)?;

        let mut tape = Tape::new();
        let pass = self.model.forward_on_tape(&mut tape, &batch, BnMode::Train)?;
        let loss_var = tape.bce_with_logits(pass.logits, &labels, self.config.reduction)?;
        let loss = tape.value(loss_var).item() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter, epoch });
        }
        let grads = tape.backward(loss_var)?;

        let phase = self.state.schedule.phase();
        let lr = cosine_lr(iter, total, self.config.lr)?;
        self.state.sgd.lr = lr;
        for g in ParamGroup::ALL {
            if phase.is_active(g) {
                sgd_step(
                    self.model.params_mut(),
                    &grads,
                    &mut self.state.sgd,
                    &self.groups[g.tag() as usize],
                )?;
            }
        }
        self.state.schedule.advance();
        self.state.iteration += 1;
        let rec = StepRecord {
            iter,
            epoch,
            phase,
            lr,
            loss,
            batch_len: clips.len(),
        };
        self.log.rows.push(LogRow::Step {
            iter,
            epoch,
            phase,
            lr,
            loss,
        });
        Ok(rec)
    }

    /// Trains until `stop` iterations are complete (capped at the schedule
    /// end), logging validation AUC at the configured epoch interval.
    pub fn run_until(&mut self, data: &ClipDataset, validation: Option<&ClipDataset>, stop: u64) -> Result<()> {
        let per_epoch = self.config.iters_per_epoch(data.len());
        let stop = stop.min(self.config.total_iters(data.len()));
        while self.state.iteration < stop {
            self.step(data)?;
            let done = self.state.iteration;
            let every = self.config.eval_every as u64;
            if let (Some(val), true) = (validation, every > 0 && done % per_epoch == 0) {
                let epoch = done / per_epoch;
                if epoch % every == 0 {
                    let report = run_eval(&self.model, &[("val", val)], self.config.clips_per_video, "", 0)?;
                    self.log.rows.push(LogRow::Eval {
                        iter: done,
                        epoch,
                        auc: report.aucs[0].1,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn run(&mut self, data: &ClipDataset, validation: Option<&ClipDataset>) -> Result<()> {
        self.run_until(data, validation, u64::MAX)
    }
}

/// Trains `model` for the configured number of epochs.
pub fn train(model: Model<f32>, data: &ClipDataset, config: &TrainConfig) -> Result<(Model<f32>, TrainLog)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(data, None)?;
    let (model, _, log) = trainer.into_parts();
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamKind;

    #[test]
    fn twenty_to_one_phases() {
        for c in 0..20 {
            assert_eq!(active_group(c, 20, 1), Phase::TemporalUpdate);
        }
        assert_eq!(active_group(20, 20, 1), Phase::SpatialUpdate);
        assert_eq!(active_group(21, 20, 1), Phase::TemporalUpdate);
    }

    #[test]
    fn unit_and_one_to_five_cycles() {
        let alt: Vec<Phase> = (0..4).map(|c| active_group(c, 1, 1)).collect();
        assert_eq!(
            alt,
            [Phase::TemporalUpdate, Phase::SpatialUpdate, Phase::TemporalUpdate, Phase::SpatialUpdate]
        );
        let cycle: Vec<Phase> = (0..6).map(|c| active_group(c, 1, 5)).collect();
        assert_eq!(cycle[0], Phase::TemporalUpdate);
        assert!(cycle[1..].iter().all(|&p| p == Phase::SpatialUpdate));
        assert_eq!(active_group(6, 1, 5), Phase::TemporalUpdate);
    }

    #[test]
    fn zero_ratio_is_rejected() {
        assert!(FreezeSchedule::new(0, 1).is_err());
        assert!(FreezeSchedule::new(3, 0).is_err());
    }

    #[test]
    fn cosine_values() {
        assert!((cosine_lr(0, 100, 0.05).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(100, 100, 0.05).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 0.05).unwrap() - 0.025).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.05).is_err());
        assert!(cosine_lr(101, 100, 0.05).is_err());
    }

    fn scalar_param(v: f64) -> Vec<Parameter<f64>> {
        vec![Parameter {
            name: "w".into(),
            kind: ParamKind::LinearWeight,
            value: Tensor::scalar(v),
        }]
    }

    fn unit_grad(g: f64) -> Gradients<f64> {
        [(ParamId(0), Tensor::scalar(g))].into_iter().collect()
    }

    #[test]
    fn momentum_recurrence_by_hand() {
        let mut p = scalar_param(0.0);
        let mut s = SgdState::new(&p, 0.9, 1.0);
        sgd_step(&mut p, &unit_grad(1.0), &mut s, &[0]).unwrap();
        assert_eq!(p[0].value.item(), -1.0);
        sgd_step(&mut p, &unit_grad(1.0), &mut s, &[0]).unwrap();
        assert!((p[0].value.item() + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_gradient_descent() {
        let mut p = scalar_param(0.3);
        let mut s = SgdState::new(&p, 0.0, 0.1);
        sgd_step(&mut p, &unit_grad(2.0), &mut s, &[0]).unwrap();
        assert_eq!(p[0].value.item(), 0.3 - 0.1 * 2.0);
    }

    #[test]
    fn zero_lr_and_non_members_are_untouched() {
        let mut p = scalar_param(0.7);
        let mut s = SgdState::new(&p, 0.9, 0.0);
        sgd_step(&mut p, &unit_grad(5.0), &mut s, &[0]).unwrap();
        assert_eq!(p[0].value.item(), 0.7);
        let before = s.clone();
        s.lr = 1.0;
        sgd_step(&mut p, &unit_grad(5.0), &mut s, &[]).unwrap();
        assert_eq!(p[0].value.item(), 0.7);
        assert_eq!(s.momentum, before.momentum);
    }

    #[test]
    fn grad_shape_mismatch_errors() {
        let mut p = scalar_param(0.0);
        let mut s = SgdState::new(&p, 0.9, 1.0);
        let g: Gradients<f64> = [(ParamId(0), Tensor::zeros([2]))].into_iter().collect();
        assert!(matches!(sgd_step(&mut p, &g, &mut s, &[0]), Err(Error::Shape { .. })));
        assert!(sgd_step(&mut p, &Gradients::new(), &mut s, &[0]).is_err());
    }
}
