use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::student::{StudentConfig, StudentParams};
use crate::teacher::{generate_record, GaussianMixtureTeacher, TrajectoryDataset, TrajectoryGrid, VPSchedule};
use crate::tensor::Tensor;
use crate::{rng, ArdError, Result};

use super::disc::{discriminator_grad, DiscBatch, Discriminator};
use super::loss::Example;
use super::objective::generator_grad;
use super::optim::{clip_global_norm, Adam, EmaParams};

/// Learning-rate schedule over the iteration budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last iteration.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub ema_decay: f64,
    pub use_discriminator: bool,
    pub disc_learning_rate: f64,
    /// Feed the class label to the discriminator.
    pub disc_conditional: bool,
    pub seed: u64,
    /// Metrics row every `log_every` iterations.
    pub log_every: usize,
    /// Checkpoint every `checkpoint_every` iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            lr_schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            grad_clip: 1.0,
            batch_size: 32,
            iterations: 1000,
            ema_decay: 0.9999,
            use_discriminator: false,
            disc_learning_rate: 1e-4,
            disc_conditional: false,
            seed: 0,
            log_every: 10,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Learning rate used at iteration `iter` (1-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = (iter - 1) as f64 / self.iterations as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(ArdError::config("ema_decay", format!("{} not in (0, 1)", self.ema_decay)));
        }
        if !(self.grad_clip > 0.0) {
            return Err(ArdError::config("grad_clip", "must be positive"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(ArdError::config("learning_rate", "must be positive and finite"));
        }
        if self.use_discriminator && !(self.disc_learning_rate > 0.0) {
            return Err(ArdError::config("disc_learning_rate", "must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(ArdError::config("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(ArdError::config("batch_size", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(ArdError::config("iterations", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(ArdError::config("log_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Where training trajectories come from.
#[derive(Clone, Copy, Debug)]
pub enum DataSource<'a> {
    /// Pre-computed trajectories, sampled with replacement.
    Offline(&'a TrajectoryDataset),
    /// Fresh teacher trajectories solved for every batch.
    Online { cfg_scale: f64, fine_steps: usize },
}

/// Teacher and data handed to [`train`].
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub teacher: &'a GaussianMixtureTeacher,
    pub sched: &'a VPSchedule,
    pub source: DataSource<'a>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iter: usize,
    pub loss: f64,
    /// Indexed by `s − 1`.
    pub per_step: Vec<f64>,
    pub grad_norm: f64,
    pub lambda: f64,
    pub seconds: f64,
}

pub fn metrics_header(steps: usize) -> String {
    let mut h = String::from("iter,loss");
    for s in 1..=steps {
        h.push_str(&format!(",loss_s{s}"));
    }
    h.push_str(",grad_norm,lambda,seconds");
    h
}

impl MetricRow {
    pub fn csv(&self) -> String {
        let mut r = format!("{},{:.8e}", self.iter, self.loss);
        for v in &self.per_step {
            r.push_str(&format!(",{v:.8e}"));
        }
        r.push_str(&format!(",{:.8e},{:.8e},{:.3}", self.grad_norm, self.lambda, self.seconds));
        r
    }
}

pub struct TrainOutcome {
    pub params: StudentParams,
    pub ema: EmaParams,
    pub metrics: Vec<MetricRow>,
    /// Discriminator forward evaluations (0 when disabled).
    pub disc_evaluations: usize,
}

fn draw_batch(cfg: &StudentConfig, tcfg: &TrainConfig, data: &TrainData, iter: usize) -> Result<Vec<Example>> {
    let grid = TrajectoryGrid::new(cfg.steps)?;
    let mut r = rng::stream_rng(tcfg.seed, iter as u64);
    match data.source {
        DataSource::Offline(ds) => (0..tcfg.batch_size)
            .map(|_| {
                let i = r.random_range(0..ds.len());
                Example::from_trajectory(cfg, &ds.trajectories[i], data.teacher, data.sched)
            })
            .collect(),
        DataSource::Online { cfg_scale, fine_steps } => {
            let base = rng::stream_seed(tcfg.seed ^ 0x6f6e_6c69_6e65, iter as u64);
            crate::par::map_indexed(tcfg.batch_size, |b| {
                let t = generate_record(data.teacher, data.sched, grid, cfg_scale, fine_steps, base, b)?;
                Example::from_trajectory(cfg, &t, data.teacher, data.sched)
            })
            .into_iter()
            .collect()
        }
    }
}

fn check_data(cfg: &StudentConfig, data: &TrainData) -> Result<()> {
    if data.teacher.dim() != cfg.dim() {
        return Err(ArdError::config(
            "student.image",
            format!("teacher dimension {} differs from C·H·W = {}", data.teacher.dim(), cfg.dim()),
        ));
    }
    if data.teacher.num_classes() != cfg.num_classes {
        return Err(ArdError::config(
            "student.num_classes",
            format!("teacher has {} classes, student {}", data.teacher.num_classes(), cfg.num_classes),
        ));
    }
    if let DataSource::Offline(ds) = data.source {
        if ds.is_empty() {
            return Err(ArdError::config("dataset", "no trajectories"));
        }
        if ds.header.steps != cfg.steps {
            return Err(ArdError::config(
                "steps",
                format!("dataset S = {}, student S = {}", ds.header.steps, cfg.steps),
            ));
        }
        if ds.header.dim != cfg.dim() {
            return Err(ArdError::config(
                "student.image",
                format!("dataset D = {}, C·H·W = {}", ds.header.dim, cfg.dim()),
            ));
        }
    }
    Ok(())
}

fn save_checkpoints(dir: &Path, cfg: &StudentConfig, iter: usize, p: &StudentParams, e: &EmaParams) -> Result<()> {
    p.save(cfg, &dir.join(format!("step_{iter}.ardw")))?;
    e.shadow.save(cfg, &dir.join(format!("ema_{iter}.ardw")))
}

/// Distils the teacher into a fresh student.
///
/// Each iteration draws a batch deterministically from `(seed, iteration)`,
/// takes one clipped Adam step on the regression (plus balanced adversarial)
/// objective and updates the EMA. With `out_dir`, metrics are appended to
/// `metrics.csv` every `log_every` iterations and checkpoints are written as
/// `step_{iter}.ardw` / `ema_{iter}.ardw`.
pub fn train(
    cfg: &StudentConfig,
    tcfg: &TrainConfig,
    data: &TrainData,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    train_from(StudentParams::init(cfg, tcfg.seed), cfg, tcfg, data, out_dir)
}

/// As [`train`], starting from `params`.
pub fn train_from(
    mut params: StudentParams,
    cfg: &StudentConfig,
    tcfg: &TrainConfig,
    data: &TrainData,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    check_data(cfg, data)?;
    params.check(cfg)?;
    let start = Instant::now();
    let mut opt = Adam::new(&params.tensors, tcfg.learning_rate, tcfg.weight_decay);
    let mut ema = EmaParams::new(&params, tcfg.ema_decay);
    let mut disc = tcfg
        .use_discriminator
        .then(|| Discriminator::<f32>::new(cfg, tcfg.disc_conditional, rng::stream_seed(tcfg.seed, u64::MAX)));
    let mut disc_opt = disc.as_ref().map(|d| Adam::new(&d.params, tcfg.disc_learning_rate, 0.0));
    let mut log = match out_dir {
        Some(dir) => {
            let path = dir.join("metrics.csv");
            let mut f = BufWriter::new(File::create(&path)?);
            writeln!(f, "{}", metrics_header(cfg.steps))?;
            f.flush()?;
            Some(path)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    for iter in 1..=tcfg.iterations {
        let batch = draw_batch(cfg, tcfg, data, iter)?;
        let gg = generator_grad(&params, cfg, &batch, disc.as_ref())?;
        if !gg.reg.loss.is_finite() || !gg.g_loss.is_finite() {
            let step = gg.reg.per_step.iter().position(|v| !v.is_finite()).map_or(0, |i| i + 1);
            return Err(ArdError::NonFinite { iteration: iter, step, param_norm: params.norm() });
        }
        let mut grads: Vec<Tensor> = gg.total;
        let grad_norm = clip_global_norm(&mut grads, tcfg.grad_clip);
        if !grad_norm.is_finite() {
            return Err(ArdError::NonFinite { iteration: iter, step: 0, param_norm: params.norm() });
        }
        opt.lr = tcfg.lr_at(iter);
        opt.step(&mut params.tensors, &grads);
        ema.update(&params);

        if let (Some(d), Some(dopt)) = (disc.as_mut(), disc_opt.as_mut()) {
            let mut r = rng::stream_rng(tcfg.seed ^ 0x7265_616c, iter as u64);
            let classes: Vec<usize> = batch.iter().map(|e| e.class).collect();
            let real = classes
                .iter()
                .map(|&c| {
                    let x = data.teacher.sample_data(&mut r, d.conditional.then_some(c))?;
                    Ok(x.into_iter().map(|v| v as f32).collect())
                })
                .collect::<Result<Vec<Vec<f32>>>>()?;
            let (_, mut dg) = discriminator_grad(
                d,
                cfg,
                &DiscBatch { states: &gg.fakes, classes: &classes },
                &DiscBatch { states: &real, classes: &classes },
            )?;
            clip_global_norm(&mut dg, tcfg.grad_clip);
            dopt.step(&mut d.params, &dg);
        }

        if iter % tcfg.log_every == 0 || iter == tcfg.iterations {
            let row = MetricRow {
                iter,
                loss: gg.reg.loss,
                per_step: gg.reg.per_step.clone(),
                grad_norm,
                lambda: gg.lambda,
                seconds: start.elapsed().as_secs_f64(),
            };
            log::debug!("iter {iter} loss {:.6e} grad {:.3e}", row.loss, grad_norm);
            if let Some(path) = log.as_mut() {
                let mut f = OpenOptions::new().append(true).open(&*path)?;
                writeln!(f, "{}", row.csv())?;
            }
            metrics.push(row);
        }
        if let Some(dir) = out_dir {
            let periodic = tcfg.checkpoint_every > 0 && iter % tcfg.checkpoint_every == 0;
            if periodic || iter == tcfg.iterations {
                save_checkpoints(dir, cfg, iter, &params, &ema)?;
            }
        }
    }
    Ok(TrainOutcome { params, ema, metrics, disc_evaluations: disc.as_ref().map_or(0, Discriminator::evaluations) })
}
