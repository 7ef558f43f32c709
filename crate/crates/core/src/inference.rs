//! Cached autoregressive sampling, trajectory injection and sample export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::student::{forward_step, target_transform, KVCache, StudentConfig, StudentParams};
use crate::teacher::{DatasetHeader, Trajectory, TrajectoryDataset, VPSchedule};
use crate::{par, rng, ArdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Sample with the EMA weights rather than the raw ones.
    pub use_ema: bool,
    pub seed: u64,
    /// Fixed label, or a uniformly drawn label per sample.
    pub class: Option<usize>,
    pub count: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { use_ema: true, seed: 0, class: None, count: 16 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(ArdError::config("sampler.count", "must be at least 1"));
        }
        Ok(())
    }
}

/// Sampled paths `x_{τ_S}, x̂_{τ_{S−1}}, …, x̂_{τ_0}` with their labels and
/// stream seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub trajectories: Vec<Trajectory>,
}

impl SampleBatch {
    pub fn endpoints(&self) -> Vec<&[f32]> {
        self.trajectories.iter().map(Trajectory::endpoint).collect()
    }
}

/// Label and initial noise of stream `index`; matches the draw order used for
/// teacher datasets with the same seed.
pub fn stream_start(
    cfg: &StudentConfig,
    seed: u64,
    index: usize,
    class: Option<usize>,
) -> Result<(usize, Vec<f32>, u64)> {
    let record_seed = rng::stream_seed(seed, index as u64);
    let mut r = rng::rng_from_seed(record_seed);
    let drawn = r.random_range(0..cfg.num_classes);
    let class = class.unwrap_or(drawn);
    if class >= cfg.num_classes {
        return Err(ArdError::UnknownClass(class));
    }
    let x = rng::normal_vec(&mut r, cfg.dim()).into_iter().map(|v| v as f32).collect();
    Ok((class, x, record_seed))
}

/// Runs `s = S..1`. `forced[j]`, when set, replaces the block consumed at
/// sequence position `j` (step `S − j`); position 0 is the initial noise.
pub(crate) fn rollout(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    forced: &[Option<&[f32]>],
    class: usize,
    mut cache: KVCache,
) -> Result<(Vec<Vec<f32>>, KVCache)> {
    let s_total = cfg.steps;
    let first = forced.first().copied().flatten().ok_or_else(|| ArdError::dim("rollout needs an initial state"))?;
    let mut states = Vec::with_capacity(s_total + 1);
    states.push(first.to_vec());
    for j in 0..s_total {
        let s = s_total - j;
        if let Some(Some(x)) = forced.get(j) {
            if x.len() != cfg.dim() {
                return Err(ArdError::dim(format!("forced state of length {}, expected {}", x.len(), cfg.dim())));
            }
            states[j] = x.to_vec();
        }
        let x_s = &states[j];
        let out = forward_step(params, cfg, x_s, s, &mut cache, class)?;
        let next = target_transform(cfg, sched, &out, x_s, s)?;
        states.push(next);
    }
    Ok((states, cache))
}

/// Student path from a given initial noise.
pub fn sample_from_noise(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    x_t: &[f32],
    class: usize,
) -> Result<Vec<Vec<f32>>> {
    Ok(rollout(params, cfg, sched, &[Some(x_t)], class, KVCache::new(cfg))?.0)
}

fn check(params: &StudentParams, cfg: &StudentConfig, scfg: &SamplerConfig) -> Result<()> {
    cfg.validate()?;
    scfg.validate()?;
    params.check(cfg)
}

/// Draws `count` samples: `x_{τ_S} ~ N(0, I)`, then one cached
/// [`forward_step`] per step, each prediction becoming the next input.
pub fn sample(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    scfg: &SamplerConfig,
) -> Result<SampleBatch> {
    sample_with_cache(params, cfg, sched, scfg, true)
}

/// As [`sample`]; with `cache_enabled == false` no history is stored or read.
pub fn sample_with_cache(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    scfg: &SamplerConfig,
    cache_enabled: bool,
) -> Result<SampleBatch> {
    check(params, cfg, scfg)?;
    let parts = par::map_indexed(scfg.count, |i| -> Result<Trajectory> {
        let (class, x, seed) = stream_start(cfg, scfg.seed, i, scfg.class)?;
        let cache = if cache_enabled { KVCache::new(cfg) } else { KVCache::disabled(cfg) };
        let (states, _) = rollout(params, cfg, sched, &[Some(&x)], class, cache)?;
        Ok(Trajectory { states, class_label: class, cfg_scale: 0.0, seed })
    });
    Ok(SampleBatch { trajectories: parts.into_iter().collect::<Result<_>>()? })
}

/// Samples as usual but feeds `source` in place of the block consumed at
/// step `s_inject`. Blocks before the injection, and their cached keys and
/// values, are the model's own.
pub fn manipulate(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    source: &[f32],
    s_inject: usize,
    scfg: &SamplerConfig,
) -> Result<SampleBatch> {
    check(params, cfg, scfg)?;
    if s_inject == 0 || s_inject >= cfg.steps {
        return Err(ArdError::Range {
            what: "injection step",
            detail: format!("{s_inject} not in 1..={}", cfg.steps.saturating_sub(1)),
        });
    }
    if source.len() != cfg.dim() {
        return Err(ArdError::dim(format!("source of length {}, expected {}", source.len(), cfg.dim())));
    }
    let parts = par::map_indexed(scfg.count, |i| -> Result<Trajectory> {
        let (class, x, seed) = stream_start(cfg, scfg.seed, i, scfg.class)?;
        let mut forced: Vec<Option<&[f32]>> = vec![None; cfg.steps];
        forced[0] = Some(&x);
        forced[cfg.steps - s_inject] = Some(source);
        let (states, _) = rollout(params, cfg, sched, &forced, class, KVCache::new(cfg))?;
        Ok(Trajectory { states, class_label: class, cfg_scale: 0.0, seed })
    });
    Ok(SampleBatch { trajectories: parts.into_iter().collect::<Result<_>>()? })
}

/// Packs samples into the trajectory-dataset format.
pub fn to_dataset(
    batch: &SampleBatch,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    teacher_hash: u64,
) -> TrajectoryDataset {
    TrajectoryDataset {
        header: DatasetHeader {
            dim: cfg.dim(),
            steps: cfg.steps,
            count: batch.trajectories.len() as u64,
            cfg_scale: 0.0,
            beta_min: sched.beta_min as f32,
            beta_max: sched.beta_max as f32,
            teacher_hash,
        },
        trajectories: batch.trajectories.clone(),
    }
}

/// Binary greyscale PGM (P5) of a `(C, H, W)` state, channels stacked
/// vertically, values in `[-1, 1]` mapped to `0..=255`.
pub fn write_pgm(path: &Path, image: (usize, usize, usize), x: &[f32]) -> Result<()> {
    let (c, h, w) = image;
    if x.len() != c * h * w {
        return Err(ArdError::dim(format!("image of length {}, expected {}", x.len(), c * h * w)));
    }
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{w} {}\n255\n", c * h)?;
    let bytes: Vec<u8> = x.iter().map(|&v| (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8).collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}
