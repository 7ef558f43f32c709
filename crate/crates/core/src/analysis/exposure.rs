use serde::Serialize;

use crate::inference::rollout;
use crate::student::{KVCache, StudentConfig, StudentParams};
use crate::teacher::{GaussianMixtureTeacher, Trajectory, VPSchedule};
use crate::{par, rng, ArdError, Result};

use super::mmd::{median_distance, mmd2};

/// Mean per-element squared deviation from the teacher path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExposureCurve {
    /// Teacher-solved prefix length.
    pub k: usize,
    /// Indexed by `s = 0..=S`.
    pub per_step: Vec<f64>,
    pub endpoint: f64,
}

fn mse(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

fn check_trajectories(cfg: &StudentConfig, trajs: &[Trajectory]) -> Result<()> {
    if trajs.is_empty() {
        return Err(ArdError::dim("no trajectories"));
    }
    for t in trajs {
        if t.steps() != cfg.steps || t.endpoint().len() != cfg.dim() {
            return Err(ArdError::dim(format!(
                "trajectory with S = {} and D = {}, config S = {} and D = {}",
                t.steps(),
                t.endpoint().len(),
                cfg.steps,
                cfg.dim()
            )));
        }
    }
    Ok(())
}

/// Student paths where the first `k` steps are taken by the teacher: the
/// blocks at steps `S, …, S−k` are ground truth, the rest are the
/// student's own predictions.
pub fn exposure_paths(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    trajs: &[Trajectory],
    k: usize,
) -> Result<Vec<Vec<Vec<f32>>>> {
    if k >= cfg.steps {
        return Err(ArdError::Range {
            what: "teacher-solved prefix",
            detail: format!("{k} not in 0..={}", cfg.steps - 1),
        });
    }
    check_trajectories(cfg, trajs)?;
    par::map_indexed(trajs.len(), |i| {
        let t = &trajs[i];
        let forced: Vec<Option<&[f32]>> = (0..=k).map(|j| Some(t.states[j].as_slice())).collect();
        rollout(params, cfg, sched, &forced, t.class_label, KVCache::new(cfg)).map(|(s, _)| s)
    })
    .into_iter()
    .collect()
}

/// Per-step error curve for a teacher-solved prefix of length `k`.
pub fn exposure_harness(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    trajs: &[Trajectory],
    k: usize,
) -> Result<ExposureCurve> {
    let paths = exposure_paths(params, cfg, sched, trajs, k)?;
    Ok(curve(cfg, &paths, trajs, k))
}

fn curve(cfg: &StudentConfig, paths: &[Vec<Vec<f32>>], trajs: &[Trajectory], k: usize) -> ExposureCurve {
    let s_total = cfg.steps;
    let mut per_step = vec![0.0; s_total + 1];
    for (p, t) in paths.iter().zip(trajs) {
        for (j, (a, b)) in p.iter().zip(&t.states).enumerate() {
            per_step[s_total - j] += mse(a, b);
        }
    }
    per_step.iter_mut().for_each(|v| *v /= trajs.len() as f64);
    ExposureCurve { k, endpoint: per_step[0], per_step }
}

/// Desk-scale fidelity metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// Mean per-element squared distance between student and teacher
    /// endpoints from the same noise and label.
    pub endpoint_mse: f64,
    /// Unbiased MMD² between student endpoints and label-matched data draws.
    pub mmd2: f64,
    pub bandwidth: f64,
    /// Deviation from the teacher path per step `s = 0..=S`.
    pub per_step: Vec<f64>,
}

/// Label-matched draws from the clean data distribution, one per trajectory.
pub fn reference_samples(teacher: &GaussianMixtureTeacher, trajs: &[Trajectory], seed: u64) -> Result<Vec<Vec<f64>>> {
    par::map_indexed(trajs.len(), |i| {
        let mut r = rng::stream_rng(seed, i as u64);
        teacher.sample_data(&mut r, Some(trajs[i].class_label))
    })
    .into_iter()
    .collect()
}

/// Median-distance bandwidth of a reference set.
pub fn reference_bandwidth(reference: &[Vec<f64>]) -> f64 {
    median_distance(reference).max(1e-12)
}

/// Samples the student from each held-out trajectory's noise and label and
/// scores the endpoints against the teacher coupling and against `reference`.
pub fn evaluate(
    params: &StudentParams,
    cfg: &StudentConfig,
    sched: &VPSchedule,
    held_out: &[Trajectory],
    reference: &[Vec<f64>],
    bandwidth: Option<f64>,
) -> Result<MetricReport> {
    let paths = exposure_paths(params, cfg, sched, held_out, 0)?;
    let curve = curve(cfg, &paths, held_out, 0);
    let ends: Vec<Vec<f64>> =
        paths.iter().map(|p| p.last().expect("path").iter().map(|&v| v as f64).collect()).collect();
    let h = bandwidth.unwrap_or_else(|| reference_bandwidth(reference));
    Ok(MetricReport {
        endpoint_mse: curve.endpoint,
        mmd2: mmd2(&ends, reference, Some(h))?,
        bandwidth: h,
        per_step: curve.per_step,
    })
}
