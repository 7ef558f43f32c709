use super::{PredictionTarget, StudentConfig};
use crate::teacher::{TrajectoryGrid, VPSchedule};
use crate::{ArdError, Result};

/// Turns the network output at step `s` into the estimate of `x_{τ_{s−1}}`.
///
/// `NextSample` passes the output through. `PredictedX0` treats it as a clean
/// sample estimate `x̂₀` and applies the deterministic update
/// `α_{τ_{s−1}} x̂₀ + σ_{τ_{s−1}} (x_s − α_{τ_s} x̂₀) / σ_{τ_s}`.
pub fn target_transform(
    cfg: &StudentConfig,
    sched: &VPSchedule,
    output: &[f32],
    x_s: &[f32],
    s: usize,
) -> Result<Vec<f32>> {
    if output.len() != x_s.len() {
        return Err(ArdError::dim(format!("output {} vs state {}", output.len(), x_s.len())));
    }
    if s == 0 || s > cfg.steps {
        return Err(ArdError::Range { what: "step", detail: format!("{s} not in 1..={}", cfg.steps) });
    }
    match cfg.target {
        PredictionTarget::NextSample => Ok(output.to_vec()),
        PredictionTarget::PredictedX0 => {
            let grid = TrajectoryGrid::new(cfg.steps)?;
            let (a, sg) = sched.alpha_sigma(grid.time(sched, s))?;
            let (a_prev, sg_prev) = sched.alpha_sigma(grid.time(sched, s - 1))?;
            if sg == 0.0 {
                return Err(ArdError::Range { what: "step", detail: "query step has zero noise level".into() });
            }
            Ok(output
                .iter()
                .zip(x_s)
                .map(|(&x0, &xs)| {
                    let (x0, xs) = (x0 as f64, xs as f64);
                    (a_prev * x0 + sg_prev * (xs - a * x0) / sg) as f32
                })
                .collect())
        }
    }
}
