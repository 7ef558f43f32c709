use serde::{Deserialize, Serialize};

use super::{GaussianMixtureTeacher, VPSchedule};
use crate::{ArdError, Result};

/// Uniform student grid `τ_s = T·s/S`, `s = 0..=S`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryGrid {
    pub steps: usize,
}

impl TrajectoryGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(ArdError::config("steps", "must be at least 1"));
        }
        Ok(TrajectoryGrid { steps })
    }

    pub fn time(&self, sched: &VPSchedule, s: usize) -> f64 {
        sched.t_max * s as f64 / self.steps as f64
    }
}

/// One teacher ODE path `x_{τ_S}, …, x_{τ_0}` (noise first).
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f32>>,
    pub class_label: usize,
    pub cfg_scale: f32,
    pub seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    /// State at grid index `s` (`s = S` is the noise, `s = 0` the endpoint).
    pub fn at(&self, s: usize) -> &[f32] {
        &self.states[self.steps() - s]
    }

    pub fn endpoint(&self) -> &[f32] {
        self.states.last().expect("trajectory has states")
    }
}

/// Probability-flow drift `f(x,t) − ½ g(t)² s(x,t)` for the VP process,
/// i.e. `−½ β(t) (x + s(x,t))` with `s` the guided score.
pub fn pf_ode_rhs(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    x: &[f64],
    t: f64,
    class: usize,
    w: f64,
) -> Result<Vec<f64>> {
    if !(t > 0.0 && t <= sched.t_max) {
        return Err(ArdError::Range { what: "ode time", detail: format!("{t} not in (0, {}]", sched.t_max) });
    }
    teacher.cfg_score(sched, x, t, class, w)?;
    let subset = teacher.class_components(class)?;
    Ok(rhs(teacher, sched, x, t, subset, w))
}

fn rhs(teacher: &GaussianMixtureTeacher, sched: &VPSchedule, x: &[f64], t: f64, subset: &[usize], w: f64) -> Vec<f64> {
    let s = teacher.cfg_score_unchecked(sched, x, t, subset, w);
    let hb = -0.5 * sched.beta(t);
    x.iter().zip(&s).map(|(&xi, &si)| hb * (xi + si)).collect()
}

/// Integrates the guided PF-ODE from `T` to 0 with Heun's method on
/// `fine_steps` uniform substeps and returns the `S+1` grid states in `f64`.
pub fn solve_states(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    x_t: &[f64],
    grid: TrajectoryGrid,
    class: usize,
    w: f64,
    fine_steps: usize,
) -> Result<Vec<Vec<f64>>> {
    if fine_steps < grid.steps || fine_steps % grid.steps != 0 {
        return Err(ArdError::config(
            "fine_steps",
            format!("{fine_steps} must be a positive multiple of steps = {}", grid.steps),
        ));
    }
    if x_t.len() != teacher.dim() {
        return Err(ArdError::dim(format!(
            "initial state of length {} for a {}-dim teacher",
            x_t.len(),
            teacher.dim()
        )));
    }
    let subset = teacher.class_components(class)?;
    let per_block = fine_steps / grid.steps;
    let h = sched.t_max / fine_steps as f64;
    let mut x = x_t.to_vec();
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(x.clone());
    let mut trial = vec![0.0; x.len()];
    for n in 0..fine_steps {
        // substep n runs from t = T − n h down to T − (n+1) h
        let t0 = sched.t_max * (fine_steps - n) as f64 / fine_steps as f64;
        let t1 = sched.t_max * (fine_steps - n - 1) as f64 / fine_steps as f64;
        let k1 = rhs(teacher, sched, &x, t0, subset, w);
        for i in 0..x.len() {
            trial[i] = x[i] - h * k1[i];
        }
        let k2 = rhs(teacher, sched, &trial, t1, subset, w);
        for i in 0..x.len() {
            x[i] -= 0.5 * h * (k1[i] + k2[i]);
        }
        if (n + 1) % per_block == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Teacher trajectory from `x_t` recorded on the student grid.
#[allow(clippy::too_many_arguments)]
pub fn solve_trajectory(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    x_t: &[f64],
    grid: TrajectoryGrid,
    class: usize,
    w: f64,
    fine_steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let states = solve_states(teacher, sched, x_t, grid, class, w, fine_steps)?;
    Ok(Trajectory {
        states: states.into_iter().map(|s| s.into_iter().map(|v| v as f32).collect()).collect(),
        class_label: class,
        cfg_scale: w as f32,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::{Component, Preset};

    fn single(mean: Vec<f64>, std: f64) -> GaussianMixtureTeacher {
        GaussianMixtureTeacher::new(vec![Component { weight: 1.0, mean, std }], vec![vec![0]]).unwrap()
    }

    #[test]
    fn standard_normal_data_gives_zero_drift_and_constant_paths() {
        let m = single(vec![0.0; 4], 1.0);
        let s = VPSchedule::default();
        let x = [0.5, -0.25, 1.75, -2.0];
        let r = pf_ode_rhs(&m, &s, &x, 0.3, 0, 1.5).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        let traj = solve_trajectory(&m, &s, &x, TrajectoryGrid::new(4).unwrap(), 0, 1.5, 1000, 0).unwrap();
        assert_eq!(traj.states.len(), 5);
        for st in &traj.states {
            for (a, b) in st.iter().zip(&x) {
                assert!((*a as f64 - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn rhs_is_affine_for_single_gaussian() {
        let m = single(vec![0.7, -0.3], 0.4);
        let s = VPSchedule::default();
        let (a, b) = ([0.2, 1.0], [-1.1, 0.4]);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let (ra, rb, rm) = (
            pf_ode_rhs(&m, &s, &a, 0.6, 0, 1.0).unwrap(),
            pf_ode_rhs(&m, &s, &b, 0.6, 0, 1.0).unwrap(),
            pf_ode_rhs(&m, &s, &mid, 0.6, 0, 1.0).unwrap(),
        );
        for i in 0..2 {
            assert!((rm[i] - 0.5 * (ra[i] + rb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn rhs_rejects_data_time() {
        let m = single(vec![0.0], 0.5);
        assert!(pf_ode_rhs(&m, &VPSchedule::default(), &[0.0], 0.0, 0, 1.0).is_err());
    }

    #[test]
    fn fine_steps_must_divide() {
        let m = single(vec![0.0], 0.5);
        let grid = TrajectoryGrid::new(4).unwrap();
        let r = solve_states(&m, &VPSchedule::default(), &[0.0], grid, 0, 1.0, 1001);
        assert!(matches!(r, Err(ArdError::Config { .. })));
        assert!(solve_states(&m, &VPSchedule::default(), &[0.0], grid, 0, 1.0, 2).is_err());
    }

    /// Closed form for N(μ, s²I) data: (x_t − α_t μ)/m_t is constant along
    /// the flow, with m_t² = α_t² s² + σ_t².
    fn closed_form(mean: &[f64], std: f64, sched: &VPSchedule, x_t: &[f64], t: f64) -> Vec<f64> {
        let (a_t, s_t) = sched.alpha_sigma(1.0).unwrap();
        let (a, sg) = sched.alpha_sigma(t).unwrap();
        let m_t = (a_t * a_t * std * std + s_t * s_t).sqrt();
        let m = (a * a * std * std + sg * sg).sqrt();
        mean.iter().zip(x_t).map(|(&mu, &x)| a * mu + m / m_t * (x - a_t * mu)).collect()
    }

    #[test]
    fn heun_endpoint_matches_closed_form() {
        let mean = vec![0.8, -0.4, 1.2];
        let std = 0.5;
        let m = single(mean.clone(), std);
        let s = VPSchedule::default();
        let x_t = [1.3, -0.2, 0.6];
        let grid = TrajectoryGrid::new(4).unwrap();
        let states = solve_states(&m, &s, &x_t, grid, 0, 1.0, 1000).unwrap();
        for (k, st) in states.iter().enumerate() {
            let t = grid.time(&s, 4 - k);
            let exact = closed_form(&mean, std, &s, &x_t, t);
            for (a, b) in st.iter().zip(&exact) {
                assert!((a - b).abs() <= 1e-4, "grid index {k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn heun_converges_at_second_order() {
        let m = Preset::Gmm2d.teacher();
        let s = VPSchedule::default();
        let grid = TrajectoryGrid::new(1).unwrap();
        let x_t = [0.3, -0.7];
        let endpoint = |n| solve_states(&m, &s, &x_t, grid, 1, 1.5, n).unwrap()[1].clone();
        let reference = endpoint(16_000);
        let err = |n| {
            let e: Vec<f64> = endpoint(n);
            e.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let ratio = err(250) / err(500);
        assert!((ratio - 4.0).abs() <= 1.0, "ratio {ratio}");
    }
}
