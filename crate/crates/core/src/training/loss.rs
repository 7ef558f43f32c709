use crate::student::{forward_train_tape, patchify, MaskOption, PredictionTarget, StudentConfig, StudentParams};
use crate::teacher::{GaussianMixtureTeacher, Trajectory, TrajectoryGrid, VPSchedule};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{par, ArdError, Result};

/// One teacher-forced example. `inputs` are `x_{τ_S}, …, x_{τ_1}` and
/// `targets[j]` is the regression target for the prediction made from
/// `inputs[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
    pub class: usize,
}

impl Example {
    /// Targets are the next trajectory state, or the guided teacher's
    /// predicted clean sample at each input for [`PredictionTarget::PredictedX0`].
    pub fn from_trajectory(
        cfg: &StudentConfig,
        traj: &Trajectory,
        teacher: &GaussianMixtureTeacher,
        sched: &VPSchedule,
    ) -> Result<Self> {
        if traj.steps() != cfg.steps {
            return Err(ArdError::dim(format!("trajectory has S = {}, config S = {}", traj.steps(), cfg.steps)));
        }
        let s_total = cfg.steps;
        let inputs: Vec<Vec<f32>> = traj.states[..s_total].to_vec();
        let targets = match cfg.target {
            PredictionTarget::NextSample => traj.states[1..].to_vec(),
            PredictionTarget::PredictedX0 => {
                let grid = TrajectoryGrid::new(s_total)?;
                inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| {
                        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                        let t = grid.time(sched, s_total - j);
                        let x0 = teacher.predicted_x0(sched, &x, t, traj.class_label, traj.cfg_scale as f64)?;
                        Ok(x0.into_iter().map(|v| v as f32).collect())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Example { inputs, targets, class: traj.class_label })
    }

    fn check(&self, cfg: &StudentConfig) -> Result<()> {
        if self.inputs.len() != cfg.steps || self.targets.len() != cfg.steps {
            return Err(ArdError::dim(format!(
                "example holds {} inputs and {} targets, config S = {}",
                self.inputs.len(),
                self.targets.len(),
                cfg.steps
            )));
        }
        Ok(())
    }
}

/// Per-sample regression graph.
pub(crate) struct SampleGraph {
    pub loss: Var,
    pub step_losses: Vec<Var>,
    pub pred: Var,
    pub params: Vec<Var>,
}

fn cast_vec<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::of(x as f64)).collect()
}

/// Records `mean‖ŷ − y‖²` (over steps and elements) for one example.
pub(crate) fn sample_graph<T: Real>(
    tape: &mut Tape<T>,
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    ex: &Example,
    trainable: bool,
) -> Result<SampleGraph> {
    ex.check(cfg)?;
    let inputs: Vec<Vec<T>> = ex.inputs.iter().map(|v| cast_vec(v)).collect();
    let refs: Vec<&[T]> = inputs.iter().map(Vec::as_slice).collect();
    let (fw, vars) = forward_train_tape(tape, params, cfg, &refs, ex.class, trainable)?;
    let mut flat = Vec::with_capacity(cfg.steps * cfg.dim());
    for t in &ex.targets {
        flat.extend(patchify(cfg, &cast_vec::<T>(t))?);
    }
    let rows = cfg.steps * cfg.tokens();
    let target = tape.constant(&Tensor::new(vec![rows, cfg.patch_dim()], flat)?)?;
    let diff = tape.sub(fw.pred, target)?;
    let sq = tape.mul(diff, diff)?;
    let loss = tape.mean(sq)?;
    let tok = cfg.tokens();
    let step_losses = (0..cfg.steps)
        .map(|j| {
            let blk = tape.slice_rows(sq, j * tok, (j + 1) * tok)?;
            tape.mean(blk)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleGraph { loss, step_losses, pred: fw.pred, params: vars })
}

/// Loss value, per-step losses (index `s − 1`) and the batch-mean gradient.
#[derive(Clone, Debug)]
pub struct LossGrad<T: Real = f32> {
    pub loss: f64,
    pub per_step: Vec<f64>,
    pub grads: Vec<Tensor<T>>,
}

pub(crate) fn step_values<T: Real>(tape: &Tape<T>, g: &SampleGraph) -> Vec<f64> {
    // blocks run S..1; report by s
    let mut v: Vec<f64> = g.step_losses.iter().map(|&l| tape.value(l).item().as_f64()).collect();
    v.reverse();
    v
}

/// Adds `src` into `acc` element-wise.
pub(crate) fn accumulate<T: Real>(acc: &mut [Tensor<T>], src: &[Tensor<T>]) {
    for (a, s) in acc.iter_mut().zip(src) {
        for (x, &y) in a.data_mut().iter_mut().zip(s.data()) {
            *x = *x + y;
        }
    }
}

pub(crate) fn scale_all<T: Real>(ts: &mut [Tensor<T>], c: f64) {
    let c = T::of(c);
    for t in ts {
        for x in t.data_mut() {
            *x = *x * c;
        }
    }
}

pub(crate) fn zeros_like<T: Real>(ts: &[Tensor<T>]) -> Vec<Tensor<T>> {
    ts.iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn check_batch(batch: &[Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(ArdError::dim("empty batch"));
    }
    Ok(())
}

/// Regression loss and its gradient. Per-sample graphs run in parallel;
/// gradients are summed in batch order.
pub fn ard_loss_grad<T: Real>(
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    batch: &[Example],
) -> Result<LossGrad<T>> {
    check_batch(batch)?;
    let parts = par::map_indexed(batch.len(), |i| -> Result<(f64, Vec<f64>, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let g = sample_graph(&mut tape, params, cfg, &batch[i], true)?;
        let loss = tape.value(g.loss).item().as_f64();
        let steps = step_values(&tape, &g);
        let grads = tape.backward(g.loss)?;
        Ok((loss, steps, g.params.iter().map(|&v| grads.get(v)).collect()))
    });
    let mut total = zeros_like(&params.tensors);
    let mut loss = 0.0;
    let mut per_step = vec![0.0; cfg.steps];
    for part in parts {
        let (l, st, g) = part?;
        loss += l;
        for (a, b) in per_step.iter_mut().zip(st) {
            *a += b;
        }
        accumulate(&mut total, &g);
    }
    let inv = 1.0 / batch.len() as f64;
    scale_all(&mut total, inv);
    per_step.iter_mut().for_each(|v| *v *= inv);
    Ok(LossGrad { loss: loss * inv, per_step, grads: total })
}

/// Mean over batch, steps and elements of the squared regression error.
pub fn ard_loss<T: Real>(params: &StudentParams<T>, cfg: &StudentConfig, batch: &[Example]) -> Result<f64> {
    check_batch(batch)?;
    let parts = par::map_indexed(batch.len(), |i| -> Result<f64> {
        let mut tape = Tape::new();
        let g = sample_graph(&mut tape, params, cfg, &batch[i], false)?;
        Ok(tape.value(g.loss).item().as_f64())
    });
    let mut loss = 0.0;
    for p in parts {
        loss += p?;
    }
    Ok(loss / batch.len() as f64)
}

/// Step-distillation baseline: [`ard_loss`] with every layer restricted to
/// the current state.
pub fn step_loss<T: Real>(params: &StudentParams<T>, cfg: &StudentConfig, batch: &[Example]) -> Result<f64> {
    let m1 = StudentConfig { mask: MaskOption::M1, ..cfg.clone() };
    ard_loss(params, &m1, batch)
}

/// Gradient of [`step_loss`].
pub fn step_loss_grad<T: Real>(
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    batch: &[Example],
) -> Result<LossGrad<T>> {
    let m1 = StudentConfig { mask: MaskOption::M1, ..cfg.clone() };
    ard_loss_grad(params, &m1, batch)
}
