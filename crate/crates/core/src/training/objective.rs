use crate::student::{unpatchify, Layout, StudentConfig, StudentParams};
use crate::tensor::{Real, Tape, Tensor};
use crate::{par, ArdError, Result};

use super::disc::{adaptive_balance, Discriminator};
use super::loss::{accumulate, sample_graph, scale_all, step_values, zeros_like, Example, LossGrad};

/// Generator-side gradients for one batch.
#[derive(Clone, Debug)]
pub struct GeneratorGrad<T: Real = f32> {
    /// Regression loss and gradient.
    pub reg: LossGrad<T>,
    /// `−mean D(x̂_{τ_0})`; zero without a discriminator.
    pub g_loss: f64,
    pub adv_grads: Vec<Tensor<T>>,
    pub lambda: f64,
    /// `∇ regression + λ ∇ g_loss`.
    pub total: Vec<Tensor<T>>,
    /// Final predictions `x̂_{τ_0}` in image layout, one per example.
    pub fakes: Vec<Vec<T>>,
}

/// Norm of the output-head part of a gradient.
pub fn head_grad_norm<T: Real>(cfg: &StudentConfig, grads: &[Tensor<T>]) -> f64 {
    let l = Layout::new(cfg);
    (grads[l.head_w].sum_sq() + grads[l.head_b].sum_sq()).sqrt()
}

/// Regression gradient plus, when a discriminator is given, the adaptively
/// balanced adversarial gradient on the final prediction.
pub fn generator_grad<T: Real>(
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    batch: &[Example],
    disc: Option<&Discriminator<T>>,
) -> Result<GeneratorGrad<T>> {
    if batch.is_empty() {
        return Err(ArdError::dim("empty batch"));
    }
    type Part<T> = (f64, Vec<f64>, Vec<Tensor<T>>, f64, Option<Vec<Tensor<T>>>, Vec<T>);
    let tok = cfg.tokens();
    let parts = par::map_indexed(batch.len(), |i| -> Result<Part<T>> {
        let mut tape = Tape::new();
        let g = sample_graph(&mut tape, params, cfg, &batch[i], true)?;
        let last = tape.slice_rows(g.pred, (cfg.steps - 1) * tok, cfg.steps * tok)?;
        let fake = unpatchify(cfg, tape.value(last).data())?;
        let adv = match disc {
            Some(d) => {
                let dv = d.load(&mut tape, false)?;
                let logit = d.logit(&mut tape, &dv, last, batch[i].class)?;
                Some(tape.scale(logit, -T::one())?)
            }
            None => None,
        };
        let loss = tape.value(g.loss).item().as_f64();
        let steps = step_values(&tape, &g);
        let reg = tape.backward(g.loss)?;
        let reg: Vec<Tensor<T>> = g.params.iter().map(|&v| reg.get(v)).collect();
        let (gl, ag) = match adv {
            Some(a) => {
                let v = tape.value(a).item().as_f64();
                let ga = tape.backward(a)?;
                (v, Some(g.params.iter().map(|&p| ga.get(p)).collect()))
            }
            None => (0.0, None),
        };
        Ok((loss, steps, reg, gl, ag, fake))
    });
    let mut reg_total = zeros_like(&params.tensors);
    let mut adv_total = zeros_like(&params.tensors);
    let mut loss = 0.0;
    let mut g_loss = 0.0;
    let mut per_step = vec![0.0; cfg.steps];
    let mut fakes = Vec::with_capacity(batch.len());
    for p in parts {
        let (l, st, rg, gl, ag, fake) = p?;
        loss += l;
        g_loss += gl;
        for (a, b) in per_step.iter_mut().zip(st) {
            *a += b;
        }
        accumulate(&mut reg_total, &rg);
        if let Some(ag) = ag {
            accumulate(&mut adv_total, &ag);
        }
        fakes.push(fake);
    }
    let inv = 1.0 / batch.len() as f64;
    scale_all(&mut reg_total, inv);
    scale_all(&mut adv_total, inv);
    per_step.iter_mut().for_each(|v| *v *= inv);
    let lambda = if disc.is_some() {
        adaptive_balance(head_grad_norm(cfg, &reg_total), head_grad_norm(cfg, &adv_total))
    } else {
        0.0
    };
    let mut total = reg_total.clone();
    if disc.is_some() {
        let mut scaled = adv_total.clone();
        scale_all(&mut scaled, lambda);
        accumulate(&mut total, &scaled);
    }
    Ok(GeneratorGrad {
        reg: LossGrad { loss: loss * inv, per_step, grads: reg_total },
        g_loss: g_loss * inv,
        adv_grads: adv_total,
        lambda,
        total,
        fakes,
    })
}

/// `regression + λ·g_loss` at fixed `λ`, value only.
pub fn generator_objective<T: Real>(
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    batch: &[Example],
    disc: &Discriminator<T>,
    lambda: f64,
) -> Result<f64> {
    let tok = cfg.tokens();
    let parts = par::map_indexed(batch.len(), |i| -> Result<f64> {
        let mut tape = Tape::new();
        let g = sample_graph(&mut tape, params, cfg, &batch[i], false)?;
        let last = tape.slice_rows(g.pred, (cfg.steps - 1) * tok, cfg.steps * tok)?;
        let dv = disc.load(&mut tape, false)?;
        let logit = disc.logit(&mut tape, &dv, last, batch[i].class)?;
        Ok(tape.value(g.loss).item().as_f64() - lambda * tape.value(logit).item().as_f64())
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / batch.len() as f64)
}
