use std::sync::atomic::{AtomicUsize, Ordering};

use rand_distr::{Distribution, StandardNormal};

use crate::student::{patchify, StudentConfig};
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{par, rng, ArdError, Result};

use super::loss::{accumulate, scale_all, zeros_like};

pub const DISC_HIDDEN: usize = 64;

/// Token-wise MLP critic over patch tokens: two GELU hidden layers and a
/// scalar logit per token, averaged to one logit per sample. Optionally sees
/// a one-hot class label appended to every token.
#[derive(Debug)]
pub struct Discriminator<T: Real = f32> {
    pub params: Vec<Tensor<T>>,
    pub conditional: bool,
    num_classes: usize,
    evals: AtomicUsize,
}

impl<T: Real> Clone for Discriminator<T> {
    fn clone(&self) -> Self {
        Discriminator {
            params: self.params.clone(),
            conditional: self.conditional,
            num_classes: self.num_classes,
            evals: AtomicUsize::new(self.evaluations()),
        }
    }
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: &StudentConfig, conditional: bool, seed: u64) -> Self {
        let input = cfg.patch_dim() + if conditional { cfg.num_classes } else { 0 };
        let mut r = rng::rng_from_seed(seed);
        let mut dense = |fan_in: usize, fan_out: usize| {
            let std = 1.0 / (fan_in as f64).sqrt();
            let w = Tensor::from_fn(&[fan_in, fan_out], |_| {
                let z: f64 = StandardNormal.sample(&mut r);
                T::of(z * std)
            });
            [w, Tensor::zeros(&[fan_out])]
        };
        let mut params = Vec::with_capacity(6);
        params.extend(dense(input, DISC_HIDDEN));
        params.extend(dense(DISC_HIDDEN, DISC_HIDDEN));
        params.extend(dense(DISC_HIDDEN, 1));
        Discriminator { params, conditional, num_classes: cfg.num_classes, evals: AtomicUsize::new(0) }
    }

    /// Forward evaluations performed so far.
    pub fn evaluations(&self) -> usize {
        self.evals.load(Ordering::Relaxed)
    }

    pub(crate) fn load(&self, tape: &mut Tape<T>, trainable: bool) -> Result<Vec<Var>> {
        self.params.iter().map(|p| tape.leaf(p, trainable)).collect()
    }

    /// Mean token logit `D(x)` for patch tokens `x: [tokens × patch_dim]`.
    pub(crate) fn logit(&self, tape: &mut Tape<T>, vars: &[Var], x: Var, class: usize) -> Result<Var> {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let x = if self.conditional {
            if class >= self.num_classes {
                return Err(ArdError::UnknownClass(class));
            }
            let tokens = tape.shape(x)[0];
            let onehot = Tensor::from_fn(&[tokens, self.num_classes], |i| {
                if i % self.num_classes == class {
                    T::one()
                } else {
                    T::zero()
                }
            });
            let c = tape.constant(&onehot)?;
            tape.concat_cols(&[x, c])?
        } else {
            x
        };
        let mut h = x;
        for k in 0..3 {
            h = tape.matmul(h, vars[2 * k])?;
            h = tape.add(h, vars[2 * k + 1])?;
            if k < 2 {
                h = tape.gelu(h)?;
            }
        }
        tape.mean(h)
    }

    /// `D(x)` for a clean state `x` in image layout.
    pub fn score(&self, cfg: &StudentConfig, x: &[T], class: usize) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.load(&mut tape, false)?;
        let p = tape.constant(&Tensor::new(vec![cfg.tokens(), cfg.patch_dim()], patchify(cfg, x)?)?)?;
        let l = self.logit(&mut tape, &vars, p, class)?;
        Ok(tape.value(l).item().as_f64())
    }
}

/// Hinge losses from per-sample logits:
/// `d = mean relu(1 − D(real)) + mean relu(1 + D(fake))`, `g = −mean D(fake)`.
pub fn hinge_losses(real_logits: &[f64], fake_logits: &[f64]) -> Result<(f64, f64)> {
    if real_logits.is_empty() || fake_logits.is_empty() {
        return Err(ArdError::dim("hinge loss needs non-empty real and fake batches"));
    }
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let d = mean(real_logits, &|x| (1.0 - x).max(0.0)) + mean(fake_logits, &|x| (1.0 + x).max(0.0));
    let g = -mean(fake_logits, &|x| x);
    Ok((d, g))
}

/// A labelled batch of clean states in image layout.
pub struct DiscBatch<'a, T: Real = f32> {
    pub states: &'a [Vec<T>],
    pub classes: &'a [usize],
}

impl<T: Real> DiscBatch<'_, T> {
    fn check(&self) -> Result<()> {
        if self.states.is_empty() || self.states.len() != self.classes.len() {
            return Err(ArdError::dim(format!("{} states with {} labels", self.states.len(), self.classes.len())));
        }
        Ok(())
    }
}

/// `(d_loss, g_loss)` for the student's final predictions against real data.
pub fn discriminator_loss<T: Real>(
    disc: &Discriminator<T>,
    cfg: &StudentConfig,
    fake: &DiscBatch<T>,
    real: &DiscBatch<T>,
) -> Result<(f64, f64)> {
    fake.check()?;
    real.check()?;
    let logits = |b: &DiscBatch<T>| -> Result<Vec<f64>> {
        par::map_indexed(b.states.len(), |i| disc.score(cfg, &b.states[i], b.classes[i])).into_iter().collect()
    };
    hinge_losses(&logits(real)?, &logits(fake)?)
}

/// Discriminator hinge loss and its gradient w.r.t. the discriminator.
pub fn discriminator_grad<T: Real>(
    disc: &Discriminator<T>,
    cfg: &StudentConfig,
    fake: &DiscBatch<T>,
    real: &DiscBatch<T>,
) -> Result<(f64, Vec<Tensor<T>>)> {
    fake.check()?;
    real.check()?;
    let term = |b: &DiscBatch<T>, i: usize, sign: f64| -> Result<(f64, Vec<Tensor<T>>)> {
        let mut tape = Tape::new();
        let vars = disc.load(&mut tape, true)?;
        let x = tape.constant(&Tensor::new(vec![cfg.tokens(), cfg.patch_dim()], patchify(cfg, &b.states[i])?)?)?;
        let d = disc.logit(&mut tape, &vars, x, b.classes[i])?;
        // relu(1 − sign·D)
        let sd = tape.scale(d, T::of(-sign))?;
        let one = tape.constant(&Tensor::scalar(T::one()))?;
        let m = tape.add(sd, one)?;
        let h = tape.relu(m)?;
        let v = tape.value(h).item().as_f64();
        let g = tape.backward(h)?;
        Ok((v, vars.iter().map(|&p| g.get(p)).collect()))
    };
    let nr = real.states.len();
    let nf = fake.states.len();
    let parts = par::map_indexed(nr + nf, |i| if i < nr { term(real, i, 1.0) } else { term(fake, i - nr, -1.0) });
    let mut grads = zeros_like(&disc.params);
    let mut loss = 0.0;
    for (i, p) in parts.into_iter().enumerate() {
        let (v, mut g) = p?;
        let w = if i < nr { 1.0 / nr as f64 } else { 1.0 / nf as f64 };
        loss += v * w;
        scale_all(&mut g, w);
        accumulate(&mut grads, &g);
    }
    Ok((loss, grads))
}

/// Weight of the adversarial term: `g_reg / (g_adv + 1e-4)` clamped to
/// `[0, 1e4]`.
pub fn adaptive_balance(g_reg_grad_norm: f64, g_adv_grad_norm: f64) -> f64 {
    let l = g_reg_grad_norm / (g_adv_grad_norm + 1e-4);
    if l.is_nan() {
        return 0.0;
    }
    l.clamp(0.0, 1e4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> StudentConfig {
        StudentConfig { image: (1, 4, 4), num_classes: 3, ..Default::default() }
    }

    #[test]
    fn hinge_plug_in_values() {
        assert_eq!(hinge_losses(&[0.0, 0.0], &[0.0]).unwrap(), (2.0, 0.0));
        assert_eq!(hinge_losses(&[1.0, 1.5], &[-1.0, -3.0]).unwrap().0, 0.0);
        assert!(hinge_losses(&[], &[0.0]).is_err());
    }

    #[test]
    fn zero_output_layer_gives_neutral_losses() {
        let c = cfg();
        let mut d = Discriminator::<f64>::new(&c, false, 0);
        d.params[4] = Tensor::zeros(&[DISC_HIDDEN, 1]);
        let xs = vec![vec![0.3; 16], vec![-0.2; 16]];
        let b = DiscBatch { states: &xs, classes: &[0, 1] };
        assert_eq!(discriminator_loss(&d, &c, &b, &b).unwrap(), (2.0, 0.0));
        assert_eq!(d.evaluations(), 4);
    }

    #[test]
    fn conditional_logits_depend_on_label() {
        let c = cfg();
        let d = Discriminator::<f32>::new(&c, true, 1);
        let x = vec![0.1f32; 16];
        assert_ne!(d.score(&c, &x, 0).unwrap(), d.score(&c, &x, 2).unwrap());
        assert!(matches!(d.score(&c, &x, 3), Err(ArdError::UnknownClass(3))));
        let u = Discriminator::<f32>::new(&c, false, 1);
        assert_eq!(u.score(&c, &x, 0).unwrap(), u.score(&c, &x, 2).unwrap());
    }

    #[test]
    fn balance_guard_and_ratio() {
        assert_eq!(adaptive_balance(3.0, 0.0), 1e4);
        assert_eq!(adaptive_balance(0.5, 0.0), 5000.0);
        assert!((adaptive_balance(2.0, 2.0) - 1.0).abs() < 1e-4);
        let (a, b) = (adaptive_balance(0.3, 0.7), adaptive_balance(30.0, 70.0));
        assert!((a - b).abs() / b < 1e-3);
        assert_eq!(adaptive_balance(0.0, 0.0), 0.0);
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        let c = cfg();
        let d = Discriminator::<f64>::new(&c, true, 2);
        let real = vec![vec![0.4; 16], (0..16).map(|i| i as f64 / 16.0).collect()];
        let fake = vec![(0..16).map(|i| (i as f64).cos()).collect::<Vec<_>>()];
        let (rb, fb) = (DiscBatch { states: &real, classes: &[0, 2] }, DiscBatch { states: &fake, classes: &[1] });
        let (loss, grads) = discriminator_grad(&d, &c, &fb, &rb).unwrap();
        assert!((loss - discriminator_loss(&d, &c, &fb, &rb).unwrap().0).abs() < 1e-12);
        for (ti, k) in [(0, 5), (1, 3), (2, 100), (4, 7), (5, 0)] {
            let h = 1e-6;
            let mut p = d.clone();
            p.params[ti].data_mut()[k] += h;
            let mut m = d.clone();
            m.params[ti].data_mut()[k] -= h;
            let fd = (discriminator_loss(&p, &c, &fb, &rb).unwrap().0
                - discriminator_loss(&m, &c, &fb, &rb).unwrap().0)
                / (2.0 * h);
            let an = grads[ti].data()[k];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-6), "{ti}[{k}]: {fd} vs {an}");
        }
    }
}
