use super::{allowed_steps, MaskOption, StudentConfig};
use crate::tensor::{Real, Tensor};
use crate::{ArdError, Result};

#[derive(Clone, Debug)]
pub(crate) struct CachedBlock<T: Real> {
    pub step: usize,
    pub keys: Tensor<T>,
    pub values: Tensor<T>,
}

/// Keys and values of already consumed trajectory states, held only for the
/// history-aware layers (`layer < n_history`).
///
/// Retention follows the mask option: M4 keeps every block, M2 only the most
/// recent one, M3 only the initial noise and M1 nothing.
#[derive(Clone, Debug)]
pub struct KVCache<T: Real = f32> {
    steps: usize,
    layers: usize,
    n_history: usize,
    option: MaskOption,
    next_step: usize,
    enabled: bool,
    entries: Vec<Vec<CachedBlock<T>>>,
    rows_read: Vec<usize>,
}

impl<T: Real> KVCache<T> {
    pub fn new(cfg: &StudentConfig) -> Self {
        KVCache {
            steps: cfg.steps,
            layers: cfg.layers,
            n_history: cfg.n_history,
            option: cfg.mask,
            next_step: cfg.steps,
            enabled: true,
            entries: vec![Vec::new(); cfg.layers],
            rows_read: vec![0; cfg.layers],
        }
    }

    /// A cache that never stores or returns anything.
    pub fn disabled(cfg: &StudentConfig) -> Self {
        KVCache { enabled: false, ..Self::new(cfg) }
    }

    /// Step the next [`forward_step`](super::forward_step) call must use.
    pub fn next_step(&self) -> usize {
        self.next_step
    }

    /// Cached key rows currently held at `layer`.
    pub fn key_len(&self, layer: usize) -> usize {
        self.entries[layer].iter().map(|b| b.keys.shape()[0]).sum()
    }

    /// Cached key rows read at `layer` over the cache's lifetime.
    pub fn rows_read(&self, layer: usize) -> usize {
        self.rows_read[layer]
    }

    pub(crate) fn check(&self, cfg: &StudentConfig, s: usize) -> Result<()> {
        if cfg.steps != self.steps
            || cfg.layers != self.layers
            || cfg.n_history != self.n_history
            || cfg.mask != self.option
        {
            return Err(ArdError::CacheState("cache was built for a different configuration".into()));
        }
        if s != self.next_step {
            return Err(ArdError::CacheState(format!(
                "cache holds blocks {}..={} and expects step {}, got step {s}",
                self.next_step + 1,
                self.steps,
                self.next_step
            )));
        }
        Ok(())
    }

    /// Cached blocks the query at step `s` may read at `layer`, in sequence
    /// order. Counts the rows as read.
    pub(crate) fn history(&mut self, layer: usize, s: usize) -> Vec<CachedBlock<T>> {
        if !self.enabled || layer >= self.n_history {
            return Vec::new();
        }
        let allowed = allowed_steps(self.option, self.steps, s);
        let out: Vec<CachedBlock<T>> =
            self.entries[layer].iter().filter(|b| b.step != s && allowed.contains(&b.step)).cloned().collect();
        self.rows_read[layer] += out.iter().map(|b| b.keys.shape()[0]).sum::<usize>();
        out
    }

    pub(crate) fn store(&mut self, layer: usize, s: usize, keys: Tensor<T>, values: Tensor<T>) {
        if !self.enabled || layer >= self.n_history {
            return;
        }
        let block = CachedBlock { step: s, keys, values };
        let e = &mut self.entries[layer];
        match self.option {
            MaskOption::M1 => {}
            MaskOption::M2 => {
                e.clear();
                e.push(block);
            }
            MaskOption::M3 => {
                if s == self.steps {
                    e.push(block);
                }
            }
            MaskOption::M4 => e.push(block),
        }
    }

    pub(crate) fn advance(&mut self) {
        self.next_step = self.next_step.saturating_sub(1);
    }
}
