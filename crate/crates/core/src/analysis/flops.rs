use serde::{Deserialize, Serialize};

use crate::student::{allowed_steps, MaskOption, StudentConfig};
use crate::{ArdError, Result};

/// Transformer dimensions for FLOPs accounting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchDims {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub tokens: usize,
    pub patch: usize,
    pub channels: usize,
    pub mlp_ratio: usize,
}

impl ArchDims {
    /// DiT-XL/2 on a 4×32×32 latent.
    pub const DIT_XL2: ArchDims =
        ArchDims { layers: 28, d_model: 1152, heads: 16, tokens: 256, patch: 2, channels: 4, mlp_ratio: 4 };

    pub fn from_student(cfg: &StudentConfig) -> Self {
        ArchDims {
            layers: cfg.layers,
            d_model: cfg.d_model,
            heads: cfg.heads,
            tokens: cfg.tokens(),
            patch: cfg.patch,
            channels: cfg.image.0,
            mlp_ratio: cfg.mlp_ratio,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "dit-xl2" | "dit-xl/2" => Ok(Self::DIT_XL2),
            other => Err(ArdError::config("arch", format!("unknown architecture '{other}' (known: dit-xl2)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.d_model == 0 || self.tokens == 0 || self.patch == 0 || self.channels == 0 {
            return Err(ArdError::config("arch", "all dimensions must be positive"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(ArdError::config("arch.heads", "must divide d_model"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlopsMode {
    /// `S` cached student steps.
    Student,
    /// `S` teacher solver steps, each with a conditional and an unconditional pass.
    TeacherWithCfg,
    /// One student evaluation.
    Kd,
}

/// Multiply-accumulates of one layer for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LayerFlops {
    /// q, k, v and output projections plus the adaLN modulation.
    pub projections: u64,
    pub attention_scores: u64,
    pub attention_values: u64,
    pub mlp: u64,
    /// Attention against cached history blocks.
    pub kv_extra: u64,
}

impl LayerFlops {
    pub fn total(&self) -> u64 {
        self.projections + self.attention_scores + self.attention_values + self.mlp + self.kv_extra
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepFlops {
    /// Student step index `s` (or solver step for the teacher).
    pub step: usize,
    /// Network evaluations in this step.
    pub evaluations: u64,
    pub layers: Vec<LayerFlops>,
    pub embedding_head: u64,
}

impl StepFlops {
    pub fn total(&self) -> u64 {
        self.layers.iter().map(LayerFlops::total).sum::<u64>() + self.embedding_head
    }
}

/// Per-step, per-layer MAC counts (one FLOP per multiply-accumulate).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopsBreakdown {
    pub steps: Vec<StepFlops>,
}

impl FlopsBreakdown {
    pub fn total(&self) -> u64 {
        self.steps.iter().map(StepFlops::total).sum()
    }

    pub fn kv_extra(&self) -> u64 {
        self.steps.iter().flat_map(|s| &s.layers).map(|l| l.kv_extra).sum()
    }

    pub fn gflops(&self) -> f64 {
        self.total() as f64 / 1e9
    }

    pub fn part_totals(&self) -> LayerFlops {
        let mut t = LayerFlops::default();
        for l in self.steps.iter().flat_map(|s| &s.layers) {
            t.projections += l.projections;
            t.attention_scores += l.attention_scores;
            t.attention_values += l.attention_values;
            t.mlp += l.mlp;
            t.kv_extra += l.kv_extra;
        }
        t
    }
}

fn one_eval(a: &ArchDims) -> (LayerFlops, u64) {
    let (t, d) = (a.tokens as u64, a.d_model as u64);
    let pd = (a.patch * a.patch * a.channels) as u64;
    let layer = LayerFlops {
        projections: 4 * t * d * d + 6 * d * d,
        attention_scores: t * t * d,
        attention_values: t * t * d,
        mlp: 2 * a.mlp_ratio as u64 * t * d * d,
        kv_extra: 0,
    };
    // patch embedding, final modulation, output head
    let embed_head = t * pd * d + 2 * d * d + t * d * pd;
    (layer, embed_head)
}

/// Closed-form MAC count. History attention at step `s` adds
/// `2·T·(h_s·T)·d` per history layer, `h_s` being the number of allowed
/// blocks other than the current one.
pub fn flops_model(
    arch: &ArchDims,
    steps: usize,
    n_history: usize,
    mask: MaskOption,
    mode: FlopsMode,
) -> Result<FlopsBreakdown> {
    arch.validate()?;
    if steps == 0 {
        return Err(ArdError::config("steps", "must be at least 1"));
    }
    if n_history > arch.layers {
        return Err(ArdError::config("n_history", format!("{n_history} exceeds {} layers", arch.layers)));
    }
    let (base, embed_head) = one_eval(arch);
    let (t, d) = (arch.tokens as u64, arch.d_model as u64);
    let scaled = |l: LayerFlops, k: u64| LayerFlops {
        projections: l.projections * k,
        attention_scores: l.attention_scores * k,
        attention_values: l.attention_values * k,
        mlp: l.mlp * k,
        kv_extra: l.kv_extra * k,
    };
    let out = match mode {
        FlopsMode::Kd => {
            vec![StepFlops { step: 1, evaluations: 1, layers: vec![base; arch.layers], embedding_head: embed_head }]
        }
        FlopsMode::TeacherWithCfg => (1..=steps)
            .rev()
            .map(|s| StepFlops {
                step: s,
                evaluations: 2,
                layers: vec![scaled(base, 2); arch.layers],
                embedding_head: 2 * embed_head,
            })
            .collect(),
        FlopsMode::Student => (1..=steps)
            .rev()
            .map(|s| {
                let h = allowed_steps(mask, steps, s).len() as u64 - 1;
                let layers = (0..arch.layers)
                    .map(|l| LayerFlops { kv_extra: if l < n_history { 2 * t * (h * t) * d } else { 0 }, ..base })
                    .collect();
                StepFlops { step: s, evaluations: 1, layers, embedding_head: embed_head }
            })
            .collect(),
    };
    Ok(FlopsBreakdown { steps: out })
}

/// Closed-form parameter count of the student.
pub fn student_param_count(cfg: &StudentConfig) -> usize {
    let (d, pd, t, s, nc, h) =
        (cfg.d_model, cfg.patch_dim(), cfg.tokens(), cfg.steps, cfg.num_classes, cfg.mlp_ratio * cfg.d_model);
    let embed = pd * d + d + t * d + 2 * (s + 1) * d + nc * d;
    let layer = 6 * d * d + 6 * d + 3 * d * d + 3 * d + d * d + d + 2 * d * h + h + d;
    let out = 2 * d * d + 2 * d + d * pd + pd;
    embed + cfg.layers * layer + out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student::StudentParams;

    #[test]
    fn m1_has_no_kv_extra_and_parts_sum() {
        let a = ArchDims::DIT_XL2;
        for n in [0, 6, 28] {
            let f = flops_model(&a, 4, n, MaskOption::M1, FlopsMode::Student).unwrap();
            assert_eq!(f.kv_extra(), 0);
            let p = f.part_totals();
            let emb: u64 = f.steps.iter().map(|s| s.embedding_head).sum();
            assert_eq!(p.total() + emb, f.total());
        }
    }

    #[test]
    fn kv_extra_is_linear_in_n() {
        let a = ArchDims::DIT_XL2;
        for mask in MaskOption::ALL {
            let e = |n| flops_model(&a, 4, n, mask, FlopsMode::Student).unwrap().kv_extra() as i128;
            assert_eq!(e(4) - e(2), e(6) - e(4));
            assert_eq!(e(0), 0);
        }
    }

    #[test]
    fn history_block_counts_per_mask() {
        let a = ArchDims::DIT_XL2;
        let unit = 2 * 256 * 256 * 1152u64;
        let e = |mask, s| flops_model(&a, s, 1, mask, FlopsMode::Student).unwrap().kv_extra();
        assert_eq!(e(MaskOption::M4, 4), 6 * unit);
        assert_eq!(e(MaskOption::M2, 4), 3 * unit);
        assert_eq!(e(MaskOption::M3, 4), 3 * unit);
        assert_eq!(e(MaskOption::M4, 2), unit);
    }

    #[test]
    fn parameter_formula_matches_layout() {
        for cfg in [
            StudentConfig::default(),
            StudentConfig {
                layers: 3,
                d_model: 24,
                heads: 3,
                patch: 4,
                image: (2, 8, 8),
                steps: 6,
                num_classes: 7,
                mlp_ratio: 2,
                ..Default::default()
            },
        ] {
            assert_eq!(student_param_count(&cfg), StudentParams::<f32>::init(&cfg, 0).count());
        }
    }

    #[test]
    fn invalid_dims_rejected() {
        let a = ArchDims { heads: 5, ..ArchDims::DIT_XL2 };
        assert!(flops_model(&a, 4, 2, MaskOption::M4, FlopsMode::Student).is_err());
        assert!(flops_model(&ArchDims::DIT_XL2, 4, 29, MaskOption::M4, FlopsMode::Student).is_err());
        assert!(ArchDims::from_name("vit").is_err());
    }
}
