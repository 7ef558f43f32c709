use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::StudentConfig;
use crate::tensor::{read_checkpoint, write_checkpoint, Checkpoint, Real, Tensor};
use crate::{rng, ArdError, Result};

/// Indices of one transformer block's tensors inside [`StudentParams`].
#[derive(Clone, Copy, Debug)]
pub struct LayerLayout {
    pub ada_w: usize,
    pub ada_b: usize,
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub mlp1_w: usize,
    pub mlp1_b: usize,
    pub mlp2_w: usize,
    pub mlp2_b: usize,
}

/// Positions of every named tensor; one parameter set is shared by all
/// trajectory steps.
#[derive(Clone, Debug)]
pub struct Layout {
    pub patch_w: usize,
    pub patch_b: usize,
    pub pos: usize,
    pub time: usize,
    pub class_emb: usize,
    pub step_emb: usize,
    pub layers: Vec<LayerLayout>,
    pub final_ada_w: usize,
    pub final_ada_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    specs: Vec<(String, Vec<usize>, Init)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zero,
}

impl Layout {
    pub fn new(cfg: &StudentConfig) -> Self {
        let d = cfg.d_model;
        let pd = cfg.patch_dim();
        let hidden = cfg.mlp_ratio * d;
        let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            specs.push((name, shape, init));
            specs.len() - 1
        };
        let patch_w = add("patch.w".into(), vec![pd, d], Init::Normal);
        let patch_b = add("patch.b".into(), vec![d], Init::Zero);
        let pos = add("pos".into(), vec![cfg.tokens(), d], Init::Normal);
        let time = add("time".into(), vec![cfg.steps + 1, d], Init::Normal);
        let class_emb = add("class_emb".into(), vec![cfg.num_classes, d], Init::Normal);
        let step_emb = add("step_emb".into(), vec![cfg.steps + 1, d], Init::Normal);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            layers.push(LayerLayout {
                ada_w: add(p("ada.w"), vec![d, 6 * d], Init::Normal),
                ada_b: add(p("ada.b"), vec![6 * d], Init::Zero),
                qkv_w: add(p("qkv.w"), vec![d, 3 * d], Init::Normal),
                qkv_b: add(p("qkv.b"), vec![3 * d], Init::Zero),
                proj_w: add(p("proj.w"), vec![d, d], Init::Normal),
                proj_b: add(p("proj.b"), vec![d], Init::Zero),
                mlp1_w: add(p("mlp1.w"), vec![d, hidden], Init::Normal),
                mlp1_b: add(p("mlp1.b"), vec![hidden], Init::Zero),
                mlp2_w: add(p("mlp2.w"), vec![hidden, d], Init::Normal),
                mlp2_b: add(p("mlp2.b"), vec![d], Init::Zero),
            });
        }
        let final_ada_w = add("final.ada.w".into(), vec![d, 2 * d], Init::Normal);
        let final_ada_b = add("final.ada.b".into(), vec![2 * d], Init::Zero);
        let head_w = add("head.w".into(), vec![d, pd], Init::Zero);
        let head_b = add("head.b".into(), vec![pd], Init::Zero);
        Layout {
            patch_w,
            patch_b,
            pos,
            time,
            class_emb,
            step_emb,
            layers,
            final_ada_w,
            final_ada_b,
            head_w,
            head_b,
            specs,
        }
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.specs[i].0
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.specs[i].1
    }
}

/// Student weights in layout order.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentParams<T: Real = f32> {
    pub tensors: Vec<Tensor<T>>,
}

fn trunc_normal(r: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(r);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl<T: Real> StudentParams<T> {
    /// Truncated-normal (std 0.02) weights and embeddings, zero biases and a
    /// zero output head, so a fresh student maps every input to itself.
    pub fn init(cfg: &StudentConfig, seed: u64) -> Self {
        let layout = Layout::new(cfg);
        let mut r = rng::rng_from_seed(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|(_, shape, init)| match init {
                Init::Zero => Tensor::zeros(shape),
                Init::Normal => Tensor::from_fn(shape, |_| T::of(trunc_normal(&mut r, 0.02))),
            })
            .collect();
        StudentParams { tensors }
    }

    /// Every tensor (head and biases included) drawn from `N(0, std²)`; used
    /// to exercise code paths that a zero head would hide.
    pub fn random(cfg: &StudentConfig, seed: u64, std: f64) -> Self {
        let layout = Layout::new(cfg);
        let mut r = rng::rng_from_seed(seed);
        let tensors = layout
            .specs
            .iter()
            .map(|(_, shape, _)| {
                Tensor::from_fn(shape, |_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    T::of(z * std)
                })
            })
            .collect();
        StudentParams { tensors }
    }

    pub fn cast<U: Real>(&self) -> StudentParams<U> {
        StudentParams { tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Checks tensor shapes against `cfg`.
    pub fn check(&self, cfg: &StudentConfig) -> Result<()> {
        let layout = Layout::new(cfg);
        if layout.len() != self.tensors.len() {
            return Err(ArdError::Load(format!(
                "config expects {} tensors, parameters hold {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (i, t) in self.tensors.iter().enumerate() {
            if t.shape() != layout.shape(i) {
                return Err(ArdError::Load(format!(
                    "{}: shape {:?}, config expects {:?}",
                    layout.name(i),
                    t.shape(),
                    layout.shape(i)
                )));
            }
        }
        Ok(())
    }
}

impl StudentParams<f32> {
    pub fn to_checkpoint(&self, cfg: &StudentConfig) -> Checkpoint {
        let layout = Layout::new(cfg);
        self.tensors.iter().enumerate().map(|(i, t)| (layout.name(i).to_string(), t.clone())).collect()
    }

    pub fn from_checkpoint(cfg: &StudentConfig, ck: Checkpoint) -> Result<Self> {
        let layout = Layout::new(cfg);
        if ck.len() != layout.len() {
            return Err(ArdError::Load(format!(
                "checkpoint holds {} tensors, config expects {}",
                ck.len(),
                layout.len()
            )));
        }
        let mut tensors = Vec::with_capacity(ck.len());
        for (i, (name, t)) in ck.into_iter().enumerate() {
            if name != layout.name(i) {
                return Err(ArdError::Load(format!("tensor {i} is '{name}', expected '{}'", layout.name(i))));
            }
            tensors.push(t);
        }
        let p = StudentParams { tensors };
        p.check(cfg)?;
        Ok(p)
    }

    pub fn save(&self, cfg: &StudentConfig, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        write_checkpoint(f, &self.to_checkpoint(cfg))
    }

    pub fn load(cfg: &StudentConfig, path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        Self::from_checkpoint(cfg, read_checkpoint(f)?)
    }
}
