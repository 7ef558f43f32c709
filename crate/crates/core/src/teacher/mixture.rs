use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::VPSchedule;
use crate::{rng, ArdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Isotropic Gaussian mixture with class-labelled component subsets.
///
/// Under the VP forward process component `k` has marginal
/// `N(α_t μ_k, (α_t² s_k² + σ_t²) I)`, so scores, densities and posterior
/// means are all available in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureTeacher {
    components: Vec<Component>,
    class_map: Vec<Vec<usize>>,
}

/// Per-component quantities at one `(x, t)`, shared by the conditional and
/// unconditional reductions.
struct Terms {
    log_w_density: Vec<f64>,
    inv_var: Vec<f64>,
    alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Four classes of 1×8×8 template images, two components each.
    Blobs8,
    /// Eight 2-D components on a circle, four classes of opposite pairs.
    Gmm2d,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "blobs8" => Ok(Preset::Blobs8),
            "gmm2d" => Ok(Preset::Gmm2d),
            other => Err(ArdError::config("preset", format!("unknown preset '{other}' (blobs8, gmm2d)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Blobs8 => "blobs8",
            Preset::Gmm2d => "gmm2d",
        }
    }

    /// Image layout `(C, H, W)` of one data instance.
    pub fn image(self) -> (usize, usize, usize) {
        match self {
            Preset::Blobs8 => (1, 8, 8),
            Preset::Gmm2d => (2, 1, 1),
        }
    }

    pub fn teacher(self) -> GaussianMixtureTeacher {
        match self {
            Preset::Blobs8 => blobs8(),
            Preset::Gmm2d => gmm2d(),
        }
    }
}

fn blobs8() -> GaussianMixtureTeacher {
    const LO: f64 = -0.8;
    const HI: f64 = 0.8;
    let img = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> { (0..64).map(|i| f(i / 8, i % 8)).collect() };
    let blob = |cy: f64, cx: f64| {
        img(&move |r, c| {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            LO + (HI - LO) * (-d2 / (2.0 * 1.2 * 1.2)).exp()
        })
    };
    let hbar = |r0: usize| img(&move |r, _| if r == r0 || r == r0 + 1 { HI } else { LO });
    let vbar = |c0: usize| img(&move |_, c| if c == c0 || c == c0 + 1 { HI } else { LO });
    let checker = |phase: usize| img(&move |r, c| if (r / 2 + c / 2 + phase) % 2 == 0 { HI } else { LO });
    let means = [blob(2.0, 2.0), blob(5.0, 5.0), hbar(1), hbar(5), checker(0), checker(1), vbar(1), vbar(5)];
    let components = means
        .into_iter()
        .enumerate()
        .map(|(k, mean)| Component { weight: 1.0 / 8.0, mean, std: if k % 2 == 0 { 0.1 } else { 0.15 } })
        .collect();
    GaussianMixtureTeacher::new(components, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]])
        .expect("blobs8 preset is valid")
}

fn gmm2d() -> GaussianMixtureTeacher {
    let components = (0..8)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 8.0;
            Component { weight: 1.0 / 8.0, mean: vec![2.0 * a.cos(), 2.0 * a.sin()], std: 0.15 }
        })
        .collect();
    GaussianMixtureTeacher::new(components, (0..4).map(|c| vec![c, c + 4]).collect()).expect("gmm2d preset is valid")
}

impl GaussianMixtureTeacher {
    pub fn new(components: Vec<Component>, class_map: Vec<Vec<usize>>) -> Result<Self> {
        if components.is_empty() {
            return Err(ArdError::config("teacher.components", "at least one component"));
        }
        let dim = components[0].mean.len();
        if dim == 0 {
            return Err(ArdError::config("teacher.components", "zero-dimensional means"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ArdError::config("teacher.components", format!("weights sum to {total}")));
        }
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(ArdError::config(
                    "teacher.components",
                    format!("component {k} has dimension {}", c.mean.len()),
                ));
            }
            if !(c.std > 0.0) || !(c.weight >= 0.0) {
                return Err(ArdError::config(
                    "teacher.components",
                    format!("component {k} needs std > 0 and weight >= 0"),
                ));
            }
        }
        if class_map.is_empty() {
            return Err(ArdError::config("teacher.class_map", "at least one class"));
        }
        for (c, subset) in class_map.iter().enumerate() {
            if subset.is_empty() {
                return Err(ArdError::config("teacher.class_map", format!("class {c} is empty")));
            }
            if let Some(&k) = subset.iter().find(|&&k| k >= components.len()) {
                return Err(ArdError::config("teacher.class_map", format!("class {c} names component {k}")));
            }
            if subset.iter().map(|&k| components[k].weight).sum::<f64>() <= 0.0 {
                return Err(ArdError::config("teacher.class_map", format!("class {c} has zero mass")));
            }
        }
        Ok(GaussianMixtureTeacher { components, class_map })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Component indices of every class.
    pub fn class_map(&self) -> &[Vec<usize>] {
        &self.class_map
    }

    pub fn class_components(&self, class: usize) -> Result<&[usize]> {
        self.class_map.get(class).map(Vec::as_slice).ok_or(ArdError::UnknownClass(class))
    }

    /// Content hash identifying this mixture in dataset headers.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.components.len() as u64).to_le_bytes());
        for c in &self.components {
            h.update(c.weight.to_le_bytes());
            h.update(c.std.to_le_bytes());
            for &m in &c.mean {
                h.update(m.to_le_bytes());
            }
        }
        for subset in &self.class_map {
            h.update((subset.len() as u64).to_le_bytes());
            for &k in subset {
                h.update((k as u64).to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    fn check_input(&self, sched: &VPSchedule, x: &[f64], t: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(ArdError::dim(format!("state of length {} for a {}-dim teacher", x.len(), self.dim())));
        }
        sched.alpha_sigma(t)?;
        Ok(())
    }

    fn terms(&self, sched: &VPSchedule, x: &[f64], t: f64) -> Terms {
        let (alpha, sigma) = sched.alpha_sigma_unchecked(t);
        let d = x.len() as f64;
        let x2: f64 = x.iter().map(|v| v * v).sum();
        let mut log_w_density = Vec::with_capacity(self.components.len());
        let mut inv_var = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let var = alpha * alpha * c.std * c.std + sigma * sigma;
            let xm: f64 = x.iter().zip(&c.mean).map(|(a, b)| a * b).sum();
            let m2: f64 = c.mean.iter().map(|v| v * v).sum();
            let dist2 = (x2 - 2.0 * alpha * xm + alpha * alpha * m2).max(0.0);
            log_w_density.push(c.weight.ln() - 0.5 * dist2 / var - 0.5 * d * (std::f64::consts::TAU * var).ln());
            inv_var.push(1.0 / var);
        }
        Terms { log_w_density, inv_var, alpha }
    }

    /// Score of the mixture restricted to `subset` (all components if `None`).
    fn reduce(&self, terms: &Terms, x: &[f64], subset: Option<&[usize]>) -> Vec<f64> {
        let all: Vec<usize>;
        let idx = match subset {
            Some(s) => s,
            None => {
                all = (0..self.components.len()).collect();
                &all
            }
        };
        let max = idx.iter().map(|&k| terms.log_w_density[k]).fold(f64::NEG_INFINITY, f64::max);
        let unnorm: Vec<f64> = idx.iter().map(|&k| (terms.log_w_density[k] - max).exp()).collect();
        let z: f64 = unnorm.iter().sum();
        // Σ r_k (α μ_k − x)/v_k = α Σ (r_k/v_k) μ_k − x Σ r_k/v_k
        let mut out = vec![0.0; x.len()];
        let mut x_coef = 0.0;
        for (&k, &u) in idx.iter().zip(&unnorm) {
            let r = u / z;
            let c = r * terms.inv_var[k];
            x_coef += c;
            let mc = terms.alpha * c;
            for (o, &m) in out.iter_mut().zip(&self.components[k].mean) {
                *o += mc * m;
            }
        }
        for (o, &xi) in out.iter_mut().zip(x) {
            *o -= x_coef * xi;
        }
        out
    }

    /// ∇ₓ log p_t(x), conditional on `class` when given.
    pub fn score(&self, sched: &VPSchedule, x: &[f64], t: f64, class: Option<usize>) -> Result<Vec<f64>> {
        self.check_input(sched, x, t)?;
        let subset = class.map(|c| self.class_components(c)).transpose()?;
        let terms = self.terms(sched, x, t);
        Ok(self.reduce(&terms, x, subset))
    }

    /// Classifier-free guided score `s_u + w (s_c − s_u)`.
    pub fn cfg_score(&self, sched: &VPSchedule, x: &[f64], t: f64, class: usize, w: f64) -> Result<Vec<f64>> {
        self.check_input(sched, x, t)?;
        let subset = self.class_components(class)?;
        Ok(self.cfg_score_unchecked(sched, x, t, subset, w))
    }

    pub(crate) fn cfg_score_unchecked(
        &self,
        sched: &VPSchedule,
        x: &[f64],
        t: f64,
        subset: &[usize],
        w: f64,
    ) -> Vec<f64> {
        let terms = self.terms(sched, x, t);
        let cond = self.reduce(&terms, x, Some(subset));
        if w == 1.0 {
            return cond;
        }
        let uncond = self.reduce(&terms, x, None);
        if w == 0.0 {
            return uncond;
        }
        uncond.iter().zip(&cond).map(|(&u, &c)| u + w * (c - u)).collect()
    }

    /// Guided posterior mean `(x + σ_t² s) / α_t`, i.e. the teacher's
    /// predicted clean sample at `(x, t)`.
    pub fn predicted_x0(&self, sched: &VPSchedule, x: &[f64], t: f64, class: usize, w: f64) -> Result<Vec<f64>> {
        let s = self.cfg_score(sched, x, t, class, w)?;
        let (alpha, sigma) = sched.alpha_sigma_unchecked(t);
        Ok(x.iter().zip(&s).map(|(&xi, &si)| (xi + sigma * sigma * si) / alpha).collect())
    }

    /// Index of the most probable component of `class` (or of the whole
    /// mixture) for clean data `x`.
    pub fn nearest_component(&self, x: &[f64], class: Option<usize>) -> Result<usize> {
        let subset: Vec<usize> = match class {
            Some(c) => self.class_components(c)?.to_vec(),
            None => (0..self.components.len()).collect(),
        };
        let sched = VPSchedule::default();
        let terms = self.terms(&sched, x, 0.0);
        Ok(subset
            .into_iter()
            .max_by(|&a, &b| terms.log_w_density[a].total_cmp(&terms.log_w_density[b]))
            .expect("non-empty subset"))
    }

    /// Class owning component `k` (first match).
    pub fn class_of_component(&self, k: usize) -> Option<usize> {
        self.class_map.iter().position(|s| s.contains(&k))
    }

    /// Draws a clean sample from the data distribution of `class`.
    pub fn sample_data(&self, rng: &mut ChaCha8Rng, class: Option<usize>) -> Result<Vec<f64>> {
        let subset: Vec<usize> = match class {
            Some(c) => self.class_components(c)?.to_vec(),
            None => (0..self.components.len()).collect(),
        };
        let total: f64 = subset.iter().map(|&k| self.components[k].weight).sum();
        let mut u: f64 = rng.random_range(0.0..total);
        let mut pick = *subset.last().unwrap();
        for &k in &subset {
            let w = self.components[k].weight;
            if u < w {
                pick = k;
                break;
            }
            u -= w;
        }
        let c = &self.components[pick];
        let z = rng::normal_vec(rng, self.dim());
        Ok(c.mean.iter().zip(z).map(|(&m, z)| m + c.std * z).collect())
    }

    /// Mean of the clean data distribution of `class`.
    pub fn data_mean(&self, class: Option<usize>) -> Result<Vec<f64>> {
        let subset: Vec<usize> = match class {
            Some(c) => self.class_components(c)?.to_vec(),
            None => (0..self.components.len()).collect(),
        };
        let total: f64 = subset.iter().map(|&k| self.components[k].weight).sum();
        let mut out = vec![0.0; self.dim()];
        for &k in &subset {
            let w = self.components[k].weight / total;
            for (o, &m) in out.iter_mut().zip(&self.components[k].mean) {
                *o += w * m;
            }
        }
        Ok(out)
    }
}
