//! Experiment configuration: one JSON document naming the teacher, schedule,
//! grid, student, optimiser and sampler, validated as a whole before any work
//! starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::inference::SamplerConfig;
use crate::student::StudentConfig;
use crate::teacher::{DatasetHeader, GaussianMixtureTeacher, Preset, VPSchedule};
use crate::training::TrainConfig;
use crate::{ArdError, Result};

/// A named preset or a JSON mixture file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherSource {
    Preset(Preset),
    File(PathBuf),
}

impl TeacherSource {
    pub fn load(&self) -> Result<GaussianMixtureTeacher> {
        match self {
            TeacherSource::Preset(p) => Ok(p.teacher()),
            TeacherSource::File(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| ArdError::config("teacher.file", format!("{}: {e}", path.display())))?;
                let t: GaussianMixtureTeacher = serde_json::from_str(&text)
                    .map_err(|e| ArdError::config("teacher.file", format!("{}: {e}", path.display())))?;
                GaussianMixtureTeacher::new(t.components().to_vec(), t.class_map().to_vec())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub teacher: TeacherSource,
    pub schedule: VPSchedule,
    /// Student grid size `S`.
    pub steps: usize,
    /// Guidance scale of the teacher trajectories.
    pub cfg_scale: f64,
    /// Heun substeps over the whole horizon; a multiple of `steps`.
    pub fine_steps: usize,
    pub student: StudentConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            teacher: TeacherSource::Preset(Preset::Blobs8),
            schedule: VPSchedule::default(),
            steps: 4,
            cfg_scale: 1.5,
            fine_steps: 100,
            student: StudentConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            out_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ArdError::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| ArdError::config("config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Checks every section and the cross-field constraints; returns the
    /// loaded teacher on success.
    pub fn validate(&self) -> Result<GaussianMixtureTeacher> {
        self.schedule.validate()?;
        self.student.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        if self.steps == 0 {
            return Err(ArdError::config("steps", "must be at least 1"));
        }
        if self.steps != self.student.steps {
            return Err(ArdError::config(
                "student.steps",
                format!("{} differs from grid steps = {}", self.student.steps, self.steps),
            ));
        }
        if self.fine_steps == 0 || self.fine_steps % self.steps != 0 {
            return Err(ArdError::config(
                "fine_steps",
                format!("{} is not a positive multiple of steps = {}", self.fine_steps, self.steps),
            ));
        }
        if !(self.cfg_scale >= 0.0 && self.cfg_scale.is_finite()) {
            return Err(ArdError::config("cfg_scale", format!("{} must be finite and non-negative", self.cfg_scale)));
        }
        let teacher = self.teacher.load()?;
        if teacher.dim() != self.student.dim() {
            let (c, h, w) = self.student.image;
            return Err(ArdError::config(
                "student.image",
                format!("{c}×{h}×{w} = {} but the teacher has D = {}", self.student.dim(), teacher.dim()),
            ));
        }
        if teacher.num_classes() != self.student.num_classes {
            return Err(ArdError::config(
                "student.num_classes",
                format!("{} but the teacher has {} classes", self.student.num_classes, teacher.num_classes()),
            ));
        }
        if let Some(c) = self.sampler.class {
            if c >= self.student.num_classes {
                return Err(ArdError::config("sampler.class", format!("{c} not below {}", self.student.num_classes)));
            }
        }
        Ok(teacher)
    }

    /// Checks that a stored dataset was produced for this teacher and grid.
    pub fn check_dataset(&self, header: &DatasetHeader, teacher: &GaussianMixtureTeacher) -> Result<()> {
        if header.steps != self.steps {
            return Err(ArdError::config("steps", format!("dataset has S = {}, config {}", header.steps, self.steps)));
        }
        if header.dim != self.student.dim() {
            return Err(ArdError::config("student.image", format!("dataset has D = {}", header.dim)));
        }
        if header.teacher_hash != teacher.hash() {
            return Err(ArdError::config("teacher", "dataset was generated by a different teacher"));
        }
        Ok(())
    }
}
