//! Pre-computed teacher trajectories and their binary file format.
//!
//! Layout (little-endian): magic `ARDT`, `u32` version (1), `u32` D, `u32` S,
//! `u64` count, `f32` cfg scale, `f32` β_min, `f32` β_max, `u64` teacher hash;
//! then per record `u32` class label, `u64` seed and `(S+1)·D` `f32` states,
//! noise first.

use std::io::{BufReader, BufWriter, Read, Write};

use rand::Rng;

use super::ode::solve_trajectory;
use super::{GaussianMixtureTeacher, Trajectory, TrajectoryGrid, VPSchedule};
use crate::{par, rng, ArdError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"ARDT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub dim: usize,
    pub steps: usize,
    pub count: u64,
    pub cfg_scale: f32,
    pub beta_min: f32,
    pub beta_max: f32,
    pub teacher_hash: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Splits off the last `n` trajectories as a held-out set.
    pub fn split_tail(mut self, n: usize) -> (TrajectoryDataset, TrajectoryDataset) {
        let n = n.min(self.trajectories.len());
        let tail = self.trajectories.split_off(self.trajectories.len() - n);
        let mut head_h = self.header.clone();
        head_h.count = self.trajectories.len() as u64;
        let mut tail_h = self.header.clone();
        tail_h.count = tail.len() as u64;
        (
            TrajectoryDataset { header: head_h, trajectories: self.trajectories },
            TrajectoryDataset { header: tail_h, trajectories: tail },
        )
    }
}

/// Record `index` of the dataset seeded by `seed`: a uniform label, `x_T ~ N(0, I)`
/// and the guided teacher path from it.
pub fn generate_record(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    grid: TrajectoryGrid,
    w: f64,
    fine_steps: usize,
    seed: u64,
    index: usize,
) -> Result<Trajectory> {
    let record_seed = rng::stream_seed(seed, index as u64);
    let mut r = rng::rng_from_seed(record_seed);
    let class = r.random_range(0..teacher.num_classes());
    let x_t = rng::normal_vec(&mut r, teacher.dim());
    solve_trajectory(teacher, sched, &x_t, grid, class, w, fine_steps, record_seed)
}

fn assemble(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    grid: TrajectoryGrid,
    w: f64,
    records: Vec<Result<Trajectory>>,
) -> Result<TrajectoryDataset> {
    let trajectories = records.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryDataset {
        header: DatasetHeader {
            dim: teacher.dim(),
            steps: grid.steps,
            count: trajectories.len() as u64,
            cfg_scale: w as f32,
            beta_min: sched.beta_min as f32,
            beta_max: sched.beta_max as f32,
            teacher_hash: teacher.hash(),
        },
        trajectories,
    })
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(ArdError::config("count", "must be at least 1"));
    }
    Ok(())
}

/// Solves `n` trajectories with uniformly drawn labels and `x_T ~ N(0, I)`.
/// Trajectory `i` is seeded from `(seed, i)` alone, so the output does not
/// depend on the thread count.
pub fn generate_dataset(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    grid: TrajectoryGrid,
    n: usize,
    w: f64,
    seed: u64,
    fine_steps: usize,
) -> Result<TrajectoryDataset> {
    check_n(n)?;
    let records = par::map_indexed(n, |i| generate_record(teacher, sched, grid, w, fine_steps, seed, i));
    assemble(teacher, sched, grid, w, records)
}

/// Sequential reference for [`generate_dataset`].
pub fn generate_dataset_seq(
    teacher: &GaussianMixtureTeacher,
    sched: &VPSchedule,
    grid: TrajectoryGrid,
    n: usize,
    w: f64,
    seed: u64,
    fine_steps: usize,
) -> Result<TrajectoryDataset> {
    check_n(n)?;
    let records = par::map_indexed_seq(n, |i| generate_record(teacher, sched, grid, w, fine_steps, seed, i));
    assemble(teacher, sched, grid, w, records)
}

pub fn write_dataset<W: Write>(w: W, ds: &TrajectoryDataset) -> Result<()> {
    let mut w = BufWriter::new(w);
    let h = &ds.header;
    if h.count != ds.trajectories.len() as u64 {
        return Err(ArdError::Format(format!("header count {} but {} records", h.count, ds.trajectories.len())));
    }
    let dim = u32::try_from(h.dim).map_err(|_| ArdError::Format("dimension above u32".into()))?;
    let steps = u32::try_from(h.steps).map_err(|_| ArdError::Format("steps above u32".into()))?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&steps.to_le_bytes())?;
    w.write_all(&h.count.to_le_bytes())?;
    w.write_all(&h.cfg_scale.to_le_bytes())?;
    w.write_all(&h.beta_min.to_le_bytes())?;
    w.write_all(&h.beta_max.to_le_bytes())?;
    w.write_all(&h.teacher_hash.to_le_bytes())?;
    let mut buf = Vec::with_capacity((h.steps + 1) * h.dim * 4 + 12);
    for t in &ds.trajectories {
        if t.states.len() != h.steps + 1 || t.states.iter().any(|s| s.len() != h.dim) {
            return Err(ArdError::Format("record shape differs from header".into()));
        }
        buf.clear();
        let class = u32::try_from(t.class_label).map_err(|_| ArdError::Format("class above u32".into()))?;
        buf.extend_from_slice(&class.to_le_bytes());
        buf.extend_from_slice(&t.seed.to_le_bytes());
        for s in &t.states {
            for &v in s {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn take<R: Read, const N: usize>(r: &mut R, what: &str) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| ArdError::Format(format!("truncated dataset ({what}): {e}")))?;
    Ok(b)
}

pub fn read_dataset<R: Read>(r: R) -> Result<TrajectoryDataset> {
    let mut r = BufReader::new(r);
    let magic: [u8; 4] = take(&mut r, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(ArdError::Format("not a trajectory dataset (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut r, "version")?);
    if version != VERSION {
        return Err(ArdError::Format(format!("unsupported dataset version {version}")));
    }
    let dim = u32::from_le_bytes(take(&mut r, "dim")?) as usize;
    let steps = u32::from_le_bytes(take(&mut r, "steps")?) as usize;
    let count = u64::from_le_bytes(take(&mut r, "count")?);
    let cfg_scale = f32::from_le_bytes(take(&mut r, "cfg")?);
    let beta_min = f32::from_le_bytes(take(&mut r, "beta_min")?);
    let beta_max = f32::from_le_bytes(take(&mut r, "beta_max")?);
    let teacher_hash = u64::from_le_bytes(take(&mut r, "teacher hash")?);
    if dim == 0 || steps == 0 {
        return Err(ArdError::Format(format!("degenerate header: D={dim}, S={steps}")));
    }
    let mut trajectories = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut raw = vec![0u8; (steps + 1) * dim * 4];
    for i in 0..count {
        let class_label = u32::from_le_bytes(take(&mut r, "class")?) as usize;
        let seed = u64::from_le_bytes(take(&mut r, "seed")?);
        r.read_exact(&mut raw).map_err(|e| ArdError::Format(format!("truncated record {i}: {e}")))?;
        let flat: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        trajectories.push(Trajectory {
            states: flat.chunks(dim).map(<[f32]>::to_vec).collect(),
            class_label,
            cfg_scale,
            seed,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(ArdError::Format("trailing bytes after the last record".into()));
    }
    Ok(TrajectoryDataset {
        header: DatasetHeader { dim, steps, count, cfg_scale, beta_min, beta_max, teacher_hash },
        trajectories,
    })
}
