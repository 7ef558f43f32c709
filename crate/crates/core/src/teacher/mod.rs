//! Analytic diffusion teacher.
//!
//! A Gaussian-mixture data distribution has a closed-form score at every
//! noise level, so the probability-flow ODE can be integrated to near machine
//! precision and used as ground truth for distillation.

mod dataset;
mod mixture;
mod ode;
mod schedule;

pub use dataset::{
    generate_dataset, generate_dataset_seq, generate_record, read_dataset, write_dataset, DatasetHeader,
    TrajectoryDataset, DATASET_MAGIC,
};
pub use mixture::{Component, GaussianMixtureTeacher, Preset};
pub use ode::{pf_ode_rhs, solve_states, solve_trajectory, Trajectory, TrajectoryGrid};
pub use schedule::VPSchedule;
