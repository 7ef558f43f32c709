//! Distillation objectives, optimiser, EMA and the training loop.

mod disc;
mod loss;
mod objective;
mod optim;
mod train;

pub use disc::{
    adaptive_balance, discriminator_grad, discriminator_loss, hinge_losses, DiscBatch, Discriminator, DISC_HIDDEN,
};
pub use loss::{ard_loss, ard_loss_grad, step_loss, step_loss_grad, Example, LossGrad};
pub use objective::{generator_grad, generator_objective, head_grad_norm, GeneratorGrad};
pub use optim::{clip_global_norm, global_norm, Adam, EmaParams};
pub use train::{
    metrics_header, train, train_from, DataSource, LrSchedule, MetricRow, TrainConfig, TrainData, TrainOutcome,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student::{MaskOption, PredictionTarget, StudentConfig, StudentParams};
    use crate::teacher::{generate_dataset, Preset, TrajectoryGrid, VPSchedule};
    use crate::ArdError;

    fn tiny(mask: MaskOption) -> StudentConfig {
        StudentConfig {
            layers: 2,
            n_history: 2,
            d_model: 16,
            heads: 2,
            patch: 4,
            image: (1, 8, 8),
            steps: 3,
            mask,
            target: PredictionTarget::NextSample,
            num_classes: 4,
            mlp_ratio: 2,
        }
    }

    fn dataset(steps: usize, n: usize) -> crate::teacher::TrajectoryDataset {
        let t = Preset::Blobs8.teacher();
        generate_dataset(&t, &VPSchedule::default(), TrajectoryGrid::new(steps).unwrap(), n, 1.5, 3, 60).unwrap()
    }

    fn tcfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            iterations,
            learning_rate: 1e-3,
            ema_decay: 0.9,
            log_every: 1,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_writes_artifacts() {
        let cfg = tiny(MaskOption::M4);
        let ds = dataset(3, 16);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let data = TrainData { teacher: &teacher, sched: &sched, source: DataSource::Offline(&ds) };
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainConfig { checkpoint_every: 2, ..tcfg(4) };
        let a = train(&cfg, &tc, &data, Some(dir.path())).unwrap();
        let b = crate::par::with_threads(1, || train(&cfg, &tc, &data, None).unwrap());
        assert_eq!(a.params, b.params);
        assert_eq!(a.ema, b.ema);
        assert_eq!(a.disc_evaluations, 0);
        for name in ["step_2.ardw", "ema_2.ardw", "step_4.ardw", "ema_4.ardw"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        let bytes_a = std::fs::read(dir.path().join("step_4.ardw")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        train(&cfg, &tc, &data, Some(dir2.path())).unwrap();
        assert_eq!(bytes_a, std::fs::read(dir2.path().join("step_4.ardw")).unwrap());
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "iter,loss,loss_s1,loss_s2,loss_s3,grad_norm,lambda,seconds");
        assert_eq!(lines.count(), 4);
        let loaded = StudentParams::load(&cfg, &dir.path().join("ema_4.ardw")).unwrap();
        assert_eq!(loaded, a.ema.shadow);
    }

    #[test]
    fn discriminator_runs_only_when_enabled() {
        let cfg = tiny(MaskOption::M1);
        let ds = dataset(3, 8);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let data = TrainData { teacher: &teacher, sched: &sched, source: DataSource::Offline(&ds) };
        let with = TrainConfig { use_discriminator: true, ..tcfg(2) };
        let out = train(&cfg, &with, &data, None).unwrap();
        // generator pass plus real and fake critic passes, per sample
        assert_eq!(out.disc_evaluations, 2 * 4 * 3);
        assert!(out.metrics.iter().all(|m| m.lambda > 0.0));
        let without = train(&cfg, &tcfg(2), &data, None).unwrap();
        assert_eq!(without.disc_evaluations, 0);
        assert!(without.metrics.iter().all(|m| m.lambda == 0.0));
    }

    #[test]
    fn online_mode_trains() {
        let cfg = tiny(MaskOption::M2);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let data = TrainData {
            teacher: &teacher,
            sched: &sched,
            source: DataSource::Online { cfg_scale: 1.5, fine_steps: 30 },
        };
        let a = train(&cfg, &tcfg(2), &data, None).unwrap();
        let b = train(&cfg, &tcfg(2), &data, None).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let cfg = tiny(MaskOption::M4);
        let ds = dataset(3, 4);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let data = TrainData { teacher: &teacher, sched: &sched, source: DataSource::Offline(&ds) };
        let mut p = StudentParams::init(&cfg, 0);
        let head = crate::student::Layout::new(&cfg).head_b;
        p.tensors[head].data_mut()[0] = f32::NAN;
        match train_from(p, &cfg, &tcfg(3), &data, None) {
            Err(ArdError::NonFinite { iteration, step, param_norm }) => {
                assert_eq!(iteration, 1);
                assert!((1..=3).contains(&step));
                assert!(param_norm.is_nan());
            }
            other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.metrics)),
        }
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let cfg = tiny(MaskOption::M4);
        let ds = dataset(2, 4);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let data = TrainData { teacher: &teacher, sched: &sched, source: DataSource::Offline(&ds) };
        assert!(matches!(train(&cfg, &tcfg(1), &data, None), Err(ArdError::Config { .. })));
        let bad = TrainConfig { ema_decay: 1.0, ..tcfg(1) };
        assert!(bad.validate().is_err());
        assert!(TrainConfig { grad_clip: 0.0, ..tcfg(1) }.validate().is_err());
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let c = TrainConfig { lr_schedule: LrSchedule::Cosine, learning_rate: 2e-3, ..tcfg(100) };
        assert_eq!(c.lr_at(1), 2e-3);
        assert!((c.lr_at(51) - 1e-3).abs() < 1e-15);
        assert!(c.lr_at(100) > 0.0 && c.lr_at(100) < 1e-6);
        assert!((2..=100).all(|i| c.lr_at(i) < c.lr_at(i - 1)));
        assert_eq!(tcfg(100).lr_at(77), 1e-3);
        let parsed: TrainConfig = serde_json::from_str(r#"{"lr_schedule": "cosine"}"#).unwrap();
        assert_eq!(parsed.lr_schedule, LrSchedule::Cosine);
    }

    #[test]
    fn fixed_batch_loss_decreases_at_default_rate() {
        let cfg = StudentConfig::default();
        let ds = dataset(cfg.steps, 8);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let batch: Vec<Example> =
            ds.trajectories.iter().map(|t| Example::from_trajectory(&cfg, t, &teacher, &sched).unwrap()).collect();
        let mut p = StudentParams::init(&cfg, 0);
        let tc = TrainConfig::default();
        let mut opt = Adam::new(&p.tensors, tc.learning_rate, tc.weight_decay);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let mut lg = ard_loss_grad(&p, &cfg, &batch).unwrap();
            assert!(lg.loss < prev, "iteration {i}: {} after {prev}", lg.loss);
            prev = lg.loss;
            let pre = clip_global_norm(&mut lg.grads, tc.grad_clip);
            if pre > tc.grad_clip {
                assert!(global_norm(&lg.grads) <= tc.grad_clip + 1e-6);
            }
            opt.step(&mut p.tensors, &lg.grads);
        }
    }

    #[test]
    fn predicted_x0_targets_come_from_teacher() {
        let cfg = StudentConfig { target: PredictionTarget::PredictedX0, ..tiny(MaskOption::M4) };
        let ds = dataset(3, 1);
        let teacher = Preset::Blobs8.teacher();
        let sched = VPSchedule::default();
        let t = &ds.trajectories[0];
        let ex = Example::from_trajectory(&cfg, t, &teacher, &sched).unwrap();
        let x: Vec<f64> = t.at(2).iter().map(|&v| v as f64).collect();
        let want = teacher.predicted_x0(&sched, &x, 2.0 / 3.0, t.class_label, 1.5).unwrap();
        for (a, b) in ex.targets[1].iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
        let next = Example::from_trajectory(&tiny(MaskOption::M4), t, &teacher, &sched).unwrap();
        assert_eq!(next.targets[2], t.endpoint());
    }
}
