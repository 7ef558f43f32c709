use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ard_core::analysis::{
    attention_report, bar_chart_svg, evaluate, exposure_csv, exposure_harness, flops_model, line_chart_svg,
    reference_samples, ArchDims, AttentionReport, FlopsMode,
};
use ard_core::config::{ExperimentConfig, TeacherSource};
use ard_core::inference::{manipulate, sample, to_dataset, write_pgm, SampleBatch};
use ard_core::student::{MaskOption, PredictionTarget, StudentParams};
use ard_core::teacher::{generate_dataset, read_dataset, write_dataset, Preset, TrajectoryDataset, TrajectoryGrid};
use ard_core::training::{train, DataSource, LrSchedule, TrainData};
use ard_core::{par, ArdError};

use crate::record::{file_hash, Output, RunRecord};
use crate::{Cli, Command, Failure, ModelFlags, StudentFlags};

type Outcome = Result<(), Failure>;

const EXPERIMENT_FILE: &str = "experiment.json";

fn parse<T: std::str::FromStr<Err = ArdError>>(v: &Option<String>) -> Result<Option<T>, Failure> {
    v.as_deref().map(str::parse).transpose().map_err(Failure::from)
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Gen { .. } => "gen",
        Command::Train { .. } => "train",
        Command::Sample { .. } => "sample",
        Command::Eval { .. } => "eval",
        Command::Attn { .. } => "attn",
        Command::Flops { .. } => "flops",
        Command::Exposure { .. } => "exposure",
        Command::Manipulate { .. } => "manipulate",
    }
}

fn model_flags(cmd: &Command) -> Option<&ModelFlags> {
    match cmd {
        Command::Sample { model, .. }
        | Command::Eval { model, .. }
        | Command::Attn { model, .. }
        | Command::Exposure { model, .. }
        | Command::Manipulate { model, .. } => Some(model),
        _ => None,
    }
}

/// Base configuration: the trained run's snapshot for model commands, else
/// `--config` or the defaults.
fn base_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    if let Some(m) = model_flags(&cli.command) {
        let path = m.run.join(EXPERIMENT_FILE);
        if !path.exists() {
            return Err(Failure::Config(format!("{} is not a training run (no {EXPERIMENT_FILE})", m.run.display())));
        }
        return Ok(ExperimentConfig::load(&path)?);
    }
    match &cli.global.config {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_student(cfg: &mut ExperimentConfig, f: &StudentFlags) -> Result<(), Failure> {
    if let Some(m) = parse::<MaskOption>(&f.mask)? {
        cfg.student.mask = m;
    }
    if let Some(t) = parse::<PredictionTarget>(&f.target)? {
        cfg.student.target = t;
    }
    let s = &mut cfg.student;
    for (dst, src) in [
        (&mut s.n_history, f.n_history),
        (&mut s.layers, f.layers),
        (&mut s.d_model, f.d_model),
        (&mut s.heads, f.heads),
        (&mut s.patch, f.patch),
    ] {
        if let Some(v) = src {
            *dst = v;
        }
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = base_config(cli)?;
    let g = &cli.global;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.sampler.seed = seed;
    }
    if let Some(s) = g.steps {
        cfg.steps = s;
        cfg.student.steps = s;
    }
    match &cli.command {
        Command::Gen { preset, cfg_scale, fine_steps, .. } => {
            if let Some(p) = preset {
                let p = Preset::from_name(p)?;
                cfg.teacher = TeacherSource::Preset(p);
                cfg.student.image = p.image();
                if cfg.student.image.1 % cfg.student.patch != 0 {
                    cfg.student.patch = 1;
                }
                cfg.student.num_classes = p.teacher().num_classes();
            }
            if let Some(w) = cfg_scale {
                cfg.cfg_scale = *w;
            }
            if let Some(f) = fine_steps {
                cfg.fine_steps = *f;
            }
        }
        Command::Train { student, iterations, lr, cosine, batch_size, ema_decay, disc, checkpoint_every, .. } => {
            apply_student(&mut cfg, student)?;
            let t = &mut cfg.train;
            if let Some(v) = iterations {
                t.iterations = *v;
            }
            if let Some(v) = lr {
                t.learning_rate = *v;
            }
            if let Some(v) = batch_size {
                t.batch_size = *v;
            }
            if let Some(v) = ema_decay {
                t.ema_decay = *v;
            }
            if let Some(v) = checkpoint_every {
                t.checkpoint_every = *v;
            }
            t.use_discriminator |= *disc;
            if *cosine {
                t.lr_schedule = LrSchedule::Cosine;
            }
        }
        Command::Sample { count, class, model, .. } | Command::Manipulate { count, class, model, .. } => {
            if let Some(c) = count {
                cfg.sampler.count = *c;
            }
            if class.is_some() {
                cfg.sampler.class = *class;
            }
            cfg.sampler.use_ema = !model.raw;
        }
        Command::Flops { mask, n_history, .. } => {
            if let Some(m) = parse::<MaskOption>(mask)? {
                cfg.student.mask = m;
            }
            if let Some(n) = n_history {
                cfg.student.n_history = *n;
            }
        }
        _ => {}
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.global.out.clone().unwrap_or_else(|| cfg.out_dir.join(name(&cli.command)))
}

/// Primary artifacts of a command, relative to its output directory.
fn primary_outputs(cli: &Cli, cfg: &ExperimentConfig) -> Vec<String> {
    let mut v = vec!["run.json".to_string()];
    v.extend(
        match &cli.command {
            Command::Gen { .. } => vec!["dataset.ardt".to_string()],
            Command::Train { .. } => vec![
                EXPERIMENT_FILE.to_string(),
                "metrics.csv".to_string(),
                format!("ema_{}.ardw", cfg.train.iterations),
            ],
            Command::Sample { .. } => vec!["samples.ardt".to_string()],
            Command::Eval { .. } => vec!["metrics.json".to_string()],
            Command::Attn { .. } => vec!["attention.csv".to_string()],
            Command::Flops { .. } => vec!["flops.json".to_string()],
            Command::Exposure { .. } => vec!["exposure.csv".to_string()],
            Command::Manipulate { .. } => vec!["manipulated.ardt".to_string()],
        }
        .into_iter(),
    );
    v
}

fn prepare_out(cli: &Cli, cfg: &ExperimentConfig, dir: &Path) -> Outcome {
    if !cli.global.force {
        if let Some(f) = primary_outputs(cli, cfg).iter().find(|f| dir.join(f).exists()) {
            return Err(Failure::Refused(format!(
                "{} already exists; pass --force to overwrite",
                dir.join(f).display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<TrajectoryDataset, Failure> {
    let f = File::open(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(read_dataset(f)?)
}

fn save_dataset(path: &Path, ds: &TrajectoryDataset) -> Outcome {
    write_dataset(File::create(path)?, ds)?;
    Ok(())
}

fn load_model(m: &ModelFlags, cfg: &ExperimentConfig) -> Result<StudentParams, Failure> {
    let prefix = if m.raw { "step" } else { "ema" };
    let path = m.run.join(format!("{prefix}_{}.ardw", cfg.train.iterations));
    Ok(StudentParams::load(&cfg.student, &path)?)
}

fn limited(ds: &TrajectoryDataset, limit: Option<usize>) -> &[ard_core::teacher::Trajectory] {
    let n = limit.unwrap_or(ds.len()).min(ds.len());
    &ds.trajectories[..n]
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Outcome {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::Config(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_samples(dir: &Path, file: &str, batch: &SampleBatch, cfg: &ExperimentConfig, hash: u64) -> Outcome {
    save_dataset(&dir.join(file), &to_dataset(batch, &cfg.student, &cfg.schedule, hash))
}

pub fn run(cli: &Cli) -> Outcome {
    let start = Instant::now();
    let cfg = resolve(cli)?;
    let teacher = cfg.validate()?;
    let dir = out_dir(cli, &cfg);
    prepare_out(cli, &cfg, &dir)?;
    let produced = par::with_threads(cli.global.threads, || execute(cli, &cfg, &teacher, &dir))?;
    let outputs = produced
        .into_iter()
        .map(|f| Ok(Output { sha256: file_hash(&dir.join(&f))?, file: f }))
        .collect::<std::io::Result<Vec<_>>>()?;
    RunRecord {
        command: name(&cli.command),
        argv: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        threads: cli.global.threads,
        config: &cfg,
        outputs,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
    .write(&dir)?;
    Ok(())
}

/// Runs one command; returns the files it wrote.
fn execute(
    cli: &Cli,
    cfg: &ExperimentConfig,
    teacher: &ard_core::teacher::GaussianMixtureTeacher,
    dir: &Path,
) -> Result<Vec<String>, Failure> {
    match &cli.command {
        Command::Gen { count, .. } => {
            let grid = TrajectoryGrid::new(cfg.steps)?;
            let ds = generate_dataset(teacher, &cfg.schedule, grid, *count, cfg.cfg_scale, cfg.seed, cfg.fine_steps)?;
            let path = dir.join("dataset.ardt");
            save_dataset(&path, &ds)?;
            println!("count {} D {} S {} sha256 {}", ds.len(), ds.header.dim, ds.header.steps, file_hash(&path)?);
            Ok(vec!["dataset.ardt".into()])
        }
        Command::Train { data, .. } => {
            let ds = load_dataset(data)?;
            cfg.check_dataset(&ds.header, teacher)?;
            fs::write(dir.join(EXPERIMENT_FILE), cfg.to_json() + "\n")?;
            let td = TrainData { teacher, sched: &cfg.schedule, source: DataSource::Offline(&ds) };
            let out = train(&cfg.student, &cfg.train, &td, Some(dir))?;
            if let Some(last) = out.metrics.last() {
                println!("iterations {} loss {:.6e} seconds {:.1}", last.iter, last.loss, last.seconds);
            }
            let n = cfg.train.iterations;
            Ok(vec![EXPERIMENT_FILE.into(), "metrics.csv".into(), format!("step_{n}.ardw"), format!("ema_{n}.ardw")])
        }
        Command::Sample { model, images, .. } => {
            let params = load_model(model, cfg)?;
            let batch = sample(&params, &cfg.student, &cfg.schedule, &cfg.sampler)?;
            write_samples(dir, "samples.ardt", &batch, cfg, teacher.hash())?;
            let mut files = vec!["samples.ardt".to_string()];
            if *images {
                for (i, x) in batch.endpoints().iter().enumerate() {
                    let f = format!("sample_{i:04}.pgm");
                    write_pgm(&dir.join(&f), cfg.student.image, x)?;
                    files.push(f);
                }
            }
            println!("samples {} file {}", batch.trajectories.len(), dir.join("samples.ardt").display());
            Ok(files)
        }
        Command::Eval { model, data, limit } => {
            let params = load_model(model, cfg)?;
            let ds = load_dataset(data)?;
            cfg.check_dataset(&ds.header, teacher)?;
            let held = limited(&ds, *limit);
            let reference = reference_samples(teacher, held, cfg.seed)?;
            let r = evaluate(&params, &cfg.student, &cfg.schedule, held, &reference, None)?;
            write_json(&dir.join("metrics.json"), &r)?;
            println!("endpoint_mse {:.6e} mmd2 {:.6e} bandwidth {:.4}", r.endpoint_mse, r.mmd2, r.bandwidth);
            Ok(vec!["metrics.json".into()])
        }
        Command::Attn { model, data, limit } => {
            let params = load_model(model, cfg)?;
            let ds = load_dataset(data)?;
            cfg.check_dataset(&ds.header, teacher)?;
            let reports = limited(&ds, Some((*limit).max(1)))
                .iter()
                .map(|t| {
                    let inputs: Vec<&[f32]> = t.states[..cfg.steps].iter().map(Vec::as_slice).collect();
                    attention_report(&params, &cfg.student, &inputs, t.class_label)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let r = AttentionReport::average(&reports)?;
            fs::write(dir.join("attention.csv"), r.to_csv())?;
            write_json(&dir.join("attention.json"), &r)?;
            let bars: Vec<(String, f64)> =
                (0..r.scores.len()).map(|l| (format!("L{l}"), history_share(&r, l))).collect();
            fs::write(dir.join("attention.svg"), bar_chart_svg("history attention share per layer", &bars))?;
            for (label, v) in &bars {
                println!("{label} history {v:.4}");
            }
            Ok(vec!["attention.csv".into(), "attention.json".into(), "attention.svg".into()])
        }
        Command::Flops { arch, mode, .. } => {
            let dims = match arch {
                Some(a) => ArchDims::from_name(a)?,
                None => ArchDims::from_student(&cfg.student),
            };
            let mode: FlopsMode = serde_json::from_value(serde_json::Value::String(mode.clone()))
                .map_err(|_| Failure::Config(format!("mode: unknown '{mode}' (student, teacher-with-cfg, kd)")))?;
            let b = flops_model(&dims, cfg.steps, cfg.student.n_history, cfg.student.mask, mode)?;
            write_json(&dir.join("flops.json"), &b)?;
            let g = b.gflops();
            if g >= 1.0 {
                println!("{g:.1} GFLOPs");
            } else {
                println!("{g:.4e} GFLOPs");
            }
            Ok(vec!["flops.json".into()])
        }
        Command::Exposure { model, data, limit } => {
            let params = load_model(model, cfg)?;
            let ds = load_dataset(data)?;
            cfg.check_dataset(&ds.header, teacher)?;
            let trajs = limited(&ds, *limit);
            let curves = (0..cfg.steps)
                .map(|k| exposure_harness(&params, &cfg.student, &cfg.schedule, trajs, k))
                .collect::<Result<Vec<_>, _>>()?;
            fs::write(dir.join("exposure.csv"), exposure_csv(&curves))?;
            write_json(&dir.join("exposure.json"), &curves)?;
            let series: Vec<(String, Vec<(f64, f64)>)> = curves
                .iter()
                .map(|c| {
                    let pts = c.per_step.iter().enumerate().map(|(s, &v)| (s as f64, v)).collect();
                    (format!("k={}", c.k), pts)
                })
                .collect();
            fs::write(dir.join("exposure.svg"), line_chart_svg("error per step", &series))?;
            for c in &curves {
                println!("k {} endpoint {:.6e}", c.k, c.endpoint);
            }
            Ok(vec!["exposure.csv".into(), "exposure.json".into(), "exposure.svg".into()])
        }
        Command::Manipulate { model, data, index, s_inject, .. } => {
            let params = load_model(model, cfg)?;
            let ds = load_dataset(data)?;
            cfg.check_dataset(&ds.header, teacher)?;
            let t = ds
                .trajectories
                .get(*index)
                .ok_or_else(|| Failure::Config(format!("index: {index} not below {}", ds.len())))?;
            if *s_inject == 0 || *s_inject >= cfg.steps {
                return Err(Failure::Config(format!("s-inject: {s_inject} not in 1..={}", cfg.steps - 1)));
            }
            let source = t.at(*s_inject);
            let batch = manipulate(&params, &cfg.student, &cfg.schedule, source, *s_inject, &cfg.sampler)?;
            write_samples(dir, "manipulated.ardt", &batch, cfg, teacher.hash())?;
            let mut files = vec!["manipulated.ardt".to_string(), "source.pgm".to_string()];
            write_pgm(&dir.join("source.pgm"), cfg.student.image, source)?;
            for (i, x) in batch.endpoints().iter().enumerate() {
                let f = format!("manipulated_{i:04}.pgm");
                write_pgm(&dir.join(&f), cfg.student.image, x)?;
                files.push(f);
            }
            println!("manipulated {} from record {index} at s = {s_inject}", batch.trajectories.len());
            Ok(files)
        }
    }
}

/// Mean share on non-current inputs over query steps `s < S`.
fn history_share(r: &AttentionReport, layer: usize) -> f64 {
    if r.steps < 2 {
        return 0.0;
    }
    let per_query: Vec<f64> = (1..r.steps).map(|s| 1.0 - r.score(layer, s, s)).collect();
    per_query.iter().sum::<f64>() / per_query.len() as f64
}
