//! `train`: synthetic task, model variant and optimizer from flags.

use std::path::PathBuf;

use latentgnn::affinity::{DenseVariant, LatentKind};
use latentgnn::io::with_suffix;
use latentgnn::tasks::model::parse_stages;
use latentgnn::tasks::{
    curve_csv, gen_grid_beacon, gen_point_clusters, stage_preset, train, BeaconSpec, ClusterSpec, Dataset,
    ModelConfig, ModelVariant, Optimizer, TaskKind, TrainConfig, TrainReport,
};

use crate::args::TrainArgs;
use crate::report::{config_comment, emit, resolve_dims};
use crate::{usage, CliResult};

pub struct Prepared {
    pub config: TrainConfig,
    pub train_set: Dataset<f64>,
    pub eval_set: Dataset<f64>,
    pub task: TaskKind,
}

fn parse_grid(s: &str) -> Option<(usize, usize)> {
    let (h, w) = s.split_once(['x', 'X'])?;
    Some((h.trim().parse().ok()?, w.trim().parse().ok()?))
}

pub fn prepare(a: &TrainArgs) -> CliResult<Prepared> {
    let Some(task) = TaskKind::parse(&a.task) else {
        return usage(format!("--task must be beacon or clusters, got `{}`", a.task));
    };
    let Some(variant) = ModelVariant::parse(&a.variant) else {
        return usage(format!("--variant must be local-only, latentgnn or dense-nl, got `{}`", a.variant));
    };
    let Some(latent) = LatentKind::parse(&a.latent) else {
        return usage(format!("unknown --latent `{}`", a.latent));
    };
    let Some(dense_variant) = DenseVariant::parse(&a.affinity) else {
        return usage(format!("--affinity must be sim or lap, got `{}`", a.affinity));
    };
    let optimizer = match a.optimizer.as_str() {
        "sgd" => Optimizer::Sgd { momentum: a.momentum },
        "adam" => Optimizer::adam(),
        other => return usage(format!("--optimizer must be sgd or adam, got `{other}`")),
    };
    let stages = if !a.d.is_empty() || a.kernels.is_some() {
        vec![resolve_dims(&a.d, a.kernels, 8)?]
    } else if let Some(p) = stage_preset(&a.stages) {
        p
    } else {
        parse_stages(&a.stages).map_err(|_| crate::CliError::Usage(format!("bad --stages `{}`", a.stages)))?
    };
    if a.train_count == 0 || a.eval_count == 0 {
        return usage("--train-count and --eval-count must be positive");
    }
    let split = a.train_count..a.train_count + a.eval_count;
    let (channels, train_set, eval_set) = match task {
        TaskKind::Beacon => {
            let Some((h, w)) = parse_grid(&a.grid) else {
                return usage(format!("--grid must look like 16x16, got `{}`", a.grid));
            };
            let c = a.c.unwrap_or(a.classes + 4);
            let spec = BeaconSpec::new(h, w, c, a.classes);
            (c, gen_grid_beacon(a.seed, &spec, 0..a.train_count)?, gen_grid_beacon(a.seed, &spec, split)?)
        }
        TaskKind::Clusters => {
            let c = a.c.unwrap_or(8);
            let spec = ClusterSpec::new(a.n, a.classes, c);
            (c, gen_point_clusters(a.seed, &spec, 0..a.train_count)?, gen_point_clusters(a.seed, &spec, split)?)
        }
    };
    let mut model = ModelConfig::new(channels, a.classes, variant);
    model.hidden = a.hidden;
    model.reduced = a.cr;
    model.stages = stages;
    model.latent = latent;
    model.dense_variant = dense_variant;
    let mut config = TrainConfig::new(model);
    config.steps = a.steps;
    config.batch_size = a.batch;
    config.learning_rate = a.lr;
    config.optimizer = optimizer;
    config.seed = a.seed;
    config.eval_every = a.eval_every;
    config.clip_norm = (a.clip > 0.0).then_some(a.clip);
    config.validate()?;
    Ok(Prepared {
        config,
        train_set,
        eval_set,
        task,
    })
}

pub fn config_fields(p: &Prepared, a: &TrainArgs) -> Vec<(&'static str, String)> {
    let c = &p.config;
    vec![
        ("task", p.task.name().to_string()),
        ("variant", c.model.variant.name().to_string()),
        ("seed", c.seed.to_string()),
        ("steps", c.steps.to_string()),
        ("batch", c.batch_size.to_string()),
        ("lr", c.learning_rate.to_string()),
        ("optimizer", c.optimizer.name().to_string()),
        ("stages", latentgnn::tasks::model::format_stages(&c.model.stages)),
        ("hidden", c.model.hidden.to_string()),
        ("c_r", c.model.reduced.to_string()),
        ("latent", c.model.latent.name().to_string()),
        ("channels", c.model.input_channels.to_string()),
        ("classes", c.model.classes.to_string()),
        ("train_count", a.train_count.to_string()),
        ("eval_count", a.eval_count.to_string()),
    ]
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<TrainReport<f64>> {
    let prepared = prepare(a)?;
    let report = train(&prepared.config, &prepared.train_set, &prepared.eval_set)?;
    let csv = config_comment("train", &config_fields(&prepared, a)) + &curve_csv(&report.curve);
    let weights: Option<PathBuf> = a
        .weights
        .clone()
        .or_else(|| a.out.as_ref().map(|o| with_suffix(o, ".weights")));
    if let Some(w) = &weights {
        report.model.save(w)?;
    }
    let mut summary = format!(
        "{} on {}: held-out accuracy {:.4} (initial {:.4}) after {} steps\n",
        prepared.config.model.variant.name(),
        prepared.task.name(),
        report.final_accuracy,
        report.initial_accuracy,
        prepared.config.steps
    );
    if let Some(w) = &weights {
        summary.push_str(&format!("weights: {}.manifest / .bin\n", w.display()));
    }
    emit(a.out.as_deref(), &csv, &summary)?;
    Ok(report)
}
