//! Subcommand bodies. Each writes its artifacts under `out` and returns a JSON summary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use diffmark::data::{load_idx_dataset, make_synthetic_dataset};
use diffmark::denoiser::{train, Checkpoint, ConvDenoiser};
use diffmark::io::{load_image_any, load_trajectories, save_trajectories, write_png};
use diffmark::metrics::{
    fid_from_features, inception_score_from_probs, load_probs, precision_recall_knn,
    sfid_from_features, FeatureSet, FeatureSource,
};
use diffmark::oracle::{run_suite, SuiteConfig};
use diffmark::plot::emit_trajectory_plot;
use diffmark::reverse::{sample, SamplerOptions, TrajectoryBatch};
use diffmark::rng::{streams, substream};
use diffmark::verification::verify;
use diffmark::watermark::make_pattern;
use diffmark::{Image, VarianceSchedule, WatermarkSpec};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::sha256_hex;

/// What a subcommand reports back besides its files.
pub struct Outcome {
    pub summary: Value,
    pub schedule_fingerprint: Option<String>,
    /// Content hashes of files read, keyed by role.
    pub inputs: Vec<(String, String)>,
}

fn input_hash(role: &str, path: &Path) -> CliResult<(String, String)> {
    Ok((role.to_string(), sha256_hex(&fs::read(path)?)))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(diffmark::Error::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn broadcast_color(color: &[f64], channels: usize) -> Vec<f64> {
    if color.len() == 1 {
        vec![color[0]; channels]
    } else {
        color.to_vec()
    }
}

fn pattern_for(config: &RunConfig, canvas: (usize, usize, usize)) -> CliResult<Image<f64>> {
    let w = &config.watermark;
    Ok(make_pattern(w.geometry(), canvas, &broadcast_color(&w.color, canvas.0))?)
}

fn load_dataset(config: &RunConfig) -> CliResult<Vec<Image<f64>>> {
    let mut data = match &config.paths.dataset {
        Some(path) => load_idx_dataset(path)?,
        None => make_synthetic_dataset(config.data.count, config.data.size, config.data.kind, config.seed)?,
    };
    if let Some(limit) = config.data.limit {
        data.truncate(limit);
    }
    if data.is_empty() {
        return Err(CliError::Config("dataset is empty".into()));
    }
    Ok(data)
}

pub fn train_cmd(config: &RunConfig, out: &Path) -> CliResult<Outcome> {
    let schedule = config.schedule.build()?;
    let data = load_dataset(config)?;
    let canvas = data[0].shape();
    let w = &config.watermark;
    let t_a = w.t_a(schedule.steps());
    let spec = WatermarkSpec::from_geometry(
        w.geometry(),
        canvas,
        &broadcast_color(&w.color, canvas.0),
        w.gamma,
        t_a,
        w.f1_mode,
        &schedule,
    )?
    .with_scale_mode(w.scale_mode);

    let model = ConvDenoiser::new(
        config.model.conv_config(canvas),
        &mut substream(config.seed, streams::MODEL_INIT),
    );
    let tc = config.training.train_config(config.seed);
    let outcome = train(model, &data, &spec, &schedule, &tc, |_, _| {})?;

    outcome.checkpoint.save(out.join("checkpoint.nac"))?;
    outcome.write_loss_csv(BufWriter::new(File::create(out.join("loss.csv"))?))?;
    schedule.write_csv(BufWriter::new(File::create(out.join("schedule.csv"))?))?;
    write_png(spec.pattern(), -1.0, 1.0, out.join("pattern.png"))?;

    let tail = &outcome.step_losses[outcome.step_losses.len().saturating_sub(100)..];
    let final_loss = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
    let summary = json!({
        "images": data.len(),
        "steps": tc.steps,
        "t_a": t_a,
        "parameters": outcome.checkpoint.params.len(),
        "final_loss": final_loss,
    });
    write_json(&out.join("training.json"), &summary)?;
    let mut inputs = Vec::new();
    if let Some(p) = &config.paths.dataset {
        inputs.push(input_hash("dataset", p)?);
    }
    Ok(Outcome {
        summary,
        schedule_fingerprint: Some(schedule.fingerprint()),
        inputs,
    })
}

fn snapshot_set(config: &RunConfig, schedule: &VarianceSchedule, t_a: usize) -> Vec<usize> {
    let mut steps = config.sampling.snapshot_steps(schedule.steps());
    steps.push(t_a);
    steps.retain(|&t| t > 0);
    steps.sort_unstable_by(|a, b| b.cmp(a));
    steps.dedup();
    steps
}

pub fn sample_cmd(config: &RunConfig, checkpoint: &Path, out: &Path) -> CliResult<Outcome> {
    let schedule = config.schedule.build()?;
    let ckpt = Checkpoint::<f64>::load(checkpoint, &schedule)?;
    let spec = WatermarkSpec::from_record(&ckpt.watermark, &schedule)?;
    let model = ckpt.conv_model(config.sampling.use_ema)?;
    let snapshots = snapshot_set(config, &schedule, spec.t_a());
    let opts = SamplerOptions::new(config.sampling.batch)
        .with_snapshots(snapshots.iter().copied())
        .with_sigma_mode(config.sampling.sigma_mode)
        .with_clamp(config.sampling.clamp);
    let mut rng = substream(config.seed, streams::SAMPLING);
    let mut batch = sample(&model, &schedule, &spec, &opts, &mut rng)?;
    batch.seed = Some(config.seed);

    save_trajectories(out.join("trajectories.nac"), &batch)?;
    for &t in &snapshots {
        write_png(&batch.average_at(t)?, -1.0, 1.0, out.join(format!("average_t{t:04}.png")))?;
    }
    write_png(&batch.average_finals()?, -1.0, 1.0, out.join("average_final.png"))?;
    let mut strip_steps = snapshots.clone();
    strip_steps.push(0);
    emit_trajectory_plot(&[&batch], &strip_steps, &config.plot, out.join("strip.png"))?;

    Ok(Outcome {
        summary: json!({
            "batch": config.sampling.batch,
            "t_a": spec.t_a(),
            "snapshot_steps": snapshots,
            "strip_steps": strip_steps,
            "used_ema": config.sampling.use_ema && ckpt.ema.is_some(),
        }),
        schedule_fingerprint: Some(schedule.fingerprint()),
        inputs: vec![input_hash("checkpoint", checkpoint)?],
    })
}

/// Average at `step` (0 for the finals) of a saved trajectory batch, or a single stored image.
fn load_target(path: &Path, step: Option<usize>) -> CliResult<Image<f64>> {
    match step {
        Some(t) => Ok(diffmark::plot::averaged_step(&load_trajectories::<f64>(path)?, t)?),
        None => Ok(load_image_any(path)?),
    }
}

pub fn verify_cmd(
    config: &RunConfig,
    target: &Path,
    pattern: Option<&Path>,
    step: Option<usize>,
    out: &Path,
) -> CliResult<Outcome> {
    let x = load_target(target, step)?;
    let mut inputs = vec![input_hash("target", target)?];
    let p = match pattern {
        Some(path) => {
            inputs.push(input_hash("pattern", path)?);
            load_image_any(path)?
        }
        None => pattern_for(config, x.shape())?,
    };
    let report = verify(&x, &p, &config.verification)?;
    report.write_json(BufWriter::new(File::create(out.join("verification.json"))?))?;
    Ok(Outcome {
        summary: serde_json::to_value(&report).map_err(diffmark::Error::from)?,
        schedule_fingerprint: None,
        inputs,
    })
}

pub fn oracle_cmd(config: &RunConfig, out: &Path) -> CliResult<Outcome> {
    let schedule = config.schedule.build()?;
    let suite = SuiteConfig {
        samples: config.oracle.samples,
        seed: config.seed,
        gamma: config.watermark.gamma,
        t_a: config.watermark.t_a(schedule.steps()),
        f1_mode: config.watermark.f1_mode,
    };
    let report = run_suite(&schedule, &suite)?;
    write_json(&out.join("oracle.json"), &report)?;
    let failed: Vec<&str> = report.items.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Check(format!("oracle items failed: {}", failed.join(", "))));
    }
    Ok(Outcome {
        summary: json!({
            "passed": report.passed,
            "items": report.items.iter().map(|i| json!({"name": i.name, "passed": i.passed})).collect::<Vec<_>>(),
        }),
        schedule_fingerprint: Some(schedule.fingerprint()),
        inputs: Vec::new(),
    })
}

pub struct MetricsArgs<'a> {
    pub real: &'a Path,
    pub generated: &'a Path,
    pub spatial_real: Option<&'a Path>,
    pub spatial_generated: Option<&'a Path>,
    pub probs: Option<&'a Path>,
    pub splits: usize,
    pub k: usize,
}

pub fn metrics_cmd(args: &MetricsArgs<'_>, out: &Path) -> CliResult<Outcome> {
    let real = FeatureSet::load(args.real, FeatureSource::Real)?;
    let generated = FeatureSet::load(args.generated, FeatureSource::Generated)?;
    let mut inputs = vec![input_hash("real", args.real)?, input_hash("generated", args.generated)?];
    let fid = fid_from_features(&real, &generated)?;
    let (precision, recall) = precision_recall_knn(&real, &generated, args.k)?;
    let mut report = json!({
        "extractor_id": real.extractor_id,
        "fid": fid,
        "precision": precision,
        "recall": recall,
        "k": args.k,
    });
    match (args.spatial_real, args.spatial_generated) {
        (Some(sr), Some(sg)) => {
            let a = FeatureSet::load(sr, FeatureSource::Real)?;
            let b = FeatureSet::load(sg, FeatureSource::Generated)?;
            report["sfid"] = serde_json::to_value(sfid_from_features(&a, &b)?).map_err(diffmark::Error::from)?;
            inputs.push(input_hash("spatial_real", sr)?);
            inputs.push(input_hash("spatial_generated", sg)?);
        }
        (None, None) => {}
        _ => {
            return Err(CliError::Usage(
                "sFID needs both --spatial-real and --spatial-generated".into(),
            ))
        }
    }
    if let Some(p) = args.probs {
        let (probs, rows, classes) = load_probs(p)?;
        let (mean, std) = inception_score_from_probs(&probs, rows, classes, args.splits)?;
        report["inception_score"] = json!({"mean": mean, "std": std, "splits": args.splits});
        inputs.push(input_hash("probs", p)?);
    }
    write_json(&out.join("metrics.json"), &report)?;
    Ok(Outcome {
        summary: report,
        schedule_fingerprint: None,
        inputs,
    })
}

pub fn plot_cmd(
    config: &RunConfig,
    trajectories: &[PathBuf],
    steps: Option<&[usize]>,
    out: &Path,
) -> CliResult<Outcome> {
    let batches: Vec<TrajectoryBatch<f64>> = trajectories
        .iter()
        .map(load_trajectories)
        .collect::<diffmark::Result<_>>()?;
    let steps: Vec<usize> = match steps {
        Some(s) => s.to_vec(),
        None => {
            let mut s: Vec<usize> = batches[0].snapshots.keys().rev().copied().collect();
            s.push(0);
            s
        }
    };
    let rows: Vec<&TrajectoryBatch<f64>> = batches.iter().collect();
    let path = emit_trajectory_plot(&rows, &steps, &config.plot, out.join("trajectory_grid.png"))?;
    let (w, h) = config.plot.dimensions(rows.len(), steps.len());
    Ok(Outcome {
        summary: json!({
            "path": path.file_name().map(|n| n.to_string_lossy().into_owned()),
            "rows": rows.len(),
            "steps": steps,
            "width": w,
            "height": h,
        }),
        schedule_fingerprint: None,
        inputs: trajectories
            .iter()
            .enumerate()
            .map(|(i, p)| input_hash(&format!("trajectories_{i}"), p))
            .collect::<CliResult<_>>()?,
    })
}
