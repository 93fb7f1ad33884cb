//! The six pipeline stages. Each reads its inputs from the output tree,
//! writes its artifacts there and returns the paths it wrote.

use std::path::{Path, PathBuf};

use noisylab::analysis::{
    capture_activations, dominant_component_image, fisher_profile, weight_kl_profile, weight_kl_profile_multi, AnalysisProfile,
    ProfileEntry, ProfileKind,
};
use noisylab::data::{assess_label_quality, calibrate_noise, generate_corpus, load_corpus, save_corpus, Corpus, QualityMeans, Split};
use noisylab::models::{build_model, CheckpointBundle, FrameworkKind, SegmentationModel};
use noisylab::training::{self, EvalSet, LabelSource, RunLog, TrainConfig, TrainOutput, TrainingSet};
use serde::Serialize;

use crate::config::{label_name, mode_name, ExperimentConfig, InitSource};
use crate::error::CliError;
use crate::grid::{pc_grid_png, GridTile};
use crate::layout::{read_text, write_file, write_run_config, Layout, CHECKPOINT, RUNLOG};
use crate::report;

type Written = Vec<PathBuf>;

#[derive(Serialize)]
struct StageRecord<'a, T: Serialize> {
    experiment_hash: String,
    command: &'a str,
    #[serde(flatten)]
    resolved: T,
}

fn stage<T: Serialize>(cfg: &ExperimentConfig, command: &'static str, resolved: T) -> StageRecord<'static, T> {
    StageRecord { experiment_hash: cfg.hash(), command, resolved }
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let mut written = Vec::new();
    let noise = match &cfg.calibration {
        Some(c) => calibrate_noise(&QualityMeans::iou(c.target_mean_iou), c.corpus_size, &cfg.scene, &c.options)?,
        None => cfg.noise.clone(),
    };
    let corpus = generate_corpus(&cfg.scene, &noise, &cfg.corpus, cfg.data_seed)?;
    let dir = layout.corpus();
    save_corpus(&corpus, &dir)?;
    written.push(dir.join("manifest.json"));
    let noise_json = serde_json::to_string_pretty(&noise).expect("noise serializes") + "\n";
    write_file(&layout.noise_file(), noise_json, &mut written)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        data_seed: u64,
        noise: &'a noisylab::data::NoiseConfig,
        experiment: &'a ExperimentConfig,
    }
    write_run_config(&dir, &stage(cfg, "generate", Resolved { data_seed: cfg.data_seed, noise: &noise, experiment: cfg }), &mut written)?;
    Ok(written)
}

/// Loads the corpus and checks it was generated under the same scene.
fn corpus(cfg: &ExperimentConfig, layout: &Layout) -> Result<Corpus, CliError> {
    let dir = layout.corpus();
    if !dir.join("manifest.json").is_file() {
        return Err(CliError::missing(&dir.join("manifest.json"), "corpus manifest (run `generate` first)"));
    }
    let corpus = load_corpus(&dir)?;
    if corpus.class_names != cfg.scene.class_names() || corpus.noisy_class_names != cfg.scene.pretrain_class_names {
        return Err(CliError::config(format!("corpus at {} was generated with a different class legend", dir.display())));
    }
    Ok(corpus)
}

pub fn assess(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let corpus = corpus(cfg, &layout)?;
    let map = &cfg.scene.pretrain_class_map;
    let triples: Vec<_> = corpus.entries.iter().filter(|e| e.triple.variant_id == 0).map(|e| &e.triple).collect();
    let exact: Vec<_> = triples.iter().map(|t| map.apply(&t.exact_mask)).collect();
    let noisy: Vec<_> = triples.iter().map(|t| t.noisy_mask.clone()).collect();
    let report = assess_label_quality(&exact, &noisy, &corpus.noisy_class_names)?;
    let mut written = Vec::new();
    let dir = layout.assess();
    write_file(&dir.join("label_quality.csv"), report.to_table_csv(), &mut written)?;
    #[derive(Serialize)]
    struct Resolved {
        patches: usize,
        reference: &'static str,
    }
    write_run_config(&dir, &stage(cfg, "assess", Resolved { patches: triples.len(), reference: "exact_mapped" }), &mut written)?;
    Ok(written)
}

#[derive(Serialize)]
struct TrainRun<'a> {
    framework: FrameworkKind,
    encoder: &'a noisylab::models::EncoderSpec,
    num_classes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    init: Option<InitSource>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_checkpoint: Option<String>,
    train: &'a TrainConfig,
}

fn write_training(dir: &Path, mut out: TrainOutput, written: &mut Written) -> Result<RunLog, CliError> {
    write_file(&dir.join(CHECKPOINT), out.checkpoint.to_bytes(), written)?;
    for (epoch, snap) in &out.snapshots {
        write_file(&dir.join(format!("checkpoint_epoch{epoch}.nlckpt")), snap.to_bytes(), written)?;
    }
    out.log.checkpoint = Some(CHECKPOINT.to_string());
    write_file(&dir.join(RUNLOG), out.log.to_jsonl(), written)?;
    Ok(out.log)
}

fn note(msg: String) {
    eprintln!("{msg}");
}

pub fn pretrain(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let corpus = corpus(cfg, &layout)?;
    let data = TrainingSet::from_corpus(&corpus, Split::Pretrain).with_class_map(cfg.scene.pretrain_class_map.clone());
    let mut written = Vec::new();
    for &label in &cfg.matrix.pretrain_labels {
        for &seed in &cfg.seeds {
            let train = TrainConfig { seed, label_source: Some(label), ..cfg.pretrain.clone() };
            let kind = cfg.model.pretrain_framework;
            let num_classes = cfg.scene.num_pretrain_classes();
            let mut model = build_model(&cfg.model.encoder, kind, num_classes, seed)?;
            let out = training::pretrain(&data, &mut model, &train)?;
            let dir = layout.pretrain_run(label, seed);
            let log = write_training(&dir, out, &mut written)?;
            let run = TrainRun { framework: kind, encoder: &cfg.model.encoder, num_classes, init: None, init_checkpoint: None, train: &train };
            write_run_config(&dir, &stage(cfg, "pretrain", run), &mut written)?;
            let last = log.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN);
            note(format!("pretrain {} seed {seed}: final loss {last:.4}", label_name(label)));
        }
    }
    Ok(written)
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::missing(path, "checkpoint"))
    }
}

fn load_bundle(path: &Path) -> Result<CheckpointBundle, CliError> {
    require(path)?;
    Ok(CheckpointBundle::load(path)?)
}

pub fn finetune(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let corpus = corpus(cfg, &layout)?;
    let data = TrainingSet::from_corpus(&corpus, Split::Finetune);
    let test = EvalSet::from_corpus(&corpus, Split::Test);
    let num_classes = corpus.class_names.len();
    for &init in &cfg.matrix.inits {
        for &seed in &cfg.seeds {
            if let Some(l) = init.pretrained_labels() {
                require(&layout.pretrain_run(l, seed).join(CHECKPOINT))?;
            }
        }
    }
    let mut written = Vec::new();
    for &init in &cfg.matrix.inits {
        for &kind in &cfg.matrix.frameworks {
            for &mode in &cfg.matrix.encoder_modes {
                for &seed in &cfg.seeds {
                    let source = init.pretrained_labels().map(|l| layout.pretrain_run(l, seed).join(CHECKPOINT));
                    let bundle = source.as_deref().map(load_bundle).transpose()?;
                    let train = TrainConfig { seed, encoder_mode: mode, ..cfg.finetune.clone() };
                    let mut model = build_model(&cfg.model.encoder, kind, num_classes, seed)?;
                    let out = training::finetune(&data, Some(&test), &mut model, bundle.as_ref(), &train)?;
                    let dir = layout.finetune_run(init, kind, mode, seed);
                    let log = write_training(&dir, out, &mut written)?;
                    let run = TrainRun {
                        framework: kind,
                        encoder: &cfg.model.encoder,
                        num_classes,
                        init: Some(init),
                        init_checkpoint: source.map(|p| p.strip_prefix(&layout.root).unwrap_or(&p).display().to_string()),
                        train: &train,
                    };
                    write_run_config(&dir, &stage(cfg, "finetune", run), &mut written)?;
                    if let Some(e) = log.last_eval() {
                        write_file(&dir.join("metrics.csv"), report::metrics_csv(&e.metrics), &mut written)?;
                        note(format!(
                            "finetune {}/{}/{} seed {seed}: test mIoU {:.2}",
                            init.name(),
                            kind.name(),
                            mode_name(mode),
                            100.0 * e.metrics.mean_iou
                        ));
                    }
                }
            }
        }
    }
    Ok(written)
}

/// Per-path mean and population std over profiles with identical paths.
fn aggregate(kind: ProfileKind, profiles: &[AnalysisProfile]) -> AnalysisProfile {
    let entries = profiles[0]
        .entries
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let vals: Vec<f64> = profiles.iter().filter_map(|p| p.entries[j].value).collect();
            let (value, std) = if vals.is_empty() {
                (None, None)
            } else {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (Some(mean), Some(var.sqrt()))
            };
            ProfileEntry { path: e.path.clone(), side: e.side, value, std }
        })
        .collect();
    AnalysisProfile { kind, entries, smoothing: None }
}

fn write_profile(dir: &Path, stem: &str, title: &str, p: &AnalysisProfile, written: &mut Written) -> Result<(), CliError> {
    write_file(&dir.join(format!("{stem}.csv")), p.to_csv(), written)?;
    write_file(&dir.join(format!("{stem}.svg")), p.to_svg(title), written)
}

pub fn analyze(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let corpus = corpus(cfg, &layout)?;
    let a = &cfg.analysis;
    let eval = EvalSet::mapped(&corpus, Split::Test, &cfg.scene.pretrain_class_map);
    let n = a.samples.min(eval.len());
    if a.grid_patch >= eval.len() {
        return Err(CliError::config(format!("analysis.grid_patch {} exceeds the {} test patches", a.grid_patch, eval.len())));
    }
    for &label in &cfg.matrix.pretrain_labels {
        for &seed in &cfg.seeds {
            require(&layout.pretrain_run(label, seed).join(CHECKPOINT))?;
        }
    }
    let dir = layout.analysis();
    let mut written = Vec::new();
    let mut summary = report::AnalysisSummary::default();
    let mut tiles: Vec<Vec<GridTile>> = Vec::new();
    let mut row_labels = Vec::new();
    let mut bundles: Vec<(LabelSource, u64, CheckpointBundle)> = Vec::new();

    for &label in &cfg.matrix.pretrain_labels {
        let mut per_seed = Vec::new();
        for &seed in &cfg.seeds {
            let bundle = load_bundle(&layout.pretrain_run(label, seed).join(CHECKPOINT))?;
            let mut model = SegmentationModel::from_checkpoint(&bundle)?;
            let profile = fisher_profile(&model, &eval.images[..n], &eval.masks[..n], &a.fisher)?;
            let stem = format!("fisher_{}_seed{seed}", label_name(label));
            write_profile(&dir.join("fisher"), &stem, &format!("Fisher ratio, {} labels, seed {seed}", label_name(label)), &profile, &mut written)?;
            summary.push("fisher", label_name(label), seed, &profile);

            let trace = capture_activations(&mut model, &eval.images[a.grid_patch])?;
            let row = trace
                .cubes
                .iter()
                .map(|cube| dominant_component_image(cube).map(|px| GridTile { height: cube.h, width: cube.w, pixels: px }))
                .collect::<Result<Vec<_>, _>>()?;
            tiles.push(row);
            row_labels.push(format!("{}_seed{seed}", label_name(label)));
            write_file(&dir.join("traces").join(format!("{}_seed{seed}.nlckpt", label_name(label))), trace.to_bundle(&model).to_bytes(), &mut written)?;

            per_seed.push(profile);
            bundles.push((label, seed, bundle));
        }
        let mean = aggregate(ProfileKind::Fisher, &per_seed);
        let name = label_name(label);
        write_profile(&dir, &format!("fisher_{name}"), &format!("Fisher ratio, {name} labels, mean over seeds"), &mean, &mut written)?;
        let smooth = mean.smoothed(a.savgol_window, a.savgol_polyorder)?;
        write_profile(&dir, &format!("fisher_{name}_smoothed"), &format!("Fisher ratio, {name} labels, smoothed"), &smooth, &mut written)?;
    }

    let find = |label: LabelSource, seed: u64| bundles.iter().find(|b| b.0 == label && b.1 == seed).map(|b| b.2.clone());
    let pairs: Vec<(u64, CheckpointBundle, CheckpointBundle)> = cfg
        .seeds
        .iter()
        .filter_map(|&s| Some((s, find(LabelSource::ExactMapped, s)?, find(LabelSource::Noisy, s)?)))
        .collect();
    if !pairs.is_empty() {
        for (seed, exact, noisy) in &pairs {
            summary.push("kl", "exact_mapped|noisy", *seed, &weight_kl_profile(exact, noisy)?);
        }
        let multi: Vec<_> = pairs.into_iter().map(|(_, e, n)| (e, n)).collect();
        let kl = weight_kl_profile_multi(&multi)?;
        write_profile(&dir, "kl", "KL(exact || noisy) of conv weights", &kl, &mut written)?;
        let smooth = kl.smoothed(a.savgol_window, a.savgol_polyorder)?;
        write_profile(&dir, "kl_smoothed", "KL(exact || noisy), smoothed", &smooth, &mut written)?;
    }

    let labels: String = row_labels.iter().map(|l| format!("{l}\n")).collect();
    write_file(&dir.join("dominant_pc.png"), pc_grid_png(&tiles, cfg.scene.patch_size)?, &mut written)?;
    write_file(&dir.join("dominant_pc_rows.txt"), labels, &mut written)?;
    write_file(&dir.join("summary.csv"), summary.to_csv(), &mut written)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        samples: usize,
        seeds: &'a [u64],
        analysis: &'a crate::config::AnalysisSection,
    }
    write_run_config(&dir, &stage(cfg, "analyze", Resolved { samples: n, seeds: &cfg.seeds, analysis: a }), &mut written)?;
    Ok(written)
}

pub fn report(cfg: &ExperimentConfig) -> Result<Written, CliError> {
    let layout = Layout::new(&cfg.output_dir);
    let mut rows = Vec::new();
    for &init in &cfg.matrix.inits {
        for &kind in &cfg.matrix.frameworks {
            for &mode in &cfg.matrix.encoder_modes {
                let mut runs = Vec::new();
                for &seed in &cfg.seeds {
                    let path = layout.finetune_run(init, kind, mode, seed).join(RUNLOG);
                    let log = RunLog::from_jsonl(&read_text(&path, "run log")?)
                        .map_err(|e| CliError::new(crate::ErrorKind::MissingInput, format!("corrupt run log {}: {e}", path.display())))?;
                    let eval = log
                        .last_eval()
                        .ok_or_else(|| CliError::new(crate::ErrorKind::MissingInput, format!("{} has no evaluation record", path.display())))?;
                    runs.push(eval.metrics.clone());
                }
                rows.push(report::FinetuneRow::new(init, kind, mode, &runs));
            }
        }
    }
    let dir = layout.report();
    let mut written = Vec::new();
    write_file(&dir.join("finetune_miou.csv"), report::finetune_csv(&rows), &mut written)?;
    let quality = std::fs::read_to_string(layout.assess().join("label_quality.csv")).ok();
    let analysis = match std::fs::read_to_string(layout.analysis().join("summary.csv")) {
        Ok(text) => Some(report::AnalysisSummary::from_csv(&text).map_err(|e| {
            CliError::new(crate::ErrorKind::MissingInput, format!("corrupt analysis summary: {e}"))
        })?),
        Err(_) => None,
    };
    let md = report::summary_markdown(&rows, quality.as_deref(), analysis.as_ref());
    write_file(&dir.join("summary.md"), md, &mut written)?;
    write_run_config(&dir, &stage(cfg, "report", &cfg.matrix), &mut written)?;
    Ok(written)
}
