use std::fmt::Write as _;
use std::path::Path;

use cgtn_core::arch::{parse_arch, Network};
use cgtn_core::checkpoint::load_checkpoint;
use cgtn_core::data::LabeledImageSet;
use cgtn_core::distill::{
    classify_by_reference, default_embedder_specs, nearest_mean_pixel_accuracy, run_hierarchy,
    save_distilled, DistillPlan, Embedder,
};
use cgtn_core::{CoreError, Result};

use crate::config::{Precision, RunConfig};
use crate::run::{load_dataset, RunDir};

fn embedder_from(cfg: &RunConfig) -> Result<Embedder> {
    match cfg.embedder.as_str() {
        "default" => Ok(Embedder::Specs(default_embedder_specs())),
        "identity" => Ok(Embedder::Identity),
        path => {
            let text = std::fs::read_to_string(path).map_err(CoreError::Io)?;
            Ok(Embedder::Specs(parse_arch(&text)?))
        }
    }
}

fn distill_typed<E: cgtn_tensor::Element>(cfg: &RunConfig) -> Result<()> {
    let dir = RunDir::claim(cfg, "distill")?;
    let (train_set, _) = load_dataset::<E>(cfg)?;
    let plan = DistillPlan::new(
        train_set.num_classes(),
        cfg.per_class_counts.clone(),
        cfg.group_sizes.clone(),
        cfg.lambda,
        cfg.distill_steps,
        cfg.step_size,
        cfg.seed,
    )?;
    let embedder = embedder_from(cfg)?;
    let per_level = if cfg.per_level_steps.is_empty() {
        None
    } else {
        Some(cfg.per_level_steps.as_slice())
    };
    let out = dir.path.clone();
    let levels = run_hierarchy(&train_set, &plan, &embedder, per_level, |level| {
        let files = save_distilled(&out, level)?;
        println!(
            "level {}: {} images per class, wrote {}",
            level.level,
            level.set.count() / level.set.num_classes(),
            files[0].display()
        );
        Ok(())
    })?;
    let mut summary = String::new();
    for level in &levels {
        let _ = writeln!(
            summary,
            "level {} images {} classes {}",
            level.level,
            level.set.count(),
            level.set.num_classes()
        );
    }
    dir.write("levels.txt", &summary)?;
    println!("wrote {}", dir.path.display());
    Ok(())
}

pub fn run_distill(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => distill_typed::<f32>(cfg),
        Precision::F64 => distill_typed::<f64>(cfg),
    }
}

/// Picks the deepest level cache in the references directory.
fn newest_level(refs: &Path) -> Result<std::path::PathBuf> {
    let mut best: Option<(usize, std::path::PathBuf)> = None;
    for entry in std::fs::read_dir(refs).map_err(CoreError::Io)? {
        let entry = entry.map_err(CoreError::Io)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(level) = name
            .strip_prefix("level")
            .and_then(|s| s.strip_suffix(".cgds"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            if best.as_ref().map_or(true, |(b, _)| level > *b) {
                best = Some((level, entry.path()));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| CoreError::Data(format!("no level*.cgds files in {}", refs.display())))
}

fn classify_typed<E: cgtn_tensor::Element>(
    cfg: &RunConfig,
    refs_dir: &Path,
    ckpt: &Path,
    level: Option<usize>,
) -> Result<()> {
    let refs_path = match level {
        Some(k) => refs_dir.join(format!("level{k}.cgds")),
        None => newest_level(refs_dir)?,
    };
    let references = LabeledImageSet::<E>::load_cache(&refs_path)?;
    let (arch_text, tensors) = load_checkpoint::<E>(ckpt)?;
    let specs = parse_arch(&arch_text)?;
    let input_shape = (
        references.channels(),
        references.height(),
        references.width(),
    );
    let mut net = Network::<E>::build(specs, input_shape, 0)?;
    net.load_named(tensors)?;
    let (train_set, test_set) = load_dataset::<E>(cfg)?;
    let report = classify_by_reference(&test_set, &references, &net, cfg.eval_batch)?;
    let ref_pixel = nearest_mean_pixel_accuracy(&references, &test_set)?;
    let train_pixel = nearest_mean_pixel_accuracy(&train_set, &test_set)?;
    println!("references = {}", refs_path.display());
    println!("reference_accuracy = {}", report.accuracy);
    println!("correct = {} / {}", report.correct, report.total);
    println!("zero_norm_misses = {}", report.zero_norm_misses);
    println!("reference_pixel_accuracy = {ref_pixel}");
    println!("train_mean_pixel_accuracy = {train_pixel}");
    Ok(())
}

pub fn run_classify(
    cfg: &RunConfig,
    refs_dir: &Path,
    ckpt: &Path,
    level: Option<usize>,
) -> Result<()> {
    match cfg.precision {
        Precision::F32 => classify_typed::<f32>(cfg, refs_dir, ckpt, level),
        Precision::F64 => classify_typed::<f64>(cfg, refs_dir, ckpt, level),
    }
}
