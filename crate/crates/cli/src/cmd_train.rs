use std::fmt::Write as _;
use std::path::Path;

use cgtn_core::arch::{parse_arch, serialize_arch, Network};
use cgtn_core::checkpoint::{load_checkpoint, save_checkpoint};
use cgtn_core::train::{ablate, evaluate, train};
use cgtn_core::Result;
use cgtn_tensor::Element;

use crate::config::{Precision, RunConfig};
use crate::run::{load_dataset, read_arch, RunDir};

fn confusion_csv(confusion: &[Vec<usize>]) -> String {
    let mut s = String::from("true\\pred");
    for k in 0..confusion.len() {
        let _ = write!(s, ",{k}");
    }
    s.push('\n');
    for (label, row) in confusion.iter().enumerate() {
        let _ = write!(s, "{label}");
        for count in row {
            let _ = write!(s, ",{count}");
        }
        s.push('\n');
    }
    s
}

fn train_typed<E: Element>(cfg: &RunConfig) -> Result<()> {
    let dir = RunDir::claim(cfg, "train")?;
    let specs = read_arch(&cfg.arch_file)?;
    let (train_set, test_set) = load_dataset::<E>(cfg)?;
    let input_shape = (train_set.channels(), train_set.height(), train_set.width());
    let mut net = Network::<E>::build(specs, input_shape, cfg.seed)?;
    let report = train(&mut net, &cfg.train_config(), &train_set, &test_set)?;
    dir.write("metrics.csv", &report.metrics_csv)?;
    save_checkpoint(
        &dir.path.join("model.ckpt"),
        &serialize_arch(net.specs()),
        &net.named_params(),
    )?;
    let eval = evaluate(&net, &test_set, cfg.eval_batch)?;
    dir.write("confusion.csv", confusion_csv(&eval.confusion))?;
    let mut summary = String::new();
    let _ = writeln!(summary, "best_test_accuracy = {}", report.best_test_accuracy);
    let _ = writeln!(summary, "best_epoch = {}", report.best_epoch);
    let _ = writeln!(summary, "final_train_loss = {}", report.final_train_loss);
    dir.write("summary.txt", &summary)?;
    println!(
        "best test accuracy {:.4} at epoch {}",
        report.best_test_accuracy, report.best_epoch
    );
    println!("wrote {}", dir.path.display());
    Ok(())
}

pub fn run_train(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg),
        Precision::F64 => train_typed::<f64>(cfg),
    }
}

fn ablate_typed<E: Element>(cfg: &RunConfig) -> Result<()> {
    let dir = RunDir::claim(cfg, "ablate")?;
    let specs = read_arch(&cfg.arch_file)?;
    let (train_set, test_set) = load_dataset::<E>(cfg)?;
    let input_shape = (train_set.channels(), train_set.height(), train_set.width());
    let report = ablate::<E>(&specs, input_shape, &cfg.train_config(), &train_set, &test_set)?;
    dir.write("metrics_original.csv", &report.original_csv)?;
    dir.write("metrics_swapped.csv", &report.swapped_csv)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "original_accuracy = {}", report.original_accuracy);
    let _ = writeln!(summary, "swapped_accuracy = {}", report.swapped_accuracy);
    let _ = writeln!(
        summary,
        "gap_points = {}",
        100.0 * (report.original_accuracy - report.swapped_accuracy)
    );
    let _ = writeln!(summary, "swapped_arch = {}", report.swapped_arch.replace('\n', " / "));
    dir.write("ablation.txt", &summary)?;
    println!(
        "original {:.4} vs conv-swapped {:.4}",
        report.original_accuracy, report.swapped_accuracy
    );
    println!("wrote {}", dir.path.display());
    Ok(())
}

pub fn run_ablate(cfg: &RunConfig) -> Result<()> {
    match cfg.precision {
        Precision::F32 => ablate_typed::<f32>(cfg),
        Precision::F64 => ablate_typed::<f64>(cfg),
    }
}

fn eval_typed<E: Element>(cfg: &RunConfig, ckpt: &Path) -> Result<()> {
    let (arch_text, tensors) = load_checkpoint::<E>(ckpt)?;
    let specs = parse_arch(&arch_text)?;
    let (_, test_set) = load_dataset::<E>(cfg)?;
    let input_shape = (test_set.channels(), test_set.height(), test_set.width());
    let mut net = Network::<E>::build(specs, input_shape, 0)?;
    net.load_named(tensors)?;
    let report = evaluate(&net, &test_set, cfg.eval_batch)?;
    println!("test loss {:.6}", report.loss);
    println!("test accuracy {:.4}", report.accuracy);
    print!("{}", confusion_csv(&report.confusion));
    Ok(())
}

pub fn run_eval(cfg: &RunConfig, ckpt: &Path) -> Result<()> {
    match cfg.precision {
        Precision::F32 => eval_typed::<f32>(cfg, ckpt),
        Precision::F64 => eval_typed::<f64>(cfg, ckpt),
    }
}
