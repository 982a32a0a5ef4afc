use std::fmt::Write as _;

use cgtn_core::checkpoint::save_checkpoint;
use cgtn_core::monomial::enumerate_monomials;
use cgtn_core::taylor::{
    distance_stats_csv, evaluate_head, prune, train_head, weight_distance_stats, HeadTrainConfig,
};
use cgtn_core::{CoreError, Result};

use crate::config::RunConfig;
use crate::run::{load_dataset, RunDir};

/// Trains direct Taylor-expansion heads for every order up to `max_order`
/// on the resized dataset and writes the accuracy-per-order table, the
/// pruning report, and the weight-vs-distance statistics.
pub fn run(cfg: &RunConfig, max_order: usize, prune_keep: f64) -> Result<()> {
    let dir = RunDir::claim(cfg, "taylor-direct")?;
    let (train_set, test_set) = load_dataset::<f64>(cfg)?;
    let n = train_set.image_len();
    let head_cfg = HeadTrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        eval_batch: cfg.eval_batch,
    };

    let mut order_csv = String::from("order,p,test_accuracy\n");
    let mut last = None;
    for order in 0..=max_order {
        let terms = enumerate_monomials(n, order)?;
        let p = terms.len();
        println!("order {order}: training head over {p} terms");
        let (head, report) = train_head(&train_set, &test_set, &terms, &head_cfg)?;
        println!(
            "order {order}: test accuracy {:.4} (best epoch {})",
            report.best_test_accuracy, report.best_epoch
        );
        let _ = writeln!(order_csv, "{order},{p},{}", report.best_test_accuracy);
        dir.write(format!("head_order{order}_metrics.csv").as_str(), &report.metrics_csv)?;
        last = Some((order, head));
    }
    dir.write("accuracy_vs_order.csv", &order_csv)?;

    let (order, head) = last.ok_or_else(|| CoreError::Config("no orders trained".into()))?;
    save_checkpoint(
        &dir.path.join("head.ckpt"),
        &format!("# taylor head: order {order}, {n} variables\n"),
        &[("head.weight".to_string(), &head.weights)],
    )?;

    let mut report = String::new();
    let (full_loss, full_acc) = evaluate_head(&head, &test_set, cfg.eval_batch)?;
    let _ = writeln!(report, "order = {order}");
    let _ = writeln!(report, "terms = {}", head.terms.len());
    let _ = writeln!(report, "full_nonzero = {}", head.nonzero_weights());
    let _ = writeln!(report, "full_accuracy = {full_acc}");
    let _ = writeln!(report, "full_loss = {full_loss}");
    if prune_keep < 1.0 {
        let pruned = prune(&head, prune_keep)?;
        let (pruned_loss, pruned_acc) = evaluate_head(&pruned, &test_set, cfg.eval_batch)?;
        let _ = writeln!(report, "prune_keep = {prune_keep}");
        let _ = writeln!(report, "pruned_nonzero = {}", pruned.nonzero_weights());
        let _ = writeln!(report, "pruned_accuracy = {pruned_acc}");
        let _ = writeln!(report, "pruned_loss = {pruned_loss}");
        let _ = writeln!(report, "accuracy_drop = {}", full_acc - pruned_acc);
        println!(
            "pruned to {:.1}%: accuracy {full_acc:.4} -> {pruned_acc:.4}",
            prune_keep * 100.0
        );
    }
    dir.write("prune_report.txt", &report)?;

    if order >= 2 {
        let (h, w) = (test_set.height(), test_set.width());
        let stats = weight_distance_stats(&head, h, w)?;
        dir.write("distance_stats.csv", distance_stats_csv(&stats))?;
    }
    println!("wrote {}", dir.path.display());
    Ok(())
}
