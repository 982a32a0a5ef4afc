use std::sync::Arc;

use cgtn_tensor::{Element, Tape, TapeOp, Tensor};

use crate::data::LabeledImageSet;
use crate::error::{CoreError, Result};
use crate::layers::MatMulTransB;
use crate::monomial::{FeaturePlan, MonomialIndex};
use crate::train::{argmax, Optimizer, OptimizerKind, SoftmaxCrossEntropy};

/// Linear classifier over an explicit monomial feature basis: one weight
/// row per class, one column per term. The constant term's weight doubles
/// as the bias.
#[derive(Debug, Clone)]
pub struct LinearHead<E: Element> {
    /// [numClasses, terms]
    pub weights: Tensor<E>,
    pub terms: Vec<MonomialIndex>,
}

impl<E: Element> LinearHead<E> {
    pub fn new(weights: Tensor<E>, terms: Vec<MonomialIndex>) -> Result<Self> {
        if weights.rank() != 2 || weights.shape()[1] != terms.len() {
            return Err(CoreError::Config(format!(
                "weight shape {:?} does not cover {} terms",
                weights.shape(),
                terms.len()
            )));
        }
        Ok(LinearHead { weights, terms })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weights
            .data()
            .iter()
            .filter(|v| **v != E::zero())
            .count()
    }
}

/// Features of the images at `indices`, one row per image, streamed into
/// a fresh [len(indices), terms] tensor.
pub fn featurize_batch<E: Element>(
    plan: &FeaturePlan,
    set: &LabeledImageSet<E>,
    indices: &[usize],
) -> Result<Tensor<E>> {
    let p = plan.num_terms();
    if set.image_len() != plan.num_vars() {
        return Err(CoreError::Config(format!(
            "images have {} pixels but the feature plan expects {}",
            set.image_len(),
            plan.num_vars()
        )));
    }
    let mut data = vec![E::zero(); indices.len() * p];
    for (row, &i) in indices.iter().enumerate() {
        plan.featurize_into(set.image(i), &mut data[row * p..(row + 1) * p]);
    }
    Ok(Tensor::new(vec![indices.len(), p], data)?)
}

#[derive(Debug, Clone)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_batch: usize,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
            eval_batch: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrainReport {
    pub metrics_csv: String,
    pub best_test_accuracy: f64,
    pub best_epoch: usize,
}

/// Loss and accuracy of a head over a whole set, streaming features.
pub fn evaluate_head<E: Element>(
    head: &LinearHead<E>,
    set: &LabeledImageSet<E>,
    chunk: usize,
) -> Result<(f64, f64)> {
    let plan = FeaturePlan::new(&head.terms, set.image_len())?;
    let k = head.num_classes();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let n = set.count();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let features = featurize_batch(&plan, set, &idx)?;
        let logits = TapeOp::<E>::forward(&MatMulTransB, &[&features, &head.weights])?;
        let labels: Vec<u8> = idx.iter().map(|&i| set.labels()[i]).collect();
        let ce = SoftmaxCrossEntropy {
            labels: labels.clone(),
        };
        loss_sum += TapeOp::<E>::forward(&ce, &[&logits])?.item()?.to_f64() * idx.len() as f64;
        for (row, &label) in labels.iter().enumerate() {
            if argmax(&logits.data()[row * k..(row + 1) * k]) == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

/// Trains a fresh zero-initialized head over the given terms with the
/// adaptive-moment optimizer, generating features batch by batch. The
/// returned head carries the best-test-epoch weights.
pub fn train_head<E: Element>(
    train_set: &LabeledImageSet<E>,
    test_set: &LabeledImageSet<E>,
    terms: &[MonomialIndex],
    cfg: &HeadTrainConfig,
) -> Result<(LinearHead<E>, HeadTrainReport)> {
    let plan = FeaturePlan::new(terms, train_set.image_len())?;
    let k = train_set.num_classes();
    let p = terms.len();
    let mut head = LinearHead::new(Tensor::zeros(vec![k, p]), terms.to_vec())?;
    let mut optimizer = Optimizer::new(OptimizerKind::AdaptiveMoment, cfg.learning_rate, 0.9);
    let mut csv = String::from("epoch,split,loss,accuracy\n");
    let mut best_acc = -1.0;
    let mut best_epoch = 0;
    let mut best_weights = head.weights.clone();
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs {
        let order_seed = cfg
            .seed
            .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let order = crate::data::shuffled_indices(train_set.count(), order_seed);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for indices in order.chunks(cfg.batch_size) {
            let labels: Vec<u8> = indices.iter().map(|&i| train_set.labels()[i]).collect();
            let features = featurize_batch(&plan, train_set, indices)?;
            let mut tape = Tape::new();
            let x = tape.constant(features);
            let w = tape.param(head.weights.clone());
            let logits = tape.apply(Arc::new(MatMulTransB), &[x, w])?;
            {
                let data = tape.value(logits).data();
                for (row, &label) in labels.iter().enumerate() {
                    if argmax(&data[row * k..(row + 1) * k]) == label as usize {
                        correct += 1;
                    }
                }
            }
            let b = labels.len();
            let loss = tape.apply(Arc::new(SoftmaxCrossEntropy { labels }), &[logits])?;
            let loss_val = tape.value(loss).item()?.to_f64();
            global_step += 1;
            if !loss_val.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "head loss became {loss_val} at step {global_step} (epoch {epoch})"
                )));
            }
            loss_sum += loss_val * b as f64;
            tape.backward(loss)?;
            let grad = tape
                .grad_tensor(w)
                .ok_or_else(|| CoreError::Numeric("missing head gradient".into()))?;
            optimizer.apply(&mut [&mut head.weights], &[grad])?;
        }
        let train_loss = loss_sum / train_set.count() as f64;
        let train_acc = correct as f64 / train_set.count() as f64;
        let (test_loss, test_acc) = evaluate_head(&head, test_set, cfg.eval_batch)?;
        csv.push_str(&format!("{epoch},train,{train_loss:.6},{train_acc:.6}\n"));
        csv.push_str(&format!("{epoch},test,{test_loss:.6},{test_acc:.6}\n"));
        if test_acc > best_acc {
            best_acc = test_acc;
            best_epoch = epoch;
            best_weights = head.weights.clone();
        }
    }
    if cfg.epochs == 0 {
        best_acc = evaluate_head(&head, test_set, cfg.eval_batch)?.1;
    } else {
        head.weights = best_weights;
    }
    Ok((
        head,
        HeadTrainReport {
            metrics_csv: csv,
            best_test_accuracy: best_acc,
            best_epoch,
        },
    ))
}

/// Keeps the ceil(fraction * total) largest-magnitude weights across the
/// whole head, zeroing the rest. Ties resolve to the lower flat index.
pub fn prune<E: Element>(head: &LinearHead<E>, keep_fraction: f64) -> Result<LinearHead<E>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(CoreError::Config(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let total = head.weights.numel();
    let keep = (keep_fraction * total as f64).ceil() as usize;
    if keep >= total {
        return Ok(head.clone());
    }
    let mut order: Vec<usize> = (0..total).collect();
    let data = head.weights.data();
    order.sort_by(|&a, &b| {
        let ma = data[a].to_f64().abs();
        let mb = data[b].to_f64().abs();
        mb.partial_cmp(&ma).unwrap().then(a.cmp(&b))
    });
    let mut pruned = head.weights.clone();
    for &i in &order[keep..] {
        pruned.data_mut()[i] = E::zero();
    }
    LinearHead::new(pruned, head.terms.clone())
}

/// Distance histogram of quadratic-term weights: each quadratic term
/// x_i x_j gets the Euclidean distance between pixels i and j on the
/// grid, terms are ranked by aggregate |weight| ascending and split into
/// five equal levels, and counts are tallied per (distance, level).
#[derive(Debug, Clone)]
pub struct DistanceStats {
    /// (distance, counts in levels L1..L5), sorted by distance.
    pub rows: Vec<(f64, [usize; 5])>,
    pub total_quadratic_terms: usize,
}

pub fn weight_distance_stats<E: Element>(
    head: &LinearHead<E>,
    grid_h: usize,
    grid_w: usize,
) -> Result<DistanceStats> {
    let k = head.num_classes();
    let p = head.terms.len();
    let data = head.weights.data();
    let mut quads: Vec<(usize, u64, f64)> = Vec::new();
    for (t, term) in head.terms.iter().enumerate() {
        if term.degree() != 2 {
            continue;
        }
        let vars = term.vars();
        let (i, j) = (vars[0] as usize, vars[1] as usize);
        if j >= grid_h * grid_w {
            return Err(CoreError::Config(format!(
                "term {term} exceeds the {grid_h}x{grid_w} grid"
            )));
        }
        let (r1, c1) = (i / grid_w, i % grid_w);
        let (r2, c2) = (j / grid_w, j % grid_w);
        let d2 = (r1.abs_diff(r2).pow(2) + c1.abs_diff(c2).pow(2)) as u64;
        let mut mag = 0.0f64;
        for class in 0..k {
            mag = mag.max(data[class * p + t].to_f64().abs());
        }
        quads.push((t, d2, mag));
    }
    if quads.is_empty() {
        return Err(CoreError::Config("head contains no quadratic terms".into()));
    }
    let q = quads.len();
    let mut rank: Vec<usize> = (0..q).collect();
    rank.sort_by(|&a, &b| {
        quads[a]
            .2
            .partial_cmp(&quads[b].2)
            .unwrap()
            .then(quads[a].0.cmp(&quads[b].0))
    });
    let mut by_d2: std::collections::BTreeMap<u64, [usize; 5]> = std::collections::BTreeMap::new();
    for (pos, &qi) in rank.iter().enumerate() {
        let level = (pos * 5) / q;
        by_d2.entry(quads[qi].1).or_insert([0; 5])[level] += 1;
    }
    Ok(DistanceStats {
        rows: by_d2
            .into_iter()
            .map(|(d2, counts)| ((d2 as f64).sqrt(), counts))
            .collect(),
        total_quadratic_terms: q,
    })
}

pub fn distance_stats_csv(stats: &DistanceStats) -> String {
    let mut out = String::from("distance,L1,L2,L3,L4,L5\n");
    for (d, counts) in &stats.rows {
        out.push_str(&format!(
            "{d:.6},{},{},{},{},{}\n",
            counts[0], counts[1], counts[2], counts[3], counts[4]
        ));
    }
    out
}
