use cgtn_tensor::{Element, Tape, TapeOp, Tensor, TensorError};

use crate::arch::{swap_cg_to_conv, LayerSpec, Network};
use crate::data::{batch_iter, LabeledImageSet};
use crate::error::{CoreError, Result};

/// Mean negative log-likelihood of the true classes under a softmax over
/// the logit rows. Labels ride inside the op, so the tape sees a single
/// differentiable input.
#[derive(Debug)]
pub struct SoftmaxCrossEntropy {
    pub labels: Vec<u8>,
}

impl SoftmaxCrossEntropy {
    fn check<E: Element>(&self, logits: &Tensor<E>) -> cgtn_tensor::Result<(usize, usize)> {
        if logits.rank() != 2 || logits.shape()[1] == 0 {
            return Err(TensorError::op(
                "softmax_cross_entropy",
                format!("expected [batch, classes] logits, got {:?}", logits.shape()),
            ));
        }
        let (b, k) = (logits.shape()[0], logits.shape()[1]);
        if self.labels.len() != b {
            return Err(TensorError::op(
                "softmax_cross_entropy",
                format!("{b} logit rows but {} labels", self.labels.len()),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= k) {
            return Err(TensorError::op(
                "softmax_cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        Ok((b, k))
    }
}

impl<E: Element> TapeOp<E> for SoftmaxCrossEntropy {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn forward(&self, inputs: &[&Tensor<E>]) -> cgtn_tensor::Result<Tensor<E>> {
        let logits = inputs[0];
        let (b, k) = self.check(logits)?;
        let mut total = 0.0;
        for (row, &label) in (0..b).zip(&self.labels) {
            let xs = &logits.data()[row * k..(row + 1) * k];
            let m = xs
                .iter()
                .map(|&v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = xs.iter().map(|&v| (v.to_f64() - m).exp()).sum();
            total += m + sum.ln() - xs[label as usize].to_f64();
        }
        Ok(Tensor::scalar(E::from_f64(total / b as f64)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor<E>],
        _output: &Tensor<E>,
        grad: &Tensor<E>,
    ) -> cgtn_tensor::Result<Vec<Option<Tensor<E>>>> {
        let logits = inputs[0];
        let (b, k) = self.check(logits)?;
        let g = grad.data()[0].to_f64() / b as f64;
        let mut dx = Tensor::zeros(vec![b, k]);
        for (row, &label) in (0..b).zip(&self.labels) {
            let xs = &logits.data()[row * k..(row + 1) * k];
            let m = xs
                .iter()
                .map(|&v| v.to_f64())
                .fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = xs.iter().map(|&v| (v.to_f64() - m).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let drow = &mut dx.data_mut()[row * k..(row + 1) * k];
            for (j, (d, e)) in drow.iter_mut().zip(&exps).enumerate() {
                let softmax = e / sum;
                let onehot = if j == label as usize { 1.0 } else { 0.0 };
                *d = E::from_f64(g * (softmax - onehot));
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Index of the row maximum; ties break to the lowest index.
pub fn argmax<E: Element>(row: &[E]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    AdaptiveMoment,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
            "adaptive_moment" => Ok(OptimizerKind::AdaptiveMoment),
            other => Err(CoreError::Config(format!(
                "unknown optimizer {other:?}; use sgd_momentum or adaptive_moment"
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::AdaptiveMoment => "adaptive_moment",
        }
    }
}

/// First-order optimizer with per-tensor state, accumulated in f64.
pub struct Optimizer {
    kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, momentum: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            momentum,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must be in a stable order
    /// across calls, one gradient per parameter tensor.
    pub fn apply<E: Element>(
        &mut self,
        params: &mut [&mut Tensor<E>],
        grads: &[Tensor<E>],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(CoreError::Config(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            if self.kind == OptimizerKind::AdaptiveMoment {
                self.second = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            }
        }
        self.step += 1;
        for (slot, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    let vel = &mut self.first[slot];
                    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(vel) {
                        *v = self.momentum * *v + g.to_f64();
                        *p = E::from_f64(p.to_f64() - self.learning_rate * *v);
                    }
                }
                OptimizerKind::AdaptiveMoment => {
                    let bias1 = 1.0 - self.beta1.powi(self.step as i32);
                    let bias2 = 1.0 - self.beta2.powi(self.step as i32);
                    let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                    for (((p, &g), mi), vi) in param
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        let g = g.to_f64();
                        *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                        *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                        let mhat = *mi / bias1;
                        let vhat = *vi / bias2;
                        *p = E::from_f64(
                            p.to_f64() - self.learning_rate * mhat / (vhat.sqrt() + self.eps),
                        );
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Evaluate the test split in chunks of this many images.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            optimizer: OptimizerKind::AdaptiveMoment,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            eval_batch: 256,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    /// confusion[true_class][predicted_class]
    pub confusion: Vec<Vec<usize>>,
}

/// Forward-only evaluation over the whole set in submission order.
pub fn evaluate<E: Element>(
    net: &Network<E>,
    set: &LabeledImageSet<E>,
    chunk: usize,
) -> Result<EvalReport> {
    let k = set.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let n = set.count();
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = set.subset(&idx)?;
        let logits = net.eval(batch.images())?;
        let ce = SoftmaxCrossEntropy {
            labels: batch.labels().to_vec(),
        };
        let loss = TapeOp::<E>::forward(&ce, &[&logits])?;
        loss_sum += loss.item()?.to_f64() * idx.len() as f64;
        let kk = logits.shape()[1];
        for (row, &label) in batch.labels().iter().enumerate() {
            let pred = argmax(&logits.data()[row * kk..(row + 1) * kk]);
            confusion[label as usize][pred] += 1;
            if pred == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(EvalReport {
        loss: loss_sum / n as f64,
        accuracy: correct as f64 / n as f64,
        confusion,
    })
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// "epoch,split,loss,accuracy" rows, one train and one test row per epoch.
    pub metrics_csv: String,
    pub best_test_accuracy: f64,
    pub best_epoch: usize,
    pub final_train_loss: f64,
}

/// Trains the network in place, leaving it at the parameters of the best
/// test epoch. Fully deterministic for a fixed config and seed.
pub fn train<E: Element>(
    net: &mut Network<E>,
    cfg: &TrainConfig,
    train_set: &LabeledImageSet<E>,
    test_set: &LabeledImageSet<E>,
) -> Result<TrainReport> {
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    let mut csv = String::from("epoch,split,loss,accuracy\n");
    let mut best_acc = -1.0;
    let mut best_epoch = 0;
    let mut best_params = net.clone_params();
    let mut final_train_loss = f64::NAN;
    let mut global_step = 0u64;

    for epoch in 0..cfg.epochs {
        let order_seed = cfg
            .seed
            .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (images, labels) in batch_iter(train_set, cfg.batch_size, order_seed)? {
            let b = labels.len();
            let mut tape = Tape::new();
            let param_ids = net.insert_params(&mut tape, true);
            let x = tape.constant(images);
            let logits = net.forward(&mut tape, x, &param_ids)?;
            let k = tape.value(logits).shape()[1];
            for (row, &label) in labels.iter().enumerate() {
                let data = tape.value(logits).data();
                if argmax(&data[row * k..(row + 1) * k]) == label as usize {
                    correct += 1;
                }
            }
            let loss = tape.apply(
                std::sync::Arc::new(SoftmaxCrossEntropy { labels }),
                &[logits],
            )?;
            let loss_val = tape.value(loss).item()?.to_f64();
            global_step += 1;
            if !loss_val.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "loss became {loss_val} at step {global_step} (epoch {epoch})"
                )));
            }
            loss_sum += loss_val * b as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor<E>> = param_ids
                .iter()
                .flatten()
                .map(|&id| {
                    tape.grad_tensor(id)
                        .ok_or_else(|| CoreError::Numeric("missing parameter gradient".into()))
                })
                .collect::<Result<_>>()?;
            let mut params: Vec<&mut Tensor<E>> = net
                .params_mut()
                .iter_mut()
                .flatten()
                .map(|(_, t)| t)
                .collect();
            optimizer.apply(&mut params, &grads)?;
        }
        let train_loss = loss_sum / train_set.count() as f64;
        let train_acc = correct as f64 / train_set.count() as f64;
        final_train_loss = train_loss;

        let test = evaluate(net, test_set, cfg.eval_batch)?;
        csv.push_str(&format!("{epoch},train,{train_loss:.6},{train_acc:.6}\n"));
        csv.push_str(&format!(
            "{epoch},test,{:.6},{:.6}\n",
            test.loss, test.accuracy
        ));
        if test.accuracy > best_acc {
            best_acc = test.accuracy;
            best_epoch = epoch;
            best_params = net.clone_params();
        }
    }

    if cfg.epochs == 0 {
        best_acc = evaluate(net, test_set, cfg.eval_batch)?.accuracy;
    } else {
        net.restore_params(best_params)?;
    }
    Ok(TrainReport {
        metrics_csv: csv,
        best_test_accuracy: best_acc,
        best_epoch,
        final_train_loss,
    })
}

#[derive(Debug, Clone)]
pub struct AblateReport {
    pub original_csv: String,
    pub swapped_csv: String,
    pub original_accuracy: f64,
    pub swapped_accuracy: f64,
    /// Accuracy drop in percentage points when CG layers become convs.
    pub gap_points: f64,
    pub swapped_arch: String,
}

/// Trains the architecture and its CG-to-conv twin under identical
/// budgets and seeds and reports the accuracy gap.
pub fn ablate<E: Element>(
    specs: &[LayerSpec],
    input_shape: (usize, usize, usize),
    cfg: &TrainConfig,
    train_set: &LabeledImageSet<E>,
    test_set: &LabeledImageSet<E>,
) -> Result<AblateReport> {
    if !specs.iter().any(|s| s.is_cg()) {
        return Err(CoreError::Config(
            "architecture has no coarse-graining layers to ablate".into(),
        ));
    }
    let mut original = Network::<E>::build(specs.to_vec(), input_shape, cfg.seed)?;
    let original_report = train(&mut original, cfg, train_set, test_set)?;
    let swapped_specs = swap_cg_to_conv(specs);
    let mut swapped = Network::<E>::build(swapped_specs.clone(), input_shape, cfg.seed)?;
    let swapped_report = train(&mut swapped, cfg, train_set, test_set)?;
    Ok(AblateReport {
        original_accuracy: original_report.best_test_accuracy,
        swapped_accuracy: swapped_report.best_test_accuracy,
        gap_points: 100.0
            * (original_report.best_test_accuracy - swapped_report.best_test_accuracy),
        original_csv: original_report.metrics_csv,
        swapped_csv: swapped_report.metrics_csv,
        swapped_arch: crate::arch::serialize_arch(&swapped_specs),
    })
}
