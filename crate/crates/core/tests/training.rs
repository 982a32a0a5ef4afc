use cgtn_core::arch::{parse_arch, Network};
use cgtn_core::checkpoint::{load_checkpoint, save_checkpoint};
use cgtn_core::data::LabeledImageSet;
use cgtn_core::train::{
    ablate, argmax, evaluate, train, Optimizer, OptimizerKind, SoftmaxCrossEntropy, TrainConfig,
};
use cgtn_tensor::{TapeOp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ce_loss(logits: Tensor<f64>, labels: Vec<u8>) -> cgtn_tensor::Result<f64> {
    let op = SoftmaxCrossEntropy { labels };
    Ok(op.forward(&[&logits])?.item()?)
}

/// Two linearly separable classes on 2x2 images: class 0 lights the
/// top-left pixel, class 1 the bottom-right, plus mild noise.
fn separable_set(n_per_class: usize, seed: u64) -> LabeledImageSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n_per_class {
        let class = (i % 2) as u8;
        let mut img = [0.0f64; 4];
        for v in img.iter_mut() {
            *v = rng.gen_range(0.0..0.1);
        }
        img[if class == 0 { 0 } else { 3 }] += 1.0;
        data.extend_from_slice(&img);
        labels.push(class);
    }
    let images = Tensor::new(vec![2 * n_per_class, 1, 2, 2], data).unwrap();
    LabeledImageSet::new(images, labels, 2).unwrap()
}

#[test]
fn uniform_logits_cost_the_log_of_the_class_count() {
    let logits = Tensor::zeros(vec![4, 10]);
    let loss = ce_loss(logits, vec![0, 3, 7, 9]).unwrap();
    assert!((loss - (10.0f64).ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_logits_cost_nothing() {
    let mut logits = Tensor::zeros(vec![2, 3]);
    logits.data_mut()[0] = 50.0; // row 0 picks class 0
    logits.data_mut()[3 + 2] = 50.0; // row 1 picks class 2
    let loss = ce_loss(logits, vec![0, 2]).unwrap();
    assert!(loss < 1e-12, "{loss}");
}

#[test]
fn cross_entropy_is_shift_invariant_and_finite_at_extremes() {
    let a = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let b = Tensor::new(vec![1, 3], vec![1001.0, 1002.0, 1003.0]).unwrap();
    let la = ce_loss(a, vec![1]).unwrap();
    let lb = ce_loss(b, vec![1]).unwrap();
    assert!((la - lb).abs() < 1e-9);

    // Without max subtraction exp(1e308) would overflow to NaN.
    let huge = Tensor::new(vec![1, 2], vec![1e308, -1e308]).unwrap();
    let loss = ce_loss(huge, vec![0]).unwrap();
    assert!(loss.abs() < 1e-9, "{loss}");
}

#[test]
fn cross_entropy_validates_its_inputs() {
    let logits = Tensor::<f64>::zeros(vec![2, 3]);
    let op = SoftmaxCrossEntropy { labels: vec![0] };
    assert!(op.forward(&[&logits]).is_err());
    let op = SoftmaxCrossEntropy { labels: vec![0, 3] };
    assert!(op.forward(&[&logits]).is_err());
    let op = SoftmaxCrossEntropy { labels: vec![] };
    assert!(op.forward(&[&Tensor::<f64>::zeros(vec![0, 0])]).is_err());
    let op = SoftmaxCrossEntropy { labels: vec![0] };
    assert!(op.forward(&[&Tensor::<f64>::zeros(vec![3])]).is_err());
}

#[test]
fn argmax_breaks_ties_toward_the_lowest_index() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[5.0]), 0);
    assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);
}

#[test]
fn optimizers_descend_a_quadratic_bowl() {
    for kind in [OptimizerKind::SgdMomentum, OptimizerKind::AdaptiveMoment] {
        let mut x = Tensor::new(vec![3], vec![4.0f64, -3.0, 2.0]).unwrap();
        let lr = match kind {
            OptimizerKind::SgdMomentum => 0.05,
            OptimizerKind::AdaptiveMoment => 0.1,
        };
        let mut opt = Optimizer::new(kind, lr, 0.9);
        for _ in 0..300 {
            let grad = Tensor::new(vec![3], x.data().iter().map(|&v| 2.0 * v).collect()).unwrap();
            opt.apply(&mut [&mut x], &[grad]).unwrap();
        }
        let norm: f64 = x.data().iter().map(|&v| v * v).sum();
        assert!(norm < 1e-4, "{kind:?} stalled at {:?}", x.data());
    }
}

#[test]
fn optimizer_rejects_mismatched_gradient_lists() {
    let mut x = Tensor::<f64>::zeros(vec![2]);
    let mut opt = Optimizer::new(OptimizerKind::SgdMomentum, 0.1, 0.0);
    assert!(opt.apply(&mut [&mut x], &[]).is_err());
}

#[test]
fn optimizer_kinds_parse_their_labels() {
    for kind in [OptimizerKind::SgdMomentum, OptimizerKind::AdaptiveMoment] {
        assert_eq!(OptimizerKind::parse(kind.label()).unwrap(), kind);
    }
    assert!(OptimizerKind::parse("adam").is_err());
}

#[test]
fn evaluation_reports_loss_accuracy_and_confusion() {
    let set = separable_set(10, 1);
    // Zero weights mean constant logits; ties resolve to class 0.
    let specs = parse_arch("Flatten\nLinear(2)").unwrap();
    let mut net = Network::<f64>::build(specs, (1, 2, 2), 0).unwrap();
    for name in ["weight", "bias"] {
        let t = net.param_tensor(1, name).unwrap();
        let zeros = Tensor::zeros(t.shape().to_vec());
        net.set_param_tensor(1, name, zeros).unwrap();
    }
    let report = evaluate(&net, &set, 7).unwrap();
    assert!((report.accuracy - 0.5).abs() < 1e-12);
    assert!((report.loss - (2.0f64).ln()).abs() < 1e-12);
    assert_eq!(report.confusion[0], vec![10, 0]);
    assert_eq!(report.confusion[1], vec![10, 0]);
}

#[test]
fn training_solves_a_separable_problem() {
    let train_set = separable_set(20, 2);
    let test_set = separable_set(10, 3);
    let specs = parse_arch("Flatten\nLinear(2)").unwrap();
    let mut net = Network::<f64>::build(specs, (1, 2, 2), 5).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 8,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &cfg, &train_set, &test_set).unwrap();
    assert_eq!(report.best_test_accuracy, 1.0, "{}", report.metrics_csv);
    assert!(report.final_train_loss < 0.5);

    let lines: Vec<&str> = report.metrics_csv.lines().collect();
    assert_eq!(lines[0], "epoch,split,loss,accuracy");
    assert_eq!(lines.len(), 1 + 2 * cfg.epochs);
    assert!(lines[1].starts_with("0,train,"));
    assert!(lines[2].starts_with("0,test,"));

    // The restored parameters really are the best epoch's.
    let acc = evaluate(&net, &test_set, 64).unwrap().accuracy;
    assert_eq!(acc, report.best_test_accuracy);
}

#[test]
fn zero_epoch_training_only_evaluates() {
    let set = separable_set(5, 4);
    let specs = parse_arch("Flatten\nLinear(2)").unwrap();
    let mut net = Network::<f64>::build(specs, (1, 2, 2), 6).unwrap();
    let before: Vec<f64> = net
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let report = train(&mut net, &cfg, &set, &set).unwrap();
    assert_eq!(report.metrics_csv, "epoch,split,loss,accuracy\n");
    let after: Vec<f64> = net
        .named_params()
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect();
    assert_eq!(before, after);
    assert_eq!(
        report.best_test_accuracy,
        evaluate(&net, &set, 64).unwrap().accuracy
    );
}

#[test]
fn training_is_bitwise_deterministic() {
    let train_set = separable_set(12, 7);
    let test_set = separable_set(6, 8);
    let arch = "CG(2,2,1,1,1)\nFlatten\nLinear(2)";
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let specs = parse_arch(arch).unwrap();
        let mut net = Network::<f64>::build(specs, (1, 2, 2), 9).unwrap();
        let report = train(&mut net, &cfg, &train_set, &test_set).unwrap();
        let params: Vec<u64> = net
            .named_params()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
            .collect();
        (report.metrics_csv, params)
    };
    let (csv_a, params_a) = run();
    let (csv_b, params_b) = run();
    assert_eq!(csv_a, csv_b);
    assert_eq!(params_a, params_b);
}

#[test]
fn non_finite_losses_abort_with_the_step_index() {
    let mut data = vec![0.1f64; 6 * 4];
    data[0] = f64::NAN;
    let images = Tensor::new(vec![6, 1, 2, 2], data).unwrap();
    let set = LabeledImageSet::new(images, vec![0, 1, 0, 1, 0, 1], 2).unwrap();
    let specs = parse_arch("Flatten\nLinear(2)").unwrap();
    let mut net = Network::<f64>::build(specs, (1, 2, 2), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let err = train(&mut net, &cfg, &set, &set).unwrap_err().to_string();
    assert!(err.contains("step 1"), "{err}");
    assert!(err.contains("NaN"), "{err}");
}

#[test]
fn ablation_needs_a_cluster_layer_and_reports_the_gap() {
    let specs = parse_arch("Conv(2,2,2,2,2,0)\nFlatten\nLinear(2)").unwrap();
    let set = separable_set(4, 10);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let err = ablate(&specs, (1, 2, 2), &cfg, &set, &set)
        .unwrap_err()
        .to_string();
    assert!(err.contains("no coarse-graining"), "{err}");

    let specs = parse_arch("CG(2,2,1,1,1)\nFlatten\nLinear(2)").unwrap();
    let report = ablate(&specs, (1, 2, 2), &cfg, &set, &set).unwrap();
    assert!(report.swapped_arch.contains("Conv(2,2,1,1,1,0)"));
    assert!(!report.swapped_arch.contains("CG"));
    let expect = 100.0 * (report.original_accuracy - report.swapped_accuracy);
    assert!((report.gap_points - expect).abs() < 1e-12);
    assert!(report.original_csv.starts_with("epoch,split,loss,accuracy"));
    assert!(report.swapped_csv.starts_with("epoch,split,loss,accuracy"));
}

#[test]
fn checkpoints_round_trip_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.cgtn");
    let specs = parse_arch("Conv(2,2,3,1,1,0)\nCG(2,2,3,1,1)\nFlatten\nLinear(4)").unwrap();
    let net = Network::<f64>::build(specs.clone(), (1, 5, 5), 21).unwrap();
    let arch_text = net.arch_text();

    save_checkpoint(&path, &arch_text, &net.named_params()).unwrap();
    let (text, tensors) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(text, arch_text);

    let mut restored = Network::<f64>::build(specs, (1, 5, 5), 0).unwrap();
    restored.load_named(tensors).unwrap();
    for ((na, ta), (nb, tb)) in net.named_params().iter().zip(restored.named_params()) {
        assert_eq!(*na, nb);
        assert_eq!(ta.shape(), tb.shape());
        let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "{na}");
    }

    // Identical content writes identical bytes.
    let again = dir.path().join("again.cgtn");
    save_checkpoint(&again, &arch_text, &net.named_params()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoints_detect_corruption_and_dtype_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.cgtn");
    let t = Tensor::<f32>::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    save_checkpoint(&path, "Flatten", &[("layer0.weight".to_string(), &t)]).unwrap();

    let err = load_checkpoint::<f64>(&path).unwrap_err().to_string();
    assert!(err.contains("f32") && err.contains("f64"), "{err}");
    assert!(load_checkpoint::<f32>(&path).is_ok());

    let good = std::fs::read(&path).unwrap();
    let mut flipped = good.clone();
    flipped[20] ^= 0xff;
    std::fs::write(&path, &flipped).unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
    assert!(err.contains("checksum"), "{err}");

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());

    std::fs::write(&path, b"not a checkpoint at all").unwrap();
    let err = load_checkpoint::<f32>(&path).unwrap_err().to_string();
    assert!(err.contains("not a checkpoint"), "{err}");
}
