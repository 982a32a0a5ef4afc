use std::sync::Arc;

use cgtn_core::arch::{parse_arch, Network};
use cgtn_core::layers::{AvgPoolOp, CgOp, ClusterScope, Conv2dOp, ConvGeometry, InstNormOp, MatMulTransB};
use cgtn_core::train::SoftmaxCrossEntropy;
use cgtn_tensor::{check_gradients, NodeId, Tape, TapeOp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Collapses an op output to a scalar through a fixed random probe so
/// every output element influences the loss with its own weight.
fn probed_sum(tape: &mut Tape<f64>, out: NodeId, seed: u64) -> NodeId {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = tape.constant(random_tensor(&mut rng, shape));
    let weighted = tape.mul(out, probe).unwrap();
    tape.sum(weighted).unwrap()
}

#[test]
fn convolution_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let geom = ConvGeometry::new(2, 5, 4, 3, 3, 2, 2, 1, 1, 1).unwrap();
    let leaves = vec![
        random_tensor(&mut rng, vec![2, 2, 5, 4]),
        random_tensor(&mut rng, vec![3, 2, 3, 2]),
        random_tensor(&mut rng, vec![3]),
    ];
    let op = Arc::new(Conv2dOp::new(geom));
    let report = check_gradients(&leaves, 1e-4, move |tape, ids| {
        let out = tape.apply(op.clone() as Arc<dyn TapeOp<f64>>, ids)?;
        Ok(probed_sum(tape, out, 1))
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}

#[test]
fn dilated_convolution_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let geom = ConvGeometry::new(1, 6, 6, 2, 2, 2, 1, 1, 0, 3).unwrap();
    let leaves = vec![
        random_tensor(&mut rng, vec![1, 1, 6, 6]),
        random_tensor(&mut rng, vec![2, 1, 2, 2]),
        random_tensor(&mut rng, vec![2]),
    ];
    let op = Arc::new(Conv2dOp::new(geom));
    let report = check_gradients(&leaves, 1e-4, move |tape, ids| {
        let out = tape.apply(op.clone() as Arc<dyn TapeOp<f64>>, ids)?;
        Ok(probed_sum(tape, out, 2))
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}

fn cg_gradients_case(scope: ClusterScope, order: usize, dil: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (in_c, out_c) = match scope {
        ClusterScope::PerChannel => (2, 2),
        ClusterScope::Full => (2, 3),
    };
    let geom = ConvGeometry::new(in_c, 4, 4, out_c, 2, 2, 1, 1, 0, dil).unwrap();
    let cg = CgOp::new(geom, scope, order).unwrap();
    let t = cg.num_terms();
    let leaves = vec![
        random_tensor(&mut rng, vec![2, in_c, 4, 4]),
        random_tensor(&mut rng, vec![out_c, t]),
    ];
    let op = Arc::new(cg);
    let report = check_gradients(&leaves, 1e-4, move |tape, ids| {
        let out = tape.apply(op.clone() as Arc<dyn TapeOp<f64>>, ids)?;
        Ok(probed_sum(tape, out, seed))
    })
    .unwrap();
    assert!(report.pass(), "scope {scope:?} order {order}: {report:?}");
}

#[test]
fn cluster_gradients_per_channel_order_2() {
    cg_gradients_case(ClusterScope::PerChannel, 2, 1, 20);
}

#[test]
fn cluster_gradients_per_channel_order_3() {
    cg_gradients_case(ClusterScope::PerChannel, 3, 1, 21);
}

#[test]
fn cluster_gradients_full_scope_order_2() {
    cg_gradients_case(ClusterScope::Full, 2, 1, 22);
}

#[test]
fn cluster_gradients_dilated() {
    cg_gradients_case(ClusterScope::PerChannel, 2, 2, 23);
}

#[test]
fn cluster_gradients_order_4() {
    cg_gradients_case(ClusterScope::PerChannel, 4, 1, 24);
}

#[test]
fn instance_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let leaves = vec![random_tensor(&mut rng, vec![2, 2, 3, 3])];
    let report = check_gradients(&leaves, 1e-4, |tape, ids| {
        let out = tape.apply(Arc::new(InstNormOp) as Arc<dyn TapeOp<f64>>, ids)?;
        Ok(probed_sum(tape, out, 3))
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}

#[test]
fn average_pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let leaves = vec![random_tensor(&mut rng, vec![2, 2, 5, 5])];
    let report = check_gradients(&leaves, 1e-4, |tape, ids| {
        let out = tape.apply(
            Arc::new(AvgPoolOp { k: 2, s: 2 }) as Arc<dyn TapeOp<f64>>,
            ids,
        )?;
        Ok(probed_sum(tape, out, 4))
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}

#[test]
fn transposed_matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let leaves = vec![
        random_tensor(&mut rng, vec![3, 4]),
        random_tensor(&mut rng, vec![5, 4]),
    ];
    let report = check_gradients(&leaves, 1e-4, |tape, ids| {
        let out = tape.apply(Arc::new(MatMulTransB) as Arc<dyn TapeOp<f64>>, ids)?;
        Ok(probed_sum(tape, out, 5))
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let leaves = vec![random_tensor(&mut rng, vec![4, 5])];
    let labels = vec![0u8, 3, 2, 4];
    let report = check_gradients(&leaves, 1e-4, move |tape, ids| {
        tape.apply(
            Arc::new(SoftmaxCrossEntropy {
                labels: labels.clone(),
            }) as Arc<dyn TapeOp<f64>>,
            ids,
        )
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}

#[test]
fn whole_network_gradients() {
    // A miniature of the full stack: convolution, strided cluster layer,
    // dilated cluster layer, linear head, cross-entropy.
    let arch = "Conv(3,3,4,1,1,1)\nCG(2,2,4,2,2)\ndiCG(2,2,4,1,1,2)\nFlatten\nLinear(3)";
    let specs = parse_arch(arch).unwrap();
    let net = Network::<f64>::build(specs, (1, 8, 8), 77).unwrap();

    // Give the cluster layers nonzero high-order coefficients so their
    // branches carry gradient too.
    let mut net = net;
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for layer in [1usize, 2] {
        let t = net.param_tensor(layer, "coeff").unwrap().clone();
        let data: Vec<f64> = (0..t.numel()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        net.set_param_tensor(layer, "coeff", Tensor::new(t.shape().to_vec(), data).unwrap())
            .unwrap();
    }

    let image = random_tensor(&mut rng, vec![2, 1, 8, 8]);
    let labels = vec![1u8, 2];
    let mut leaves = vec![image];
    for (_, t) in net.named_params() {
        leaves.push(t.clone());
    }

    let report = check_gradients(&leaves, 1e-3, move |tape, ids| {
        let mut params: Vec<Vec<NodeId>> = Vec::new();
        let mut next = 1;
        for layer in net.clone_params() {
            let mut ids_here = Vec::new();
            for _ in layer {
                ids_here.push(ids[next]);
                next += 1;
            }
            params.push(ids_here);
        }
        let logits = net
            .forward(tape, ids[0], &params)
            .map_err(|e| cgtn_tensor::TensorError::op("forward", e.to_string()))?;
        tape.apply(
            Arc::new(SoftmaxCrossEntropy {
                labels: labels.clone(),
            }) as Arc<dyn TapeOp<f64>>,
            &[logits],
        )
    })
    .unwrap();
    assert!(report.pass(), "{report:?}");
}
