use std::sync::Arc;

use cgtn_core::arch::{parse_arch, Network};
use cgtn_core::train::SoftmaxCrossEntropy;
use cgtn_core::{CoreError, Result};
use cgtn_tensor::{check_gradients, NodeId, Tape, TapeOp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Collapses a forward output to a scalar through a fixed random probe so
/// every element influences the loss with its own weight.
fn probed_sum(tape: &mut Tape<f64>, out: NodeId, seed: u64) -> cgtn_tensor::Result<NodeId> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = tape.constant(random_tensor(&mut rng, shape));
    let weighted = tape.mul(out, probe)?;
    tape.sum(weighted)
}

/// Finite-difference check of one architecture: the image and every
/// parameter tensor are leaves, the loss is a random probe of the logits.
fn check_net(name: &str, arch: &str, input: (usize, usize, usize), seed: u64) -> Result<bool> {
    let specs = parse_arch(arch)?;
    let mut net = Network::<f64>::build(specs, input, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));

    // Cluster layers initialize their high-order coefficients at zero;
    // randomize everything so every branch carries gradient.
    for layer in 0..net.specs().len() {
        if let Ok(t) = net.param_tensor(layer, "coeff") {
            let shape = t.shape().to_vec();
            let data: Vec<f64> = (0..t.numel()).map(|_| rng.gen_range(-0.3..0.3)).collect();
            net.set_param_tensor(layer, "coeff", Tensor::new(shape, data)?)?;
        }
    }

    let (c, h, w) = input;
    let image = random_tensor(&mut rng, vec![2, c, h, w]);
    let mut leaves = vec![image];
    for (_, t) in net.named_params() {
        leaves.push(t.clone());
    }

    let report = check_gradients(&leaves, 1e-3, move |tape, ids| {
        let mut params: Vec<Vec<NodeId>> = Vec::new();
        let mut next = 1;
        for layer in net.clone_params() {
            let mut here = Vec::new();
            for _ in layer {
                here.push(ids[next]);
                next += 1;
            }
            params.push(here);
        }
        let out = net
            .forward(tape, ids[0], &params)
            .map_err(|e| cgtn_tensor::TensorError::op("forward", e.to_string()))?;
        probed_sum(tape, out, seed.wrapping_add(2))
    })
    .map_err(|e| CoreError::Numeric(e.to_string()))?;

    if report.pass() {
        println!(
            "gradcheck {name}: ok ({} values, max rel err {:.2e})",
            report.checked, report.max_rel_err
        );
        Ok(true)
    } else {
        println!(
            "gradcheck {name}: FAIL (max rel err {:.2e} at leaf {} index {})",
            report.max_rel_err, report.worst_leaf, report.worst_index
        );
        Ok(false)
    }
}

fn check_cross_entropy(seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = random_tensor(&mut rng, vec![3, 4]);
    let labels = vec![0u8, 3, 1];
    let report = check_gradients(&[logits], 1e-4, move |tape, ids| {
        tape.apply(
            Arc::new(SoftmaxCrossEntropy {
                labels: labels.clone(),
            }) as Arc<dyn TapeOp<f64>>,
            &[ids[0]],
        )
    })
    .map_err(|e| CoreError::Numeric(e.to_string()))?;
    if report.pass() {
        println!(
            "gradcheck cross entropy: ok ({} values, max rel err {:.2e})",
            report.checked, report.max_rel_err
        );
        Ok(true)
    } else {
        println!("gradcheck cross entropy: FAIL (max rel err {:.2e})", report.max_rel_err);
        Ok(false)
    }
}

pub fn run(seed: u64) -> Result<()> {
    let nets: &[(&str, &str, (usize, usize, usize))] = &[
        ("convolution", "Conv(3,3,3,1,1,1)", (2, 5, 5)),
        ("dilated convolution", "Conv(2,2,2,1,1,0) dilation=2", (1, 6, 6)),
        ("cluster order 2", "CG(2,2,2,2,2)", (2, 6, 6)),
        ("cluster order 3", "CG(2,2,1,1,1) order=3", (1, 4, 4)),
        ("cluster order 4", "CG(2,2,1,1,1) order=4", (1, 3, 3)),
        ("cluster full scope", "CG(2,2,3,1,1) scope=full", (2, 3, 3)),
        ("dilated cluster", "diCG(2,2,1,1,1,2)", (1, 5, 5)),
        ("instance norm", "InstNorm", (2, 4, 4)),
        ("average pool", "AvgPool(2,2)", (1, 4, 4)),
        ("linear", "Flatten\nLinear(3)", (1, 3, 3)),
        (
            "residual block",
            "ResidualBegin\nConv(3,3,2,1,1,1)\nRelu\nResidualEnd",
            (2, 4, 4),
        ),
        (
            "full stack",
            "Conv(3,3,4,1,1,1)\nCG(2,2,4,2,2)\ndiCG(2,2,4,1,1,2)\nFlatten\nLinear(3)",
            (1, 8, 8),
        ),
    ];

    let mut failures = 0usize;
    for (i, (name, arch, input)) in nets.iter().enumerate() {
        if !check_net(name, arch, *input, seed.wrapping_add(i as u64 * 101))? {
            failures += 1;
        }
    }
    if !check_cross_entropy(seed.wrapping_add(9999))? {
        failures += 1;
    }
    if failures > 0 {
        return Err(CoreError::Numeric(format!(
            "{failures} gradient checks failed"
        )));
    }
    println!("all gradient checks passed");
    Ok(())
}
