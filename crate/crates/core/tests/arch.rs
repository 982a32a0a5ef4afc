use cgtn_core::arch::{
    parse_arch, serialize_arch, shape_flow, swap_cg_to_conv, FlowShape, LayerKind, LayerSpec,
    Network,
};
use cgtn_core::layers::ClusterScope;
use cgtn_core::monomial::monomial_count;
use cgtn_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn parses_the_published_layer_forms() {
    let text = "\
# a small stack
Conv(3,3,64,1,1,1)
CG(2,2,64,2,2)
diCG(2,2,128,1,1,4)   # dilation in the last slot
AvgPool(2,2)
InstNorm
Relu
Flatten
Linear(10)
";
    let specs = parse_arch(text).unwrap();
    assert_eq!(specs.len(), 8);
    assert_eq!(specs[0], LayerSpec::conv(3, 3, 64, 1, 1, 1));
    assert_eq!(specs[1], LayerSpec::cg(2, 2, 64, 2, 2));
    assert_eq!(specs[2], LayerSpec::dicg(2, 2, 128, 1, 1, 4));
    assert_eq!(specs[3], LayerSpec::avgpool(2, 2));
    assert_eq!(specs[4].kind, LayerKind::InstNorm);
    assert_eq!(specs[5].kind, LayerKind::Relu);
    assert_eq!(specs[6].kind, LayerKind::Flatten);
    assert_eq!(specs[7], LayerSpec::linear(10));
}

#[test]
fn layer_names_are_case_insensitive() {
    let a = parse_arch("conv(3,3,4,1,1,0)\nCG(2,2,4,1,1)\nflatten\nLINEAR(5)").unwrap();
    let b = parse_arch("Conv(3,3,4,1,1,0)\ncg(2,2,4,1,1)\nFlatten\nLinear(5)").unwrap();
    assert_eq!(a, b);
}

#[test]
fn attributes_modify_the_cluster_layers() {
    let specs = parse_arch("CG(2,2,4,1,1) order=3 scope=full\ndiCG(2,2,4,1,1,2) pad=1").unwrap();
    assert_eq!(specs[0].order, 3);
    assert_eq!(specs[0].scope, ClusterScope::Full);
    assert_eq!(specs[1].dilation, 2);
    assert_eq!(specs[1].padding, 1);

    let conv = parse_arch("Conv(3,3,4,1,1,1) dilation=2").unwrap();
    assert_eq!(conv[0].dilation, 2);
}

#[test]
fn serialization_round_trips() {
    let text = "\
Conv(3,3,64,1,1,1) dilation=2
CG(2,2,64,2,2) order=3
CG(2,2,64,1,1,1) scope=full
diCG(2,2,128,1,1,4) pad=1 order=4 scope=full
AvgPool(2,2)
Relu
InstNorm
ResidualBegin
ResidualEnd
Flatten
Linear(10)
";
    let specs = parse_arch(text).unwrap();
    let rendered = serialize_arch(&specs);
    assert_eq!(parse_arch(&rendered).unwrap(), specs);
    // Canonical text is a fixed point of parse-then-serialize.
    assert_eq!(serialize_arch(&parse_arch(&rendered).unwrap()), rendered);
}

#[test]
fn malformed_lines_are_rejected_with_the_line_number() {
    let cases = [
        ("Conv(3,3,4,1,1", "missing ')'"),
        ("Conv(3,3,4,1)", "arguments"),
        ("Conv(3,3,4,1,1,1) scope=full", "does not apply"),
        ("CG(2,2,4,1,1) shape=full", "does not apply"),
        ("CG(2,2,4,1,1) scope=diag", "unknown scope"),
        ("CG(2,2,4,1,1) order=5", "order 5"),
        ("CG(0,2,4,1,1)", "kernel extent"),
        ("CG(2,2,4,0,1)", "stride"),
        ("Pool(2,2)", "unknown layer"),
        ("Linear(0)", "output width"),
        ("Conv(3,3,4,1,x)", "integer"),
        ("CG(2,2,4,1,1) order", "key=value"),
    ];
    for (text, needle) in cases {
        let err = parse_arch(&format!("Relu\n{text}")).unwrap_err().to_string();
        assert!(
            err.contains(needle) && err.contains("line 2"),
            "{text:?} gave {err:?}"
        );
    }
    assert!(parse_arch("").is_err());
    assert!(parse_arch("# only a comment\n\n").is_err());
}

#[test]
fn shape_flow_tracks_the_stack() {
    let text = "\
Conv(3,3,8,1,1,1)
CG(2,2,8,2,2)
AvgPool(2,2)
diCG(2,2,8,1,1,2)
Flatten
Linear(10)
";
    let specs = parse_arch(text).unwrap();
    let shapes = shape_flow(&specs, (1, 28, 28)).unwrap();
    let spatial = |c, h, w| FlowShape::Spatial { c, h, w };
    assert_eq!(
        shapes,
        vec![
            spatial(8, 28, 28), // padded 3x3 stride 1
            spatial(8, 14, 14), // 2x2 window, stride 2
            spatial(8, 7, 7),
            spatial(8, 5, 5), // dilation 2 spans 3 cells
            FlowShape::Flat { n: 200 },
            FlowShape::Flat { n: 10 },
        ]
    );
}

#[test]
fn shape_flow_rejects_inconsistent_stacks() {
    let fails = [
        ("Flatten\nConv(3,3,4,1,1,0)", "spatial input"),
        ("Linear(10)", "Flatten first"),
        ("CG(2,2,3,1,1)", "per-channel"), // input has 1 channel
        ("Conv(9,9,4,1,1,0)", "exceeds padded input"),
        ("AvgPool(9,1)", "exceeds"),
        ("ResidualEnd", "without"),
        ("ResidualBegin\nRelu", "unterminated"),
        ("ResidualBegin\nAvgPool(2,2)\nResidualEnd", "changed shape"),
    ];
    for (text, needle) in fails {
        let specs = parse_arch(text).unwrap();
        let err = shape_flow(&specs, (1, 8, 8)).unwrap_err().to_string();
        assert!(err.contains(needle), "{text:?} gave {err:?}");
    }
}

#[test]
fn residual_branches_keep_their_shape() {
    let text = "\
Conv(3,3,4,1,1,1)
ResidualBegin
Conv(3,3,4,1,1,1)
Relu
Conv(3,3,4,1,1,1)
ResidualEnd
Flatten
Linear(2)
";
    let specs = parse_arch(text).unwrap();
    let shapes = shape_flow(&specs, (1, 6, 6)).unwrap();
    assert_eq!(shapes[5], FlowShape::Spatial { c: 4, h: 6, w: 6 });

    // The sum actually happens: zero branch weights leave the trunk as-is.
    let mut net = Network::<f64>::build(specs.clone(), (1, 6, 6), 3).unwrap();
    for layer in [2usize, 4] {
        for name in ["weight", "bias"] {
            let t = net.param_tensor(layer, name).unwrap();
            let zeros = Tensor::zeros(t.shape().to_vec());
            net.set_param_tensor(layer, name, zeros).unwrap();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::new(
        vec![1, 1, 6, 6],
        (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let with_branch = net.eval(&x).unwrap();

    // x + (0·conv(relu(0·conv(x)))) = x, so the whole block is a no-op and
    // the network equals its trunk without the residual section.
    let trunk = parse_arch("Conv(3,3,4,1,1,1)\nFlatten\nLinear(2)").unwrap();
    let mut trunk_net = Network::<f64>::build(trunk, (1, 6, 6), 99).unwrap();
    for (dst, src) in [(0usize, 0usize), (2, 7)] {
        for name in ["weight", "bias"] {
            trunk_net
                .set_param_tensor(dst, name, net.param_tensor(src, name).unwrap().clone())
                .unwrap();
        }
    }
    let plain = trunk_net.eval(&x).unwrap();
    for (a, b) in with_branch.data().iter().zip(plain.data()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn conv_swap_replaces_every_cluster_layer() {
    let text = "\
Conv(3,3,8,1,1,1)
CG(2,2,8,2,2)
diCG(2,2,8,1,1,2) pad=1
Flatten
Linear(10)
";
    let specs = parse_arch(text).unwrap();
    let swapped = swap_cg_to_conv(&specs);
    assert!(swapped.iter().all(|s| !s.is_cg()));
    assert_eq!(swapped[0], specs[0]);
    assert_eq!(swapped[1].kind, LayerKind::Conv);
    assert_eq!(swapped[1].kernel, (2, 2));
    assert_eq!(swapped[1].stride, (2, 2));
    assert_eq!(swapped[2].dilation, 2);
    assert_eq!(swapped[2].padding, 1);
    // Swapping twice changes nothing more.
    assert_eq!(swap_cg_to_conv(&swapped), swapped);
    // Both variants flow to the same shapes.
    assert_eq!(
        shape_flow(&specs, (1, 28, 28)).unwrap(),
        shape_flow(&swapped, (1, 28, 28)).unwrap()
    );
}

#[test]
fn build_names_and_shapes_parameters() {
    let text = "\
Conv(3,3,4,1,1,1)
CG(2,2,4,1,1)
diCG(2,2,4,1,1,2) scope=full order=3
Flatten
Linear(3)
";
    let specs = parse_arch(text).unwrap();
    let net = Network::<f32>::build(specs, (2, 8, 8), 11).unwrap();
    let named: Vec<(String, Vec<usize>)> = net
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let t_per_channel = monomial_count(4, 2).unwrap();
    let t_full = monomial_count(16, 3).unwrap();
    assert_eq!(
        named,
        vec![
            ("layer0.weight".to_string(), vec![4, 2, 3, 3]),
            ("layer0.bias".to_string(), vec![4]),
            ("layer1.coeff".to_string(), vec![4, t_per_channel]),
            ("layer2.coeff".to_string(), vec![4, t_full]),
            // (2,8,8) -> conv pad 1 -> (4,8,8) -> 2x2 window -> (4,7,7)
            // -> dilated 2x2 spans 3 -> (4,5,5) -> flatten 100
            ("layer4.weight".to_string(), vec![100, 3]),
            ("layer4.bias".to_string(), vec![3]),
        ]
    );
    assert_eq!(
        net.param_count(),
        4 * 2 * 9 + 4 + 4 * t_per_channel + 4 * t_full + 100 * 3 + 3
    );
}

#[test]
fn cluster_initialization_starts_linear() {
    let specs = parse_arch("CG(2,2,3,1,1)\ndiCG(2,2,3,1,1,2) order=4").unwrap();
    let net = Network::<f64>::build(specs, (3, 8, 8), 5).unwrap();
    for layer in 0..2 {
        let coeff = net.param_tensor(layer, "coeff").unwrap();
        let t = coeff.shape()[1];
        let m = 4; // cluster variables per channel
        for row in 0..coeff.shape()[0] {
            let base = row * t;
            let data = coeff.data();
            assert_eq!(data[base], 0.0, "constant term");
            for j in 1..=m {
                assert_ne!(data[base + j], 0.0, "degree-1 term {j}");
                assert!(data[base + j].abs() <= 1.0 / (m as f64).sqrt() + 1e-12);
            }
            for j in m + 1..t {
                assert_eq!(data[base + j], 0.0, "higher-order term {j}");
            }
        }
    }
}

#[test]
fn build_is_deterministic_in_the_seed() {
    let specs = parse_arch("Conv(3,3,4,1,1,1)\nCG(2,2,4,2,2)\nFlatten\nLinear(5)").unwrap();
    let a = Network::<f64>::build(specs.clone(), (1, 8, 8), 42).unwrap();
    let b = Network::<f64>::build(specs.clone(), (1, 8, 8), 42).unwrap();
    let c = Network::<f64>::build(specs, (1, 8, 8), 43).unwrap();
    let flat = |n: &Network<f64>| -> Vec<f64> {
        n.named_params()
            .into_iter()
            .flat_map(|(_, t)| t.data().to_vec())
            .collect()
    };
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn tape_forward_matches_direct_evaluation() {
    let text = "\
Conv(3,3,4,1,1,1)
InstNorm
CG(2,2,4,2,2)
diCG(2,2,4,1,1,2)
AvgPool(2,2)
Flatten
Linear(6)
";
    let specs = parse_arch(text).unwrap();
    let mut net = Network::<f64>::build(specs, (1, 12, 12), 7).unwrap();
    // Nonzero high-order coefficients so the comparison exercises them.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for layer in [2usize, 3] {
        let t = net.param_tensor(layer, "coeff").unwrap().clone();
        let data: Vec<f64> = (0..t.numel()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        net.set_param_tensor(layer, "coeff", Tensor::new(t.shape().to_vec(), data).unwrap())
            .unwrap();
    }
    let x = Tensor::new(
        vec![3, 1, 12, 12],
        (0..3 * 144).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let direct = net.eval(&x).unwrap();

    let mut tape = Tape::new();
    let input = tape.constant(x);
    let params = net.insert_params(&mut tape, false);
    let out = net.forward(&mut tape, input, &params).unwrap();
    let taped = tape.value(out).clone();

    assert_eq!(direct.shape(), &[3, 6]);
    assert_eq!(direct.shape(), taped.shape());
    for (a, b) in direct.data().iter().zip(taped.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn named_parameters_load_back() {
    let specs = parse_arch("Conv(3,3,4,1,1,1)\nCG(2,2,4,2,2)\nFlatten\nLinear(5)").unwrap();
    let src = Network::<f64>::build(specs.clone(), (1, 8, 8), 1).unwrap();
    let mut dst = Network::<f64>::build(specs.clone(), (1, 8, 8), 2).unwrap();

    let named: Vec<(String, Tensor<f64>)> = src
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    dst.load_named(named).unwrap();
    for ((na, ta), (nb, tb)) in src.named_params().iter().zip(dst.named_params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }

    let full = |rename: Option<(usize, &str)>, reshape: Option<usize>| {
        let mut named: Vec<(String, Tensor<f64>)> = src
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        if let Some((i, name)) = rename {
            named[i].0 = name.to_string();
        }
        if let Some(i) = reshape {
            named[i].1 = Tensor::zeros(vec![7]);
        }
        named
    };

    let mut bad = Network::<f64>::build(specs.clone(), (1, 8, 8), 3).unwrap();
    assert!(bad.load_named(full(None, None)[1..].to_vec()).is_err());
    let err = bad
        .load_named(full(Some((0, "layer9.weight")), None))
        .unwrap_err()
        .to_string();
    assert!(err.contains("layer 9"), "{err}");
    assert!(bad
        .load_named(full(Some((0, "weights")), None))
        .is_err());
    assert!(bad.load_named(full(None, Some(1))).is_err());
}

#[test]
fn spatial_input_shape_is_validated() {
    let specs = parse_arch("Flatten\nLinear(2)").unwrap();
    let net = Network::<f64>::build(specs, (2, 3, 3), 0).unwrap();
    assert!(net.eval(&Tensor::zeros(vec![1, 2, 3, 3])).is_ok());
    assert!(net.eval(&Tensor::zeros(vec![1, 2, 3, 4])).is_err());
    assert!(net.eval(&Tensor::zeros(vec![2, 3, 3])).is_err());
}
