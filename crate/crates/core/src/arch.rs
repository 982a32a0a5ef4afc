use std::sync::Arc;

use cgtn_tensor::{matmul_into, Element, NodeId, Tape, TapeOp, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::layers::{AvgPoolOp, CgOp, ClusterScope, Conv2dOp, ConvGeometry, InstNormOp};
use crate::monomial::FeaturePlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Cg,
    DiCg,
    Linear,
    Relu,
    InstNorm,
    AvgPool,
    Flatten,
    ResidualBegin,
    ResidualEnd,
}

/// One line of an architecture file. `Conv(l1,l2,c,s1,s2,p)` takes its
/// sixth argument as padding; `diCG(l1,l2,c,s1,s2,d)` takes its sixth as
/// dilation and accepts padding via a `pad=` attribute, since the two
/// notations disagree about that slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub channels: usize,
    pub stride: (usize, usize),
    pub padding: usize,
    pub dilation: usize,
    pub order: usize,
    pub scope: ClusterScope,
}

impl LayerSpec {
    fn bare(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            kernel: (1, 1),
            channels: 0,
            stride: (1, 1),
            padding: 0,
            dilation: 1,
            order: 2,
            scope: ClusterScope::PerChannel,
        }
    }

    pub fn conv(l1: usize, l2: usize, c: usize, s1: usize, s2: usize, p: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            kernel: (l1, l2),
            channels: c,
            stride: (s1, s2),
            padding: p,
            ..LayerSpec::bare(LayerKind::Conv)
        }
    }

    pub fn cg(l1: usize, l2: usize, c: usize, s1: usize, s2: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Cg,
            kernel: (l1, l2),
            channels: c,
            stride: (s1, s2),
            ..LayerSpec::bare(LayerKind::Cg)
        }
    }

    pub fn dicg(l1: usize, l2: usize, c: usize, s1: usize, s2: usize, d: usize) -> Self {
        LayerSpec {
            kind: LayerKind::DiCg,
            kernel: (l1, l2),
            channels: c,
            stride: (s1, s2),
            dilation: d,
            ..LayerSpec::bare(LayerKind::DiCg)
        }
    }

    pub fn linear(out: usize) -> Self {
        LayerSpec {
            channels: out,
            ..LayerSpec::bare(LayerKind::Linear)
        }
    }

    pub fn avgpool(k: usize, s: usize) -> Self {
        LayerSpec {
            kernel: (k, k),
            stride: (s, s),
            ..LayerSpec::bare(LayerKind::AvgPool)
        }
    }

    pub fn plain(kind: LayerKind) -> Self {
        LayerSpec::bare(kind)
    }

    /// The canonical one-line form this spec re-parses from.
    pub fn canonical(&self) -> String {
        let (l1, l2) = self.kernel;
        let (s1, s2) = self.stride;
        let mut s = match self.kind {
            LayerKind::Conv => format!(
                "Conv({l1},{l2},{},{s1},{s2},{})",
                self.channels, self.padding
            ),
            LayerKind::Cg => {
                if self.padding == 0 {
                    format!("CG({l1},{l2},{},{s1},{s2})", self.channels)
                } else {
                    format!("CG({l1},{l2},{},{s1},{s2},{})", self.channels, self.padding)
                }
            }
            LayerKind::DiCg => format!(
                "diCG({l1},{l2},{},{s1},{s2},{})",
                self.channels, self.dilation
            ),
            LayerKind::Linear => format!("Linear({})", self.channels),
            LayerKind::Relu => "Relu".into(),
            LayerKind::InstNorm => "InstNorm".into(),
            LayerKind::AvgPool => format!("AvgPool({l1},{s1})"),
            LayerKind::Flatten => "Flatten".into(),
            LayerKind::ResidualBegin => "ResidualBegin".into(),
            LayerKind::ResidualEnd => "ResidualEnd".into(),
        };
        if self.kind == LayerKind::Conv && self.dilation != 1 {
            s.push_str(&format!(" dilation={}", self.dilation));
        }
        if self.kind == LayerKind::DiCg && self.padding != 0 {
            s.push_str(&format!(" pad={}", self.padding));
        }
        if matches!(self.kind, LayerKind::Cg | LayerKind::DiCg) {
            if self.order != 2 {
                s.push_str(&format!(" order={}", self.order));
            }
            if self.scope == ClusterScope::Full {
                s.push_str(" scope=full");
            }
        }
        s
    }

    pub fn is_cg(&self) -> bool {
        matches!(self.kind, LayerKind::Cg | LayerKind::DiCg)
    }
}

fn parse_usize(what: &'static str, line: usize, s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| CoreError::Parse {
        what,
        line,
        message: format!("expected a non-negative integer, got {s:?}"),
    })
}

fn parse_layer(text: &str, line: usize) -> Result<LayerSpec> {
    const WHAT: &str = "architecture";
    let err = |message: String| CoreError::Parse {
        what: WHAT,
        line,
        message,
    };
    let mut pieces = text.split_whitespace();
    let head = pieces
        .next()
        .ok_or_else(|| err("empty layer token".into()))?;
    let (name, args) = match head.find('(') {
        Some(open) => {
            let close = head
                .rfind(')')
                .ok_or_else(|| err(format!("missing ')' in {head:?}")))?;
            if close < open {
                return Err(err(format!("mismatched parentheses in {head:?}")));
            }
            let args: Vec<usize> = head[open + 1..close]
                .split(',')
                .filter(|a| !a.trim().is_empty())
                .map(|a| parse_usize(WHAT, line, a))
                .collect::<Result<_>>()?;
            (&head[..open], args)
        }
        None => (head, Vec::new()),
    };

    let expect_args = |allowed: &[usize]| -> Result<()> {
        if allowed.contains(&args.len()) {
            Ok(())
        } else {
            Err(err(format!(
                "{name} takes {allowed:?} arguments, got {}",
                args.len()
            )))
        }
    };

    let mut spec = match name.to_ascii_lowercase().as_str() {
        "conv" => {
            expect_args(&[5, 6])?;
            LayerSpec::conv(
                args[0],
                args[1],
                args[2],
                args[3],
                args[4],
                args.get(5).copied().unwrap_or(0),
            )
        }
        "cg" => {
            expect_args(&[5, 6])?;
            let mut s = LayerSpec::cg(args[0], args[1], args[2], args[3], args[4]);
            s.padding = args.get(5).copied().unwrap_or(0);
            s
        }
        "dicg" => {
            expect_args(&[6])?;
            LayerSpec::dicg(args[0], args[1], args[2], args[3], args[4], args[5])
        }
        "linear" => {
            expect_args(&[1])?;
            LayerSpec::linear(args[0])
        }
        "avgpool" => {
            expect_args(&[2])?;
            LayerSpec::avgpool(args[0], args[1])
        }
        "relu" => {
            expect_args(&[0])?;
            LayerSpec::plain(LayerKind::Relu)
        }
        "instnorm" => {
            expect_args(&[0])?;
            LayerSpec::plain(LayerKind::InstNorm)
        }
        "flatten" => {
            expect_args(&[0])?;
            LayerSpec::plain(LayerKind::Flatten)
        }
        "residualbegin" => {
            expect_args(&[0])?;
            LayerSpec::plain(LayerKind::ResidualBegin)
        }
        "residualend" => {
            expect_args(&[0])?;
            LayerSpec::plain(LayerKind::ResidualEnd)
        }
        other => return Err(err(format!("unknown layer {other:?}"))),
    };

    for attr in pieces {
        let Some((key, val)) = attr.split_once('=') else {
            return Err(err(format!("expected key=value attribute, got {attr:?}")));
        };
        match (key, spec.kind) {
            ("order", LayerKind::Cg | LayerKind::DiCg) => {
                spec.order = parse_usize(WHAT, line, val)?;
            }
            ("scope", LayerKind::Cg | LayerKind::DiCg) => match val {
                "full" => spec.scope = ClusterScope::Full,
                "per_channel" => spec.scope = ClusterScope::PerChannel,
                other => return Err(err(format!("unknown scope {other:?}"))),
            },
            ("dilation", LayerKind::Conv) => {
                spec.dilation = parse_usize(WHAT, line, val)?;
            }
            ("pad", LayerKind::DiCg) => {
                spec.padding = parse_usize(WHAT, line, val)?;
            }
            _ => return Err(err(format!("attribute {key:?} does not apply to {name}"))),
        }
    }

    let positive = |what: &str, v: usize| -> Result<()> {
        if v == 0 {
            Err(err(format!("{what} must be at least 1 in {text:?}")))
        } else {
            Ok(())
        }
    };
    match spec.kind {
        LayerKind::Conv | LayerKind::Cg | LayerKind::DiCg => {
            positive("kernel extent", spec.kernel.0)?;
            positive("kernel extent", spec.kernel.1)?;
            positive("channel count", spec.channels)?;
            positive("stride", spec.stride.0)?;
            positive("stride", spec.stride.1)?;
            positive("dilation", spec.dilation)?;
            if spec.is_cg() && !(2..=4).contains(&spec.order) {
                return Err(err(format!(
                    "order {} outside the supported range 2..=4",
                    spec.order
                )));
            }
        }
        LayerKind::Linear => positive("output width", spec.channels)?,
        LayerKind::AvgPool => {
            positive("kernel extent", spec.kernel.0)?;
            positive("stride", spec.stride.0)?;
        }
        _ => {}
    }
    Ok(spec)
}

/// Parses an architecture file: one layer per line, '#' comments.
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        specs.push(parse_layer(line, i + 1)?);
    }
    if specs.is_empty() {
        return Err(CoreError::Parse {
            what: "architecture",
            line: 0,
            message: "no layers found".into(),
        });
    }
    Ok(specs)
}

pub fn serialize_arch(specs: &[LayerSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        out.push_str(&s.canonical());
        out.push('\n');
    }
    out
}

/// Replaces every coarse-graining layer by the convolution with the same
/// window geometry. Convolution-only architectures map to themselves.
pub fn swap_cg_to_conv(specs: &[LayerSpec]) -> Vec<LayerSpec> {
    specs
        .iter()
        .map(|s| {
            if s.is_cg() {
                let mut conv = LayerSpec::conv(
                    s.kernel.0, s.kernel.1, s.channels, s.stride.0, s.stride.1, s.padding,
                );
                conv.dilation = s.dilation;
                conv
            } else {
                *s
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowShape {
    Spatial { c: usize, h: usize, w: usize },
    Flat { n: usize },
}

impl FlowShape {
    pub fn numel(&self) -> usize {
        match *self {
            FlowShape::Spatial { c, h, w } => c * h * w,
            FlowShape::Flat { n } => n,
        }
    }
}

fn geometry_for(spec: &LayerSpec, c: usize, h: usize, w: usize) -> Result<ConvGeometry> {
    let out_c = spec.channels;
    ConvGeometry::new(
        c,
        h,
        w,
        out_c,
        spec.kernel.0,
        spec.kernel.1,
        spec.stride.0,
        spec.stride.1,
        spec.padding,
        spec.dilation,
    )
}

/// Shape after each layer, checking that the stack is consistent.
pub fn shape_flow(specs: &[LayerSpec], input: (usize, usize, usize)) -> Result<Vec<FlowShape>> {
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = FlowShape::Spatial {
        c: input.0,
        h: input.1,
        w: input.2,
    };
    let mut residuals: Vec<FlowShape> = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let fail = |message: String| CoreError::Shape { layer: i, message };
        cur = match spec.kind {
            LayerKind::Conv | LayerKind::Cg | LayerKind::DiCg => {
                let FlowShape::Spatial { c, h, w } = cur else {
                    return Err(fail(format!(
                        "{} needs a spatial input, found a flat vector",
                        spec.canonical()
                    )));
                };
                if spec.is_cg() && spec.scope == ClusterScope::PerChannel && spec.channels != c {
                    return Err(fail(format!(
                        "per-channel {} expects {c} channels in, spec says {}",
                        spec.canonical(),
                        spec.channels
                    )));
                }
                let geom = geometry_for(spec, c, h, w).map_err(|e| fail(e.to_string()))?;
                FlowShape::Spatial {
                    c: geom.out_c,
                    h: geom.out_h,
                    w: geom.out_w,
                }
            }
            LayerKind::Linear => {
                let FlowShape::Flat { .. } = cur else {
                    return Err(fail(
                        "Linear needs a flattened input; add Flatten first".into(),
                    ));
                };
                FlowShape::Flat { n: spec.channels }
            }
            LayerKind::Relu => cur,
            LayerKind::InstNorm => {
                let FlowShape::Spatial { .. } = cur else {
                    return Err(fail("InstNorm needs a spatial input".into()));
                };
                cur
            }
            LayerKind::AvgPool => {
                let FlowShape::Spatial { c, h, w } = cur else {
                    return Err(fail("AvgPool needs a spatial input".into()));
                };
                let k = spec.kernel.0;
                let s = spec.stride.0;
                if k > h || k > w {
                    return Err(fail(format!(
                        "AvgPool kernel {k} exceeds the {h}x{w} input"
                    )));
                }
                FlowShape::Spatial {
                    c,
                    h: (h - k) / s + 1,
                    w: (w - k) / s + 1,
                }
            }
            LayerKind::Flatten => FlowShape::Flat { n: cur.numel() },
            LayerKind::ResidualBegin => {
                residuals.push(cur);
                cur
            }
            LayerKind::ResidualEnd => {
                let begin = residuals
                    .pop()
                    .ok_or_else(|| fail("ResidualEnd without ResidualBegin".into()))?;
                if begin != cur {
                    return Err(fail(format!(
                        "residual branch changed shape: {begin:?} vs {cur:?}"
                    )));
                }
                cur
            }
        };
        shapes.push(cur);
    }
    if !residuals.is_empty() {
        return Err(CoreError::Shape {
            layer: specs.len() - 1,
            message: "unterminated ResidualBegin".into(),
        });
    }
    Ok(shapes)
}

enum BuiltOp {
    Conv(Arc<Conv2dOp>),
    Cg(Arc<CgOp>),
    Pool(Arc<AvgPoolOp>),
    Norm(Arc<InstNormOp>),
    Plain,
}

/// An instantiated architecture: specs, per-layer parameters, and the
/// window operators built for the given input shape.
pub struct Network<E: Element> {
    specs: Vec<LayerSpec>,
    pub input_shape: (usize, usize, usize),
    shapes: Vec<FlowShape>,
    params: Vec<Vec<(String, Tensor<E>)>>,
    ops: Vec<BuiltOp>,
}

impl<E: Element> Network<E> {
    /// Builds the network and initializes parameters from the seed:
    /// weights and degree-1 coefficients fan-in-scaled uniform, biases,
    /// constants, and order-2-and-higher coefficients zero.
    pub fn build(
        specs: Vec<LayerSpec>,
        input_shape: (usize, usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let shapes = shape_flow(&specs, input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len());
        let mut ops = Vec::with_capacity(specs.len());
        let mut cur = FlowShape::Spatial {
            c: input_shape.0,
            h: input_shape.1,
            w: input_shape.2,
        };
        for spec in &specs {
            let mut layer_params: Vec<(String, Tensor<E>)> = Vec::new();
            let op = match spec.kind {
                LayerKind::Conv => {
                    let FlowShape::Spatial { c, h, w } = cur else {
                        unreachable!("shape flow validated");
                    };
                    let geom = geometry_for(spec, c, h, w)?;
                    let fan_in = geom.in_c * geom.kernel_len();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let weight = random_tensor(
                        &mut rng,
                        vec![geom.out_c, geom.in_c, geom.l1, geom.l2],
                        bound,
                    );
                    layer_params.push(("weight".into(), weight));
                    layer_params.push(("bias".into(), Tensor::zeros(vec![geom.out_c])));
                    BuiltOp::Conv(Arc::new(Conv2dOp::new(geom)))
                }
                LayerKind::Cg | LayerKind::DiCg => {
                    let FlowShape::Spatial { c, h, w } = cur else {
                        unreachable!("shape flow validated");
                    };
                    let geom = geometry_for(spec, c, h, w)?;
                    let cg = CgOp::new(geom, spec.scope, spec.order)?;
                    let m = cg.cluster_size();
                    let t = cg.num_terms();
                    let bound = 1.0 / (m as f64).sqrt();
                    let mut coeff = Tensor::zeros(vec![geom.out_c, t]);
                    for co in 0..geom.out_c {
                        for j in 1..=m {
                            coeff.data_mut()[co * t + j] =
                                E::from_f64(rng.gen_range(-bound..bound));
                        }
                    }
                    layer_params.push(("coeff".into(), coeff));
                    BuiltOp::Cg(Arc::new(cg))
                }
                LayerKind::Linear => {
                    let n = cur.numel();
                    let bound = 1.0 / (n as f64).sqrt();
                    let weight = random_tensor(&mut rng, vec![n, spec.channels], bound);
                    layer_params.push(("weight".into(), weight));
                    layer_params.push(("bias".into(), Tensor::zeros(vec![spec.channels])));
                    BuiltOp::Plain
                }
                LayerKind::AvgPool => BuiltOp::Pool(Arc::new(AvgPoolOp {
                    k: spec.kernel.0,
                    s: spec.stride.0,
                })),
                LayerKind::InstNorm => BuiltOp::Norm(Arc::new(InstNormOp)),
                _ => BuiltOp::Plain,
            };
            params.push(layer_params);
            ops.push(op);
            cur = shapes[params.len() - 1];
        }
        Ok(Network {
            specs,
            input_shape,
            shapes,
            params,
            ops,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn shapes(&self) -> &[FlowShape] {
        &self.shapes
    }

    pub fn arch_text(&self) -> String {
        serialize_arch(&self.specs)
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map(|s| s.numel()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flat_map(|l| l.iter())
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn geometry(&self, layer: usize) -> Option<&ConvGeometry> {
        match &self.ops[layer] {
            BuiltOp::Conv(op) => Some(&op.geom),
            BuiltOp::Cg(op) => Some(&op.geom),
            _ => None,
        }
    }

    pub fn cg_op(&self, layer: usize) -> Option<&CgOp> {
        match &self.ops[layer] {
            BuiltOp::Cg(op) => Some(op),
            _ => None,
        }
    }

    pub fn cg_plan(&self, layer: usize) -> Option<&FeaturePlan> {
        self.cg_op(layer).map(|op| op.plan())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = Vec::new();
        for (i, layer) in self.params.iter().enumerate() {
            for (name, t) in layer {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out
    }

    /// Raw values of one named parameter as f64, for the symbolic engine.
    pub fn param_data(&self, layer: usize, name: &str) -> Result<Vec<f64>> {
        let t = self.param_tensor(layer, name)?;
        Ok(t.data().iter().map(|&v| v.to_f64()).collect())
    }

    pub fn param_tensor(&self, layer: usize, name: &str) -> Result<&Tensor<E>> {
        self.params
            .get(layer)
            .and_then(|l| l.iter().find(|(n, _)| n == name))
            .map(|(_, t)| t)
            .ok_or_else(|| CoreError::Config(format!("layer {layer} has no parameter {name}")))
    }

    pub fn set_param_tensor(&mut self, layer: usize, name: &str, value: Tensor<E>) -> Result<()> {
        let slot = self
            .params
            .get_mut(layer)
            .and_then(|l| l.iter_mut().find(|(n, _)| n == name))
            .ok_or_else(|| CoreError::Config(format!("layer {layer} has no parameter {name}")))?;
        if slot.1.shape() != value.shape() {
            return Err(CoreError::Config(format!(
                "parameter layer{layer}.{name} has shape {:?}, got {:?}",
                slot.1.shape(),
                value.shape()
            )));
        }
        slot.1 = value;
        Ok(())
    }

    /// Replaces all parameters from (name, tensor) pairs; names and shapes
    /// must match the network exactly.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<E>)>) -> Result<()> {
        let own: Vec<String> = self.named_params().iter().map(|(n, _)| n.clone()).collect();
        if named.len() != own.len() {
            return Err(CoreError::Config(format!(
                "checkpoint holds {} tensors, network has {}",
                named.len(),
                own.len()
            )));
        }
        for (name, tensor) in named {
            let Some((layer, pname)) = name
                .strip_prefix("layer")
                .and_then(|rest| rest.split_once('.'))
            else {
                return Err(CoreError::Config(format!(
                    "unrecognized tensor name {name}"
                )));
            };
            let layer: usize = layer
                .parse()
                .map_err(|_| CoreError::Config(format!("unrecognized tensor name {name}")))?;
            self.set_param_tensor(layer, pname, tensor)?;
        }
        Ok(())
    }

    /// Records every parameter on the tape, trainable or frozen, in the
    /// same nesting as the layer list.
    pub fn insert_params(&self, tape: &mut Tape<E>, trainable: bool) -> Vec<Vec<NodeId>> {
        self.params
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|(_, t)| {
                        if trainable {
                            tape.param(t.clone())
                        } else {
                            tape.constant(t.clone())
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> &mut Vec<Vec<(String, Tensor<E>)>> {
        &mut self.params
    }

    pub fn clone_params(&self) -> Vec<Vec<(String, Tensor<E>)>> {
        self.params.clone()
    }

    pub fn restore_params(&mut self, params: Vec<Vec<(String, Tensor<E>)>>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(CoreError::Config(
                "parameter snapshot does not match the network layout".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        input: NodeId,
        params: &[Vec<NodeId>],
    ) -> Result<NodeId> {
        Ok(self.forward_with_features(tape, input, params)?.0)
    }

    /// Runs the network on the tape. The second return value is the
    /// flattened activation feeding the final Linear layer, when there is
    /// one; otherwise None.
    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(CoreError::Config(format!(
                "network expects input [n, {c}, {h}, {w}], got {shape:?}"
            )));
        }
        Ok(())
    }

    pub fn forward_with_features(
        &self,
        tape: &mut Tape<E>,
        input: NodeId,
        params: &[Vec<NodeId>],
    ) -> Result<(NodeId, Option<NodeId>)> {
        self.check_input(tape.value(input).shape())?;
        let mut cur = input;
        let mut residuals = Vec::new();
        let mut features = None;
        let last = self.specs.len() - 1;
        for (i, spec) in self.specs.iter().enumerate() {
            if i == last && spec.kind == LayerKind::Linear {
                features = Some(cur);
            }
            cur = match (&self.ops[i], spec.kind) {
                (BuiltOp::Conv(op), _) => tape.apply(
                    op.clone() as Arc<dyn TapeOp<E>>,
                    &[cur, params[i][0], params[i][1]],
                )?,
                (BuiltOp::Cg(op), _) => {
                    tape.apply(op.clone() as Arc<dyn TapeOp<E>>, &[cur, params[i][0]])?
                }
                (BuiltOp::Pool(op), _) => tape.apply(op.clone() as Arc<dyn TapeOp<E>>, &[cur])?,
                (BuiltOp::Norm(op), _) => tape.apply(op.clone() as Arc<dyn TapeOp<E>>, &[cur])?,
                (BuiltOp::Plain, LayerKind::Linear) => {
                    let z = tape.matmul(cur, params[i][0])?;
                    tape.add(z, params[i][1])?
                }
                (BuiltOp::Plain, LayerKind::Relu) => tape.relu(cur)?,
                (BuiltOp::Plain, LayerKind::Flatten) => {
                    let shape = tape.value(cur).shape().to_vec();
                    let b = shape[0];
                    let n: usize = shape[1..].iter().product();
                    tape.reshape(cur, vec![b, n])?
                }
                (BuiltOp::Plain, LayerKind::ResidualBegin) => {
                    residuals.push(cur);
                    cur
                }
                (BuiltOp::Plain, LayerKind::ResidualEnd) => {
                    let saved = residuals.pop().expect("shape flow validated");
                    tape.add(cur, saved)?
                }
                (BuiltOp::Plain, kind) => {
                    return Err(CoreError::Config(format!(
                        "layer {i} ({kind:?}) has no tape lowering"
                    )))
                }
            };
        }
        Ok((cur, features))
    }

    /// Tape-free forward pass for inference.
    pub fn eval(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.eval_with_features(x)?.0)
    }

    /// Tape-free forward pass returning (output, flattened features before
    /// the final Linear layer or the flattened output when there is none).
    pub fn eval_with_features(&self, x: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        self.check_input(x.shape())?;
        let mut cur = x.clone();
        let mut residuals: Vec<Tensor<E>> = Vec::new();
        let mut features = None;
        let last = self.specs.len() - 1;
        for (i, spec) in self.specs.iter().enumerate() {
            if i == last && spec.kind == LayerKind::Linear {
                features = Some(cur.clone());
            }
            cur = match (&self.ops[i], spec.kind) {
                (BuiltOp::Conv(op), _) => TapeOp::<E>::forward(
                    op.as_ref(),
                    &[
                        &cur,
                        self.param_tensor(i, "weight")?,
                        self.param_tensor(i, "bias")?,
                    ],
                )?,
                (BuiltOp::Cg(op), _) => {
                    TapeOp::<E>::forward(op.as_ref(), &[&cur, self.param_tensor(i, "coeff")?])?
                }
                (BuiltOp::Pool(op), _) => TapeOp::<E>::forward(op.as_ref(), &[&cur])?,
                (BuiltOp::Norm(op), _) => TapeOp::<E>::forward(op.as_ref(), &[&cur])?,
                (BuiltOp::Plain, LayerKind::Linear) => {
                    let w = self.param_tensor(i, "weight")?;
                    let b = self.param_tensor(i, "bias")?;
                    let (m, k) = (cur.shape()[0], cur.shape()[1]);
                    let n = w.shape()[1];
                    let mut out = Tensor::zeros(vec![m, n]);
                    matmul_into(out.data_mut(), cur.data(), w.data(), m, k, n, false, false);
                    for r in 0..m {
                        for (o, &bias) in
                            out.data_mut()[r * n..(r + 1) * n].iter_mut().zip(b.data())
                        {
                            *o += bias;
                        }
                    }
                    out
                }
                (BuiltOp::Plain, LayerKind::Relu) => {
                    cur.map(|v| if v > E::zero() { v } else { E::zero() })
                }
                (BuiltOp::Plain, LayerKind::Flatten) => {
                    let b = cur.shape()[0];
                    let n = cur.numel() / b;
                    cur.reshape(vec![b, n])?
                }
                (BuiltOp::Plain, LayerKind::ResidualBegin) => {
                    residuals.push(cur.clone());
                    cur
                }
                (BuiltOp::Plain, LayerKind::ResidualEnd) => {
                    let saved = residuals.pop().expect("shape flow validated");
                    let mut out = cur;
                    for (dst, &src) in out.data_mut().iter_mut().zip(saved.data()) {
                        *dst += src;
                    }
                    out
                }
                (BuiltOp::Plain, kind) => {
                    return Err(CoreError::Config(format!(
                        "layer {i} ({kind:?}) has no eval lowering"
                    )))
                }
            };
        }
        let flat = |t: Tensor<E>| -> Result<Tensor<E>> {
            let b = t.shape()[0];
            let n = t.numel() / b;
            Ok(t.reshape(vec![b, n])?)
        };
        let features = flat(features.unwrap_or_else(|| cur.clone()))?;
        Ok((cur, features))
    }

    /// Same parameters at a different float width.
    pub fn cast<T: Element>(&self) -> Result<Network<T>> {
        let mut net = Network::build(self.specs.clone(), self.input_shape, 0)?;
        for (i, layer) in self.params.iter().enumerate() {
            for (name, t) in layer {
                net.set_param_tensor(i, name, t.cast())?;
            }
        }
        Ok(net)
    }
}

fn random_tensor<E: Element>(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape and data length agree")
}
