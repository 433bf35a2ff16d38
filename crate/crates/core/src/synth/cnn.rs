//! VGG-shaped forward/backward graph on a single compute device.

use crate::graph::{OpKind, OpNode, TensorShape};

/// Prefix of every weight-gradient node.
pub const GRADIENT_PREFIX: &str = "wgrad/";

const F32: u64 = 4;
const BLOCKS: usize = 5;
const KERNEL: u64 = 3;

pub(super) struct CnnShape {
    pub conv_layers: usize,
    pub fc_layers: usize,
    pub batch: u64,
    pub image: u64,
    pub base_channels: u64,
}

fn shape(dims: &[u64]) -> TensorShape {
    TensorShape::new(dims.to_vec(), F32)
}

struct Layer {
    tag: String,
    conv: bool,
    input: String,
    input_shape: Vec<u64>,
    relu: Option<String>,
    relu_shape: Vec<u64>,
    pool: Option<String>,
    weight: Vec<u64>,
}

pub(super) fn layered_cnn(p: &CnnShape, device: &str) -> Vec<OpNode> {
    let total = p.conv_layers + p.fc_layers;
    let width = total.to_string().len().max(2);
    let tag = |l: usize| format!("L{l:0width$}");
    let node = |id: &str, op: &str| OpNode::new(id, op, OpKind::Compute, device);

    let mut nodes = Vec::new();
    let mut act = vec![p.batch, 3, p.image, p.image];
    nodes.push(node("input", "Input").with_output(shape(&act)));
    let mut prev = "input".to_owned();
    let mut layers: Vec<Layer> = Vec::new();

    for l in 1..=p.conv_layers {
        let block = (l - 1) * BLOCKS / p.conv_layers;
        let channels = p.base_channels << block.min(3);
        let t = tag(l);
        let id = format!("fwd/{t}/conv");
        let out = vec![p.batch, channels, act[2], act[3]];
        nodes.push(
            node(&id, "Conv2D")
                .with_attr("in_channels", act[1])
                .with_attr("out_channels", channels)
                .with_attr("kernel", KERNEL)
                .with_input(&prev, 0)
                .with_output(shape(&out)),
        );
        let relu = format!("fwd/{t}/relu");
        nodes.push(node(&relu, "Relu").with_input(&id, 0).with_output(shape(&out)));
        let mut layer = Layer {
            tag: t.clone(),
            conv: true,
            input: prev.clone(),
            input_shape: act.clone(),
            relu: Some(relu.clone()),
            relu_shape: out.clone(),
            pool: None,
            weight: vec![channels, act[1], KERNEL, KERNEL],
        };
        prev = relu;
        act = out;
        let next_block = (l * BLOCKS).checked_div(p.conv_layers).unwrap_or(BLOCKS);
        if (l == p.conv_layers || next_block != block) && act[2] > 1 {
            let pool = format!("fwd/{t}/pool");
            let pooled = vec![act[0], act[1], act[2] / 2, act[3] / 2];
            nodes.push(
                node(&pool, "MaxPool")
                    .with_attr("window", 2u64)
                    .with_input(&prev, 0)
                    .with_output(shape(&pooled)),
            );
            layer.pool = Some(pool.clone());
            prev = pool;
            act = pooled;
        }
        layers.push(layer);
    }

    let features: u64 = act[1..].iter().product();
    let flat = vec![p.batch, features];
    let conv_out = act.clone();
    if p.fc_layers > 0 {
        nodes.push(
            node("fwd/flatten", "Reshape")
                .with_input(&prev, 0)
                .with_output(shape(&flat)),
        );
        prev = "fwd/flatten".to_owned();
        act = flat;
    }
    let hidden = p.base_channels * 64;
    for i in 0..p.fc_layers {
        let l = p.conv_layers + i + 1;
        let t = tag(l);
        let last = i + 1 == p.fc_layers;
        let units = if last { 1000 } else { hidden };
        let id = format!("fwd/{t}/matmul");
        let out = vec![p.batch, units];
        nodes.push(
            node(&id, "MatMul")
                .with_attr("units", units)
                .with_input(&prev, 0)
                .with_output(shape(&out)),
        );
        let mut layer = Layer {
            tag: t.clone(),
            conv: false,
            input: prev.clone(),
            input_shape: act.clone(),
            relu: None,
            relu_shape: out.clone(),
            pool: None,
            weight: vec![act[1], units],
        };
        prev = id;
        if !last {
            let relu = format!("fwd/{t}/relu");
            nodes.push(node(&relu, "Relu").with_input(&prev, 0).with_output(shape(&out)));
            layer.relu = Some(relu.clone());
            prev = relu;
        }
        act = out;
        layers.push(layer);
    }

    nodes.push(
        node("loss", "SoftmaxCrossEntropy")
            .with_input(&prev, 0)
            .with_output(shape(&act)),
    );
    let mut grad = "loss".to_owned();

    for (idx, layer) in layers.iter().enumerate().rev() {
        let t = &layer.tag;
        if idx + 1 == p.conv_layers && p.fc_layers > 0 {
            nodes.push(
                node("bwd/flatten", "Reshape")
                    .with_input(&grad, 0)
                    .with_output(shape(&conv_out)),
            );
            grad = "bwd/flatten".to_owned();
        }
        if let Some(pool) = &layer.pool {
            let id = format!("bwd/{t}/pool");
            nodes.push(
                node(&id, "MaxPoolGrad")
                    .with_attr("window", 2u64)
                    .with_input(&grad, 0)
                    .with_input(pool, 0)
                    .with_output(shape(&layer.relu_shape)),
            );
            grad = id;
        }
        if let Some(relu) = &layer.relu {
            let id = format!("bwd/{t}/relu");
            nodes.push(
                node(&id, "ReluGrad")
                    .with_input(&grad, 0)
                    .with_input(relu, 0)
                    .with_output(shape(&layer.relu_shape)),
            );
            grad = id;
        }
        let (wop, dop) = if layer.conv {
            ("Conv2DBackpropFilter", "Conv2DBackpropInput")
        } else {
            ("MatMulGradWeight", "MatMulGradInput")
        };
        let wgrad = format!("{GRADIENT_PREFIX}{t}");
        nodes.push(
            node(&wgrad, wop)
                .with_input(&grad, 0)
                .with_input(&layer.input, 0)
                .with_output(shape(&layer.weight)),
        );
        nodes.push(
            node(&format!("apply/{t}"), "ApplyGradient")
                .with_input(&wgrad, 0)
                .with_output(shape(&layer.weight)),
        );
        if idx > 0 {
            let id = format!("bwd/{t}/{}", if layer.conv { "conv" } else { "matmul" });
            nodes.push(
                node(&id, dop)
                    .with_input(&grad, 0)
                    .with_output(shape(&layer.input_shape)),
            );
            grad = id;
        }
    }
    nodes
}
