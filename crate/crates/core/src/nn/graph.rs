use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::activation::ActKind;
use super::ops::{self, Window};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layer inventory. Shapes below are per sample, without the batch axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Flattens its input before the affine map.
    Linear {
        out_features: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    Activation(ActKind),
    /// Zeros of the input's shape (the "none" cell op).
    Zeroize,
    Identity,
    Concat,
    Add,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
    }

    /// Output shape given the shapes of the inputs.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let arity_err = |want: &str| {
            Error::ShapeMismatch(format!(
                "{self:?} expects {want}, got {} inputs",
                inputs.len()
            ))
        };
        let chw = |s: &[usize]| -> Result<(usize, usize, usize)> {
            match *s {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::ShapeMismatch(format!(
                    "{self:?} needs a CxHxW input, got {s:?}"
                ))),
            }
        };
        match self {
            LayerKind::Input => Err(Error::ShapeMismatch("input node cannot be pushed".into())),
            LayerKind::Add | LayerKind::Concat => {
                let first = inputs
                    .first()
                    .ok_or_else(|| arity_err("at least one input"))?;
                if matches!(self, LayerKind::Add) {
                    if inputs.iter().any(|s| s != first) {
                        return Err(Error::ShapeMismatch(format!(
                            "add of mismatched shapes {inputs:?}"
                        )));
                    }
                    return Ok(first.to_vec());
                }
                let mut out = first.to_vec();
                out[0] = 0;
                for s in inputs {
                    if s.len() != first.len() || s[1..] != first[1..] {
                        return Err(Error::ShapeMismatch(format!("concat of {inputs:?}")));
                    }
                    out[0] += s[0];
                }
                Ok(out)
            }
            _ => {
                let [input] = inputs else {
                    return Err(arity_err("one input"));
                };
                match *self {
                    LayerKind::Conv2d {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    } => {
                        let (_, h, w) = chw(input)?;
                        let win = Window {
                            kernel,
                            stride,
                            padding,
                        };
                        Ok(vec![
                            out_channels,
                            win.output_extent(h)?,
                            win.output_extent(w)?,
                        ])
                    }
                    LayerKind::AvgPool {
                        kernel,
                        stride,
                        padding,
                    } => {
                        let (c, h, w) = chw(input)?;
                        let win = Window {
                            kernel,
                            stride,
                            padding,
                        };
                        Ok(vec![c, win.output_extent(h)?, win.output_extent(w)?])
                    }
                    LayerKind::GlobalAvgPool => Ok(vec![chw(input)?.0]),
                    LayerKind::Linear { out_features } => Ok(vec![out_features]),
                    _ => Ok(input.to_vec()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

/// Topologically ordered layer graph. Node 0 is the input and the last node
/// is the classifier `Linear` layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn shape_of(&self, node: usize) -> &[usize] {
        &self.shapes[node]
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("graph has nodes")
    }

    pub fn final_node(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of activation layers, N_A.
    pub fn activation_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, LayerKind::Activation(_)))
            .count()
    }

    fn fan_in(&self, node: usize) -> usize {
        let input = &self.shapes[self.nodes[node].inputs[0]];
        match self.nodes[node].kind {
            LayerKind::Conv2d { kernel, .. } => input[0] * kernel * kernel,
            LayerKind::Linear { .. } => input.iter().product(),
            _ => 0,
        }
    }

    fn param_shape(&self, node: usize) -> Option<(usize, usize)> {
        match self.nodes[node].kind {
            LayerKind::Conv2d { out_channels, .. } => Some((out_channels, self.fan_in(node))),
            LayerKind::Linear { out_features } => Some((out_features, self.fan_in(node))),
            _ => None,
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        (0..self.nodes.len())
            .filter_map(|i| self.param_shape(i))
            .map(|(out, fan_in)| out * fan_in + out)
            .sum()
    }
}

/// Incremental graph construction with shape checking at every step.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
}

impl GraphBuilder {
    pub fn new(input_shape: Vec<usize>) -> Self {
        GraphBuilder {
            nodes: vec![Node {
                kind: LayerKind::Input,
                inputs: vec![],
            }],
            shapes: vec![input_shape],
        }
    }

    pub const INPUT: usize = 0;

    pub fn push(&mut self, kind: LayerKind, inputs: &[usize]) -> Result<usize> {
        let id = self.nodes.len();
        if inputs.is_empty() || inputs.iter().any(|&i| i >= id) {
            return Err(Error::ShapeMismatch(format!(
                "node {id} ({kind:?}) has invalid inputs {inputs:?}"
            )));
        }
        let in_shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.shapes[i].as_slice()).collect();
        let shape = kind.output_shape(&in_shapes)?;
        self.nodes.push(Node {
            kind,
            inputs: inputs.to_vec(),
        });
        self.shapes.push(shape);
        Ok(id)
    }

    /// Appends a chain of single-input layers starting from `from`.
    pub fn chain(&mut self, from: usize, kinds: &[LayerKind]) -> Result<usize> {
        kinds
            .iter()
            .try_fold(from, |prev, &k| self.push(k, &[prev]))
    }

    pub fn finish(self) -> Result<NetworkGraph> {
        let last = self.nodes.last().expect("input node");
        if !matches!(last.kind, LayerKind::Linear { .. }) {
            return Err(Error::ShapeMismatch(
                "graph must end with a Linear layer".into(),
            ));
        }
        Ok(NetworkGraph {
            nodes: self.nodes,
            shapes: self.shapes,
        })
    }
}

/// Parameters of one Conv2d or Linear node. Conv weights are laid out as
/// `[out][in][ky][kx]`, linear weights as `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-node parameters, `None` for parameter-free nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub layers: Vec<Option<LayerParams>>,
}

impl WeightSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in self.layers.iter().flatten() {
            for v in p.weight.iter().chain(&p.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn check(&self, graph: &NetworkGraph) -> Result<()> {
        if self.layers.len() != graph.nodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight set has {} entries for {} nodes",
                self.layers.len(),
                graph.nodes.len()
            )));
        }
        for (i, entry) in self.layers.iter().enumerate() {
            match (graph.param_shape(i), entry) {
                (None, None) => {}
                (Some((out, fan_in)), Some(p))
                    if p.weight.len() == out * fan_in && p.bias.len() == out => {}
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "weights do not match node {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Draws every weight from N(0, 2 / fan_in) with zero biases.
///
/// Only parameterised layers consume the random stream, so graphs that differ
/// only in their activation functions receive identical weights.
pub fn init_weights(graph: &NetworkGraph, seed: u64) -> WeightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..graph.nodes.len())
        .map(|i| {
            graph.param_shape(i).map(|(out, fan_in)| {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                LayerParams {
                    weight: (0..out * fan_in).map(|_| normal.sample(&mut rng)).collect(),
                    bias: vec![0.0; out],
                }
            })
        })
        .collect();
    WeightSet { layers }
}

/// Instrumentation captured during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// One tensor per activation layer, in graph order.
    pub activation_outputs: Vec<Tensor>,
    /// Input to the final classifier layer.
    pub last_layer_input: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvPath {
    Direct,
    #[default]
    Im2col,
}

pub fn forward_traced(
    graph: &NetworkGraph,
    weights: &WeightSet,
    minibatch: &Tensor,
) -> Result<ForwardTrace> {
    forward_traced_using(graph, weights, minibatch, ConvPath::default())
}

pub fn forward_traced_using(
    graph: &NetworkGraph,
    weights: &WeightSet,
    minibatch: &Tensor,
    path: ConvPath,
) -> Result<ForwardTrace> {
    if minibatch.shape().is_empty() || minibatch.sample_shape() != graph.input_shape() {
        return Err(Error::ShapeMismatch(format!(
            "minibatch {:?} does not match graph input {:?}",
            minibatch.shape(),
            graph.input_shape()
        )));
    }
    if !minibatch.is_finite() {
        return Err(Error::NonFiniteValue("minibatch".into()));
    }
    weights.check(graph)?;

    let final_node = graph.final_node();
    let mut values: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
    let mut activation_outputs = Vec::new();
    let mut last_layer_input = None;
    values[0] = Some(minibatch.clone());

    for (id, node) in graph.nodes.iter().enumerate().skip(1) {
        let inputs: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|&i| values[i].as_ref().expect("topological order"))
            .collect();
        let params = weights.layers[id].as_ref();
        let out = match node.kind {
            LayerKind::Input => unreachable!("only node 0 is an input"),
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let p = params.expect("checked");
                let win = Window {
                    kernel,
                    stride,
                    padding,
                };
                match path {
                    ConvPath::Direct => {
                        ops::conv2d_direct(inputs[0], &p.weight, &p.bias, out_channels, win)?
                    }
                    ConvPath::Im2col => {
                        ops::conv2d_im2col(inputs[0], &p.weight, &p.bias, out_channels, win)?
                    }
                }
            }
            LayerKind::Linear { out_features } => {
                if id == final_node {
                    last_layer_input = Some(inputs[0].clone());
                }
                let p = params.expect("checked");
                ops::linear(inputs[0], &p.weight, &p.bias, out_features)?
            }
            LayerKind::AvgPool {
                kernel,
                stride,
                padding,
            } => ops::avg_pool(
                inputs[0],
                Window {
                    kernel,
                    stride,
                    padding,
                },
            )?,
            LayerKind::GlobalAvgPool => ops::global_avg_pool(inputs[0])?,
            LayerKind::Activation(act) => {
                let y = act.apply(inputs[0]);
                activation_outputs.push(y.clone());
                y
            }
            LayerKind::Zeroize => Tensor::zeros(inputs[0].shape().to_vec()),
            LayerKind::Identity => inputs[0].clone(),
            LayerKind::Add => ops::add(&inputs)?,
            LayerKind::Concat => ops::concat(&inputs)?,
        };
        if !out.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "node {id} ({:?})",
                node.kind
            )));
        }
        values[id] = Some(out);
    }

    Ok(ForwardTrace {
        activation_outputs,
        last_layer_input: last_layer_input.expect("graph ends with Linear"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv1x1(out_channels: usize) -> LayerKind {
        LayerKind::Conv2d {
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    #[test]
    fn identity_conv_passes_input_to_classifier() {
        let mut b = GraphBuilder::new(vec![2, 3, 3]);
        let c = b.push(conv1x1(2), &[0]).unwrap();
        b.push(LayerKind::Linear { out_features: 4 }, &[c]).unwrap();
        let g = b.finish().unwrap();
        let mut w = init_weights(&g, 1);
        w.layers[1].as_mut().unwrap().weight = vec![1.0, 0.0, 0.0, 1.0];
        let x = Tensor::new(vec![2, 2, 3, 3], (0..36).map(|v| v as f64 * 0.1).collect()).unwrap();
        let trace = forward_traced(&g, &w, &x).unwrap();
        assert_eq!(trace.last_layer_input, x);
        assert!(trace.activation_outputs.is_empty());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let mut b = GraphBuilder::new(vec![3, 4, 4]);
        let c = b
            .chain(
                0,
                &[
                    conv1x1(5),
                    LayerKind::Activation(ActKind::ReLU),
                    LayerKind::GlobalAvgPool,
                ],
            )
            .unwrap();
        b.push(LayerKind::Linear { out_features: 3 }, &[c]).unwrap();
        let g = b.finish().unwrap();
        let a = init_weights(&g, 7);
        assert_eq!(a.to_bytes(), init_weights(&g, 7).to_bytes());
        assert_ne!(a.to_bytes(), init_weights(&g, 8).to_bytes());
        for p in a.layers.iter().flatten() {
            assert!(p.bias.iter().all(|&v| v == 0.0));
        }
        assert_eq!(g.param_count(), 5 * 3 + 5 + 3 * 5 + 3);
    }

    #[test]
    fn kaiming_std_matches() {
        // Linear with fan_in 2: std should be sqrt(2/2) = 1.
        let mut b = GraphBuilder::new(vec![2]);
        b.push(
            LayerKind::Linear {
                out_features: 500_000,
            },
            &[0],
        )
        .unwrap();
        let g = b.finish().unwrap();
        let w = init_weights(&g, 11);
        let vals = &w.layers[1].as_ref().unwrap().weight;
        assert_eq!(vals.len(), 1_000_000);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn shape_and_arity_errors() {
        let mut b = GraphBuilder::new(vec![3, 4, 4]);
        assert!(b.push(LayerKind::GlobalAvgPool, &[5]).is_err());
        let p = b.push(LayerKind::GlobalAvgPool, &[0]).unwrap();
        assert!(b.push(LayerKind::Add, &[0, p]).is_err());
        let b = GraphBuilder::new(vec![3, 4, 4]);
        assert!(b.finish().is_err());
    }

    #[test]
    fn rejects_wrong_minibatch_shape() {
        let mut b = GraphBuilder::new(vec![1, 2, 2]);
        b.push(LayerKind::Linear { out_features: 1 }, &[0]).unwrap();
        let g = b.finish().unwrap();
        let w = init_weights(&g, 0);
        let x = Tensor::zeros(vec![2, 1, 3, 3]);
        assert!(matches!(
            forward_traced(&g, &w, &x),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut b = GraphBuilder::new(vec![1, 1, 1]);
        b.push(LayerKind::Linear { out_features: 1 }, &[0]).unwrap();
        let g = b.finish().unwrap();
        let mut w = init_weights(&g, 0);
        w.layers[1].as_mut().unwrap().weight = vec![f64::MAX];
        let x = Tensor::new(vec![1, 1, 1, 1], vec![10.0]).unwrap();
        assert!(matches!(
            forward_traced(&g, &w, &x),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn direct_and_im2col_forward_agree() {
        let mut b = GraphBuilder::new(vec![3, 6, 6]);
        let c = b
            .chain(
                0,
                &[
                    LayerKind::Conv2d {
                        out_channels: 4,
                        kernel: 3,
                        stride: 2,
                        padding: 1,
                    },
                    LayerKind::Activation(ActKind::GELU),
                    LayerKind::GlobalAvgPool,
                ],
            )
            .unwrap();
        b.push(LayerKind::Linear { out_features: 2 }, &[c]).unwrap();
        let g = b.finish().unwrap();
        let w = init_weights(&g, 3);
        let x = Tensor::new(
            vec![2, 3, 6, 6],
            (0..216).map(|v| ((v * 37) % 101) as f64 / 100.0).collect(),
        )
        .unwrap();
        let a = forward_traced_using(&g, &w, &x, ConvPath::Direct).unwrap();
        let f = forward_traced_using(&g, &w, &x, ConvPath::Im2col).unwrap();
        for (u, v) in a.activation_outputs[0]
            .data()
            .iter()
            .zip(f.activation_outputs[0].data())
        {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
