use super::ops::{self, Activation};
use super::{GraphError, LayerKind, LayerSpec, ModelGraph};
use crate::bundle::WeightBundle;
use crate::tensor::Tensor;

/// Every intermediate output of one forward pass, kept so later passes that
/// differ only from some layer onward can resume instead of recomputing.
#[derive(Debug, Clone)]
pub struct Trace {
    input: Tensor,
    outputs: Vec<Tensor>,
}

impl Trace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn outputs(&self) -> &[Tensor] {
        &self.outputs
    }

    pub fn output(&self) -> &Tensor {
        self.outputs.last().unwrap_or(&self.input)
    }

    pub fn byte_size(&self) -> usize {
        (self.input.len() + self.outputs.iter().map(Tensor::len).sum::<usize>()) * 4
    }
}

fn param<'a>(bundle: &'a WeightBundle, layer: usize, name: &str) -> Result<&'a Tensor, GraphError> {
    bundle.get(name).ok_or_else(|| GraphError::MissingTensor {
        layer,
        name: name.to_string(),
    })
}

fn apply<'t>(
    layer: &LayerSpec,
    bundle: &WeightBundle,
    current: &Tensor,
    earlier: impl Fn(usize) -> Option<&'t Tensor>,
) -> Result<Tensor, GraphError> {
    let op = |source| GraphError::Op {
        layer: layer.index,
        source,
    };
    match &layer.kind {
        LayerKind::Conv2d { weight, bias, .. } => ops::conv2d(
            current,
            param(bundle, layer.index, weight)?,
            param(bundle, layer.index, bias)?,
        )
        .map_err(op),
        LayerKind::ConvTranspose2x { weight, bias, .. } => ops::conv_transpose2x(
            current,
            param(bundle, layer.index, weight)?,
            param(bundle, layer.index, bias)?,
        )
        .map_err(op),
        LayerKind::UpsampleNearest2x => ops::upsample_nearest2x(current).map_err(op),
        LayerKind::Maxpool2x => ops::maxpool2x(current).map_err(op),
        LayerKind::Relu => Ok(ops::activation(current, Activation::Relu)),
        LayerKind::Sigmoid => Ok(ops::activation(current, Activation::Sigmoid)),
        LayerKind::Concat { with } => {
            let skip = earlier(*with).ok_or(GraphError::ForwardReference {
                layer: layer.index,
                target: *with,
            })?;
            ops::concat_channels(current, skip).map_err(op)
        }
    }
}

fn check_input(graph: &ModelGraph, input: &Tensor) -> Result<(), GraphError> {
    let (c, _, _) = input.chw().map_err(|e| GraphError::Op {
        layer: 0,
        source: e.into(),
    })?;
    if c != graph.input_channels() {
        return Err(GraphError::InputChannels {
            expected: graph.input_channels(),
            found: c,
        });
    }
    Ok(())
}

/// Runs the graph and returns the last layer's output.
///
/// Only outputs referenced by a later `concat` are retained. Non-finite
/// weights or activations propagate through the arithmetic and never error.
pub fn forward(graph: &ModelGraph, bundle: &WeightBundle, input: &Tensor) -> Result<Tensor, GraphError> {
    check_input(graph, input)?;
    let layers = graph.layers();
    let mut retained: Vec<Option<Tensor>> = vec![None; layers.len()];
    let mut keep = vec![false; layers.len()];
    for layer in layers {
        if let LayerKind::Concat { with } = layer.kind {
            keep[with] = true;
        }
    }
    let mut current = input.clone();
    for layer in layers {
        let next = apply(layer, bundle, &current, |i| retained[i].as_ref())?;
        if keep[layer.index] {
            retained[layer.index] = Some(next.clone());
        }
        current = next;
    }
    Ok(current)
}

/// Like [`forward`] but keeps every intermediate output.
pub fn forward_trace(graph: &ModelGraph, bundle: &WeightBundle, input: &Tensor) -> Result<Trace, GraphError> {
    check_input(graph, input)?;
    let mut outputs: Vec<Tensor> = Vec::with_capacity(graph.len());
    for layer in graph.layers() {
        let current = outputs.last().unwrap_or(input);
        let next = apply(layer, bundle, current, |i| outputs.get(i))?;
        outputs.push(next);
    }
    Ok(Trace {
        input: input.clone(),
        outputs,
    })
}

/// Re-runs layers `start..` with `bundle`, reusing the outputs of layers
/// `..start` from `trace`. Bit-identical to a full [`forward`] whenever the
/// parameters of layers before `start` match those the trace was built with.
pub fn forward_resume(
    graph: &ModelGraph,
    bundle: &WeightBundle,
    trace: &Trace,
    start: usize,
) -> Result<Tensor, GraphError> {
    let layers = graph.layers();
    let start = start.min(layers.len());
    let mut fresh: Vec<Tensor> = Vec::with_capacity(layers.len() - start);
    for layer in &layers[start..] {
        let current = fresh
            .last()
            .or_else(|| start.checked_sub(1).map(|i| &trace.outputs[i]))
            .unwrap_or(&trace.input);
        let next = apply(layer, bundle, current, |i| {
            if i < start {
                trace.outputs.get(i)
            } else {
                fresh.get(i - start)
            }
        })?;
        fresh.push(next);
    }
    Ok(fresh
        .pop()
        .unwrap_or_else(|| trace.output().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;
    use crate::reference;
    use crate::rng::RngState;

    fn sigmoid_net() -> (ModelGraph, WeightBundle) {
        let g = parse_graph(
            r#"{"input_channels": 1, "layers": [
                {"kind": "conv2d", "kernel": 1, "in_ch": 1, "out_ch": 1, "weight": "w", "bias": "b"},
                {"kind": "sigmoid"}
            ]}"#,
        )
        .unwrap();
        let b = WeightBundle::from_entries([
            ("w".to_string(), Tensor::filled(vec![1, 1, 1, 1], 1.0).unwrap()),
            ("b".to_string(), Tensor::zeros(vec![1]).unwrap()),
        ])
        .unwrap();
        (g, b)
    }

    #[test]
    fn unit_conv_then_sigmoid() {
        let (g, b) = sigmoid_net();
        let mut rng = RngState::new(4);
        let x = Tensor::new(vec![1, 3, 3], (0..9).map(|_| rng.unit() * 8.0 - 4.0).collect()).unwrap();
        let y = forward(&g, &b, &x).unwrap();
        assert!(y.same_bits(&x.map(ops::sigmoid)));
    }

    #[test]
    fn infinite_weight_stays_in_sigmoid_range() {
        let (g, mut b) = sigmoid_net();
        b.get_mut("w").unwrap().data_mut()[0] = f32::INFINITY;
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, -1.0, 0.0, 0.5]).unwrap();
        let y = forward(&g, &b, &x).unwrap();
        assert!(y.data().iter().all(|v| v.is_nan() || (0.0..=1.0).contains(v)));
        assert!(y.data()[2].is_nan(), "0 * inf");
    }

    #[test]
    fn input_channel_mismatch() {
        let (g, b) = sigmoid_net();
        assert_eq!(
            forward(&g, &b, &Tensor::zeros(vec![2, 2, 2]).unwrap()),
            Err(GraphError::InputChannels {
                expected: 1,
                found: 2
            })
        );
    }

    #[test]
    fn unet_lite_trace_and_resume_agree_with_forward() {
        let g = reference::unet_lite_graph();
        let b = reference::unet_lite_bundle(11);
        let mut rng = RngState::new(1);
        let x = Tensor::new(vec![3, 16, 16], (0..768).map(|_| rng.unit()).collect()).unwrap();
        let full = forward(&g, &b, &x).unwrap();
        assert_eq!(full.shape(), &[1, 16, 16]);
        let trace = forward_trace(&g, &b, &x).unwrap();
        assert!(trace.output().same_bits(&full));
        for start in 0..=g.len() {
            assert!(forward_resume(&g, &b, &trace, start).unwrap().same_bits(&full));
        }
    }

    #[test]
    fn resume_sees_changed_parameters() {
        let g = reference::unet_lite_graph();
        let b = reference::unet_lite_bundle(11);
        let x = Tensor::filled(vec![3, 8, 8], 0.25).unwrap();
        let trace = forward_trace(&g, &b, &x).unwrap();
        let last = *g.parameterized_layers().last().unwrap();
        let (_, bias) = g.layers()[last].kind.params().unwrap();
        let mut faulted = b.clone();
        faulted.get_mut(bias).unwrap().data_mut()[0] = 1e6;
        let expected = forward(&g, &faulted, &x).unwrap();
        let resumed = forward_resume(&g, &faulted, &trace, last).unwrap();
        assert!(resumed.same_bits(&expected));
        assert!(!resumed.same_bits(trace.output()));
    }
}
