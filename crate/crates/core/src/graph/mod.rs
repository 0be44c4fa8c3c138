//! Declarative layer graphs and a forward-only inference engine.
//!
//! A graph is a flat list of layers applied in order. `concat` layers join the
//! running activation with the retained output of a strictly earlier layer,
//! which is enough to express U-Net skip connections.

mod forward;
pub mod ops;

pub use forward::{forward, forward_resume, forward_trace, Trace};
pub use ops::{Activation, OpError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::WeightBundle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid graph JSON: {0}")]
    Json(String),
    #[error("layer {layer}: {msg}")]
    Schema { layer: usize, msg: String },
    #[error("graph must contain at least one layer")]
    Empty,
    #[error("input_channels must be positive")]
    NoInputChannels,
    #[error("layer {layer}: unknown kind {kind:?}")]
    UnknownKind { layer: usize, kind: String },
    #[error("layer {layer}: forward reference to layer {target}")]
    ForwardReference { layer: usize, target: usize },
    #[error("layer {layer}: channel mismatch, expected {expected} input channels, graph provides {found}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: kernel size {kernel} must be odd")]
    EvenKernel { layer: usize, kernel: usize },
    #[error("layer {layer}: missing tensor {name:?}")]
    MissingTensor { layer: usize, name: String },
    #[error("layer {layer}: tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        layer: usize,
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("input has {found} channels, graph expects {expected}")]
    InputChannels { expected: usize, found: usize },
    #[error("layer {layer}: {source}")]
    Op {
        layer: usize,
        #[source]
        source: OpError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
        weight: String,
        bias: String,
    },
    ConvTranspose2x {
        in_ch: usize,
        out_ch: usize,
        weight: String,
        bias: String,
    },
    UpsampleNearest2x,
    Maxpool2x,
    Relu,
    Sigmoid,
    /// Appends the channels of the output of layer `with` to the running activation.
    Concat { with: usize },
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::ConvTranspose2x { .. } => "conv_transpose2x",
            LayerKind::UpsampleNearest2x => "upsample_nearest2x",
            LayerKind::Maxpool2x => "maxpool2x",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Concat { .. } => "concat",
        }
    }

    /// `(weight, bias)` names for layers that own parameters.
    pub fn params(&self) -> Option<(&str, &str)> {
        match self {
            LayerKind::Conv2d { weight, bias, .. }
            | LayerKind::ConvTranspose2x { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    input_channels: usize,
    layers: Vec<LayerSpec>,
}

/// One layer as written in graph JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLayer {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_ch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_ch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGraph {
    pub input_channels: usize,
    pub layers: Vec<RawLayer>,
}

impl RawLayer {
    fn into_kind(self, layer: usize) -> Result<(Option<String>, LayerKind), GraphError> {
        let schema = |msg: String| GraphError::Schema { layer, msg };
        let RawLayer {
            kind,
            name,
            kernel,
            in_ch,
            out_ch,
            weight,
            bias,
            with,
        } = self;
        let mut allowed: &[&str] = &[];
        let parsed = match kind.as_str() {
            "conv2d" => {
                allowed = &["kernel", "in_ch", "out_ch", "weight", "bias"];
                LayerKind::Conv2d {
                    kernel: kernel.ok_or_else(|| schema("conv2d requires \"kernel\"".into()))?,
                    in_ch: in_ch.ok_or_else(|| schema("conv2d requires \"in_ch\"".into()))?,
                    out_ch: out_ch.ok_or_else(|| schema("conv2d requires \"out_ch\"".into()))?,
                    weight: weight
                        .clone()
                        .ok_or_else(|| schema("conv2d requires \"weight\"".into()))?,
                    bias: bias
                        .clone()
                        .ok_or_else(|| schema("conv2d requires \"bias\"".into()))?,
                }
            }
            "conv_transpose2x" => {
                allowed = &["kernel", "in_ch", "out_ch", "weight", "bias"];
                if kernel.is_some_and(|k| k != 2) {
                    return Err(schema("conv_transpose2x only supports kernel 2".into()));
                }
                LayerKind::ConvTranspose2x {
                    in_ch: in_ch
                        .ok_or_else(|| schema("conv_transpose2x requires \"in_ch\"".into()))?,
                    out_ch: out_ch
                        .ok_or_else(|| schema("conv_transpose2x requires \"out_ch\"".into()))?,
                    weight: weight
                        .clone()
                        .ok_or_else(|| schema("conv_transpose2x requires \"weight\"".into()))?,
                    bias: bias
                        .clone()
                        .ok_or_else(|| schema("conv_transpose2x requires \"bias\"".into()))?,
                }
            }
            "upsample_nearest2x" => LayerKind::UpsampleNearest2x,
            "maxpool2x" => LayerKind::Maxpool2x,
            "relu" => LayerKind::Relu,
            "sigmoid" => LayerKind::Sigmoid,
            "concat" => {
                allowed = &["with"];
                LayerKind::Concat {
                    with: with.ok_or_else(|| schema("concat requires \"with\"".into()))?,
                }
            }
            _ => return Err(GraphError::UnknownKind { layer, kind }),
        };
        let present = [
            ("kernel", kernel.is_some()),
            ("in_ch", in_ch.is_some()),
            ("out_ch", out_ch.is_some()),
            ("weight", weight.is_some()),
            ("bias", bias.is_some()),
            ("with", with.is_some()),
        ];
        if let Some((field, _)) = present
            .iter()
            .find(|(field, set)| *set && !allowed.contains(field))
        {
            return Err(schema(format!("field {field:?} is not valid for {kind}")));
        }
        Ok((name, parsed))
    }
}

impl From<&LayerSpec> for RawLayer {
    fn from(spec: &LayerSpec) -> Self {
        let mut raw = RawLayer {
            kind: spec.kind.tag().to_string(),
            name: Some(spec.name.clone()),
            ..RawLayer::default()
        };
        match &spec.kind {
            LayerKind::Conv2d {
                kernel,
                in_ch,
                out_ch,
                weight,
                bias,
            } => {
                raw.kernel = Some(*kernel);
                raw.in_ch = Some(*in_ch);
                raw.out_ch = Some(*out_ch);
                raw.weight = Some(weight.clone());
                raw.bias = Some(bias.clone());
            }
            LayerKind::ConvTranspose2x {
                in_ch,
                out_ch,
                weight,
                bias,
            } => {
                raw.in_ch = Some(*in_ch);
                raw.out_ch = Some(*out_ch);
                raw.weight = Some(weight.clone());
                raw.bias = Some(bias.clone());
            }
            LayerKind::Concat { with } => raw.with = Some(*with),
            _ => {}
        }
        raw
    }
}

pub fn parse_graph(text: &str) -> Result<ModelGraph, GraphError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
    ModelGraph::from_raw(raw)
}

impl ModelGraph {
    pub fn from_raw(raw: RawGraph) -> Result<Self, GraphError> {
        let layers = raw
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, l)| l.into_kind(i))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(raw.input_channels, layers)
    }

    /// Builds a graph from `(optional name, kind)` pairs and checks channel flow.
    pub fn new(
        input_channels: usize,
        layers: Vec<(Option<String>, LayerKind)>,
    ) -> Result<Self, GraphError> {
        if input_channels == 0 {
            return Err(GraphError::NoInputChannels);
        }
        if layers.is_empty() {
            return Err(GraphError::Empty);
        }
        let mut specs: Vec<LayerSpec> = Vec::with_capacity(layers.len());
        let mut channels = input_channels;
        for (index, (name, kind)) in layers.into_iter().enumerate() {
            let out_channels = match &kind {
                LayerKind::Conv2d {
                    kernel,
                    in_ch,
                    out_ch,
                    ..
                } => {
                    if kernel % 2 == 0 {
                        return Err(GraphError::EvenKernel {
                            layer: index,
                            kernel: *kernel,
                        });
                    }
                    check_conv_channels(index, *in_ch, *out_ch, channels)?
                }
                LayerKind::ConvTranspose2x { in_ch, out_ch, .. } => {
                    check_conv_channels(index, *in_ch, *out_ch, channels)?
                }
                LayerKind::Concat { with } => {
                    if *with >= index {
                        return Err(GraphError::ForwardReference {
                            layer: index,
                            target: *with,
                        });
                    }
                    channels + specs[*with].out_channels
                }
                _ => channels,
            };
            let name = name.unwrap_or_else(|| format!("{}_{index}", kind.tag()));
            specs.push(LayerSpec {
                index,
                name,
                kind,
                out_channels,
            });
            channels = out_channels;
        }
        Ok(Self {
            input_channels,
            layers: specs,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(self.input_channels, |l| l.out_channels)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Indices of the layers that own parameters; the fault-campaign layer axis.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.kind.params().is_some())
            .map(|l| l.index)
            .collect()
    }

    pub fn to_raw(&self) -> RawGraph {
        RawGraph {
            input_channels: self.input_channels,
            layers: self.layers.iter().map(RawLayer::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("graph serializes")
    }

    /// Checks that every referenced tensor exists with the shape its layer expects.
    pub fn validate(&self, bundle: &WeightBundle) -> Result<(), GraphError> {
        for layer in &self.layers {
            let (weight, bias, weight_shape, out_ch) = match &layer.kind {
                LayerKind::Conv2d {
                    kernel,
                    in_ch,
                    out_ch,
                    weight,
                    bias,
                } => (weight, bias, vec![*out_ch, *in_ch, *kernel, *kernel], *out_ch),
                LayerKind::ConvTranspose2x {
                    in_ch,
                    out_ch,
                    weight,
                    bias,
                } => (weight, bias, vec![*in_ch, *out_ch, 2, 2], *out_ch),
                _ => continue,
            };
            for (name, expected) in [(weight, weight_shape), (bias, vec![out_ch])] {
                let tensor = bundle.get(name).ok_or_else(|| GraphError::MissingTensor {
                    layer: layer.index,
                    name: name.clone(),
                })?;
                if tensor.shape() != expected.as_slice() {
                    return Err(GraphError::ShapeMismatch {
                        layer: layer.index,
                        name: name.clone(),
                        expected,
                        found: tensor.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_conv_channels(
    layer: usize,
    in_ch: usize,
    out_ch: usize,
    available: usize,
) -> Result<usize, GraphError> {
    if in_ch == 0 || out_ch == 0 {
        return Err(GraphError::Schema {
            layer,
            msg: "channel counts must be positive".into(),
        });
    }
    if in_ch != available {
        return Err(GraphError::ChannelMismatch {
            layer,
            expected: in_ch,
            found: available,
        });
    }
    Ok(out_ch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    const ONE_CONV: &str = r#"{"input_channels": 1, "layers": [
        {"kind": "conv2d", "kernel": 1, "in_ch": 1, "out_ch": 1, "weight": "w0", "bias": "b0"}
    ]}"#;

    fn one_conv_bundle(bias_len: usize) -> WeightBundle {
        WeightBundle::from_entries([
            ("w0".to_string(), Tensor::filled(vec![1, 1, 1, 1], 1.0).unwrap()),
            ("b0".to_string(), Tensor::zeros(vec![bias_len]).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn minimal_graph() {
        let g = parse_graph(ONE_CONV).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.parameterized_layers(), vec![0]);
        assert_eq!(g.layers()[0].name, "conv2d_0");
        g.validate(&one_conv_bundle(1)).unwrap();
    }

    #[test]
    fn forward_concat_reference_is_rejected() {
        let text = r#"{"input_channels": 1, "layers": [
            {"kind": "relu"}, {"kind": "relu"}, {"kind": "concat", "with": 5},
            {"kind": "relu"}, {"kind": "relu"}, {"kind": "relu"}
        ]}"#;
        let err = parse_graph(text).unwrap_err();
        assert_eq!(err, GraphError::ForwardReference { layer: 2, target: 5 });
        assert!(err.to_string().contains("forward reference"));

        let self_ref = r#"{"input_channels": 1, "layers": [{"kind": "concat", "with": 0}]}"#;
        assert!(matches!(
            parse_graph(self_ref),
            Err(GraphError::ForwardReference { layer: 0, target: 0 })
        ));
    }

    #[test]
    fn schema_errors_carry_layer_index() {
        let unknown = r#"{"input_channels": 1, "layers": [{"kind": "relu"}, {"kind": "dense"}]}"#;
        assert_eq!(
            parse_graph(unknown),
            Err(GraphError::UnknownKind {
                layer: 1,
                kind: "dense".into()
            })
        );
        let missing = r#"{"input_channels": 1, "layers": [{"kind": "conv2d", "kernel": 3}]}"#;
        assert!(matches!(parse_graph(missing), Err(GraphError::Schema { layer: 0, .. })));
        let stray = r#"{"input_channels": 1, "layers": [{"kind": "relu", "with": 0}]}"#;
        assert!(matches!(parse_graph(stray), Err(GraphError::Schema { layer: 0, .. })));
        let bogus_field = r#"{"input_channels": 1, "layers": [{"kind": "relu", "stride": 2}]}"#;
        assert!(matches!(parse_graph(bogus_field), Err(GraphError::Json(_))));
        assert!(matches!(parse_graph("[1, 2"), Err(GraphError::Json(_))));
    }

    #[test]
    fn channel_flow_is_checked() {
        let text = r#"{"input_channels": 3, "layers": [
            {"kind": "conv2d", "kernel": 3, "in_ch": 3, "out_ch": 4, "weight": "a", "bias": "b"},
            {"kind": "concat", "with": 0},
            {"kind": "conv2d", "kernel": 1, "in_ch": 4, "out_ch": 1, "weight": "c", "bias": "d"}
        ]}"#;
        assert_eq!(
            parse_graph(text),
            Err(GraphError::ChannelMismatch {
                layer: 2,
                expected: 4,
                found: 8
            })
        );
        let even = r#"{"input_channels": 1, "layers": [
            {"kind": "conv2d", "kernel": 2, "in_ch": 1, "out_ch": 1, "weight": "a", "bias": "b"}
        ]}"#;
        assert!(matches!(parse_graph(even), Err(GraphError::EvenKernel { layer: 0, kernel: 2 })));
    }

    #[test]
    fn validate_reports_missing_and_misshapen_tensors() {
        let g = parse_graph(ONE_CONV).unwrap();
        assert_eq!(
            g.validate(&one_conv_bundle(2)),
            Err(GraphError::ShapeMismatch {
                layer: 0,
                name: "b0".into(),
                expected: vec![1],
                found: vec![2],
            })
        );

        let g = parse_graph(&ONE_CONV.replace("w0", "w9")).unwrap();
        assert_eq!(
            g.validate(&one_conv_bundle(1)),
            Err(GraphError::MissingTensor {
                layer: 0,
                name: "w9".into()
            })
        );
    }

    #[test]
    fn bias_shape_mismatch_for_three_outputs() {
        let g = ModelGraph::new(
            1,
            vec![(
                None,
                LayerKind::Conv2d {
                    kernel: 1,
                    in_ch: 1,
                    out_ch: 3,
                    weight: "w".into(),
                    bias: "b".into(),
                },
            )],
        )
        .unwrap();
        let bundle = WeightBundle::from_entries([
            ("w".to_string(), Tensor::zeros(vec![3, 1, 1, 1]).unwrap()),
            ("b".to_string(), Tensor::zeros(vec![2]).unwrap()),
        ])
        .unwrap();
        assert!(matches!(
            g.validate(&bundle),
            Err(GraphError::ShapeMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let g = parse_graph(ONE_CONV).unwrap();
        assert_eq!(parse_graph(&g.to_json()).unwrap(), g);
    }
}
