//! Reference models shipped with the simulator.
//!
//! * the threshold net: a 1x1 conv averaging RGB into luminance, scaled by
//!   `s` and shifted by `-s * t`, then a sigmoid. It predicts "cloud" exactly
//!   where luminance is at least `t` (up to sigmoid steepness), so its
//!   segmentation of synthetic scenes can be checked analytically.
//! * U-Net-lite: a three-level encoder/decoder with widths 8/16/32, two
//!   skip connections and both transposed-conv and nearest-upsample decoders.
//! * a plain chain of 1x1 convolutions with a configurable number of
//!   parameterized layers, used to exercise campaign bookkeeping cheaply.

use crate::bitflip::FieldClass;
use crate::bundle::WeightBundle;
use crate::campaign::config::{
    BitflipAxes, CampaignConfig, DatasetConfig, DisturbAxes, LayerSelection, ModelEntry, Sweep,
    DEFAULT_STREAK_LENGTH,
};
use crate::disturbance::DisturbanceKind;
use crate::format::write_rfwb;
use crate::graph::{LayerKind, ModelGraph};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const THRESHOLD_STEEPNESS: f32 = 50.0;
pub const THRESHOLD_LUMINANCE: f32 = 0.55;

fn conv(kernel: usize, in_ch: usize, out_ch: usize, name: &str) -> (Option<String>, LayerKind) {
    (
        Some(name.to_string()),
        LayerKind::Conv2d {
            kernel,
            in_ch,
            out_ch,
            weight: format!("{name}.weight"),
            bias: format!("{name}.bias"),
        },
    )
}

fn named(name: &str, kind: LayerKind) -> (Option<String>, LayerKind) {
    (Some(name.to_string()), kind)
}

pub fn threshold_net_graph() -> ModelGraph {
    ModelGraph::new(3, vec![conv(1, 3, 1, "luma"), named("out", LayerKind::Sigmoid)])
        .expect("threshold net is well formed")
}

pub fn threshold_net_bundle() -> WeightBundle {
    let s = THRESHOLD_STEEPNESS;
    WeightBundle::from_entries([
        (
            "luma.weight".to_string(),
            Tensor::filled(vec![1, 3, 1, 1], s / 3.0).expect("shape"),
        ),
        (
            "luma.bias".to_string(),
            Tensor::filled(vec![1], -s * THRESHOLD_LUMINANCE).expect("shape"),
        ),
    ])
    .expect("unique names")
}

pub fn unet_lite_graph() -> ModelGraph {
    use LayerKind::*;
    let layers = vec![
        conv(3, 3, 8, "enc1_a"),
        named("enc1_a_relu", Relu),
        conv(3, 8, 8, "enc1_b"),
        named("enc1_b_relu", Relu), // 3: skip to dec1
        named("pool1", Maxpool2x),
        conv(3, 8, 16, "enc2_a"),
        named("enc2_a_relu", Relu),
        conv(3, 16, 16, "enc2_b"),
        named("enc2_b_relu", Relu), // 8: skip to dec2
        named("pool2", Maxpool2x),
        conv(3, 16, 32, "mid_a"),
        named("mid_a_relu", Relu),
        conv(3, 32, 32, "mid_b"),
        named("mid_b_relu", Relu),
        (
            Some("up2".to_string()),
            ConvTranspose2x {
                in_ch: 32,
                out_ch: 16,
                weight: "up2.weight".into(),
                bias: "up2.bias".into(),
            },
        ),
        named("skip2", Concat { with: 8 }),
        conv(3, 32, 16, "dec2"),
        named("dec2_relu", Relu),
        named("up1", UpsampleNearest2x),
        named("skip1", Concat { with: 3 }),
        conv(3, 24, 8, "dec1_a"),
        named("dec1_a_relu", Relu),
        conv(3, 8, 8, "dec1_b"),
        named("dec1_b_relu", Relu),
        conv(1, 8, 1, "head"),
        named("head_sigmoid", Sigmoid),
    ];
    ModelGraph::new(3, layers).expect("U-Net-lite is well formed")
}

/// He-uniform weights and zero biases for every parameterized layer of `graph`.
pub fn random_bundle(graph: &ModelGraph, seed: u64) -> WeightBundle {
    let mut rng = RngState::new(seed);
    let mut bundle = WeightBundle::new();
    for layer in graph.layers() {
        let (shape, fan_in, out_ch) = match &layer.kind {
            LayerKind::Conv2d {
                kernel,
                in_ch,
                out_ch,
                ..
            } => (vec![*out_ch, *in_ch, *kernel, *kernel], in_ch * kernel * kernel, *out_ch),
            LayerKind::ConvTranspose2x { in_ch, out_ch, .. } => {
                (vec![*in_ch, *out_ch, 2, 2], *in_ch, *out_ch)
            }
            _ => continue,
        };
        let (weight, bias) = layer.kind.params().expect("parameterized");
        let limit = (6.0 / fan_in as f32).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| (rng.unit() * 2.0 - 1.0) * limit).collect();
        bundle
            .push(weight, Tensor::new(shape, data).expect("shape"))
            .expect("unique");
        bundle
            .push(bias, Tensor::zeros(vec![out_ch]).expect("shape"))
            .expect("unique");
    }
    bundle
}

pub fn unet_lite_bundle(seed: u64) -> WeightBundle {
    random_bundle(&unet_lite_graph(), seed)
}

/// `param_layers` 1x1 convolutions (3 -> 1, then 1 -> 1) followed by a sigmoid.
pub fn conv_chain_graph(param_layers: usize) -> ModelGraph {
    assert!(param_layers >= 1);
    let mut layers: Vec<_> = (0..param_layers)
        .map(|i| conv(1, if i == 0 { 3 } else { 1 }, 1, &format!("c{i}")))
        .collect();
    layers.push(named("out", LayerKind::Sigmoid));
    ModelGraph::new(3, layers).expect("chain is well formed")
}

/// Weights that make the chain equal to the threshold net: the first layer
/// computes the scaled luminance margin and the rest are identities.
pub fn conv_chain_bundle(param_layers: usize) -> WeightBundle {
    let mut bundle = WeightBundle::new();
    let s = THRESHOLD_STEEPNESS;
    for i in 0..param_layers {
        let (w, b) = if i == 0 {
            (Tensor::filled(vec![1, 3, 1, 1], s / 3.0), -s * THRESHOLD_LUMINANCE)
        } else {
            (Tensor::filled(vec![1, 1, 1, 1], 1.0), 0.0)
        };
        bundle.push(format!("c{i}.weight"), w.expect("shape")).expect("unique");
        bundle
            .push(format!("c{i}.bias"), Tensor::filled(vec![1], b).expect("shape"))
            .expect("unique");
    }
    bundle
}

pub const UNET_LITE_SEED: u64 = 2024;

pub const HOT_LEVELS: [f64; 6] = [0.0, 1.0, 4.0, 16.0, 64.0, 256.0];
pub const DARK_LEVELS: [f64; 5] = [0.0, 0.05, 0.1, 0.2, 0.4];
pub const STREAK_LEVELS: [f64; 5] = [0.0, 1.0, 2.0, 4.0, 8.0];

fn model_entry(id: &str) -> ModelEntry {
    ModelEntry {
        id: id.to_string(),
        graph: format!("{id}.json").into(),
        weights: format!("{id}.rfwb").into(),
    }
}

pub fn reference_bitflip_config() -> CampaignConfig {
    CampaignConfig {
        master_seed: 2024,
        threshold: DEFAULT_THRESHOLD,
        models: vec![model_entry("unet_lite")],
        dataset: DatasetConfig::Synthetic {
            count: 8,
            size: 64,
            seed: 1,
        },
        bitflip: Some(BitflipAxes {
            classes: FieldClass::ALL.to_vec(),
            layers: LayerSelection::default(),
            repeats: 50,
        }),
        disturb: None,
    }
}

pub fn reference_disturb_config() -> CampaignConfig {
    let sweep = |kind, levels: &[f64], length| Sweep {
        kind,
        levels: levels.to_vec(),
        length,
    };
    CampaignConfig {
        master_seed: 2024,
        threshold: DEFAULT_THRESHOLD,
        models: vec![model_entry("threshold_net"), model_entry("unet_lite")],
        dataset: DatasetConfig::Synthetic {
            count: 50,
            size: 64,
            seed: 1,
        },
        bitflip: None,
        disturb: Some(DisturbAxes {
            sweeps: vec![
                sweep(DisturbanceKind::HotPixels, &HOT_LEVELS, None),
                sweep(DisturbanceKind::DarkCurrent, &DARK_LEVELS, None),
                sweep(DisturbanceKind::Streaks, &STREAK_LEVELS, Some(DEFAULT_STREAK_LENGTH)),
            ],
            repeats: 1,
            pattern_seed: None,
        }),
    }
}

fn text(s: String) -> Vec<u8> {
    let mut bytes = s.into_bytes();
    bytes.push(b'\n');
    bytes
}

/// Contents of the `assets/` directory, by file name.
pub fn shipped_assets() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("threshold_net.json", text(threshold_net_graph().to_json())),
        ("threshold_net.rfwb", write_rfwb(&threshold_net_bundle())),
        ("unet_lite.json", text(unet_lite_graph().to_json())),
        ("unet_lite.rfwb", write_rfwb(&unet_lite_bundle(UNET_LITE_SEED))),
        ("bitflip_reference.json", text(reference_bitflip_config().to_json())),
        ("disturb_reference.json", text(reference_disturb_config().to_json())),
    ]
}
