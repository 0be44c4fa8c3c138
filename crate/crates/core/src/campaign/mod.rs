//! Fault campaigns: bit-flip sweeps over model parameters and disturbance
//! sweeps over input images.
//!
//! Every trial draws from its own RNG seeded by `derive_seed` over the trial's
//! axis indices, and rows are collected in axis order, so results do not depend
//! on how many workers run them.

pub mod config;
pub mod report;
pub mod synth;

use std::path::{Path, PathBuf};

use log::{debug, info};
use rayon::prelude::*;
use thiserror::Error;

use crate::bitflip::{inject, sample_layer_fault, FaultError, FaultSpec, FieldClass};
use crate::bundle::WeightBundle;
use crate::disturbance::{apply_disturbance, DisturbanceError, DisturbanceKind, DisturbanceSpec};
use crate::format::{self, FormatError};
use crate::graph::{forward, forward_resume, forward_trace, parse_graph, GraphError, ModelGraph, Trace};
use crate::metrics::{macro_average, score, Mask, MetricsError, SegMetrics};
use crate::rng::{derive_seed, RngState};
use crate::tensor::Tensor;

pub use config::{CampaignConfig, DatasetConfig, LayerSelection, ManifestEntry};
pub use report::{emit_csv, emit_plotdata, parse_csv, Mode, Provenance, ResultRow};
pub use synth::{gen_synthetic_scene, synthetic_scenes, Scene, SceneSizeError};

/// Above this many bytes of cached activations, faulted passes recompute from the input.
const TRACE_BUDGET: usize = 512 << 20;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid campaign config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("model {model:?}: {source}")]
    Graph {
        model: String,
        #[source]
        source: GraphError,
    },
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Disturbance(#[from] DisturbanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Scene(#[from] SceneSizeError),
    #[error("results CSV: {0}")]
    Csv(String),
    #[error("worker pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub id: String,
    pub graph: ModelGraph,
    pub bundle: WeightBundle,
}

impl LoadedModel {
    pub fn new(id: impl Into<String>, graph: ModelGraph, bundle: WeightBundle) -> Result<Self, CampaignError> {
        let id = id.into();
        graph.validate(&bundle).map_err(|source| CampaignError::Graph {
            model: id.clone(),
            source,
        })?;
        Ok(Self { id, graph, bundle })
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub mask: Mask,
}

impl From<Scene> for Sample {
    fn from(s: Scene) -> Self {
        Self {
            image: s.image,
            mask: s.mask,
        }
    }
}

/// A campaign with every model and robustness image loaded into memory.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub master_seed: u64,
    pub threshold: f32,
    pub models: Vec<LoadedModel>,
    pub samples: Vec<Sample>,
    pub bitflip: Option<config::BitflipAxes>,
    pub disturb: Option<config::DisturbAxes>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CampaignError> {
    std::fs::read(path).map_err(|source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, CampaignError> {
    std::fs::read_to_string(path).map_err(|source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(id: &str, graph_path: &Path, weights_path: &Path) -> Result<LoadedModel, CampaignError> {
    let graph = parse_graph(&read_text(graph_path)?).map_err(|source| CampaignError::Graph {
        model: id.to_string(),
        source,
    })?;
    let bundle = format::read_rfwb(&read_bytes(weights_path)?).map_err(|source| CampaignError::Format {
        path: weights_path.to_path_buf(),
        source,
    })?;
    LoadedModel::new(id, graph, bundle)
}

fn read_image_file(path: &Path) -> Result<Tensor, CampaignError> {
    format::read_image(&read_bytes(path)?).map_err(|source| CampaignError::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_manifest(entries: &[ManifestEntry], base: &Path) -> Result<Vec<Sample>, CampaignError> {
    entries
        .iter()
        .map(|e| {
            let image = read_image_file(&base.join(&e.image))?;
            let mask_path = base.join(&e.mask);
            let mask = Mask::from_tensor(&read_image_file(&mask_path)?)?;
            let (_, h, w) = image.chw().map_err(|e| CampaignError::Config(e.to_string()))?;
            if (mask.height(), mask.width()) != (h, w) {
                return Err(CampaignError::Config(format!(
                    "{}: mask is {}x{}, image is {h}x{w}",
                    mask_path.display(),
                    mask.height(),
                    mask.width()
                )));
            }
            Ok(Sample { image, mask })
        })
        .collect()
}

impl Campaign {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let (config, base) = CampaignConfig::load(path)?;
        Self::from_config(config, &base)
    }

    /// Loads models and images, resolving relative paths against `base`.
    pub fn from_config(config: CampaignConfig, base: &Path) -> Result<Self, CampaignError> {
        let models = config
            .models
            .iter()
            .map(|m| load_model(&m.id, &base.join(&m.graph), &base.join(&m.weights)))
            .collect::<Result<Vec<_>, _>>()?;
        let samples = match &config.dataset {
            DatasetConfig::Synthetic { count, size, seed } => synthetic_scenes(*count, *size, *seed)?
                .into_iter()
                .map(Sample::from)
                .collect(),
            DatasetConfig::Manifest(entries) => load_manifest(entries, base)?,
            DatasetConfig::ManifestFile(file) => {
                let path = base.join(file);
                let entries: Vec<ManifestEntry> = serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
                if entries.is_empty() {
                    return Err(CampaignError::Config("dataset is empty".into()));
                }
                load_manifest(&entries, path.parent().unwrap_or(base))?
            }
        };
        let campaign = Self {
            master_seed: config.master_seed,
            threshold: config.threshold,
            models,
            samples,
            bitflip: config.bitflip,
            disturb: config.disturb,
        };
        campaign.check_inputs()?;
        Ok(campaign)
    }

    fn check_inputs(&self) -> Result<(), CampaignError> {
        for model in &self.models {
            for sample in &self.samples {
                let (c, _, _) = sample
                    .image
                    .chw()
                    .map_err(|e| CampaignError::Config(e.to_string()))?;
                if c != model.graph.input_channels() {
                    return Err(CampaignError::Graph {
                        model: model.id.clone(),
                        source: GraphError::InputChannels {
                            expected: model.graph.input_channels(),
                            found: c,
                        },
                    });
                }
            }
        }
        Ok(())
    }

    /// Macro-averaged metrics of `bundle` over the robustness set.
    pub fn evaluate(&self, model: usize, bundle: &WeightBundle) -> Result<SegMetrics, CampaignError> {
        let m = &self.models[model];
        let per_image = self
            .samples
            .iter()
            .map(|s| {
                let pred = forward(&m.graph, bundle, &s.image).map_err(|e| graph_err(m, e))?;
                Ok(score(&pred, &s.mask, self.threshold)?)
            })
            .collect::<Result<Vec<_>, CampaignError>>()?;
        Ok(macro_average(&per_image)?)
    }

    /// Re-runs one fault from scratch: flip, full forward passes, score.
    pub fn evaluate_fault(&self, model: usize, spec: &FaultSpec) -> Result<SegMetrics, CampaignError> {
        let (faulted, _) = inject(&self.models[model].bundle, spec)?;
        self.evaluate(model, &faulted)
    }

    fn selected_layers(&self, model: &LoadedModel, selection: &LayerSelection) -> Result<Vec<usize>, CampaignError> {
        let available = model.graph.parameterized_layers();
        match selection {
            LayerSelection::All(_) => Ok(available),
            LayerSelection::List(list) => {
                for &layer in list {
                    if !available.contains(&layer) {
                        return Err(CampaignError::Config(format!(
                            "model {:?}: layer {layer} has no parameters",
                            model.id
                        )));
                    }
                }
                let mut layers = list.clone();
                layers.sort_unstable();
                layers.dedup();
                Ok(layers)
            }
        }
    }
}

fn graph_err(model: &LoadedModel, source: GraphError) -> CampaignError {
    CampaignError::Graph {
        model: model.id.clone(),
        source,
    }
}

/// Runs `f` on a pool of `workers` threads; 0 uses rayon's default.
fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CampaignError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CampaignError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

struct FlipJob {
    layer: usize,
    class: FieldClass,
    trial: u64,
}

pub fn run_bitflip_campaign(campaign: &Campaign, workers: usize) -> Result<Vec<ResultRow>, CampaignError> {
    let axes = campaign
        .bitflip
        .as_ref()
        .ok_or_else(|| CampaignError::Config("no bitflip section".into()))?;
    with_pool(workers, || {
        let mut rows = Vec::new();
        for (mi, model) in campaign.models.iter().enumerate() {
            let layers = campaign.selected_layers(model, &axes.layers)?;
            let traces = campaign
                .samples
                .par_iter()
                .map(|s| forward_trace(&model.graph, &model.bundle, &s.image).map_err(|e| graph_err(model, e)))
                .collect::<Result<Vec<Trace>, _>>()?;
            let per_image = traces
                .iter()
                .zip(&campaign.samples)
                .map(|(t, s)| score(t.output(), &s.mask, campaign.threshold))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(ResultRow::baseline(&model.id, macro_average(&per_image)?));
            let cached = traces.iter().map(Trace::byte_size).sum::<usize>() <= TRACE_BUDGET;
            let traces = if cached { Some(traces) } else { None };

            let jobs: Vec<FlipJob> = layers
                .iter()
                .flat_map(|&layer| {
                    axes.classes.iter().flat_map(move |&class| {
                        (0..axes.repeats as u64).map(move |trial| FlipJob { layer, class, trial })
                    })
                })
                .collect();
            info!("model {}: {} bit-flip trials over {} layers", model.id, jobs.len(), layers.len());

            let fault_rows = jobs
                .par_iter()
                .map(|job| {
                    let seed = derive_seed(
                        campaign.master_seed,
                        &[mi as u64, job.layer as u64, job.class.code(), job.trial],
                    );
                    let mut rng = RngState::new(seed);
                    let spec = sample_layer_fault(&model.graph, &model.bundle, job.layer, job.class, &mut rng)?;
                    let (faulted, record) = inject(&model.bundle, &spec)?;
                    let per_image = campaign
                        .samples
                        .iter()
                        .enumerate()
                        .map(|(i, s)| {
                            let pred = match &traces {
                                Some(t) => forward_resume(&model.graph, &faulted, &t[i], job.layer),
                                None => forward(&model.graph, &faulted, &s.image),
                            }
                            .map_err(|e| graph_err(model, e))?;
                            Ok(score(&pred, &s.mask, campaign.threshold)?)
                        })
                        .collect::<Result<Vec<_>, CampaignError>>()?;
                    debug!(
                        "{} layer {} {} trial {}: {}[{}] bit {}",
                        model.id, job.layer, job.class, job.trial, spec.tensor_name, spec.flat_index, spec.bit_index
                    );
                    Ok(ResultRow {
                        model_id: model.id.clone(),
                        mode: Mode::Bitflip,
                        layer_index: Some(job.layer),
                        layer_name: Some(model.graph.layers()[job.layer].name.clone()),
                        fault_class: Some(job.class),
                        kind: None,
                        level: None,
                        trial: Some(job.trial),
                        fault: Some(Provenance::from(&record)),
                        metrics: macro_average(&per_image)?,
                    })
                })
                .collect::<Result<Vec<_>, CampaignError>>()?;
            rows.extend(fault_rows);
        }
        Ok(rows)
    })?
}

/// The fixed dark-current pattern seed used for `model` when the config gives none.
pub fn default_pattern_seed(master_seed: u64, model: usize) -> u64 {
    derive_seed(master_seed, &[model as u64, DisturbanceKind::DarkCurrent.code()])
}

struct DisturbJob {
    kind: DisturbanceKind,
    level_index: usize,
    level: f64,
    spec: DisturbanceSpec,
    trial: u64,
}

/// One row per (model, kind, level, trial); trial `r * n + i` is repeat `r` of image `i`.
pub fn run_disturbance_campaign(campaign: &Campaign, workers: usize) -> Result<Vec<ResultRow>, CampaignError> {
    let axes = campaign
        .disturb
        .as_ref()
        .ok_or_else(|| CampaignError::Config("no disturb section".into()))?;
    let n = campaign.samples.len();
    with_pool(workers, || {
        let mut rows = Vec::new();
        for (mi, model) in campaign.models.iter().enumerate() {
            let per_image = campaign
                .samples
                .par_iter()
                .map(|s| {
                    let pred = forward(&model.graph, &model.bundle, &s.image).map_err(|e| graph_err(model, e))?;
                    Ok(score(&pred, &s.mask, campaign.threshold)?)
                })
                .collect::<Result<Vec<_>, CampaignError>>()?;
            rows.push(ResultRow::baseline(&model.id, macro_average(&per_image)?));

            let pattern_seed = axes
                .pattern_seed
                .unwrap_or_else(|| default_pattern_seed(campaign.master_seed, mi));
            let mut jobs = Vec::new();
            for sweep in &axes.sweeps {
                for (level_index, &level) in sweep.levels.iter().enumerate() {
                    let spec = DisturbanceSpec::from_level(sweep.kind, level, sweep.streak_length(), pattern_seed)?;
                    jobs.extend((0..(axes.repeats * n) as u64).map(|trial| DisturbJob {
                        kind: sweep.kind,
                        level_index,
                        level,
                        spec,
                        trial,
                    }));
                }
            }
            info!("model {}: {} disturbance trials", model.id, jobs.len());

            let disturbed = jobs
                .par_iter()
                .map(|job| {
                    let seed = derive_seed(
                        campaign.master_seed,
                        &[mi as u64, job.kind.code(), job.level_index as u64, job.trial],
                    );
                    let sample = &campaign.samples[job.trial as usize % n];
                    let image = apply_disturbance(&sample.image, &job.spec, &mut RngState::new(seed))?;
                    let pred = forward(&model.graph, &model.bundle, &image).map_err(|e| graph_err(model, e))?;
                    Ok(ResultRow {
                        model_id: model.id.clone(),
                        mode: Mode::Disturb,
                        layer_index: None,
                        layer_name: None,
                        fault_class: None,
                        kind: Some(job.kind),
                        level: Some(job.level),
                        trial: Some(job.trial),
                        fault: None,
                        metrics: score(&pred, &sample.mask, campaign.threshold)?,
                    })
                })
                .collect::<Result<Vec<_>, CampaignError>>()?;
            rows.extend(disturbed);
        }
        Ok(rows)
    })?
}

#[cfg(test)]
mod tests {
    use super::config::{AllLayers, BitflipAxes, DisturbAxes, Sweep};
    use super::*;
    use crate::reference;

    fn chain_campaign(layers: usize, repeats: usize) -> Campaign {
        Campaign {
            master_seed: 42,
            threshold: 0.5,
            models: vec![LoadedModel::new(
                "chain",
                reference::conv_chain_graph(layers),
                reference::conv_chain_bundle(layers),
            )
            .unwrap()],
            samples: synthetic_scenes(3, 16, 9).unwrap().into_iter().map(Sample::from).collect(),
            bitflip: Some(BitflipAxes {
                classes: FieldClass::ALL.to_vec(),
                layers: LayerSelection::All(AllLayers::All),
                repeats,
            }),
            disturb: Some(DisturbAxes {
                sweeps: vec![Sweep {
                    kind: DisturbanceKind::HotPixels,
                    levels: vec![0.0, 4.0],
                    length: None,
                }],
                repeats: 2,
                pattern_seed: None,
            }),
        }
    }

    #[test]
    fn bitflip_row_count_and_order() {
        let rows = run_bitflip_campaign(&chain_campaign(2, 2), 1).unwrap();
        assert_eq!(rows.len(), 13);
        assert!(rows[0].is_baseline() && rows[0].fault.is_none());
        assert_eq!(rows[0].metrics.accuracy, 1.0);
        let axes: Vec<_> = rows[1..]
            .iter()
            .map(|r| (r.layer_index.unwrap(), r.fault_class.unwrap(), r.trial.unwrap()))
            .collect();
        let mut sorted = axes.clone();
        sorted.sort();
        assert_eq!(axes, sorted);
    }

    #[test]
    fn faulted_rows_rerun_standalone() {
        let campaign = chain_campaign(3, 3);
        let rows = run_bitflip_campaign(&campaign, 2).unwrap();
        let model = &campaign.models[0];
        for row in &rows[1..] {
            let (layer, class) = (row.layer_index.unwrap(), row.fault_class.unwrap());
            let seed = derive_seed(42, &[0, layer as u64, class.code(), row.trial.unwrap()]);
            let spec = sample_layer_fault(&model.graph, &model.bundle, layer, class, &mut RngState::new(seed)).unwrap();
            let (_, record) = inject(&model.bundle, &spec).unwrap();
            assert_eq!(Provenance::from(&record), row.fault.unwrap());
            assert_eq!(campaign.evaluate_fault(0, &spec).unwrap(), row.metrics);
        }
    }

    #[test]
    fn workers_do_not_change_rows() {
        let campaign = chain_campaign(4, 3);
        let a = run_bitflip_campaign(&campaign, 1).unwrap();
        let b = run_bitflip_campaign(&campaign, 3).unwrap();
        assert_eq!(emit_csv(&a), emit_csv(&b));
        let c = run_disturbance_campaign(&campaign, 1).unwrap();
        let d = run_disturbance_campaign(&campaign, 4).unwrap();
        assert_eq!(emit_csv(&c), emit_csv(&d));
    }

    #[test]
    fn disturbance_rows_and_level_zero() {
        let campaign = chain_campaign(1, 1);
        let rows = run_disturbance_campaign(&campaign, 1).unwrap();
        assert_eq!(rows.len(), 1 + 2 * 2 * 3);
        let clean: Vec<SegMetrics> = campaign
            .samples
            .iter()
            .map(|s| {
                let m = &campaign.models[0];
                score(&forward(&m.graph, &m.bundle, &s.image).unwrap(), &s.mask, 0.5).unwrap()
            })
            .collect();
        for row in rows[1..].iter().filter(|r| r.level == Some(0.0)) {
            assert_eq!(row.metrics, clean[row.trial.unwrap() as usize % 3]);
        }
    }

    #[test]
    fn explicit_layers_must_be_parameterized() {
        let mut campaign = chain_campaign(2, 1);
        campaign.bitflip.as_mut().unwrap().layers = LayerSelection::List(vec![2]);
        assert!(matches!(
            run_bitflip_campaign(&campaign, 1),
            Err(CampaignError::Config(_))
        ));
    }
}
