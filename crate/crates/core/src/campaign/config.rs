//! Campaign configuration file (JSON). Relative paths resolve against the
//! directory containing the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitflip::FieldClass;
use crate::disturbance::DisturbanceKind;
use crate::metrics::DEFAULT_THRESHOLD;

use super::CampaignError;

fn default_threshold() -> f32 {
    DEFAULT_THRESHOLD
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub master_seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f32,
    pub models: Vec<ModelEntry>,
    pub dataset: DatasetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bitflip: Option<BitflipAxes>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturb: Option<DisturbAxes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub id: String,
    pub graph: PathBuf,
    pub weights: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic { count: usize, size: usize, seed: u64 },
    Manifest(Vec<ManifestEntry>),
    ManifestFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSelection {
    All(AllLayers),
    List(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllLayers {
    All,
}

impl Default for LayerSelection {
    fn default() -> Self {
        LayerSelection::All(AllLayers::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitflipAxes {
    #[serde(with = "class_names")]
    pub classes: Vec<FieldClass>,
    #[serde(default)]
    pub layers: LayerSelection,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbAxes {
    pub sweeps: Vec<Sweep>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Seed of the dark-current fixed pattern; derived from the master seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(with = "kind_name")]
    pub kind: DisturbanceKind,
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
}

pub const DEFAULT_STREAK_LENGTH: usize = 12;

impl Sweep {
    pub fn streak_length(&self) -> usize {
        self.length.unwrap_or(DEFAULT_STREAK_LENGTH)
    }
}

mod class_names {
    use super::FieldClass;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[FieldClass], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| c.name()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<FieldClass>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

mod kind_name {
    use super::DisturbanceKind;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DisturbanceKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DisturbanceKind, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CampaignError> {
        let text = std::fs::read_to_string(path).map_err(|source| CampaignError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn check(&self) -> Result<(), CampaignError> {
        let bad = |msg: String| Err(CampaignError::Config(msg));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        match &self.dataset {
            DatasetConfig::Synthetic { count: 0, .. } => return bad("dataset is empty".into()),
            DatasetConfig::Manifest(entries) if entries.is_empty() => {
                return bad("dataset is empty".into())
            }
            _ => {}
        }
        if let Some(b) = &self.bitflip {
            if b.repeats == 0 {
                return bad("bitflip.repeats must be at least 1".into());
            }
            if b.classes.is_empty() {
                return bad("bitflip.classes must not be empty".into());
            }
        }
        if let Some(d) = &self.disturb {
            if d.repeats == 0 {
                return bad("disturb.repeats must be at least 1".into());
            }
            for sweep in &d.sweeps {
                if sweep.levels.is_empty() {
                    return bad(format!("{} sweep has no levels", sweep.kind));
                }
                if sweep.levels.windows(2).any(|p| p[0] >= p[1]) {
                    return bad(format!("{} levels must be strictly increasing", sweep.kind));
                }
                if sweep.streak_length() == 0 {
                    return bad("streak length must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "master_seed": 7,
        "models": [{"id": "m", "graph": "g.json", "weights": "w.rfwb"}],
        "dataset": {"synthetic": {"count": 2, "size": 16, "seed": 1}},
        "bitflip": {"classes": ["exp", "sign"], "layers": "all", "repeats": 3},
        "disturb": {"sweeps": [{"kind": "streak", "levels": [0, 2], "length": 4}]}
    }"#;

    #[test]
    fn parses_sample() {
        let c = CampaignConfig::from_json(SAMPLE).unwrap();
        assert_eq!(c.threshold, 0.5);
        let b = c.bitflip.as_ref().unwrap();
        assert_eq!(b.classes, vec![FieldClass::Exponent, FieldClass::Sign]);
        assert_eq!(b.layers, LayerSelection::default());
        let d = c.disturb.as_ref().unwrap();
        assert_eq!(d.repeats, 1);
        assert_eq!(d.sweeps[0].streak_length(), 4);
        assert_eq!(CampaignConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn explicit_layer_list_and_manifest() {
        let text = SAMPLE
            .replace(r#""layers": "all""#, r#""layers": [0, 4]"#)
            .replace(
                r#"{"synthetic": {"count": 2, "size": 16, "seed": 1}}"#,
                r#"{"manifest": [{"image": "a.rimg", "mask": "a_mask.rimg"}]}"#,
            );
        let c = CampaignConfig::from_json(&text).unwrap();
        assert_eq!(c.bitflip.unwrap().layers, LayerSelection::List(vec![0, 4]));
        assert!(matches!(c.dataset, DatasetConfig::Manifest(ref m) if m.len() == 1));
    }

    #[test]
    fn rejects_invalid_axes() {
        for (from, to) in [
            (r#""repeats": 3"#, r#""repeats": 0"#),
            (r#""levels": [0, 2]"#, r#""levels": [2, 2]"#),
            (r#""levels": [0, 2]"#, r#""levels": [2, 0]"#),
            (r#""count": 2"#, r#""count": 0"#),
            (r#"["exp", "sign"]"#, r#"["exp", "bogus"]"#),
            (r#""kind": "streak""#, r#""kind": "blur""#),
        ] {
            let text = SAMPLE.replace(from, to);
            assert!(CampaignConfig::from_json(&text).is_err(), "{to}");
        }
    }
}
