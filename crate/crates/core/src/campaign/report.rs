//! Result rows, their CSV form, and the aggregated plot-data JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::bitflip::{FaultRecord, FieldClass};
use crate::disturbance::DisturbanceKind;
use crate::metrics::{SegMetrics, Summary};

use super::CampaignError;

pub const CSV_HEADER: [&str; 16] = [
    "model_id",
    "mode",
    "layer_index",
    "layer_name",
    "fault_class",
    "kind",
    "level",
    "trial",
    "flat_index",
    "bit_index",
    "old_bits",
    "new_bits",
    "acc",
    "prec",
    "rec",
    "nan_pixels",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    Baseline,
    Bitflip,
    Disturb,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Bitflip => "bitflip",
            Mode::Disturb => "disturb",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "bitflip" => Ok(Mode::Bitflip),
            "disturb" => Ok(Mode::Disturb),
            other => Err(CampaignError::Csv(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub flat_index: usize,
    pub bit_index: u32,
    pub old_bits: u32,
    pub new_bits: u32,
}

impl From<&FaultRecord> for Provenance {
    fn from(r: &FaultRecord) -> Self {
        Self {
            flat_index: r.spec.flat_index,
            bit_index: r.spec.bit_index,
            old_bits: r.old_bits,
            new_bits: r.new_bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model_id: String,
    pub mode: Mode,
    pub layer_index: Option<usize>,
    pub layer_name: Option<String>,
    pub fault_class: Option<FieldClass>,
    pub kind: Option<DisturbanceKind>,
    pub level: Option<f64>,
    pub trial: Option<u64>,
    pub fault: Option<Provenance>,
    pub metrics: SegMetrics,
}

impl ResultRow {
    pub fn baseline(model_id: &str, metrics: SegMetrics) -> Self {
        Self {
            model_id: model_id.to_string(),
            mode: Mode::Baseline,
            layer_index: None,
            layer_name: None,
            fault_class: None,
            kind: None,
            level: None,
            trial: None,
            fault: None,
            metrics,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.mode == Mode::Baseline
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn record(row: &ResultRow) -> [String; 16] {
    let f = row.fault.as_ref();
    [
        row.model_id.clone(),
        row.mode.to_string(),
        opt(row.layer_index),
        row.layer_name.clone().unwrap_or_default(),
        opt(row.fault_class),
        opt(row.kind),
        opt(row.level),
        opt(row.trial),
        opt(f.map(|p| p.flat_index)),
        opt(f.map(|p| p.bit_index)),
        f.map(|p| format!("{:08x}", p.old_bits)).unwrap_or_default(),
        f.map(|p| format!("{:08x}", p.new_bits)).unwrap_or_default(),
        format!("{:.6}", row.metrics.accuracy),
        format!("{:.6}", row.metrics.precision),
        format!("{:.6}", row.metrics.recall),
        row.metrics.nan_pixels.to_string(),
    ]
}

pub fn emit_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in rows {
        w.write_record(record(row)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<T>, CampaignError> {
    match rec.get(i).unwrap_or("") {
        "" => Ok(None),
        s => s.parse().map(Some).map_err(|_| {
            CampaignError::Csv(format!("line {line}: bad {} value {s:?}", CSV_HEADER[i]))
        }),
    }
}

fn hex(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<u32>, CampaignError> {
    match rec.get(i).unwrap_or("") {
        "" => Ok(None),
        s => u32::from_str_radix(s, 16).map(Some).map_err(|_| {
            CampaignError::Csv(format!("line {line}: bad {} value {s:?}", CSV_HEADER[i]))
        }),
    }
}

/// Parses CSV produced by [`emit_csv`]. Metrics carry the six-decimal rounding of the file.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<ResultRow>, CampaignError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| CampaignError::Csv(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(CampaignError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CampaignError::Csv(e.to_string()))?;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| CampaignError::Csv(format!("line {line}: missing {name}")))
        };
        let mode: Mode = field(&rec, 1, line)?
            .ok_or_else(|| CampaignError::Csv(format!("line {line}: missing mode")))?;
        let fault = match (
            field::<usize>(&rec, 8, line)?,
            field::<u32>(&rec, 9, line)?,
            hex(&rec, 10, line)?,
            hex(&rec, 11, line)?,
        ) {
            (Some(flat_index), Some(bit_index), Some(old_bits), Some(new_bits)) => Some(Provenance {
                flat_index,
                bit_index,
                old_bits,
                new_bits,
            }),
            (None, None, None, None) => None,
            _ => return Err(CampaignError::Csv(format!("line {line}: partial fault provenance"))),
        };
        rows.push(ResultRow {
            model_id: rec.get(0).unwrap_or("").to_string(),
            mode,
            layer_index: field(&rec, 2, line)?,
            layer_name: field(&rec, 3, line)?,
            fault_class: field(&rec, 4, line)?,
            kind: field(&rec, 5, line)?,
            level: field(&rec, 6, line)?,
            trial: field(&rec, 7, line)?,
            fault,
            metrics: SegMetrics {
                accuracy: need(field(&rec, 12, line)?, "acc")?,
                precision: need(field(&rec, 13, line)?, "prec")?,
                recall: need(field(&rec, 14, line)?, "rec")?,
                nan_pixels: field(&rec, 15, line)?
                    .ok_or_else(|| CampaignError::Csv(format!("line {line}: missing nan_pixels")))?,
            },
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSeries {
    pub acc: Summary,
    pub prec: Summary,
    pub rec: Summary,
    pub nan_pixels: Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct BitflipPoint {
    pub fault_class: &'static str,
    pub layer_index: usize,
    pub layer_name: String,
    pub trials: usize,
    #[serde(flatten)]
    pub series: MetricSeries,
}

#[derive(Debug, Clone, Serialize)]
pub struct DisturbPoint {
    pub kind: &'static str,
    pub level: f64,
    pub trials: usize,
    #[serde(flatten)]
    pub series: MetricSeries,
}

/// Plot-ready aggregation: one point per (fault class, layer) or (kind, level),
/// pooling every model's trials; the baseline is the mean of those models'
/// baseline rows.
#[derive(Debug, Clone, Serialize)]
pub struct PlotData {
    pub bitflip: Vec<BitflipPoint>,
    pub disturb: Vec<DisturbPoint>,
}

fn series(rows: &[&ResultRow], baselines: &BTreeMap<&str, SegMetrics>) -> MetricSeries {
    let mut models: Vec<&str> = rows.iter().map(|r| r.model_id.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    let base: Vec<&SegMetrics> = models.iter().filter_map(|m| baselines.get(m)).collect();
    let base_mean = |f: fn(&SegMetrics) -> f64| {
        if base.is_empty() {
            f64::NAN
        } else {
            base.iter().map(|m| f(m)).sum::<f64>() / base.len() as f64
        }
    };
    let summary = |f: fn(&SegMetrics) -> f64| {
        let values: Vec<f64> = rows.iter().map(|r| f(&r.metrics)).collect();
        Summary::of(&values, base_mean(f))
    };
    MetricSeries {
        acc: summary(|m| m.accuracy),
        prec: summary(|m| m.precision),
        rec: summary(|m| m.recall),
        nan_pixels: summary(|m| m.nan_pixels as f64),
    }
}

pub fn plot_data(rows: &[ResultRow]) -> PlotData {
    let baselines: BTreeMap<&str, SegMetrics> = rows
        .iter()
        .filter(|r| r.is_baseline())
        .map(|r| (r.model_id.as_str(), r.metrics))
        .collect();

    let mut flips: BTreeMap<(FieldClass, usize), Vec<&ResultRow>> = BTreeMap::new();
    let mut sweeps: BTreeMap<(DisturbanceKind, u64), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        match row.mode {
            Mode::Bitflip => {
                if let (Some(class), Some(layer)) = (row.fault_class, row.layer_index) {
                    flips.entry((class, layer)).or_default().push(row);
                }
            }
            Mode::Disturb => {
                if let (Some(kind), Some(level)) = (row.kind, row.level) {
                    // Levels are non-negative, so their bit patterns sort numerically.
                    sweeps.entry((kind, level.to_bits())).or_default().push(row);
                }
            }
            Mode::Baseline => {}
        }
    }

    PlotData {
        bitflip: flips
            .into_iter()
            .map(|((class, layer_index), group)| BitflipPoint {
                fault_class: class.name(),
                layer_index,
                layer_name: group[0].layer_name.clone().unwrap_or_default(),
                trials: group.len(),
                series: series(&group, &baselines),
            })
            .collect(),
        disturb: sweeps
            .into_iter()
            .map(|((kind, level), group)| DisturbPoint {
                kind: kind.name(),
                level: f64::from_bits(level),
                trials: group.len(),
                series: series(&group, &baselines),
            })
            .collect(),
    }
}

pub fn emit_plotdata(rows: &[ResultRow]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&plot_data(rows)).expect("plot data serializes");
    out.push(b'\n');
    out
}
