//! The `radsim` command line. Exit codes: 0 ok, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::bitflip::{inject, sample_layer_fault, FieldClass};
use crate::campaign::{self, Campaign};
use crate::disturbance::{apply_disturbance, DisturbanceKind, DisturbanceSpec};
use crate::format;
use crate::graph::{forward, parse_graph, ModelGraph};
use crate::rng::RngState;
use crate::WeightBundle;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "radsim", version, about = "Bit-flip and sensor-disturbance fault simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, PartialEq)]
pub enum Command {
    /// Run a model on one image and write the prediction as RIMG.
    Infer {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flip one randomly chosen bit of one layer's parameters.
    Flip {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Graph layer index; must be a conv or transposed-conv layer.
        #[arg(long)]
        layer: usize,
        /// exp, man or sign.
        #[arg(long)]
        bit_class: FieldClass,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one sensor disturbance to an image.
    Disturb {
        #[arg(long)]
        image: PathBuf,
        /// hot, dark or streak.
        #[arg(long)]
        kind: DisturbanceKind,
        /// Pixel count (hot), offset magnitude (dark) or streak count (streak).
        #[arg(long)]
        level: f64,
        #[arg(long, default_value_t = campaign::config::DEFAULT_STREAK_LENGTH)]
        length: usize,
        /// Dark-current pattern seed; defaults to --seed.
        #[arg(long)]
        pattern_seed: Option<u64>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bit-flip campaign to CSV.
    CampaignBitflip {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Disturbance campaign to CSV.
    CampaignDisturb {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Aggregate a results CSV into plot data JSON.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic scenes, masks and a manifest.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Writes through a temporary file in the destination directory, so readers
/// never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_graph(path: &Path) -> Result<ModelGraph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_graph(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_weights(path: &Path) -> Result<WeightBundle> {
    format::read_rfwb(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_image(path: &Path) -> Result<crate::Tensor> {
    format::read_image(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct ManifestLine {
    image: String,
    mask: String,
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Infer {
            graph,
            weights,
            image,
            out,
        } => {
            let g = load_graph(&graph)?;
            let bundle = load_weights(&weights)?;
            g.validate(&bundle)?;
            let pred = forward(&g, &bundle, &load_image(&image)?)?;
            write_atomic(&out, &format::write_rimg(&pred)?)
        }
        Command::Flip {
            weights,
            graph,
            layer,
            bit_class,
            seed,
            out,
        } => {
            let g = load_graph(&graph)?;
            let bundle = load_weights(&weights)?;
            g.validate(&bundle)?;
            let spec = sample_layer_fault(&g, &bundle, layer, bit_class, &mut RngState::new(seed))?;
            let (faulted, record) = inject(&bundle, &spec)?;
            write_atomic(&out, &format::write_rfwb(&faulted))?;
            println!(
                "{}[{}] bit {} ({}): {:08x} -> {:08x}",
                spec.tensor_name, spec.flat_index, spec.bit_index, spec.class, record.old_bits, record.new_bits
            );
            Ok(())
        }
        Command::Disturb {
            image,
            kind,
            level,
            length,
            pattern_seed,
            seed,
            out,
        } => {
            let spec = DisturbanceSpec::from_level(kind, level, length, pattern_seed.unwrap_or(seed))?;
            let disturbed = apply_disturbance(&load_image(&image)?, &spec, &mut RngState::new(seed))?;
            write_atomic(&out, &format::write_rimg(&disturbed)?)
        }
        Command::CampaignBitflip { config, out, workers } => {
            let c = Campaign::load(&config)?;
            let rows = campaign::run_bitflip_campaign(&c, workers)?;
            info!("{} rows", rows.len());
            write_atomic(&out, &campaign::emit_csv(&rows))
        }
        Command::CampaignDisturb { config, out, workers } => {
            let c = Campaign::load(&config)?;
            let rows = campaign::run_disturbance_campaign(&c, workers)?;
            info!("{} rows", rows.len());
            write_atomic(&out, &campaign::emit_csv(&rows))
        }
        Command::Report { input, out } => {
            let rows = campaign::parse_csv(&read(&input)?).with_context(|| format!("parsing {}", input.display()))?;
            write_atomic(&out, &campaign::emit_plotdata(&rows))
        }
        Command::Synth {
            seed,
            count,
            size,
            out_dir,
        } => {
            let scenes = campaign::synthetic_scenes(count, size, seed)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut manifest = Vec::with_capacity(count);
            for (i, scene) in scenes.iter().enumerate() {
                let line = ManifestLine {
                    image: format!("scene_{i:03}.rimg"),
                    mask: format!("mask_{i:03}.rimg"),
                };
                write_atomic(&out_dir.join(&line.image), &format::write_rimg(&scene.image)?)?;
                write_atomic(&out_dir.join(&line.mask), &format::write_rimg(&scene.mask.to_tensor())?)?;
                manifest.push(line);
            }
            let mut json = serde_json::to_vec_pretty(&manifest)?;
            json.push(b'\n');
            write_atomic(&out_dir.join("manifest.json"), &json)
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("RADSIM_LOG", "error");
    // A second init (tests calling `run` repeatedly) is harmless.
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
