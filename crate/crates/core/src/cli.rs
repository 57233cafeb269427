//! Command-line driver. Exit codes: 0 success, 2 bad input or config,
//! 3 infeasible simulated layout, 4 no detections, 5 disconnected sensors,
//! 6 solver failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::io::config::ConfigFile;
use crate::io::dataset::{read_dataset, write_dataset};
use crate::io::detections::{read_detections, write_detections};
use crate::io::report::write_report;
use crate::io::{path_string, write_json, IoError, RunManifest};
use crate::pipeline::{self, PipelineError};
use crate::sim::ground_truth;

#[derive(Debug, Parser)]
#[command(name = "extcal", version, about = "Target-based extrinsic calibration of LiDAR and camera rigs")]
pub struct Cli {
    /// Print a machine-readable summary on standard output.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic collection: clouds, corner detections, ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Detect the target in every recording of a collection.
    Detect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Detection file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for all sensor poses and write the report.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        detections: PathBuf,
        /// Output directory for report.json, report.txt and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Reference sensor, by id or report name (S1, S2, ...).
        #[arg(long)]
        reference: Option<String>,
        /// Reject unknown fields in the detection file.
        #[arg(long)]
        strict_schema: bool,
        /// Also run the loop check over independently estimated pair transforms.
        #[arg(long)]
        pairwise_mode: bool,
    },
    /// Write the built-in configuration.
    DefaultConfig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile, PipelineError> {
    match path {
        Some(p) => Ok(ConfigFile::load(p)?),
        None => Ok(ConfigFile::default_rig()),
    }
}

fn emit(json_mode: bool, summary: serde_json::Value, text: &str) {
    if json_mode {
        println!("{summary}");
    } else {
        print!("{text}");
    }
}

pub fn cmd_simulate(config: Option<&Path>, out: &Path, seed: u64, json_mode: bool) -> Result<(), PipelineError> {
    let cfg = load_config(config)?;
    let (scene, data) = pipeline::simulate(&cfg, seed)?;
    let gt = ground_truth(&scene);
    let files = write_dataset(out, &data, Some(&gt))?;
    let mut m = RunManifest::new("simulate", &cfg);
    m.seed = Some(seed);
    m.inputs = config.map(path_string).into_iter().collect();
    m.outputs = files.clone();
    write_json(&out.join("manifest.json"), &m)?;
    emit(
        json_mode,
        json!({"command": "simulate", "sequences": data.len(), "files": files.len(), "out": path_string(out)}),
        &format!("wrote {} sequences ({} files) to {}\n", data.len(), files.len(), out.display()),
    );
    Ok(())
}

pub fn detection_manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn cmd_detect(config: Option<&Path>, data_dir: &Path, out: &Path, json_mode: bool) -> Result<(), PipelineError> {
    let cfg = load_config(config)?;
    let data = read_dataset(data_dir, &cfg)?;
    let (records, failures) = pipeline::detect(&cfg, &data);
    if records.is_empty() {
        return Err(PipelineError::NoDetections);
    }
    write_detections(out, &records)?;
    let mut m = RunManifest::new("detect", &cfg);
    m.inputs = config.map(path_string).into_iter().chain([path_string(data_dir)]).collect();
    m.outputs = vec![path_string(out)];
    m.warnings = failures.len();
    m.notes = failures.iter().map(|f| format!("sequence {} {}: {}", f.sequence, f.sensor, f.message)).collect();
    write_json(&detection_manifest_path(out), &m)?;
    emit(
        json_mode,
        json!({"command": "detect", "sequences": data.len(), "detections": records.len(), "failures": failures.len()}),
        &format!("{} detections over {} sequences, {} failures\n", records.len(), data.len(), failures.len()),
    );
    Ok(())
}

pub fn cmd_calibrate(config: Option<&Path>, detections: &Path, out: &Path, reference: Option<&str>, strict: bool, pairwise: bool, json_mode: bool) -> Result<(), PipelineError> {
    let cfg = load_config(config)?;
    let records = read_detections(detections, strict)?;
    let reference = match reference {
        Some(r) => pipeline::resolve_sensor(&cfg, r).ok_or_else(|| IoError::Config(format!("unknown reference sensor {r}")))?,
        None => cfg.reference_id(),
    };
    let cal = pipeline::calibrate(&cfg, &records, &reference, pairwise)?;
    let report_path = out.join("report.json");
    write_report(&cal.report, &report_path)?;
    let mut m = RunManifest::new("calibrate", &cfg);
    m.inputs = config.map(path_string).into_iter().chain([path_string(detections)]).collect();
    m.outputs = vec![path_string(&report_path), path_string(&report_path.with_extension("txt"))];
    m.warnings = cal.report.warnings.len();
    m.notes = vec![format!("reference {reference}")];
    write_json(&out.join("manifest.json"), &m)?;
    let consistency: Vec<_> = cal.report.consistency.iter().map(|c| json!({"mode": c.mode, "chain": c.deviation.chain, "rotation_deg": c.deviation.rotation_deg, "translation_m": c.deviation.translation_m})).collect();
    emit(
        json_mode,
        json!({"command": "calibrate", "reference": reference, "final_cost": cal.result.final_cost, "iterations": cal.result.iterations, "consistency": consistency}),
        &cal.report.to_text(),
    );
    Ok(())
}

pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate { config, out, seed } => cmd_simulate(config.as_deref(), out, *seed, cli.json),
        Command::Detect { config, data, out } => cmd_detect(config.as_deref(), data, out, cli.json),
        Command::Calibrate { config, detections, out, reference, strict_schema, pairwise_mode } => {
            cmd_calibrate(config.as_deref(), detections, out, reference.as_deref(), *strict_schema, *pairwise_mode, cli.json)
        }
        Command::DefaultConfig { out } => write_json(out, &ConfigFile::default_rig()).map_err(PipelineError::from),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
