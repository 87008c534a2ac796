//! JSON run reports.
//!
//! The `canonical` section depends only on config, batch and seed, so two
//! runs with the same inputs write it byte for byte identically. Timestamps,
//! wall time and thread count go in `meta`.

use std::fs;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::arch::{build_network, CellConfig};
use crate::batch::Batch;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fitness::FitnessScore;
use crate::imc::CostReport;
use crate::search::{Margins, SearchResult, TraceEntry};

pub const SCHEMA: &str = "snn-hwnas-report";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Search,
    Score,
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBeta {
    pub layer: String,
    pub neurons: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub samples: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl From<&Batch> for BatchShape {
    fn from(b: &Batch) -> Self {
        Self {
            samples: b.samples,
            channels: b.channels,
            height: b.height,
            width: b.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Canonical {
    pub command: Command,
    pub cell_a: CellConfig,
    pub cell_b: CellConfig,
    /// `null` for a singular kernel; absent for `cost`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<FitnessScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase0_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluated_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible_count: Option<usize>,
    pub satisfies_constraints: bool,
    pub margins: Margins,
    pub costs: CostReport,
    pub betas: Vec<LayerBeta>,
    pub batch: BatchShape,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub tool_version: String,
    pub generated_unix_s: u64,
    pub elapsed_s: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub schema_version: u32,
    pub canonical: Canonical,
    pub meta: Meta,
}

fn layer_betas(config: &RunConfig, batch: &Batch, cell_a: CellConfig, cell_b: CellConfig) -> Result<Vec<LayerBeta>> {
    let arch = build_network(
        cell_a,
        cell_b,
        batch.input_shape()?,
        config.base_channels,
        config.num_classes,
    )?;
    Ok(arch
        .lif_layers()
        .map(|(_, l)| LayerBeta {
            layer: l.name(),
            neurons: l.out_neurons(),
            beta: config.fitness.beta.resolve(batch.samples, l.out_neurons()),
        })
        .collect())
}

fn meta(elapsed: Duration, workers: usize) -> Meta {
    Meta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        generated_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        elapsed_s: elapsed.as_secs_f64(),
        workers,
    }
}

impl Report {
    fn new(canonical: Canonical, elapsed: Duration, workers: usize) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            schema_version: SCHEMA_VERSION,
            canonical,
            meta: meta(elapsed, workers),
        }
    }

    pub fn for_search(result: &SearchResult, config: &RunConfig, batch: &Batch, elapsed: Duration) -> Result<Self> {
        let canonical = Canonical {
            command: Command::Search,
            cell_a: result.cell_a,
            cell_b: result.cell_b,
            score: Some(result.score),
            phase0_score: Some(result.phase0_score),
            evaluated_count: Some(result.evaluated_count),
            feasible_count: Some(result.feasible_count),
            satisfies_constraints: config.constraints.satisfied_by(&result.report),
            margins: config.constraints.margins(&result.report),
            costs: result.report.clone(),
            betas: layer_betas(config, batch, result.cell_a, result.cell_b)?,
            batch: batch.into(),
            config: config.clone(),
            trace: result.trace.clone(),
        };
        Ok(Self::new(canonical, elapsed, config.workers))
    }

    /// Report for a single candidate; `score` is `None` for cost-only runs.
    pub fn for_candidate(
        cell_a: CellConfig,
        cell_b: CellConfig,
        score: Option<FitnessScore>,
        costs: CostReport,
        config: &RunConfig,
        batch: &Batch,
        elapsed: Duration,
    ) -> Result<Self> {
        let canonical = Canonical {
            command: if score.is_some() { Command::Score } else { Command::Cost },
            cell_a,
            cell_b,
            score,
            phase0_score: None,
            evaluated_count: None,
            feasible_count: None,
            satisfies_constraints: config.constraints.satisfied_by(&costs),
            margins: config.constraints.margins(&costs),
            costs,
            betas: layer_betas(config, batch, cell_a, cell_b)?,
            batch: batch.into(),
            config: config.clone(),
            trace: None,
        };
        Ok(Self::new(canonical, elapsed, config.workers))
    }

    pub fn canonical_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.canonical).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

pub fn emit_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = report.to_json()?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing report {}", path.display()), e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading report {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
