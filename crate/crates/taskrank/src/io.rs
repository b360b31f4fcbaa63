//! File formats: comparison files, dense score matrices and versioned JSON
//! artifacts.
//!
//! Score matrices are tab-separated text. The first line is `task` followed by
//! the model names; each further line is a task name followed by that task's
//! scores, written with Rust's shortest round-trip float formatting.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use taskrank_core::certify::CertificationReport;
use taskrank_core::refine::{JointConfig, JointFit, RefineDiagnostics};
use taskrank_core::{ComparisonDataset, DMatrix, FactoredScores, ScoreMatrix, TaskModelIndex};

use crate::error::{Error, Result};
use crate::ingest::{dataset_with_index, parse_votes, VoteFormat, Winner};
use crate::pipeline::Method;

/// Version written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes `dataset` in the vote-log schema: category = task name, winner
/// `model_a` or `model_b`.
pub fn write_dataset(path: &Path, dataset: &ComparisonDataset, format: VoteFormat) -> Result<()> {
    let idx = dataset.index();
    let rows = dataset.records().iter().map(|r| VoteRow {
        model_a: &idx.model_names()[r.model_a],
        model_b: &idx.model_names()[r.model_b],
        winner: if r.outcome { Winner::A.label() } else { Winner::B.label() },
        category: &idx.task_names()[r.task],
    });
    let mut out = create(path)?;
    let io_err = |e: std::io::Error| Error::io(path, e);
    match format {
        VoteFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for row in rows {
                w.serialize(row).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            }
            w.flush().map_err(io_err)?;
        }
        VoteFormat::Jsonl => {
            for row in rows {
                serde_json::to_writer(&mut out, &row).map_err(|e| Error::Data(e.to_string()))?;
                out.write_all(b"\n").map_err(io_err)?;
            }
        }
    }
    out.flush().map_err(io_err)
}

#[derive(Serialize)]
struct VoteRow<'a> {
    model_a: &'a str,
    model_b: &'a str,
    winner: &'a str,
    category: &'a str,
}

/// Reads a comparison file against a known index (categories are task names).
pub fn read_dataset(path: &Path, format: VoteFormat, index: Arc<TaskModelIndex>) -> Result<ComparisonDataset> {
    let parsed = parse_votes(path, format)?;
    dataset_with_index(&parsed.votes, index)
}

/// Reads a comparison file whose index is implied by the file itself: tasks
/// are the distinct categories and models the distinct model names, both in
/// sorted order.
pub fn read_dataset_inferred(path: &Path, format: VoteFormat) -> Result<ComparisonDataset> {
    let parsed = parse_votes(path, format)?;
    let tasks: BTreeSet<&str> = parsed.votes.iter().map(|v| v.category.as_str()).collect();
    let models: BTreeSet<&str> = parsed.votes.iter().flat_map(|v| [v.model_a.as_str(), v.model_b.as_str()]).collect();
    let index = TaskModelIndex::new(
        tasks.into_iter().map(str::to_string).collect(),
        models.into_iter().map(str::to_string).collect(),
    )?;
    dataset_with_index(&parsed.votes, Arc::new(index))
}

fn check_name(name: &str) -> Result<()> {
    if name.contains(['\t', '\n', '\r']) {
        return Err(Error::Data(format!("name {name:?} contains a tab or newline")));
    }
    Ok(())
}

pub fn write_scores(path: &Path, scores: &ScoreMatrix) -> Result<()> {
    let idx = scores.index();
    let mut out = create(path)?;
    let mut text = String::from("task");
    for m in idx.model_names() {
        check_name(m)?;
        text.push('\t');
        text.push_str(m);
    }
    text.push('\n');
    for (t, name) in idx.task_names().iter().enumerate() {
        check_name(name)?;
        text.push_str(name);
        for m in 0..idx.model_count() {
            text.push('\t');
            text.push_str(&scores.get(t, m).to_string());
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Data(format!("{}:{line}: {what}", path.display()));
    let mut lines = BufReader::new(file).lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(bad(1, "empty file")),
    };
    let mut cols = header.split('\t');
    if cols.next() != Some("task") {
        return Err(bad(1, "header must start with \"task\""));
    }
    let models: Vec<String> = cols.map(str::to_string).collect();
    let mut tasks = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        tasks.push(cols.next().unwrap_or_default().to_string());
        let row: Vec<f64> = cols
            .map(|c| c.trim().parse::<f64>().map_err(|_| bad(i + 1, &format!("bad number {c:?}"))))
            .collect::<Result<_>>()?;
        if row.len() != models.len() {
            return Err(bad(i + 1, &format!("expected {} scores, found {}", models.len(), row.len())));
        }
        values.extend(row);
    }
    let index = Arc::new(TaskModelIndex::new(tasks, models)?);
    let matrix = DMatrix::from_row_slice(index.task_count(), index.model_count(), &values);
    Ok(ScoreMatrix::new(index, matrix)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Data("ragged matrix in artifact".into()));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

/// Serialized result of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub method: Method,
    pub task_names: Vec<String>,
    pub model_names: Vec<String>,
    /// Final bounded, centered scores (rows are tasks).
    pub scores: Vec<Vec<f64>>,
    pub rank: Option<usize>,
    pub left: Option<Vec<Vec<f64>>>,
    pub right: Option<Vec<Vec<f64>>>,
    pub lambda: Option<f64>,
    pub diagnostics: Option<RefineDiagnostics>,
    pub config: Option<JointConfig>,
}

impl FitArtifact {
    pub fn from_joint(fit: &JointFit, config: &JointConfig) -> Self {
        let idx = fit.scores.index();
        Self {
            schema_version: SCHEMA_VERSION,
            method: Method::Joint,
            task_names: idx.task_names().to_vec(),
            model_names: idx.model_names().to_vec(),
            scores: rows(fit.scores.values()),
            rank: Some(fit.factors.rank()),
            left: Some(rows(fit.factors.left())),
            right: Some(rows(fit.factors.right())),
            lambda: Some(fit.lambda),
            diagnostics: Some(fit.diagnostics.clone()),
            config: Some(*config),
        }
    }

    pub fn from_scores(method: Method, scores: &ScoreMatrix) -> Self {
        let idx = scores.index();
        Self {
            schema_version: SCHEMA_VERSION,
            method,
            task_names: idx.task_names().to_vec(),
            model_names: idx.model_names().to_vec(),
            scores: rows(scores.values()),
            rank: None,
            left: None,
            right: None,
            lambda: None,
            diagnostics: None,
            config: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let artifact: Self = read_json(path)?;
        if artifact.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                artifact.schema_version
            )));
        }
        Ok(artifact)
    }

    pub fn index(&self) -> Result<Arc<TaskModelIndex>> {
        Ok(Arc::new(TaskModelIndex::new(self.task_names.clone(), self.model_names.clone())?))
    }

    pub fn scores(&self) -> Result<ScoreMatrix> {
        Ok(ScoreMatrix::new(self.index()?, from_rows(&self.scores, self.model_names.len())?)?)
    }

    /// The rank-r factors, for low-rank fits.
    pub fn factors(&self) -> Result<Option<FactoredScores>> {
        match (&self.left, &self.right, self.rank) {
            (Some(l), Some(r), Some(rank)) => {
                Ok(Some(FactoredScores::new(self.index()?, from_rows(l, rank)?, from_rows(r, rank)?)?))
            }
            _ => Ok(None),
        }
    }
}

/// One inferred contrast `Θ[t,a] − Θ[t,b]` with a pointwise interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferRow {
    pub task: String,
    pub model_a: String,
    pub model_b: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Output of `infer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub schema_version: u32,
    pub method: Method,
    pub n: usize,
    pub alpha: f64,
    pub rows: Vec<InferRow>,
    /// Plug-in covariance of `sqrt(n)` times the estimates, in row order.
    pub covariance: Vec<Vec<f64>>,
}

/// Output of `certify`: the core report plus the names needed to read it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyOutput {
    pub schema_version: u32,
    pub method: Method,
    pub k: usize,
    pub task_names: Vec<String>,
    pub model_names: Vec<String>,
    pub reports: Vec<CertificationReport>,
}
