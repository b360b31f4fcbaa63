//! Arena-style vote logs: parsing, model and category filtering, and
//! conversion into a [`ComparisonDataset`].
//!
//! Input files carry one vote per row with the fields `model_a`, `model_b`,
//! `winner` and `category`, either as CSV with a header line or as JSON lines.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use taskrank_core::btl::{self, BtlOptions};
use taskrank_core::rng::{stream_rng, streams};
use taskrank_core::{ComparisonDataset, ComparisonRecord, ScoreMatrix, TaskModelIndex};

use crate::error::{Error, Result};

pub use taskrank_core::split::{assign_folds, subsample, FoldAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
    BothBad,
}

impl Winner {
    /// Maps the log's `winner` value. Accepted spellings (case-insensitive):
    /// `model_a`, `model_b`, `tie`, `tie (bothbad)`.
    pub fn from_label(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "model_a" => Some(Winner::A),
            "model_b" => Some(Winner::B),
            "tie" => Some(Winner::Tie),
            "tie (bothbad)" => Some(Winner::BothBad),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Winner::A => "model_a",
            Winner::B => "model_b",
            Winner::Tie => "tie",
            Winner::BothBad => "tie (bothbad)",
        }
    }

    pub fn is_tie(self) -> bool {
        matches!(self, Winner::Tie | Winner::BothBad)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawVote {
    pub model_a: String,
    pub model_b: String,
    pub winner: Winner,
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteFormat {
    Csv,
    Jsonl,
}

impl VoteFormat {
    /// Guesses the format from the file extension (`.csv`, `.jsonl`, `.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(VoteFormat::Csv),
            "jsonl" | "json" | "ndjson" => Some(VoteFormat::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for VoteFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(VoteFormat::Csv),
            "jsonl" => Ok(VoteFormat::Jsonl),
            other => Err(Error::Config(format!("unknown vote format {other:?} (expected csv or jsonl)"))),
        }
    }
}

/// Parsed votes and the number of rows that could not be used.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVotes {
    pub votes: Vec<RawVote>,
    pub skipped: usize,
}

#[derive(Deserialize)]
struct Row {
    model_a: Option<String>,
    model_b: Option<String>,
    winner: Option<String>,
    category: Option<String>,
}

impl Row {
    fn into_vote(self) -> Option<RawVote> {
        let nonempty = |s: Option<String>| s.map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        let model_a = nonempty(self.model_a)?;
        let model_b = nonempty(self.model_b)?;
        let winner = Winner::from_label(&nonempty(self.winner)?)?;
        let category = nonempty(self.category)?;
        (model_a != model_b).then_some(RawVote { model_a, model_b, winner, category })
    }
}

pub fn parse_votes(path: &Path, format: VoteFormat) -> Result<ParsedVotes> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parsed = parse_votes_from(BufReader::new(file), format).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if parsed.skipped > 0 {
        log::warn!("{}: skipped {} unusable rows", path.display(), parsed.skipped);
    }
    Ok(parsed)
}

/// [`parse_votes`] on any reader. Rows with a missing or empty field, an
/// unknown `winner` value or identical models are skipped and counted.
pub fn parse_votes_from<R: Read>(reader: R, format: VoteFormat) -> Result<ParsedVotes> {
    let mut votes = Vec::new();
    let mut skipped = 0;
    match format {
        VoteFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
            let headers = rdr.headers().map_err(|e| Error::Data(format!("unreadable CSV header: {e}")))?.clone();
            for field in ["model_a", "model_b", "winner", "category"] {
                if !headers.iter().any(|h| h == field) {
                    return Err(Error::Data(format!("CSV header lacks the {field} column")));
                }
            }
            for row in rdr.deserialize::<Row>() {
                match row.ok().and_then(Row::into_vote) {
                    Some(v) => votes.push(v),
                    None => skipped += 1,
                }
            }
        }
        VoteFormat::Jsonl => {
            for line in BufReader::new(reader).lines() {
                let line = line.map_err(|e| Error::Data(format!("read failure: {e}")))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Row>(&line).ok().and_then(Row::into_vote) {
                    Some(v) => votes.push(v),
                    None => skipped += 1,
                }
            }
        }
    }
    if votes.is_empty() {
        return Err(Error::Data(format!("no valid votes ({skipped} rows skipped)")));
    }
    Ok(ParsedVotes { votes, skipped })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Remove `tie` and `tie (bothbad)` votes.
    #[default]
    Drop,
    /// Keep each tie as one comparison with a seeded coin-flip outcome.
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    /// Number of most frequently compared models to keep.
    pub top_k_models: usize,
    /// Category → task name. Votes in unmapped categories are dropped. `None`
    /// makes every category its own task.
    pub category_map: Option<BTreeMap<String, String>>,
    pub tie_policy: TiePolicy,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { top_k_models: 30, category_map: None, tie_policy: TiePolicy::Drop, seed: 0 }
    }
}

/// Counts of votes removed by [`build_dataset`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounts {
    pub excluded_model: usize,
    pub unmapped_category: usize,
    pub tie: usize,
}

#[derive(Debug, Clone)]
pub struct BuiltDataset {
    pub dataset: ComparisonDataset,
    pub dropped: DropCounts,
}

/// Model names ordered by decreasing comparison count, ties alphabetical.
pub fn model_frequencies(votes: &[RawVote]) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in votes {
        *counts.entry(&v.model_a).or_default() += 1;
        *counts.entry(&v.model_b).or_default() += 1;
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(m, c)| (m.to_string(), c)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Filters `votes` to the most frequent models and mapped categories and
/// builds a dataset whose task and model dictionaries are sorted by name.
pub fn build_dataset(votes: &[RawVote], options: &BuildOptions) -> Result<BuiltDataset> {
    if votes.is_empty() {
        return Err(Error::Data("no votes to build a dataset from".into()));
    }
    if options.top_k_models < 2 {
        return Err(Error::Config("top_k_models must be at least 2".into()));
    }
    let kept: BTreeSet<String> =
        model_frequencies(votes).into_iter().take(options.top_k_models).map(|(m, _)| m).collect();
    if kept.len() < 2 {
        return Err(Error::Data("fewer than 2 surviving models".into()));
    }
    let task_of = |category: &str| -> Option<String> {
        match &options.category_map {
            Some(map) => map.get(category).cloned(),
            None => Some(category.to_string()),
        }
    };

    let mut dropped = DropCounts::default();
    let mut surviving = Vec::new();
    for v in votes {
        if !kept.contains(&v.model_a) || !kept.contains(&v.model_b) {
            dropped.excluded_model += 1;
            continue;
        }
        let Some(task) = task_of(&v.category) else {
            dropped.unmapped_category += 1;
            continue;
        };
        if v.winner.is_tie() && options.tie_policy == TiePolicy::Drop {
            dropped.tie += 1;
            continue;
        }
        surviving.push((task, v));
    }
    if surviving.is_empty() {
        return Err(Error::Data("empty surviving record set".into()));
    }

    let tasks: BTreeSet<&str> = surviving.iter().map(|(t, _)| t.as_str()).collect();
    let models: Vec<String> = kept.into_iter().collect();
    let index = Arc::new(TaskModelIndex::new(tasks.iter().map(|t| t.to_string()).collect(), models)?);
    let mut rng = stream_rng(options.seed, streams::TIES);
    let records = surviving
        .iter()
        .map(|(task, v)| {
            let outcome = match v.winner {
                Winner::A => true,
                Winner::B => false,
                Winner::Tie | Winner::BothBad => rng.random::<bool>(),
            };
            ComparisonRecord::new(
                index.task_id(task).unwrap(),
                index.model_id(&v.model_a).unwrap(),
                index.model_id(&v.model_b).unwrap(),
                outcome,
            )
        })
        .collect();
    Ok(BuiltDataset { dataset: ComparisonDataset::new(index, records)?, dropped })
}

/// Converts votes into records against an existing index. Every vote must name
/// known models and tasks (categories are used as task names) and must not be
/// a tie.
pub fn dataset_with_index(votes: &[RawVote], index: Arc<TaskModelIndex>) -> Result<ComparisonDataset> {
    let records = votes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let lookup = |name: &str, id: Option<usize>| id.ok_or_else(|| Error::Data(format!("vote {i}: unknown name {name:?}")));
            let outcome = match v.winner {
                Winner::A => true,
                Winner::B => false,
                _ => return Err(Error::Data(format!("vote {i}: ties are not allowed here"))),
            };
            Ok(ComparisonRecord::new(
                lookup(&v.category, index.task_id(&v.category))?,
                lookup(&v.model_a, index.model_id(&v.model_a))?,
                lookup(&v.model_b, index.model_id(&v.model_b))?,
                outcome,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonDataset::new(index, records)?)
}

/// Reference scores: the per-task BTL fit on the full dataset.
pub fn fit_ground_truth_btl(dataset: &ComparisonDataset) -> Result<ScoreMatrix> {
    Ok(btl::fit(dataset, &BtlOptions::default())?.scores)
}
