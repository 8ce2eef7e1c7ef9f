//! Judge-based scoring of diagnosis reports against expert ground truth.
//!
//! The three rubric prompts are artifact-defined (see `docs/rubrics.md`);
//! scores live in \[0,1\] and aggregate into a per-category grid with a
//! grand average over all nine category x dimension cells.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{structured_chat, Backends, CallTag, ChatRequest, FieldKind, Phase};
use crate::error::{Error, Result};
use crate::report::DiagnosisReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "galaxies")]
    Galaxies,
    #[serde(rename = "nebulas")]
    Nebulas,
    #[serde(rename = "star clusters")]
    StarClusters,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Galaxies => "galaxies",
            Category::Nebulas => "nebulas",
            Category::StarClusters => "star clusters",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueCause {
    pub process: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub image: String,
    pub category: Category,
    pub true_causes: Vec<TrueCause>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        if self.true_causes.is_empty() {
            return Err(Error::schema(
                "truth",
                format!("entry for {:?} has no true causes", self.image),
            ));
        }
        Ok(())
    }
}

pub fn load_truths(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let truths: Vec<GroundTruth> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::schema(path.display().to_string(), e))?;
    for truth in &truths {
        truth.validate()?;
    }
    Ok(truths)
}

pub const DIMENSIONS: [&str; 3] = ["rationality", "accuracy", "diversity"];

/// Scores for one report; a dimension is `None` when the judge reply for
/// it degraded (the triple is then partial).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreTriple {
    pub rationality: Option<f64>,
    pub accuracy: Option<f64>,
    pub diversity: Option<f64>,
}

impl ScoreTriple {
    pub fn get(&self, dimension: &str) -> Option<f64> {
        match dimension {
            "rationality" => self.rationality,
            "accuracy" => self.accuracy,
            "diversity" => self.diversity,
            _ => None,
        }
    }

    pub fn is_partial(&self) -> bool {
        self.rationality.is_none() || self.accuracy.is_none() || self.diversity.is_none()
    }

    /// Arithmetic mean of the three dimensions; `None` while partial.
    pub fn average(&self) -> Option<f64> {
        Some((self.rationality? + self.accuracy? + self.diversity?) / 3.0)
    }
}

fn rubric_for(dimension: &str) -> String {
    let criterion = match dimension {
        "rationality" => {
            "how well the diagnosis reasoning follows from the evidence: the cause chains \
             must be coherent with the reported observations and free of contradictions"
        }
        "accuracy" => {
            "how well the identified causes match the expert ground-truth causes: correct \
             processes named, no fabricated causes"
        }
        "diversity" => {
            "how completely the diagnosis covers the distinct ground-truth causes: multiple \
             real causes should each be represented"
        }
        other => panic!("unknown dimension {other}"),
    };
    format!(
        "Score {criterion}. Grade strictly in [0,1], where 1 is perfect.\n\n\
         Diagnosis report:\n{{report}}\n\nExpert ground truth:\n{{truth}}\n\n\
         Reply with only a fenced JSON object: {{\"score\": <number 0-1>}}."
    )
}

fn render_report(report: &DiagnosisReport) -> String {
    let mut lines = vec![format!("image: {}", report.image)];
    for error in &report.errors {
        lines.push(format!("error ({}): {}", error.origin_agent, error.summary));
        for cause in &error.causes {
            lines.push(format!("  cause: {} (weight {:.3})", cause.agent_id, cause.weight));
        }
        if let Some(hypothesis) = &error.hypothesis {
            lines.push(format!("  hypothesis: {}", hypothesis.agent_id));
        }
        if !error.narrative.is_empty() {
            lines.push(format!("  narrative: {}", error.narrative));
        }
    }
    lines.join("\n")
}

fn render_truth(truth: &GroundTruth) -> String {
    let mut lines = vec![format!(
        "image: {} (category: {})",
        truth.image,
        truth.category.as_str()
    )];
    for cause in &truth.true_causes {
        lines.push(format!("  true cause: {} — {}", cause.process, cause.description));
    }
    lines.join("\n")
}

/// Score one report against its ground truth: one judge call per
/// dimension, numeric replies clamped to \[0,1\].
pub fn judge(
    report: &DiagnosisReport,
    truth: &GroundTruth,
    backends: &Backends,
) -> Result<ScoreTriple> {
    if report.image != truth.image {
        return Err(Error::config(format!(
            "report is for {:?} but truth is for {:?}",
            report.image, truth.image
        )));
    }
    const SCHEMA: &[(&str, FieldKind)] = &[("score", FieldKind::Number)];
    let report_text = render_report(report);
    let truth_text = render_truth(truth);
    let mut scores: BTreeMap<&str, Option<f64>> = BTreeMap::new();
    for dimension in DIMENSIONS {
        let prompt = rubric_for(dimension)
            .replace("{report}", &report_text)
            .replace("{truth}", &truth_text);
        let request = ChatRequest::new("You are a strict evaluation judge.", prompt);
        let tag = CallTag::new(Phase::Judge, dimension).with(report.image.clone());
        let reply = structured_chat(backends.chat.as_ref(), &tag, &request, SCHEMA)?;
        if reply.degraded {
            log::warn!("judge reply for {dimension} degraded; dimension scored absent");
            scores.insert(dimension, None);
        } else {
            scores.insert(
                dimension,
                Some(reply.number("score").expect("schema").clamp(0.0, 1.0)),
            );
        }
    }
    Ok(ScoreTriple {
        rationality: scores["rationality"],
        accuracy: scores["accuracy"],
        diversity: scores["diversity"],
    })
}

/// Mean and bookkeeping for one category x dimension cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellStat {
    pub mean: Option<f64>,
    /// Triples contributing to the mean.
    pub scored: usize,
    /// Triples whose judge reply for this dimension was absent.
    pub partial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryStats {
    pub rationality: CellStat,
    pub accuracy: CellStat,
    pub diversity: CellStat,
    pub reports: usize,
}

/// The score grid written to `scores.json`: per-category means per
/// dimension plus the grand average over all present cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreGrid {
    pub categories: BTreeMap<String, CategoryStats>,
    pub average: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_echo: Option<serde_json::Value>,
}

impl ScoreGrid {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self).expect("grid serializes");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::schema(path.display().to_string(), e))
    }
}

/// Fold triples into the grid. Partial dimensions are excluded from the
/// affected mean and counted; the grand average is the mean of all
/// present category x dimension cell means.
pub fn aggregate(scores: &[(Category, ScoreTriple)]) -> Result<ScoreGrid> {
    if scores.is_empty() {
        return Err(Error::config("no scores to aggregate"));
    }
    let mut categories: BTreeMap<String, CategoryStats> = BTreeMap::new();
    for category in [Category::Galaxies, Category::Nebulas, Category::StarClusters] {
        let triples: Vec<&ScoreTriple> = scores
            .iter()
            .filter(|(c, _)| *c == category)
            .map(|(_, t)| t)
            .collect();
        if triples.is_empty() {
            continue;
        }
        let cell = |dimension: &str| {
            let values: Vec<f64> = triples.iter().filter_map(|t| t.get(dimension)).collect();
            CellStat {
                mean: if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                },
                scored: values.len(),
                partial: triples.len() - values.len(),
            }
        };
        categories.insert(
            category.as_str().to_string(),
            CategoryStats {
                rationality: cell("rationality"),
                accuracy: cell("accuracy"),
                diversity: cell("diversity"),
                reports: triples.len(),
            },
        );
    }
    let cell_means: Vec<f64> = categories
        .values()
        .flat_map(|stats| {
            [
                stats.rationality.mean,
                stats.accuracy.mean,
                stats.diversity.mean,
            ]
        })
        .flatten()
        .collect();
    let average = if cell_means.is_empty() {
        None
    } else {
        Some(cell_means.iter().sum::<f64>() / cell_means.len() as f64)
    };
    Ok(ScoreGrid {
        categories,
        average,
        config_echo: None,
    })
}
