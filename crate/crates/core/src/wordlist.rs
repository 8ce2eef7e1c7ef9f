//! Per-agent relevant wordlists.
//!
//! A keyword library is distilled from the document corpus, then a
//! synthesizer backend picks an ordered (general to specific) layer list
//! for every pipeline agent. Layer scores default to the library's
//! extraction scores.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{structured_chat, CallTag, ChatBackend, ChatRequest, FieldKind, Phase};
use crate::error::{Error, Result};
use crate::pipeline::Pipeline;

pub const DEFAULT_MAX_LAYERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordlistEntry {
    pub keyword: String,
    /// Relevance score in (0,1].
    pub score: f64,
}

/// Ordered keyword layers for one agent; index 0 is the most general layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelevantWordlist {
    pub agent_id: String,
    pub layers: Vec<WordlistEntry>,
}

impl RelevantWordlist {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config(format!(
                "wordlist for {:?} has no layers",
                self.agent_id
            )));
        }
        for entry in &self.layers {
            if entry.keyword.is_empty() {
                return Err(Error::EmptyField {
                    what: format!("keyword in wordlist {:?}", self.agent_id),
                });
            }
            if !(entry.score > 0.0 && entry.score <= 1.0) {
                return Err(Error::config(format!(
                    "score {} for keyword {:?} outside (0,1]",
                    entry.score, entry.keyword
                )));
            }
        }
        Ok(())
    }
}

/// Keywords covering the whole corpus with extraction scores in (0,1].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeywordLibrary {
    entries: BTreeMap<String, f64>,
}

impl KeywordLibrary {
    pub fn score(&self, keyword: &str) -> Option<f64> {
        self.entries.get(keyword).copied()
    }

    pub fn contains(&self, keyword: &str) -> bool {
        self.entries.contains_key(keyword)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Keyword extraction is pluggable; [`TfIdfExtractor`] is the built-in
/// deterministic default.
pub trait KeywordExtractor {
    fn extract(&self, documents: &[String], max_count: usize) -> KeywordLibrary;
}

/// Term frequency x inverse document frequency over lowercase unigrams and
/// bigrams. Bigram occurrences carry the combined mass of their two words,
/// which favors multiword process terms over their constituents. Scores are
/// normalized so the top keyword scores 1.0; ties break lexicographically.
#[derive(Debug, Default, Clone, Copy)]
pub struct TfIdfExtractor;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "have", "in", "int",
    "is", "it", "its", "of", "on", "or", "that", "the", "their", "this", "to", "was", "which",
    "will", "with",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

fn tokenize(document: &str) -> Vec<String> {
    document
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn is_candidate(token: &str) -> bool {
    token.len() >= 2 && !is_stopword(token)
}

impl KeywordExtractor for TfIdfExtractor {
    fn extract(&self, documents: &[String], max_count: usize) -> KeywordLibrary {
        let tokenized: Vec<Vec<String>> = documents.iter().map(|d| tokenize(d)).collect();
        let n_docs = tokenized.iter().filter(|t| !t.is_empty()).count();
        if n_docs == 0 || max_count == 0 {
            return KeywordLibrary::default();
        }

        let mut tf: BTreeMap<String, usize> = BTreeMap::new();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for tokens in &tokenized {
            let mut doc_terms: Vec<String> = Vec::new();
            for token in tokens {
                if is_candidate(token) {
                    doc_terms.push(token.clone());
                }
            }
            for pair in tokens.windows(2) {
                if is_candidate(&pair[0]) && is_candidate(&pair[1]) {
                    doc_terms.push(format!("{} {}", pair[0], pair[1]));
                }
            }
            for term in &doc_terms {
                *tf.entry(term.clone()).or_insert(0) += 1;
            }
            let unique: std::collections::BTreeSet<&String> = doc_terms.iter().collect();
            for term in unique {
                *df.entry(term.clone()).or_insert(0) += 1;
            }
        }

        let mut scored: Vec<(String, f64)> = tf
            .into_iter()
            .map(|(term, count)| {
                let words = term.split(' ').count() as f64;
                let doc_freq = df.get(&term).copied().unwrap_or(1) as f64;
                let idf = (n_docs as f64 / doc_freq).ln() + 1.0;
                let score = count as f64 * words * idf;
                (term, score)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(max_count);

        let Some(max_score) = scored.first().map(|(_, s)| *s).filter(|s| *s > 0.0) else {
            return KeywordLibrary::default();
        };
        KeywordLibrary {
            entries: scored
                .into_iter()
                .map(|(term, score)| (term, score / max_score))
                .collect(),
        }
    }
}

/// Extract a keyword library with the default statistical extractor.
pub fn extract_keywords(documents: &[String], max_count: usize) -> KeywordLibrary {
    TfIdfExtractor.extract(documents, max_count)
}

fn synthesis_request(
    agent_id: &str,
    process_name: &str,
    library: &KeywordLibrary,
    max_layers: usize,
) -> ChatRequest {
    let catalog: Vec<String> = library
        .iter()
        .map(|(keyword, score)| format!("- {keyword} (score {score:.4})"))
        .collect();
    ChatRequest::new(
        "You are a synthesizer building a layered keyword list for a specialist \
         diagnosing astronomical imaging problems.",
        format!(
            "Specialist: {agent_id}\nProcess: {process_name}\n\n\
             Keyword library:\n{}\n\n\
             Pick between 1 and {max_layers} keywords from the library that this \
             specialist should retrieve knowledge for. Order them from the most \
             general to the most specific. Reply with only a fenced JSON object: \
             {{\"keywords\": [\"...\"]}}.",
            catalog.join("\n")
        ),
    )
}

/// Ask the synthesizer backend for one wordlist per pipeline agent.
///
/// Chosen keywords must exist in the library (others are dropped with a
/// warning); scores are inherited from the library; at most `max_layers`
/// layers are kept.
pub fn synthesize_wordlists(
    library: &KeywordLibrary,
    pipeline: &Pipeline,
    chat: &dyn ChatBackend,
    max_layers: usize,
) -> Result<Vec<RelevantWordlist>> {
    if library.is_empty() {
        return Err(Error::config("keyword library is empty"));
    }
    if max_layers == 0 {
        return Err(Error::config("max_layers must be positive"));
    }
    let mut agents: Vec<(&str, &str)> = pipeline
        .agents()
        .map(|a| (a.agent_id.as_str(), a.process_name.as_str()))
        .collect();
    agents.sort();

    const SCHEMA: &[(&str, FieldKind)] = &[("keywords", FieldKind::TextList)];
    let mut wordlists = Vec::with_capacity(agents.len());
    for (agent_id, process_name) in agents {
        let request = synthesis_request(agent_id, process_name, library, max_layers);
        let tag = CallTag::new(Phase::Synthesize, agent_id);
        let reply = structured_chat(chat, &tag, &request, SCHEMA)?;
        if reply.degraded {
            return Err(Error::Synthesis {
                agent_id: agent_id.into(),
                raw: reply.raw,
            });
        }
        let chosen = reply
            .parsed
            .get("keywords")
            .and_then(|v| v.as_array())
            .expect("schema guarantees list");
        let mut layers = Vec::new();
        for value in chosen {
            let keyword = value.as_str().expect("schema guarantees strings");
            match library.score(keyword) {
                Some(score) => layers.push(WordlistEntry {
                    keyword: keyword.to_string(),
                    score,
                }),
                None => log::warn!(
                    "synthesizer chose {keyword:?} for {agent_id}, not in library; dropped"
                ),
            }
            if layers.len() == max_layers {
                break;
            }
        }
        if layers.is_empty() {
            return Err(Error::Synthesis {
                agent_id: agent_id.into(),
                raw: reply.raw,
            });
        }
        let wordlist = RelevantWordlist {
            agent_id: agent_id.into(),
            layers,
        };
        wordlist.validate()?;
        wordlists.push(wordlist);
    }
    Ok(wordlists)
}

/// On-disk form (`wordlists.json`); agents sorted by id.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordlistsFile {
    agents: Vec<RelevantWordlist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_echo: Option<serde_json::Value>,
}

pub fn save_wordlists(
    wordlists: &[RelevantWordlist],
    path: impl AsRef<Path>,
    config_echo: Option<serde_json::Value>,
) -> Result<()> {
    let path = path.as_ref();
    let mut agents: Vec<RelevantWordlist> = wordlists.to_vec();
    agents.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    let file = WordlistsFile {
        agents,
        config_echo,
    };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("wordlists serialize");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_wordlists(path: impl AsRef<Path>) -> Result<Vec<RelevantWordlist>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: WordlistsFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::schema(path.display().to_string(), e))?;
    for wordlist in &file.agents {
        wordlist.validate()?;
    }
    Ok(file.agents)
}
