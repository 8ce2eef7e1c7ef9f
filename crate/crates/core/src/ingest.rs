//! Root-graph construction from a document corpus.
//!
//! Entities and relations are extracted per document through the chat
//! backend with a fixed prompt, merged, validated, and embedded. This is
//! the one place where graph content originates from model output, so the
//! merge is strict: conflicting labels or dangling relations are errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::backends::{parse_structured, Backends, CallTag, ChatRequest, Phase, REPLY_ATTEMPTS};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::kg::{KgEdge, KgNode, KnowledgeGraph};
use crate::pipeline::runner::node_embedding_text;

const DOC_EXTENSIONS: [&str; 3] = ["txt", "md", "text"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractedEdge {
    src: String,
    dst: String,
    relation: String,
    #[serde(default)]
    weight: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtractedDoc {
    nodes: Vec<KgNode>,
    edges: Vec<ExtractedEdge>,
}

fn extraction_request(doc_name: &str, content: &str) -> ChatRequest {
    ChatRequest::new(
        "You extract knowledge-graph entities and relations from astronomical imaging \
         documents.",
        format!(
            "Document {doc_name}:\n{content}\n\nExtract the entities and the relations \
             between them. Node ids must be short kebab-case slugs, unique and stable. \
             Reply with only a fenced JSON object: {{\"nodes\": [{{\"id\": <string>, \
             \"label\": <string>, \"text\": <string>}}], \"edges\": [{{\"src\": <id>, \
             \"dst\": <id>, \"relation\": <string>, \"weight\": <number 0-1>}}]}}."
        ),
    )
}

fn extract_one(doc_name: &str, content: &str, backends: &Backends) -> Result<ExtractedDoc> {
    let mut request = extraction_request(doc_name, content);
    let tag = CallTag::new(Phase::Extract, doc_name);
    let mut last_raw = String::new();
    for attempt in 0..REPLY_ATTEMPTS {
        let raw = backends.chat.chat(&tag, &request)?;
        let reply = parse_structured(&raw, &[]);
        if !reply.degraded {
            let value = serde_json::Value::Object(reply.parsed.clone().into_iter().collect());
            match serde_json::from_value::<ExtractedDoc>(value) {
                Ok(doc) => return Ok(doc),
                Err(e) => log::warn!("extraction reply for {doc_name} malformed: {e}"),
            }
        }
        if attempt + 1 < REPLY_ATTEMPTS {
            request.push_assistant(raw.clone());
            request.push_user(
                "Your previous reply could not be parsed. Respond with only a fenced JSON \
                 object holding the nodes and edges arrays described before.",
            );
        }
        last_raw = raw;
    }
    Err(Error::MalformedReply {
        context: format!("extraction of {doc_name}"),
        raw: last_raw,
    })
}

/// Documents of a corpus directory (*.txt, *.md), sorted by file name,
/// as (stem, content) pairs.
pub fn read_documents(docs_dir: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let docs_dir = docs_dir.as_ref();
    let entries = std::fs::read_dir(docs_dir)
        .map_err(|e| Error::io(docs_dir.display().to_string(), e))?;
    let mut paths: Vec<std::path::PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(str::to_lowercase)
                .is_some_and(|ext| DOC_EXTENSIONS.contains(&ext.as_str()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(format!(
            "no documents (*.txt, *.md) found in {}",
            docs_dir.display()
        )));
    }
    let mut docs = Vec::with_capacity(paths.len());
    for path in paths {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("document")
            .to_string();
        let content = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        docs.push((name, content));
    }
    Ok(docs)
}

/// Read every document in `docs_dir` (sorted by file name), extract
/// entities/relations per document, and merge into one validated graph.
pub fn build_graph_from_docs(docs_dir: impl AsRef<Path>, backends: &Backends) -> Result<KnowledgeGraph> {
    let mut nodes: BTreeMap<String, KgNode> = BTreeMap::new();
    let mut edges: BTreeMap<(String, String), KgEdge> = BTreeMap::new();
    for (name, content) in read_documents(docs_dir)? {
        let extracted = extract_one(&name, &content, backends)?;
        for node in extracted.nodes {
            match nodes.get_mut(&node.id) {
                None => {
                    nodes.insert(node.id.clone(), node);
                }
                Some(existing) => {
                    if existing.label != node.label {
                        return Err(Error::IdentityConflict {
                            id: node.id.clone(),
                            left: existing.label.clone(),
                            right: node.label.clone(),
                        });
                    }
                    if existing.text != node.text && !node.text.is_empty() {
                        if existing.text.is_empty() {
                            existing.text = node.text;
                        } else {
                            existing.text = format!("{}\n{}", existing.text, node.text);
                        }
                    }
                }
            }
        }
        for edge in extracted.edges {
            let key = if edge.src <= edge.dst {
                (edge.src.clone(), edge.dst.clone())
            } else {
                (edge.dst.clone(), edge.src.clone())
            };
            edges.entry(key).or_insert(KgEdge {
                src: edge.src,
                dst: edge.dst,
                relation: edge.relation,
                weight: edge.weight.unwrap_or(1.0),
            });
        }
    }
    KnowledgeGraph::from_parts(nodes.into_values(), edges.into_values())
}

/// Embed every node of the graph through the embedding backend into a
/// sidecar store. Nodes embed from their label, or "label: text" when
/// source text exists.
pub fn embed_graph(graph: &KnowledgeGraph, backends: &Backends) -> Result<EmbeddingStore> {
    let inputs: Vec<String> = graph
        .nodes()
        .map(|n| node_embedding_text(&n.label, &n.text))
        .collect();
    if inputs.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let vectors = backends.embed.embed(&inputs)?;
    let dim = vectors.first().map(Vec::len).unwrap_or(0);
    let mut store = EmbeddingStore::new(backends.embed.model_tag(), dim)?;
    for (node, vector) in graph.nodes().zip(vectors) {
        store.insert(&node.id, vector)?;
    }
    store.require_nonzero()?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;

    fn extraction_reply() -> &'static str {
        "```json\n{\"nodes\":[{\"id\":\"guiding\",\"label\":\"Guiding\",\"text\":\"keeps \
         stars round\"},{\"id\":\"mount\",\"label\":\"Mount\",\"text\":\"\"}],\
         \"edges\":[{\"src\":\"mount\",\"dst\":\"guiding\",\"relation\":\"supports\",\
         \"weight\":0.9}]}\n```"
    }

    #[test]
    fn builds_graph_from_scripted_extraction() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("doc1.txt"), "guiding and mounts").unwrap();
        let backends =
            Backends::mock(MockBackend::default().with_entry("extract:doc1", extraction_reply()));
        let graph = build_graph_from_docs(dir.path(), &backends).unwrap();
        assert_eq!(graph.node_count(), 2);
        assert_eq!(graph.edge_count(), 1);
        assert_eq!(graph.edge("guiding", "mount").unwrap().relation, "supports");
    }

    #[test]
    fn empty_docs_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let backends = Backends::mock(MockBackend::default());
        assert!(build_graph_from_docs(dir.path(), &backends).is_err());
    }

    #[test]
    fn malformed_extraction_carries_doc_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("doc1.txt"), "text").unwrap();
        let backends =
            Backends::mock(MockBackend::default().with_entry("extract:doc1", "not json"));
        let err = build_graph_from_docs(dir.path(), &backends).unwrap_err();
        match err {
            Error::MalformedReply { context, .. } => assert!(context.contains("doc1")),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn embeds_every_node() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("doc1.txt"), "text").unwrap();
        let backends =
            Backends::mock(MockBackend::default().with_entry("extract:doc1", extraction_reply()));
        let graph = build_graph_from_docs(dir.path(), &backends).unwrap();
        let store = embed_graph(&graph, &backends).unwrap();
        assert_eq!(store.len(), 2);
        store.require_cover(&graph).unwrap();
    }
}
