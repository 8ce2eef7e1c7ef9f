//! Property tests over the spec invariants: lossless serialization,
//! adjacency symmetry, propagation safety, decision-log replay
//! equivalence, and tree validity under randomized scripts.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use astrovlm_core::askrag::{
    aggregate_subgraphs, build_agent_subgraphs, partition_for_pairs, propagate_resource, Action,
    DriverConfig, PartitionConfig,
};
use astrovlm_core::backends::{Backends, MockBackend};
use astrovlm_core::embed::EmbeddingStore;
use astrovlm_core::kg::{cosine_sim, KgEdge, KgNode, KnowledgeGraph};
use astrovlm_core::pipeline::{AgentReply, AgentSpec, DetectedError, Pipeline, Stage};
use astrovlm_core::reasoning::{chain_of_backtracking, CollaborativeReasoningTree, RwbConfig};
use astrovlm_core::wordlist::{RelevantWordlist, WordlistEntry};

// ---------------------------------------------------------------------
// proptest strategies
// ---------------------------------------------------------------------

fn arb_graph() -> impl Strategy<Value = KnowledgeGraph> {
    (1usize..7, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<KgNode> = (0..n)
            .map(|i| KgNode {
                id: format!("node-{i}"),
                label: format!("Node {i}"),
                text: if rng.random_bool(0.5) {
                    format!("text {i}")
                } else {
                    String::new()
                },
            })
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.4) {
                    edges.push(KgEdge {
                        src: format!("node-{i}"),
                        dst: format!("node-{j}"),
                        relation: format!("rel-{i}-{j}"),
                        weight: rng.random::<f64>(),
                    });
                }
            }
        }
        KnowledgeGraph::from_parts(nodes, edges).unwrap()
    })
}

proptest! {
    #[test]
    fn kg_json_round_trip_is_lossless(graph in arb_graph()) {
        let bytes = graph.to_json(None);
        let back = KnowledgeGraph::from_json(&bytes, "proptest").unwrap();
        prop_assert_eq!(back, graph);
    }

    #[test]
    fn adjacency_is_symmetric(graph in arb_graph()) {
        for edge in graph.edges() {
            prop_assert!(graph.neighbors(&edge.src).any(|n| n == edge.dst));
            prop_assert!(graph.neighbors(&edge.dst).any(|n| n == edge.src));
        }
        for id in graph.node_ids() {
            for neighbor in graph.neighbors(id) {
                prop_assert!(graph.has_edge(id, neighbor));
            }
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(
        u in prop::collection::vec(-10.0f64..10.0, 4),
        v in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let uv = cosine_sim(&u, &v).unwrap();
        let vu = cosine_sim(&v, &u).unwrap();
        prop_assert_eq!(uv, vu);
        prop_assert!((-1.0..=1.0).contains(&uv));
    }

    #[test]
    fn wordlists_json_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lists: Vec<RelevantWordlist> = (0..rng.random_range(1..4usize))
            .map(|a| RelevantWordlist {
                agent_id: format!("agent-{a}"),
                layers: (0..rng.random_range(1..5usize))
                    .map(|l| WordlistEntry {
                        keyword: format!("kw {a} {l}"),
                        score: rng.random::<f64>().clamp(1e-9, 1.0),
                    })
                    .collect(),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wordlists.json");
        astrovlm_core::wordlist::save_wordlists(&lists, &path, None).unwrap();
        let back = astrovlm_core::wordlist::load_wordlists(&path).unwrap();
        prop_assert_eq!(back, lists);
    }
}

// ---------------------------------------------------------------------
// Seeded scenario properties
// ---------------------------------------------------------------------

fn random_instance(rng: &mut ChaCha8Rng, max_nodes: usize) -> (KnowledgeGraph, EmbeddingStore) {
    let n = rng.random_range(1..=max_nodes);
    let nodes: Vec<KgNode> = (0..n)
        .map(|i| KgNode {
            id: format!("n{i}"),
            label: format!("N{i}"),
            text: String::new(),
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.5) {
                edges.push(KgEdge {
                    src: format!("n{i}"),
                    dst: format!("n{j}"),
                    relation: "r".into(),
                    weight: rng.random::<f64>(),
                });
            }
        }
    }
    let graph = KnowledgeGraph::from_parts(nodes, edges).unwrap();
    let mut store = EmbeddingStore::new("seeded", 4).unwrap();
    for id in graph.node_ids().map(str::to_string).collect::<Vec<_>>() {
        let vector: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        store.insert(id, vector).unwrap();
    }
    (graph, store)
}

#[test]
fn propagation_stays_non_negative_with_fixed_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (graph, store) = random_instance(&mut rng, 8);
        let ids: Vec<String> = graph.node_ids().map(str::to_string).collect();
        let start = ids[rng.random_range(0..ids.len())].clone();
        let cfg = PartitionConfig {
            mu: rng.random::<f64>().max(0.05),
            top_k_paths: 3,
            max_hops: rng.random_range(1..=4),
        };
        let resources = propagate_resource(&graph, &store, &start, &cfg).unwrap();
        assert_eq!(resources.get(&start), 1.0);
        assert_eq!(resources.start_id(), start);
        for (_, value) in resources.values() {
            assert!(value >= 0.0 && value.is_finite());
        }
    }
}

#[test]
fn partition_subgraphs_stay_inside_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (graph, store) = random_instance(&mut rng, 7);
        let ids: Vec<String> = graph.node_ids().map(str::to_string).collect();
        if ids.len() < 2 {
            continue;
        }
        let a = ids[rng.random_range(0..ids.len())].clone();
        let b = ids[rng.random_range(0..ids.len())].clone();
        let sub = partition_for_pairs(
            &graph,
            &store,
            &[(a, b)],
            &PartitionConfig::default(),
        )
        .unwrap();
        assert!(sub.is_subgraph_of(&graph));
    }
}

/// The decision log reconstructs a driver run exactly: replaying the
/// logged merges over freshly recomputed initial partitions reproduces
/// the final per-agent subgraphs.
#[test]
fn decision_log_replays_to_identical_subgraphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let (graph, _) = random_instance(&mut rng, 6);
        if graph.node_count() < 3 {
            continue;
        }
        // Node embeddings follow the mock's hash rule for labels, so
        // keywords equal to labels match their nodes exactly.
        let mut store = EmbeddingStore::new("mock", 16).unwrap();
        let labels: Vec<(String, String)> = graph
            .nodes()
            .map(|n| (n.id.clone(), n.label.clone()))
            .collect();
        for (id, label) in &labels {
            store
                .insert(id, MockBackend::derive_vector(label, 16))
                .unwrap();
        }
        let script = astrovlm_core::backends::MockScript {
            embed_dim: 16,
            default_reply: Some("```json\n{\"relation\":\"linked\"}\n```".into()),
            ..Default::default()
        };
        let backends = Backends::mock(MockBackend::new(script).unwrap());

        let agent_count = rng.random_range(2..=3usize);
        let specs: Vec<AgentSpec> = (0..agent_count)
            .map(|i| AgentSpec {
                agent_id: format!("agent{i}"),
                stage: Stage::Shooting,
                process_name: format!("process {i}"),
                order_index: i as u32,
                relevant_predecessors: BTreeSet::new(),
                tool_ids: vec![],
                prompt_template: "{context}{image_facts}{question}".into(),
            })
            .collect();
        let pipeline = Pipeline::from_agents(specs).unwrap();
        let wordlists: Vec<RelevantWordlist> = (0..agent_count)
            .map(|i| RelevantWordlist {
                agent_id: format!("agent{i}"),
                layers: (0..rng.random_range(1..=3usize))
                    .map(|_| {
                        let (_, label) = &labels[rng.random_range(0..labels.len())];
                        WordlistEntry {
                            keyword: label.clone(),
                            score: rng.random::<f64>().max(0.1),
                        }
                    })
                    .collect(),
            })
            .collect();
        let cfg = DriverConfig {
            beta: vec![rng.random::<f64>() * 2.0 - 1.0],
            ..Default::default()
        };
        let outcome =
            build_agent_subgraphs(&graph, &store, &wordlists, &pipeline, &cfg, &backends)
                .unwrap();

        // Replay: recompute stage 1, then apply logged aggregations.
        let mut replayed: BTreeMap<String, Arc<KnowledgeGraph>> = BTreeMap::new();
        let by_agent: BTreeMap<&str, &RelevantWordlist> = wordlists
            .iter()
            .map(|wl| (wl.agent_id.as_str(), wl))
            .collect();
        for agent in pipeline.agents() {
            let wl = by_agent[agent.agent_id.as_str()];
            let mut anchors: Vec<String> = Vec::new();
            for entry in &wl.layers {
                let vector = MockBackend::derive_vector(&entry.keyword, 16);
                let node =
                    astrovlm_core::askrag::match_vector_to_node(&vector, &graph, &store).unwrap();
                if !anchors.contains(&node) {
                    anchors.push(node);
                }
            }
            anchors.sort();
            let mut pairs = Vec::new();
            for i in 0..anchors.len() {
                for j in i + 1..anchors.len() {
                    pairs.push((anchors[i].clone(), anchors[j].clone()));
                }
            }
            let sub = partition_for_pairs(&graph, &store, &pairs, &cfg.partition).unwrap();
            replayed.insert(agent.agent_id.clone(), Arc::new(sub));
        }
        for decision in &outcome.decisions {
            if decision.action != Action::Aggregate {
                continue;
            }
            let (left, right) = (&decision.pair.0, &decision.pair.1);
            if replayed[left] == replayed[right] {
                continue;
            }
            let merged = aggregate_subgraphs(
                &replayed[left],
                &replayed[right],
                &graph,
                &store,
                &cfg.aggregate,
                backends.chat.as_ref(),
            )
            .unwrap();
            let shared = Arc::new(merged.merged);
            replayed.insert(left.clone(), shared.clone());
            replayed.insert(right.clone(), shared);
        }
        for (agent_id, subgraph) in &outcome.subgraphs {
            assert_eq!(
                replayed[agent_id].as_ref(),
                subgraph.as_ref(),
                "replay diverged for {agent_id}"
            );
            // No invented nodes: agent graphs draw only on root nodes, and
            // only edges may be new (backend-labeled links).
            for id in subgraph.node_ids() {
                assert!(graph.contains_node(id), "{agent_id} invented node {id}");
            }
        }
    }
}

/// Trees built from randomized scripted scenarios always satisfy the tree
/// invariants: sequential ids, exactly one parent per non-root node, all
/// confidences and weights in range, and serialization re-validates.
#[test]
fn backtracking_trees_are_valid_under_random_scripts() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let agent_count = rng.random_range(2..=6usize);
        let mut specs = Vec::new();
        for i in 0..agent_count {
            let preds: BTreeSet<String> = (0..i)
                .filter(|_| rng.random_bool(0.6))
                .map(|j| format!("a{j}"))
                .collect();
            specs.push(AgentSpec {
                agent_id: format!("a{i}"),
                stage: Stage::Shooting,
                process_name: format!("p{i}"),
                order_index: i as u32,
                relevant_predecessors: preds,
                tool_ids: vec![],
                prompt_template: "{context}{image_facts}{question}".into(),
            });
        }
        let pipeline = Pipeline::from_agents(specs).unwrap();
        let mut mock = MockBackend::default();
        for i in 0..agent_count {
            mock = mock.with_entry(
                format!("reexamine:a{i}:e"),
                format!(
                    "```json\n{{\"observation\":\"o\",\"error_detected\":false,\
                     \"error_summary\":\"\",\"confidence\":{},\"rationale\":\"r\"}}\n```",
                    rng.random::<f64>()
                ),
            );
            for p in 0..agent_count {
                if p != i {
                    mock = mock.with_entry(
                        format!("evaluate_edge:a{p}:a{i}:e"),
                        format!("```json\n{{\"weight\":{}}}\n```", rng.random::<f64>()),
                    );
                }
            }
        }
        let backends = Backends::mock(mock);
        let origin = format!("a{}", agent_count - 1);
        let subkgs: BTreeMap<String, Arc<KnowledgeGraph>> = pipeline
            .agents()
            .map(|a| (a.agent_id.clone(), Arc::new(KnowledgeGraph::new())))
            .collect();
        let cfg = RwbConfig {
            tau: rng.random::<f64>(),
            max_depth: rng.random_range(1..=6),
            ..Default::default()
        };
        let tree = chain_of_backtracking(
            &DetectedError {
                agent_id: origin.clone(),
                order_index: agent_count as u32 - 1,
                summary: "e".into(),
                confidence: 0.9,
            },
            &AgentReply {
                agent_id: origin,
                observation: "anomaly".into(),
                error_detected: true,
                error_summary: "e".into(),
                confidence: 0.9,
                rationale: String::new(),
                degraded: false,
                flags: vec![],
            },
            &pipeline,
            &subkgs,
            &cfg,
            &backends,
            4,
        )
        .unwrap();

        // Agents are unique across the tree.
        let agents: BTreeSet<&str> = tree.nodes().iter().map(|n| n.agent_id.as_str()).collect();
        assert_eq!(agents.len(), tree.len());
        // Every non-root node has exactly one incoming edge; ranges hold.
        for node in tree.nodes() {
            assert!((0.0..=1.0).contains(&node.confidence));
            if node.node_id != tree.root_id() {
                let (_, weight) = tree.parent_of(&node.node_id).expect("single parent");
                assert!((0.0..=1.0).contains(&weight));
                assert!(tree.depth_of(&node.node_id) <= cfg.max_depth);
            }
        }
        assert_eq!(tree.edges().len(), tree.len() - 1, "connected tree");
        // Serialized form re-validates.
        CollaborativeReasoningTree::from_serialized(&tree.to_serialized()).unwrap();
    }
}

/// Graphs, stores, pipelines, and backends are shared across concurrent
/// readers; the compiler proves it.
#[test]
fn shared_state_is_send_and_sync() {
    fn assert_shareable<T: Send + Sync>() {}
    assert_shareable::<KnowledgeGraph>();
    assert_shareable::<EmbeddingStore>();
    assert_shareable::<Pipeline>();
    assert_shareable::<MockBackend>();
    assert_shareable::<Backends>();
    assert_shareable::<astrovlm_core::pipeline::ToolRegistry>();
}

/// Isomorphic graphs with identical features and seed smooth to identical
/// embeddings under the isomorphism.
#[test]
fn smoothing_commutes_with_order_preserving_isomorphism() {
    use astrovlm_core::askrag::{smooth_embeddings, MessagePassingConfig};
    let make = |ids: [&str; 3]| {
        let nodes: Vec<KgNode> = ids
            .iter()
            .map(|id| KgNode {
                id: id.to_string(),
                label: id.to_uppercase(),
                text: String::new(),
            })
            .collect();
        let edges = vec![
            KgEdge {
                src: ids[0].into(),
                dst: ids[1].into(),
                relation: "r".into(),
                weight: 0.5,
            },
            KgEdge {
                src: ids[1].into(),
                dst: ids[2].into(),
                relation: "r".into(),
                weight: 0.5,
            },
        ];
        KnowledgeGraph::from_parts(nodes, edges).unwrap()
    };
    let features = [vec![0.4, -0.2], vec![0.9, 0.1], vec![-0.3, 0.7]];
    let store_for = |ids: [&str; 3]| {
        let mut store = EmbeddingStore::new("iso", 2).unwrap();
        for (id, feature) in ids.iter().zip(&features) {
            store.insert(*id, feature.clone()).unwrap();
        }
        store
    };
    let cfg = MessagePassingConfig {
        hidden_dim: 3,
        seed: 99,
        ..Default::default()
    };
    let left_ids = ["a", "b", "c"];
    let right_ids = ["x", "y", "z"];
    let left = smooth_embeddings(&make(left_ids), &store_for(left_ids), &cfg).unwrap();
    let right = smooth_embeddings(&make(right_ids), &store_for(right_ids), &cfg).unwrap();
    for (l, r) in left_ids.iter().zip(&right_ids) {
        assert_eq!(left.get(l).unwrap(), right.get(r).unwrap());
    }
}
