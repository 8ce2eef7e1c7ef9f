//! Command-line surface tying the stages together: build the root graph
//! and wordlists, run the knowledge partitioning, diagnose images, and
//! evaluate reports.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use astrovlm_core::askrag::{build_agent_subgraphs, save_decisions};
use astrovlm_core::backends::Backends;
use astrovlm_core::eval::{aggregate, judge, load_truths, Category, ScoreTriple};
use astrovlm_core::ingest::{build_graph_from_docs, embed_graph, read_documents};
use astrovlm_core::kg::KnowledgeGraph;
use astrovlm_core::pipeline::{run_pipeline, Pipeline, ToolObservation, ToolRegistry};
use astrovlm_core::reasoning::{chain_of_backtracking, tree_reasoning};
use astrovlm_core::report::{DiagnosisReport, ErrorReport};
use astrovlm_core::wordlist::{extract_keywords, load_wordlists, save_wordlists, synthesize_wordlists};
use astrovlm_core::embed::EmbeddingStore;

use config::{required, resolve, BackendKind, RunConfig};

const HYPERPARAMETER_HELP: &str = "\
Hyperparameters (set in the config file; symbol in parentheses):
  mu (μ)              decay rate of resource propagation, (0,1], default 0.8
  gamma (γ)           balance factor in the correlation factor, > 0, default 1.0
  beta (β)            partition/aggregate threshold, scalar or per-layer list, default 0.0
  tau (τ)             backtracking confidence threshold, [0,1], default 0.5
  xi (ξ)              conflict threshold for coordinator arbitration, [0,1], default 0.4
  eta (η)             cause selection threshold, [0,1], default 0.5
  top_k_paths (K)     reliable paths kept per anchor pair, default 5
  top_k_edges (K)     similarity edges added per aggregation, default 5
  max_hops            path length / propagation radius bound, default 4
  max_depth           backtracking depth bound, default 6
  seed                seed of the deterministic message-passing projections, default 42
  hidden_dim          smoothed embedding width, default 64
  max_layers          wordlist layers per agent, default 6
  max_keywords        keyword library size cap, default 64
  context_top_n       subgraph facts injected per agent prompt, default 12

Environment (live backend credentials only):
  ASTROVLM_API_KEY, ASTROVLM_API_BASE, ASTROVLM_CHAT_MODEL, ASTROVLM_EMBED_MODEL";

#[derive(Parser)]
#[command(
    name = "astrovlm",
    version,
    about = "Diagnose the quality of astronomical images with specialist agents over \
             per-agent knowledge subgraphs",
    after_help = HYPERPARAMETER_HELP
)]
struct Cli {
    /// Override the config's backend selection.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,

    /// Bound on concurrent backend requests.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-graph construction.
    Kg {
        #[command(subcommand)]
        command: KgCommand,
    },
    /// Per-agent wordlist construction.
    Wordlists {
        #[command(subcommand)]
        command: WordlistsCommand,
    },
    /// Knowledge partitioning and aggregation.
    Askrag {
        #[command(subcommand)]
        command: AskragCommand,
    },
    /// Diagnose one image: tools, agent pipeline, backtracking, report.
    Diagnose {
        /// Image file (FITS).
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output report.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score diagnosis reports against expert ground truth.
    Eval {
        /// Directory of report.json files.
        #[arg(long)]
        reports: PathBuf,
        /// Ground-truth annotations (truth.json).
        #[arg(long)]
        truth: PathBuf,
        /// Output scores.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KgCommand {
    /// Extract entities and relations from a document corpus into kg.json.
    Build {
        /// Directory of source documents (*.txt, *.md).
        #[arg(long)]
        docs: PathBuf,
        /// Output kg.json.
        #[arg(long)]
        out: PathBuf,
        /// Also embed every node and write embeddings.json here.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum WordlistsCommand {
    /// Distill a keyword library from documents and synthesize one layered
    /// wordlist per agent.
    Build {
        /// Directory of source documents (*.txt, *.md).
        #[arg(long)]
        docs: PathBuf,
        /// Output wordlists.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AskragCommand {
    /// Build one sub-knowledge-graph per agent plus the decision log.
    Run {
        /// Root graph (kg.json).
        #[arg(long)]
        kg: PathBuf,
        /// Node embeddings sidecar (embeddings.json).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Per-agent wordlists (wordlists.json).
        #[arg(long)]
        wordlists: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory for subkgs/&lt;agent&gt;.json and decisions.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(error) = run() {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

/// Load the config (or defaults) and apply CLI overrides. The returned
/// base dir anchors relative paths written inside the config file.
fn load_config(
    path: Option<&Path>,
    backend: Option<BackendKind>,
    jobs: Option<usize>,
) -> anyhow::Result<(RunConfig, PathBuf)> {
    let (mut config, base_dir) = match path {
        Some(path) => {
            let config = RunConfig::load(path)?;
            let base = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            (config, base)
        }
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(backend) = backend {
        config.backend = backend;
    }
    if let Some(jobs) = jobs {
        config.jobs = jobs;
    }
    config.validate()?;
    Ok((config, base_dir))
}

fn load_pipeline(config: &RunConfig, base_dir: &Path) -> anyhow::Result<Pipeline> {
    match &config.paths.agents {
        Some(path) => Ok(Pipeline::load(resolve(base_dir, path))?),
        None => Ok(Pipeline::default_roster()),
    }
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Kg {
            command: KgCommand::Build {
                docs,
                out,
                embeddings,
                config,
            },
        } => {
            let (config, base_dir) = load_config(config.as_deref(), cli.backend, cli.jobs)?;
            let backends = config.make_backends(&base_dir)?;
            let graph = build_graph_from_docs(&docs, &backends)?;
            graph.save_with_echo(&out, Some(config.echo()))?;
            println!("wrote {} ({} nodes, {} edges)", out.display(), graph.node_count(), graph.edge_count());
            if let Some(embeddings_out) = embeddings {
                let store = embed_graph(&graph, &backends)?;
                store.save(&embeddings_out)?;
                println!("wrote {} ({} vectors, dim {})", embeddings_out.display(), store.len(), store.dim);
            }
            Ok(())
        }
        Command::Wordlists {
            command: WordlistsCommand::Build { docs, out, config },
        } => {
            let (config, base_dir) = load_config(config.as_deref(), cli.backend, cli.jobs)?;
            let backends = config.make_backends(&base_dir)?;
            let pipeline = load_pipeline(&config, &base_dir)?;
            let documents: Vec<String> = read_documents(&docs)?
                .into_iter()
                .map(|(_, content)| content)
                .collect();
            let library = extract_keywords(&documents, config.max_keywords);
            let wordlists = synthesize_wordlists(
                &library,
                &pipeline,
                backends.chat.as_ref(),
                config.max_layers,
            )?;
            save_wordlists(&wordlists, &out, Some(config.echo()))?;
            println!("wrote {} ({} wordlists)", out.display(), wordlists.len());
            Ok(())
        }
        Command::Askrag {
            command: AskragCommand::Run {
                kg,
                embeddings,
                wordlists,
                config,
                out,
            },
        } => {
            let (config, base_dir) = load_config(Some(&config), cli.backend, cli.jobs)?;
            let backends = config.make_backends(&base_dir)?;
            let pipeline = load_pipeline(&config, &base_dir)?;
            let graph = KnowledgeGraph::load(&kg)?;
            let embeddings_path = match embeddings {
                Some(path) => path,
                None => {
                    let from_config = required(&config.paths.embeddings, "embeddings")?;
                    resolve(&base_dir, from_config)
                }
            };
            let store = EmbeddingStore::load(embeddings_path)?;
            let lists = load_wordlists(&wordlists)?;
            let outcome = build_agent_subgraphs(
                &graph,
                &store,
                &lists,
                &pipeline,
                &config.driver_config(),
                &backends,
            )?;
            for warning in &outcome.warnings {
                log::warn!("{warning}");
            }
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            for (agent_id, subgraph) in &outcome.subgraphs {
                let path = out.join(format!("{agent_id}.json"));
                subgraph.save_with_echo(&path, Some(config.echo()))?;
            }
            save_decisions(&outcome.decisions, out.join("decisions.json"))?;
            println!(
                "wrote {} subgraphs and {} decisions to {}",
                outcome.subgraphs.len(),
                outcome.decisions.len(),
                out.display()
            );
            Ok(())
        }
        Command::Diagnose { image, config, out } => {
            let (config, base_dir) = load_config(Some(&config), cli.backend, cli.jobs)?;
            let backends = config.make_backends(&base_dir)?;
            let pipeline = load_pipeline(&config, &base_dir)?;
            if !image.exists() {
                bail!("image {} does not exist", image.display());
            }
            let report = diagnose(&image, &config, &base_dir, &pipeline, &backends)?;
            report.save(&out)?;
            println!(
                "wrote {} ({} detected error(s))",
                out.display(),
                report.errors.len()
            );
            Ok(())
        }
        Command::Eval {
            reports,
            truth,
            out,
            config,
        } => {
            let (config, base_dir) = load_config(config.as_deref(), cli.backend, cli.jobs)?;
            let backends = config.make_backends(&base_dir)?;
            let truths = load_truths(&truth)?;
            let by_image: BTreeMap<&str, &astrovlm_core::eval::GroundTruth> =
                truths.iter().map(|t| (t.image.as_str(), t)).collect();
            let mut report_paths: Vec<PathBuf> = std::fs::read_dir(&reports)
                .with_context(|| format!("reading {}", reports.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
                .collect();
            report_paths.sort();
            if report_paths.is_empty() {
                bail!("no report files in {}", reports.display());
            }
            let mut scores: Vec<(Category, ScoreTriple)> = Vec::new();
            let mut skipped: Vec<String> = Vec::new();
            for path in &report_paths {
                let report = DiagnosisReport::load(path)?;
                let Some(truth_entry) = by_image.get(report.image.as_str()) else {
                    skipped.push(format!("{} (image {:?})", path.display(), report.image));
                    continue;
                };
                let triple = judge(&report, truth_entry, &backends)?;
                scores.push((truth_entry.category, triple));
            }
            for entry in &skipped {
                log::warn!("skipped report without matching truth: {entry}");
            }
            if scores.is_empty() {
                bail!(
                    "none of the {} report(s) matched a truth entry",
                    report_paths.len()
                );
            }
            let mut grid = aggregate(&scores)?;
            grid.config_echo = Some(config.echo());
            grid.save(&out)?;
            println!(
                "wrote {} ({} scored, {} skipped)",
                out.display(),
                scores.len(),
                skipped.len()
            );
            Ok(())
        }
    }
}

/// Full diagnosis flow for one image: invoke every referenced tool once,
/// run the pipeline, and trace every detected error through backtracking
/// and tree reasoning.
fn diagnose(
    image: &Path,
    config: &RunConfig,
    base_dir: &Path,
    pipeline: &Pipeline,
    backends: &Backends,
) -> anyhow::Result<DiagnosisReport> {
    let subkgs_dir = resolve(base_dir, required(&config.paths.subkgs, "subkgs")?);
    let mut subkgs: BTreeMap<String, Arc<KnowledgeGraph>> = BTreeMap::new();
    let mut missing: Vec<String> = Vec::new();
    for agent in pipeline.agents() {
        let path = subkgs_dir.join(format!("{}.json", agent.agent_id));
        if path.exists() {
            subkgs.insert(agent.agent_id.clone(), Arc::new(KnowledgeGraph::load(&path)?));
        } else {
            missing.push(agent.agent_id.clone());
        }
    }
    if !missing.is_empty() {
        bail!(
            "missing subgraphs under {} for agents: {}",
            subkgs_dir.display(),
            missing.join(", ")
        );
    }

    let registry = ToolRegistry::with_reference_tools();
    let mut tool_ids: Vec<&str> = pipeline
        .agents()
        .flat_map(|a| a.tool_ids.iter().map(String::as_str))
        .collect();
    tool_ids.sort_unstable();
    tool_ids.dedup();
    let tool_observations: BTreeMap<String, ToolObservation> = tool_ids
        .into_iter()
        .map(|id| (id.to_string(), registry.invoke(id, image)))
        .collect();

    let question = config.question();
    let run = run_pipeline(
        pipeline,
        &subkgs,
        &tool_observations,
        question,
        backends,
        config.context_top_n,
    )?;

    let rwb = config.rwb_config();
    let mut error_reports = Vec::new();
    for detected in &run.errors {
        let origin_reply = run
            .replies
            .iter()
            .find(|r| r.agent_id == detected.agent_id)
            .expect("error originates from a pipeline reply");
        let mut tree = chain_of_backtracking(
            detected,
            origin_reply,
            pipeline,
            &subkgs,
            &rwb,
            backends,
            config.context_top_n,
        )?;
        let outcome = tree_reasoning(
            &mut tree,
            &detected.summary,
            &detected.agent_id,
            &rwb,
            pipeline,
            backends,
        )?;
        error_reports.push(ErrorReport::from_outcome(
            detected.summary.clone(),
            detected.agent_id.clone(),
            &tree,
            outcome,
        ));
    }

    Ok(DiagnosisReport {
        image: image.display().to_string(),
        errors: error_reports,
        config_echo: config.echo(),
    })
}
