//! The specialist pipeline: agent definitions ordered by imaging process,
//! tool plugins, FITS ingestion, and pipeline execution.

pub mod fits;
pub(crate) mod runner;
mod tools;

pub use runner::{run_agent, run_pipeline, DetectedError, PipelineRun, DEFAULT_CONTEXT_TOP_N};
pub use tools::{FactValue, FitsHeaderTool, PixelStatsTool, Tool, ToolObservation, ToolRegistry};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaging stage an agent belongs to. Pipeline order must respect
/// Preparation < Shooting < PostProcessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Preparation,
    Shooting,
    PostProcessing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub agent_id: String,
    pub stage: Stage,
    pub process_name: String,
    pub order_index: u32,
    /// Earlier agents whose processes can cause errors surfacing here.
    #[serde(default)]
    pub relevant_predecessors: BTreeSet<String>,
    #[serde(default)]
    pub tool_ids: Vec<String>,
    /// Placeholders: {context}, {image_facts}, {question}.
    pub prompt_template: String,
}

/// Prompt templates for the coordinator roles. Placeholders are
/// documented per template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorSpec {
    pub evaluate_edge_template: String,
    pub resolve_conflict_template: String,
    pub aggregate_template: String,
}

impl Default for CoordinatorSpec {
    fn default() -> Self {
        Self {
            evaluate_edge_template: "An error was observed in the {parent_process} process:\n\
                 {error_summary}\n\nParent assessment ({parent_agent}):\n{parent_response}\n\n\
                 Re-examination by the earlier {child_process} specialist ({child_agent}):\n\
                 {child_response}\n\nEstimate the confidence, between 0 and 1, that the error \
                 above originates from the {child_process} process. Reply with only a fenced \
                 JSON object: {\"weight\": <number>}."
                .into(),
            resolve_conflict_template: "Two specialists disagree about the error:\n{error_summary}\n\n\
                 {parent_agent} ({parent_process}) assessment, confidence {parent_confidence}:\n\
                 {parent_response}\n\n{child_agent} ({child_process}) assessment, confidence \
                 {child_confidence}:\n{child_response}\n\nThe causal weight currently assigned to \
                 {child_agent} is {edge_weight}. Re-judge the disagreement. Reply with only a \
                 fenced JSON object: {\"revised_assessment\": <string>, \"revised_confidence\": \
                 <number 0-1>, \"revised_weight\": <number 0-1>}."
                .into(),
            aggregate_template: "Compose a short diagnosis narrative for this astronomical \
                 imaging error:\n{error_summary}\n\nSelected causes, strongest first:\n{causes}\n\n\
                 Reasoning chains:\n{chains}\n\nReply with only a fenced JSON object: \
                 {\"narrative\": <string>}."
                .into(),
        }
    }
}

/// Ordered specialist roster plus coordinator prompts. Construction
/// validates that the order is a topological order of the predecessor
/// relation and that stages do not interleave.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    agents: Vec<AgentSpec>,
    by_id: BTreeMap<String, usize>,
    pub coordinator: CoordinatorSpec,
}

impl Pipeline {
    pub fn from_agents(mut agents: Vec<AgentSpec>) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::PipelineInvalid {
                detail: "pipeline needs at least one agent".into(),
            });
        }
        agents.sort_by_key(|a| a.order_index);
        let mut by_id = BTreeMap::new();
        let mut seen_order = BTreeSet::new();
        for (position, agent) in agents.iter().enumerate() {
            if agent.agent_id.is_empty() {
                return Err(Error::EmptyField {
                    what: "agent_id".into(),
                });
            }
            if agent.prompt_template.is_empty() {
                return Err(Error::EmptyField {
                    what: format!("prompt_template of {:?}", agent.agent_id),
                });
            }
            if !seen_order.insert(agent.order_index) {
                return Err(Error::PipelineInvalid {
                    detail: format!("duplicate order_index {}", agent.order_index),
                });
            }
            if by_id.insert(agent.agent_id.clone(), position).is_some() {
                return Err(Error::PipelineInvalid {
                    detail: format!("duplicate agent_id {:?}", agent.agent_id),
                });
            }
        }
        let pipeline = Self {
            agents,
            by_id,
            coordinator: CoordinatorSpec::default(),
        };
        pipeline.validate()?;
        Ok(pipeline)
    }

    fn validate(&self) -> Result<()> {
        // Stage blocks must not interleave.
        let mut last_stage = Stage::Preparation;
        for agent in &self.agents {
            if agent.stage < last_stage {
                return Err(Error::PipelineInvalid {
                    detail: format!(
                        "agent {:?} of stage {:?} ordered after a later stage",
                        agent.agent_id, agent.stage
                    ),
                });
            }
            last_stage = agent.stage;
        }
        // Predecessors must exist and come strictly earlier: the pipeline
        // order is a topological order of the predecessor relation.
        for agent in &self.agents {
            for pred in &agent.relevant_predecessors {
                let Some(pred_agent) = self.agent(pred) else {
                    return Err(Error::PipelineInvalid {
                        detail: format!(
                            "agent {:?} lists unknown predecessor {pred:?}",
                            agent.agent_id
                        ),
                    });
                };
                if pred_agent.order_index >= agent.order_index {
                    return Err(Error::PipelineInvalid {
                        detail: format!(
                            "predecessor {pred:?} of {:?} does not come earlier",
                            agent.agent_id
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Agents in order_index order.
    pub fn agents(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter()
    }

    pub fn agent(&self, agent_id: &str) -> Option<&AgentSpec> {
        self.by_id.get(agent_id).map(|i| &self.agents[*i])
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Relevant predecessors of `agent_id`, sorted by order_index.
    pub fn predecessors_of(&self, agent_id: &str) -> Vec<&AgentSpec> {
        let Some(agent) = self.agent(agent_id) else {
            return Vec::new();
        };
        let mut preds: Vec<&AgentSpec> = agent
            .relevant_predecessors
            .iter()
            .filter_map(|id| self.agent(id))
            .collect();
        preds.sort_by_key(|a| a.order_index);
        preds
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let agents: Vec<AgentSpec> = serde_json::from_slice(&bytes)
            .map_err(|e| Error::schema(path.display().to_string(), e))?;
        Self::from_agents(agents)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(&self.agents).expect("agents serialize");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// The default twelve-process roster spanning preparation, shooting,
    /// and post-processing.
    pub fn default_roster() -> Self {
        fn spec(
            agent_id: &str,
            stage: Stage,
            process_name: &str,
            order_index: u32,
            preds: &[&str],
            tool_ids: &[&str],
        ) -> AgentSpec {
            AgentSpec {
                agent_id: agent_id.into(),
                stage,
                process_name: process_name.into(),
                order_index,
                relevant_predecessors: preds.iter().map(|s| s.to_string()).collect(),
                tool_ids: tool_ids.iter().map(|s| s.to_string()).collect(),
                prompt_template: default_prompt_template(process_name),
            }
        }
        use Stage::*;
        let agents = vec![
            spec("equipment-matching", Preparation, "equipment matching", 0, &[], &[]),
            spec("site-weather", Preparation, "site and weather assessment", 1, &[], &[]),
            spec(
                "framing-plan",
                Preparation,
                "target framing plan",
                2,
                &["equipment-matching", "site-weather"],
                &[],
            ),
            spec(
                "mount-tracking",
                Shooting,
                "mount tracking",
                3,
                &["equipment-matching"],
                &["fits-header"],
            ),
            spec("focus", Shooting, "focusing", 4, &["equipment-matching"], &["fits-header"]),
            spec(
                "guiding",
                Shooting,
                "autoguiding",
                5,
                &["mount-tracking", "equipment-matching"],
                &["fits-header"],
            ),
            spec(
                "exposure-plan",
                Shooting,
                "exposure planning",
                6,
                &["site-weather", "framing-plan"],
                &["fits-header"],
            ),
            spec(
                "calibration-frames",
                Shooting,
                "calibration frames",
                7,
                &["exposure-plan", "focus"],
                &["fits-header", "pixel-stats"],
            ),
            spec(
                "stacking",
                PostProcessing,
                "frame stacking",
                8,
                &["guiding", "exposure-plan", "calibration-frames"],
                &["pixel-stats"],
            ),
            spec(
                "background-extraction",
                PostProcessing,
                "background extraction",
                9,
                &["stacking", "site-weather"],
                &["pixel-stats"],
            ),
            spec(
                "color-calibration",
                PostProcessing,
                "color calibration",
                10,
                &["background-extraction", "calibration-frames"],
                &[],
            ),
            spec(
                "stretch-denoise",
                PostProcessing,
                "stretching and denoising",
                11,
                &["color-calibration", "background-extraction", "stacking"],
                &["pixel-stats"],
            ),
        ];
        Self::from_agents(agents).expect("default roster is valid")
    }
}

pub fn default_prompt_template(process_name: &str) -> String {
    format!(
        "You are the {process_name} specialist in an astronomical imaging quality \
         diagnosis team.\n\nReference knowledge:\n{{context}}\n\nMeasured image \
         facts:\n{{image_facts}}\n\nTask: {{question}}\n\nJudge only your own process. \
         Reply with only a fenced JSON object: {{\"observation\": <string>, \
         \"error_detected\": <bool>, \"error_summary\": <string, empty when no error>, \
         \"confidence\": <number 0-1>, \"rationale\": <string>}}."
    )
}

/// One agent's structured assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReply {
    pub agent_id: String,
    pub observation: String,
    pub error_detected: bool,
    /// Non-empty exactly when `error_detected`.
    pub error_summary: String,
    /// In \[0,1\] after clamping.
    pub confidence: f64,
    pub rationale: String,
    /// True when the backend reply could not be parsed and this is the
    /// degraded placeholder.
    #[serde(default)]
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}
