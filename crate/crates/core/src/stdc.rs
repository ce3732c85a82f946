//! Syntax-guided definition compression.
//!
//! The parse tree is walked top-down, one layer at a time, left to right
//! within a layer. Each surviving constituent is tentatively removed and the
//! resulting definition scored on the fit set; the removal is kept when the
//! score does not fall below the baseline (minus `epsilon`). Removed
//! subtrees are never revisited. The walk ends after the token layer.
//!
//! Two baselines are supported:
//! * [`BaselineMode::Current`] scores the running compressed definition
//!   minus the candidate and compares against the running score.
//! * [`BaselineMode::PaperLiteral`] scores the *full* definition minus the
//!   candidate and compares against the full definition's score, while
//!   still accumulating accepted removals.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::ablation::compression_ratio;
use crate::annotations::{validate_spans, AnnotationSet, ContentCategory, ValidationReport};
use crate::corpus::{ExampleSet, Task};
use crate::metrics::TokenSeq;
use crate::parse::{align_tokens, NodeId, ParseError, ParseTree};
use crate::scorer::{Scorer, ScorerError};

#[derive(Debug, thiserror::Error)]
pub enum StdcError {
    #[error("scoring failed at step {step}: {source}")]
    Scorer {
        step: usize,
        #[source]
        source: ScorerError,
    },
    #[error("compression removed every token ({steps} steps); allow_empty_result is off")]
    EmptyResult { steps: usize },
    #[error("parse tree does not match the definition of `{task_id}`")]
    TreeMismatch { task_id: String },
    #[error("fit set is empty")]
    EmptyFitSet,
    #[error("holdout set overlaps the fit set used for compression")]
    HoldoutOverlap,
    #[error("annotation does not validate: {0:?}")]
    Validation(ValidationReport),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("definition has no tokens")]
    EmptyDefinition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    #[default]
    Current,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrder {
    #[default]
    LeftToRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdcConfig {
    pub baseline_mode: BaselineMode,
    pub epsilon: f64,
    pub candidate_order: CandidateOrder,
    pub allow_empty_result: bool,
}

impl Default for StdcConfig {
    fn default() -> Self {
        StdcConfig {
            baseline_mode: BaselineMode::Current,
            epsilon: 0.0,
            candidate_order: CandidateOrder::LeftToRight,
            allow_empty_result: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub node: NodeId,
    pub label: String,
    pub depth: usize,
    /// Original token positions the candidate would remove.
    pub leaves_removed: Vec<usize>,
    pub candidate_score: f64,
    pub baseline: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub task_id: String,
    /// The definition as rendered from the full tree.
    pub full_definition: String,
    pub compressed_definition: String,
    pub ratio: f64,
    pub fit_score_before: f64,
    pub fit_score_after: f64,
    pub steps: Vec<Step>,
    pub baseline_mode: BaselineMode,
    pub epsilon: f64,
    pub fit_instance_ids: Vec<String>,
    /// The task's definition text; annotation offsets refer to it.
    pub source_definition: String,
    pub leaf_tokens: Vec<String>,
    pub kept_leaves: Vec<bool>,
}

impl CompressionResult {
    pub fn accepted_nodes(&self) -> Vec<NodeId> {
        self.steps.iter().filter(|s| s.accepted).map(|s| s.node).collect()
    }
}

pub fn compress(
    task: &Task,
    tree: &ParseTree,
    fit: &ExampleSet,
    scorer: &Scorer,
    cfg: &StdcConfig,
) -> Result<CompressionResult, StdcError> {
    if TokenSeq::normalize(&tree.render()) != TokenSeq::normalize(&task.definition) {
        return Err(StdcError::TreeMismatch { task_id: task.id.clone() });
    }
    if fit.is_empty() {
        return Err(StdcError::EmptyFitSet);
    }
    let full_definition = tree.render();
    let score = |text: &str, step: usize| {
        scorer
            .score(text, task, fit)
            .map(|r| r.mean_score)
            .map_err(|source| StdcError::Scorer { step, source })
    };

    let full_score = score(&full_definition, 0)?;
    let mut running = full_score;
    let mut current = tree.clone();
    let mut steps: Vec<Step> = Vec::new();

    for depth in 2..=tree.depth() {
        for node in tree.nodes_at_depth(depth)? {
            // inside an accepted subtree
            if current.node(node).is_none() {
                continue;
            }
            let (candidate, baseline) = match cfg.baseline_mode {
                BaselineMode::Current => (current.remove_subtree(node)?, running),
                BaselineMode::PaperLiteral => (tree.remove_subtree(node)?, full_score),
            };
            let candidate_score = score(&candidate.render(), steps.len() + 1)?;
            let accepted = candidate_score >= baseline - cfg.epsilon;
            let n = tree.node(node).expect("node from the original tree");
            steps.push(Step {
                node,
                label: n.label.clone(),
                depth,
                leaves_removed: current.leaf_indices_under(node),
                candidate_score,
                baseline,
                accepted,
            });
            if accepted {
                current = match cfg.baseline_mode {
                    BaselineMode::Current => candidate,
                    BaselineMode::PaperLiteral => current.remove_subtree(node)?,
                };
                if cfg.baseline_mode == BaselineMode::Current {
                    running = candidate_score;
                }
            }
        }
    }

    let compressed_definition = current.render();
    if compressed_definition.trim().is_empty() && !cfg.allow_empty_result {
        return Err(StdcError::EmptyResult { steps: steps.len() });
    }
    let fit_score_after = match cfg.baseline_mode {
        BaselineMode::Current => running,
        BaselineMode::PaperLiteral => score(&compressed_definition, steps.len() + 1)?,
    };
    let mut kept_leaves = vec![false; tree.original_leaf_count()];
    for i in current.leaf_indices_under(current.root()) {
        kept_leaves[i] = true;
    }
    let ratio = compression_ratio(&full_definition, &compressed_definition).map_err(|_| StdcError::EmptyDefinition)?;
    Ok(CompressionResult {
        task_id: task.id.clone(),
        ratio,
        fit_score_before: full_score,
        fit_score_after,
        steps,
        baseline_mode: cfg.baseline_mode,
        epsilon: cfg.epsilon,
        fit_instance_ids: fit.instance_ids.clone(),
        source_definition: task.definition.clone(),
        leaf_tokens: tree.tokens().into_iter().map(str::to_string).collect(),
        kept_leaves,
        full_definition,
        compressed_definition,
    })
}

/// Re-applies the accepted removals, in order, to the original tree.
pub fn replay(tree: &ParseTree, result: &CompressionResult) -> Result<String, ParseError> {
    let mut t = tree.clone();
    for node in result.accepted_nodes() {
        t = t.remove_subtree(node)?;
    }
    Ok(t.render())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageRule {
    /// Count instances whose score strictly increases.
    #[default]
    Strict,
    /// Count instances whose score does not decrease.
    NonStrict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub before: f64,
    pub after: f64,
    pub coverage: f64,
    pub coverage_rule: CoverageRule,
    pub per_instance_before: Vec<f64>,
    pub per_instance_after: Vec<f64>,
}

/// Fraction of paired scores where `after` beats `before` under `rule`.
pub fn coverage(before: &[f64], after: &[f64], rule: CoverageRule) -> f64 {
    if before.is_empty() {
        return 0.0;
    }
    let hits = before
        .iter()
        .zip(after)
        .filter(|(b, a)| match rule {
            CoverageRule::Strict => a > b,
            CoverageRule::NonStrict => a >= b,
        })
        .count();
    hits as f64 / before.len() as f64
}

pub fn evaluate_holdout(
    task: &Task,
    result: &CompressionResult,
    holdout: &ExampleSet,
    scorer: &Scorer,
    rule: CoverageRule,
) -> Result<HoldoutReport, StdcError> {
    if holdout.instance_ids.iter().any(|id| result.fit_instance_ids.contains(id)) {
        return Err(StdcError::HoldoutOverlap);
    }
    let before = scorer
        .score(&result.full_definition, task, holdout)
        .map_err(|source| StdcError::Scorer { step: 0, source })?;
    let after = scorer
        .score(&result.compressed_definition, task, holdout)
        .map_err(|source| StdcError::Scorer { step: 1, source })?;
    Ok(HoldoutReport {
        before: before.mean_score,
        after: after.mean_score,
        coverage: coverage(&before.per_instance, &after.per_instance, rule),
        coverage_rule: rule,
        per_instance_before: before.per_instance,
        per_instance_after: after.per_instance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub before: usize,
    pub after: usize,
    pub kept_fraction: f64,
}

pub const UNANNOTATED: &str = "unannotated";

/// Token counts per content category before and after compression. Tokens
/// covered by no span are reported under [`UNANNOTATED`]. Only buckets with
/// at least one token appear.
pub fn category_retention(
    result: &CompressionResult,
    ann: &AnnotationSet,
) -> Result<BTreeMap<String, Retention>, StdcError> {
    let report = validate_spans(&result.source_definition, ann);
    if !report.is_empty() {
        return Err(StdcError::Validation(report));
    }
    let offsets = align_tokens(&result.leaf_tokens, &result.source_definition);
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, off) in offsets.iter().enumerate() {
        let kept = result.kept_leaves.get(i).copied().unwrap_or(false);
        let mut buckets: Vec<&str> = match off {
            Some((s, e)) => ContentCategory::ALL
                .iter()
                .filter(|c| ann.spans_of(**c).any(|sp| sp.start < *e && *s < sp.end))
                .map(|c| c.as_str())
                .collect(),
            None => vec![],
        };
        if buckets.is_empty() {
            buckets.push(UNANNOTATED);
        }
        for b in buckets {
            let entry = counts.entry(b.to_string()).or_default();
            entry.0 += 1;
            entry.1 += kept as usize;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(k, (before, after))| {
            (
                k,
                Retention {
                    before,
                    after,
                    kept_fraction: after as f64 / before as f64,
                },
            )
        })
        .collect())
}
