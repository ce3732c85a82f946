//! Annotated ablations, the Shuffled / Metadata / No-Def baseline
//! definitions, and token-retention accounting (%C).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::annotations::{char_boundaries, validate_annotation, AnnotationSet, ContentCategory, ValidationReport};
use crate::corpus::{Task, TaskKind};

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("annotation does not validate against task `{task_id}`: {}", .report.issues.iter().map(|i| i.message.as_str()).collect::<Vec<_>>().join("; "))]
    Validation { task_id: String, report: ValidationReport },
    #[error("definition has no tokens")]
    EmptyDefinition,
    #[error("kept text has {kept} tokens, more than the {full} of the full text")]
    KeptExceedsFull { kept: usize, full: usize },
    #[error("classification task `{0}` has no label list")]
    MissingLabels(String),
    #[error("unknown ablation `{0}`")]
    UnknownSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    InputAdd,
    OutputAdd,
    AllAdd,
    LabelList,
    LabelDesc,
    AllLabel,
    AllOutput,
    AllInput,
}

impl AblationKind {
    pub const ALL: [AblationKind; 8] = [
        AblationKind::InputAdd,
        AblationKind::OutputAdd,
        AblationKind::AllAdd,
        AblationKind::LabelList,
        AblationKind::LabelDesc,
        AblationKind::AllLabel,
        AblationKind::AllOutput,
        AblationKind::AllInput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::InputAdd => "input_add",
            AblationKind::OutputAdd => "output_add",
            AblationKind::AllAdd => "all_add",
            AblationKind::LabelList => "label_list",
            AblationKind::LabelDesc => "label_desc",
            AblationKind::AllLabel => "all_label",
            AblationKind::AllOutput => "all_output",
            AblationKind::AllInput => "all_input",
        }
    }

    pub fn removed_categories(self) -> BTreeSet<ContentCategory> {
        use ContentCategory::*;
        let cats: &[ContentCategory] = match self {
            AblationKind::InputAdd => &[AdditionalInputDetails],
            AblationKind::OutputAdd => &[AdditionalOutputDetails],
            AblationKind::AllAdd => &[AdditionalInputDetails, AdditionalOutputDetails],
            AblationKind::LabelList => &[LabelList],
            AblationKind::LabelDesc => &[LabelDefinition],
            AblationKind::AllLabel => &[LabelList, LabelDefinition],
            AblationKind::AllOutput => &[OutputContent, AdditionalOutputDetails, LabelList, LabelDefinition],
            AblationKind::AllInput => &[InputContent, AdditionalInputDetails],
        };
        cats.iter().copied().collect()
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = AblationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AblationError::UnknownSpec(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationSpec {
    pub name: AblationKind,
    pub removed_categories: BTreeSet<ContentCategory>,
}

impl From<AblationKind> for AblationSpec {
    fn from(name: AblationKind) -> Self {
        AblationSpec {
            name,
            removed_categories: name.removed_categories(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblatedDefinition {
    pub task_id: String,
    pub spec_name: String,
    pub text: String,
    pub tokens_kept: usize,
    pub tokens_full: usize,
}

impl AblatedDefinition {
    pub fn ratio(&self) -> f64 {
        if self.tokens_full == 0 {
            return 0.0;
        }
        self.tokens_kept as f64 / self.tokens_full as f64
    }
}

pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Trims the ends and shortens each inner whitespace run to its first
/// character. Only deletes characters.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev_ws = false;
    for c in text.trim().chars() {
        let ws = c.is_whitespace();
        if !(ws && prev_ws) {
            out.push(c);
        }
        prev_ws = ws;
    }
    out
}

/// Deletes the characters covered by `spans` (char offsets), then collapses whitespace.
pub fn delete_char_ranges(text: &str, ranges: &[(usize, usize)]) -> String {
    let bounds = char_boundaries(text);
    let n = bounds.len() - 1;
    let mut keep = vec![true; n];
    for &(s, e) in ranges {
        for k in keep.iter_mut().take(e.min(n)).skip(s) {
            *k = false;
        }
    }
    let mut kept = String::with_capacity(text.len());
    for (i, k) in keep.iter().enumerate() {
        if *k {
            kept.push_str(&text[bounds[i]..bounds[i + 1]]);
        }
    }
    collapse_whitespace(&kept)
}

pub fn apply_ablation(
    task: &Task,
    ann: &AnnotationSet,
    spec: &AblationSpec,
) -> Result<AblatedDefinition, AblationError> {
    let report = validate_annotation(task, ann);
    if !report.is_empty() {
        return Err(AblationError::Validation {
            task_id: task.id.clone(),
            report,
        });
    }
    // Input mentions live inside action content and are never removed on
    // their own; no spec lists them.
    let ranges: Vec<(usize, usize)> = ann
        .spans
        .iter()
        .filter(|s| s.category != ContentCategory::InputMention)
        .filter(|s| spec.removed_categories.contains(&s.category))
        .map(|s| (s.start, s.end))
        .collect();
    let text = if ranges.is_empty() {
        collapse_whitespace(&task.definition)
    } else {
        delete_char_ranges(&task.definition, &ranges)
    };
    Ok(AblatedDefinition {
        task_id: task.id.clone(),
        spec_name: spec.name.as_str().to_string(),
        tokens_kept: whitespace_token_count(&text),
        tokens_full: whitespace_token_count(&task.definition),
        text,
    })
}

/// Seeded Fisher–Yates over whitespace tokens, re-joined with single spaces.
pub fn shuffle_definition(text: &str, seed: u64) -> String {
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tokens.shuffle(&mut rng);
    tokens.join(" ")
}

pub const GENERATION_LABEL_SLOT: &str = "generate free text";

pub fn build_metadata_definition(task: &Task) -> Result<String, AblationError> {
    let labels = match task.kind {
        TaskKind::Generation => GENERATION_LABEL_SLOT.to_string(),
        TaskKind::Classification => match &task.label_list {
            Some(l) if !l.is_empty() => l.join(", "),
            _ => return Err(AblationError::MissingLabels(task.id.clone())),
        },
    };
    for lint in metadata_lints(task) {
        log::warn!("{}: {lint}", task.id);
    }
    Ok(format!(
        "Category: {}. Reasoning type: {}. Domain: {}. Label list: {}",
        task.category,
        task.reasoning_types.join(", "),
        task.domains.join(", "),
        labels
    ))
}

/// Empty metadata slots, reported as warnings.
pub fn metadata_lints(task: &Task) -> Vec<String> {
    let mut out = Vec::new();
    if task.category.trim().is_empty() {
        out.push("empty category slot".to_string());
    }
    if task.reasoning_types.is_empty() {
        out.push("empty reasoning type slot".to_string());
    }
    if task.domains.is_empty() {
        out.push("empty domain slot".to_string());
    }
    out
}

/// The "No Def" baseline: an empty definition fed through the usual template.
pub const NO_DEFINITION: &str = "";

pub fn compression_ratio(full_text: &str, kept_text: &str) -> Result<f64, AblationError> {
    let full = whitespace_token_count(full_text);
    let kept = whitespace_token_count(kept_text);
    if full == 0 {
        return Err(AblationError::EmptyDefinition);
    }
    if kept > full {
        return Err(AblationError::KeptExceedsFull { kept, full });
    }
    Ok(kept as f64 / full as f64)
}

/// Case-folded, order-insensitive set of label verbalizers.
pub fn verbalizer_set(labels: &[String]) -> BTreeSet<String> {
    labels.iter().map(|l| l.trim().to_lowercase()).collect()
}

/// Groups tasks by whether their verbalizer set was seen during training.
#[derive(Debug, Clone, Default)]
pub struct VerbalizerIndex {
    seen: HashSet<BTreeSet<String>>,
}

impl VerbalizerIndex {
    pub fn from_training<'a>(tasks: impl IntoIterator<Item = &'a Task>) -> Self {
        VerbalizerIndex {
            seen: tasks
                .into_iter()
                .filter(|t| t.kind == TaskKind::Classification)
                .map(|t| verbalizer_set(t.labels()))
                .collect(),
        }
    }

    /// `None` for generation tasks, which have no verbalizers.
    pub fn is_seen(&self, task: &Task) -> Option<bool> {
        (task.kind == TaskKind::Classification).then(|| self.seen.contains(&verbalizer_set(task.labels())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::Span;
    use crate::corpus::Demonstration;
    use ContentCategory::*;

    const DEF: &str = "You are given a review. Classify it. The labels are positive and negative.";

    fn task(def: &str) -> Task {
        Task {
            id: "t".into(),
            name: "t".into(),
            definition: def.into(),
            category: "Textual Entailment".into(),
            domains: vec!["News".into()],
            reasoning_types: vec!["Deductive".into()],
            kind: TaskKind::Classification,
            label_list: Some(vec!["Yes".into(), "No".into()]),
            demonstrations: vec![
                Demonstration { input: "a".into(), output: "b".into(), explanation: None };
                2
            ],
            instances: vec![],
        }
    }

    fn ann() -> AnnotationSet {
        AnnotationSet {
            task_id: "t".into(),
            annotator: "a".into(),
            spans: vec![
                Span::new(0, 23, InputContent),
                Span::new(24, 36, ActionContent),
                Span::new(37, 74, LabelList),
            ],
        }
    }

    #[test]
    fn label_list_ablation() {
        let out = apply_ablation(&task(DEF), &ann(), &AblationKind::LabelList.into()).unwrap();
        assert_eq!(out.text, "You are given a review. Classify it.");
        assert_eq!((out.tokens_kept, out.tokens_full), (7, 13));
    }

    #[test]
    fn all_input_ablation() {
        let out = apply_ablation(&task(DEF), &ann(), &AblationKind::AllInput.into()).unwrap();
        assert_eq!(out.text, "Classify it. The labels are positive and negative.");
    }

    #[test]
    fn absent_category_keeps_text() {
        let out = apply_ablation(&task(DEF), &ann(), &AblationKind::InputAdd.into()).unwrap();
        assert_eq!(out.text, DEF);
        assert_eq!(out.ratio(), 1.0);
    }

    #[test]
    fn invalid_annotation_is_rejected() {
        let mut a = ann();
        a.spans.push(Span::new(70, 90, OutputContent));
        assert!(matches!(
            apply_ablation(&task(DEF), &a, &AblationKind::AllAdd.into()),
            Err(AblationError::Validation { .. })
        ));
    }

    #[test]
    fn spec_table() {
        assert_eq!(
            AblationKind::AllOutput.removed_categories(),
            [OutputContent, AdditionalOutputDetails, LabelList, LabelDefinition].into_iter().collect()
        );
        for k in AblationKind::ALL {
            assert_eq!(k.as_str().parse::<AblationKind>().unwrap(), k);
            assert!(!k.removed_categories().contains(&InputMention));
        }
    }

    #[test]
    fn shuffle_properties() {
        assert_eq!(shuffle_definition("a b c", 5), shuffle_definition("a b c", 5));
        let text = "one two three four five six seven";
        let mut a: Vec<&str> = text.split_whitespace().collect();
        let s = shuffle_definition(text, 9);
        let mut b: Vec<&str> = s.split_whitespace().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(shuffle_definition("x", 1), "x");
    }

    #[test]
    fn metadata_template() {
        let t = task(DEF);
        assert_eq!(
            build_metadata_definition(&t).unwrap(),
            "Category: Textual Entailment. Reasoning type: Deductive. Domain: News. Label list: Yes, No"
        );
        let mut g = task(DEF);
        g.kind = TaskKind::Generation;
        g.label_list = None;
        assert!(build_metadata_definition(&g).unwrap().ends_with(". Label list: generate free text"));

        let mut e = task(DEF);
        e.domains.clear();
        assert!(build_metadata_definition(&e).unwrap().contains("Domain: ."));
        assert_eq!(metadata_lints(&e), vec!["empty domain slot"]);

        let mut bad = task(DEF);
        bad.label_list = None;
        assert!(matches!(build_metadata_definition(&bad), Err(AblationError::MissingLabels(_))));
    }

    #[test]
    fn ratio_arithmetic() {
        let full = vec!["w"; 100].join(" ");
        let kept = vec!["w"; 56].join(" ");
        assert!((compression_ratio(&full, &kept).unwrap() - 0.56).abs() < 1e-12);
        assert_eq!(compression_ratio(&full, &full).unwrap(), 1.0);
        assert_eq!(compression_ratio(&full, "").unwrap(), 0.0);
        assert!(matches!(compression_ratio("  ", ""), Err(AblationError::EmptyDefinition)));
        assert!(compression_ratio("a", "a b").is_err());
    }

    #[test]
    fn collapse_only_deletes() {
        assert_eq!(collapse_whitespace("  a \n\n b  "), "a b");
        assert_eq!(collapse_whitespace("a\n  b"), "a\nb");
    }

    #[test]
    fn seen_verbalizers() {
        let train = task(DEF);
        let idx = VerbalizerIndex::from_training([&train]);
        let mut eval = task(DEF);
        eval.label_list = Some(vec!["no".into(), "YES".into()]);
        assert_eq!(idx.is_seen(&eval), Some(true));
        eval.label_list = Some(vec!["True".into(), "False".into()]);
        assert_eq!(idx.is_seen(&eval), Some(false));
    }
}
