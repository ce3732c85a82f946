//! Structured input / action / output definitions and the meta-tuning
//! instances derived from them.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::annotations::{AnnotationSet, ContentCategory, Span};
use crate::corpus::{Task, TaskKind};
use crate::parse::{align_tokens, detokenize, NodeId, ParseTree};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TripletError {
    #[error("task `{task_id}` has no {category} span")]
    MissingSpan { task_id: String, category: ContentCategory },
    #[error("task `{0}` needs at least two demonstrations")]
    TooFewDemonstrations(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletDefinition {
    pub task_id: String,
    pub input_entry: String,
    pub action_entry: String,
    pub output_entry: Vec<String>,
    /// Set when an entry fell back to raw span text instead of a constituent.
    pub needs_review: bool,
}

/// JSONL row layout for triplet files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRow {
    pub task_id: String,
    pub input: Vec<String>,
    pub action: Vec<String>,
    pub output: Vec<String>,
    pub needs_review: bool,
}

impl From<&TripletDefinition> for TripletRow {
    fn from(t: &TripletDefinition) -> Self {
        TripletRow {
            task_id: t.task_id.clone(),
            input: vec![t.input_entry.clone()],
            action: vec![t.action_entry.clone()],
            output: t.output_entry.clone(),
            needs_review: t.needs_review,
        }
    }
}

const AUXILIARIES: &[&str] = &[
    "am", "are", "be", "been", "being", "can", "could", "did", "do", "does", "going", "had", "has", "have",
    "is", "may", "might", "must", "need", "needs", "shall", "should", "want", "wants", "was", "were", "will",
    "would", "'re", "'s", "'m", "'ll", "'ve", "'d",
];

fn is_np(label: &str) -> bool {
    label == "NP" || label.starts_with("NP-")
}

fn is_vp(label: &str) -> bool {
    label == "VP" || label.starts_with("VP-")
}

fn clean_entry(text: &str) -> String {
    text.trim()
        .trim_end_matches(['.', ',', ';', ':'])
        .trim_end()
        .to_string()
}

fn span_text(definition: &str, span: &Span) -> String {
    definition
        .chars()
        .skip(span.start)
        .take(span.end - span.start)
        .collect()
}

/// Tree leaves located in the definition text, indexed by original position.
struct Aligned<'t> {
    tree: &'t ParseTree,
    offsets: Vec<Option<(usize, usize)>>,
}

impl<'t> Aligned<'t> {
    fn new(tree: &'t ParseTree, definition: &str) -> Self {
        Aligned {
            tree,
            offsets: align_tokens(&tree.tokens(), definition),
        }
    }

    fn in_span(&self, leaf_index: usize, span: &Span) -> bool {
        self.offsets
            .get(leaf_index)
            .copied()
            .flatten()
            .is_some_and(|(s, e)| span.start < e && s < span.end)
    }

    /// Lowest NP with the most leaves inside `span`, ties broken by fewest
    /// leaves outside it.
    fn best_np(&self, span: &Span) -> Option<NodeId> {
        self.tree
            .preorder()
            .into_iter()
            .filter(|&id| is_np(&self.tree.node(id).unwrap().label))
            .map(|id| {
                let leaves = self.tree.leaf_indices_under(id);
                let inside = leaves.iter().filter(|&&l| self.in_span(l, span)).count();
                (id, inside, leaves.len() - inside, self.tree.node(id).unwrap().depth)
            })
            .filter(|&(_, inside, _, _)| inside > 0)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)).then(a.3.cmp(&b.3)))
            .map(|(id, ..)| id)
    }

    /// Lowest VP above the main (non-auxiliary) verb inside `span`.
    fn action_vp(&self, span: &Span) -> Option<NodeId> {
        let verbs: Vec<NodeId> = self
            .tree
            .leaves()
            .into_iter()
            .filter(|&l| {
                let node = self.tree.node(l).unwrap();
                node.leaf_index.is_some_and(|i| self.in_span(i, span))
                    && node
                        .parent
                        .and_then(|p| self.tree.node(p))
                        .is_some_and(|p| p.label.starts_with("VB"))
            })
            .collect();
        let main = verbs
            .iter()
            .copied()
            .find(|&l| {
                let tok = self.tree.node(l).unwrap().token.as_deref().unwrap_or_default();
                !AUXILIARIES.contains(&tok.to_lowercase().as_str())
            })
            .or_else(|| verbs.first().copied())?;
        let mut cur = self.tree.node(main)?.parent;
        while let Some(id) = cur {
            let node = self.tree.node(id)?;
            if is_vp(&node.label) {
                return Some(id);
            }
            cur = node.parent;
        }
        None
    }

    /// Direct-object NP of the VP, rendered without trailing clausal
    /// modifiers; prepositional modifiers stay attached.
    fn object_np(&self, vp: NodeId) -> Option<String> {
        let mut np = self
            .tree
            .node(vp)?
            .children
            .iter()
            .copied()
            .find(|&c| is_np(&self.tree.node(c).unwrap().label))?;
        loop {
            let children = &self.tree.node(np)?.children;
            let keep = children
                .iter()
                .rposition(|&c| !is_clausal(&self.tree.node(c).unwrap().label))
                .map_or(0, |i| i + 1);
            let kept = &children[..keep];
            match kept {
                [only] if is_np(&self.tree.node(*only).unwrap().label) => np = *only,
                [] => return Some(self.tree.render_node(np)),
                _ => {
                    let tokens: Vec<&str> = kept
                        .iter()
                        .flat_map(|&c| self.tree.leaves_under(c))
                        .filter_map(|l| self.tree.node(l).and_then(|n| n.token.as_deref()))
                        .collect();
                    return Some(detokenize(&tokens));
                }
            }
        }
    }
}

fn is_clausal(label: &str) -> bool {
    let base = label.split('-').next().unwrap_or(label);
    matches!(base, "SBAR" | "S" | "SQ" | "SINV" | "SBARQ" | "VP" | "," | ":" | ".")
}

fn first_span(ann: &AnnotationSet, category: ContentCategory) -> Option<&Span> {
    ann.spans_of(category).min_by_key(|s| s.start)
}

pub fn build_triplet(task: &Task, ann: &AnnotationSet, tree: &ParseTree) -> Result<TripletDefinition, TripletError> {
    let missing = |category| TripletError::MissingSpan {
        task_id: task.id.clone(),
        category,
    };
    let input_span = first_span(ann, ContentCategory::InputContent).ok_or_else(|| missing(ContentCategory::InputContent))?;
    let action_span =
        first_span(ann, ContentCategory::ActionContent).ok_or_else(|| missing(ContentCategory::ActionContent))?;

    let aligned = Aligned::new(tree, &task.definition);
    let mut needs_review = false;
    let mut fallback = |span: &Span| {
        needs_review = true;
        clean_entry(&span_text(&task.definition, span))
    };

    let input_entry = match aligned.best_np(input_span) {
        Some(np) => clean_entry(&tree.render_node(np)),
        None => fallback(input_span),
    };
    let action_vp = aligned.action_vp(action_span);
    let action_entry = match action_vp {
        Some(vp) => clean_entry(&tree.render_node(vp)),
        None => fallback(action_span),
    };

    let output_entry = match task.kind {
        TaskKind::Classification => {
            let mut out = vec![task.labels().join(", ")];
            let mut defs: Vec<&Span> = ann.spans_of(ContentCategory::LabelDefinition).collect();
            defs.sort_by_key(|s| s.start);
            out.extend(defs.into_iter().map(|s| clean_entry(&span_text(&task.definition, s))));
            out
        }
        TaskKind::Generation => match action_vp.and_then(|vp| aligned.object_np(vp)) {
            Some(np) => vec![clean_entry(&np)],
            None => match first_span(ann, ContentCategory::OutputContent) {
                Some(s) => vec![fallback(s)],
                None => {
                    needs_review = true;
                    vec![action_entry.clone()]
                }
            },
        },
    };

    Ok(TripletDefinition {
        task_id: task.id.clone(),
        input_entry,
        action_entry,
        output_entry: output_entry.into_iter().filter(|e| !e.is_empty()).collect(),
        needs_review,
    })
}

pub const INPUT_MARKER: &str = "Task input: ";
pub const ACTION_MARKER: &str = ". Task action: ";
pub const OUTPUT_MARKER: &str = ". Task output: ";

pub fn render_triplet(t: &TripletDefinition) -> String {
    format!(
        "{INPUT_MARKER}{}{ACTION_MARKER}{}{OUTPUT_MARKER}{}",
        t.input_entry,
        t.action_entry,
        t.output_entry.join("; ")
    )
}

/// Splits a rendered triplet back into its three entries.
pub fn split_rendered(text: &str) -> Option<(&str, &str, &str)> {
    let rest = text.strip_prefix(INPUT_MARKER)?;
    let (input, rest) = rest.split_once(ACTION_MARKER)?;
    let (action, output) = rest.split_once(OUTPUT_MARKER)?;
    Some((input, action, output))
}

/// Plain-text rendering of a token list, for callers holding raw tokens.
pub fn entry_from_tokens(tokens: &[&str]) -> String {
    clean_entry(&detokenize(tokens))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaTag {
    TaskInput,
    TaskAction,
    TaskOutput,
}

impl MetaTag {
    pub const ALL: [MetaTag; 3] = [MetaTag::TaskInput, MetaTag::TaskAction, MetaTag::TaskOutput];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaTag::TaskInput => "⟨Task input⟩",
            MetaTag::TaskAction => "⟨Task action⟩",
            MetaTag::TaskOutput => "⟨Task output⟩",
        }
    }
}

impl fmt::Display for MetaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaTuneInstance {
    pub tag: MetaTag,
    pub source: String,
    pub target: String,
}

/// How the output entry becomes meta-tuning targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputTargets {
    /// One instance, entries joined with "; ".
    #[default]
    Joined,
    /// One instance per output entry.
    Split,
}

pub const META_FRAME: &str = "Generate segments of task definitions based on the tag and two examples.";

pub fn meta_source(task: &Task, tag: MetaTag) -> Result<String, TripletError> {
    let [d1, d2, ..] = task.demonstrations.as_slice() else {
        return Err(TripletError::TooFewDemonstrations(task.id.clone()));
    };
    Ok(format!(
        "{META_FRAME} {tag}. Input: {} Output: {}. Input: {} Output: {}",
        d1.input, d1.output, d2.input, d2.output
    ))
}

pub fn meta_tuning_instances(task: &Task, t: &TripletDefinition) -> Result<Vec<MetaTuneInstance>, TripletError> {
    meta_tuning_instances_with(task, t, OutputTargets::Joined)
}

pub fn meta_tuning_instances_with(
    task: &Task,
    t: &TripletDefinition,
    outputs: OutputTargets,
) -> Result<Vec<MetaTuneInstance>, TripletError> {
    let mut out = Vec::with_capacity(3);
    for tag in MetaTag::ALL {
        let source = meta_source(task, tag)?;
        let targets = match (tag, outputs) {
            (MetaTag::TaskInput, _) => vec![t.input_entry.clone()],
            (MetaTag::TaskAction, _) => vec![t.action_entry.clone()],
            (MetaTag::TaskOutput, OutputTargets::Joined) => vec![t.output_entry.join("; ")],
            (MetaTag::TaskOutput, OutputTargets::Split) => t.output_entry.clone(),
        };
        out.extend(targets.into_iter().map(|target| MetaTuneInstance {
            tag,
            source: source.clone(),
            target,
        }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Demonstration;
    use ContentCategory::*;

    fn task(id: &str, def: &str, kind: TaskKind, labels: Option<Vec<&str>>) -> Task {
        Task {
            id: id.into(),
            name: id.into(),
            definition: def.into(),
            category: "c".into(),
            domains: vec![],
            reasoning_types: vec![],
            kind,
            label_list: labels.map(|l| l.into_iter().map(String::from).collect()),
            demonstrations: vec![
                Demonstration { input: "in1".into(), output: "out1".into(), explanation: None },
                Demonstration { input: "in2".into(), output: "out2".into(), explanation: None },
            ],
            instances: vec![],
        }
    }

    fn ann(id: &str, spans: Vec<Span>) -> AnnotationSet {
        AnnotationSet { task_id: id.into(), annotator: "a".into(), spans }
    }

    pub(crate) const TASK6_DEF: &str = "Given a statement, generate a question such that the answer is contained in that statement.";
    pub(crate) const TASK6_TREE: &str = "(S (PP (VBN Given) (NP (DT a) (NN statement))) (, ,) (VP (VB generate) (NP (NP (DT a) (NN question)) (SBAR (IN such) (IN that) (S (NP (DT the) (NN answer)) (VP (VBZ is) (VP (VBN contained) (PP (IN in) (NP (DT that) (NN statement))))))))) (. .))";

    fn task6() -> (Task, AnnotationSet, ParseTree) {
        (
            task("task1580", TASK6_DEF, TaskKind::Generation, None),
            ann("task1580", vec![Span::new(0, 18, InputContent), Span::new(19, 91, ActionContent)]),
            ParseTree::parse_bracketed(TASK6_TREE).unwrap(),
        )
    }

    #[test]
    fn task6_triplet() {
        let (t, a, tree) = task6();
        let trip = build_triplet(&t, &a, &tree).unwrap();
        assert_eq!(trip.input_entry, "a statement");
        assert_eq!(trip.action_entry, "generate a question such that the answer is contained in that statement");
        assert_eq!(trip.output_entry, vec!["a question"]);
        assert!(!trip.needs_review);
        assert_eq!(
            render_triplet(&trip),
            "Task input: a statement. Task action: generate a question such that the answer is contained in that statement. Task output: a question"
        );
    }

    #[test]
    fn task1_triplet() {
        let def = "You are given a review about a place. You need to provide a rating from \"1 star\" to \"5 stars\" for this place.";
        let tree = ParseTree::parse_bracketed(
            "(S (NP (PRP You)) (VP (VBP are) (VP (VBN given) (NP (NP (DT a) (NN review)) (PP (IN about) (NP (DT a) (NN place)))))) (. .)) \
             (S (NP (PRP You)) (VP (VBP need) (S (VP (TO to) (VP (VB provide) (NP (NP (DT a) (NN rating)) (PP (IN from) (NP (`` \") (CD 1) (NN star) ('' \"))) (PP (TO to) (NP (`` \") (CD 5) (NNS stars) ('' \")))) (PP (IN for) (NP (DT this) (NN place))))))) (. .))",
        )
        .unwrap();
        let t = task("task1292", def, TaskKind::Generation, None);
        let a = ann("task1292", vec![Span::new(0, 37, InputContent), Span::new(38, 110, ActionContent)]);
        let trip = build_triplet(&t, &a, &tree).unwrap();
        assert_eq!(trip.input_entry, "a review about a place");
        assert_eq!(trip.action_entry, "provide a rating from \"1 star\" to \"5 stars\" for this place");
        assert_eq!(trip.output_entry, vec!["a rating from \"1 star\" to \"5 stars\""]);
    }

    #[test]
    fn classification_output_entry() {
        let def = "Given a verb, answer if it is a negation. A verb is a negation if it does not happen.";
        let tree = ParseTree::parse_bracketed(
            "(S (PP (VBN Given) (NP (DT a) (NN verb))) (, ,) (VP (VB answer) (SBAR (IN if) (S (NP (PRP it)) (VP (VBZ is) (NP (DT a) (NN negation)))))) (. .)) \
             (S (NP (DT A) (NN verb)) (VP (VBZ is) (NP (DT a) (NN negation)) (SBAR (IN if) (S (NP (PRP it)) (VP (VBZ does) (RB not) (VP (VB happen)))))) (. .))",
        )
        .unwrap();
        let t = task("task383", def, TaskKind::Classification, Some(vec!["Yes", "No"]));
        let a = ann(
            "task383",
            vec![Span::new(0, 12, InputContent), Span::new(13, 40, ActionContent), Span::new(41, 85, LabelDefinition)],
        );
        let trip = build_triplet(&t, &a, &tree).unwrap();
        assert_eq!(trip.input_entry, "a verb");
        assert_eq!(trip.action_entry, "answer if it is a negation");
        assert_eq!(trip.output_entry, vec!["Yes, No", "A verb is a negation if it does not happen"]);
    }

    #[test]
    fn missing_action_span() {
        let (t, _, tree) = task6();
        let a = ann("task1580", vec![Span::new(0, 18, InputContent)]);
        assert_eq!(
            build_triplet(&t, &a, &tree),
            Err(TripletError::MissingSpan { task_id: "task1580".into(), category: ActionContent })
        );
    }

    #[test]
    fn fallback_sets_review_flag() {
        let (t, a, _) = task6();
        // a flat tree has no NP or VP to extract
        let flat = ParseTree::parse_bracketed(&format!("(X {})", TASK6_DEF.replace(',', " ,").replace('.', " ."))).unwrap();
        let trip = build_triplet(&t, &a, &flat).unwrap();
        assert!(trip.needs_review);
        assert_eq!(trip.input_entry, "Given a statement");
    }

    #[test]
    fn render_single_label() {
        let trip = TripletDefinition {
            task_id: "x".into(),
            input_entry: "two phrases".into(),
            action_entry: "decide".into(),
            output_entry: vec!["Yes, No".into()],
            needs_review: false,
        };
        let s = render_triplet(&trip);
        assert!(s.ends_with("Task output: Yes, No"));
        assert_eq!(split_rendered(&s), Some(("two phrases", "decide", "Yes, No")));
    }

    #[test]
    fn meta_instances() {
        let (t, a, tree) = task6();
        let trip = build_triplet(&t, &a, &tree).unwrap();
        let inst = meta_tuning_instances(&t, &trip).unwrap();
        assert_eq!(inst.len(), 3);
        assert_eq!(inst[0].tag, MetaTag::TaskInput);
        assert_eq!(inst[0].target, "a statement");
        assert_eq!(
            inst[0].source,
            "Generate segments of task definitions based on the tag and two examples. ⟨Task input⟩. Input: in1 Output: out1. Input: in2 Output: out2"
        );
        let rendered = render_triplet(&trip);
        assert!(inst.iter().all(|i| rendered.contains(&i.target)));

        let mut short = t.clone();
        short.demonstrations.pop();
        assert!(matches!(meta_tuning_instances(&short, &trip), Err(TripletError::TooFewDemonstrations(_))));
    }

    #[test]
    fn split_output_targets() {
        let trip = TripletDefinition {
            task_id: "x".into(),
            input_entry: "i".into(),
            action_entry: "a".into(),
            output_entry: vec!["Yes, No".into(), "Yes means yes".into()],
            needs_review: false,
        };
        let t = task("x", "d", TaskKind::Classification, Some(vec!["Yes", "No"]));
        assert_eq!(meta_tuning_instances(&t, &trip).unwrap()[2].target, "Yes, No; Yes means yes");
        assert_eq!(meta_tuning_instances_with(&t, &trip, OutputTargets::Split).unwrap().len(), 4);
    }
}
