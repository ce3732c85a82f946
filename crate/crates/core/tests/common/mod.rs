//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use defkit::annotations::{AnnotationSet, ContentCategory, Span};
use defkit::corpus::{Demonstration, ExampleSet, Instance, Role, Task, TaskKind};
use defkit::digest::derive_seed;
use defkit::scorer::{Backend, BackendRequest, BackendResponse, ScorerError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/demo")
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name))
        .expect("golden file")
}

const PHRASE_LABELS: [&str; 6] = ["S", "NP", "VP", "PP", "SBAR", "ADJP"];
const TAGS: [&str; 8] = ["DT", "NN", "NNS", "VB", "VBZ", "JJ", "IN", "RB"];
const WORDS: [&str; 12] = [
    "the", "model", "reads", "each", "review", "and", "answers", "with", "one", "label", "quickly", "text",
];

/// Random escape-free bracketed tree: depth ≤ `max_depth` (root = 1,
/// tokens counted), at most `max_leaves` leaves.
pub fn random_tree(rng: &mut ChaCha8Rng, max_depth: usize, max_leaves: usize) -> String {
    assert!(max_depth >= 3 && max_leaves >= 1);
    let mut budget = max_leaves;
    let mut out = String::new();
    node(rng, 1, max_depth, &mut budget, &mut out, true);
    out
}

fn node(rng: &mut ChaCha8Rng, depth: usize, max_depth: usize, budget: &mut usize, out: &mut String, root: bool) {
    // a preterminal at `depth` puts its token at depth + 1
    let preterminal = !root && (depth + 1 >= max_depth || *budget <= 1 || rng.gen_bool(0.35));
    if preterminal {
        *budget = budget.saturating_sub(1);
        out.push_str(&format!(
            "({} {})",
            TAGS[rng.gen_range(0..TAGS.len())],
            WORDS[rng.gen_range(0..WORDS.len())]
        ));
        return;
    }
    out.push('(');
    out.push_str(PHRASE_LABELS[rng.gen_range(0..PHRASE_LABELS.len())]);
    let n = rng.gen_range(1..=3);
    for _ in 0..n {
        if *budget == 0 {
            break;
        }
        out.push(' ');
        node(rng, depth + 1, max_depth, budget, out, false);
    }
    out.push(')');
}

/// Deterministic pseudo-random per-instance scores keyed on the definition.
pub struct SeededMockBackend {
    pub seed: u64,
}

impl Backend for SeededMockBackend {
    fn id(&self) -> String {
        format!("seeded_mock:{}", self.seed)
    }

    fn respond(&self, req: &BackendRequest<'_>) -> Result<BackendResponse, ScorerError> {
        let seed = self.seed.to_string();
        Ok(BackendResponse::Scores(
            req.instances
                .iter()
                .map(|inst| {
                    let h = derive_seed(["mock", &seed, req.definition, &inst.id]);
                    (h >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect(),
        ))
    }
}

pub fn simple_task(id: &str, definition: &str, kind: TaskKind, labels: Option<Vec<String>>, instances: Vec<Instance>) -> Task {
    Task {
        id: id.into(),
        name: id.into(),
        definition: definition.into(),
        category: "Synthetic".into(),
        domains: vec!["Tests".into()],
        reasoning_types: vec!["None".into()],
        kind,
        label_list: labels,
        demonstrations: vec![
            Demonstration {
                input: "first demo".into(),
                output: "first".into(),
                explanation: None,
            },
            Demonstration {
                input: "second demo".into(),
                output: "second".into(),
                explanation: None,
            },
        ],
        instances,
    }
}

pub fn fit_set(task: &Task, n: usize) -> ExampleSet {
    ExampleSet {
        task_id: task.id.clone(),
        instance_ids: task.instances.iter().take(n).map(|i| i.id.clone()).collect(),
        role: Role::Fit,
    }
}

/// A synthetic classification task, its tree and a tight annotation:
/// "Given a {noun}, decide whether it is {adj}. {verb} {a} or {b}."
pub struct SyntheticTask {
    pub task: Task,
    pub tree: String,
    pub annotation: AnnotationSet,
}

pub fn synthetic_classification(i: usize) -> SyntheticTask {
    const NOUNS: [&str; 5] = ["sentence", "review", "tweet", "headline", "question"];
    const ADJS: [&str; 4] = ["sarcastic", "positive", "formal", "answerable"];
    const LABELS: [(&str, &str); 4] = [("Yes", "No"), ("True", "False"), ("Positive", "Negative"), ("Valid", "Invalid")];
    const VERBS: [&str; 2] = ["Answer", "Output"];
    let noun = NOUNS[i % NOUNS.len()];
    let adj = ADJS[(i / 2) % ADJS.len()];
    let (a, b) = LABELS[i % LABELS.len()];
    let verb = VERBS[(i / 3) % VERBS.len()];

    let definition = format!("Given a {noun}, decide whether it is {adj}. {verb} {a} or {b}.");
    let tree = format!(
        "(S (PP (VBN Given) (NP (DT a) (NN {noun}))) (, ,) (VP (VB decide) (SBAR (IN whether) (S (NP (PRP it)) (VP (VBZ is) (ADJP (JJ {adj})))))) (. .)) \
         (S (VP (VB {verb}) (NP (UH {a}) (CC or) (UH {b}))) (. .))"
    );
    let span = |text: &str, cat: ContentCategory| {
        let start_byte = definition.find(text).expect("span text present");
        let start = definition[..start_byte].chars().count();
        Span::new(start, start + text.chars().count(), cat)
    };
    let annotation = AnnotationSet {
        task_id: format!("syn{i:02}"),
        annotator: "fixture".into(),
        spans: vec![
            span(&format!("Given a {noun}"), ContentCategory::InputContent),
            span(&format!("decide whether it is {adj}"), ContentCategory::ActionContent),
            span(&format!("{a} or {b}"), ContentCategory::LabelList),
        ],
    };
    let instances = (0..8)
        .map(|k| Instance {
            id: format!("i{k}"),
            input: format!("{noun} number {k}"),
            references: vec![if k % 2 == 0 { a } else { b }.to_string()],
        })
        .collect();
    SyntheticTask {
        task: simple_task(
            &format!("syn{i:02}"),
            &definition,
            TaskKind::Classification,
            Some(vec![a.to_string(), b.to_string()]),
            instances,
        ),
        tree,
        annotation,
    }
}
