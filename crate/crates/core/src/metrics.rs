//! Rouge-L (F1, max over references), score aggregation and the heuristic
//! baseline predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::corpus::{Instance, Task, TaskKind};
use crate::digest;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("reference list is empty")]
    EmptyReferenceList,
}

/// Normalized tokens: lowercased, every character outside `[a-z0-9]`
/// replaced by a space, split on whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn normalize(text: &str) -> TokenSeq {
        let cleaned: String = text
            .chars()
            .map(|c| {
                let c = c.to_ascii_lowercase();
                if c.is_ascii_alphanumeric() {
                    c
                } else {
                    ' '
                }
            })
            .collect();
        TokenSeq(cleaned.split_whitespace().map(str::to_string).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Longest common subsequence length, O(|a|·|b|) time and O(min) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

/// F1 from an LCS length and the two sequence lengths; 0 when either side is
/// empty or there is no overlap.
pub fn f1_from_lcs(lcs: usize, cand_len: usize, ref_len: usize) -> f64 {
    if lcs == 0 || cand_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand_len as f64;
    let r = lcs as f64 / ref_len as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_tokens(candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
    f1_from_lcs(
        lcs_length(candidate.tokens(), reference.tokens()),
        candidate.len(),
        reference.len(),
    )
}

pub fn rouge_l<S: AsRef<str>>(candidate: &str, references: &[S]) -> Result<f64, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::EmptyReferenceList);
    }
    let cand = TokenSeq::normalize(candidate);
    Ok(references
        .iter()
        .map(|r| rouge_l_tokens(&cand, &TokenSeq::normalize(r.as_ref())))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task_id: String,
    pub kind: TaskKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub overall: f64,
    /// `None` when no classification task contributed.
    pub cls: Option<f64>,
    pub gen: Option<f64>,
    pub per_task: BTreeMap<String, f64>,
    pub n_instances: BTreeMap<String, usize>,
    /// Instance-weighted mean, emitted alongside the task macro mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_overall: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-task means, then unweighted macro means over tasks. `None` on empty input.
pub fn aggregate(rows: &[ScoreRow]) -> Option<ScoreReport> {
    let mut by_task: BTreeMap<&str, (TaskKind, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = by_task.entry(&r.task_id).or_insert((r.kind, 0.0, 0));
        e.1 += r.score;
        e.2 += 1;
    }
    let per_task: BTreeMap<String, f64> = by_task
        .iter()
        .map(|(id, (_, s, n))| (id.to_string(), s / *n as f64))
        .collect();
    let of_kind = |k: TaskKind| {
        mean(
            by_task
                .iter()
                .filter(move |(_, v)| v.0 == k)
                .map(|(id, _)| per_task[*id]),
        )
    };
    Some(ScoreReport {
        overall: mean(per_task.values().copied())?,
        cls: of_kind(TaskKind::Classification),
        gen: of_kind(TaskKind::Generation),
        n_instances: by_task.iter().map(|(id, v)| (id.to_string(), v.2)).collect(),
        micro_overall: mean(rows.iter().map(|r| r.score)),
        per_task,
    })
}

/// Copies the input for generation tasks; draws a label uniformly for
/// classification tasks, seeded by (seed, task id, instance id).
pub fn heuristic_predict(task: &Task, instance: &Instance, seed: u64) -> String {
    match task.kind {
        TaskKind::Generation => instance.input.clone(),
        TaskKind::Classification => {
            let labels = task.labels();
            if labels.is_empty() {
                return String::new();
            }
            let seed_str = seed.to_string();
            let mut rng = ChaCha8Rng::seed_from_u64(digest::derive_seed([
                "heuristic",
                &seed_str,
                &task.id,
                &instance.id,
            ]));
            labels[rng.gen_range(0..labels.len())].clone()
        }
    }
}
