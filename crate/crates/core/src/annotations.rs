//! Content-category annotations over definitions, the rule-based
//! pre-splitter and Fleiss' kappa.
//!
//! Span offsets count Unicode scalar values (`char`s), not bytes.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use crate::corpus::Task;

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("rating matrix: {0}")]
    Matrix(String),
    #[error("degenerate rating matrix: expected agreement is 1")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentCategory {
    InputContent,
    ActionContent,
    OutputContent,
    LabelList,
    LabelDefinition,
    AdditionalInputDetails,
    AdditionalOutputDetails,
    InputMention,
}

impl ContentCategory {
    pub const ALL: [ContentCategory; 8] = [
        ContentCategory::InputContent,
        ContentCategory::ActionContent,
        ContentCategory::OutputContent,
        ContentCategory::LabelList,
        ContentCategory::LabelDefinition,
        ContentCategory::AdditionalInputDetails,
        ContentCategory::AdditionalOutputDetails,
        ContentCategory::InputMention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ContentCategory::InputContent => "input_content",
            ContentCategory::ActionContent => "action_content",
            ContentCategory::OutputContent => "output_content",
            ContentCategory::LabelList => "label_list",
            ContentCategory::LabelDefinition => "label_definition",
            ContentCategory::AdditionalInputDetails => "additional_input_details",
            ContentCategory::AdditionalOutputDetails => "additional_output_details",
            ContentCategory::InputMention => "input_mention",
        }
    }

    pub fn index(self) -> usize {
        ContentCategory::ALL.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for ContentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: ContentCategory,
}

impl Span {
    pub fn new(start: usize, end: usize, category: ContentCategory) -> Self {
        Span { start, end, category }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn contains_range(&self, start: usize, end: usize) -> bool {
        self.start <= start && end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub task_id: String,
    pub annotator: String,
    pub spans: Vec<Span>,
}

impl AnnotationSet {
    pub fn spans_of(&self, category: ContentCategory) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(move |s| s.category == category)
    }

    pub fn has(&self, category: ContentCategory) -> bool {
        self.spans_of(category).next().is_some()
    }
}

/// Reads an annotation JSONL file (one record per task and annotator).
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationSet>, AnnotationError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| AnnotationError::Json { line: i + 1, source })?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub spans: Vec<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, spans: Vec<usize>, message: String) {
        self.issues.push(Issue { spans, message });
    }
}

/// Lists every violated span invariant; an empty report means the set is
/// consistent with `task.definition`.
pub fn validate_annotation(task: &Task, ann: &AnnotationSet) -> ValidationReport {
    let mut report = validate_spans(&task.definition, ann);
    if ann.task_id != task.id {
        report.issues.insert(
            0,
            Issue {
                spans: vec![],
                message: format!("task id mismatch: annotation for `{}`, task `{}`", ann.task_id, task.id),
            },
        );
    }
    report
}

/// Span checks against a definition text, ignoring the task id.
pub fn validate_spans(definition: &str, ann: &AnnotationSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    let len = definition.chars().count();
    for (i, s) in ann.spans.iter().enumerate() {
        if s.start >= s.end {
            report.push(vec![i], format!("span {i}: empty or inverted ({}..{})", s.start, s.end));
        } else if s.end > len {
            report.push(vec![i], format!("span {i}: out of bounds ({}..{} > {len})", s.start, s.end));
        }
    }
    for (i, a) in ann.spans.iter().enumerate() {
        for (j, b) in ann.spans.iter().enumerate().skip(i + 1) {
            if !a.overlaps(b) {
                continue;
            }
            if a.category == b.category {
                report.push(vec![i, j], format!("spans {i} and {j}: overlapping {} spans", a.category));
                continue;
            }
            let pair = (a.category, b.category);
            let mention_in_action = matches!(
                pair,
                (ContentCategory::InputMention, ContentCategory::ActionContent)
                    | (ContentCategory::ActionContent, ContentCategory::InputMention)
            );
            if !mention_in_action {
                report.push(
                    vec![i, j],
                    format!("spans {i} and {j}: {} overlaps {}", a.category, b.category),
                );
            }
        }
    }
    for (i, m) in ann.spans.iter().enumerate() {
        if m.category == ContentCategory::InputMention
            && !ann.spans_of(ContentCategory::ActionContent).any(|a| a.contains(m))
        {
            report.push(vec![i], format!("span {i}: input_mention outside every action_content span"));
        }
    }
    report
}

/// Byte offset of every char boundary, including the end of the string.
pub(crate) fn char_boundaries(text: &str) -> Vec<usize> {
    let mut b: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    b.push(text.len());
    b
}

/// Whitespace tokens as (char start, char end) ranges.
pub(crate) fn whitespace_token_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (ci, ch) in text.chars().enumerate() {
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, ci));
                start = None;
            }
            (false, None) => start = Some(ci),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.chars().count()));
    }
    out
}

/// Share of whitespace tokens of the definition that touch no span.
pub fn unannotated_token_share(definition: &str, ann: &AnnotationSet) -> f64 {
    let tokens = whitespace_token_ranges(definition);
    if tokens.is_empty() {
        return 0.0;
    }
    let uncovered = tokens
        .iter()
        .filter(|&&(s, e)| !ann.spans.iter().any(|sp| sp.start < e && s < sp.end))
        .count();
    uncovered as f64 / tokens.len() as f64
}

pub const TRIGGER_PATTERNS: [&str; 4] = ["Given ", "Provided with ", "You're given ", "You are given "];

/// Splits at sentence-final `.`, `?`, `!`, then splits trigger-led sentences
/// ("Given a question, ...") after the first `,`, `;` or `:` that follows the
/// pattern. Whitespace between sentences stays at the head of the following
/// segment, so the segments concatenate back to `text`.
pub fn presplit_definition(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        if matches!(chars[i].1, '.' | '?' | '!') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '?' | '!') {
                j += 1;
            }
            if j == chars.len() || chars[j].1.is_whitespace() {
                let end = chars.get(j).map_or(text.len(), |c| c.0);
                sentences.push(&text[start..end]);
                start = end;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    if start < text.len() {
        sentences.push(&text[start..]);
    }

    let mut out = Vec::new();
    for sentence in sentences {
        let lead = sentence.len() - sentence.trim_start().len();
        let body = &sentence[lead..];
        let trigger = TRIGGER_PATTERNS.iter().find(|p| body.starts_with(*p));
        let cut = trigger.and_then(|p| {
            let from = lead + p.len();
            sentence[from..]
                .find([',', ';', ':'])
                .map(|k| from + k + 1)
                .filter(|&c| c < sentence.len())
        });
        match cut {
            Some(c) => {
                out.push(sentence[..c].to_string());
                out.push(sentence[c..].to_string());
            }
            None => out.push(sentence.to_string()),
        }
    }
    out
}

/// Item × category counts for Fleiss' kappa.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    rows: Vec<Vec<u32>>,
    n_raters: u32,
}

impl RatingMatrix {
    pub fn new(rows: Vec<Vec<u32>>) -> Result<Self, AnnotationError> {
        let first = rows
            .first()
            .ok_or_else(|| AnnotationError::Matrix("need at least one item".into()))?;
        let width = first.len();
        let n_raters: u32 = first.iter().sum();
        if n_raters < 2 {
            return Err(AnnotationError::Matrix(format!("need ≥ 2 raters, got {n_raters}")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(AnnotationError::Matrix(format!("row {i}: expected {width} categories")));
            }
            let sum: u32 = row.iter().sum();
            if sum != n_raters {
                return Err(AnnotationError::Matrix(format!(
                    "row {i}: sums to {sum}, expected {n_raters}"
                )));
            }
        }
        Ok(RatingMatrix { rows, n_raters })
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn n_raters(&self) -> u32 {
        self.n_raters
    }
}

/// Fleiss' kappa. Evaluated as one ratio of exact integer sums, so
/// rational results such as 1/4 come out exact.
pub fn fleiss_kappa(m: &RatingMatrix) -> Result<f64, AnnotationError> {
    let n = m.n_raters as i128;
    let items = m.rows.len() as i128;
    let width = m.rows[0].len();
    let mut sum_sq: i128 = 0;
    let mut col = vec![0i128; width];
    for row in &m.rows {
        for (j, &c) in row.iter().enumerate() {
            sum_sq += (c as i128) * (c as i128);
            col[j] += c as i128;
        }
    }
    // P̄ = a / b, P̄e = c / d
    let a = sum_sq - items * n;
    let b = items * n * (n - 1);
    let c: i128 = col.iter().map(|x| x * x).sum();
    let d = (items * n) * (items * n);
    if c == d {
        return Err(AnnotationError::Degenerate);
    }
    Ok((a * d - c * b) as f64 / (b * (d - c)) as f64)
}

/// Builds a rating matrix over the pre-split segments of `definition`.
/// Each annotator contributes the category covering most of a segment's
/// characters (input mentions ignored), or a final "none" column.
pub fn rating_matrix_from_annotations(
    definition: &str,
    sets: &[AnnotationSet],
) -> Result<RatingMatrix, AnnotationError> {
    let segments = presplit_definition(definition);
    let mut rows = Vec::with_capacity(segments.len());
    let mut offset = 0usize;
    for seg in &segments {
        let seg_len = seg.chars().count();
        let lead = seg.chars().take_while(|c| c.is_whitespace()).count();
        let (s, e) = (offset + lead, offset + seg_len);
        offset += seg_len;
        if s >= e {
            continue;
        }
        let mut row = vec![0u32; ContentCategory::ALL.len() + 1];
        for set in sets {
            let mut cover: HashMap<ContentCategory, usize> = HashMap::new();
            for sp in &set.spans {
                if sp.category == ContentCategory::InputMention {
                    continue;
                }
                let overlap = sp.end.min(e).saturating_sub(sp.start.max(s));
                if overlap > 0 {
                    *cover.entry(sp.category).or_default() += overlap;
                }
            }
            let best = cover.into_iter().max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)));
            match best {
                Some((cat, _)) => row[cat.index()] += 1,
                None => row[ContentCategory::ALL.len()] += 1,
            }
        }
        rows.push(row);
    }
    RatingMatrix::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Demonstration, TaskKind};

    fn task(def: &str) -> Task {
        Task {
            id: "t".into(),
            name: "t".into(),
            definition: def.into(),
            category: "c".into(),
            domains: vec![],
            reasoning_types: vec![],
            kind: TaskKind::Generation,
            label_list: None,
            demonstrations: vec![
                Demonstration { input: "a".into(), output: "b".into(), explanation: None };
                2
            ],
            instances: vec![],
        }
    }

    fn set(spans: Vec<Span>) -> AnnotationSet {
        AnnotationSet { task_id: "t".into(), annotator: "a".into(), spans }
    }

    use ContentCategory::*;

    #[test]
    fn out_of_bounds_span() {
        let r = validate_annotation(&task("short"), &set(vec![Span::new(0, 9, InputContent)]));
        assert_eq!(r.issues.len(), 1);
        assert!(r.issues[0].message.starts_with("span 0: out of bounds"));
    }

    #[test]
    fn mention_outside_action() {
        let t = task("Given a text, summarize the text.");
        let r = validate_annotation(
            &t,
            &set(vec![Span::new(14, 33, ActionContent), Span::new(2, 6, InputMention)]),
        );
        assert!(r.issues.iter().any(|i| i.message.contains("input_mention outside")));
    }

    #[test]
    fn consistent_set_is_clean() {
        let t = task("Given a text, summarize the text.");
        let r = validate_annotation(
            &t,
            &set(vec![
                Span::new(0, 13, InputContent),
                Span::new(14, 33, ActionContent),
                Span::new(24, 32, InputMention),
            ]),
        );
        assert!(r.is_empty(), "{r:?}");
    }

    #[test]
    fn forbidden_overlaps() {
        let t = task("Given a text, summarize the text.");
        let r = validate_annotation(
            &t,
            &set(vec![
                Span::new(0, 13, InputContent),
                Span::new(5, 20, InputContent),
                Span::new(10, 20, LabelList),
            ]),
        );
        assert_eq!(r.issues.len(), 3);
    }

    #[test]
    fn category_names_round_trip() {
        for c in ContentCategory::ALL {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{}\"", c.as_str()));
        }
    }

    #[test]
    fn presplit_examples() {
        assert_eq!(
            presplit_definition("Given a question, generate an answer."),
            vec!["Given a question,", " generate an answer."]
        );
        assert_eq!(
            presplit_definition("Classify the text. Output Yes or No."),
            vec!["Classify the text.", " Output Yes or No."]
        );
        assert_eq!(
            presplit_definition("You are given a review, rate it."),
            vec!["You are given a review,", " rate it."]
        );
        assert_eq!(presplit_definition(""), Vec::<String>::new());
        // lowercase "given" is not a trigger
        assert_eq!(presplit_definition("given x, do y."), vec!["given x, do y."]);
        // decimal points are not sentence ends
        assert_eq!(presplit_definition("Output 0.5 or 1."), vec!["Output 0.5 or 1."]);
    }

    #[test]
    fn kappa_derived_case() {
        let m = RatingMatrix::new(vec![vec![3, 0], vec![1, 2]]).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), 0.25);
    }

    #[test]
    fn kappa_perfect_agreement() {
        let m = RatingMatrix::new(vec![vec![3, 0], vec![0, 3], vec![3, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&m).unwrap(), 1.0);
    }

    #[test]
    fn kappa_degenerate() {
        let m = RatingMatrix::new(vec![vec![3, 0], vec![3, 0]]).unwrap();
        assert!(matches!(fleiss_kappa(&m), Err(AnnotationError::Degenerate)));
    }

    #[test]
    fn matrix_rejects_uneven_rows() {
        assert!(RatingMatrix::new(vec![vec![3, 0], vec![1, 1]]).is_err());
        assert!(RatingMatrix::new(vec![vec![1, 0]]).is_err());
        assert!(RatingMatrix::new(vec![]).is_err());
    }

    #[test]
    fn matrix_from_annotations() {
        let def = "Given a text, summarize it. Use one line.";
        let a = set(vec![Span::new(0, 13, InputContent), Span::new(14, 27, ActionContent)]);
        let b = set(vec![Span::new(0, 13, InputContent), Span::new(14, 27, ActionContent)]);
        let c = set(vec![Span::new(0, 13, InputContent), Span::new(14, 27, OutputContent)]);
        let m = rating_matrix_from_annotations(def, &[a, b, c]).unwrap();
        assert_eq!(m.rows().len(), 3);
        assert_eq!(m.rows()[0][InputContent.index()], 3);
        assert_eq!(m.rows()[2][8], 3);
    }

    #[test]
    fn gap_share() {
        let a = set(vec![Span::new(0, 5, InputContent)]);
        assert_eq!(unannotated_token_share("aaaa bbbb cccc dddd", &a), 0.75);
    }
}
