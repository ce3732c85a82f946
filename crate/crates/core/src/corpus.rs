//! Task files, prompt assembly and fit/holdout splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::digest;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("not enough instances: requested {requested}, task `{task_id}` has {available}")]
    Size {
        task_id: String,
        requested: usize,
        available: usize,
    },
}

impl CorpusError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        CorpusError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Generation,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Generation => "generation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub input: String,
    pub references: Vec<String>,
}

/// One benchmark task. Construct through [`Task::from_json_str`] or
/// [`load_task_file`] so that the invariants are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub name: String,
    pub definition: String,
    pub category: String,
    pub domains: Vec<String>,
    pub reasoning_types: Vec<String>,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_list: Option<Vec<String>>,
    pub demonstrations: Vec<Demonstration>,
    pub instances: Vec<Instance>,
}

const TASK_KEYS: &[&str] = &[
    "id",
    "name",
    "definition",
    "category",
    "domains",
    "reasoning_types",
    "kind",
    "label_list",
    "demonstrations",
    "instances",
];
const DEMO_KEYS: &[&str] = &["input", "output", "explanation"];
const INSTANCE_KEYS: &[&str] = &["id", "input", "references"];

/// How unknown keys in task files are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], at: &str, mode: Strictness) -> Result<()> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            let field = if at.is_empty() { key.clone() } else { format!("{at}.{key}") };
            match mode {
                Strictness::Strict => return Err(CorpusError::schema(field, "unknown key")),
                Strictness::Lenient => log::warn!("ignoring unknown key `{field}`"),
            }
        }
    }
    Ok(())
}

fn as_object<'a>(v: &'a Value, field: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| CorpusError::schema(field, "expected an object"))
}

fn req<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| {
        let field = if at.is_empty() { key.to_string() } else { format!("{at}.{key}") };
        CorpusError::schema(field, "missing field")
    })
}

fn string(v: &Value, field: &str) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| CorpusError::schema(field, "expected a string"))
}

fn string_list(v: &Value, field: &str) -> Result<Vec<String>> {
    let arr = v
        .as_array()
        .ok_or_else(|| CorpusError::schema(field, "expected an array of strings"))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| string(x, &format!("{field}[{i}]")))
        .collect()
}

fn array<'a>(v: &'a Value, field: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| CorpusError::schema(field, "expected an array"))
}

impl Task {
    pub fn from_json_str(text: &str, mode: Strictness) -> Result<Task> {
        let value: Value = serde_json::from_str(text)?;
        Task::from_json_value(&value, mode)
    }

    pub fn from_json_value(value: &Value, mode: Strictness) -> Result<Task> {
        let obj = as_object(value, "<root>")?;
        check_keys(obj, TASK_KEYS, "", mode)?;

        let kind = match req(obj, "kind", "")?.as_str() {
            Some(k) if k.eq_ignore_ascii_case("classification") => TaskKind::Classification,
            Some(k) if k.eq_ignore_ascii_case("generation") => TaskKind::Generation,
            Some(other) => {
                return Err(CorpusError::schema(
                    "kind",
                    format!("expected \"classification\" or \"generation\", got {other:?}"),
                ))
            }
            None => return Err(CorpusError::schema("kind", "expected a string")),
        };
        let label_list = match obj.get("label_list") {
            None | Some(Value::Null) => None,
            Some(v) => Some(string_list(v, "label_list")?),
        };

        let mut demonstrations = Vec::new();
        for (i, d) in array(req(obj, "demonstrations", "")?, "demonstrations")?.iter().enumerate() {
            let at = format!("demonstrations[{i}]");
            let d = as_object(d, &at)?;
            check_keys(d, DEMO_KEYS, &at, mode)?;
            let explanation = match d.get("explanation") {
                None | Some(Value::Null) => None,
                Some(v) => Some(string(v, &format!("{at}.explanation"))?),
            };
            demonstrations.push(Demonstration {
                input: string(req(d, "input", &at)?, &format!("{at}.input"))?,
                output: string(req(d, "output", &at)?, &format!("{at}.output"))?,
                explanation,
            });
        }

        let mut instances = Vec::new();
        for (i, inst) in array(req(obj, "instances", "")?, "instances")?.iter().enumerate() {
            let at = format!("instances[{i}]");
            let inst = as_object(inst, &at)?;
            check_keys(inst, INSTANCE_KEYS, &at, mode)?;
            instances.push(Instance {
                id: string(req(inst, "id", &at)?, &format!("{at}.id"))?,
                input: string(req(inst, "input", &at)?, &format!("{at}.input"))?,
                references: string_list(req(inst, "references", &at)?, &format!("{at}.references"))?,
            });
        }

        let task = Task {
            id: string(req(obj, "id", "")?, "id")?,
            name: string(req(obj, "name", "")?, "name")?,
            definition: string(req(obj, "definition", "")?, "definition")?,
            category: string(req(obj, "category", "")?, "category")?,
            domains: string_list(req(obj, "domains", "")?, "domains")?,
            reasoning_types: string_list(req(obj, "reasoning_types", "")?, "reasoning_types")?,
            kind,
            label_list,
            demonstrations,
            instances,
        };
        task.validate()?;
        Ok(task)
    }

    /// Checks every task invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.definition.trim().is_empty() {
            return Err(CorpusError::Invariant("definition: empty after trimming".into()));
        }
        if self.kind == TaskKind::Classification {
            let labels = self.label_list.as_ref().ok_or_else(|| {
                CorpusError::Invariant("label_list: required for classification tasks".into())
            })?;
            if labels.is_empty() {
                return Err(CorpusError::Invariant("label_list: empty".into()));
            }
            let mut seen = HashSet::new();
            for label in labels {
                if !seen.insert(label.trim()) {
                    return Err(CorpusError::Invariant(format!(
                        "label_list: duplicate label {:?}",
                        label.trim()
                    )));
                }
            }
        }
        if self.demonstrations.len() < 2 {
            return Err(CorpusError::Invariant("demonstrations: need ≥ 2".into()));
        }
        for (i, d) in self.demonstrations.iter().enumerate() {
            if d.input.is_empty() || d.output.is_empty() {
                return Err(CorpusError::Invariant(format!(
                    "demonstrations[{i}]: input and output must be non-empty"
                )));
            }
        }
        let mut ids = HashSet::new();
        for inst in &self.instances {
            if inst.references.is_empty() {
                return Err(CorpusError::Invariant(format!(
                    "instances[{}]: need ≥ 1 reference",
                    inst.id
                )));
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(CorpusError::Invariant(format!("instances: duplicate id {:?}", inst.id)));
            }
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("task serialization cannot fail")
    }

    pub fn instance(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn labels(&self) -> &[String] {
        self.label_list.as_deref().unwrap_or(&[])
    }
}

pub fn load_task_file(path: &Path, mode: Strictness) -> Result<Task> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Task::from_json_str(&text, mode)
}

/// Loads every `*.json` file in `dir`, sorted by task id.
pub fn load_task_dir(dir: &Path, mode: Strictness) -> Result<Vec<Task>> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut tasks = Vec::with_capacity(paths.len());
    for p in &paths {
        let task = load_task_file(p, mode).map_err(|e| match e {
            CorpusError::Schema { field, message } => CorpusError::Schema {
                field,
                message: format!("{message} (in {})", p.display()),
            },
            CorpusError::Invariant(m) => CorpusError::Invariant(format!("{}: {m}", p.display())),
            other => other,
        })?;
        tasks.push(task);
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(tasks)
}

pub const DEFAULT_TEMPLATE: &str = "Definition: {definition}\n\nPositive Example 1-\nInput: {demo1_in}\nOutput: {demo1_out}\n\nPositive Example 2-\nInput: {demo2_in}\nOutput: {demo2_out}\n\nNow complete the following example-\nInput: {input}\nOutput:";

/// Prompt template with `{definition}`, `{demoN_in}`, `{demoN_out}` and
/// `{input}` placeholders. Any other `{name}` is an error at assembly time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate(String);

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate(DEFAULT_TEMPLATE.to_string())
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name_ok = close.is_some_and(|c| {
            c > 0
                && after[..c]
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        });
        if let (true, Some(c)) = (name_ok, close) {
            if open > 0 {
                out.push(Piece::Text(&rest[..open]));
            }
            out.push(Piece::Slot(&after[..c]));
            rest = &after[c + 1..];
        } else {
            out.push(Piece::Text(&rest[..=open]));
            rest = after;
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    out
}

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let slots: Vec<&str> = pieces(&template)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s),
                Piece::Text(_) => None,
            })
            .collect();
        for required in ["definition", "input"] {
            if !slots.contains(&required) {
                return Err(CorpusError::Template(format!("missing {{{required}}} placeholder")));
            }
        }
        Ok(PromptTemplate(template))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn demo_slot(name: &str) -> Option<(usize, bool)> {
    let rest = name.strip_prefix("demo")?;
    let (num, is_input) = if let Some(n) = rest.strip_suffix("_in") {
        (n, true)
    } else {
        (rest.strip_suffix("_out")?, false)
    };
    let k: usize = num.parse().ok()?;
    (k >= 1).then_some((k - 1, is_input))
}

/// Substitutes placeholders verbatim; no other text is touched.
pub fn assemble_prompt(
    task: &Task,
    definition: &str,
    instance: &Instance,
    template: &PromptTemplate,
) -> Result<String> {
    let mut out = String::with_capacity(template.0.len() + definition.len() + instance.input.len());
    for piece in pieces(&template.0) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot("definition") => out.push_str(definition),
            Piece::Slot("input") => out.push_str(&instance.input),
            Piece::Slot(name) => {
                let (idx, is_input) = demo_slot(name).ok_or_else(|| {
                    CorpusError::Template(format!("unresolved placeholder {{{name}}}"))
                })?;
                let demo = task.demonstrations.get(idx).ok_or_else(|| {
                    CorpusError::Template(format!(
                        "{{{name}}}: task `{}` has only {} demonstrations",
                        task.id,
                        task.demonstrations.len()
                    ))
                })?;
                out.push_str(if is_input { &demo.input } else { &demo.output });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Fit,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub task_id: String,
    pub instance_ids: Vec<String>,
    pub role: Role,
}

impl ExampleSet {
    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    /// Resolves ids against the task, failing on unknown or repeated ids.
    pub fn resolve<'t>(&self, task: &'t Task) -> Result<Vec<&'t Instance>> {
        if self.task_id != task.id {
            return Err(CorpusError::Invariant(format!(
                "example set belongs to `{}`, not `{}`",
                self.task_id, task.id
            )));
        }
        let mut seen = HashSet::new();
        self.instance_ids
            .iter()
            .map(|id| {
                if !seen.insert(id.as_str()) {
                    return Err(CorpusError::Invariant(format!("example set: duplicate id {id:?}")));
                }
                task.instance(id)
                    .ok_or_else(|| CorpusError::Invariant(format!("example set: unknown id {id:?}")))
            })
            .collect()
    }

    /// Content digest over task id, role and the ordered instances.
    pub fn fingerprint(&self, task: &Task) -> String {
        let mut fields: Vec<&str> = vec![&self.task_id];
        for id in &self.instance_ids {
            fields.push(id);
            if let Some(inst) = task.instance(id) {
                fields.push(&inst.input);
                fields.extend(inst.references.iter().map(String::as_str));
            }
        }
        digest::sha256_fields(fields)
    }

    pub fn is_disjoint(&self, other: &ExampleSet) -> bool {
        let mine: HashSet<&str> = self.instance_ids.iter().map(String::as_str).collect();
        other.instance_ids.iter().all(|id| !mine.contains(id.as_str()))
    }
}

/// Seeded Fisher–Yates shuffle of the instances, then prefix slicing into
/// disjoint fit and holdout sets.
pub fn split_examples(
    task: &Task,
    n_fit: usize,
    n_holdout: usize,
    seed: u64,
) -> Result<(ExampleSet, ExampleSet)> {
    let requested = n_fit + n_holdout;
    if requested > task.instances.len() {
        return Err(CorpusError::Size {
            task_id: task.id.clone(),
            requested,
            available: task.instances.len(),
        });
    }
    let seed_str = seed.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(digest::derive_seed(["split", &seed_str, &task.id]));
    let mut ids: Vec<String> = task.instances.iter().map(|i| i.id.clone()).collect();
    ids.shuffle(&mut rng);
    let holdout = ids[n_fit..requested].to_vec();
    ids.truncate(n_fit);
    Ok((
        ExampleSet {
            task_id: task.id.clone(),
            instance_ids: ids,
            role: Role::Fit,
        },
        ExampleSet {
            task_id: task.id.clone(),
            instance_ids: holdout,
            role: Role::Holdout,
        },
    ))
}
