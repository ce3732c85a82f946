//! Bracketed constituency trees: reading, layer-wise traversal, subtree
//! removal and rendering back to text.
//!
//! Trees are stored as an arena. Node ids are preorder indices assigned at
//! parse time and stay valid across [`ParseTree::remove_subtree`], which
//! tombstones the removed nodes instead of renumbering.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("unbalanced brackets at byte {pos}")]
    Unbalanced { pos: usize },
    #[error("no tree found")]
    Empty,
    #[error("malformed tree at byte {pos}: {message}")]
    Malformed { pos: usize, message: String },
    #[error("depth {depth} outside 1..={max}")]
    Depth { depth: usize, max: usize },
    #[error("the root cannot be removed")]
    RootRemoval,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseNode {
    pub id: NodeId,
    /// Constituent tag; for token nodes, the raw token as written.
    pub label: String,
    /// Unescaped token text, present exactly on token nodes.
    pub token: Option<String>,
    /// Position among the original tree's tokens (token nodes only).
    pub leaf_index: Option<usize>,
    pub depth: usize,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl ParseNode {
    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    nodes: Vec<Option<ParseNode>>,
    root: NodeId,
    synthetic_root: bool,
    original_leaves: usize,
}

const ESCAPES: [(&str, &str); 6] = [
    ("-LRB-", "("),
    ("-RRB-", ")"),
    ("-LSB-", "["),
    ("-RSB-", "]"),
    ("-LCB-", "{"),
    ("-RCB-", "}"),
];

pub fn unescape_token(raw: &str) -> &str {
    ESCAPES
        .iter()
        .find(|(e, _)| *e == raw)
        .map_or(raw, |(_, lit)| *lit)
}

#[derive(Debug, Clone, PartialEq)]
enum Lex<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn lex(text: &str) -> Vec<Lex<'_>> {
    let mut out = Vec::new();
    let mut atom_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        let boundary = c == '(' || c == ')' || c.is_whitespace();
        if boundary {
            if let Some(s) = atom_start.take() {
                out.push(Lex::Atom(s, &text[s..i]));
            }
            match c {
                '(' => out.push(Lex::Open(i)),
                ')' => out.push(Lex::Close(i)),
                _ => {}
            }
        } else if atom_start.is_none() {
            atom_start = Some(i);
        }
    }
    if let Some(s) = atom_start {
        out.push(Lex::Atom(s, &text[s..]));
    }
    out
}

/// Intermediate owned tree used while reading.
#[derive(Debug)]
enum Raw {
    Node { label: String, children: Vec<Raw> },
    Leaf(String),
}

fn read_node<'a>(toks: &[Lex<'a>], pos: &mut usize, text_len: usize) -> Result<Raw, ParseError> {
    // caller guarantees toks[*pos] is Open
    *pos += 1;
    let label = match toks.get(*pos) {
        Some(Lex::Atom(_, a)) => {
            *pos += 1;
            a.to_string()
        }
        _ => String::new(),
    };
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            None => return Err(ParseError::Unbalanced { pos: text_len }),
            Some(Lex::Close(_)) => {
                *pos += 1;
                return Ok(Raw::Node { label, children });
            }
            Some(Lex::Open(_)) => children.push(read_node(toks, pos, text_len)?),
            Some(Lex::Atom(_, a)) => {
                children.push(Raw::Leaf(a.to_string()));
                *pos += 1;
            }
        }
    }
}

struct Builder {
    nodes: Vec<Option<ParseNode>>,
    leaves: usize,
}

impl Builder {
    fn add(&mut self, raw: &Raw, depth: usize, parent: Option<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len());
        match raw {
            Raw::Leaf(tok) => {
                self.nodes.push(Some(ParseNode {
                    id,
                    label: tok.clone(),
                    token: Some(unescape_token(tok).to_string()),
                    leaf_index: Some(self.leaves),
                    depth,
                    parent,
                    children: vec![],
                }));
                self.leaves += 1;
            }
            Raw::Node { label, children } => {
                self.nodes.push(Some(ParseNode {
                    id,
                    label: label.clone(),
                    token: None,
                    leaf_index: None,
                    depth,
                    parent,
                    children: vec![],
                }));
                let kids: Vec<NodeId> = children.iter().map(|c| self.add(c, depth + 1, Some(id))).collect();
                self.nodes[id.0].as_mut().unwrap().children = kids;
            }
        }
        id
    }
}

impl ParseTree {
    /// Reads one or more Penn-Treebank-style bracketed trees. Several
    /// top-level trees (or an outer bracket without a label) are joined under
    /// a synthetic `TOP` root.
    pub fn parse_bracketed(text: &str) -> Result<ParseTree, ParseError> {
        let toks = lex(text);
        let mut pos = 0;
        let mut tops = Vec::new();
        while pos < toks.len() {
            match &toks[pos] {
                Lex::Open(_) => tops.push(read_node(&toks, &mut pos, text.len())?),
                Lex::Close(p) => return Err(ParseError::Unbalanced { pos: *p }),
                Lex::Atom(p, _) => {
                    return Err(ParseError::Malformed {
                        pos: *p,
                        message: "token outside any bracket".into(),
                    })
                }
            }
        }
        // "( (S ...) )": an unlabeled wrapper contributes its children.
        let mut flat = Vec::new();
        for t in tops {
            match t {
                Raw::Node { label, children } if label.is_empty() => flat.extend(children),
                other => flat.push(other),
            }
        }
        if flat.is_empty() {
            return Err(ParseError::Empty);
        }
        let synthetic_root = flat.len() > 1 || matches!(flat[0], Raw::Leaf(_));
        let root_raw = if synthetic_root {
            Raw::Node { label: "TOP".into(), children: flat }
        } else {
            flat.pop().unwrap()
        };
        let mut b = Builder { nodes: Vec::new(), leaves: 0 };
        let root = b.add(&root_raw, 1, None);
        Ok(ParseTree {
            nodes: b.nodes,
            root,
            synthetic_root,
            original_leaves: b.leaves,
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Whether the root was introduced to join several top-level trees.
    pub fn has_synthetic_root(&self) -> bool {
        self.synthetic_root
    }

    pub fn node(&self, id: NodeId) -> Option<&ParseNode> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    fn get(&self, id: NodeId) -> &ParseNode {
        self.node(id).expect("live node id")
    }

    /// Live nodes in preorder.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.get(id).children.iter().rev());
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().flatten().count()
    }

    /// Number of tokens in the tree as originally read.
    pub fn original_leaf_count(&self) -> usize {
        self.original_leaves
    }

    /// Deepest live layer (root = 1, tokens one below their preterminal).
    pub fn depth(&self) -> usize {
        self.nodes.iter().flatten().map(|n| n.depth).max().unwrap_or(1)
    }

    /// Live nodes at `depth`, in left-to-right order.
    pub fn nodes_at_depth(&self, depth: usize) -> Result<Vec<NodeId>, ParseError> {
        let max = self.depth();
        if depth < 1 || depth > max {
            return Err(ParseError::Depth { depth, max });
        }
        Ok(self
            .preorder()
            .into_iter()
            .filter(|&id| self.get(id).depth == depth)
            .collect())
    }

    /// Token nodes under `id` (inclusive), left to right.
    pub fn leaves_under(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = self.get(n);
            if node.is_leaf() {
                out.push(n);
            }
            stack.extend(node.children.iter().rev());
        }
        out
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.leaves_under(self.root)
    }

    /// Original token positions under `id`.
    pub fn leaf_indices_under(&self, id: NodeId) -> Vec<usize> {
        self.leaves_under(id)
            .into_iter()
            .filter_map(|l| self.get(l).leaf_index)
            .collect()
    }

    /// Unescaped tokens, left to right.
    pub fn tokens(&self) -> Vec<&str> {
        self.leaves()
            .into_iter()
            .map(|l| self.get(l).token.as_deref().unwrap())
            .collect()
    }

    /// Returns a copy without `id` and its descendants. Ids of the
    /// remaining nodes are unchanged.
    pub fn remove_subtree(&self, id: NodeId) -> Result<ParseTree, ParseError> {
        let node = self.node(id).ok_or(ParseError::UnknownNode(id))?;
        let parent = node.parent.ok_or(ParseError::RootRemoval)?;
        let mut out = self.clone();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if let Some(dead) = out.nodes[n.0].take() {
                stack.extend(dead.children);
            }
        }
        out.nodes[parent.0]
            .as_mut()
            .expect("parent of a live node is live")
            .children
            .retain(|&c| c != id);
        Ok(out)
    }

    pub fn is_ancestor_or_self(&self, ancestor: NodeId, mut node: NodeId) -> bool {
        loop {
            if node == ancestor {
                return true;
            }
            match self.node(node).and_then(|n| n.parent) {
                Some(p) => node = p,
                None => return false,
            }
        }
    }

    /// Detokenized text of the whole tree.
    pub fn render(&self) -> String {
        detokenize(&self.tokens())
    }

    /// Detokenized text of one constituent.
    pub fn render_node(&self, id: NodeId) -> String {
        let toks: Vec<&str> = self
            .leaves_under(id)
            .into_iter()
            .map(|l| self.get(l).token.as_deref().unwrap())
            .collect();
        detokenize(&toks)
    }

    /// Bracketed notation with raw tokens; reading it back yields the same
    /// token sequence.
    pub fn to_bracketed(&self) -> String {
        let mut out = String::new();
        if self.synthetic_root {
            for (i, &c) in self.get(self.root).children.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                self.write_bracketed(c, &mut out);
            }
        } else {
            self.write_bracketed(self.root, &mut out);
        }
        out
    }

    fn write_bracketed(&self, id: NodeId, out: &mut String) {
        let node = self.get(id);
        if node.is_leaf() {
            out.push_str(&node.label);
            return;
        }
        out.push('(');
        out.push_str(&node.label);
        for &c in &node.children {
            out.push(' ');
            self.write_bracketed(c, out);
        }
        out.push(')');
    }
}

impl std::str::FromStr for ParseTree {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ParseTree::parse_bracketed(s)
    }
}

const ATTACH_LEFT: &str = ".,;:!?')]%";
const ATTACH_RIGHT: &str = "([$";
const CONTRACTIONS: [&str; 7] = ["'s", "n't", "'re", "'ve", "'ll", "'d", "'m"];

fn attaches_left(tok: &str) -> bool {
    (!tok.is_empty() && tok.chars().all(|c| ATTACH_LEFT.contains(c)))
        || CONTRACTIONS.iter().any(|c| tok.eq_ignore_ascii_case(c))
}

fn attaches_right(tok: &str) -> bool {
    !tok.is_empty() && tok.chars().all(|c| ATTACH_RIGHT.contains(c))
}

/// Joins tokens with single spaces, attaching closing punctuation and
/// contraction pieces to the left and opening brackets to the right.
/// Straight double quotes alternate between opening and closing; `` and ''
/// always open and close respectively.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = false;
    let mut in_quote = false;
    for t in tokens {
        let t = t.as_ref();
        let (left, right) = match t {
            "\"" => {
                in_quote = !in_quote;
                (!in_quote, in_quote)
            }
            "``" => (false, true),
            "''" => (true, false),
            _ => (attaches_left(t), attaches_right(t)),
        };
        if !out.is_empty() && !glue_next && !left {
            out.push(' ');
        }
        out.push_str(t);
        glue_next = right;
    }
    out
}

/// Locates each token in `text`, scanning left to right. Returns char
/// offsets; tokens that cannot be found map to `None`.
pub fn align_tokens<S: AsRef<str>>(tokens: &[S], text: &str) -> Vec<Option<(usize, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut cursor = 0usize;
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        let t = t.as_ref();
        let mut forms: Vec<Vec<char>> = vec![t.chars().collect()];
        if t == "``" || t == "''" {
            forms.push(vec!['"']);
        }
        let found = forms
            .iter()
            .filter(|f| !f.is_empty())
            .filter_map(|f| {
                (cursor..=chars.len().saturating_sub(f.len()))
                    .find(|&s| chars[s..s + f.len()] == f[..])
                    .map(|s| (s, s + f.len()))
            })
            .min();
        if let Some((_, e)) = found {
            cursor = e;
        }
        out.push(found);
    }
    out
}

/// One tree per line; line `i` belongs to the `i`-th task of the manifest.
pub fn load_parse_file(path: &Path) -> std::io::Result<Vec<Result<ParseTree, ParseError>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(ParseTree::parse_bracketed).collect())
}
