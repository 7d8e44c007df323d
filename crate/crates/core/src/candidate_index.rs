//! Per-sentence candidate phrase index.
//!
//! Every phrase pair whose source side occurs contiguously in the sentence
//! contributes its target phrase to a prefix trie. Shared target prefixes
//! share one node path. Each node records, for every candidate phrase passing
//! through it, the token that follows the node's prefix together with the
//! phrase's [`Origin`]; the root therefore lists the first word of every
//! candidate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::phrase_table::{rank_order, PhraseEntry, PhraseTable};

pub const DEFAULT_MAX_PHRASE_LEN: usize = 7;
pub const DEFAULT_TOP_N: usize = 10;

/// Half-open range `[start, end)` of source positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub tokens: Vec<String>,
}

impl SourceSpan {
    /// Panics unless `start < end <= sentence.len()`.
    pub fn new(sentence: &[String], start: usize, end: usize) -> Self {
        assert!(start < end && end <= sentence.len(), "invalid span [{start}, {end})");
        Self {
            start,
            end,
            tokens: sentence[start..end].to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// A phrase pair together with the place its source side matched.
#[derive(Debug, Clone, PartialEq)]
pub struct Origin {
    pub entry: Arc<PhraseEntry>,
    pub span: SourceSpan,
}

impl Origin {
    pub fn new(entry: Arc<PhraseEntry>, span: SourceSpan) -> Self {
        assert_eq!(entry.source_phrase, span.tokens, "origin span does not match its source phrase");
        Self { entry, span }
    }

    pub fn target(&self) -> &[String] {
        &self.entry.target_phrase
    }

    pub fn p_pht(&self) -> f64 {
        self.entry.p_pht
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    fn index(self) -> usize {
        self.0 as usize
    }
}

/// Position of an origin in [`CandidateIndex::origins`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OriginId(pub u32);

impl OriginId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index-local target token id. Ids follow lexicographic token order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Continuation {
    pub next: TokenId,
    pub origin: OriginId,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    label: Option<TokenId>,
    depth: usize,
    children: BTreeMap<TokenId, NodeId>,
    continuations: Vec<Continuation>,
    /// Origins whose target phrase ends here.
    terminal: Vec<OriginId>,
}

impl Node {
    fn new(label: Option<TokenId>, depth: usize) -> Self {
        Self {
            label,
            depth,
            children: BTreeMap::new(),
            continuations: Vec::new(),
            terminal: Vec::new(),
        }
    }
}

/// Prefix trie over the candidate target phrases of one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateIndex {
    tokens: Vec<String>,
    nodes: Vec<Node>,
    origins: Vec<Origin>,
}

/// Read-only view of one trie node.
#[derive(Clone, Copy)]
pub struct NodeRef<'a> {
    index: &'a CandidateIndex,
    id: NodeId,
}

impl<'a> NodeRef<'a> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    fn node(&self) -> &'a Node {
        &self.index.nodes[self.id.index()]
    }

    /// Token on the edge into this node; `None` for the root.
    pub fn label(&self) -> Option<&'a str> {
        self.node().label.map(|t| self.index.token(t))
    }

    /// Length of the prefix this node spells.
    pub fn depth(&self) -> usize {
        self.node().depth
    }

    pub fn children(&self) -> impl Iterator<Item = NodeRef<'a>> + 'a {
        let index = self.index;
        self.node().children.values().map(move |&id| NodeRef { index, id })
    }

    pub fn continuations(&self) -> &'a [Continuation] {
        &self.node().continuations
    }

    /// Origins whose target phrase ends at this node.
    pub fn terminal_origins(&self) -> &'a [OriginId] {
        &self.node().terminal
    }
}

impl CandidateIndex {
    pub fn root(&self) -> NodeRef<'_> {
        self.node(NodeId::ROOT)
    }

    pub fn node(&self, id: NodeId) -> NodeRef<'_> {
        NodeRef { index: self, id }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of indexed candidate phrase instances.
    pub fn phrase_count(&self) -> usize {
        self.origins.len()
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn origin(&self, id: OriginId) -> &Origin {
        &self.origins[id.index()]
    }

    pub fn origin_ids(&self) -> impl Iterator<Item = OriginId> {
        (0..self.origins.len() as u32).map(OriginId)
    }

    /// Distinct target tokens in lexicographic order, indexed by [`TokenId`].
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id.index()]
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.tokens
            .binary_search_by(|t| t.as_str().cmp(token))
            .ok()
            .map(|i| TokenId(i as u32))
    }

    /// Child of `node` along `token`.
    pub fn child(&self, node: NodeId, token: TokenId) -> Option<NodeId> {
        self.nodes[node.index()].children.get(&token).copied()
    }

    /// Follows `tokens` from the root. An empty sequence yields the root.
    pub fn walk<S: AsRef<str>>(&self, tokens: &[S]) -> Option<NodeRef<'_>> {
        let mut node = NodeId::ROOT;
        for token in tokens {
            let id = self.token_id(token.as_ref())?;
            node = self.child(node, id)?;
        }
        Some(self.node(node))
    }

    /// Indented text dump: one node per line, two spaces per level, with
    /// `(span_start,span_end,p_pht)` for each phrase ending at the node.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_node(NodeId::ROOT, &mut out);
        out
    }

    fn dump_node(&self, id: NodeId, out: &mut String) {
        let node = &self.nodes[id.index()];
        if let Some(label) = node.label {
            out.push_str(&"  ".repeat(node.depth - 1));
            out.push_str(self.token(label));
            for &o in &node.terminal {
                let origin = self.origin(o);
                let _ = write!(out, " ({},{},{})", origin.span.start, origin.span.end, origin.p_pht());
            }
            out.push('\n');
        }
        for &child in node.children.values() {
            self.dump_node(child, out);
        }
    }
}

/// Finds every (table entry, span) pair whose source side equals a slice of
/// `sentence` no longer than `max_phrase_len`. Results are ordered by span
/// start, then span length, then the table's rank order.
pub fn match_source(sentence: &[String], table: &PhraseTable, max_phrase_len: usize) -> Vec<Origin> {
    let longest = max_phrase_len.min(table.max_source_len());
    let mut origins = Vec::new();
    for start in 0..sentence.len() {
        for end in start + 1..=(start + longest).min(sentence.len()) {
            let Some(group) = table.get(&sentence[start..end]) else {
                continue;
            };
            let span = SourceSpan::new(sentence, start, end);
            origins.extend(group.iter().map(|e| Origin::new(Arc::clone(e), span.clone())));
        }
    }
    origins
}

/// Keeps the `top_n` best targets for each matched (source phrase, span)
/// group and indexes their target phrases in a prefix trie.
pub fn build_index(origins: Vec<Origin>, top_n: usize) -> CandidateIndex {
    assert!(top_n > 0, "top_n must be positive");

    let mut groups: BTreeMap<(usize, usize), Vec<Origin>> = BTreeMap::new();
    for origin in origins {
        groups.entry((origin.span.start, origin.span.end)).or_default().push(origin);
    }
    let mut kept = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| rank_order(&a.entry, &b.entry));
        group.truncate(top_n);
        kept.extend(group);
    }

    let mut tokens: Vec<String> = kept.iter().flat_map(|o| o.target().iter().cloned()).collect();
    tokens.sort_unstable();
    tokens.dedup();

    let mut index = CandidateIndex {
        tokens,
        nodes: vec![Node::new(None, 0)],
        origins: Vec::with_capacity(kept.len()),
    };
    for origin in kept {
        let origin_id = OriginId(index.origins.len() as u32);
        let mut node = NodeId::ROOT;
        for token in origin.target() {
            let tok = index.token_id(token).expect("token collected above");
            index.nodes[node.index()].continuations.push(Continuation {
                next: tok,
                origin: origin_id,
            });
            node = match index.child(node, tok) {
                Some(child) => child,
                None => {
                    let child = NodeId(index.nodes.len() as u32);
                    let depth = index.nodes[node.index()].depth + 1;
                    index.nodes.push(Node::new(Some(tok), depth));
                    index.nodes[node.index()].children.insert(tok, child);
                    child
                }
            };
        }
        index.nodes[node.index()].terminal.push(origin_id);
        index.origins.push(origin);
    }
    index
}
