//! Concrete syntax trees for maskable source files.
//!
//! Parsing is delegated to tree-sitter grammars looked up in a
//! [`GrammarRegistry`]. The resulting tree is flattened into an owned
//! [`SyntaxTree`] of named nodes so that the rest of the crate never touches
//! tree-sitter types.

use std::collections::HashMap;
use std::ops::Range;

use crate::ingest::{LanguageTag, SourceFile};

#[derive(Debug, thiserror::Error)]
pub enum SyntaxError {
    #[error("no grammar registered for language {0}")]
    UnsupportedLanguage(LanguageTag),
    #[error("parser failed on {path}")]
    ParserFailed { path: String },
}

/// One named node of a parsed file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxNode {
    pub kind: String,
    pub range: Range<usize>,
    pub parent: Option<usize>,
    /// Field name of this node inside its parent production, e.g. `body`.
    pub field: Option<String>,
    /// Kind of the nearest named ancestor.
    pub parent_kind: Option<String>,
    /// The node is an error or missing node, or sits inside one, or has one
    /// among its descendants.
    pub tainted: bool,
}

impl SyntaxNode {
    /// Whitelist key of the node: `kind`, or `parent_kind.field` for nodes
    /// that fill a named field (e.g. `function_definition.body`).
    pub fn field_key(&self) -> Option<String> {
        match (&self.parent_kind, &self.field) {
            (Some(p), Some(f)) => Some(format!("{p}.{f}")),
            _ => None,
        }
    }

    /// True if the node matches a whitelist entry, either by its own kind or
    /// by its `parent.field` key.
    pub fn matches(&self, kinds: &[String]) -> Option<String> {
        if kinds.iter().any(|k| k == &self.kind) {
            return Some(self.kind.clone());
        }
        let key = self.field_key()?;
        kinds.iter().any(|k| k == &key).then_some(key)
    }
}

#[derive(Debug, Clone)]
pub struct SyntaxTree {
    pub language: LanguageTag,
    pub source_len: usize,
    /// Pre-order; index 0 is the root and spans the whole file.
    pub nodes: Vec<SyntaxNode>,
    pub error_ranges: Vec<Range<usize>>,
}

impl SyntaxTree {
    pub fn root(&self) -> &SyntaxNode {
        &self.nodes[0]
    }

    pub fn has_errors(&self) -> bool {
        !self.error_ranges.is_empty()
    }

    /// Nodes whose span equals `range` exactly.
    pub fn nodes_at(&self, range: &Range<usize>) -> impl Iterator<Item = &SyntaxNode> {
        let range = range.clone();
        self.nodes.iter().filter(move |n| n.range == range)
    }

    /// Find an untainted node spanning exactly `range` that matches the whitelist.
    pub fn find_whitelisted(&self, range: &Range<usize>, kinds: &[String]) -> Option<&SyntaxNode> {
        self.nodes_at(range).find(|n| !n.tainted && n.matches(kinds).is_some())
    }
}

/// Per-language grammar lookup.
pub struct GrammarRegistry {
    grammars: HashMap<LanguageTag, tree_sitter::Language>,
}

impl Default for GrammarRegistry {
    fn default() -> Self {
        let mut grammars = HashMap::new();
        grammars.insert(LanguageTag::Python, tree_sitter_python::LANGUAGE.into());
        GrammarRegistry { grammars }
    }
}

impl std::fmt::Debug for GrammarRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrammarRegistry")
            .field("languages", &self.grammars.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl GrammarRegistry {
    pub fn register(&mut self, tag: LanguageTag, language: tree_sitter::Language) {
        self.grammars.insert(tag, language);
    }

    pub fn supports(&self, tag: &LanguageTag) -> bool {
        self.grammars.contains_key(tag)
    }

    /// Parse a file. Syntax errors never abort the parse; they taint the
    /// affected nodes instead.
    pub fn parse(&self, file: &SourceFile) -> Result<SyntaxTree, SyntaxError> {
        let language = self
            .grammars
            .get(&file.language)
            .ok_or_else(|| SyntaxError::UnsupportedLanguage(file.language.clone()))?;
        let mut parser = tree_sitter::Parser::new();
        parser.set_language(language).map_err(|_| SyntaxError::ParserFailed {
            path: file.path.clone(),
        })?;
        let tree = parser
            .parse(&file.content, None)
            .ok_or_else(|| SyntaxError::ParserFailed {
                path: file.path.clone(),
            })?;
        Ok(flatten(&tree, file))
    }
}

pub fn parse_source(registry: &GrammarRegistry, file: &SourceFile) -> Result<SyntaxTree, SyntaxError> {
    registry.parse(file)
}

fn flatten(tree: &tree_sitter::Tree, file: &SourceFile) -> SyntaxTree {
    let len = file.content.len();
    let root = tree.root_node();
    let mut nodes = vec![SyntaxNode {
        kind: root.kind().to_string(),
        range: 0..len,
        parent: None,
        field: None,
        parent_kind: None,
        tainted: root.is_error() || root.is_missing(),
    }];
    let mut error_ranges = Vec::new();
    if root.is_error() {
        error_ranges.push(0..len);
    }

    // (index of nearest named ancestor, inside an ERROR node) per cursor level
    let mut cursor = root.walk();
    let mut stack: Vec<(usize, bool)> = vec![(0, root.is_error())];
    let mut more = cursor.goto_first_child();
    while more {
        let node = cursor.node();
        let (parent_idx, parent_in_error) = *stack.last().expect("stack holds the root");
        let in_error = parent_in_error || node.is_error();
        if node.is_error() || node.is_missing() {
            error_ranges.push(node.start_byte()..node.end_byte());
        }
        let named_idx = if node.is_named() {
            nodes.push(SyntaxNode {
                kind: node.kind().to_string(),
                range: node.start_byte()..node.end_byte(),
                parent: Some(parent_idx),
                field: cursor.field_name().map(str::to_string),
                parent_kind: Some(nodes[parent_idx].kind.clone()),
                tainted: in_error || node.has_error() || node.is_missing(),
            });
            nodes.len() - 1
        } else {
            parent_idx
        };

        if cursor.goto_first_child() {
            stack.push((named_idx, in_error));
            continue;
        }
        more = loop {
            if cursor.goto_next_sibling() {
                break true;
            }
            if !cursor.goto_parent() {
                break false;
            }
            stack.pop();
            if stack.is_empty() {
                break false;
            }
        };
    }
    SyntaxTree {
        language: file.language.clone(),
        source_len: len,
        nodes,
        error_ranges,
    }
}
