//! Hierarchical semantic taxonomy.
//!
//! A [`SemanticTree`] arranges the flat leaf labels of a dataset into levels,
//! root level first. Every leaf is addressed by its root-to-leaf path, and each
//! path step is stored as the node's position among its siblings. That keeps
//! the per-level code width equal to the widest sibling set instead of the
//! level population, which is where the compression over a flat one-hot code
//! comes from: a binary tree of depth 10 addresses 1024 leaves with 20 codes.

mod clusterer;
mod critic;
pub mod presets;
mod remote;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clusterer::{
    fnv1a, ClusterProposal, Clusterer, DeterministicMock, Group, MockBehavior, ScriptedClusterer,
};
pub use critic::{build_level, build_tree, validate_clustering, TreeBuildOptions, ValidationReport};
pub use remote::{RemoteChat, RemoteChatConfig};

/// Default number of critic rounds before the loop gives up.
pub const DEFAULT_MAX_ROUNDS: usize = 20;
/// Default stop threshold: generation stops once a level has fewer nodes.
pub const DEFAULT_THETA: usize = 4;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("index {index} out of range at level {level} (width {width})")]
    IndexOutOfRange {
        level: usize,
        index: usize,
        width: usize,
    },
    #[error("inconsistent path at level {level}: index {index} is not a child of the level {parent_level} node")]
    InconsistentPath {
        level: usize,
        index: usize,
        parent_level: usize,
    },
    #[error("level {0} out of range")]
    LevelOutOfRange(usize),
    #[error("critic loop did not cover all labels after {rounds} rounds ({remaining} still omitted)")]
    NonTermination { rounds: usize, remaining: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("schema error at {field}: {message}")]
    Schema { field: String, message: String },
    #[error("clusterer failed: {0}")]
    Clusterer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TaxonomyError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        TaxonomyError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// A root-to-leaf path. `path[l]` is the position of the level-`l` node among
/// the children of its parent (among the roots for `l = 0`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierCode {
    pub path: Vec<usize>,
}

/// Layout of the concatenated hierarchical embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeDims {
    /// Uniform slice width per level.
    pub width: usize,
    /// Number of levels (L + 1).
    pub levels: usize,
    /// Total embedding dimension.
    pub total: usize,
}

/// Immutable taxonomy tree. Node identity is `(level, index)`; names only need
/// to be unique within their level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticTree {
    levels: Vec<Vec<String>>,
    // parent[l - 1][i]: parent (at level l - 1) of node i at level l
    parent: Vec<Vec<usize>>,
    children: Vec<Vec<Vec<usize>>>,
    sibling_pos: Vec<Vec<usize>>,
    leaf_index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    levels: Vec<Vec<String>>,
    parent: Vec<Vec<i64>>,
    leaf_labels: BTreeMap<String, i64>,
}

impl SemanticTree {
    /// Builds a tree from per-level node names and parent links, validating
    /// every structural invariant. The leaf label map is derived from the last
    /// level.
    pub fn new(levels: Vec<Vec<String>>, parent: Vec<Vec<usize>>) -> Result<Self, TaxonomyError> {
        if levels.is_empty() || levels.iter().any(|l| l.is_empty()) {
            return Err(TaxonomyError::schema("levels", "every level needs at least one node"));
        }
        if parent.len() + 1 != levels.len() {
            return Err(TaxonomyError::schema(
                "parent",
                format!("expected {} parent lists, found {}", levels.len() - 1, parent.len()),
            ));
        }
        for (l, names) in levels.iter().enumerate() {
            let mut seen = BTreeMap::new();
            for (i, name) in names.iter().enumerate() {
                if let Some(prev) = seen.insert(name.as_str(), i) {
                    return Err(TaxonomyError::schema(
                        format!("levels[{l}][{i}]"),
                        format!("duplicate name '{name}' (also at index {prev})"),
                    ));
                }
            }
        }
        let mut children = Vec::with_capacity(levels.len());
        for l in 0..levels.len() {
            let mut kids = vec![Vec::new(); levels[l].len()];
            if l + 1 < levels.len() {
                let links = &parent[l];
                if links.len() != levels[l + 1].len() {
                    return Err(TaxonomyError::schema(
                        format!("parent[{l}]"),
                        format!(
                            "expected {} entries for level {}, found {}",
                            levels[l + 1].len(),
                            l + 1,
                            links.len()
                        ),
                    ));
                }
                for (i, &p) in links.iter().enumerate() {
                    if p >= levels[l].len() {
                        return Err(TaxonomyError::schema(
                            format!("parent[{l}][{i}]"),
                            format!("parent index {p} out of range (level {l} has {} nodes)", levels[l].len()),
                        ));
                    }
                    kids[p].push(i);
                }
                for (p, k) in kids.iter().enumerate() {
                    if k.is_empty() {
                        return Err(TaxonomyError::schema(
                            format!("levels[{l}][{p}]"),
                            format!("node '{}' has no children; every leaf must sit on the last level", levels[l][p]),
                        ));
                    }
                }
            }
            children.push(kids);
        }
        let mut sibling_pos = Vec::with_capacity(levels.len());
        sibling_pos.push((0..levels[0].len()).collect::<Vec<_>>());
        for l in 1..levels.len() {
            let mut pos = vec![0; levels[l].len()];
            for kids in &children[l - 1] {
                for (k, &c) in kids.iter().enumerate() {
                    pos[c] = k;
                }
            }
            sibling_pos.push(pos);
        }
        let leaf_index = levels
            .last()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(SemanticTree {
            levels,
            parent,
            children,
            sibling_pos,
            leaf_index,
        })
    }

    /// Single-level tree: the flat labelling seen as a depth-1 hierarchy.
    pub fn flat(labels: &[String]) -> Result<Self, TaxonomyError> {
        SemanticTree::new(vec![labels.to_vec()], Vec::new())
    }

    /// Builds a tree from explicit root-to-leaf name paths (all the same
    /// length). Node order at every level follows first appearance.
    pub fn from_paths<S: AsRef<str>>(paths: &[Vec<S>]) -> Result<Self, TaxonomyError> {
        let depth = paths
            .first()
            .map(|p| p.len())
            .ok_or_else(|| TaxonomyError::InvalidInput("no paths".into()))?;
        if depth == 0 || paths.iter().any(|p| p.len() != depth) {
            return Err(TaxonomyError::InvalidInput("paths must be non-empty and of equal length".into()));
        }
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); depth];
        let mut index: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); depth];
        let mut parent: Vec<Vec<usize>> = vec![Vec::new(); depth - 1];
        for path in paths {
            let mut prev = None;
            for (l, name) in path.iter().enumerate() {
                let name = name.as_ref();
                let id = match index[l].get(name) {
                    Some(&id) => {
                        if l > 0 && parent[l - 1][id] != prev.unwrap() {
                            return Err(TaxonomyError::InvalidInput(format!(
                                "node '{name}' at level {l} has two parents"
                            )));
                        }
                        id
                    }
                    None => {
                        let id = levels[l].len();
                        levels[l].push(name.to_string());
                        index[l].insert(name.to_string(), id);
                        if l > 0 {
                            parent[l - 1].push(prev.unwrap());
                        }
                        id
                    }
                };
                prev = Some(id);
            }
        }
        SemanticTree::new(levels, parent)
    }

    /// Number of levels (L + 1).
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Index of the leaf level, L.
    pub fn leaf_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &[String] {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[Vec<String>] {
        &self.levels
    }

    pub fn num_leaves(&self) -> usize {
        self.levels.last().unwrap().len()
    }

    pub fn leaf_labels(&self) -> &[String] {
        self.levels.last().unwrap()
    }

    pub fn leaf_position(&self, label: &str) -> Option<usize> {
        self.leaf_index.get(label).copied()
    }

    /// Parent (at level `l - 1`) of node `i` at level `l`.
    pub fn parent_of(&self, l: usize, i: usize) -> Option<usize> {
        if l == 0 {
            None
        } else {
            Some(self.parent[l - 1][i])
        }
    }

    /// Children (at level `l + 1`) of node `i` at level `l`, in sibling order.
    pub fn children_of(&self, l: usize, i: usize) -> &[usize] {
        &self.children[l][i]
    }

    /// Position of node `i` at level `l` among its siblings.
    pub fn sibling_position(&self, l: usize, i: usize) -> usize {
        self.sibling_pos[l][i]
    }

    /// Valid slice width at level `l`: the widest sibling set on that level.
    pub fn level_width(&self, l: usize) -> usize {
        if l == 0 {
            self.levels[0].len()
        } else {
            self.children[l - 1].iter().map(Vec::len).max().unwrap_or(0)
        }
    }

    pub fn code_dims(&self) -> CodeDims {
        let width = (0..self.num_levels()).map(|l| self.level_width(l)).max().unwrap_or(0);
        CodeDims {
            width,
            levels: self.num_levels(),
            total: width * self.num_levels(),
        }
    }

    /// Global node index per level for the leaf at position `leaf`.
    pub fn node_path(&self, leaf: usize) -> Vec<usize> {
        let depth = self.num_levels();
        let mut nodes = vec![0; depth];
        let mut cur = leaf;
        for l in (0..depth).rev() {
            nodes[l] = cur;
            if l > 0 {
                cur = self.parent[l - 1][cur];
            }
        }
        nodes
    }

    /// Root-to-leaf code of the leaf at position `leaf`.
    pub fn code_of_leaf(&self, leaf: usize) -> HierCode {
        let nodes = self.node_path(leaf);
        HierCode {
            path: nodes
                .iter()
                .enumerate()
                .map(|(l, &n)| self.sibling_pos[l][n])
                .collect(),
        }
    }

    pub fn encode_leaf(&self, label: &str) -> Result<HierCode, TaxonomyError> {
        let leaf = self
            .leaf_position(label)
            .ok_or_else(|| TaxonomyError::UnknownLabel(label.to_string()))?;
        Ok(self.code_of_leaf(leaf))
    }

    /// Resolves a (possibly truncated) code to the global node index at `level`.
    pub fn resolve(&self, path: &[usize], level: usize) -> Result<usize, TaxonomyError> {
        if level >= self.num_levels() {
            return Err(TaxonomyError::LevelOutOfRange(level));
        }
        if path.len() <= level {
            return Err(TaxonomyError::InvalidInput(format!(
                "path of length {} cannot address level {level}",
                path.len()
            )));
        }
        let mut node = 0;
        for (l, &idx) in path.iter().enumerate().take(level + 1) {
            let width = self.level_width(l);
            if idx >= width {
                return Err(TaxonomyError::IndexOutOfRange { level: l, index: idx, width });
            }
            if l == 0 {
                node = idx;
            } else {
                let kids = &self.children[l - 1][node];
                node = *kids.get(idx).ok_or(TaxonomyError::InconsistentPath {
                    level: l,
                    index: idx,
                    parent_level: l - 1,
                })?;
            }
        }
        Ok(node)
    }

    /// Name of the node addressed by `path` at `level`; the leaf label when
    /// `level` is the leaf level.
    pub fn decode(&self, path: &[usize], level: usize) -> Result<&str, TaxonomyError> {
        let node = self.resolve(path, level)?;
        Ok(&self.levels[level][node])
    }

    /// Decodes a concatenated embedding (layout of [`code_dims`](Self::code_dims))
    /// top-down: at every level the highest logit among the children of the
    /// node already chosen wins, lower index on ties. Returns the global node
    /// index per level.
    pub fn argmax_nodes(&self, embedding: &[f64]) -> Vec<usize> {
        let width = self.code_dims().width;
        debug_assert_eq!(embedding.len(), width * self.num_levels());
        let mut nodes = Vec::with_capacity(self.num_levels());
        let mut candidates: &[usize] = &[];
        let roots: Vec<usize> = (0..self.levels[0].len()).collect();
        for l in 0..self.num_levels() {
            let slice = &embedding[l * width..(l + 1) * width];
            let pick = |ids: &[usize]| -> usize {
                let mut best = ids[0];
                let mut best_v = f64::NEG_INFINITY;
                for (k, &id) in ids.iter().enumerate() {
                    if slice[k] > best_v {
                        best_v = slice[k];
                        best = id;
                    }
                }
                best
            };
            let node = if l == 0 { pick(&roots) } else { pick(candidates) };
            nodes.push(node);
            if l + 1 < self.num_levels() {
                candidates = &self.children[l][node];
            }
        }
        nodes
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = TreeFile {
            levels: self.levels.clone(),
            parent: self
                .parent
                .iter()
                .map(|p| p.iter().map(|&x| x as i64).collect())
                .collect(),
            leaf_labels: self.leaf_index.iter().map(|(k, &v)| (k.clone(), v as i64)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("tree serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: TreeFile = serde_json::from_str(text).map_err(|e| {
            TaxonomyError::schema(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let mut parent = Vec::with_capacity(file.parent.len());
        for (l, links) in file.parent.iter().enumerate() {
            let mut level = Vec::with_capacity(links.len());
            for (i, &p) in links.iter().enumerate() {
                if p < 0 {
                    return Err(TaxonomyError::schema(
                        format!("parent[{l}][{i}]"),
                        format!("negative parent index {p}"),
                    ));
                }
                level.push(p as usize);
            }
            parent.push(level);
        }
        // duplicate leaf names are reported by `new`
        let tree = SemanticTree::new(file.levels, parent)?;
        if file.leaf_labels.len() != tree.num_leaves() {
            return Err(TaxonomyError::schema(
                "leaf_labels",
                format!("{} entries for {} leaves", file.leaf_labels.len(), tree.num_leaves()),
            ));
        }
        for (label, &idx) in &file.leaf_labels {
            if tree.leaf_position(label).map(|p| p as i64) != Some(idx) {
                return Err(TaxonomyError::schema(
                    format!("leaf_labels.{label}"),
                    format!("index {idx} does not match the leaf level"),
                ));
            }
        }
        Ok(tree)
    }
}
