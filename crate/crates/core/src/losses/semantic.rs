//! Hierarchical semantic losses over the rendered embedding plane.
//!
//! The inter-level term applies a softmax cross-entropy inside every level's
//! slice of the embedding; dims past the level's width are treated as −∞. The
//! cross-level term maps the whole embedding through a shared linear head to
//! flat leaf logits. Both average over non-VOID pixels, and VOID pixels get
//! exactly zero gradient.

use serde::{Deserialize, Serialize};

use crate::renderer::{Frame, VOID_LABEL};
use crate::taxonomy::SemanticTree;

use super::{LossError, LossWeights};

/// Shared linear map from the concatenated embedding to leaf logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticHead {
    pub classes: usize,
    pub code_dim: usize,
    /// `classes × code_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SemanticHead {
    /// Zero weights and bias: a uniform prediction.
    pub fn zeros(classes: usize, code_dim: usize) -> Self {
        SemanticHead {
            classes,
            code_dim,
            weight: vec![0.0; classes * code_dim],
            bias: vec![0.0; classes],
        }
    }

    pub fn for_tree(tree: &SemanticTree) -> Self {
        SemanticHead::zeros(tree.num_leaves(), tree.code_dims().total)
    }

    pub fn logits(&self, h: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.weight[k * self.code_dim..(k + 1) * self.code_dim];
            *o = self.bias[k] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Gradient with respect to a [`SemanticHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadGrad {
    pub fn zeros_like(head: &SemanticHead) -> Self {
        HeadGrad {
            weight: vec![0.0; head.weight.len()],
            bias: vec![0.0; head.bias.len()],
        }
    }
}

/// Per-pixel leaf labels (`VOID_LABEL` to ignore) plus their per-level
/// sibling-local codes.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTarget {
    pub width: usize,
    pub height: usize,
    pub leaves: Vec<u32>,
    codes: Vec<Vec<usize>>,
}

impl SemanticTarget {
    pub fn new(tree: &SemanticTree, width: usize, height: usize, leaves: Vec<u32>) -> Result<Self, LossError> {
        if leaves.len() != width * height {
            return Err(LossError::ShapeMismatch(format!(
                "{} labels for a {}x{} target",
                leaves.len(),
                width,
                height
            )));
        }
        if let Some(&bad) = leaves
            .iter()
            .find(|&&l| l != VOID_LABEL && l as usize >= tree.num_leaves())
        {
            return Err(LossError::UnknownLeaf(bad));
        }
        let codes = (0..tree.num_leaves()).map(|i| tree.code_of_leaf(i).path).collect();
        Ok(SemanticTarget {
            width,
            height,
            leaves,
            codes,
        })
    }

    /// Sibling-local index at `level` for `pixel`, or `None` on VOID.
    pub fn level_label(&self, pixel: usize, level: usize) -> Option<usize> {
        match self.leaves[pixel] {
            VOID_LABEL => None,
            l => Some(self.codes[l as usize][level]),
        }
    }

    pub fn valid_pixels(&self) -> usize {
        self.leaves.iter().filter(|&&l| l != VOID_LABEL).count()
    }
}

fn check_layout(hmap: &Frame, target: &SemanticTarget, tree: &SemanticTree) -> Result<(), LossError> {
    let dims = tree.code_dims();
    if hmap.code_dim != dims.total {
        return Err(LossError::LayoutMismatch {
            expected: dims.total,
            found: hmap.code_dim,
        });
    }
    if hmap.width != target.width || hmap.height != target.height {
        return Err(LossError::ShapeMismatch(format!(
            "embedding plane {}x{} vs target {}x{}",
            hmap.width, hmap.height, target.width, target.height
        )));
    }
    Ok(())
}

/// Writes `softmax(logits) − onehot(label)` into `probs` (reusing it) and
/// returns `−ln p[label]`.
fn softmax_ce(logits: &[f64], label: usize, probs: &mut [f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &x) in probs.iter_mut().zip(logits) {
        *p = (x - m).exp();
        z += *p;
    }
    let loss = z.ln() - (logits[label] - m);
    probs.iter_mut().for_each(|p| *p /= z);
    probs[label] -= 1.0;
    loss
}

/// Sum over levels of the masked per-slice cross-entropy, averaged over
/// non-VOID pixels. With `grad = Some((g, s))`, adds `s · ∂L/∂Hmap` to `g`
/// (laid out like `hmap.semantic`).
pub fn inter_level_loss(
    hmap: &Frame,
    target: &SemanticTarget,
    tree: &SemanticTree,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<f64, LossError> {
    check_layout(hmap, target, tree)?;
    let count = target.valid_pixels();
    if count == 0 {
        return Ok(0.0);
    }
    let dims = tree.code_dims();
    let mut probs = vec![0.0; dims.width];
    let mut total = 0.0;
    let inv = 1.0 / count as f64;
    for p in 0..hmap.pixels() {
        if target.leaves[p] == VOID_LABEL {
            continue;
        }
        let h = hmap.embedding_at(p);
        for l in 0..dims.levels {
            let n_l = tree.level_width(l);
            let off = l * dims.width;
            let label = target.level_label(p, l).expect("non-void pixel");
            total += softmax_ce(&h[off..off + n_l], label, &mut probs[..n_l]);
            if let Some((g, s)) = grad.as_mut() {
                let dst = &mut g[p * dims.total + off..p * dims.total + off + n_l];
                for (d, q) in dst.iter_mut().zip(&probs[..n_l]) {
                    *d += *s * inv * q;
                }
            }
        }
    }
    Ok(total * inv)
}

/// Flat cross-entropy of `softmax(W h + b)` against the leaf label, averaged
/// over non-VOID pixels. With `grad`, adds `s ·` the gradient to the plane
/// buffer and to `head_grad`.
pub fn cross_level_loss(
    hmap: &Frame,
    head: &SemanticHead,
    target: &SemanticTarget,
    tree: &SemanticTree,
    mut grad: Option<(&mut [f64], &mut HeadGrad, f64)>,
) -> Result<f64, LossError> {
    check_layout(hmap, target, tree)?;
    if head.code_dim != hmap.code_dim || head.classes != tree.num_leaves() {
        return Err(LossError::LayoutMismatch {
            expected: tree.num_leaves() * hmap.code_dim,
            found: head.classes * head.code_dim,
        });
    }
    let count = target.valid_pixels();
    if count == 0 {
        return Ok(0.0);
    }
    let nd = head.code_dim;
    let mut logits = vec![0.0; head.classes];
    let mut probs = vec![0.0; head.classes];
    let mut total = 0.0;
    let inv = 1.0 / count as f64;
    for p in 0..hmap.pixels() {
        let leaf = target.leaves[p];
        if leaf == VOID_LABEL {
            continue;
        }
        let h = hmap.embedding_at(p);
        head.logits(h, &mut logits);
        total += softmax_ce(&logits, leaf as usize, &mut probs);
        if let Some((g, hg, s)) = grad.as_mut() {
            let dh = &mut g[p * nd..(p + 1) * nd];
            for (k, &q) in probs.iter().enumerate() {
                let q = *s * inv * q;
                if q == 0.0 {
                    continue;
                }
                hg.bias[k] += q;
                let row = &head.weight[k * nd..(k + 1) * nd];
                let grow = &mut hg.weight[k * nd..(k + 1) * nd];
                for j in 0..nd {
                    dh[j] += q * row[j];
                    grow[j] += q * h[j];
                }
            }
        }
    }
    Ok(total * inv)
}

/// Terms of one semantic-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SemanticTerms {
    pub omega1: f64,
    pub omega2: f64,
    pub inter: f64,
    /// Unweighted cross-level loss; not evaluated (0) while `omega2 = 0`.
    pub cross: f64,
    pub total: f64,
}

/// `ω1·L_inter + ω2·L_cross` with the schedule from `weights` at `iteration`.
pub fn semantic_loss(
    hmap: &Frame,
    head: &SemanticHead,
    target: &SemanticTarget,
    tree: &SemanticTree,
    weights: &LossWeights,
    iteration: usize,
    grad: Option<(&mut [f64], &mut HeadGrad, f64)>,
) -> Result<SemanticTerms, LossError> {
    let (omega1, omega2) = weights.semantic_weights(iteration);
    let mut terms = SemanticTerms {
        omega1,
        omega2,
        ..Default::default()
    };
    match grad {
        Some((g, hg, s)) => {
            if omega1 != 0.0 {
                terms.inter = inter_level_loss(hmap, target, tree, Some((&mut *g, s * omega1)))?;
            }
            if omega2 != 0.0 {
                terms.cross = cross_level_loss(hmap, head, target, tree, Some((g, hg, s * omega2)))?;
            }
        }
        None => {
            if omega1 != 0.0 {
                terms.inter = inter_level_loss(hmap, target, tree, None)?;
            }
            if omega2 != 0.0 {
                terms.cross = cross_level_loss(hmap, head, target, tree, None)?;
            }
        }
    }
    terms.total = omega1 * terms.inter + omega2 * terms.cross;
    Ok(terms)
}
