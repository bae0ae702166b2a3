use crate::taxonomy::SemanticTree;

use super::{Frame, RenderError};

/// Marks pixels with no class (not covered, or unlabeled ground truth).
pub const VOID_LABEL: u32 = u32::MAX;

/// Per-pixel class index image; classes are node indices of one tree level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
}

/// Decodes the semantic plane at `level`. Each covered pixel is decoded
/// top-down (see [`SemanticTree::argmax_nodes`]) so the label is always a
/// node of that level consistent with its coarser ancestors; pixels with
/// silhouette `≤ min_silhouette` are [`VOID_LABEL`].
pub fn render_semantic_labels(
    frame: &Frame,
    tree: &SemanticTree,
    level: usize,
    min_silhouette: f64,
) -> Result<LabelImage, RenderError> {
    if level >= tree.num_levels() {
        return Err(RenderError::LevelOutOfRange {
            level,
            levels: tree.num_levels(),
        });
    }
    if frame.code_dim != tree.code_dims().total {
        return Err(RenderError::ShapeMismatch(format!(
            "frame has {} semantic channels, tree layout needs {}",
            frame.code_dim,
            tree.code_dims().total
        )));
    }
    let labels = (0..frame.pixels())
        .map(|p| {
            if frame.silhouette[p] <= min_silhouette {
                VOID_LABEL
            } else {
                tree.argmax_nodes(frame.embedding_at(p))[level] as u32
            }
        })
        .collect();
    Ok(LabelImage {
        width: frame.width,
        height: frame.height,
        labels,
    })
}
