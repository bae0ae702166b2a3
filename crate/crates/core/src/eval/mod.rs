//! Trajectory, geometry, appearance, and segmentation metrics.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::renderer::{render_semantic_labels, Frame, RenderError, VOID_LABEL};
use crate::scene::Pose;
use crate::taxonomy::SemanticTree;

pub use crate::losses::ssim;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: {estimated} estimated vs {ground_truth} ground truth")]
    LengthMismatch { estimated: usize, ground_truth: usize },
    #[error("alignment is degenerate: {0}")]
    DegenerateAlignment(String),
    #[error("no valid pixels to evaluate")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Index-aligned estimated and ground-truth poses.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub estimated: Vec<Pose>,
    pub ground_truth: Vec<Pose>,
}

impl TrajectoryPair {
    pub fn new(estimated: Vec<Pose>, ground_truth: Vec<Pose>) -> Result<Self, EvalError> {
        if estimated.len() != ground_truth.len() {
            return Err(EvalError::LengthMismatch {
                estimated: estimated.len(),
                ground_truth: ground_truth.len(),
            });
        }
        Ok(TrajectoryPair {
            estimated,
            ground_truth,
        })
    }
}

/// Rigid transform `(R, t)` minimizing `Σ‖g_i − (R e_i + t)‖²` (no scale).
pub fn align_rigid(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<(Matrix3<f64>, Vector3<f64>), EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            estimated: est.len(),
            ground_truth: gt.len(),
        });
    }
    if est.len() < 2 {
        return Err(EvalError::DegenerateAlignment(format!(
            "need at least 2 poses, got {}",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let ce = est.iter().sum::<Vector3<f64>>() / n;
    let cg = gt.iter().sum::<Vector3<f64>>() / n;
    let spread: f64 = est.iter().map(|e| (e - ce).norm_squared()).sum();
    if spread < 1e-18 {
        return Err(EvalError::DegenerateAlignment(
            "all estimated positions coincide".into(),
        ));
    }
    let mut cov = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        cov += (g - cg) * (e - ce).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let t = cg - r * ce;
    Ok((r, t))
}

/// Translational RMSE in centimeters, optionally after rigid alignment.
pub fn ate_rmse(pair: &TrajectoryPair, align: bool) -> Result<f64, EvalError> {
    let est: Vec<Vector3<f64>> = pair.estimated.iter().map(|p| p.translation).collect();
    let gt: Vec<Vector3<f64>> = pair.ground_truth.iter().map(|p| p.translation).collect();
    if est.is_empty() {
        return Err(EvalError::DegenerateAlignment("empty trajectory".into()));
    }
    let (r, t) = if align {
        align_rigid(&est, &gt)?
    } else {
        (Matrix3::identity(), Vector3::zeros())
    };
    let sq: f64 = est.iter().zip(&gt).map(|(e, g)| (g - (r * e + t)).norm_squared()).sum();
    Ok((sq / est.len() as f64).sqrt() * 100.0)
}

/// Mean absolute depth error over `valid` pixels, in centimeters.
pub fn depth_l1(rendered: &[f64], gt: &[f64], valid: &[bool]) -> Result<f64, EvalError> {
    if rendered.len() != gt.len() || gt.len() != valid.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} rendered, {} ground-truth, {} mask values",
            rendered.len(),
            gt.len(),
            valid.len()
        )));
    }
    let (sum, n) = rendered
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, v)| **v)
        .fold((0.0, 0usize), |(s, n), ((r, g), _)| (s + (r - g).abs(), n + 1));
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    Ok(sum / n as f64 * 100.0)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// `K × K` counts indexed `[prediction][ground truth]`, VOID excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
    /// Non-VOID ground-truth pixels whose prediction was VOID or out of range.
    missed: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            missed: vec![0; classes],
        }
    }

    /// Adds one image. Pixels with VOID (or out-of-range) ground truth are
    /// skipped; a VOID prediction counts as a miss for the true class.
    pub fn add(&mut self, pred: &[u32], gt: &[u32], void: u32) {
        let k = self.classes;
        for (&p, &g) in pred.iter().zip(gt) {
            if g == void || g as usize >= k {
                continue;
            }
            if p == void || p as usize >= k {
                self.missed[g as usize] += 1;
            } else {
                self.counts[p as usize * k + g as usize] += 1;
            }
        }
    }

    pub fn get(&self, pred: usize, gt: usize) -> u64 {
        self.counts[pred * self.classes + gt]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.missed.iter().sum::<u64>()
    }

    /// IoU per class; `None` for classes absent from both prediction and
    /// ground truth.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let k = self.classes;
        (0..k)
            .map(|c| {
                let tp = self.get(c, c);
                let fp: u64 = (0..k).filter(|&g| g != c).map(|g| self.get(c, g)).sum();
                let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| self.get(p, c)).sum::<u64>() + self.missed[c];
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiouResult {
    pub per_class: Vec<Option<f64>>,
    /// Percent; `None` when no class was evaluated.
    pub mean: Option<f64>,
}

fn mean_percent<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.filter_map(|v| *v).collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64 * 100.0)
}

/// Mean IoU over classes present in prediction or ground truth.
pub fn miou(pred: &[u32], gt: &[u32], classes: usize, void: u32) -> MiouResult {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt, void);
    miou_from_confusion(&cm, None)
}

/// Mean over a confusion matrix, optionally restricted to `subset`.
pub fn miou_from_confusion(cm: &ConfusionMatrix, subset: Option<&[usize]>) -> MiouResult {
    let per_class = cm.iou();
    let mean = match subset {
        Some(list) => mean_percent(list.iter().filter(|&&c| c < per_class.len()).map(|&c| &per_class[c])),
        None => mean_percent(per_class.iter()),
    };
    MiouResult { per_class, mean }
}

/// Ground-truth node indices at `level` from per-pixel leaf labels.
pub fn level_ground_truth(tree: &SemanticTree, leaves: &[u32], level: usize) -> Vec<u32> {
    let paths: Vec<Vec<usize>> = (0..tree.num_leaves()).map(|i| tree.node_path(i)).collect();
    leaves
        .iter()
        .map(|&l| {
            if l == VOID_LABEL || l as usize >= paths.len() {
                VOID_LABEL
            } else {
                paths[l as usize][level] as u32
            }
        })
        .collect()
}

/// Accumulates one confusion matrix per tree level over many frames.
#[derive(Debug, Clone)]
pub struct LevelConfusion {
    pub levels: Vec<ConfusionMatrix>,
}

impl LevelConfusion {
    pub fn new(tree: &SemanticTree) -> Self {
        LevelConfusion {
            levels: (0..tree.num_levels())
                .map(|l| ConfusionMatrix::new(tree.level(l).len()))
                .collect(),
        }
    }

    /// `pred[l]` holds node indices of level `l`.
    pub fn add(&mut self, tree: &SemanticTree, pred: &[Vec<u32>], gt_leaves: &[u32]) {
        for (l, cm) in self.levels.iter_mut().enumerate() {
            cm.add(&pred[l], &level_ground_truth(tree, gt_leaves, l), VOID_LABEL);
        }
    }

    /// Decodes `frame` at every level and adds it.
    pub fn add_frame(
        &mut self,
        tree: &SemanticTree,
        frame: &Frame,
        gt_leaves: &[u32],
        min_silhouette: f64,
    ) -> Result<(), EvalError> {
        let pred = (0..tree.num_levels())
            .map(|l| render_semantic_labels(frame, tree, l, min_silhouette).map(|img| img.labels))
            .collect::<Result<Vec<_>, _>>()?;
        self.add(tree, &pred, gt_leaves);
        Ok(())
    }

    /// Mean IoU (%) per level; `None` where nothing was evaluated.
    pub fn means(&self) -> Vec<Option<f64>> {
        self.levels.iter().map(|cm| miou_from_confusion(cm, None).mean).collect()
    }
}

/// Per-level mIoU of one frame's per-level predictions.
pub fn miou_per_level(tree: &SemanticTree, pred: &[Vec<u32>], gt_leaves: &[u32]) -> Vec<Option<f64>> {
    let mut acc = LevelConfusion::new(tree);
    acc.add(tree, pred, gt_leaves);
    acc.means()
}
