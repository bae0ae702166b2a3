//! Tracking and mapping objectives over rendered frames.

use serde::Serialize;

use crate::renderer::Frame;
use crate::taxonomy::SemanticTree;

use super::semantic::{semantic_loss, HeadGrad, SemanticHead, SemanticTarget, SemanticTerms};
use super::ssim::ssim_with_grad;
use super::{ssim, LossError, LossWeights};

/// Observed color (`H·W·3`, in [0,1]) and metric depth (`H·W`, 0 = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
}

impl Observation {
    pub fn new(width: usize, height: usize, color: Vec<f64>, depth: Vec<f64>) -> Result<Self, LossError> {
        if color.len() != width * height * 3 || depth.len() != width * height {
            return Err(LossError::ShapeMismatch(format!(
                "observation {}x{} with {} color and {} depth values",
                width,
                height,
                color.len(),
                depth.len()
            )));
        }
        Ok(Observation {
            width,
            height,
            color,
            depth,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn depth_valid(&self, p: usize) -> bool {
        let d = self.depth[p];
        d.is_finite() && d > 0.0
    }
}

fn check_shapes(rendered: &Frame, obs: &Observation) -> Result<(), LossError> {
    if rendered.width != obs.width || rendered.height != obs.height {
        return Err(LossError::ShapeMismatch(format!(
            "rendered {}x{} vs observed {}x{}",
            rendered.width, rendered.height, obs.width, obs.height
        )));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pixels with silhouette above `delta` and a valid observed depth.
pub fn silhouette_mask(rendered: &Frame, obs: &Observation, delta: f64) -> Vec<bool> {
    (0..rendered.pixels())
        .map(|p| rendered.silhouette[p] > delta && obs.depth_valid(p))
        .collect()
}

/// `w1·|D − D_obs| + w2·mean_c |C − C_obs|`, averaged over the silhouette mask.
pub fn tracking_loss(rendered: &Frame, obs: &Observation, weights: &LossWeights) -> Result<f64, LossError> {
    tracking_impl(rendered, obs, weights, None)
}

/// [`tracking_loss`] plus the per-pixel upstream gradient for the renderer.
pub fn tracking_loss_with_grad(
    rendered: &Frame,
    obs: &Observation,
    weights: &LossWeights,
) -> Result<(f64, Frame), LossError> {
    let mut g = Frame::zeros_like(rendered);
    let v = tracking_impl(rendered, obs, weights, Some(&mut g))?;
    Ok((v, g))
}

fn tracking_impl(
    rendered: &Frame,
    obs: &Observation,
    weights: &LossWeights,
    mut grad: Option<&mut Frame>,
) -> Result<f64, LossError> {
    check_shapes(rendered, obs)?;
    let mask = silhouette_mask(rendered, obs, weights.delta);
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(LossError::EmptyMask);
    }
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    for p in (0..mask.len()).filter(|&p| mask[p]) {
        let dd = rendered.depth[p] - obs.depth[p];
        total += weights.w1 * dd.abs();
        let mut cl = 0.0;
        for c in 0..3 {
            let dc = rendered.color[p * 3 + c] - obs.color[p * 3 + c];
            cl += dc.abs() / 3.0;
            if let Some(g) = grad.as_mut() {
                g.color[p * 3 + c] += weights.w2 * inv * sign(dc) / 3.0;
            }
        }
        total += weights.w2 * cl;
        if let Some(g) = grad.as_mut() {
            g.depth[p] += weights.w1 * inv * sign(dd);
        }
    }
    Ok(total * inv)
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)/2` over whole `h × w × 3` images.
pub fn color_loss_prime(c: &[f64], c_obs: &[f64], w: usize, h: usize, lambda: f64) -> Result<f64, LossError> {
    let s = ssim(c, c_obs, w, h)?;
    let l1 = c.iter().zip(c_obs).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.len() as f64;
    Ok((1.0 - lambda) * l1 + lambda * (1.0 - s) / 2.0)
}

/// [`color_loss_prime`] and its gradient with respect to `c`, scaled by `scale`
/// and added to `grad`.
pub fn color_loss_prime_grad(
    c: &[f64],
    c_obs: &[f64],
    w: usize,
    h: usize,
    lambda: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64, LossError> {
    let (s, ds) = ssim_with_grad(c, c_obs, w, h)?;
    let n = c.len() as f64;
    let mut l1 = 0.0;
    for i in 0..c.len() {
        let d = c[i] - c_obs[i];
        l1 += d.abs();
        grad[i] += scale * ((1.0 - lambda) * sign(d) / n - lambda * 0.5 * ds[i]);
    }
    Ok((1.0 - lambda) * l1 / n + lambda * (1.0 - s) / 2.0)
}

/// Semantic inputs for [`mapping_loss`].
#[derive(Clone, Copy)]
pub struct SemanticInputs<'a> {
    pub target: &'a SemanticTarget,
    pub head: &'a SemanticHead,
    pub tree: &'a SemanticTree,
}

/// Unweighted terms and the weighted total of one mapping-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MappingTerms {
    /// Masked depth L1; 0 when the mask is empty.
    pub depth: f64,
    pub color: f64,
    pub semantic: SemanticTerms,
    pub total: f64,
}

/// `w3·L1_depth(M) + w4·color′ + w5·semantic`.
pub fn mapping_loss(
    rendered: &Frame,
    obs: &Observation,
    semantic: Option<SemanticInputs>,
    weights: &LossWeights,
    iteration: usize,
) -> Result<MappingTerms, LossError> {
    mapping_impl(rendered, obs, semantic, weights, iteration, None)
}

/// [`mapping_loss`] plus the upstream frame gradient and the head gradient
/// (zero when semantics are off).
pub fn mapping_loss_with_grad(
    rendered: &Frame,
    obs: &Observation,
    semantic: Option<SemanticInputs>,
    weights: &LossWeights,
    iteration: usize,
) -> Result<(MappingTerms, Frame, Option<HeadGrad>), LossError> {
    let mut g = Frame::zeros_like(rendered);
    let mut hg = semantic.map(|s| HeadGrad::zeros_like(s.head));
    let terms = mapping_impl(rendered, obs, semantic, weights, iteration, Some((&mut g, hg.as_mut())))?;
    Ok((terms, g, hg))
}

fn mapping_impl(
    rendered: &Frame,
    obs: &Observation,
    semantic: Option<SemanticInputs>,
    weights: &LossWeights,
    iteration: usize,
    mut grad: Option<(&mut Frame, Option<&mut HeadGrad>)>,
) -> Result<MappingTerms, LossError> {
    check_shapes(rendered, obs)?;
    let mut terms = MappingTerms::default();

    let mask = silhouette_mask(rendered, obs, weights.delta);
    let count = mask.iter().filter(|m| **m).count();
    if count > 0 {
        let inv = 1.0 / count as f64;
        for p in (0..mask.len()).filter(|&p| mask[p]) {
            let d = rendered.depth[p] - obs.depth[p];
            terms.depth += d.abs() * inv;
            if let Some((g, _)) = grad.as_mut() {
                g.depth[p] += weights.w3 * inv * sign(d);
            }
        }
    }

    let (w, h) = (rendered.width, rendered.height);
    terms.color = match grad.as_mut() {
        Some((g, _)) => color_loss_prime_grad(
            &rendered.color,
            &obs.color,
            w,
            h,
            weights.ssim_lambda,
            weights.w4,
            &mut g.color,
        )?,
        None => color_loss_prime(&rendered.color, &obs.color, w, h, weights.ssim_lambda)?,
    };

    if let Some(s) = semantic {
        if weights.w5 != 0.0 {
            if rendered.code_dim == 0 {
                return Err(LossError::LayoutMismatch {
                    expected: s.tree.code_dims().total,
                    found: 0,
                });
            }
            let g = match grad.as_mut() {
                Some((g, Some(hg))) => Some((&mut g.semantic[..], &mut **hg, weights.w5)),
                _ => None,
            };
            terms.semantic = semantic_loss(rendered, s.head, s.target, s.tree, weights, iteration, g)?;
        }
    }

    terms.total = weights.w3 * terms.depth + weights.w4 * terms.color + weights.w5 * terms.semantic.total;
    Ok(terms)
}
