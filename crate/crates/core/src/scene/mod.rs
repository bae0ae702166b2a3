//! Gaussian map, camera model, and pose algebra.

mod camera;
mod persist;
mod pose;

use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use thiserror::Error;

use crate::taxonomy::{HierCode, SemanticTree, TaxonomyError};

pub use camera::{project, projection_jacobian, CameraIntrinsics, Projection};
pub use persist::{export_ascii, MAP_MAGIC, MAP_VERSION};
pub use pose::{quaternion_gradient, rotation_from_wxyz, Pose};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("point behind the near plane (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("invalid seed {index}: {reason}")]
    InvalidSeed { index: usize, reason: String },
    #[error("map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One isotropic semantic Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGaussian {
    pub center: [f64; 3],
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Concatenated per-level logits.
    pub embedding: Vec<f64>,
}

/// Semantic seed for a new Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedLabel {
    Unlabeled,
    Leaf(String),
    /// Leaf position in the bound tree.
    LeafIndex(usize),
    Code(HierCode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSeed {
    pub center: [f64; 3],
    pub radius: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    pub label: SeedLabel,
}

/// Embedding initialization: i.i.d. uniform logits in `±noise`, plus `bias`
/// on the labelled index of every level slice when `label_bias` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingInit {
    pub noise: f64,
    pub bias: f64,
    pub label_bias: bool,
}

impl Default for EmbeddingInit {
    fn default() -> Self {
        EmbeddingInit {
            noise: 0.01,
            bias: 1.0,
            label_bias: true,
        }
    }
}

/// Global map stored as parallel arrays so optimizers can update whole
/// parameter classes at once. The order of Gaussians is stable under edits.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMap {
    code_dim: usize,
    tree: Option<Arc<SemanticTree>>,
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    /// `len() * code_dim` logits, Gaussian-major.
    pub embeddings: Vec<f64>,
}

impl GaussianMap {
    /// Empty map whose embeddings follow `tree`'s code layout.
    pub fn new(tree: Arc<SemanticTree>) -> Self {
        GaussianMap {
            code_dim: tree.code_dims().total,
            tree: Some(tree),
            ..GaussianMap::without_semantics()
        }
    }

    /// Empty map carrying geometry and color only.
    pub fn without_semantics() -> Self {
        GaussianMap {
            code_dim: 0,
            tree: None,
            centers: Vec::new(),
            radii: Vec::new(),
            opacities: Vec::new(),
            colors: Vec::new(),
            embeddings: Vec::new(),
        }
    }

    /// Map with an explicit embedding width and no bound tree.
    pub fn with_code_dim(code_dim: usize) -> Self {
        GaussianMap {
            code_dim,
            ..GaussianMap::without_semantics()
        }
    }

    pub fn tree(&self) -> Option<&Arc<SemanticTree>> {
        self.tree.as_ref()
    }

    pub fn bind_tree(&mut self, tree: Arc<SemanticTree>) -> Result<(), SceneError> {
        let dims = tree.code_dims().total;
        if dims != self.code_dim {
            return Err(SceneError::Format(format!(
                "tree code dimension {dims} does not match map dimension {}",
                self.code_dim
            )));
        }
        self.tree = Some(tree);
        Ok(())
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, i: usize) -> Vector3<f64> {
        let c = self.centers[i];
        Vector3::new(c[0], c[1], c[2])
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.code_dim..(i + 1) * self.code_dim]
    }

    pub fn get(&self, i: usize) -> SemanticGaussian {
        SemanticGaussian {
            center: self.centers[i],
            radius: self.radii[i],
            opacity: self.opacities[i],
            color: self.colors[i],
            embedding: self.embedding(i).to_vec(),
        }
    }

    /// Appends a fully specified Gaussian.
    pub fn push(&mut self, g: SemanticGaussian) -> Result<(), SceneError> {
        if g.embedding.len() != self.code_dim {
            return Err(SceneError::InvalidSeed {
                index: self.len(),
                reason: format!("embedding has {} entries, map expects {}", g.embedding.len(), self.code_dim),
            });
        }
        check_params(self.len(), g.radius, g.opacity)?;
        self.centers.push(g.center);
        self.radii.push(g.radius);
        self.opacities.push(g.opacity);
        self.colors.push(g.color);
        self.embeddings.extend_from_slice(&g.embedding);
        Ok(())
    }

    /// Adds seeded Gaussians. All labels are resolved before anything is
    /// inserted, so a bad seed leaves the map unchanged.
    pub fn add_gaussians<R: Rng>(
        &mut self,
        seeds: &[GaussianSeed],
        init: &EmbeddingInit,
        rng: &mut R,
    ) -> Result<usize, SceneError> {
        let mut codes = Vec::with_capacity(seeds.len());
        for (i, s) in seeds.iter().enumerate() {
            check_params(i, s.radius, s.opacity)?;
            codes.push(self.resolve_label(&s.label)?);
        }
        let width = self.tree.as_ref().map(|t| t.code_dims().width).unwrap_or(0);
        for (s, code) in seeds.iter().zip(codes) {
            self.centers.push(s.center);
            self.radii.push(s.radius);
            self.opacities.push(s.opacity);
            self.colors.push(s.color);
            let start = self.embeddings.len();
            for _ in 0..self.code_dim {
                let v = if init.noise > 0.0 {
                    rng.random_range(-init.noise..init.noise)
                } else {
                    0.0
                };
                self.embeddings.push(v);
            }
            if let (Some(code), true) = (code, init.label_bias) {
                for (l, &idx) in code.path.iter().enumerate() {
                    self.embeddings[start + l * width + idx] += init.bias;
                }
            }
        }
        Ok(seeds.len())
    }

    fn resolve_label(&self, label: &SeedLabel) -> Result<Option<HierCode>, SceneError> {
        if self.code_dim == 0 {
            return Ok(None);
        }
        let tree = match (&self.tree, label) {
            (_, SeedLabel::Unlabeled) => return Ok(None),
            (Some(t), _) => t,
            (None, _) => return Ok(None),
        };
        let code = match label {
            SeedLabel::Unlabeled => unreachable!(),
            SeedLabel::Leaf(name) => tree.encode_leaf(name)?,
            SeedLabel::LeafIndex(i) => {
                if *i >= tree.num_leaves() {
                    return Err(TaxonomyError::UnknownLabel(format!("#{i}")).into());
                }
                tree.code_of_leaf(*i)
            }
            SeedLabel::Code(c) => {
                tree.resolve(&c.path, tree.leaf_level())?;
                c.clone()
            }
        };
        Ok(Some(code))
    }

    /// Removes Gaussians with opacity below `min_opacity` or radius above
    /// `max_radius`. Survivors keep their relative order.
    pub fn prune(&mut self, min_opacity: f64, max_radius: f64) -> usize {
        let keep: Vec<bool> = (0..self.len())
            .map(|i| !(self.opacities[i] < min_opacity || self.radii[i] > max_radius))
            .collect();
        self.retain(&keep)
    }

    /// Keeps Gaussians whose flag is set; returns the number removed.
    pub fn retain(&mut self, keep: &[bool]) -> usize {
        assert_eq!(keep.len(), self.len());
        let removed = keep.iter().filter(|k| !**k).count();
        if removed == 0 {
            return 0;
        }
        let n = self.code_dim;
        let mut it = keep.iter();
        self.centers.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.radii.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.opacities.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.colors.retain(|_| *it.next().unwrap());
        if n > 0 {
            let mut emb = Vec::with_capacity(self.centers.len() * n);
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    emb.extend_from_slice(&self.embeddings[i * n..(i + 1) * n]);
                }
            }
            self.embeddings = emb;
        }
        removed
    }

    /// Order-sensitive checksum over every parameter, for detecting mutation.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.len() * (8 + self.code_dim) * 8);
        for i in 0..self.len() {
            for v in self.centers[i] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.extend_from_slice(&self.radii[i].to_le_bytes());
            bytes.extend_from_slice(&self.opacities[i].to_le_bytes());
            for v in self.colors[i] {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in &self.embeddings {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::taxonomy::fnv1a(&bytes)
    }
}

fn check_params(index: usize, radius: f64, opacity: f64) -> Result<(), SceneError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SceneError::InvalidSeed {
            index,
            reason: format!("radius {radius} must be positive"),
        });
    }
    if !(0.0..=1.0).contains(&opacity) {
        return Err(SceneError::InvalidSeed {
            index,
            reason: format!("opacity {opacity} outside [0, 1]"),
        });
    }
    Ok(())
}
