//! Alternating tracking and mapping over an RGB-D + semantic sequence.
//!
//! Frame 0 seeds the map. Every later frame is tracked against the frozen
//! map from a constant-velocity guess, the map is densified where the frame
//! is unexplained, and the map (plus the semantic head) is refined over a
//! window of the current frame and a few random keyframes with the pose
//! frozen.

mod adam;

use std::fmt::Display;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError, LevelConfusion, TrajectoryPair};
use crate::io::DatasetFrame;
use crate::losses::{
    mapping_loss_with_grad, tracking_loss, tracking_loss_with_grad, LossError, LossWeights, MappingTerms,
    Observation, SemanticHead, SemanticInputs, SemanticTarget,
};
use crate::renderer::{render, Frame, RenderError, RenderOptions, Rasterizer};
use crate::scene::{CameraIntrinsics, EmbeddingInit, GaussianMap, GaussianSeed, Pose, SceneError, SeedLabel};
use crate::taxonomy::SemanticTree;

pub use adam::{adam_step, AdamParams, AdamState};

#[derive(Debug, Error)]
pub enum SlamError {
    #[error("frame has no valid depth")]
    EmptyDepth,
    #[error("tracking lost: {0}")]
    TrackingLost(String),
    #[error("non-finite mapping loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("sequence has no frames")]
    NoFrames,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Adam learning rates per parameter class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub means: f64,
    pub radii: f64,
    pub opacities: f64,
    pub colors: f64,
    pub embeddings: f64,
    pub head: f64,
    pub rotation: f64,
    pub translation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            means: 1e-4,
            radii: 1e-3,
            opacities: 5e-2,
            colors: 2.5e-3,
            embeddings: 1e-2,
            head: 1e-3,
            rotation: 4e-4,
            translation: 2e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    pub tracking_iterations: usize,
    pub mapping_iterations: usize,
    pub lr: LearningRates,
    pub adam: AdamParams,
    /// Pixel stride of the seeding grid (initialization and densification).
    pub seed_stride: usize,
    pub init_opacity: f64,
    /// Seeded screen radius in units of `seed_stride` pixels.
    pub radius_scale: f64,
    pub min_radius: f64,
    /// Densify where the rendered silhouette is below this.
    pub densify_silhouette: f64,
    /// Densify where observed depth is this far (m) in front of the render.
    pub densify_depth_margin: f64,
    pub keyframe_every: usize,
    /// Refine the seeded map on the first frame before tracking the second.
    pub map_first_frame: bool,
    /// Random keyframes joining the current frame in each mapping window.
    pub window_keyframes: usize,
    pub embedding_noise: f64,
    pub embedding_bias: f64,
    /// Silhouette below which evaluation treats a pixel as unlabeled.
    pub eval_min_silhouette: f64,
    pub loss: LossWeights,
}

impl Default for SlamConfig {
    fn default() -> Self {
        SlamConfig {
            tracking_iterations: 40,
            mapping_iterations: 60,
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            seed_stride: 2,
            init_opacity: 0.5,
            radius_scale: 1.5,
            min_radius: 1e-4,
            densify_silhouette: 0.5,
            densify_depth_margin: 0.05,
            keyframe_every: 8,
            map_first_frame: true,
            window_keyframes: 4,
            embedding_noise: 0.01,
            embedding_bias: 1.0,
            eval_min_silhouette: 0.5,
            loss: LossWeights::default(),
        }
    }
}

impl SlamConfig {
    pub fn validate(&self) -> Result<(), SlamError> {
        let bad = |m: String| Err(SlamError::Config(m));
        if self.tracking_iterations == 0 || self.mapping_iterations == 0 {
            return bad("iteration counts must be ≥ 1".into());
        }
        if self.seed_stride == 0 || self.keyframe_every == 0 {
            return bad("seed_stride and keyframe_every must be ≥ 1".into());
        }
        let lr = &self.lr;
        for (name, v) in [
            ("means", lr.means),
            ("radii", lr.radii),
            ("opacities", lr.opacities),
            ("colors", lr.colors),
            ("embeddings", lr.embeddings),
            ("head", lr.head),
            ("rotation", lr.rotation),
            ("translation", lr.translation),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("learning rate {name} must be > 0, got {v}"));
            }
        }
        if !(self.init_opacity > 0.0 && self.init_opacity <= 1.0) {
            return bad(format!("init_opacity must lie in (0, 1], got {}", self.init_opacity));
        }
        if !(self.radius_scale > 0.0 && self.min_radius > 0.0) {
            return bad("radius_scale and min_radius must be > 0".into());
        }
        self.loss.validate().map_err(SlamError::Config)
    }

    fn embedding_init(&self) -> EmbeddingInit {
        EmbeddingInit {
            noise: self.embedding_noise,
            bias: self.embedding_bias,
            label_bias: true,
        }
    }
}

/// Execution switches that do not change the optimization problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub parallel: bool,
    pub semantics: bool,
    pub seed: u64,
    /// Score the final map against every stored frame.
    pub evaluate: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallel: true,
            semantics: true,
            seed: 0,
            evaluate: true,
        }
    }
}

/// One input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SlamFrame {
    pub index: usize,
    pub timestamp: f64,
    pub obs: Observation,
    /// Leaf indices or VOID.
    pub labels: Vec<u32>,
    pub gt_pose: Option<Pose>,
}

impl From<DatasetFrame> for SlamFrame {
    fn from(f: DatasetFrame) -> Self {
        SlamFrame {
            index: f.index,
            timestamp: f.timestamp,
            obs: f.observation(),
            labels: f.semantic,
            gt_pose: f.gt_pose,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub lost: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Timing {
    pub tracking_s: f64,
    pub densify_s: f64,
    pub mapping_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
    pub frames_tracked: usize,
    pub frames_mapped: usize,
    pub tracking_ms_per_frame: f64,
    pub mapping_ms_per_frame: f64,
}

struct Stored {
    frame: SlamFrame,
    target: Option<SemanticTarget>,
}

/// Result of [`SlamState::track`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackResult {
    pub pose: Pose,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
}

/// Everything the loop carries between frames.
pub struct SlamState {
    pub map: GaussianMap,
    pub head: Option<SemanticHead>,
    pub tree: Option<Arc<SemanticTree>>,
    pub k: CameraIntrinsics,
    pub config: SlamConfig,
    pub options: RunOptions,
    pub trajectory: Vec<TrajectoryEntry>,
    /// Positions in the frame store (and trajectory) of keyframes.
    pub keyframes: Vec<usize>,
    pub timing: Timing,
    /// Total optimizer steps taken, by stage.
    pub tracking_steps: usize,
    pub mapping_steps: usize,
    frames: Vec<Stored>,
    rng: ChaCha8Rng,
}

impl SlamState {
    /// Seeds the map from `frame` at the identity pose.
    pub fn initialize(
        frame: SlamFrame,
        k: CameraIntrinsics,
        tree: Option<Arc<SemanticTree>>,
        config: SlamConfig,
        options: RunOptions,
    ) -> Result<Self, SlamError> {
        config.validate()?;
        k.validate()?;
        check_frame(&frame, &k)?;
        let semantics = options.semantics && tree.is_some();
        let tree = if semantics { tree } else { None };
        let map = match &tree {
            Some(t) => GaussianMap::new(t.clone()),
            None => GaussianMap::without_semantics(),
        };
        let head = tree.as_ref().map(|t| SemanticHead::for_tree(t));
        let mut state = SlamState {
            map,
            head,
            tree,
            k,
            config,
            options,
            trajectory: Vec::new(),
            keyframes: Vec::new(),
            timing: Timing::default(),
            tracking_steps: 0,
            mapping_steps: 0,
            frames: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(options.seed),
        };
        let pose = Pose::identity();
        let seeds = state.seeds(&frame, &pose, |_| true);
        if seeds.is_empty() {
            return Err(SlamError::EmptyDepth);
        }
        let init = state.config.embedding_init();
        state.map.add_gaussians(&seeds, &init, &mut state.rng)?;
        state.push_frame(frame, pose, false)?;
        state.keyframes.push(0);
        Ok(state)
    }

    pub fn semantics(&self) -> bool {
        self.tree.is_some()
    }

    fn render_options(&self, semantics: bool) -> RenderOptions {
        RenderOptions {
            parallel: self.options.parallel,
            semantics: semantics && self.semantics(),
        }
    }

    fn push_frame(&mut self, frame: SlamFrame, pose: Pose, lost: bool) -> Result<(), SlamError> {
        let target = match &self.tree {
            Some(t) => Some(SemanticTarget::new(t, frame.obs.width, frame.obs.height, frame.labels.clone())?),
            None => None,
        };
        self.trajectory.push(TrajectoryEntry {
            index: frame.index,
            timestamp: frame.timestamp,
            pose,
            lost,
        });
        self.frames.push(Stored { frame, target });
        Ok(())
    }

    /// Seeds on the stride grid for pixels with valid depth where `select`
    /// holds.
    fn seeds(&self, frame: &SlamFrame, pose: &Pose, select: impl Fn(usize) -> bool) -> Vec<GaussianSeed> {
        let (w, h) = (frame.obs.width, frame.obs.height);
        let stride = self.config.seed_stride;
        let mut out = Vec::new();
        for y in (0..h).step_by(stride) {
            for x in (0..w).step_by(stride) {
                let p = y * w + x;
                if !frame.obs.depth_valid(p) || !select(p) {
                    continue;
                }
                let z = frame.obs.depth[p];
                let c = pose.transform_point(&self.k.back_project(x as f64, y as f64, z));
                let label = match frame.labels.get(p) {
                    Some(&l) if l != crate::renderer::VOID_LABEL && self.semantics() => SeedLabel::LeafIndex(l as usize),
                    _ => SeedLabel::Unlabeled,
                };
                out.push(GaussianSeed {
                    center: [c.x, c.y, c.z],
                    radius: self.config.radius_scale * stride as f64 * z / self.k.fx,
                    opacity: self.config.init_opacity,
                    color: [
                        frame.obs.color[p * 3],
                        frame.obs.color[p * 3 + 1],
                        frame.obs.color[p * 3 + 2],
                    ],
                    label,
                });
            }
        }
        out
    }

    /// Constant-velocity guess for the next frame.
    pub fn predict_pose(&self) -> Pose {
        let n = self.trajectory.len();
        let prev = self.trajectory[n - 1].pose;
        if n < 2 {
            return prev;
        }
        let prev2 = self.trajectory[n - 2].pose;
        if prev2 == prev {
            return prev;
        }
        prev.compose(&prev2.inverse().compose(&prev))
    }

    /// Optimizes the camera pose for `obs` with the map frozen. Returns the
    /// lowest-loss iterate seen, starting from `init`.
    pub fn track(&mut self, obs: &Observation, init: Pose) -> Result<TrackResult, SlamError> {
        let cfg = self.config;
        let opts = self.render_options(false);
        let mut q = init.quaternion_wxyz().to_vec();
        let mut t = init.translation_array().to_vec();
        let (mut sq, mut st) = (AdamState::new(4), AdamState::new(3));
        let mut best: Option<(Pose, f64)> = None;
        let mut initial_loss = f64::NAN;
        let mut done = 0;
        for it in 0..=cfg.tracking_iterations {
            let pose = Pose::from_raw([q[0], q[1], q[2], q[3]], [t[0], t[1], t[2]]);
            let rast = Rasterizer::new(&self.map, &pose, &self.k, opts);
            let rendered = rast.forward();
            let (loss, upstream) = match tracking_loss_with_grad(&rendered, obs, &cfg.loss) {
                Ok(v) if v.0.is_finite() => v,
                Ok(_) if it == 0 => return Err(SlamError::TrackingLost("non-finite loss".into())),
                Err(LossError::EmptyMask) if it == 0 => {
                    return Err(SlamError::TrackingLost("no pixel passes the silhouette mask".into()))
                }
                Err(e @ LossError::ShapeMismatch(_)) => return Err(e.into()),
                _ => break,
            };
            if it == 0 {
                initial_loss = loss;
            }
            if best.is_none_or(|(_, b)| loss < b) {
                best = Some((pose, loss));
            }
            if it == cfg.tracking_iterations {
                break;
            }
            let g = rast.backward(&upstream)?;
            if !g.rotation.iter().chain(&g.translation).all(|v| v.is_finite()) {
                break;
            }
            adam_step(&mut q, &g.rotation, &mut sq, cfg.lr.rotation, &cfg.adam);
            adam_step(&mut t, &g.translation, &mut st, cfg.lr.translation, &cfg.adam);
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            q.iter_mut().for_each(|v| *v /= n);
            done += 1;
        }
        self.tracking_steps += done;
        let (pose, loss) = best.expect("iteration 0 always sets best");
        Ok(TrackResult {
            pose,
            loss,
            initial_loss,
            iterations: done,
        })
    }

    /// Adds Gaussians where `frame` seen from `pose` is not explained by the
    /// map: low silhouette, or observed depth well in front of the render.
    pub fn densify(&mut self, frame: &SlamFrame, pose: &Pose) -> Result<usize, SlamError> {
        let rendered = render(&self.map, pose, &self.k, self.render_options(false));
        let cfg = self.config;
        let seeds = self.seeds(frame, pose, |p| {
            let s = rendered.silhouette[p];
            s < cfg.densify_silhouette || frame.obs.depth[p] < rendered.depth[p] / s - cfg.densify_depth_margin
        });
        let init = cfg.embedding_init();
        Ok(self.map.add_gaussians(&seeds, &init, &mut self.rng)?)
    }

    /// Refines the map (and head) over the stored frames at positions
    /// `window`, round-robin, with poses frozen. On a non-finite loss the map
    /// and head are restored to their state before the call.
    pub fn map_update(&mut self, window: &[usize]) -> Result<Vec<MappingTerms>, SlamError> {
        if window.is_empty() {
            return Err(SlamError::Input("mapping window is empty".into()));
        }
        let cfg = self.config;
        let opts = self.render_options(true);
        let snapshot = (self.map.clone(), self.head.clone());
        let n = self.map.len();
        let nd = self.map.code_dim();
        let mut s_mu = AdamState::new(n * 3);
        let mut s_r = AdamState::new(n);
        let mut s_o = AdamState::new(n);
        let mut s_c = AdamState::new(n * 3);
        let mut s_h = AdamState::new(n * nd);
        let mut s_w = AdamState::new(self.head.as_ref().map_or(0, |h| h.weight.len()));
        let mut s_b = AdamState::new(self.head.as_ref().map_or(0, |h| h.bias.len()));
        let mut trace = Vec::with_capacity(cfg.mapping_iterations);
        for it in 0..cfg.mapping_iterations {
            let pos = window[it % window.len()];
            let stored = &self.frames[pos];
            let pose = self.trajectory[pos].pose;
            let rast = Rasterizer::new(&self.map, &pose, &self.k, opts);
            let rendered = rast.forward();
            let sem = match (&self.tree, &self.head, &stored.target) {
                (Some(tree), Some(head), Some(target)) => Some(SemanticInputs { target, head, tree }),
                _ => None,
            };
            let (terms, upstream, head_grad) = mapping_loss_with_grad(&rendered, &stored.frame.obs, sem, &cfg.loss, it)?;
            let grad = if terms.total.is_finite() {
                Some(rast.backward(&upstream)?)
            } else {
                None
            };
            let grad = match grad {
                Some(g) if g.is_finite() => g,
                _ => {
                    self.map = snapshot.0;
                    self.head = snapshot.1;
                    return Err(SlamError::NonFiniteLoss { iteration: it });
                }
            };
            let map = &mut self.map;
            adam_step(map.centers.as_flattened_mut(), grad.centers.as_flattened(), &mut s_mu, cfg.lr.means, &cfg.adam);
            adam_step(&mut map.radii, &grad.radii, &mut s_r, cfg.lr.radii, &cfg.adam);
            adam_step(&mut map.opacities, &grad.opacities, &mut s_o, cfg.lr.opacities, &cfg.adam);
            adam_step(map.colors.as_flattened_mut(), grad.colors.as_flattened(), &mut s_c, cfg.lr.colors, &cfg.adam);
            if nd > 0 {
                adam_step(&mut map.embeddings, &grad.embeddings, &mut s_h, cfg.lr.embeddings, &cfg.adam);
            }
            if let (Some(head), Some(hg)) = (self.head.as_mut(), head_grad) {
                adam_step(&mut head.weight, &hg.weight, &mut s_w, cfg.lr.head, &cfg.adam);
                adam_step(&mut head.bias, &hg.bias, &mut s_b, cfg.lr.head, &cfg.adam);
            }
            map.radii.iter_mut().for_each(|r| *r = r.max(cfg.min_radius));
            map.opacities.iter_mut().for_each(|o| *o = o.clamp(0.0, 1.0));
            map.colors.as_flattened_mut().iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
            trace.push(terms);
        }
        self.mapping_steps += cfg.mapping_iterations;
        Ok(trace)
    }

    /// Processes one frame after the first: track, densify, map.
    pub fn step(&mut self, frame: SlamFrame) -> Result<StepLog, SlamError> {
        check_frame(&frame, &self.k)?;
        if self.frames.len() == 1 && self.config.map_first_frame {
            let t = Instant::now();
            match self.map_update(&[0]) {
                Ok(_) => {}
                Err(SlamError::NonFiniteLoss { iteration }) => {
                    log::warn!("frame 0: mapping diverged at iteration {iteration}; map rolled back")
                }
                Err(e) => return Err(e),
            }
            self.timing.mapping_s += t.elapsed().as_secs_f64();
            self.timing.frames_mapped += 1;
        }
        let guess = self.predict_pose();
        let t0 = Instant::now();
        let tracked = self.track(&frame.obs, guess);
        self.timing.tracking_s += t0.elapsed().as_secs_f64();
        self.timing.frames_tracked += 1;
        let (pose, lost, track_loss) = match tracked {
            Ok(r) => (r.pose, false, Some(r.loss)),
            Err(SlamError::TrackingLost(why)) => {
                log::warn!("frame {}: tracking lost ({why}); keeping the predicted pose", frame.index);
                (guess, true, None)
            }
            Err(e) => return Err(e),
        };
        let mut log = StepLog {
            index: frame.index,
            lost,
            track_loss,
            added: 0,
            final_mapping_loss: None,
            mapping_failed: false,
        };
        if lost {
            self.push_frame(frame, pose, true)?;
            return Ok(log);
        }
        let t1 = Instant::now();
        log.added = self.densify(&frame, &pose)?;
        self.timing.densify_s += t1.elapsed().as_secs_f64();
        self.push_frame(frame, pose, false)?;
        let pos = self.frames.len() - 1;
        if self.frames[pos].frame.index % self.config.keyframe_every == 0 {
            self.keyframes.push(pos);
        }
        let others: Vec<usize> = self.keyframes.iter().copied().filter(|&k| k != pos).collect();
        let mut window = vec![pos];
        window.extend(others.choose_multiple(&mut self.rng, self.config.window_keyframes).copied());
        let t2 = Instant::now();
        match self.map_update(&window) {
            Ok(trace) => log.final_mapping_loss = trace.last().map(|t| t.total),
            Err(SlamError::NonFiniteLoss { iteration }) => {
                log::warn!("frame {}: mapping diverged at iteration {iteration}; map rolled back", log.index);
                log.mapping_failed = true;
            }
            Err(e) => return Err(e),
        }
        self.timing.mapping_s += t2.elapsed().as_secs_f64();
        self.timing.frames_mapped += 1;
        Ok(log)
    }

    pub fn stored_frames(&self) -> impl Iterator<Item = (&SlamFrame, &TrajectoryEntry)> {
        self.frames.iter().map(|s| &s.frame).zip(&self.trajectory)
    }

    /// Scores the map by re-rendering every stored frame at its estimated pose.
    pub fn evaluate(&self) -> Result<MetricsReport, SlamError> {
        let start = Instant::now();
        let opts = self.render_options(true);
        let mut per_frame = Vec::new();
        let mut levels = self.tree.as_ref().map(|t| LevelConfusion::new(t));
        let (mut depth_sum, mut depth_n, mut gt_depth_sum) = (0.0, 0usize, 0.0);
        for (frame, entry) in self.stored_frames() {
            let rendered = render(&self.map, &entry.pose, &self.k, opts);
            let obs = &frame.obs;
            let valid: Vec<bool> = (0..obs.pixels()).map(|p| obs.depth_valid(p)).collect();
            let n_valid = valid.iter().filter(|v| **v).count();
            let depth_l1_cm = eval::depth_l1(&rendered.depth, &obs.depth, &valid).ok();
            if let Some(d) = depth_l1_cm {
                depth_sum += d * n_valid as f64;
                depth_n += n_valid;
                gt_depth_sum += (0..obs.pixels()).filter(|&p| valid[p]).map(|p| obs.depth[p]).sum::<f64>();
            }
            let psnr = eval::psnr(&rendered.color, &obs.color, 1.0)?;
            let ssim = eval::ssim(&rendered.color, &obs.color, obs.width, obs.height).ok();
            if let (Some(acc), Some(tree)) = (levels.as_mut(), &self.tree) {
                acc.add_frame(tree, &rendered, &frame.labels, self.config.eval_min_silhouette)?;
            }
            per_frame.push(FrameMetrics {
                index: frame.index,
                lost: entry.lost,
                psnr_db: psnr,
                ssim,
                depth_l1_cm,
            });
        }
        let gt: Option<Vec<Pose>> = self.frames.iter().map(|s| s.frame.gt_pose).collect();
        let (ate, ate_unaligned) = match gt {
            Some(gt) if gt.len() >= 2 => {
                let est: Vec<Pose> = self.trajectory.iter().map(|e| e.pose).collect();
                let pair = TrajectoryPair::new(est, gt)?;
                (eval::ate_rmse(&pair, true).ok(), eval::ate_rmse(&pair, false).ok())
            }
            _ => (None, None),
        };
        let mean = |f: fn(&FrameMetrics) -> Option<f64>| {
            let v: Vec<f64> = per_frame.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let mut timing = self.timing;
        timing.eval_s = start.elapsed().as_secs_f64();
        timing.tracking_ms_per_frame = per_frame_ms(timing.tracking_s, timing.frames_tracked);
        timing.mapping_ms_per_frame = per_frame_ms(timing.mapping_s, timing.frames_mapped);
        Ok(MetricsReport {
            frames: self.frames.len(),
            lost_frames: self.trajectory.iter().filter(|e| e.lost).map(|e| e.index).collect(),
            gaussians: self.map.len(),
            code_dim: self.map.code_dim(),
            ate_rmse_cm: ate,
            ate_rmse_unaligned_cm: ate_unaligned,
            depth_l1_cm: (depth_n > 0).then(|| depth_sum / depth_n as f64),
            mean_depth_m: (depth_n > 0).then(|| gt_depth_sum / depth_n as f64),
            psnr_db: mean(|m| Some(m.psnr_db)),
            ssim: mean(|m| m.ssim),
            miou_per_level: levels.map(|l| l.means()).unwrap_or_default(),
            timing,
            per_frame,
        })
    }
}

fn per_frame_ms(seconds: f64, frames: usize) -> f64 {
    if frames == 0 {
        0.0
    } else {
        seconds * 1000.0 / frames as f64
    }
}

fn check_frame(frame: &SlamFrame, k: &CameraIntrinsics) -> Result<(), SlamError> {
    let (w, h) = (frame.obs.width, frame.obs.height);
    if w != k.width || h != k.height || frame.labels.len() != w * h {
        return Err(SlamError::Input(format!(
            "frame {} is {}x{} with {} labels, camera is {}x{}",
            frame.index,
            w,
            h,
            frame.labels.len(),
            k.width,
            k.height
        )));
    }
    Ok(())
}

/// Per-frame outcome of [`SlamState::step`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub index: usize,
    pub lost: bool,
    pub track_loss: Option<f64>,
    pub added: usize,
    pub final_mapping_loss: Option<f64>,
    pub mapping_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub lost: bool,
    pub psnr_db: f64,
    pub ssim: Option<f64>,
    pub depth_l1_cm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub lost_frames: Vec<usize>,
    pub gaussians: usize,
    pub code_dim: usize,
    pub ate_rmse_cm: Option<f64>,
    pub ate_rmse_unaligned_cm: Option<f64>,
    /// Pixel-weighted over all frames.
    pub depth_l1_cm: Option<f64>,
    pub mean_depth_m: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    /// Mean IoU (%) per tree level, coarse to fine; empty without semantics.
    pub miou_per_level: Vec<Option<f64>>,
    pub timing: Timing,
    pub per_frame: Vec<FrameMetrics>,
}

/// Final products of [`run`].
pub struct RunOutput {
    pub state: SlamState,
    pub logs: Vec<StepLog>,
    pub report: Option<MetricsReport>,
}

/// Runs the full loop over `frames`.
pub fn run<E: Display>(
    frames: impl IntoIterator<Item = Result<SlamFrame, E>>,
    k: CameraIntrinsics,
    tree: Option<Arc<SemanticTree>>,
    config: SlamConfig,
    options: RunOptions,
) -> Result<RunOutput, SlamError> {
    let start = Instant::now();
    let mut it = frames.into_iter();
    let first = it
        .next()
        .ok_or(SlamError::NoFrames)?
        .map_err(|e| SlamError::Input(e.to_string()))?;
    let mut state = SlamState::initialize(first, k, tree, config, options)?;
    log::info!("frame 0: seeded {} Gaussians", state.map.len());
    let mut logs = Vec::new();
    for frame in it {
        let frame = frame.map_err(|e| SlamError::Input(e.to_string()))?;
        let log = state.step(frame)?;
        log::info!(
            "frame {}: track loss {:?}, +{} Gaussians ({} total), map loss {:?}{}",
            log.index,
            log.track_loss,
            log.added,
            state.map.len(),
            log.final_mapping_loss,
            if log.lost { " [lost]" } else { "" }
        );
        logs.push(log);
    }
    state.timing.total_s = start.elapsed().as_secs_f64();
    let report = if options.evaluate {
        Some(state.evaluate()?)
    } else {
        None
    };
    Ok(RunOutput { state, logs, report })
}

/// Loss of `pose` against `obs` with the map frozen (tracking objective).
pub fn tracking_objective(
    map: &GaussianMap,
    k: &CameraIntrinsics,
    pose: &Pose,
    obs: &Observation,
    weights: &LossWeights,
    parallel: bool,
) -> Result<f64, LossError> {
    let rendered: Frame = render(
        map,
        pose,
        k,
        RenderOptions {
            parallel,
            semantics: false,
        },
    );
    tracking_loss(&rendered, obs, weights)
}
