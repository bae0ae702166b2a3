//! Shared scene generators and reference checks for the integration and
//! acceptance tests.

#![allow(dead_code)]

pub mod eval_examples;

use std::collections::BTreeMap;
use std::sync::Arc;

use hiersplat::losses::{
    mapping_loss_with_grad, tracking_loss_with_grad, LossWeights, Observation, SemanticHead, SemanticInputs,
    SemanticTarget,
};
use hiersplat::renderer::{backward, render, Frame, Rasterizer, RenderOptions, MIN_TRANSMITTANCE, TRUNCATION_SIGMAS};
use hiersplat::scene::{CameraIntrinsics, GaussianMap, Pose, SemanticGaussian};
use hiersplat::taxonomy::SemanticTree;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two roots with two and three children: widths (2, 3), so level 0 has a
/// padded dimension.
pub fn small_tree() -> Arc<SemanticTree> {
    let paths = vec![
        vec!["A", "a1"],
        vec!["A", "a2"],
        vec!["B", "b1"],
        vec!["B", "b2"],
        vec!["B", "b3"],
    ];
    Arc::new(SemanticTree::from_paths(&paths).unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pose(rng: &mut impl Rng, max_angle: f64, max_shift: f64) -> Pose {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
    let angle = rng.random_range(-max_angle..=max_angle);
    let t = Vector3::new(
        rng.random_range(-max_shift..=max_shift),
        rng.random_range(-max_shift..=max_shift),
        rng.random_range(-max_shift..=max_shift),
    );
    Pose::new(UnitQuaternion::from_scaled_axis(axis * angle), t)
}

/// One Gaussian given in camera-image terms, placed in the world via `pose`.
fn gaussian_at(
    k: &CameraIntrinsics,
    pose: &Pose,
    u: f64,
    v: f64,
    z: f64,
    r_screen: f64,
    opacity: f64,
    rng: &mut impl Rng,
    code_dim: usize,
) -> SemanticGaussian {
    let cam = k.back_project(u, v, z);
    let w = pose.transform_point(&cam);
    SemanticGaussian {
        center: [w.x, w.y, w.z],
        radius: r_screen * z / k.fx,
        opacity,
        color: [rng.random(), rng.random(), rng.random()],
        embedding: (0..code_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

pub struct Scene {
    pub map: GaussianMap,
    pub pose: Pose,
    pub k: CameraIntrinsics,
}

/// Up to `max_gaussians` splats in a `w × h` view. The first two are wide,
/// nearly opaque backdrops so the silhouette mask is rarely empty.
pub fn random_scene(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    max_gaussians: usize,
    tree: Option<&Arc<SemanticTree>>,
) -> Scene {
    let f = 0.9 * w.max(h) as f64;
    let k = CameraIntrinsics::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h);
    let pose = random_pose(rng, 0.3, 0.5);
    let mut map = match tree {
        Some(t) => GaussianMap::new(t.clone()),
        None => GaussianMap::without_semantics(),
    };
    let code_dim = map.code_dim();
    let n = rng.random_range(2..=max_gaussians);
    for i in 0..n {
        let g = if i < 2 {
            let u = k.cx + rng.random_range(-2.0..2.0);
            let v = k.cy + rng.random_range(-2.0..2.0);
            let z = rng.random_range(3.5..4.5);
            let rs = rng.random_range(0.25..0.4) * w.min(h) as f64;
            gaussian_at(&k, &pose, u, v, z, rs, rng.random_range(0.97..0.999), rng, code_dim)
        } else {
            let u = rng.random_range(-2.0..w as f64 + 1.0);
            let v = rng.random_range(-2.0..h as f64 + 1.0);
            let z = rng.random_range(1.0..4.0);
            let rs = rng.random_range(1.0..5.0);
            let o = rng.random_range(0.1..0.95);
            gaussian_at(&k, &pose, u, v, z, rs, o, rng, code_dim)
        };
        map.push(g).unwrap();
    }
    Scene { map, pose, k }
}

/// Observation near `rendered` with every depth valid.
pub fn perturbed_observation(rng: &mut impl Rng, rendered: &Frame) -> Observation {
    let color = rendered
        .color
        .iter()
        .map(|c| c + rng.random_range(-0.2..0.2))
        .collect();
    let depth = rendered
        .depth
        .iter()
        .map(|d| d + 0.5 + rng.random_range(-0.3..0.3))
        .collect();
    Observation::new(rendered.width, rendered.height, color, depth).unwrap()
}

pub fn random_head(rng: &mut impl Rng, tree: &SemanticTree) -> SemanticHead {
    let mut head = SemanticHead::for_tree(tree);
    head.weight.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    head.bias.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    head
}

pub fn random_labels(rng: &mut impl Rng, pixels: usize, leaves: usize) -> Vec<u32> {
    (0..pixels)
        .map(|_| {
            if rng.random_bool(0.15) {
                hiersplat::renderer::VOID_LABEL
            } else {
                rng.random_range(0..leaves as u32)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gradient suite

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Param {
    Centers,
    Radii,
    Opacities,
    Colors,
    Embeddings,
    HeadWeight,
    HeadBias,
    Rotation,
    Translation,
}

const TRACKING_PARAMS: [Param; 6] = [
    Param::Centers,
    Param::Radii,
    Param::Opacities,
    Param::Colors,
    Param::Rotation,
    Param::Translation,
];

const MAPPING_PARAMS: [Param; 9] = [
    Param::Centers,
    Param::Radii,
    Param::Opacities,
    Param::Colors,
    Param::Embeddings,
    Param::HeadWeight,
    Param::HeadBias,
    Param::Rotation,
    Param::Translation,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Objective {
    Tracking,
    Mapping,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ClassStats {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

#[derive(Debug, Default)]
pub struct GradientReport {
    pub scenes: usize,
    pub stats: BTreeMap<(Objective, Param), ClassStats>,
}

impl GradientReport {
    pub fn min_checked(&self) -> usize {
        self.stats.values().map(|s| s.checked).min().unwrap_or(0)
    }

    pub fn max_rel(&self) -> f64 {
        self.stats.values().map(|s| s.max_rel).fold(0.0, f64::max)
    }

    pub fn passes(&self, scenes: usize, tol: f64) -> bool {
        self.stats.len() == TRACKING_PARAMS.len() + MAPPING_PARAMS.len()
            && self.min_checked() >= scenes
            && self.max_rel() < tol
    }
}

/// Every parameter the losses depend on, flattened per class.
#[derive(Clone)]
struct State {
    map: GaussianMap,
    q: [f64; 4],
    t: [f64; 3],
    head: Option<SemanticHead>,
}

impl State {
    fn pose(&self) -> Pose {
        Pose::from_raw(self.q, self.t)
    }

    fn values(&self, p: Param) -> Vec<f64> {
        match p {
            Param::Centers => self.map.centers.iter().flatten().copied().collect(),
            Param::Radii => self.map.radii.clone(),
            Param::Opacities => self.map.opacities.clone(),
            Param::Colors => self.map.colors.iter().flatten().copied().collect(),
            Param::Embeddings => self.map.embeddings.clone(),
            Param::HeadWeight => self.head.as_ref().unwrap().weight.clone(),
            Param::HeadBias => self.head.as_ref().unwrap().bias.clone(),
            Param::Rotation => self.q.to_vec(),
            Param::Translation => self.t.to_vec(),
        }
    }

    fn set(&mut self, p: Param, v: &[f64]) {
        match p {
            Param::Centers => {
                for (c, chunk) in self.map.centers.iter_mut().zip(v.chunks(3)) {
                    c.copy_from_slice(chunk);
                }
            }
            Param::Radii => self.map.radii.copy_from_slice(v),
            Param::Opacities => self.map.opacities.copy_from_slice(v),
            Param::Colors => {
                for (c, chunk) in self.map.colors.iter_mut().zip(v.chunks(3)) {
                    c.copy_from_slice(chunk);
                }
            }
            Param::Embeddings => self.map.embeddings.copy_from_slice(v),
            Param::HeadWeight => self.head.as_mut().unwrap().weight.copy_from_slice(v),
            Param::HeadBias => self.head.as_mut().unwrap().bias.copy_from_slice(v),
            Param::Rotation => self.q.copy_from_slice(v),
            Param::Translation => self.t.copy_from_slice(v),
        }
    }
}

struct Problem<'a> {
    k: CameraIntrinsics,
    obs: Observation,
    target: Option<SemanticTarget>,
    tree: Option<&'a SemanticTree>,
    weights: LossWeights,
    iteration: usize,
    objective: Objective,
}

/// Pieces of the evaluation that must not change between the base point and
/// the finite-difference probes: contributor lists, the silhouette mask and
/// the signs of every L1 residual.
#[derive(PartialEq)]
struct Signature {
    contributors: Vec<Vec<usize>>,
    mask: Vec<bool>,
    signs: Vec<bool>,
}

impl Problem<'_> {
    fn opts(&self) -> RenderOptions {
        RenderOptions {
            parallel: false,
            semantics: self.objective == Objective::Mapping,
        }
    }

    fn loss(&self, s: &State) -> Option<f64> {
        let pose = s.pose();
        let frame = render(&s.map, &pose, &self.k, self.opts());
        self.eval(&frame, s, false).map(|(l, _)| l)
    }

    fn eval(&self, frame: &Frame, s: &State, grad: bool) -> Option<(f64, Option<(Frame, Option<SemanticHead>)>)> {
        match self.objective {
            Objective::Tracking => {
                let (l, g) = tracking_loss_with_grad(frame, &self.obs, &self.weights).ok()?;
                Some((l, grad.then_some((g, None))))
            }
            Objective::Mapping => {
                let sem = SemanticInputs {
                    target: self.target.as_ref().unwrap(),
                    head: s.head.as_ref().unwrap(),
                    tree: self.tree.unwrap(),
                };
                let (terms, g, hg) =
                    mapping_loss_with_grad(frame, &self.obs, Some(sem), &self.weights, self.iteration).ok()?;
                let hg = hg.map(|hg| {
                    let mut head = s.head.clone().unwrap();
                    head.weight = hg.weight;
                    head.bias = hg.bias;
                    head
                });
                Some((terms.total, grad.then_some((g, hg))))
            }
        }
    }

    fn signature(&self, s: &State) -> Signature {
        let pose = s.pose();
        let r = Rasterizer::new(&s.map, &pose, &self.k, self.opts());
        let frame = r.forward();
        let mask: Vec<bool> = (0..frame.pixels())
            .map(|p| frame.silhouette[p] > self.weights.delta && self.obs.depth_valid(p))
            .collect();
        let mut signs: Vec<bool> = frame
            .depth
            .iter()
            .zip(&self.obs.depth)
            .map(|(a, b)| a > b)
            .collect();
        signs.extend(frame.color.iter().zip(&self.obs.color).map(|(a, b)| a > b));
        Signature {
            contributors: r.contributor_indices(),
            mask,
            signs,
        }
    }

    /// Analytic gradient of every class at `s`.
    fn gradient(&self, s: &State) -> Option<BTreeMap<Param, Vec<f64>>> {
        let pose = s.pose();
        let frame = render(&s.map, &pose, &self.k, self.opts());
        let (_, g) = self.eval(&frame, s, true)?;
        let (upstream, head_grad) = g?;
        let fg = backward(&s.map, &pose, &self.k, &frame, &upstream, self.opts()).ok()?;
        let mut out = BTreeMap::new();
        out.insert(Param::Centers, fg.centers.iter().flatten().copied().collect());
        out.insert(Param::Radii, fg.radii.clone());
        out.insert(Param::Opacities, fg.opacities.clone());
        out.insert(Param::Colors, fg.colors.iter().flatten().copied().collect());
        out.insert(Param::Rotation, fg.rotation.to_vec());
        out.insert(Param::Translation, fg.translation.to_vec());
        if self.objective == Objective::Mapping {
            out.insert(Param::Embeddings, fg.embeddings.clone());
            let hg = head_grad?;
            out.insert(Param::HeadWeight, hg.weight);
            out.insert(Param::HeadBias, hg.bias);
        }
        Some(out)
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute floor for vanishing derivatives.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        return 0.0;
    }
    (a - b).abs() / scale
}

/// Directional-derivative check of one class. Returns `None` when every tried
/// direction crossed a discontinuity.
fn check_class(
    problem: &Problem,
    base: &State,
    base_sig: &Signature,
    grad: &[f64],
    param: Param,
    rng: &mut impl Rng,
) -> Option<f64> {
    let x0 = base.values(param);
    let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    for _ in 0..6 {
        let r: Vec<f64> = (0..x0.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        // mostly along the gradient so the dot product is not a cancellation
        let mut d: Vec<f64> = r.iter().map(|v| v / rnorm).collect();
        if gnorm > 0.0 {
            for (di, gi) in d.iter_mut().zip(grad) {
                *di += 2.0 * gi / gnorm;
            }
        }
        let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter_mut().for_each(|v| *v /= dnorm);

        let probe = |sign: f64| {
            let mut s = base.clone();
            let x: Vec<f64> = x0.iter().zip(&d).map(|(x, di)| x + sign * FD_STEP * di).collect();
            s.set(param, &x);
            s
        };
        let (plus, minus) = (probe(1.0), probe(-1.0));
        if problem.signature(&plus) != *base_sig || problem.signature(&minus) != *base_sig {
            continue;
        }
        let (lp, lm) = (problem.loss(&plus)?, problem.loss(&minus)?);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let analytic: f64 = grad.iter().zip(&d).map(|(g, di)| g * di).sum();
        return Some(rel_err(analytic, fd));
    }
    None
}

/// Runs the suite on `scenes` random scenes (≤ 10 Gaussians, 16×16) per
/// objective.
pub fn gradient_suite(scenes: usize, seed: u64) -> GradientReport {
    let tree = small_tree();
    let mut rng = rng(seed);
    let mut report = GradientReport::default();
    let mut produced = 0;
    let mut attempts = 0;
    while produced < scenes {
        attempts += 1;
        assert!(attempts < scenes * 20, "could not generate usable scenes");
        let scene = random_scene(&mut rng, 16, 16, 10, Some(&tree));
        let weights = LossWeights::default();
        let rendered = render(
            &scene.map,
            &scene.pose,
            &scene.k,
            RenderOptions {
                parallel: false,
                semantics: true,
            },
        );
        let obs = perturbed_observation(&mut rng, &rendered);
        let labels = random_labels(&mut rng, scene.k.pixels(), tree.num_leaves());
        let target = SemanticTarget::new(&tree, 16, 16, labels).unwrap();
        let state = State {
            q: scene.pose.quaternion_wxyz(),
            t: scene.pose.translation_array(),
            head: Some(random_head(&mut rng, &tree)),
            map: scene.map,
        };
        let iteration = if produced % 2 == 0 { 0 } else { weights.eta + 3 };
        let problems = [Objective::Tracking, Objective::Mapping].map(|objective| Problem {
            k: scene.k,
            obs: obs.clone(),
            target: Some(target.clone()),
            tree: Some(&tree),
            weights,
            iteration,
            objective,
        });
        // the tracking mask must be non-empty for the scene to count
        let grads: Vec<_> = problems.iter().map(|p| p.gradient(&state)).collect();
        if grads.iter().any(Option::is_none) {
            continue;
        }
        produced += 1;
        for (problem, grad) in problems.iter().zip(grads) {
            let grad = grad.unwrap();
            let sig = problem.signature(&state);
            let params: &[Param] = match problem.objective {
                Objective::Tracking => &TRACKING_PARAMS,
                Objective::Mapping => &MAPPING_PARAMS,
            };
            for &param in params {
                let entry = report.stats.entry((problem.objective, param)).or_default();
                match check_class(problem, &state, &sig, &grad[&param], param, &mut rng) {
                    Some(e) => {
                        entry.checked += 1;
                        entry.max_rel = entry.max_rel.max(e);
                    }
                    None => entry.skipped += 1,
                }
            }
        }
    }
    report.scenes = produced;
    report
}

// ---------------------------------------------------------------------------
// Naive compositing reference

/// Per pixel: project every Gaussian, sort the whole list by depth (stable),
/// and composite front to back. No tiles, no culling beyond the footprint.
pub fn naive_render(map: &GaussianMap, pose: &Pose, k: &CameraIntrinsics, semantics: bool) -> Frame {
    let nd = if semantics { map.code_dim() } else { 0 };
    let mut frame = Frame::zeros(k.width, k.height, nd);
    let rt = pose.rotation_matrix().transpose();
    struct P {
        i: usize,
        u: f64,
        v: f64,
        z: f64,
        rs: f64,
    }
    let mut projected: Vec<P> = (0..map.len())
        .filter_map(|i| {
            let cam = rt * (map.center(i) - pose.translation);
            if cam.z <= k.near || cam.z >= k.far {
                return None;
            }
            Some(P {
                i,
                u: k.fx * cam.x / cam.z + k.cx,
                v: k.fy * cam.y / cam.z + k.cy,
                z: cam.z,
                rs: k.fx * map.radii[i] / cam.z,
            })
        })
        .collect();
    projected.sort_by(|a, b| a.z.total_cmp(&b.z));
    for py in 0..k.height {
        for px in 0..k.width {
            let p = py * k.width + px;
            let mut t = 1.0;
            for g in &projected {
                let dx = px as f64 - g.u;
                let dy = py as f64 - g.v;
                let d2 = dx * dx + dy * dy;
                let rs2 = g.rs * g.rs;
                if d2 > TRUNCATION_SIGMAS * TRUNCATION_SIGMAS * rs2 {
                    continue;
                }
                let alpha = map.opacities[g.i] * (-d2 / (2.0 * rs2)).exp();
                let w = alpha * t;
                for c in 0..3 {
                    frame.color[p * 3 + c] += map.colors[g.i][c] * w;
                }
                frame.depth[p] += g.z * w;
                frame.silhouette[p] += w;
                for j in 0..nd {
                    frame.semantic[p * nd + j] += map.embedding(g.i)[j] * w;
                }
                t *= 1.0 - alpha;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
        }
    }
    frame
}

pub fn max_abs_diff(a: &Frame, b: &Frame) -> f64 {
    let planes = [
        (&a.color, &b.color),
        (&a.depth, &b.depth),
        (&a.silhouette, &b.silhouette),
        (&a.semantic, &b.semantic),
    ];
    planes
        .iter()
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub fn bit_identical(a: &Frame, b: &Frame) -> bool {
    let eq = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    a.same_shape(b)
        && eq(&a.color, &b.color)
        && eq(&a.depth, &b.depth)
        && eq(&a.silhouette, &b.silhouette)
        && eq(&a.semantic, &b.semantic)
}

#[derive(Debug, Default)]
pub struct OracleReport {
    pub scenes: usize,
    pub serial_bit_exact: usize,
    pub max_parallel_diff: f64,
}

/// Random scenes of up to 20 Gaussians in images up to 32×32.
pub fn compositing_oracle(scenes: usize, seed: u64) -> OracleReport {
    let tree = small_tree();
    let mut rng = rng(seed);
    let mut report = OracleReport::default();
    for _ in 0..scenes {
        let w = rng.random_range(8..=32);
        let h = rng.random_range(8..=32);
        let scene = random_scene(&mut rng, w, h, 20, Some(&tree));
        let opts = |parallel| RenderOptions {
            parallel,
            semantics: true,
        };
        let serial = render(&scene.map, &scene.pose, &scene.k, opts(false));
        let parallel = render(&scene.map, &scene.pose, &scene.k, opts(true));
        let naive = naive_render(&scene.map, &scene.pose, &scene.k, true);
        report.scenes += 1;
        if bit_identical(&serial, &naive) {
            report.serial_bit_exact += 1;
        }
        report.max_parallel_diff = report.max_parallel_diff.max(max_abs_diff(&serial, &parallel));
    }
    report
}
