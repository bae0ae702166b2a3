//! Differentiable tile rasterizer for isotropic semantic Gaussians.
//!
//! Color, depth, silhouette, and the semantic embedding plane are composited
//! front to back in one traversal. Per pixel, with Gaussians sorted by camera
//! depth (ties by index):
//!
//! ```text
//! w_i = α_i · T_i,   T_i = Π_{j<i} (1 − α_j)
//! C += c_i·w_i   D += z_i·w_i   S += w_i   H += h_i·w_i
//! ```
//!
//! where `α_i = o_i · exp(−‖p − proj(μ_i)‖² / (2 r_s²))`, `r_s = fx · r_i / z_i`,
//! truncated beyond `3 r_s`. Compositing stops once `T < 1e-4`.
//! The backward pass reuses the same traversal and returns exact gradients for
//! every Gaussian parameter and the camera pose.

mod labels;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::scene::{quaternion_gradient, CameraIntrinsics, GaussianMap, Pose};

pub use labels::{render_semantic_labels, LabelImage, VOID_LABEL};

pub const TILE_SIZE: usize = 16;
/// Footprint cut-off in screen-space standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 3.0;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("level {level} out of range (tree has {levels} levels)")]
    LevelOutOfRange { level: usize, levels: usize },
}

/// Rendered (or observed) image planes. Also used to carry per-pixel loss
/// gradients with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub code_dim: usize,
    /// `H·W·3`, row-major, interleaved RGB.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub silhouette: Vec<f64>,
    /// `H·W·N`, pixel-major.
    pub semantic: Vec<f64>,
}

impl Frame {
    pub fn zeros(width: usize, height: usize, code_dim: usize) -> Self {
        let n = width * height;
        Frame {
            width,
            height,
            code_dim,
            color: vec![0.0; n * 3],
            depth: vec![0.0; n],
            silhouette: vec![0.0; n],
            semantic: vec![0.0; n * code_dim],
        }
    }

    pub fn zeros_like(other: &Frame) -> Self {
        Frame::zeros(other.width, other.height, other.code_dim)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height && self.code_dim == other.code_dim
    }

    pub fn embedding_at(&self, pixel: usize) -> &[f64] {
        &self.semantic[pixel * self.code_dim..(pixel + 1) * self.code_dim]
    }
}

/// Gradients of a scalar loss with respect to the map and the pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrad {
    pub centers: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
    pub embeddings: Vec<f64>,
    /// With respect to the raw quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl FrameGrad {
    pub fn zeros(gaussians: usize, code_dim: usize) -> Self {
        FrameGrad {
            centers: vec![[0.0; 3]; gaussians],
            radii: vec![0.0; gaussians],
            opacities: vec![0.0; gaussians],
            colors: vec![[0.0; 3]; gaussians],
            embeddings: vec![0.0; gaussians * code_dim],
            rotation: [0.0; 4],
            translation: [0.0; 3],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.centers.iter().flatten().all(|v| v.is_finite())
            && self.radii.iter().all(|v| v.is_finite())
            && self.opacities.iter().all(|v| v.is_finite())
            && self.colors.iter().flatten().all(|v| v.is_finite())
            && self.embeddings.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Process tiles on the rayon pool.
    pub parallel: bool,
    /// Composite the semantic plane. When off the frame has `code_dim = 0`.
    pub semantics: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            parallel: true,
            semantics: true,
        }
    }
}

/// A Gaussian projected into the current view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub index: usize,
    pub u: f64,
    pub v: f64,
    /// Camera depth; also the depth value composited into `D`.
    pub z: f64,
    pub r_screen: f64,
    pub cam: [f64; 3],
}

/// Projects Gaussian `i`. Returns `None` outside the near/far range.
/// `rt` is the transposed pose rotation (world to camera).
pub fn project_splat(
    map: &GaussianMap,
    i: usize,
    rt: &Matrix3<f64>,
    translation: &Vector3<f64>,
    k: &CameraIntrinsics,
) -> Option<Splat> {
    let cam = rt * (map.center(i) - translation);
    if cam.z <= k.near || cam.z >= k.far {
        return None;
    }
    Some(Splat {
        index: i,
        u: k.fx * cam.x / cam.z + k.cx,
        v: k.fy * cam.y / cam.z + k.cy,
        z: cam.z,
        r_screen: k.fx * map.radii[i] / cam.z,
        cam: [cam.x, cam.y, cam.z],
    })
}

/// Footprint weight of a splat at pixel `(px, py)`, `None` past the cut-off.
#[inline]
pub fn footprint_alpha(opacity: f64, s: &Splat, px: f64, py: f64) -> Option<f64> {
    let dx = px - s.u;
    let dy = py - s.v;
    let d2 = dx * dx + dy * dy;
    let rs2 = s.r_screen * s.r_screen;
    if d2 > TRUNCATION_SIGMAS * TRUNCATION_SIGMAS * rs2 {
        return None;
    }
    Some(opacity * (-d2 / (2.0 * rs2)).exp())
}

/// `o · exp(−‖x − μ‖² / (2 r²))` for a 3D point.
pub fn gaussian_weight(opacity: f64, center: &[f64; 3], radius: f64, x: &[f64; 3]) -> f64 {
    let d2: f64 = (0..3).map(|k| (x[k] - center[k]).powi(2)).sum();
    opacity * (-d2 / (2.0 * radius * radius)).exp()
}

struct TileOut {
    color: Vec<f64>,
    depth: Vec<f64>,
    silhouette: Vec<f64>,
    semantic: Vec<f64>,
}

struct TileGrad {
    // per tile entry: u, v, r_s, z, o, c0, c1, c2, h[..]
    acc: Vec<f64>,
}

const G_U: usize = 0;
const G_V: usize = 1;
const G_RS: usize = 2;
const G_Z: usize = 3;
const G_O: usize = 4;
const G_C: usize = 5;
const G_H: usize = 8;

/// Projected, binned, and depth-sorted view of a map, shared by the forward
/// and backward passes.
pub struct Rasterizer<'a> {
    map: &'a GaussianMap,
    pose: Pose,
    k: CameraIntrinsics,
    opts: RenderOptions,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    code_dim: usize,
}

impl<'a> Rasterizer<'a> {
    pub fn new(map: &'a GaussianMap, pose: &Pose, k: &CameraIntrinsics, opts: RenderOptions) -> Self {
        let rt = pose.rotation_matrix().transpose();
        let splats: Vec<Splat> = (0..map.len())
            .filter_map(|i| project_splat(map, i, &rt, &pose.translation, k))
            .collect();
        let tiles_x = k.width.div_ceil(TILE_SIZE);
        let tiles_y = k.height.div_ceil(TILE_SIZE);
        let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
        for (si, s) in splats.iter().enumerate() {
            let reach = TRUNCATION_SIGMAS * s.r_screen;
            let x0 = (s.u - reach).floor();
            let x1 = (s.u + reach).ceil();
            let y0 = (s.v - reach).floor();
            let y1 = (s.v + reach).ceil();
            if x1 < 0.0 || y1 < 0.0 || x0 > (k.width - 1) as f64 || y0 > (k.height - 1) as f64 {
                continue;
            }
            let tx0 = (x0.max(0.0) as usize) / TILE_SIZE;
            let tx1 = (x1.min((k.width - 1) as f64) as usize) / TILE_SIZE;
            let ty0 = (y0.max(0.0) as usize) / TILE_SIZE;
            let ty1 = (y1.min((k.height - 1) as f64) as usize) / TILE_SIZE;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    tiles[ty * tiles_x + tx].push(si as u32);
                }
            }
        }
        // stable: equal depths keep index order
        for list in &mut tiles {
            list.sort_by(|&a, &b| splats[a as usize].z.total_cmp(&splats[b as usize].z));
        }
        let code_dim = if opts.semantics { map.code_dim() } else { 0 };
        Rasterizer {
            map,
            pose: *pose,
            k: *k,
            opts,
            splats,
            tiles,
            tiles_x,
            code_dim,
        }
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    fn tile_bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, (x0 + TILE_SIZE).min(self.k.width), y0, (y0 + TILE_SIZE).min(self.k.height))
    }

    /// Contributors of one pixel in compositing order: (tile entry, α, T before).
    fn contributors(&self, list: &[u32], px: usize, py: usize, out: &mut Vec<(usize, f64, f64)>) {
        out.clear();
        let (pxf, pyf) = (px as f64, py as f64);
        let mut t = 1.0;
        for (e, &si) in list.iter().enumerate() {
            let s = &self.splats[si as usize];
            let Some(alpha) = footprint_alpha(self.map.opacities[s.index], s, pxf, pyf) else {
                continue;
            };
            out.push((e, alpha, t));
            t *= 1.0 - alpha;
            if t < MIN_TRANSMITTANCE {
                break;
            }
        }
    }

    fn forward_tile(&self, t: usize) -> TileOut {
        let (x0, x1, y0, y1) = self.tile_bounds(t);
        let n = (x1 - x0) * (y1 - y0);
        let nd = self.code_dim;
        let mut out = TileOut {
            color: vec![0.0; n * 3],
            depth: vec![0.0; n],
            silhouette: vec![0.0; n],
            semantic: vec![0.0; n * nd],
        };
        let list = &self.tiles[t];
        let mut p = 0;
        for py in y0..y1 {
            for px in x0..x1 {
                let (pxf, pyf) = (px as f64, py as f64);
                let mut t_acc = 1.0;
                for &si in list {
                    let s = &self.splats[si as usize];
                    let Some(alpha) = footprint_alpha(self.map.opacities[s.index], s, pxf, pyf) else {
                        continue;
                    };
                    let w = alpha * t_acc;
                    let c = &self.map.colors[s.index];
                    out.color[p * 3] += c[0] * w;
                    out.color[p * 3 + 1] += c[1] * w;
                    out.color[p * 3 + 2] += c[2] * w;
                    out.depth[p] += s.z * w;
                    out.silhouette[p] += w;
                    if nd > 0 {
                        let h = self.map.embedding(s.index);
                        let dst = &mut out.semantic[p * nd..(p + 1) * nd];
                        for (d, hv) in dst.iter_mut().zip(h) {
                            *d += hv * w;
                        }
                    }
                    t_acc *= 1.0 - alpha;
                    if t_acc < MIN_TRANSMITTANCE {
                        break;
                    }
                }
                p += 1;
            }
        }
        out
    }

    pub fn forward(&self) -> Frame {
        let tiles: Vec<usize> = (0..self.tiles.len()).collect();
        let outs: Vec<TileOut> = if self.opts.parallel {
            tiles.par_iter().map(|&t| self.forward_tile(t)).collect()
        } else {
            tiles.iter().map(|&t| self.forward_tile(t)).collect()
        };
        let mut frame = Frame::zeros(self.k.width, self.k.height, self.code_dim);
        let nd = self.code_dim;
        for (t, out) in outs.into_iter().enumerate() {
            let (x0, x1, y0, y1) = self.tile_bounds(t);
            let tw = x1 - x0;
            for py in y0..y1 {
                let src = (py - y0) * tw;
                let dst = py * self.k.width + x0;
                frame.color[dst * 3..(dst + tw) * 3].copy_from_slice(&out.color[src * 3..(src + tw) * 3]);
                frame.depth[dst..dst + tw].copy_from_slice(&out.depth[src..src + tw]);
                frame.silhouette[dst..dst + tw].copy_from_slice(&out.silhouette[src..src + tw]);
                if nd > 0 {
                    frame.semantic[dst * nd..(dst + tw) * nd]
                        .copy_from_slice(&out.semantic[src * nd..(src + tw) * nd]);
                }
            }
        }
        frame
    }

    fn backward_tile(&self, t: usize, upstream: &Frame) -> TileGrad {
        let (x0, x1, y0, y1) = self.tile_bounds(t);
        let list = &self.tiles[t];
        let nd = self.code_dim;
        let stride = G_H + nd;
        let mut acc = vec![0.0; list.len() * stride];
        let mut contrib = Vec::new();
        for py in y0..y1 {
            for px in x0..x1 {
                let pix = py * self.k.width + px;
                let gc = &upstream.color[pix * 3..pix * 3 + 3];
                let gd = upstream.depth[pix];
                let gs = upstream.silhouette[pix];
                let gh = if nd > 0 {
                    &upstream.semantic[pix * nd..(pix + 1) * nd]
                } else {
                    &[][..]
                };
                if gc.iter().all(|v| *v == 0.0) && gd == 0.0 && gs == 0.0 && gh.iter().all(|v| *v == 0.0) {
                    continue;
                }
                self.contributors(list, px, py, &mut contrib);
                // g · R, where R is the normalized composite behind the current entry
                let mut behind = 0.0;
                for &(e, alpha, t_before) in contrib.iter().rev() {
                    let s = &self.splats[list[e] as usize];
                    let gi = s.index;
                    let c = &self.map.colors[gi];
                    let mut f_dot = gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2] + gd * s.z + gs;
                    let w = alpha * t_before;
                    let a = &mut acc[e * stride..(e + 1) * stride];
                    a[G_C] += gc[0] * w;
                    a[G_C + 1] += gc[1] * w;
                    a[G_C + 2] += gc[2] * w;
                    a[G_Z] += gd * w;
                    if nd > 0 {
                        let h = self.map.embedding(gi);
                        for j in 0..nd {
                            f_dot += gh[j] * h[j];
                            a[G_H + j] += gh[j] * w;
                        }
                    }
                    let d_alpha = t_before * (f_dot - behind);
                    behind = alpha * f_dot + (1.0 - alpha) * behind;

                    let o = self.map.opacities[gi];
                    let dx = px as f64 - s.u;
                    let dy = py as f64 - s.v;
                    let d2 = dx * dx + dy * dy;
                    let rs = s.r_screen;
                    let e_term = (-d2 / (2.0 * rs * rs)).exp();
                    let alpha_exact = o * e_term;
                    a[G_O] += d_alpha * e_term;
                    let d_d2 = -d_alpha * alpha_exact / (2.0 * rs * rs);
                    a[G_RS] += d_alpha * alpha_exact * d2 / (rs * rs * rs);
                    a[G_U] += d_d2 * (-2.0 * dx);
                    a[G_V] += d_d2 * (-2.0 * dy);
                }
            }
        }
        TileGrad { acc }
    }

    /// Pulls per-pixel gradients (`upstream`, same layout as the forward
    /// frame) back to the Gaussians and the pose.
    pub fn backward(&self, upstream: &Frame) -> Result<FrameGrad, RenderError> {
        if upstream.width != self.k.width || upstream.height != self.k.height || upstream.code_dim != self.code_dim {
            return Err(RenderError::ShapeMismatch(format!(
                "upstream {}x{}x{} vs render {}x{}x{}",
                upstream.width, upstream.height, upstream.code_dim, self.k.width, self.k.height, self.code_dim
            )));
        }
        let tiles: Vec<usize> = (0..self.tiles.len()).collect();
        let grads: Vec<TileGrad> = if self.opts.parallel {
            tiles.par_iter().map(|&t| self.backward_tile(t, upstream)).collect()
        } else {
            tiles.iter().map(|&t| self.backward_tile(t, upstream)).collect()
        };

        let nd = self.code_dim;
        let stride = G_H + nd;
        // per-splat totals, reduced in tile order
        let mut per_splat = vec![0.0; self.splats.len() * stride];
        for (t, g) in grads.iter().enumerate() {
            for (e, &si) in self.tiles[t].iter().enumerate() {
                let src = &g.acc[e * stride..(e + 1) * stride];
                let dst = &mut per_splat[si as usize * stride..(si as usize + 1) * stride];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }

        let map_dim = self.map.code_dim();
        let mut out = FrameGrad::zeros(self.map.len(), map_dim);
        let r = self.pose.rotation_matrix();
        let k = &self.k;
        let mut d_rot = Matrix3::zeros();
        let mut d_trans = Vector3::zeros();
        for (si, s) in self.splats.iter().enumerate() {
            let a = &per_splat[si * stride..(si + 1) * stride];
            let gi = s.index;
            let [x, y, z] = s.cam;
            let iz = 1.0 / z;
            let radius = self.map.radii[gi];
            out.radii[gi] = a[G_RS] * k.fx * iz;
            let g_z = a[G_Z] - a[G_RS] * k.fx * radius * iz * iz - a[G_U] * k.fx * x * iz * iz
                - a[G_V] * k.fy * y * iz * iz;
            let g_cam = Vector3::new(a[G_U] * k.fx * iz, a[G_V] * k.fy * iz, g_z);
            let g_world = r * g_cam;
            out.centers[gi] = [g_world.x, g_world.y, g_world.z];
            d_trans -= g_world;
            let rel = self.map.center(gi) - self.pose.translation;
            d_rot += rel * g_cam.transpose();
            out.opacities[gi] = a[G_O];
            out.colors[gi] = [a[G_C], a[G_C + 1], a[G_C + 2]];
            if nd > 0 {
                out.embeddings[gi * map_dim..(gi + 1) * map_dim].copy_from_slice(&a[G_H..G_H + nd]);
            }
        }
        out.rotation = quaternion_gradient(self.pose.quaternion_wxyz(), &d_rot);
        out.translation = [d_trans.x, d_trans.y, d_trans.z];
        Ok(out)
    }

    /// Per pixel, the Gaussian indices that contributed, in compositing
    /// order. Useful for detecting discontinuities (sort swaps, footprint
    /// cut-offs, early termination) between nearby configurations.
    pub fn contributor_indices(&self) -> Vec<Vec<usize>> {
        let mut res = vec![Vec::new(); self.k.pixels()];
        let mut contrib = Vec::new();
        for (t, list) in self.tiles.iter().enumerate() {
            let (x0, x1, y0, y1) = self.tile_bounds(t);
            for py in y0..y1 {
                for px in x0..x1 {
                    self.contributors(list, px, py, &mut contrib);
                    res[py * self.k.width + px] = contrib
                        .iter()
                        .map(|&(e, _, _)| self.splats[list[e] as usize].index)
                        .collect();
                }
            }
        }
        res
    }
}

/// Renders all planes of `map` seen from `pose`.
pub fn render(map: &GaussianMap, pose: &Pose, k: &CameraIntrinsics, opts: RenderOptions) -> Frame {
    Rasterizer::new(map, pose, k, opts).forward()
}

/// Gradients of a loss whose per-pixel derivatives are `upstream`. `frame` must
/// be the forward result for the same inputs.
pub fn backward(
    map: &GaussianMap,
    pose: &Pose,
    k: &CameraIntrinsics,
    frame: &Frame,
    upstream: &Frame,
    opts: RenderOptions,
) -> Result<FrameGrad, RenderError> {
    if !frame.same_shape(upstream) {
        return Err(RenderError::ShapeMismatch("frame and upstream gradient differ".into()));
    }
    Rasterizer::new(map, pose, k, opts).backward(upstream)
}
