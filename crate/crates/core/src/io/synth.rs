//! Synthetic labeled rooms rendered by analytic ray casting.
//!
//! The room is the axis-aligned box `[0, sx] × [0, sy] × [0, sz]` with `y`
//! up. Each of its six faces has a base label and may carry labeled
//! rectangles; furniture is a list of labeled axis-aligned boxes. A pixel
//! takes the nearest hit along its ray; depth is the camera-space `z`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{encode_depth, encode_labels, write_rgb_png, write_u16_png, DatasetMeta};
use super::trajectory::{save_trajectory, Stamped};
use super::IoError;
use crate::renderer::VOID_LABEL;
use crate::scene::{CameraIntrinsics, Pose};
use crate::taxonomy::SemanticTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Face {
    /// `y = 0`, coordinates `(x, z)`.
    Floor,
    /// `y = sy`, coordinates `(x, z)`.
    Ceiling,
    /// `x = 0`, coordinates `(z, y)`.
    West,
    /// `x = sx`, coordinates `(z, y)`.
    East,
    /// `z = 0`, coordinates `(x, y)`.
    North,
    /// `z = sz`, coordinates `(x, y)`.
    South,
}

/// A labeled rectangle on a room face, in the face's 2D coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub face: Face,
    pub label: String,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub size: [f64; 3],
    /// Base label of every face.
    pub faces: BTreeMap<Face, String>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub boxes: Vec<LabeledBox>,
    /// Ancestors (coarse to fine) of each leaf label. When every label has a
    /// path of the same length a `taxonomy.json` is written alongside.
    #[serde(default)]
    pub hierarchy: BTreeMap<String, Vec<String>>,
    /// Relative amplitude of the procedural color texture.
    #[serde(default = "default_texture")]
    pub texture: f64,
}

fn default_texture() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrajectorySpec {
    /// Circle around `center` at `radius`; the camera looks outward (away
    /// from the center) with the given pitch.
    Orbit {
        center: [f64; 3],
        radius: f64,
        start_deg: f64,
        arc_deg: f64,
        pitch_deg: f64,
        /// Smoothstep the angle so the camera starts and stops at rest.
        #[serde(default)]
        ease: bool,
    },
    /// Straight line from `start` to `end`, looking at `target`.
    Line {
        start: [f64; 3],
        end: [f64; 3],
        target: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub room: RoomSpec,
    pub camera: DatasetMeta,
    pub trajectory: TrajectorySpec,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fps() -> f64 {
    30.0
}

/// Ground truth for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthView {
    pub width: usize,
    pub height: usize,
    pub color: Vec<u8>,
    /// Camera-space depth in meters.
    pub depth: Vec<f64>,
    /// Leaf indices into [`RoomSpec::labels`], VOID where nothing is hit.
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub frames: usize,
    pub labels: Vec<String>,
    pub wrote_taxonomy: bool,
}

impl RoomSpec {
    /// Leaf labels in first-appearance order: faces, regions, boxes.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let all = self
            .faces
            .values()
            .chain(self.regions.iter().map(|r| &r.label))
            .chain(self.boxes.iter().map(|b| &b.label));
        for l in all {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        out
    }

    pub fn diameter(&self) -> f64 {
        Vector3::from(self.size).norm()
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(IoError::Spec(format!("room size must be positive, got {:?}", self.size)));
        }
        for face in [Face::Floor, Face::Ceiling, Face::West, Face::East, Face::North, Face::South] {
            match self.faces.get(&face) {
                Some(l) if !l.trim().is_empty() => {}
                _ => return Err(IoError::Spec(format!("face {face:?} has no label"))),
            }
        }
        for r in &self.regions {
            if r.label.trim().is_empty() || (0..2).any(|i| !(r.min[i] < r.max[i])) {
                return Err(IoError::Spec(format!("invalid region {:?} on {:?}", r.label, r.face)));
            }
        }
        for b in &self.boxes {
            if b.label.trim().is_empty() || (0..3).any(|i| !(b.min[i] < b.max[i])) {
                return Err(IoError::Spec(format!("invalid box {:?}", b.label)));
            }
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return Err(IoError::Spec(format!("texture must lie in [0, 1], got {}", self.texture)));
        }
        Ok(())
    }

    /// Root-to-leaf paths when the hierarchy covers every label uniformly.
    pub fn taxonomy_paths(&self) -> Option<Vec<Vec<String>>> {
        let labels = self.labels();
        let depth = self.hierarchy.get(labels.first()?)?.len();
        labels
            .iter()
            .map(|l| {
                let anc = self.hierarchy.get(l)?;
                (anc.len() == depth).then(|| anc.iter().cloned().chain([l.clone()]).collect())
            })
            .collect()
    }

    /// The default 22-class room: a study/bedroom with furniture along the
    /// walls and a three-level hierarchy.
    pub fn study_room() -> Self {
        let faces = BTreeMap::from([
            (Face::Floor, "Floor".to_string()),
            (Face::Ceiling, "Ceiling".to_string()),
            (Face::West, "Wall".to_string()),
            (Face::East, "Wall".to_string()),
            (Face::North, "Wall".to_string()),
            (Face::South, "Wall".to_string()),
        ]);
        let region = |face, label: &str, min: [f64; 2], max: [f64; 2]| Region {
            face,
            label: label.into(),
            min,
            max,
        };
        let bx = |label: &str, min: [f64; 3], max: [f64; 3]| LabeledBox {
            label: label.into(),
            min,
            max,
        };
        // Everything sits on the south wall, the south end of the west wall,
        // or the floor and ceiling strips next to them, so the default orbit
        // sees every label.
        let regions = vec![
            region(Face::South, "Door", [1.0, 0.0], [1.8, 2.2]),
            region(Face::South, "Curtain", [1.9, 0.1], [2.4, 2.5]),
            region(Face::South, "Tv-screen", [2.6, 1.1], [3.7, 1.8]),
            region(Face::South, "Picture", [2.7, 1.9], [3.6, 2.45]),
            region(Face::South, "Panel", [3.9, 0.8], [4.4, 2.4]),
            region(Face::South, "Poster", [4.5, 1.2], [5.1, 2.3]),
            region(Face::West, "Window", [3.6, 1.0], [4.5, 1.9]),
            region(Face::West, "Blinds", [3.6, 1.9], [4.5, 2.45]),
            region(Face::West, "Whiteboard", [4.6, 1.95], [5.25, 2.5]),
            region(Face::Floor, "Rug", [3.6, 4.4], [5.3, 5.4]),
            region(Face::Floor, "Mat", [0.95, 4.6], [1.9, 5.3]),
            region(Face::Ceiling, "Light", [1.5, 5.0], [3.5, 5.9]),
        ];
        let boxes = vec![
            bx("Refrigerator", [0.0, 0.0, 4.6], [0.7, 1.9, 5.25]),
            bx("Shelf", [0.0, 0.0, 5.3], [0.9, 1.9, 6.0]),
            bx("Desk", [0.0, 0.0, 3.6], [0.8, 0.8, 4.5]),
            bx("Cabinet", [1.1, 0.0, 4.9], [1.7, 1.0, 5.4]),
            bx("Sofa", [2.6, 0.0, 5.3], [3.7, 0.8, 6.0]),
            bx("Bed", [3.9, 0.0, 5.4], [5.1, 0.6, 6.0]),
            bx("Table", [2.0, 0.0, 4.2], [3.0, 0.75, 4.8]),
        ];
        let groups: [(&str, &str, &[&str]); 7] = [
            ("Background", "Structure", &["Floor", "Ceiling", "Wall", "Panel"]),
            ("Background", "Opening", &["Window", "Blinds", "Door", "Curtain"]),
            ("Background", "Covering", &["Rug", "Mat", "Light"]),
            ("Background", "Decor", &["Whiteboard", "Picture", "Poster"]),
            ("Object", "Furniture", &["Desk", "Sofa", "Bed", "Table"]),
            ("Object", "Storage", &["Cabinet", "Shelf"]),
            ("Object", "Appliance", &["Refrigerator", "Tv-screen"]),
        ];
        let hierarchy = groups
            .iter()
            .flat_map(|(a, b, leaves)| leaves.iter().map(move |l| (l.to_string(), vec![a.to_string(), b.to_string()])))
            .collect();
        RoomSpec {
            size: [6.0, 2.6, 6.0],
            faces,
            regions,
            boxes,
            hierarchy,
            texture: default_texture(),
        }
    }

    /// A bare room whose four walls are tiled with `n` labeled panels, used
    /// to exercise large label sets.
    pub fn gallery(n: usize) -> Self {
        let mut spec = RoomSpec::study_room();
        spec.regions.clear();
        spec.boxes.clear();
        spec.hierarchy.clear();
        let walls = [Face::North, Face::East, Face::South, Face::West];
        let per_wall = n.div_ceil(4).max(1);
        let width = 6.0 / per_wall as f64;
        for i in 0..n {
            let face = walls[i / per_wall];
            let k = (i % per_wall) as f64;
            spec.regions.push(Region {
                face,
                label: format!("Panel-{i:02}"),
                min: [k * width, 0.3],
                max: [(k + 1.0) * width, 2.7],
            });
        }
        spec
    }
}

impl TrajectorySpec {
    pub fn pose(&self, i: usize, frames: usize) -> Pose {
        let s = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.0 };
        let down = Vector3::new(0.0, -1.0, 0.0);
        match self {
            TrajectorySpec::Orbit {
                center,
                radius,
                start_deg,
                arc_deg,
                pitch_deg,
                ease,
            } => {
                let s = if *ease { s * s * (3.0 - 2.0 * s) } else { s };
                let th = (start_deg + s * arc_deg).to_radians();
                let dir = Vector3::new(th.cos(), 0.0, th.sin());
                let eye = Vector3::from(*center) + dir * *radius;
                let pitch = pitch_deg.to_radians();
                let look = dir * pitch.cos() + Vector3::new(0.0, pitch.sin(), 0.0);
                Pose::look_at(eye, eye + look, down)
            }
            TrajectorySpec::Line { start, end, target } => {
                let eye = Vector3::from(*start) * (1.0 - s) + Vector3::from(*end) * s;
                Pose::look_at(eye, Vector3::from(*target), down)
            }
        }
    }

    /// Slow 36° outward sweep from the south wall of [`RoomSpec::study_room`]
    /// toward its south-west corner, about 1.2° per frame over 30 frames.
    pub fn default_orbit() -> Self {
        TrajectorySpec::Orbit {
            center: [3.2, 1.3, 2.2],
            radius: 0.5,
            start_deg: 95.0,
            arc_deg: 36.0,
            pitch_deg: 0.0,
            ease: false,
        }
    }
}

impl SynthConfig {
    /// The default study room at 144×108 along a 30-frame orbit.
    pub fn study(seed: u64) -> Self {
        SynthConfig {
            room: RoomSpec::study_room(),
            camera: DatasetMeta {
                width: 144,
                height: 108,
                fx: 90.0,
                fy: 90.0,
                cx: 71.5,
                cy: 53.5,
                depth_scale: 5000.0,
            },
            trajectory: TrajectorySpec::default_orbit(),
            frames: 30,
            fps: 30.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.room.validate()?;
        if self.frames == 0 {
            return Err(IoError::Spec("frames must be ≥ 1".into()));
        }
        if self.camera.width == 0 || self.camera.height == 0 || !(self.camera.fx > 0.0 && self.camera.fy > 0.0) {
            return Err(IoError::Spec("camera needs positive size and focal lengths".into()));
        }
        for i in 0..self.frames {
            let eye = self.trajectory.pose(i, self.frames).translation;
            let inside = (0..3).all(|a| eye[a] > 0.0 && eye[a] < self.room.size[a]);
            let in_box = self.room.boxes.iter().any(|b| (0..3).all(|a| eye[a] >= b.min[a] && eye[a] <= b.max[a]));
            if !inside || in_box {
                return Err(IoError::Spec(format!("camera {i} at {eye:?} is not in free space")));
            }
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.camera.intrinsics()
    }
}

struct Palette {
    base: Vec<[f64; 3]>,
    phase: Vec<[f64; 2]>,
}

impl Palette {
    fn new(labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut base = Vec::with_capacity(labels);
        let mut phase = Vec::with_capacity(labels);
        for _ in 0..labels {
            base.push([
                rng.random_range(0.15..0.9),
                rng.random_range(0.15..0.9),
                rng.random_range(0.15..0.9),
            ]);
            phase.push([
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]);
        }
        Palette { base, phase }
    }
}

/// Spatial frequency of the texture, radians per meter.
const TEXTURE_FREQ: f64 = 5.0;

struct Hit {
    t: f64,
    label: u32,
}

fn cast(room: &RoomSpec, labels: &[String], origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let index = |l: &str| labels.iter().position(|x| x == l).unwrap() as u32;
    // exit point of the room interior
    let mut best: Option<(f64, Face)> = None;
    for a in 0..3 {
        let (t, face) = if dir[a] > 0.0 {
            (
                (room.size[a] - origin[a]) / dir[a],
                [Face::East, Face::Ceiling, Face::South][a],
            )
        } else if dir[a] < 0.0 {
            (-origin[a] / dir[a], [Face::West, Face::Floor, Face::North][a])
        } else {
            continue;
        };
        if best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, face));
        }
    }
    let mut hit = best.map(|(t, face)| {
        let p = origin + dir * t;
        let uv = match face {
            Face::Floor | Face::Ceiling => [p.x, p.z],
            Face::West | Face::East => [p.z, p.y],
            Face::North | Face::South => [p.x, p.y],
        };
        let label = room
            .regions
            .iter()
            .rev()
            .find(|r| r.face == face && (0..2).all(|i| uv[i] >= r.min[i] && uv[i] <= r.max[i]))
            .map(|r| r.label.as_str())
            .unwrap_or(room.faces[&face].as_str());
        Hit { t, label: index(label) }
    })?;
    for b in &room.boxes {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut ok = true;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < b.min[a] || origin[a] > b.max[a] {
                    ok = false;
                    break;
                }
                continue;
            }
            let ta = (b.min[a] - origin[a]) / dir[a];
            let tb = (b.max[a] - origin[a]) / dir[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        if ok && t0 <= t1 && t0 > 1e-9 && t0 < hit.t {
            hit = Hit {
                t: t0,
                label: index(&b.label),
            };
        }
    }
    Some(hit)
}

fn shade(room: &RoomSpec, palette: &Palette, label: u32, p: &Vector3<f64>) -> [u8; 3] {
    let [p0, p1] = palette.phase[label as usize];
    let pattern = 0.5
        + 0.25 * ((TEXTURE_FREQ * (p.x + p.y) + p0).sin() + (TEXTURE_FREQ * (p.z - p.y) + p1).sin());
    let gain = 1.0 - room.texture + room.texture * pattern;
    palette.base[label as usize].map(|c| ((c * gain).clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Ray casts the room from `pose`.
pub fn render_view(cfg: &SynthConfig, pose: &Pose) -> SynthView {
    let labels = cfg.room.labels();
    let palette = Palette::new(labels.len(), cfg.seed);
    let k = cfg.intrinsics();
    let (w, h) = (k.width, k.height);
    let r = pose.rotation_matrix();
    let mut view = SynthView {
        width: w,
        height: h,
        color: vec![0; w * h * 3],
        depth: vec![0.0; w * h],
        labels: vec![VOID_LABEL; w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let dc = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let dir = r * dc;
            let p = y * w + x;
            if let Some(hit) = cast(&cfg.room, &labels, &pose.translation, &dir) {
                let point = pose.translation + dir * hit.t;
                view.depth[p] = hit.t;
                view.labels[p] = hit.label;
                view.color[p * 3..p * 3 + 3].copy_from_slice(&shade(&cfg.room, &palette, hit.label, &point));
            }
        }
    }
    view
}

/// Writes the full sequence to `out` in the replica-style layout.
pub fn generate_synthetic(cfg: &SynthConfig, out: impl AsRef<Path>) -> Result<SynthSummary, IoError> {
    cfg.validate()?;
    let out = out.as_ref();
    for sub in ["color", "depth", "semantic"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| IoError::file(&dir, e))?;
    }
    let labels = cfg.room.labels();
    let mut poses = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let pose = cfg.trajectory.pose(i, cfg.frames);
        let view = render_view(cfg, &pose);
        let name = format!("{i:06}.png");
        let (w, h) = (view.width, view.height);
        write_rgb_png(&out.join("color").join(&name), w, h, &view.color)?;
        write_u16_png(
            &out.join("depth").join(&name),
            w,
            h,
            &encode_depth(&view.depth, cfg.camera.depth_scale),
        )?;
        write_u16_png(&out.join("semantic").join(&name), w, h, &encode_labels(&view.labels))?;
        poses.push(Stamped {
            timestamp: i as f64 / cfg.fps,
            pose,
        });
    }
    save_trajectory(&poses, out.join("poses.txt"))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| IoError::file(&p, e))
    };
    write("labels.txt", labels.iter().map(|l| format!("{l}\n")).collect())?;
    write("meta.json", serde_json::to_string_pretty(&cfg.camera).expect("meta serializes"))?;
    let mut wrote_taxonomy = false;
    if let Some(paths) = cfg.room.taxonomy_paths() {
        let tree = SemanticTree::from_paths(&paths).map_err(|e| IoError::Spec(e.to_string()))?;
        write("taxonomy.json", tree.to_json())?;
        wrote_taxonomy = true;
    }
    Ok(SynthSummary {
        frames: cfg.frames,
        labels,
        wrote_taxonomy,
    })
}
