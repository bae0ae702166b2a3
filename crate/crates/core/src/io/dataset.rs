//! RGB-D + semantic sequence loading.
//!
//! Replica-style layout (also written by the synthetic generator):
//!
//! ```text
//! color/000000.png    8-bit RGB
//! depth/000000.png    16-bit, meters × depth_scale
//! semantic/000000.png 16-bit leaf index, 65535 = VOID (optional)
//! poses.txt           TUM text, one line per frame (optional)
//! labels.txt          one leaf label per line
//! meta.json           intrinsics and depth_scale
//! ```
//!
//! TUM-style: `rgb.txt`, `depth.txt` (`timestamp path` lines), optional
//! `groundtruth.txt`, and `meta.json` (optional; Freiburg 1 defaults).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::trajectory::parse_trajectory;
use super::IoError;
use crate::losses::Observation;
use crate::renderer::VOID_LABEL;
use crate::scene::{CameraIntrinsics, Pose};

pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;
pub const SEMANTIC_VOID: u16 = u16::MAX;
/// Frames decoded ahead of the consumer.
pub const PREFETCH_DEPTH: usize = 4;
/// Maximum timestamp gap when associating TUM streams, in seconds.
const TUM_MAX_DT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_scale")]
    pub depth_scale: f64,
}

fn default_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

impl DatasetMeta {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    pub fn from_intrinsics(k: &CameraIntrinsics, depth_scale: f64) -> Self {
        DatasetMeta {
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            depth_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    #[default]
    ReplicaStyle,
    TumStyle,
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replica-style" | "replica" => Ok(DatasetKind::ReplicaStyle),
            "tum-style" | "tum" => Ok(DatasetKind::TumStyle),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(format!("unknown dataset kind {other:?}")),
        }
    }
}

/// One decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrame {
    pub index: usize,
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    /// `H·W·3` 8-bit RGB.
    pub color: Vec<u8>,
    /// Meters; 0 where missing.
    pub depth: Vec<f64>,
    /// Leaf indices or [`VOID_LABEL`].
    pub semantic: Vec<u32>,
    pub gt_pose: Option<Pose>,
}

impl DatasetFrame {
    pub fn color_f64(&self) -> Vec<f64> {
        self.color.iter().map(|&c| c as f64 / 255.0).collect()
    }

    pub fn observation(&self) -> Observation {
        Observation {
            width: self.width,
            height: self.height,
            color: self.color_f64(),
            depth: self.depth.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    timestamp: f64,
    color: PathBuf,
    depth: PathBuf,
    semantic: Option<PathBuf>,
    pose: Option<Pose>,
}

/// An opened sequence; frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub root: PathBuf,
    pub kind: DatasetKind,
    pub meta: DatasetMeta,
    pub labels: Vec<String>,
    entries: Vec<Entry>,
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|e| IoError::file(path, e))
}

fn read_meta(path: &Path) -> Result<DatasetMeta, IoError> {
    let text = read_text(path)?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| IoError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if meta.width == 0 || meta.height == 0 || !(meta.depth_scale > 0.0) {
        return Err(IoError::Decode {
            path: path.to_path_buf(),
            message: "width, height and depth_scale must be positive".into(),
        });
    }
    Ok(meta)
}

fn read_labels(path: &Path) -> Result<Vec<String>, IoError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn require(path: PathBuf) -> Result<PathBuf, IoError> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(IoError::Layout(format!("missing file {}", path.display())))
    }
}

/// Opens a sequence of the given kind.
pub fn load_sequence(root: impl AsRef<Path>, kind: DatasetKind) -> Result<Sequence, IoError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(IoError::Layout(format!("{} is not a directory", root.display())));
    }
    match kind {
        DatasetKind::ReplicaStyle | DatasetKind::Synthetic => open_replica(root, kind),
        DatasetKind::TumStyle => open_tum(root),
    }
}

fn open_replica(root: &Path, kind: DatasetKind) -> Result<Sequence, IoError> {
    let meta = read_meta(&root.join("meta.json"))?;
    let labels = read_labels(&root.join("labels.txt"))?;
    let poses_path = root.join("poses.txt");
    let stamped: Vec<(f64, Option<Pose>)> = if poses_path.exists() {
        parse_trajectory(&read_text(&poses_path)?)?
            .into_iter()
            .map(|s| (s.timestamp, Some(s.pose)))
            .collect()
    } else {
        let dir = root.join("color");
        let mut count = 0;
        while dir.join(format!("{count:06}.png")).is_file() {
            count += 1;
        }
        (0..count).map(|i| (i as f64, None)).collect()
    };
    if stamped.is_empty() {
        return Err(IoError::Layout(format!("{} contains no frames", root.display())));
    }
    let mut entries = Vec::with_capacity(stamped.len());
    for (i, (timestamp, pose)) in stamped.into_iter().enumerate() {
        let name = format!("{i:06}.png");
        let sem = root.join("semantic").join(&name);
        entries.push(Entry {
            timestamp,
            color: require(root.join("color").join(&name))?,
            depth: require(root.join("depth").join(&name))?,
            semantic: sem.is_file().then_some(sem),
            pose,
        });
    }
    Ok(Sequence {
        root: root.to_path_buf(),
        kind,
        meta,
        labels,
        entries,
    })
}

fn read_stamp_list(path: &Path) -> Result<Vec<(f64, String)>, IoError> {
    let mut out = Vec::new();
    for (i, raw) in read_text(path)?.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(t), Some(file)) = (it.next(), it.next()) else {
            return Err(IoError::Parse {
                line: i + 1,
                message: format!("{}: expected `timestamp path`", path.display()),
            });
        };
        let t = t.parse::<f64>().map_err(|_| IoError::Parse {
            line: i + 1,
            message: format!("{}: bad timestamp {t:?}", path.display()),
        })?;
        out.push((t, file.to_string()));
    }
    Ok(out)
}

fn nearest<T>(items: &[(f64, T)], t: f64) -> Option<&T> {
    items
        .iter()
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .filter(|(s, _)| (s - t).abs() <= TUM_MAX_DT)
        .map(|(_, v)| v)
}

fn open_tum(root: &Path) -> Result<Sequence, IoError> {
    let rgb = read_stamp_list(&root.join("rgb.txt"))?;
    let depth = read_stamp_list(&root.join("depth.txt"))?;
    let gt: Vec<(f64, Pose)> = if root.join("groundtruth.txt").exists() {
        parse_trajectory(&read_text(&root.join("groundtruth.txt"))?)?
            .into_iter()
            .map(|s| (s.timestamp, s.pose))
            .collect()
    } else {
        Vec::new()
    };
    let meta = if root.join("meta.json").exists() {
        read_meta(&root.join("meta.json"))?
    } else {
        DatasetMeta {
            width: 640,
            height: 480,
            fx: 517.3,
            fy: 516.5,
            cx: 318.6,
            cy: 255.3,
            depth_scale: DEFAULT_DEPTH_SCALE,
        }
    };
    let mut entries = Vec::new();
    for (t, file) in &rgb {
        let Some(dfile) = nearest(&depth, *t) else { continue };
        entries.push(Entry {
            timestamp: *t,
            color: require(root.join(file))?,
            depth: require(root.join(dfile))?,
            semantic: None,
            pose: nearest(&gt, *t).copied(),
        });
    }
    entries.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    if entries.is_empty() {
        return Err(IoError::Layout(format!("{} has no associated rgb/depth pairs", root.display())));
    }
    Ok(Sequence {
        root: root.to_path_buf(),
        kind: DatasetKind::TumStyle,
        meta,
        labels: Vec::new(),
        entries,
    })
}

fn decode_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Decode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage, IoError> {
    image::open(path).map_err(|e| decode_err(path, e.to_string()))
}

fn read_u16(path: &Path, w: usize, h: usize) -> Result<Vec<u16>, IoError> {
    let img = open_image(path)?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => return Err(decode_err(path, format!("expected 16-bit grayscale, found {:?}", other.color()))),
    };
    if img.width() as usize != w || img.height() as usize != h {
        return Err(decode_err(path, format!("size {}x{}, expected {w}x{h}", img.width(), img.height())));
    }
    Ok(img.into_raw())
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.meta.intrinsics()
    }

    pub fn ground_truth(&self) -> Vec<Option<Pose>> {
        self.entries.iter().map(|e| e.pose).collect()
    }

    /// Keeps only the first `n` frames.
    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }

    pub fn load_frame(&self, index: usize) -> Result<DatasetFrame, IoError> {
        let e = self
            .entries
            .get(index)
            .ok_or_else(|| IoError::Layout(format!("frame {index} out of range ({} frames)", self.len())))?;
        let (w, h) = (self.meta.width, self.meta.height);
        let color_img = open_image(&e.color)?;
        if color_img.width() as usize != w || color_img.height() as usize != h {
            return Err(decode_err(
                &e.color,
                format!("size {}x{}, expected {w}x{h}", color_img.width(), color_img.height()),
            ));
        }
        let color = color_img.to_rgb8().into_raw();
        let depth = read_u16(&e.depth, w, h)?
            .into_iter()
            .map(|d| d as f64 / self.meta.depth_scale)
            .collect();
        let semantic = match &e.semantic {
            Some(p) => {
                let raw = read_u16(p, w, h)?;
                let k = self.labels.len();
                raw.into_iter()
                    .map(|v| {
                        if v == SEMANTIC_VOID {
                            Ok(VOID_LABEL)
                        } else if k > 0 && v as usize >= k {
                            Err(decode_err(p, format!("label {v} outside {k} classes")))
                        } else {
                            Ok(v as u32)
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => vec![VOID_LABEL; w * h],
        };
        Ok(DatasetFrame {
            index,
            timestamp: e.timestamp,
            width: w,
            height: h,
            color,
            depth,
            semantic,
            gt_pose: e.pose,
        })
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<DatasetFrame, IoError>> + '_ {
        (0..self.len()).map(move |i| self.load_frame(i))
    }

    /// Decodes frames on a background thread, at most `depth` ahead.
    pub fn prefetch(self, depth: usize) -> Prefetch {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::spawn(move || {
            for i in 0..self.len() {
                let frame = self.load_frame(i);
                let stop = frame.is_err();
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
        });
        Prefetch {
            rx: Some(rx),
            handle: Some(handle),
        }
    }
}

/// Iterator over frames decoded by [`Sequence::prefetch`].
pub struct Prefetch {
    rx: Option<Receiver<Result<DatasetFrame, IoError>>>,
    handle: Option<JoinHandle<()>>,
}

impl Iterator for Prefetch {
    type Item = Result<DatasetFrame, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for Prefetch {
    fn drop(&mut self) {
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub fn write_rgb_png(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<(), IoError> {
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, rgb.to_vec())
        .ok_or_else(|| IoError::Encode {
            path: path.to_path_buf(),
            message: "buffer size does not match image size".into(),
        })?;
    img.save(path).map_err(|e| IoError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_gray8_png(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<(), IoError> {
    let img: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, data.to_vec())
        .ok_or_else(|| IoError::Encode {
            path: path.to_path_buf(),
            message: "buffer size does not match image size".into(),
        })?;
    img.save(path).map_err(|e| IoError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_u16_png(path: &Path, w: usize, h: usize, data: &[u16]) -> Result<(), IoError> {
    let img: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(w as u32, h as u32, data.to_vec())
        .ok_or_else(|| IoError::Encode {
            path: path.to_path_buf(),
            message: "buffer size does not match image size".into(),
        })?;
    img.save(path).map_err(|e| IoError::Encode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Meters to 16-bit depth units, saturating; non-finite and negative → 0.
pub fn encode_depth(depth: &[f64], scale: f64) -> Vec<u16> {
    depth
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d * scale).round().min(u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect()
}

/// Leaf indices to 16-bit semantic values.
pub fn encode_labels(labels: &[u32]) -> Vec<u16> {
    labels
        .iter()
        .map(|&l| if l == VOID_LABEL || l >= SEMANTIC_VOID as u32 { SEMANTIC_VOID } else { l as u16 })
        .collect()
}
