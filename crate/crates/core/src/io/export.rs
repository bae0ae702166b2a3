//! PNG and JSON exports of rendered frames and label images.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::dataset::{encode_depth, encode_labels, write_gray8_png, write_rgb_png, write_u16_png};
use super::IoError;
use crate::renderer::{Frame, LabelImage, VOID_LABEL};
use crate::taxonomy::{fnv1a, SemanticTree};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_color(frame: &Frame, path: &Path) -> Result<(), IoError> {
    let rgb: Vec<u8> = frame.color.iter().map(|&c| to_u8(c)).collect();
    write_rgb_png(path, frame.width, frame.height, &rgb)
}

pub fn save_silhouette(frame: &Frame, path: &Path) -> Result<(), IoError> {
    let s: Vec<u8> = frame.silhouette.iter().map(|&c| to_u8(c)).collect();
    write_gray8_png(path, frame.width, frame.height, &s)
}

pub fn save_depth(frame: &Frame, depth_scale: f64, path: &Path) -> Result<(), IoError> {
    write_u16_png(path, frame.width, frame.height, &encode_depth(&frame.depth, depth_scale))
}

/// Display color of class `index`; black for VOID.
pub fn class_color(index: u32) -> [u8; 3] {
    if index == VOID_LABEL {
        return [0, 0, 0];
    }
    let h = fnv1a(&index.to_le_bytes());
    [(h & 0xff) as u8 | 0x20, ((h >> 8) & 0xff) as u8 | 0x20, ((h >> 16) & 0xff) as u8 | 0x20]
}

/// 16-bit class indices (65535 = VOID) plus a colorized RGB preview.
pub fn save_labels(img: &LabelImage, index_path: &Path, preview_path: &Path) -> Result<(), IoError> {
    write_u16_png(index_path, img.width, img.height, &encode_labels(&img.labels))?;
    let rgb: Vec<u8> = img.labels.iter().flat_map(|&l| class_color(l)).collect();
    write_rgb_png(preview_path, img.width, img.height, &rgb)
}

#[derive(Debug, Clone, Serialize)]
pub struct PaletteEntry {
    pub index: u32,
    pub name: String,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct Palette {
    pub level: usize,
    pub void_index: u32,
    pub classes: Vec<PaletteEntry>,
}

pub fn palette(tree: &SemanticTree, level: usize) -> Palette {
    Palette {
        level,
        void_index: u16::MAX as u32,
        classes: tree
            .level(level)
            .iter()
            .enumerate()
            .map(|(i, name)| PaletteEntry {
                index: i as u32,
                name: name.clone(),
                color: class_color(i as u32),
            })
            .collect(),
    }
}

pub fn save_palette(tree: &SemanticTree, level: usize, path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(&palette(tree, level)).expect("palette serializes");
    fs::write(path, text).map_err(|e| IoError::file(path, e))
}
