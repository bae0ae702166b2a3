//! Binary map records and ASCII point-cloud export.
//!
//! Layout (little-endian): `"HSPL"`, version `u32`, count `u64`, code
//! dimension `u32`, then per Gaussian `center 3×f32, radius f32, opacity f32,
//! color 3×f32, embedding N×f32`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{GaussianMap, SceneError};

pub const MAP_MAGIC: &[u8; 4] = b"HSPL";
pub const MAP_VERSION: u32 = 1;

impl GaussianMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.code_dim();
        let mut out = Vec::with_capacity(20 + self.len() * (8 + n) * 4);
        out.extend_from_slice(MAP_MAGIC);
        out.extend_from_slice(&MAP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        for i in 0..self.len() {
            self.centers[i].iter().for_each(|&v| put(v));
            put(self.radii[i]);
            put(self.opacities[i]);
            self.colors[i].iter().for_each(|&v| put(v));
            self.embedding(i).iter().for_each(|&v| put(v));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GaussianMap, SceneError> {
        if bytes.len() < 20 || &bytes[0..4] != MAP_MAGIC {
            return Err(SceneError::Format("missing HSPL header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MAP_VERSION {
            return Err(SceneError::Format(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let record = (8 + n) * 4;
        let expected = count
            .checked_mul(record)
            .and_then(|b| b.checked_add(20))
            .ok_or_else(|| SceneError::Format("count overflows".into()))?;
        if bytes.len() != expected {
            return Err(SceneError::Format(format!(
                "expected {expected} bytes for {count} records, found {}",
                bytes.len()
            )));
        }
        let mut map = GaussianMap::with_code_dim(n);
        let mut pos = 20;
        let mut next = || {
            let v = f32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as f64;
            pos += 4;
            v
        };
        for _ in 0..count {
            map.centers.push([next(), next(), next()]);
            map.radii.push(next());
            map.opacities.push(next());
            map.colors.push([next(), next(), next()]);
            for _ in 0..n {
                let v = next();
                map.embeddings.push(v);
            }
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GaussianMap, SceneError> {
        GaussianMap::from_bytes(&fs::read(path)?)
    }
}

/// Writes `x y z r g b label` per Gaussian; colors as 0–255 integers and the
/// label as the decoded leaf position (−1 without semantics).
pub fn export_ascii(map: &GaussianMap, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for i in 0..map.len() {
        let c = map.centers[i];
        let rgb = map.colors[i].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        let label = match map.tree() {
            Some(t) if map.code_dim() > 0 => *t.argmax_nodes(map.embedding(i)).last().unwrap() as i64,
            _ => -1,
        };
        writeln!(
            w,
            "{:.6} {:.6} {:.6} {} {} {} {}",
            c[0], c[1], c[2], rgb[0], rgb[1], rgb[2], label
        )?;
    }
    w.flush()?;
    Ok(())
}
