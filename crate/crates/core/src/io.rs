//! Heatmap codecs (HMF and 8-bit grayscale PNG), JSON box/score files and
//! record manifests.
//!
//! HMF layout, all little-endian:
//!
//! ```text
//! "HMF1" | width: u32 | height: u32 | width*height f32 values, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BoundingBox, EvaluationRecord, Heatmap, ScoreVector};

pub const HMF_MAGIC: &[u8; 4] = b"HMF1";
const HMF_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Png,
    Hmf,
}

impl HeatmapFormat {
    /// Picks the format from a file extension (`.png` or `.hmf`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("png") => Ok(HeatmapFormat::Png),
            Some("hmf") => Ok(HeatmapFormat::Hmf),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer heatmap format from `{}` (expected .png or .hmf)",
                path.display()
            ))),
        }
    }
}

pub fn load_heatmap(bytes: &[u8], format: HeatmapFormat) -> Result<Heatmap> {
    match format {
        HeatmapFormat::Hmf => decode_hmf(bytes),
        HeatmapFormat::Png => decode_png(bytes),
    }
}

pub fn save_heatmap(h: &Heatmap, format: HeatmapFormat) -> Vec<u8> {
    match format {
        HeatmapFormat::Hmf => encode_hmf(h),
        HeatmapFormat::Png => encode_png(h),
    }
}

fn decode_hmf(bytes: &[u8]) -> Result<Heatmap> {
    if bytes.len() < HMF_HEADER_LEN {
        return Err(Error::Decode(format!(
            "HMF header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != HMF_MAGIC {
        return Err(Error::Decode("bad HMF magic".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(Error::Decode(format!(
            "HMF dimensions must be positive, got {width}x{height}"
        )));
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::Decode(format!("HMF dimension overflow: {width}x{height}")))?;
    let payload = &bytes[HMF_HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::Decode(format!(
            "HMF payload is {} bytes, expected {} for {width}x{height}",
            payload.len(),
            count * 4
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Decode(format!(
                "HMF value {v} at index {i} is outside [0, 1]"
            )));
        }
        values.push(v);
    }
    Heatmap::new(width as usize, height as usize, values)
}

fn encode_hmf(h: &Heatmap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HMF_HEADER_LEN + 4 * h.len());
    out.extend_from_slice(HMF_MAGIC);
    out.extend_from_slice(&(h.width() as u32).to_le_bytes());
    out.extend_from_slice(&(h.height() as u32).to_le_bytes());
    for v in h.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_png(bytes: &[u8]) -> Result<Heatmap> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(format!("PNG header: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::Decode(format!(
            "PNG must be single-channel grayscale, got {:?}",
            info.color_type
        )));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Decode(format!(
            "PNG must be 8-bit, got {:?}",
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(format!("PNG data: {e}")))?;
    let stride = frame.line_size;
    let mut values = Vec::with_capacity(width * height);
    for row in buf.chunks(stride).take(height) {
        values.extend(row[..width].iter().map(|&p| f32::from(p) / 255.0));
    }
    Heatmap::new(width, height, values)
}

/// Quantizes each value to the nearest multiple of 1/255.
fn encode_png(h: &Heatmap) -> Vec<u8> {
    let pixels: Vec<u8> = h
        .values()
        .iter()
        .map(|&v| (f64::from(v) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, h.width() as u32, h.height() as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        // writing into a Vec cannot fail for a valid header and exact-size payload
        let mut writer = encoder.write_header().expect("PNG header");
        writer.write_image_data(&pixels).expect("PNG data");
    }
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_heatmap_file(path: &Path) -> Result<Heatmap> {
    let format = HeatmapFormat::from_path(path)?;
    load_heatmap(&read(path)?, format)
}

pub fn write_heatmap_file(path: &Path, h: &Heatmap) -> Result<()> {
    let format = HeatmapFormat::from_path(path)?;
    fs::write(path, save_heatmap(h, format)).map_err(|e| Error::io(path, e))
}

pub fn parse_boxes_json(text: &str) -> Result<Vec<BoundingBox>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("boxes JSON: {e}")))
}

pub fn parse_scores_json(text: &str) -> Result<ScoreVector> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("scores JSON: {e}")))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One manifest entry. Paths are resolved relative to the manifest's directory.
/// Heatmap and box paths may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub score_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_heatmap_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misalignment_heatmap_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_boxes_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misalignment_boxes_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn load(&self, base: &Path) -> Result<EvaluationRecord> {
        let resolve = |p: &Path| base.join(p);
        let heatmap = |p: &Option<PathBuf>| -> Result<Option<Heatmap>> {
            p.as_deref().map(|p| read_heatmap_file(&resolve(p))).transpose()
        };
        let boxes = |p: &Option<PathBuf>| -> Result<Vec<BoundingBox>> {
            match p {
                Some(p) => parse_boxes_json(&read_text(&resolve(p))?),
                None => Ok(Vec::new()),
            }
        };
        let record = EvaluationRecord {
            id: self.id.clone(),
            scores: parse_scores_json(&read_text(&resolve(&self.score_path))?)?,
            artifact_heatmap: heatmap(&self.artifact_heatmap_path)?,
            misalignment_heatmap: heatmap(&self.misalignment_heatmap_path)?,
            artifact_boxes: boxes(&self.artifact_boxes_path)?,
            misalignment_boxes: boxes(&self.misalignment_boxes_path)?,
        };
        record
            .clamp_boxes()
            .map_err(|e| Error::Parse(format!("record `{}`: {e}", self.id)))
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<EvaluationRecord>> {
    let entries: Vec<ManifestEntry> = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    entries.iter().map(|e| e.load(base)).collect()
}
