//! Sequence files: little-endian binary (`SKSQ`) and an equivalent JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SkeletonSequence, FRAME_WIDTH, NUM_JOINTS};
use crate::error::{Error, Result};

pub const SEQUENCE_MAGIC: &[u8; 4] = b"SKSQ";
pub const SEQUENCE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4;

pub fn sequence_to_bytes(seq: &SkeletonSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.coords().len() * 4);
    out.extend_from_slice(SEQUENCE_MAGIC);
    out.extend_from_slice(&SEQUENCE_VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.num_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(NUM_JOINTS as u32).to_le_bytes());
    out.extend_from_slice(&seq.fps().to_le_bytes());
    for v in seq.coords() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn sequence_from_bytes(bytes: &[u8]) -> Result<SkeletonSequence> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != SEQUENCE_MAGIC {
        return Err(Error::Parse("not a skeleton sequence file".into()));
    }
    let version = u32_at(bytes, 4);
    if version != SEQUENCE_VERSION {
        return Err(Error::Parse(format!("unsupported sequence version {version}")));
    }
    let frames = u32_at(bytes, 8) as usize;
    let joints = u32_at(bytes, 12) as usize;
    if joints != NUM_JOINTS {
        return Err(Error::Parse(format!("expected {NUM_JOINTS} joints, file has {joints}")));
    }
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * FRAME_WIDTH * 4 {
        return Err(Error::Parse(format!(
            "body holds {} bytes, header promises {} frames",
            body.len(),
            frames
        )));
    }
    let coords = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SkeletonSequence::new(coords, fps)
}

#[derive(Serialize, Deserialize)]
struct SequenceJson {
    version: u32,
    #[serde(rename = "T")]
    frames: usize,
    #[serde(rename = "V")]
    joints: usize,
    fps: f32,
    /// Frame-major rows of `x0, y0, ..., x17, y17`.
    coordinates: Vec<Vec<f32>>,
}

pub fn write_sequence_json(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    let doc = SequenceJson {
        version: SEQUENCE_VERSION,
        frames: seq.num_frames(),
        joints: NUM_JOINTS,
        fps: seq.fps(),
        coordinates: seq.frames().map(<[f32]>::to_vec).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

pub fn read_sequence_json(text: &str) -> Result<SkeletonSequence> {
    let doc: SequenceJson = serde_json::from_str(text)?;
    if doc.joints != NUM_JOINTS {
        return Err(Error::Parse(format!("expected {NUM_JOINTS} joints, got {}", doc.joints)));
    }
    if doc.coordinates.len() != doc.frames {
        return Err(Error::Parse(format!(
            "T = {} but {} rows present",
            doc.frames,
            doc.coordinates.len()
        )));
    }
    SkeletonSequence::from_frames(&doc.coordinates, doc.fps)
        .map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_sequence(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    std::fs::write(path, sequence_to_bytes(seq))?;
    Ok(())
}

/// Reads either form, detected by the leading magic bytes.
pub fn read_sequence(path: &Path) -> Result<SkeletonSequence> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(SEQUENCE_MAGIC) {
        sequence_from_bytes(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
        read_sequence_json(&text)
    }
}
