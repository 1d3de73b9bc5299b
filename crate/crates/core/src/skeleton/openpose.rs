use std::path::Path;

use serde::Deserialize;

use super::{Skeleton, NUM_JOINTS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageSize {
    fn default() -> Self {
        ImageSize {
            width: 1280,
            height: 720,
        }
    }
}

#[derive(Deserialize)]
struct KeypointDocument {
    people: Vec<Person>,
}

#[derive(Deserialize)]
struct Person {
    pose_keypoints_2d: Vec<f32>,
}

/// Parses an OpenPose keypoint document and returns the first person with
/// pixel coordinates mapped to `[-1, 1]`.
pub fn ingest_openpose_str(text: &str, size: ImageSize) -> Result<Skeleton> {
    if size.width == 0 || size.height == 0 {
        return Err(Error::config("image size must be non-zero"));
    }
    let doc: KeypointDocument = serde_json::from_str(text)?;
    let person = doc.people.first().ok_or(Error::EmptyDetection)?;
    let kp = &person.pose_keypoints_2d;
    if kp.len() != NUM_JOINTS * 3 {
        return Err(Error::Parse(format!(
            "expected {} keypoint values (18 joints), got {}",
            NUM_JOINTS * 3,
            kp.len()
        )));
    }
    let mut skeleton = Skeleton {
        joints: [[0.0; 2]; NUM_JOINTS],
        confidence: [0.0; NUM_JOINTS],
    };
    let (w, h) = (size.width as f64, size.height as f64);
    for j in 0..NUM_JOINTS {
        let (x, y, c) = (kp[3 * j] as f64, kp[3 * j + 1] as f64, kp[3 * j + 2]);
        if !(x.is_finite() && y.is_finite() && c.is_finite()) {
            return Err(Error::Parse(format!("non-finite keypoint for joint {j}")));
        }
        skeleton.joints[j] = [
            (2.0 * x / w - 1.0).clamp(-1.0, 1.0) as f32,
            (2.0 * y / h - 1.0).clamp(-1.0, 1.0) as f32,
        ];
        skeleton.confidence[j] = c.clamp(0.0, 1.0);
    }
    Ok(skeleton)
}

/// Serialises a skeleton as a single-person OpenPose document in pixels.
pub fn openpose_document(skeleton: &Skeleton, size: ImageSize) -> String {
    let (w, h) = (size.width as f64, size.height as f64);
    let flat: Vec<f64> = (0..NUM_JOINTS)
        .flat_map(|j| {
            let [x, y] = skeleton.joints[j];
            [
                (x as f64 + 1.0) * 0.5 * w,
                (y as f64 + 1.0) * 0.5 * h,
                skeleton.confidence[j] as f64,
            ]
        })
        .collect();
    serde_json::json!({ "version": 1.3, "people": [{ "pose_keypoints_2d": flat }] }).to_string()
}

pub fn ingest_openpose(path: &Path, size: ImageSize) -> Result<Skeleton> {
    ingest_openpose_str(&std::fs::read_to_string(path)?, size)
}
