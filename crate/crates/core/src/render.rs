//! Raster previews of skeleton sequences: one PNG per frame, bones as line
//! segments and joints as coloured discs.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::skeleton::coco::{BONES, JOINT_COLORS};
use crate::skeleton::{Skeleton, SkeletonSequence, DEFAULT_FPS, NUM_JOINTS};

const BACKGROUND: Rgb<u8> = Rgb([0, 0, 0]);
const BONE_COLOR: Rgb<u8> = Rgb([128, 128, 128]);

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub width: u32,
    pub height: u32,
    pub bones: Vec<(usize, usize)>,
    pub stroke: f64,
    pub joint_radius: f64,
    pub fps: f32,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            width: 640,
            height: 640,
            bones: BONES.to_vec(),
            stroke: 3.0,
            joint_radius: 5.0,
            fps: DEFAULT_FPS,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("canvas must be non-empty"));
        }
        if let Some(&(a, b)) = self.bones.iter().find(|&&(a, b)| a >= NUM_JOINTS || b >= NUM_JOINTS) {
            return Err(Error::config(format!("bone ({a}, {b}) references a joint outside 0..{NUM_JOINTS}")));
        }
        if !(self.stroke > 0.0 && self.joint_radius > 0.0 && self.fps > 0.0) {
            return Err(Error::config("stroke, joint radius and frame rate must be positive"));
        }
        Ok(())
    }

    /// Normalised `[-1, 1]` coordinates to continuous pixel coordinates.
    pub fn to_canvas(&self, p: [f32; 2]) -> [f64; 2] {
        [
            (p[0] as f64 + 1.0) * 0.5 * self.width as f64,
            (p[1] as f64 + 1.0) * 0.5 * self.height as f64,
        ]
    }

    pub fn from_canvas(&self, c: [f64; 2]) -> [f32; 2] {
        [
            (2.0 * c[0] / self.width as f64 - 1.0) as f32,
            (2.0 * c[1] / self.height as f64 - 1.0) as f32,
        ]
    }
}

/// Fills every pixel whose centre lies within `r` of `c`.
fn disc(img: &mut RgbImage, c: [f64; 2], r: f64, color: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let x0 = (c[0] - r).floor().max(0.0) as u32;
    let y0 = (c[1] - r).floor().max(0.0) as u32;
    let x1 = ((c[0] + r).ceil().max(0.0) as u32).min(w);
    let y1 = ((c[1] + r).ceil().max(0.0) as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (dx, dy) = (x as f64 + 0.5 - c[0], y as f64 + 0.5 - c[1]);
            if dx * dx + dy * dy <= r * r {
                img.put_pixel(x, y, color);
            }
        }
    }
}

fn segment(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], width: f64, color: Rgb<u8>) {
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let steps = (len * 2.0).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let s = i as f64 / steps as f64;
        disc(img, [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])], width / 2.0, color);
    }
}

pub fn render_frame(skeleton: &Skeleton, spec: &RenderSpec) -> RgbImage {
    let mut img = RgbImage::from_pixel(spec.width, spec.height, BACKGROUND);
    for &(a, b) in &spec.bones {
        if !skeleton.is_missing(a) && !skeleton.is_missing(b) {
            let (pa, pb) = (spec.to_canvas(skeleton.joints[a]), spec.to_canvas(skeleton.joints[b]));
            segment(&mut img, pa, pb, spec.stroke, BONE_COLOR);
        }
    }
    for (j, p) in skeleton.joints.iter().enumerate() {
        if !skeleton.is_missing(j) {
            disc(&mut img, spec.to_canvas(*p), spec.joint_radius, Rgb(JOINT_COLORS[j]));
        }
    }
    img
}

/// Writes `frame_00000.png`, `frame_00001.png`, ... into `dir`.
pub fn render_sequence(seq: &SkeletonSequence, dir: &Path, spec: &RenderSpec) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    std::fs::create_dir_all(dir)?;
    seq.to_skeletons()
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let path = dir.join(format!("frame_{t:05}.png"));
            render_frame(s, spec)
                .save(&path)
                .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
            Ok(path)
        })
        .collect()
}

/// Recovers joint positions from a rendered frame as the centroid of each
/// joint's colour; `None` where the colour is absent.
pub fn detect_joints(img: &RgbImage, spec: &RenderSpec) -> [Option<[f32; 2]>; NUM_JOINTS] {
    let mut acc = [(0.0f64, 0.0f64, 0usize); NUM_JOINTS];
    for (x, y, px) in img.enumerate_pixels() {
        if let Some(j) = JOINT_COLORS.iter().position(|c| *c == px.0) {
            acc[j].0 += x as f64 + 0.5;
            acc[j].1 += y as f64 + 0.5;
            acc[j].2 += 1;
        }
    }
    let mut out = [None; NUM_JOINTS];
    for (o, (sx, sy, n)) in out.iter_mut().zip(acc) {
        if n > 0 {
            *o = Some(spec.from_canvas([sx / n as f64, sy / n as f64]));
        }
    }
    out
}
