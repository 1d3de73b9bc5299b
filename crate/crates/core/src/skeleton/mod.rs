//! Skeleton types and the pure sequence operations: missing-joint repair,
//! overlapping windows and interpolated temporal differences.

pub mod coco;
mod io;
mod openpose;

pub use coco::NUM_JOINTS;
pub use io::{read_sequence, read_sequence_json, sequence_from_bytes, sequence_to_bytes, write_sequence, write_sequence_json, SEQUENCE_MAGIC, SEQUENCE_VERSION};
pub use openpose::{ingest_openpose, ingest_openpose_str, openpose_document, ImageSize};

use crate::error::{Error, Result};

/// Coordinates per frame (x and y for every joint).
pub const FRAME_WIDTH: usize = 2 * NUM_JOINTS;
pub const DEFAULT_FPS: f32 = 10.0;

/// One detected pose. Joints with zero confidence are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub joints: [[f32; 2]; NUM_JOINTS],
    pub confidence: [f32; NUM_JOINTS],
}

impl Skeleton {
    /// A fully observed skeleton from a flat `x0, y0, x1, y1, ...` frame.
    pub fn from_frame(frame: &[f32]) -> Self {
        assert_eq!(frame.len(), FRAME_WIDTH);
        let mut joints = [[0.0; 2]; NUM_JOINTS];
        for (j, p) in joints.iter_mut().enumerate() {
            *p = [frame[2 * j], frame[2 * j + 1]];
        }
        Skeleton {
            joints,
            confidence: [1.0; NUM_JOINTS],
        }
    }

    pub fn is_missing(&self, joint: usize) -> bool {
        self.confidence[joint] <= 0.0
    }
}

/// `T` frames of 18 joints stored frame-major as `x0, y0, ..., x17, y17`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    coords: Vec<f32>,
    fps: f32,
}

impl SkeletonSequence {
    pub fn new(coords: Vec<f32>, fps: f32) -> Result<Self> {
        if coords.len() % FRAME_WIDTH != 0 {
            return Err(Error::shape(format!(
                "{} coordinates is not a whole number of {FRAME_WIDTH}-wide frames",
                coords.len()
            )));
        }
        Ok(SkeletonSequence { coords, fps })
    }

    pub fn from_f64(coords: &[f64], fps: f32) -> Result<Self> {
        Self::new(coords.iter().map(|&v| v as f32).collect(), fps)
    }

    pub fn from_frames(frames: &[Vec<f32>], fps: f32) -> Result<Self> {
        let mut coords = Vec::with_capacity(frames.len() * FRAME_WIDTH);
        for f in frames {
            if f.len() != FRAME_WIDTH {
                return Err(Error::shape(format!("frame of width {}", f.len())));
            }
            coords.extend_from_slice(f);
        }
        Self::new(coords, fps)
    }

    pub fn num_frames(&self) -> usize {
        self.coords.len() / FRAME_WIDTH
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords.iter().map(|&v| v as f64).collect()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.coords[t * FRAME_WIDTH..(t + 1) * FRAME_WIDTH]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f32; 2] {
        let f = self.frame(t);
        [f[2 * j], f[2 * j + 1]]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.coords.chunks_exact(FRAME_WIDTH)
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.num_frames() {
            return Err(Error::shape(format!(
                "slice {start}+{len} beyond {} frames",
                self.num_frames()
            )));
        }
        Self::new(
            self.coords[start * FRAME_WIDTH..(start + len) * FRAME_WIDTH].to_vec(),
            self.fps,
        )
    }

    pub fn time_reversed(&self) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for f in self.coords.chunks_exact(FRAME_WIDTH).rev() {
            coords.extend_from_slice(f);
        }
        SkeletonSequence {
            coords,
            fps: self.fps,
        }
    }

    /// Swaps left/right joint labels and reflects x.
    pub fn mirrored(&self) -> Self {
        let mut coords = vec![0.0; self.coords.len()];
        for (src, dst) in self
            .coords
            .chunks_exact(FRAME_WIDTH)
            .zip(coords.chunks_exact_mut(FRAME_WIDTH))
        {
            for j in 0..NUM_JOINTS {
                let m = coco::MIRROR[j];
                dst[2 * m] = -src[2 * j];
                dst[2 * m + 1] = src[2 * j + 1];
            }
        }
        SkeletonSequence {
            coords,
            fps: self.fps,
        }
    }

    pub fn to_skeletons(&self) -> Vec<Skeleton> {
        self.frames().map(Skeleton::from_frame).collect()
    }

    pub fn mean_abs_diff(&self, other: &SkeletonSequence) -> Result<f64> {
        if self.coords.len() != other.coords.len() {
            return Err(Error::shape("sequences differ in length"));
        }
        let s: f64 = self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(s / self.coords.len().max(1) as f64)
    }
}

/// `K` equally long, possibly overlapping sub-sequences of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<SkeletonSequence>,
    pub stride: usize,
    pub starts: Vec<usize>,
}

impl WindowBatch {
    pub fn window_len(&self) -> usize {
        self.windows.first().map_or(0, |w| w.num_frames())
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Repairs missing joints by linear interpolation in time; gaps at either
/// end take the nearest observed value.
pub fn clean_sequence(raw: &[Skeleton], fps: f32) -> Result<SkeletonSequence> {
    if raw.is_empty() {
        return Err(Error::DegenerateInput("no frames to clean".into()));
    }
    let t_len = raw.len();
    let mut coords = vec![0.0f32; t_len * FRAME_WIDTH];
    for j in 0..NUM_JOINTS {
        let observed: Vec<usize> = (0..t_len).filter(|&t| !raw[t].is_missing(j)).collect();
        if observed.is_empty() {
            return Err(Error::UnreconstructableJoint { joint: j });
        }
        let mut next = 0;
        for t in 0..t_len {
            while next < observed.len() && observed[next] < t {
                next += 1;
            }
            let value = if next < observed.len() && observed[next] == t {
                raw[t].joints[j]
            } else if next == 0 {
                raw[observed[0]].joints[j]
            } else if next == observed.len() {
                raw[observed[next - 1]].joints[j]
            } else {
                let (t0, t1) = (observed[next - 1], observed[next]);
                let (a, b) = (raw[t0].joints[j], raw[t1].joints[j]);
                let w = (t - t0) as f64 / (t1 - t0) as f64;
                [
                    (a[0] as f64 + (b[0] as f64 - a[0] as f64) * w) as f32,
                    (a[1] as f64 + (b[1] as f64 - a[1] as f64) * w) as f32,
                ]
            };
            coords[t * FRAME_WIDTH + 2 * j] = value[0];
            coords[t * FRAME_WIDTH + 2 * j + 1] = value[1];
        }
    }
    SkeletonSequence::new(coords, fps)
}

/// Largest stride `s >= 1` with `t + (K - 1) s <= T`. A single window uses
/// stride `t`.
pub fn default_stride(total: usize, window_len: usize, count: usize) -> Result<usize> {
    if window_len == 0 || count == 0 {
        return Err(Error::config("window length and count must be positive"));
    }
    if window_len > total {
        return Err(Error::config(format!(
            "window of {window_len} frames does not fit {total} frames"
        )));
    }
    if count == 1 {
        return Ok(window_len);
    }
    let s = (total - window_len) / (count - 1);
    if s == 0 {
        return Err(Error::config(format!(
            "{count} windows of {window_len} frames need at least {} frames, have {total}",
            window_len + count - 1
        )));
    }
    Ok(s)
}

/// Splits `seq` into `count` windows of `window_len` frames at the default stride.
pub fn window(seq: &SkeletonSequence, window_len: usize, count: usize) -> Result<WindowBatch> {
    let stride = default_stride(seq.num_frames(), window_len, count)?;
    window_with_stride(seq, window_len, count, stride)
}

pub fn window_with_stride(
    seq: &SkeletonSequence,
    window_len: usize,
    count: usize,
    stride: usize,
) -> Result<WindowBatch> {
    let total = seq.num_frames();
    if window_len == 0 || count == 0 || stride == 0 {
        return Err(Error::config("window length, count and stride must be positive"));
    }
    if window_len + (count - 1) * stride > total {
        return Err(Error::config(format!(
            "{count} windows of {window_len} frames at stride {stride} exceed {total} frames"
        )));
    }
    let starts: Vec<usize> = (0..count).map(|k| k * stride).collect();
    let windows = starts
        .iter()
        .map(|&s| seq.slice(s, window_len))
        .collect::<Result<_>>()?;
    Ok(WindowBatch {
        windows,
        stride,
        starts,
    })
}

/// Frame differences `x[t+1] - x[t]` resampled back to `frames` frames by
/// linear interpolation (end points aligned). `data` is `frames × width`.
pub fn temporal_difference_values(data: &[f64], frames: usize, width: usize) -> Result<Vec<f64>> {
    if frames < 2 {
        return Err(Error::DegenerateInput(format!(
            "temporal difference needs at least 2 frames, got {frames}"
        )));
    }
    if data.len() != frames * width {
        return Err(Error::shape("data does not match frames × width"));
    }
    let n_diff = frames - 1;
    let diff: Vec<f64> = (0..n_diff)
        .flat_map(|t| (0..width).map(move |c| (t, c)))
        .map(|(t, c)| data[(t + 1) * width + c] - data[t * width + c])
        .collect();
    let mut out = vec![0.0; frames * width];
    for i in 0..frames {
        let pos = if n_diff == 1 {
            0.0
        } else {
            i as f64 * (n_diff - 1) as f64 / (frames - 1) as f64
        };
        let lo = (pos.floor() as usize).min(n_diff - 1);
        let hi = (lo + 1).min(n_diff - 1);
        let w = pos - lo as f64;
        for c in 0..width {
            out[i * width + c] = diff[lo * width + c] * (1.0 - w) + diff[hi * width + c] * w;
        }
    }
    Ok(out)
}

pub fn temporal_difference(seq: &SkeletonSequence) -> Result<SkeletonSequence> {
    let out = temporal_difference_values(&seq.to_f64(), seq.num_frames(), FRAME_WIDTH)?;
    SkeletonSequence::from_f64(&out, seq.fps())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(frames: usize, slope: f32) -> SkeletonSequence {
        let coords = (0..frames)
            .flat_map(|t| (0..FRAME_WIDTH).map(move |c| slope * t as f32 + 0.01 * c as f32))
            .collect();
        SkeletonSequence::new(coords, DEFAULT_FPS).unwrap()
    }

    fn with_gap(values: &[Option<f32>]) -> Vec<Skeleton> {
        values
            .iter()
            .map(|v| {
                let mut s = Skeleton::from_frame(&[0.1; FRAME_WIDTH]);
                match v {
                    Some(x) => s.joints[4] = [*x, 0.0],
                    None => s.confidence[4] = 0.0,
                }
                s
            })
            .collect()
    }

    #[test]
    fn interpolates_a_single_missing_frame_at_the_midpoint() {
        let seq = clean_sequence(&with_gap(&[Some(0.0), None, Some(0.4)]), DEFAULT_FPS).unwrap();
        assert!((seq.joint(1, 4)[0] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn interpolates_a_three_frame_gap() {
        let seq = clean_sequence(
            &with_gap(&[Some(0.0), None, None, None, Some(0.8)]),
            DEFAULT_FPS,
        )
        .unwrap();
        for (t, want) in [(1, 0.2f32), (2, 0.4), (3, 0.6)] {
            assert!((seq.joint(t, 4)[0] - want).abs() < 1e-6, "frame {t}");
        }
    }

    #[test]
    fn boundary_gaps_take_the_nearest_observation() {
        let seq = clean_sequence(&with_gap(&[None, Some(0.3), None]), DEFAULT_FPS).unwrap();
        assert_eq!(seq.joint(0, 4)[0], 0.3);
        assert_eq!(seq.joint(2, 4)[0], 0.3);
    }

    #[test]
    fn complete_input_is_returned_unchanged() {
        let seq = ramp(6, 0.05);
        assert_eq!(clean_sequence(&seq.to_skeletons(), DEFAULT_FPS).unwrap(), seq);
    }

    #[test]
    fn joint_missing_everywhere_is_unreconstructable() {
        let err = clean_sequence(&with_gap(&[None, None]), DEFAULT_FPS).unwrap_err();
        assert!(matches!(err, Error::UnreconstructableJoint { joint: 4 }));
    }

    #[test]
    fn default_windowing_of_fifty_frames() {
        let w = window(&ramp(50, 0.01), 5, 16).unwrap();
        assert_eq!(w.stride, 3);
        assert_eq!(w.starts, (0..16).map(|k| 3 * k).collect::<Vec<_>>());
        assert_eq!(w.windows[15], ramp(50, 0.01).slice(45, 5).unwrap());
    }

    #[test]
    fn single_window_covers_the_whole_sequence() {
        let seq = ramp(5, 0.1);
        let w = window(&seq, 5, 1).unwrap();
        assert_eq!(w.windows, vec![seq]);
    }

    #[test]
    fn twenty_windows_of_five_fit_at_stride_two() {
        let w = window(&ramp(50, 0.01), 5, 20).unwrap();
        assert_eq!(w.stride, 2);
        assert_eq!(*w.starts.last().unwrap() + 5, 43);
    }

    #[test]
    fn infeasible_windowing_is_a_configuration_error() {
        assert!(matches!(window(&ramp(10, 0.1), 5, 7), Err(Error::Config(_))));
        assert!(matches!(window(&ramp(4, 0.1), 5, 1), Err(Error::Config(_))));
    }

    #[test]
    fn temporal_difference_of_constant_is_zero() {
        let seq = SkeletonSequence::new(vec![0.3; 7 * FRAME_WIDTH], DEFAULT_FPS).unwrap();
        let d = temporal_difference(&seq).unwrap();
        assert_eq!(d.num_frames(), 7);
        assert!(d.coords().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_difference_of_ramp_is_its_slope() {
        let d = temporal_difference(&ramp(50, 0.02)).unwrap();
        assert_eq!(d.coords().len(), 50 * FRAME_WIDTH);
        assert!(d.coords().iter().all(|&v| (v - 0.02).abs() < 1e-5));
    }

    #[test]
    fn temporal_difference_rejects_single_frame() {
        assert!(matches!(
            temporal_difference(&ramp(1, 0.1)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn two_frames_difference_is_repeated() {
        let d = temporal_difference_values(&[0.0, 1.0, 0.5, 3.0], 2, 2).unwrap();
        assert_eq!(d, vec![0.5, 2.0, 0.5, 2.0]);
    }
}
