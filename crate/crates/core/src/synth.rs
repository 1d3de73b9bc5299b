//! Procedural fixtures: synthetic music and dances keyed to it, so the whole
//! pipeline runs without external data.
//!
//! Each motion cluster owns a pitch, a beat tempo and a limb pattern. The
//! audio is a tone whose loudness pulses at the tempo; the dance moves the
//! cluster's limbs in phase with that pulse.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, MusicPieceBatch, PIECE_SAMPLES, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::perceptual::LabeledSequence;
use crate::skeleton::{SkeletonSequence, DEFAULT_FPS, FRAME_WIDTH, NUM_JOINTS};

/// A neutral standing pose in normalised image coordinates (y grows down).
pub const REST_POSE: [[f64; 2]; NUM_JOINTS] = [
    [0.0, -0.60],
    [0.0, -0.40],
    [-0.15, -0.40],
    [-0.20, -0.15],
    [-0.22, 0.08],
    [0.15, -0.40],
    [0.20, -0.15],
    [0.22, 0.08],
    [-0.10, 0.10],
    [-0.10, 0.40],
    [-0.10, 0.70],
    [0.10, 0.10],
    [0.10, 0.40],
    [0.10, 0.70],
    [-0.03, -0.65],
    [0.03, -0.65],
    [-0.06, -0.63],
    [0.06, -0.63],
];

pub const NUM_STYLES: usize = 5;

const PITCH_HZ: [f64; NUM_STYLES] = [220.0, 330.0, 495.0, 742.5, 1113.75];
const TEMPO_HZ: [f64; NUM_STYLES] = [0.8, 1.2, 1.6, 2.0, 1.0];
const AMPLITUDE: f64 = 0.12;

/// Displacement `(dx, dy)` of `joint` per unit of the beat signal for `style`.
fn pattern(style: usize, joint: usize) -> [f64; 2] {
    let right_arm = matches!(joint, 3 | 4);
    let left_arm = matches!(joint, 6 | 7);
    let legs = matches!(joint, 9 | 10 | 12 | 13);
    match style {
        // Arms raise and lower together.
        0 if right_arm || left_arm => [0.0, -1.5],
        // Whole-body bounce.
        1 => [0.0, 0.6],
        // Whole-body sway.
        2 => [0.8, 0.0],
        // Arms in anti-phase.
        3 if right_arm => [0.0, -1.5],
        3 if left_arm => [0.0, 1.5],
        // Knee kicks with outward arms.
        4 if legs => [if joint < 11 { -1.0 } else { 1.0 }, -0.5],
        4 if right_arm => [-1.0, 0.0],
        4 if left_arm => [1.0, 0.0],
        _ => [0.0, 0.0],
    }
}

/// One synthetic (music, dance) pair.
#[derive(Debug, Clone)]
pub struct FixturePair {
    pub music: AudioClip,
    pub pose: SkeletonSequence,
    pub style: usize,
}

impl FixturePair {
    pub fn pieces(&self) -> MusicPieceBatch {
        MusicPieceBatch::from_samples(self.music.samples[..self.pose.num_frames() * PIECE_SAMPLES].to_vec())
            .expect("fixture audio covers its frames")
    }
}

/// Beat signal in `[-1, 1]` at time `t` seconds.
fn beat(style: usize, phase: f64, t: f64) -> f64 {
    (TAU * TEMPO_HZ[style] * t + phase).sin()
}

pub fn synth_music(style: usize, frames: usize, phase: f64, rng: &mut impl Rng) -> AudioClip {
    let n = frames * PIECE_SAMPLES;
    let sr = SAMPLE_RATE as f64;
    let pitch = PITCH_HZ[style % NUM_STYLES] * rng.gen_range(0.98..1.02);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let envelope = 0.55 + 0.4 * beat(style, phase, t);
            let v = envelope * 0.8 * (TAU * pitch * t).sin() + rng.gen_range(-0.02..0.02);
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    AudioClip::new(samples, SAMPLE_RATE)
}

pub fn synth_dance(style: usize, frames: usize, phase: f64, amplitude: f64) -> SkeletonSequence {
    let mut coords = Vec::with_capacity(frames * FRAME_WIDTH);
    for f in 0..frames {
        // Pose for frame `f` reflects the middle of its 0.1 s piece.
        let t = (f as f64 + 0.5) / DEFAULT_FPS as f64;
        let b = beat(style, phase, t);
        for (j, rest) in REST_POSE.iter().enumerate() {
            let p = pattern(style, j);
            coords.push((rest[0] + amplitude * p[0] * b) as f32);
            coords.push((rest[1] + amplitude * p[1] * b) as f32);
        }
    }
    SkeletonSequence::new(coords, DEFAULT_FPS).expect("synthetic frames have full width")
}

/// `per_style` pairs for each of the first `styles` styles, interleaved by
/// style. Each pair gets its own beat phase.
pub fn fixture_set(styles: usize, per_style: usize, frames: usize, seed: u64) -> Result<Vec<FixturePair>> {
    if styles == 0 || styles > NUM_STYLES || per_style == 0 || frames == 0 {
        return Err(Error::config(format!(
            "fixture set needs 1..={NUM_STYLES} styles, at least one pair per style and one frame"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(styles * per_style);
    for _ in 0..per_style {
        for style in 0..styles {
            let phase = rng.gen_range(0.0..TAU);
            let amplitude = AMPLITUDE * rng.gen_range(0.9..1.1);
            out.push(FixturePair {
                music: synth_music(style, frames, phase, &mut rng),
                pose: synth_dance(style, frames, phase, amplitude),
                style,
            });
        }
    }
    Ok(out)
}

/// Two labelled motion classes: 0 holds a pose with slight jitter, 1
/// oscillates the whole body. Each sequence is shifted by a small random offset.
pub fn still_vs_moving(per_class: usize, frames: usize, seed: u64) -> Vec<LabeledSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        for label in 0..2 {
            let (dx, dy) = (rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            // Whole-body bounce or sway.
            let style = rng.gen_range(1..=2);
            let phase = rng.gen_range(0.0..TAU);
            let amp = if label == 0 { 0.0 } else { AMPLITUDE * 1.5 };
            let base = synth_dance(style, frames, phase, amp);
            let coords = base
                .coords()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let shift = if i % 2 == 0 { dx } else { dy };
                    (v as f64 + shift + rng.gen_range(-0.001..0.001)) as f32
                })
                .collect();
            out.push(LabeledSequence {
                sequence: SkeletonSequence::new(coords, DEFAULT_FPS).expect("full frames"),
                label,
            });
        }
    }
    out
}

/// Fixture dances labelled by style, for classifier pretraining.
pub fn style_labelled(pairs: &[FixturePair]) -> Vec<LabeledSequence> {
    pairs
        .iter()
        .map(|p| LabeledSequence {
            sequence: p.pose.clone(),
            label: p.style,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Mean absolute frame-to-frame change, the "temporal energy".
    fn energy(s: &SkeletonSequence) -> f64 {
        let c = s.coords();
        c[FRAME_WIDTH..]
            .iter()
            .zip(c)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / c.len() as f64
    }

    #[test]
    fn fixtures_are_deterministic_and_sized() {
        let a = fixture_set(5, 2, 20, 3).unwrap();
        let b = fixture_set(5, 2, 20, 3).unwrap();
        assert_eq!(a.len(), 10);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pose, y.pose);
            assert_eq!(x.music, y.music);
        }
        assert_eq!(a[0].music.samples.len(), 20 * PIECE_SAMPLES);
        assert_eq!(a[0].pieces().num_pieces(), 20);
        assert!(a.iter().all(|p| p.pose.coords().iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn still_and_moving_separate_on_temporal_energy() {
        // Nearest-centroid oracle on a single energy feature.
        let train = still_vs_moving(10, 20, 1);
        let test = still_vs_moving(10, 20, 2);
        let centroid = |label: usize| {
            let e: Vec<f64> = train.iter().filter(|s| s.label == label).map(|s| energy(&s.sequence)).collect();
            e.iter().sum::<f64>() / e.len() as f64
        };
        let (c0, c1) = (centroid(0), centroid(1));
        let correct = test
            .iter()
            .filter(|s| {
                let e = energy(&s.sequence);
                usize::from((e - c1).abs() < (e - c0).abs()) == s.label
            })
            .count();
        assert_eq!(correct, test.len());
    }
}
