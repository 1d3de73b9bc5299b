//! Paired dataset files: ingestion of per-frame keypoint directories plus an
//! audio track, 5 s segmentation, and the on-disk pair layout
//! (`<name>.sksq` next to `<name>.wav`).

use std::path::{Path, PathBuf};

use crate::audio::{load_audio, slice_pieces, write_wav, AudioClip, PIECE_SAMPLES};
use crate::error::{Error, Result};
use crate::skeleton::{
    clean_sequence, ingest_openpose, openpose_document, read_sequence, write_sequence, ImageSize, Skeleton,
    SkeletonSequence, DEFAULT_FPS, NUM_JOINTS,
};
use crate::synth::FixturePair;
use crate::training::TrainingPair;

/// Frames per segment: 5 s at 10 fps.
pub const SEGMENT_FRAMES: usize = 50;

/// One stored (dance, music) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredPair {
    pub name: String,
    pub pose: SkeletonSequence,
    pub music: AudioClip,
}

impl StoredPair {
    pub fn training_pair(&self) -> Result<TrainingPair> {
        TrainingPair::new(slice_pieces(&self.music, self.pose.num_frames())?, self.pose.clone())
    }
}

/// Keypoint files of a directory in lexicographic order.
pub fn keypoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "json"));
    files.sort();
    Ok(files)
}

/// Reads one keypoint document per frame and repairs missing joints. Frames
/// without a detected person count as fully missing.
pub fn ingest_keypoint_dir(dir: &Path, size: ImageSize) -> Result<SkeletonSequence> {
    let files = keypoint_files(dir)?;
    if files.is_empty() {
        return Err(Error::DegenerateInput(format!("no keypoint files in {}", dir.display())));
    }
    let raw = files
        .iter()
        .map(|f| match ingest_openpose(f, size) {
            Err(Error::EmptyDetection) => Ok(Skeleton {
                joints: [[0.0; 2]; NUM_JOINTS],
                confidence: [0.0; NUM_JOINTS],
            }),
            other => other,
        })
        .collect::<Result<Vec<_>>>()?;
    clean_sequence(&raw, DEFAULT_FPS)
}

/// Cuts an aligned dance and audio track into whole 5 s segments.
///
/// The audio must cover the dance to within one frame; a trailing partial
/// segment is dropped.
pub fn segment_pairs(pose: &SkeletonSequence, music: &AudioClip) -> Result<Vec<(SkeletonSequence, AudioClip)>> {
    let frames = pose.num_frames();
    let audio_frames = music.samples.len() / PIECE_SAMPLES;
    if audio_frames + 1 < frames {
        return Err(Error::Alignment(format!(
            "audio covers {audio_frames} frames but the dance has {frames}"
        )));
    }
    if audio_frames > frames + 1 {
        return Err(Error::Alignment(format!(
            "audio spans {audio_frames} frames, dance {frames}: durations differ by more than one frame"
        )));
    }
    let usable = frames.min(audio_frames);
    (0..usable / SEGMENT_FRAMES)
        .map(|s| {
            let start = s * SEGMENT_FRAMES;
            let samples = music.samples[start * PIECE_SAMPLES..(start + SEGMENT_FRAMES) * PIECE_SAMPLES].to_vec();
            Ok((pose.slice(start, SEGMENT_FRAMES)?, AudioClip::new(samples, music.sample_rate)))
        })
        .collect()
}

pub fn write_pair(dir: &Path, name: &str, pose: &SkeletonSequence, music: &AudioClip) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_sequence(pose, &dir.join(format!("{name}.sksq")))?;
    write_wav(music, &dir.join(format!("{name}.wav")))
}

/// All pairs of a dataset directory, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<StoredPair>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "sksq"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let pose = read_sequence(&dir.join(format!("{name}.sksq")))?;
            let wav = dir.join(format!("{name}.wav"));
            if !wav.exists() {
                return Err(Error::Alignment(format!("{name}.sksq has no matching {name}.wav")));
            }
            let music = load_audio(&wav)?;
            if music.samples.len() < pose.num_frames() * PIECE_SAMPLES {
                return Err(Error::Alignment(format!("{name}.wav is shorter than its dance")));
            }
            Ok(StoredPair { name, pose, music })
        })
        .collect()
}

/// Writes a fixture pair as raw material for ingestion: a directory of
/// per-frame keypoint documents and an audio file.
pub fn write_raw_fixture(dir: &Path, pair: &FixturePair, size: ImageSize) -> Result<()> {
    let keypoints = dir.join("keypoints");
    std::fs::create_dir_all(&keypoints)?;
    for (t, s) in pair.pose.to_skeletons().iter().enumerate() {
        std::fs::write(keypoints.join(format!("{t:06}_keypoints.json")), openpose_document(s, size))?;
    }
    write_wav(&pair.music, &dir.join("audio.wav"))
}
