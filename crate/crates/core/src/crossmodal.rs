//! Two-step cross-modal evaluation: a music embedding dictionary searched by
//! nearest neighbour, K-means cluster labels, a triplet + MMD pose metric
//! network, and the random-frame / random-sequence baselines.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use autograd::{grad, no_grad, Adam, Tensor, VarStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, SAMPLE_RATE};
use crate::discriminators::{BackboneConfig, PoseBackbone};
use crate::error::{Error, Result};
use crate::generator::pose_tensor;
use crate::nn::{he_rescale, uniform, Conv1d, Gru, Linear};
use crate::perceptual::{argmax_rows, cross_entropy};
use crate::skeleton::{read_sequence, write_sequence, SkeletonSequence, FRAME_WIDTH};

// ---------------------------------------------------------------------------
// Music embedder

/// Log-magnitude energies in `bands` log-spaced bands per analysis frame,
/// `[frames × bands]` row-major. Frames use a Hann window.
pub fn log_band_spectrogram(samples: &[f32], frame: usize, hop: usize, bands: usize) -> Vec<f64> {
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(frame);
    let hann: Vec<f64> = (0..frame)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / frame as f64).cos())
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / frame as f64;
    let (lo, hi) = (60.0f64, 8000.0f64);
    let edges: Vec<usize> = (0..=bands)
        .map(|b| {
            let hz = lo * (hi / lo).powf(b as f64 / bands as f64);
            ((hz / bin_hz).round() as usize).clamp(1, frame / 2)
        })
        .collect();
    let n_frames = if samples.len() >= frame { (samples.len() - frame) / hop + 1 } else { 0 };
    let mut out = Vec::with_capacity(n_frames * bands);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    for f in 0..n_frames {
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(samples[f * hop + i] as f64 * hann[i], 0.0);
        }
        fft.process(&mut buf);
        for b in 0..bands {
            let (a, z) = (edges[b], edges[b + 1].max(edges[b] + 1));
            let energy: f64 = buf[a..z].iter().map(|c| c.norm()).sum::<f64>() / (z - a) as f64;
            out.push((1.0 + energy).ln());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub frame: usize,
    pub hop: usize,
    pub bands: usize,
    pub conv_channels: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            frame: 512,
            hop: 256,
            bands: 32,
            conv_channels: 16,
            embed_dim: 16,
            num_classes: 5,
        }
    }
}

/// Convolutional-recurrent genre model; the embedding is the time-averaged
/// recurrent state.
#[derive(Debug)]
pub struct MusicEmbedder {
    config: EmbedderConfig,
    vars: VarStore,
    conv: Conv1d,
    gru: Gru,
    head: Linear,
}

impl MusicEmbedder {
    pub fn new(config: EmbedderConfig, seed: u64) -> Result<Self> {
        if config.frame < 2 || config.hop == 0 || config.bands == 0 || config.embed_dim == 0 || config.num_classes < 2
        {
            return Err(Error::config("invalid music embedder configuration"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = VarStore::new();
        let conv = Conv1d::new(&mut vars, "embedder.conv", config.bands, config.conv_channels, 3, 2, 1, &mut rng);
        let gru = Gru::new(&mut vars, "embedder.gru", config.conv_channels, config.embed_dim, &mut rng);
        let head = Linear::new(&mut vars, "embedder.head", config.embed_dim, config.num_classes, &mut rng);
        Ok(MusicEmbedder {
            config,
            vars,
            conv,
            gru,
            head,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    pub fn vars(&self) -> &VarStore {
        &self.vars
    }

    fn features(&self, clips: &[&AudioClip]) -> Result<Tensor> {
        let c = &self.config;
        let mut data = Vec::new();
        let mut frames = None;
        for clip in clips {
            let spec = log_band_spectrogram(&clip.samples, c.frame, c.hop, c.bands);
            let n = spec.len() / c.bands;
            if n == 0 {
                return Err(Error::InsufficientAudio {
                    needed: c.frame,
                    available: clip.samples.len(),
                });
            }
            if *frames.get_or_insert(n) != n {
                return Err(Error::shape("clips in one embedding batch must have equal length"));
            }
            data.extend(spec);
        }
        let n = frames.ok_or_else(|| Error::shape("empty clip batch"))?;
        Ok(Tensor::from_vec(data, &[clips.len(), n, c.bands]))
    }

    fn embed_tensor(&self, clips: &[&AudioClip]) -> Result<Tensor> {
        let h = self.conv.forward(&self.features(clips)?, 1).relu();
        Ok(self.gru.forward(&h, false).mean_axis(1, false))
    }

    /// Embedding `F = E_m(music)`.
    pub fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        Ok(no_grad(|| self.embed_tensor(&[clip]))?.to_vec())
    }

    fn logits(&self, clips: &[&AudioClip]) -> Result<Tensor> {
        Ok(self.head.forward(&self.embed_tensor(clips)?))
    }

    pub fn classify(&self, clip: &AudioClip) -> Result<usize> {
        Ok(argmax_rows(&no_grad(|| self.logits(&[clip]))?)[0])
    }

    /// Genre-classification training on labelled clips of equal length.
    pub fn train(&self, clips: &[(&AudioClip, usize)], steps: usize, batch: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
        let mut distinct: Vec<usize> = clips.iter().map(|c| c.1).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 || distinct.iter().any(|&l| l >= self.config.num_classes) {
            return Err(Error::DegenerateDataset("embedder needs at least 2 valid classes".into()));
        }
        let params = self.vars.params().to_vec();
        let mut opt = Adam::new(&params, lr);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let picks: Vec<&(&AudioClip, usize)> = (0..batch.max(1)).map(|_| clips.choose(&mut rng).unwrap()).collect();
            let audio: Vec<&AudioClip> = picks.iter().map(|p| p.0).collect();
            let labels: Vec<usize> = picks.iter().map(|p| p.1).collect();
            let loss = cross_entropy(&self.logits(&audio)?, &labels);
            if !loss.item().is_finite() {
                return Err(Error::NonFinite { term: "embedder_cross_entropy".into() });
            }
            let grads = grad(&loss, &self.vars.tensors(), false);
            opt.step(&params, &grads);
            losses.push(loss.item());
        }
        Ok(losses)
    }
}

// ---------------------------------------------------------------------------
// K-means

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances of each point to its cluster mean.
pub fn inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
        .collect();
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &means[l])).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> KMeans {
    // k-means++ seeding
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..points.len())
        } else {
            let mut r = rng.gen_range(0.0..total);
            d.iter()
                .position(|&w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(points.len() - 1)
        };
        centroids.push(points[next].clone());
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let new: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if new == labels {
            break;
        }
        labels = new;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    hartigan(points, &mut labels, &mut centroids);
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centroids[l])).sum();
    KMeans {
        labels,
        centroids,
        inertia,
    }
}

/// Single-point moves that lower the inertia, applied until none is left.
/// Escapes Lloyd fixed points where a boundary point sits closer to its own
/// centroid but would still shrink the total when moved.
fn hartigan(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    loop {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = labels[i];
            if sizes[a] < 2 {
                continue;
            }
            let na = sizes[a] as f64;
            let leave = na / (na - 1.0) * sq_dist(p, &centroids[a]);
            let target = (0..k)
                .filter(|&b| b != a)
                .map(|b| {
                    let nb = sizes[b] as f64;
                    (b, nb / (nb + 1.0) * sq_dist(p, &centroids[b]))
                })
                .min_by(|x, y| x.1.total_cmp(&y.1));
            let Some((b, join)) = target else { continue };
            if join < leave - 1e-12 {
                let (na, nb) = (sizes[a] as f64, sizes[b] as f64);
                for (j, &v) in p.iter().enumerate() {
                    centroids[a][j] = (centroids[a][j] * na - v) / (na - 1.0);
                    centroids[b][j] = (centroids[b][j] * nb + v) / (nb + 1.0);
                }
                sizes[a] -= 1;
                sizes[b] += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    // Recompute the means exactly after the incremental updates.
    for (c, centroid) in centroids.iter_mut().enumerate() {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels.iter()).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
        if members.is_empty() {
            continue;
        }
        for (j, v) in centroid.iter_mut().enumerate() {
            *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Lloyd's algorithm with k-means++ seeding, best inertia over `restarts`.
/// Points are processed in a canonical order and cluster ids are assigned by
/// sorting centroids, so the result does not depend on input order.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::config(format!("K-means needs at least K = {k} > 0 points, got {}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("points of unequal dimension"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]));
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(&sorted, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let mut ids: Vec<usize> = (0..k).collect();
    ids.sort_by(|&a, &b| lex_cmp(&best.centroids[a], &best.centroids[b]));
    let mut remap = vec![0; k];
    for (new, &old) in ids.iter().enumerate() {
        remap[old] = new;
    }
    let mut labels = vec![0; points.len()];
    for (pos, &orig) in order.iter().enumerate() {
        labels[orig] = remap[best.labels[pos]];
    }
    Ok(KMeans {
        labels,
        centroids: ids.iter().map(|&i| best.centroids[i].clone()).collect(),
        inertia: best.inertia,
    })
}

/// Mean silhouette coefficient; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return 0.0;
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sum[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
                count[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if count[own] == 0 {
            continue;
        }
        let a = sum[own] / count[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b).max(f64::MIN_POSITIVE);
        }
    }
    total / n as f64
}

// ---------------------------------------------------------------------------
// Dictionary

#[derive(Debug, Clone, PartialEq)]
pub struct DictEntry {
    pub embedding: Vec<f64>,
    pub sequence: SkeletonSequence,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDictionary {
    pub k: usize,
    pub entries: Vec<DictEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    embedding: Vec<f64>,
    label: usize,
    sequence: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    entries: usize,
    embedding_dim: usize,
    k: usize,
    items: Vec<ManifestEntry>,
}

impl EmbeddingDictionary {
    /// Embeds every clip, clusters the embeddings into `k` groups and stores
    /// each pair with its cluster label.
    pub fn build(pairs: &[(&AudioClip, &SkeletonSequence)], embedder: &MusicEmbedder, k: usize, seed: u64) -> Result<Self> {
        if pairs.len() < k || k == 0 {
            return Err(Error::config(format!("{} pairs cannot form {k} clusters", pairs.len())));
        }
        let embeddings: Vec<Vec<f64>> = pairs.iter().map(|(m, _)| embedder.embed(m)).collect::<Result<_>>()?;
        let km = kmeans(&embeddings, k, 10, seed)?;
        let entries = embeddings
            .into_iter()
            .zip(pairs)
            .zip(km.labels)
            .map(|((embedding, (_, seq)), label)| DictEntry {
                embedding,
                sequence: (*seq).clone(),
                label,
            })
            .collect();
        Ok(EmbeddingDictionary { k, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the entry whose embedding is closest (Euclidean) to `query`;
    /// ties go to the lowest index.
    pub fn nearest(&self, query: &[f64]) -> Result<usize> {
        if self.entries.is_empty() {
            return Err(Error::State("embedding dictionary is empty".into()));
        }
        Ok(nearest(query, &self.entries.iter().map(|e| e.embedding.clone()).collect::<Vec<_>>()).0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut items = Vec::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            let name = format!("entry_{i:05}.sksq");
            write_sequence(&e.sequence, &dir.join(&name))?;
            items.push(ManifestEntry {
                embedding: e.embedding.clone(),
                label: e.label,
                sequence: name,
            });
        }
        let manifest = Manifest {
            entries: self.entries.len(),
            embedding_dim: self.entries.first().map_or(0, |e| e.embedding.len()),
            k: self.k,
            items,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.items.len() != manifest.entries {
            return Err(Error::Parse("dictionary manifest entry count mismatch".into()));
        }
        let entries = manifest
            .items
            .into_iter()
            .map(|it| {
                if it.embedding.len() != manifest.embedding_dim || it.label >= manifest.k.max(1) {
                    return Err(Error::Parse("dictionary entry disagrees with the manifest".into()));
                }
                Ok(DictEntry {
                    embedding: it.embedding,
                    sequence: read_sequence(&dir.join(&it.sequence))?,
                    label: it.label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(EmbeddingDictionary { k: manifest.k, entries })
    }
}

// ---------------------------------------------------------------------------
// Pose metric network

pub const TRIPLET_MARGIN: f64 = 0.2;
pub const MMD_WEIGHT: f64 = 1.0;

#[derive(Debug)]
pub struct MetricNet {
    vars: VarStore,
    backbone: PoseBackbone,
    config: BackboneConfig,
}

/// Row-wise L2 normalisation of `[B, D]`.
fn l2_normalize(x: &Tensor) -> Tensor {
    let norm = x.square().sum_axis(1, true).add_scalar(1e-12).sqrt();
    x.div(&norm)
}

/// Pairwise squared distances between the rows of `a` `[N, D]` and `b` `[M, D]`.
pub fn pairwise_sq_dist(a: &Tensor, b: &Tensor) -> Tensor {
    let an = a.square().sum_axis(1, true);
    let bn = b.square().sum_axis(1, true).t();
    an.add(&bn).sub(&a.matmul_t(b, false, true).mul_scalar(2.0))
}

/// `mean max(0, ‖a-p‖² - ‖a-n‖² + margin)` over rows.
pub fn triplet_loss(a: &Tensor, p: &Tensor, n: &Tensor, margin: f64) -> Tensor {
    let dp = a.sub(p).square().sum_axis(1, false);
    let dn = a.sub(n).square().sum_axis(1, false);
    dp.sub(&dn).add_scalar(margin).relu().mean()
}

/// Biased MMD² between row sets under a Gaussian kernel with bandwidth
/// `sigma` (a scalar tensor, so it may carry gradient).
pub fn mmd(x: &Tensor, y: &Tensor, sigma: &Tensor) -> Tensor {
    let gamma = Tensor::scalar(-0.5).div(&sigma.square());
    let k = |a: &Tensor, b: &Tensor| pairwise_sq_dist(a, b).mul(&gamma).exp().mean();
    k(x, x).add(&k(y, y)).sub(&k(x, y).mul_scalar(2.0))
}

/// Median pairwise Euclidean distance between distinct rows of `x`, kept in
/// the graph: the median pair is chosen on values, its distance stays
/// differentiable. Uniformly shrinking the embedding therefore cannot lower
/// the MMD term.
pub fn median_distance(x: &Tensor) -> Tensor {
    let n = x.dim(0);
    let d = pairwise_sq_dist(x, x);
    let values = d.data();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| values[a.0 * n + a.1].total_cmp(&values[b.0 * n + b.1]));
    match pairs.get(pairs.len() / 2) {
        Some(&(i, j)) if values[i * n + j] > 1e-12 => d.select(0, i).select(0, j).clamp(1e-12, f64::INFINITY).sqrt(),
        _ => Tensor::scalar(1.0),
    }
}

impl MetricNet {
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = VarStore::new();
        let backbone = PoseBackbone::new(&mut vars, "metric", &config, &mut rng)?;
        he_rescale(&vars, "metric.");
        Ok(MetricNet { vars, backbone, config })
    }

    pub fn full() -> Result<Self> {
        Self::new(BackboneConfig { out_dim: 128, ..BackboneConfig::full() }, 0)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn vars(&self) -> &VarStore {
        &self.vars
    }

    fn forward(&self, poses: &Tensor) -> Result<Tensor> {
        Ok(l2_normalize(&self.backbone.forward(poses)?.feature))
    }

    /// Unit-length metric embedding `S` of one sequence.
    pub fn embed(&self, seq: &SkeletonSequence) -> Result<Vec<f64>> {
        Ok(no_grad(|| self.forward(&pose_tensor(&[seq])?))?.to_vec())
    }

    /// `‖S(a) - S(b)‖²`.
    pub fn distance(&self, a: &SkeletonSequence, b: &SkeletonSequence) -> Result<f64> {
        Ok(sq_dist(&self.embed(a)?, &self.embed(b)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub margin: f64,
    pub mmd_weight: f64,
    /// Half-width of the uniform coordinate noise added to every training
    /// sequence, so near-copies of a dance embed near it.
    pub noise: f64,
    /// Triplet-only steps before the MMD term is switched on.
    pub warmup: usize,
    pub seed: u64,
}

impl Default for MetricTrainConfig {
    fn default() -> Self {
        MetricTrainConfig {
            steps: 150,
            batch: 8,
            lr: 0.002,
            margin: TRIPLET_MARGIN,
            mmd_weight: MMD_WEIGHT,
            noise: 0.03,
            warmup: 50,
            seed: 0,
        }
    }
}

/// Trains the metric network on cluster-labelled dictionary sequences with
/// triplet loss plus MMD between anchor and positive embeddings.
pub fn train_pose_metric(net: &MetricNet, dict: &EmbeddingDictionary, cfg: &MetricTrainConfig) -> Result<Vec<f64>> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in dict.entries.iter().enumerate() {
        members.entry(e.label).or_default().push(i);
    }
    let usable: Vec<usize> = members.iter().filter(|(_, m)| m.len() >= 2).map(|(&l, _)| l).collect();
    if members.len() < 2 || usable.is_empty() {
        return Err(Error::DegenerateDataset(format!(
            "metric training needs 2 clusters and one with 2 members; found {} clusters",
            members.len()
        )));
    }
    let t = dict.entries[0].sequence.num_frames();
    if dict.entries.iter().any(|e| e.sequence.num_frames() != t) {
        return Err(Error::shape("metric training expects equal-length sequences"));
    }
    let params = net.vars.params().to_vec();
    let mut opt = Adam::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let seq = |i: usize| &dict.entries[i].sequence;
    for step in 0..cfg.steps {
        let (mut a, mut p, mut n) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..cfg.batch.max(2) {
            let label = *usable.choose(&mut rng).unwrap();
            let group = &members[&label];
            let pair: Vec<&usize> = group.choose_multiple(&mut rng, 2).collect();
            let others: Vec<usize> = members.iter().filter(|(&l, _)| l != label).flat_map(|(_, m)| m.clone()).collect();
            a.push(seq(*pair[0]));
            p.push(seq(*pair[1]));
            n.push(seq(*others.choose(&mut rng).unwrap()));
        }
        let mut jitter = |group: &[&SkeletonSequence]| -> Result<Tensor> {
            let x = pose_tensor(group)?;
            Ok(if cfg.noise > 0.0 { x.add(&uniform(&x.shape(), cfg.noise, &mut rng)) } else { x })
        };
        let ea = net.forward(&jitter(&a)?)?;
        let ep = net.forward(&jitter(&p)?)?;
        let en = net.forward(&jitter(&n)?)?;
        let mut loss = triplet_loss(&ea, &ep, &en, cfg.margin);
        if step >= cfg.warmup {
            let sigma = median_distance(&Tensor::cat(&[ea.clone(), ep.clone(), en.clone()], 0));
            loss = loss.add(&mmd(&ea, &ep, &sigma).mul_scalar(cfg.mmd_weight));
        }
        if !loss.item().is_finite() {
            return Err(Error::NonFinite { term: "metric_loss".into() });
        }
        let grads = grad(&loss, &net.vars.tensors(), false);
        opt.step(&params, &grads);
        losses.push(loss.item());
    }
    Ok(losses)
}

// ---------------------------------------------------------------------------
// Scoring

/// Result of the two-step metric for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryScore {
    pub score: f64,
    /// Dictionary index of the retrieved neighbour.
    pub neighbour: usize,
}

/// Step 1: retrieve the neighbour of `music` in the dictionary. Step 2:
/// compare the metric embeddings of `generated` and the neighbour's dance.
pub fn score_generated(
    music: &AudioClip,
    generated: &SkeletonSequence,
    dict: &EmbeddingDictionary,
    embedder: &MusicEmbedder,
    metric: &MetricNet,
) -> Result<QueryScore> {
    let neighbour = dict.nearest(&embedder.embed(music)?)?;
    let score = metric.distance(generated, &dict.entries[neighbour].sequence)?;
    Ok(QueryScore { score, neighbour })
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// One random-frame trial: `frames` training frames drawn independently.
pub fn rand_frame_trial(
    dict: &EmbeddingDictionary,
    metric: &MetricNet,
    target: &SkeletonSequence,
    frames: usize,
    seed: u64,
    trial: u64,
) -> Result<f64> {
    if dict.is_empty() {
        return Err(Error::State("embedding dictionary is empty".into()));
    }
    let mut rng = trial_rng(seed, trial);
    let mut coords = Vec::with_capacity(frames * FRAME_WIDTH);
    for _ in 0..frames {
        let e = &dict.entries[rng.gen_range(0..dict.len())].sequence;
        coords.extend_from_slice(e.frame(rng.gen_range(0..e.num_frames())));
    }
    metric.distance(&SkeletonSequence::new(coords, target.fps())?, target)
}

/// One random-sequence trial: a whole training sequence drawn uniformly.
pub fn rand_seq_trial(
    dict: &EmbeddingDictionary,
    metric: &MetricNet,
    target: &SkeletonSequence,
    seed: u64,
    trial: u64,
) -> Result<f64> {
    if dict.is_empty() {
        return Err(Error::State("embedding dictionary is empty".into()));
    }
    let mut rng = trial_rng(seed, trial);
    metric.distance(&dict.entries[rng.gen_range(0..dict.len())].sequence, target)
}

/// Mean of `trials` random-frame trials.
pub fn rand_frame_baseline(
    dict: &EmbeddingDictionary,
    metric: &MetricNet,
    target: &SkeletonSequence,
    frames: usize,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let scores = (0..trials as u64)
        .map(|t| rand_frame_trial(dict, metric, target, frames, seed, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / trials.max(1) as f64)
}

/// Mean of `trials` random-sequence trials.
pub fn rand_seq_baseline(
    dict: &EmbeddingDictionary,
    metric: &MetricNet,
    target: &SkeletonSequence,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let scores = (0..trials as u64)
        .map(|t| rand_seq_trial(dict, metric, target, seed, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / trials.max(1) as f64)
}

// ---------------------------------------------------------------------------
// End-to-end evaluation

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSetup {
    pub embedder: EmbedderConfig,
    pub embedder_steps: usize,
    pub embedder_lr: f64,
    pub clusters: usize,
    pub metric_backbone: BackboneConfig,
    pub metric: MetricTrainConfig,
    pub trials: usize,
    pub seed: u64,
}

impl EvalSetup {
    /// Desk-scale defaults: five clusters, ten baseline trials.
    pub fn desk(seed: u64) -> Self {
        EvalSetup {
            embedder: EmbedderConfig::default(),
            embedder_steps: 100,
            embedder_lr: 0.003,
            clusters: 5,
            metric_backbone: BackboneConfig::desk(128),
            metric: MetricTrainConfig {
                seed,
                ..MetricTrainConfig::default()
            },
            trials: 10,
            seed,
        }
    }
}

/// Trained embedder, clustered dictionary and metric network.
#[derive(Debug)]
pub struct Evaluator {
    pub embedder: MusicEmbedder,
    pub dictionary: EmbeddingDictionary,
    pub metric: MetricNet,
    pub setup: EvalSetup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub neighbour: usize,
    pub model: f64,
    pub rand_frame: f64,
    pub rand_seq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub queries: Vec<QueryResult>,
    pub model: f64,
    pub rand_frame: f64,
    pub rand_seq: f64,
}

impl EvalSummary {
    /// Model beats both baselines on average.
    pub fn ordering_holds(&self) -> bool {
        self.model < self.rand_frame && self.model < self.rand_seq
    }
}

impl Evaluator {
    /// Trains the music embedder on `genre` (labelled clips), builds the
    /// dictionary from the training `pairs` and fits the metric network on its
    /// cluster labels.
    pub fn build(pairs: &[(&AudioClip, &SkeletonSequence)], genre: &[(&AudioClip, usize)], setup: EvalSetup) -> Result<Self> {
        let embedder = MusicEmbedder::new(setup.embedder.clone(), setup.seed)?;
        embedder.train(genre, setup.embedder_steps, 8, setup.embedder_lr, setup.seed)?;
        let dictionary = EmbeddingDictionary::build(pairs, &embedder, setup.clusters, setup.seed)?;
        let metric = MetricNet::new(setup.metric_backbone.clone(), setup.seed)?;
        train_pose_metric(&metric, &dictionary, &setup.metric)?;
        Ok(Evaluator {
            embedder,
            dictionary,
            metric,
            setup,
        })
    }

    /// Scores `(music, generated dance)` queries against the model and both
    /// baselines; baseline trials are seeded per query.
    pub fn evaluate(&self, queries: &[(&AudioClip, &SkeletonSequence)]) -> Result<EvalSummary> {
        if queries.is_empty() {
            return Err(Error::config("no evaluation queries"));
        }
        let mut results = Vec::with_capacity(queries.len());
        for (i, (music, generated)) in queries.iter().enumerate() {
            let q = score_generated(music, generated, &self.dictionary, &self.embedder, &self.metric)?;
            let target = &self.dictionary.entries[q.neighbour].sequence;
            let seed = self.setup.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            results.push(QueryResult {
                neighbour: q.neighbour,
                model: q.score,
                rand_frame: rand_frame_baseline(
                    &self.dictionary,
                    &self.metric,
                    target,
                    generated.num_frames(),
                    self.setup.trials,
                    seed,
                )?,
                rand_seq: rand_seq_baseline(&self.dictionary, &self.metric, target, self.setup.trials, seed)?,
            });
        }
        let mean = |f: fn(&QueryResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
        Ok(EvalSummary {
            model: mean(|r| r.model),
            rand_frame: mean(|r| r.rand_frame),
            rand_seq: mean(|r| r.rand_seq),
            queries: results,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_points(seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 5.0 };
                vec![c + rng.gen_range(-0.5..0.5), c + rng.gen_range(-0.5..0.5)]
            })
            .collect()
    }

    #[test]
    fn spectrogram_peaks_in_the_tone_band() {
        let tone: Vec<f32> = (0..4096).map(|i| (std::f64::consts::TAU * 1000.0 * i as f64 / 16000.0).sin() as f32).collect();
        let spec = log_band_spectrogram(&tone, 512, 256, 32);
        assert_eq!(spec.len(), 15 * 32);
        let row = &spec[..32];
        let peak = row.iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
        let hz = |b: f64| 60.0 * (8000.0f64 / 60.0).powf(b / 32.0);
        assert!(hz(peak as f64) <= 1000.0 * 1.05 && hz(peak as f64 + 1.0) >= 1000.0 * 0.95, "band {peak}");
    }

    #[test]
    fn kmeans_separates_blobs_and_ignores_order() {
        let pts = blob_points(1);
        let km = kmeans(&pts, 2, 10, 0).unwrap();
        for (i, &l) in km.labels.iter().enumerate() {
            assert_eq!(l, km.labels[i % 2]);
        }
        assert_ne!(km.labels[0], km.labels[1]);
        let mut rev = pts.clone();
        rev.reverse();
        let kr = kmeans(&rev, 2, 10, 0).unwrap();
        let back: Vec<usize> = kr.labels.iter().rev().copied().collect();
        assert_eq!(back, km.labels);
        assert_eq!(kmeans(&pts, 1, 3, 0).unwrap().labels, vec![0; 10]);
        assert!(kmeans(&pts[..1], 2, 1, 0).is_err());
    }

    #[test]
    fn silhouette_prefers_the_true_split() {
        let pts = blob_points(2);
        let good: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let bad: Vec<usize> = (0..10).map(|i| usize::from(i < 5)).collect();
        assert!(silhouette(&pts, &good) > 0.8);
        assert!(silhouette(&pts, &good) > silhouette(&pts, &bad));
    }

    #[test]
    fn triplet_loss_is_zero_when_margin_holds() {
        let a = Tensor::from_vec(vec![0.0, 0.0, 1.0, 1.0], &[2, 2]);
        let p = Tensor::from_vec(vec![0.1, 0.0, 1.0, 1.1], &[2, 2]);
        let n = Tensor::from_vec(vec![3.0, 0.0, -2.0, 1.0], &[2, 2]);
        assert_eq!(triplet_loss(&a, &p, &n, 0.2).item(), 0.0);
        assert!(triplet_loss(&a, &n, &p, 0.2).item() > 0.0);
    }

    #[test]
    fn mmd_of_identical_sets_is_zero() {
        let x = Tensor::from_vec(vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.5], &[3, 2]);
        let one = Tensor::scalar(1.0);
        assert!(mmd(&x, &x, &one).item().abs() < 1e-12);
        let y = x.add_scalar(2.0);
        assert!(mmd(&x, &y, &one).item() > 0.0);
    }

    #[test]
    fn baselines_average_their_single_trials() {
        let pairs = crate::synth::fixture_set(2, 2, 6, 3).unwrap();
        let dict = EmbeddingDictionary {
            k: 2,
            entries: pairs
                .iter()
                .map(|p| DictEntry {
                    embedding: vec![p.style as f64],
                    sequence: p.pose.clone(),
                    label: p.style,
                })
                .collect(),
        };
        let metric = MetricNet::new(BackboneConfig::desk(16), 1).unwrap();
        let target = &pairs[0].pose;
        let frames: Vec<f64> = (0..4).map(|t| rand_frame_trial(&dict, &metric, target, 6, 7, t).unwrap()).collect();
        let seqs: Vec<f64> = (0..4).map(|t| rand_seq_trial(&dict, &metric, target, 7, t).unwrap()).collect();
        assert_eq!(rand_frame_baseline(&dict, &metric, target, 6, 4, 7).unwrap(), frames.iter().sum::<f64>() / 4.0);
        assert_eq!(rand_seq_baseline(&dict, &metric, target, 4, 7).unwrap(), seqs.iter().sum::<f64>() / 4.0);
        assert!(frames.iter().chain(&seqs).all(|&d| (0.0..=4.0 + 1e-9).contains(&d)));
    }

    #[test]
    fn dictionary_persists_and_retrieves_exact_matches() {
        let pairs = crate::synth::fixture_set(2, 2, 6, 4).unwrap();
        let dict = EmbeddingDictionary {
            k: 2,
            entries: pairs
                .iter()
                .enumerate()
                .map(|(i, p)| DictEntry {
                    embedding: vec![i as f64, -(i as f64)],
                    sequence: p.pose.clone(),
                    label: p.style,
                })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        dict.save(dir.path()).unwrap();
        let back = EmbeddingDictionary::load(dir.path()).unwrap();
        assert_eq!(back, dict);
        for (i, e) in dict.entries.iter().enumerate() {
            assert_eq!(back.nearest(&e.embedding).unwrap(), i);
        }
    }

    #[test]
    fn metric_training_needs_two_clusters() {
        let pairs = crate::synth::fixture_set(1, 3, 6, 4).unwrap();
        let dict = EmbeddingDictionary {
            k: 1,
            entries: pairs
                .iter()
                .map(|p| DictEntry {
                    embedding: vec![0.0],
                    sequence: p.pose.clone(),
                    label: 0,
                })
                .collect(),
        };
        let metric = MetricNet::new(BackboneConfig::desk(16), 1).unwrap();
        assert!(matches!(
            train_pose_metric(&metric, &dict, &MetricTrainConfig::default()),
            Err(Error::DegenerateDataset(_))
        ));
    }

    #[test]
    fn empty_dictionary_is_a_state_error() {
        let d = EmbeddingDictionary { k: 1, entries: vec![] };
        assert!(matches!(d.nearest(&[0.0]), Err(Error::State(_))));
    }
}
