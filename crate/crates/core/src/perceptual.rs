//! Spatial-temporal graph convolutional network used as the frozen feature
//! extractor of the pose perceptual loss, and its classification pretraining.

use std::collections::BTreeMap;

use autograd::{grad, no_grad, Adam, Tensor, VarStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::hex_sha256;
use crate::error::{Error, Result};
use crate::generator::pose_tensor;
use crate::nn::{he_rescale, Conv1d, Linear};
use crate::skeleton::coco::{hop_distances, NECK};
use crate::skeleton::{SkeletonSequence, FRAME_WIDTH, NUM_JOINTS};

pub const NUM_PARTITIONS: usize = 3;

/// Spatial-configuration partitions (root, centripetal, centrifugal) of the
/// one-hop neighbourhood, each column-normalised by node degree. Returned
/// as three `V × V` matrices `A_k[v, w]` mapping source `v` to target `w`.
pub fn partition_matrices() -> [Vec<f64>; NUM_PARTITIONS] {
    let n = NUM_JOINTS;
    let hop = hop_distances();
    let mut deg = vec![0.0; n];
    for w in 0..n {
        deg[w] = (0..n).filter(|&v| hop[v * n + w] <= 1).count() as f64;
    }
    let mut a = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    for w in 0..n {
        for v in 0..n {
            let d = hop[v * n + w];
            if d > 1 {
                continue;
            }
            let value = 1.0 / deg[w];
            let (dv, dw) = (hop[v * n + NECK], hop[w * n + NECK]);
            let k = if d == 0 {
                0
            } else if dv <= dw {
                1
            } else {
                2
            };
            a[k][v * n + w] = value;
        }
    }
    a
}

fn stacked_partitions() -> Tensor {
    let n = NUM_JOINTS;
    let parts = partition_matrices();
    let mut data = Vec::with_capacity(NUM_PARTITIONS * n * n);
    for p in &parts {
        data.extend_from_slice(p);
    }
    Tensor::from_vec(data, &[NUM_PARTITIONS * n, n])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StGcnConfig {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub temporal_kernel: usize,
    pub num_classes: usize,
}

impl StGcnConfig {
    pub fn full(num_classes: usize) -> Self {
        StGcnConfig {
            channels: vec![64, 64, 64, 128, 128, 128, 256, 256, 256],
            strides: vec![1, 1, 1, 2, 1, 1, 2, 1, 1],
            temporal_kernel: 9,
            num_classes,
        }
    }

    pub fn desk(num_classes: usize) -> Self {
        StGcnConfig {
            channels: vec![8, 8, 8, 16, 16, 16, 32, 32, 32],
            ..Self::full(num_classes)
        }
    }

    pub fn num_taps(&self) -> usize {
        self.channels.len()
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty()
            || self.channels.len() != self.strides.len()
            || self.channels.contains(&0)
            || self.strides.contains(&0)
            || self.temporal_kernel % 2 == 0
        {
            return Err(Error::config("ST-GCN needs matching non-empty channel/stride plans and an odd kernel"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("ST-GCN head needs at least 2 classes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    gcn: Linear,
    tcn: Conv1d,
    residual: Residual,
    out_ch: usize,
}

#[derive(Debug, Clone)]
enum Residual {
    None,
    Identity,
    Project(Conv1d),
}

impl Block {
    /// `[B, T, V, C_in]` → `[B, T', V, C_out]`.
    fn forward(&self, x: &Tensor, a: &Tensor) -> Tensor {
        let (b, t, v) = (x.dim(0), x.dim(1), x.dim(2));
        let c = self.out_ch;
        let y = self
            .gcn
            .forward(x)
            .reshape(&[b, t, v, NUM_PARTITIONS, c])
            .permute(&[0, 1, 4, 3, 2])
            .reshape(&[b * t * c, NUM_PARTITIONS * v])
            .matmul(a)
            .reshape(&[b, t, c, v])
            .permute(&[0, 1, 3, 2])
            .relu();
        let y = self.tcn.forward(&y, 1);
        let y = match &self.residual {
            Residual::None => y,
            Residual::Identity => y.add(x),
            Residual::Project(conv) => y.add(&conv.forward(x, 1)),
        };
        y.relu()
    }
}

/// Nine-block ST-GCN with a classification head; every block output is a
/// perceptual tap.
#[derive(Debug, Clone)]
pub struct StGcn {
    config: StGcnConfig,
    vars: VarStore,
    blocks: Vec<Block>,
    head: Linear,
    partitions: Tensor,
}

impl StGcn {
    pub fn new(config: StGcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = VarStore::new();
        let mut in_ch = 2;
        let k = config.temporal_kernel;
        let mut blocks = Vec::new();
        for (i, (&c, &s)) in config.channels.iter().zip(&config.strides).enumerate() {
            let name = format!("stgcn.block{}", i + 1);
            let gcn = Linear::new(&mut vars, &format!("{name}.gcn"), in_ch, NUM_PARTITIONS * c, &mut rng);
            let tcn = Conv1d::new(&mut vars, &format!("{name}.tcn"), c, c, k, s, k / 2, &mut rng);
            let residual = if i == 0 {
                Residual::None
            } else if in_ch == c && s == 1 {
                Residual::Identity
            } else {
                Residual::Project(Conv1d::new(&mut vars, &format!("{name}.residual"), in_ch, c, 1, s, 0, &mut rng))
            };
            blocks.push(Block {
                gcn,
                tcn,
                residual,
                out_ch: c,
            });
            in_ch = c;
        }
        let head = Linear::new(&mut vars, "stgcn.head", in_ch, config.num_classes, &mut rng);
        he_rescale(&vars, "stgcn.block");
        Ok(StGcn {
            config,
            vars,
            blocks,
            head,
            partitions: stacked_partitions(),
        })
    }

    pub fn config(&self) -> &StGcnConfig {
        &self.config
    }

    pub fn vars(&self) -> &VarStore {
        &self.vars
    }

    /// Tap-point names in order `l = 1..9`.
    pub fn tap_names(&self) -> Vec<String> {
        (1..=self.blocks.len()).map(|i| format!("stgcn.block{i}")).collect()
    }

    pub fn num_taps(&self) -> usize {
        self.blocks.len()
    }

    /// Stops gradients into the network's own parameters.
    pub fn freeze(&self) {
        self.vars.freeze();
    }

    pub fn unfreeze(&self) {
        self.vars.unfreeze();
    }

    fn check(pose: &Tensor) -> Result<()> {
        if pose.ndim() != 3 || pose.dim(2) != FRAME_WIDTH || pose.dim(1) == 0 {
            return Err(Error::shape(format!(
                "pose must be [B, T >= 1, {FRAME_WIDTH}], got {:?}",
                pose.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, pose: &Tensor) -> Result<Vec<Tensor>> {
        Self::check(pose)?;
        let (b, t) = (pose.dim(0), pose.dim(1));
        let mut h = pose.reshape(&[b, t, NUM_JOINTS, 2]);
        let mut taps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = block.forward(&h, &self.partitions);
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// Block outputs `Φ_1 … Φ_9` for `[B, T, 36]` poses.
    pub fn activations(&self, pose: &Tensor) -> Result<Vec<Tensor>> {
        self.run(pose)
    }

    pub fn extract_activations(&self, seq: &SkeletonSequence) -> Result<Vec<Tensor>> {
        no_grad(|| self.activations(&pose_tensor(&[seq])?))
    }

    /// Class logits `[B, classes]`.
    pub fn logits(&self, pose: &Tensor) -> Result<Tensor> {
        let last = self.run(pose)?.pop().expect("at least one block");
        let (b, c) = (last.dim(0), last.dim(3));
        let pooled = last.reshape(&[b, last.numel() / (b * c), c]).mean_axis(1, false);
        Ok(self.head.forward(&pooled))
    }

    /// Weights in the shared checkpoint format. The config text holds the
    /// layout and a manifest of the tap points in order.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let config_text = format!(
            "taps = {}\nstgcn = {}\n",
            self.tap_names().join(","),
            serde_json::to_string(&self.config)?
        );
        let mut groups = BTreeMap::new();
        groups.insert("phi".to_string(), self.vars.snapshot());
        Ok(Checkpoint {
            config_hash: hex_sha256(&config_text),
            config_text,
            epoch: 0,
            step: 0,
            groups,
            optimizers: BTreeMap::new(),
        })
    }

    /// Frozen network from [`StGcn::to_checkpoint`] output.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let json = ckpt
            .config_text
            .lines()
            .find_map(|l| l.strip_prefix("stgcn = "))
            .ok_or_else(|| Error::Parse("perceptual weights lack a network layout".into()))?;
        let net = StGcn::new(serde_json::from_str(json)?, 0)?;
        net.vars.restore(ckpt.group("phi")?).map_err(Error::State)?;
        net.freeze();
        Ok(net)
    }
}

/// Mean cross-entropy of `[B, C]` logits against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Tensor {
    let (b, c) = (logits.dim(0), logits.dim(1));
    let mut onehot = vec![0.0; b * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    logits
        .log_softmax(1)
        .mul(&Tensor::from_vec(onehot, &[b, c]))
        .sum()
        .mul_scalar(-1.0 / b as f64)
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let c = t.dim(t.ndim() - 1);
    t.data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LabeledSequence {
    pub sequence: SkeletonSequence,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 200,
            batch_size: 8,
            lr: 0.002,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Training-batch accuracy after each step.
    pub accuracy: Vec<f64>,
    pub loss: Vec<f64>,
}

pub fn accuracy(net: &StGcn, data: &[LabeledSequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::DegenerateDataset("no sequences to evaluate".into()));
    }
    let mut correct = 0;
    for item in data {
        let logits = no_grad(|| net.logits(&pose_tensor(&[&item.sequence])?))?;
        correct += usize::from(argmax_rows(&logits)[0] == item.label);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains the classifier with cross-entropy. Batches are drawn from one
/// sequence length at a time.
pub fn pretrain(net: &StGcn, data: &[LabeledSequence], cfg: &PretrainConfig) -> Result<PretrainReport> {
    let classes = net.config().num_classes;
    if let Some(bad) = data.iter().find(|d| d.label >= classes) {
        return Err(Error::config(format!("label {} outside {classes} classes", bad.label)));
    }
    let mut distinct: Vec<usize> = data.iter().map(|d| d.label).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateDataset(format!(
            "pretraining needs at least 2 labelled classes, found {}",
            distinct.len()
        )));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::config("batch size and learning rate must be positive"));
    }
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    let mut lens: Vec<usize> = Vec::new();
    for (i, d) in data.iter().enumerate() {
        match lens.iter().position(|&l| l == d.sequence.num_frames()) {
            Some(b) => buckets[b].push(i),
            None => {
                lens.push(d.sequence.num_frames());
                buckets.push(vec![i]);
            }
        }
    }
    net.unfreeze();
    let params = net.vars().params().to_vec();
    let mut opt = Adam::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = PretrainReport {
        accuracy: Vec::with_capacity(cfg.steps),
        loss: Vec::with_capacity(cfg.steps),
    };
    for _ in 0..cfg.steps {
        let bucket = &buckets[rng.gen_range(0..buckets.len())];
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| *bucket.choose(&mut rng).unwrap()).collect();
        let seqs: Vec<&SkeletonSequence> = idx.iter().map(|&i| &data[i].sequence).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data[i].label).collect();
        let logits = net.logits(&pose_tensor(&seqs)?)?;
        let loss = cross_entropy(&logits, &labels);
        if !loss.item().is_finite() {
            return Err(Error::NonFinite { term: "pretrain_cross_entropy".into() });
        }
        let grads = grad(&loss, &net.vars().tensors(), false);
        opt.step(&params, &grads);
        let hits = argmax_rows(&logits).iter().zip(&labels).filter(|(a, b)| a == b).count();
        report.accuracy.push(hits as f64 / labels.len() as f64);
        report.loss.push(loss.item());
        log::debug!("pretrain loss {:.4} acc {:.3}", loss.item(), report.accuracy.last().unwrap());
    }
    net.freeze();
    Ok(report)
}
