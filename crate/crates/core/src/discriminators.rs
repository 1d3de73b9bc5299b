//! The two-stream pose backbone, the local temporal discriminator over pose
//! windows and the global content discriminator fusing music and pose.

use autograd::{Param, Tensor, VarStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{check_music, EncoderConfig};
use crate::nn::{uniform, BiGru, Conv1d, Linear, PieceEncoder, LEAKY_SLOPE};
use crate::skeleton::{default_stride, temporal_difference_values, FRAME_WIDTH, NUM_JOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Per-joint point-level width.
    pub point: usize,
    /// Per-joint temporal conv width.
    pub temporal: usize,
    /// Joint co-occurrence width (joints folded into channels).
    pub cooc: usize,
    /// Widths of the convolutions after the two streams are concatenated.
    pub fused: Vec<usize>,
    pub out_dim: usize,
}

impl BackboneConfig {
    pub fn full() -> Self {
        BackboneConfig {
            point: 32,
            temporal: 64,
            cooc: 128,
            fused: vec![128, 256],
            out_dim: 256,
        }
    }

    pub fn desk(out_dim: usize) -> Self {
        BackboneConfig {
            point: 8,
            temporal: 8,
            cooc: 32,
            fused: vec![32, 64],
            out_dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if [self.point, self.temporal, self.cooc, self.out_dim].contains(&0)
            || self.fused.is_empty()
            || self.fused.contains(&0)
        {
            return Err(Error::config("backbone widths must be positive"));
        }
        Ok(())
    }
}

/// Linear operator taking a `T`-frame signal to its resampled temporal
/// difference; row `t` holds the weights for output frame `t`.
pub fn temporal_difference_matrix(frames: usize) -> Result<Tensor> {
    let mut m = vec![0.0; frames * frames];
    let mut e = vec![0.0; frames];
    for j in 0..frames {
        e[j] = 1.0;
        let col = temporal_difference_values(&e, frames, 1)?;
        for (t, v) in col.into_iter().enumerate() {
            m[t * frames + j] = v;
        }
        e[j] = 0.0;
    }
    Ok(Tensor::from_vec(m, &[frames, frames]))
}

/// Applies a `[T, T]` operator along axis 1 of `[B, T, C]`.
fn apply_time(op: &Tensor, x: &Tensor) -> Tensor {
    let (b, t, c) = (x.dim(0), x.dim(1), x.dim(2));
    op.matmul(&x.permute(&[1, 0, 2]).reshape(&[t, b * c]))
        .reshape(&[t, b, c])
        .permute(&[1, 0, 2])
}

#[derive(Debug, Clone)]
struct Stream {
    point: Linear,
    temporal: Conv1d,
    cooc: Conv1d,
}

impl Stream {
    fn new(vs: &mut VarStore, name: &str, cfg: &BackboneConfig, rng: &mut impl Rng) -> Self {
        Stream {
            point: Linear::new(vs, &format!("{name}.point"), 2, cfg.point, rng),
            temporal: Conv1d::new(vs, &format!("{name}.temporal"), cfg.point, cfg.temporal, 3, 1, 1, rng),
            cooc: Conv1d::new(vs, &format!("{name}.cooc"), NUM_JOINTS * cfg.temporal, cfg.cooc, 3, 1, 1, rng),
        }
    }

    /// `[B, T, 36]` → `[B, T, cooc]`.
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b, t) = (x.dim(0), x.dim(1));
        let h = self.point.forward(&x.reshape(&[b, t, NUM_JOINTS, 2])).leaky_relu(LEAKY_SLOPE);
        let h = self.temporal.forward(&h, 1).leaky_relu(LEAKY_SLOPE);
        let c = h.dim(3);
        self.cooc
            .forward(&h.reshape(&[b, t, NUM_JOINTS * c]), 1)
            .leaky_relu(LEAKY_SLOPE)
    }
}

/// Two-stream HCN-shaped pose encoder: raw coordinates and their temporal
/// difference, fused by channel concatenation.
#[derive(Debug, Clone)]
pub struct PoseBackbone {
    raw: Stream,
    motion: Stream,
    fused: Vec<Conv1d>,
    fc: Linear,
}

/// Backbone output plus the fused feature map it was pooled from.
pub struct BackboneOutput {
    pub feature: Tensor,
    pub fused_map: Tensor,
}

impl PoseBackbone {
    pub fn new(vs: &mut VarStore, name: &str, cfg: &BackboneConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let raw = Stream::new(vs, &format!("{name}.raw"), cfg, rng);
        let motion = Stream::new(vs, &format!("{name}.motion"), cfg, rng);
        let mut in_ch = 2 * cfg.cooc;
        let fused = cfg
            .fused
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv1d::new(vs, &format!("{name}.fused{i}"), in_ch, w, 3, 1, 1, rng);
                in_ch = w;
                c
            })
            .collect();
        let fc = Linear::new(vs, &format!("{name}.fc"), in_ch, cfg.out_dim, rng);
        Ok(PoseBackbone { raw, motion, fused, fc })
    }

    pub fn out_dim(&self) -> usize {
        self.fc.out_dim()
    }

    /// `[B, T, 36]` with `T >= 2` → feature `[B, out_dim]`.
    pub fn forward(&self, pose: &Tensor) -> Result<BackboneOutput> {
        if pose.ndim() != 3 || pose.dim(2) != FRAME_WIDTH {
            return Err(Error::shape(format!("pose must be [B, T, {FRAME_WIDTH}], got {:?}", pose.shape())));
        }
        if pose.dim(1) < 2 {
            return Err(Error::DegenerateInput(format!(
                "pose backbone needs at least 2 frames, got {}",
                pose.dim(1)
            )));
        }
        let diff = apply_time(&temporal_difference_matrix(pose.dim(1))?, pose);
        let mut h = Tensor::cat(&[self.raw.forward(pose), self.motion.forward(&diff)], 2);
        for conv in &self.fused {
            h = conv.forward(&h, 1).leaky_relu(LEAKY_SLOPE);
        }
        let feature = self.fc.forward(&h.mean_axis(1, false));
        Ok(BackboneOutput {
            feature,
            fused_map: h,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub backbone: BackboneConfig,
    pub head_hidden: usize,
    /// Window length `t`.
    pub window_len: usize,
    /// Window count `K`.
    pub window_count: usize,
}

impl LocalConfig {
    pub fn full() -> Self {
        LocalConfig {
            backbone: BackboneConfig {
                point: 16,
                temporal: 32,
                cooc: 64,
                fused: vec![64, 128],
                out_dim: 128,
            },
            head_hidden: 64,
            window_len: 5,
            window_count: 16,
        }
    }

    pub fn desk() -> Self {
        LocalConfig {
            backbone: BackboneConfig::desk(32),
            head_hidden: 16,
            window_len: 5,
            window_count: 16,
        }
    }
}

/// Scores each of `K` short pose windows independently.
#[derive(Debug, Clone)]
pub struct LocalDiscriminator {
    config: LocalConfig,
    vars: VarStore,
    backbone: PoseBackbone,
    hidden: Linear,
    out: Linear,
}

impl LocalDiscriminator {
    pub fn new(config: LocalConfig, seed: u64) -> Result<Self> {
        if config.window_len < 2 || config.window_count == 0 || config.head_hidden == 0 {
            return Err(Error::config("local discriminator needs t >= 2, K >= 1 and a non-empty head"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = VarStore::new();
        let backbone = PoseBackbone::new(&mut vars, "local", &config.backbone, &mut rng)?;
        let hidden = Linear::new(&mut vars, "local.head0", backbone.out_dim(), config.head_hidden, &mut rng);
        let out = Linear::new(&mut vars, "local.head1", config.head_hidden, 1, &mut rng);
        Ok(LocalDiscriminator {
            config,
            vars,
            backbone,
            hidden,
            out,
        })
    }

    pub fn config(&self) -> &LocalConfig {
        &self.config
    }

    pub fn vars(&self) -> &VarStore {
        &self.vars
    }

    /// `[N, t, 36]` windows → `[N]` scores in `(0, 1)`.
    pub fn window_scores(&self, windows: &Tensor) -> Result<Tensor> {
        let f = self.backbone.forward(windows)?.feature.leaky_relu(LEAKY_SLOPE);
        let logits = self.out.forward(&self.hidden.forward(&f).leaky_relu(LEAKY_SLOPE));
        Ok(logits.reshape(&[windows.dim(0)]).sigmoid())
    }

    /// Cuts `[B, T, 36]` into `K` windows of length `t` and scores them: `[B, K]`.
    pub fn scores(&self, pose: &Tensor) -> Result<Tensor> {
        let (b, t) = (pose.dim(0), pose.dim(1));
        let (len, k) = (self.config.window_len, self.config.window_count);
        let stride = default_stride(t, len, k)?;
        let windows = pose.unfold(1, len, stride, 0).narrow(1, 0, k);
        let s = self.window_scores(&windows.reshape(&[b * k, len, FRAME_WIDTH]))?;
        Ok(s.reshape(&[b, k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// `a = softmax(r)`.
    #[default]
    Softmax,
    /// `a = -log softmax(r)`, the literal printed weighting.
    PaperNeglog,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(AttentionMode::Softmax),
            "paper-neglog" => Ok(AttentionMode::PaperNeglog),
            other => Err(Error::config(format!("unknown attention mode {other:?}"))),
        }
    }
}

/// Attention weights over axis 1 of the `[B, T]` score matrix `r`.
pub fn attention_weights(r: &Tensor, mode: AttentionMode) -> Tensor {
    match mode {
        AttentionMode::Softmax => r.softmax(1),
        AttentionMode::PaperNeglog => r.log_softmax(1).neg(),
    }
}

/// `F = A · O` with `A` from [`attention_weights`]; `o` is `[B, T, k]`,
/// `a` is `[B, T]`.
pub fn weighted_pool(o: &Tensor, a: &Tensor) -> Tensor {
    let (b, t) = (a.dim(0), a.dim(1));
    o.mul(&a.reshape(&[b, t, 1])).sum_axis(1, false)
}

/// `r = W_s2 · tanh(W_s1 · Oᵀ)` followed by weighted pooling of `O`.
#[derive(Debug, Clone)]
pub struct AttentionPool {
    w_s1: Param,
    w_s2: Param,
    mode: AttentionMode,
}

impl AttentionPool {
    pub fn new(vs: &mut VarStore, name: &str, k: usize, l: usize, mode: AttentionMode, rng: &mut impl Rng) -> Self {
        AttentionPool {
            w_s1: vs.add(format!("{name}.w_s1"), uniform(&[k, l], 1.0 / (k as f64).sqrt(), rng)),
            w_s2: vs.add(format!("{name}.w_s2"), uniform(&[l, 1], 1.0 / (l as f64).sqrt(), rng)),
            mode,
        }
    }

    /// Per-step scores `r`, `[B, T]`.
    pub fn scores(&self, o: &Tensor) -> Tensor {
        let (b, t, k) = (o.dim(0), o.dim(1), o.dim(2));
        o.reshape(&[b * t, k])
            .matmul(&self.w_s1.get())
            .tanh()
            .matmul(&self.w_s2.get())
            .reshape(&[b, t])
    }

    /// Returns `(F_M [B, k], A [B, T])`.
    pub fn forward(&self, o: &Tensor) -> (Tensor, Tensor) {
        let a = attention_weights(&self.scores(o), self.mode);
        (weighted_pool(o, &a), a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub encoder: EncoderConfig,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    /// Attention projection width `l`.
    pub attention_dim: usize,
    pub attention_mode: AttentionMode,
    /// Pose backbone; its `out_dim` must equal `2 * rnn_hidden`.
    pub backbone: BackboneConfig,
    pub fusion_channels: usize,
    pub fusion_kernel: usize,
    pub fusion_stride: usize,
}

impl GlobalConfig {
    pub fn full() -> Self {
        GlobalConfig {
            encoder: EncoderConfig::full(),
            rnn_hidden: 128,
            rnn_layers: 2,
            attention_dim: 40,
            attention_mode: AttentionMode::Softmax,
            backbone: BackboneConfig::full(),
            fusion_channels: 8,
            fusion_kernel: 5,
            fusion_stride: 2,
        }
    }

    pub fn desk() -> Self {
        GlobalConfig {
            encoder: EncoderConfig::desk(),
            rnn_hidden: 16,
            rnn_layers: 2,
            attention_dim: 40,
            attention_mode: AttentionMode::Softmax,
            backbone: BackboneConfig::desk(32),
            fusion_channels: 4,
            fusion_kernel: 5,
            fusion_stride: 2,
        }
    }

    pub fn k(&self) -> usize {
        2 * self.rnn_hidden
    }
}

/// Global discriminator output: scores and the intermediate layers used for
/// feature matching.
pub struct GlobalOutput {
    pub scores: Tensor,
    pub layers: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct GlobalDiscriminator {
    config: GlobalConfig,
    vars: VarStore,
    encoder: PieceEncoder,
    rnn: BiGru,
    attention: AttentionPool,
    backbone: PoseBackbone,
    fusion: Conv1d,
    fc: Linear,
}

impl GlobalDiscriminator {
    pub fn new(config: GlobalConfig, seed: u64) -> Result<Self> {
        let k = config.k();
        if config.backbone.out_dim != k {
            return Err(Error::config(format!(
                "pose feature width {} must equal music feature width {k}",
                config.backbone.out_dim
            )));
        }
        if config.rnn_hidden == 0 || config.attention_dim == 0 || config.fusion_channels == 0 || config.fusion_stride == 0 {
            return Err(Error::config("global discriminator widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = VarStore::new();
        let e = &config.encoder;
        let encoder = PieceEncoder::new(&mut vars, "global.encoder", &e.widths, e.kernel, e.stride, &mut rng);
        let rnn = BiGru::new(&mut vars, "global.rnn", encoder.out_dim(), config.rnn_hidden, config.rnn_layers, &mut rng);
        let attention = AttentionPool::new(&mut vars, "global.attention", k, config.attention_dim, config.attention_mode, &mut rng);
        let backbone = PoseBackbone::new(&mut vars, "global.pose", &config.backbone, &mut rng)?;
        let fusion = Conv1d::new(
            &mut vars,
            "global.fusion",
            2,
            config.fusion_channels,
            config.fusion_kernel,
            config.fusion_stride,
            config.fusion_kernel / 2,
            &mut rng,
        );
        let fc = Linear::new(&mut vars, "global.fc", fusion.out_len(k) * config.fusion_channels, 1, &mut rng);
        Ok(GlobalDiscriminator {
            config,
            vars,
            encoder,
            rnn,
            attention,
            backbone,
            fusion,
            fc,
        })
    }

    pub fn config(&self) -> &GlobalConfig {
        &self.config
    }

    pub fn vars(&self) -> &VarStore {
        &self.vars
    }

    pub fn attention(&self) -> &AttentionPool {
        &self.attention
    }

    /// Music feature `F_M`, `[B, k]`.
    pub fn music_feature(&self, music: &Tensor) -> Result<Tensor> {
        check_music(music)?;
        let (b, t, s) = (music.dim(0), music.dim(1), music.dim(2));
        let f = self.encoder.forward(&music.reshape(&[b * t, s])).reshape(&[b, t, self.encoder.out_dim()]);
        Ok(self.attention.forward(&self.rnn.forward(&f)).0)
    }

    /// Scores poses against a precomputed music feature.
    pub fn score_with_feature(&self, pose: &Tensor, music_feature: &Tensor) -> Result<GlobalOutput> {
        let bb = self.backbone.forward(pose)?;
        let b = pose.dim(0);
        if music_feature.shape() != bb.feature.shape() {
            return Err(Error::shape(format!(
                "music feature {:?} does not match pose feature {:?}",
                music_feature.shape(),
                bb.feature.shape()
            )));
        }
        let stacked = Tensor::stack(&[music_feature.clone(), bb.feature.clone()], 2);
        let conv = self.fusion.forward(&stacked, 1).leaky_relu(LEAKY_SLOPE);
        let flat = conv.reshape(&[b, conv.numel() / b]);
        let scores = self.fc.forward(&flat).reshape(&[b]).sigmoid();
        Ok(GlobalOutput {
            scores,
            layers: vec![bb.fused_map, bb.feature, conv],
        })
    }

    /// `[B, T, 36]` poses and `[B, T, 1600]` music → `[B]` scores.
    pub fn forward(&self, pose: &Tensor, music: &Tensor) -> Result<GlobalOutput> {
        if pose.ndim() < 2 || music.ndim() < 2 || pose.dim(1) != music.dim(1) || pose.dim(0) != music.dim(0) {
            return Err(Error::shape(format!(
                "pose {:?} and music {:?} disagree on batch or T",
                pose.shape(),
                music.shape()
            )));
        }
        self.score_with_feature(pose, &self.music_feature(music)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{temporal_difference, SkeletonSequence};
    use autograd::grad;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        uniform(shape, 0.8, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn tiny_global(mode: AttentionMode) -> GlobalConfig {
        GlobalConfig {
            encoder: EncoderConfig {
                widths: vec![4, 4, 4, 4],
                kernel: 15,
                stride: 4,
            },
            rnn_hidden: 4,
            rnn_layers: 1,
            attention_dim: 5,
            attention_mode: mode,
            backbone: BackboneConfig::desk(8),
            fusion_channels: 2,
            fusion_kernel: 3,
            fusion_stride: 2,
        }
    }

    #[test]
    fn difference_matrix_matches_sequence_difference() {
        let x = rand_tensor(&[1, 7, 36], 1);
        let seq = SkeletonSequence::from_f64(x.data(), 10.0).unwrap();
        let want = temporal_difference(&seq).unwrap();
        let got = apply_time(&temporal_difference_matrix(7).unwrap(), &x);
        for (a, b) in got.data().iter().zip(want.coords()) {
            assert!((a - *b as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn backbone_feature_shapes() {
        let mut vs = VarStore::new();
        let bb = PoseBackbone::new(&mut vs, "b", &BackboneConfig::full(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(bb.forward(&rand_tensor(&[1, 50, 36], 2)).unwrap().feature.shape(), &[1, 256]);
        assert_eq!(bb.forward(&rand_tensor(&[3, 5, 36], 3)).unwrap().feature.shape(), &[3, 256]);
        assert!(matches!(bb.forward(&rand_tensor(&[1, 1, 36], 3)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn constant_offset_only_moves_the_raw_stream() {
        let mut vs = VarStore::new();
        let bb = PoseBackbone::new(&mut vs, "b", &BackboneConfig::desk(8), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = rand_tensor(&[1, 6, 36], 4);
        let shifted = x.add_scalar(0.1);
        let diff = temporal_difference_matrix(6).unwrap();
        let d0 = apply_time(&diff, &x);
        let d1 = apply_time(&diff, &shifted);
        for (a, b) in d0.data().iter().zip(d1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (m0, m1) = (bb.motion.forward(&d0), bb.motion.forward(&d1));
        for (a, b) in m0.data().iter().zip(m1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_ne!(bb.raw.forward(&x).data(), bb.raw.forward(&shifted).data());
    }

    #[test]
    fn local_scores_follow_window_order() {
        let d = LocalDiscriminator::new(LocalConfig::desk(), 7).unwrap();
        let w = rand_tensor(&[4, 5, 36], 5);
        let s = d.window_scores(&w).unwrap();
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let perm = [2usize, 0, 3, 1];
        let wp = Tensor::cat(&perm.iter().map(|&i| w.narrow(0, i, 1)).collect::<Vec<_>>(), 0);
        let sp = d.window_scores(&wp).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(sp.data()[dst], s.data()[src]);
        }
        let dup = Tensor::cat(&[w.narrow(0, 1, 1), w.narrow(0, 1, 1)], 0);
        let sd = d.window_scores(&dup).unwrap();
        assert_eq!(sd.data()[0], sd.data()[1]);
        assert_eq!(sd.data()[0], s.data()[1]);
    }

    #[test]
    fn local_scores_cover_k_windows() {
        let d = LocalDiscriminator::new(LocalConfig::desk(), 7).unwrap();
        let p = rand_tensor(&[2, 50, 36], 6);
        let s = d.scores(&p).unwrap();
        assert_eq!(s.shape(), &[2, 16]);
        // Window 4 starts at frame 12 under stride 3.
        let direct = d.window_scores(&p.narrow(0, 1, 1).narrow(1, 12, 5)).unwrap();
        assert!((direct.item() - s.data()[16 + 4]).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_give_mean_and_neglog_gives_log2_sum() {
        let o = rand_tensor(&[1, 2, 3], 8);
        let r = Tensor::zeros(&[1, 2]);
        let mean = weighted_pool(&o, &attention_weights(&r, AttentionMode::Softmax));
        let neglog = weighted_pool(&o, &attention_weights(&r, AttentionMode::PaperNeglog));
        for c in 0..3 {
            let (a, b) = (o.data()[c], o.data()[3 + c]);
            assert!((mean.data()[c] - (a + b) / 2.0).abs() < 1e-12);
            assert!((neglog.data()[c] - 2f64.ln() * (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn global_score_is_a_probability_and_depends_on_music() {
        let d = GlobalDiscriminator::new(tiny_global(AttentionMode::Softmax), 9).unwrap();
        let pose = rand_tensor(&[2, 6, 36], 10);
        let music = rand_tensor(&[2, 6, 1600], 11).leaf_requiring_grad();
        let out = d.forward(&pose, &music).unwrap();
        assert_eq!(out.scores.shape(), &[2]);
        assert!(out.scores.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(out.layers.len(), 3);
        let g = grad(&out.scores.sum(), &[music.clone()], false).remove(0);
        assert!(g.data().iter().any(|v| v.abs() > 0.0));
        assert!(d.forward(&pose, &rand_tensor(&[2, 7, 1600], 1)).is_err());
    }

    #[test]
    fn mismatched_feature_widths_are_rejected() {
        let mut cfg = tiny_global(AttentionMode::Softmax);
        cfg.backbone.out_dim = 9;
        assert!(matches!(GlobalDiscriminator::new(cfg, 0), Err(Error::Config(_))));
    }
}
