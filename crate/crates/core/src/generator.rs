//! Music-to-skeleton generator: per-piece audio encoder, bidirectional GRU
//! and a per-step pose decoder.

use autograd::{no_grad, Tensor, VarStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{MusicPieceBatch, PIECE_SAMPLES};
use crate::error::{Error, Result};
use crate::nn::{BiGru, Linear, PieceEncoder};
use crate::skeleton::{SkeletonSequence, DEFAULT_FPS, FRAME_WIDTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
}

impl EncoderConfig {
    pub fn full() -> Self {
        EncoderConfig {
            widths: vec![32, 64, 128, 256],
            kernel: 15,
            stride: 4,
        }
    }

    pub fn desk() -> Self {
        EncoderConfig {
            widths: vec![8, 16, 16, 16],
            kernel: 15,
            stride: 4,
        }
    }

    pub fn audio_feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&1)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.kernel == 0 || self.stride == 0 {
            return Err(Error::config("audio encoder needs non-empty positive widths, kernel and stride"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub encoder: EncoderConfig,
    /// Per-direction GRU state width; `H_t` is twice this.
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub mlp_hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl GeneratorConfig {
    /// Full-size network (`k = 256`).
    pub fn full() -> Self {
        GeneratorConfig {
            encoder: EncoderConfig::full(),
            rnn_hidden: 128,
            rnn_layers: 2,
            mlp_hidden_dims: vec![256, 128],
            output_dim: FRAME_WIDTH,
        }
    }

    /// Reduced widths for single-core runs.
    pub fn desk() -> Self {
        GeneratorConfig {
            encoder: EncoderConfig::desk(),
            rnn_hidden: 32,
            rnn_layers: 2,
            mlp_hidden_dims: vec![64, 64],
            output_dim: FRAME_WIDTH,
        }
    }

    pub fn k(&self) -> usize {
        2 * self.rnn_hidden
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.rnn_hidden == 0 || self.rnn_layers == 0 || self.mlp_hidden_dims.contains(&0) {
            return Err(Error::config("generator widths must be positive"));
        }
        if self.output_dim != FRAME_WIDTH {
            return Err(Error::config(format!("output_dim must be {FRAME_WIDTH}")));
        }
        Ok(())
    }
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::full()
    }
}

/// Stacks equal-length piece batches into a `[B, T, 1600]` tensor.
pub fn music_tensor(batches: &[&MusicPieceBatch]) -> Result<Tensor> {
    let t = batches.first().ok_or_else(|| Error::shape("empty music batch"))?.num_pieces();
    let mut data = Vec::with_capacity(batches.len() * t * PIECE_SAMPLES);
    for b in batches {
        if b.num_pieces() != t {
            return Err(Error::shape(format!("music lengths {} and {t} differ", b.num_pieces())));
        }
        data.extend(b.samples().iter().map(|&v| v as f64));
    }
    Ok(Tensor::from_vec(data, &[batches.len(), t, PIECE_SAMPLES]))
}

/// Stacks equal-length sequences into a `[B, T, 36]` tensor.
pub fn pose_tensor(seqs: &[&SkeletonSequence]) -> Result<Tensor> {
    let t = seqs.first().ok_or_else(|| Error::shape("empty pose batch"))?.num_frames();
    let mut data = Vec::with_capacity(seqs.len() * t * FRAME_WIDTH);
    for s in seqs {
        if s.num_frames() != t {
            return Err(Error::shape(format!("sequence lengths {} and {t} differ", s.num_frames())));
        }
        data.extend(s.to_f64());
    }
    Ok(Tensor::from_vec(data, &[seqs.len(), t, FRAME_WIDTH]))
}

pub(crate) fn check_music(music: &Tensor) -> Result<()> {
    if music.ndim() != 3 || music.dim(2) != PIECE_SAMPLES || music.dim(1) == 0 {
        return Err(Error::shape(format!(
            "music must be [B, T, {PIECE_SAMPLES}] with T >= 1, got {:?}",
            music.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    vars: VarStore,
    encoder: PieceEncoder,
    rnn: BiGru,
    decoder: Vec<Linear>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vars = VarStore::new();
        let e = &config.encoder;
        let encoder = PieceEncoder::new(&mut vars, "encoder", &e.widths, e.kernel, e.stride, &mut rng);
        let rnn = BiGru::new(
            &mut vars,
            "rnn",
            encoder.out_dim(),
            config.rnn_hidden,
            config.rnn_layers,
            &mut rng,
        );
        let mut dims = vec![config.k()];
        dims.extend(&config.mlp_hidden_dims);
        dims.push(config.output_dim);
        let decoder = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut vars, &format!("decoder.{i}"), w[0], w[1], &mut rng))
            .collect();
        Ok(Generator {
            config,
            vars,
            encoder,
            rnn,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vars(&self) -> &VarStore {
        &self.vars
    }

    /// `[B, T, 1600]` → `[B, T, audio_feature_dim]`; each piece is encoded alone.
    pub fn encode_pieces(&self, music: &Tensor) -> Result<Tensor> {
        check_music(music)?;
        let (b, t) = (music.dim(0), music.dim(1));
        let f = self.encoder.forward(&music.reshape(&[b * t, PIECE_SAMPLES]));
        Ok(f.reshape(&[b, t, self.encoder.out_dim()]))
    }

    /// Recurrent outputs `O`, `[B, T, k]`.
    pub fn hidden_states(&self, music: &Tensor) -> Result<Tensor> {
        Ok(self.rnn.forward(&self.encode_pieces(music)?))
    }

    /// `[B, T, 1600]` → `[B, T, 36]` in `[-1, 1]`.
    pub fn forward(&self, music: &Tensor) -> Result<Tensor> {
        let mut h = self.hidden_states(music)?;
        let last = self.decoder.len() - 1;
        for (i, layer) in self.decoder.iter().enumerate() {
            h = layer.forward(&h);
            h = if i == last { h.tanh() } else { h.relu() };
        }
        Ok(h)
    }

    pub fn generate(&self, music: &MusicPieceBatch) -> Result<SkeletonSequence> {
        let out = no_grad(|| self.forward(&music_tensor(&[music])?))?;
        SkeletonSequence::from_f64(out.data(), DEFAULT_FPS)
    }
}
