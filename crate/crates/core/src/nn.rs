//! Layer building blocks on top of the autodiff engine. Tensors are
//! channels-last throughout.

use autograd::{Param, Tensor, VarStore};
use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Uniform `U(-bound, bound)` initial values.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(-bound..=bound)).collect(), shape)
}

/// Applies a 2-D weight to the last axis of `x`.
/// Widens weights under `prefix` from `1/sqrt(fan_in)` to the He bound
/// `sqrt(6/fan_in)`; without normalisation layers the default bound lets the
/// signal fade over deep stacks.
pub fn he_rescale(vars: &VarStore, prefix: &str) {
    let gain = 6f64.sqrt();
    for p in vars.params() {
        if p.name().starts_with(prefix) && p.name().ends_with(".weight") {
            p.set_data(p.get().data().iter().map(|v| v * gain).collect());
        }
    }
}

fn apply_last(x: &Tensor, w: &Tensor) -> Tensor {
    let shape = x.shape();
    let last = shape[shape.len() - 1];
    let rows = x.numel() / last.max(1);
    let y = x.reshape(&[rows, last]).matmul(w);
    let mut out = shape.to_vec();
    *out.last_mut().unwrap() = w.dim(1);
    y.reshape(&out)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Param,
    bias: Param,
}

impl Linear {
    pub fn new(vs: &mut VarStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Linear {
            weight: vs.add(format!("{name}.weight"), uniform(&[fan_in, fan_out], bound, rng)),
            bias: vs.add(format!("{name}.bias"), uniform(&[fan_out], bound, rng)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `x @ W + b` over the last axis.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        apply_last(x, &self.weight.get()).add(&self.bias.get())
    }
}

/// Convolution along one axis of a channels-last tensor.
#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Param,
    bias: Param,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        vs: &mut VarStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_ch * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv1d {
            weight: vs.add(format!("{name}.weight"), uniform(&[fan_in, out_ch], bound, rng)),
            bias: vs.add(format!("{name}.bias"), uniform(&[out_ch], bound, rng)),
            kernel,
            stride,
            pad,
        }
    }

    /// Output length along the convolved axis.
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// `x` is `[..pre, L, ..rest, C_in]`; convolves along `axis` (the `L` axis).
    pub fn forward(&self, x: &Tensor, axis: usize) -> Tensor {
        let cols = x.unfold(axis, self.kernel, self.stride, self.pad);
        let shape = cols.shape().to_vec();
        let k = shape[shape.len() - 2] * shape[shape.len() - 1];
        let rows = cols.numel() / k;
        let y = cols.reshape(&[rows, k]).matmul(&self.weight.get()).add(&self.bias.get());
        let mut out = shape[..shape.len() - 2].to_vec();
        out.push(self.weight.shape()[1]);
        y.reshape(&out)
    }
}

/// Single-direction GRU cell with PyTorch gate ordering (r, z, n).
#[derive(Debug, Clone)]
pub struct Gru {
    w_ih: Param,
    w_hh: Param,
    b_ih: Param,
    b_hh: Param,
    hidden: usize,
}

impl Gru {
    pub fn new(vs: &mut VarStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Gru {
            w_ih: vs.add(format!("{name}.w_ih"), uniform(&[input, 3 * hidden], bound, rng)),
            w_hh: vs.add(format!("{name}.w_hh"), uniform(&[hidden, 3 * hidden], bound, rng)),
            b_ih: vs.add(format!("{name}.b_ih"), uniform(&[3 * hidden], bound, rng)),
            b_hh: vs.add(format!("{name}.b_hh"), uniform(&[3 * hidden], bound, rng)),
            hidden,
        }
    }

    /// Runs over `x: [B, T, in]`, returning hidden states `[B, T, H]` aligned
    /// with input time (a reversed pass still writes step `t` at index `t`).
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Tensor {
        let (b, t_len) = (x.dim(0), x.dim(1));
        let h_dim = self.hidden;
        let gates_x = apply_last(x, &self.w_ih.get()).add(&self.b_ih.get());
        let w_hh = self.w_hh.get();
        let b_hh = self.b_hh.get();
        let mut h = Tensor::zeros(&[b, h_dim]);
        let mut outs: Vec<Option<Tensor>> = vec![None; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let gx = gates_x.select(1, t);
            let gh = h.matmul(&w_hh).add(&b_hh);
            let r = gx.narrow(1, 0, h_dim).add(&gh.narrow(1, 0, h_dim)).sigmoid();
            let z = gx.narrow(1, h_dim, h_dim).add(&gh.narrow(1, h_dim, h_dim)).sigmoid();
            let n = gx
                .narrow(1, 2 * h_dim, h_dim)
                .add(&r.mul(&gh.narrow(1, 2 * h_dim, h_dim)))
                .tanh();
            h = n.add(&z.mul(&h.sub(&n)));
            outs[t] = Some(h.clone());
        }
        let outs: Vec<Tensor> = outs.into_iter().map(|o| o.unwrap()).collect();
        Tensor::stack(&outs, 1)
    }
}

/// Stacked bidirectional GRU; each layer concatenates forward and backward
/// states along channels.
#[derive(Debug, Clone)]
pub struct BiGru {
    layers: Vec<(Gru, Gru)>,
}

impl BiGru {
    pub fn new(
        vs: &mut VarStore,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    Gru::new(vs, &format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    Gru::new(vs, &format!("{name}.l{l}.bwd"), inp, hidden, rng),
                )
            })
            .collect();
        BiGru { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (fwd, bwd) in &self.layers {
            h = Tensor::cat(&[fwd.forward(&h, false), bwd.forward(&h, true)], 2);
        }
        h
    }
}

/// Strided 1-D convolutions over each raw 0.1 s piece, mean-pooled to one
/// feature vector per piece.
#[derive(Debug, Clone)]
pub struct PieceEncoder {
    convs: Vec<Conv1d>,
}

impl PieceEncoder {
    pub fn new(vs: &mut VarStore, name: &str, widths: &[usize], kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let mut in_ch = 1;
        let convs = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let c = Conv1d::new(vs, &format!("{name}.conv{i}"), in_ch, w, kernel, stride, kernel / 2, rng);
                in_ch = w;
                c
            })
            .collect();
        PieceEncoder { convs }
    }

    pub fn out_dim(&self) -> usize {
        self.convs.last().map_or(1, |c| c.weight.shape()[1])
    }

    /// `pieces: [N, S]` raw samples → `[N, out_dim]`.
    pub fn forward(&self, pieces: &Tensor) -> Tensor {
        let (n, s) = (pieces.dim(0), pieces.dim(1));
        let mut h = pieces.reshape(&[n, s, 1]);
        for c in &self.convs {
            h = c.forward(&h, 1).leaky_relu(LEAKY_SLOPE);
        }
        h.mean_axis(1, false)
    }
}
