//! Training objectives: pose perceptual loss, adversarial terms with the
//! gradient penalty, joint-level L1 reconstruction, feature matching and the
//! weighted combination of all of them.

use autograd::{grad, Tensor};

use crate::error::{Error, Result};
use crate::perceptual::StGcn;

/// Scores are clamped into `[EPS, 1 - EPS]` before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;
/// Added under the square root of the gradient norm.
pub const GP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda: Vec<f64>,
    pub w_gp: f64,
    pub w_p: f64,
    pub w_fm: f64,
    pub w_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: vec![20.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            w_gp: 1.0,
            w_p: 1.0,
            w_fm: 1.0,
            w_l1: 200.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.lambda.iter().chain([&self.w_gp, &self.w_p, &self.w_fm, &self.w_l1]);
        for &w in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::config(format!("loss weight {w} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Sum of absolute differences over all coordinates, averaged over the batch
/// axis.
fn batch_l1(a: &Tensor, b: &Tensor) -> Tensor {
    a.sub(b).abs().sum().mul_scalar(1.0 / a.dim(0).max(1) as f64)
}

/// `Σ_j |Y_j - X_j|` over every coordinate of each `[B, T, 36]` sample,
/// averaged over the batch.
pub fn l1_reconstruction(y: &Tensor, x: &Tensor) -> Result<Tensor> {
    same_shape(y, x, "L1 reconstruction")?;
    Ok(batch_l1(y, x))
}

/// `Σ_l λ_l ‖Φ_l(P) - Φ_l(G(M))‖₁` from precomputed activations.
pub fn perceptual_from_activations(real: &[Tensor], fake: &[Tensor], lambda: &[f64]) -> Result<Tensor> {
    if real.len() != lambda.len() || fake.len() != lambda.len() {
        return Err(Error::config(format!(
            "{} perceptual weights for {} tap points",
            lambda.len(),
            real.len().max(fake.len())
        )));
    }
    let mut total = Tensor::scalar(0.0);
    for ((r, f), &l) in real.iter().zip(fake).zip(lambda) {
        same_shape(r, f, "perceptual activations")?;
        if l != 0.0 {
            total = total.add(&batch_l1(r, f).mul_scalar(l));
        }
    }
    Ok(total)
}

pub fn pose_perceptual(phi: &StGcn, real: &Tensor, fake: &Tensor, lambda: &[f64]) -> Result<Tensor> {
    same_shape(real, fake, "perceptual inputs")?;
    if lambda.len() != phi.num_taps() {
        return Err(Error::config(format!(
            "{} perceptual weights for {} tap points",
            lambda.len(),
            phi.num_taps()
        )));
    }
    perceptual_from_activations(&phi.activations(real)?, &phi.activations(fake)?, lambda)
}

/// `Σ_i ‖D^i(p, m) - D^i(x, m)‖₁` with no per-layer normalisation.
pub fn feature_matching(real_layers: &[Tensor], fake_layers: &[Tensor]) -> Result<Tensor> {
    if real_layers.len() != fake_layers.len() {
        return Err(Error::shape(format!(
            "{} real layers vs {} generated layers",
            real_layers.len(),
            fake_layers.len()
        )));
    }
    let mut total = Tensor::scalar(0.0);
    for (r, f) in real_layers.iter().zip(fake_layers) {
        same_shape(r, f, "feature matching layer")?;
        total = total.add(&batch_l1(r, f));
    }
    Ok(total)
}

/// `ε p + (1 - ε) x` per sample, as a fresh leaf that records gradients.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Tensor> {
    same_shape(real, fake, "interpolation")?;
    let b = real.dim(0);
    if eps.len() != b {
        return Err(Error::shape(format!("{} mixing weights for batch {b}", eps.len())));
    }
    let per = real.numel() / b.max(1);
    let r = real.data();
    let f = fake.data();
    let data = (0..real.numel())
        .map(|i| {
            let e = eps[i / per];
            e * r[i] + (1.0 - e) * f[i]
        })
        .collect();
    Ok(Tensor::from_vec(data, real.shape()).leaf_requiring_grad())
}

/// `mean_b (‖∇_x̂ D(x̂)_b‖₂ - 1)²`, differentiable with respect to the
/// discriminator parameters. `x_hat` must be a leaf that records gradients
/// and `d` must score each sample independently.
pub fn gradient_penalty(d: impl Fn(&Tensor) -> Result<Tensor>, x_hat: &Tensor) -> Result<Tensor> {
    if !x_hat.requires_grad() {
        return Err(Error::State("gradient penalty input must record gradients".into()));
    }
    let b = x_hat.dim(0);
    let scores = d(x_hat)?;
    let g = grad(&scores.sum(), std::slice::from_ref(x_hat), true).remove(0);
    let norm = g
        .square()
        .reshape(&[b, g.numel() / b.max(1)])
        .sum_axis(1, false)
        .add_scalar(GP_EPS)
        .sqrt();
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// Mean of `log(clamp(s))`.
pub fn mean_log(scores: &Tensor) -> Tensor {
    scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS).ln().mean()
}

/// Mean of `log(1 - clamp(s))`.
pub fn mean_log_complement(scores: &Tensor) -> Tensor {
    scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS).neg().add_scalar(1.0).ln().mean()
}

/// Real and generated scores of one discriminator.
pub struct ScorePair<'a> {
    pub real: &'a Tensor,
    pub fake: &'a Tensor,
}

/// `E log D(real) + E log(1 - D(fake))`; the quantity a discriminator
/// maximises. Window scores of the local critic are averaged.
pub fn discriminator_log_likelihood(pair: &ScorePair) -> Tensor {
    mean_log(pair.real).add(&mean_log_complement(pair.fake))
}

/// Non-saturating generator term `-E log D(fake)`.
pub fn generator_adversarial(fake: &Tensor) -> Tensor {
    mean_log(fake).neg()
}

/// Named scalar terms of one step plus the combined objectives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub terms: Vec<(String, f64)>,
    pub weights: Vec<(String, f64)>,
    pub generator_objective: f64,
    /// The discriminators' maximised objective (log-likelihood terms minus
    /// the weighted gradient penalty), when any discriminator is active.
    pub discriminator_objective: Option<f64>,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// Tab-separated `step  epoch  name=value ...` record.
    pub fn to_record(&self, step: u64, epoch: u64) -> String {
        let mut fields = vec![step.to_string(), epoch.to_string()];
        for (n, v) in self.terms.iter().chain(&self.weights) {
            fields.push(format!("{n}={v:e}"));
        }
        fields.push(format!("g_objective={:e}", self.generator_objective));
        if let Some(d) = self.discriminator_objective {
            fields.push(format!("d_objective={d:e}"));
        }
        fields.join("\t")
    }
}

/// Scalar inputs of the combined objective; absent terms are disabled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub adv_g: Option<f64>,
    pub perceptual: Option<f64>,
    pub feature_matching: Option<f64>,
    pub l1: f64,
    pub adv_d: Option<f64>,
}

/// `adv_G + w_P L_P + w_FM L_FM + w_L1 L_L1`; the discriminator objective is
/// carried through as given.
pub fn full_objective(parts: &LossParts, w: &LossWeights) -> Result<LossReport> {
    let mut report = LossReport::default();
    let mut push = |name: &str, v: Option<f64>| -> Result<()> {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: name.to_string() });
            }
            report.terms.push((name.to_string(), v));
        }
        Ok(())
    };
    push("adv_g", parts.adv_g)?;
    push("l_p", parts.perceptual)?;
    push("l_fm", parts.feature_matching)?;
    push("l_l1", Some(parts.l1))?;
    push("adv_d", parts.adv_d)?;
    let g = parts.adv_g.unwrap_or(0.0)
        + w.w_p * parts.perceptual.unwrap_or(0.0)
        + w.w_fm * parts.feature_matching.unwrap_or(0.0)
        + w.w_l1 * parts.l1;
    if !g.is_finite() {
        return Err(Error::NonFinite { term: "g_objective".into() });
    }
    report.generator_objective = g;
    report.discriminator_objective = parts.adv_d;
    report.weights = vec![
        ("w_p".into(), w.w_p),
        ("w_fm".into(), w.w_fm),
        ("w_l1".into(), w.w_l1),
        ("w_gp".into(), w.w_gp),
    ];
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_examples() {
        let y = Tensor::zeros(&[1, 50, 36]);
        assert_eq!(l1_reconstruction(&y, &y).unwrap().item(), 0.0);
        let mut d = vec![0.0; 1800];
        d[17] = 0.3;
        let one = l1_reconstruction(&y, &Tensor::from_vec(d, &[1, 50, 36])).unwrap().item();
        assert!((one - 0.3).abs() < 1e-12);
        let all = l1_reconstruction(&y, &Tensor::full(&[1, 50, 36], 0.1)).unwrap().item();
        let brute: f64 = std::iter::repeat(0.1f64).take(1800).sum();
        assert!((all - brute).abs() < 1e-9 && (all - 180.0).abs() < 1e-9);
    }

    #[test]
    fn balanced_scores_give_four_log_halves() {
        let half = Tensor::full(&[2, 16], 0.5);
        let g = Tensor::full(&[2], 0.5);
        let local = discriminator_log_likelihood(&ScorePair { real: &half, fake: &half });
        let global = discriminator_log_likelihood(&ScorePair { real: &g, fake: &g });
        let v = local.add(&global).item();
        assert!((v - 4.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn averaging_over_windows() {
        let k2 = mean_log(&Tensor::from_vec(vec![0.5, 0.5], &[1, 2])).item();
        let k1 = mean_log(&Tensor::from_vec(vec![0.5], &[1, 1])).item();
        assert_eq!(k1, k2);
    }

    #[test]
    fn perfect_discriminator_approaches_zero_from_below() {
        let real = Tensor::full(&[3], 1.0 - 1e-9);
        let fake = Tensor::full(&[3], 1e-9);
        let v = discriminator_log_likelihood(&ScorePair { real: &real, fake: &fake }).item();
        assert!(v < 0.0 && v > -1e-6);
    }

    #[test]
    fn objective_arithmetic() {
        let w = LossWeights::default();
        let parts = LossParts {
            adv_g: Some(1.0),
            perceptual: Some(2.0),
            feature_matching: Some(3.0),
            l1: 0.01,
            adv_d: None,
        };
        assert!((full_objective(&parts, &w).unwrap().generator_objective - 8.0).abs() < 1e-12);
        let zero = LossWeights {
            w_p: 0.0,
            w_fm: 0.0,
            w_l1: 0.0,
            ..w.clone()
        };
        assert_eq!(full_objective(&parts, &zero).unwrap().generator_objective, 1.0);
        assert_eq!(full_objective(&LossParts::default(), &w).unwrap().generator_objective, 0.0);
    }

    #[test]
    fn non_finite_terms_are_attributed() {
        let parts = LossParts {
            feature_matching: Some(f64::NAN),
            ..Default::default()
        };
        match full_objective(&parts, &LossWeights::default()) {
            Err(Error::NonFinite { term }) => assert_eq!(term, "l_fm"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn record_is_tab_separated() {
        let r = full_objective(
            &LossParts {
                l1: 0.5,
                ..Default::default()
            },
            &LossWeights::default(),
        )
        .unwrap();
        let line = r.to_record(3, 1);
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(&fields[..2], &["3", "1"]);
        assert!(fields.contains(&"l_l1=5e-1"));
        assert!(fields.last().unwrap().starts_with("g_objective="));
    }

    #[test]
    fn mismatched_lambda_is_a_config_error() {
        let a = vec![Tensor::zeros(&[1, 2]); 9];
        assert!(matches!(perceptual_from_activations(&a, &a, &[1.0; 8]), Err(Error::Config(_))));
    }
}
