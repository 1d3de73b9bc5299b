//! Alternating discriminator/generator optimisation, checkpointing and the
//! per-step loss log.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use autograd::{grad, no_grad, Adam, Param, Tensor, VarStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{slice_pieces, AudioClip, MusicPieceBatch};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::discriminators::{GlobalDiscriminator, LocalDiscriminator};
use crate::error::{Error, Result};
use crate::generator::{music_tensor, pose_tensor, Generator};
use crate::losses::{
    discriminator_log_likelihood, feature_matching, full_objective, generator_adversarial, gradient_penalty,
    interpolate, l1_reconstruction, perceptual_from_activations, LossParts, LossReport, ScorePair,
};
use crate::perceptual::StGcn;
use crate::skeleton::SkeletonSequence;

/// One aligned training example.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub music: MusicPieceBatch,
    pub pose: SkeletonSequence,
}

impl TrainingPair {
    pub fn new(music: MusicPieceBatch, pose: SkeletonSequence) -> Result<Self> {
        if music.num_pieces() != pose.num_frames() {
            return Err(Error::Alignment(format!(
                "{} music pieces for {} frames",
                music.num_pieces(),
                pose.num_frames()
            )));
        }
        Ok(TrainingPair { music, pose })
    }
}

// Seeds of the sub-networks, offset from the run seed.
const SEED_G: u64 = 0x6765_6e00;
const SEED_LOCAL: u64 = 0x6c6f_6300;
const SEED_GLOBAL: u64 = 0x676c_6f00;
const SEED_PHI: u64 = 0x7068_6900;

fn check_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.item().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term: name.to_string() })
    }
}

pub struct Trainer {
    config: TrainConfig,
    generator: Generator,
    local: LocalDiscriminator,
    global: GlobalDiscriminator,
    phi: StGcn,
    opt_g: Adam,
    opt_local: Adam,
    opt_global: Adam,
    epoch: u64,
    step: u64,
}

impl Trainer {
    /// Fresh networks initialised from `config.seed`. The perceptual network
    /// starts untrained; see [`Trainer::set_perceptual`].
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model();
        let seed = config.seed;
        let generator = Generator::new(model.generator, seed ^ SEED_G)?;
        let local = LocalDiscriminator::new(model.local, seed ^ SEED_LOCAL)?;
        let global = GlobalDiscriminator::new(model.global, seed ^ SEED_GLOBAL)?;
        let phi = StGcn::new(model.stgcn, seed ^ SEED_PHI)?;
        phi.freeze();
        let opt_g = Adam::new(generator.vars().params(), config.lr_generator);
        let opt_local = Adam::new(local.vars().params(), config.lr_local_d);
        let opt_global = Adam::new(global.vars().params(), config.lr_global_d);
        Ok(Trainer {
            config,
            generator,
            local,
            global,
            phi,
            opt_g,
            opt_local,
            opt_global,
            epoch: 0,
            step: 0,
        })
    }

    /// Installs pretrained perceptual weights; the network is frozen.
    pub fn set_perceptual(&mut self, phi: &StGcn) -> Result<()> {
        if phi.config() != self.phi.config() {
            return Err(Error::config("perceptual network layout does not match the training configuration"));
        }
        self.phi.vars().copy_from(phi.vars()).map_err(Error::State)?;
        self.phi.freeze();
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn local(&self) -> &LocalDiscriminator {
        &self.local
    }

    pub fn global(&self) -> &GlobalDiscriminator {
        &self.global
    }

    pub fn perceptual(&self) -> &StGcn {
        &self.phi
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Randomness of one step depends only on the run seed and step index.
    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step);
        rng
    }

    fn epoch_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream((1 << 63) | self.epoch);
        rng
    }

    /// Updates both discriminators once. Returns `(terms, objective)` where
    /// the objective is the maximised log-likelihood minus `w_GP · GP`.
    fn discriminator_step(
        &mut self,
        music: &Tensor,
        real: &Tensor,
        rng: &mut impl Rng,
    ) -> Result<(Vec<(String, f64)>, f64)> {
        let cond = self.config.condition;
        let fake = no_grad(|| self.generator.forward(music))?;
        let mut terms = Vec::new();
        let mut objective = Tensor::scalar(0.0);
        if cond.uses_global() {
            let fm = self.global.music_feature(music)?;
            let r = self.global.score_with_feature(real, &fm)?.scores;
            let f = self.global.score_with_feature(&fake, &fm)?.scores;
            let ll = discriminator_log_likelihood(&ScorePair { real: &r, fake: &f });
            let eps: Vec<f64> = (0..real.dim(0)).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let x_hat = interpolate(real, &fake, &eps)?;
            let gp = gradient_penalty(|x| Ok(self.global.score_with_feature(x, &fm)?.scores), &x_hat)?;
            check_finite("adv_d_global", &ll)?;
            check_finite("gp", &gp)?;
            terms.push(("adv_d_global".to_string(), ll.item()));
            terms.push(("gp".to_string(), gp.item()));
            objective = objective.add(&ll).sub(&gp.mul_scalar(self.config.weights.w_gp));
        }
        if cond.uses_local() {
            let r = self.local.scores(real)?;
            let f = self.local.scores(&fake)?;
            let ll = discriminator_log_likelihood(&ScorePair { real: &r, fake: &f });
            check_finite("adv_d_local", &ll)?;
            terms.push(("adv_d_local".to_string(), ll.item()));
            objective = objective.add(&ll);
        }
        let loss = objective.neg();
        if cond.uses_global() {
            step_store(&mut self.opt_global, self.global.vars(), &loss);
        }
        if cond.uses_local() {
            step_store(&mut self.opt_local, self.local.vars(), &loss);
        }
        Ok((terms, objective.item()))
    }

    fn generator_step(&mut self, music: &Tensor, real: &Tensor) -> Result<(LossParts, Vec<(String, f64)>)> {
        let cond = self.config.condition;
        let w = self.config.weights.clone();
        let fake = self.generator.forward(music)?;
        let l1 = l1_reconstruction(real, &fake)?;
        check_finite("l_l1", &l1)?;
        let mut total = l1.mul_scalar(w.w_l1);
        let mut parts = LossParts {
            l1: l1.item(),
            ..Default::default()
        };
        let mut extra = Vec::new();
        let mut adv = Tensor::scalar(0.0);
        if cond.uses_global() {
            let fm = no_grad(|| self.global.music_feature(music))?;
            let real_layers = no_grad(|| self.global.score_with_feature(real, &fm))?.layers;
            let out = self.global.score_with_feature(&fake, &fm)?;
            let adv_global = generator_adversarial(&out.scores);
            let fm_loss = feature_matching(&real_layers, &out.layers)?;
            check_finite("adv_g_global", &adv_global)?;
            check_finite("l_fm", &fm_loss)?;
            extra.push(("adv_g_global".to_string(), adv_global.item()));
            parts.feature_matching = Some(fm_loss.item());
            adv = adv.add(&adv_global);
            total = total.add(&fm_loss.mul_scalar(w.w_fm));
        }
        if cond.uses_local() {
            let adv_local = generator_adversarial(&self.local.scores(&fake)?);
            check_finite("adv_g_local", &adv_local)?;
            extra.push(("adv_g_local".to_string(), adv_local.item()));
            adv = adv.add(&adv_local);
        }
        if cond.uses_global() {
            parts.adv_g = Some(adv.item());
            total = total.add(&adv);
        }
        if cond.uses_perceptual() {
            let real_acts = no_grad(|| self.phi.activations(real))?;
            let fake_acts = self.phi.activations(&fake)?;
            let lp = perceptual_from_activations(&real_acts, &fake_acts, &w.lambda)?;
            check_finite("l_p", &lp)?;
            parts.perceptual = Some(lp.item());
            total = total.add(&lp.mul_scalar(w.w_p));
        }
        check_finite("g_objective", &total)?;
        step_store(&mut self.opt_g, self.generator.vars(), &total);
        Ok((parts, extra))
    }

    /// One discriminator update followed by one generator update on a batch
    /// of equal-length pairs.
    pub fn train_step(&mut self, batch: &[&TrainingPair]) -> Result<LossReport> {
        let music = music_tensor(&batch.iter().map(|p| &p.music).collect::<Vec<_>>())?;
        let real = pose_tensor(&batch.iter().map(|p| &p.pose).collect::<Vec<_>>())?;
        let mut rng = self.step_rng();
        let mut d_terms = Vec::new();
        let mut d_objective = None;
        if self.config.condition.uses_global() {
            let (terms, obj) = self.discriminator_step(&music, &real, &mut rng)?;
            d_terms = terms;
            d_objective = Some(obj);
        }
        let (mut parts, g_terms) = self.generator_step(&music, &real)?;
        parts.adv_d = d_objective;
        let mut report = full_objective(&parts, &self.config.weights)?;
        report.terms.extend(g_terms);
        report.terms.extend(d_terms);
        self.step += 1;
        Ok(report)
    }

    /// Shuffled batches of equal length for the current epoch.
    pub fn epoch_batches(&self, data: &[TrainingPair]) -> Vec<Vec<usize>> {
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, p) in data.iter().enumerate() {
            by_len.entry(p.pose.num_frames()).or_default().push(i);
        }
        let mut rng = self.epoch_rng();
        let mut batches = Vec::new();
        for (_, mut idx) in by_len {
            idx.shuffle(&mut rng);
            batches.extend(idx.chunks(self.config.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);
        batches
    }

    /// Runs one epoch, appending a record per step to `log`.
    pub fn train_epoch(&mut self, data: &[TrainingPair], log: &mut dyn Write) -> Result<Vec<LossReport>> {
        if data.is_empty() {
            return Err(Error::config("training dataset is empty"));
        }
        self.epoch += 1;
        let mut reports = Vec::new();
        for batch in self.epoch_batches(data) {
            let pairs: Vec<&TrainingPair> = batch.iter().map(|&i| &data[i]).collect();
            let report = self.train_step(&pairs)?;
            writeln!(log, "{}", report.to_record(self.step, self.epoch))?;
            reports.push(report);
        }
        Ok(reports)
    }

    /// Trains until `config.epochs`, saving `checkpoint.dgck` in `dir` after
    /// every epoch when a directory is given.
    pub fn fit(&mut self, data: &[TrainingPair], dir: Option<&Path>, log: &mut dyn Write) -> Result<()> {
        while (self.epoch as usize) < self.config.epochs {
            let reports = self.train_epoch(data, log)?;
            if let Some(last) = reports.last() {
                log::info!(
                    "epoch {} step {} g_objective {:.5}",
                    self.epoch,
                    self.step,
                    last.generator_objective
                );
            }
            if let Some(dir) = dir {
                self.checkpoint().save(&dir.join("checkpoint.dgck"))?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut groups = BTreeMap::new();
        groups.insert("generator".to_string(), self.generator.vars().snapshot());
        groups.insert("local".to_string(), self.local.vars().snapshot());
        groups.insert("global".to_string(), self.global.vars().snapshot());
        groups.insert("phi".to_string(), self.phi.vars().snapshot());
        let mut optimizers = BTreeMap::new();
        optimizers.insert("generator".to_string(), self.opt_g.state(self.generator.vars().params()));
        optimizers.insert("local".to_string(), self.opt_local.state(self.local.vars().params()));
        optimizers.insert("global".to_string(), self.opt_global.state(self.global.vars().params()));
        Checkpoint {
            config_text: self.config.to_text(),
            config_hash: self.config.hash(),
            epoch: self.epoch,
            step: self.step,
            groups,
            optimizers,
        }
    }

    /// Rebuilds a trainer exactly as it was when `ckpt` was taken.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_text(&ckpt.config_text)?;
        if config.hash() != ckpt.config_hash {
            return Err(Error::Migration("checkpoint configuration hash does not match its text".into()));
        }
        let mut t = Trainer::new(config)?;
        let restore = |vs: &VarStore, group: &str| vs.restore(ckpt.group(group)?).map_err(Error::State);
        restore(t.generator.vars(), "generator")?;
        restore(t.local.vars(), "local")?;
        restore(t.global.vars(), "global")?;
        restore(t.phi.vars(), "phi")?;
        for (name, opt, vs) in [
            ("generator", &mut t.opt_g, t.generator.vars()),
            ("local", &mut t.opt_local, t.local.vars()),
            ("global", &mut t.opt_global, t.global.vars()),
        ] {
            let state = ckpt
                .optimizers
                .get(name)
                .ok_or_else(|| Error::State(format!("checkpoint lacks {name} optimizer state")))?;
            opt.load_state(vs.params(), state).map_err(Error::State)?;
        }
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        Ok(t)
    }
}

fn step_store(opt: &mut Adam, vs: &VarStore, loss: &Tensor) {
    let params: &[Param] = vs.params();
    let grads = grad(loss, &vs.tensors(), false);
    opt.step(params, &grads);
}

/// Loads the generator stored in a checkpoint.
pub fn generator_from_checkpoint(ckpt: &Checkpoint) -> Result<Generator> {
    let config = TrainConfig::from_text(&ckpt.config_text)?;
    let g = Generator::new(config.model().generator, 0)?;
    g.vars().restore(ckpt.group("generator")?).map_err(Error::State)?;
    Ok(g)
}

/// Slices the clip into whole 0.1 s pieces and generates one frame each.
pub fn generate_from_checkpoint(ckpt: &Checkpoint, music: &AudioClip) -> Result<SkeletonSequence> {
    let g = generator_from_checkpoint(ckpt)?;
    let pieces = slice_pieces(music, music.num_pieces().max(1))?;
    g.generate(&pieces)
}
