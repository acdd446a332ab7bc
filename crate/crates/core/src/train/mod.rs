//! Two-phase training: classifier pretraining on real images, then joint
//! generator/discriminator steps with multiple cycle consistency.

pub mod checkpoint;
pub mod config;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::data::{assemble_input, input_dropout_sample, split_by_subject, DomainSample};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Binding, Mode};
use crate::losses::{
    aggregate, clsf_loss, lsgan_dsc_loss, lsgan_gen_loss, mcc_loss, mcc_ssim_loss, LossParts,
    LossReport, SsimConfig,
};
use crate::metrics::{mean_ssim, nmse};
use crate::models::{Discriminator, Generator};
use crate::tensor::{Scalar, Tensor};

pub use checkpoint::{Checkpoint, RngState};
pub use config::{AdversarialTarget, TrainConfig};

/// Sub-seeds for generator init, discriminator init, and the loop stream,
/// derived from the config seed by splitmix64.
pub fn derive_seeds(seed: u64) -> (u64, u64, u64) {
    fn splitmix(state: &mut u64) -> u64 {
        *state = state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = *state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    let mut state = seed;
    (
        splitmix(&mut state),
        splitmix(&mut state),
        splitmix(&mut state),
    )
}

/// Instrumented invocation counts for one joint step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub gen_forward: usize,
    pub dsc_forward: usize,
    pub cycle_reconstructions: usize,
    /// Times the real-image classification loss saw a generated image.
    /// Must stay zero; incremented only by the provenance guard.
    pub clsf_real_on_generated: usize,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub losses: LossReport,
    pub counters: StepCounters,
    pub target: usize,
    pub null_set: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Provenance {
    Real,
    Generated,
}

/// Per-domain evaluation row.
#[derive(Clone, Debug)]
pub struct DomainMetrics {
    pub domain: usize,
    pub nmse_mean: f64,
    pub ssim_mean: f64,
    pub samples: usize,
}

pub struct Trainer<S: Scalar> {
    pub config: TrainConfig,
    pub gen: Generator<S>,
    pub dsc: Discriminator<S>,
    pub adam_g: AdamState<S>,
    pub adam_d: AdamState<S>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    ssim_cfg: SsimConfig,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (seed_g, seed_d, seed_loop) = derive_seeds(config.seed);
        let gen = Generator::build(config.generator_spec(), seed_g)?;
        let dsc = Discriminator::build(config.discriminator_spec(), seed_d)?;
        let adam_g = AdamState::new(config.adam, &gen.params.shapes());
        let adam_d = AdamState::new(config.adam, &dsc.params.shapes());
        Ok(Trainer {
            config,
            gen,
            dsc,
            adam_g,
            adam_d,
            rng: ChaCha8Rng::seed_from_u64(seed_loop),
            step: 0,
            ssim_cfg: SsimConfig::default(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<S>) -> Result<Self> {
        ckpt.config.validate()?;
        Ok(Trainer {
            config: ckpt.config,
            gen: ckpt.gen,
            dsc: ckpt.dsc,
            adam_g: ckpt.adam_g,
            adam_d: ckpt.adam_d,
            rng: ckpt.rng.restore(),
            step: ckpt.step,
            ssim_cfg: SsimConfig::default(),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint<S> {
        Checkpoint {
            version: checkpoint::VERSION,
            config: self.config,
            gen: self.gen.clone(),
            dsc: self.dsc.clone(),
            adam_g: self.adam_g.clone(),
            adam_d: self.adam_d.clone(),
            rng: RngState::capture(&self.rng),
            step: self.step,
        }
    }

    fn check_samples(&self, samples: &[DomainSample<S>]) -> Result<()> {
        for s in samples {
            if s.n_domains() != self.config.n_domains {
                return Err(Error::Data(format!(
                    "sample {} has {} domains, config expects {}",
                    s.subject_id,
                    s.n_domains(),
                    self.config.n_domains
                )));
            }
            for img in &s.images {
                let (c, h, w) = img.dims3()?;
                if c != self.config.in_channels
                    || h != self.config.image_size
                    || w != self.config.image_size
                {
                    return Err(Error::Data(format!(
                        "sample {} image shape ({c},{h},{w}) does not match config ({}, {s2}, {s2})",
                        s.subject_id,
                        self.config.in_channels,
                        s2 = self.config.image_size
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stacks one domain image across the batch into (B, c, h, w).
    fn stack_domain(&self, batch: &[&DomainSample<S>], domain: usize) -> Result<Tensor<S>> {
        let imgs: Vec<Tensor<S>> = batch.iter().map(|s| s.images[domain].clone()).collect();
        Tensor::stack(&imgs)
    }

    fn stack_inputs(
        &self,
        batch: &[&DomainSample<S>],
        target: usize,
        null_set: &[usize],
    ) -> Result<Tensor<S>> {
        let inputs: Vec<Tensor<S>> = batch
            .iter()
            .map(|s| assemble_input(s, target, null_set))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&inputs)
    }

    /// Generator input for a cycle pass, assembled in-graph so gradients
    /// flow through the generated image occupying slot `fake_slot`:
    /// fixed domain order, target and nulled slots zero-filled, mask last.
    fn assemble_cycle_input(
        &self,
        g: &mut Graph<S>,
        batch: &[&DomainSample<S>],
        fake: NodeId,
        fake_slot: usize,
        target: usize,
        null_set: &[usize],
    ) -> Result<NodeId> {
        let n = self.config.n_domains;
        let (b, c, h, w) = g.value(fake).dims4()?;
        let mut slabs = Vec::with_capacity(n + 1);
        for d in 0..n {
            if d == fake_slot && d != target {
                slabs.push(fake);
            } else if d == target || null_set.contains(&d) {
                slabs.push(g.constant(Tensor::zeros(vec![b, c, h, w])));
            } else {
                let stack = self.stack_domain(batch, d)?;
                slabs.push(g.constant(stack));
            }
        }
        let mask = crate::data::make_mask::<S>(target, n, h, w)?.into_tensor();
        let mask_batch = Tensor::stack(&vec![mask; b])?;
        slabs.push(g.constant(mask_batch));
        g.concat_channels(&slabs)
    }

    fn clsf_real_guarded(
        &self,
        g: &mut Graph<S>,
        counters: &mut StepCounters,
        provenance: Provenance,
        probs: NodeId,
        targets: &[usize],
    ) -> Result<NodeId> {
        if provenance == Provenance::Generated {
            counters.clsf_real_on_generated += 1;
        }
        clsf_loss(g, probs, targets)
    }

    /// One joint step: samples the target domain and input dropout, then
    /// delegates to [`Trainer::step_with`].
    pub fn joint_step(&mut self, data: &[DomainSample<S>]) -> Result<StepReport> {
        if data.is_empty() {
            return Err(Error::Data("joint step on an empty dataset".into()));
        }
        let batch: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.gen_range(0..data.len()))
            .collect();
        let target = self.rng.gen_range(0..self.config.n_domains);
        let null_set = input_dropout_sample(
            &mut self.rng,
            self.config.n_domains,
            target,
            self.config.input_dropout_rate,
        )?;
        let refs: Vec<&DomainSample<S>> = batch.iter().map(|&i| &data[i]).collect();
        self.step_with(&refs, target, &null_set, true, true)
    }

    /// Joint-step body with explicit target/null-set and phase switches;
    /// `update_d`/`update_g` gate the respective optimizer applications
    /// (used by descent tests on frozen batches).
    pub fn step_with(
        &mut self,
        batch: &[&DomainSample<S>],
        target: usize,
        null_set: &[usize],
        update_d: bool,
        update_g: bool,
    ) -> Result<StepReport> {
        for s in batch {
            if !s.is_complete() {
                return Err(Error::Data(format!(
                    "joint training requires complete samples; {} has missing domains",
                    s.subject_id
                )));
            }
        }
        let n = self.config.n_domains;
        let mut counters = StepCounters::default();

        // (3) forward: x_hat = G(complement set; target)
        let mut g = Graph::new();
        let bind_g = self.gen.bind(&mut g, true);
        let fwd_input = g.constant(self.stack_inputs(batch, target, null_set)?);
        let fake = self.gen.forward(&mut g, &bind_g, fwd_input)?;
        counters.gen_forward += 1;

        // same-domain re-generation for the cycle/both adversarial modes
        let adv_mode = self.config.adversarial_target;
        let fake_cycle = match adv_mode {
            AdversarialTarget::Forward => None,
            AdversarialTarget::Cycle | AdversarialTarget::Both => {
                let input = g.constant(self.stack_inputs(batch, target, null_set)?);
                let out = self.gen.forward(&mut g, &bind_g, input)?;
                counters.gen_forward += 1;
                Some(out)
            }
        };

        // (4) cycles: for each non-target domain, regenerate it from the set
        // containing the fake in the target slot and originals elsewhere
        let mut originals = Vec::with_capacity(n - 1);
        let mut reconstructions = Vec::with_capacity(n - 1);
        for other in (0..n).filter(|&d| d != target) {
            let cycle_null = if self.config.cycle_input_dropout {
                input_dropout_sample(&mut self.rng, n, other, self.config.input_dropout_rate)?
                    .into_iter()
                    .filter(|&d| d != target)
                    .collect()
            } else {
                Vec::new()
            };
            let input =
                self.assemble_cycle_input(&mut g, batch, fake, target, other, &cycle_null)?;
            let recon = self.gen.forward(&mut g, &bind_g, input)?;
            counters.gen_forward += 1;
            counters.cycle_reconstructions += 1;
            originals.push(g.constant(self.stack_domain(batch, other)?));
            reconstructions.push(recon);
        }

        // (5) discriminator update on a separate graph, generator frozen
        let real_stack = self.stack_domain(batch, target)?;
        let adv_values: Vec<Tensor<S>> = match adv_mode {
            AdversarialTarget::Forward => vec![g.value(fake).clone()],
            AdversarialTarget::Cycle => vec![g.value(fake_cycle.expect("cycle mode")).clone()],
            AdversarialTarget::Both => vec![
                g.value(fake).clone(),
                g.value(fake_cycle.expect("both mode")).clone(),
            ],
        };
        let batch_targets = vec![target; batch.len()];
        let (gan_dsc_value, clsf_real_value) = {
            let mut gd = Graph::new();
            let bind_d = self.dsc.bind(&mut gd, true);
            let real = gd.constant(real_stack.clone());
            let (d_real_patch, d_real_probs) =
                self.dsc
                    .forward(&mut gd, &bind_d, real, Mode::Train, &mut self.rng)?;
            counters.dsc_forward += 1;
            let mut dsc_terms = Vec::new();
            for value in &adv_values {
                let fake_const = gd.constant(value.clone());
                let (d_fake_patch, _) =
                    self.dsc
                        .forward(&mut gd, &bind_d, fake_const, Mode::Train, &mut self.rng)?;
                counters.dsc_forward += 1;
                dsc_terms.push(lsgan_dsc_loss(&mut gd, d_real_patch, d_fake_patch)?);
            }
            let mut gan_dsc = dsc_terms[0];
            for &t in &dsc_terms[1..] {
                gan_dsc = gd.add(gan_dsc, t)?;
            }
            if dsc_terms.len() > 1 {
                gan_dsc = gd.affine(gan_dsc, S::of_f64(1.0 / dsc_terms.len() as f64), S::zero());
            }
            let clsf_real = self.clsf_real_guarded(
                &mut gd,
                &mut counters,
                Provenance::Real,
                d_real_probs,
                &batch_targets,
            )?;
            let total_dsc = gd.add(gan_dsc, clsf_real)?;
            let gan_dsc_value = gd.value(gan_dsc).scalar()?.as_f64();
            let clsf_real_value = gd.value(clsf_real).scalar()?.as_f64();
            if update_d {
                gd.backward(total_dsc)?;
                let grads = self.dsc.params.grads(&gd, &bind_d);
                let mut values: Vec<Tensor<S>> =
                    self.dsc.params.iter().map(|p| p.value.clone()).collect();
                self.adam_d.step(&mut values, &grads)?;
                for (i, v) in values.into_iter().enumerate() {
                    self.dsc.params.set_value(i, v)?;
                }
            }
            (gan_dsc_value, clsf_real_value)
        };

        // (6) generator update through the (updated) frozen discriminator
        let mcc = mcc_loss(&mut g, &originals, &reconstructions)?;
        let mcc_ssim = mcc_ssim_loss(&mut g, &originals, &reconstructions, &self.ssim_cfg)?;
        let bind_d_frozen = self.dsc.bind(&mut g, false);
        let adv_nodes: Vec<NodeId> = match adv_mode {
            AdversarialTarget::Forward => vec![fake],
            AdversarialTarget::Cycle => vec![fake_cycle.expect("cycle mode")],
            AdversarialTarget::Both => vec![fake, fake_cycle.expect("both mode")],
        };
        let mut gan_terms = Vec::new();
        let mut clsf_terms = Vec::new();
        for &node in &adv_nodes {
            let (d_patch, d_probs) =
                self.dsc
                    .forward(&mut g, &bind_d_frozen, node, Mode::Train, &mut self.rng)?;
            counters.dsc_forward += 1;
            gan_terms.push(lsgan_gen_loss(&mut g, d_patch)?);
            clsf_terms.push(clsf_loss(&mut g, d_probs, &batch_targets)?);
        }
        let mut gan_gen = gan_terms[0];
        let mut clsf_fake = clsf_terms[0];
        for i in 1..gan_terms.len() {
            gan_gen = g.add(gan_gen, gan_terms[i])?;
            clsf_fake = g.add(clsf_fake, clsf_terms[i])?;
        }
        if gan_terms.len() > 1 {
            let inv = S::of_f64(1.0 / gan_terms.len() as f64);
            gan_gen = g.affine(gan_gen, inv, S::zero());
            clsf_fake = g.affine(clsf_fake, inv, S::zero());
        }

        let w = self.config.weights;
        let parts = LossParts {
            mcc: g.value(mcc).scalar()?.as_f64(),
            mcc_ssim: g.value(mcc_ssim).scalar()?.as_f64(),
            gan_gen: g.value(gan_gen).scalar()?.as_f64(),
            gan_dsc: gan_dsc_value,
            clsf_real: clsf_real_value,
            clsf_fake: g.value(clsf_fake).scalar()?.as_f64(),
        };
        // aborts with the snapshot when any term went non-finite
        let losses = aggregate(parts, w).map_err(|e| {
            Error::NonFinite {
                term: format!("{e} at step {} (target {target})", self.step),
            }
        })?;

        if update_g {
            let wm = g.affine(mcc, S::of_f64(w.mcc), S::zero());
            let ws = g.affine(mcc_ssim, S::of_f64(w.mcc_ssim), S::zero());
            let wg = g.affine(gan_gen, S::of_f64(w.gan), S::zero());
            let wc = g.affine(clsf_fake, S::of_f64(w.clsf), S::zero());
            let t0 = g.add(wm, ws)?;
            let t1 = g.add(t0, wg)?;
            let total_gen = g.add(t1, wc)?;
            g.backward(total_gen)?;
            let grads = self.gen.params.grads(&g, &bind_g);
            let mut values: Vec<Tensor<S>> =
                self.gen.params.iter().map(|p| p.value.clone()).collect();
            self.adam_g.step(&mut values, &grads)?;
            for (i, v) in values.into_iter().enumerate() {
                self.gen.params.set_value(i, v)?;
            }
        }

        self.step += 1;
        Ok(StepReport {
            losses,
            counters,
            target,
            null_set: null_set.to_vec(),
        })
    }

    /// Classifier pretraining: minimizes the real-image classification loss
    /// only. The generator and the real/fake head stay byte-identical.
    pub fn pretrain_classifier(&mut self, data: &[DomainSample<S>]) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Data("pretraining on an empty dataset".into()));
        }
        self.check_samples(data)?;
        let n = self.config.n_domains;
        for _epoch in 0..self.config.pretrain_epochs {
            // one pass over all (sample, domain) pairs, shuffled
            let mut pairs: Vec<(usize, usize)> = (0..data.len())
                .flat_map(|s| (0..n).map(move |d| (s, d)))
                .collect();
            for i in (1..pairs.len()).rev() {
                let j = self.rng.gen_range(0..=i);
                pairs.swap(i, j);
            }
            for chunk in pairs.chunks(self.config.batch_size) {
                let imgs: Vec<Tensor<S>> = chunk
                    .iter()
                    .map(|&(s, d)| data[s].images[d].clone())
                    .collect();
                let targets: Vec<usize> = chunk.iter().map(|&(_, d)| d).collect();
                let stack = Tensor::stack(&imgs)?;
                let mut gd = Graph::new();
                let bind_d = self.dsc.bind(&mut gd, true);
                let x = gd.constant(stack);
                let (_, probs) =
                    self.dsc
                        .forward(&mut gd, &bind_d, x, Mode::Train, &mut self.rng)?;
                let mut counters = StepCounters::default();
                let loss = self.clsf_real_guarded(
                    &mut gd,
                    &mut counters,
                    Provenance::Real,
                    probs,
                    &targets,
                )?;
                gd.backward(loss)?;
                let grads = self.dsc.params.grads(&gd, &bind_d);
                let mut values: Vec<Tensor<S>> =
                    self.dsc.params.iter().map(|p| p.value.clone()).collect();
                self.adam_d.step(&mut values, &grads)?;
                for (i, v) in values.into_iter().enumerate() {
                    self.dsc.params.set_value(i, v)?;
                }
            }
        }
        Ok(())
    }

    /// Held-out domain-classification accuracy of the classifier head
    /// over every (sample, domain) real image, in eval mode.
    pub fn classification_accuracy(&mut self, data: &[DomainSample<S>]) -> Result<f64> {
        let n = self.config.n_domains;
        let mut correct = 0usize;
        let mut total = 0usize;
        for sample in data {
            for d in 0..n {
                if !sample.available[d] {
                    continue;
                }
                let mut g = Graph::new();
                let bind = self.dsc.bind(&mut g, false);
                let x = g.constant(Tensor::stack(&[sample.images[d].clone()])?);
                let (_, probs) = self.dsc.forward(&mut g, &bind, x, Mode::Eval, &mut self.rng)?;
                let row = g.value(probs).data();
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
                    .map(|(i, _)| i)
                    .expect("non-empty row");
                if argmax == d {
                    correct += 1;
                }
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::Data("no images to classify".into()));
        }
        Ok(correct as f64 / total as f64)
    }

    /// Eval-mode imputation of the target domain from whatever complement
    /// images are available (missing slots zero-filled, dropout off).
    /// Output clamped to [0, 1].
    pub fn impute(&self, sample: &DomainSample<S>, target: usize) -> Result<Tensor<S>> {
        impute_with(&self.gen, sample, target)
    }

    /// Per-domain NMSE and mean SSIM over a held-out set, imputing each
    /// target from full complements.
    pub fn evaluate(&self, test: &[DomainSample<S>]) -> Result<Vec<DomainMetrics>> {
        let n = self.config.n_domains;
        let mut rows = Vec::with_capacity(n);
        for target in 0..n {
            let mut nmse_sum = 0.0;
            let mut ssim_sum = 0.0;
            let mut count = 0usize;
            for sample in test {
                if !sample.available[target] {
                    continue;
                }
                let pred = self.impute(sample, target)?;
                let truth = &sample.images[target];
                nmse_sum += nmse(&pred, truth)?;
                ssim_sum += mean_ssim(&pred, truth, &self.ssim_cfg)?;
                count += 1;
            }
            rows.push(DomainMetrics {
                domain: target,
                nmse_mean: if count > 0 { nmse_sum / count as f64 } else { f64::NAN },
                ssim_mean: if count > 0 { ssim_sum / count as f64 } else { f64::NAN },
                samples: count,
            });
        }
        Ok(rows)
    }
}

/// Standalone eval-mode imputation against a generator.
pub fn impute_with<S: Scalar>(
    gen: &Generator<S>,
    sample: &DomainSample<S>,
    target: usize,
) -> Result<Tensor<S>> {
    let input = assemble_input(sample, target, &[])?;
    let batched = Tensor::stack(&[input])?;
    let mut g = Graph::new();
    let bind: Binding = gen.params.bind(&mut g, false);
    let x = g.constant(batched);
    let y = gen.forward(&mut g, &bind, x)?;
    let out = g.value(y).map(|v| v.max(S::zero()).min(S::one()));
    let shape = out.shape()[1..].to_vec();
    out.reshaped(shape)
}

/// Outcome of a full training run.
pub struct TrainOutcome<S: Scalar> {
    pub checkpoint: Checkpoint<S>,
    pub metrics_csv: String,
    pub final_eval: Vec<DomainMetrics>,
}

pub const METRICS_HEADER: &str =
    "step,domain,nmse,ssim,loss_mcc,loss_mcc_ssim,loss_gan_gen,loss_gan_dsc,loss_clsf_real,loss_clsf_fake";

fn metrics_row(step: u64, eval: &[DomainMetrics], losses: &LossReport) -> String {
    let (nm, ss) = {
        let valid: Vec<&DomainMetrics> = eval.iter().filter(|m| m.samples > 0).collect();
        if valid.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (
                valid.iter().map(|m| m.nmse_mean).sum::<f64>() / valid.len() as f64,
                valid.iter().map(|m| m.ssim_mean).sum::<f64>() / valid.len() as f64,
            )
        }
    };
    format!(
        "{step},mean,{nm},{ss},{},{},{},{},{},{}",
        losses.mcc,
        losses.mcc_ssim,
        losses.gan_gen,
        losses.gan_dsc,
        losses.clsf_real,
        losses.clsf_fake
    )
}

/// Splits the dataset by subject per the config fractions.
pub fn split_samples<S: Scalar>(
    config: &TrainConfig,
    samples: &[DomainSample<S>],
) -> Result<(Vec<DomainSample<S>>, Vec<DomainSample<S>>, Vec<DomainSample<S>>)> {
    let ids: Vec<String> = samples.iter().map(|s| s.subject_id.clone()).collect();
    let split = split_by_subject(&ids, config.split_fractions(), config.seed)?;
    let pick = |names: &[String]| -> Vec<DomainSample<S>> {
        samples
            .iter()
            .filter(|s| names.contains(&s.subject_id))
            .cloned()
            .collect()
    };
    Ok((pick(&split.train), pick(&split.validation), pick(&split.test)))
}

/// Full run: subject split, classifier pretraining, joint steps with
/// periodic validation rows, optional checkpoint files under `out_dir`.
pub fn run<S: Scalar>(
    config: TrainConfig,
    samples: &[DomainSample<S>],
    out_dir: Option<&std::path::Path>,
) -> Result<TrainOutcome<S>> {
    let trainer = Trainer::new(config)?;
    run_trainer(trainer, samples, out_dir)
}

/// Resumes a checkpoint and continues to `config.joint_steps`.
pub fn resume<S: Scalar>(
    ckpt: Checkpoint<S>,
    samples: &[DomainSample<S>],
    out_dir: Option<&std::path::Path>,
) -> Result<TrainOutcome<S>> {
    let trainer = Trainer::from_checkpoint(ckpt)?;
    run_trainer(trainer, samples, out_dir)
}

fn run_trainer<S: Scalar>(
    mut trainer: Trainer<S>,
    samples: &[DomainSample<S>],
    out_dir: Option<&std::path::Path>,
) -> Result<TrainOutcome<S>> {
    trainer.check_samples(samples)?;
    let (train_set, val_set, _) = split_samples(&trainer.config, samples)?;
    let train_set: Vec<DomainSample<S>> =
        train_set.into_iter().filter(|s| s.is_complete()).collect();
    if train_set.is_empty() {
        return Err(Error::Data("training split has no complete samples".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let resumed = trainer.step > 0;
    if !resumed {
        trainer.pretrain_classifier(&train_set)?;
    }

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    let mut last_losses = LossReport::default();
    if !resumed {
        let eval = trainer.evaluate(&val_set)?;
        csv.push_str(&metrics_row(0, &eval, &last_losses));
        csv.push('\n');
    }

    while trainer.step < trainer.config.joint_steps {
        let report = trainer.joint_step(&train_set)?;
        last_losses = report.losses;
        let step = trainer.step;
        if step % trainer.config.eval_interval == 0 {
            let eval = trainer.evaluate(&val_set)?;
            csv.push_str(&metrics_row(step, &eval, &last_losses));
            csv.push('\n');
        }
        if step % trainer.config.checkpoint_interval == 0 && step < trainer.config.joint_steps {
            if let Some(dir) = out_dir {
                trainer.to_checkpoint().save(dir.join(format!("checkpoint_{step}.clgn")))?;
            }
        }
    }

    let checkpoint = trainer.to_checkpoint();
    let (_, _, test_set) = split_samples(&trainer.config, samples)?;
    let final_eval = trainer.evaluate(&test_set)?;
    if let Some(dir) = out_dir {
        checkpoint.save(dir.join("checkpoint.clgn"))?;
        std::fs::write(dir.join("metrics.csv"), &csv)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        metrics_csv: csv,
        final_eval,
    })
}
