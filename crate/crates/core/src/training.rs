//! Classifier training and alternating adversarial training of the explainer.

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use cyclexplain_stats::{compute_metrics, MetricReport};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{samples_in, LabeledSample, Split};
use crate::image::ImageTensor;
use crate::losses::{
    generator_loss, GeneratorLossInputs, LossBreakdown, LossWeights, SsimParams,
};
use crate::models::{adversarial_loss, Classifier, ExplainerBundle, Generator, Slot};
use crate::nn::Mode;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(CoreError::InvalidArgument(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    fn build(&self, vars: Vec<candle_core::Var>) -> Result<AdamW> {
        let params = ParamsAdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: 0.0,
        };
        Ok(AdamW::new(vars, params)?)
    }
}

/// Stop once the mean loss of the last `window` epochs differs from the mean
/// of the `window` epochs before by less than `rel_tol` (relative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Convergence {
    pub window: usize,
    pub rel_tol: f64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self { window: 5, rel_tol: 1e-3 }
    }
}

impl Convergence {
    fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.rel_tol > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "convergence needs window >= 1 and rel_tol > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn reached(&self, epoch_losses: &[f64]) -> bool {
        let w = self.window;
        if epoch_losses.len() < 2 * w {
            return false;
        }
        let n = epoch_losses.len();
        let recent = epoch_losses[n - w..].iter().sum::<f64>() / w as f64;
        let before = epoch_losses[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
        (recent - before).abs() <= self.rel_tol * before.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: AdamConfig,
    pub weights: LossWeights,
    pub ssim: SsimParams,
    pub convergence: Convergence,
    pub seed: u64,
    /// Probe summary every this many steps (0: only after the last step).
    pub probe_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 50,
            optimizer: AdamConfig::default(),
            weights: LossWeights::default(),
            ssim: SsimParams::default(),
            convergence: Convergence::default(),
            seed: 0,
            probe_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(CoreError::InvalidArgument(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.max_epochs == 0 {
            return Err(CoreError::InvalidArgument("max_epochs must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.ssim.validate()?;
        self.convergence.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: AdamConfig,
    pub convergence: Convergence,
    pub seed: u64,
    pub threshold: f64,
    pub n_boot: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_epochs: 30,
            optimizer: AdamConfig { learning_rate: 1e-3, ..AdamConfig::default() },
            convergence: Convergence::default(),
            seed: 0,
            threshold: 0.5,
            n_boot: cyclexplain_stats::bootstrap::DEFAULT_RESAMPLES,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(CoreError::InvalidArgument(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.max_epochs == 0 {
            return Err(CoreError::InvalidArgument("max_epochs must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(CoreError::InvalidArgument(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        self.optimizer.validate()?;
        self.convergence.validate()
    }
}

/// Inverse-frequency weights `[w_0, w_1]` with `w_c = (N - n_c) / N`.
pub fn class_weights(n_neg: usize, n_pos: usize) -> Result<[f64; 2]> {
    if n_neg == 0 || n_pos == 0 {
        return Err(CoreError::Training(format!("training data must hold both classes, got {n_neg} negative and {n_pos} positive")));
    }
    let n = (n_neg + n_pos) as f64;
    Ok([n_pos as f64 / n, n_neg as f64 / n])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierTraining {
    pub class_weights: [f64; 2],
    pub epoch_losses: Vec<f64>,
    pub converged: bool,
    pub metrics: MetricReport,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Trains `classifier` in place on the train split with class-weighted cross
/// entropy and evaluates it on the test split.
pub fn train_classifier(
    classifier: &Classifier,
    samples: &[LabeledSample],
    config: &ClassifierTrainConfig,
) -> Result<ClassifierTraining> {
    config.validate()?;
    let train = samples_in(samples, Split::Train);
    let test = samples_in(samples, Split::Test);
    let n_pos = train.iter().filter(|s| s.label == 1).count();
    let weights = class_weights(train.len() - n_pos, n_pos)?;
    if test.is_empty() {
        return Err(CoreError::Training("test split is empty".into()));
    }
    let mut opt = config.optimizer.build(classifier.params().trainable())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut converged = false;
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let (mut acc, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let images: Vec<&ImageTensor> = chunk.iter().map(|&i| &train[i].image).collect();
            let x = ImageTensor::batch(&images)?;
            let labels: Vec<u32> = chunk.iter().map(|&i| train[i].label as u32).collect();
            let w: Vec<f32> = labels.iter().map(|&l| weights[l as usize] as f32).collect();
            let y = Tensor::new(labels.as_slice(), x.device())?.unsqueeze(1)?;
            let w = Tensor::new(w.as_slice(), x.device())?;
            let lp = classifier.log_probs(&x, Mode::Train)?.gather(&y, 1)?.squeeze(1)?;
            let loss = ((lp * &w)?.sum_all()?.neg()? / w.sum_all()?.to_scalar::<f32>()? as f64)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(CoreError::Diverged { step: count, detail: format!("classifier loss {value} in epoch {epoch}") });
            }
            opt.backward_step(&loss)?;
            acc += value;
            count += 1;
        }
        epoch_losses.push(acc / count.max(1) as f64);
        log::info!("classifier epoch {epoch}: loss {:.5}", epoch_losses[epoch]);
        if config.convergence.reached(&epoch_losses) {
            converged = true;
            break;
        }
    }
    let images: Vec<&ImageTensor> = test.iter().map(|s| &s.image).collect();
    let probs = classifier.classify_batch(&images)?;
    let labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let metrics = compute_metrics(&labels, &probs, config.threshold, config.n_boot, config.seed)?;
    Ok(ClassifierTraining { class_weights: weights, epoch_losses, converged, metrics })
}

/// Mean classifier output on held-out images and their two counterfactuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub mean_prob_original: f64,
    pub mean_prob_plus: f64,
    pub mean_prob_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub g_plus: LossBreakdown,
    pub g_minus: LossBreakdown,
    pub d_plus: f64,
    pub d_minus: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSummary>,
}

impl StepRecord {
    fn finite(&self) -> bool {
        [self.g_plus.total, self.g_minus.total, self.d_plus, self.d_minus].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub epoch_losses: Vec<f64>,
    pub converged: bool,
}

impl TrainLog {
    /// One JSON object per line, one line per optimization step.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn probe_summary(bundle: &ExplainerBundle, images: &[ImageTensor]) -> Result<ProbeSummary> {
    let (mut o, mut p, mut m) = (0.0, 0.0, 0.0);
    for chunk in images.chunks(32) {
        let x = ImageTensor::batch(&chunk.iter().collect::<Vec<_>>())?;
        let sum = |t: &Tensor| -> Result<f64> { Ok(bundle.classifier.classify_tensor(t)?.iter().sum()) };
        o += sum(&x)?;
        p += sum(&bundle.g_plus.forward(&x, Mode::Eval)?)?;
        m += sum(&bundle.g_minus.forward(&x, Mode::Eval)?)?;
    }
    let n = images.len().max(1) as f64;
    Ok(ProbeSummary { mean_prob_original: o / n, mean_prob_plus: p / n, mean_prob_minus: m / n })
}

fn trainable(g: &Generator) -> Result<Vec<candle_core::Var>> {
    g.params()
        .map(|s| s.trainable())
        .ok_or_else(|| CoreError::State("identity generators cannot be trained".into()))
}

/// Alternating training: per batch, one discriminator update on detached
/// counterfactuals, then one joint update of both generators with the
/// discriminators and the classifier held fixed. Labels are never consulted.
pub fn train_explainer(
    bundle: &mut ExplainerBundle,
    images: &[ImageTensor],
    probe: &[ImageTensor],
    config: &TrainConfig,
    mut on_record: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<TrainLog> {
    config.validate()?;
    config.ssim.check_size(bundle.spec.input_size)?;
    if images.len() < config.batch_size {
        return Err(CoreError::Training(format!(
            "{} training images cannot fill one batch of {}",
            images.len(),
            config.batch_size
        )));
    }
    bundle.verify_classifier()?;

    let mut g_vars = trainable(&bundle.g_plus)?;
    g_vars.extend(trainable(&bundle.g_minus)?);
    let mut d_vars = bundle.d_plus.params().trainable();
    d_vars.extend(bundle.d_minus.params().trainable());
    let mut g_opt = config.optimizer.build(g_vars)?;
    let mut d_opt = config.optimizer.build(d_vars)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let b = config.batch_size;
    let steps_per_epoch = images.len() / b;
    let mut records = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut converged = false;
    let mut step = 0;
    let total_steps = steps_per_epoch * config.max_epochs;

    'epochs: for epoch in 0..config.max_epochs {
        let mut order_a: Vec<usize> = (0..images.len()).collect();
        let mut order_b = order_a.clone();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for k in 0..steps_per_epoch {
            let pick = |order: &[usize]| -> Result<Tensor> {
                ImageTensor::batch(&order[k * b..(k + 1) * b].iter().map(|&i| &images[i]).collect::<Vec<_>>())
            };
            let x_a = pick(&order_a)?;
            let x_b = pick(&order_b)?;

            let gx_plus = bundle.g_plus.forward(&x_a, Mode::Train)?;
            let gx_minus = bundle.g_minus.forward(&x_a, Mode::Train)?;

            let perm_plus = bundle.d_plus.random_permutation(b, &mut rng)?;
            let perm_minus = bundle.d_minus.random_permutation(b, &mut rng)?;
            let d_plus_loss = adversarial_loss(
                &bundle.d_plus.forward(&gx_plus.detach(), &x_b, &perm_plus, Mode::Batch)?,
                Slot::Second,
            )?;
            let d_minus_loss = adversarial_loss(
                &bundle.d_minus.forward(&gx_minus.detach(), &x_b, &perm_minus, Mode::Batch)?,
                Slot::Second,
            )?;
            let d_values = (scalar(&d_plus_loss)?, scalar(&d_minus_loss)?);
            if d_values.0.is_finite() && d_values.1.is_finite() {
                d_opt.backward_step(&(d_plus_loss + d_minus_loss)?)?;
            }

            let perm_plus = bundle.d_plus.random_permutation(b, &mut rng)?;
            let perm_minus = bundle.d_minus.random_permutation(b, &mut rng)?;
            let plus = generator_loss(
                &GeneratorLossInputs {
                    x_a: &x_a,
                    x_b: &x_b,
                    target_label: 1,
                    g_self: &bundle.g_plus,
                    g_other: &bundle.g_minus,
                    d_self: &bundle.d_plus,
                    classifier: &bundle.classifier,
                    perm: &perm_plus,
                    mode: Mode::Train,
                    generated: Some(&gx_plus),
                },
                &config.weights,
                &config.ssim,
            )?;
            let minus = generator_loss(
                &GeneratorLossInputs {
                    x_a: &x_a,
                    x_b: &x_b,
                    target_label: 0,
                    g_self: &bundle.g_minus,
                    g_other: &bundle.g_plus,
                    d_self: &bundle.d_minus,
                    classifier: &bundle.classifier,
                    perm: &perm_minus,
                    mode: Mode::Train,
                    generated: Some(&gx_minus),
                },
                &config.weights,
                &config.ssim,
            )?;
            let mut record = StepRecord {
                step,
                epoch,
                g_plus: plus.terms,
                g_minus: minus.terms,
                d_plus: d_values.0,
                d_minus: d_values.1,
                probe: None,
            };
            if !record.finite() {
                let detail = serde_json::to_string(&record)?;
                on_record(&record)?;
                return Err(CoreError::Diverged { step, detail });
            }
            g_opt.backward_step(&(plus.total + minus.total)?)?;
            epoch_sum += record.g_plus.total + record.g_minus.total;

            let epoch_done = k + 1 == steps_per_epoch;
            if epoch_done {
                epoch_losses.push(epoch_sum / steps_per_epoch as f64);
                log::info!("explainer epoch {epoch}: generator loss {:.5}", epoch_losses[epoch]);
                converged = config.convergence.reached(&epoch_losses);
            }
            let last = step + 1 == total_steps || converged;
            if !probe.is_empty() && ((config.probe_every > 0 && (step + 1) % config.probe_every == 0) || last) {
                record.probe = Some(probe_summary(bundle, probe)?);
            }
            on_record(&record)?;
            records.push(record);
            step += 1;
            if converged {
                break 'epochs;
            }
        }
    }
    bundle.verify_classifier()?;
    bundle.trained = true;
    Ok(TrainLog { records, epoch_losses, converged })
}
