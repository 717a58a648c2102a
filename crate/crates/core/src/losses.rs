//! Differentiable loss terms on `(N, 1, S, S)` image batches.
//!
//! Tensor functions are dtype-generic (f32 for training, f64 for gradient
//! checks); the `ImageTensor` wrappers evaluate in f64.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::models::{adversarial_loss, Classifier, Discriminator, Generator, Slot, SlotPermutation};
use crate::nn::{box_mean, Mode};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DssimForm {
    /// `(1 - ssim) / 2`, zero at identity.
    #[default]
    Standard,
    /// `1 - ssim / 2`, which is 0.5 at identity.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    pub window: usize,
    pub n_scales: usize,
    pub form: DssimForm,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { c1: 0.01, c2: 0.03, window: 7, n_scales: 3, form: DssimForm::Standard }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(CoreError::InvalidArgument(format!("c1, c2 must be positive, got {}, {}", self.c1, self.c2)));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(CoreError::InvalidArgument(format!("window must be odd and at least 3, got {}", self.window)));
        }
        if self.n_scales == 0 {
            return Err(CoreError::InvalidArgument("n_scales must be at least 1".into()));
        }
        Ok(())
    }

    /// Smallest image side the multiscale loss accepts.
    pub fn min_size(&self) -> usize {
        self.window << (self.n_scales - 1)
    }

    pub fn check_size(&self, size: usize) -> Result<()> {
        self.validate()?;
        if size < self.min_size() {
            return Err(CoreError::InvalidArgument(format!(
                "image size {size} too small for {} scales of window {} (needs {})",
                self.n_scales,
                self.window,
                self.min_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cycle: f64,
    pub similarity: f64,
    pub adversarial: f64,
    pub activation: f64,
    /// Share of the L1 term in the cycle loss; the rest goes to MS-DSSIM.
    pub l1_in_cycle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cycle: 1.0, similarity: 1.0, adversarial: 1.0, activation: 1.0, l1_in_cycle: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cycle", self.cycle),
            ("similarity", self.similarity),
            ("adversarial", self.adversarial),
            ("activation", self.activation),
            ("l1_in_cycle", self.l1_in_cycle),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::InvalidArgument(format!("weight {name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.l1_in_cycle > 1.0 {
            return Err(CoreError::InvalidArgument(format!("l1_in_cycle must not exceed 1, got {}", self.l1_in_cycle)));
        }
        Ok(())
    }
}

fn same_shape(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(CoreError::Shape(format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    let (_, c, _, _) = x.dims4()?;
    if c != 1 {
        return Err(CoreError::Shape(format!("expected one channel, got {c}")));
    }
    Ok(())
}

/// Mean local SSIM per sample, shape `(N,)`. Windows lie fully inside the image.
pub fn ssim_per_sample(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<Tensor> {
    same_shape(x, y)?;
    p.validate()?;
    let (n, _, h, w) = x.dims4()?;
    if h < p.window || w < p.window {
        return Err(CoreError::InvalidArgument(format!("{h}x{w} image smaller than window {}", p.window)));
    }
    let k = p.window;
    let stack = Tensor::cat(&[x, y, &x.sqr()?, &y.sqr()?, &(x * y)?], 1)?;
    let m = box_mean(&stack, k)?;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let m = m.reshape((n, 5, ho, wo))?;
    let part = |i: usize| m.narrow(1, i, 1);
    let (mx, my, exx, eyy, exy) = (part(0)?, part(1)?, part(2)?, part(3)?, part(4)?);
    let mxy = (&mx * &my)?;
    let mxx = mx.sqr()?;
    let myy = my.sqr()?;
    let vx = (exx - &mxx)?;
    let vy = (eyy - &myy)?;
    let cov = (exy - &mxy)?;
    let num = (((mxy * 2.0)? + p.c1)? * ((cov * 2.0)? + p.c2)?)?;
    let den = (((mxx + myy)? + p.c1)? * ((vx + vy)? + p.c2)?)?;
    Ok((num / den)?.reshape((n, ho * wo))?.mean(D::Minus1)?)
}

pub fn dssim_per_sample(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<Tensor> {
    let s = ssim_per_sample(x, y, p)?;
    Ok(match p.form {
        DssimForm::Standard => s.affine(-0.5, 0.5)?,
        DssimForm::Literal => s.affine(-0.5, 1.0)?,
    })
}

/// Mean DSSIM over `n_scales` dyadic scales, per sample.
pub fn ms_dssim_per_sample(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<Tensor> {
    same_shape(x, y)?;
    let (_, _, h, w) = x.dims4()?;
    p.check_size(h.min(w))?;
    let (mut xs, mut ys) = (x.clone(), y.clone());
    let mut acc = dssim_per_sample(&xs, &ys, p)?;
    for _ in 1..p.n_scales {
        xs = xs.avg_pool2d(2)?;
        ys = ys.avg_pool2d(2)?;
        acc = (acc + dssim_per_sample(&xs, &ys, p)?)?;
    }
    Ok((acc / p.n_scales as f64)?)
}

pub fn ms_dssim(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<Tensor> {
    Ok(ms_dssim_per_sample(x, y, p)?.mean_all()?)
}

pub fn l1_per_sample(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    same_shape(x, y)?;
    Ok((x - y)?.abs()?.flatten_from(1)?.mean(D::Minus1)?)
}

/// `w * mean|x - x_rec| + (1 - w) * ms_dssim(x, x_rec)` with `w = l1_weight`.
pub fn cycle_loss_per_sample(x: &Tensor, x_rec: &Tensor, p: &SsimParams, l1_weight: f64) -> Result<Tensor> {
    let l1 = l1_per_sample(x, x_rec)?;
    let ms = ms_dssim_per_sample(x, x_rec, p)?;
    Ok(((l1 * l1_weight)? + (ms * (1.0 - l1_weight))?)?)
}

pub fn cycle_loss(x: &Tensor, x_rec: &Tensor, p: &SsimParams, l1_weight: f64) -> Result<Tensor> {
    Ok(cycle_loss_per_sample(x, x_rec, p, l1_weight)?.mean_all()?)
}

pub fn similarity_loss(x: &Tensor, gx: &Tensor, p: &SsimParams) -> Result<Tensor> {
    ms_dssim(x, gx, p)
}

pub const PROB_EPS: f64 = 1e-7;

/// Negative log-likelihood of a binary label under probability `y_hat` of class 1.
pub fn cross_entropy(y: u8, y_hat: f64) -> f64 {
    let p = y_hat.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Cross entropy of the classifier output against a target label.
pub fn am_loss(target_label: u8, classifier_prob: f64) -> f64 {
    cross_entropy(target_label, classifier_prob)
}

/// Mean negative log-probability of `target` given per-row log-probabilities
/// along dimension 1, with probabilities clamped to `[eps, 1 - eps]`.
pub fn nll_of_class(log_probs: &Tensor, target: usize) -> Result<Tensor> {
    let lp = log_probs.narrow(1, target, 1)?;
    let lo = PROB_EPS.ln();
    let hi = (1.0 - PROB_EPS).ln();
    Ok(lp.clamp(lo, hi)?.neg()?.mean_all()?)
}

fn image_pair(x: &ImageTensor, y: &ImageTensor) -> Result<(Tensor, Tensor)> {
    if x.size() != y.size() {
        return Err(CoreError::Shape(format!("{0}x{0} vs {1}x{1}", x.size(), y.size())));
    }
    Ok((x.to_tensor()?.to_dtype(DType::F64)?, y.to_tensor()?.to_dtype(DType::F64)?))
}

pub mod image_level {
    //! Scalar losses on single images.

    use super::*;

    fn scalar(t: Tensor) -> Result<f64> {
        Ok(t.mean_all()?.to_scalar::<f64>()?)
    }

    pub fn ssim(x: &ImageTensor, y: &ImageTensor, p: &SsimParams) -> Result<f64> {
        let (a, b) = image_pair(x, y)?;
        scalar(ssim_per_sample(&a, &b, p)?)
    }

    pub fn dssim(x: &ImageTensor, y: &ImageTensor, p: &SsimParams) -> Result<f64> {
        let (a, b) = image_pair(x, y)?;
        scalar(dssim_per_sample(&a, &b, p)?)
    }

    pub fn ms_dssim(x: &ImageTensor, y: &ImageTensor, p: &SsimParams) -> Result<f64> {
        let (a, b) = image_pair(x, y)?;
        scalar(ms_dssim_per_sample(&a, &b, p)?)
    }

    pub fn cycle_loss(x: &ImageTensor, x_rec: &ImageTensor, p: &SsimParams, l1_weight: f64) -> Result<f64> {
        let (a, b) = image_pair(x, x_rec)?;
        scalar(cycle_loss_per_sample(&a, &b, p, l1_weight)?)
    }

    pub fn similarity_loss(x: &ImageTensor, gx: &ImageTensor, p: &SsimParams) -> Result<f64> {
        ms_dssim(x, gx, p)
    }
}

/// Unweighted loss terms of one generator, plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cycle: f64,
    pub similarity: f64,
    pub adversarial: f64,
    pub activation: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.cycle * self.cycle + w.similarity * self.similarity + w.adversarial * self.adversarial + w.activation * self.activation
    }
}

pub struct GeneratorLoss {
    pub total: Tensor,
    pub terms: LossBreakdown,
}

/// Networks and data entering the loss of one generator.
pub struct GeneratorLossInputs<'a> {
    pub x_a: &'a Tensor,
    pub x_b: &'a Tensor,
    pub target_label: u8,
    pub g_self: &'a Generator,
    pub g_other: &'a Generator,
    pub d_self: &'a Discriminator,
    pub classifier: &'a Classifier,
    pub perm: &'a SlotPermutation,
    /// Normalization mode for `g_self` on `x_a`; every other pass is side-effect free.
    pub mode: Mode,
    /// `g_self(x_a)` when already computed with `mode`.
    pub generated: Option<&'a Tensor>,
}

/// Cycle + similarity + adversarial + activation-maximization terms.
///
/// The adversarial target claims the generated image (first slot) is real;
/// the activation term scores the classifier on the generated image.
pub fn generator_loss(inp: &GeneratorLossInputs<'_>, w: &LossWeights, p: &SsimParams) -> Result<GeneratorLoss> {
    let gx = match inp.generated {
        Some(g) => g.clone(),
        None => inp.g_self.forward(inp.x_a, inp.mode)?,
    };
    let rec = inp.g_other.forward(&gx, inp.mode.passive())?;
    let cycle = cycle_loss(inp.x_a, &rec, p, w.l1_in_cycle)?;
    let similarity = similarity_loss(inp.x_a, &gx, p)?;
    let judged = inp.d_self.forward(&gx, inp.x_b, inp.perm, Mode::Batch)?;
    let adversarial = adversarial_loss(&judged, Slot::First)?;
    let activation = nll_of_class(&inp.classifier.log_probs(&gx, Mode::Eval)?, inp.target_label as usize)?;
    let total = ((((&cycle * w.cycle)? + (&similarity * w.similarity)?)? + (&adversarial * w.adversarial)?)?
        + (&activation * w.activation)?)?;
    let f = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let terms = LossBreakdown {
        cycle: f(&cycle)?,
        similarity: f(&similarity)?,
        adversarial: f(&adversarial)?,
        activation: f(&activation)?,
        total: f(&total)?,
    };
    Ok(GeneratorLoss { total, terms })
}
