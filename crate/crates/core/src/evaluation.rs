//! Domain-transfer evaluation of a trained bundle.

use cyclexplain_stats::bootstrap::mean_ci;
use cyclexplain_stats::describe::mean;
use cyclexplain_stats::{paired_t_test, TTest};
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::losses::{ms_dssim_per_sample, SsimParams};
use crate::models::ExplainerBundle;
use crate::nn::Mode;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub n: usize,
    pub n_boot: usize,
    pub mean_prob_original: MeanEstimate,
    pub mean_prob_plus: MeanEstimate,
    pub mean_prob_minus: MeanEstimate,
    /// Paired test of `C(G+(x))` against `C(x)`.
    pub test_plus: TTest,
    /// Paired test of `C(G-(x))` against `C(x)`.
    pub test_minus: TTest,
    /// Share of images with `C(G+(x)) > C(G-(x))`.
    pub fraction_plus_above_minus: f64,
    pub mean_ms_dssim_plus: f64,
    pub mean_ms_dssim_minus: f64,
}

/// Per-image classifier outputs and similarity scores.
#[derive(Debug, Clone, Default)]
pub struct TransferSamples {
    pub original: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub ms_dssim_plus: Vec<f64>,
    pub ms_dssim_minus: Vec<f64>,
}

pub fn transfer_samples(bundle: &ExplainerBundle, images: &[ImageTensor], ssim: &SsimParams) -> Result<TransferSamples> {
    let mut s = TransferSamples::default();
    for chunk in images.chunks(32) {
        let x = ImageTensor::batch(&chunk.iter().collect::<Vec<_>>())?;
        let gp = bundle.g_plus.forward(&x, Mode::Eval)?;
        let gm = bundle.g_minus.forward(&x, Mode::Eval)?;
        s.original.extend(bundle.classifier.classify_tensor(&x)?);
        s.plus.extend(bundle.classifier.classify_tensor(&gp)?);
        s.minus.extend(bundle.classifier.classify_tensor(&gm)?);
        let f64s = |t: candle_core::Tensor| -> Result<Vec<f64>> {
            Ok(t.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?)
        };
        s.ms_dssim_plus.extend(f64s(ms_dssim_per_sample(&x, &gp, ssim)?)?);
        s.ms_dssim_minus.extend(f64s(ms_dssim_per_sample(&x, &gm, ssim)?)?);
    }
    Ok(s)
}

/// Classifier probabilities on originals and both counterfactuals, with
/// bootstrap CIs of the means and paired two-tailed t tests (df = n - 1).
pub fn evaluate_transfer(bundle: &ExplainerBundle, images: &[ImageTensor], n_boot: usize, seed: u64) -> Result<TransferReport> {
    bundle.require_trained()?;
    if images.len() < 2 {
        return Err(CoreError::InvalidArgument(format!("need at least 2 images, got {}", images.len())));
    }
    let s = transfer_samples(bundle, images, &SsimParams::default())?;
    let est = |v: &[f64], stream: u64| {
        let (ci_low, ci_high) = mean_ci(v, n_boot, cyclexplain_stats::describe::derive_seed(seed, stream), 0.95);
        MeanEstimate { mean: mean(v), ci_low, ci_high }
    };
    let above = s.plus.iter().zip(&s.minus).filter(|(p, m)| p > m).count();
    Ok(TransferReport {
        n: images.len(),
        n_boot,
        mean_prob_original: est(&s.original, 0),
        mean_prob_plus: est(&s.plus, 1),
        mean_prob_minus: est(&s.minus, 2),
        test_plus: paired_t_test(&s.plus, &s.original, None)?,
        test_minus: paired_t_test(&s.minus, &s.original, None)?,
        fraction_plus_above_minus: above as f64 / images.len() as f64,
        mean_ms_dssim_plus: mean(&s.ms_dssim_plus),
        mean_ms_dssim_minus: mean(&s.ms_dssim_minus),
    })
}
