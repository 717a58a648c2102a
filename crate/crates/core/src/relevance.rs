//! Signed relevance maps and their visualization.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::image::{ImageTensor, RawImage};
use crate::models::ExplainerBundle;
use crate::nn::Mode;
use crate::{CoreError, Result};

/// Square row-major image with unrestricted sign.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedImage {
    pub size: usize,
    pub values: Vec<f32>,
}

impl SignedImage {
    fn difference(a: &ImageTensor, b: &ImageTensor) -> Self {
        let values = a.pixels().iter().zip(b.pixels()).map(|(x, y)| x - y).collect();
        Self { size: a.size(), values }
    }

    pub fn max_abs(&self) -> f32 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
pub struct RelevanceMap {
    pub source_id: String,
    pub source: ImageTensor,
    pub counterfactual_plus: ImageTensor,
    pub counterfactual_minus: ImageTensor,
    /// `G+(x) - x`
    pub delta_plus: SignedImage,
    /// `G-(x) - x`
    pub delta_minus: SignedImage,
    /// `G+(x) - G-(x)`
    pub relevance: SignedImage,
    pub prob_before: f64,
    pub prob_plus: f64,
    pub prob_minus: f64,
}

/// Explains one image. The bundle must be trained.
pub fn explain(bundle: &ExplainerBundle, id: &str, x: &ImageTensor) -> Result<RelevanceMap> {
    Ok(explain_batch(bundle, &[(id.to_string(), x.clone())])?.remove(0))
}

pub fn explain_batch(bundle: &ExplainerBundle, items: &[(String, ImageTensor)]) -> Result<Vec<RelevanceMap>> {
    bundle.require_trained()?;
    explain_unchecked(bundle, items)
}

/// As [`explain_batch`] without the trained-state check.
pub fn explain_unchecked(bundle: &ExplainerBundle, items: &[(String, ImageTensor)]) -> Result<Vec<RelevanceMap>> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(32) {
        let refs: Vec<&ImageTensor> = chunk.iter().map(|(_, x)| x).collect();
        let x = ImageTensor::batch(&refs)?;
        if refs[0].size() != bundle.spec.input_size {
            return Err(CoreError::Shape(format!(
                "bundle expects {0}x{0} images, got {1}x{1}",
                bundle.spec.input_size,
                refs[0].size()
            )));
        }
        let gp = bundle.g_plus.forward(&x, Mode::Eval)?;
        let gm = bundle.g_minus.forward(&x, Mode::Eval)?;
        let p0 = bundle.classifier.classify_tensor(&x)?;
        let pp = bundle.classifier.classify_tensor(&gp)?;
        let pm = bundle.classifier.classify_tensor(&gm)?;
        let gp = ImageTensor::unbatch(&gp)?;
        let gm = ImageTensor::unbatch(&gm)?;
        for (i, (id, src)) in chunk.iter().enumerate() {
            out.push(RelevanceMap {
                source_id: id.clone(),
                source: src.clone(),
                delta_plus: SignedImage::difference(&gp[i], src),
                delta_minus: SignedImage::difference(&gm[i], src),
                relevance: SignedImage::difference(&gp[i], &gm[i]),
                counterfactual_plus: gp[i].clone(),
                counterfactual_minus: gm[i].clone(),
                prob_before: p0[i],
                prob_plus: pp[i],
                prob_minus: pm[i],
            });
        }
    }
    Ok(out)
}

/// Overlay opacity scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `1 / p99(|R|)`
    Auto,
    Fixed(f64),
}

impl Gain {
    pub fn resolve(self, relevance: &SignedImage) -> Result<f64> {
        match self {
            Gain::Fixed(g) if g > 0.0 && g.is_finite() => Ok(g),
            Gain::Fixed(g) => Err(CoreError::InvalidArgument(format!("gain must be positive, got {g}"))),
            Gain::Auto => {
                let mut abs: Vec<f64> = relevance.values.iter().map(|v| v.abs() as f64).collect();
                abs.sort_by(f64::total_cmp);
                let q = cyclexplain_stats::describe::quantile_sorted(&abs, 0.99);
                Ok(if q > 0.0 { 1.0 / q } else { 1.0 })
            }
        }
    }
}

pub const POSITIVE_COLOR: [u8; 3] = [255, 0, 0];
pub const NEGATIVE_COLOR: [u8; 3] = [0, 0, 255];

/// Grayscale image tinted red where `R > 0` and blue where `R < 0`, with
/// opacity `clamp(|R| * gain, 0, 1)`.
pub fn render_overlay(x: &ImageTensor, relevance: &SignedImage, gain: f64) -> Result<RgbImage> {
    if relevance.size != x.size() || relevance.values.len() != x.pixels().len() {
        return Err(CoreError::Shape(format!("image {0}x{0} vs relevance {1}x{1}", x.size(), relevance.size)));
    }
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(CoreError::InvalidArgument(format!("gain must be positive, got {gain}")));
    }
    let s = x.size() as u32;
    let mut img = RgbImage::new(s, s);
    for (k, (&v, &r)) in x.pixels().iter().zip(&relevance.values).enumerate() {
        let gray = v as f64 * 255.0;
        let alpha = (r.abs() as f64 * gain).clamp(0.0, 1.0);
        let tint = if r > 0.0 { POSITIVE_COLOR } else { NEGATIVE_COLOR };
        let mix = |c: u8| ((1.0 - alpha) * gray + alpha * c as f64).round().clamp(0.0, 255.0) as u8;
        let px = if r == 0.0 { [gray.round() as u8; 3] } else { [mix(tint[0]), mix(tint[1]), mix(tint[2])] };
        img.put_pixel(k as u32 % s, k as u32 / s, Rgb(px));
    }
    Ok(img)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRecord {
    pub source_id: String,
    pub prob_before: f64,
    pub prob_plus: f64,
    pub prob_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub overlay: PathBuf,
    pub relevance: PathBuf,
    pub sidecar: PathBuf,
    pub probabilities: PathBuf,
}

/// Writes `<id>_overlay.png`, `<id>_relevance.f32` with its `.json` sidecar,
/// and `<id>_probabilities.json` into `dir`.
pub fn export_map(map: &RelevanceMap, dir: &Path, gain: Gain) -> Result<ExportedFiles> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let g = gain.resolve(&map.relevance)?;
    let id = &map.source_id;
    let files = ExportedFiles {
        overlay: dir.join(format!("{id}_overlay.png")),
        relevance: dir.join(format!("{id}_relevance.f32")),
        sidecar: RawImage::sidecar_path(&dir.join(format!("{id}_relevance.f32"))),
        probabilities: dir.join(format!("{id}_probabilities.json")),
    };
    render_overlay(&map.source, &map.relevance, g)?
        .save(&files.overlay)
        .map_err(|e| CoreError::io(&files.overlay, e))?;
    let raw = RawImage { height: map.relevance.size, width: map.relevance.size, data: map.relevance.values.clone() };
    raw.write(&files.relevance, Some(g))?;
    let record = ProbabilityRecord {
        source_id: id.clone(),
        prob_before: map.prob_before,
        prob_plus: map.prob_plus,
        prob_minus: map.prob_minus,
    };
    fs::write(&files.probabilities, serde_json::to_string_pretty(&record)?)
        .map_err(|e| CoreError::io(&files.probabilities, e))?;
    Ok(files)
}
