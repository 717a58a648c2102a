//! Labeled datasets: a synthetic two-class task and a manifest loader.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::{ImageTensor, RawImage};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Split {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(CoreError::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: ImageTensor,
    pub label: u8,
    pub split: Option<Split>,
    pub median_rating: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_total: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_train_pos: usize,
    pub n_train_neg: usize,
    pub n_test_pos: usize,
    pub n_test_neg: usize,
}

impl DatasetSummary {
    pub fn of(samples: &[LabeledSample]) -> Self {
        let mut s = DatasetSummary { n_total: samples.len(), ..Default::default() };
        for x in samples {
            let pos = x.label == 1;
            if pos {
                s.n_pos += 1
            } else {
                s.n_neg += 1
            }
            match (x.split, pos) {
                (Some(Split::Train), true) => s.n_train_pos += 1,
                (Some(Split::Train), false) => s.n_train_neg += 1,
                (Some(Split::Test), true) => s.n_test_pos += 1,
                (Some(Split::Test), false) => s.n_test_neg += 1,
                (None, _) => {}
            }
        }
        s
    }
}

pub fn samples_in(samples: &[LabeledSample], split: Split) -> Vec<&LabeledSample> {
    samples.iter().filter(|s| s.split == Some(split)).collect()
}

/// Binary mask over an image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub size: usize,
    pub inside: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.inside.iter().filter(|b| **b).count()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub samples: Vec<LabeledSample>,
    /// Lesion region of each sample, aligned with `samples`.
    pub masks: Vec<Mask>,
}

const BACKGROUND: f64 = 0.25;
const BRIGHT: f64 = 0.85;
const DIM: f64 = 0.55;

/// Two-class images: a bright irregular blob (label 1) or a dim smooth
/// ellipse (label 0) on a textured background. Labels alternate by index.
/// The structure sits near the image centre, as in lesion-centred crops.
/// Both classes also carry two off-centre vessel-like lines of random width
/// and brightness, which are not part of the mask.
pub fn generate_synthetic_dataset(n: usize, seed: u64, size: usize) -> Result<SyntheticDataset> {
    if n < 2 {
        return Err(CoreError::InvalidArgument(format!("n must be at least 2, got {n}")));
    }
    if size < 16 {
        return Err(CoreError::InvalidArgument(format!("size must be at least 16, got {size}")));
    }
    let mut samples = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let label = (i % 2) as u8;
        let (pixels, inside) = synthetic_image(&mut rng, size, label == 1);
        samples.push(LabeledSample {
            id: format!("syn{i:05}"),
            image: ImageTensor::from_clamped(size, pixels)?,
            label,
            split: None,
            median_rating: None,
        });
        masks.push(Mask { size, inside });
    }
    Ok(SyntheticDataset { samples, masks })
}

fn synthetic_image(rng: &mut ChaCha8Rng, size: usize, irregular: bool) -> (Vec<f32>, Vec<bool>) {
    let s = size as f64;
    let texture = smoothed_noise(rng, size);
    let cy = rng.random_range(0.45..0.55) * s;
    let cx = rng.random_range(0.45..0.55) * s;
    let r0 = rng.random_range(0.12..0.17) * s;

    // boundary radius as a function of angle
    let boundary: Box<dyn Fn(f64) -> f64> = if irregular {
        let harmonics: Vec<(f64, f64, f64)> = (3..=5)
            .map(|k| (k as f64, rng.random_range(0.10..0.20), rng.random_range(0.0..2.0 * PI)))
            .collect();
        Box::new(move |t: f64| r0 * (1.0 + harmonics.iter().map(|(k, a, p)| a * (k * t + p).cos()).sum::<f64>()))
    } else {
        let e = rng.random_range(0.05..0.15);
        let rot = rng.random_range(0.0..PI);
        let (a, b) = (r0 * (1.0 + e), r0 * (1.0 - e));
        Box::new(move |t: f64| {
            let u = t - rot;
            a * b / ((b * u.cos()).powi(2) + (a * u.sin()).powi(2)).sqrt()
        })
    };
    let level = if irregular { BRIGHT } else { DIM };
    let vessels: Vec<Vessel> = (0..2).map(|_| Vessel::random(rng, s)).collect();

    let mut pixels = Vec::with_capacity(size * size);
    let mut inside = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            let d = dy.hypot(dx);
            let rb = boundary(dy.atan2(dx));
            let w = 1.0 / (1.0 + (-(rb - d) / 0.7).exp());
            let mut bg = BACKGROUND + texture[y * size + x];
            for v in &vessels {
                bg += v.weight(y as f64 + 0.5 - s / 2.0, x as f64 + 0.5 - s / 2.0) * (v.level - bg);
            }
            pixels.push((bg + w * (level - bg)) as f32);
            inside.push(d <= rb);
        }
    }
    (pixels, inside)
}

struct Vessel {
    angle: f64,
    offset: f64,
    bend: f64,
    half_width: f64,
    level: f64,
}

impl Vessel {
    fn random(rng: &mut ChaCha8Rng, s: f64) -> Self {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Self {
            angle: rng.random_range(0.0..PI),
            offset: side * rng.random_range(0.25..0.5) * s,
            bend: rng.random_range(-0.5..0.5) / s,
            half_width: rng.random_range(0.5..3.0),
            level: rng.random_range(DIM - 0.1..BRIGHT),
        }
    }

    /// Soft membership of the point `(dy, dx)` relative to the image centre.
    fn weight(&self, dy: f64, dx: f64) -> f64 {
        let (sin, cos) = self.angle.sin_cos();
        let along = dx * cos + dy * sin;
        let across = dx * sin - dy * cos - self.offset + self.bend * along * along;
        1.0 / (1.0 + (-(self.half_width - across.abs()) / 0.5).exp())
    }
}

/// Zero-mean texture: white noise smoothed by two box-blur passes.
fn smoothed_noise(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let mut field: Vec<f64> = (0..size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    for _ in 0..2 {
        field = box_blur(&field, size, 2);
    }
    let sd = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt().max(1e-12);
    field.iter().map(|v| 0.06 * v / sd).collect()
}

fn box_blur(field: &[f64], size: usize, radius: isize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        let c = |v: isize| v.clamp(0, size as isize - 1) as usize;
        field[c(y) * size + c(x)]
    };
    let n = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = vec![0.0; field.len()];
    for y in 0..size as isize {
        for x in 0..size as isize {
            let mut acc = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    acc += at(y + dy, x + dx);
                }
            }
            out[y as usize * size + x as usize] = acc / n;
        }
    }
    out
}

const MANIFEST_HEADER: [&str; 5] = ["id", "path", "label", "median_rating", "split"];

/// Loads a manifest CSV (`id,path,label,median_rating,split`).
///
/// Rows rated exactly 3 are dropped; otherwise a rating above 3 means label 1
/// and an absent rating defers to the label column. Intensities are min-max
/// rescaled over the whole dataset.
pub fn load_manifest(path: &Path, expected_size: Option<usize>) -> Result<(Vec<LabeledSample>, DatasetSummary)> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    if text.trim().is_empty() {
        return Ok((Vec::new(), DatasetSummary::default()));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CoreError::io(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != MANIFEST_HEADER {
        return Err(CoreError::Load(format!(
            "{}: header must be {}, found {}",
            path.display(),
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }

    let mut rows: Vec<(String, RawImage, u8, Option<Split>, Option<f64>)> = Vec::new();
    let mut ids = HashSet::new();
    let mut size = expected_size;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let fail = |msg: String| CoreError::Load(format!("{} row {row}: {msg}", path.display()));
        let rec = rec.map_err(|e| fail(e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(fail("empty id".into()));
        }
        let rating = match field(3) {
            "" => None,
            v => Some(v.parse::<f64>().ok().filter(|r| r.is_finite()).ok_or_else(|| fail(format!("bad median_rating {v:?}")))?),
        };
        let label = match (rating, field(2)) {
            (Some(r), _) if r == 3.0 => continue,
            (Some(r), _) => (r > 3.0) as u8,
            (None, "0") => 0,
            (None, "1") => 1,
            (None, "") => return Err(fail("neither label nor median_rating given".into())),
            (None, v) => return Err(fail(format!("label must be 0 or 1, got {v:?}"))),
        };
        let split = match field(4) {
            "" => None,
            v => Some(v.parse::<Split>().map_err(|e| fail(e.to_string()))?),
        };
        if !ids.insert(id.clone()) {
            return Err(fail(format!("duplicate id {id:?}")));
        }
        let img_path = base.join(field(1));
        let img = read_unscaled(&img_path).map_err(|e| fail(e.to_string()))?;
        if img.height != img.width {
            return Err(fail(format!("image is {}x{}, not square", img.height, img.width)));
        }
        match size {
            Some(s) if s != img.height => {
                return Err(fail(format!("image size {} does not match expected {s}", img.height)))
            }
            _ => size = Some(img.height),
        }
        if img.data.iter().any(|v| !v.is_finite()) {
            return Err(fail("image contains non-finite values".into()));
        }
        rows.push((id, img, label, split, rating));
    }

    let assigned = rows.iter().filter(|r| r.3.is_some()).count();
    if assigned != 0 && assigned != rows.len() {
        return Err(CoreError::Load(format!(
            "{}: split column set on {assigned} of {} rows; fill all or none",
            path.display(),
            rows.len()
        )));
    }

    let (lo, hi) = rows
        .iter()
        .flat_map(|r| r.1.data.iter())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let span = hi - lo;
    let mut samples = Vec::with_capacity(rows.len());
    for (id, img, label, split, median_rating) in rows {
        let pixels = if span > 0.0 {
            img.data.iter().map(|v| (v - lo) / span).collect()
        } else {
            img.data.iter().map(|v| v.clamp(0.0, 1.0)).collect()
        };
        samples.push(LabeledSample {
            id,
            image: ImageTensor::from_clamped(img.height, pixels)?,
            label,
            split,
            median_rating,
        });
    }
    let summary = DatasetSummary::of(&samples);
    Ok((samples, summary))
}

fn read_unscaled(path: &Path) -> Result<RawImage> {
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let img = ImageTensor::read(path)?;
        Ok(RawImage { height: img.size(), width: img.size(), data: img.pixels().to_vec() })
    } else {
        RawImage::read(path)
    }
}

/// Assigns splits per class: `round(fraction * class_size)` samples of each
/// class go to train, the rest to test.
pub fn stratified_split(samples: &mut [LabeledSample], train_fraction: f64, seed: u64) -> Result<DatasetSummary> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CoreError::InvalidArgument(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
        if idx.is_empty() {
            return Err(CoreError::Split(format!("class {label} has no samples")));
        }
        idx.shuffle(&mut rng);
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            samples[i].split = Some(if k < n_train { Split::Train } else { Split::Test });
        }
    }
    Ok(DatasetSummary::of(samples))
}
