//! Synthetic rater-study responses for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::table::{Criterion, Response, ResponseTable, SCORE_MAX, SCORE_MIN};

#[derive(Debug, Clone, PartialEq)]
pub struct StudyShape {
    pub n_raters: usize,
    pub n_items: usize,
    /// Method names with their latent quality on the score scale.
    pub methods: Vec<(String, f64)>,
    /// Relative weight of each criterion on the shared latent preference.
    pub criterion_weights: [f64; 3],
    /// Per-answer noise standard deviation; 0 makes every criterion a deterministic function of the latent.
    pub noise: f64,
}

impl Default for StudyShape {
    fn default() -> Self {
        Self {
            n_raters: 8,
            n_items: 24,
            methods: vec![
                ("proposed".into(), 1.8),
                ("baseline_a".into(), -1.5),
                ("baseline_b".into(), -1.2),
                ("baseline_c".into(), -2.4),
            ],
            criterion_weights: [1.0, 1.0, 0.8],
            noise: 0.9,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Integer scores in `[-4, 4]` driven by a shared latent preference per
/// (rater, item, method), plus rater bias and item offsets. Even-indexed
/// raters answer sheet A, odd-indexed sheet B.
pub fn synthetic_responses(shape: &StudyShape, seed: u64) -> ResponseTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rater_bias: Vec<f64> = (0..shape.n_raters).map(|_| 0.5 * normal(&mut rng)).collect();
    let item_offset: Vec<f64> = (0..shape.n_items).map(|_| 0.7 * normal(&mut rng)).collect();
    let mut records = Vec::new();
    for r in 0..shape.n_raters {
        for i in 0..shape.n_items {
            for (method, quality) in &shape.methods {
                let latent = quality + item_offset[i] + rater_bias[r] + 0.8 * normal(&mut rng);
                for (c, criterion) in Criterion::ALL.iter().enumerate() {
                    let noise = if shape.noise > 0.0 { shape.noise * normal(&mut rng) } else { 0.0 };
                    let raw = shape.criterion_weights[c] * latent + noise;
                    let score = raw.round().clamp(SCORE_MIN as f64, SCORE_MAX as f64);
                    records.push(Response {
                        rater_id: format!("rater{:02}", r + 1),
                        item_id: format!("item{:02}", i + 1),
                        method: method.clone(),
                        criterion: *criterion,
                        score,
                        variant: if r % 2 == 0 { "A" } else { "B" }.to_string(),
                    });
                }
            }
        }
    }
    ResponseTable::new(records).expect("generated keys are unique")
}
