use candle_core::{DType, Device, Tensor, Var};
use cyclexplain::image::ImageTensor;
use cyclexplain::losses::{self, image_level, DssimForm, SsimParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    (0..size * size).map(|_| rng.random_range(0.05..0.95)).collect()
}

fn tensor(v: &[f64], size: usize) -> Tensor {
    Tensor::from_slice(v, (1, 1, size, size), &Device::Cpu).unwrap()
}

fn small_params() -> SsimParams {
    SsimParams { n_scales: 2, ..Default::default() }
}

#[test]
fn identity_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = SsimParams::default();
    let x = ImageTensor::new(32, random_image(&mut rng, 32).iter().map(|&v| v as f32).collect()).unwrap();
    assert!((image_level::ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-12);
    assert!(image_level::dssim(&x, &x, &p).unwrap().abs() < 1e-12);
    assert!(image_level::ms_dssim(&x, &x, &p).unwrap().abs() < 1e-12);
    assert!(image_level::cycle_loss(&x, &x, &p, 0.5).unwrap().abs() < 1e-12);
    let lit = SsimParams { form: DssimForm::Literal, ..p };
    assert!((image_level::dssim(&x, &x, &lit).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn constant_images_follow_luminance_term() {
    let p = SsimParams::default();
    for (a, b) in [(0.2f32, 0.7f32), (0.5, 0.5), (0.0, 1.0)] {
        let x = ImageTensor::filled(16, a).unwrap();
        let y = ImageTensor::filled(16, b).unwrap();
        let (a, b) = (a as f64, b as f64);
        let expected = (2.0 * a * b + p.c1) / (a * a + b * b + p.c1);
        assert!((image_level::ssim(&x, &y, &p).unwrap() - expected).abs() < 1e-6);
    }
}

#[test]
fn inverted_checkerboard_is_anticorrelated() {
    let s = 16;
    let v: Vec<f32> = (0..s * s).map(|i| ((i / s + i % s) % 2) as f32).collect();
    let x = ImageTensor::new(s, v.clone()).unwrap();
    let y = ImageTensor::new(s, v.iter().map(|a| 1.0 - a).collect()).unwrap();
    assert!(image_level::ssim(&x, &y, &SsimParams::default()).unwrap() < 0.0);
}

#[test]
fn cycle_loss_is_equal_mix_of_l1_and_ms_dssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = SsimParams::default();
    let a = random_image(&mut rng, 32);
    let b = random_image(&mut rng, 32);
    let l1 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let (x, y) = (tensor(&a, 32), tensor(&b, 32));
    let ms = losses::ms_dssim(&x, &y, &p).unwrap().to_scalar::<f64>().unwrap();
    let cyc = losses::cycle_loss(&x, &y, &p, 0.5).unwrap().to_scalar::<f64>().unwrap();
    assert!((cyc - 0.5 * (l1 + ms)).abs() < 1e-12);
}

#[test]
fn cross_entropy_values() {
    assert!((losses::cross_entropy(1, 0.5) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((losses::cross_entropy(0, 0.25) - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    assert!((losses::cross_entropy(1, 0.0) - 1e7f64.ln()).abs() < 1e-9);
    assert!(losses::cross_entropy(0, 1.0).is_finite());
    assert_eq!(losses::am_loss(1, 0.8), losses::cross_entropy(1, 0.8));
}

#[test]
fn nll_of_class_matches_scalar_cross_entropy() {
    let probs = [0.9f64, 0.3, 0.6];
    let lp: Vec<f64> = probs.iter().flat_map(|&p| [(1.0 - p).ln(), p.ln()]).collect();
    let t = Tensor::from_slice(&lp, (3, 2), &Device::Cpu).unwrap();
    for target in [0u8, 1] {
        let got = losses::nll_of_class(&t, target as usize).unwrap().to_scalar::<f64>().unwrap();
        let want = probs.iter().map(|&p| losses::cross_entropy(target, p)).sum::<f64>() / 3.0;
        assert!((got - want).abs() < 1e-12);
    }
}

fn max_relative_gradient_error(f: impl Fn(&Tensor) -> Tensor, x0: &[f64], size: usize) -> f64 {
    let var = Var::from_tensor(&tensor(x0, size)).unwrap();
    let grads = f(var.as_tensor()).backward().unwrap();
    let analytic: Vec<f64> = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let h = 1e-6;
    let eval = |v: &[f64]| f(&tensor(v, size)).to_scalar::<f64>().unwrap();
    let mut num = vec![0.0; x0.len()];
    let mut xp = x0.to_vec();
    for i in 0..x0.len() {
        xp[i] = x0[i] + h;
        let up = eval(&xp);
        xp[i] = x0[i] - h;
        let down = eval(&xp);
        xp[i] = x0[i];
        num[i] = (up - down) / (2.0 * h);
    }
    let diff = analytic.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = num.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = small_params();
    for _ in 0..3 {
        let a = random_image(&mut rng, 16);
        let b = random_image(&mut rng, 16);
        let y = tensor(&b, 16);
        let e = max_relative_gradient_error(|x| losses::ms_dssim(x, &y, &p).unwrap(), &a, 16);
        assert!(e < 1e-3, "ms_dssim gradient error {e}");
        let e = max_relative_gradient_error(|x| losses::cycle_loss(&y, x, &p, 0.5).unwrap(), &a, 16);
        assert!(e < 1e-3, "cycle gradient error {e}");
    }
}

#[test]
fn rejects_images_below_multiscale_minimum() {
    let p = SsimParams::default();
    assert_eq!(p.min_size(), 28);
    let x = Tensor::zeros((1, 1, 16, 16), DType::F64, &Device::Cpu).unwrap();
    assert!(losses::ms_dssim(&x, &x, &p).is_err());
    assert!(losses::ms_dssim(&x, &x, &small_params()).is_ok());
}
