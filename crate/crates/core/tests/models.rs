use candle_core::{DType, Device, Tensor};
use cyclexplain::data::generate_synthetic_dataset;
use cyclexplain::image::ImageTensor;
use cyclexplain::losses::{self, image_level, GeneratorLossInputs, LossWeights, SsimParams};
use cyclexplain::models::*;
use cyclexplain::nn::Mode;
use cyclexplain::training::{train_explainer, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_classifier(size: usize, seed: u64) -> Classifier {
    let spec = ClassifierSpec { blocks: vec![(4, 1), (8, 2), (8, 2), (8, 2)], kernel_size: 3 };
    Classifier::new(&spec, size, seed).unwrap()
}

fn tiny_encoder() -> EncoderSpec {
    EncoderSpec { stage_kernels: vec![2, 4, 4, 8], convs_per_stage: 2, ..Default::default() }
}

fn tiny_bundle(size: usize) -> ExplainerBundle {
    let g = tiny_encoder();
    let d = DiscriminatorSpec { backbone: g.clone(), tap_stages: vec![2, 3] };
    ExplainerBundle::new(tiny_classifier(size, 1), &g, &d, 5).unwrap()
}

fn images(n: usize, size: usize) -> Vec<ImageTensor> {
    generate_synthetic_dataset(n, 2, size).unwrap().samples.into_iter().map(|s| s.image).collect()
}

fn unet_param_count(k: &[usize], convs: usize, kernel: usize) -> usize {
    let conv = |cin: usize, cout: usize| kernel * kernel * cin * cout + cout + 2 * cout;
    let mut total = 0;
    for s in 0..k.len() {
        let mut cin = if s == 0 { 1 } else { k[s - 1] };
        for _ in 0..convs {
            total += conv(cin, k[s]);
            cin = k[s];
        }
    }
    for s in 0..k.len() - 1 {
        let mut cin = k[s + 1] + k[s];
        for _ in 0..convs {
            total += conv(cin, k[s]);
            cin = k[s];
        }
    }
    total + k[0] + 1
}

#[test]
fn generator_parameter_count() {
    for spec in [EncoderSpec::default(), tiny_encoder()] {
        let g = UNet::new(&spec, 64, 0).unwrap();
        assert_eq!(g.params().num_params(), unet_param_count(&spec.stage_kernels, spec.convs_per_stage, spec.kernel_size));
    }
}

#[test]
fn generator_output_is_an_image() {
    let g = Generator::unet(&tiny_encoder(), 32, 3).unwrap();
    let x = ImageTensor::batch(&images(3, 32).iter().collect::<Vec<_>>()).unwrap();
    let y = g.forward(&x, Mode::Batch).unwrap();
    assert_eq!(y.dims(), &[3, 1, 32, 32]);
    let v: Vec<f32> = y.flatten_all().unwrap().to_vec1().unwrap();
    assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(UNet::new(&tiny_encoder(), 36, 0).is_err());
}

#[test]
fn classifier_feature_shape_and_probabilities() {
    let spec = ClassifierSpec::default();
    assert_eq!(spec.feature_size(64).unwrap(), 8);
    let c = tiny_classifier(64, 0);
    let x = Tensor::full(0.5f32, (2, 1, 64, 64), &Device::Cpu).unwrap();
    assert_eq!(c.features(&x, Mode::Eval).unwrap().dims(), &[2, 8, 8, 8]);
    let p: Vec<Vec<f32>> = c.probs(&x).unwrap().to_vec2().unwrap();
    for row in p {
        assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
    }
    let wrong = Tensor::zeros((1, 1, 32, 32), DType::F32, &Device::Cpu).unwrap();
    assert!(c.log_probs(&wrong, Mode::Eval).is_err());
}

#[test]
fn discriminator_taps_and_slot_symmetry() {
    let spec = DiscriminatorSpec { backbone: tiny_encoder(), tap_stages: vec![2, 3] };
    let d = Discriminator::new(&spec, 64, 4).unwrap();
    assert_eq!(d.tap_sizes(), vec![16, 8]);
    let imgs = images(4, 64);
    let a = ImageTensor::batch(&imgs[..2].iter().collect::<Vec<_>>()).unwrap();
    let b = ImageTensor::batch(&imgs[2..].iter().collect::<Vec<_>>()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let perm = d.random_permutation(2, &mut rng).unwrap();
    let out = d.forward(&a, &b, &perm, Mode::Eval).unwrap();
    let back = d.forward(&b, &a, &perm.swapped().unwrap(), Mode::Eval).unwrap();
    for (o, s) in out.iter().zip(&d.tap_sizes()) {
        assert_eq!(o.dims(), &[2, 2, *s, *s]);
        let total: Vec<f32> = o.exp().unwrap().sum(1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!(total.iter().all(|t| (t - 1.0).abs() < 1e-5));
    }
    for (o, r) in out.iter().zip(&back) {
        let flipped = Tensor::cat(&[r.narrow(1, 1, 1).unwrap(), r.narrow(1, 0, 1).unwrap()], 1).unwrap();
        let diff = (o - flipped).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5, "{diff}");
    }
}

#[test]
fn generator_loss_terms_match_separate_oracles() {
    let size = 32;
    let b = tiny_bundle(size);
    let imgs = images(4, size);
    let x_a = ImageTensor::batch(&imgs[..2].iter().collect::<Vec<_>>()).unwrap();
    let x_b = ImageTensor::batch(&imgs[2..].iter().collect::<Vec<_>>()).unwrap();
    let perm = b.d_plus.identity_permutation(2).unwrap();
    let p = SsimParams::default();
    let w = LossWeights::default();
    let inputs = GeneratorLossInputs {
        x_a: &x_a,
        x_b: &x_b,
        target_label: 1,
        g_self: &b.g_plus,
        g_other: &b.g_minus,
        d_self: &b.d_plus,
        classifier: &b.classifier,
        perm: &perm,
        mode: Mode::Batch,
        generated: None,
    };
    let loss = losses::generator_loss(&inputs, &w, &p).unwrap();
    let t = loss.terms;
    assert!((t.weighted_sum(&w) - t.total).abs() < 1e-6);

    let gx = b.g_plus.forward(&x_a, Mode::Batch).unwrap();
    let rec = b.g_minus.forward(&gx, Mode::Batch).unwrap();
    let gx_img = ImageTensor::unbatch(&gx).unwrap();
    let rec_img = ImageTensor::unbatch(&rec).unwrap();
    let cycle = (0..2).map(|i| image_level::cycle_loss(&imgs[i], &rec_img[i], &p, 0.5).unwrap()).sum::<f64>() / 2.0;
    let sim = (0..2).map(|i| image_level::similarity_loss(&imgs[i], &gx_img[i], &p).unwrap()).sum::<f64>() / 2.0;
    let probs = b.classifier.classify_tensor(&gx).unwrap();
    let am = probs.iter().map(|&q| losses::am_loss(1, q)).sum::<f64>() / 2.0;
    let judged = b.d_plus.forward(&gx, &x_b, &perm, Mode::Batch).unwrap();
    let adv = judged
        .iter()
        .map(|o| {
            let v: Vec<f32> = o.narrow(1, 0, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            -v.iter().map(|&l| l as f64).sum::<f64>() / v.len() as f64
        })
        .sum::<f64>()
        / judged.len() as f64;
    assert!((t.cycle - cycle).abs() < 1e-4, "{} vs {cycle}", t.cycle);
    assert!((t.similarity - sim).abs() < 1e-4);
    assert!((t.activation - am).abs() < 1e-4 * am.max(1.0));
    assert!((t.adversarial - adv).abs() < 1e-4);
    assert!((t.total - (cycle + sim + adv + am)).abs() < 1e-3);

    let heavier = LossWeights { cycle: 2.0, ..w };
    let t2 = losses::generator_loss(&inputs, &heavier, &p).unwrap().terms;
    assert!(t2.total >= t.total);
}

#[test]
fn identity_generators_have_zero_reconstruction_terms() {
    let size = 32;
    let mut b = tiny_bundle(size);
    b.g_plus = Generator::Identity;
    b.g_minus = Generator::Identity;
    let imgs = images(2, size);
    let x = ImageTensor::batch(&imgs.iter().collect::<Vec<_>>()).unwrap();
    let perm = b.d_plus.identity_permutation(2).unwrap();
    let w = LossWeights { adversarial: 0.0, activation: 0.0, ..Default::default() };
    let inputs = GeneratorLossInputs {
        x_a: &x,
        x_b: &x,
        target_label: 0,
        g_self: &b.g_plus,
        g_other: &b.g_minus,
        d_self: &b.d_plus,
        classifier: &b.classifier,
        perm: &perm,
        mode: Mode::Batch,
        generated: None,
    };
    let t = losses::generator_loss(&inputs, &w, &SsimParams::default()).unwrap().terms;
    assert!(t.cycle.abs() < 1e-6 && t.similarity.abs() < 1e-6);
    assert!(t.total.abs() < 1e-6);
}

#[test]
fn bundle_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let b = tiny_bundle(32);
    let path = dir.path().join("bundle");
    b.save(&path).unwrap();
    let back = ExplainerBundle::load(&path).unwrap();
    assert_eq!(back.fingerprint(), b.fingerprint());
    for (x, y) in [(&b.g_plus, &back.g_plus), (&b.g_minus, &back.g_minus)] {
        assert_eq!(x.params().unwrap().checksum().unwrap(), y.params().unwrap().checksum().unwrap());
    }
    assert_eq!(b.d_minus.params().checksum().unwrap(), back.d_minus.params().checksum().unwrap());
    let x = ImageTensor::batch(&images(2, 32).iter().collect::<Vec<_>>()).unwrap();
    let y0: Vec<f32> = b.g_plus.forward(&x, Mode::Eval).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let y1: Vec<f32> = back.g_plus.forward(&x, Mode::Eval).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(y0, y1);
    b.save(&path).unwrap();
    assert!(ExplainerBundle::load(&path).is_ok());
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1, "no temporary directories left behind");
}

#[test]
fn classifier_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_classifier(32, 8);
    c.save(&dir.path().join("c")).unwrap();
    let back = Classifier::load(&dir.path().join("c")).unwrap();
    assert_eq!(back.params().checksum().unwrap(), c.params().checksum().unwrap());
    let other = tiny_classifier(64, 8);
    other.save(&dir.path().join("d")).unwrap();
    std::fs::copy(dir.path().join("d/classifier.safetensors"), dir.path().join("c/classifier.safetensors")).unwrap();
    assert!(Classifier::load(&dir.path().join("c")).is_err());
}

#[test]
fn training_leaves_the_classifier_untouched() {
    let size = 32;
    let mut b = tiny_bundle(size);
    let before = b.classifier.params().checksum().unwrap();
    let g_before = b.g_plus.params().unwrap().checksum().unwrap();
    let imgs = images(4, size);
    let cfg = TrainConfig { batch_size: 2, max_epochs: 1, ..Default::default() };
    let mut seen = 0;
    let log = train_explainer(&mut b, &imgs, &imgs[..2], &cfg, |_| {
        seen += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(log.records.len(), 2);
    assert_eq!(seen, 2);
    assert_eq!(b.classifier.params().checksum().unwrap(), before);
    assert_ne!(b.g_plus.params().unwrap().checksum().unwrap(), g_before);
    assert!(b.trained);
    assert!(log.records.last().unwrap().probe.is_some());
}
