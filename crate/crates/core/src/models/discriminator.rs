use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderSpec};
use crate::losses::nll_of_class;
use crate::nn::{Conv2d, Initializer, Mode, ParamStore};
use crate::{CoreError, Result};

/// Pairwise PatchGAN: a shared encoder judges, at every position of each
/// tapped stage, which of two images is real.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub backbone: EncoderSpec,
    pub tap_stages: Vec<usize>,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { backbone: EncoderSpec::default(), tap_stages: vec![2, 3] }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self, input_size: usize) -> Result<()> {
        self.backbone.validate(input_size)?;
        if self.tap_stages.is_empty() {
            return Err(CoreError::Build("discriminator needs at least one tap stage".into()));
        }
        if let Some(s) = self.tap_stages.iter().find(|&&s| s > self.backbone.depth) {
            return Err(CoreError::Build(format!("tap stage {s} exceeds encoder depth {}", self.backbone.depth)));
        }
        Ok(())
    }
}

/// Which input image sits in the first slot, per tap and position.
#[derive(Debug, Clone)]
pub struct SlotPermutation {
    /// `(N, 1, h, w)` per tap; 1 where the first image occupies slot 0.
    masks: Vec<Tensor>,
}

impl SlotPermutation {
    pub fn masks(&self) -> &[Tensor] {
        &self.masks
    }

    /// The permutation that puts the other image in each slot.
    pub fn swapped(&self) -> Result<Self> {
        Ok(Self { masks: self.masks.iter().map(|m| m.affine(-1.0, 1.0)).collect::<candle_core::Result<_>>()? })
    }
}

/// Slot of an ordered image pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    First = 0,
    Second = 1,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    spec: DiscriminatorSpec,
    input_size: usize,
    store: ParamStore,
    encoder: Encoder,
    heads: Vec<Conv2d>,
}

impl Discriminator {
    pub fn new(spec: &DiscriminatorSpec, input_size: usize, seed: u64) -> Result<Self> {
        spec.validate(input_size)?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let last = *spec.tap_stages.iter().max().expect("validated nonempty");
        let encoder = Encoder::new(&spec.backbone, last, &mut store, &mut init, "enc")?;
        let heads = spec
            .tap_stages
            .iter()
            .map(|&s| {
                let c = spec.backbone.stage_kernels[s];
                Conv2d::new(&mut store, &mut init, &format!("head{s}"), 2 * c, 2, 1, 1)
            })
            .collect::<Result<_>>()?;
        Ok(Self { spec: spec.clone(), input_size, store, encoder, heads })
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Spatial side of each tap output.
    pub fn tap_sizes(&self) -> Vec<usize> {
        self.spec.tap_stages.iter().map(|&s| self.input_size >> s).collect()
    }

    pub fn identity_permutation(&self, n: usize) -> Result<SlotPermutation> {
        let masks = self
            .tap_sizes()
            .into_iter()
            .map(|s| Tensor::ones((n, 1, s, s), DType::F32, &Device::Cpu))
            .collect::<candle_core::Result<_>>()?;
        Ok(SlotPermutation { masks })
    }

    pub fn random_permutation(&self, n: usize, rng: &mut impl Rng) -> Result<SlotPermutation> {
        let masks = self
            .tap_sizes()
            .into_iter()
            .map(|s| {
                let bits: Vec<f32> = (0..n * s * s).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
                Tensor::from_vec(bits, (n, 1, s, s), &Device::Cpu)
            })
            .collect::<candle_core::Result<_>>()?;
        Ok(SlotPermutation { masks })
    }

    /// Per tap, log-probabilities `(N, 2, h, w)` that the first (channel 0)
    /// or the second (channel 1) image is the real one.
    pub fn forward(&self, first: &Tensor, second: &Tensor, perm: &SlotPermutation, mode: Mode) -> Result<Vec<Tensor>> {
        if first.dims() != second.dims() {
            return Err(CoreError::Shape(format!("pair members differ: {:?} vs {:?}", first.dims(), second.dims())));
        }
        let n = first.dim(0)?;
        let feats = self.encoder.forward(&Tensor::cat(&[first, second], 0)?, mode)?;
        let mut out = Vec::with_capacity(self.heads.len());
        for (t, (&stage, head)) in self.spec.tap_stages.iter().zip(&self.heads).enumerate() {
            let f = &feats[stage];
            let (f1, f2) = (f.narrow(0, 0, n)?, f.narrow(0, n, n)?);
            let m = perm.masks[t].to_dtype(f.dtype())?;
            let inv = m.affine(-1.0, 1.0)?;
            let slot0 = (f1.broadcast_mul(&m)? + f2.broadcast_mul(&inv)?)?;
            let slot1 = (f2.broadcast_mul(&m)? + f1.broadcast_mul(&inv)?)?;
            let ls = candle_nn::ops::log_softmax(&head.forward(&Tensor::cat(&[&slot0, &slot1], 1)?)?, 1)?;
            let (l0, l1) = (ls.narrow(1, 0, 1)?, ls.narrow(1, 1, 1)?);
            let first_real = (l0.broadcast_mul(&m)? + l1.broadcast_mul(&inv)?)?;
            let second_real = (l1.broadcast_mul(&m)? + l0.broadcast_mul(&inv)?)?;
            out.push(Tensor::cat(&[&first_real, &second_real], 1)?);
        }
        Ok(out)
    }
}

/// Cross entropy against the slot holding the real image, averaged over taps.
pub fn adversarial_loss(outputs: &[Tensor], real: Slot) -> Result<Tensor> {
    let terms = outputs.iter().map(|o| nll_of_class(o, real as usize)).collect::<Result<Vec<_>>>()?;
    Ok((Tensor::stack(&terms, 0)?.mean_all())?)
}
