use candle_core::Tensor;

use super::encoder::{ConvUnit, Encoder, EncoderSpec};
use crate::nn::{Conv2d, Initializer, Mode, ParamStore};
use crate::Result;

/// U-Net with nearest-neighbour upsampling, skip connections and a sigmoid head.
#[derive(Debug, Clone)]
pub struct UNet {
    spec: EncoderSpec,
    input_size: usize,
    store: ParamStore,
    encoder: Encoder,
    /// Decoder stages from coarse to fine; entry `k` produces stage `depth - 1 - k`.
    decoder: Vec<Vec<ConvUnit>>,
    head: Conv2d,
}

impl UNet {
    pub fn new(spec: &EncoderSpec, input_size: usize, seed: u64) -> Result<Self> {
        spec.validate(input_size)?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let encoder = Encoder::new(spec, spec.depth, &mut store, &mut init, "enc")?;
        let mut decoder = Vec::new();
        for s in (0..spec.depth).rev() {
            let k = spec.stage_kernels[s];
            let mut cin = spec.stage_kernels[s + 1] + k;
            let mut units = Vec::new();
            for j in 0..spec.convs_per_stage {
                let name = format!("dec.stage{s}.conv{j}");
                units.push(ConvUnit::new(&mut store, &mut init, &name, cin, k, spec.kernel_size, 1)?);
                cin = k;
            }
            decoder.push(units);
        }
        let head = Conv2d::new(&mut store, &mut init, "head", spec.stage_kernels[0], 1, 1, 1)?;
        Ok(Self { spec: spec.clone(), input_size, store, encoder, decoder, head })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let skips = self.encoder.forward(x, mode)?;
        let mut h = skips[self.spec.depth].clone();
        for (k, units) in self.decoder.iter().enumerate() {
            let skip = &skips[self.spec.depth - 1 - k];
            let (_, _, sh, sw) = skip.dims4()?;
            h = Tensor::cat(&[&h.upsample_nearest2d(sh, sw)?, skip], 1)?;
            for u in units {
                h = u.forward(&h, self.encoder.slope, mode)?;
            }
        }
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&h)?)?)
    }
}

/// A counterfactual generator: a trainable U-Net or the identity map.
#[derive(Debug, Clone)]
pub enum Generator {
    UNet(Box<UNet>),
    Identity,
}

impl Generator {
    pub fn unet(spec: &EncoderSpec, input_size: usize, seed: u64) -> Result<Self> {
        Ok(Generator::UNet(Box::new(UNet::new(spec, input_size, seed)?)))
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Generator::UNet(net) => net.forward(x, mode),
            Generator::Identity => Ok(x.clone()),
        }
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match self {
            Generator::UNet(net) => Some(net.params()),
            Generator::Identity => None,
        }
    }
}
