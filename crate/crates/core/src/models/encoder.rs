use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::nn::{BatchNorm2d, Conv2d, Initializer, Mode, ParamStore};
use crate::{CoreError, Result};

/// Convolutional stages shared by the generator and the discriminator.
///
/// Stage 0 keeps the resolution; every later stage halves it with a strided
/// first convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub depth: usize,
    pub convs_per_stage: usize,
    pub stage_kernels: Vec<usize>,
    pub kernel_size: usize,
    pub leaky_slope: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { depth: 3, convs_per_stage: 3, stage_kernels: vec![48, 96, 192, 384], kernel_size: 3, leaky_slope: 0.2 }
    }
}

impl EncoderSpec {
    pub fn validate(&self, input_size: usize) -> Result<()> {
        if self.stage_kernels.len() != self.depth + 1 {
            return Err(CoreError::Build(format!(
                "stage_kernels has {} entries, depth {} needs {}",
                self.stage_kernels.len(),
                self.depth,
                self.depth + 1
            )));
        }
        if self.convs_per_stage == 0 || self.stage_kernels.contains(&0) {
            return Err(CoreError::Build("stages need at least one convolution and one kernel".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(CoreError::Build(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(CoreError::Build(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope)));
        }
        let factor = 1usize << self.depth;
        if input_size == 0 || input_size % factor != 0 {
            return Err(CoreError::Build(format!("input size {input_size} is not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }
}

pub(crate) fn leaky(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Convolution, leaky rectifier, normalization.
#[derive(Debug, Clone)]
pub(crate) struct ConvUnit {
    conv: Conv2d,
    norm: BatchNorm2d,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let conv = Conv2d::new(store, init, &format!("{name}.conv"), cin, cout, kernel, stride)?;
        let norm = BatchNorm2d::new(store, init, &format!("{name}.bn"), cout)?;
        Ok(Self { conv, norm })
    }

    pub(crate) fn forward(&self, x: &Tensor, slope: f64, mode: Mode) -> Result<Tensor> {
        self.norm.forward(&leaky(&self.conv.forward(x)?, slope)?, mode)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub(crate) stages: Vec<Vec<ConvUnit>>,
    pub(crate) slope: f64,
}

impl Encoder {
    /// Builds stages `0..=last_stage`.
    pub(crate) fn new(
        spec: &EncoderSpec,
        last_stage: usize,
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
    ) -> Result<Self> {
        let mut stages = Vec::new();
        let mut cin = 1;
        for s in 0..=last_stage {
            let cout = spec.stage_kernels[s];
            let mut units = Vec::new();
            for j in 0..spec.convs_per_stage {
                let stride = if s > 0 && j == 0 { 2 } else { 1 };
                let name = format!("{prefix}.stage{s}.conv{j}");
                units.push(ConvUnit::new(store, init, &name, cin, cout, spec.kernel_size, stride)?);
                cin = cout;
            }
            stages.push(units);
        }
        Ok(Self { stages, slope: spec.leaky_slope })
    }

    /// Output of every stage, finest first.
    pub(crate) fn forward(&self, x: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let mut outs = Vec::with_capacity(self.stages.len());
        let mut h = x.clone();
        for units in &self.stages {
            for u in units {
                h = u.forward(&h, self.slope, mode)?;
            }
            outs.push(h.clone());
        }
        Ok(outs)
    }
}
