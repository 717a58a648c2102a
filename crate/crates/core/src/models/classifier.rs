use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::nn::{BatchNorm2d, Conv2d, Initializer, Linear, Mode, ParamStore};
use crate::{CoreError, Result};

/// Convolutional blocks `(kernels, stride)` followed by a two-way softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub blocks: Vec<(usize, usize)>,
    pub kernel_size: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self { blocks: vec![(32, 1), (64, 2), (128, 2), (256, 2)], kernel_size: 3 }
    }
}

impl ClassifierSpec {
    /// Spatial side of the last feature map.
    pub fn feature_size(&self, input_size: usize) -> Result<usize> {
        if self.blocks.is_empty() {
            return Err(CoreError::Build("classifier needs at least one block".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(CoreError::Build(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        let mut s = input_size;
        for &(k, stride) in &self.blocks {
            if k == 0 || stride == 0 {
                return Err(CoreError::Build(format!("block ({k}, {stride}) needs positive kernels and stride")));
            }
            if s % stride != 0 {
                return Err(CoreError::Build(format!(
                    "input size {input_size} is not divisible by the product of block strides"
                )));
            }
            s /= stride;
        }
        if s == 0 {
            return Err(CoreError::Build(format!("input size {input_size} too small")));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    spec: ClassifierSpec,
    input_size: usize,
    store: ParamStore,
    blocks: Vec<(Conv2d, BatchNorm2d)>,
    head: Linear,
}

impl Classifier {
    pub fn new(spec: &ClassifierSpec, input_size: usize, seed: u64) -> Result<Self> {
        let fs = spec.feature_size(input_size)?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let mut blocks = Vec::new();
        let mut cin = 1;
        for (i, &(k, stride)) in spec.blocks.iter().enumerate() {
            let conv = Conv2d::new(&mut store, &mut init, &format!("block{i}.conv"), cin, k, spec.kernel_size, stride)?;
            let bn = BatchNorm2d::new(&mut store, &init, &format!("block{i}.bn"), k)?;
            blocks.push((conv, bn));
            cin = k;
        }
        let head = Linear::new(&mut store, &mut init, "head", cin * fs * fs, 2)?;
        Ok(Self { spec: spec.clone(), input_size, store, blocks, head })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Feature map before flattening.
    pub fn features(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 || h != self.input_size || w != self.input_size {
            return Err(CoreError::Shape(format!(
                "classifier expects (N, 1, {0}, {0}), got {1:?}",
                self.input_size,
                x.dims()
            )));
        }
        let mut h = x.clone();
        for (conv, bn) in &self.blocks {
            h = bn.forward(&conv.forward(&h)?, mode)?.relu()?;
        }
        Ok(h)
    }

    /// Log-probabilities `(N, 2)`; column 1 is the positive class.
    pub fn log_probs(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let f = self.features(x, mode)?.flatten_from(1)?;
        Ok(candle_nn::ops::log_softmax(&self.head.forward(&f)?, 1)?)
    }

    /// Class probabilities `(N, 2)` from running statistics.
    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.log_probs(x, Mode::Eval)?.exp()?)
    }

    /// Probability of class 1 for one image.
    pub fn classify(&self, x: &ImageTensor) -> Result<f64> {
        Ok(self.classify_tensor(&x.to_tensor()?)?[0])
    }

    pub fn classify_batch(&self, images: &[&ImageTensor]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            out.extend(self.classify_tensor(&ImageTensor::batch(chunk)?)?);
        }
        Ok(out)
    }

    pub fn classify_tensor(&self, x: &Tensor) -> Result<Vec<f64>> {
        let p = self.probs(x)?.narrow(1, 1, 1)?.flatten_all()?;
        Ok(p.to_dtype(DType::F64)?.to_vec1::<f64>()?)
    }
}
