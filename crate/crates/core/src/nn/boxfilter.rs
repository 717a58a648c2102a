//! Separable "valid" box mean over the last two dimensions.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Result, Shape, Tensor, WithDType};

#[derive(Debug, Clone, Copy)]
struct BoxMean {
    window: usize,
}

impl BoxMean {
    fn planes(&self, shape: &Shape) -> Result<(usize, usize, usize)> {
        let dims = shape.dims();
        if dims.len() < 2 {
            candle_core::bail!("box mean needs at least two dimensions");
        }
        let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
        if h < self.window || w < self.window {
            candle_core::bail!("box mean: {h}x{w} input smaller than window {}", self.window);
        }
        Ok((shape.elem_count() / (h * w), h, w))
    }

    fn out_shape(&self, shape: &Shape) -> Shape {
        let mut dims = shape.dims().to_vec();
        let n = dims.len();
        dims[n - 2] -= self.window - 1;
        dims[n - 1] -= self.window - 1;
        Shape::from(dims)
    }

    fn forward<T: WithDType>(&self, x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
        let k = self.window;
        let (ho, wo) = (h - k + 1, w - k + 1);
        let scale = 1.0 / (k * k) as f64;
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut rows = vec![0.0f64; h * wo];
        for p in 0..planes {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let src = &plane[y * w..(y + 1) * w];
                let mut acc: f64 = src[..k].iter().map(|v| v.to_f64()).sum();
                rows[y * wo] = acc;
                for j in 1..wo {
                    acc += src[j + k - 1].to_f64() - src[j - 1].to_f64();
                    rows[y * wo + j] = acc;
                }
            }
            for oy in 0..ho {
                for j in 0..wo {
                    let s: f64 = (0..k).map(|a| rows[(oy + a) * wo + j]).sum();
                    out.push(T::from_f64(s * scale));
                }
            }
        }
        out
    }

    fn backward<T: WithDType>(&self, g: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
        let k = self.window;
        let (ho, wo) = (h - k + 1, w - k + 1);
        let scale = 1.0 / (k * k) as f64;
        let mut out = vec![T::zero(); planes * h * w];
        let mut cols = vec![0.0f64; h * wo];
        for p in 0..planes {
            let gp = &g[p * ho * wo..(p + 1) * ho * wo];
            cols.iter_mut().for_each(|v| *v = 0.0);
            for oy in 0..ho {
                for a in 0..k {
                    let dst = &mut cols[(oy + a) * wo..(oy + a + 1) * wo];
                    for (d, v) in dst.iter_mut().zip(&gp[oy * wo..(oy + 1) * wo]) {
                        *d += v.to_f64();
                    }
                }
            }
            let dst = &mut out[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                let row = &cols[y * wo..(y + 1) * wo];
                for (x, d) in dst[y * w..(y + 1) * w].iter_mut().enumerate() {
                    let lo = x.saturating_sub(k - 1);
                    let hi = x.min(wo - 1);
                    let s: f64 = row[lo..=hi].iter().sum();
                    *d = T::from_f64(s * scale);
                }
            }
        }
        out
    }
}

impl CustomOp1 for BoxMean {
    fn name(&self) -> &'static str {
        "box-mean"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let (planes, h, w) = self.planes(l.shape())?;
        let Some((a, b)) = l.contiguous_offsets() else {
            candle_core::bail!("box mean expects a contiguous input")
        };
        let out = match s {
            CpuStorage::F32(x) => CpuStorage::F32(self.forward(&x[a..b], planes, h, w)),
            CpuStorage::F64(x) => CpuStorage::F64(self.forward(&x[a..b], planes, h, w)),
            _ => candle_core::bail!("box mean supports f32 or f64"),
        };
        Ok((out, self.out_shape(l.shape())))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        let (planes, h, w) = self.planes(arg.shape())?;
        let g = match arg.dtype() {
            DType::F32 => Tensor::from_vec(
                self.backward::<f32>(&grad.flatten_all()?.to_vec1()?, planes, h, w),
                arg.shape(),
                arg.device(),
            )?,
            DType::F64 => Tensor::from_vec(
                self.backward::<f64>(&grad.flatten_all()?.to_vec1()?, planes, h, w),
                arg.shape(),
                arg.device(),
            )?,
            dt => candle_core::bail!("box mean does not support {dt:?}"),
        };
        Ok(Some(g))
    }
}

/// Mean over every `window x window` patch lying fully inside the input.
pub fn box_mean(x: &Tensor, window: usize) -> Result<Tensor> {
    if window == 0 {
        candle_core::bail!("box mean window must be positive");
    }
    x.contiguous()?.apply_op1(BoxMean { window })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{conv2d, Conv2dOp};
    use candle_core::{Device, Var};

    #[test]
    fn matches_convolution_with_uniform_kernel() {
        let dev = Device::Cpu;
        for (h, k) in [(9, 3), (7, 7), (12, 5)] {
            let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 1, h, h + 2), &dev).unwrap()).unwrap();
            let kernel = (Tensor::ones((1, 1, k, k), DType::F64, &dev).unwrap() / (k * k) as f64).unwrap();
            let ours = box_mean(x.as_tensor(), k).unwrap();
            let reference = conv2d(x.as_tensor(), &kernel, Conv2dOp::new(k, 1, 0)).unwrap();
            let diff = |a: &Tensor, b: &Tensor| {
                (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
            };
            assert_eq!(ours.dims(), reference.dims());
            assert!(diff(&ours, &reference) < 1e-12);
            let w = Tensor::randn(0f64, 1.0, ours.shape(), &dev).unwrap();
            let g1 = (ours * &w).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (reference * &w).unwrap().sum_all().unwrap().backward().unwrap();
            assert!(diff(g1.get(x.as_tensor()).unwrap(), g2.get(x.as_tensor()).unwrap()) < 1e-12);
        }
    }
}
