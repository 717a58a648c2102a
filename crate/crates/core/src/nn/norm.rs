//! Per-channel normalization as a fused custom op.

use std::sync::Arc;

use candle_core::{CpuStorage, CustomOp3, DType, Layout, Result, Shape, Tensor, WithDType};

/// `y = gamma * (x - mean) * inv_std + beta` over `(N, C, H, W)` input.
///
/// With `batch_stats` the statistics are treated as functions of `x` in the
/// backward pass; otherwise they are constants.
#[derive(Debug, Clone)]
pub(crate) struct ChannelNorm {
    pub mean: Arc<Vec<f64>>,
    pub inv_std: Arc<Vec<f64>>,
    pub batch_stats: bool,
}

struct Dims {
    n: usize,
    c: usize,
    hw: usize,
}

fn dims(shape: &Shape) -> Result<Dims> {
    let (n, c, h, w) = shape.dims4()?;
    Ok(Dims { n, c, hw: h * w })
}

fn contiguous<'a, T: WithDType>(data: &'a [T], l: &Layout) -> Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("channel norm expects contiguous operands"),
    }
}

/// Per-channel mean and biased variance of an `(N, C, H, W)` tensor.
pub(crate) fn channel_stats(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = dims(x.shape())?;
    let data = x.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let m = (d.n * d.hw) as f64;
    let mut mean = vec![0.0; d.c];
    for (k, plane) in data.chunks(d.hw).enumerate() {
        mean[k % d.c] += plane.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; d.c];
    for (k, plane) in data.chunks(d.hw).enumerate() {
        let mu = mean[k % d.c];
        var[k % d.c] += plane.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= m);
    Ok((mean, var))
}

impl ChannelNorm {
    fn forward<T: WithDType>(&self, x: &[T], gamma: &[T], beta: &[T], d: &Dims) -> Vec<T> {
        let mut out = Vec::with_capacity(x.len());
        for (k, plane) in x.chunks(d.hw).enumerate() {
            let c = k % d.c;
            let scale = gamma[c].to_f64() * self.inv_std[c];
            let shift = beta[c].to_f64() - self.mean[c] * scale;
            out.extend(plane.iter().map(|v| T::from_f64(v.to_f64() * scale + shift)));
        }
        out
    }

    fn backward<T: WithDType>(&self, x: &[T], gamma: &[T], dy: &[T], d: &Dims) -> (Vec<T>, Vec<T>, Vec<T>) {
        let mut g_beta = vec![0.0; d.c];
        let mut g_gamma = vec![0.0; d.c];
        for (k, (xp, gp)) in x.chunks(d.hw).zip(dy.chunks(d.hw)).enumerate() {
            let c = k % d.c;
            let (mu, inv) = (self.mean[c], self.inv_std[c]);
            for (xv, gv) in xp.iter().zip(gp) {
                let g = gv.to_f64();
                g_beta[c] += g;
                g_gamma[c] += g * (xv.to_f64() - mu) * inv;
            }
        }
        let m = (d.n * d.hw) as f64;
        let mut dx = Vec::with_capacity(x.len());
        for (k, (xp, gp)) in x.chunks(d.hw).zip(dy.chunks(d.hw)).enumerate() {
            let c = k % d.c;
            let (mu, inv) = (self.mean[c], self.inv_std[c]);
            let scale = gamma[c].to_f64() * inv;
            if self.batch_stats {
                let (mb, mg) = (g_beta[c] / m, g_gamma[c] / m);
                dx.extend(
                    xp.iter()
                        .zip(gp)
                        .map(|(xv, gv)| T::from_f64(scale * (gv.to_f64() - mb - (xv.to_f64() - mu) * inv * mg))),
                );
            } else {
                dx.extend(gp.iter().map(|gv| T::from_f64(scale * gv.to_f64())));
            }
        }
        let cast = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect();
        (dx, cast(g_gamma), cast(g_beta))
    }
}

impl CustomOp3 for ChannelNorm {
    fn name(&self) -> &'static str {
        "channel-norm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> Result<(CpuStorage, Shape)> {
        let d = dims(l1.shape())?;
        if l2.shape().dims() != [d.c] || l3.shape().dims() != [d.c] || self.mean.len() != d.c {
            candle_core::bail!("channel norm: parameters do not match {} channels", d.c);
        }
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(b)) => {
                CpuStorage::F32(self.forward(contiguous(x, l1)?, contiguous(g, l2)?, contiguous(b, l3)?, &d))
            }
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(b)) => {
                CpuStorage::F64(self.forward(contiguous(x, l1)?, contiguous(g, l2)?, contiguous(b, l3)?, &d))
            }
            _ => candle_core::bail!("channel norm supports matching f32 or f64 operands"),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let d = dims(x.shape())?;
        let dev = x.device();
        macro_rules! run {
            ($t:ty) => {{
                let (dx, dg, db) = self.backward::<$t>(
                    &x.flatten_all()?.to_vec1()?,
                    &gamma.to_vec1()?,
                    &grad.flatten_all()?.to_vec1()?,
                    &d,
                );
                (
                    Tensor::from_vec(dx, x.shape(), dev)?,
                    Tensor::from_vec(dg, gamma.shape(), dev)?,
                    Tensor::from_vec(db, beta.shape(), dev)?,
                )
            }};
        }
        let (dx, dg, db) = match x.dtype() {
            DType::F32 => run!(f32),
            DType::F64 => run!(f64),
            dt => candle_core::bail!("channel norm does not support {dt:?}"),
        };
        Ok((Some(dx), Some(dg), Some(db)))
    }
}
