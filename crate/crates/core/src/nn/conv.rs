//! 2-D convolution as a custom candle op backed by im2col and a packed GEMM.
//!
//! Both the forward pass and the two backward products (input and kernel
//! gradients) reduce to matrix multiplications over the unfolded input, which
//! is considerably faster on CPU than the generic transposed-convolution path.

use candle_core::{CpuStorage, CustomOp2, CustomOp3, DType, Layout, Result, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOp {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

trait Element: Copy + Default + std::ops::AddAssign + candle_core::WithDType {
    /// `c = a * b + beta * c` for row-major `m x k` times `k x n` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
    );
    const ZERO: Self;
    const ONE: Self;
}

impl Element for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1) }
    }
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
}

impl Element for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1) }
    }
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn cols(&self, k: usize) -> usize {
        self.cin * k * k
    }
    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }
    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }
}

impl Conv2dOp {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    /// "Same" padding for odd kernels.
    pub fn same(kernel: usize, stride: usize) -> Self {
        Self::new(kernel, stride, kernel / 2)
    }

    pub fn out_dim(&self, n: usize) -> usize {
        (n + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn geometry(&self, input: &Shape, kernel: &Shape) -> Result<Geometry> {
        let (batch, cin, h, w) = input.dims4()?;
        let (cout, kcin, kh, kw) = kernel.dims4()?;
        if kcin != cin || kh != self.kernel || kw != self.kernel {
            candle_core::bail!(
                "conv2d: input has {cin} channels, kernel is {cout}x{kcin}x{kh}x{kw} (expected size {})",
                self.kernel
            );
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            candle_core::bail!("conv2d: {h}x{w} input smaller than kernel {}", self.kernel);
        }
        Ok(Geometry { batch, cin, h, w, cout, ho: self.out_dim(h), wo: self.out_dim(w) })
    }

    /// Output columns `ox` whose input column `ox * stride + kx - pad` is in bounds.
    fn valid_cols(&self, g: &Geometry, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let off = kx as isize - p;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = ((g.w as isize - off + s - 1) / s).clamp(0, g.wo as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    fn im2col<T: Element>(&self, x: &[T], g: &Geometry, col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let hw = g.out_hw();
        for ci in 0..g.cin {
            let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(g, kx);
                    let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            dst.fill(T::ZERO);
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        dst[..lo].fill(T::ZERO);
                        dst[hi..].fill(T::ZERO);
                        if lo < hi {
                            let start = (lo * s + kx) as isize - p;
                            let start = start as usize;
                            if s == 1 {
                                dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for (d, v) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                                    *d = *v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, col: &[T], g: &Geometry, x: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let hw = g.out_hw();
        for ci in 0..g.cin {
            let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(g, kx);
                    if lo >= hi {
                        continue;
                    }
                    let start = ((lo * s + kx) as isize - p) as usize;
                    let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                    for oy in 0..g.ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let src = &row[oy * g.wo + lo..oy * g.wo + hi];
                        for (d, v) in dst[start..].iter_mut().step_by(s).zip(src) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }

    fn forward<T: Element>(&self, x: &[T], wt: &[T], g: &Geometry) -> Vec<T> {
        let kk = g.cols(self.kernel);
        let hw = g.out_hw();
        let mut col = vec![T::ZERO; kk * hw];
        let mut out = vec![T::ZERO; g.batch * g.cout * hw];
        for b in 0..g.batch {
            self.im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], g, &mut col);
            // SAFETY: slices are sized for the declared matrix shapes and strides.
            unsafe {
                T::gemm(
                    g.cout,
                    kk,
                    hw,
                    wt.as_ptr(),
                    kk as isize,
                    1,
                    col.as_ptr(),
                    hw as isize,
                    1,
                    T::ZERO,
                    out[b * g.cout * hw..].as_mut_ptr(),
                    hw as isize,
                );
            }
        }
        out
    }

    fn backward<T: Element>(&self, x: &[T], wt: &[T], grad: &[T], g: &Geometry) -> (Vec<T>, Vec<T>) {
        let kk = g.cols(self.kernel);
        let hw = g.out_hw();
        let mut col = vec![T::ZERO; kk * hw];
        let mut gcol = vec![T::ZERO; kk * hw];
        let mut gx = vec![T::ZERO; g.batch * g.in_len()];
        let mut gw = vec![T::ZERO; g.cout * kk];
        for b in 0..g.batch {
            self.im2col(&x[b * g.in_len()..(b + 1) * g.in_len()], g, &mut col);
            let gb = &grad[b * g.cout * hw..(b + 1) * g.cout * hw];
            // SAFETY: as in `forward`; transposes are expressed through strides.
            unsafe {
                // gw (cout x kk) += gb (cout x hw) . col^T (hw x kk)
                T::gemm(
                    g.cout,
                    hw,
                    kk,
                    gb.as_ptr(),
                    hw as isize,
                    1,
                    col.as_ptr(),
                    1,
                    hw as isize,
                    T::ONE,
                    gw.as_mut_ptr(),
                    kk as isize,
                );
                // gcol (kk x hw) = w^T (kk x cout) . gb (cout x hw)
                T::gemm(
                    kk,
                    g.cout,
                    hw,
                    wt.as_ptr(),
                    1,
                    kk as isize,
                    gb.as_ptr(),
                    hw as isize,
                    1,
                    T::ZERO,
                    gcol.as_mut_ptr(),
                    hw as isize,
                );
            }
            self.col2im(&gcol, g, &mut gx[b * g.in_len()..(b + 1) * g.in_len()]);
        }
        (gx, gw)
    }
}

fn contiguous<'a, T: candle_core::WithDType>(data: &'a [T], l: &Layout) -> Result<&'a [T]> {
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("conv2d expects contiguous operands"),
    }
}

impl CustomOp2 for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d-im2col"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> Result<(CpuStorage, Shape)> {
        let g = self.geometry(l1.shape(), l2.shape())?;
        let shape = Shape::from((g.batch, g.cout, g.ho, g.wo));
        match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(w)) => {
                Ok((CpuStorage::F32(self.forward(contiguous(x, l1)?, contiguous(w, l2)?, &g)), shape))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w)) => {
                Ok((CpuStorage::F64(self.forward(contiguous(x, l1)?, contiguous(w, l2)?, &g)), shape))
            }
            _ => candle_core::bail!("conv2d supports matching f32 or f64 operands"),
        }
    }

    fn bwd(&self, arg1: &Tensor, arg2: &Tensor, _res: &Tensor, grad_res: &Tensor) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let g = self.geometry(arg1.shape(), arg2.shape())?;
        let dev = arg1.device();
        let (gx, gw) = match arg1.dtype() {
            DType::F32 => {
                let (gx, gw) = self.backward::<f32>(
                    &arg1.flatten_all()?.to_vec1()?,
                    &arg2.flatten_all()?.to_vec1()?,
                    &grad_res.flatten_all()?.to_vec1()?,
                    &g,
                );
                (Tensor::from_vec(gx, arg1.shape(), dev)?, Tensor::from_vec(gw, arg2.shape(), dev)?)
            }
            DType::F64 => {
                let (gx, gw) = self.backward::<f64>(
                    &arg1.flatten_all()?.to_vec1()?,
                    &arg2.flatten_all()?.to_vec1()?,
                    &grad_res.flatten_all()?.to_vec1()?,
                    &g,
                );
                (Tensor::from_vec(gx, arg1.shape(), dev)?, Tensor::from_vec(gw, arg2.shape(), dev)?)
            }
            dt => candle_core::bail!("conv2d does not support {dt:?}"),
        };
        Ok((Some(gx), Some(gw)))
    }
}

/// [`Conv2dOp`] followed by a per-output-channel bias.
#[derive(Debug, Clone, Copy)]
struct BiasedConv(Conv2dOp);

fn add_bias<T: Element>(out: &mut [T], bias: &[T], hw: usize) {
    for (plane, b) in out.chunks_mut(hw).zip(bias.iter().cycle()) {
        for v in plane {
            *v += *b;
        }
    }
}

fn bias_grad<T: Element>(grad: &[T], cout: usize, hw: usize) -> Vec<T> {
    let mut gb = vec![T::ZERO; cout];
    for (k, plane) in grad.chunks(hw).enumerate() {
        let mut acc = T::ZERO;
        for v in plane {
            acc += *v;
        }
        gb[k % cout] += acc;
    }
    gb
}

impl CustomOp3 for BiasedConv {
    fn name(&self) -> &'static str {
        "conv2d-im2col-bias"
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
        let op = self.0;
        let g = op.geometry(l1.shape(), l2.shape())?;
        if l3.shape().dims() != [g.cout] {
            candle_core::bail!("conv2d: bias shape {:?} does not match {} output channels", l3.shape(), g.cout);
        }
        let shape = Shape::from((g.batch, g.cout, g.ho, g.wo));
        match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(w), CpuStorage::F32(b)) => {
                let mut out = op.forward(contiguous(x, l1)?, contiguous(w, l2)?, &g);
                add_bias(&mut out, contiguous(b, l3)?, g.out_hw());
                Ok((CpuStorage::F32(out), shape))
            }
            (CpuStorage::F64(x), CpuStorage::F64(w), CpuStorage::F64(b)) => {
                let mut out = op.forward(contiguous(x, l1)?, contiguous(w, l2)?, &g);
                add_bias(&mut out, contiguous(b, l3)?, g.out_hw());
                Ok((CpuStorage::F64(out), shape))
            }
            _ => candle_core::bail!("conv2d supports matching f32 or f64 operands"),
        }
    }

    fn bwd(
        &self,
        arg1: &Tensor,
        arg2: &Tensor,
        arg3: &Tensor,
        res: &Tensor,
        grad_res: &Tensor,
    ) -> Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (gx, gw) = self.0.bwd(arg1, arg2, res, grad_res)?;
        let g = self.0.geometry(arg1.shape(), arg2.shape())?;
        let gb = match grad_res.dtype() {
            DType::F32 => Tensor::from_vec(
                bias_grad::<f32>(&grad_res.flatten_all()?.to_vec1()?, g.cout, g.out_hw()),
                arg3.shape(),
                arg3.device(),
            )?,
            DType::F64 => Tensor::from_vec(
                bias_grad::<f64>(&grad_res.flatten_all()?.to_vec1()?, g.cout, g.out_hw()),
                arg3.shape(),
                arg3.device(),
            )?,
            dt => candle_core::bail!("conv2d does not support {dt:?}"),
        };
        Ok((gx, gw, Some(gb)))
    }
}

/// Convolves `x` with `kernel` and adds `bias` (O,) to every output plane.
pub fn conv2d_bias(x: &Tensor, kernel: &Tensor, bias: &Tensor, op: Conv2dOp) -> Result<Tensor> {
    x.contiguous()?.apply_op3(&kernel.contiguous()?, &bias.contiguous()?, BiasedConv(op))
}

/// Convolves `x` (N, C, H, W) with `kernel` (O, C, k, k).
pub fn conv2d(x: &Tensor, kernel: &Tensor, op: Conv2dOp) -> Result<Tensor> {
    x.contiguous()?.apply_op2(&kernel.contiguous()?, op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};

    fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn matches_reference_convolution_and_gradients() {
        let dev = Device::Cpu;
        for &(cin, cout, size, k, stride, pad) in
            &[(1, 3, 9, 3, 1, 1), (2, 4, 8, 3, 2, 1), (3, 2, 7, 5, 1, 0), (2, 2, 6, 1, 1, 0), (1, 2, 7, 3, 2, 1), (2, 3, 9, 5, 2, 2), (1, 1, 8, 7, 1, 0)]
        {
            let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (2, cin, size, size), &dev).unwrap()).unwrap();
            let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (cout, cin, k, k), &dev).unwrap()).unwrap();
            let op = Conv2dOp::new(k, stride, pad);
            let ours = conv2d(x.as_tensor(), w.as_tensor(), op).unwrap();
            let reference = x.as_tensor().conv2d(w.as_tensor(), pad, stride, 1, 1).unwrap();
            assert_eq!(ours.dims(), reference.dims());
            assert!(max_abs_diff(&ours, &reference) < 1e-12);

            let g1 = ours.sqr().unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = reference.sqr().unwrap().sum_all().unwrap().backward().unwrap();
            for v in [&x, &w] {
                let a = g1.get(v.as_tensor()).unwrap();
                let b = g2.get(v.as_tensor()).unwrap();
                assert!(max_abs_diff(a, b) < 1e-9);
            }
        }
    }

    #[test]
    fn bias_matches_broadcast_add() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 1.0, (3, 2, 6, 6), &dev).unwrap()).unwrap();
        let w = Var::from_tensor(&Tensor::randn(0f64, 1.0, (4, 2, 3, 3), &dev).unwrap()).unwrap();
        let b = Var::from_tensor(&Tensor::randn(0f64, 1.0, 4, &dev).unwrap()).unwrap();
        let op = Conv2dOp::same(3, 2);
        let fused = conv2d_bias(x.as_tensor(), w.as_tensor(), b.as_tensor(), op).unwrap();
        let plain = conv2d(x.as_tensor(), w.as_tensor(), op)
            .unwrap()
            .broadcast_add(&b.as_tensor().reshape((1, 4, 1, 1)).unwrap())
            .unwrap();
        assert!(max_abs_diff(&fused, &plain) < 1e-12);
        let g1 = fused.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = plain.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        for v in [&x, &w, &b] {
            assert!(max_abs_diff(g1.get(v.as_tensor()).unwrap(), g2.get(v.as_tensor()).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let dev = Device::Cpu;
        let x = Tensor::zeros((1, 2, 5, 5), DType::F32, &dev).unwrap();
        let w = Tensor::zeros((1, 3, 3, 3), DType::F32, &dev).unwrap();
        assert!(conv2d(&x, &w, Conv2dOp::same(3, 1)).is_err());
    }
}
