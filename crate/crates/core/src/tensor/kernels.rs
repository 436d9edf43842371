//! Raw forward/adjoint kernels on NCHW buffers. No graph bookkeeping here.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfold one batch item into a `[C*k*k, Ho*Wo]` patch matrix.
fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], col: &mut [T]) {
    let k = g.kernel;
    let p = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patches back onto the input plane.
fn col2im_add<T: Scalar>(g: &ConvGeometry, col: &[T], grad_input: &mut [T]) {
    let k = g.kernel;
    let p = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(g: &ConvGeometry, input: &[T], kernel: &[T], bias: Option<&[T]>) -> Vec<T> {
    let p = g.out_pixels();
    let kk = g.patch_len();
    let in_per = g.in_channels * g.height * g.width;
    let out_per = g.filters * p;
    let mut out = vec![T::zero(); g.batch * out_per];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
    for n in 0..g.batch {
        let x = &input[n * in_per..(n + 1) * in_per];
        let y = &mut out[n * out_per..(n + 1) * out_per];
        if let Some(b) = bias {
            for (f, row) in y.chunks_mut(p).enumerate() {
                row.fill(b[f]);
            }
        }
        let patches: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut col);
            &col
        };
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(g.filters, kk, p, kernel, (kk as isize, 1), patches, (p as isize, 1), beta, y, (p as isize, 1));
    }
    out
}

/// Gradients of a convolution. Each output slot is only filled when
/// requested; kernel and bias gradients are summed over the batch.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (want_input, want_kernel, want_bias) = want;
    let p = g.out_pixels();
    let kk = g.patch_len();
    let in_per = g.in_channels * g.height * g.width;
    let out_per = g.filters * p;

    let mut grad_input = want_input.then(|| vec![T::zero(); input.len()]);
    let mut grad_kernel = want_kernel.then(|| vec![T::zero(); kernel.len()]);
    let grad_bias = want_bias.then(|| {
        let mut acc = vec![0.0f64; g.filters];
        for n in 0..g.batch {
            let dy = &grad_out[n * out_per..(n + 1) * out_per];
            for (f, row) in dy.chunks(p).enumerate() {
                acc[f] += row.iter().map(|v| v.as_f64()).sum::<f64>();
            }
        }
        acc.into_iter().map(T::of).collect::<Vec<_>>()
    });

    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * p }];
    let mut dcol = vec![T::zero(); if want_input { kk * p } else { 0 }];
    for n in 0..g.batch {
        let dy = &grad_out[n * out_per..(n + 1) * out_per];
        if let Some(dw) = grad_kernel.as_mut() {
            let x = &input[n * in_per..(n + 1) * in_per];
            let patches: &[T] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut col);
                &col
            };
            // dW[F, KK] += dY[F, P] * patches^T[P, KK]
            T::gemm(g.filters, p, kk, dy, (p as isize, 1), patches, (1, p as isize), T::one(), dw, (kk as isize, 1));
        }
        if let Some(dx) = grad_input.as_mut() {
            let dx = &mut dx[n * in_per..(n + 1) * in_per];
            if g.is_pointwise() {
                // dX[C, P] += W^T[C, F] * dY[F, P]
                T::gemm(kk, g.filters, p, kernel, (1, kk as isize), dy, (p as isize, 1), T::one(), dx, (p as isize, 1));
            } else {
                T::gemm(kk, g.filters, p, kernel, (1, kk as isize), dy, (p as isize, 1), T::zero(), &mut dcol, (p as isize, 1));
                col2im_add(g, &dcol, dx);
            }
        }
    }

    ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    }
}

pub fn upsample2x<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &input[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: sum each 2x2 block. `h`, `w` are the
/// extents of the small (pre-upsampling) grid.
pub fn upsample2x_adjoint<T: Scalar>(grad_out: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let ow = 2 * w;
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &grad_out[pl * 4 * h * w..(pl + 1) * 4 * h * w];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let s = src[2 * y * ow + 2 * x].as_f64()
                    + src[2 * y * ow + 2 * x + 1].as_f64()
                    + src[(2 * y + 1) * ow + 2 * x].as_f64()
                    + src[(2 * y + 1) * ow + 2 * x + 1].as_f64();
                dst[y * w + x] = T::of(s);
            }
        }
    }
    out
}

/// 2x2 mean pooling; `h`, `w` are the (even) input extents.
pub fn avgpool2x<T: Scalar>(input: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    for pl in 0..planes {
        let src = &input[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * oh * ow..(pl + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let s = src[2 * y * w + 2 * x].as_f64()
                    + src[2 * y * w + 2 * x + 1].as_f64()
                    + src[(2 * y + 1) * w + 2 * x].as_f64()
                    + src[(2 * y + 1) * w + 2 * x + 1].as_f64();
                dst[y * ow + x] = T::of(0.25 * s);
            }
        }
    }
    out
}

/// Adjoint of [`avgpool2x`]; `h`, `w` are the input (large) extents.
pub fn avgpool2x_adjoint<T: Scalar>(grad_out: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * h * w];
    for pl in 0..planes {
        let src = &grad_out[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut out[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeometry, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.filters * g.out_height * g.out_width];
        for n in 0..g.batch {
            for f in 0..g.filters {
                for oy in 0..g.out_height {
                    for ox in 0..g.out_width {
                        let mut acc = b[f];
                        for c in 0..g.in_channels {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    let xi = ((n * g.in_channels + c) * g.height + iy as usize) * g.width + ix as usize;
                                    let wi = ((f * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
                                    acc += x[xi] * w[wi];
                                }
                            }
                        }
                        out[((n * g.filters + f) * g.out_height + oy) * g.out_width + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_conv_matches_direct_loops() {
        for &(stride, padding, kernel) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)] {
            let (h, w) = (6, 5);
            let g = ConvGeometry {
                batch: 2,
                in_channels: 3,
                height: h,
                width: w,
                filters: 4,
                kernel,
                stride,
                padding,
                out_height: (h + 2 * padding - kernel) / stride + 1,
                out_width: (w + 2 * padding - kernel) / stride + 1,
            };
            let x: Vec<f64> = (0..2 * 3 * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
            let wt: Vec<f64> = (0..4 * 3 * kernel * kernel).map(|i| ((i * 13 % 7) as f64) * 0.5 - 1.0).collect();
            let b = [0.5, -1.0, 2.0, 0.0];
            let got = conv2d_forward(&g, &x, &wt, Some(&b));
            assert_eq!(got, naive_conv(&g, &x, &wt, &b));
        }
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint_pairs() {
        let x: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let up = upsample2x(&x, 1, 4, 4);
        let back = avgpool2x(&up, 1, 8, 8);
        assert_eq!(back, x);
        let ones = vec![1.0; 64];
        assert_eq!(upsample2x_adjoint(&ones, 1, 4, 4), vec![4.0; 16]);
    }
}
