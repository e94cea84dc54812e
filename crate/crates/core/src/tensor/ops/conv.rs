use super::{as_nchw, nchw_like};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero padding of `(kernel - 1) / 2`; requires an odd kernel.
    Same,
}

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output spatial size of a convolution along one axis.
pub(crate) fn conv_out_dim(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("stride must be at least 1".into()));
    }
    let pad = match padding {
        Padding::Valid => 0,
        Padding::Same => {
            if kernel.is_multiple_of(2) {
                return Err(Error::Shape(format!(
                    "same padding needs an odd kernel, got {kernel}"
                )));
            }
            (kernel - 1) / 2
        }
    };
    if kernel == 0 || kernel > size + 2 * pad {
        return Err(Error::Shape(format!(
            "kernel {kernel} exceeds input extent {size}"
        )));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

fn im2col<T: Scalar>(img: &[T], g: &Geometry, col: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src =
                        &img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
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

fn col2im<T: Scalar>(col: &[T], g: &Geometry, img: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c_in {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let srcrow = &col[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            img[base + ix as usize] += srcrow[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// 2-D cross-correlation of `input` (`[C,H,W]` or `[N,C,H,W]`) with
    /// `kernels` (`[C_out,C_in,K_h,K_w]`) plus a per-channel `bias`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (n, c_in, h, w) = as_nchw(&in_shape)?;
        let k_shape = self.shape(kernels).to_vec();
        let [c_out, kc, kh, kw] = k_shape[..] else {
            return Err(Error::Shape(format!(
                "kernels must be [C_out,C_in,K,K], got {k_shape:?}"
            )));
        };
        if kc != c_in {
            return Err(Error::Shape(format!(
                "input has {c_in} channels but kernels expect {kc}"
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::Shape(format!(
                "bias must be [{c_out}], got {:?}",
                self.shape(bias)
            )));
        }
        let out_h = conv_out_dim(h, kh, stride, padding)?;
        let out_w = conv_out_dim(w, kw, stride, padding)?;
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        };
        let geo = Geometry {
            c_in,
            h,
            w,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            out_h,
            out_w,
        };

        let x = self.value(input).data();
        let kern = self.value(kernels).data();
        let b = self.value(bias).data();
        let p = geo.positions();
        let rows = geo.col_rows();
        let mut out = vec![T::zero(); n * c_out * p];
        let mut col = vec![T::zero(); rows * p];
        for i in 0..n {
            im2col(&x[i * c_in * h * w..(i + 1) * c_in * h * w], &geo, &mut col);
            let dst = &mut out[i * c_out * p..(i + 1) * c_out * p];
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(b[co]);
            }
            T::gemm_acc(c_out, rows, p, kern, false, &col, false, dst);
        }
        let value = Tensor::new(&nchw_like(&in_shape, n, c_out, out_h, out_w), out)?;

        Ok(self.push(
            "conv2d",
            value,
            vec![input, kernels, bias],
            Box::new(move |ctx, gout| {
                let x = ctx.input(0).data();
                let kern = ctx.input(1).data();
                let img_len = geo.c_in * geo.h * geo.w;
                let mut gx = if ctx.needs(0) {
                    vec![T::zero(); n * img_len]
                } else {
                    Vec::new()
                };
                let mut gk = vec![T::zero(); kern.len()];
                let mut gb = vec![T::zero(); c_out];
                let mut col = vec![T::zero(); rows * p];
                let mut gcol = vec![T::zero(); if ctx.needs(0) { rows * p } else { 0 }];
                for i in 0..n {
                    let go = &gout[i * c_out * p..(i + 1) * c_out * p];
                    for (co, chunk) in go.chunks(p).enumerate() {
                        gb[co] += chunk.iter().copied().sum::<T>();
                    }
                    if ctx.needs(1) {
                        im2col(&x[i * img_len..(i + 1) * img_len], &geo, &mut col);
                        T::gemm_acc(c_out, p, rows, go, false, &col, true, &mut gk);
                    }
                    if ctx.needs(0) {
                        gcol.fill(T::zero());
                        T::gemm_acc(rows, c_out, p, kern, true, go, false, &mut gcol);
                        col2im(&gcol, &geo, &mut gx[i * img_len..(i + 1) * img_len]);
                    }
                }
                vec![gx, gk, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_follow_valid_and_same_rules() {
        assert_eq!(conv_out_dim(500, 9, 1, Padding::Valid).unwrap(), 492);
        assert_eq!(conv_out_dim(7, 3, 2, Padding::Valid).unwrap(), 3);
        assert_eq!(conv_out_dim(125, 3, 1, Padding::Same).unwrap(), 125);
        assert!(conv_out_dim(4, 5, 1, Padding::Valid).is_err());
        assert!(conv_out_dim(4, 2, 1, Padding::Same).is_err());
        assert!(conv_out_dim(4, 2, 0, Padding::Valid).is_err());
    }

    #[test]
    fn all_ones_three_by_three_sums_to_nine() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full(&[1, 3, 3], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, b, 1, Padding::Valid).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let mut g = Graph::<f32>::new();
        let x =
            g.constant(Tensor::new(&[2, 1, 5, 5], (0..50).map(|i| i as f32).collect()).unwrap());
        let k = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[3]));
        let y = g.conv2d(x, k, b, 1, Padding::Valid).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[2, 5, 5]));
        let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(matches!(
            g.conv2d(x, k, b, 1, Padding::Valid),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kernel_larger_than_image_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 4, 4]));
        let k = g.constant(Tensor::zeros(&[1, 1, 5, 5]));
        let b = g.constant(Tensor::zeros(&[1]));
        assert!(g.conv2d(x, k, b, 1, Padding::Valid).is_err());
    }
}
