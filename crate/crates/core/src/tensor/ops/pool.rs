use super::{as_nchw, nchw_like};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub(crate) fn pool_out_dim(size: usize, pool: usize, stride: usize) -> Result<usize> {
    if pool == 0 || stride == 0 {
        return Err(Error::Shape("pool size and stride must be positive".into()));
    }
    if pool > size {
        return Err(Error::Shape(format!(
            "pool {pool} larger than input extent {size}"
        )));
    }
    Ok((size - pool) / stride + 1)
}

impl<T: Scalar> Graph<T> {
    /// Max pooling over `pool × pool` windows. The gradient goes to the first
    /// maximal element of each window in row-major order.
    pub fn maxpool2d(&mut self, input: Var, pool: usize, stride: usize) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let (n, c, h, w) = as_nchw(&in_shape)?;
        let oh = pool_out_dim(h, pool, stride)?;
        let ow = pool_out_dim(w, pool, stride)?;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * stride * w + ox * stride;
                    for ky in 0..pool {
                        let row = base + (oy * stride + ky) * w + ox * stride;
                        for idx in row..row + pool {
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&nchw_like(&in_shape, n, c, oh, ow), out)?;
        let in_len = n * c * h * w;
        Ok(self.push(
            "maxpool2d",
            value,
            vec![input],
            Box::new(move |_, gout| {
                let mut gx = vec![T::zero(); in_len];
                for (&idx, &g) in argmax.iter().zip(gout) {
                    gx[idx] += g;
                }
                vec![gx]
            }),
        ))
    }

    /// Nearest-neighbour upsampling by an integer factor on both axes.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Shape("upsample factor must be positive".into()));
        }
        let in_shape = self.shape(input).to_vec();
        let (n, c, h, w) = as_nchw(&in_shape)?;
        let (oh, ow) = (h * factor, w * factor);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for oy in 0..oh {
                let row = plane * h * w + (oy / factor) * w;
                out.extend((0..ow).map(|ox| x[row + ox / factor]));
            }
        }
        let value = Tensor::new(&nchw_like(&in_shape, n, c, oh, ow), out)?;
        Ok(self.push(
            "upsample_nearest",
            value,
            vec![input],
            Box::new(move |_, gout| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for plane in 0..n * c {
                    for oy in 0..oh {
                        let row = plane * h * w + (oy / factor) * w;
                        let src = &gout[(plane * oh + oy) * ow..(plane * oh + oy + 1) * ow];
                        for (ox, &g) in src.iter().enumerate() {
                            gx[row + ox / factor] += g;
                        }
                    }
                }
                vec![gx]
            }),
        ))
    }
}
