//! Affine grid generation and bilinear sampling in normalized coordinates.
//!
//! Pixel centres of an axis with `n` samples map to `[-1, 1]`, first pixel at
//! -1 and last at +1. Samples outside the image read zeros.

use super::as_nchw;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Normalized coordinate of pixel `i` on an axis of `n` pixels.
pub fn normalized_coord<T: Scalar>(i: usize, n: usize) -> T {
    if n <= 1 {
        return T::zero();
    }
    let span = T::from_usize(n - 1).expect("size fits");
    let q = T::from_usize(2 * i).expect("size fits") - span;
    q / span
}

/// Inverse of [`normalized_coord`], in fractional pixel units.
///
/// Results within a few ulps of an integer are snapped onto it so that the
/// identity transform reproduces pixel centres exactly.
pub fn unnormalize_coord<T: Scalar>(x: T, n: usize) -> T {
    if n <= 1 {
        return x;
    }
    let span = T::from_usize(n - 1).expect("size fits");
    let p = (x * span + span) / T::lit(2.0);
    let r = p.round();
    if (p - r).abs() <= T::lit(4.0) * T::epsilon() * span {
        r
    } else {
        p
    }
}

fn half_span<T: Scalar>(n: usize) -> T {
    if n <= 1 {
        T::zero()
    } else {
        T::from_usize(n - 1).expect("size fits") / T::lit(2.0)
    }
}

impl<T: Scalar> Graph<T> {
    /// Source coordinates `θ · [x̂, ŷ, 1]ᵀ` for every target pixel.
    ///
    /// `theta` is `[N, 2, 3]` (or `[N, 6]`); the result is
    /// `[N, out_h, out_w, 2]` holding `(x, y)` pairs.
    pub fn affine_grid(&mut self, theta: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(theta).to_vec();
        let n = match shape[..] {
            [n, 2, 3] | [n, 6] => n,
            _ => {
                return Err(Error::Shape(format!(
                    "theta must be [N,2,3] or [N,6], got {shape:?}"
                )))
            }
        };
        if out_h == 0 || out_w == 0 {
            return Err(Error::Shape("affine grid needs a non-empty target".into()));
        }
        let xs: Vec<T> = (0..out_w).map(|j| normalized_coord(j, out_w)).collect();
        let ys: Vec<T> = (0..out_h).map(|i| normalized_coord(i, out_h)).collect();
        let th = self.value(theta).data();
        let mut out = Vec::with_capacity(n * out_h * out_w * 2);
        for b in 0..n {
            let t = &th[b * 6..b * 6 + 6];
            for &y in &ys {
                for &x in &xs {
                    out.push(t[0] * x + t[1] * y + t[2]);
                    out.push(t[3] * x + t[4] * y + t[5]);
                }
            }
        }
        let value = Tensor::new(&[n, out_h, out_w, 2], out)?;
        Ok(self.push(
            "affine_grid",
            value,
            vec![theta],
            Box::new(move |_, gout| {
                let mut gt = vec![T::zero(); n * 6];
                for b in 0..n {
                    let gt = &mut gt[b * 6..b * 6 + 6];
                    let mut k = b * out_h * out_w * 2;
                    for &y in &ys {
                        for &x in &xs {
                            let (gx, gy) = (gout[k], gout[k + 1]);
                            gt[0] += gx * x;
                            gt[1] += gx * y;
                            gt[2] += gx;
                            gt[3] += gy * x;
                            gt[4] += gy * y;
                            gt[5] += gy;
                            k += 2;
                        }
                    }
                }
                vec![gt]
            }),
        ))
    }

    /// Bilinear interpolation of `image` (`[N,C,H,W]`) at normalized source
    /// coordinates `grid` (`[N,H_out,W_out,2]`), zero outside the image.
    /// Differentiable with respect to both inputs.
    pub fn bilinear_sample(&mut self, image: Var, grid: Var) -> Result<Var> {
        let (n, c, h, w) = as_nchw(self.shape(image))?;
        if self.shape(image).len() != 4 {
            return Err(Error::Shape(
                "bilinear_sample expects [N,C,H,W] images".into(),
            ));
        }
        let (oh, ow) = match *self.shape(grid) {
            [gn, oh, ow, 2] if gn == n => (oh, ow),
            ref s => return Err(Error::Shape(format!("grid must be [{n},H,W,2], got {s:?}"))),
        };
        let img = self.value(image).data();
        let grd = self.value(grid).data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for b in 0..n {
            for p in 0..oh * ow {
                let (taps, _) = taps(
                    grd[(b * oh * ow + p) * 2],
                    grd[(b * oh * ow + p) * 2 + 1],
                    h,
                    w,
                );
                for ch in 0..c {
                    let plane = &img[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                    let mut acc = T::zero();
                    for &(idx, wt) in &taps {
                        if let Some(idx) = idx {
                            acc += wt * plane[idx];
                        }
                    }
                    out[(b * c + ch) * oh * ow + p] = acc;
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        Ok(self.push(
            "bilinear_sample",
            value,
            vec![image, grid],
            Box::new(move |ctx, gout| {
                let img = ctx.input(0).data();
                let grd = ctx.input(1).data();
                let mut gimg = if ctx.needs(0) {
                    vec![T::zero(); img.len()]
                } else {
                    Vec::new()
                };
                let mut ggrid = if ctx.needs(1) {
                    vec![T::zero(); grd.len()]
                } else {
                    Vec::new()
                };
                let (sx, sy) = (half_span::<T>(w), half_span::<T>(h));
                for b in 0..n {
                    for p in 0..oh * ow {
                        let gi = (b * oh * ow + p) * 2;
                        let (tp, frac) = taps(grd[gi], grd[gi + 1], h, w);
                        let (fx, fy) = frac;
                        for ch in 0..c {
                            let base = (b * c + ch) * h * w;
                            let g = gout[(b * c + ch) * oh * ow + p];
                            if !gimg.is_empty() {
                                for &(idx, wt) in &tp {
                                    if let Some(idx) = idx {
                                        gimg[base + idx] += wt * g;
                                    }
                                }
                            }
                            if !ggrid.is_empty() {
                                let v = |k: usize| tp[k].0.map_or(T::zero(), |i| img[base + i]);
                                let (v00, v01, v10, v11) = (v(0), v(1), v(2), v(3));
                                let dx = (T::one() - fy) * (v01 - v00) + fy * (v11 - v10);
                                let dy = (T::one() - fx) * (v10 - v00) + fx * (v11 - v01);
                                ggrid[gi] += g * dx * sx;
                                ggrid[gi + 1] += g * dy * sy;
                            }
                        }
                    }
                }
                vec![gimg, ggrid]
            }),
        ))
    }
}

/// Four neighbours `(top-left, top-right, bottom-left, bottom-right)` with
/// their flat indices (`None` when outside) and weights, plus the fractional
/// offsets `(fx, fy)`.
#[allow(clippy::type_complexity)]
fn taps<T: Scalar>(x: T, y: T, h: usize, w: usize) -> ([(Option<usize>, T); 4], (T, T)) {
    let px = unnormalize_coord(x, w);
    let py = unnormalize_coord(y, h);
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let at = |yy: T, xx: T| -> Option<usize> {
        let (yi, xi) = (yy.to_i64()?, xx.to_i64()?);
        (yi >= 0 && xi >= 0 && (yi as usize) < h && (xi as usize) < w)
            .then(|| yi as usize * w + xi as usize)
    };
    let one = T::one();
    (
        [
            (at(y0, x0), (one - fx) * (one - fy)),
            (at(y0, x0 + one), fx * (one - fy)),
            (at(y0 + one, x0), (one - fx) * fy),
            (at(y0 + one, x0 + one), fx * fy),
        ],
        (fx, fy),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_roundtrip_is_exact_for_many_sizes() {
        for n in 1..700 {
            for i in 0..n {
                let x: f32 = normalized_coord(i, n);
                assert_eq!(unnormalize_coord(x, n), i as f32, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn endpoints_map_to_unit_interval() {
        assert_eq!(normalized_coord::<f64>(0, 5), -1.0);
        assert_eq!(normalized_coord::<f64>(4, 5), 1.0);
        assert_eq!(normalized_coord::<f64>(2, 5), 0.0);
    }

    #[test]
    fn midpoint_between_zero_and_one_is_half() {
        let mut g = Graph::<f64>::new();
        let img = g.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
        let grid = g.constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 0.0]).unwrap());
        let out = g.bilinear_sample(img, grid).unwrap();
        assert_eq!(g.value(out).data(), &[0.5]);
    }

    #[test]
    fn grid_outside_image_reads_zeros() {
        let mut g = Graph::<f64>::new();
        let img = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
        let grid = g.constant(Tensor::new(&[1, 1, 2, 2], vec![3.0, 3.0, -2.5, 0.0]).unwrap());
        let out = g.bilinear_sample(img, grid).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn translation_theta_shifts_x() {
        let mut g = Graph::<f64>::new();
        let th = g.constant(Tensor::new(&[1, 2, 3], vec![1.0, 0.0, 0.5, 0.0, 1.0, 0.0]).unwrap());
        let grid = g.affine_grid(th, 3, 3).unwrap();
        let v = g.value(grid).data();
        for i in 0..3 {
            for j in 0..3 {
                let k = (i * 3 + j) * 2;
                assert_eq!(v[k], normalized_coord::<f64>(j, 3) + 0.5);
                assert_eq!(v[k + 1], normalized_coord::<f64>(i, 3));
            }
        }
    }

    #[test]
    fn rotation_theta_rotates_coordinates() {
        let mut g = Graph::<f64>::new();
        let th = g.constant(Tensor::new(&[1, 6], vec![0.0, -1.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
        let grid = g.affine_grid(th, 4, 4).unwrap();
        let v = g.value(grid).data();
        for i in 0..4 {
            for j in 0..4 {
                let k = (i * 4 + j) * 2;
                let (x, y) = (normalized_coord::<f64>(j, 4), normalized_coord::<f64>(i, 4));
                assert_eq!((v[k], v[k + 1]), (-y, x));
            }
        }
    }
}
