use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Bindings, Conv, Dense};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Scalar, Tensor, Var};

/// Affine parameters of the identity transform, row-major 2×3.
pub const IDENTITY_THETA: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// Localisation network layout: two `conv → maxpool → relu` stages and two
/// dense layers, the last of which regresses the six affine parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StnSpec {
    pub loc_conv_filters: Vec<usize>,
    pub loc_kernels: Vec<usize>,
    pub loc_pool: usize,
    pub loc_fc: Vec<usize>,
}

impl Default for StnSpec {
    fn default() -> Self {
        Self {
            loc_conv_filters: vec![8, 10],
            loc_kernels: vec![7, 5],
            loc_pool: 2,
            loc_fc: vec![32, 6],
        }
    }
}

impl StnSpec {
    /// Flattened feature size entering the first dense layer.
    pub fn flatten_dim(&self, input_size: usize) -> Result<usize> {
        if self.loc_conv_filters.len() != self.loc_kernels.len() {
            return Err(Error::Config(
                "localisation filters and kernels differ in length".into(),
            ));
        }
        if self.loc_fc.last() != Some(&6) {
            return Err(Error::Config(
                "the last localisation layer must output 6 values".into(),
            ));
        }
        if self.loc_pool == 0 {
            return Err(Error::Config("loc_pool must be positive".into()));
        }
        let mut side = input_size;
        for (i, &k) in self.loc_kernels.iter().enumerate() {
            if k == 0 || side < k {
                return Err(Error::Config(format!(
                    "localisation conv {i}: side {side} smaller than kernel {k}"
                )));
            }
            side = side - k + 1;
            if side < self.loc_pool {
                return Err(Error::Config(format!(
                    "localisation pool {i}: side {side} smaller than pool"
                )));
            }
            side = (side - self.loc_pool) / self.loc_pool + 1;
        }
        let channels = self.loc_conv_filters.last().copied().unwrap_or(1);
        Ok(side * side * channels)
    }
}

/// Spatial transformer: localisation net, affine grid generator and bilinear
/// sampler, initialized to the identity transform.
#[derive(Clone, Debug)]
pub struct Stn<T = f32> {
    pub spec: StnSpec,
    pub input_size: usize,
    pub convs: Vec<Conv<T>>,
    pub fcs: Vec<Dense<T>>,
}

impl<T: Scalar> Stn<T> {
    pub fn new(spec: StnSpec, input_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut d_in = spec.flatten_dim(input_size)?;
        let mut c_in = 1;
        let convs = spec
            .loc_conv_filters
            .iter()
            .zip(&spec.loc_kernels)
            .map(|(&c_out, &k)| {
                let conv = Conv::new(c_in, c_out, k, rng);
                c_in = c_out;
                conv
            })
            .collect();
        let mut fcs: Vec<Dense<T>> = spec
            .loc_fc
            .iter()
            .map(|&d_out| {
                let fc = Dense::new(d_in, d_out, rng);
                d_in = d_out;
                fc
            })
            .collect();
        let last = fcs.last_mut().expect("validated non-empty");
        last.weight
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = T::zero());
        last.bias
            .data_mut()
            .iter_mut()
            .zip(IDENTITY_THETA)
            .for_each(|(b, v)| *b = T::lit(v));
        Ok(Self {
            spec,
            input_size,
            convs,
            fcs,
        })
    }

    /// Regresses `θ` as `[N, 6]`.
    pub fn localise(&self, g: &mut Graph<T>, binds: &mut Bindings, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, binds, &format!("stn/conv{i}"), h, Padding::Valid)?;
            h = g.maxpool2d(h, self.spec.loc_pool, self.spec.loc_pool)?;
            h = g.relu(h);
        }
        h = g.flatten(h)?;
        let last = self.fcs.len() - 1;
        for (i, fc) in self.fcs.iter().enumerate() {
            h = fc.forward(g, binds, &format!("stn/fc{i}"), h)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    /// Resamples each image of `[N, 1, H, W]` with its own regressed `θ`.
    pub fn forward(&self, g: &mut Graph<T>, binds: &mut Bindings, x: Var) -> Result<Var> {
        let (h, w) = match *g.shape(x) {
            [_, 1, h, w] => (h, w),
            ref s => return Err(Error::Shape(format!("stn expects [N,1,H,W], got {s:?}"))),
        };
        let theta = self.localise(g, binds, x)?;
        let grid = g.affine_grid(theta, h, w)?;
        g.bilinear_sample(x, grid)
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, c) in self.convs.iter().enumerate() {
            c.tensors(&format!("stn/conv{i}"), out);
        }
        for (i, f) in self.fcs.iter().enumerate() {
            f.tensors(&format!("stn/fc{i}"), out);
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.tensors_mut(&format!("stn/conv{i}"), out);
        }
        for (i, f) in self.fcs.iter_mut().enumerate() {
            f.tensors_mut(&format!("stn/fc{i}"), out);
        }
    }
}

/// Warps `image` (`[N,C,H,W]`) with fixed affine parameters `theta` (`[N,6]`).
pub fn warp<T: Scalar>(image: &Tensor<T>, theta: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = match *image.shape() {
        [_, _, h, w] => (h, w),
        ref s => return Err(Error::Shape(format!("warp expects [N,C,H,W], got {s:?}"))),
    };
    let mut g = Graph::new();
    let img = g.constant(image.clone());
    let th = g.constant(theta.clone());
    let grid = g.affine_grid(th, h, w)?;
    let out = g.bilinear_sample(img, grid)?;
    Ok(g.value(out).clone())
}
