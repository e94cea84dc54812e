use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Bindings, Conv};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AeLayer {
    Conv(usize),
    Pool,
    Upsample,
}

/// Convolutional autoencoder layout. Convolutions use same padding; the last
/// convolution of each half is followed by a sigmoid, every other by relu.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub encoder: Vec<AeLayer>,
    pub decoder: Vec<AeLayer>,
    pub kernel: usize,
    pub pool: usize,
    pub upsample: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        use AeLayer::*;
        Self {
            encoder: vec![
                Conv(16),
                Conv(32),
                Conv(64),
                Pool,
                Conv(128),
                Conv(64),
                Pool,
                Conv(32),
                Conv(16),
                Conv(8),
            ],
            decoder: vec![
                Conv(16),
                Conv(32),
                Upsample,
                Conv(64),
                Conv(128),
                Upsample,
                Conv(64),
                Conv(32),
                Conv(16),
                Conv(1),
            ],
            kernel: 3,
            pool: 2,
            upsample: 2,
        }
    }
}

impl AutoencoderSpec {
    /// Same layout with every hidden width divided by `factor` (at least 1).
    /// The final decoder layer keeps its single output channel.
    pub fn narrowed(factor: usize) -> Self {
        let shrink = |layers: Vec<AeLayer>, keep_last: bool| {
            let n = layers.len();
            layers
                .into_iter()
                .enumerate()
                .map(|(i, l)| match l {
                    AeLayer::Conv(c) if !(keep_last && i == n - 1) => {
                        AeLayer::Conv((c / factor.max(1)).max(1))
                    }
                    other => other,
                })
                .collect()
        };
        let base = Self::default();
        Self {
            encoder: shrink(base.encoder, false),
            decoder: shrink(base.decoder, true),
            ..base
        }
    }

    fn pools(&self) -> usize {
        self.encoder.iter().filter(|l| **l == AeLayer::Pool).count()
    }

    pub fn validate(&self, input_size: usize) -> Result<()> {
        let down = self.pool.pow(self.pools() as u32);
        if input_size == 0 || !input_size.is_multiple_of(down) {
            return Err(Error::Config(format!(
                "autoencoder input {input_size} not divisible by {down}"
            )));
        }
        let ups = self
            .decoder
            .iter()
            .filter(|l| **l == AeLayer::Upsample)
            .count();
        if self.upsample.pow(ups as u32) != down {
            return Err(Error::Config(
                "decoder upsampling does not invert encoder pooling".into(),
            ));
        }
        if !matches!(self.encoder.last(), Some(AeLayer::Conv(_)))
            || self.decoder.last() != Some(&AeLayer::Conv(1))
        {
            return Err(Error::Config(
                "encoder must end in a conv and decoder in a 1-channel conv".into(),
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config("autoencoder kernel must be odd".into()));
        }
        Ok(())
    }

    pub fn feature_side(&self, input_size: usize) -> usize {
        input_size / self.pool.pow(self.pools() as u32)
    }
}

#[derive(Clone, Debug)]
pub struct Autoencoder<T = f32> {
    pub spec: AutoencoderSpec,
    pub input_size: usize,
    pub encoder: Vec<Option<Conv<T>>>,
    pub decoder: Vec<Option<Conv<T>>>,
}

impl<T: Scalar> Autoencoder<T> {
    pub fn new(spec: AutoencoderSpec, input_size: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate(input_size)?;
        let mut c_in = 1;
        let mut build = |layers: &[AeLayer]| -> Vec<Option<Conv<T>>> {
            layers
                .iter()
                .map(|l| match *l {
                    AeLayer::Conv(c_out) => {
                        let conv = Conv::new(c_in, c_out, spec.kernel, rng);
                        c_in = c_out;
                        Some(conv)
                    }
                    _ => None,
                })
                .collect()
        };
        let encoder = build(&spec.encoder);
        let decoder = build(&spec.decoder);
        Ok(Self {
            spec,
            input_size,
            encoder,
            decoder,
        })
    }

    fn run_half(
        &self,
        g: &mut Graph<T>,
        binds: &mut Bindings,
        decoder: bool,
        x: Var,
    ) -> Result<Var> {
        let (layers, convs, name) = if decoder {
            (&self.spec.decoder, &self.decoder, "ae/dec")
        } else {
            (&self.spec.encoder, &self.encoder, "ae/enc")
        };
        let last = layers.len() - 1;
        let mut h = x;
        for (i, (layer, conv)) in layers.iter().zip(convs).enumerate() {
            h = match (layer, conv) {
                (AeLayer::Conv(_), Some(conv)) => {
                    let y = conv.forward(g, binds, &format!("{name}{i}"), h, Padding::Same)?;
                    if i == last {
                        g.sigmoid(y)
                    } else {
                        g.relu(y)
                    }
                }
                (AeLayer::Pool, _) => g.maxpool2d(h, self.spec.pool, self.spec.pool)?,
                (AeLayer::Upsample, _) => g.upsample_nearest(h, self.spec.upsample)?,
                _ => unreachable!("conv layers always carry weights"),
            };
        }
        Ok(h)
    }

    pub fn encode(&self, g: &mut Graph<T>, binds: &mut Bindings, x: Var) -> Result<Var> {
        let s = self.input_size;
        match *g.shape(x) {
            [_, 1, h, w] if h == s && w == s => {}
            ref other => {
                return Err(Error::Shape(format!(
                    "autoencoder expects [N,1,{s},{s}], got {other:?}"
                )))
            }
        }
        self.run_half(g, binds, false, x)
    }

    /// Returns `(features, reconstruction)`.
    pub fn forward(&self, g: &mut Graph<T>, binds: &mut Bindings, x: Var) -> Result<(Var, Var)> {
        let features = self.encode(g, binds, x)?;
        let recon = self.run_half(g, binds, true, features)?;
        Ok((features, recon))
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (name, half) in [("ae/enc", &self.encoder), ("ae/dec", &self.decoder)] {
            for (i, conv) in half.iter().enumerate() {
                if let Some(c) = conv {
                    c.tensors(&format!("{name}{i}"), out);
                }
            }
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (name, half) in [("ae/enc", &mut self.encoder), ("ae/dec", &mut self.decoder)] {
            for (i, conv) in half.iter_mut().enumerate() {
                if let Some(c) = conv {
                    c.tensors_mut(&format!("{name}{i}"), out);
                }
            }
        }
    }
}
