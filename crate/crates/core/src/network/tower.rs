use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Bindings, Conv, Dense};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormState, Graph, Padding, Scalar, Tensor, Var};

/// Shape of the shared convolutional tower.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerSpec {
    pub input_size: usize,
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub fc_sizes: Vec<usize>,
}

impl Default for TowerSpec {
    fn default() -> Self {
        Self {
            input_size: 500,
            conv_filters: vec![64, 128, 128, 256],
            kernel: 9,
            pool: 3,
            fc_sizes: vec![256, 128, 20],
        }
    }
}

impl TowerSpec {
    pub fn embedding_dim(&self) -> usize {
        self.fc_sizes.last().copied().unwrap_or(0)
    }

    /// Spatial side after each conv and each pool, starting with the input.
    pub fn shape_chain(&self) -> Result<Vec<usize>> {
        if self.kernel == 0 || self.pool == 0 {
            return Err(Error::Config("kernel and pool must be positive".into()));
        }
        let mut side = self.input_size;
        let mut chain = vec![side];
        for (i, _) in self.conv_filters.iter().enumerate() {
            if side < self.kernel {
                return Err(Error::Config(format!(
                    "conv block {i}: side {side} smaller than kernel {}",
                    self.kernel
                )));
            }
            side = side - self.kernel + 1;
            chain.push(side);
            if side < self.pool {
                return Err(Error::Config(format!(
                    "conv block {i}: side {side} smaller than pool {}",
                    self.pool
                )));
            }
            side = (side - self.pool) / self.pool + 1;
            chain.push(side);
        }
        Ok(chain)
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        let side = *self.shape_chain()?.last().expect("chain has input");
        let channels = self.conv_filters.last().copied().unwrap_or(1);
        Ok(side * side * channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::Config("input_size must be positive".into()));
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return Err(Error::Config(
                "conv_filters must be non-empty and positive".into(),
            ));
        }
        if self.fc_sizes.is_empty() || self.fc_sizes.contains(&0) {
            return Err(Error::Config(
                "fc_sizes must be non-empty and positive".into(),
            ));
        }
        self.flatten_dim().map(|_| ())
    }
}

/// Shared-weight embedding network: `[conv → relu → maxpool → batchnorm]*`
/// then dense layers, relu on all but the last.
#[derive(Clone, Debug)]
pub struct Tower<T = f32> {
    pub spec: TowerSpec,
    pub convs: Vec<Conv<T>>,
    pub norms: Vec<BatchNormState<T>>,
    pub fcs: Vec<Dense<T>>,
}

impl<T: Scalar> Tower<T> {
    pub fn new(spec: TowerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut c_in = 1;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for &c_out in &spec.conv_filters {
            convs.push(Conv::new(c_in, c_out, spec.kernel, rng));
            norms.push(BatchNormState::new(c_out));
            c_in = c_out;
        }
        let mut d_in = spec.flatten_dim()?;
        let mut fcs = Vec::new();
        for &d_out in &spec.fc_sizes {
            fcs.push(Dense::new(d_in, d_out, rng));
            d_in = d_out;
        }
        Ok(Self {
            spec,
            convs,
            norms,
            fcs,
        })
    }

    pub fn set_training(&mut self, training: bool) {
        self.norms.iter_mut().for_each(|n| n.training = training);
    }

    /// Embeds a `[N, 1, S, S]` batch into `[N, embedding_dim]`.
    pub fn forward(&mut self, g: &mut Graph<T>, binds: &mut Bindings, x: Var) -> Result<Var> {
        let s = self.spec.input_size;
        match *g.shape(x) {
            [_, 1, h, w] if h == s && w == s => {}
            ref other => {
                return Err(Error::Shape(format!(
                    "tower expects [N,1,{s},{s}], got {other:?}"
                )))
            }
        }
        let mut h = x;
        for (i, (conv, norm)) in self.convs.iter().zip(self.norms.iter_mut()).enumerate() {
            h = conv.forward(g, binds, &format!("tower/conv{i}"), h, Padding::Valid)?;
            h = g.relu(h);
            h = g.maxpool2d(h, self.spec.pool, self.spec.pool)?;
            let gamma = binds.bind(g, &format!("tower/bn{i}/gamma"), &norm.gamma);
            let beta = binds.bind(g, &format!("tower/bn{i}/beta"), &norm.beta);
            h = g.batch_norm(h, gamma, beta, norm)?;
        }
        h = g.flatten(h)?;
        let last = self.fcs.len() - 1;
        for (i, fc) in self.fcs.iter().enumerate() {
            h = fc.forward(g, binds, &format!("tower/fc{i}"), h)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    pub fn tensors<'a>(&'a self, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, (conv, norm)) in self.convs.iter().zip(&self.norms).enumerate() {
            conv.tensors(&format!("tower/conv{i}"), out);
            out.push((format!("tower/bn{i}/gamma"), &norm.gamma));
            out.push((format!("tower/bn{i}/beta"), &norm.beta));
            out.push((format!("tower/bn{i}/running_mean"), &norm.running_mean));
            out.push((format!("tower/bn{i}/running_var"), &norm.running_var));
        }
        for (i, fc) in self.fcs.iter().enumerate() {
            fc.tensors(&format!("tower/fc{i}"), out);
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, (conv, norm)) in self.convs.iter_mut().zip(self.norms.iter_mut()).enumerate() {
            conv.tensors_mut(&format!("tower/conv{i}"), out);
            out.push((format!("tower/bn{i}/gamma"), &mut norm.gamma));
            out.push((format!("tower/bn{i}/beta"), &mut norm.beta));
            out.push((format!("tower/bn{i}/running_mean"), &mut norm.running_mean));
            out.push((format!("tower/bn{i}/running_var"), &mut norm.running_var));
        }
        for (i, fc) in self.fcs.iter_mut().enumerate() {
            fc.tensors_mut(&format!("tower/fc{i}"), out);
        }
    }
}
