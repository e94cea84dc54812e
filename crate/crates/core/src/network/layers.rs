use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Gradients, Graph, Padding, Scalar, Tensor, Var};
use crate::Result;

/// Records which graph node each named parameter was bound to during a
/// forward pass, so gradients can be routed back afterwards.
pub struct Bindings {
    track: bool,
    vars: HashMap<String, Var>,
}

impl Bindings {
    /// Parameters become gradient-tracked leaves.
    pub fn training() -> Self {
        Self {
            track: true,
            vars: HashMap::new(),
        }
    }

    /// Parameters become constants; no backward closures are recorded.
    pub fn inference() -> Self {
        Self {
            track: false,
            vars: HashMap::new(),
        }
    }

    pub fn bind<T: Scalar>(&mut self, g: &mut Graph<T>, name: &str, t: &Tensor<T>) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let v = if self.track && t.requires_grad {
            g.leaf(t)
        } else {
            g.constant(t.clone())
        };
        self.vars.insert(name.to_owned(), v);
        v
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Adds every bound parameter's gradient into `tensors`.
    pub fn accumulate<'a, T: Scalar>(
        &self,
        grads: &Gradients<T>,
        tensors: impl IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    ) {
        for (name, t) in tensors {
            if !t.requires_grad {
                continue;
            }
            match self.vars.get(&name).and_then(|&v| grads.get(v)) {
                Some(g) => t.accumulate_grad(g),
                None => t.accumulate_grad(&vec![T::zero(); t.len()]),
            }
        }
    }
}

/// Uniform fan-in initialization with He-style bound `sqrt(6 / fan_in)`.
pub(crate) fn he_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape matches").with_grad()
}

#[derive(Clone, Debug)]
pub struct Conv<T = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            kernel: he_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
            bias: Tensor::zeros(&[c_out]).with_grad(),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        binds: &mut Bindings,
        prefix: &str,
        x: Var,
        padding: Padding,
    ) -> Result<Var> {
        let k = binds.bind(g, &format!("{prefix}/kernel"), &self.kernel);
        let b = binds.bind(g, &format!("{prefix}/bias"), &self.bias);
        g.conv2d(x, k, b, 1, padding)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}/kernel"), &self.kernel));
        out.push((format!("{prefix}/bias"), &self.bias));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}/kernel"), &mut self.kernel));
        out.push((format!("{prefix}/bias"), &mut self.bias));
    }
}

#[derive(Clone, Debug)]
pub struct Dense<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: he_uniform(&[d_out, d_in], d_in, rng),
            bias: Tensor::zeros(&[d_out]).with_grad(),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        binds: &mut Bindings,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let w = binds.bind(g, &format!("{prefix}/weight"), &self.weight);
        let b = binds.bind(g, &format!("{prefix}/bias"), &self.bias);
        g.dense(x, w, b)
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((format!("{prefix}/weight"), &self.weight));
        out.push((format!("{prefix}/bias"), &self.bias));
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((format!("{prefix}/weight"), &mut self.weight));
        out.push((format!("{prefix}/bias"), &mut self.bias));
    }
}

pub(crate) fn zero_all<T: Scalar>(tensors: Vec<(String, &mut Tensor<T>)>) {
    for (_, t) in tensors {
        if t.requires_grad {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
