//! Network architectures: the Siamese embedding tower, the spatial
//! transformer preprocessor and the convolutional autoencoder baseline.

mod autoencoder;
mod layers;
mod stn;
mod tower;

pub use autoencoder::{AeLayer, Autoencoder, AutoencoderSpec};
pub use layers::{Bindings, Conv, Dense};
pub use stn::{warp, Stn, StnSpec, IDENTITY_THETA};
pub use tower::{Tower, TowerSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::DistanceKind;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ModelSpec {
    pub tower: TowerSpec,
    pub stn: Option<StnSpec>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.tower.validate()?;
        if let Some(stn) = &self.stn {
            stn.flatten_dim(self.tower.input_size)?;
        }
        Ok(())
    }
}

/// Learned state of the Siamese model. Both branches run through the single
/// `tower` (and `stn`), so weights are shared by identity.
#[derive(Clone, Debug)]
pub struct ModelState<T = f32> {
    pub spec: ModelSpec,
    pub tower: Tower<T>,
    pub stn: Option<Stn<T>>,
}

impl<T: Scalar> ModelState<T> {
    /// Seeded initialization; the same seed always gives the same weights.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tower = Tower::new(spec.tower.clone(), &mut rng)?;
        let stn = spec
            .stn
            .clone()
            .map(|s| Stn::new(s, spec.tower.input_size, &mut rng))
            .transpose()?;
        Ok(Self { spec, tower, stn })
    }

    pub fn input_size(&self) -> usize {
        self.spec.tower.input_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.tower.embedding_dim()
    }

    /// Switches batch normalization between batch and running statistics.
    pub fn set_training(&mut self, training: bool) {
        self.tower.set_training(training);
    }

    /// Optional spatial transform followed by the tower: `[N,1,S,S] → [N,D]`.
    pub fn embed(&mut self, g: &mut Graph<T>, binds: &mut Bindings, x: Var) -> Result<Var> {
        let x = match &self.stn {
            Some(stn) => stn.forward(g, binds, x)?,
            None => x,
        };
        self.tower.forward(g, binds, x)
    }

    /// Per-pair distance between the embeddings of `a[i]` and `b[i]`.
    ///
    /// Both batches go through one tower pass (concatenated), so the two
    /// branches share parameters and batch statistics.
    pub fn siamese_forward(
        &mut self,
        g: &mut Graph<T>,
        binds: &mut Bindings,
        a: Var,
        b: Var,
        metric: DistanceKind,
    ) -> Result<Var> {
        if g.shape(a) != g.shape(b) {
            return Err(Error::Shape(format!(
                "pair batches differ: {:?} vs {:?}",
                g.shape(a),
                g.shape(b)
            )));
        }
        let n = g.shape(a)[0];
        let both = g.concat_batch(&[a, b])?;
        let emb = self.embed(g, binds, both)?;
        let ea = g.slice_batch(emb, 0, n)?;
        let eb = g.slice_batch(emb, n, n)?;
        g.pair_distance(metric, ea, eb)
    }

    /// Embeddings of a `[N,1,S,S]` batch without recording gradients.
    pub fn embeddings(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut binds = Bindings::inference();
        let x = g.constant(images.clone());
        let e = self.embed(&mut g, &mut binds, x)?;
        Ok(g.value(e).clone())
    }

    /// Distances for a batch of pairs without recording gradients.
    pub fn distances(
        &mut self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        metric: DistanceKind,
    ) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let mut binds = Bindings::inference();
        let av = g.constant(a.clone());
        let bv = g.constant(b.clone());
        let d = self.siamese_forward(&mut g, &mut binds, av, bv, metric)?;
        Ok(g.value(d).data().to_vec())
    }

    /// Every persistent tensor (parameters and running statistics), in a
    /// stable order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.tower.tensors(&mut out);
        if let Some(stn) = &self.stn {
            stn.tensors(&mut out);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.tower.tensors_mut(&mut out);
        if let Some(stn) = self.stn.as_mut() {
            stn.tensors_mut(&mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Zeroes every trainable parameter.
    pub fn zero_parameters(&mut self) {
        layers::zero_all(self.tensors_mut());
    }

    /// Copy in another element type, e.g. `f64` for gradient checks.
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let mut out = ModelState::<U>::new(self.spec.clone(), 0).expect("spec already validated");
        let src = self.tensors();
        for ((_, dst), (_, s)) in out.tensors_mut().into_iter().zip(src) {
            *dst = s.cast();
        }
        let training = self.tower.norms.first().is_none_or(|n| n.training);
        out.set_training(training);
        out
    }
}

impl<T: Scalar> Autoencoder<T> {
    pub fn zero_parameters(&mut self) {
        let mut out = Vec::new();
        self.tensors_mut(&mut out);
        layers::zero_all(out);
    }
}
