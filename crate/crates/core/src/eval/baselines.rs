use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{Confusion, EvalReport};
use super::ssim::{ssim, SsimConfig};
use crate::data::{stack, GrayImage, PairExample};
use crate::error::{Error, Result};
use crate::network::{Autoencoder, AutoencoderSpec, Bindings};
use crate::optim::{Hyper, OptimizerKind, OptimizerState};
use crate::tensor::{bce_term, Graph};

/// Autoencoder training length used by the baseline.
pub const AE_EPOCHS: usize = 10;
/// Adam step size for autoencoder training.
pub const AE_LEARNING_RATE: f64 = 1e-3;

fn image<'a>(images: &'a BTreeMap<String, GrayImage>, id: &str) -> Result<&'a GrayImage> {
    images
        .get(id)
        .ok_or_else(|| Error::Data(format!("no image loaded for drug {id}")))
}

fn labels(pairs: &[PairExample]) -> Vec<u8> {
    pairs.iter().map(|p| p.label).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// SSIM per pair, thresholded at the mean SSIM: a pair is predicted to
/// interact when its SSIM is at or above the mean. Returns the report and
/// the per-pair scores.
pub fn ssim_classify(
    pairs: &[PairExample],
    images: &BTreeMap<String, GrayImage>,
    cfg: &SsimConfig,
    seed: u64,
) -> Result<(EvalReport, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::Data("ssim baseline needs at least one pair".into()));
    }
    let scores = pairs
        .iter()
        .map(|p| Ok(ssim(image(images, &p.a)?, image(images, &p.b)?, cfg)?.score))
        .collect::<Result<Vec<f64>>>()?;
    let threshold = mean(&scores);
    let c = Confusion::from_predictions(scores.iter().map(|&s| s >= threshold), &labels(pairs));
    Ok((EvalReport::from_confusion(c, threshold, seed, 0), scores))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeCriterion {
    Bce,
    Cosine,
}

impl AeCriterion {
    pub fn as_str(self) -> &'static str {
        match self {
            AeCriterion::Bce => "bce",
            AeCriterion::Cosine => "cosine",
        }
    }

    /// Scores a feature pair. BCE treats `a` as the prediction and `b` as
    /// the target.
    pub fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            AeCriterion::Bce => {
                a.iter()
                    .zip(b)
                    .map(|(&p, &t)| bce_term(p as f64, t as f64))
                    .sum::<f64>()
                    / a.len().max(1) as f64
            }
            AeCriterion::Cosine => cosine(a, b),
        }
    }

    /// Similarity criteria predict interaction at or above the threshold,
    /// dissimilarity criteria at or below it.
    fn predicts_interaction(self, score: f64, threshold: f64) -> bool {
        match self {
            AeCriterion::Bce => score <= threshold,
            AeCriterion::Cosine => score >= threshold,
        }
    }
}

impl FromStr for AeCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(AeCriterion::Bce),
            "cosine" => Ok(AeCriterion::Cosine),
            other => Err(Error::Config(format!("unknown criterion {other:?}"))),
        }
    }
}

/// Cosine similarity; two zero vectors count as identical.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum();
    match (na > 0.0, nb > 0.0) {
        (true, true) => (dot / (na * nb).sqrt()).clamp(-1.0, 1.0),
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Autoencoder together with how long it has been trained.
#[derive(Clone, Debug)]
pub struct AeBaseline {
    pub model: Autoencoder<f32>,
    pub epochs_trained: usize,
}

impl AeBaseline {
    pub fn new(spec: AutoencoderSpec, input_size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            model: Autoencoder::new(spec, input_size, &mut rng)?,
            epochs_trained: 0,
        })
    }

    /// Minimizes pixel-wise BCE reconstruction loss; returns the mean loss
    /// of each epoch.
    pub fn train(
        &mut self,
        images: &[&GrayImage],
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if images.is_empty() || batch_size == 0 {
            return Err(Error::Data(
                "autoencoder training needs images and a batch size".into(),
            ));
        }
        let mut opt = OptimizerState::<f32>::new(
            OptimizerKind::Adam,
            Hyper::defaults(OptimizerKind::Adam).with_lr(AE_LEARNING_RATE),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (b, chunk) in order.chunks(batch_size).enumerate() {
                let batch: Vec<&GrayImage> = chunk.iter().map(|&i| images[i]).collect();
                let x = stack(&batch)?;
                let mut g = Graph::new();
                let mut binds = Bindings::training();
                let xv = g.constant(x.clone());
                let (_, recon) = self.model.forward(&mut g, &mut binds, xv)?;
                let loss = g.bce_mean(recon, x.into_data())?;
                let value = g.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "autoencoder loss at epoch {} batch {b}",
                        epoch + 1
                    )));
                }
                total += value * chunk.len() as f64;
                let grads = g.backward(loss)?;
                let mut params = Vec::new();
                self.model.tensors_mut(&mut params);
                params.iter_mut().for_each(|(_, t)| t.zero_grad());
                binds.accumulate(&grads, params);
                let mut params = Vec::new();
                self.model.tensors_mut(&mut params);
                opt.step(params)?;
            }
            history.push(total / images.len() as f64);
            self.epochs_trained += 1;
        }
        Ok(history)
    }

    /// Flattened encoder output for one image.
    pub fn features(&self, image: &GrayImage) -> Result<Vec<f32>> {
        let mut g = Graph::new();
        let x = g.constant(image.to_tensor());
        let f = self.model.encode(&mut g, &mut Bindings::inference(), x)?;
        Ok(g.value(f).data().to_vec())
    }
}

/// Scores each pair on encoder features and thresholds at the mean score
/// over `pairs`. Returns the report and the per-pair scores.
pub fn ae_similarity(
    ae: &AeBaseline,
    pairs: &[PairExample],
    images: &BTreeMap<String, GrayImage>,
    criterion: AeCriterion,
    seed: u64,
) -> Result<(EvalReport, Vec<f64>)> {
    if ae.epochs_trained == 0 {
        return Err(Error::Config("autoencoder has not been trained".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Data(
            "autoencoder baseline needs at least one pair".into(),
        ));
    }
    let mut cache: BTreeMap<&str, Vec<f32>> = BTreeMap::new();
    for id in pairs.iter().flat_map(|p| [p.a.as_str(), p.b.as_str()]) {
        if !cache.contains_key(id) {
            cache.insert(id, ae.features(image(images, id)?)?);
        }
    }
    let scores: Vec<f64> = pairs
        .iter()
        .map(|p| criterion.score(&cache[p.a.as_str()], &cache[p.b.as_str()]))
        .collect();
    let threshold = mean(&scores);
    let c = Confusion::from_predictions(
        scores
            .iter()
            .map(|&s| criterion.predicts_interaction(s, threshold)),
        &labels(pairs),
    );
    Ok((
        EvalReport::from_confusion(c, threshold, seed, ae.epochs_trained),
        scores,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32) -> GrayImage {
        GrayImage::from_fn(4, 4, |r, c| if (r + c) % 2 == 0 { v } else { 1.0 - v }).unwrap()
    }

    fn pair(a: &str, b: &str, label: u8) -> PairExample {
        PairExample::new(a, b, label).unwrap()
    }

    #[test]
    fn ssim_mean_threshold() {
        let images: BTreeMap<String, GrayImage> =
            [("a", img(0.9)), ("b", img(0.9)), ("c", img(0.1))]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let pairs = [pair("a", "b", 1), pair("a", "c", 0)];
        let (r, scores) = ssim_classify(&pairs, &images, &SsimConfig::default(), 0).unwrap();
        assert_eq!(scores[0], 1.0);
        assert_eq!(r.threshold, (scores[0] + scores[1]) / 2.0);
        assert_eq!((r.confusion.tp, r.confusion.tn), (1, 1));
        assert!(ssim_classify(&[], &images, &SsimConfig::default(), 0).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[0.3, 0.4], &[0.3, 0.4]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    }

    #[test]
    fn bce_self_is_entropy() {
        let s = AeCriterion::Bce.score(&[0.5, 0.5], &[0.5, 0.5]);
        assert!((s - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(AeCriterion::Bce.score(&[0.9], &[0.5]) > s);
        assert!(AeCriterion::Bce.score(&[0.2], &[0.5]) > s);
    }

    #[test]
    fn untrained_autoencoder_rejected() {
        let ae = AeBaseline::new(AutoencoderSpec::narrowed(16), 8, 0).unwrap();
        let images: BTreeMap<String, GrayImage> = [(
            "a".to_string(),
            GrayImage::new(8, 8, vec![0.5; 64]).unwrap(),
        )]
        .into();
        let err = ae_similarity(&ae, &[pair("a", "b", 1)], &images, AeCriterion::Cosine, 0);
        assert_eq!(err.unwrap_err().kind(), "config");
    }

    #[test]
    fn short_training_reduces_reconstruction_loss() {
        let images: Vec<GrayImage> = (0..4)
            .map(|k| GrayImage::from_fn(8, 8, |r, c| ((r * k + c) % 3) as f32 / 2.0).unwrap())
            .collect();
        let refs: Vec<&GrayImage> = images.iter().collect();
        let mut ae = AeBaseline::new(AutoencoderSpec::narrowed(16), 8, 1).unwrap();
        let hist = ae.train(&refs, 5, 2, 1).unwrap();
        assert_eq!(ae.epochs_trained, 5);
        assert!(hist.last().unwrap() < &hist[0], "{hist:?}");
    }
}
