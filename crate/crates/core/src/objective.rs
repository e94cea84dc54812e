//! Embedding distances and the contrastive loss.
//!
//! Label convention: `Y = 1` marks an interacting pair, which the loss pushes
//! at least `margin` apart; `Y = 0` pairs are pulled together.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Guard for zero denominators in the normalized distances.
pub const DISTANCE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Manhattan,
    Hellinger,
    Jaccard,
}

impl DistanceKind {
    pub const ALL: [DistanceKind; 4] = [
        DistanceKind::Euclidean,
        DistanceKind::Manhattan,
        DistanceKind::Hellinger,
        DistanceKind::Jaccard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Manhattan => "manhattan",
            DistanceKind::Hellinger => "hellinger",
            DistanceKind::Jaccard => "jaccard",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistanceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown distance metric {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub metric: DistanceKind,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            metric: DistanceKind::Euclidean,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be finite and non-negative, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// `relu(e) / max(mean(relu(e)), eps)`, plus the denominator actually used
/// and whether the mean was above the floor.
fn normalize<T: Scalar>(e: &[T]) -> (Vec<T>, T, bool) {
    let eps = T::lit(DISTANCE_EPS);
    let c: Vec<T> = e.iter().map(|&v| v.max(T::zero())).collect();
    let mean = c.iter().copied().sum::<T>() / T::from_usize(c.len()).expect("len fits");
    let live = mean > eps;
    let denom = if live { mean } else { eps };
    (c.iter().map(|&v| v / denom).collect(), denom, live)
}

/// Pulls a gradient w.r.t. the normalized vector back to the raw embedding.
fn normalize_backward<T: Scalar>(e: &[T], p: &[T], denom: T, live: bool, gp: &[T]) -> Vec<T> {
    let d = T::from_usize(e.len()).expect("len fits");
    let coupling = if live {
        gp.iter().zip(p).map(|(&g, &pi)| g * pi).sum::<T>() / (d * denom)
    } else {
        T::zero()
    };
    e.iter()
        .zip(gp)
        .map(|(&ei, &g)| {
            if ei > T::zero() {
                g / denom - coupling
            } else {
                T::zero()
            }
        })
        .collect()
}

fn check_pair<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Shape("distance of empty embeddings".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Distance between two embeddings.
///
/// Hellinger and Jaccard first clamp each embedding to non-negative values
/// and divide by its mean. Jaccard is the soft `Σ min / Σ max` ratio, so
/// identical embeddings score 1.
pub fn distance<T: Scalar>(kind: DistanceKind, a: &[T], b: &[T]) -> Result<T> {
    check_pair(a, b)?;
    Ok(distance_value(kind, a, b))
}

fn distance_value<T: Scalar>(kind: DistanceKind, a: &[T], b: &[T]) -> T {
    match kind {
        DistanceKind::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<T>()
            .sqrt(),
        DistanceKind::Manhattan => a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum(),
        DistanceKind::Hellinger => {
            let (pa, _, _) = normalize(a);
            let (pb, _, _) = normalize(b);
            let s: T = pa
                .iter()
                .zip(&pb)
                .map(|(&x, &y)| {
                    let d = x.sqrt() - y.sqrt();
                    d * d
                })
                .sum();
            (T::lit(2.0) * s).sqrt()
        }
        DistanceKind::Jaccard => {
            let (pa, _, _) = normalize(a);
            let (pb, _, _) = normalize(b);
            let (num, den) = pa
                .iter()
                .zip(&pb)
                .fold((T::zero(), T::zero()), |(n, d), (&x, &y)| {
                    (n + x.min(y), d + x.max(y))
                });
            num / den.max(T::lit(DISTANCE_EPS))
        }
    }
}

/// Gradient of `upstream · distance(a, b)` with respect to `a` and `b`.
/// Non-differentiable points (ties, zero distance) take a zero subgradient.
fn distance_grad<T: Scalar>(kind: DistanceKind, a: &[T], b: &[T], upstream: T) -> (Vec<T>, Vec<T>) {
    let zero = T::zero();
    match kind {
        DistanceKind::Euclidean => {
            let dist = distance_value(kind, a, b);
            if dist == zero {
                return (vec![zero; a.len()], vec![zero; b.len()]);
            }
            let ga: Vec<T> = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| upstream * (x - y) / dist)
                .collect();
            let gb = ga.iter().map(|&g| -g).collect();
            (ga, gb)
        }
        DistanceKind::Manhattan => {
            let ga: Vec<T> = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    if x > y {
                        upstream
                    } else if x < y {
                        -upstream
                    } else {
                        zero
                    }
                })
                .collect();
            let gb = ga.iter().map(|&g| -g).collect();
            (ga, gb)
        }
        DistanceKind::Hellinger => {
            let (pa, da, la) = normalize(a);
            let (pb, db, lb) = normalize(b);
            let h = distance_value(kind, a, b);
            if h == zero {
                return (vec![zero; a.len()], vec![zero; b.len()]);
            }
            let mut gpa = vec![zero; a.len()];
            let mut gpb = vec![zero; b.len()];
            for i in 0..a.len() {
                let (sa, sb) = (pa[i].sqrt(), pb[i].sqrt());
                let d = sa - sb;
                if sa > zero {
                    gpa[i] = upstream * d / (h * sa);
                }
                if sb > zero {
                    gpb[i] = -upstream * d / (h * sb);
                }
            }
            (
                normalize_backward(a, &pa, da, la, &gpa),
                normalize_backward(b, &pb, db, lb, &gpb),
            )
        }
        DistanceKind::Jaccard => {
            let (pa, da, la) = normalize(a);
            let (pb, db, lb) = normalize(b);
            let eps = T::lit(DISTANCE_EPS);
            let (num, den) = pa.iter().zip(&pb).fold((zero, zero), |(n, d), (&x, &y)| {
                (n + x.min(y), d + x.max(y))
            });
            let den_live = den > eps;
            let den_used = if den_live { den } else { eps };
            let d_num = upstream / den_used;
            let d_den = if den_live {
                -upstream * num / (den_used * den_used)
            } else {
                zero
            };
            let mut gpa = vec![zero; a.len()];
            let mut gpb = vec![zero; b.len()];
            for i in 0..a.len() {
                // min goes to `a` and max to `b` on ties
                if pa[i] <= pb[i] {
                    gpa[i] += d_num;
                    gpb[i] += d_den;
                } else {
                    gpb[i] += d_num;
                    gpa[i] += d_den;
                }
            }
            (
                normalize_backward(a, &pa, da, la, &gpa),
                normalize_backward(b, &pb, db, lb, &gpb),
            )
        }
    }
}

fn check_labels<T: Scalar>(labels: &[T]) -> Result<()> {
    match labels.iter().find(|&&y| y != T::zero() && y != T::one()) {
        Some(y) => Err(Error::Label(format!("labels must be 0 or 1, got {y}"))),
        None => Ok(()),
    }
}

fn pair_loss<T: Scalar>(d: T, y: T, margin: T) -> T {
    let half = T::lit(0.5);
    let hinge = (margin - d).max(T::zero());
    (T::one() - y) * half * d * d + y * half * hinge * hinge
}

/// Mean contrastive loss over a batch of distances and binary labels.
pub fn contrastive_loss(cfg: &ContrastiveConfig, d: &[f64], y: &[f64]) -> Result<f64> {
    cfg.validate()?;
    if d.len() != y.len() || d.is_empty() {
        return Err(Error::Shape(format!(
            "{} distances for {} labels",
            d.len(),
            y.len()
        )));
    }
    check_labels(y)?;
    let total: f64 = d
        .iter()
        .zip(y)
        .map(|(&di, &yi)| pair_loss(di, yi, cfg.margin))
        .sum();
    Ok(total / d.len() as f64)
}

impl<T: Scalar> Graph<T> {
    /// Row-wise distance between two `[N, D]` embedding batches, giving `[N]`.
    pub fn pair_distance(&mut self, kind: DistanceKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || self.shape(b) != sa.as_slice() {
            return Err(Error::Shape(format!(
                "pair_distance needs two equal [N,D] batches, got {sa:?} and {:?}",
                self.shape(b)
            )));
        }
        let (n, dim) = (sa[0], sa[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = (0..n)
            .map(|i| {
                let r = i * dim..(i + 1) * dim;
                distance_value(kind, &av[r.clone()], &bv[r])
            })
            .collect();
        let value = Tensor::new(&[n], out)?;
        Ok(self.push(
            "pair_distance",
            value,
            vec![a, b],
            Box::new(move |ctx, gout| {
                let (av, bv) = (ctx.input(0).data(), ctx.input(1).data());
                let mut ga = Vec::with_capacity(av.len());
                let mut gb = Vec::with_capacity(bv.len());
                for i in 0..n {
                    let r = i * dim..(i + 1) * dim;
                    let (x, y) = distance_grad(kind, &av[r.clone()], &bv[r], gout[i]);
                    ga.extend(x);
                    gb.extend(y);
                }
                vec![ga, gb]
            }),
        ))
    }

    /// Mean contrastive loss of a `[N]` distance vector against constant
    /// binary labels.
    pub fn contrastive_loss(&mut self, dist: Var, labels: &[T], margin: T) -> Result<Var> {
        let d = self.value(dist).data();
        if d.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} distances for {} labels",
                d.len(),
                labels.len()
            )));
        }
        check_labels(labels)?;
        if !(margin >= T::zero()) {
            return Err(Error::Config(format!("negative margin {margin}")));
        }
        let n = T::from_usize(d.len()).expect("len fits");
        let total: T = d
            .iter()
            .zip(labels)
            .map(|(&di, &yi)| pair_loss(di, yi, margin))
            .sum();
        let labels = labels.to_vec();
        Ok(self.push(
            "contrastive_loss",
            Tensor::scalar(total / n),
            vec![dist],
            Box::new(move |ctx, gout| {
                let d = ctx.input(0).data();
                vec![d
                    .iter()
                    .zip(&labels)
                    .map(|(&di, &yi)| {
                        let hinge = (margin - di).max(T::zero());
                        gout[0] * ((T::one() - yi) * di - yi * hinge) / n
                    })
                    .collect()]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings() {
        let e = [0.3f64, 1.2, 0.7, 2.0];
        for kind in [
            DistanceKind::Euclidean,
            DistanceKind::Manhattan,
            DistanceKind::Hellinger,
        ] {
            assert_eq!(distance(kind, &e, &e).unwrap(), 0.0, "{kind}");
        }
        assert_eq!(distance(DistanceKind::Jaccard, &e, &e).unwrap(), 1.0);
    }

    #[test]
    fn unit_vector_examples() {
        let (a, b) = ([1.0f64, 0.0], [0.0f64, 1.0]);
        assert_eq!(distance(DistanceKind::Manhattan, &a, &b).unwrap(), 2.0);
        assert_eq!(
            distance(DistanceKind::Euclidean, &a, &b).unwrap(),
            2f64.sqrt()
        );
        // mean-normalized: p = [2, 0] and [0, 2]; sqrt(2 * (2 + 2)) = 2 * sqrt(2)
        let h = distance(DistanceKind::Hellinger, &a, &b).unwrap();
        assert!((h - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(distance(DistanceKind::Jaccard, &a, &b).unwrap(), 0.0);
    }

    #[test]
    fn all_negative_embeddings_stay_finite() {
        let a = [-1.0f32, -2.0, -0.5];
        let b = [-3.0f32, -0.1, -0.2];
        for kind in DistanceKind::ALL {
            let d = distance(kind, &a, &b).unwrap();
            assert!(d.is_finite(), "{kind}");
            let (ga, gb) = distance_grad(kind, &a, &b, 1.0);
            assert!(ga.iter().chain(&gb).all(|g| g.is_finite()));
        }
    }

    #[test]
    fn mismatched_or_empty_embeddings_error() {
        assert!(distance::<f64>(DistanceKind::Euclidean, &[], &[]).is_err());
        assert!(distance(DistanceKind::Euclidean, &[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn contrastive_examples() {
        let cfg = ContrastiveConfig::default();
        assert_eq!(contrastive_loss(&cfg, &[1.5], &[1.0]).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&cfg, &[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(contrastive_loss(&cfg, &[0.5], &[1.0]).unwrap(), 0.125);
        assert!(matches!(
            contrastive_loss(&cfg, &[0.5], &[0.5]),
            Err(Error::Label(_))
        ));
        let bad = ContrastiveConfig {
            margin: -1.0,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hinge_has_zero_gradient_beyond_margin() {
        let mut g = Graph::<f64>::new();
        let d = g.leaf(&Tensor::new(&[2], vec![1.0, 2.5]).unwrap().with_grad());
        let loss = g.contrastive_loss(d, &[1.0, 1.0], 1.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(d).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn metric_names_round_trip() {
        for kind in DistanceKind::ALL {
            assert_eq!(kind.to_string().parse::<DistanceKind>().unwrap(), kind);
        }
        assert!("cosine".parse::<DistanceKind>().is_err());
    }
}
