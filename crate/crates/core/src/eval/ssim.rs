use serde::{Deserialize, Serialize};

use crate::data::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c1() > 0.0 && self.c2() > 0.0) || !self.c1().is_finite() || !self.c2().is_finite()
        {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimBreakdown {
    pub mu_a: f64,
    pub mu_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
    pub score: f64,
}

fn mean(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64
}

fn covariance(x: &[f32], mx: f64, y: &[f32], my: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| (a as f64 - mx) * (b as f64 - my))
        .sum::<f64>()
        / x.len() as f64
}

/// Global (single-window) SSIM over two equally sized pixel buffers.
pub fn ssim_pixels(a: &[f32], b: &[f32], cfg: &SsimConfig) -> Result<SsimBreakdown> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "ssim needs equal non-empty inputs, got {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    cfg.validate()?;
    let (mu_a, mu_b) = (mean(a), mean(b));
    let var_a = covariance(a, mu_a, a, mu_a);
    let var_b = covariance(b, mu_b, b, mu_b);
    let cov = covariance(a, mu_a, b, mu_b);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
    let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    Ok(SsimBreakdown {
        mu_a,
        mu_b,
        var_a,
        var_b,
        cov,
        score: num / den,
    })
}

pub fn ssim(a: &GrayImage, b: &GrayImage, cfg: &SsimConfig) -> Result<SsimBreakdown> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "ssim needs equal sizes, got {}x{} and {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    ssim_pixels(a.pixels(), b.pixels(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        let img = GrayImage::from_fn(5, 7, |r, c| ((r * 7 + c) % 11) as f32 / 10.0).unwrap();
        assert_eq!(ssim(&img, &img, &SsimConfig::default()).unwrap().score, 1.0);
    }

    #[test]
    fn constant_black_vs_white() {
        let cfg = SsimConfig::default();
        let a = GrayImage::new(4, 4, vec![0.0; 16]).unwrap();
        let b = GrayImage::new(4, 4, vec![1.0; 16]).unwrap();
        let s = ssim(&a, &b, &cfg).unwrap().score;
        let c1 = 1e-4;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
    }

    #[test]
    fn inverted_checkerboard_is_negative() {
        let a = GrayImage::from_fn(4, 4, |r, c| ((r + c) % 2) as f32).unwrap();
        let b = GrayImage::from_fn(4, 4, |r, c| 1.0 - ((r + c) % 2) as f32).unwrap();
        let s = ssim(&a, &b, &SsimConfig::default()).unwrap();
        assert!(s.cov < 0.0 && s.score < 0.0);
    }

    #[test]
    fn size_mismatch() {
        let a = GrayImage::new(2, 2, vec![0.0; 4]).unwrap();
        let b = GrayImage::new(1, 4, vec![0.0; 4]).unwrap();
        assert!(ssim(&a, &b, &SsimConfig::default()).is_err());
    }
}
