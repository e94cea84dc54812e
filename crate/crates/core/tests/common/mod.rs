#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamddi::config::RunConfig;
use siamddi::data::{GrayImage, PairExample};

/// Random asymmetric glyph: a few filled rectangles and a corner marker on
/// a white background.
pub fn glyph(size: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = vec![1.0f32; size * size];
    let strokes = rng.random_range(2..5);
    for _ in 0..strokes {
        let (r0, c0) = (rng.random_range(2..size - 6), rng.random_range(2..size - 6));
        let (h, w) = (rng.random_range(2..size / 2), rng.random_range(2..size / 2));
        let ink = rng.random_range(0.0..0.4f32);
        for r in r0..(r0 + h).min(size - 2) {
            for c in c0..(c0 + w).min(size - 2) {
                px[r * size + c] = ink;
            }
        }
    }
    for r in 1..5 {
        for c in 1..3 {
            px[r * size + c] = 0.0;
        }
    }
    GrayImage::new(size, size, px).unwrap()
}

/// Adds bounded uniform noise, clamped to `[0, 1]`.
pub fn jitter(img: &GrayImage, amount: f32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = img
        .pixels()
        .iter()
        .map(|&p| (p + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(img.height(), img.width(), px).unwrap()
}

pub type ImageMap = BTreeMap<String, GrayImage>;

/// Half the pairs join two unrelated glyphs (label 1), half join a glyph
/// with a lightly perturbed copy (label 0).
pub fn overfit_set(n_pairs: usize, size: usize, seed: u64) -> (Vec<PairExample>, ImageMap) {
    let mut images = ImageMap::new();
    let mut pairs = Vec::new();
    for i in 0..n_pairs {
        let a = format!("g{i:03}a");
        let b = format!("g{i:03}b");
        let base = glyph(size, seed * 1000 + 2 * i as u64);
        let other = if i % 2 == 0 {
            glyph(size, seed * 1000 + 2 * i as u64 + 1)
        } else {
            jitter(&base, 0.03, seed * 1000 + i as u64)
        };
        images.insert(a.clone(), base);
        images.insert(b.clone(), other);
        pairs.push(PairExample::new(&a, &b, (i % 2 == 0) as u8).unwrap());
    }
    (pairs, images)
}

/// Label 1 pairs a glyph with its quarter-turn rotation; label 0 pairs it
/// with a lightly perturbed copy.
pub fn rotation_set(n_pairs: usize, size: usize, seed: u64) -> (Vec<PairExample>, ImageMap) {
    let mut images = ImageMap::new();
    let mut pairs = Vec::new();
    for i in 0..n_pairs {
        let a = format!("r{i:03}a");
        let b = format!("r{i:03}b");
        let base = glyph(size, seed * 1000 + i as u64);
        let other = if i % 2 == 0 {
            base.rotate90(1)
        } else {
            jitter(&base, 0.03, seed * 1000 + 500 + i as u64)
        };
        images.insert(a.clone(), base);
        images.insert(b.clone(), other);
        pairs.push(PairExample::new(&a, &b, (i % 2 == 0) as u8).unwrap());
    }
    (pairs, images)
}

/// Scaled-down tower on 32×32 inputs: 32 → 28 → 14 → 10 → 5.
pub fn scaled_config() -> RunConfig {
    RunConfig {
        image_size: 32,
        conv_filters: vec![8, 8],
        kernel: 5,
        pool: 2,
        fc_sizes: vec![16, 8],
        lr: Some(1e-3),
        batch_size: 32,
        ..RunConfig::default()
    }
}

/// Invariance reading of the rotation task: label 0 pairs a glyph with its
/// quarter-turn rotation, label 1 pairs two unrelated glyphs.
pub fn invariance_set(n_pairs: usize, size: usize, seed: u64) -> (Vec<PairExample>, ImageMap) {
    let mut images = ImageMap::new();
    let mut pairs = Vec::new();
    for i in 0..n_pairs {
        let a = format!("v{i:03}a");
        let b = format!("v{i:03}b");
        let base = glyph(size, seed * 1000 + 2 * i as u64);
        let other = if i % 2 == 0 {
            glyph(size, seed * 1000 + 2 * i as u64 + 1)
        } else {
            base.rotate90(1)
        };
        images.insert(a.clone(), base);
        images.insert(b.clone(), other);
        pairs.push(PairExample::new(&a, &b, (i % 2 == 0) as u8).unwrap());
    }
    (pairs, images)
}
