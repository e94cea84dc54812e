//! WebAssembly bindings for the browser demo: warp a structure image with a
//! fixed affine transform, score two images with SSIM, and sweep the
//! precision-recall threshold over a set of pair distances.
//!
//! Images cross the boundary as row-major grayscale `f32` buffers in `[0, 1]`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use siamddi::data::GrayImage;
use siamddi::eval::{pr_curve, ssim_pixels, SsimConfig};
use siamddi::network::warp;
use siamddi::objective::{contrastive_loss, ContrastiveConfig};
use siamddi::tensor::Tensor;

pub mod ops {
    use super::*;

    fn image(pixels: &[f32], size: usize) -> Result<GrayImage, String> {
        GrayImage::new(size, size, pixels.to_vec()).map_err(|e| e.to_string())
    }

    /// A deterministic glyph: a ring, a bar and a corner marker.
    pub fn sample_glyph(size: usize) -> Vec<f32> {
        let c = (size as f32 - 1.0) / 2.0;
        let (outer, inner) = (size as f32 * 0.32, size as f32 * 0.22);
        let mut px = vec![1.0f32; size * size];
        for r in 0..size {
            for col in 0..size {
                let (dy, dx) = (r as f32 - c, col as f32 - c);
                let rad = (dx * dx + dy * dy).sqrt();
                let ring = rad <= outer && rad >= inner;
                let bar = col > size / 2 && col < size * 7 / 8 && r.abs_diff(size / 4) <= size / 32;
                let mark = r < size / 8 && col < size / 16 + 1;
                if ring || bar || mark {
                    px[r * size + col] = 0.0;
                }
            }
        }
        px
    }

    /// Affine parameters for a rotation by `degrees`, uniform `scale` and a
    /// translation in normalized coordinates.
    pub fn theta(degrees: f32, scale: f32, tx: f32, ty: f32) -> [f32; 6] {
        let (s, c) = degrees.to_radians().sin_cos();
        [scale * c, -scale * s, tx, scale * s, scale * c, ty]
    }

    pub fn warp_image(pixels: &[f32], size: usize, theta: &[f32]) -> Result<Vec<f32>, String> {
        if theta.len() != 6 {
            return Err(format!("theta needs 6 values, got {}", theta.len()));
        }
        let img = image(pixels, size)?;
        let th = Tensor::new(&[1, 6], theta.to_vec()).map_err(|e| e.to_string())?;
        let out = warp(&img.to_tensor(), &th).map_err(|e| e.to_string())?;
        Ok(out
            .into_data()
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect())
    }

    pub fn ssim(a: &[f32], b: &[f32]) -> Result<f64, String> {
        ssim_pixels(a, b, &SsimConfig::default())
            .map(|s| s.score)
            .map_err(|e| e.to_string())
    }

    #[derive(Serialize)]
    pub struct Sweep {
        pub thresholds: Vec<f64>,
        pub precision: Vec<f64>,
        pub recall: Vec<f64>,
        pub f1: Vec<f64>,
        pub selected_threshold: f64,
        pub selected_f1: f64,
        pub loss: f64,
    }

    /// PR sweep plus the mean contrastive loss of the same distances.
    pub fn sweep(distances: &[f64], labels: &[u8], margin: f64) -> Result<Sweep, String> {
        let curve = pr_curve(distances, labels).map_err(|e| e.to_string())?;
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let cfg = ContrastiveConfig {
            margin,
            ..ContrastiveConfig::default()
        };
        let loss = contrastive_loss(&cfg, distances, &y).map_err(|e| e.to_string())?;
        Ok(Sweep {
            thresholds: curve.points.iter().map(|p| p.threshold).collect(),
            precision: curve.points.iter().map(|p| p.precision).collect(),
            recall: curve.points.iter().map(|p| p.recall).collect(),
            f1: curve.points.iter().map(|p| p.f1).collect(),
            selected_threshold: curve.selected_threshold,
            selected_f1: curve.selected_f1,
            loss,
        })
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn sample_glyph(size: usize) -> Vec<f32> {
    ops::sample_glyph(size)
}

#[wasm_bindgen]
pub fn theta(degrees: f32, scale: f32, tx: f32, ty: f32) -> Vec<f32> {
    ops::theta(degrees, scale, tx, ty).to_vec()
}

#[wasm_bindgen]
pub fn warp_image(pixels: &[f32], size: usize, theta: &[f32]) -> Result<Vec<f32>, JsError> {
    ops::warp_image(pixels, size, theta).map_err(js)
}

#[wasm_bindgen]
pub fn ssim(a: &[f32], b: &[f32]) -> Result<f64, JsError> {
    ops::ssim(a, b).map_err(js)
}

/// JSON with the curve arrays, the selected threshold and the loss.
#[wasm_bindgen]
pub fn threshold_sweep(distances: &[f64], labels: &[u8], margin: f64) -> Result<String, JsError> {
    let s = ops::sweep(distances, labels, margin).map_err(js)?;
    serde_json::to_string(&s).map_err(|e| js(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::ops::*;

    #[test]
    fn identity_theta_leaves_glyph_unchanged() {
        let g = sample_glyph(48);
        assert_eq!(warp_image(&g, 48, &theta(0.0, 1.0, 0.0, 0.0)).unwrap(), g);
    }

    #[test]
    fn quarter_turn_lowers_ssim() {
        let g = sample_glyph(48);
        let turned = warp_image(&g, 48, &theta(90.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(ssim(&g, &g).unwrap(), 1.0);
        assert!(ssim(&g, &turned).unwrap() < 0.9);
    }

    #[test]
    fn bad_theta_is_an_error() {
        let g = sample_glyph(16);
        assert!(warp_image(&g, 16, &[1.0, 0.0]).is_err());
        assert!(warp_image(&g[..10], 16, &theta(0.0, 1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn sweep_picks_separating_threshold() {
        let d = [0.1, 0.2, 0.3, 0.9, 1.1, 1.4];
        let y = [0, 0, 0, 1, 1, 1];
        let s = sweep(&d, &y, 1.0).unwrap();
        assert_eq!(s.selected_threshold, 0.9);
        assert_eq!(s.selected_f1, 1.0);
        assert_eq!(s.thresholds.len(), 6);
        // (0.01 + 0.04 + 0.09) / 2 + 0.01 / 2, over 6 pairs
        assert!((s.loss - 0.075 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_sweep_is_an_error() {
        assert!(sweep(&[0.1, 0.2], &[1, 1], 1.0).is_err());
    }
}
