//! Threshold selection, classification metrics and the SSIM and
//! autoencoder baselines.

mod baselines;
mod pr;
mod report;
mod ssim;

pub use baselines::{
    ae_similarity, cosine, ssim_classify, AeBaseline, AeCriterion, AE_EPOCHS, AE_LEARNING_RATE,
};
pub use pr::{f1_from_counts, pr_curve, PrCurve, PrPoint};
pub use report::{classify_and_report, Confusion, EvalReport};
pub use ssim::{ssim, ssim_pixels, SsimBreakdown, SsimConfig};
