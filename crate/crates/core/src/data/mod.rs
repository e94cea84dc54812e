//! Image ingestion, pair datasets and the PubChem download client.

mod fetch;
mod image;
mod pairs;

pub use self::image::{decode_png, load_image, GrayImage};
#[cfg(feature = "cli")]
pub use fetch::UreqTransport;
pub use fetch::{
    compound_png_url, write_atomic, FetchConfig, Fetcher, HttpResponse, Transport, TransportError,
    PNG_MAGIC, PUBCHEM_BASE_URL,
};
pub use pairs::{
    all_pairs, build_pairs, holdout, read_interactions, read_manifest, read_pairs, split,
    write_interactions, write_manifest, write_pairs, DrugRecord, Interaction, PairExample,
    SplitDataset,
};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Loads an image for a model with `size × size` inputs. Other sizes are
/// accepted with a warning and resized.
pub fn load_for_model(path: &Path, size: usize) -> Result<GrayImage> {
    let img = load_image(path)?;
    if img.height() != size || img.width() != size {
        log::warn!(
            "{} is {}x{}, resizing to {size}x{size}",
            path.display(),
            img.height(),
            img.width()
        );
        return Ok(img.resized(size));
    }
    Ok(img)
}

/// Loads every image referenced by `pairs`, keyed by drug id.
pub fn load_pair_images(
    manifest: &[DrugRecord],
    pairs: &[PairExample],
    images_dir: &Path,
    size: usize,
) -> Result<BTreeMap<String, GrayImage>> {
    let by_id: BTreeMap<&str, &DrugRecord> =
        manifest.iter().map(|r| (r.drug_id.as_str(), r)).collect();
    let mut out = BTreeMap::new();
    for id in pairs.iter().flat_map(|p| [&p.a, &p.b]) {
        if out.contains_key(id) {
            continue;
        }
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("drug id {id} is not in the manifest")))?;
        out.insert(
            id.clone(),
            load_for_model(&rec.resolve_image(images_dir), size)?,
        );
    }
    Ok(out)
}

/// Stacks equally sized images into a `[N, 1, H, W]` batch.
pub fn stack(images: &[&GrayImage]) -> Result<crate::tensor::Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("cannot stack an empty image list".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "cannot stack {}x{} with {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        data.extend_from_slice(img.pixels());
    }
    crate::tensor::Tensor::new(&[images.len(), 1, h, w], data)
}
