use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the drug manifest (`drug_id,name,image_path`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrugRecord {
    pub drug_id: String,
    pub name: String,
    pub image_path: String,
}

impl DrugRecord {
    /// Relative paths are resolved against `images_dir`.
    pub fn resolve_image(&self, images_dir: &Path) -> PathBuf {
        let p = Path::new(&self.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            images_dir.join(p)
        }
    }
}

/// One row of a labeled interaction list (`drug_id_a,drug_id_b,label`).
/// The order of the two ids carries no meaning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub drug_id_a: String,
    pub drug_id_b: String,
    pub label: u8,
}

/// Canonical unordered pair: `a < b`, `label` is 1 for interacting drugs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairExample {
    pub a: String,
    pub b: String,
    pub label: u8,
}

impl PairExample {
    pub fn new(x: &str, y: &str, label: u8) -> Result<Self> {
        if label > 1 {
            return Err(Error::Label(format!(
                "{x},{y}: label {label} is not 0 or 1"
            )));
        }
        let (a, b) = match x.cmp(y) {
            std::cmp::Ordering::Less => (x, y),
            std::cmp::Ordering::Greater => (y, x),
            std::cmp::Ordering::Equal => {
                return Err(Error::Data(format!("self-pair {x},{x}")));
            }
        };
        Ok(Self {
            a: a.to_owned(),
            b: b.to_owned(),
            label,
        })
    }

    pub fn interacts(&self) -> bool {
        self.label == 1
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Data(format!("{}: {e}", path.display())),
    }
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads the manifest, rejecting duplicate drug ids.
pub fn read_manifest(path: &Path) -> Result<Vec<DrugRecord>> {
    let rows: Vec<DrugRecord> = read_rows(path)?;
    let mut seen = BTreeSet::new();
    for r in &rows {
        if r.drug_id.is_empty() {
            return Err(Error::Data(format!("{}: empty drug_id", path.display())));
        }
        if !seen.insert(r.drug_id.as_str()) {
            return Err(Error::Data(format!(
                "{}: duplicate drug_id {}",
                path.display(),
                r.drug_id
            )));
        }
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, records: &[DrugRecord]) -> Result<()> {
    write_rows(path, records)
}

pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    read_rows(path)
}

pub fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    write_rows(path, rows)
}

/// Writes canonical pairs in the interaction CSV layout.
pub fn write_pairs(path: &Path, pairs: &[PairExample]) -> Result<()> {
    let rows: Vec<Interaction> = pairs
        .iter()
        .map(|p| Interaction {
            drug_id_a: p.a.clone(),
            drug_id_b: p.b.clone(),
            label: p.label,
        })
        .collect();
    write_rows(path, &rows)
}

/// Reads a file that already holds canonical pairs.
pub fn read_pairs(path: &Path) -> Result<Vec<PairExample>> {
    read_interactions(path)?
        .into_iter()
        .map(|r| PairExample::new(&r.drug_id_a, &r.drug_id_b, r.label))
        .collect()
}

/// Canonicalizes raw interactions into a sorted, deduplicated pair list.
///
/// Self-pairs are dropped, reciprocal duplicates collapse to one pair, and a
/// pair listed with both labels is an error. Every id must appear in the
/// manifest.
pub fn build_pairs(
    manifest: &[DrugRecord],
    interactions: &[Interaction],
) -> Result<Vec<PairExample>> {
    let known: BTreeSet<&str> = manifest.iter().map(|r| r.drug_id.as_str()).collect();
    let mut pairs: BTreeMap<(String, String), u8> = BTreeMap::new();
    for row in interactions {
        for id in [&row.drug_id_a, &row.drug_id_b] {
            if !known.contains(id.as_str()) {
                return Err(Error::Data(format!("drug id {id} is not in the manifest")));
            }
        }
        if row.drug_id_a == row.drug_id_b {
            continue;
        }
        let p = PairExample::new(&row.drug_id_a, &row.drug_id_b, row.label)?;
        match pairs.insert((p.a.clone(), p.b.clone()), p.label) {
            Some(prev) if prev != p.label => {
                return Err(Error::Label(format!(
                    "pair {},{} listed with labels {prev} and {}",
                    p.a, p.b, p.label
                )));
            }
            _ => {}
        }
    }
    Ok(pairs
        .into_iter()
        .map(|((a, b), label)| PairExample { a, b, label })
        .collect())
}

/// Every unordered pair of manifest drugs, labeled 1 when listed as
/// interacting and 0 otherwise.
pub fn all_pairs(manifest: &[DrugRecord], positives: &[Interaction]) -> Result<Vec<PairExample>> {
    let listed: BTreeSet<PairExample> = build_pairs(manifest, positives)?.into_iter().collect();
    let mut ids: Vec<&str> = manifest.iter().map(|r| r.drug_id.as_str()).collect();
    ids.sort_unstable();
    let mut out = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
    for (i, a) in ids.iter().enumerate() {
        for b in &ids[i + 1..] {
            let interacts = listed.contains(&PairExample::new(a, b, 1)?);
            out.push(PairExample::new(a, b, interacts as u8)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: Vec<PairExample>,
    pub test: Vec<PairExample>,
    pub seed: u64,
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} not in (0, 1)"
        )));
    }
    Ok(())
}

/// Seeded shuffle, then the first `floor(fraction · n)` pairs train.
pub fn split(pairs: &[PairExample], fraction: f64, seed: u64) -> Result<SplitDataset> {
    check_fraction(fraction)?;
    if pairs.is_empty() {
        return Err(Error::Data("cannot split an empty pair list".into()));
    }
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * pairs.len() as f64).floor() as usize;
    let test = shuffled.split_off(n_train);
    Ok(SplitDataset {
        train: shuffled,
        test,
        seed,
    })
}

/// Moves the last `floor(fraction · n)` pairs into a validation set, keeping
/// at least one pair on each side when `n ≥ 2`.
pub fn holdout(
    pairs: &[PairExample],
    fraction: f64,
) -> Result<(Vec<PairExample>, Vec<PairExample>)> {
    check_fraction(fraction)?;
    let n = pairs.len();
    let mut k = (fraction * n as f64).floor() as usize;
    if n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let (fit, val) = pairs.split_at(n - k);
    Ok((fit.to_vec(), val.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> DrugRecord {
        DrugRecord {
            drug_id: id.into(),
            name: format!("drug {id}"),
            image_path: format!("{id}.png"),
        }
    }

    fn row(a: &str, b: &str, label: u8) -> Interaction {
        Interaction {
            drug_id_a: a.into(),
            drug_id_b: b.into(),
            label,
        }
    }

    #[test]
    fn canonical_dedup_and_self_pairs() {
        let m = [rec("1"), rec("2"), rec("3")];
        let rows = [
            row("2", "1", 1),
            row("1", "2", 1),
            row("3", "3", 1),
            row("3", "1", 0),
        ];
        let pairs = build_pairs(&m, &rows).unwrap();
        assert_eq!(
            pairs,
            vec![
                PairExample::new("1", "2", 1).unwrap(),
                PairExample::new("1", "3", 0).unwrap()
            ]
        );
    }

    #[test]
    fn conflicting_labels_error() {
        let m = [rec("1"), rec("2")];
        let err = build_pairs(&m, &[row("1", "2", 1), row("2", "1", 0)]).unwrap_err();
        assert_eq!(err.kind(), "label");
    }

    #[test]
    fn unknown_ids_error() {
        let err = build_pairs(&[rec("1")], &[row("1", "9", 1)]).unwrap_err();
        assert!(err.to_string().contains('9'));
    }

    #[test]
    fn all_pairs_count() {
        let m: Vec<_> = (0..5).map(|i| rec(&i.to_string())).collect();
        let pairs = all_pairs(&m, &[row("0", "4", 1)]).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs.iter().filter(|p| p.interacts()).count(), 1);
    }

    #[test]
    fn split_sizes_at_full_scale() {
        let pairs: Vec<_> = (0..67_360)
            .map(|i| {
                PairExample::new(&format!("a{i:05}"), &format!("b{i:05}"), (i % 2) as u8).unwrap()
            })
            .collect();
        let s = split(&pairs, 0.66, 0).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (44_457, 22_903));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let pairs = vec![PairExample::new("a", "b", 0).unwrap()];
        assert!(split(&pairs, 1.0, 0).is_err());
        assert!(split(&pairs, 0.0, 0).is_err());
        assert!(split(&[], 0.5, 0).is_err());
    }

    #[test]
    fn holdout_keeps_both_sides() {
        let pairs: Vec<_> = (0..5)
            .map(|i| PairExample::new("a", &format!("b{i}"), 0).unwrap())
            .collect();
        let (fit, val) = holdout(&pairs, 0.1).unwrap();
        assert_eq!((fit.len(), val.len()), (4, 1));
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = vec![rec("11"), rec("12")];
        write_manifest(&path, &m).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("drug_id,name,image_path\n"));
    }

    #[test]
    fn bad_label_in_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.csv");
        std::fs::write(&path, "drug_id_a,drug_id_b,label\n1,2,7\n").unwrap();
        let rows = read_interactions(&path).unwrap();
        assert!(build_pairs(&[rec("1"), rec("2")], &rows).is_err());
    }
}
