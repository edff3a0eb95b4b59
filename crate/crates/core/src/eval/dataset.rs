use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Sample, Split, TaskFamily};
use crate::util::derive_seed;

use super::EvalError;

/// Split tag as written in dataset files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSplit {
    Val,
    PrivateVal,
    PublicVal,
    Test,
}

/// One JSON line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub input: String,
    #[serde(default)]
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_tests: Option<Vec<String>>,
    pub split: RowSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub private_val: Vec<Sample>,
    pub public_val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn to_sample(row: DatasetRow, split: Split) -> Sample {
    Sample { input: row.input, gold: row.gold, public_tests: row.public_tests, split }
}

pub fn read_rows(path: &Path) -> Result<Vec<DatasetRow>, EvalError> {
    if !path.exists() {
        return Err(EvalError::DatasetMissing(path.to_path_buf()));
    }
    crate::util::read_jsonl(path).map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))
}

/// Loads a dataset. Rows tagged `val` are split into private and public
/// halves with the run seed; rows already tagged `private_val`/`public_val`
/// are kept as tagged.
pub fn load_dataset(path: &Path, family: TaskFamily, ratio: f64, seed: u64) -> Result<Dataset, EvalError> {
    let rows = read_rows(path)?;
    let mut val = Vec::new();
    let mut ds = Dataset { private_val: vec![], public_val: vec![], test: vec![] };
    for row in rows {
        match row.split {
            RowSplit::Val => val.push(to_sample(row, Split::PrivateVal)),
            RowSplit::PrivateVal => ds.private_val.push(to_sample(row, Split::PrivateVal)),
            RowSplit::PublicVal => ds.public_val.push(to_sample(row, Split::PublicVal)),
            RowSplit::Test => ds.test.push(to_sample(row, Split::Test)),
        }
    }
    if !val.is_empty() {
        let (private, public) = split_validation(val, ratio, seed)?;
        ds.private_val.extend(private);
        ds.public_val.extend(public);
    }
    if ds.private_val.is_empty() || ds.public_val.is_empty() {
        return Err(EvalError::TooFewSamples(ds.private_val.len() + ds.public_val.len()));
    }
    for s in ds.private_val.iter().chain(&ds.public_val).chain(&ds.test) {
        s.validate(family).map_err(|e| EvalError::Dataset(e.to_string()))?;
    }
    Ok(ds)
}

/// Seeded shuffle, then the first `round(n * ratio)` samples (at least one,
/// at most n - 1) become the private split.
pub fn split_validation(samples: Vec<Sample>, ratio: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>), EvalError> {
    let n = samples.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let mut shuffled = samples;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split_validation"));
    shuffled.shuffle(&mut rng);
    let k = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
    let public = shuffled.split_off(k);
    let private = shuffled.into_iter().map(|s| Sample { split: Split::PrivateVal, ..s }).collect();
    let public = public.into_iter().map(|s| Sample { split: Split::PublicVal, ..s }).collect();
    Ok((private, public))
}

/// Rows for a dataset file with the validation split made explicit.
pub fn tagged_rows(ds: &Dataset) -> Vec<DatasetRow> {
    let row = |s: &Sample, split| DatasetRow {
        input: s.input.clone(),
        gold: s.gold.clone(),
        public_tests: s.public_tests.clone(),
        split,
    };
    ds.private_val
        .iter()
        .map(|s| row(s, RowSplit::PrivateVal))
        .chain(ds.public_val.iter().map(|s| row(s, RowSplit::PublicVal)))
        .chain(ds.test.iter().map(|s| row(s, RowSplit::Test)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample { input: format!("q{i}"), gold: format!("{i}"), public_tests: None, split: Split::PrivateVal })
            .collect()
    }

    #[test]
    fn splits_half_and_half() {
        let (a, b) = split_validation(samples(128), 0.5, 7).unwrap();
        assert_eq!((a.len(), b.len()), (64, 64));
        assert!(a.iter().all(|s| s.split == Split::PrivateVal));
        assert!(b.iter().all(|s| s.split == Split::PublicVal));
        let mut all: Vec<_> = a.iter().chain(&b).map(|s| s.input.clone()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 128);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        assert_eq!(split_validation(samples(20), 0.5, 3).unwrap(), split_validation(samples(20), 0.5, 3).unwrap());
        assert_ne!(split_validation(samples(20), 0.5, 3).unwrap(), split_validation(samples(20), 0.5, 4).unwrap());
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(split_validation(samples(1), 0.5, 0), Err(EvalError::TooFewSamples(1))));
        let (a, b) = split_validation(samples(2), 0.99, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn loads_and_round_trips_tags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut rows: Vec<DatasetRow> = (0..6)
            .map(|i| DatasetRow { input: format!("q{i}"), gold: format!("{i}"), public_tests: None, split: RowSplit::Val })
            .collect();
        rows.push(DatasetRow { input: "t".into(), gold: "1".into(), public_tests: None, split: RowSplit::Test });
        crate::util::write_jsonl(&path, &rows).unwrap();
        let ds = load_dataset(&path, TaskFamily::Math, 0.5, 1).unwrap();
        assert_eq!((ds.private_val.len(), ds.public_val.len(), ds.test.len()), (3, 3, 1));
        let tagged = dir.path().join("tagged.jsonl");
        crate::util::write_jsonl(&tagged, &tagged_rows(&ds)).unwrap();
        assert_eq!(load_dataset(&tagged, TaskFamily::Math, 0.5, 99).unwrap(), ds);
        assert!(matches!(
            load_dataset(&dir.path().join("missing.jsonl"), TaskFamily::Math, 0.5, 1),
            Err(EvalError::DatasetMissing(_))
        ));
    }
}
