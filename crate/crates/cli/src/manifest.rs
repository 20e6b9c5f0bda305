//! Dataset files: the JSON-lines manifest (one `PatientRecord` per line),
//! the vocabulary file (JSON-lines of {"word", "id"}), the normalization
//! stats file (JSON with arrays "min", "max", "median") and the date-based
//! split boundaries.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mdt_core::record::PatientRecord;
use mdt_core::tokenize::{NormStats, Vocabulary};
use serde::{Deserialize, Serialize};

pub fn write_manifest(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing manifest {}", path.display()))
}

pub fn read_manifest(path: &Path) -> Result<Vec<PatientRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PatientRecord = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed record", path.display(), lineno + 1))?;
        if !seen.insert(record.id.clone()) {
            bail!("{}:{}: duplicate record id {}", path.display(), lineno + 1, record.id);
        }
        records.push(record);
    }
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct VocabLine<'a> {
    word: &'a str,
    id: u32,
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = String::new();
    for (word, id) in vocab.iter() {
        out.push_str(&serde_json::to_string(&VocabLine { word, id })?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing vocabulary {}", path.display()))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading vocabulary {}", path.display()))?;
    let mut vocab = Vocabulary::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        #[derive(Deserialize)]
        struct Owned {
            word: String,
            id: u32,
        }
        let entry: Owned = serde_json::from_str(line)
            .with_context(|| format!("{}:{}: malformed vocabulary line", path.display(), lineno + 1))?;
        let assigned = vocab.insert(&entry.word);
        if assigned != entry.id {
            bail!(
                "{}:{}: vocabulary ids must be dense and in file order ({} vs {})",
                path.display(),
                lineno + 1,
                entry.id,
                assigned
            );
        }
    }
    Ok(vocab)
}

pub fn write_stats(path: &Path, stats: &NormStats) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(stats)?)
        .with_context(|| format!("writing stats {}", path.display()))
}

pub fn read_stats(path: &Path) -> Result<NormStats> {
    let text = fs::read_to_string(path).with_context(|| format!("reading stats {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Date boundaries for the train/val/test partition: a record goes to train
/// when its admission date is <= `b1`, to val when <= `b2`, otherwise test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBoundaries {
    pub b1: String,
    pub b2: String,
}

pub fn write_splits(path: &Path, splits: &SplitBoundaries) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(splits)?)
        .with_context(|| format!("writing splits {}", path.display()))
}

pub fn read_splits(path: &Path) -> Result<SplitBoundaries> {
    let text = fs::read_to_string(path).with_context(|| format!("reading splits {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

/// Total, disjoint partition by admission date (ISO dates compare
/// lexicographically). Boundary-equal dates fall on the earlier side.
pub fn split_by_date(
    records: &[PatientRecord],
    splits: &SplitBoundaries,
) -> Result<(Vec<PatientRecord>, Vec<PatientRecord>, Vec<PatientRecord>)> {
    if splits.b1 > splits.b2 {
        bail!("split boundaries out of order: {} > {}", splits.b1, splits.b2);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for r in records {
        if r.admission_date <= splits.b1 {
            train.push(r.clone());
        } else if r.admission_date <= splits.b2 {
            val.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdt_core::record::ChiefComplaint;

    fn record(id: &str, date: &str) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            admission_date: date.into(),
            image_paths: vec![format!("images/{id}.mimg")],
            cc: ChiefComplaint::WordIds(vec![2, 3]),
            lab: vec![Some(0.5), None],
            sex: 1,
            age: 61.0,
            labels: vec![1, 0],
        }
    }

    #[test]
    fn split_convention_and_totality() {
        let records = vec![record("a", "2021-01-10"), record("b", "2021-03-01"), record("c", "2021-06-30")];
        let splits = SplitBoundaries {
            b1: "2021-03-01".into(),
            b2: "2021-05-01".into(),
        };
        let (train, val, test) = split_by_date(&records, &splits).unwrap();
        // boundary-equal date lands in train
        assert_eq!(train.len(), 2);
        assert_eq!(val.len(), 0);
        assert_eq!(test.len(), 1);
        assert_eq!(train.len() + val.len() + test.len(), records.len());

        let bad = SplitBoundaries {
            b1: "2021-05-01".into(),
            b2: "2021-03-01".into(),
        };
        assert!(split_by_date(&records, &bad).is_err());
    }
}
