use std::path::{Path, PathBuf};

use super::image::Image8;
use super::synth::{DatasetSplit, SyntheticSample};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";
const HEADER: [&str; 5] = ["id", "path_a", "path_b", "path_mask", "has_lesion"];

/// One manifest line; paths are relative to the dataset root and empty
/// when they do not apply (training rows carry only their own domain).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub path_a: Option<String>,
    pub path_b: Option<String>,
    pub path_mask: Option<String>,
    pub has_lesion: bool,
}

/// A paired test scene loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct TestPair {
    pub id: String,
    pub a: Image8,
    pub b: Image8,
    pub mask: Image8,
    pub has_lesion: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train_a: Vec<Image8>,
    pub train_b: Vec<Image8>,
    pub test: Vec<TestPair>,
}

fn ext(img: &Image8) -> &'static str {
    if img.channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// Writes images and `manifest.csv` under `dir`. A non-empty `dir` is
/// refused unless `force` is set.
pub fn write_dataset(dir: &Path, split: &DatasetSplit, force: bool) -> Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() && !force {
        return Err(Error::invalid(format!("{} exists and is not empty (use --force to overwrite)", dir.display())));
    }
    for sub in ["train_a", "train_b", "test/a", "test/b", "test/mask"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut rows = Vec::new();
    let mut put = |rel: String, img: &Image8| -> Result<String> {
        img.write_pnm(&dir.join(&rel))?;
        Ok(rel)
    };
    let train = |s: &SyntheticSample,
                 a: bool,
                 k: usize,
                 put: &mut dyn FnMut(String, &Image8) -> Result<String>|
     -> Result<ManifestRow> {
        let (folder, img) = if a { ("train_a", &s.image_a) } else { ("train_b", &s.image_b) };
        let path = put(format!("{folder}/{k:05}.{}", ext(img)), img)?;
        Ok(ManifestRow {
            id: format!("{folder}/{k:05}"),
            path_a: a.then(|| path.clone()),
            path_b: (!a).then_some(path),
            path_mask: None,
            has_lesion: s.has_lesion,
        })
    };
    for (k, s) in split.train_a.iter().enumerate() {
        rows.push(train(s, true, k, &mut put)?);
    }
    for (k, s) in split.train_b.iter().enumerate() {
        rows.push(train(s, false, k, &mut put)?);
    }
    for (k, s) in split.test.iter().enumerate() {
        rows.push(ManifestRow {
            id: format!("test/{k:05}"),
            path_a: Some(put(format!("test/a/{k:05}.{}", ext(&s.image_a)), &s.image_a)?),
            path_b: Some(put(format!("test/b/{k:05}.{}", ext(&s.image_b)), &s.image_b)?),
            path_mask: Some(put(format!("test/mask/{k:05}.pgm"), &s.lesion_mask)?),
            has_lesion: s.has_lesion,
        });
    }
    write_manifest(&dir.join(MANIFEST), &rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let opt = |p: &Option<String>| p.clone().unwrap_or_default();
        w.write_record([r.id.clone(), opt(&r.path_a), opt(&r.path_b), opt(&r.path_mask), r.has_lesion.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::format(path, format!("expected header {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let opt = |i: usize| Some(rec[i].to_string()).filter(|s| !s.is_empty());
        let has_lesion = match &rec[4] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::format(path, format!("bad has_lesion value {other:?}"))),
        };
        rows.push(ManifestRow {
            id: rec[0].to_string(),
            path_a: opt(1),
            path_b: opt(2),
            path_mask: opt(3),
            has_lesion,
        });
    }
    Ok(rows)
}

/// Loads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let rows = read_manifest(&dir.join(MANIFEST))?;
    let load = |rel: &str| Image8::read_pnm(&resolve(dir, rel));
    let mut data = Dataset { train_a: Vec::new(), train_b: Vec::new(), test: Vec::new() };
    for row in rows {
        match (&row.path_a, &row.path_b, &row.path_mask) {
            (Some(a), Some(b), Some(m)) => data.test.push(TestPair {
                id: row.id.clone(),
                a: load(a)?,
                b: load(b)?,
                mask: load(m)?,
                has_lesion: row.has_lesion,
            }),
            (Some(a), None, None) => data.train_a.push(load(a)?),
            (None, Some(b), None) => data.train_b.push(load(b)?),
            _ => {
                return Err(Error::format(
                    dir.join(MANIFEST),
                    format!("row {} has an unsupported combination of paths", row.id),
                ))
            }
        }
    }
    if data.train_a.is_empty() || data.train_b.is_empty() {
        return Err(Error::format(dir.join(MANIFEST), "dataset has no training images for one domain"));
    }
    Ok(data)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

impl From<&DatasetSplit> for Dataset {
    fn from(split: &DatasetSplit) -> Self {
        Dataset {
            train_a: split.train_a.iter().map(|s| s.image_a.clone()).collect(),
            train_b: split.train_b.iter().map(|s| s.image_b.clone()).collect(),
            test: split
                .test
                .iter()
                .enumerate()
                .map(|(k, s)| TestPair {
                    id: format!("test/{k:05}"),
                    a: s.image_a.clone(),
                    b: s.image_b.clone(),
                    mask: s.lesion_mask.clone(),
                    has_lesion: s.has_lesion,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{gen_synthetic_dataset, SynthConfig};

    #[test]
    fn write_then_load_matches_memory() {
        let cfg = SynthConfig { n_train: 3, n_test: 2, size: 16, ..Default::default() };
        let split = gen_synthetic_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        write_dataset(&root, &split, false).unwrap();
        assert_eq!(load_dataset(&root).unwrap(), Dataset::from(&split));
        assert!(write_dataset(&root, &split, false).is_err());
        write_dataset(&root, &split, true).unwrap();
        let rows = read_manifest(&root.join(MANIFEST)).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].id, "train_a/00000");
        assert!(rows[0].path_b.is_none());
    }
}
