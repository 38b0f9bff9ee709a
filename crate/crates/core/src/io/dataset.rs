//! Directory layout `root/split/{t1,t2,label_t1,label_t2,label_cd}/<id>.(ppm|pgm)`.
//!
//! Images are `.ppm`, labels `.pgm`. Any label directory may be missing, and
//! so may individual label files; the sample's availability flag is then 0.
//! A split without `t2/` is read as single-temporal extraction data.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::netpbm::{read_image, read_mask};
use crate::network::Task;
use crate::tensor::{Element, Tensor};

pub const LABEL_DIRS: [&str; 3] = ["label_t1", "label_t2", "label_cd"];
pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct BiTemporalSample<T> {
    pub id: String,
    /// `(1, 3, H, W)` in `[0, 1]`.
    pub img_t1: Tensor<T>,
    pub img_t2: Tensor<T>,
    /// `(1, 1, H, W)` binary masks in task order; `None` where unavailable.
    pub masks: [Option<Tensor<T>>; 3],
}

impl<T: Element> BiTemporalSample<T> {
    pub fn flags(&self) -> [bool; 3] {
        [
            self.masks[0].is_some(),
            self.masks[1].is_some(),
            self.masks[2].is_some(),
        ]
    }

    pub fn mask(&self, task: Task) -> Option<&Tensor<T>> {
        self.masks[task.index()].as_ref()
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.img_t1.shape();
        (s.h, s.w)
    }
}

pub fn split_dir(root: &Path, split: &str) -> PathBuf {
    root.join(split)
}

fn list_ids(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

/// Load every sample of `split`, sorted by id.
pub fn load_dataset<T: Element>(root: &Path, split: &str) -> Result<Vec<BiTemporalSample<T>>> {
    let dir = split_dir(root, split);
    let t1_dir = dir.join("t1");
    if !t1_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "{} has no t1/ directory",
            dir.display()
        )));
    }
    let ids = list_ids(&t1_dir, "ppm")?;
    if ids.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no .ppm images",
            t1_dir.display()
        )));
    }
    let t2_dir = dir.join("t2");
    let bitemporal = t2_dir.is_dir();
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let img_t1: Tensor<T> = read_image(&t1_dir.join(format!("{id}.ppm")))?;
        let img_t2 = if bitemporal {
            let p = t2_dir.join(format!("{id}.ppm"));
            if !p.is_file() {
                return Err(Error::Dataset(format!(
                    "{id} is present in t1/ but missing from t2/"
                )));
            }
            read_image(&p)?
        } else {
            img_t1.clone()
        };
        if img_t1.shape() != img_t2.shape() {
            return Err(Error::Dataset(format!(
                "{id}: image sizes differ ({} vs {})",
                img_t1.shape(),
                img_t2.shape()
            )));
        }
        let mut masks: [Option<Tensor<T>>; 3] = [None, None, None];
        for (k, name) in LABEL_DIRS.iter().enumerate() {
            if !bitemporal && k > 0 {
                continue;
            }
            let p = dir.join(name).join(format!("{id}.pgm"));
            if p.is_file() {
                let m: Tensor<T> = read_mask(&p)?;
                let s = img_t1.shape();
                if (m.shape().h, m.shape().w) != (s.h, s.w) {
                    return Err(Error::Dataset(format!(
                        "{id}: {name} is {} but images are {s}",
                        m.shape()
                    )));
                }
                masks[k] = Some(m);
            }
        }
        samples.push(BiTemporalSample {
            id,
            img_t1,
            img_t2,
            masks,
        });
    }
    Ok(samples)
}

/// Manifest text: one `id a1 a2 acd` line per sample.
pub fn manifest_text<T: Element>(samples: &[BiTemporalSample<T>]) -> String {
    samples
        .iter()
        .map(|s| {
            let [a, b, c] = s.flags().map(u8::from);
            format!("{} {a} {b} {c}\n", s.id)
        })
        .collect()
}

/// Parse a manifest into `(id, flags)` entries.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, [bool; 3])>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bit = |s: &str| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Dataset(format!(
                    "{}:{}: flag {s:?} is not 0 or 1",
                    path.display(),
                    i + 1
                ))),
            };
            match parts.as_slice() {
                [id, a, b, c] => Ok((id.to_string(), [bit(a)?, bit(b)?, bit(c)?])),
                _ => Err(Error::Dataset(format!(
                    "{}:{}: expected `id a1 a2 acd`",
                    path.display(),
                    i + 1
                ))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::netpbm::{write_mask, write_raster};
    use crate::tensor::Shape;

    fn write_sample(dir: &Path, id: &str, t2: bool, labels: &[&str]) {
        let img = Tensor::<f32>::full(Shape::new(1, 3, 4, 4), 0.2);
        let mask = Tensor::<f32>::ones(Shape::new(1, 1, 4, 4));
        std::fs::create_dir_all(dir.join("t1")).unwrap();
        write_raster(&dir.join("t1").join(format!("{id}.ppm")), &img).unwrap();
        if t2 {
            std::fs::create_dir_all(dir.join("t2")).unwrap();
            write_raster(&dir.join("t2").join(format!("{id}.ppm")), &img).unwrap();
        }
        for l in labels {
            std::fs::create_dir_all(dir.join(l)).unwrap();
            write_mask(&dir.join(l).join(format!("{id}.pgm")), &mask).unwrap();
        }
    }

    #[test]
    fn sorted_and_flagged() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("train");
        write_sample(&dir, "b", true, &["label_t1", "label_t2"]);
        write_sample(&dir, "a", true, &["label_t1"]);
        let ds = load_dataset::<f32>(tmp.path(), "train").unwrap();
        assert_eq!(
            ds.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(ds[0].flags(), [true, false, false]);
        assert_eq!(ds[1].flags(), [true, true, false]);
        assert_eq!(manifest_text(&ds), "a 1 0 0\nb 1 1 0\n");
    }

    #[test]
    fn single_temporal_fallback() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("val");
        write_sample(&dir, "x", false, &["label_t1", "label_cd"]);
        let ds = load_dataset::<f32>(tmp.path(), "val").unwrap();
        assert_eq!(ds[0].flags(), [true, false, false]);
        assert_eq!(ds[0].img_t1, ds[0].img_t2);
    }

    #[test]
    fn missing_t2_image_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("train");
        write_sample(&dir, "a", true, &[]);
        write_sample(&dir, "b", false, &[]);
        let err = load_dataset::<f32>(tmp.path(), "train")
            .unwrap_err()
            .to_string();
        assert!(err.contains("b is present in t1/"), "{err}");
    }

    #[test]
    fn manifest_parse() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join(MANIFEST);
        std::fs::write(&p, "s1 1 1 0\ns2 0 0 1\n").unwrap();
        assert_eq!(
            read_manifest(&p).unwrap(),
            vec![
                ("s1".to_string(), [true, true, false]),
                ("s2".to_string(), [false, false, true])
            ]
        );
        std::fs::write(&p, "s1 1 2 0\n").unwrap();
        assert!(read_manifest(&p).is_err());
    }
}
