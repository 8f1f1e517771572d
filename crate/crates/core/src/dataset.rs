//! IDX image/label loading and seeded shuffling.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::{derive_seed, stream_rng};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}: {msg} at byte {offset}")]
    Parse { file: String, offset: usize, msg: String },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images stored as raw bytes; pixels read back scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixels per image.
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.pixels[i * d..(i + 1) * d]
    }

    /// Write image `i` as `pixel / 255` into `out`.
    pub fn image_into(&self, i: usize, out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(self.raw_image(i)) {
            *o = p as f64 / 255.0;
        }
    }

    pub fn image(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.image_into(i, &mut v);
        v
    }

    /// The first `n` samples (or all if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            pixels: self.pixels[..n * self.dim()].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
            split: self.split,
        }
    }

    pub fn from_raw(pixels: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize, split: Split) -> Result<Self, DatasetError> {
        if pixels.len() != labels.len() * rows * cols {
            return Err(DatasetError::CountMismatch {
                images: pixels.len() / (rows * cols).max(1),
                labels: labels.len(),
            });
        }
        Ok(Dataset { pixels, labels, rows, cols, split })
    }
}

struct Cursor<'a> {
    file: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, offset: usize, msg: impl Into<String>) -> DatasetError {
        DatasetError::Parse {
            file: self.file.to_string(),
            offset,
            msg: msg.into(),
        }
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        let b = self.take(4, "header")?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(self.bytes.len(), format!("truncated {what} (need {n} bytes from offset {})", self.pos))),
        }
    }
}

/// Parse an IDX image file (`N × rows × cols` unsigned bytes).
pub fn parse_images(file: &str, bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize), DatasetError> {
    let mut c = Cursor { file, bytes, pos: 0 };
    let magic = c.u32()?;
    if magic != IMAGE_MAGIC {
        return Err(c.err(0, format!("bad image magic {magic:#010x}")));
    }
    let n = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(c.err(8, format!("zero image size {rows}x{cols}")));
    }
    let total = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| c.err(4, "image count overflows"))?;
    let pixels = c.take(total, "pixel data")?.to_vec();
    Ok((pixels, n, rows, cols))
}

/// Parse an IDX label file (`N` unsigned bytes, each below 10).
pub fn parse_labels(file: &str, bytes: &[u8]) -> Result<Vec<u8>, DatasetError> {
    let mut c = Cursor { file, bytes, pos: 0 };
    let magic = c.u32()?;
    if magic != LABEL_MAGIC {
        return Err(c.err(0, format!("bad label magic {magic:#010x}")));
    }
    let n = c.u32()? as usize;
    let start = c.pos;
    let labels = c.take(n, "label data")?.to_vec();
    if let Some(k) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(c.err(start + k, format!("label {} out of range", labels[k])));
    }
    Ok(labels)
}

pub fn parse_idx(images: (&str, &[u8]), labels: (&str, &[u8]), split: Split) -> Result<Dataset, DatasetError> {
    let (pixels, n, rows, cols) = parse_images(images.0, images.1)?;
    let labels = parse_labels(labels.0, labels.1)?;
    if labels.len() != n {
        return Err(DatasetError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    Ok(Dataset { pixels, labels, rows, cols, split })
}

/// Read a file, transparently gunzipping names ending in `.gz`.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io_err)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, DatasetError> {
    let images = read_maybe_gz(images_path)?;
    let labels = read_maybe_gz(labels_path)?;
    parse_idx(
        (&images_path.display().to_string(), &images),
        (&labels_path.display().to_string(), &labels),
        split,
    )
}

fn find(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        plain
    } else {
        dir.join(format!("{stem}.gz"))
    }
}

/// Load `train-*` and `t10k-*` IDX files (optionally gzipped) from `dir`.
pub fn load_dir(dir: &Path) -> Result<(Dataset, Dataset), DatasetError> {
    let train = load_idx(
        &find(dir, "train-images-idx3-ubyte"),
        &find(dir, "train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_idx(
        &find(dir, "t10k-images-idx3-ubyte"),
        &find(dir, "t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}

/// IDX encoding of raw images and labels.
pub fn encode_idx(pixels: &[u8], labels: &[u8], rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [labels.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

/// Seeded uniform permutation of `0..n`, different for every epoch.
pub fn shuffled_indices(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(derive_seed(seed, &[epoch]), 0);
    idx.shuffle(&mut rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 0]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn hand_built_fixture_parses_exactly() {
        let (img, lab) = fixture();
        let d = parse_idx(("img", &img), ("lab", &lab), Split::Test).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.shape(), (2, 2));
        assert_eq!(d.image(0), vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.image(1), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!((d.label(0), d.label(1)), (7, 3));
        assert_eq!(encode_idx(&d.pixels, &d.labels, 2, 2), (img, lab));
    }

    #[test]
    fn wrong_magic_rejected_with_offset() {
        let (img, _) = fixture();
        match parse_labels("lab", &img) {
            Err(DatasetError::Parse { offset: 0, msg, .. }) => assert!(msg.contains("magic")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_file_end() {
        let (img, _) = fixture();
        match parse_images("img", &img[..20]) {
            Err(DatasetError::Parse { offset: 20, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_images("img", &img[..6]).is_err());
    }

    #[test]
    fn count_mismatch_and_bad_label() {
        let (img, mut lab) = fixture();
        lab[7] = 1;
        lab.truncate(9);
        assert!(matches!(
            parse_idx(("img", &img), ("lab", &lab), Split::Train),
            Err(DatasetError::CountMismatch { images: 2, labels: 1 })
        ));
        let (_, mut lab) = fixture();
        lab[9] = 10;
        assert!(matches!(parse_labels("lab", &lab), Err(DatasetError::Parse { offset: 9, .. })));
    }

    #[test]
    fn gz_and_plain_files_load_identically() {
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture();
        fs::write(dir.path().join("train-images-idx3-ubyte"), &img).unwrap();
        fs::write(dir.path().join("train-labels-idx1-ubyte"), &lab).unwrap();
        for (name, bytes) in [("t10k-images-idx3-ubyte.gz", &img), ("t10k-labels-idx1-ubyte.gz", &lab)] {
            let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(bytes).unwrap();
            fs::write(dir.path().join(name), enc.finish().unwrap()).unwrap();
        }
        let (train, test) = load_dir(dir.path()).unwrap();
        assert_eq!(train.pixels, test.pixels);
        assert_eq!(train.split, Split::Train);
        assert!(load_dir(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn shuffles_are_deterministic_bijections() {
        assert_eq!(shuffled_indices(1, 0, 9), vec![0]);
        let a = shuffled_indices(100, 3, 9);
        assert_eq!(a, shuffled_indices(100, 3, 9));
        assert_ne!(a, shuffled_indices(100, 4, 9));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_slots_are_uniform() {
        // 10⁴ epochs of n = 5: chi-square over the 25 (element, slot) counts.
        let mut counts = [[0u32; 5]; 5];
        for e in 0..10_000 {
            for (slot, &v) in shuffled_indices(5, e, 1).iter().enumerate() {
                counts[v][slot] += 1;
            }
        }
        let chi2: f64 = counts
            .iter()
            .flatten()
            .map(|&c| (c as f64 - 2000.0).powi(2) / 2000.0)
            .sum();
        // 16 degrees of freedom; 99.9th percentile is 39.25.
        assert!(chi2 < 39.25, "chi2 = {chi2}");
    }
}
