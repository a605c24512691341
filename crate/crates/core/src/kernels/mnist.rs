//! IDX reader for the MNIST files (plain or gzip-compressed).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nalgebra::DMatrix;

use super::KernelError;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Images as raw bytes (row-major, one image per row) with their digit labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pixels: Vec<u8>,
    dim: usize,
    labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, dim: usize, labels: Vec<u8>, split: Split) -> Result<Self, KernelError> {
        if dim == 0 || pixels.len() != dim * labels.len() {
            return Err(KernelError::CountMismatch {
                images: pixels.len() / dim.max(1),
                labels: labels.len(),
            });
        }
        Ok(Self {
            pixels,
            dim,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of pixels per image.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixels of item `i` scaled to `[0, 1]`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        self.pixels[i * self.dim..(i + 1) * self.dim]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect()
    }

    /// Scaled inputs of the given items, one per row.
    pub fn select(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(indices.len(), self.dim);
        for (r, &i) in indices.iter().enumerate() {
            for (c, &p) in self.pixels[i * self.dim..(i + 1) * self.dim].iter().enumerate() {
                out[(r, c)] = p as f64 / 255.0;
            }
        }
        out
    }

    pub fn select_labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, KernelError> {
    let io = |source| KernelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn check_header(path: &Path, bytes: &[u8], header: usize, magic: u32) -> Result<(), KernelError> {
    if bytes.len() < 4 {
        return Err(KernelError::Truncated {
            path: path.into(),
            expected: header as u64,
            found: bytes.len() as u64,
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(KernelError::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if bytes.len() < header {
        return Err(KernelError::Truncated {
            path: path.into(),
            expected: header as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

fn check_body(path: &Path, bytes: &[u8], expected: u64) -> Result<(), KernelError> {
    if (bytes.len() as u64) < expected {
        return Err(KernelError::Truncated {
            path: path.into(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Parses an image file (magic 2051) and a label file (magic 2049).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, KernelError> {
    let img = read_maybe_gz(images_path)?;
    check_header(images_path, &img, 16, IMAGE_MAGIC)?;
    let count = be_u32(&img, 4) as usize;
    let dim = be_u32(&img, 8) as usize * be_u32(&img, 12) as usize;
    check_body(images_path, &img, 16 + (count * dim) as u64)?;

    let lab = read_maybe_gz(labels_path)?;
    check_header(labels_path, &lab, 8, LABEL_MAGIC)?;
    let label_count = be_u32(&lab, 4) as usize;
    check_body(labels_path, &lab, 8 + label_count as u64)?;

    if count != label_count {
        return Err(KernelError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixels = img[16..16 + count * dim].to_vec();
    let labels = lab[8..8 + count].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(KernelError::LabelOutOfRange(bad));
    }
    Dataset::new(pixels, dim, labels, split)
}

fn find_file(dir: &Path, prefix: &str, kind: &str) -> Result<PathBuf, KernelError> {
    let names = [
        format!("{prefix}-{kind}-ubyte"),
        format!("{prefix}-{}", kind.replacen('-', ".", 1) + "-ubyte"),
    ];
    for name in &names {
        for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(KernelError::Io {
        path: dir.join(&names[0]),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
    })
}

/// Loads `train-*` or `t10k-*` files from `dir`, accepting both
/// `train-images-idx3-ubyte` and `train-images.idx3-ubyte` names, with or
/// without `.gz`.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset, KernelError> {
    let images = find_file(dir, split.prefix(), "images-idx3")?;
    let labels = find_file(dir, split.prefix(), "labels-idx1")?;
    load_mnist_idx(&images, &labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn parses_small_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &image_file(2, 1, 2, &[0, 255, 51, 102]));
        let lab = write(dir.path(), "l", &label_file(&[3, 8]));
        let ds = load_mnist_idx(&img, &lab, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.input(0), vec![0.0, 1.0]);
        assert_eq!(ds.select(&[1])[(0, 0)], 0.2);
        assert_eq!(ds.labels(), &[3, 8]);
    }

    #[test]
    fn accepts_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&image_file(1, 2, 2, &[1, 2, 3, 4])).unwrap();
        write(dir.path(), "t10k-images-idx3-ubyte.gz", &enc.finish().unwrap());
        write(dir.path(), "t10k-labels.idx1-ubyte", &label_file(&[5]));
        let ds = load_mnist_dir(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dim(), 4);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = write(dir.path(), "i", &image_file(2, 1, 2, &[0, 1, 2, 3]));
        let lab = write(dir.path(), "l", &label_file(&[1, 2]));
        let short = write(dir.path(), "s", &image_file(2, 1, 2, &[0, 1, 2]));
        let three = write(dir.path(), "l3", &label_file(&[1, 2, 3]));

        assert!(matches!(
            load_mnist_idx(&img, &img, Split::Train),
            Err(KernelError::BadMagic { found: 0x803, .. })
        ));
        assert!(matches!(
            load_mnist_idx(&short, &lab, Split::Train),
            Err(KernelError::Truncated { .. })
        ));
        assert!(matches!(
            load_mnist_idx(&img, &three, Split::Train),
            Err(KernelError::CountMismatch { .. })
        ));
        assert!(matches!(
            load_mnist_idx(&dir.path().join("missing"), &lab, Split::Train),
            Err(KernelError::Io { .. })
        ));
        assert!(load_mnist_dir(dir.path(), Split::Train).is_err());
    }
}
