use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum MnistError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {file} file: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("truncated {file} file: missing {field}")]
    Truncated { file: &'static str, field: &'static str },
    #[error("{file} file has {trailing} unexpected trailing bytes")]
    TrailingBytes { file: &'static str, trailing: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{file} header declares zero {field}")]
    EmptyField { file: &'static str, field: &'static str },
    #[error("label {label} at index {index} is outside 0..=9")]
    LabelRange { index: usize, label: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images as an `N x (rows*cols)` matrix with pixels scaled by `1/255`, plus labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Matrix,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Matrix, labels: Vec<usize>, split: Split) -> Result<Self, MnistError> {
        if images.rows() != labels.len() {
            return Err(MnistError::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            });
        }
        Ok(Self {
            images,
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

    pub fn features(&self) -> usize {
        self.images.cols()
    }

    /// Gathers the given rows into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let width = self.features();
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Matrix::new(indices.len(), width, data).expect("rows of a valid matrix"),
            labels,
        )
    }

    /// The first `n` samples (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Dataset {
            images,
            labels,
            split: self.split,
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32(&mut self, field: &'static str) -> Result<u32, MnistError> {
        let raw = self.take(4, field)?;
        Ok(u32::from_be_bytes(raw.try_into().expect("four bytes")))
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], MnistError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(MnistError::Truncated {
                file: self.file,
                field,
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn finish(&self) -> Result<(), MnistError> {
        let trailing = self.bytes.len() - self.pos;
        if trailing > 0 {
            return Err(MnistError::TrailingBytes {
                file: self.file,
                trailing,
            });
        }
        Ok(())
    }
}

/// Parses an IDX3 image file into an `N x (rows*cols)` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix, MnistError> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        file: "image",
    };
    let magic = c.u32("magic")?;
    if magic != IMAGE_MAGIC {
        return Err(MnistError::BadMagic {
            file: "image",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    for (v, field) in [(count, "images"), (rows, "rows"), (cols, "columns")] {
        if v == 0 {
            return Err(MnistError::EmptyField { file: "image", field });
        }
    }
    let pixels = c.take(count * rows * cols, "pixel data")?;
    c.finish()?;
    let data = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Matrix::new(count, rows * cols, data).expect("pixel values are finite"))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, MnistError> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        file: "label",
    };
    let magic = c.u32("magic")?;
    if magic != LABEL_MAGIC {
        return Err(MnistError::BadMagic {
            file: "label",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = c.u32("label count")? as usize;
    let raw = c.take(count, "label data")?;
    c.finish()?;
    raw.iter()
        .enumerate()
        .map(|(index, &label)| {
            if label > 9 {
                Err(MnistError::LabelRange { index, label })
            } else {
                Ok(label as usize)
            }
        })
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>, MnistError> {
    std::fs::read(path).map_err(|source| MnistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an uncompressed MNIST image/label file pair.
pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset, MnistError> {
    let images = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    Dataset::new(images, labels, split)
}
