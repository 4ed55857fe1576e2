use std::fs;
use std::path::Path;

use super::{DatasetSplit, InputShape, Sample, TrainPool};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Samples loaded from a pair of IDX files.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxSet {
    pub shape: InputShape,
    pub samples: Vec<Sample>,
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len().saturating_sub(self.offset);
        if available < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(path: &Path, r: &mut Reader<'_>, expected: u32) -> Result<()> {
    let found = r.u32_be()?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image file (magic 0x803) and its label file (magic 0x801).
/// Pixels are scaled to [0, 1]; labels must be digits.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<IdxSet> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;

    let mut lr = Reader {
        path: labels_path,
        bytes: &label_bytes,
        offset: 0,
    };
    check_magic(labels_path, &mut lr, LABEL_MAGIC)?;
    let label_count = lr.u32_be()? as usize;

    let mut ir = Reader {
        path: images_path,
        bytes: &image_bytes,
        offset: 0,
    };
    check_magic(images_path, &mut ir, IMAGE_MAGIC)?;
    let image_count = ir.u32_be()? as usize;
    let rows = ir.u32_be()? as usize;
    let cols = ir.u32_be()? as usize;
    if image_count != label_count {
        return Err(Error::CountMismatch {
            path: images_path.to_path_buf(),
            expected: label_count,
            found: image_count,
        });
    }

    let labels_offset = lr.offset;
    let labels = lr.take(label_count)?;
    let pixels_offset = ir.offset;
    let pixels = ir.take(image_count * rows * cols)?;

    let mut samples = Vec::with_capacity(image_count);
    for (i, &label) in labels.iter().enumerate() {
        if label > 9 {
            return Err(Error::BadLabel {
                path: labels_path.to_path_buf(),
                offset: labels_offset + i,
                label,
            });
        }
        let start = i * rows * cols;
        let input = pixels[start..start + rows * cols]
            .iter()
            .map(|&p| f64::from(p) / 255.0)
            .collect();
        samples.push(Sample::labeled(input, usize::from(label)));
    }
    debug_assert_eq!(pixels_offset, 16);
    Ok(IdxSet {
        shape: InputShape::Image {
            channels: 1,
            height: rows,
            width: cols,
        },
        samples,
    })
}

/// Builds a split from the four standard MNIST files in `dir`: the train pool
/// is the head of the official train set, validation its tail, and test the
/// head of the official test set.
pub fn load_mnist_split(dir: impl AsRef<Path>, train: usize, validation: usize, test: usize) -> Result<DatasetSplit> {
    let dir = dir.as_ref();
    let official = load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
    let official_test = load_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
    let n = official.samples.len();
    if train + validation > n {
        return Err(Error::invalid(format!(
            "train {train} + validation {validation} exceeds {n} official train images"
        )));
    }
    if test > official_test.samples.len() {
        return Err(Error::invalid(format!(
            "test {test} exceeds {} official test images",
            official_test.samples.len()
        )));
    }
    let mut samples = official.samples;
    let validation_set = samples.split_off(n - validation);
    samples.truncate(train);
    let mut test_set = official_test.samples;
    test_set.truncate(test);
    Ok(DatasetSplit {
        shape: official.shape,
        num_classes: 10,
        train: TrainPool::new(samples),
        validation: validation_set,
        test: test_set,
    })
}
