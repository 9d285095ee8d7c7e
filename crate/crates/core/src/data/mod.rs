//! Labelled image sets and the loaders for the supported datasets.

mod idx;
mod pgm;
mod preprocess;
mod registry;
mod smallnorb;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
};
pub use pgm::{decode_pgm, encode_pgm};
pub use preprocess::{bilinear_resize, norb_preprocess, subsample_per_class, test_crop_offset, NorbMode};
pub use registry::{dataset_ids, find_dataset, DatasetSource, FashionMnist, Mnist, SmallNorb, DATA_ROOT_ENV};
pub use smallnorb::{
    encode_norb_matrix, load_smallnorb, parse_norb_matrix, NorbElements, NorbMatrix, NORB_INT_MAGIC, NORB_UBYTE_MAGIC,
};

use std::borrow::Cow;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Random square crop drawn afresh on every access. The offset depends only on
/// `(seed, epoch, sample index)`, so iteration order does not matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomCrop {
    pub size: usize,
    pub seed: u64,
}

impl RandomCrop {
    pub fn offset(&self, height: usize, width: usize, epoch: usize, index: usize) -> (usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((epoch as u64) << 32) | index as u64);
        let y = rng.random_range(0..=height - self.size);
        let x = rng.random_range(0..=width - self.size);
        (y, x)
    }
}

/// Copies the `size x size` window at `(top, left)` out of a `[C, H, W]` image.
pub fn crop(image: &Tensor, top: usize, left: usize, size: usize) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::Shape(format!("crop expects [C, H, W], got {:?}", image.shape())));
    };
    if top + size > h || left + size > w {
        return Err(Error::Shape(format!(
            "{size}x{size} crop at ({top}, {left}) exceeds {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in top..top + size {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&image.data()[row + left..row + left + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Images (`[C, H, W]`, pixels in `[0, 1]`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub source: String,
    pub num_classes: usize,
    /// Training-time augmentation applied by [`LabeledImageSet::sample`].
    pub augment: Option<RandomCrop>,
}

impl LabeledImageSet {
    pub fn new(
        images: Vec<Tensor>,
        labels: Vec<usize>,
        split: Split,
        source: impl Into<String>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Contract(format!(
                "label {l} of sample {i} outside 0..{num_classes}"
            )));
        }
        if let Some(first) = images.first() {
            if let Some(i) = images.iter().position(|t| t.shape() != first.shape()) {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, sample 0 has {:?}",
                    images[i].shape(),
                    first.shape()
                )));
            }
        }
        Ok(Self {
            images,
            labels,
            split,
            source: source.into(),
            num_classes,
            augment: None,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Shape of what [`LabeledImageSet::sample`] yields.
    pub fn sample_shape(&self) -> Option<Vec<usize>> {
        let first = self.images.first()?;
        Some(match (self.augment, first.shape()) {
            (Some(crop), [c, _, _]) => vec![*c, crop.size, crop.size],
            (_, s) => s.to_vec(),
        })
    }

    /// Image `index` as seen in `epoch`, with augmentation applied.
    pub fn sample(&self, index: usize, epoch: usize) -> Result<Cow<'_, Tensor>> {
        let image = &self.images[index];
        match self.augment {
            None => Ok(Cow::Borrowed(image)),
            Some(rc) => {
                let (h, w) = (image.shape()[1], image.shape()[2]);
                let (top, left) = rc.offset(h, w, epoch, index);
                crop(image, top, left, rc.size).map(Cow::Owned)
            }
        }
    }

    /// Number of samples per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Keeps the samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
            source: self.source.clone(),
            num_classes: self.num_classes,
            augment: self.augment,
        }
    }

    pub fn pixels_in_unit_range(&self) -> bool {
        self.images
            .iter()
            .all(|t| t.data().iter().all(|&p| (0.0..=1.0).contains(&p)))
    }
}

/// Reads a whole file, transparently inflating gzip content.
pub(crate) fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// `path`, or `path.gz` when only the compressed file exists.
pub(crate) fn resolve_maybe_gz(path: &Path) -> std::path::PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let mut gz = path.as_os_str().to_owned();
    gz.push(".gz");
    let gz = std::path::PathBuf::from(gz);
    if gz.exists() {
        gz
    } else {
        path.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        let n = c * h * w;
        Tensor::new(vec![c, h, w], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn crop_copies_window() {
        let img = ramp(1, 4, 5);
        let out = crop(&img, 1, 2, 2).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(
            out.data(),
            &[img.data()[7], img.data()[8], img.data()[12], img.data()[13]]
        );
        assert!(crop(&img, 3, 0, 2).is_err());
    }

    #[test]
    fn random_crop_is_stateless_and_reproducible() {
        let rc = RandomCrop { size: 32, seed: 9 };
        let a: Vec<_> = (0..50).map(|i| rc.offset(48, 48, 3, i)).collect();
        let b: Vec<_> = (0..50).rev().map(|i| rc.offset(48, 48, 3, i)).rev().collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|&(y, x)| y <= 16 && x <= 16));
        assert!(a.iter().collect::<std::collections::HashSet<_>>().len() > 10);
        assert_ne!(a, (0..50).map(|i| rc.offset(48, 48, 4, i)).collect::<Vec<_>>());
    }

    #[test]
    fn set_validation() {
        let imgs = vec![ramp(1, 2, 2), ramp(1, 2, 2)];
        assert!(LabeledImageSet::new(imgs.clone(), vec![0], Split::Train, "t", 2).is_err());
        assert!(LabeledImageSet::new(imgs.clone(), vec![0, 2], Split::Train, "t", 2).is_err());
        assert!(LabeledImageSet::new(vec![ramp(1, 2, 2), ramp(1, 3, 2)], vec![0, 1], Split::Train, "t", 2).is_err());
        let set = LabeledImageSet::new(imgs, vec![1, 1], Split::Train, "t", 2).unwrap();
        assert_eq!(set.class_counts(), vec![0, 2]);
        assert!(set.pixels_in_unit_range());
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let payload = b"hello idx".to_vec();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&payload).unwrap();
        let gz = dir.path().join("f.gz");
        std::fs::write(&gz, enc.finish().unwrap()).unwrap();
        assert_eq!(read_maybe_gzip(&gz).unwrap(), payload);
        assert_eq!(resolve_maybe_gz(&dir.path().join("f")), gz);
    }
}
