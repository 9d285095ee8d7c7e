//! Named dataset sources. Files are looked up under a data root:
//!
//! ```text
//! <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! <root>/fashion-mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! <root>/smallnorb/smallnorb-5x46789x9x18x6x2x96x96-training-{dat,cat}.mat[.gz]
//! <root>/smallnorb/smallnorb-5x01235x9x18x6x2x96x96-testing-{dat,cat}.mat[.gz]
//! ```

use std::path::{Path, PathBuf};

use super::{load_idx, load_smallnorb, norb_preprocess, LabeledImageSet, NorbMode, Split};
use crate::error::{Error, Result};

/// Environment variable overriding the default data root (`./data`).
pub const DATA_ROOT_ENV: &str = "CAPSAD_DATA_ROOT";

pub trait DatasetSource: Send + Sync {
    fn id(&self) -> &'static str;
    fn num_classes(&self) -> usize;
    /// `[C, H, W]` of the images handed to the model.
    fn input_shape(&self) -> [usize; 3];
    fn default_epochs(&self) -> usize;
    fn default_batch_size(&self) -> usize;
    /// Paths read for `split` under `root`.
    fn files(&self, root: &Path, split: Split) -> Vec<PathBuf>;
    /// Loads `split`, preprocessed for the model. `seed` drives any
    /// training-time augmentation.
    fn load(&self, root: &Path, split: Split, seed: u64) -> Result<LabeledImageSet>;
}

fn idx_files(dir: &Path, split: Split) -> Vec<PathBuf> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    vec![
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    ]
}

fn load_idx_source(src: &dyn DatasetSource, root: &Path, split: Split) -> Result<LabeledImageSet> {
    let files = src.files(root, split);
    let mut set = load_idx(&files[0], &files[1], split, src.id())?;
    if set.num_classes > src.num_classes() {
        return Err(Error::Format {
            what: files[1].display().to_string(),
            offset: 8,
            detail: format!("label {} outside 0..{}", set.num_classes - 1, src.num_classes()),
        });
    }
    set.num_classes = src.num_classes();
    Ok(set)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Mnist;

impl DatasetSource for Mnist {
    fn id(&self) -> &'static str {
        "mnist"
    }
    fn num_classes(&self) -> usize {
        10
    }
    fn input_shape(&self) -> [usize; 3] {
        [1, 28, 28]
    }
    fn default_epochs(&self) -> usize {
        20
    }
    fn default_batch_size(&self) -> usize {
        100
    }
    fn files(&self, root: &Path, split: Split) -> Vec<PathBuf> {
        idx_files(&root.join("mnist"), split)
    }
    fn load(&self, root: &Path, split: Split, _seed: u64) -> Result<LabeledImageSet> {
        load_idx_source(self, root, split)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FashionMnist;

impl DatasetSource for FashionMnist {
    fn id(&self) -> &'static str {
        "fashion-mnist"
    }
    fn num_classes(&self) -> usize {
        10
    }
    fn input_shape(&self) -> [usize; 3] {
        [1, 28, 28]
    }
    fn default_epochs(&self) -> usize {
        50
    }
    fn default_batch_size(&self) -> usize {
        100
    }
    fn files(&self, root: &Path, split: Split) -> Vec<PathBuf> {
        idx_files(&root.join("fashion-mnist"), split)
    }
    fn load(&self, root: &Path, split: Split, _seed: u64) -> Result<LabeledImageSet> {
        load_idx_source(self, root, split)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SmallNorb;

impl DatasetSource for SmallNorb {
    fn id(&self) -> &'static str {
        "smallnorb"
    }
    fn num_classes(&self) -> usize {
        5
    }
    fn input_shape(&self) -> [usize; 3] {
        [1, 32, 32]
    }
    fn default_epochs(&self) -> usize {
        50
    }
    fn default_batch_size(&self) -> usize {
        64
    }
    fn files(&self, root: &Path, split: Split) -> Vec<PathBuf> {
        let dir = root.join("smallnorb");
        let stem = match split {
            Split::Train => "smallnorb-5x46789x9x18x6x2x96x96-training",
            Split::Test => "smallnorb-5x01235x9x18x6x2x96x96-testing",
        };
        vec![dir.join(format!("{stem}-dat.mat")), dir.join(format!("{stem}-cat.mat"))]
    }
    fn load(&self, root: &Path, split: Split, seed: u64) -> Result<LabeledImageSet> {
        let files = self.files(root, split);
        let raw = load_smallnorb(&files[0], &files[1], split)?;
        let mode = match split {
            Split::Train => NorbMode::Train,
            Split::Test => NorbMode::Test,
        };
        norb_preprocess(&raw, mode, seed)
    }
}

static SOURCES: [&dyn DatasetSource; 3] = [&Mnist, &FashionMnist, &SmallNorb];

pub fn dataset_ids() -> Vec<&'static str> {
    SOURCES.iter().map(|s| s.id()).collect()
}

pub fn find_dataset(id: &str) -> Result<&'static dyn DatasetSource> {
    SOURCES
        .iter()
        .copied()
        .find(|s| s.id() == id)
        .ok_or_else(|| Error::Config(format!("unknown dataset `{id}` (known: {})", dataset_ids().join(", "))))
}
