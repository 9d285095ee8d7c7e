use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{crop, LabeledImageSet, RandomCrop};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NORB_RAW: usize = 96;
const NORB_RESIZED: usize = 48;
const NORB_CROP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NorbMode {
    /// Random crop, redrawn every epoch.
    Train,
    /// Fixed central crop.
    Test,
}

/// Bilinear resampling of a `[C, H, W]` image with half-pixel centres and
/// edge clamping.
pub fn bilinear_resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::Shape(format!(
            "resize expects [C, H, W], got {:?}",
            image.shape()
        )));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape("resize to an empty image".into()));
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Top-left corner of the central `crop` window in a `size x size` image.
pub fn test_crop_offset(size: usize, crop: usize) -> (usize, usize) {
    ((size - crop) / 2, (size - crop) / 2)
}

/// Resizes 96x96 small-NORB images to 48x48, then crops 32x32 patches: the
/// central patch in test mode, a seeded random patch per access in train mode.
pub fn norb_preprocess(set: &LabeledImageSet, mode: NorbMode, seed: u64) -> Result<LabeledImageSet> {
    if let Some(bad) = set.images.iter().find(|t| t.shape()[1..] != [NORB_RAW, NORB_RAW]) {
        return Err(Error::Shape(format!(
            "small-NORB preprocessing expects {NORB_RAW}x{NORB_RAW} images, got {:?}",
            bad.shape()
        )));
    }
    let (top, left) = test_crop_offset(NORB_RESIZED, NORB_CROP);
    let images = set
        .images
        .iter()
        .map(|img| {
            let resized = bilinear_resize(img, NORB_RESIZED, NORB_RESIZED)?;
            match mode {
                NorbMode::Train => Ok(resized),
                NorbMode::Test => crop(&resized, top, left, NORB_CROP),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = LabeledImageSet::new(
        images,
        set.labels.clone(),
        set.split,
        set.source.clone(),
        set.num_classes,
    )?;
    if mode == NorbMode::Train {
        out.augment = Some(RandomCrop { size: NORB_CROP, seed });
    }
    Ok(out)
}

/// Keeps at most `cap` samples of each class, chosen uniformly without
/// replacement; surviving samples keep their original relative order.
pub fn subsample_per_class(set: &LabeledImageSet, cap: usize, seed: u64) -> Result<LabeledImageSet> {
    if cap == 0 {
        return Err(Error::Contract("per-class cap must be at least 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.num_classes];
    for (i, &l) in set.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut keep = Vec::new();
    for (class, members) in by_class.iter().enumerate() {
        if members.len() <= cap {
            keep.extend_from_slice(members);
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            keep.extend(
                index::sample(&mut rng, members.len(), cap)
                    .into_iter()
                    .map(|j| members[j]),
            );
        }
    }
    keep.sort_unstable();
    Ok(set.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn norb_like(n: usize, value: impl Fn(usize, usize, usize) -> f64) -> LabeledImageSet {
        let images = (0..n)
            .map(|i| {
                let data = (0..NORB_RAW * NORB_RAW)
                    .map(|p| value(i, p / NORB_RAW, p % NORB_RAW))
                    .collect();
                Tensor::new(vec![1, NORB_RAW, NORB_RAW], data).unwrap()
            })
            .collect();
        LabeledImageSet::new(images, (0..n).map(|i| i % 5).collect(), Split::Train, "smallnorb", 5).unwrap()
    }

    #[test]
    fn central_crop_offset() {
        assert_eq!(test_crop_offset(48, 32), (8, 8));
    }

    #[test]
    fn halving_resize_averages_blocks() {
        let img = Tensor::new(vec![1, 2, 4], vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0, 0.25, 0.75]).unwrap();
        let out = bilinear_resize(&img, 1, 2).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
        let same = bilinear_resize(&img, 2, 4).unwrap();
        assert_eq!(same, img);
    }

    #[test]
    fn constant_images_stay_constant() {
        let set = norb_like(3, |_, _, _| 0.4);
        for mode in [NorbMode::Train, NorbMode::Test] {
            let out = norb_preprocess(&set, mode, 1).unwrap();
            for i in 0..out.len() {
                let s = out.sample(i, 2).unwrap();
                assert_eq!(s.shape(), &[1, 32, 32]);
                assert!(s.data().iter().all(|&v| (v - 0.4).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn test_mode_takes_the_centre_and_ignores_seed() {
        let set = norb_like(2, |i, y, x| ((i * 7 + y * 3 + x) % 255) as f64 / 255.0);
        let a = norb_preprocess(&set, NorbMode::Test, 1).unwrap();
        let b = norb_preprocess(&set, NorbMode::Test, 99).unwrap();
        assert_eq!(a, b);
        let resized = bilinear_resize(&set.images[1], 48, 48).unwrap();
        assert_eq!(a.images[1], crop(&resized, 8, 8, 32).unwrap());
        assert!(a.pixels_in_unit_range());
    }

    #[test]
    fn train_mode_crops_are_reproducible() {
        let set = norb_like(4, |i, y, x| ((i + y * x) % 256) as f64 / 255.0);
        let a = norb_preprocess(&set, NorbMode::Train, 5).unwrap();
        let b = norb_preprocess(&set, NorbMode::Train, 5).unwrap();
        for i in 0..4 {
            assert_eq!(a.sample(i, 1).unwrap(), b.sample(i, 1).unwrap());
        }
        assert_eq!(a.sample_shape(), Some(vec![1, 32, 32]));
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let set = LabeledImageSet::new(vec![Tensor::zeros(vec![1, 28, 28])], vec![0], Split::Test, "x", 1).unwrap();
        assert!(matches!(norb_preprocess(&set, NorbMode::Test, 0), Err(Error::Shape(_))));
    }

    fn labelled(labels: Vec<usize>, classes: usize) -> LabeledImageSet {
        let images = labels
            .iter()
            .enumerate()
            .map(|(i, _)| Tensor::from_vec(vec![i as f64]).reshape(vec![1, 1, 1]).unwrap())
            .collect();
        LabeledImageSet::new(images, labels, Split::Train, "t", classes).unwrap()
    }

    #[test]
    fn subsample_caps_each_class() {
        let set = labelled((0..60).map(|i| i % 3).collect(), 3);
        let same = subsample_per_class(&set, 20, 1).unwrap();
        assert_eq!(same, set);
        let one = subsample_per_class(&set, 1, 1).unwrap();
        assert_eq!(one.class_counts(), vec![1, 1, 1]);
        let a = subsample_per_class(&set, 7, 3).unwrap();
        let b = subsample_per_class(&set, 7, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![7, 7, 7]);
        let ids: Vec<f64> = a.images.iter().map(|t| t.data()[0]).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(subsample_per_class(&set, 0, 1).is_err());
    }
}
