use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::{is_supported_image, read_image, resize_image};
use super::labels::{read_class_names, read_labels, Annotation};
use super::targets::encode_targets;
use crate::autodiff::{Scalar, Tensor};
use crate::detect::GridLayout;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Sample {
    /// File stem of the image.
    pub id: String,
    /// `[3, size, size]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    /// Images that had no label file (loaded with zero annotations).
    pub missing_labels: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn annotations(&self) -> Vec<Vec<Annotation>> {
        self.samples.iter().map(|s| s.annotations.clone()).collect()
    }
}

/// Loads `root/images/<split>` paired by stem with `root/labels/<split>`,
/// stretching every image to `size x size`. Samples are sorted by file name.
///
/// `classes.txt` is optional; when present it must list at least `classes`
/// names.
pub fn load_dataset(root: &Path, split: &str, classes: usize, size: usize) -> Result<Dataset> {
    let img_dir = root.join("images").join(split);
    if !img_dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "dataset split directory {} not found",
            img_dir.display()
        )));
    }
    let lbl_dir = root.join("labels").join(split);
    let class_file = root.join("classes.txt");
    let class_names = if class_file.is_file() {
        let names = read_class_names(&class_file)?;
        if names.len() < classes {
            return Err(Error::Config(format!(
                "{} lists {} classes, model expects {classes}",
                class_file.display(),
                names.len()
            )));
        }
        names
    } else {
        (0..classes).map(|c| format!("class{c}")).collect()
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&img_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_supported_image(p));
    paths.sort();
    let mut ds = Dataset {
        class_names,
        ..Default::default()
    };
    for path in paths {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let label_path = lbl_dir.join(format!("{id}.txt"));
        let annotations = if label_path.is_file() {
            read_labels(&label_path, classes)?
        } else {
            ds.missing_labels += 1;
            Vec::new()
        };
        let image = resize_image(&read_image(&path)?.to_tensor(), size)?;
        ds.samples.push(Sample { id, image, annotations });
    }
    if ds.missing_labels > 0 {
        log::warn!("{}: {} images without label files", img_dir.display(), ds.missing_labels);
    }
    Ok(ds)
}

/// One training batch: stacked images and per-scale stacked targets.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub indices: Vec<usize>,
    pub images: Tensor<T>,
    pub targets: Vec<Tensor<T>>,
    pub dropped: usize,
}

/// Sample order for one epoch: a shuffle seeded by `(seed, epoch)`, or file
/// order when `shuffle` is off.
pub fn epoch_order(len: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mix = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    }
    order
}

pub fn make_batch<T: Scalar>(ds: &Dataset, indices: &[usize], layouts: &[GridLayout]) -> Result<Batch<T>> {
    let images: Vec<Tensor<T>> = indices.iter().map(|&i| ds.samples[i].image.cast()).collect();
    let mut targets = Vec::with_capacity(layouts.len());
    let mut dropped = 0;
    for &layout in layouts {
        let grids: Vec<Tensor<T>> = indices
            .iter()
            .map(|&i| {
                let e = encode_targets(&ds.samples[i].annotations, layout);
                dropped += e.dropped;
                e.grid
            })
            .collect();
        targets.push(Tensor::stack(&grids)?);
    }
    Ok(Batch {
        indices: indices.to_vec(),
        images: Tensor::stack(&images)?,
        targets,
        dropped,
    })
}

/// Batches covering the dataset once; the last one may be short.
pub fn batch_iter<'a, T: Scalar>(
    ds: &'a Dataset,
    batch_size: usize,
    layouts: &'a [GridLayout],
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> impl Iterator<Item = Result<Batch<T>>> + 'a {
    let order = epoch_order(ds.len(), seed, epoch, shuffle);
    let size = batch_size.max(1);
    let chunks: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| make_batch(ds, &idx, layouts))
}
