//! Image datasets: procedural toy images, IDX ingestion, first-N splitting
//! and binary PGM/PPM files.

mod idx;
mod pnm;
mod synthetic;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use pnm::{decode_pnm, encode_pnm, quantize, read_pnm, write_pnm};
pub use synthetic::{gen_synthetic, render_ellipse, EllipseParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A batch of images `(n, channels, height, width)` with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    images: Tensor,
    source: String,
    labels: Option<Vec<u8>>,
}

impl ImageDataset {
    pub fn new(images: Tensor, source: impl Into<String>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] == 0 {
            return Err(Error::shape(
                "dataset",
                format!("expected non-empty (n, c, h, w), got {:?}", images.shape()),
            ));
        }
        if images.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::invalid("dataset values must lie in [-1, 1]"));
        }
        Ok(ImageDataset {
            images,
            source: source.into(),
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(
                "dataset labels",
                format!("{} labels for {} images", labels.len(), self.len()),
            ));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(channels, height, width)`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Image `i` as a `(c, h, w)` tensor.
    pub fn image(&self, i: usize) -> Tensor {
        self.images.index_axis0(i)
    }

    /// All images as separate `(c, h, w)` tensors.
    pub fn to_vec(&self) -> Vec<Tensor> {
        (0..self.len()).map(|i| self.image(i)).collect()
    }

    /// Gathers the given rows into an `(k, c, h, w)` batch.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let per: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let [c, h, w] = self.image_shape();
        Tensor::new([indices.len(), c, h, w], data).expect("batch shape")
    }

    fn slice(&self, start: usize, end: usize, tag: &str) -> ImageDataset {
        let idx: Vec<usize> = (start..end).collect();
        ImageDataset {
            images: self.batch(&idx),
            source: format!("{}[{}]", self.source, tag),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }
}

/// First-N train/validation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_train: usize,
}

/// Puts the first `n_train` images in the training set and the rest in the
/// validation set, preserving order.
pub fn split(dataset: &ImageDataset, spec: SplitSpec) -> Result<(ImageDataset, ImageDataset)> {
    let n = dataset.len();
    if spec.n_train == 0 || spec.n_train >= n {
        return Err(Error::invalid(format!(
            "n_train must satisfy 0 < n_train < {n}, got {}",
            spec.n_train
        )));
    }
    Ok((
        dataset.slice(0, spec.n_train, "train"),
        dataset.slice(spec.n_train, n, "val"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numbered(n: usize) -> ImageDataset {
        let data = (0..n * 4)
            .map(|i| (i as f64 / (n * 4) as f64) * 2.0 - 1.0)
            .collect();
        ImageDataset::new(Tensor::new([n, 1, 2, 2], data).unwrap(), "test").unwrap()
    }

    #[test]
    fn split_sizes_and_order() {
        let ds = numbered(10);
        let (train, val) = split(&ds, SplitSpec { n_train: 6 }).unwrap();
        assert_eq!((train.len(), val.len()), (6, 4));
        assert_eq!(train.image(0), ds.image(0));
        assert_eq!(val.image(0), ds.image(6));
    }

    #[test]
    fn split_is_a_partition() {
        let ds = numbered(10);
        let (train, val) = split(&ds, SplitSpec { n_train: 3 }).unwrap();
        let mut all = train.to_vec();
        all.extend(val.to_vec());
        assert_eq!(all, ds.to_vec());
    }

    #[test]
    fn split_rejects_degenerate_sizes() {
        let ds = numbered(4);
        assert!(split(&ds, SplitSpec { n_train: 0 }).is_err());
        assert!(split(&ds, SplitSpec { n_train: 4 }).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_range_values() {
        let t = Tensor::full([1, 1, 2, 2], 1.5);
        assert!(ImageDataset::new(t, "bad").is_err());
    }
}
