//! MNIST IDX ingestion, synthetic Gaussian blobs, and batching.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use uniq::{Error, Result, Tensor};

use crate::config::DatasetConfig;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;
pub const DATA_DIR_ENV: &str = "UNIQ_DATA_DIR";

/// Samples stored row-major as `f32`, with one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_shape: Vec<usize>,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.data.truncate(n * self.sample_len());
        }
    }

    /// Gathers the given samples into a `[indices.len(), ..sample_shape]` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(&shape, data).expect("batch shape"), labels)
    }

    /// Batches in storage order.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = (Tensor<f32>, Vec<usize>)> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }

    /// Index batches of a permutation drawn from `seed`.
    pub fn shuffled_indices(&self, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn reshape_samples(&mut self, shape: &[usize]) -> Result<()> {
        if shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::Config(format!(
                "samples of shape {:?} cannot feed a model expecting {shape:?}",
                self.sample_shape
            )));
        }
        self.sample_shape = shape.to_vec();
        Ok(())
    }
}

fn ingestion(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion { path: path.to_path_buf(), msg: msg.into() }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// `(count, rows, cols, pixels)` of an IDX images file.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
    if bytes.len() < 16 {
        return Err(ingestion(path, "truncated header"));
    }
    let magic = read_u32(&bytes, 0);
    if magic != IMAGES_MAGIC {
        return Err(ingestion(path, format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let (n, rows, cols) = (read_u32(&bytes, 4) as usize, read_u32(&bytes, 8) as usize, read_u32(&bytes, 12) as usize);
    let want = 16 + n * rows * cols;
    if bytes.len() < want {
        return Err(ingestion(path, format!("truncated: {} bytes, header promises {want}", bytes.len())));
    }
    Ok((n, rows, cols, bytes[16..want].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
    if bytes.len() < 8 {
        return Err(ingestion(path, "truncated header"));
    }
    let magic = read_u32(&bytes, 0);
    if magic != LABELS_MAGIC {
        return Err(ingestion(path, format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let n = read_u32(&bytes, 4) as usize;
    if bytes.len() < 8 + n {
        return Err(ingestion(path, format!("truncated: {} bytes, header promises {}", bytes.len(), 8 + n)));
    }
    Ok(bytes[8..8 + n].to_vec())
}

/// `UNIQ_DATA_DIR` if set, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

/// One MNIST split (`"train"` or `"t10k"`), normalized with the usual mean and std.
pub fn load_mnist_split(dir: &Path, split: &str) -> Result<Dataset> {
    let images = dir.join(format!("{split}-images-idx3-ubyte"));
    let labels_path = dir.join(format!("{split}-labels-idx1-ubyte"));
    let (n, rows, cols, pixels) = read_idx_images(&images)?;
    let labels = read_idx_labels(&labels_path)?;
    if labels.len() != n {
        return Err(ingestion(&labels_path, format!("{} labels for {n} images", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 9) {
        return Err(ingestion(&labels_path, format!("label {l} out of range")));
    }
    let data = pixels.iter().map(|&p| (p as f32 / 255.0 - MNIST_MEAN) / MNIST_STD).collect();
    Ok(Dataset { sample_shape: vec![1, rows, cols], data, labels: labels.into_iter().map(usize::from).collect(), classes: 10 })
}

/// Gaussian-blob classification data; identical for identical arguments.
pub fn synthetic_gaussian(classes: usize, dim: usize, train: usize, test: usize, separation: f64, seed: u64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); separation * z }).collect::<Vec<f64>>())
        .collect();
    let mut split = |count: usize| {
        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let c = i % classes;
            for m in &means[c] {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((m + z) as f32);
            }
            labels.push(c);
        }
        Dataset { sample_shape: vec![dim], data, labels, classes }
    };
    let tr = split(train);
    let te = split(test);
    (tr, te)
}

/// Train and test splits for `cfg`, reshaped to `sample_shape`.
pub fn load_dataset(cfg: &DatasetConfig, sample_shape: &[usize]) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match *cfg {
        DatasetConfig::Mnist { train_limit, test_limit } => {
            let dir = mnist_dir();
            let mut train = load_mnist_split(&dir, "train")?;
            let mut test = load_mnist_split(&dir, "t10k")?;
            if let Some(n) = train_limit {
                train.truncate(n);
            }
            if let Some(n) = test_limit {
                test.truncate(n);
            }
            (train, test)
        }
        DatasetConfig::SyntheticGaussian { classes, dim, train, test, separation, seed } => {
            synthetic_gaussian(classes, dim, train, test, separation, seed)
        }
    };
    train.reshape_samples(sample_shape)?;
    test.reshape_samples(sample_shape)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded() {
        let a = synthetic_gaussian(2, 16, 64, 8, 1.0, 7);
        let b = synthetic_gaussian(2, 16, 64, 8, 1.0, 7);
        assert_eq!(a, b);
        assert_ne!(a.0, synthetic_gaussian(2, 16, 64, 8, 1.0, 8).0);
    }

    #[test]
    fn bad_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x-images-idx3-ubyte");
        std::fs::write(&p, [0u8, 0, 8, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        match read_idx_images(&p) {
            Err(Error::Ingestion { path, .. }) => assert_eq!(path, p),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_and_missing_files_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l");
        std::fs::write(&p, [0u8, 0, 8, 1, 0, 0, 0, 5, 1, 2]).unwrap();
        assert!(matches!(read_idx_labels(&p), Err(Error::Ingestion { .. })));
        assert!(matches!(read_idx_labels(&dir.path().join("missing")), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn batches_gather_rows() {
        let (d, _) = synthetic_gaussian(3, 2, 5, 1, 1.0, 0);
        let (x, y) = d.batch(&[4, 0]);
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(&x.data()[..2], &d.data[8..10]);
        assert_eq!(y, vec![1, 0]);
        assert_eq!(d.sequential_batches(2).count(), 3);
    }
}
