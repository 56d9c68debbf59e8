//! Datasets: IDX-format ingestion and a synthetic Gaussian-blob fallback
//! that exercises the full pipeline without external files.

use rand::seq::SliceRandom;
use rand::Rng;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

/// Dense labelled dataset with row-major features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, idx: usize) -> (&[f64], u8) {
        let start = idx * self.feature_dim;
        (&self.features[start..start + self.feature_dim], self.labels[idx])
    }

    /// Label-balanced random subset of `size` samples.
    pub fn balanced_subset<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Dataset, DataError> {
        if size > self.len() {
            return Err(DataError::TooSmall {
                need: size,
                have: self.len(),
            });
        }
        let per_class = size / self.num_classes;
        let mut pools: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            pools[l as usize].push(i);
        }
        let mut chosen = Vec::with_capacity(size);
        for pool in &mut pools {
            pool.shuffle(rng);
            if pool.len() < per_class {
                return Err(DataError::TooSmall {
                    need: per_class,
                    have: pool.len(),
                });
            }
            chosen.extend_from_slice(&pool[..per_class]);
        }
        // top up to the requested size from the leftovers
        let mut leftovers: Vec<usize> = pools
            .iter()
            .flat_map(|p| p[per_class.min(p.len())..].iter().copied())
            .collect();
        leftovers.shuffle(rng);
        chosen.extend(leftovers.into_iter().take(size - chosen.len()));

        let mut features = Vec::with_capacity(size * self.feature_dim);
        let mut labels = Vec::with_capacity(size);
        for &i in &chosen {
            let (x, y) = self.sample(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Ok(Dataset {
            features,
            labels,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        })
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset too small: need {need}, have {have}")]
    TooSmall { need: usize, have: usize },
    #[error("bad IDX magic {got:#010x}, expected {expected:#010x}")]
    BadMagic { got: u32, expected: u32 },
    #[error("IDX file truncated")]
    Truncated,
    #[error("image and label counts differ: {images} vs {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(buf: &[u8], off: usize) -> Result<u32, DataError> {
    let bytes: [u8; 4] = buf
        .get(off..off + 4)
        .ok_or(DataError::Truncated)?
        .try_into()
        .unwrap();
    Ok(u32::from_be_bytes(bytes))
}

/// Parses an IDX image file (magic 0x00000803): big-endian dimension
/// headers followed by raw bytes, pixels scaled to [0, 1].
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<f64>, usize, usize), DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            got: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let dim = rows * cols;
    let data = bytes.get(16..16 + count * dim).ok_or(DataError::Truncated)?;
    let features = data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((features, count, dim))
}

/// Parses an IDX label file (magic 0x00000801).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            got: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let data = bytes.get(8..8 + count).ok_or(DataError::Truncated)?;
    Ok(data.to_vec())
}

fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let mut img_bytes = Vec::new();
    std::fs::File::open(images)?.read_to_end(&mut img_bytes)?;
    let mut lbl_bytes = Vec::new();
    std::fs::File::open(labels)?.read_to_end(&mut lbl_bytes)?;
    let (features, count, dim) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    Ok(Dataset {
        features,
        labels,
        feature_dim: dim,
        num_classes,
    })
}

/// Loads the train and test splits from a directory holding the standard
/// IDX files (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`).
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset), DataError> {
    let train = load_idx_pair(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx_pair(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Parameters of the synthetic blob generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_size: usize,
    pub test_size: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Per-coordinate standard deviation of the class centers.
    pub center_scale: f64,
    /// Per-coordinate noise standard deviation around the center.
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_size: 2000,
            test_size: 1000,
            feature_dim: 784,
            num_classes: 10,
            center_scale: 0.12,
            noise_std: 0.25,
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws class-balanced Gaussian blobs; train and test share the centers.
pub fn synthetic_blobs<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> (Dataset, Dataset) {
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..spec.feature_dim).map(|_| spec.center_scale * gaussian(rng)).collect())
        .collect();

    let draw = |size: usize, rng: &mut R| {
        let mut features = Vec::with_capacity(size * spec.feature_dim);
        let mut labels = Vec::with_capacity(size);
        for i in 0..size {
            let class = i % spec.num_classes;
            let center = &centers[class];
            for &c in center {
                features.push(c + spec.noise_std * gaussian(rng));
            }
            labels.push(class as u8);
        }
        Dataset {
            features,
            labels,
            feature_dim: spec.feature_dim,
            num_classes: spec.num_classes,
        }
    };
    let train = draw(spec.train_size, rng);
    let test = draw(spec.test_size, rng);
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn idx_image_bytes(count: u32, rows: u32, cols: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        b.extend_from_slice(&count.to_be_bytes());
        b.extend_from_slice(&rows.to_be_bytes());
        b.extend_from_slice(&cols.to_be_bytes());
        for i in 0..(count * rows * cols) {
            b.push((i % 256) as u8);
        }
        b
    }

    #[test]
    fn idx_round_trip() {
        let bytes = idx_image_bytes(3, 2, 2);
        let (features, count, dim) = parse_idx_images(&bytes).unwrap();
        assert_eq!((count, dim), (3, 4));
        assert_eq!(features.len(), 12);
        assert!((features[1] - 1.0 / 255.0).abs() < 1e-15);

        let mut lbl = Vec::new();
        lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lbl.extend_from_slice(&3u32.to_be_bytes());
        lbl.extend_from_slice(&[0, 1, 2]);
        assert_eq!(parse_idx_labels(&lbl).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn idx_rejects_bad_magic_and_truncation() {
        let mut bytes = idx_image_bytes(2, 2, 2);
        bytes[3] = 0x01;
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(DataError::BadMagic { .. })
        ));
        let bytes = idx_image_bytes(2, 2, 2);
        assert!(matches!(
            parse_idx_images(&bytes[..bytes.len() - 1]),
            Err(DataError::Truncated)
        ));
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let spec = SyntheticSpec {
            train_size: 100,
            test_size: 50,
            feature_dim: 8,
            num_classes: 5,
            ..SyntheticSpec::default()
        };
        let (train_a, _) = synthetic_blobs(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        let (train_b, _) = synthetic_blobs(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(train_a.features, train_b.features);
        let mut counts = [0usize; 5];
        for &l in &train_a.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 20));
    }

    #[test]
    fn balanced_subset_is_balanced() {
        let spec = SyntheticSpec {
            train_size: 400,
            test_size: 10,
            feature_dim: 4,
            num_classes: 10,
            ..SyntheticSpec::default()
        };
        let (train, _) = synthetic_blobs(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let sub = train
            .balanced_subset(100, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap();
        assert_eq!(sub.len(), 100);
        let mut counts = [0usize; 10];
        for &l in &sub.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10), "{counts:?}");
    }
}
