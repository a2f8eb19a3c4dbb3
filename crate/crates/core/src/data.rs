//! Image sources and scoring minibatches.
//!
//! CIFAR-10 binary files are read as 3073-byte records: one label byte then
//! 3072 pixel bytes (red plane, green plane, blue plane, each 32x32 row-major).
//! A seeded synthetic generator stands in when no dataset is available.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::fnv64;
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "RBFLEX_DATA_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    CifarBin { paths: Vec<PathBuf> },
    Synthetic { seed: u64 },
}

impl ImageSource {
    /// Stable textual tag used in fingerprints and manifests.
    pub fn tag(&self) -> String {
        match self {
            ImageSource::CifarBin { paths } => {
                let names: Vec<String> = paths
                    .iter()
                    .map(|p| {
                        p.file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_default()
                    })
                    .collect();
                format!("cifar-bin:{}", names.join("+"))
            }
            ImageSource::Synthetic { seed } => format!("synthetic:{seed}"),
        }
    }
}

/// A set of `[M, 3, H, W]` images with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub images: Tensor,
    pub labels: Option<Vec<u8>>,
    pub source: ImageSource,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side length of the (square) images.
    pub fn side(&self) -> usize {
        self.images.shape()[2]
    }
}

pub fn load_cifar_bin<P: AsRef<Path>>(paths: &[P]) -> Result<ImageSet> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut owned = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bytes = fs::read(path).map_err(|e| Error::io(&display, e))?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::MalformedFile {
                path: display,
                reason: format!(
                    "size {} is not a positive multiple of {CIFAR_RECORD}",
                    bytes.len()
                ),
            });
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if label > 9 {
                return Err(Error::LabelOutOfRange {
                    label,
                    record: labels.len(),
                });
            }
            labels.push(label);
            data.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
        owned.push(path.to_path_buf());
    }
    if labels.is_empty() {
        return Err(Error::Config("no CIFAR files given".into()));
    }
    Ok(ImageSet {
        images: Tensor::new(vec![labels.len(), 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
        labels: Some(labels),
        source: ImageSource::CifarBin { paths: owned },
    })
}

/// Loads every `*.bin` file of a directory in file-name order.
pub fn load_cifar_dir(dir: &Path) -> Result<ImageSet> {
    let display = dir.display().to_string();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(&display, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MalformedFile {
            path: display,
            reason: "no .bin files found".into(),
        });
    }
    load_cifar_bin(&paths)
}

/// Writes 32x32 images in the CIFAR-10 binary layout. Missing labels are written as 0.
pub fn write_cifar_bin(set: &ImageSet, path: &Path) -> Result<()> {
    if set.images.sample_shape() != [3, CIFAR_SIDE, CIFAR_SIDE] {
        return Err(Error::ShapeMismatch(format!(
            "CIFAR records hold 3x32x32 images, got {:?}",
            set.images.sample_shape()
        )));
    }
    let mut bytes = Vec::with_capacity(set.len() * CIFAR_RECORD);
    for i in 0..set.len() {
        bytes.push(set.labels.as_ref().map_or(0, |l| l[i]));
        bytes.extend(
            set.images
                .sample(i)
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    let display = path.display().to_string();
    let mut f = fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&display, e))
}

/// Deterministic synthetic images mixing a colour gradient, a block pattern
/// and uniform noise. No two images in a set are identical.
pub fn synth_images(count: usize, height: usize, width: usize, seed: u64) -> Result<ImageSet> {
    if count == 0 || height == 0 || width == 0 {
        return Err(Error::Config(
            "synthetic image set must be non-empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = height * width;
    let mut data = Vec::with_capacity(count * 3 * plane);
    for _ in 0..count {
        let angle = rng.random::<f64>() * std::f64::consts::TAU;
        let (dy, dx) = angle.sin_cos();
        let block = rng.random_range(2..=(height.min(width) / 2).max(2));
        let noise_amp = rng.random_range(0.05..0.35);
        let mix = rng.random_range(0.2..0.8);
        for _ in 0..3 {
            let offset = rng.random::<f64>();
            let contrast = rng.random_range(0.3..1.0);
            let lo = rng.random::<f64>();
            let hi = rng.random::<f64>();
            for y in 0..height {
                for x in 0..width {
                    let t =
                        (dy * y as f64 / height as f64 + dx * x as f64 / width as f64) * 0.5 + 0.5;
                    let gradient = offset + contrast * (t - 0.5);
                    let checker = if ((y / block) + (x / block)) % 2 == 0 {
                        lo
                    } else {
                        hi
                    };
                    let noise = noise_amp * (rng.random::<f64>() - 0.5);
                    let v = mix * gradient + (1.0 - mix) * checker + noise;
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
    }
    let images = Tensor::new(vec![count, 3, height, width], data)?;
    for i in 0..count {
        for j in 0..i {
            assert!(
                images.sample(i) != images.sample(j),
                "synthetic images {i} and {j} coincide"
            );
        }
    }
    Ok(ImageSet {
        images,
        labels: None,
        source: ImageSource::Synthetic { seed },
    })
}

/// Images fed to a scoring pass. Carries no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub images: Tensor,
    pub indices: Vec<usize>,
    pub fingerprint: u64,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.images.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Wraps an explicit tensor; the fingerprint covers the tag and the pixel data.
    pub fn from_tensor(images: Tensor, tag: &str) -> Result<Self> {
        if images.batch() < 2 {
            return Err(Error::Config("a minibatch needs at least 2 images".into()));
        }
        let mut bytes = tag.as_bytes().to_vec();
        for v in images.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Ok(Minibatch {
            indices: (0..images.batch()).collect(),
            fingerprint: fnv64(&bytes),
            images,
        })
    }
}

pub fn draw_minibatch(set: &ImageSet, n: usize, seed: u64) -> Result<Minibatch> {
    if n < 2 {
        return Err(Error::Config(format!(
            "minibatch size {n} is below the minimum of 2"
        )));
    }
    if n > set.len() {
        return Err(Error::NotEnoughImages {
            requested: n,
            available: set.len(),
        });
    }
    let indices: Vec<usize> = if n == set.len() {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, set.len(), n).into_vec()
    };
    let mut bytes = set.source.tag().into_bytes();
    for &i in &indices {
        bytes.extend_from_slice(&(i as u64).to_le_bytes());
    }
    Ok(Minibatch {
        images: set.images.select(&indices),
        fingerprint: fnv64(&bytes),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn single_white_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, CIFAR_PIXELS));
        let p = write(dir.path(), "a.bin", &rec);
        let set = load_cifar_bin(&[p]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.labels.as_deref(), Some(&[3u8][..]));
        assert!(set.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn record_arithmetic_and_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let two = write(dir.path(), "two.bin", &vec![1u8; 2 * CIFAR_RECORD]);
        assert_eq!(load_cifar_bin(&[two]).unwrap().len(), 2);
        let short = write(dir.path(), "short.bin", &vec![1u8; CIFAR_PIXELS]);
        assert!(matches!(
            load_cifar_bin(&[short]),
            Err(Error::MalformedFile { .. })
        ));
        let mut bad = vec![0u8; CIFAR_RECORD];
        bad[0] = 10;
        let bad = write(dir.path(), "bad.bin", &bad);
        assert!(matches!(
            load_cifar_bin(&[bad]),
            Err(Error::LabelOutOfRange { label: 10, .. })
        ));
    }

    #[test]
    fn plane_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = vec![0u8; CIFAR_RECORD];
        rec[1] = 255; // red (0,0)
        rec[1 + 1024 + 33] = 51; // green (1,1)
        let p = write(dir.path(), "p.bin", &rec);
        let set = load_cifar_bin(&[p]).unwrap();
        let img = set.images.sample(0);
        assert_eq!(img[0], 1.0);
        assert_eq!(img[1024 + 32 + 1], 0.2);
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for i in 0..3u8 {
            bytes.push(i);
            bytes.extend((0..CIFAR_PIXELS).map(|j| ((j * 7 + i as usize * 13) % 256) as u8));
        }
        let p = write(dir.path(), "orig.bin", &bytes);
        let set = load_cifar_bin(&[&p]).unwrap();
        let out = dir.path().join("copy.bin");
        write_cifar_bin(&set, &out).unwrap();
        assert_eq!(fs::read(&out).unwrap(), bytes);
        let again = load_cifar_bin(&[&out]).unwrap();
        assert_eq!(again.images, set.images);
        assert_eq!(again.labels, set.labels);
    }

    #[test]
    fn directory_loading_sorts_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = vec![0u8; CIFAR_RECORD];
        b[0] = 2;
        write(dir.path(), "b.bin", &b);
        let mut a = vec![0u8; CIFAR_RECORD];
        a[0] = 1;
        write(dir.path(), "a.bin", &a);
        write(dir.path(), "readme.txt", b"x");
        let set = load_cifar_dir(dir.path()).unwrap();
        assert_eq!(set.labels.unwrap(), vec![1, 2]);
    }

    #[test]
    fn synthetic_is_deterministic_and_bounded() {
        let a = synth_images(20, 16, 16, 5).unwrap();
        assert_eq!(a, synth_images(20, 16, 16, 5).unwrap());
        assert_ne!(a.images, synth_images(20, 16, 16, 6).unwrap().images);
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.labels.is_none());
    }

    #[test]
    fn minibatch_rules() {
        let set = synth_images(10, 4, 4, 1).unwrap();
        let all = draw_minibatch(&set, 10, 99).unwrap();
        assert_eq!(all.indices, (0..10).collect::<Vec<_>>());
        assert_eq!(all.images, set.images);
        let a = draw_minibatch(&set, 4, 1).unwrap();
        let b = draw_minibatch(&set, 4, 2).unwrap();
        assert_eq!(a, draw_minibatch(&set, 4, 1).unwrap());
        assert_ne!(a.fingerprint, b.fingerprint);
        assert!(draw_minibatch(&set, 1, 1).is_err());
        assert!(matches!(
            draw_minibatch(&set, 11, 1),
            Err(Error::NotEnoughImages { .. })
        ));
    }
}
