use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub const GJSD_MAGIC: &[u8; 4] = b"GJSD";
pub const MNIST_IMAGES: &str = "mnist5k-images-idx3-ubyte.gz";
pub const MNIST_TRAIN: usize = 4096;
/// Seed of the fixed shuffle applied before the train/test split.
pub const MNIST_SPLIT_SEED: u64 = 0;

/// Train and test rows, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Array2<f64>,
    pub test: Array2<f64>,
}

impl Split {
    pub fn dim(&self) -> usize {
        self.train.ncols()
    }
}

/// Writes rows as the `GJSD` container: magic, `u32` count, `u32` dim, then
/// `count × dim` little-endian `f32`.
pub fn write_gjsd(mut out: impl Write, data: &Array2<f64>) -> Result<()> {
    check_unit_range(data)?;
    let count = u32::try_from(data.nrows()).map_err(|_| Error::Format("too many rows".into()))?;
    let dim = u32::try_from(data.ncols()).map_err(|_| Error::Format("too many columns".into()))?;
    out.write_all(GJSD_MAGIC)?;
    out.write_u32::<LittleEndian>(count)?;
    out.write_u32::<LittleEndian>(dim)?;
    for &v in data.iter() {
        out.write_f32::<LittleEndian>(v as f32)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_gjsd(mut input: impl Read) -> Result<Array2<f64>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != GJSD_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let count = input.read_u32::<LittleEndian>()? as usize;
    let dim = input.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0f32; count * dim];
    input.read_f32_into::<LittleEndian>(&mut buf)?;
    let data = Array2::from_shape_vec((count, dim), buf.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Format(e.to_string()))?;
    check_unit_range(&data)?;
    Ok(data)
}

pub fn save_gjsd(path: impl AsRef<Path>, data: &Array2<f64>) -> Result<()> {
    write_gjsd(BufWriter::new(File::create(path)?), data)
}

pub fn load_gjsd(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_gjsd(BufReader::new(File::open(path)?))
}

fn check_unit_range(data: &Array2<f64>) -> Result<()> {
    match data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(k) => Err(Error::Format(format!(
            "value {} at row {} is outside [0, 1]",
            data.as_slice().map_or(f64::NAN, |s| s[k]),
            k / data.ncols().max(1)
        ))),
        None => Ok(()),
    }
}

/// Opens a file, transparently decompressing gzip.
fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut head = [0u8; 2];
    let n = file.read(&mut head)?;
    let chained = std::io::Cursor::new(head[..n].to_vec()).chain(file);
    Ok(if n == 2 && head == [0x1f, 0x8b] {
        Box::new(BufReader::new(GzDecoder::new(chained)))
    } else {
        Box::new(chained)
    })
}

/// Reads an IDX `u8` image file (optionally gzipped), flattening each image and
/// scaling pixels to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut input = open_maybe_gz(path.as_ref())?;
    let magic = input.read_u32::<BigEndian>()?;
    if magic >> 8 != 0x08 {
        return Err(Error::Format(format!("IDX magic {magic:#x} is not unsigned-byte data")));
    }
    let ndim = (magic & 0xff) as usize;
    if ndim < 2 {
        return Err(Error::Format("IDX image file needs at least two dimensions".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(input.read_u32::<BigEndian>()? as usize);
    }
    let count = shape[0];
    let dim: usize = shape[1..].iter().product();
    let mut bytes = vec![0u8; count * dim];
    input.read_exact(&mut bytes)?;
    let pixels = bytes.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Array2::from_shape_vec((count, dim), pixels).map_err(|e| Error::Format(e.to_string()))
}

/// Converts an IDX image file to the `GJSD` container; returns the row count.
pub fn convert_idx(idx: impl AsRef<Path>, gjsd: impl AsRef<Path>) -> Result<usize> {
    let data = read_idx_images(idx)?;
    save_gjsd(gjsd, &data)?;
    Ok(data.nrows())
}

/// Rows of `data` in a fixed pseudo-random order, split after `n_train`.
pub fn shuffled_split(data: &Array2<f64>, n_train: usize, seed: u64) -> Result<Split> {
    if n_train == 0 || n_train >= data.nrows() {
        return Err(Error::InvalidConfig(format!(
            "cannot split {} rows with {n_train} for training",
            data.nrows()
        )));
    }
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        train: data.select(Axis(0), &order[..n_train]),
        test: data.select(Axis(0), &order[n_train..]),
    })
}

/// The desk MNIST subset: 5000 images from `dir`, shuffled, 4096 for training
/// and the remaining 904 for testing.
pub fn desk_mnist(dir: impl AsRef<Path>) -> Result<Split> {
    let data = read_idx_images(dir.as_ref().join(MNIST_IMAGES))?;
    shuffled_split(&data, MNIST_TRAIN, MNIST_SPLIT_SEED)
}

/// Points on a noisy circle in the unit square, rendered as blurred dots on a
/// `side × side` pixel grid (row-major), so the data has a one-dimensional
/// latent structure embedded in `side²` pixels.
pub fn ring(n: usize, side: usize, seed: u64) -> Array2<f64> {
    const RADIUS: f64 = 0.3;
    const RADIAL_SD: f64 = 0.02;
    const BLUR: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inv_two_w2 = 0.5 / (BLUR * BLUR);
    let mut data = Array2::zeros((n, side * side));
    for mut row in data.outer_iter_mut() {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let e: f64 = rng.sample(StandardNormal);
        let r = RADIUS + RADIAL_SD * e;
        let (px, py) = (0.5 + r * theta.cos(), 0.5 + r * theta.sin());
        for i in 0..side {
            let cy = (i as f64 + 0.5) / side as f64;
            for j in 0..side {
                let cx = (j as f64 + 0.5) / side as f64;
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                row[i * side + j] = (-d2 * inv_two_w2).exp();
            }
        }
    }
    data
}

pub fn ring_split(n_train: usize, n_test: usize, side: usize, seed: u64) -> Split {
    Split {
        train: ring(n_train, side, seed),
        test: ring(n_test, side, seed.wrapping_add(1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gjsd_round_trip() {
        let data = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 / 16.0);
        let mut buf = Vec::new();
        write_gjsd(&mut buf, &data).unwrap();
        assert_eq!(&buf[..4], b"GJSD");
        assert_eq!(buf.len(), 12 + 15 * 4);
        assert_eq!(read_gjsd(&buf[..]).unwrap(), data);
    }

    #[test]
    fn gjsd_rejects_bad_input() {
        let bad = Array2::from_elem((1, 1), 1.5);
        assert!(write_gjsd(Vec::new(), &bad).is_err());
        assert!(read_gjsd(&b"NOPE\0\0\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn ring_rows_are_in_unit_range() {
        let r = ring(50, 8, 3);
        assert_eq!(r.dim(), (50, 64));
        assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(r, ring(50, 8, 3));
    }

    #[test]
    fn split_is_a_permutation() {
        let data = Array2::from_shape_fn((10, 1), |(i, _)| i as f64 / 10.0);
        let s = shuffled_split(&data, 7, 1).unwrap();
        let mut all: Vec<f64> = s.train.iter().chain(s.test.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, data.iter().copied().collect::<Vec<_>>());
    }
}
