use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::FeatureDataset;
use crate::error::{Error, Result};

/// Every pixel feature vector of a dataset, row-major `[N, D]`, in f64.
///
/// Rows follow manifest image order, then row-major spatial order within each image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPool {
    dim: usize,
    rows: Vec<f64>,
}

impl PixelPool {
    pub fn from_dataset(ds: &FeatureDataset) -> Result<Self> {
        if ds.pixel_count() == 0 {
            return Err(Error::Empty("feature dataset has no pixels".into()));
        }
        let dim = ds.layer_dim();
        let mut rows = Vec::with_capacity(ds.pixel_count() * dim);
        for i in 0..ds.len() {
            let t = ds.load_image(i)?;
            rows.extend(t.data().iter().map(|&v| f64::from(v)));
        }
        Ok(Self { dim, rows })
    }

    pub fn from_rows(dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || !rows.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {}",
                rows.len(),
                dim
            )));
        }
        if rows.is_empty() {
            return Err(Error::Empty("pixel pool has no rows".into()));
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// The whole pool as one `[N, D]` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.rows)
    }

    /// One epoch of shuffled batches. The order depends only on `seed`.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Result<PixelBatches<'_>> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        Ok(PixelBatches {
            pool: self,
            order,
            batch_size,
            cursor: 0,
        })
    }
}

/// Iterator over `[B, D]` batches; the final batch may be short.
pub struct PixelBatches<'a> {
    pool: &'a PixelPool,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl PixelBatches<'_> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for PixelBatches<'_> {
    type Item = DMatrix<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let dim = self.pool.dim;
        Some(DMatrix::from_fn(idx.len(), dim, |r, c| {
            self.pool.rows[idx[r] * dim + c]
        }))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.cursor).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

/// Loads every pixel of `ds` and returns the batches of one epoch.
pub fn iterate_pixel_batches(
    ds: &FeatureDataset,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    let pool = PixelPool::from_dataset(ds)?;
    Ok(pool.batches(batch_size, seed)?.collect())
}
