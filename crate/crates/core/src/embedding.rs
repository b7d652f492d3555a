//! User-shared lookup tables and mean pooling over bags of ids.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Param, Prng};

/// A `Q x D` table: one learnable row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Param,
}

impl EmbeddingTable {
    /// Rows drawn uniformly from `[-0.5/D, 0.5/D]`.
    pub fn new(rows: usize, dim: usize, rng: &mut Prng) -> Self {
        EmbeddingTable {
            table: Param::new(Matrix::uniform(rows, dim, 0.5 / dim as f64, rng)),
        }
    }

    pub fn from_matrix(m: Matrix) -> Self {
        EmbeddingTable { table: Param::new(m) }
    }

    pub fn rows(&self) -> usize {
        self.table.value.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.value.cols()
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.rows() {
            return Err(Error::IndexOutOfRange {
                index: id,
                len: self.rows(),
            });
        }
        Ok(())
    }

    pub fn lookup(&self, id: usize) -> Result<&[f64]> {
        self.check(id)?;
        Ok(self.table.value.row(id))
    }

    /// Mean of the referenced rows; the zero vector for an empty bag.
    ///
    /// Rows are summed in ascending id order, so any permutation of `ids`
    /// yields a bit-identical result.
    pub fn mean_pool(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        if ids.is_empty() {
            return Ok(out);
        }
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        for &id in &sorted {
            for (o, v) in out.iter_mut().zip(self.lookup(id)?) {
                *o += v;
            }
        }
        let m = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= m);
        Ok(out)
    }

    /// Adds `upstream / len(ids)` to the gradient row of every referenced id,
    /// once per occurrence.
    pub fn mean_pool_backward(&mut self, ids: &[usize], upstream: &[f64]) -> Result<()> {
        if upstream.len() != self.dim() {
            return Err(Error::shape(
                format!("gradient of length {}", self.dim()),
                upstream.len(),
            ));
        }
        if ids.is_empty() {
            return Ok(());
        }
        for &id in ids {
            self.check(id)?;
        }
        let m = ids.len() as f64;
        for &id in ids {
            for (g, u) in self.table.grad.row_mut(id).iter_mut().zip(upstream) {
                *g += u / m;
            }
        }
        Ok(())
    }
}
