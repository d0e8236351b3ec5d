use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// A finite cloud of equal-weight points in `R^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("point dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::domain(
                "coordinate count is not a multiple of the dimension",
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("non-finite coordinate"));
        }
        Ok(Points { dim, data })
    }

    pub fn zeros(dim: usize, n: usize) -> Self {
        Points {
            dim,
            data: alloc::vec![0.0; dim * n],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Points::new(dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Mutable access to two distinct rows at once.
    pub fn pair_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        assert!(i != j, "pair_mut needs distinct rows");
        let d = self.dim;
        if i < j {
            let (lo, hi) = self.data.split_at_mut(j * d);
            (&mut lo[i * d..(i + 1) * d], &mut hi[..d])
        } else {
            let (lo, hi) = self.data.split_at_mut(i * d);
            (&mut hi[..d], &mut lo[j * d..(j + 1) * d])
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.data
    }

    /// Reorder rows so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Points {
        let mut data = Vec::with_capacity(self.data.len());
        for &k in order {
            data.extend_from_slice(self.get(k));
        }
        Points {
            dim: self.dim,
            data,
        }
    }

    pub fn total_momentum(&self) -> Vec<f64> {
        let mut p = alloc::vec![0.0; self.dim];
        for v in self.iter() {
            for (acc, x) in p.iter_mut().zip(v) {
                *acc += x;
            }
        }
        p
    }

    /// Sum of squared speeds (twice the kinetic energy at unit mass).
    pub fn total_energy(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Mean pairing distance `(1/N) sum_i |a_i - b_i|` under the index pairing.
    pub fn mean_pair_distance(&self, other: &Points) -> f64 {
        let n = self.len().min(other.len());
        if n == 0 {
            return 0.0;
        }
        let s: f64 = (0..n)
            .map(|i| math::distance(self.get(i), other.get(i)))
            .sum();
        s / n as f64
    }
}
