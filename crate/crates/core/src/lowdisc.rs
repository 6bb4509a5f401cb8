//! Scrambled Sobol' points on the unit hypercube.

use crate::error::{Error, Result};

/// Maximum dimensionality supported by the underlying generator.
pub const MAX_DIM: usize = sobol_burley::NUM_DIMENSIONS as usize;

/// Owen-scrambled Sobol' sequence; `seed` selects the scramble.
#[derive(Debug, Clone)]
pub struct SobolStream {
    dim: usize,
    seed: u32,
}

impl SobolStream {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Config(format!("Sobol' dimension {dim} outside 1..={MAX_DIM}")));
        }
        // fold the 64-bit seed into the generator's 32-bit scramble key
        let seed = (seed ^ (seed >> 32)) as u32;
        Ok(Self { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Point `index` of the sequence, each coordinate in [0, 1).
    pub fn point(&self, index: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|d| sobol_burley::sample(index as u32, d as u32, self.seed) as f64)
            .collect()
    }

    /// First `n` points, row-major.
    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| self.point(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_in_unit_cube_and_deterministic() {
        let s = SobolStream::new(7, 42).unwrap();
        let a = s.points(64);
        let b = SobolStream::new(7, 42).unwrap().points(64);
        assert_eq!(a, b);
        for p in &a {
            assert!(p.iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }

    #[test]
    fn stratifies_first_dimension() {
        // any 2^k prefix of a (scrambled) Sobol' sequence hits every 1/2^k bin once
        let s = SobolStream::new(3, 9).unwrap();
        let mut bins = [0usize; 16];
        for p in s.points(16) {
            bins[(p[0] * 16.0) as usize] += 1;
        }
        assert!(bins.iter().all(|&b| b == 1));
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(SobolStream::new(0, 1).is_err());
        assert!(SobolStream::new(MAX_DIM + 1, 1).is_err());
    }
}
