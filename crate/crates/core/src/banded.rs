//! Banded LU factorization with partial pivoting.

use crate::error::{LlvgError, Result};

/// Square band matrix with `kl` sub-diagonals and `ku` super-diagonals.
///
/// Each row keeps a window of `2*kl + ku + 1` entries starting at column
/// `row - kl`, wide enough to absorb the fill-in caused by row interchanges.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let start = row as isize - self.kl as isize;
        let offset = col as isize - start;
        if offset < 0 || offset >= self.width as isize || col >= self.n {
            None
        } else {
            Some(row * self.width + offset as usize)
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |k| self.data[k])
    }

    /// Sets an entry; panics if it falls outside the declared band.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            col + self.kl >= row && col <= row + self.ku,
            "entry ({row}, {col}) outside band"
        );
        let k = self.slot(row, col).expect("entry outside storage window");
        self.data[k] = value;
    }

    fn put(&mut self, row: usize, col: usize, value: f64) {
        if let Some(k) = self.slot(row, col) {
            self.data[k] = value;
        } else {
            debug_assert!(value == 0.0, "fill-in outside storage window");
        }
    }

    /// Solves `A x = b` in place, destroying the matrix.
    pub fn solve(mut self, b: &mut [f64]) -> Result<()> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let (kl, ku) = (self.kl, self.ku);
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut pivot = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if !(best > scale * 1e-300) || !best.is_finite() {
                return Err(LlvgError::Singular(format!("zero pivot in column {k}")));
            }
            let col_end = (k + kl + ku).min(n - 1);
            if pivot != k {
                for c in k..=col_end {
                    let a = self.get(k, c);
                    let p = self.get(pivot, c);
                    self.put(k, c, p);
                    self.put(pivot, c, a);
                }
                b.swap(k, pivot);
            }
            let diag = self.get(k, k);
            for r in k + 1..=last {
                let factor = self.get(r, k) / diag;
                if factor == 0.0 {
                    continue;
                }
                self.put(r, k, 0.0);
                for c in k + 1..=col_end {
                    let v = self.get(r, c) - factor * self.get(k, c);
                    self.put(r, c, v);
                }
                b[r] -= factor * b[k];
            }
        }
        for k in (0..n).rev() {
            let col_end = (k + kl + ku).min(n - 1);
            let mut acc = b[k];
            for c in k + 1..=col_end {
                acc -= self.get(k, c) * b[c];
            }
            b[k] = acc / self.get(k, k);
        }
        Ok(())
    }
}
