//! Square banded matrices with symmetric bandwidth and an in-place LU
//! factorization without pivoting.
//!
//! The Newton systems `I + dt·A·D` assembled by the solver are strictly
//! column diagonally dominant, for which elimination without pivoting is
//! stable.

#[derive(Clone, Debug)]
pub struct BandedMatrix {
    size: usize,
    band: usize,
    // Row-major, row i holds columns i-band ..= i+band.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(size: usize, band: usize) -> Self {
        Self { size, band, data: vec![0.0; size * (2 * band + 1)] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.band);
        i * (2 * self.band + 1) + (j + self.band - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.band {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.size)
            .map(|i| {
                let lo = i.saturating_sub(self.band);
                let hi = (i + self.band).min(self.size - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Factorizes in place and solves `M x = rhs`. Returns `None` on a zero pivot.
    pub fn solve_in_place(mut self, rhs: &mut [f64]) -> Option<()> {
        let n = self.size;
        let b = self.band;
        for k in 0..n {
            let pivot = self.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            let last = (k + b).min(n - 1);
            for i in (k + 1)..=last {
                let factor = self.get(i, k) / pivot;
                if factor == 0.0 {
                    continue;
                }
                self.set(i, k, factor);
                for j in (k + 1)..=last {
                    let v = self.get(k, j);
                    if v != 0.0 {
                        self.add(i, j, -factor * v);
                    }
                }
                rhs[i] -= factor * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let last = (k + b).min(n - 1);
            let mut acc = rhs[k];
            for j in (k + 1)..=last {
                acc -= self.get(k, j) * rhs[j];
            }
            rhs[k] = acc / self.get(k, k);
        }
        Some(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal() {
        let n = 6;
        let mut m = BandedMatrix::zeros(n, 1);
        for i in 0..n {
            m.set(i, i, 4.0);
            if i > 0 {
                m.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                m.set(i, i + 1, -2.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut rhs = m.mul_vec(&x_true);
        m.solve_in_place(&mut rhs).unwrap();
        for (a, b) in rhs.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn solves_wide_band() {
        let n = 9;
        let b = 3;
        let mut m = BandedMatrix::zeros(n, b);
        for i in 0..n {
            m.set(i, i, 10.0 + i as f64);
            for d in 1..=b {
                if i >= d {
                    m.set(i, i - d, -1.0 / d as f64);
                }
                if i + d < n {
                    m.set(i, i + d, -0.5 * d as f64);
                }
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut rhs = m.mul_vec(&x_true);
        m.solve_in_place(&mut rhs).unwrap();
        for (a, b) in rhs.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
