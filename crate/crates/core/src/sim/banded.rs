//! Symmetric banded matrices and an LDLᵀ factorization without pivoting.
//!
//! Mesh nodes are numbered in grid order, so stiffness matrices have a
//! bandwidth of about one grid slab and factor in `O(n * bw^2)`.

use super::SimError;

/// Lower band of a symmetric matrix: entry `(i, j)` with `j <= i <= j + bw`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + self.bw + j - i
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to the symmetric pair `(i, j)`, `(j, i)`. Entries above the
    /// diagonal are folded onto their mirror, so add each pair once.
    ///
    /// # Panics
    /// If `(i, j)` lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn add_diagonal(&mut self, diag: &[f64], scale: f64) {
        for (i, d) in diag.iter().enumerate() {
            let k = self.idx(i, i);
            self.data[k] += scale * d;
        }
    }

    /// `self += scale * other` for matrices of equal shape.
    pub fn add_scaled(&mut self, other: &BandedMatrix, scale: f64) {
        assert_eq!((self.n, self.bw), (other.n, other.bw));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = row[self.bw] * x[i];
            for j in lo..i {
                let v = row[self.bw + j - i];
                acc += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// In-place LDLᵀ factorization.
    pub fn factor(mut self) -> Result<Ldlt, SimError> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut d = vec![0.0; n];
        // Row-major band storage: data[i*w + bw + j - i] = L(i, j) once done.
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..i {
                // L(i,j) = (A(i,j) - sum_k L(i,k) L(j,k) d_k) / d_j
                let klo = lo.max(j.saturating_sub(bw));
                let mut acc = self.data[i * w + bw + j - i];
                for k in klo..j {
                    acc -= self.data[i * w + bw + k - i] * self.data[j * w + bw + k - j] * d[k];
                }
                self.data[i * w + bw + j - i] = acc / d[j];
            }
            let mut acc = self.data[i * w + bw];
            for k in lo..i {
                let l = self.data[i * w + bw + k - i];
                acc -= l * l * d[k];
            }
            if !(acc.is_finite() && acc.abs() > 1e-300) {
                return Err(SimError::SingularSystem { row: i, pivot: acc });
            }
            d[i] = acc;
            self.data[i * w + bw] = 1.0;
        }
        Ok(Ldlt { m: self, d })
    }
}

#[derive(Debug, Clone)]
pub struct Ldlt {
    m: BandedMatrix,
    d: Vec<f64>,
}

impl Ldlt {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.m.n, self.m.bw);
        let w = bw + 1;
        let data = &self.m.data;
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut acc = x[i];
            for k in lo..i {
                acc -= data[i * w + bw + k - i] * x[k];
            }
            x[i] = acc;
        }
        for i in 0..n {
            x[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                x[k] -= data[i * w + bw + k - i] * xi;
            }
        }
        x
    }

    /// Number of negative pivots, i.e. negative eigenvalues of the matrix.
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }
}
