//! Small dense helpers on `&[f64]` vectors and row-major matrices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        (0..n).for_each(|i| m.data[i * n + i] = 1.0);
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    /// `self += alpha * a b^T`
    pub fn add_outer(&mut self, alpha: f64, a: &[f64], b: &[f64]) {
        for i in 0..self.n {
            let ai = alpha * a[i];
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            row.iter_mut().zip(b).for_each(|(r, bj)| *r += ai * bj);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Mat) {
        self.data.iter_mut().zip(&other.data).for_each(|(x, y)| *x += alpha * y);
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(&self.data[i * self.n..(i + 1) * self.n], v)).collect()
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    /// Spectral norm via power iteration on `A^T A`.
    pub fn op_norm(&self) -> f64 {
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let ata = self.transpose().matmul(self);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = ata.matvec(&v);
            let nw = norm(&w);
            if nw == 0.0 {
                return 0.0;
            }
            let next = nw / norm(&v);
            v = w.into_iter().map(|x| x / nw).collect();
            if (next - lambda).abs() <= 1e-14 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi).
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = self.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a.get(i, j).powi(2))
                .sum();
            if off.sqrt() <= 1e-15 * a.frobenius().max(f64::MIN_POSITIVE) {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a.get(p, q);
                    if apq == 0.0 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..n {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
        eig.sort_by(|x, y| x.total_cmp(y));
        eig
    }
}
