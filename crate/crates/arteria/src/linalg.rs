//! Small dense LU with partial pivoting for the junction systems.

/// LU factorization of a row-major n x n matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    det: f64,
}

impl Lu {
    /// Factor `a` (row-major, length n*n). Returns None on exact singularity.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Option<Lu> {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut det = 1.0;
        for col in 0..n {
            let mut pivot = col;
            let mut best = a[col * n + col].abs();
            for row in col + 1..n {
                let v = a[row * n + col].abs();
                if v > best {
                    best = v;
                    pivot = row;
                }
            }
            if best == 0.0 {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot * n + j);
                }
                perm.swap(col, pivot);
                det = -det;
            }
            let d = a[col * n + col];
            det *= d;
            for row in col + 1..n {
                let m = a[row * n + col] / d;
                a[row * n + col] = m;
                for j in col + 1..n {
                    a[row * n + j] -= m * a[col * n + j];
                }
            }
        }
        Some(Lu {
            n,
            lu: a,
            perm,
            det,
        })
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    #[allow(clippy::needless_range_loop)] // substitution mutates x in place
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }

    /// Infinity-norm condition number, computed exactly from the inverse;
    /// the junction systems are tiny so this is cheap.
    pub fn cond_inf(&self, a: &[f64]) -> f64 {
        let n = self.n;
        let norm_a = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut norm_inv: f64 = 0.0;
        let mut inv_rows = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for col in 0..n {
            e[col] = 1.0;
            let x = self.solve(&e);
            e[col] = 0.0;
            for row in 0..n {
                inv_rows[row * n + col] = x[row];
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).map(|j| inv_rows[i * n + j].abs()).sum();
            norm_inv = norm_inv.max(s);
        }
        norm_a * norm_inv
    }
}
