//! Cubic spline interpolation on a strictly increasing knot set.

/// Interpolating cubic spline with not-a-knot end conditions (the end cubics
/// extend across the second and second-to-last knots), which keeps full
/// fourth-order accuracy up to the boundary. Degenerates to a single
/// parabola for three points and a line for two. Extrapolates with the end
/// polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

impl CubicSpline {
    /// Backward-compatible constructor name; builds the not-a-knot spline.
    pub fn natural(xs: &[f64], ys: &[f64]) -> Result<Self, String> {
        Self::new(xs, ys)
    }

    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self, String> {
        if xs.len() != ys.len() {
            return Err("spline: xs and ys lengths differ".into());
        }
        if xs.len() < 2 {
            return Err("spline: need at least two points".into());
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(format!(
                    "spline: abscissae must be strictly increasing ({} then {})",
                    w[0], w[1]
                ));
            }
        }
        let n = xs.len();
        let mut m = vec![0.0; n];
        match n {
            2 => {}
            3 => {
                // single parabola through the three points
                let d01 = (ys[1] - ys[0]) / (xs[1] - xs[0]);
                let d12 = (ys[2] - ys[1]) / (xs[2] - xs[1]);
                let second = 2.0 * (d12 - d01) / (xs[2] - xs[0]);
                m.fill(second);
            }
            _ => {
                // Interior unknowns m[1..n-1]; not-a-knot eliminates m[0]
                // and m[n-1]:
                //   m0 = ((h0 + h1) m1 - h0 m2) / h1
                //   m_{n-1} = ((h_{n-2} + h_{n-3}) m_{n-2} - h_{n-2} m_{n-3}) / h_{n-3}
                let k = n - 2; // number of interior unknowns
                let mut sub = vec![0.0; k];
                let mut diag = vec![0.0; k];
                let mut sup = vec![0.0; k];
                let mut rhs = vec![0.0; k];
                for i in 1..n - 1 {
                    let h0 = xs[i] - xs[i - 1];
                    let h1 = xs[i + 1] - xs[i];
                    let j = i - 1;
                    sub[j] = h0;
                    diag[j] = 2.0 * (h0 + h1);
                    sup[j] = h1;
                    rhs[j] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
                }
                {
                    // fold the m0 elimination into row 0 (i = 1)
                    let h0 = xs[1] - xs[0];
                    let h1 = xs[2] - xs[1];
                    diag[0] = (h0 + h1) * (h0 + 2.0 * h1) / h1;
                    sup[0] = (h1 * h1 - h0 * h0) / h1;
                    sub[0] = 0.0;
                }
                {
                    // fold the m_{n-1} elimination into the last row (i = n-2)
                    let hm = xs[n - 1] - xs[n - 2]; // h_{n-2}
                    let hp = xs[n - 2] - xs[n - 3]; // h_{n-3}
                    let j = k - 1;
                    diag[j] = (hm + hp) * (hm + 2.0 * hp) / hp;
                    sub[j] = (hp * hp - hm * hm) / hp;
                    sup[j] = 0.0;
                }
                // Thomas algorithm
                for j in 1..k {
                    let w = sub[j] / diag[j - 1];
                    diag[j] -= w * sup[j - 1];
                    rhs[j] -= w * rhs[j - 1];
                }
                m[n - 2] = rhs[k - 1] / diag[k - 1];
                for j in (0..k - 1).rev() {
                    m[j + 1] = (rhs[j] - sup[j] * m[j + 2]) / diag[j];
                }
                let h0 = xs[1] - xs[0];
                let h1 = xs[2] - xs[1];
                m[0] = ((h0 + h1) * m[1] - h0 * m[2]) / h1;
                let hm = xs[n - 1] - xs[n - 2];
                let hp = xs[n - 2] - xs[n - 3];
                m[n - 1] = ((hm + hp) * m[n - 2] - hm * m[n - 3]) / hp;
            }
        }
        Ok(CubicSpline {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            m,
        })
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0;
        }
        if x >= self.xs[n - 1] {
            return n - 2;
        }
        self.xs.partition_point(|&xx| xx <= x) - 1
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }
}
