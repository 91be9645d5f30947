/// Dense row-major `f64` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += x · W` for `W` stored row-major as `x.len() × y.len()`; zero
/// entries of `x` are skipped.
#[inline]
pub(crate) fn vec_mat_acc(x: &[f64], w: &[f64], y: &mut [f64]) {
    let out = y.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(xk, &w[k * out..(k + 1) * out], y);
        }
    }
}

/// `W += x ⊗ g` (outer product) for `W` stored `x.len() × g.len()`.
#[inline]
pub(crate) fn outer_acc(x: &[f64], g: &[f64], w: &mut [f64]) {
    let out = g.len();
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(xk, g, &mut w[k * out..(k + 1) * out]);
        }
    }
}

/// `y[k] += W[k, :] · g` for every input row `k`.
#[inline]
pub(crate) fn mat_vec_acc(w: &[f64], g: &[f64], y: &mut [f64]) {
    let out = g.len();
    for (k, yk) in y.iter_mut().enumerate() {
        *yk += dot(&w[k * out..(k + 1) * out], g);
    }
}
