use rand::Rng;
use serde::{Deserialize, Serialize};

use super::NumError;

/// Row-major dense matrix. Column vectors (biases) are `cols == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        if data.len() != rows * cols {
            return Err(NumError::Shape {
                op: "Mat::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `y = self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `y += self · x`
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, yr) in y.iter_mut().enumerate() {
            *yr += dot(self.row(r), x);
        }
    }

    /// `y += selfᵀ · g`
    pub fn matvec_t_acc(&self, g: &[f64], y: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (yc, &w) in y.iter_mut().zip(self.row(r)) {
                *yc += gr * w;
            }
        }
    }

    pub fn matvec_t(&self, g: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        self.matvec_t_acc(g, &mut y);
        y
    }

    /// `self += a ⊗ b`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let row = &mut self.data[r * cols..(r + 1) * cols];
            for (w, &bc) in row.iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn check_finite(&self, what: &'static str) -> Result<(), NumError> {
        check_finite(&self.data, what)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn check_finite(xs: &[f64], what: &'static str) -> Result<(), NumError> {
    match xs.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(index) => Err(NumError::NonFinite { what, index }),
    }
}

pub fn require_len(op: &'static str, xs: &[f64], expected: usize) -> Result<(), NumError> {
    if xs.len() != expected {
        return Err(NumError::Shape {
            op,
            expected,
            got: xs.len(),
        });
    }
    Ok(())
}

/// Named matrices that make up a trainable model, in a fixed order.
///
/// Flattening follows that order, which is also the order of the shape
/// table in serialized model files.
pub trait ParamSet {
    fn blocks(&self) -> Vec<(&'static str, &Mat)>;
    fn blocks_mut(&mut self) -> Vec<&mut Mat>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, m) in self.blocks() {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NumError> {
        let n = self.num_params();
        require_len("ParamSet::assign_flat", flat, n)?;
        let mut offset = 0;
        for m in self.blocks_mut() {
            let len = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Shape table: `(name, rows, cols)` per block.
    fn shape_table(&self) -> Vec<(String, usize, usize)> {
        self.blocks()
            .into_iter()
            .map(|(name, m)| (name.to_string(), m.rows(), m.cols()))
            .collect()
    }

    /// Start offset of every block within the flat vector.
    fn block_offsets(&self) -> Vec<(&'static str, usize, usize)> {
        let mut offset = 0;
        self.blocks()
            .into_iter()
            .map(|(name, m)| {
                let start = offset;
                offset += m.len();
                (name, start, m.len())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_loops() {
        let m = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Mat::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn non_finite_is_reported_with_index() {
        let err = check_finite(&[0.0, f64::NAN], "x").unwrap_err();
        assert!(matches!(err, NumError::NonFinite { index: 1, .. }));
    }
}
