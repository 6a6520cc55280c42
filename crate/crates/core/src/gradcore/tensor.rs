use super::kernels;
use super::GradError;

/// Dense row-major tensor of `f64` values.
///
/// Rank-2 tensors double as the matrix type used throughout the crate
/// (feature matrices, response matrices, ridge coefficients).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GradError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(GradError::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(GradError::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a matrix; panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { shape: vec![rows, cols], data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::matrix(r, c, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[1]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, GradError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(GradError::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    fn expect_matrix(&self, what: &str) -> Result<(usize, usize), GradError> {
        if self.is_matrix() {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(GradError::Shape(format!("{what}: expected a matrix, got shape {:?}", self.shape)))
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, GradError> {
        let (m, k) = self.expect_matrix("matmul lhs")?;
        let (k2, n) = other.expect_matrix("matmul rhs")?;
        if k != k2 {
            return Err(GradError::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        Ok(Tensor::matrix(m, n, kernels::matmul_nn(&self.data, &other.data, m, k, n)))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor, GradError> {
        let (m, k) = self.expect_matrix("matmul_t lhs")?;
        let (n, k2) = other.expect_matrix("matmul_t rhs")?;
        if k != k2 {
            return Err(GradError::Shape(format!("matmul_t {m}x{k} by ({n}x{k2})ᵀ")));
        }
        Ok(Tensor::matrix(m, n, kernels::matmul_nt(&self.data, &other.data, m, k, n)))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor, GradError> {
        let (k, m) = self.expect_matrix("t_matmul lhs")?;
        let (k2, n) = other.expect_matrix("t_matmul rhs")?;
        if k != k2 {
            return Err(GradError::Shape(format!("t_matmul ({k}x{m})ᵀ by {k2}x{n}")));
        }
        Ok(Tensor::matrix(m, n, kernels::matmul_tn(&self.data, &other.data, k, m, n)))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, GradError> {
        if self.shape != other.shape {
            return Err(GradError::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|x| x * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Selects rows by index.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        Tensor::matrix(idx.len(), c, out)
    }

    /// Selects columns by index.
    pub fn select_cols(&self, idx: &[usize]) -> Tensor {
        let r = self.rows();
        let mut out = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            let row = self.row(i);
            out.extend(idx.iter().map(|&j| row[j]));
        }
        Tensor::matrix(r, idx.len(), out)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor, GradError> {
        let c = parts.first().map(|t| t.cols()).ok_or_else(|| GradError::Shape("vstack of nothing".into()))?;
        let mut data = Vec::new();
        let mut r = 0;
        for p in parts {
            if p.cols() != c {
                return Err(GradError::Shape(format!("vstack column mismatch {} vs {c}", p.cols())));
            }
            data.extend_from_slice(&p.data);
            r += p.rows();
        }
        Ok(Tensor::matrix(r, c, data))
    }

    /// Places matrices with equal row counts side by side.
    pub fn hstack(parts: &[&Tensor]) -> Result<Tensor, GradError> {
        let r = parts.first().map(|t| t.rows()).ok_or_else(|| GradError::Shape("hstack of nothing".into()))?;
        if parts.iter().any(|p| p.rows() != r) {
            return Err(GradError::Shape("hstack row mismatch".into()));
        }
        let c: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor::matrix(r, c, data))
    }
}
