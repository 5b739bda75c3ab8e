use std::fmt;

use super::DiffError;

/// Highest rank any tensor in the crate needs (batch x set x feature).
pub const MAX_RANK: usize = 3;

/// Extents of a dense row-major tensor. Rank 0 is a scalar.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self, DiffError> {
        if dims.len() > MAX_RANK {
            return Err(DiffError::RankTooHigh(dims.len()));
        }
        if dims.contains(&0) {
            return Err(DiffError::ZeroExtent(dims.to_vec()));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last(&self) -> usize {
        self.0.last().copied().unwrap_or(1)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Dense tensor of 64-bit reals.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self, DiffError> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(DiffError::DataLength {
                expected: shape.numel(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite("tensor construction"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Result<Self, DiffError> {
        Tensor::new(&[], vec![v])
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, DiffError> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Ok(Tensor { shape, data: vec![0.0; n] })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, DiffError> {
        let n = data.len();
        Tensor::new(&[n], data)
    }

    /// Internal constructor for values already known to satisfy the invariants.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizers and test perturbations. Callers are
    /// responsible for keeping values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Row `i` of a rank-2 tensor (or the whole of a rank-1 tensor).
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape.last();
        &self.data[i * w..(i + 1) * w]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_extents() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(matches!(
            Tensor::vector(vec![1.0, f64::NAN]),
            Err(DiffError::NonFinite(_))
        ));
        assert!(Tensor::zeros(&[1, 1, 1, 1]).is_err());
        assert!(Tensor::zeros(&[3, 0]).is_err());
    }

    #[test]
    fn scalar_has_rank_zero() {
        let s = Tensor::scalar(2.5).unwrap();
        assert_eq!(s.shape().rank(), 0);
        assert_eq!(s.item(), 2.5);
    }
}
