use crate::error::shape_err;
use crate::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Checked constructor: every dimension positive, `product(shape) == data.len()`,
    /// and every value finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value {} at index {pos}", data[pos])));
        }
        Ok(Self { shape, data })
    }

    /// Skips the finiteness scan; shapes are still checked.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape, self.data.len())?;
        Ok(Self { shape, data: self.data })
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {i} out of bounds for dimension {d}");
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// Rows `[start, start+count)` along the leading dimension.
    pub fn slice_outer(&self, start: usize, count: usize) -> Result<Self> {
        let outer = *self.shape.first().ok_or_else(|| shape_err("cannot slice a rank-0 tensor"))?;
        if count == 0 || start + count > outer {
            return Err(shape_err(format!("slice {start}..{} of {outer}", start + count)));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Self::from_parts(shape, self.data[start * inner..(start + count) * inner].to_vec()))
    }

    /// Gathers rows along the leading dimension.
    pub fn gather_outer(&self, indices: &[usize]) -> Result<Self> {
        let outer = *self.shape.first().ok_or_else(|| shape_err("cannot gather from a rank-0 tensor"))?;
        if indices.is_empty() {
            return Err(shape_err("empty gather"));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= outer {
                return Err(shape_err(format!("row {i} out of bounds for {outer}")));
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self::from_parts(shape, data))
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(shape_err(format!("dimensions must be positive, got {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(shape_err(format!("shape {shape:?} needs {n} values, got {len}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 4]).is_ok());
        assert!(matches!(Tensor::new(vec![2, 2], vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![0], vec![]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![1], vec![f64::NAN]), Err(Error::InvalidInput(_))));
        assert!(matches!(Tensor::new(vec![1], vec![f64::INFINITY]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn indexing_and_slicing() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(t.slice_outer(1, 1).unwrap().data(), &[3.0, 4.0, 5.0]);
        assert_eq!(t.gather_outer(&[1, 0, 1]).unwrap().shape(), &[3, 3]);
        assert!(t.gather_outer(&[2]).is_err());
        assert_eq!(t.reshape(vec![3, 2]).unwrap().shape(), &[3, 2]);
    }
}
