//! Dense row-major tensors and convolution kernels.

use std::fmt;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` values in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting mismatched lengths, zero extents and non-finite values.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} hold {count} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new".into()));
        }
        Ok(Tensor { dims, data })
    }

    /// Internal constructor for op outputs whose shape is correct by construction.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { dims: vec![1], data: vec![value] }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = dims.iter().product();
        Tensor { dims: dims.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.dims == other.dims
    }

    /// Interprets the tensor as `[C, H, W]`; lower-rank tensors are padded with leading ones.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            [h, w] => Ok((1, *h, *w)),
            other => Err(Error::Shape(format!("expected [C,H,W], got {other:?}"))),
        }
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {index:?} out of bounds for {:?}", self.dims);
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(self, dims: &[usize]) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {dims:?}", self.dims)));
        }
        Ok(Tensor { dims: dims.to_vec(), data: self.data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { dims: self.dims.clone(), data })
    }

    /// Adds `other * scale` in place.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Channel `c` of a `[C, H, W]` tensor as a flat slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let (_, h, w) = self.chw().expect("channel() on non-CHW tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.dims)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.4}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// Weights `[out, in, kh, kw]` and an optional per-output-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvKernel {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Result<Self> {
        let [out, _, kh, kw] = weight.dims() else {
            return Err(Error::Shape(format!("kernel weight must be 4-D, got {:?}", weight.dims())));
        };
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::EvenKernel(*kh, *kw));
        }
        if let Some(b) = &bias {
            if b.len() != *out {
                return Err(Error::Shape(format!("bias has {} values for {out} outputs", b.len())));
            }
        }
        Ok(ConvKernel { weight, bias })
    }

    pub fn zeros(out: usize, input: usize, kh: usize, kw: usize, with_bias: bool) -> Result<Self> {
        let bias = with_bias.then(|| Tensor::zeros(&[out]));
        Self::new(Tensor::zeros(&[out, input, kh, kw]), bias)
    }

    /// `1x1` kernel mapping each channel onto itself.
    pub fn identity(channels: usize) -> Self {
        let mut w = Tensor::zeros(&[channels, channels, 1, 1]);
        for c in 0..channels {
            w.set(&[c, c, 0, 0], 1.0);
        }
        ConvKernel { weight: w, bias: None }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn kernel_height(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn kernel_width(&self) -> usize {
        self.weight.dims()[3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(&[1, 0]), 3.0);
        assert_eq!(t.get(&[0, 2]), 2.0);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(matches!(ConvKernel::zeros(1, 1, 2, 3, false), Err(Error::EvenKernel(2, 3))));
        assert!(ConvKernel::zeros(1, 1, 3, 5, true).is_ok());
    }
}
