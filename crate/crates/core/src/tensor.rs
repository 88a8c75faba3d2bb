//! Dense rank-≤4 double-precision arrays with an optional gradient buffer.

use crate::error::{Error, Result};

/// Row-major dense tensor. Four-dimensional ops read the dims as
/// (batch, channels, height, width), padding missing leading axes with 1.
/// A zero-sized axis is allowed and yields an empty tensor, which is the
/// neutral element of channel concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        check_dims(dims).expect("invalid tensor dims");
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Input(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Dims as (n, c, h, w), left-padded with ones.
    pub fn nchw(&self) -> (usize, usize, usize, usize) {
        let mut d = [1usize; 4];
        let off = 4 - self.dims.len();
        d[off..].copy_from_slice(&self.dims);
        (d[0], d[1], d[2], d[3])
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    /// Adds `g` into the gradient buffer.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        for (acc, v) in self.grad_mut().iter_mut().zip(g) {
            *acc += v;
        }
    }

    /// Same data viewed with new dims of equal element count.
    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::Input(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims.to_vec();
        self.grad = None;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element at (n, c, y, x) of a rank-4 view.
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let (_, cc, h, w) = self.nchw();
        self.data[((n * cc + c) * h + y) * w + x]
    }

    /// One batch item as its own rank-4 tensor.
    pub fn batch_item(&self, n: usize) -> Tensor {
        let (_, c, h, w) = self.nchw();
        let len = c * h * w;
        Tensor {
            dims: vec![1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
            grad: None,
        }
    }

    /// Stacks equally-shaped rank-4 tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("cannot stack zero tensors".into()))?;
        let (_, c, h, w) = first.nchw();
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for t in items {
            let (tn, tc, th, tw) = t.nchw();
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::Input(format!(
                    "cannot stack {:?} with {:?}",
                    t.dims, first.dims
                )));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[n, c, h, w], data)
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::Input(format!(
            "tensor rank must be 1..=4, got {}",
            dims.len()
        )));
    }
    Ok(())
}
