use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// A rank-0 tensor (empty shape) holds exactly one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Left-pads `small` with ones to `rank` and checks it broadcasts to `big`.
fn aligned(op: &'static str, small: &[usize], big: &[usize]) -> Result<Vec<usize>> {
    if small.len() > big.len() {
        return Err(Error::shape(op, small, big));
    }
    let mut padded = vec![1; big.len() - small.len()];
    padded.extend_from_slice(small);
    for (s, b) in padded.iter().zip(big) {
        if *s != 1 && s != b {
            return Err(Error::shape(op, small, big));
        }
    }
    Ok(padded)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Numpy-style broadcast (trailing alignment, size-1 axes expand).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let src = aligned("broadcast_to", &self.shape, shape)?;
        if src == shape {
            return Ok(Tensor {
                shape: shape.to_vec(),
                data: self.data.clone(),
            });
        }
        let src_strides = strides(&src);
        let eff: Vec<usize> = src
            .iter()
            .zip(&src_strides)
            .map(|(&d, &s)| if d == 1 { 0 } else { s })
            .collect();
        let n = numel(shape);
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        let mut offset = 0usize;
        for _ in 0..n {
            out.push(self.data[offset]);
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                offset += eff[ax];
                if idx[ax] < shape[ax] {
                    break;
                }
                offset -= eff[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
        })
    }

    /// Adjoint of [`Tensor::broadcast_to`]: sums over broadcast axes.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        let dst = aligned("sum_to", shape, &self.shape)?;
        if dst == self.shape {
            return Ok(Tensor {
                shape: shape.to_vec(),
                data: self.data.clone(),
            });
        }
        let dst_strides = strides(&dst);
        let eff: Vec<usize> = dst
            .iter()
            .zip(&dst_strides)
            .map(|(&d, &s)| if d == 1 { 0 } else { s })
            .collect();
        let mut out = vec![0.0; numel(shape)];
        let mut idx = vec![0usize; self.shape.len()];
        let mut offset = 0usize;
        for &v in &self.data {
            out[offset] += v;
            for ax in (0..self.shape.len()).rev() {
                idx[ax] += 1;
                offset += eff[ax];
                if idx[ax] < self.shape[ax] {
                    break;
                }
                offset -= eff[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: out,
        })
    }
}
