use super::AutodiffError;

/// Dense row-major `f64` array with an optional gradient buffer.
///
/// Signals are laid out as `[batch, channels, length]` and convolution
/// weights as `[out_channels, in_channels, kernel_width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AutodiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    /// Wraps a single-channel signal as `[1, 1, len]`.
    pub fn from_signal(samples: &[f64]) -> Self {
        Self {
            shape: vec![1, 1, samples.len()],
            data: samples.to_vec(),
            grad: None,
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<(), AutodiffError> {
        if g.len() != self.data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate_grad",
                left: self.shape.clone(),
                right: vec![g.len()],
            });
        }
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Sets every gradient element to zero, keeping the buffer.
    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Splits a rank-3 shape into `(batch, channels, length)`.
    pub fn dims3(&self) -> Result<(usize, usize, usize), AutodiffError> {
        match self.shape[..] {
            [b, c, l] => Ok((b, c, l)),
            _ => Err(AutodiffError::Rank {
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Copies out channel `c` of batch element `b` from a rank-3 tensor.
    pub fn channel(&self, b: usize, c: usize) -> Vec<f64> {
        let (_, ch, l) = self.dims3().expect("rank-3 tensor");
        let start = (b * ch + c) * l;
        self.data[start..start + l].to_vec()
    }
}
