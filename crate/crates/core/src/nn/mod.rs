//! Minimal CPU neural-network kernels with hand-written backward passes.
//!
//! Activations are single-sample `C x H x W` tensors; all learnable values
//! live in one flat [`ParamStore`] so optimizers and checkpoints can treat
//! them as a single vector.

mod layers;
mod optim;
mod params;

pub use layers::{
    conv1x1_backward, conv1x1_forward, lrelu_backward, lrelu_inplace, maxpool2_backward, maxpool2_forward,
    upsample2_backward, upsample2_forward, Conv3x3, ConvCache, Linear, LinearCache, LRELU_SLOPE,
};
pub use optim::{Adam, AdamState};
pub use params::{ParamId, ParamInfo, ParamStore};

/// Dense activation tensor, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    /// Stacks `a` over `b` along the channel axis.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.height, a.width), (b.height, b.width), "concat spatial shape");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor::from_vec(a.channels + b.channels, a.height, a.width, data)
    }

    /// Inverse of [`Tensor::concat`] for gradients.
    pub fn split(self, first_channels: usize) -> (Tensor, Tensor) {
        let p = self.plane();
        let mut data = self.data;
        let rest = data.split_off(first_channels * p);
        (
            Tensor::from_vec(first_channels, self.height, self.width, data),
            Tensor::from_vec(self.channels - first_channels, self.height, self.width, rest),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, with either
/// operand optionally transposed in place.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked above and the strides describe
    // row-major (or transposed row-major) matrices inside those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
