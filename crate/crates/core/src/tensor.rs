//! Dense channels-first tensors and the convolution/deconvolution layer
//! descriptions built on them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense rank-3 (`C x H x W`) or rank-4 (`O x C x k x k`) array in row-major
/// order. Images, feature maps, kernels and gradients all use this one type.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(
            shape.len() == 3 || shape.len() == 4,
            "tensors are rank 3 or 4, got rank {}",
            shape.len()
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if shape.len() != 3 && shape.len() != 4 {
            return Err(Error::invalid(format!(
                "tensors are rank 3 or 4, got rank {}",
                shape.len()
            )));
        }
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Single-channel plane from row-major data.
    pub fn plane(h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(&[1, h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.as_f64()))
    }

    /// Channel count for rank-3, leading dim otherwise.
    pub fn dim0(&self) -> usize {
        self.shape[0]
    }

    /// Spatial dims `(H, W)` of a rank-3 tensor.
    pub fn hw(&self) -> (usize, usize) {
        debug_assert_eq!(self.rank(), 3);
        (self.shape[1], self.shape[2])
    }

    /// Row-major slice of one channel of a rank-3 tensor.
    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.shape[1] * self.shape[2];
        &self.data[c * hw..(c + 1) * hw]
    }

    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let hw = self.shape[1] * self.shape[2];
        &mut self.data[c * hw..(c + 1) * hw]
    }

    /// Kernel slice `[i, o]` of a rank-4 tensor, as an `k*k` row-major slice.
    #[inline]
    pub fn kernel2d(&self, a: usize, b: usize) -> &[T] {
        let (d2, d3) = (self.shape[2], self.shape[3]);
        let kk = d2 * d3;
        let off = (a * self.shape[1] + b) * kk;
        &self.data[off..off + kk]
    }

    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn at3_mut(&mut self, c: usize, y: usize, x: usize) -> &mut T {
        &mut self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn at4(&self, a: usize, b: usize, y: usize, x: usize) -> T {
        self.data[((a * self.shape[1] + b) * self.shape[2] + y) * self.shape[3] + x]
    }

    #[inline]
    pub fn at4_mut(&mut self, a: usize, b: usize, y: usize, x: usize) -> &mut T {
        &mut self.data[((a * self.shape[1] + b) * self.shape[2] + y) * self.shape[3] + x]
    }

    pub fn scaled_add(&mut self, s: T, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }
}

/// Zero-padding behaviour of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero-pad so output spatial size equals input size.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

/// A 2-D convolution layer: kernels `out x in x k x k` plus one bias per
/// output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub padding: Padding,
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvSpec<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        padding: Padding,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 {
            return Err(Error::invalid("conv dimensions must be positive"));
        }
        if kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv kernel size must be odd, got {kernel_size}"
            )));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            padding,
            kernels: Tensor::zeros(&[out_channels, in_channels, kernel_size, kernel_size]),
            bias: vec![T::zero(); out_channels],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let want = [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ];
        if self.kernels.shape() != want {
            return Err(Error::invalid(format!(
                "conv kernels shape {:?} does not match spec {:?}",
                self.kernels.shape(),
                want
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::invalid(format!(
                "conv bias length {} does not match {} output channels",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }
}

/// A strided transposed-convolution (deconvolution) layer: kernels
/// `in x out x n x n`, stride equal to the upscaling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvSpec<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub kernels: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DeconvSpec<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 {
            return Err(Error::invalid("deconv dimensions must be positive"));
        }
        // When upscaling, the kernel must reach past the neighbouring source
        // pixel on the HR grid, so it needs at least two stride intervals.
        // Stride 1 degenerates to an ordinary convolution and has no floor.
        if stride >= 2 && kernel_size < 2 * stride {
            return Err(Error::invalid(format!(
                "deconv kernel size {kernel_size} must be at least 2*stride = {}",
                2 * stride
            )));
        }
        Ok(DeconvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            kernels: Tensor::zeros(&[in_channels, out_channels, kernel_size, kernel_size]),
            bias: vec![T::zero(); out_channels],
        })
    }

    /// Default kernel width for an upscaling factor: 8, 11 and 16 for
    /// scales 2, 3 and 4.
    pub fn default_kernel_size(scale: usize) -> Result<usize> {
        match scale {
            2 => Ok(8),
            3 => Ok(11),
            4 => Ok(16),
            s => Err(Error::UnsupportedScale(s as u8)),
        }
    }

    /// Rows/cols cropped from the top/left of the raw stride-`s` scatter.
    /// The raw scatter of an `h`-row input spans `s*h + n - s` rows; we keep
    /// exactly `s*h`, dropping `ceil((n-s)/2)` at the top/left.
    pub fn crop_before(&self) -> usize {
        (self.kernel_size - self.stride).div_ceil(2)
    }

    /// Kernel tap that lands on the source pixel itself: an input pixel `i`
    /// contributes its anchor-tap weight to output pixel `s*i + floor((s-1)/2)`.
    pub fn anchor(&self) -> usize {
        self.crop_before() + (self.stride - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        let want = [
            self.in_channels,
            self.out_channels,
            self.kernel_size,
            self.kernel_size,
        ];
        if self.kernels.shape() != want {
            return Err(Error::invalid(format!(
                "deconv kernels shape {:?} does not match spec {:?}",
                self.kernels.shape(),
                want
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::invalid(format!(
                "deconv bias length {} does not match {} output channels",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }
}
