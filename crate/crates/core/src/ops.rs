//! Hand-written forward and backward passes for the three differentiable
//! primitives: 2-D convolution (correlation), strided transposed convolution
//! and ReLU.
//!
//! All loops accumulate in a fixed order, so results are bitwise
//! reproducible. Inner loops run over contiguous row slices so the compiler
//! can vectorize them.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ConvSpec, DeconvSpec, Padding, Tensor};

fn conv_output_hw<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<(usize, usize)> {
    let (h, w) = input.hw();
    match spec.padding {
        Padding::Same => Ok((h, w)),
        Padding::Valid => {
            let k = spec.kernel_size;
            if k > h || k > w {
                return Err(Error::invalid(format!(
                    "valid conv: kernel {k} exceeds input {h}x{w}"
                )));
            }
            Ok((h - k + 1, w - k + 1))
        }
    }
}

fn check_conv_args<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<()> {
    spec.validate()?;
    if input.rank() != 3 {
        return Err(Error::invalid("conv input must be rank 3 (C x H x W)"));
    }
    if input.dim0() != spec.in_channels {
        return Err(Error::invalid(format!(
            "conv input has {} channels, spec expects {}",
            input.dim0(),
            spec.in_channels
        )));
    }
    Ok(())
}

/// 2-D correlation with per-output-channel bias.
///
/// `out[o,y,x] = bias[o] + sum_{c,dy,dx} in[c, y+dy-pad, x+dx-pad] * K[o,c,dy,dx]`
/// with zero padding outside the input in `Same` mode.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>> {
    check_conv_args(input, spec)?;
    let (h, w) = input.hw();
    let (oh, ow) = conv_output_hw(input, spec)?;
    let k = spec.kernel_size;
    let pad = match spec.padding {
        Padding::Same => k / 2,
        Padding::Valid => 0,
    };

    let mut out = Tensor::zeros(&[spec.out_channels, oh, ow]);
    for o in 0..spec.out_channels {
        out.channel_mut(o).fill(spec.bias[o]);
        for c in 0..spec.in_channels {
            let src = input.channel(c);
            let kern = spec.kernels.kernel2d(o, c);
            let dst = out.channel_mut(o);
            for dy in 0..k {
                let y0 = pad.saturating_sub(dy);
                let y1 = (h + pad - dy).min(oh);
                for dx in 0..k {
                    let wgt = kern[dy * k + dx];
                    let x0 = pad.saturating_sub(dx);
                    let x1 = (w + pad - dx).min(ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = y + dy - pad;
                        let src_row = &src[sy * w + (x0 + dx - pad)..][..x1 - x0];
                        let dst_row = &mut dst[y * ow + x0..][..x1 - x0];
                        for (d, s) in dst_row.iter_mut().zip(src_row) {
                            *d += wgt * *s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out . conv2d(input, spec))` with respect to the
/// input, the kernels and the bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    check_conv_args(input, spec)?;
    let (h, w) = input.hw();
    let (oh, ow) = conv_output_hw(input, spec)?;
    if grad_out.shape() != [spec.out_channels, oh, ow] {
        return Err(Error::invalid(format!(
            "conv grad_out shape {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            spec.out_channels,
            oh,
            ow
        )));
    }
    let k = spec.kernel_size;
    let pad = match spec.padding {
        Padding::Same => k / 2,
        Padding::Valid => 0,
    };

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernels = Tensor::zeros(spec.kernels.shape());
    let mut grad_bias = vec![T::zero(); spec.out_channels];

    for o in 0..spec.out_channels {
        let g = grad_out.channel(o);
        grad_bias[o] = g.iter().fold(T::zero(), |acc, &v| acc + v);
        for c in 0..spec.in_channels {
            let src = input.channel(c);
            let gin = grad_input.channel_mut(c);
            let kern = spec.kernels.kernel2d(o, c);
            let koff = (o * spec.in_channels + c) * k * k;
            let gk = &mut grad_kernels.data_mut()[koff..koff + k * k];
            for dy in 0..k {
                let y0 = pad.saturating_sub(dy);
                let y1 = (h + pad - dy).min(oh);
                for dx in 0..k {
                    let x0 = pad.saturating_sub(dx);
                    let x1 = (w + pad - dx).min(ow);
                    if x0 >= x1 {
                        continue;
                    }
                    let wgt = kern[dy * k + dx];
                    let mut kacc = T::zero();
                    for y in y0..y1 {
                        let sy = y + dy - pad;
                        let src_row = &src[sy * w + (x0 + dx - pad)..][..x1 - x0];
                        let gin_row = &mut gin[sy * w + (x0 + dx - pad)..][..x1 - x0];
                        let g_row = &g[y * ow + x0..][..x1 - x0];
                        for ((gi, s), gv) in gin_row.iter_mut().zip(src_row).zip(g_row) {
                            *gi += wgt * *gv;
                            kacc += *s * *gv;
                        }
                    }
                    gk[dy * k + dx] += kacc;
                }
            }
        }
    }
    Ok((grad_input, grad_kernels, grad_bias))
}

fn check_deconv_args<T: Scalar>(input: &Tensor<T>, spec: &DeconvSpec<T>) -> Result<()> {
    spec.validate()?;
    if input.rank() != 3 {
        return Err(Error::invalid("deconv input must be rank 3 (C x H x W)"));
    }
    if input.dim0() != spec.in_channels {
        return Err(Error::invalid(format!(
            "deconv input has {} channels, spec expects {}",
            input.dim0(),
            spec.in_channels
        )));
    }
    Ok(())
}

/// Strided transposed convolution: every input pixel stamps a scaled copy of
/// the kernel onto the HR grid at stride `s`; the raw scatter is cropped by
/// `crop_before()` on the top/left so the output is exactly `s*h x s*w`.
pub fn deconv2d<T: Scalar>(input: &Tensor<T>, spec: &DeconvSpec<T>) -> Result<Tensor<T>> {
    check_deconv_args(input, spec)?;
    let (h, w) = input.hw();
    let s = spec.stride;
    let n = spec.kernel_size;
    let c0 = spec.crop_before();
    let (oh, ow) = (s * h, s * w);

    let mut out = Tensor::zeros(&[spec.out_channels, oh, ow]);
    for co in 0..spec.out_channels {
        out.channel_mut(co).fill(spec.bias[co]);
    }
    for ci in 0..spec.in_channels {
        let src = input.channel(ci);
        for co in 0..spec.out_channels {
            let kern = spec.kernels.kernel2d(ci, co);
            let dst = out.channel_mut(co);
            for y in 0..h {
                let base_y = (s * y) as isize - c0 as isize;
                let p0 = (-base_y).max(0) as usize;
                let p1 = n.min((oh as isize - base_y).max(0) as usize);
                for x in 0..w {
                    let val = src[y * w + x];
                    if val == T::zero() {
                        continue;
                    }
                    let base_x = (s * x) as isize - c0 as isize;
                    let q0 = (-base_x).max(0) as usize;
                    let q1 = n.min((ow as isize - base_x).max(0) as usize);
                    if q0 >= q1 {
                        continue;
                    }
                    for p in p0..p1 {
                        let oy = (base_y + p as isize) as usize;
                        let ox = (base_x + q0 as isize) as usize;
                        let dst_row = &mut dst[oy * ow + ox..][..q1 - q0];
                        let k_row = &kern[p * n + q0..][..q1 - q0];
                        for (d, kv) in dst_row.iter_mut().zip(k_row) {
                            *d += val * *kv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out . deconv2d(input, spec))`.
pub fn deconv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &DeconvSpec<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    check_deconv_args(input, spec)?;
    let (h, w) = input.hw();
    let s = spec.stride;
    let n = spec.kernel_size;
    let c0 = spec.crop_before();
    let (oh, ow) = (s * h, s * w);
    if grad_out.shape() != [spec.out_channels, oh, ow] {
        return Err(Error::invalid(format!(
            "deconv grad_out shape {:?} does not match output [{}, {}, {}]",
            grad_out.shape(),
            spec.out_channels,
            oh,
            ow
        )));
    }

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernels = Tensor::zeros(spec.kernels.shape());
    let mut grad_bias = vec![T::zero(); spec.out_channels];

    for co in 0..spec.out_channels {
        let g = grad_out.channel(co);
        grad_bias[co] = g.iter().fold(T::zero(), |acc, &v| acc + v);
    }
    for ci in 0..spec.in_channels {
        let src = input.channel(ci);
        let gin = grad_input.channel_mut(ci);
        for co in 0..spec.out_channels {
            let g = grad_out.channel(co);
            let kern = spec.kernels.kernel2d(ci, co);
            let koff = (ci * spec.out_channels + co) * n * n;
            let gk = &mut grad_kernels.data_mut()[koff..koff + n * n];
            for y in 0..h {
                let base_y = (s * y) as isize - c0 as isize;
                let p0 = (-base_y).max(0) as usize;
                let p1 = n.min((oh as isize - base_y).max(0) as usize);
                for p in p0..p1 {
                    let oy = (base_y + p as isize) as usize;
                    let g_row_full = &g[oy * ow..][..ow];
                    let gk_row = &mut gk[p * n..][..n];
                    let k_row = &kern[p * n..][..n];
                    for x in 0..w {
                        let base_x = (s * x) as isize - c0 as isize;
                        let q0 = (-base_x).max(0) as usize;
                        let q1 = n.min((ow as isize - base_x).max(0) as usize);
                        if q0 >= q1 {
                            continue;
                        }
                        let gx = (base_x + q0 as isize) as usize;
                        let g_seg = &g_row_full[gx..gx + (q1 - q0)];
                        let val = src[y * w + x];
                        if val != T::zero() {
                            for (gkv, gv) in gk_row[q0..q1].iter_mut().zip(g_seg) {
                                *gkv += val * *gv;
                            }
                        }
                        let mut acc = T::zero();
                        for (kv, gv) in k_row[q0..q1].iter().zip(g_seg) {
                            acc += *kv * *gv;
                        }
                        gin[y * w + x] += acc;
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_kernels, grad_bias))
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Backward of ReLU: passes the gradient where the *input* was strictly
/// positive (subgradient 0 at exactly 0).
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let mut g = grad_out.clone();
    for (gv, iv) in g.data_mut().iter_mut().zip(input.data()) {
        if !(*iv > T::zero()) {
            *gv = T::zero();
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// Direct six-nested-loop correlation, the oracle for conv2d.
    fn conv2d_oracle(input: &Tensor<f64>, spec: &ConvSpec<f64>) -> Tensor<f64> {
        let (h, w) = input.hw();
        let k = spec.kernel_size;
        let (oh, ow, pad) = match spec.padding {
            Padding::Same => (h, w, (k / 2) as isize),
            Padding::Valid => (h - k + 1, w - k + 1, 0),
        };
        let mut out = Tensor::zeros(&[spec.out_channels, oh, ow]);
        for o in 0..spec.out_channels {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = spec.bias[o];
                    for c in 0..spec.in_channels {
                        for dy in 0..k {
                            for dx in 0..k {
                                let iy = y as isize + dy as isize - pad;
                                let ix = x as isize + dx as isize - pad;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    acc += input.at3(c, iy as usize, ix as usize)
                                        * spec.kernels.at4(o, c, dy, dx);
                                }
                            }
                        }
                    }
                    *out.at3_mut(o, y, x) = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let mut spec = ConvSpec::<f64>::new(1, 1, 3, Padding::Same).unwrap();
        *spec.kernels.at4_mut(0, 0, 1, 1) = 1.0;
        let input = Tensor::from_vec(&[1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn all_ones_valid_conv_sums_window() {
        let mut spec = ConvSpec::<f64>::new(1, 1, 3, Padding::Valid).unwrap();
        spec.kernels.fill(1.0);
        let input = Tensor::from_vec(&[1, 5, 5], vec![7.0; 25]).unwrap();
        let out = conv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 63.0));
    }

    #[test]
    fn conv_matches_direct_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for padding in [Padding::Same, Padding::Valid] {
            let mut spec = ConvSpec::<f64>::new(2, 3, 3, padding).unwrap();
            spec.kernels = rand_tensor(&[3, 2, 3, 3], &mut rng);
            spec.bias = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let input = rand_tensor(&[2, 6, 6], &mut rng);
            let got = conv2d(&input, &spec).unwrap();
            let want = conv2d_oracle(&input, &spec);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let spec = ConvSpec::<f64>::new(2, 1, 3, Padding::Same).unwrap();
        let input = Tensor::<f64>::zeros(&[1, 5, 5]);
        assert!(matches!(
            conv2d(&input, &spec),
            Err(Error::InvalidArgument(_))
        ));
        let spec = ConvSpec::<f64>::new(1, 1, 7, Padding::Valid).unwrap();
        let input = Tensor::<f64>::zeros(&[1, 5, 5]);
        assert!(conv2d(&input, &spec).is_err());
    }

    #[test]
    fn conv_backward_zero_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = ConvSpec::<f64>::new(2, 2, 3, Padding::Same).unwrap();
        spec.kernels = rand_tensor(&[2, 2, 3, 3], &mut rng);
        let input = rand_tensor(&[2, 4, 4], &mut rng);
        let g = Tensor::zeros(&[2, 4, 4]);
        let (gi, gk, gb) = conv2d_backward(&input, &spec, &g).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_scalar_chain_rule() {
        let mut spec = ConvSpec::<f64>::new(1, 1, 1, Padding::Same).unwrap();
        *spec.kernels.at4_mut(0, 0, 0, 0) = 3.0;
        let input = Tensor::from_vec(&[1, 1, 1], vec![5.0]).unwrap();
        let g = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let (gi, gk, gb) = conv2d_backward(&input, &spec, &g).unwrap();
        assert_eq!(gi.data(), &[3.0]);
        assert_eq!(gk.data(), &[5.0]);
        assert_eq!(gb, vec![1.0]);
    }

    #[test]
    fn deconv_one_hot_kernel_interleaves() {
        let mut spec = DeconvSpec::<f64>::new(1, 1, 8, 2).unwrap();
        let a = spec.anchor();
        *spec.kernels.at4_mut(0, 0, a, a) = 1.0;
        let input = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = deconv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 4, 4]);
        for y in 0..4 {
            for x in 0..4 {
                let expect = if y % 2 == 0 && x % 2 == 0 {
                    input.at3(0, y / 2, x / 2)
                } else {
                    0.0
                };
                assert_eq!(out.at3(0, y, x), expect, "at ({y},{x})");
            }
        }
    }

    #[test]
    fn deconv_impulse_response_is_cropped_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec = DeconvSpec::<f64>::new(1, 1, 11, 3).unwrap();
        spec.kernels = rand_tensor(&[1, 1, 11, 11], &mut rng);
        let input = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let out = deconv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        let c0 = spec.crop_before();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.at3(0, y, x), spec.kernels.at4(0, 0, c0 + y, c0 + x));
            }
        }
    }

    #[test]
    fn deconv_asymmetric_crop_takes_ceil_from_top() {
        // n - s = 3 is odd: crop 2 from the top/left, 1 from the bottom/right.
        let mut spec = DeconvSpec::<f64>::new(1, 1, 5, 2).unwrap();
        assert_eq!(spec.crop_before(), 2);
        spec.kernels =
            Tensor::from_vec(&[1, 1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let input = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let out = deconv2d(&input, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.at3(0, 0, 0), spec.kernels.at4(0, 0, 2, 2));
        assert_eq!(out.at3(0, 1, 1), spec.kernels.at4(0, 0, 3, 3));
    }

    #[test]
    fn deconv_stride_one_1x1_matches_conv_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut dspec = DeconvSpec::<f64>::new(2, 3, 1, 1).unwrap();
        dspec.kernels = rand_tensor(&[2, 3, 1, 1], &mut rng);
        dspec.bias = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cspec = ConvSpec::<f64>::new(2, 3, 1, Padding::Same).unwrap();
        for ci in 0..2 {
            for co in 0..3 {
                *cspec.kernels.at4_mut(co, ci, 0, 0) = dspec.kernels.at4(ci, co, 0, 0);
            }
        }
        cspec.bias = dspec.bias.clone();
        let input = rand_tensor(&[2, 4, 4], &mut rng);
        let g = rand_tensor(&[3, 4, 4], &mut rng);
        let fwd_d = deconv2d(&input, &dspec).unwrap();
        let fwd_c = conv2d(&input, &cspec).unwrap();
        assert_eq!(fwd_d.data(), fwd_c.data());
        let (gi_d, gk_d, gb_d) = deconv2d_backward(&input, &dspec, &g).unwrap();
        let (gi_c, gk_c, gb_c) = conv2d_backward(&input, &cspec, &g).unwrap();
        assert_eq!(gi_d.data(), gi_c.data());
        assert_eq!(gb_d, gb_c);
        for ci in 0..2 {
            for co in 0..3 {
                assert_eq!(gk_d.at4(ci, co, 0, 0), gk_c.at4(co, ci, 0, 0));
            }
        }
    }

    #[test]
    fn deconv_backward_zero_grad_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut spec = DeconvSpec::<f64>::new(2, 2, 4, 2).unwrap();
        spec.kernels = rand_tensor(&[2, 2, 4, 4], &mut rng);
        let input = rand_tensor(&[2, 3, 3], &mut rng);
        let g = Tensor::zeros(&[2, 6, 6]);
        let (gi, gk, gb) = deconv2d_backward(&input, &spec, &g).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gk.data().iter().all(|&v| v == 0.0));
        assert!(gb.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clamps_and_gates() {
        let t = Tensor::from_vec(&[1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(&[1, 1, 3], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(relu(&pos).data(), pos.data());
        let input = Tensor::from_vec(&[1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[1, 1, 2], vec![5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&input, &g).data(), &[0.0, 5.0]);
    }
}
