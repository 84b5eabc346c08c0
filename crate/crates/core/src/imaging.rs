//! Image planes, color handling, bicubic resampling, patch extraction,
//! augmentation and boundary-map synthesis.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ImagePlane<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(ImagePlane {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, v: T) -> Self {
        ImagePlane {
            height,
            width,
            data: vec![v; height * width],
        }
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Self {
        let scale = T::from_f64(1.0 / 255.0);
        ImagePlane {
            height,
            width,
            data: bytes.iter().map(|&b| T::from_f64(b as f64) * scale).collect(),
        }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImagePlane<T> {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        ImagePlane {
            height: h,
            width: w,
            data,
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.max(T::zero()).min(T::one());
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width], self.data.clone()).unwrap()
    }

    /// First channel of a rank-3 tensor as a plane.
    pub fn from_tensor(t: &Tensor<T>) -> Self {
        let (h, w) = t.hw();
        ImagePlane {
            height: h,
            width: w,
            data: t.channel(0).to_vec(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ImagePlane<U> {
        ImagePlane {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// An aligned (LR, HR, boundary maps) training sample. HR and boundary
/// planes share dimensions; HR dims are exact `scale` multiples of LR dims.
#[derive(Debug, Clone)]
pub struct TrainingTriplet<T> {
    pub lr: ImagePlane<T>,
    pub hr: ImagePlane<T>,
    pub boundaries: Vec<ImagePlane<T>>,
}

impl<T: Scalar> TrainingTriplet<T> {
    pub fn validate(&self, scale: usize) -> Result<()> {
        if self.hr.height != scale * self.lr.height || self.hr.width != scale * self.lr.width {
            return Err(Error::invalid(format!(
                "triplet misaligned: HR {}x{} is not {scale}x the LR {}x{}",
                self.hr.height, self.hr.width, self.lr.height, self.lr.width
            )));
        }
        if self.boundaries.is_empty() {
            return Err(Error::invalid("triplet has no boundary plane"));
        }
        for b in &self.boundaries {
            if b.height != self.hr.height || b.width != self.hr.width {
                return Err(Error::invalid(
                    "boundary plane dimensions do not match the HR plane",
                ));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Color

/// BT.601 studio-swing RGB -> YCbCr on `[0,1]` planes. A gray pixel maps to
/// `Cb = Cr = 128/255`; white maps to `Y = 235/255`, black to `Y = 16/255`.
pub fn rgb_to_ycbcr<T: Scalar>(
    r: &ImagePlane<T>,
    g: &ImagePlane<T>,
    b: &ImagePlane<T>,
) -> (ImagePlane<T>, ImagePlane<T>, ImagePlane<T>) {
    let n = r.data.len();
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for i in 0..n {
        let (rv, gv, bv) = (r.data[i].as_f64(), g.data[i].as_f64(), b.data[i].as_f64());
        y.push(T::from_f64((16.0 + 65.481 * rv + 128.553 * gv + 24.966 * bv) / 255.0));
        cb.push(T::from_f64((128.0 - 37.797 * rv - 74.203 * gv + 112.0 * bv) / 255.0));
        cr.push(T::from_f64((128.0 + 112.0 * rv - 93.786 * gv - 18.214 * bv) / 255.0));
    }
    (
        ImagePlane { height: r.height, width: r.width, data: y },
        ImagePlane { height: r.height, width: r.width, data: cb },
        ImagePlane { height: r.height, width: r.width, data: cr },
    )
}

/// Exact analytic inverse of [`rgb_to_ycbcr`], clamped to `[0,1]`.
pub fn ycbcr_to_rgb<T: Scalar>(
    y: &ImagePlane<T>,
    cb: &ImagePlane<T>,
    cr: &ImagePlane<T>,
) -> (ImagePlane<T>, ImagePlane<T>, ImagePlane<T>) {
    let n = y.data.len();
    let mut r = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let yv = (y.data[i].as_f64() * 255.0 - 16.0) / 219.0;
        let cbv = (cb.data[i].as_f64() * 255.0 - 128.0) / 224.0 * 2.0 * (1.0 - 0.114);
        let crv = (cr.data[i].as_f64() * 255.0 - 128.0) / 224.0 * 2.0 * (1.0 - 0.299);
        let rv = yv + crv;
        let bv = yv + cbv;
        let gv = (yv - 0.299 * rv - 0.114 * bv) / 0.587;
        r.push(T::from_f64(rv.clamp(0.0, 1.0)));
        g.push(T::from_f64(gv.clamp(0.0, 1.0)));
        b.push(T::from_f64(bv.clamp(0.0, 1.0)));
    }
    (
        ImagePlane { height: y.height, width: y.width, data: r },
        ImagePlane { height: y.height, width: y.width, data: g },
        ImagePlane { height: y.height, width: y.width, data: b },
    )
}

// ---------------------------------------------------------------------------
// Bicubic resampling

/// Keys' cubic convolution kernel.
/// `w(0) = 1`, `w(±1) = w(±2) = 0`, and with `a = -0.5`, `w(0.5) = 0.5625`.
pub fn bicubic_weight(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

pub const BICUBIC_A: f64 = -0.5;

/// Integer phase offset of the resampling grid for an upscaling factor:
/// output pixel `j` reads source coordinate `(j - phase) / factor`, so LR
/// pixel `i` lands exactly on output pixel `factor*i + phase`.
pub fn upscale_phase(factor: f64) -> f64 {
    ((factor - 1.0) / 2.0).floor()
}

/// Tap positions and weights for one output row/column index.
struct Taps {
    start: isize,
    weights: Vec<f64>,
}

fn resample_taps(out_len: usize, factor: f64) -> Vec<Taps> {
    let mut taps = Vec::with_capacity(out_len);
    if factor >= 1.0 {
        let phase = upscale_phase(factor);
        for j in 0..out_len {
            let src = (j as f64 - phase) / factor;
            let base = src.floor() as isize - 1;
            let weights = (0..4)
                .map(|t| bicubic_weight(src - (base + t) as f64, BICUBIC_A))
                .collect();
            taps.push(Taps {
                start: base,
                weights,
            });
        }
    } else {
        // Downscale: stretch the kernel support by 1/factor (antialias) and
        // normalize so constants survive exactly.
        let inv = 1.0 / factor;
        let phase = ((inv - 1.0) / 2.0).floor();
        for j in 0..out_len {
            let src = j as f64 * inv + phase;
            let lo = (src - 2.0 * inv).ceil() as isize;
            let hi = (src + 2.0 * inv).floor() as isize;
            let mut weights: Vec<f64> = (lo..=hi)
                .map(|i| bicubic_weight((i as f64 - src) / inv, BICUBIC_A))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            taps.push(Taps { start: lo, weights });
        }
    }
    taps
}

fn output_len(len: usize, factor: f64) -> Result<usize> {
    let out = (len as f64 * factor).round() as isize;
    if out < 1 {
        return Err(Error::invalid(format!(
            "resize of length {len} by factor {factor} yields empty output"
        )));
    }
    Ok(out as usize)
}

/// Separable bicubic resampling with replicate (edge-clamped) borders.
/// Upscaling uses the plain 4-tap kernel; downscaling stretches the kernel
/// support by the inverse factor and renormalizes.
pub fn resize_bicubic<T: Scalar>(plane: &ImagePlane<T>, factor: f64) -> Result<ImagePlane<T>> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::invalid(format!("resize factor {factor} must be positive")));
    }
    let (h, w) = (plane.height, plane.width);
    let oh = output_len(h, factor)?;
    let ow = output_len(w, factor)?;

    // Vertical pass: h x w -> oh x w.
    let row_taps = resample_taps(oh, factor);
    let mut mid = vec![0.0f64; oh * w];
    for (oy, t) in row_taps.iter().enumerate() {
        let dst = &mut mid[oy * w..(oy + 1) * w];
        for (ti, &wgt) in t.weights.iter().enumerate() {
            if wgt == 0.0 {
                continue;
            }
            let sy = (t.start + ti as isize).clamp(0, h as isize - 1) as usize;
            let src = plane.row(sy);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wgt * s.as_f64();
            }
        }
    }

    // Horizontal pass: oh x w -> oh x ow.
    let col_taps = resample_taps(ow, factor);
    let mut out = vec![T::zero(); oh * ow];
    for oy in 0..oh {
        let src = &mid[oy * w..(oy + 1) * w];
        let dst = &mut out[oy * ow..(oy + 1) * ow];
        for (ox, t) in col_taps.iter().enumerate() {
            let mut acc = 0.0f64;
            for (ti, &wgt) in t.weights.iter().enumerate() {
                if wgt == 0.0 {
                    continue;
                }
                let sx = (t.start + ti as isize).clamp(0, w as isize - 1) as usize;
                acc += wgt * src[sx];
            }
            dst[ox] = T::from_f64(acc);
        }
    }
    ImagePlane::new(oh, ow, out)
}

/// Crop a plane to the largest size divisible by `s` (top-left anchored).
pub fn crop_to_multiple<T: Scalar>(plane: &ImagePlane<T>, s: usize) -> ImagePlane<T> {
    let h = (plane.height / s) * s;
    let w = (plane.width / s) * s;
    if h == plane.height && w == plane.width {
        plane.clone()
    } else {
        plane.crop(0, 0, h, w)
    }
}

/// Synthesize the LR image by bicubic-downscaling the HR plane by `1/s`.
/// HR dims must already be divisible by `s` (crop to a multiple first).
pub fn make_lr<T: Scalar>(hr: &ImagePlane<T>, scale: usize) -> Result<ImagePlane<T>> {
    if scale == 0 || hr.height % scale != 0 || hr.width % scale != 0 {
        return Err(Error::invalid(format!(
            "HR dims {}x{} not divisible by scale {scale}",
            hr.height, hr.width
        )));
    }
    let mut lr = resize_bicubic(hr, 1.0 / scale as f64)?;
    lr.clamp01();
    Ok(lr)
}

// ---------------------------------------------------------------------------
// Patches and augmentation

/// Cut aligned patches: LR patches of `lr_patch` at `stride`, HR/boundary
/// patches of `scale*lr_patch` at `scale*stride`. Returns an empty list when
/// the patch does not fit (callers should warn and skip the image).
pub fn extract_patches<T: Scalar>(
    triplet: &TrainingTriplet<T>,
    scale: usize,
    lr_patch: usize,
    stride: usize,
) -> Vec<TrainingTriplet<T>> {
    let (lh, lw) = (triplet.lr.height, triplet.lr.width);
    if lr_patch > lh || lr_patch > lw || lr_patch == 0 || stride == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut y = 0;
    while y + lr_patch <= lh {
        let mut x = 0;
        while x + lr_patch <= lw {
            let lr = triplet.lr.crop(y, x, lr_patch, lr_patch);
            let hp = scale * lr_patch;
            let hr = triplet.hr.crop(scale * y, scale * x, hp, hp);
            let boundaries = triplet
                .boundaries
                .iter()
                .map(|b| b.crop(scale * y, scale * x, hp, hp))
                .collect();
            out.push(TrainingTriplet { lr, hr, boundaries });
            x += stride;
        }
        y += stride;
    }
    out
}

/// One of the eight dihedral transforms of the square, encoded as
/// transpose-then-flip bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Dihedral {
    pub transpose: bool,
    pub flip_v: bool,
    pub flip_h: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { transpose: false, flip_v: false, flip_h: false };
    pub const FLIP_H: Dihedral = Dihedral { transpose: false, flip_v: false, flip_h: true };
    pub const FLIP_V: Dihedral = Dihedral { transpose: false, flip_v: true, flip_h: false };
    pub const ROT180: Dihedral = Dihedral { transpose: false, flip_v: true, flip_h: true };
    pub const ROT90: Dihedral = Dihedral { transpose: true, flip_v: false, flip_h: true };
    pub const ROT270: Dihedral = Dihedral { transpose: true, flip_v: true, flip_h: false };

    pub fn all() -> [Dihedral; 8] {
        let mut v = [Dihedral::IDENTITY; 8];
        let mut i = 0;
        for transpose in [false, true] {
            for flip_v in [false, true] {
                for flip_h in [false, true] {
                    v[i] = Dihedral { transpose, flip_v, flip_h };
                    i += 1;
                }
            }
        }
        v
    }

    pub fn apply<T: Scalar>(&self, p: &ImagePlane<T>) -> ImagePlane<T> {
        let (h, w) = if self.transpose {
            (p.width, p.height)
        } else {
            (p.height, p.width)
        };
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (mut sy, mut sx) = if self.transpose { (x, y) } else { (y, x) };
                if self.flip_v {
                    sy = p.height - 1 - sy;
                }
                if self.flip_h {
                    sx = p.width - 1 - sx;
                }
                data.push(p.at(sy, sx));
            }
        }
        ImagePlane { height: h, width: w, data }
    }
}

/// Which augmentation variants to emit.
#[derive(Debug, Clone, Copy, Default)]
pub struct AugmentFlags {
    pub flip_h: bool,
    pub flip_v: bool,
    pub rotate: bool,
}

impl AugmentFlags {
    pub const DIHEDRAL8: AugmentFlags = AugmentFlags { flip_h: true, flip_v: true, rotate: true };

    /// Deduplicated variant set generated by the enabled flags. No flags
    /// yields just the identity; all flags yield the full 8-element group.
    pub fn variants(&self) -> Vec<Dihedral> {
        let flips: Vec<Dihedral> = [
            Some(Dihedral::IDENTITY),
            self.flip_h.then_some(Dihedral::FLIP_H),
            self.flip_v.then_some(Dihedral::FLIP_V),
        ]
        .into_iter()
        .flatten()
        .collect();
        let mut set = std::collections::BTreeSet::new();
        for f in &flips {
            for quarter_turns in 0..if self.rotate { 4 } else { 1 } {
                set.insert(compose_rot(*f, quarter_turns));
            }
        }
        set.into_iter().collect()
    }
}

/// Compose a dihedral element with `quarter_turns` extra quarter rotations
/// applied after it.
fn compose_rot(d: Dihedral, quarter_turns: usize) -> Dihedral {
    let mut cur = d;
    for _ in 0..quarter_turns {
        cur = if cur.transpose {
            Dihedral { transpose: false, flip_v: !cur.flip_v, flip_h: cur.flip_h }
        } else {
            Dihedral { transpose: true, flip_v: cur.flip_v, flip_h: !cur.flip_h }
        };
    }
    cur
}

/// Apply every enabled variant identically to all planes of each triplet.
pub fn augment<T: Scalar>(
    patches: &[TrainingTriplet<T>],
    flags: AugmentFlags,
) -> Vec<TrainingTriplet<T>> {
    let variants = flags.variants();
    let mut out = Vec::with_capacity(patches.len() * variants.len());
    for p in patches {
        for v in &variants {
            out.push(TrainingTriplet {
                lr: v.apply(&p.lr),
                hr: v.apply(&p.hr),
                boundaries: p.boundaries.iter().map(|b| v.apply(b)).collect(),
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Boundary targets

/// Linear-interpolated percentile (q in [0,1]) of a value list.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Synthetic boundary map: 3x3 central-difference gradient magnitude,
/// thresholded strictly above its 90th percentile, dilated by one pixel.
/// Output values are exactly 0 or 1.
pub fn synthetic_boundary<T: Scalar>(image: &ImagePlane<T>) -> ImagePlane<T> {
    let (h, w) = (image.height, image.width);
    let mut mag = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let xl = image.at(y, x.saturating_sub(1)).as_f64();
            let xr = image.at(y, (x + 1).min(w - 1)).as_f64();
            let yu = image.at(y.saturating_sub(1), x).as_f64();
            let yd = image.at((y + 1).min(h - 1), x).as_f64();
            let gx = (xr - xl) / 2.0;
            let gy = (yd - yu) / 2.0;
            mag[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    let thr = percentile(&mag, 0.9);
    let edge: Vec<bool> = mag.iter().map(|&m| m > thr).collect();
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            'search: for dy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for dx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if edge[dy * w + dx] {
                        out[y * w + x] = T::one();
                        break 'search;
                    }
                }
            }
        }
    }
    ImagePlane { height: h, width: w, data: out }
}

/// Boundary targets for a training image: provided annotations normalized to
/// `[0,1]` and kept separately, or the synthetic fallback derived from the
/// HR plane when none are given.
pub fn boundary_targets<T: Scalar>(
    annotations: &[ImagePlane<T>],
    hr: &ImagePlane<T>,
) -> Vec<ImagePlane<T>> {
    if annotations.is_empty() {
        return vec![synthetic_boundary(hr)];
    }
    annotations
        .iter()
        .map(|a| {
            let max = a.data.iter().cloned().fold(T::zero(), T::max);
            if max > T::zero() && max != T::one() {
                let inv = T::one() / max;
                ImagePlane {
                    height: a.height,
                    width: a.width,
                    data: a.data.iter().map(|&v| v * inv).collect(),
                }
            } else {
                a.clone()
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// PNG I/O

/// A decoded 8-bit PNG: grayscale or RGB.
pub enum DecodedImage<T> {
    Gray(ImagePlane<T>),
    Rgb(ImagePlane<T>, ImagePlane<T>, ImagePlane<T>),
}

impl<T: Scalar> DecodedImage<T> {
    /// Luminance plane: the gray plane itself, or BT.601 Y for RGB.
    pub fn luminance(&self) -> ImagePlane<T> {
        match self {
            DecodedImage::Gray(p) => p.clone(),
            DecodedImage::Rgb(r, g, b) => rgb_to_ycbcr(r, g, b).0,
        }
    }
}

pub fn load_png<T: Scalar>(path: &Path) -> Result<DecodedImage<T>> {
    let img = image::open(path)?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            Ok(DecodedImage::Gray(ImagePlane::from_u8(h, w, g.as_raw())))
        }
        image::DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.as_raw();
            let mut r = Vec::with_capacity(w * h);
            let mut g = Vec::with_capacity(w * h);
            let mut b = Vec::with_capacity(w * h);
            for px in raw.chunks_exact(3) {
                r.push(px[0]);
                g.push(px[1]);
                b.push(px[2]);
            }
            Ok(DecodedImage::Rgb(
                ImagePlane::from_u8(h, w, &r),
                ImagePlane::from_u8(h, w, &g),
                ImagePlane::from_u8(h, w, &b),
            ))
        }
        image::DynamicImage::ImageLumaA8(_) | image::DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.as_raw();
            let mut r = Vec::with_capacity(w * h);
            let mut g = Vec::with_capacity(w * h);
            let mut b = Vec::with_capacity(w * h);
            for px in raw.chunks_exact(3) {
                r.push(px[0]);
                g.push(px[1]);
                b.push(px[2]);
            }
            Ok(DecodedImage::Rgb(
                ImagePlane::from_u8(h, w, &r),
                ImagePlane::from_u8(h, w, &g),
                ImagePlane::from_u8(h, w, &b),
            ))
        }
        _ => Err(Error::invalid(format!(
            "{}: only 8-bit grayscale or RGB PNG inputs are supported",
            path.display()
        ))),
    }
}

pub fn save_png_gray<T: Scalar>(plane: &ImagePlane<T>, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(plane.width as u32, plane.height as u32, plane.to_u8())
        .expect("plane dims match buffer");
    buf.save(path)?;
    Ok(())
}

pub fn save_png_rgb<T: Scalar>(
    r: &ImagePlane<T>,
    g: &ImagePlane<T>,
    b: &ImagePlane<T>,
    path: &Path,
) -> Result<()> {
    let (h, w) = (r.height, r.width);
    let (ru, gu, bu) = (r.to_u8(), g.to_u8(), b.to_u8());
    let mut raw = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        raw.push(ru[i]);
        raw.push(gu[i]);
        raw.push(bu[i]);
    }
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("dims match");
    buf.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ycbcr_reference_points() {
        let one = ImagePlane::<f64>::constant(1, 1, 1.0);
        let zero = ImagePlane::<f64>::constant(1, 1, 0.0);
        let (y, cb, cr) = rgb_to_ycbcr(&one, &one, &one);
        assert!((y.data[0] - 235.0 / 255.0).abs() < 1e-9);
        assert!((cb.data[0] - 128.0 / 255.0).abs() < 1e-9);
        assert!((cr.data[0] - 128.0 / 255.0).abs() < 1e-9);
        let (y, _, _) = rgb_to_ycbcr(&zero, &zero, &zero);
        assert!((y.data[0] - 16.0 / 255.0).abs() < 1e-9);
        // gray pixel: chroma at midpoint
        let half = ImagePlane::<f64>::constant(1, 1, 0.5);
        let (_, cb, cr) = rgb_to_ycbcr(&half, &half, &half);
        assert!((cb.data[0] - 128.0 / 255.0).abs() < 1e-9);
        assert!((cr.data[0] - 128.0 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn ycbcr_round_trip_within_one_level() {
        let mut r = Vec::new();
        let mut g = Vec::new();
        let mut b = Vec::new();
        for i in 0..64 {
            r.push((i * 4) as f64 / 255.0);
            g.push((255 - i * 3) as f64 / 255.0);
            b.push((i * 7 % 256) as f64 / 255.0);
        }
        let rp = ImagePlane::new(8, 8, r).unwrap();
        let gp = ImagePlane::new(8, 8, g).unwrap();
        let bp = ImagePlane::new(8, 8, b).unwrap();
        let (y, cb, cr) = rgb_to_ycbcr(&rp, &gp, &bp);
        let (r2, g2, b2) = ycbcr_to_rgb(&y, &cb, &cr);
        for i in 0..64 {
            assert!((rp.data[i] - r2.data[i]).abs() <= 1.0 / 255.0);
            assert!((gp.data[i] - g2.data[i]).abs() <= 1.0 / 255.0);
            assert!((bp.data[i] - b2.data[i]).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn bicubic_weight_reference_values() {
        assert_eq!(bicubic_weight(0.0, BICUBIC_A), 1.0);
        assert_eq!(bicubic_weight(1.0, BICUBIC_A), 0.0);
        assert_eq!(bicubic_weight(2.0, BICUBIC_A), 0.0);
        assert_eq!(bicubic_weight(0.5, BICUBIC_A), 0.5625);
        assert_eq!(bicubic_weight(-0.5, BICUBIC_A), 0.5625);
    }

    #[test]
    fn resize_factor_one_is_identity() {
        let p = ImagePlane::new(3, 4, (0..12).map(|v| v as f64 / 11.0).collect()).unwrap();
        let r = resize_bicubic(&p, 1.0).unwrap();
        assert_eq!(p.data, r.data);
    }

    #[test]
    fn resize_preserves_constants() {
        for factor in [0.25, 1.0 / 3.0, 0.5, 2.0, 3.0, 4.0] {
            let p = ImagePlane::<f64>::constant(12, 12, 0.6180339887);
            let r = resize_bicubic(&p, factor).unwrap();
            for &v in &r.data {
                assert!((v - 0.6180339887).abs() < 1e-12, "factor {factor}: {v}");
            }
        }
    }

    #[test]
    fn resize_matches_per_pixel_oracle() {
        // direct (non-separable) weighted sum with the same grid convention
        let p = ImagePlane::new(8, 8, (0..64).map(|v| v as f64 / 63.0).collect()).unwrap();
        let got = resize_bicubic(&p, 2.0).unwrap();
        let phase = upscale_phase(2.0);
        for oy in 0..16 {
            for ox in 0..16 {
                let sy = (oy as f64 - phase) / 2.0;
                let sx = (ox as f64 - phase) / 2.0;
                let mut acc = 0.0;
                for ty in -1..=2 {
                    for tx in -1..=2 {
                        let iy = (sy.floor() as isize + ty).clamp(0, 7) as usize;
                        let ix = (sx.floor() as isize + tx).clamp(0, 7) as usize;
                        let wy = bicubic_weight(sy - (sy.floor() + ty as f64), BICUBIC_A);
                        let wx = bicubic_weight(sx - (sx.floor() + tx as f64), BICUBIC_A);
                        acc += wy * wx * p.at(iy, ix);
                    }
                }
                assert!(
                    (got.at(oy, ox) - acc).abs() < 1e-6,
                    "({oy},{ox}): {} vs {acc}",
                    got.at(oy, ox)
                );
            }
        }
    }

    #[test]
    fn resize_rejects_empty_output() {
        let p = ImagePlane::<f64>::constant(2, 2, 0.0);
        assert!(resize_bicubic(&p, 0.1).is_err());
    }

    #[test]
    fn make_lr_shapes_and_constants() {
        let hr = ImagePlane::<f64>::constant(96, 96, 0.25);
        let lr = make_lr(&hr, 3).unwrap();
        assert_eq!((lr.height, lr.width), (32, 32));
        assert!(lr.data.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!(make_lr(&ImagePlane::<f64>::constant(97, 96, 0.0), 3).is_err());
    }

    #[test]
    fn patch_counting() {
        let hr = ImagePlane::<f64>::constant(96, 96, 0.5);
        let lr = make_lr(&hr, 3).unwrap();
        let b = synthetic_boundary(&hr);
        let t = TrainingTriplet { lr, hr, boundaries: vec![b] };
        let patches = extract_patches(&t, 3, 16, 4);
        assert_eq!(patches.len(), 25);
        assert_eq!(patches[0].hr.height, 48);
        assert_eq!(patches[0].lr.height, 16);
        // patch equal to the whole image -> exactly one
        let one = extract_patches(&t, 3, 32, 4);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].lr.data, t.lr.data);
        // patch larger than the image -> none
        assert!(extract_patches(&t, 3, 33, 4).is_empty());
    }

    #[test]
    fn augment_counts_and_involution() {
        let hr = ImagePlane::new(6, 6, (0..36).map(|v| v as f64 / 35.0).collect()).unwrap();
        let lr = make_lr(&crop_to_multiple(&hr, 2), 2).unwrap();
        let t = TrainingTriplet {
            lr,
            hr: hr.clone(),
            boundaries: vec![synthetic_boundary(&hr)],
        };
        let none = augment(&[t.clone()], AugmentFlags::default());
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].hr.data, t.hr.data);
        let all = augment(&[t.clone()], AugmentFlags::DIHEDRAL8);
        assert_eq!(all.len(), 8);
        // horizontal flip twice -> original
        let flipped = Dihedral::FLIP_H.apply(&Dihedral::FLIP_H.apply(&hr));
        assert_eq!(flipped.data, hr.data);
        // rot90 four times -> original
        let mut r = hr.clone();
        for _ in 0..4 {
            r = Dihedral::ROT90.apply(&r);
        }
        assert_eq!(r.data, hr.data);
    }

    #[test]
    fn rotation_composition_law() {
        let p = ImagePlane::new(3, 5, (0..15).map(|v| v as f64).collect()).unwrap();
        assert_eq!(compose_rot(Dihedral::IDENTITY, 1), Dihedral::ROT90);
        assert_eq!(compose_rot(Dihedral::IDENTITY, 2), Dihedral::ROT180);
        assert_eq!(compose_rot(Dihedral::IDENTITY, 3), Dihedral::ROT270);
        assert_eq!(compose_rot(Dihedral::IDENTITY, 4), Dihedral::IDENTITY);
        for d in Dihedral::all() {
            let composed = compose_rot(d, 1).apply(&p);
            let sequential = Dihedral::ROT90.apply(&d.apply(&p));
            assert_eq!(composed.data, sequential.data);
            assert_eq!(composed.height, sequential.height);
        }
    }

    #[test]
    fn dihedral_variants_are_distinct() {
        let p = ImagePlane::new(4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let imgs: Vec<Vec<f64>> = Dihedral::all().iter().map(|d| d.apply(&p).data).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(imgs[i], imgs[j], "variants {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn boundary_fallback_constant_is_zero() {
        let p = ImagePlane::<f64>::constant(16, 16, 0.7);
        let b = synthetic_boundary(&p);
        assert!(b.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_fallback_step_edge_strip() {
        // single-row strip with the step midpoint in column 2
        let p = ImagePlane::new(1, 5, vec![0.0, 0.0, 0.5, 1.0, 1.0]).unwrap();
        let b = synthetic_boundary(&p);
        assert_eq!(b.data, vec![0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn boundary_annotations_pass_through() {
        let ann = ImagePlane::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let hr = ImagePlane::<f64>::constant(2, 2, 0.5);
        let out = boundary_targets(&[ann.clone()], &hr);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].data, ann.data);
    }
}
