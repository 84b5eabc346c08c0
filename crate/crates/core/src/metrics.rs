//! Evaluation metrics: PSNR, SSIM, and edge-weighted PSNR (EPSNR) over a
//! boundary-distance mask.
//!
//! All metrics score the 8-bit luminance domain (plane values times 255).
//! Border shaving crops every plane (including the boundary source) before
//! anything else, so masks and scores live in the same frame.

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;
use crate::scalar::Scalar;

pub const MAX_I: f64 = 255.0;

/// Ground truth / prediction pair, already shaved, in `[0,1]` luminance.
#[derive(Debug, Clone)]
pub struct EvalPair<T> {
    pub gt: ImagePlane<T>,
    pub pred: ImagePlane<T>,
}

impl<T: Scalar> EvalPair<T> {
    /// Pair up two planes, removing a `shave`-pixel border from each side.
    pub fn new(gt: &ImagePlane<T>, pred: &ImagePlane<T>, shave: usize) -> Result<Self> {
        if gt.height != pred.height || gt.width != pred.width {
            return Err(Error::invalid(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                gt.height, gt.width, pred.height, pred.width
            )));
        }
        if gt.height <= 2 * shave || gt.width <= 2 * shave {
            return Err(Error::invalid(format!(
                "shave {shave} leaves no pixels of a {}x{} plane",
                gt.height, gt.width
            )));
        }
        Ok(EvalPair {
            gt: shave_plane(gt, shave),
            pred: shave_plane(pred, shave),
        })
    }
}

pub fn shave_plane<T: Scalar>(p: &ImagePlane<T>, shave: usize) -> ImagePlane<T> {
    if shave == 0 {
        p.clone()
    } else {
        p.crop(shave, shave, p.height - 2 * shave, p.width - 2 * shave)
    }
}

fn mse_255<T: Scalar>(a: &ImagePlane<T>, b: &ImagePlane<T>) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = (x.as_f64() - y.as_f64()) * MAX_I;
        acc += d * d;
    }
    acc / a.data.len() as f64
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical planes.
pub fn psnr<T: Scalar>(pair: &EvalPair<T>) -> f64 {
    let mse = mse_255(&pair.gt, &pair.pred);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_I * MAX_I / mse).log10()
    }
}

// ---------------------------------------------------------------------------
// SSIM

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-mode Gaussian filter; output is (h-10) x (w-10).
fn filter_valid(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let g = gaussian_window();
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut mid = vec![0.0f64; oh * w];
    for y in 0..oh {
        for (t, &gv) in g.iter().enumerate() {
            let row = &src[(y + t) * w..(y + t + 1) * w];
            let dst = &mut mid[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += gv * s;
            }
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        let row = &mid[y * w..(y + 1) * w];
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &gv) in g.iter().enumerate() {
                acc += gv * row[x + t];
            }
            *d = acc;
        }
    }
    out
}

/// Mean structural similarity over all 11x11 Gaussian-weighted windows
/// (sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 255).
pub fn ssim<T: Scalar>(pair: &EvalPair<T>) -> Result<f64> {
    let (h, w) = (pair.gt.height, pair.gt.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let g: Vec<f64> = pair.gt.data.iter().map(|v| v.as_f64() * MAX_I).collect();
    let p: Vec<f64> = pair.pred.data.iter().map(|v| v.as_f64() * MAX_I).collect();
    let gg: Vec<f64> = g.iter().map(|v| v * v).collect();
    let pp: Vec<f64> = p.iter().map(|v| v * v).collect();
    let gp: Vec<f64> = g.iter().zip(&p).map(|(a, b)| a * b).collect();

    let mu_g = filter_valid(&g, h, w);
    let mu_p = filter_valid(&p, h, w);
    let m_gg = filter_valid(&gg, h, w);
    let m_pp = filter_valid(&pp, h, w);
    let m_gp = filter_valid(&gp, h, w);

    let c1 = (SSIM_K1 * MAX_I) * (SSIM_K1 * MAX_I);
    let c2 = (SSIM_K2 * MAX_I) * (SSIM_K2 * MAX_I);
    let mut acc = 0.0;
    for i in 0..mu_g.len() {
        let (mg, mp) = (mu_g[i], mu_p[i]);
        let var_g = m_gg[i] - mg * mg;
        let var_p = m_pp[i] - mp * mp;
        let cov = m_gp[i] - mg * mp;
        acc += ((2.0 * mg * mp + c1) * (2.0 * cov + c2))
            / ((mg * mg + mp * mp + c1) * (var_g + var_p + c2));
    }
    Ok(acc / mu_g.len() as f64)
}

// ---------------------------------------------------------------------------
// Edge mask and EPSNR

/// Pixels whose exact Euclidean distance to the nearest boundary pixel is
/// strictly below the radius.
#[derive(Debug, Clone)]
pub struct EdgeMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub edge_pixels: usize,
}

const INF: i64 = i64::MAX / 4;

/// 1-D squared distance transform over sample costs `f` (lower envelope of
/// parabolas). `f` may contain INF entries (skipped) but needs at least one
/// finite value.
fn dt_1d(f: &[i64], out: &mut [i64]) {
    let n = f.len();
    let first = match f.iter().position(|&v| v < INF) {
        Some(i) => i,
        None => {
            out.copy_from_slice(f);
            return;
        }
    };
    let mut v = vec![first; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if f[q] >= INF {
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as i64) as f64 - (f[p] + (p * p) as i64) as f64)
                / (2.0 * (q as f64 - p as f64));
            if k > 0 && s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as i64 - p as i64;
        out[q] = d * d + f[p];
    }
}

/// Exact squared Euclidean distance to the nearest `true` pixel.
fn squared_edt(feature: &[bool], h: usize, w: usize) -> Vec<i64> {
    // Column pass: squared distance to the nearest feature in each column.
    let mut col = vec![INF; h * w];
    for x in 0..w {
        let mut prev = INF;
        for y in 0..h {
            prev = if feature[y * w + x] {
                0
            } else if prev >= INF {
                INF
            } else {
                prev + 1
            };
            col[y * w + x] = prev;
        }
        let mut prev = INF;
        for y in (0..h).rev() {
            prev = if feature[y * w + x] {
                0
            } else if prev >= INF {
                INF
            } else {
                prev + 1
            };
            if prev < col[y * w + x] {
                col[y * w + x] = prev;
            }
        }
        for y in 0..h {
            let v = col[y * w + x];
            if v < INF {
                col[y * w + x] = v * v;
            }
        }
    }
    // Row pass: lower envelope over the column distances.
    let mut out = vec![INF; h * w];
    for y in 0..h {
        dt_1d(&col[y * w..(y + 1) * w], &mut out[y * w..(y + 1) * w]);
    }
    out
}

/// Build the EPSNR mask from a boundary plane (binarized at 0.5): all
/// pixels with Euclidean distance strictly less than `radius` from a
/// boundary pixel.
pub fn edge_mask<T: Scalar>(boundary: &ImagePlane<T>, radius: f64) -> Result<EdgeMask> {
    let (h, w) = (boundary.height, boundary.width);
    let half = T::from_f64(0.5);
    let feature: Vec<bool> = boundary.data.iter().map(|&v| v >= half).collect();
    if !feature.iter().any(|&v| v) {
        return Err(Error::EmptyMask);
    }
    let d2 = squared_edt(&feature, h, w);
    let r2 = radius * radius;
    let mask: Vec<bool> = d2.iter().map(|&d| d < INF && (d as f64) < r2).collect();
    let edge_pixels = mask.iter().filter(|&&m| m).count();
    Ok(EdgeMask {
        height: h,
        width: w,
        mask,
        edge_pixels,
    })
}

/// Union of the masks from several boundary annotations.
pub fn edge_mask_union<T: Scalar>(boundaries: &[ImagePlane<T>], radius: f64) -> Result<EdgeMask> {
    let mut out: Option<EdgeMask> = None;
    for b in boundaries {
        let m = edge_mask(b, radius)?;
        out = Some(match out {
            None => m,
            Some(mut acc) => {
                if acc.height != m.height || acc.width != m.width {
                    return Err(Error::invalid("boundary planes of differing sizes"));
                }
                for (a, b) in acc.mask.iter_mut().zip(&m.mask) {
                    *a |= *b;
                }
                acc.edge_pixels = acc.mask.iter().filter(|&&v| v).count();
                acc
            }
        });
    }
    out.ok_or(Error::EmptyMask)
}

/// PSNR restricted to the mask: `10 log10(MAX^2 / mean_E (G-P)^2)`.
pub fn epsnr<T: Scalar>(pair: &EvalPair<T>, mask: &EdgeMask) -> Result<f64> {
    if mask.height != pair.gt.height || mask.width != pair.gt.width {
        return Err(Error::invalid(format!(
            "mask {}x{} does not match pair {}x{}",
            mask.height, mask.width, pair.gt.height, pair.gt.width
        )));
    }
    if mask.edge_pixels == 0 {
        return Err(Error::EmptyMask);
    }
    let mut acc = 0.0f64;
    for i in 0..mask.mask.len() {
        if mask.mask[i] {
            let d = (pair.gt.data[i].as_f64() - pair.pred.data[i].as_f64()) * MAX_I;
            acc += d * d;
        }
    }
    let mse = acc / mask.edge_pixels as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_I * MAX_I / mse).log10()
    })
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub epsnr: f64,
    pub edge_pixels: usize,
}

/// Render the per-image rows plus an aggregate `mean` row. Infinite values
/// print as `inf` and are excluded from the means; the number of exclusions
/// is returned alongside the text.
pub fn report_csv(rows: &[EvalRow]) -> (String, usize) {
    let mut out = String::from("image,psnr,ssim,epsnr,edge_pixels\n");
    let mut excluded = 0usize;
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    let mut edge_total = 0usize;
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.6},{:.4},{}\n",
            r.image, r.psnr, r.ssim, r.epsnr, r.edge_pixels
        ));
        for (i, v) in [r.psnr, r.ssim, r.epsnr].into_iter().enumerate() {
            if v.is_finite() {
                sums[i] += v;
                counts[i] += 1;
            } else {
                excluded += 1;
            }
        }
        edge_total += r.edge_pixels;
    }
    let mean = |i: usize| {
        if counts[i] == 0 {
            f64::NAN
        } else {
            sums[i] / counts[i] as f64
        }
    };
    out.push_str(&format!(
        "mean,{:.4},{:.6},{:.4},{}\n",
        mean(0),
        mean(1),
        mean(2),
        edge_total
    ));
    (out, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImagePlane<f64> {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        ImagePlane::new(h, w, data).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        let g = plane(16, 16, |y, x| ((y * 16 + x) % 200) as f64 / 255.0);
        let ident = EvalPair::new(&g, &g, 0).unwrap();
        assert!(psnr(&ident).is_infinite());

        let p = plane(16, 16, |y, x| g.at(y, x) + 16.0 / 255.0);
        let pair = EvalPair::new(&g, &p, 0).unwrap();
        let expect = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&pair) - expect).abs() < 1e-9);
        assert!((expect - 24.0484).abs() < 1e-3);
    }

    #[test]
    fn psnr_is_symmetric() {
        let g = plane(12, 12, |y, x| (y as f64 * 0.03 + x as f64 * 0.01).fract());
        let p = plane(12, 12, |y, x| (x as f64 * 0.05 + y as f64 * 0.02).fract());
        let a = EvalPair::new(&g, &p, 0).unwrap();
        let b = EvalPair::new(&p, &g, 0).unwrap();
        assert_eq!(psnr(&a), psnr(&b));
    }

    #[test]
    fn pair_shaves_and_validates() {
        let g = plane(10, 10, |_, _| 0.5);
        let p = plane(10, 10, |_, _| 0.25);
        let pair = EvalPair::new(&g, &p, 3).unwrap();
        assert_eq!(pair.gt.height, 4);
        assert!(EvalPair::new(&g, &p, 5).is_err());
        let q = plane(9, 10, |_, _| 0.0);
        assert!(EvalPair::new(&g, &q, 0).is_err());
    }

    #[test]
    fn ssim_identity_and_noise_ordering() {
        let g = plane(24, 24, |y, x| {
            0.5 + 0.3 * ((x as f64 / 5.0).sin() * (y as f64 / 7.0).cos())
        });
        let ident = EvalPair::new(&g, &g, 0).unwrap();
        assert!((ssim(&ident).unwrap() - 1.0).abs() < 1e-12);

        let mut scores = Vec::new();
        for (i, amp) in [0.01, 0.05, 0.15].into_iter().enumerate() {
            let p = plane(24, 24, |y, x| {
                let n = (((y * 31 + x * 17 + i * 7) % 13) as f64 / 13.0 - 0.5) * amp;
                (g.at(y, x) + n).clamp(0.0, 1.0)
            });
            scores.push(ssim(&EvalPair::new(&g, &p, 0).unwrap()).unwrap());
        }
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn ssim_rejects_small_planes() {
        let g = plane(8, 8, |_, _| 0.5);
        assert!(ssim(&EvalPair::new(&g, &g, 0).unwrap()).is_err());
    }

    /// Brute-force nearest-boundary distances for the mask oracle.
    fn edt_oracle(feature: &[bool], h: usize, w: usize) -> Vec<f64> {
        let pts: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| feature[i])
            .map(|i| (i / w, i % w))
            .collect();
        (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                pts.iter()
                    .map(|&(py, px)| {
                        let dy = y as f64 - py as f64;
                        let dx = x as f64 - px as f64;
                        (dy * dy + dx * dx).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_pixel_mask_is_3x3() {
        let mut b = plane(9, 9, |_, _| 0.0);
        *b.at_mut(4, 4) = 1.0;
        let m = edge_mask(&b, 2.0).unwrap();
        assert_eq!(m.edge_pixels, 9);
        for y in 0..9 {
            for x in 0..9 {
                let inside = (3..=5).contains(&y) && (3..=5).contains(&x);
                assert_eq!(m.mask[y * 9 + x], inside, "({y},{x})");
            }
        }
    }

    #[test]
    fn full_boundary_masks_everything() {
        let b = plane(6, 7, |_, _| 1.0);
        let m = edge_mask(&b, 2.0).unwrap();
        assert_eq!(m.edge_pixels, 42);
    }

    #[test]
    fn empty_boundary_is_an_error() {
        let b = plane(6, 6, |_, _| 0.0);
        assert!(matches!(edge_mask(&b, 2.0), Err(Error::EmptyMask)));
    }

    #[test]
    fn edt_matches_brute_force_oracle() {
        // deterministic sparse pattern
        for (h, w, salt) in [(13, 17, 1usize), (20, 9, 5), (16, 16, 11)] {
            let b = plane(h, w, |y, x| {
                if (y * 7 + x * 13 + salt) % 23 == 0 {
                    1.0
                } else {
                    0.0
                }
            });
            let feature: Vec<bool> = b.data.iter().map(|&v| v >= 0.5).collect();
            if !feature.iter().any(|&v| v) {
                continue;
            }
            let want = edt_oracle(&feature, h, w);
            let got = squared_edt(&feature, h, w);
            for i in 0..h * w {
                let g = (got[i] as f64).sqrt();
                assert!(
                    (g - want[i]).abs() < 1e-9,
                    "({},{}): {g} vs {}",
                    i / w,
                    i % w,
                    want[i]
                );
            }
            // mask agrees with the oracle under the strict inequality
            let m = edge_mask(&b, 2.0).unwrap();
            for i in 0..h * w {
                assert_eq!(m.mask[i], want[i] < 2.0);
            }
        }
    }

    #[test]
    fn epsnr_uniform_error_equals_psnr() {
        let g = plane(16, 16, |y, x| ((y + x) % 11) as f64 / 20.0);
        let p = plane(16, 16, |y, x| g.at(y, x) + 0.05);
        let mut b = plane(16, 16, |_, _| 0.0);
        *b.at_mut(8, 8) = 1.0;
        *b.at_mut(3, 12) = 1.0;
        let pair = EvalPair::new(&g, &p, 0).unwrap();
        let mask = edge_mask(&b, 2.0).unwrap();
        let e = epsnr(&pair, &mask).unwrap();
        assert!((e - psnr(&pair)).abs() < 1e-9);
    }

    #[test]
    fn epsnr_masked_perfection_is_infinite() {
        let g = plane(12, 12, |_, _| 0.5);
        let mut p = g.clone();
        *p.at_mut(0, 0) = 0.9; // error far away from the mask
        let mut b = plane(12, 12, |_, _| 0.0);
        *b.at_mut(8, 8) = 1.0;
        let pair = EvalPair::new(&g, &p, 0).unwrap();
        let mask = edge_mask(&b, 2.0).unwrap();
        assert!(epsnr(&pair, &mask).unwrap().is_infinite());
    }

    #[test]
    fn epsnr_union_of_identical_annotations_matches_single() {
        let g = plane(16, 16, |y, x| (y * x % 7) as f64 / 7.0);
        let p = plane(16, 16, |y, x| ((y + 1) * x % 7) as f64 / 7.0);
        let mut b = plane(16, 16, |_, _| 0.0);
        *b.at_mut(5, 5) = 1.0;
        *b.at_mut(10, 3) = 1.0;
        let pair = EvalPair::new(&g, &p, 0).unwrap();
        let single = edge_mask(&b, 2.0).unwrap();
        let union = edge_mask_union(&[b.clone(), b.clone(), b], 2.0).unwrap();
        assert_eq!(single.mask, union.mask);
        assert_eq!(
            epsnr(&pair, &single).unwrap(),
            epsnr(&pair, &union).unwrap()
        );
    }

    #[test]
    fn report_formats_inf_and_means() {
        let rows = vec![
            EvalRow { image: "a".into(), psnr: 30.0, ssim: 0.9, epsnr: 28.0, edge_pixels: 10 },
            EvalRow {
                image: "b".into(),
                psnr: f64::INFINITY,
                ssim: 1.0,
                epsnr: f64::INFINITY,
                edge_pixels: 5,
            },
        ];
        let (csv, excluded) = report_csv(&rows);
        assert!(csv.starts_with("image,psnr,ssim,epsnr,edge_pixels\n"));
        assert!(csv.contains("b,inf,1.000000,inf,5\n"));
        assert!(csv.contains("mean,30.0000,0.950000,28.0000,15\n"));
        assert_eq!(excluded, 2);
    }
}
