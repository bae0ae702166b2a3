//! Structural similarity over interleaved RGB images, with its gradient.
//!
//! 11×11 Gaussian window (σ = 1.5), `k1 = 0.01`, `k2 = 0.03`, dynamic range
//! 1. Only windows that fit entirely inside the image are evaluated; the
//! result is the mean over those windows and the three channels.

use super::LossError;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

pub fn c1() -> f64 {
    K1 * K1
}

pub fn c2() -> f64 {
    K2 * K2
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps() -> [f64; WINDOW] {
    let mut taps = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let x = i as f64 - half;
        *t = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

/// Valid-mode separable filter: output is `(h − 10) × (w − 10)`.
fn filter_valid(src: &Plane, taps: &[f64; WINDOW]) -> Plane {
    let ow = src.w + 1 - WINDOW;
    let oh = src.h + 1 - WINDOW;
    let mut tmp = vec![0.0; src.h * ow];
    for y in 0..src.h {
        let row = &src.data[y * src.w..(y + 1) * src.w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (k, t) in taps.iter().enumerate() {
            let row = &tmp[(y + k) * ow..(y + k + 1) * ow];
            for x in 0..ow {
                out[y * ow + x] += t * row[x];
            }
        }
    }
    Plane { w: ow, h: oh, data: out }
}

/// Adjoint of [`filter_valid`]: scatters a `(h − 10) × (w − 10)` map back
/// onto the full image grid.
fn filter_adjoint(src: &Plane, w: usize, h: usize, taps: &[f64; WINDOW]) -> Vec<f64> {
    let mut tmp = vec![0.0; h * src.w];
    for y in 0..src.h {
        for (k, t) in taps.iter().enumerate() {
            let dst = &mut tmp[(y + k) * src.w..(y + k + 1) * src.w];
            let row = &src.data[y * src.w..(y + 1) * src.w];
            for x in 0..src.w {
                dst[x] += t * row[x];
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &tmp[y * src.w..(y + 1) * src.w];
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..src.w {
            for (k, t) in taps.iter().enumerate() {
                dst[x + k] += t * row[x];
            }
        }
    }
    out
}

fn channel(img: &[f64], w: usize, h: usize, c: usize) -> Plane {
    Plane {
        w,
        h,
        data: (0..w * h).map(|p| img[p * 3 + c]).collect(),
    }
}

fn check(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<(), LossError> {
    if a.len() != w * h * 3 || b.len() != w * h * 3 {
        return Err(LossError::ShapeMismatch(format!(
            "expected {}x{}x3 images, got {} and {} values",
            w,
            h,
            a.len(),
            b.len()
        )));
    }
    if w < WINDOW || h < WINDOW {
        return Err(LossError::TooSmall { width: w, height: h });
    }
    Ok(())
}

/// Mean SSIM of two `h × w × 3` images.
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64, LossError> {
    ssim_impl(a, b, w, h, false).map(|(v, _)| v)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>), LossError> {
    ssim_impl(a, b, w, h, true)
}

fn ssim_impl(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> Result<(f64, Vec<f64>), LossError> {
    check(a, b, w, h)?;
    let taps = gaussian_taps();
    let (c1, c2) = (c1(), c2());
    let windows = (w + 1 - WINDOW) * (h + 1 - WINDOW);
    let count = (windows * 3) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; w * h * 3] } else { Vec::new() };
    for c in 0..3 {
        let pa = channel(a, w, h, c);
        let pb = channel(b, w, h, c);
        let sq = |p: &Plane, q: &Plane| Plane {
            w,
            h,
            data: p.data.iter().zip(&q.data).map(|(x, y)| x * y).collect(),
        };
        let mu_a = filter_valid(&pa, &taps);
        let mu_b = filter_valid(&pb, &taps);
        let e_aa = filter_valid(&sq(&pa, &pa), &taps);
        let e_bb = filter_valid(&sq(&pb, &pb), &taps);
        let e_ab = filter_valid(&sq(&pa, &pb), &taps);
        let n = mu_a.data.len();
        let mut d_mu = vec![0.0; n];
        // Gradient wrt a = g_mu + a·g_sym + (b − a)·g_eab, where g_sym is the
        // filtered coefficient of `2·e_aa + e_ab`. Grouped this way it is
        // exactly zero when a and b are bitwise equal.
        let mut d_sym = vec![0.0; n];
        let mut d_eab = vec![0.0; n];
        for i in 0..n {
            let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
            let va = e_aa.data[i] - ma * ma;
            let vb = e_bb.data[i] - mb * mb;
            let cov = e_ab.data[i] - ma * mb;
            let n1 = 2.0 * ma * mb + c1;
            let n2 = 2.0 * cov + c2;
            let d1 = ma * ma + mb * mb + c1;
            let d2 = va + vb + c2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                d_mu[i] = 2.0 * (mb * (n2 - n1) - ma * s * (d2 - d1)) / (d1 * d2);
                d_sym[i] = 2.0 * n1 * (va + vb - 2.0 * cov) / (d1 * d2 * d2);
                d_eab[i] = 2.0 * n1 / (d1 * d2);
            }
        }
        if want_grad {
            let ow = mu_a.w;
            let oh = mu_a.h;
            let wrap = |d: Vec<f64>| Plane {
                w: ow,
                h: oh,
                data: d.into_iter().map(|v| v / count).collect(),
            };
            let g_mu = filter_adjoint(&wrap(d_mu), w, h, &taps);
            let g_sym = filter_adjoint(&wrap(d_sym), w, h, &taps);
            let g_eab = filter_adjoint(&wrap(d_eab), w, h, &taps);
            for p in 0..w * h {
                let (x, y) = (pa.data[p], pb.data[p]);
                grad[p * 3 + c] = g_mu[p] + x * g_sym[p] + (y - x) * g_eab[p];
            }
        }
    }
    Ok((total / count, grad))
}
