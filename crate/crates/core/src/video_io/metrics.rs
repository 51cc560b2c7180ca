//! PSNR and SSIM on `[0, 1]` float frames (no 8-bit quantization).

use crate::error::{Error, Result};
use crate::splat2d::Frame;

/// Reported PSNR for identical frames.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_shape(a: &Frame, b: &Frame) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "frames differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_shape(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * m.log10()).min(PSNR_CAP))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SsimMode {
    /// Rec. 601 luma.
    #[default]
    Luma,
    /// Mean of the per-channel SSIM values.
    PerChannel,
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" filtering of a `w × h` plane.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `ow × oh` map back to `w × h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for j in 0..SSIM_WINDOW {
                tmp[(y + j) * ow + x] += k[j] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for i in 0..SSIM_WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    out
}

fn plane(frame: &Frame, weights: [f64; 3]) -> Vec<f64> {
    frame
        .data
        .chunks_exact(3)
        .map(|p| weights[0] * p[0] + weights[1] * p[1] + weights[2] * p[2])
        .collect()
}

/// Mean SSIM of two planes and, optionally, its gradient w.r.t. `a`.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = gaussian_kernel();
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let e_aa = filter_valid(&sq(a), w, h, &k);
    let e_bb = filter_valid(&sq(b), w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    let (mut d_mu, mut d_eaa, mut d_eab) = if want_grad {
        (vec![0.0; n], vec![0.0; n], vec![0.0; n])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = var_a + var_b + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let ds_dvar = -s / b2;
            let ds_dcov = 2.0 * a1 / (b1 * b2);
            let ds_dmu = 2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1;
            d_mu[i] = (ds_dmu + ds_dvar * (-2.0 * ma) + ds_dcov * (-mb)) / n as f64;
            d_eaa[i] = ds_dvar / n as f64;
            d_eab[i] = ds_dcov / n as f64;
        }
    }
    let value = total / n as f64;
    if !want_grad {
        return (value, None);
    }
    let g_mu = filter_valid_adjoint(&d_mu, w, h, &k);
    let g_aa = filter_valid_adjoint(&d_eaa, w, h, &k);
    let g_ab = filter_valid_adjoint(&d_eab, w, h, &k);
    let grad = (0..a.len())
        .map(|p| g_mu[p] + 2.0 * a[p] * g_aa[p] + b[p] * g_ab[p])
        .collect();
    (value, Some(grad))
}

fn check_ssim_shape(a: &Frame, b: &Frame) -> Result<()> {
    check_shape(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, L = 1.
pub fn ssim(a: &Frame, b: &Frame, mode: SsimMode) -> Result<f64> {
    Ok(ssim_with_grad_opt(a, b, mode, false)?.0)
}

/// SSIM and its gradient w.r.t. every value of `a`.
pub fn ssim_with_grad(a: &Frame, b: &Frame, mode: SsimMode) -> Result<(f64, Frame)> {
    let (v, g) = ssim_with_grad_opt(a, b, mode, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ssim_with_grad_opt(a: &Frame, b: &Frame, mode: SsimMode, want_grad: bool) -> Result<(f64, Option<Frame>)> {
    check_ssim_shape(a, b)?;
    let (w, h) = (a.width, a.height);
    let channels: Vec<[f64; 3]> = match mode {
        SsimMode::Luma => vec![LUMA],
        SsimMode::PerChannel => vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };
    let share = 1.0 / channels.len() as f64;
    let mut value = 0.0;
    let mut grad = want_grad.then(|| Frame::new(w, h));
    for weights in channels {
        let (v, g) = ssim_plane(&plane(a, weights), &plane(b, weights), w, h, want_grad);
        value += share * v;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (p, gp) in g.iter().enumerate() {
                for ch in 0..3 {
                    out.data[p * 3 + ch] += share * weights[ch] * gp;
                }
            }
        }
    }
    Ok((value, grad))
}
