//! Image quality metrics.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5), `C1 = 0.01^2`,
//! `C2 = 0.03^2` on `[0, 1]` data, evaluated only where the window fits
//! inside the image ("valid" filtering, as in the Mip-NeRF evaluation code)
//! and averaged over positions and channels.

use crate::imaging::Image;

/// Reported in place of infinity for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert!(a.same_size(b), "image sizes differ");
    let n = a.data.len().max(1) as f64;
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    psnr_from_mse(mse(a, b))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of one channel plane.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = g.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..k).map(|i| g[i] * x[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * tmp[(r + i) * ow + c]).sum();
        }
    }
    (out, ow, oh)
}

pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert!(a.same_size(b), "image sizes differ");
    let (w, h) = (a.width, a.height);
    let mut size = 11.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let g = gaussian_window(size.max(1), 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data.iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &g);
        let (my, _, _) = filter_valid(&y, w, h, &g);
        let (sxx, _, _) = filter_valid(&xx, w, h, &g);
        let (syy, _, _) = filter_valid(&yy, w, h, &g);
        let (sxy, _, _) = filter_valid(&xy, w, h, &g);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = (sxx[i] - ux * ux).max(0.0);
            let vy = (syy[i] - uy * uy).max(0.0);
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a), PSNR_CAP);
        assert_eq!(psnr(&a, &b), psnr(&b, &a));
    }

    #[test]
    fn ssim_identity_and_constant_negative() {
        let mut a = Image::new(16, 16);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = ((i * 37) % 11) as f64 / 10.0;
        }
        assert!((ssim(&a, &a) - 1.0).abs() < 1e-12);
        let g = Image::filled(16, 16, [0.5; 3]);
        let neg = Image::filled(16, 16, [0.5; 3]);
        assert!((ssim(&g, &neg) - 1.0).abs() < 1e-12);
    }
}
