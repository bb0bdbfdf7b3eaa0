use crate::error::{Error, Result};
use crate::rx::{DisplayImage, EnvelopeImage};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn same_dims(a: &DisplayImage, b: &DisplayImage) -> Result<()> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::shape(format!(
            "images are {}×{} and {}×{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` on 8-bit images, capped for identical inputs.
pub fn psnr(pred: &DisplayImage, reference: &DisplayImage) -> Result<f64> {
    same_dims(pred, reference)?;
    let sse: f64 = pred
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse / pred.pixels.len() as f64;
    Ok((10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|k| {
            let x = k as f64 - c;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of a `rows × cols` plane.
fn filter_valid(plane: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (ro, co) = (rows + 1 - n, cols + 1 - n);
    let mut horiz = vec![0.0; rows * co];
    for r in 0..rows {
        for c in 0..co {
            horiz[r * co + c] = taps.iter().zip(&plane[r * cols + c..r * cols + c + n]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ro * co];
    for r in 0..ro {
        for c in 0..co {
            out[r * co + c] = taps.iter().enumerate().map(|(k, w)| w * horiz[(r + k) * co + c]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5) over all
/// window positions fully inside the image.
pub fn ssim(pred: &DisplayImage, reference: &DisplayImage) -> Result<f64> {
    same_dims(pred, reference)?;
    let (rows, cols) = (pred.rows, pred.cols);
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::config(format!(
            "image {rows}×{cols} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window"
        )));
    }
    let x = pred.as_f64();
    let y = reference.as_f64();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let product = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_x = filter_valid(&x, rows, cols, &taps);
    let mu_y = filter_valid(&y, rows, cols, &taps);
    let xx = filter_valid(&product(&x, &x), rows, cols, &taps);
    let yy = filter_valid(&product(&y, &y), rows, cols, &taps);
    let xy = filter_valid(&product(&x, &y), rows, cols, &taps);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let total: f64 = (0..mu_x.len())
        .map(|k| {
            let (mx, my) = (mu_x[k], mu_y[k]);
            let vx = xx[k] - mx * mx;
            let vy = yy[k] - my * my;
            let cov = xy[k] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Mean absolute error of envelope images.
pub fn l1_metric(pred: &EnvelopeImage, reference: &EnvelopeImage) -> Result<f64> {
    if (pred.lines, pred.samples) != (reference.lines, reference.samples) {
        return Err(Error::shape("envelope images differ in shape"));
    }
    let s: f64 = pred.values.iter().zip(&reference.values).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / pred.values.len() as f64)
}

/// `|pred − ref|` on display images, clamped to `[0, max]`.
pub fn difference_image(pred: &DisplayImage, reference: &DisplayImage, max: u8) -> Result<DisplayImage> {
    same_dims(pred, reference)?;
    let pixels = pred
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(&a, &b)| a.abs_diff(b).min(max))
        .collect();
    DisplayImage::new(pred.rows, pred.cols, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(rows: usize, cols: usize, f: impl Fn(usize) -> u8) -> DisplayImage {
        DisplayImage::new(rows, cols, (0..rows * cols).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = img(4, 4, |k| (k * 9 % 200) as u8);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b = img(4, 4, |k| (k * 9 % 200) as u8 + 1);
        let p = psnr(&b, &a).unwrap();
        assert!((p - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((p - 48.13).abs() < 0.005);
        assert_eq!(psnr(&a, &b).unwrap(), p);
    }

    #[test]
    fn ssim_identity_and_small_image() {
        let a = img(16, 16, |k| (k * 37 % 256) as u8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let small = img(10, 16, |_| 0);
        assert!(matches!(ssim(&small, &small), Err(Error::Config(_))));
    }

    #[test]
    fn ssim_of_negative_is_nonpositive() {
        let a = img(20, 20, |k| if (k * 7919) % 13 < 6 { 20 } else { 235 });
        let neg = DisplayImage::new(20, 20, a.pixels.iter().map(|p| 255 - p).collect()).unwrap();
        assert!(ssim(&a, &neg).unwrap() <= 0.0);
    }

    #[test]
    fn difference_cases() {
        let a = img(3, 3, |_| 10);
        assert!(difference_image(&a, &a, 100).unwrap().pixels.iter().all(|&p| p == 0));
        let b = img(3, 3, |k| if k == 4 { 160 } else { 50 });
        let d = difference_image(&b, &a, 100).unwrap();
        assert_eq!(d.pixels[4], 100);
        assert_eq!(d.pixels[0], 40);
    }

    #[test]
    fn l1_offset() {
        let a = EnvelopeImage::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(l1_metric(&a, &a).unwrap(), 0.0);
        let b = EnvelopeImage::new(2, 3, a.values.iter().map(|v| v + 2.5).collect()).unwrap();
        assert_eq!(l1_metric(&b, &a).unwrap(), 2.5);
    }
}
