//! Peak signal-to-noise ratio over 8-bit RGB images.

use image::RgbImage;

use crate::error::{Error, Result};

/// Which pixels enter the mean squared error.
#[derive(Debug, Clone, Copy)]
pub enum PsnrMode<'a> {
    Full,
    /// Only pixels whose mask entry is `false`.
    Unmasked(&'a [bool]),
}

/// Mean squared error over all three channels of the selected pixels.
pub fn mse(pred: &RgbImage, gt: &RgbImage, mode: PsnrMode<'_>) -> Result<f64> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    let mut sum = 0u64;
    let mut count = 0u64;
    let pairs = pred.pixels().zip(gt.pixels());
    let mut add = |a: &image::Rgb<u8>, b: &image::Rgb<u8>| {
        for c in 0..3 {
            let d = a.0[c] as i64 - b.0[c] as i64;
            sum += (d * d) as u64;
        }
        count += 3;
    };
    match mode {
        PsnrMode::Full => pairs.for_each(|(a, b)| add(a, b)),
        PsnrMode::Unmasked(mask) => {
            if mask.len() != gt.len() / 3 {
                return Err(Error::DimensionMismatch(format!(
                    "mask has {} entries for {} pixels",
                    mask.len(),
                    gt.len() / 3
                )));
            }
            pairs
                .zip(mask)
                .filter(|(_, &m)| !m)
                .for_each(|((a, b), _)| add(a, b));
        }
    }
    if count == 0 {
        return Err(Error::InvalidParams("no unmasked pixels to score".into()));
    }
    Ok(sum as f64 / count as f64)
}

/// `10 log10(255^2 / MSE)`; `+inf` for identical inputs.
pub fn psnr(pred: &RgbImage, gt: &RgbImage, mode: PsnrMode<'_>) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt, mode)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// Formats a PSNR value, writing `inf` for identical images.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn noise_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = ((x * 37 + y * 91) % 200) as u8 + 20;
            Rgb([v, v / 2, 255 - v])
        })
    }

    #[test]
    fn identical_is_infinite() {
        let a = noise_image(8, 5);
        assert_eq!(psnr(&a, &a, PsnrMode::Full).unwrap(), f64::INFINITY);
        assert_eq!(format_db(f64::INFINITY), "inf");
    }

    #[test]
    fn uniform_offset() {
        let a = noise_image(8, 5);
        let b = RgbImage::from_fn(8, 5, |x, y| Rgb(a.get_pixel(x, y).0.map(|c| c + 5)));
        let v = psnr(&b, &a, PsnrMode::Full).unwrap();
        assert!((v - 34.1514).abs() < 1e-3, "{v}");
    }

    #[test]
    fn inverted_checkerboard_is_zero() {
        let a = RgbImage::from_fn(6, 6, |x, y| Rgb([((x + y) % 2 * 255) as u8; 3]));
        let b = RgbImage::from_fn(6, 6, |x, y| Rgb([((x + y + 1) % 2 * 255) as u8; 3]));
        assert_eq!(psnr(&a, &b, PsnrMode::Full).unwrap(), 0.0);
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let a = RgbImage::from_pixel(2, 1, Rgb([10, 10, 10]));
        let mut b = a.clone();
        b.put_pixel(1, 0, Rgb([255, 255, 255]));
        let mask = [false, true];
        assert_eq!(psnr(&b, &a, PsnrMode::Unmasked(&mask)).unwrap(), f64::INFINITY);
        assert!(psnr(&b, &a, PsnrMode::Full).unwrap().is_finite());
        assert!(psnr(&b, &a, PsnrMode::Unmasked(&[true, true])).is_err());
        assert!(psnr(&b, &a, PsnrMode::Unmasked(&[true])).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            psnr(&noise_image(4, 4), &noise_image(4, 5), PsnrMode::Full),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
