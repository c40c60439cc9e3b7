//! HSV conversion and the 15x10x10 color quantization used for color voting.

use crate::error::{Error, Result};

pub const HUE_BINS: u16 = 15;
pub const SAT_BINS: u16 = 10;
pub const VAL_BINS: u16 = 10;
pub const BIN_COUNT: u16 = HUE_BINS * SAT_BINS * VAL_BINS;

const HUE_STEP: f64 = 360.0 / HUE_BINS as f64;

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Index of one quantized HSV cell, `h_bin * 100 + s_bin * 10 + v_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HsvBin(u16);

impl HsvBin {
    pub fn new(index: u16) -> Result<Self> {
        if index < BIN_COUNT {
            Ok(HsvBin(index))
        } else {
            Err(Error::ColorOutOfRange(format!(
                "bin index {index} not below {BIN_COUNT}"
            )))
        }
    }

    #[inline]
    pub fn index(self) -> u16 {
        self.0
    }

    pub fn from_parts(h: u16, s: u16, v: u16) -> Result<Self> {
        if h >= HUE_BINS || s >= SAT_BINS || v >= VAL_BINS {
            return Err(Error::ColorOutOfRange(format!("bin parts ({h}, {s}, {v})")));
        }
        Ok(HsvBin(h * SAT_BINS * VAL_BINS + s * VAL_BINS + v))
    }

    pub fn parts(self) -> (u16, u16, u16) {
        (
            self.0 / (SAT_BINS * VAL_BINS),
            (self.0 / VAL_BINS) % SAT_BINS,
            self.0 % VAL_BINS,
        )
    }

    /// Midpoint of the bin's cell in HSV space.
    pub fn midpoint(self) -> Hsv {
        let (h, s, v) = self.parts();
        Hsv {
            h: (h as f64 + 0.5) * HUE_STEP,
            s: (s as f64 + 0.5) / SAT_BINS as f64,
            v: (v as f64 + 0.5) / VAL_BINS as f64,
        }
    }

    pub fn to_rgb(self) -> [u8; 3] {
        hsv_to_rgb(self.midpoint())
    }
}

/// 8-bit sRGB to HSV, without linearization.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Hsv {
        h: if h >= 360.0 { 0.0 } else { h },
        s,
        v: max,
    }
}

/// HSV to 8-bit RGB, rounding each channel to nearest.
pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    hsv_to_rgb_f64(hsv).map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// HSV to RGB in `[0, 1]` without quantization.
pub fn hsv_to_rgb_f64(hsv: Hsv) -> [f64; 3] {
    let c = hsv.v * hsv.s;
    let hp = hsv.h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let m = hsv.v - c;
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Quantizes an HSV triple; rejects components outside their ranges.
pub fn hsv_discretize(hsv: Hsv) -> Result<HsvBin> {
    let Hsv { h, s, v } = hsv;
    if !(0.0..360.0).contains(&h) || !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&v) {
        return Err(Error::ColorOutOfRange(format!(
            "HSV ({h}, {s}, {v}) outside [0,360) x [0,1] x [0,1]"
        )));
    }
    let hb = ((h / HUE_STEP).floor() as u16).min(HUE_BINS - 1);
    let sb = ((s * SAT_BINS as f64).floor() as u16).min(SAT_BINS - 1);
    let vb = ((v * VAL_BINS as f64).floor() as u16).min(VAL_BINS - 1);
    HsvBin::from_parts(hb, sb, vb)
}

/// Quantized bin of an 8-bit pixel. Total, since `rgb_to_hsv` stays in range.
#[inline]
pub fn rgb_bin(rgb: [u8; 3]) -> HsvBin {
    hsv_discretize(rgb_to_hsv(rgb)).expect("rgb_to_hsv output is always in range")
}

pub fn bin_to_rgb(index: u16) -> Result<[u8; 3]> {
    Ok(HsvBin::new(index)?.to_rgb())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn corner_bins() {
        assert_eq!(hsv_discretize(Hsv { h: 0.0, s: 0.0, v: 0.0 }).unwrap().index(), 0);
        let top = Hsv {
            h: 359.9,
            s: 0.999,
            v: 0.999,
        };
        assert_eq!(hsv_discretize(top).unwrap().index(), 1499);
        let full = Hsv { h: 359.9, s: 1.0, v: 1.0 };
        assert_eq!(hsv_discretize(full).unwrap().index(), 1499);
    }

    #[test]
    fn first_bin_midpoint() {
        let bin = hsv_discretize(Hsv {
            h: 12.0,
            s: 0.05,
            v: 0.05,
        })
        .unwrap();
        assert_eq!(bin.index(), 0);
        let mid = bin.midpoint();
        assert_abs_diff_eq!(mid.h, 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mid.s, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(mid.v, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_rejected() {
        for bad in [
            Hsv { h: 360.0, s: 0.5, v: 0.5 },
            Hsv { h: -1.0, s: 0.5, v: 0.5 },
            Hsv { h: 10.0, s: 1.01, v: 0.5 },
            Hsv { h: 10.0, s: 0.5, v: -0.1 },
            Hsv { h: f64::NAN, s: 0.5, v: 0.5 },
        ] {
            assert!(hsv_discretize(bad).is_err(), "{bad:?}");
        }
        assert!(bin_to_rgb(1500).is_err());
        assert!(bin_to_rgb(1499).is_ok());
    }

    #[test]
    fn dark_bins_stay_dark() {
        for h in 0..HUE_BINS {
            for s in 0..SAT_BINS {
                let rgb = HsvBin::from_parts(h, s, 0).unwrap().to_rgb();
                assert!(rgb.iter().all(|&c| c <= 13), "{rgb:?}");
            }
        }
    }

    #[test]
    fn low_saturation_bins_are_near_gray() {
        for h in 0..HUE_BINS {
            for v in 0..VAL_BINS {
                let [r, g, b] = HsvBin::from_parts(h, 0, v).unwrap().to_rgb();
                let (lo, hi) = (r.min(g).min(b) as i32, r.max(g).max(b) as i32);
                let mid = (lo + hi) as f64 / 2.0;
                for c in [r, g, b] {
                    assert!((c as f64 - mid).abs() <= 7.0, "bin ({h},0,{v}) -> {r},{g},{b}");
                }
            }
        }
    }

    #[test]
    fn primaries() {
        let red = rgb_to_hsv([255, 0, 0]);
        assert_eq!((red.h, red.s, red.v), (0.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([0, 255, 0]).h, 120.0);
        assert_eq!(rgb_to_hsv([0, 0, 255]).h, 240.0);
        assert!(rgb_to_hsv([255, 0, 1]).h < 360.0);
        assert_eq!(hsv_to_rgb(Hsv { h: 240.0, s: 1.0, v: 1.0 }), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(rgb_to_hsv([12, 200, 77])), [12, 200, 77]);
    }

    #[test]
    fn every_8bit_color_has_a_bin() {
        for r in (0..=255u8).step_by(3) {
            for g in (0..=255u8).step_by(5) {
                for b in (0..=255u8).step_by(7) {
                    assert!(rgb_bin([r, g, b]).index() < BIN_COUNT);
                }
            }
        }
    }
}
