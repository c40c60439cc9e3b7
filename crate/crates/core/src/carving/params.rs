use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds and weight shapes for depth and color voting at one voxel scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarveParams {
    /// Voxel edge in meters.
    pub voxel_size: f64,
    /// Depth agreement needed for a "seen" vote, meters.
    pub eps_seen: f64,
    /// A voxel needs strictly more seen votes than this to survive.
    pub seen_threshold: u32,
    /// Distance decay: `f1(max_distance) = 1 / alpha`.
    pub alpha: f64,
    /// Width of the occlusion Gaussian, meters.
    pub sigma: f64,
    /// Minimum normalized weight of the dominant color bin (exclusive).
    pub eps_hsv: f64,
    /// Voxels farther than this from the camera are ignored, meters.
    pub max_distance: f64,
}

impl CarveParams {
    pub const DEFAULT_SEEN_THRESHOLD: u32 = 3;
    pub const DEFAULT_ALPHA: f64 = 10.0;
    pub const DEFAULT_SIGMA: f64 = 5.0;
    pub const DEFAULT_EPS_HSV: f64 = 0.3;
    pub const DEFAULT_MAX_DISTANCE: f64 = 250.0;

    /// Defaults for a voxel size; `eps_seen` is two voxels.
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        CarveParams {
            voxel_size,
            eps_seen: 2.0 * voxel_size,
            seen_threshold: Self::DEFAULT_SEEN_THRESHOLD,
            alpha: Self::DEFAULT_ALPHA,
            sigma: Self::DEFAULT_SIGMA,
            eps_hsv: Self::DEFAULT_EPS_HSV,
            max_distance: Self::DEFAULT_MAX_DISTANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("voxel_size", self.voxel_size)?;
        positive("eps_seen", self.eps_seen)?;
        positive("sigma", self.sigma)?;
        positive("eps_hsv", self.eps_hsv)?;
        positive("max_distance", self.max_distance)?;
        // f1 stays within (0, 1] only for alpha >= 1
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if self.eps_hsv > 1.0 {
            return Err(Error::InvalidParams(format!(
                "eps_hsv must be in (0, 1], got {}",
                self.eps_hsv
            )));
        }
        Ok(())
    }
}

/// Distance weight `exp(-ln(alpha) / max_distance * distance)`.
#[inline]
pub fn f1(distance: f64, alpha: f64, max_distance: f64) -> f64 {
    (-alpha.ln() / max_distance * distance).exp()
}

/// Occlusion weight `exp(-diff^2 / (2 sigma^2))`.
#[inline]
pub fn f2(depth_diff: f64, sigma: f64) -> f64 {
    (-(depth_diff * depth_diff) / (2.0 * sigma * sigma)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn analytic_values() {
        assert_eq!(f1(0.0, 10.0, 250.0), 1.0);
        assert!((f1(250.0, 10.0, 250.0) - 0.1).abs() < 1e-12);
        assert!((f1(125.0, 10.0, 250.0) - 1.0 / 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(f2(0.0, 5.0), 1.0);
        assert!((f2(5.0, 5.0) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn three_sigma_tail() {
        assert!(f2(15.0, 5.0) < 0.012);
    }

    #[test]
    fn defaults_validate() {
        let p = CarveParams::for_voxel_size(0.5);
        assert_eq!(p.eps_seen, 1.0);
        p.validate().unwrap();
        assert!(CarveParams { alpha: 0.5, ..p }.validate().is_err());
        assert!(CarveParams { eps_hsv: 1.5, ..p }.validate().is_err());
        assert!(CarveParams { sigma: 0.0, ..p }.validate().is_err());
        assert!(CarveParams { max_distance: f64::NAN, ..p }.validate().is_err());
        assert!(CarveParams { eps_hsv: 1.0, ..p }.validate().is_ok());
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval(x in 0.0..1e4f64, alpha in 1.0..1e3f64, sigma in 1e-3..1e3f64) {
            let a = f1(x, alpha, 250.0);
            let b = f2(x, sigma);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert_eq!(f2(x, sigma), f2(-x, sigma));
        }
    }
}
