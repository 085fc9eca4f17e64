//! Receive-array geometry, steering vectors and beam patterns.
//!
//! A uniform linear array of `M_R` elements with spacing `D` sees a plane
//! wave from direction `theta` with a per-element phase progression
//! `phi = 2*pi*D*sin(theta)*f/c`. Element `m` of the steering vector is
//! `exp(-j*m*phi)`, so element 0 is always `1+0j` and broadside
//! (`theta = 0`) gives zero phase on every element.
//!
//! Pattern-reconfigurable antennas weight each element with a complex
//! response `w_m(theta)`; the weighted steering vector is the Hadamard
//! product `w(theta) .* a(theta)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s used throughout the array model.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Uniform linear array description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Number of receive elements (`M_R >= 2`).
    pub num_antennas: usize,
    /// Inter-element spacing in metres.
    pub element_spacing_m: f64,
    /// Carrier frequency in Hz.
    pub carrier_freq_hz: f64,
}

impl ArrayGeometry {
    pub fn new(num_antennas: usize, element_spacing_m: f64, carrier_freq_hz: f64) -> Result<Self> {
        if num_antennas < 2 {
            return Err(Error::Config(format!(
                "array needs at least 2 antennas, got {num_antennas}"
            )));
        }
        if element_spacing_m <= 0.0 || carrier_freq_hz <= 0.0 {
            return Err(Error::Config(
                "element spacing and carrier frequency must be positive".into(),
            ));
        }
        Ok(Self {
            num_antennas,
            element_spacing_m,
            carrier_freq_hz,
        })
    }

    /// The 4-element, 2.52 cm, 5.745 GHz array used as the default setup.
    pub fn default_array() -> Self {
        Self {
            num_antennas: 4,
            element_spacing_m: 0.0252,
            carrier_freq_hz: 5.745e9,
        }
    }

    /// Per-element phase increment for a wave arriving from `theta_deg`.
    pub fn phase_shift(&self, theta_deg: f64, freq_hz: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.element_spacing_m * theta_deg.to_radians().sin()
            * freq_hz
            / SPEED_OF_LIGHT
    }
}

/// Steering vector `a(theta)` with element `m = 0..M_R-1` equal to
/// `exp(-j*m*phi(theta))`. `theta_deg` must lie in the open interval
/// (-90, +90); the endpoints are excluded.
pub fn steering_vector(
    geometry: &ArrayGeometry,
    theta_deg: f64,
    freq_hz: f64,
) -> Result<Vec<Complex64>> {
    if !theta_deg.is_finite() || theta_deg <= -90.0 || theta_deg >= 90.0 {
        return Err(Error::Domain(format!(
            "steering angle {theta_deg} deg outside (-90, +90)"
        )));
    }
    if freq_hz <= 0.0 {
        return Err(Error::Domain("frequency must be positive".into()));
    }
    let phi = geometry.phase_shift(theta_deg, freq_hz);
    Ok((0..geometry.num_antennas)
        .map(|m| Complex64::from_polar(1.0, -(m as f64) * phi))
        .collect())
}

/// Per-angle complex element responses sampled on a uniform angle grid.
#[derive(Debug, Clone)]
pub struct BeamPattern {
    /// Uniform grid over [-90, +90] degrees.
    pub angle_grid_deg: Vec<f64>,
    /// `grid points x M_R` element responses.
    pub responses: Vec<Vec<Complex64>>,
}

impl BeamPattern {
    /// All-ones pattern: reproduces a plain uniform linear array.
    pub fn identity(num_antennas: usize, grid_step_deg: f64) -> Self {
        let grid = angle_grid(grid_step_deg);
        let responses = grid
            .iter()
            .map(|_| vec![Complex64::new(1.0, 0.0); num_antennas])
            .collect();
        Self {
            angle_grid_deg: grid,
            responses,
        }
    }

    /// Cardioid-family pattern `w_m(theta) = g*(1 + cos(theta - steer_m))`,
    /// floored at `1e-3 * g` so responses stay positive on the whole grid.
    pub fn cardioid(gain: f64, steer_deg: &[f64], grid_step_deg: f64) -> Self {
        let grid = angle_grid(grid_step_deg);
        let responses = grid
            .iter()
            .map(|&theta| {
                steer_deg
                    .iter()
                    .map(|&s| {
                        let mag = gain * (1.0 + (theta - s).to_radians().cos()).max(1e-3);
                        Complex64::new(mag, 0.0)
                    })
                    .collect()
            })
            .collect();
        Self {
            angle_grid_deg: grid,
            responses,
        }
    }

    /// Element responses at the grid point nearest `theta_deg`.
    pub fn responses_at(&self, theta_deg: f64) -> &[Complex64] {
        let step = self.angle_grid_deg[1] - self.angle_grid_deg[0];
        let idx = ((theta_deg - self.angle_grid_deg[0]) / step).round() as isize;
        let idx = idx.clamp(0, self.angle_grid_deg.len() as isize - 1) as usize;
        &self.responses[idx]
    }

    pub fn num_antennas(&self) -> usize {
        self.responses.first().map_or(0, Vec::len)
    }
}

/// Uniform angle grid over [-90, +90] inclusive.
pub fn angle_grid(step_deg: f64) -> Vec<f64> {
    let n = (180.0 / step_deg).round() as usize;
    (0..=n).map(|i| -90.0 + i as f64 * step_deg).collect()
}

/// Declarative beam-pattern selection used by configs and scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BeamPatternSpec {
    Identity,
    Cardioid {
        gain: f64,
        /// Per-element steering angles in degrees.
        steer_deg: Vec<f64>,
    },
}

impl Default for BeamPatternSpec {
    fn default() -> Self {
        BeamPatternSpec::Identity
    }
}

impl BeamPatternSpec {
    pub fn build(&self, num_antennas: usize, grid_step_deg: f64) -> Result<BeamPattern> {
        match self {
            BeamPatternSpec::Identity => Ok(BeamPattern::identity(num_antennas, grid_step_deg)),
            BeamPatternSpec::Cardioid { gain, steer_deg } => {
                if steer_deg.len() != num_antennas {
                    return Err(Error::Config(format!(
                        "cardioid pattern has {} steering angles for {} antennas",
                        steer_deg.len(),
                        num_antennas
                    )));
                }
                if *gain <= 0.0 {
                    return Err(Error::Config("cardioid gain must be positive".into()));
                }
                Ok(BeamPattern::cardioid(*gain, steer_deg, grid_step_deg))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn broadside_steering_is_all_ones() {
        let g = ArrayGeometry::default_array();
        let a = steering_vector(&g, 0.0, 5.745e9).unwrap();
        assert_eq!(a.len(), 4);
        for v in a {
            assert_relative_eq!(v.re, 1.0, max_relative = 1e-15);
            assert!(v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn phase_step_at_30_degrees() {
        // Independently evaluated: -2*pi*0.0252*sin(30deg)*5.745e9/2.998e8
        let g = ArrayGeometry::default_array();
        let a = steering_vector(&g, 30.0, 5.745e9).unwrap();
        let expected_step = -1.517_081_170_216_172_8_f64;
        assert_eq!(a[0], Complex64::new(1.0, 0.0));
        for m in 0..4 {
            let want = Complex64::from_polar(1.0, expected_step * m as f64);
            assert_relative_eq!(a[m].re, want.re, epsilon = 1e-12);
            assert_relative_eq!(a[m].im, want.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn boundary_angles_rejected() {
        let g = ArrayGeometry::default_array();
        assert!(matches!(
            steering_vector(&g, 90.0, 5.745e9),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            steering_vector(&g, -90.0, 5.745e9),
            Err(Error::Domain(_))
        ));
        assert!(steering_vector(&g, 89.999, 5.745e9).is_ok());
    }

    #[test]
    fn steering_elements_have_unit_magnitude() {
        let g = ArrayGeometry::default_array();
        for theta in [-89.0, -45.5, -0.25, 12.0, 61.75] {
            for v in steering_vector(&g, theta, 5.745e9).unwrap() {
                assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn identity_pattern_is_all_ones() {
        let p = BeamPattern::identity(4, 0.5);
        assert_eq!(p.angle_grid_deg.len(), 361);
        assert_eq!(p.angle_grid_deg[0], -90.0);
        assert_eq!(*p.angle_grid_deg.last().unwrap(), 90.0);
        for r in p.responses_at(17.3) {
            assert_eq!(*r, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn cardioid_responses_positive_everywhere() {
        let p = BeamPattern::cardioid(1.0, &[0.0, 45.0, -45.0, 90.0], 0.5);
        for row in &p.responses {
            for v in row {
                assert!(v.norm() > 0.0 && v.norm().is_finite());
            }
        }
    }

    #[test]
    fn tiny_array_rejected() {
        assert!(ArrayGeometry::new(1, 0.025, 5.7e9).is_err());
        assert!(ArrayGeometry::new(4, 0.0, 5.7e9).is_err());
    }
}
