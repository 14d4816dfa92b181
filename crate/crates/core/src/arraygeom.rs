//! Uniform planar array geometry, far-field steering vectors and DFT codebooks.
//!
//! Both apertures lie in the `x`-`z` plane with boresight along `+y`. The transmit
//! aperture is centered on the origin and the receive aperture is offset along `+x`
//! by the configured separation. Element `(r, c)` has flat index `r * cols + c`,
//! columns run along `x` and rows along `z`.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::cmat::{CMat, CVec};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Carrier used throughout unless configured otherwise.
pub const DEFAULT_CARRIER_HZ: f64 = 28.0e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aperture {
    Tx,
    Rx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayConfig {
    pub nt: usize,
    pub nr: usize,
    /// `(rows, cols)` of the transmit UPA.
    pub tx_shape: (usize, usize),
    /// `(rows, cols)` of the receive UPA.
    pub rx_shape: (usize, usize),
    pub spacing_wavelengths: f64,
    /// Horizontal center-to-center distance between the two apertures.
    pub separation_wavelengths: f64,
    pub wavelength_m: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self::square(4)
    }
}

impl ArrayConfig {
    /// `side x side` half-wavelength UPAs on both ends, 10 wavelengths apart, 28 GHz.
    pub fn square(side: usize) -> Self {
        Self {
            nt: side * side,
            nr: side * side,
            tx_shape: (side, side),
            rx_shape: (side, side),
            spacing_wavelengths: 0.5,
            separation_wavelengths: 10.0,
            wavelength_m: SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_shape.0 * self.tx_shape.1 != self.nt || self.nt == 0 {
            return Err(Error::InvalidConfig(format!(
                "tx shape {:?} does not hold {} elements",
                self.tx_shape, self.nt
            )));
        }
        if self.rx_shape.0 * self.rx_shape.1 != self.nr || self.nr == 0 {
            return Err(Error::InvalidConfig(format!(
                "rx shape {:?} does not hold {} elements",
                self.rx_shape, self.nr
            )));
        }
        for (name, v) in [
            ("spacing_wavelengths", self.spacing_wavelengths),
            ("separation_wavelengths", self.separation_wavelengths),
            ("wavelength_m", self.wavelength_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn shape(&self, which: Aperture) -> (usize, usize) {
        match which {
            Aperture::Tx => self.tx_shape,
            Aperture::Rx => self.rx_shape,
        }
    }

    pub fn count(&self, which: Aperture) -> usize {
        match which {
            Aperture::Tx => self.nt,
            Aperture::Rx => self.nr,
        }
    }

    /// Aperture center in meters, relative to the transmit center.
    pub fn center_m(&self, which: Aperture) -> [f64; 3] {
        match which {
            Aperture::Tx => [0.0; 3],
            Aperture::Rx => [self.separation_wavelengths * self.wavelength_m, 0.0, 0.0],
        }
    }

    /// Element offsets from the aperture centroid, in wavelengths.
    fn local_offsets(&self, which: Aperture) -> Vec<[f64; 3]> {
        let (rows, cols) = self.shape(which);
        let d = self.spacing_wavelengths;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push([
                    (c as f64 - (cols as f64 - 1.0) / 2.0) * d,
                    0.0,
                    (r as f64 - (rows as f64 - 1.0) / 2.0) * d,
                ]);
            }
        }
        out
    }
}

/// Element coordinates in meters (transmit center at the origin).
pub fn element_positions(cfg: &ArrayConfig, which: Aperture) -> Result<Vec<[f64; 3]>> {
    cfg.validate()?;
    let center = cfg.center_m(which);
    let lambda = cfg.wavelength_m;
    Ok(cfg
        .local_offsets(which)
        .into_iter()
        .map(|o| [center[0] + o[0] * lambda, center[1] + o[1] * lambda, center[2] + o[2] * lambda])
        .collect())
}

/// Unit direction for azimuth (from boresight toward `+x`) and elevation (toward `+z`).
pub fn direction(azimuth: f64, elevation: f64) -> [f64; 3] {
    [elevation.cos() * azimuth.sin(), elevation.cos() * azimuth.cos(), elevation.sin()]
}

/// Inverse of [`direction`] for any nonzero vector.
pub fn angles_of(v: [f64; 3]) -> (f64, f64) {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (v[0].atan2(v[1]), (v[2] / n).clamp(-1.0, 1.0).asin())
}

/// Far-field response toward a unit direction, phase referenced to the aperture centroid.
pub fn steering_toward<T: Scalar>(cfg: &ArrayConfig, which: Aperture, unit_dir: [f64; 3]) -> CVec<T> {
    let two_pi = 2.0 * std::f64::consts::PI;
    cfg.local_offsets(which)
        .into_iter()
        .map(|o| {
            let phase = two_pi * (o[0] * unit_dir[0] + o[1] * unit_dir[1] + o[2] * unit_dir[2]);
            Complex::new(T::lit(phase.cos()), T::lit(phase.sin()))
        })
        .collect()
}

/// Far-field steering vector; every entry has unit modulus.
pub fn steering_vector<T: Scalar>(
    cfg: &ArrayConfig,
    which: Aperture,
    azimuth: f64,
    elevation: f64,
) -> Result<CVec<T>> {
    if !(azimuth.is_finite() && elevation.is_finite()) {
        return Err(Error::InvalidConfig("steering angles must be finite".into()));
    }
    Ok(steering_toward(cfg, which, direction(azimuth, elevation)))
}

fn dft_1d(n: usize) -> Vec<Vec<Complex<f64>>> {
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| Complex::from_polar(1.0, -two_pi * ((r * c) % n) as f64 / n as f64))
                .collect()
        })
        .collect()
}

/// `n`-point 2-D DFT codebook, `DFT(rows) ⊗ DFT(cols)`; columns are the codewords.
pub fn dft_codebook<T: Scalar>(n: usize, shape: (usize, usize)) -> Result<CMat<T>> {
    let (rows, cols) = shape;
    if rows * cols != n || n == 0 {
        return Err(Error::Shape(format!("DFT shape {shape:?} does not factor {n}")));
    }
    let dr = dft_1d(rows);
    let dc = dft_1d(cols);
    Ok(CMat::from_fn(n, n, |i, j| {
        let v = dr[i / cols][j / cols] * dc[i % cols][j % cols];
        Complex::new(T::lit(v.re), T::lit(v.im))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    fn single_element() -> ArrayConfig {
        ArrayConfig { nt: 1, nr: 1, tx_shape: (1, 1), rx_shape: (1, 1), ..ArrayConfig::default() }
    }

    #[test]
    fn single_element_sits_at_center() {
        let cfg = single_element();
        let tx = element_positions(&cfg, Aperture::Tx).unwrap();
        let rx = element_positions(&cfg, Aperture::Rx).unwrap();
        assert_eq!(tx, vec![[0.0, 0.0, 0.0]]);
        assert!((rx[0][0] - 10.0 * cfg.wavelength_m).abs() < 1e-15);
        assert_eq!(rx[0][1], 0.0);
        assert_eq!(rx[0][2], 0.0);
    }

    #[test]
    fn half_wavelength_pitch_on_4x4() {
        let cfg = ArrayConfig::square(4);
        let p = element_positions(&cfg, Aperture::Tx).unwrap();
        let half = 0.5 * cfg.wavelength_m;
        // neighbours along columns (x) and rows (z)
        assert!((dist(p[0], p[1]) - half).abs() < 1e-15);
        assert!((dist(p[0], p[4]) - half).abs() < 1e-15);
        assert!((dist(p[5], p[9]) - half).abs() < 1e-15);
    }

    #[test]
    fn centroid_matches_center() {
        let cfg = ArrayConfig::square(2);
        for which in [Aperture::Tx, Aperture::Rx] {
            let p = element_positions(&cfg, which).unwrap();
            let c = cfg.center_m(which);
            for axis in 0..3 {
                let mean: f64 = p.iter().map(|q| q[axis]).sum::<f64>() / p.len() as f64;
                assert!((mean - c[axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separation_only_moves_rx() {
        let a = ArrayConfig::square(3);
        let b = ArrayConfig { separation_wavelengths: 17.0, ..a.clone() };
        assert_eq!(element_positions(&a, Aperture::Tx).unwrap(), element_positions(&b, Aperture::Tx).unwrap());
        let ra = element_positions(&a, Aperture::Rx).unwrap();
        let rb = element_positions(&b, Aperture::Rx).unwrap();
        for (x, y) in ra.iter().zip(&rb) {
            assert!((y[0] - x[0] - 7.0 * a.wavelength_m).abs() < 1e-12);
            assert_eq!((x[1], x[2]), (y[1], y[2]));
        }
    }

    #[test]
    fn invalid_shape_rejected() {
        let cfg = ArrayConfig { nt: 15, ..ArrayConfig::default() };
        assert!(element_positions(&cfg, Aperture::Tx).is_err());
        let cfg = ArrayConfig { wavelength_m: 0.0, ..ArrayConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn boresight_is_all_ones() {
        let cfg = ArrayConfig::square(4);
        let a = steering_vector::<f64>(&cfg, Aperture::Rx, 0.0, 0.0).unwrap();
        assert!(a.iter().all(|x| (x - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn unit_modulus_everywhere() {
        let cfg = ArrayConfig::square(4);
        for (az, el) in [(0.3, -0.2), (-1.2, 0.7), (2.5, -1.4)] {
            let a = steering_vector::<f64>(&cfg, Aperture::Tx, az, el).unwrap();
            assert!(a.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn two_element_line_endfire_phase_is_pi() {
        let cfg = ArrayConfig { nt: 2, tx_shape: (1, 2), ..ArrayConfig::default() };
        let a = steering_vector::<f64>(&cfg, Aperture::Tx, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        let diff = (a[1] / a[0]).arg().abs();
        assert!((diff - std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn angles_round_trip() {
        let (az, el) = angles_of(direction(0.4, -0.3));
        assert!((az - 0.4).abs() < 1e-12 && (el + 0.3).abs() < 1e-12);
    }

    #[test]
    fn dft_two_point() {
        let g = dft_codebook::<f64>(2, (2, 1)).unwrap();
        let expect = [[1.0, 1.0], [1.0, -1.0]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((g[(r, c)] - Complex64::new(expect[r][c], 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dft_2x2_is_kronecker_of_dft2() {
        let g = dft_codebook::<f64>(4, (2, 2)).unwrap();
        let d2 = [[1.0, 1.0], [1.0, -1.0]];
        for i in 0..4 {
            for j in 0..4 {
                let k = d2[i / 2][j / 2] * d2[i % 2][j % 2];
                assert!((g[(i, j)] - Complex64::new(k, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dft_gram_is_scaled_identity() {
        let g = dft_codebook::<f64>(16, (4, 4)).unwrap();
        let gram = g.herm().matmul(&g).unwrap();
        let target = CMat::<f64>::identity(16).scaled(16.0);
        assert!(gram.max_abs_diff(&target) < 1e-10);
        assert!(g.as_slice().iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dft_shape_mismatch() {
        assert!(dft_codebook::<f64>(6, (2, 2)).is_err());
    }
}
