//! Site-specific channel generation.
//!
//! A [`SiteModel`] is a fixed set of point reflectors plus a region in which users and
//! dynamic blockers (vehicles, pedestrians) are dropped uniformly for every scene. User
//! channels sum a direct path and single-bounce reflector paths; the base station only
//! learns the strongest of them. The self-interference channel mixes a near-field
//! spherical-wave coupling term with multipath through the reflectors and blockers.

use num_complex::Complex;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::arraygeom::{angles_of, element_positions, steering_toward, Aperture, ArrayConfig};
use crate::cmat::{cast_vec, norm_sq, CMat, CVec};
use crate::scalar::{cast, from_db, Scalar};
use crate::{Error, Result};

const STREAM_BLOCKERS: u64 = 1;
const STREAM_NLOS: u64 = 2;
const STREAM_USERS: u64 = 3;

/// Deterministic seed mixing (splitmix64 finalizer over both words).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(site_seed: u64, rng_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(site_seed, rng_seed));
    rng.set_stream(stream);
    rng
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn length(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = length(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub position_m: [f64; 3],
    pub reflectivity: Complex<f64>,
}

/// Axis-aligned box in which users and blockers are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRegion {
    pub x_m: (f64, f64),
    pub y_m: (f64, f64),
    pub height_m: (f64, f64),
}

impl UserRegion {
    fn sample(&self, rng: &mut impl Rng, height: (f64, f64)) -> [f64; 3] {
        [
            rng.random_range(self.x_m.0..self.x_m.1),
            rng.random_range(self.y_m.0..self.y_m.1),
            rng.random_range(height.0..=height.1),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub site_seed: u64,
    pub reflectors: Vec<Reflector>,
    pub user_region: UserRegion,
    pub dynamic_blocker_count: usize,
    pub blocker_radius_m: f64,
    pub blocker_height_m: (f64, f64),
    pub blocker_reflectivity: f64,
    /// Position of the transmit aperture center.
    pub bs_position_m: [f64; 3],
    pub path_dropout_prob: f64,
    /// When false the cross-link channel between paired users is zero.
    pub cross_link: bool,
}

impl SiteModel {
    /// Draws a site layout from `site_seed`: six static reflectors around a courtyard in
    /// front of a base station mounted 20 m high.
    pub fn generate(site_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(site_seed, 0x517E));
        let reflectors = (0..6)
            .map(|_| {
                let position_m = [
                    rng.random_range(-35.0..35.0),
                    rng.random_range(6.0..60.0),
                    rng.random_range(2.0..32.0),
                ];
                let mag: f64 = rng.random_range(0.3..0.9);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Reflector { position_m, reflectivity: Complex::from_polar(mag, phase) }
            })
            .collect();
        Self {
            site_seed,
            reflectors,
            user_region: UserRegion { x_m: (-30.0, 30.0), y_m: (15.0, 80.0), height_m: (1.0, 1.7) },
            dynamic_blocker_count: 12,
            blocker_radius_m: 1.5,
            blocker_height_m: (0.5, 1.5),
            blocker_reflectivity: 0.4,
            bs_position_m: [0.0, 0.0, 20.0],
            path_dropout_prob: 0.10,
            cross_link: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reflectors.is_empty() {
            return Err(Error::InvalidConfig("site needs at least one reflector".into()));
        }
        if !(0.0..1.0).contains(&self.path_dropout_prob) {
            return Err(Error::InvalidConfig("path_dropout_prob must lie in [0, 1)".into()));
        }
        let r = &self.user_region;
        if !(r.x_m.0 < r.x_m.1 && r.y_m.0 < r.y_m.1 && r.height_m.0 <= r.height_m.1) {
            return Err(Error::InvalidConfig("empty user region".into()));
        }
        Ok(())
    }

    fn aperture_center(&self, cfg: &ArrayConfig, which: Aperture) -> [f64; 3] {
        add(self.bs_position_m, cfg.center_m(which))
    }

    fn sample_blockers(&self, rng_seed: u64) -> Vec<[f64; 3]> {
        let mut rng = stream_rng(self.site_seed, rng_seed, STREAM_BLOCKERS);
        (0..self.dynamic_blocker_count)
            .map(|_| self.user_region.sample(&mut rng, self.blocker_height_m))
            .collect()
    }

    /// Mean power of a single-bounce self-interference path through `p`.
    fn si_path_power(&self, cfg: &ArrayConfig, p: [f64; 3], reflectivity: f64) -> f64 {
        let d = length(sub(p, self.aperture_center(cfg, Aperture::Tx)))
            + length(sub(p, self.aperture_center(cfg, Aperture::Rx)));
        let amp = reflectivity * cfg.wavelength_m / (4.0 * std::f64::consts::PI * d);
        amp * amp
    }

    /// `E[Σ |g_p|²]` over the scene distribution: exact for the static reflectors and a
    /// midpoint-rule integral over blocker positions.
    fn expected_nlos_path_power(&self, cfg: &ArrayConfig) -> f64 {
        let keep = 1.0 - self.path_dropout_prob;
        let fixed: f64 = self
            .reflectors
            .iter()
            .map(|r| self.si_path_power(cfg, r.position_m, r.reflectivity.norm()))
            .sum();
        let (nx, ny, nz) = (64usize, 64usize, 4usize);
        let reg = &self.user_region;
        let (h0, h1) = self.blocker_height_m;
        let mut acc = 0.0;
        for ix in 0..nx {
            let x = reg.x_m.0 + (ix as f64 + 0.5) / nx as f64 * (reg.x_m.1 - reg.x_m.0);
            for iy in 0..ny {
                let y = reg.y_m.0 + (iy as f64 + 0.5) / ny as f64 * (reg.y_m.1 - reg.y_m.0);
                for iz in 0..nz {
                    let z = h0 + (iz as f64 + 0.5) / nz as f64 * (h1 - h0);
                    acc += self.si_path_power(cfg, [x, y, z], self.blocker_reflectivity);
                }
            }
        }
        let blockers = self.dynamic_blocker_count as f64 * acc / (nx * ny * nz) as f64;
        keep * (fixed + blockers)
    }

    fn segment_blocked(&self, a: [f64; 3], b: [f64; 3], blockers: &[[f64; 3]]) -> bool {
        let ab = sub(b, a);
        let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
        blockers.iter().any(|&c| {
            let ac = sub(c, a);
            let t = ((ac[0] * ab[0] + ac[1] * ab[1] + ac[2] * ab[2]) / len2).clamp(0.0, 1.0);
            let closest = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
            length(sub(c, closest)) < self.blocker_radius_m
        })
    }
}

/// Strongest propagation path of a user link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominantPath {
    pub gain: Complex<f64>,
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserPairChannel<T> {
    pub h_dl: CVec<T>,
    pub h_ul: CVec<T>,
    pub h_cross: Complex<T>,
    pub dominant_dl: DominantPath,
    pub dominant_ul: DominantPath,
}

impl<T: Scalar> UserPairChannel<T> {
    pub fn cast<U: Scalar>(&self) -> UserPairChannel<U> {
        UserPairChannel {
            h_dl: cast_vec(&self.h_dl),
            h_ul: cast_vec(&self.h_ul),
            h_cross: Complex::new(cast(self.h_cross.re), cast(self.h_cross.im)),
            dominant_dl: self.dominant_dl,
            dominant_ul: self.dominant_ul,
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            h_dl: self.h_dl.iter().map(|x| x * s).collect(),
            h_ul: self.h_ul.iter().map(|x| x * s).collect(),
            h_cross: self.h_cross * s,
            dominant_dl: self.dominant_dl,
            dominant_ul: self.dominant_ul,
        }
    }
}

/// Partial knowledge of one user pair: the dominant-path response on each link.
#[derive(Clone, Debug, PartialEq)]
pub struct UserInfo<T> {
    pub y_dl: CVec<T>,
    pub y_ul: CVec<T>,
}

impl<T: Scalar> UserInfo<T> {
    pub fn cast<U: Scalar>(&self) -> UserInfo<U> {
        UserInfo { y_dl: cast_vec(&self.y_dl), y_ul: cast_vec(&self.y_ul) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SIChannel<T> {
    pub h_los: CMat<T>,
    pub h_nlos: CMat<T>,
    /// Linear Rician factor.
    pub kappa: T,
    pub h: CMat<T>,
}

impl<T: Scalar> SIChannel<T> {
    pub fn cast<U: Scalar>(&self) -> SIChannel<U> {
        SIChannel { h_los: self.h_los.cast(), h_nlos: self.h_nlos.cast(), kappa: cast(self.kappa), h: self.h.cast() }
    }

    pub fn nt(&self) -> usize {
        self.h.cols()
    }

    pub fn nr(&self) -> usize {
        self.h.rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget<T> {
    pub p_dl: T,
    pub p_ul: T,
    pub sigma2_dl: T,
    pub sigma2_ul: T,
}

impl<T: Scalar> LinkBudget<T> {
    pub fn unit() -> Self {
        Self { p_dl: T::one(), p_ul: T::one(), sigma2_dl: T::one(), sigma2_ul: T::one() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.p_dl, self.p_ul, self.sigma2_dl, self.sigma2_ul]
            .iter()
            .all(|v| v.is_finite() && *v > T::zero());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("link budget entries must be positive".into()))
        }
    }

    pub fn cast<U: Scalar>(&self) -> LinkBudget<U> {
        LinkBudget {
            p_dl: cast(self.p_dl),
            p_ul: cast(self.p_ul),
            sigma2_dl: cast(self.sigma2_dl),
            sigma2_ul: cast(self.sigma2_ul),
        }
    }
}

/// One coherence block: SI channel, `K` user pairs and the partial user knowledge.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRealization<T> {
    pub si: SIChannel<T>,
    pub users: Vec<UserPairChannel<T>>,
    pub user_info: Vec<UserInfo<T>>,
    pub budget: LinkBudget<T>,
}

impl<T: Scalar> SceneRealization<T> {
    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn cast<U: Scalar>(&self) -> SceneRealization<U> {
        SceneRealization {
            si: self.si.cast(),
            users: self.users.iter().map(UserPairChannel::cast).collect(),
            user_info: self.user_info.iter().map(UserInfo::cast).collect(),
            budget: self.budget.cast(),
        }
    }

    /// Keeps only the user pairs at `indices`, in that order.
    pub fn select_users(&self, indices: &[usize]) -> Self {
        Self {
            si: self.si.clone(),
            users: indices.iter().map(|&i| self.users[i].clone()).collect(),
            user_info: indices.iter().map(|&i| self.user_info[i].clone()).collect(),
            budget: self.budget,
        }
    }
}

/// Unnormalized near-field coupling `exp(-j 2π r/λ) / r` between every rx/tx element pair.
pub fn spherical_wave_coupling(cfg: &ArrayConfig) -> Result<CMat<f64>> {
    let tx = element_positions(cfg, Aperture::Tx)?;
    let rx = element_positions(cfg, Aperture::Rx)?;
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength_m;
    let mut out = CMat::zeros(rx.len(), tx.len());
    for (m, pr) in rx.iter().enumerate() {
        for (n, pt) in tx.iter().enumerate() {
            let r = length(sub(*pr, *pt));
            if r <= 0.0 {
                return Err(Error::Geometry(format!("rx element {m} coincides with tx element {n}")));
            }
            out[(m, n)] = Complex::from_polar(1.0 / r, -k * r);
        }
    }
    Ok(out)
}

/// Near-field LOS self-interference, scaled to `‖H_LOS‖_F² = nt·nr`.
pub fn los_si_channel(cfg: &ArrayConfig) -> Result<CMat<f64>> {
    let raw = spherical_wave_coupling(cfg)?;
    let target = (cfg.nt * cfg.nr) as f64;
    Ok(raw.scaled((target / raw.frobenius_sq()).sqrt()))
}

struct SiPath {
    gain: Complex<f64>,
    aod: [f64; 3],
    aoa: [f64; 3],
}

fn nlos_paths(site: &SiteModel, cfg: &ArrayConfig, rng_seed: u64, blockers: &[[f64; 3]]) -> Vec<SiPath> {
    let mut rng = stream_rng(site.site_seed, rng_seed, STREAM_NLOS);
    let tx = site.aperture_center(cfg, Aperture::Tx);
    let rx = site.aperture_center(cfg, Aperture::Rx);
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength_m;
    let scatterers: Vec<([f64; 3], Complex<f64>, bool)> = site
        .reflectors
        .iter()
        .map(|r| (r.position_m, r.reflectivity, true))
        .chain(blockers.iter().map(|&b| (b, Complex::new(site.blocker_reflectivity, 0.0), false)))
        .collect();
    loop {
        let mut paths = Vec::with_capacity(scatterers.len());
        for &(p, refl, fixed) in &scatterers {
            // Fading draws happen before dropout so the stream layout does not depend on it.
            let fading = if fixed {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            } else {
                Complex::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
            };
            let dropped = rng.random::<f64>() < site.path_dropout_prob;
            if dropped {
                continue;
            }
            let d = length(sub(p, tx)) + length(sub(p, rx));
            let amp = cfg.wavelength_m / (4.0 * std::f64::consts::PI * d);
            paths.push(SiPath {
                gain: refl * fading * Complex::from_polar(amp, -k * d),
                aod: unit(sub(p, tx)),
                aoa: unit(sub(p, rx)),
            });
        }
        if !paths.is_empty() {
            return paths;
        }
    }
}

fn nlos_from_paths(site: &SiteModel, cfg: &ArrayConfig, paths: &[SiPath]) -> CMat<f64> {
    let norm = 1.0 / site.expected_nlos_path_power(cfg).sqrt();
    let mut h = CMat::zeros(cfg.nr, cfg.nt);
    for p in paths {
        let a_rx: CVec<f64> = steering_toward(cfg, Aperture::Rx, p.aoa);
        let a_tx: CVec<f64> = steering_toward(cfg, Aperture::Tx, p.aod);
        let g = p.gain * norm;
        for (m, ar) in a_rx.iter().enumerate() {
            for (n, at) in a_tx.iter().enumerate() {
                h[(m, n)] += g * ar * at.conj();
            }
        }
    }
    h
}

/// Environment multipath SI channel for scene `rng_seed`, normalized so that
/// `E‖H_NLOS‖_F² = nt·nr` over the site's scene distribution.
pub fn nlos_si_channel(site: &SiteModel, cfg: &ArrayConfig, rng_seed: u64) -> Result<CMat<f64>> {
    site.validate()?;
    cfg.validate()?;
    let blockers = site.sample_blockers(rng_seed);
    let paths = nlos_paths(site, cfg, rng_seed, &blockers);
    Ok(nlos_from_paths(site, cfg, &paths))
}

/// Rician mixing weights `(√(κ/(κ+1)), √(1/(κ+1)))` for `κ = 10^(kappa_db/10)`.
pub fn rician_weights(kappa_db: f64) -> (f64, f64) {
    let kappa = from_db(kappa_db);
    if kappa.is_infinite() {
        (1.0, 0.0)
    } else {
        ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
    }
}

pub fn assemble_si<T: Scalar>(h_los: CMat<T>, h_nlos: CMat<T>, kappa_db: f64) -> Result<SIChannel<T>> {
    let (a, b) = rician_weights(kappa_db);
    let h = h_los.lin_comb(T::lit(a), &h_nlos, T::lit(b))?;
    Ok(SIChannel { h_los, h_nlos, kappa: T::lit(from_db(kappa_db)), h })
}

/// A scene before calibration: unit-normalized SI components and raw path-loss user gains.
#[derive(Clone, Debug, PartialEq)]
pub struct RawScene {
    pub rng_seed: u64,
    pub h_los: CMat<f64>,
    pub h_nlos: CMat<f64>,
    pub users: Vec<UserPairChannel<f64>>,
    pub user_info: Vec<UserInfo<f64>>,
    /// `(downlink, uplink)` user positions in meters.
    pub positions: Vec<([f64; 3], [f64; 3])>,
}

struct UserLink {
    h: CVec<f64>,
    dominant: DominantPath,
    dominant_dir: [f64; 3],
}

fn sample_user_link(
    site: &SiteModel,
    cfg: &ArrayConfig,
    which: Aperture,
    user: [f64; 3],
    blockers: &[[f64; 3]],
    rng: &mut ChaCha8Rng,
) -> Option<UserLink> {
    let center = site.aperture_center(cfg, which);
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength_m;
    let four_pi = 4.0 * std::f64::consts::PI;
    // (gain, direction at the base station)
    let mut paths: Vec<(Complex<f64>, [f64; 3])> = Vec::new();
    let direct_drop = rng.random::<f64>() < site.path_dropout_prob;
    if !direct_drop && !site.segment_blocked(center, user, blockers) {
        let d = length(sub(user, center));
        paths.push((Complex::from_polar(cfg.wavelength_m / (four_pi * d), -k * d), unit(sub(user, center))));
    }
    for r in &site.reflectors {
        let dropped = rng.random::<f64>() < site.path_dropout_prob;
        if dropped {
            continue;
        }
        let d = length(sub(r.position_m, center)) + length(sub(user, r.position_m));
        let g = r.reflectivity * Complex::from_polar(cfg.wavelength_m / (four_pi * d), -k * d);
        paths.push((g, unit(sub(r.position_m, center))));
    }
    if paths.is_empty() {
        return None;
    }
    let mut h = vec![Complex::zero(); cfg.count(which)];
    for (g, dir) in &paths {
        let a: CVec<f64> = steering_toward(cfg, which, *dir);
        h.iter_mut().zip(&a).for_each(|(hi, ai)| *hi += g * ai);
    }
    // first index wins ties
    let mut best = 0;
    for (i, p) in paths.iter().enumerate() {
        if p.0.norm() > paths[best].0.norm() {
            best = i;
        }
    }
    let (gain, dir) = paths[best];
    let (azimuth, elevation) = angles_of(dir);
    Some(UserLink { h, dominant: DominantPath { gain, azimuth, elevation }, dominant_dir: dir })
}

/// Samples users and SI components for one scene (no calibration applied).
pub fn sample_raw_scene(site: &SiteModel, cfg: &ArrayConfig, k: usize, rng_seed: u64) -> Result<RawScene> {
    if k == 0 {
        return Err(Error::InvalidConfig("a scene needs at least one user pair".into()));
    }
    site.validate()?;
    cfg.validate()?;
    let blockers = site.sample_blockers(rng_seed);
    let h_los = los_si_channel(cfg)?;
    let h_nlos = nlos_from_paths(site, cfg, &nlos_paths(site, cfg, rng_seed, &blockers));

    let mut rng = stream_rng(site.site_seed, rng_seed, STREAM_USERS);
    let mut users = Vec::with_capacity(k);
    let mut user_info = Vec::with_capacity(k);
    let mut positions = Vec::with_capacity(k);
    let region = &site.user_region;
    for _ in 0..k {
        let (dl_pos, dl) = loop {
            let p = region.sample(&mut rng, region.height_m);
            if let Some(link) = sample_user_link(site, cfg, Aperture::Tx, p, &blockers, &mut rng) {
                break (p, link);
            }
        };
        let (ul_pos, ul) = loop {
            let p = region.sample(&mut rng, region.height_m);
            if let Some(link) = sample_user_link(site, cfg, Aperture::Rx, p, &blockers, &mut rng) {
                break (p, link);
            }
        };
        let h_cross = if site.cross_link {
            let d = length(sub(dl_pos, ul_pos)).max(1e-3);
            let kw = 2.0 * std::f64::consts::PI / cfg.wavelength_m;
            Complex::from_polar(cfg.wavelength_m / (4.0 * std::f64::consts::PI * d), -kw * d)
        } else {
            Complex::zero()
        };
        let y_dl: CVec<f64> = steering_toward::<f64>(cfg, Aperture::Tx, dl.dominant_dir)
            .into_iter()
            .map(|a| a * dl.dominant.gain)
            .collect();
        let y_ul: CVec<f64> = steering_toward::<f64>(cfg, Aperture::Rx, ul.dominant_dir)
            .into_iter()
            .map(|a| a * ul.dominant.gain)
            .collect();
        users.push(UserPairChannel {
            h_dl: dl.h,
            h_ul: ul.h,
            h_cross,
            dominant_dl: dl.dominant,
            dominant_ul: ul.dominant,
        });
        user_info.push(UserInfo { y_dl, y_ul });
        positions.push((dl_pos, ul_pos));
    }
    Ok(RawScene { rng_seed, h_los, h_nlos, users, user_info, positions })
}

/// Per-Rician-factor SI amplitude scaling and LMMSE prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaCalibration {
    pub kappa_db: f64,
    pub si_amplitude_scale: f64,
    /// Mean `‖H f_MRT‖² / Nr` over the calibration sample.
    pub lmmse_prior_rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub snr_dl_db: f64,
    pub snr_ul_db: f64,
    pub inr_ul_db: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self { snr_dl_db: 10.0, snr_ul_db: 10.0, inr_ul_db: 40.0 }
    }
}

/// Frozen per-site power calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub budget: LinkBudget<f64>,
    pub targets: CalibrationTargets,
    pub kappas: Vec<KappaCalibration>,
    pub sample_scenes: usize,
}

impl Calibration {
    pub fn for_kappa(&self, kappa_db: f64) -> Result<&KappaCalibration> {
        self.kappas
            .iter()
            .find(|c| (c.kappa_db - kappa_db).abs() < 1e-9)
            .ok_or(Error::Uncalibrated(kappa_db))
    }
}

impl RawScene {
    /// Applies a Rician factor, SI amplitude scale and budget.
    pub fn realize_with(&self, kappa_db: f64, si_scale: f64, budget: LinkBudget<f64>) -> Result<SceneRealization<f64>> {
        budget.validate()?;
        let si = assemble_si(self.h_los.scaled(si_scale), self.h_nlos.scaled(si_scale), kappa_db)?;
        Ok(SceneRealization { si, users: self.users.clone(), user_info: self.user_info.clone(), budget })
    }

    pub fn realize(&self, kappa_db: f64, cal: &Calibration) -> Result<SceneRealization<f64>> {
        let kc = cal.for_kappa(kappa_db)?;
        self.realize_with(kappa_db, kc.si_amplitude_scale, cal.budget)
    }

    /// Multiplies every channel gain (users and SI) by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rng_seed: self.rng_seed,
            h_los: self.h_los.scaled(s),
            h_nlos: self.h_nlos.scaled(s),
            users: self.users.iter().map(|u| u.scaled(s)).collect(),
            user_info: self
                .user_info
                .iter()
                .map(|i| UserInfo {
                    y_dl: i.y_dl.iter().map(|x| x * s).collect(),
                    y_ul: i.y_ul.iter().map(|x| x * s).collect(),
                })
                .collect(),
            positions: self.positions.clone(),
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Fixes `P_DL = P_UL = 1`, sets both noise floors so the mean (in dB) single-user SNR
/// bound `P‖h‖²/σ²` hits its target, then scales the SI so the mean INR bound
/// `P_DL σ_max(H)² / σ²_UL` hits its target for every Rician factor in `kappa_set_db`.
pub fn calibrate_budget(
    sample: &[RawScene],
    kappa_set_db: &[f64],
    targets: CalibrationTargets,
) -> Result<Calibration> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let users = || sample.iter().flat_map(|s| s.users.iter());
    let mean_dl_db = mean(users().map(|u| 10.0 * norm_sq(&u.h_dl).log10())).ok_or(Error::EmptySample)?;
    let mean_ul_db = mean(users().map(|u| 10.0 * norm_sq(&u.h_ul).log10())).ok_or(Error::EmptySample)?;
    let budget = LinkBudget {
        p_dl: 1.0,
        p_ul: 1.0,
        sigma2_dl: from_db(mean_dl_db - targets.snr_dl_db),
        sigma2_ul: from_db(mean_ul_db - targets.snr_ul_db),
    };
    let mut kappas = Vec::with_capacity(kappa_set_db.len());
    for &kappa_db in kappa_set_db {
        let (a, b) = rician_weights(kappa_db);
        let mixed: Vec<CMat<f64>> =
            sample.iter().map(|s| s.h_los.lin_comb(a, &s.h_nlos, b)).collect::<Result<_>>()?;
        let mean_inr_db = mean(
            mixed
                .iter()
                .map(|h| 10.0 * (budget.p_dl * h.spectral_norm().powi(2) / budget.sigma2_ul).log10()),
        )
        .ok_or(Error::EmptySample)?;
        let si_amplitude_scale = from_db((targets.inr_ul_db - mean_inr_db) / 2.0);
        let rho = mean(sample.iter().zip(&mixed).flat_map(|(s, h)| {
            s.user_info.iter().map(move |info| {
                let f = crate::baselines::mrt_beam(&info.y_dl).expect("dominant path is nonzero");
                norm_sq(&h.mul_vec(&f)) * si_amplitude_scale * si_amplitude_scale / h.rows() as f64
            })
        }))
        .ok_or(Error::EmptySample)?;
        kappas.push(KappaCalibration { kappa_db, si_amplitude_scale, lmmse_prior_rho: rho });
    }
    Ok(Calibration { budget, targets, kappas, sample_scenes: sample.len() })
}

/// Mean (in dB) single-user SNR bounds and SI INR bound of a calibrated site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundStats {
    pub kappa_db: f64,
    pub snr_dl_db: f64,
    pub snr_ul_db: f64,
    pub inr_ul_db: f64,
    pub scenes: usize,
    pub users: usize,
}

/// Streams scenes `seeds` (each with `k` users) and reports, per calibrated Rician factor,
/// the dB means of `P‖h‖²/σ²` over users and of `P_DL σ_max(H)²/σ²_UL` over scenes.
pub fn link_bound_stats(
    site: &SiteModel,
    cfg: &ArrayConfig,
    k: usize,
    seeds: std::ops::Range<u64>,
    cal: &Calibration,
) -> Result<Vec<BoundStats>> {
    let b = cal.budget;
    let (mut dl, mut ul, mut users) = (0.0, 0.0, 0usize);
    let mut inr = vec![0.0; cal.kappas.len()];
    let mut scenes = 0usize;
    for seed in seeds {
        let s = sample_raw_scene(site, cfg, k, seed)?;
        for u in &s.users {
            dl += 10.0 * (b.p_dl * norm_sq(&u.h_dl) / b.sigma2_dl).log10();
            ul += 10.0 * (b.p_ul * norm_sq(&u.h_ul) / b.sigma2_ul).log10();
            users += 1;
        }
        for (acc, kc) in inr.iter_mut().zip(&cal.kappas) {
            let (a, w) = rician_weights(kc.kappa_db);
            let h = s.h_los.lin_comb(a, &s.h_nlos, w)?.scaled(kc.si_amplitude_scale);
            *acc += 10.0 * (b.p_dl * h.spectral_norm().powi(2) / b.sigma2_ul).log10();
        }
        scenes += 1;
    }
    if scenes == 0 {
        return Err(Error::EmptySample);
    }
    Ok(cal
        .kappas
        .iter()
        .zip(inr)
        .map(|(kc, i)| BoundStats {
            kappa_db: kc.kappa_db,
            snr_dl_db: dl / users as f64,
            snr_ul_db: ul / users as f64,
            inr_ul_db: i / scenes as f64,
            scenes,
            users,
        })
        .collect())
}

/// Draws one calibrated scene.
pub fn sample_scene(
    site: &SiteModel,
    cfg: &ArrayConfig,
    k: usize,
    kappa_db: f64,
    rng_seed: u64,
    cal: &Calibration,
) -> Result<SceneRealization<f64>> {
    sample_raw_scene(site, cfg, k, rng_seed)?.realize(kappa_db, cal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::cosine_similarity;

    fn site() -> SiteModel {
        SiteModel::generate(11)
    }

    #[test]
    fn single_pair_spherical_wave() {
        let cfg = ArrayConfig { nt: 1, nr: 1, tx_shape: (1, 1), rx_shape: (1, 1), ..ArrayConfig::default() };
        let raw = spherical_wave_coupling(&cfg).unwrap();
        let d = 10.0 * cfg.wavelength_m;
        assert!((raw[(0, 0)].norm() - 1.0 / d).abs() < 1e-9 / d);
        let phase = -2.0 * std::f64::consts::PI * d / cfg.wavelength_m;
        assert!((raw[(0, 0)] / Complex::from_polar(1.0, phase) - Complex::new(1.0 / d, 0.0)).norm() < 1e-9 / d);
        // normalization is a positive real scale
        let los = los_si_channel(&cfg).unwrap();
        assert!((los[(0, 0)].arg() - raw[(0, 0)].arg()).abs() < 1e-12);
    }

    #[test]
    fn spherical_wave_magnitude_is_inverse_distance() {
        let cfg = ArrayConfig { nt: 2, nr: 1, tx_shape: (1, 2), rx_shape: (1, 1), ..ArrayConfig::default() };
        let raw = spherical_wave_coupling(&cfg).unwrap();
        let l = cfg.wavelength_m;
        let (d0, d1) = (10.25 * l, 9.75 * l);
        assert!((raw[(0, 0)].norm() * d0 - 1.0).abs() < 1e-9);
        assert!((raw[(0, 1)].norm() * d1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn los_normalized_and_static() {
        let cfg = ArrayConfig::square(4);
        let los = los_si_channel(&cfg).unwrap();
        assert!((los.frobenius_sq() - 256.0).abs() < 1e-9);
        let a = sample_raw_scene(&site(), &cfg, 1, 1).unwrap();
        let b = sample_raw_scene(&site(), &cfg, 1, 2).unwrap();
        assert_eq!(a.h_los, b.h_los);
        assert_ne!(a.h_nlos, b.h_nlos);
    }

    #[test]
    fn coincident_elements_rejected() {
        let cfg = ArrayConfig {
            nt: 1,
            nr: 1,
            tx_shape: (1, 1),
            rx_shape: (1, 1),
            separation_wavelengths: 1e-300,
            ..ArrayConfig::default()
        };
        assert!(matches!(spherical_wave_coupling(&cfg), Err(Error::Geometry(_))));
    }

    #[test]
    fn single_reflector_without_dropout_is_rank_one() {
        let mut s = site();
        s.reflectors.truncate(1);
        s.dynamic_blocker_count = 0;
        s.path_dropout_prob = 0.0;
        let cfg = ArrayConfig::square(4);
        let h = nlos_si_channel(&s, &cfg, 3).unwrap();
        // every column is a multiple of the first nonzero one
        let c0 = h.column(0);
        for c in 1..cfg.nt {
            assert!((cosine_similarity(&c0, &h.column(c)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn nlos_is_deterministic() {
        let cfg = ArrayConfig::square(4);
        let a = nlos_si_channel(&site(), &cfg, 77).unwrap();
        let b = nlos_si_channel(&site(), &cfg, 77).unwrap();
        assert_eq!(a, b);
        let raw = sample_raw_scene(&site(), &cfg, 2, 77).unwrap();
        assert_eq!(raw.h_nlos, a);
    }

    #[test]
    fn nlos_mean_power_matches_normalization() {
        let cfg = ArrayConfig::square(4);
        let s = site();
        let n = 10_000;
        let mean: f64 = (0..n).map(|i| nlos_si_channel(&s, &cfg, i).unwrap().frobenius_sq()).sum::<f64>() / n as f64;
        assert!((mean / 256.0 - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn rician_limits() {
        let cfg = ArrayConfig::square(2);
        let raw = sample_raw_scene(&site(), &cfg, 1, 5).unwrap();
        let si = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), 0.0).unwrap();
        let expect = raw.h_los.lin_comb(0.5f64.sqrt(), &raw.h_nlos, 0.5f64.sqrt()).unwrap();
        assert!(si.h.max_abs_diff(&expect) < 1e-14);
        let hi = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), 200.0).unwrap();
        assert!(hi.h.lin_comb(1.0, &raw.h_los, -1.0).unwrap().frobenius_sq().sqrt() < 1e-8 * raw.h_los.frobenius_sq().sqrt());
        let lo = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), f64::NEG_INFINITY).unwrap();
        assert_eq!(lo.h, raw.h_nlos);
        let inf = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), f64::INFINITY).unwrap();
        assert_eq!(inf.h, raw.h_los);
    }

    #[test]
    fn assemble_rejects_shape_mismatch() {
        assert!(assemble_si(CMat::<f64>::zeros(2, 2), CMat::zeros(2, 3), 0.0).is_err());
    }

    #[test]
    fn scene_shapes_and_heights() {
        let cfg = ArrayConfig::square(4);
        let raw = sample_raw_scene(&site(), &cfg, 8, 9).unwrap();
        assert_eq!(raw.user_info.len(), 8);
        assert_eq!(raw.users.len(), 8);
        for (info, (dl, ul)) in raw.user_info.iter().zip(&raw.positions) {
            assert_eq!(info.y_dl.len(), 16);
            assert_eq!(info.y_ul.len(), 16);
            assert!((1.0..=1.7).contains(&dl[2]) && (1.0..=1.7).contains(&ul[2]));
        }
        assert!(raw.users.iter().all(|u| norm_sq(&u.h_dl) > 0.0 && norm_sq(&u.h_ul) > 0.0));
        assert!(raw.users.iter().all(|u| u.h_cross == Complex::zero()));
    }

    #[test]
    fn pure_los_user_info_is_collinear() {
        let mut s = site();
        s.reflectors.truncate(1);
        s.reflectors[0].reflectivity = Complex::new(1e-300, 0.0);
        s.path_dropout_prob = 0.0;
        s.dynamic_blocker_count = 0;
        let cfg = ArrayConfig::square(4);
        // reflector paths exist but are negligible; make them vanish entirely
        s.reflectors[0].reflectivity = Complex::zero();
        let raw = sample_raw_scene(&s, &cfg, 3, 4).unwrap();
        for (u, i) in raw.users.iter().zip(&raw.user_info) {
            assert!(cosine_similarity(&u.h_dl, &i.y_dl) > 1.0 - 1e-10);
            assert!(cosine_similarity(&u.h_ul, &i.y_ul) > 1.0 - 1e-10);
        }
    }

    #[test]
    fn user_info_is_scaled_steering_vector() {
        let cfg = ArrayConfig::square(4);
        let raw = sample_raw_scene(&site(), &cfg, 4, 21).unwrap();
        for (u, i) in raw.users.iter().zip(&raw.user_info) {
            let g = u.dominant_dl.gain.norm();
            assert!(i.y_dl.iter().all(|y| (y.norm() - g).abs() < 1e-12 * g.max(1e-300)));
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = ArrayConfig::square(4);
        let a = sample_raw_scene(&site(), &cfg, 4, 123).unwrap();
        let b = sample_raw_scene(&site(), &cfg, 4, 123).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn calibration_is_scale_invariant() {
        let cfg = ArrayConfig::square(2);
        let s = site();
        let sample: Vec<RawScene> = (0..200).map(|i| sample_raw_scene(&s, &cfg, 2, i).unwrap()).collect();
        let doubled: Vec<RawScene> = sample.iter().map(|r| r.scaled(2.0)).collect();
        let c1 = calibrate_budget(&sample, &[0.0], CalibrationTargets::default()).unwrap();
        let c2 = calibrate_budget(&doubled, &[0.0], CalibrationTargets::default()).unwrap();
        let s1 = sample[0].realize(0.0, &c1).unwrap();
        let s2 = doubled[0].realize(0.0, &c2).unwrap();
        let snr = |sc: &SceneRealization<f64>| norm_sq(&sc.users[0].h_dl) / sc.budget.sigma2_dl;
        assert!((snr(&s1) / snr(&s2) - 1.0).abs() < 1e-9);
        let inr = |sc: &SceneRealization<f64>| sc.si.h.spectral_norm().powi(2) / sc.budget.sigma2_ul;
        assert!((inr(&s1) / inr(&s2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_rejects_empty_sample() {
        assert!(matches!(calibrate_budget(&[], &[0.0], CalibrationTargets::default()), Err(Error::EmptySample)));
    }

    #[test]
    fn uncalibrated_kappa_is_an_error() {
        let cfg = ArrayConfig::square(2);
        let sample: Vec<RawScene> = (0..10).map(|i| sample_raw_scene(&site(), &cfg, 1, i).unwrap()).collect();
        let cal = calibrate_budget(&sample, &[0.0], CalibrationTargets::default()).unwrap();
        assert!(matches!(sample[0].realize(10.0, &cal), Err(Error::Uncalibrated(_))));
    }
}
