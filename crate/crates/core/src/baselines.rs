//! Reference schemes: per-pair LMMSE with an `Nr`-point DFT scan, and the closed-form
//! Vector/Matrix CSI bounds that assume capacity is reached after explicit estimation.

use num_complex::Complex;

use crate::arraygeom::dft_codebook;
use crate::channelsim::{LinkBudget, SIChannel, SceneRealization};
use crate::cmat::{dot_h, norm_sq, CMat, CVec};
use crate::linkmetrics::{effective_nsse, BeamPair};
use crate::probing::{measure_with_noise, normalize_tx_beam, probing_noise, ProbingCodebooks};
use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult<T> {
    /// Serving beams (LMMSE only; the CSI bounds never materialize beams).
    pub beams: Vec<BeamPair<T>>,
    pub measurements_used: usize,
    /// Normalized SSE the bound assumes (always 1).
    pub nsse_assumed: Option<f64>,
}

/// Maximum-ratio transmit beam matched to `y_dl` (under `SNR ∝ |h_dlᴴ f|²` the matched
/// beam is `f ∝ y_dl`), scaled to the per-antenna limit.
pub fn mrt_beam<T: Scalar>(y_dl: &[Complex<T>]) -> Result<CVec<T>> {
    normalize_tx_beam(y_dl)
}

/// `Nr` receive-side measurements of `h_SI = H f` through the columns of `dft`.
pub fn lmmse_scan<T: Scalar>(
    si: &SIChannel<T>,
    f: &[Complex<T>],
    dft: &CMat<T>,
    budget: &LinkBudget<T>,
    noise_seed: Option<u64>,
) -> Result<CVec<T>> {
    let n = dft.cols();
    let f_cb = CMat::from_fn(f.len(), n, |r, _| f[r]);
    let cb = ProbingCodebooks::new(f_cb, dft.clone())?;
    let noise = noise_seed.map(|s| probing_noise(si.nr(), n, budget.sigma2_ul, s));
    measure_with_noise(&cb, si, budget, noise.as_ref())
}

/// LMMSE estimate of `h_SI` from `z = α·Gᴴ h_SI + Gᴴ n` with prior `h_SI ~ CN(0, ρI)` and
/// `n ~ CN(0, σ²I)`. `G` must have orthogonal columns of equal energy (a DFT codebook),
/// which turns the estimator into `ρα / (n(ρα² + σ²)) · G z`.
pub fn lmmse_estimate<T: Scalar>(z: &[Complex<T>], dft: &CMat<T>, alpha: T, rho: T, sigma2: T) -> CVec<T> {
    let n = T::from_usize_lossy(dft.cols());
    let gain = rho * alpha / (n * (rho * alpha * alpha + sigma2));
    dft.mul_vec(z).into_iter().map(|x| x * gain).collect()
}

/// SINR-maximizing combiner `(a ĥĥᴴ + σ²I)⁻¹ y_ul` against interferer `ĥ`, with
/// `a = P_DL/Nt`, evaluated through the Sherman-Morrison identity.
pub fn lmmse_combiner<T: Scalar>(h_si_hat: &[Complex<T>], y_ul: &[Complex<T>], budget: &LinkBudget<T>, nt: usize) -> CVec<T> {
    let a = budget.p_dl / T::from_usize_lossy(nt);
    let s2 = budget.sigma2_ul;
    let proj = dot_h(h_si_hat, y_ul) * (a / (s2 + a * norm_sq(h_si_hat)));
    y_ul.iter().zip(h_si_hat).map(|(y, h)| (y - h * proj) / s2).collect()
}

/// Runs the LMMSE baseline for user pair `pair_index`: MRT from partial knowledge, a
/// DFT scan of the effective SI channel, then the LMMSE combiner on `y_ul`.
pub fn lmmse_baseline<T: Scalar>(
    scene: &SceneRealization<T>,
    pair_index: usize,
    rng_seed: u64,
    rx_shape: (usize, usize),
    rho: T,
) -> Result<BaselineResult<T>> {
    let info = scene
        .user_info
        .get(pair_index)
        .ok_or_else(|| Error::InvalidConfig(format!("pair {pair_index} out of {}", scene.k())))?;
    let nr = scene.si.nr();
    let nt = scene.si.nt();
    let dft = dft_codebook::<T>(nr, rx_shape)?;
    let f = mrt_beam(&info.y_dl)?;
    let z = lmmse_scan(&scene.si, &f, &dft, &scene.budget, Some(rng_seed))?;
    let alpha = (scene.budget.p_dl / T::from_usize_lossy(nt)).sqrt();
    let h_hat = lmmse_estimate(&z, &dft, alpha, rho, scene.budget.sigma2_ul);
    let w = lmmse_combiner(&h_hat, &info.y_ul, &scene.budget, nt);
    Ok(BaselineResult { beams: vec![BeamPair { f, w }], measurements_used: nr, nsse_assumed: None })
}

/// Effective normalized SSE of the two explicit-CSI bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsiBounds {
    /// `KL / (K·Nr + KL)`: per-pair estimation of `H f`.
    pub vector: f64,
    /// `KL / (Nt·Nr + KL)`: estimation of the full matrix.
    pub matrix: f64,
}

pub fn csi_bounds(k: usize, l: usize, nt: usize, nr: usize) -> CsiBounds {
    CsiBounds { vector: effective_nsse(1.0, k * nr, k, l), matrix: effective_nsse(1.0, nt * nr, k, l) }
}

pub fn vector_csi_result<T>(k: usize, nr: usize) -> BaselineResult<T> {
    BaselineResult { beams: Vec::new(), measurements_used: k * nr, nsse_assumed: Some(1.0) }
}

pub fn matrix_csi_result<T>(nt: usize, nr: usize) -> BaselineResult<T> {
    BaselineResult { beams: Vec::new(), measurements_used: nt * nr, nsse_assumed: Some(1.0) }
}
