//! Self-interference probing: per-antenna beam normalization and the measurement model.

use num_complex::Complex;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channelsim::{LinkBudget, SIChannel};
use crate::cmat::{max_abs, CMat, CVec};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Transmit (`nt × M`) and receive (`nr × M`) probing codebooks; column `m` is beam pair `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbingCodebooks<T> {
    pub f_cb: CMat<T>,
    pub w_cb: CMat<T>,
}

impl<T: Scalar> ProbingCodebooks<T> {
    pub fn new(f_cb: CMat<T>, w_cb: CMat<T>) -> Result<Self> {
        if f_cb.cols() != w_cb.cols() {
            return Err(Error::Shape(format!("{} tx probes vs {} rx probes", f_cb.cols(), w_cb.cols())));
        }
        let cb = Self { f_cb, w_cb };
        if !cb.satisfies_power_constraint() {
            return Err(Error::InvalidConfig("transmit probe exceeds the per-antenna limit".into()));
        }
        Ok(cb)
    }

    pub fn m(&self) -> usize {
        self.f_cb.cols()
    }

    pub fn satisfies_power_constraint(&self) -> bool {
        (0..self.m()).all(|c| max_abs(&self.f_cb.column(c)) <= T::one() + T::lit(1e-7))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementRecord<T> {
    pub z: CVec<T>,
    pub noise_seed: Option<u64>,
    /// Factor the serving synthesizer multiplies `z` by before ingesting it.
    pub scale_applied: T,
}

/// Scales `f_raw` by its largest entry magnitude so the result has max-magnitude one.
pub fn normalize_tx_beam<T: Scalar>(f_raw: &[Complex<T>]) -> Result<CVec<T>> {
    let m = max_abs(f_raw);
    if m <= T::zero() || !m.is_finite() {
        return Err(Error::DegenerateBeam("transmit beam has no nonzero finite entry".into()));
    }
    Ok(f_raw.iter().map(|x| x / m).collect())
}

/// `nr × M` matrix of i.i.d. `CN(0, σ²)` entries.
pub fn probing_noise<T: Scalar>(nr: usize, m: usize, sigma2: T, seed: u64) -> CMat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = (sigma2.to_f64_lossy() / 2.0).sqrt();
    CMat::from_fn(nr, m, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex::new(T::lit(re * std), T::lit(im * std))
    })
}

/// `z = √(P_DL/Nt)·diag(Wᴴ H F) + diag(Wᴴ N)` for an explicit noise matrix `N` (`nr × M`).
pub fn measure_with_noise<T: Scalar>(
    cb: &ProbingCodebooks<T>,
    si: &SIChannel<T>,
    budget: &LinkBudget<T>,
    noise: Option<&CMat<T>>,
) -> Result<CVec<T>> {
    let (nr, nt) = si.h.shape();
    let m = cb.m();
    if cb.f_cb.rows() != nt || cb.w_cb.rows() != nr {
        return Err(Error::Shape(format!(
            "codebooks {}x{m} / {}x{m} vs SI {nr}x{nt}",
            cb.f_cb.rows(),
            cb.w_cb.rows()
        )));
    }
    if let Some(n) = noise {
        if n.shape() != (nr, m) {
            return Err(Error::Shape(format!("noise {:?} vs {nr}x{m}", n.shape())));
        }
    }
    let alpha = (budget.p_dl / T::from_usize_lossy(nt)).sqrt();
    let hf = si.h.matmul(&cb.f_cb)?;
    // diag(Wᴴ X) is the column-wise sum of conj(W) ⊙ X
    let mut z = vec![Complex::zero(); m];
    for r in 0..nr {
        for (c, zc) in z.iter_mut().enumerate() {
            let mut v = hf[(r, c)] * alpha;
            if let Some(n) = noise {
                v += n[(r, c)];
            }
            *zc += cb.w_cb[(r, c)].conj() * v;
        }
    }
    Ok(z)
}

/// Collects `M` noisy SI measurements with fresh noise drawn from `noise_seed`.
pub fn measure<T: Scalar>(
    cb: &ProbingCodebooks<T>,
    si: &SIChannel<T>,
    budget: &LinkBudget<T>,
    noise_seed: u64,
) -> Result<MeasurementRecord<T>> {
    let noise = probing_noise(si.nr(), cb.m(), budget.sigma2_ul, noise_seed);
    let z = measure_with_noise(cb, si, budget, Some(&noise))?;
    Ok(MeasurementRecord { z, noise_seed: Some(noise_seed), scale_applied: T::one() })
}

/// Conditioning factor `1/√(σ²_UL · 10⁴)` applied to `z` before it enters the network.
pub fn measurement_conditioning<T: Scalar>(sigma2_ul: T) -> T {
    T::one() / (sigma2_ul * T::lit(1e4)).sqrt()
}
