//! Closed-form link metrics for one downlink/uplink user pair served in full duplex.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channelsim::{LinkBudget, SIChannel, UserPairChannel};
use crate::cmat::{cast_vec, dot_h, max_abs, norm_sq, CVec};
use crate::scalar::{cast, to_db, Scalar};
use crate::{Error, Result};

/// Transmit/receive beam pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamPair<T> {
    pub f: CVec<T>,
    pub w: CVec<T>,
}

impl<T: Scalar> BeamPair<T> {
    /// Per-antenna constraint `max_i |f_i| ≤ 1` (with a small numerical allowance).
    pub fn satisfies_power_constraint(&self) -> bool {
        max_abs(&self.f) <= T::one() + T::lit(1e-7)
    }

    pub fn cast<U: Scalar>(&self) -> BeamPair<U> {
        BeamPair { f: cast_vec(&self.f), w: cast_vec(&self.w) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkReport<T> {
    pub snr_dl: T,
    pub snr_ul: T,
    pub inr_dl: T,
    pub inr_ul: T,
    pub sinr_dl: T,
    pub sinr_ul: T,
    pub se_dl: T,
    pub se_ul: T,
    pub sse: T,
    pub capacity: T,
    pub nsse: T,
}

impl<T: Scalar> LinkReport<T> {
    /// `(name, linear value, dB value)` rows; spectral efficiencies have no dB form.
    pub fn metric_rows(&self) -> Vec<(&'static str, f64, Option<f64>)> {
        let ratio = |v: T| (v.to_f64_lossy(), Some(to_db(v).to_f64_lossy()));
        let plain = |v: T| (v.to_f64_lossy(), None);
        let rows = [
            ("snr_dl", ratio(self.snr_dl)),
            ("snr_ul", ratio(self.snr_ul)),
            ("inr_dl", ratio(self.inr_dl)),
            ("inr_ul", ratio(self.inr_ul)),
            ("sinr_dl", ratio(self.sinr_dl)),
            ("sinr_ul", ratio(self.sinr_ul)),
            ("se_dl", plain(self.se_dl)),
            ("se_ul", plain(self.se_ul)),
            ("sse", plain(self.sse)),
            ("capacity", plain(self.capacity)),
            ("nsse", plain(self.nsse)),
        ];
        rows.into_iter().map(|(n, (lin, db))| (n, lin, db)).collect()
    }
}

/// Interference-free sum capacity of a user pair, in bits/s/Hz.
pub fn capacity<T: Scalar>(user: &UserPairChannel<T>, budget: &LinkBudget<T>) -> T {
    let dl = budget.p_dl * norm_sq(&user.h_dl) / budget.sigma2_dl;
    let ul = budget.p_ul * norm_sq(&user.h_ul) / budget.sigma2_ul;
    (T::one() + dl).log2() + (T::one() + ul).log2()
}

/// Evaluates every link metric for serving `user` with `beams` across SI channel `si`.
pub fn link_report<T: Scalar>(
    beams: &BeamPair<T>,
    user: &UserPairChannel<T>,
    si: &SIChannel<T>,
    budget: &LinkBudget<T>,
) -> Result<LinkReport<T>> {
    let nt = si.nt();
    let nr = si.nr();
    if beams.f.len() != nt || user.h_dl.len() != nt || beams.w.len() != nr || user.h_ul.len() != nr {
        return Err(Error::Shape(format!(
            "beams ({}, {}) / users ({}, {}) vs SI {nr}x{nt}",
            beams.f.len(),
            beams.w.len(),
            user.h_dl.len(),
            user.h_ul.len()
        )));
    }
    let w_sq = norm_sq(&beams.w);
    if w_sq <= T::zero() {
        return Err(Error::DegenerateBeam("receive beam is zero".into()));
    }
    let ntf = T::from_usize_lossy(nt);
    let snr_dl = budget.p_dl * dot_h(&user.h_dl, &beams.f).norm_sqr() / (ntf * budget.sigma2_dl);
    let snr_ul = budget.p_ul * dot_h(&beams.w, &user.h_ul).norm_sqr() / (w_sq * budget.sigma2_ul);
    let hf = si.h.mul_vec(&beams.f);
    let inr_ul = budget.p_dl * dot_h(&beams.w, &hf).norm_sqr() / (ntf * w_sq * budget.sigma2_ul);
    let inr_dl = budget.p_ul * user.h_cross.norm_sqr() / budget.sigma2_dl;
    let sinr_dl = snr_dl / (T::one() + inr_dl);
    let sinr_ul = snr_ul / (T::one() + inr_ul);
    let se_dl = (T::one() + sinr_dl).log2();
    let se_ul = (T::one() + sinr_ul).log2();
    let sse = se_dl + se_ul;
    let cap = capacity(user, budget);
    let nsse = sse / cap;
    debug_assert!(
        !beams.satisfies_power_constraint() || nsse <= T::one() + T::lit(1e-4),
        "normalized SSE {nsse} exceeds 1"
    );
    Ok(LinkReport { snr_dl, snr_ul, inr_dl, inr_ul, sinr_dl, sinr_ul, se_dl, se_ul, sse, capacity: cap, nsse })
}

/// Overhead-discounted normalized SSE, `KL/(M+KL) · nsse`.
pub fn effective_nsse(nsse_mean: f64, m: usize, k: usize, l: usize) -> f64 {
    let kl = (k * l) as f64;
    kl / (m as f64 + kl) * nsse_mean
}

/// Complex conversion helper used where channels arrive in one precision and beams in another.
pub fn complex_cast<A: Scalar, B: Scalar>(z: Complex<A>) -> Complex<B> {
    Complex::new(cast(z.re), cast(z.im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channelsim::{assemble_si, DominantPath};
    use crate::cmat::CMat;
    use num_complex::Complex64;
    use num_traits::Zero;
    use proptest::prelude::*;

    fn dp() -> DominantPath {
        DominantPath { gain: Complex64::new(1.0, 0.0), azimuth: 0.0, elevation: 0.0 }
    }

    fn ones(n: usize) -> CVec<f64> {
        vec![Complex64::new(1.0, 0.0); n]
    }

    fn zero_si(nr: usize, nt: usize) -> SIChannel<f64> {
        assemble_si(CMat::zeros(nr, nt), CMat::zeros(nr, nt), 0.0).unwrap()
    }

    #[test]
    fn matched_all_ones_gives_nt() {
        let nt = 8;
        let user = UserPairChannel { h_dl: ones(nt), h_ul: ones(4), h_cross: Complex64::zero(), dominant_dl: dp(), dominant_ul: dp() };
        let beams = BeamPair { f: ones(nt), w: ones(4) };
        let r = link_report(&beams, &user, &zero_si(4, nt), &LinkBudget::unit()).unwrap();
        assert!((r.snr_dl - nt as f64).abs() < 1e-12);
        assert_eq!(r.sinr_dl, r.snr_dl);
        assert_eq!(r.sinr_ul, r.snr_ul);
        assert_eq!(r.inr_ul, 0.0);
    }

    #[test]
    fn capacity_examples() {
        let h = vec![Complex64::new(1.0, 0.0)];
        let user = UserPairChannel { h_dl: h.clone(), h_ul: h, h_cross: Complex64::zero(), dominant_dl: dp(), dominant_ul: dp() };
        assert!((capacity(&user, &LinkBudget::unit()) - 2.0).abs() < 1e-15);
        let boosted = UserPairChannel { h_dl: vec![Complex64::new(3f64.sqrt(), 0.0)], ..user };
        let dl_term = capacity(&boosted, &LinkBudget::unit()) - 1.0;
        assert!((dl_term - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_receive_beam_is_error() {
        let user = UserPairChannel { h_dl: ones(2), h_ul: ones(2), h_cross: Complex64::zero(), dominant_dl: dp(), dominant_ul: dp() };
        let beams = BeamPair { f: ones(2), w: vec![Complex64::zero(); 2] };
        assert!(matches!(link_report(&beams, &user, &zero_si(2, 2), &LinkBudget::unit()), Err(Error::DegenerateBeam(_))));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let user = UserPairChannel { h_dl: ones(2), h_ul: ones(2), h_cross: Complex64::zero(), dominant_dl: dp(), dominant_ul: dp() };
        let beams = BeamPair { f: ones(3), w: ones(2) };
        assert!(link_report(&beams, &user, &zero_si(2, 2), &LinkBudget::unit()).is_err());
    }

    #[test]
    fn cross_link_reduces_downlink() {
        let user = UserPairChannel { h_dl: ones(2), h_ul: ones(2), h_cross: Complex64::new(1.0, 0.0), dominant_dl: dp(), dominant_ul: dp() };
        let beams = BeamPair { f: ones(2), w: ones(2) };
        let r = link_report(&beams, &user, &zero_si(2, 2), &LinkBudget::unit()).unwrap();
        assert!((r.inr_dl - 1.0).abs() < 1e-15);
        assert!((r.sinr_dl - r.snr_dl / 2.0).abs() < 1e-12);
    }

    #[test]
    fn effective_examples() {
        assert!((effective_nsse(1.0, 256, 8, 56) - 448.0 / 704.0).abs() < 1e-15);
        assert!(effective_nsse(1.0, 256, 8, 56) < 0.64);
        assert_eq!(effective_nsse(0.7, 0, 8, 56), 0.7);
        assert!((effective_nsse(1.0, 128, 8, 56) - 448.0 / 576.0).abs() < 1e-15);
    }

    fn cvec(v: &[(f64, f64)]) -> CVec<f64> {
        v.iter().map(|&(a, b)| Complex64::new(a, b)).collect()
    }

    fn arb_cvec(n: usize) -> impl Strategy<Value = CVec<f64>> {
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n).prop_map(|v| cvec(&v))
    }

    proptest! {
        #[test]
        fn nsse_bounded_and_w_scale_invariant(
            f in arb_cvec(4), w in arb_cvec(3), hdl in arb_cvec(4), hul in arb_cvec(3),
            h in arb_cvec(12), scale in 0.01f64..50.0, phase in 0.0f64..6.3,
        ) {
            prop_assume!(norm_sq(&w) > 1e-6 && norm_sq(&hdl) > 1e-6 && norm_sq(&hul) > 1e-6);
            let m = f.iter().map(|x| x.norm()).fold(0.0, f64::max);
            prop_assume!(m > 1e-6);
            let f: CVec<f64> = f.iter().map(|x| x / m).collect();
            let si = assemble_si(CMat::from_vec(3, 4, h.clone()).unwrap(), CMat::from_vec(3, 4, h).unwrap(), 0.0).unwrap();
            let user = UserPairChannel { h_dl: hdl, h_ul: hul, h_cross: Complex64::zero(), dominant_dl: dp(), dominant_ul: dp() };
            let budget = LinkBudget { p_dl: 2.0, p_ul: 0.5, sigma2_dl: 0.3, sigma2_ul: 0.1 };
            let r = link_report(&BeamPair { f: f.clone(), w: w.clone() }, &user, &si, &budget).unwrap();
            prop_assert!(r.nsse >= 0.0 && r.nsse <= 1.0 + 1e-12);
            prop_assert!(r.capacity >= r.sse);
            let c = Complex64::from_polar(scale, phase);
            let ws: CVec<f64> = w.iter().map(|x| x * c).collect();
            let r2 = link_report(&BeamPair { f, w: ws }, &user, &si, &budget).unwrap();
            prop_assert!((r2.nsse - r.nsse).abs() <= 1e-12 * r.nsse.max(1e-300) + 1e-15);
            prop_assert!((r2.inr_ul - r.inr_ul).abs() <= 1e-12 * r.inr_ul.max(1e-300) + 1e-15);
        }

        #[test]
        fn effective_decreases_in_m(m in 0usize..500, k in 1usize..40, l in 1usize..200, nsse in 0.01f64..1.0) {
            prop_assert!(effective_nsse(nsse, m + 1, k, l) < effective_nsse(nsse, m, k, l));
        }
    }
}
