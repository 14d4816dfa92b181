use fdbeam_core::arraygeom::{dft_codebook, ArrayConfig};
use fdbeam_core::baselines::{csi_bounds, lmmse_estimate, lmmse_scan, mrt_beam};
use fdbeam_core::channelsim::{assemble_si, calibrate_budget, sample_raw_scene, Calibration, RawScene, SiteModel};
use fdbeam_core::cmat::{max_abs, CMat};
use fdbeam_core::linkmetrics::{effective_nsse, link_report, BeamPair};
use fdbeam_core::probing::normalize_tx_beam;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn fixture() -> &'static (Vec<RawScene>, Calibration) {
    static F: OnceLock<(Vec<RawScene>, Calibration)> = OnceLock::new();
    F.get_or_init(|| {
        let site = SiteModel::generate(21);
        let cfg = ArrayConfig::square(3);
        let scenes: Vec<_> = (0..60).map(|s| sample_raw_scene(&site, &cfg, 4, 300 + s).unwrap()).collect();
        let cal = calibrate_budget(&scenes, &[-10.0, 0.0, 10.0], Default::default()).unwrap();
        (scenes, cal)
    })
}

fn cvec(parts: &[(f64, f64)]) -> Vec<Complex64> {
    parts.iter().map(|&(a, b)| Complex64::new(a, b)).collect()
}

fn entries(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-4.0f64..4.0, -4.0f64..4.0), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn nsse_in_unit_interval(scene in 0usize..60, user in 0usize..4, kappa in 0usize..3, f in entries(9), w in entries(9)) {
        let (scenes, cal) = fixture();
        let s = scenes[scene].realize([-10.0, 0.0, 10.0][kappa], cal).unwrap();
        let f = cvec(&f);
        prop_assume!(max_abs(&f) > 1e-6);
        let w = cvec(&w);
        prop_assume!(w.iter().map(|x| x.norm_sqr()).sum::<f64>() > 1e-9);
        let beams = BeamPair { f: normalize_tx_beam(&f).unwrap(), w };
        prop_assert!(beams.satisfies_power_constraint());
        let r = link_report(&beams, &s.users[user], &s.si, &s.budget).unwrap();
        prop_assert!(r.nsse >= 0.0 && r.nsse <= 1.0 + 1e-12, "nsse {}", r.nsse);
        prop_assert!(r.sinr_ul <= r.snr_ul);
    }

    #[test]
    fn receive_scaling_invariance(scene in 0usize..60, f in entries(9), w in entries(9), mag in 0.01f64..100.0, phase in 0.0f64..6.28) {
        let (scenes, cal) = fixture();
        let s = scenes[scene].realize(0.0, cal).unwrap();
        let f = cvec(&f);
        prop_assume!(max_abs(&f) > 1e-6);
        let f = normalize_tx_beam(&f).unwrap();
        let w = cvec(&w);
        prop_assume!(w.iter().map(|x| x.norm_sqr()).sum::<f64>() > 1e-6);
        let c = Complex64::from_polar(mag, phase);
        let a = link_report(&BeamPair { f: f.clone(), w: w.clone() }, &s.users[0], &s.si, &s.budget).unwrap();
        let b = link_report(&BeamPair { f, w: w.iter().map(|x| x * c).collect() }, &s.users[0], &s.si, &s.budget).unwrap();
        prop_assert!((a.nsse - b.nsse).abs() < 1e-12);
        prop_assert!(((a.sinr_ul - b.sinr_ul) / a.sinr_ul).abs() < 1e-10);
    }

    #[test]
    fn effective_never_exceeds_raw(raw in 0.0f64..1.0, m in 0usize..200, k in 1usize..40, l in 1usize..200) {
        let e = effective_nsse(raw, m, k, l);
        prop_assert!(e <= raw + 1e-15 && e >= 0.0);
    }

    #[test]
    fn vector_bound_dominates_iff_few_users(k in 1usize..64, l in 1usize..100, side in 2usize..6) {
        let n = side * side;
        let b = csi_bounds(k, l, n, n);
        prop_assert_eq!(b.vector >= b.matrix, k <= n);
    }
}

/// Solves `z = α Gᴴ h` for `h` directly; the noiseless LMMSE scan must agree.
#[test]
fn noiseless_scan_recovers_effective_si() {
    let (scenes, cal) = fixture();
    let shape = (3, 3);
    let dft = dft_codebook::<f64>(9, shape).unwrap();
    let g = DMatrix::from_fn(9, 9, |r, c| dft[(r, c)]);
    for raw in scenes.iter().take(20) {
        let s = raw.realize(0.0, cal).unwrap();
        // an essentially noiseless budget
        let mut budget = s.budget;
        budget.sigma2_ul *= 1e-14;
        let f = mrt_beam(&s.user_info[0].y_dl).unwrap();
        let z = lmmse_scan(&s.si, &f, &dft, &budget, None).unwrap();
        let alpha = (budget.p_dl / 9.0).sqrt();
        let truth = s.si.h.mul_vec(&f);
        let rho = cal.for_kappa(0.0).unwrap().lmmse_prior_rho;
        let est = lmmse_estimate(&z, &dft, alpha, rho, budget.sigma2_ul);
        let solved = (g.adjoint() * Complex64::new(alpha, 0.0)).lu().solve(&DVector::from_vec(z.clone())).unwrap();
        let scale: f64 = truth.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        for i in 0..9 {
            assert!((solved[i] - truth[i]).norm() / scale < 1e-9);
            assert!((est[i] - truth[i]).norm() / scale < 1e-9, "estimate off at {i}");
        }
    }
}

#[test]
fn calibration_hits_targets_on_its_sample() {
    let (scenes, cal) = fixture();
    let b = cal.budget;
    let users = scenes.iter().flat_map(|s| s.users.iter());
    let n = scenes.len() as f64 * 4.0;
    let dl: f64 = users.clone().map(|u| 10.0 * (b.p_dl * u.h_dl.iter().map(|x| x.norm_sqr()).sum::<f64>() / b.sigma2_dl).log10()).sum::<f64>() / n;
    let ul: f64 = users.map(|u| 10.0 * (b.p_ul * u.h_ul.iter().map(|x| x.norm_sqr()).sum::<f64>() / b.sigma2_ul).log10()).sum::<f64>() / n;
    assert!((dl - 10.0).abs() < 1e-9 && (ul - 10.0).abs() < 1e-9);
    for kappa in [-10.0, 0.0, 10.0] {
        let mut acc = 0.0;
        for raw in scenes {
            let h = raw.realize(kappa, cal).unwrap().si.h;
            let m = DMatrix::from_fn(h.rows(), h.cols(), |r, c| h[(r, c)]);
            let smax = m.singular_values().max();
            acc += 10.0 * (b.p_dl * smax * smax / b.sigma2_ul).log10();
        }
        assert!((acc / scenes.len() as f64 - 40.0).abs() < 1e-6, "kappa {kappa}");
    }
}

#[test]
fn rician_limits() {
    let (scenes, _) = fixture();
    let raw = &scenes[0];
    let los = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), f64::INFINITY).unwrap();
    let nlos = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), f64::NEG_INFINITY).unwrap();
    assert!(los.h.max_abs_diff(&raw.h_los) < 1e-8);
    assert!(nlos.h.max_abs_diff(&raw.h_nlos) < 1e-8);
    let balanced = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), 0.0).unwrap();
    let expect = raw.h_los.lin_comb(0.5f64.sqrt(), &raw.h_nlos, 0.5f64.sqrt()).unwrap();
    assert!(balanced.h.max_abs_diff(&expect) < 1e-12);
    let _: CMat<f64> = balanced.h;
}
