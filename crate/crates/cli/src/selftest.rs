//! Fast oracle and invariant checks runnable from the command line.

use std::io::Write;

use fdbeam_core::arraygeom::ArrayConfig;
use fdbeam_core::baselines::csi_bounds;
use fdbeam_core::channelsim::{assemble_si, calibrate_budget, sample_raw_scene, SiteModel};
use fdbeam_core::cmat::{dot_h, max_abs, CMat};
use fdbeam_core::linkmetrics::{effective_nsse, link_report, BeamPair};
use fdbeam_core::probing::{measure_with_noise, normalize_tx_beam, probing_noise, ProbingCodebooks};
use fdbeam_nn::gradcheck::check_policy_gradient;
use fdbeam_nn::policy::noise_normalized;
use fdbeam_nn::{ModelConfig, Policy64};
use num_complex::Complex64;

type Check = (&'static str, fn() -> Result<(), String>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Gaussian vectors drawn through the seeded noise generator.
fn gaussian(n: usize, seed: u64) -> Vec<Complex64> {
    probing_noise::<f64>(n, 1, 1.0, seed).column(0)
}

fn bounds() -> Result<(), String> {
    let b = csi_bounds(8, 56, 16, 16);
    ensure((b.matrix - 448.0 / 704.0).abs() < 1e-12 && (b.vector - 448.0 / 576.0).abs() < 1e-12, || format!("{b:?}"))
}

fn overhead() -> Result<(), String> {
    let e = effective_nsse(1.0, 16, 8, 56);
    ensure((e - 448.0 / 464.0).abs() < 1e-12, || format!("{e}"))
}

fn measurement_model() -> Result<(), String> {
    let site = SiteModel::generate(2);
    let cfg = ArrayConfig::square(3);
    for i in 0..20u64 {
        let raw = sample_raw_scene(&site, &cfg, 1, 40 + i).map_err(|e| e.to_string())?;
        let si = assemble_si(raw.h_los, raw.h_nlos, -5.0 + i as f64).map_err(|e| e.to_string())?;
        let m = 1 + (i as usize * 7) % 24;
        let f_cols: Vec<_> = (0..m).map(|c| normalize_tx_beam(&gaussian(9, 1000 * i + c as u64)).unwrap()).collect();
        let w_cols: Vec<_> = (0..m).map(|c| gaussian(9, 5000 * i + c as u64)).collect();
        let cb = ProbingCodebooks::new(CMat::from_columns(9, &f_cols).unwrap(), CMat::from_columns(9, &w_cols).unwrap())
            .map_err(|e| e.to_string())?;
        let budget = fdbeam_core::channelsim::LinkBudget { p_dl: 2.0, p_ul: 1.0, sigma2_dl: 1.0, sigma2_ul: 0.5 };
        let noise = probing_noise::<f64>(9, m, 0.5, i);
        let z = measure_with_noise(&cb, &si, &budget, Some(&noise)).map_err(|e| e.to_string())?;
        let alpha = (budget.p_dl / 9.0).sqrt();
        for c in 0..m {
            let hf = si.h.mul_vec(&f_cols[c]);
            let want = dot_h(&w_cols[c], &hf) * alpha + dot_h(&w_cols[c], &noise.column(c));
            let rel = (z[c] - want).norm() / want.norm().max(1e-300);
            ensure(rel < 1e-10, || format!("instance {i} probe {c}: relative error {rel:e}"))?;
        }
    }
    Ok(())
}

fn invariants() -> Result<(), String> {
    let site = SiteModel::generate(3);
    let cfg = ArrayConfig::square(2);
    let sample: Vec<_> = (0..100).map(|s| sample_raw_scene(&site, &cfg, 4, 9000 + s).unwrap()).collect();
    let cal = calibrate_budget(&sample, &[0.0], Default::default()).map_err(|e| e.to_string())?;
    for (i, raw) in sample.iter().take(50).enumerate() {
        let scene = raw.realize(0.0, &cal).map_err(|e| e.to_string())?;
        for (j, u) in scene.users.iter().enumerate() {
            let seed = (i * 16 + j) as u64;
            let f = normalize_tx_beam(&gaussian(4, seed)).map_err(|e| e.to_string())?;
            ensure(max_abs(&f) <= 1.0 + 1e-7, || "normalized beam exceeds the per-antenna limit".into())?;
            let w = gaussian(4, seed + 7_000_000);
            let r = link_report(&BeamPair { f: f.clone(), w: w.clone() }, u, &scene.si, &scene.budget).map_err(|e| e.to_string())?;
            ensure((0.0..=1.0).contains(&r.nsse), || format!("nsse {} outside [0, 1]", r.nsse))?;
            let ws: Vec<_> = w.iter().map(|x| x * Complex64::new(0.0, 3.5)).collect();
            let r2 = link_report(&BeamPair { f, w: ws }, u, &scene.si, &scene.budget).map_err(|e| e.to_string())?;
            ensure((r2.nsse - r.nsse).abs() < 1e-12 && ((r2.inr_ul - r.inr_ul) / r.inr_ul).abs() < 1e-12, || "receive-beam scaling changed the report".into())?;
        }
    }
    let raw = &sample[0];
    let los = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), f64::INFINITY).map_err(|e| e.to_string())?;
    let nlos = assemble_si(raw.h_los.clone(), raw.h_nlos.clone(), f64::NEG_INFINITY).map_err(|e| e.to_string())?;
    ensure(los.h.max_abs_diff(&raw.h_los) < 1e-8 && nlos.h.max_abs_diff(&raw.h_nlos) < 1e-8, || "Rician limits".into())
}

fn gradient() -> Result<(), String> {
    let site = SiteModel::generate(5);
    let cfg = ArrayConfig::square(2);
    let sample: Vec<_> = (0..50).map(|s| sample_raw_scene(&site, &cfg, 4, 1000 + s).unwrap()).collect();
    let cal = calibrate_budget(&sample, &[0.0], Default::default()).map_err(|e| e.to_string())?;
    let scene = noise_normalized(&sample_raw_scene(&site, &cfg, 2, 3).unwrap().realize(0.0, &cal).unwrap());
    let policy = Policy64::new(ModelConfig { d_embed: 16, n_heads: 4, max_m: 4, arrays: vec![(4, 4)], init_seed: 2, ..ModelConfig::default() })
        .map_err(|e| e.to_string())?;
    let noise = probing_noise::<f64>(4, 2, 1.0, 77);
    let checks = check_policy_gradient(&policy, &scene, 2, &noise, 1e-6).map_err(|e| e.to_string())?;
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).expect("parameters");
    ensure(worst.rel_error < 1e-4, || format!("{} relative error {:e}", worst.name, worst.rel_error))
}

pub const CHECKS: [Check; 5] = [
    ("csi bounds", bounds),
    ("overhead accounting", overhead),
    ("measurement model", measurement_model),
    ("metric invariants", invariants),
    ("policy gradient", gradient),
];

/// Runs every check, printing one line each; returns the number of failures.
pub fn run(out: &mut impl Write) -> std::io::Result<usize> {
    let mut failures = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => writeln!(out, "PASS {name}")?,
            Err(e) => {
                failures += 1;
                writeln!(out, "FAIL {name}: {e}")?;
            }
        }
    }
    Ok(failures)
}
