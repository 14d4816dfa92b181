use std::fs;
use std::sync::OnceLock;

use fdbeam_core::arraygeom::ArrayConfig;
use fdbeam_core::channelsim::SiteModel;
use fdbeam_core::dataset::{build_dataset, DatasetSpec};
use fdbeam_exp::eval::{
    evaluate_method, parse_values, run_sweep, write_results, EvalConfig, EvalOptions, Method, ModelSet, SweepAxis, SweepSpec, CDF_HEADER, METRICS,
    ROWS_FILE, ROWS_HEADER,
};
use fdbeam_exp::plot::{plot_results, Table};
use fdbeam_exp::train::SceneBank;
use fdbeam_nn::{ModelConfig, Policy32};

const SCENES: usize = 6;

fn bank() -> &'static SceneBank {
    static BANK: OnceLock<SceneBank> = OnceLock::new();
    BANK.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let mut spec = DatasetSpec::standard(SiteModel::generate(9), ArrayConfig::square(3), 2, [1, 1, SCENES], 6, vec![-10.0, 0.0, 10.0]);
        spec.calibration_split.count = 100;
        let ds = build_dataset(&spec, tmp.path()).unwrap();
        SceneBank::from_dataset(&ds, "test").unwrap()
    })
}

fn model() -> Policy32 {
    Policy32::new(ModelConfig { d_embed: 16, n_heads: 2, max_m: 12, arrays: vec![(9, 9)], init_seed: 4, ..ModelConfig::default() }).unwrap()
}

fn config() -> EvalConfig {
    EvalConfig { k: 4, l: 20, m: 8, kappa_db: 0.0, nt: 9, nr: 9 }
}

fn opts() -> EvalOptions {
    EvalOptions { n_test_scenes: SCENES, seed: 3 }
}

#[test]
fn every_method_yields_one_sample_per_pair() {
    let p = model();
    for method in Method::ALL {
        let r = evaluate_method(method, Some(&p), Some(bank()), config(), &opts()).unwrap();
        assert!(r.mean_effective_nsse <= r.mean_nsse + 1e-15, "{method}");
        if method.is_bound() {
            assert!(r.samples.is_empty());
            continue;
        }
        assert_eq!(r.samples.len(), SCENES * 4, "{method}");
        assert!(r.samples.nsse.iter().all(|v| (0.0..=1.0).contains(v)), "{method}");
        assert!(r.mean_nsse > 0.0);
    }
}

#[test]
fn measurement_charges() {
    let p = model();
    let charged = |m: Method| evaluate_method(m, Some(&p), Some(bank()), config(), &opts()).unwrap().measurements;
    assert_eq!(charged(Method::Proposed), 8);
    assert_eq!(charged(Method::RandomProbing), 8);
    assert_eq!(charged(Method::Lmmse), 4 * 9);
    assert_eq!(charged(Method::MrtMrc), 0);
    assert_eq!(charged(Method::VectorCsi), 4 * 9);
    assert_eq!(charged(Method::MatrixCsi), 81);
}

#[test]
fn evaluation_is_reproducible() {
    let p = model();
    let a = evaluate_method(Method::Proposed, Some(&p), Some(bank()), config(), &opts()).unwrap();
    let b = evaluate_method(Method::Proposed, Some(&p), Some(bank()), config(), &opts()).unwrap();
    assert_eq!(a, b);
    let other = evaluate_method(Method::Proposed, Some(&p), Some(bank()), config(), &EvalOptions { seed: 4, ..opts() }).unwrap();
    assert_ne!(a.samples, other.samples);
}

#[test]
fn methods_needing_inputs_fail_cleanly() {
    assert!(evaluate_method(Method::Proposed, None, Some(bank()), config(), &opts()).is_err());
    assert!(evaluate_method(Method::Lmmse, None, None, config(), &opts()).is_err());
    let too_many = EvalConfig { k: 7, ..config() };
    assert!(evaluate_method(Method::MrtMrc, None, Some(bank()), too_many, &opts()).is_err());
}

#[test]
fn kappa_sweep_writes_rows_cdfs_and_plots() {
    let spec = SweepSpec {
        name: "kappa".into(),
        axis: SweepAxis::KappaDb,
        values: parse_values("-10:10:10").unwrap(),
        fixed: config(),
        n_test_scenes: SCENES,
        seed: 1,
    };
    let methods = [Method::Proposed, Method::MrtMrc, Method::MatrixCsi];
    let rows = run_sweep(&spec, &methods, &ModelSet::shared(model()), std::slice::from_ref(bank())).unwrap();
    assert_eq!(rows.len(), 3 * methods.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.value, Some(spec.values[i / methods.len()]));
        assert_eq!(r.row.method, methods[i % methods.len()]);
        assert!(r.row.error.is_none());
    }
    assert!(rows.iter().filter(|r| r.row.method == Method::Proposed).all(|r| r.row.model_source == "shared"));

    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &rows).unwrap();
    let text = fs::read_to_string(dir.path().join(ROWS_FILE)).unwrap();
    assert_eq!(text.lines().next(), Some(ROWS_HEADER));
    assert_eq!(text.lines().count(), 1 + rows.len());
    for metric in METRICS {
        let cdf = fs::read_to_string(dir.path().join(format!("cdf_{metric}.csv"))).unwrap();
        assert_eq!(cdf.lines().next(), Some(CDF_HEADER));
        // two sampled methods at three points
        assert_eq!(cdf.lines().count(), 1 + 2 * 3 * SCENES * 4);
    }
    let table = Table::read(&dir.path().join("cdf_nsse.csv")).unwrap();
    let col = table.col("cdf").unwrap();
    assert_eq!(table.f64_at(SCENES * 4 - 1, col), 1.0);

    let plots = plot_results(dir.path()).unwrap();
    assert!(plots.iter().any(|p| p.ends_with("raw_nsse_vs_kappa_db.svg")));
    assert!(plots.iter().any(|p| p.ends_with("effective_nsse_vs_kappa_db.svg")));
    assert!(plots.iter().all(|p| fs::metadata(p).unwrap().len() > 0));
}

#[test]
fn failing_points_are_recorded_not_fatal() {
    let spec = SweepSpec {
        name: "k".into(),
        axis: SweepAxis::K,
        values: vec![2.0, 7.0],
        fixed: config(),
        n_test_scenes: SCENES,
        seed: 1,
    };
    let rows = run_sweep(&spec, &[Method::MrtMrc], &ModelSet::default(), std::slice::from_ref(bank())).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].row.error.is_none());
    assert!(rows[1].row.error.is_some());
    assert!(rows[1].row.mean_nsse.is_nan());
}

#[test]
fn array_sweep_spans_bound_sizes_without_scenes() {
    let spec = SweepSpec {
        name: "array".into(),
        axis: SweepAxis::ArraySize,
        values: parse_values("4:16:4").unwrap(),
        fixed: EvalConfig::default(),
        n_test_scenes: 10,
        seed: 0,
    };
    let rows = run_sweep(&spec, &[Method::VectorCsi, Method::MatrixCsi], &ModelSet::default(), &[]).unwrap();
    let sizes: Vec<usize> = rows.iter().step_by(2).map(|r| r.row.config.nt * r.row.config.nr).collect();
    assert_eq!(sizes, vec![256, 4096, 20736, 65536]);
    for pair in rows.chunks(2) {
        let (v, m) = (&pair[0].row, &pair[1].row);
        assert!(v.error.is_none() && m.error.is_none());
        // matrix CSI overhead grows with the array product and overtakes vector CSI
        assert!(m.mean_effective_nsse <= v.mean_effective_nsse);
    }
    let last = &rows[rows.len() - 1].row;
    assert!((last.mean_effective_nsse - 448.0 / (448.0 + 65536.0)).abs() < 1e-12);
}
