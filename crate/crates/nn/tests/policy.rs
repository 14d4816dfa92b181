use fdbeam_core::arraygeom::{steering_vector, Aperture, ArrayConfig};
use fdbeam_core::channelsim::{
    assemble_si, calibrate_budget, sample_raw_scene, DominantPath, LinkBudget, SceneRealization, SiteModel,
    UserInfo, UserPairChannel,
};
use fdbeam_core::cmat::{max_abs, CMat};
use fdbeam_core::probing::probing_noise;
use fdbeam_nn::beamops::{beam_loss_node, beams_from_tokens, realify_user_info};
use fdbeam_nn::checkpoint;
use fdbeam_nn::policy::{noise_normalized, z_matrix};
use fdbeam_nn::{Graph, Matrix, ModelConfig, Policy64, ProbeSource};
use num_complex::Complex64;
use proptest::prelude::*;

fn scene(k: usize, seed: u64) -> SceneRealization<f64> {
    let site = SiteModel::generate(5);
    let cfg = ArrayConfig::square(2);
    let sample: Vec<_> = (0..50).map(|s| sample_raw_scene(&site, &cfg, 8, 1000 + s).unwrap()).collect();
    let cal = calibrate_budget(&sample, &[0.0], Default::default()).unwrap();
    noise_normalized(&sample_raw_scene(&site, &cfg, k, seed).unwrap().realize(0.0, &cal).unwrap())
}

fn model(d: usize) -> Policy64 {
    Policy64::new(ModelConfig { d_embed: d, n_heads: 4, max_m: 8, arrays: vec![(4, 4)], init_seed: 4, ..ModelConfig::default() })
        .unwrap()
}

fn max_diff(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn realified(s: &SceneRealization<f64>) -> Matrix<f64> {
    let rows: Vec<f64> = s.user_info.iter().flat_map(|i| realify_user_info(&i.y_dl, &i.y_ul)).collect();
    Matrix::from_vec(s.k(), 16, rows)
}

#[test]
fn realify_example() {
    let c = Complex64::new;
    let v = realify_user_info(&[c(1.0, 2.0), c(3.0, 0.0)], &[c(0.0, 1.0), c(-1.0, 0.0)]);
    assert_eq!(v, vec![1.0, 3.0, 2.0, 0.0, 0.0, -1.0, 1.0, 0.0]);
    assert_eq!(realify_user_info::<f64>(&[Complex64::default(); 16], &[Complex64::default(); 16]).len(), 64);
}

#[test]
fn embedding_shapes_follow_config() {
    let p = Policy64::new(ModelConfig { arrays: vec![(4, 4)], ..ModelConfig::default() }).unwrap();
    let s = scene(1, 1);
    let mut g = Graph::new(&p.store);
    let y = g.input(realified(&s));
    let e = p.encode_users(&mut g, y, 4, 4).unwrap();
    assert_eq!(g.value(e).shape(), (1, 320));
    assert!(p.encode_users(&mut g, y, 16, 16).is_err());
}

#[test]
fn encoder_and_server_are_permutation_equivariant() {
    let p = model(16);
    let s = scene(5, 2);
    let perm = [3, 0, 4, 1, 2];
    let sp = s.select_users(&perm);
    let run = |sc: &SceneRealization<f64>| {
        let mut g = Graph::new(&p.store);
        let y = g.input(realified(sc));
        let e = p.encode_users(&mut g, y, 4, 4).unwrap();
        // shared SI side: fixed embeddings and measurements
        let e_si = g.input(Matrix::from_fn(3, 16, |r, c| ((r * 16 + c) as f64 * 0.37).sin()));
        let z = g.input(Matrix::from_fn(3, 2, |r, c| (r + c) as f64 * 0.1));
        let out = p.synthesize_serving(&mut g, e, e_si, z, 4, 4).unwrap();
        (g.value(e).clone(), g.value(out).clone())
    };
    let (e, o) = run(&s);
    let (ep, op) = run(&sp);
    for (i, &j) in perm.iter().enumerate() {
        for c in 0..16 {
            assert!((ep.at(i, c) - e.at(j, c)).abs() < 1e-12);
        }
        for c in 0..16 {
            assert!((op.at(i, c) - o.at(j, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn probing_codebooks_are_normalized_and_measurement_free() {
    let p = model(16);
    let s = scene(3, 3);
    let mut other = s.clone();
    other.si = assemble_si(s.si.h_nlos.clone(), s.si.h_los.clone(), 5.0).unwrap();
    let a = p.forward_group(&s, 6, Some(&probing_noise(4, 6, 1.0, 1)), &ProbeSource::Learned).unwrap();
    let b = p.forward_group(&other, 6, Some(&probing_noise(4, 6, 1.0, 2)), &ProbeSource::Learned).unwrap();
    for c in 0..6 {
        assert!((max_abs(&a.codebooks.f_cb.column(c)) - 1.0).abs() < 1e-12);
    }
    assert_eq!(a.codebooks, b.codebooks);
    assert!(a.codebooks.satisfies_power_constraint());
}

#[test]
fn table_prefix_is_shared_across_budgets() {
    let p = model(16);
    let s = scene(2, 4);
    let first_rows = |m: usize| {
        let mut g = Graph::new(&p.store);
        let t = g.param(p.store.get("probe.table").unwrap());
        let q = g.slice_rows(t, 0, m);
        g.value(q).clone()
    };
    let (a, b) = (first_rows(4), first_rows(8));
    assert_eq!(a.data[..], b.data[..a.len()]);
    assert!(p.forward_group(&s, 9, None, &ProbeSource::Learned).is_err());
}

#[test]
fn serving_output_contract() {
    let p = model(16);
    let s = scene(8, 5);
    let f = p.forward_group(&s, 4, Some(&probing_noise(4, 4, 1.0, 3)), &ProbeSource::Learned).unwrap();
    assert_eq!(f.outcome.beams.len(), 8);
    assert!(f.outcome.beams.iter().all(|b| b.satisfies_power_constraint()));
    let loss = f.graph.value(f.loss).data[0];
    assert!((-8.0..=0.0).contains(&loss));
}

#[test]
fn loss_depends_on_measurements() {
    let p = model(16);
    let s = scene(2, 6);
    let f = p.forward_group(&s, 3, Some(&probing_noise(4, 3, 1.0, 4)), &ProbeSource::Learned).unwrap();
    let grads = f.graph.backward(f.loss);
    let gz = grads.node(f.z_node).unwrap();
    let re_norm: f64 = (0..3).map(|r| gz.at(r, 0).powi(2)).sum::<f64>().sqrt();
    assert!(re_norm > 0.0);
    // and the sign of that gradient is real: a finite step on Re z moves the loss
    let run = |dz: f64| {
        let mut g = Graph::new(&p.store);
        let y = g.input(realified(&s));
        let e = p.encode_users(&mut g, y, 4, 4).unwrap();
        let (_, e_si) = p.synthesize_probing(&mut g, e, 3, 4, 4).unwrap();
        let mut zm = f.graph.value(f.z_node).clone();
        *zm.at_mut(0, 0) += dz;
        let z = g.input(zm);
        let out = p.synthesize_serving(&mut g, e, e_si, z, 4, 4).unwrap();
        let (l, _) = beam_loss_node(&mut g, out, &s.users, &s.si, &s.budget);
        g.value(l).data[0]
    };
    let fd = (run(1e-5) - run(-1e-5)) / 2e-5;
    assert!((fd - gz.at(0, 0)).abs() < 1e-6 * gz.at(0, 0).abs().max(1e-3));
}

fn flat_user(h_dl: Vec<Complex64>, h_ul: Vec<Complex64>) -> UserPairChannel<f64> {
    let dp = DominantPath { gain: Complex64::new(1.0, 0.0), azimuth: 0.0, elevation: 0.0 };
    UserPairChannel { h_dl, h_ul, h_cross: Complex64::default(), dominant_dl: dp, dominant_ul: dp }
}

#[test]
fn loss_extremes() {
    let cfg = ArrayConfig::square(2);
    let a_dl = steering_vector::<f64>(&cfg, Aperture::Tx, 0.3, 0.1).unwrap();
    let a_ul = steering_vector::<f64>(&cfg, Aperture::Rx, -0.2, 0.0).unwrap();
    let si = assemble_si(CMat::zeros(4, 4), CMat::zeros(4, 4), 0.0).unwrap();
    let budget = LinkBudget::<f64>::unit();
    let store = fdbeam_nn::params::ParamStore::new();
    let token = |f: &[Complex64], w: &[Complex64]| {
        let mut row: Vec<f64> = f.iter().map(|x| x.re).collect();
        row.extend(f.iter().map(|x| x.im));
        row.extend(w.iter().map(|x| x.re));
        row.extend(w.iter().map(|x| x.im));
        Matrix::from_vec(1, 16, row)
    };
    let user = flat_user(a_dl.clone(), a_ul.clone());
    // matched beams on a unit-modulus channel reach capacity
    let mut g = Graph::new(&store);
    let t = g.input(token(&a_dl, &a_ul));
    let (l, _) = beam_loss_node(&mut g, t, std::slice::from_ref(&user), &si, &budget);
    assert!((g.value(l).data[0] + 1.0).abs() < 1e-12);
    // beams orthogonal to both user channels
    let e = |i: usize| (0..4).map(|j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect::<Vec<_>>();
    let ortho = flat_user(e(1), e(2));
    let mut g = Graph::new(&store);
    let t = g.input(token(&e(0), &e(3)));
    let (l, _) = beam_loss_node(&mut g, t, &[ortho], &si, &budget);
    assert_eq!(g.value(l).data[0], 0.0);
}

#[test]
fn checkpoint_roundtrip() {
    let p = model(8);
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&p, dir.path(), serde_json::json!({"note": "test"})).unwrap();
    let (q, manifest) = checkpoint::load::<f64>(dir.path()).unwrap();
    assert_eq!(manifest.provenance["note"], "test");
    assert_eq!(q.store.names, p.store.names);
    for (a, b) in q.store.values.iter().zip(&p.store.values) {
        assert!(max_diff(a, b) < 1e-6);
    }
    let s = scene(2, 7);
    let fa = p.forward_group(&s, 2, None, &ProbeSource::Learned).unwrap();
    let fb = q.forward_group(&s, 2, None, &ProbeSource::Learned).unwrap();
    assert!((fa.graph.value(fa.loss).data[0] - fb.graph.value(fb.loss).data[0]).abs() < 1e-4);
}

#[test]
fn fixed_probes_bypass_the_synthesizer() {
    let p = model(16);
    let s = scene(2, 8);
    let learned = p.forward_group(&s, 2, None, &ProbeSource::Learned).unwrap();
    let fixed = p.forward_group(&s, 2, None, &ProbeSource::Fixed(learned.codebooks.clone())).unwrap();
    // same codebooks and no noise: identical measurements and loss
    assert!(max_diff(learned.graph.value(learned.z_node), fixed.graph.value(fixed.z_node)) < 1e-12);
    let (la, lb) = (learned.graph.value(learned.loss).data[0], fixed.graph.value(fixed.loss).data[0]);
    assert!((la - lb).abs() < 1e-12);
    assert_eq!(z_matrix(&[Complex64::new(2.0, -4.0)], 0.5).data, vec![1.0, -2.0]);
}

proptest! {
    #[test]
    fn tx_normalization_is_scale_invariant(re in prop::collection::vec(-3.0f64..3.0, 16), c in 0.01f64..100.0) {
        let m = Matrix::from_vec(1, 16, re.clone());
        let scaled = Matrix::from_vec(1, 16, re.iter().map(|x| x * c).collect());
        let a = beams_from_tokens(&m, 4, 4);
        let b = beams_from_tokens(&scaled, 4, 4);
        for (x, y) in a[0].f.iter().zip(&b[0].f) {
            prop_assert!((x - y).norm() < 1e-12);
        }
        prop_assert!(max_abs(&a[0].f) <= 1.0 + 1e-12);
    }
}

#[test]
fn partial_knowledge_scale() {
    // noise normalization keeps every metric and makes y O(1)
    let s = scene(4, 9);
    let typical: f64 = s.user_info.iter().map(|i| fdbeam_core::cmat::norm_sq(&i.y_dl)).sum::<f64>() / 4.0;
    assert!(typical > 0.01 && typical < 1e4, "{typical}");
    let _ = UserInfo::<f64> { y_dl: vec![], y_ul: vec![] };
}
