//! Method evaluation on held-out scenes, parameter sweeps, and CSV output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use fdbeam_core::baselines::{csi_bounds, lmmse_baseline, mrt_beam};
use fdbeam_core::channelsim::{mix_seed, SceneRealization};
use fdbeam_core::cmat::{norm, CMat};
use fdbeam_core::linkmetrics::{effective_nsse, link_report, BeamPair, LinkReport};
use fdbeam_core::probing::{normalize_tx_beam, probing_noise, ProbingCodebooks};
use fdbeam_core::scalar::to_db;
use fdbeam_nn::policy::noise_normalized;
use fdbeam_nn::{Policy32, ProbeSource};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::train::SceneBank;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Lmmse,
    VectorCsi,
    MatrixCsi,
    MrtMrc,
    RandomProbing,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Proposed, Method::Lmmse, Method::VectorCsi, Method::MatrixCsi, Method::MrtMrc, Method::RandomProbing];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Lmmse => "lmmse",
            Method::VectorCsi => "vector_csi",
            Method::MatrixCsi => "matrix_csi",
            Method::MrtMrc => "mrt_mrc",
            Method::RandomProbing => "random_probing",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Method::Proposed | Method::RandomProbing)
    }

    pub fn is_bound(self) -> bool {
        matches!(self, Method::VectorCsi | Method::MatrixCsi)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// One evaluation point: group size, slots per pair, probing budget, Rician factor, arrays.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub kappa_db: f64,
    pub nt: usize,
    pub nr: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 8, l: 56, m: 16, kappa_db: 0.0, nt: 16, nr: 16 }
    }
}

/// Per-pair samples (one per test scene and user pair). Ratios are stored in dB.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSamples {
    pub nsse: Vec<f64>,
    pub inr_ul_db: Vec<f64>,
    pub sinr_ul_db: Vec<f64>,
    pub snr_dl_db: Vec<f64>,
}

pub const METRICS: [&str; 4] = ["nsse", "inr_ul_db", "sinr_ul_db", "snr_dl_db"];

impl MetricSamples {
    fn push(&mut self, r: &LinkReport<f64>) {
        self.nsse.push(r.nsse);
        self.inr_ul_db.push(to_db(r.inr_ul));
        self.sinr_ul_db.push(to_db(r.sinr_ul));
        self.snr_dl_db.push(to_db(r.snr_dl));
    }

    pub fn get(&self, metric: &str) -> Option<&[f64]> {
        match metric {
            "nsse" => Some(&self.nsse),
            "inr_ul_db" => Some(&self.inr_ul_db),
            "sinr_ul_db" => Some(&self.sinr_ul_db),
            "snr_dl_db" => Some(&self.snr_dl_db),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.nsse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nsse.is_empty()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub config: EvalConfig,
    pub method: Method,
    /// Probing/estimation measurements charged per coherent group.
    pub measurements: usize,
    pub mean_nsse: f64,
    pub mean_effective_nsse: f64,
    /// Means of the dB samples; NaN for the closed-form bounds.
    pub mean_inr_ul_db: f64,
    pub mean_sinr_ul_db: f64,
    pub mean_snr_dl_db: f64,
    pub samples: MetricSamples,
    pub model_source: String,
    pub error: Option<String>,
}

impl EvalRow {
    fn from_samples(config: EvalConfig, method: Method, measurements: usize, samples: MetricSamples, model_source: &str) -> Self {
        let mean_nsse = mean(&samples.nsse);
        Self {
            config,
            method,
            measurements,
            mean_nsse,
            mean_effective_nsse: effective_nsse(mean_nsse, measurements, config.k, config.l),
            mean_inr_ul_db: mean(&samples.inr_ul_db),
            mean_sinr_ul_db: mean(&samples.sinr_ul_db),
            mean_snr_dl_db: mean(&samples.snr_dl_db),
            samples,
            model_source: model_source.to_string(),
            error: None,
        }
    }

    fn failed(config: EvalConfig, method: Method, err: &Error) -> Self {
        Self {
            config,
            method,
            measurements: 0,
            mean_nsse: f64::NAN,
            mean_effective_nsse: f64::NAN,
            mean_inr_ul_db: f64::NAN,
            mean_sinr_ul_db: f64::NAN,
            mean_snr_dl_db: f64::NAN,
            samples: MetricSamples::default(),
            model_source: String::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub n_test_scenes: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_test_scenes: 200, seed: 0 }
    }
}

/// Random probing codebooks: Gaussian transmit beams scaled to the per-antenna limit and
/// unit-norm Gaussian receive beams.
pub fn gaussian_codebooks(nt: usize, nr: usize, m: usize, seed: u64) -> Result<ProbingCodebooks<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<Complex64> {
        (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect()
    };
    let mut f_cols = Vec::with_capacity(m);
    let mut w_cols = Vec::with_capacity(m);
    for _ in 0..m {
        f_cols.push(normalize_tx_beam(&draw(nt))?);
        let w = draw(nr);
        let n = norm(&w);
        w_cols.push(w.into_iter().map(|x| x / n).collect::<Vec<_>>());
    }
    Ok(ProbingCodebooks::new(CMat::from_columns(nt, &f_cols)?, CMat::from_columns(nr, &w_cols)?)?)
}

/// The first `k` users of test scene `index` at the configured Rician factor.
fn test_scene(bank: &SceneBank, index: usize, c: &EvalConfig) -> Result<(u64, SceneRealization<f64>)> {
    let users: Vec<usize> = (0..c.k).collect();
    Ok((bank.scenes[index].rng_seed, bank.realize(index, &users, c.kappa_db)?))
}

fn proposed_beams(policy: &Policy32, scene: &SceneRealization<f64>, m: usize, noise_seed: u64, probes: Option<ProbingCodebooks<f64>>) -> Result<Vec<BeamPair<f64>>> {
    let normalized = noise_normalized(scene).cast::<f32>();
    let noise = probing_noise::<f32>(scene.si.nr(), m, 1.0, noise_seed);
    let source = match probes {
        None => ProbeSource::Learned,
        Some(cb) => ProbeSource::Fixed(ProbingCodebooks::new(cb.f_cb.cast(), cb.w_cb.cast())?),
    };
    let f = policy.forward_group(&normalized, m, Some(&noise), &source)?;
    Ok(f.outcome.beams.iter().map(|b| b.cast()).collect())
}

/// Runs `method` on the first `opts.n_test_scenes` scenes of `bank` (each group is the
/// first `K` stored users) and aggregates per-pair metrics. The closed-form bounds ignore
/// `bank`.
pub fn evaluate_method(method: Method, model: Option<&Policy32>, bank: Option<&SceneBank>, config: EvalConfig, opts: &EvalOptions) -> Result<EvalRow> {
    let EvalConfig { k, l, m, nt, nr, .. } = config;
    if k == 0 || l == 0 {
        return Err(Error::Config("K and L must be positive".into()));
    }
    if method.is_bound() {
        let b = csi_bounds(k, l, nt, nr);
        let (measurements, effective) = match method {
            Method::VectorCsi => (k * nr, b.vector),
            _ => (nt * nr, b.matrix),
        };
        let mut row = EvalRow::from_samples(config, method, measurements, MetricSamples::default(), "none");
        row.mean_nsse = 1.0;
        row.mean_effective_nsse = effective;
        return Ok(row);
    }
    let bank = bank.ok_or_else(|| Error::Config(format!("{method} needs test scenes")))?;
    if bank.array.nt != nt || bank.array.nr != nr {
        return Err(Error::Config(format!("test scenes use {}x{} arrays, config asks {nt}x{nr}", bank.array.nt, bank.array.nr)));
    }
    if k > bank.k_max() {
        return Err(Error::Config(format!("K = {k} exceeds the {} stored users per scene", bank.k_max())));
    }
    if opts.n_test_scenes == 0 || opts.n_test_scenes > bank.len() {
        return Err(Error::Config(format!("{} test scenes requested, {} available", opts.n_test_scenes, bank.len())));
    }
    let model = match (method.needs_model(), model) {
        (true, None) => return Err(Error::MissingCheckpoint(method.name().into())),
        (true, Some(p)) => Some(p),
        (false, _) => None,
    };
    let rho = bank.calibration.for_kappa(config.kappa_db)?.lmmse_prior_rho;

    let mut samples = MetricSamples::default();
    for i in 0..opts.n_test_scenes {
        let (scene_seed, scene) = test_scene(bank, i, &config)?;
        let noise_seed = mix_seed(opts.seed, scene_seed);
        let beams: Vec<BeamPair<f64>> = match method {
            Method::Proposed => proposed_beams(model.expect("checked"), &scene, m, noise_seed, None)?,
            Method::RandomProbing => {
                let cb = gaussian_codebooks(nt, nr, m, mix_seed(noise_seed, 0xC0DE))?;
                proposed_beams(model.expect("checked"), &scene, m, noise_seed, Some(cb))?
            }
            Method::Lmmse => (0..k)
                .map(|j| {
                    let r = lmmse_baseline(&scene, j, mix_seed(noise_seed, j as u64), bank.array.rx_shape, rho)?;
                    Ok(r.beams.into_iter().next().expect("one pair"))
                })
                .collect::<Result<_>>()?,
            Method::MrtMrc => scene
                .user_info
                .iter()
                .map(|info| Ok(BeamPair { f: mrt_beam(&info.y_dl)?, w: info.y_ul.clone() }))
                .collect::<Result<_>>()?,
            Method::VectorCsi | Method::MatrixCsi => unreachable!("bounds handled above"),
        };
        for (b, u) in beams.iter().zip(&scene.users) {
            samples.push(&link_report(b, u, &scene.si, &scene.budget)?);
        }
    }
    let measurements = match method {
        Method::Proposed | Method::RandomProbing => m,
        Method::Lmmse => k * nr,
        _ => 0,
    };
    Ok(EvalRow::from_samples(config, method, measurements, samples, if model.is_some() { "checkpoint" } else { "none" }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    L,
    MOverK,
    KappaDb,
    /// Side length of square arrays at both ends.
    ArraySize,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::L => "l",
            SweepAxis::MOverK => "m_over_k",
            SweepAxis::KappaDb => "kappa_db",
            SweepAxis::ArraySize => "array_size",
        }
    }

    pub fn apply(self, base: EvalConfig, value: f64) -> Result<EvalConfig> {
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} value {v} must be a positive integer", self.name())))
            }
        };
        let mut c = base;
        match self {
            SweepAxis::K => c.k = count(value)?,
            SweepAxis::L => c.l = count(value)?,
            SweepAxis::MOverK => c.m = count((value * c.k as f64).round())?,
            SweepAxis::KappaDb => c.kappa_db = value,
            SweepAxis::ArraySize => {
                let side = count(value)?;
                c.nt = side * side;
                c.nr = side * side;
            }
        }
        Ok(c)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "k" => SweepAxis::K,
            "l" => SweepAxis::L,
            "m_over_k" | "m/k" => SweepAxis::MOverK,
            "kappa" | "kappa_db" => SweepAxis::KappaDb,
            "array" | "array_size" => SweepAxis::ArraySize,
            _ => return Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        })
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse sweep values {s:?}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| a + step * i as f64).collect()
        }
        [single] => single.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Parameters not on the swept axis.
    pub fixed: EvalConfig,
    pub n_test_scenes: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn points(&self) -> Result<Vec<EvalConfig>> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        self.values.iter().map(|&v| self.axis.apply(self.fixed, v)).collect()
    }
}

/// Models available to a sweep: fine-tuned per point, else one shared model.
#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub shared: Option<Policy32>,
    pub per_point: Vec<(EvalConfig, Policy32)>,
}

impl ModelSet {
    pub fn shared(p: Policy32) -> Self {
        Self { shared: Some(p), per_point: Vec::new() }
    }

    pub fn for_config(&self, c: &EvalConfig) -> Option<(&Policy32, &'static str)> {
        self.per_point
            .iter()
            .find(|(pc, _)| pc == c)
            .map(|(_, p)| (p, "finetuned"))
            .or_else(|| self.shared.as_ref().map(|p| (p, "shared")))
    }
}

/// One row per `(point, method)`. A failing point is recorded with its error and the sweep
/// continues.
pub fn run_sweep(spec: &SweepSpec, methods: &[Method], models: &ModelSet, banks: &[SceneBank]) -> Result<Vec<SweepRow>> {
    let opts = EvalOptions { n_test_scenes: spec.n_test_scenes, seed: spec.seed };
    let mut rows = Vec::new();
    for (value, config) in spec.values.iter().zip(spec.points()?) {
        let bank = banks.iter().find(|b| b.array.nt == config.nt && b.array.nr == config.nr);
        for &method in methods {
            let model = models.for_config(&config);
            let row = evaluate_method(method, model.map(|m| m.0), bank, config, &opts)
                .map(|mut r| {
                    if method.needs_model() {
                        r.model_source = model.map_or("none", |m| m.1).to_string();
                    }
                    r
                })
                .unwrap_or_else(|e| EvalRow::failed(config, method, &e));
            rows.push(SweepRow { axis: spec.axis.name().to_string(), value: Some(*value), row });
        }
    }
    Ok(rows)
}

/// An evaluation row tagged with its sweep coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: Option<f64>,
    pub row: EvalRow,
}

pub const ROWS_FILE: &str = "rows.csv";
pub const ROWS_HEADER: &str = "axis,value,method,k,l,m,kappa_db,nt,nr,measurements,mean_nsse,mean_nsse_db,mean_effective_nsse,mean_effective_nsse_db,mean_inr_ul_db,mean_sinr_ul_db,mean_snr_dl_db,n_samples,model_source,status";
pub const CDF_HEADER: &str = "axis,value,method,x,x_db,cdf";

fn opt_value(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn csv_row(r: &SweepRow) -> String {
    let e = &r.row;
    let c = &e.config;
    let status = e.error.as_deref().map_or("ok".to_string(), |m| format!("failed: {}", m.replace([',', '\n'], ";")));
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.axis,
        opt_value(r.value),
        e.method,
        c.k,
        c.l,
        c.m,
        c.kappa_db,
        c.nt,
        c.nr,
        e.measurements,
        e.mean_nsse,
        to_db(e.mean_nsse),
        e.mean_effective_nsse,
        to_db(e.mean_effective_nsse),
        e.mean_inr_ul_db,
        e.mean_sinr_ul_db,
        e.mean_snr_dl_db,
        e.samples.len(),
        e.model_source,
        status
    )
}

/// Empirical CDF as right-continuous steps: sorted samples with `F = i/n`.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut s: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}

/// Writes `rows.csv` and one `cdf_<metric>.csv` per metric into `dir`.
pub fn write_results(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = format!("{ROWS_HEADER}\n");
    rows.iter().for_each(|r| text.push_str(&csv_row(r)));
    fs::write(dir.join(ROWS_FILE), text)?;
    for metric in METRICS {
        let mut text = format!("{CDF_HEADER}\n");
        for r in rows {
            let samples = r.row.samples.get(metric).expect("known metric");
            for (x, p) in empirical_cdf(samples) {
                // nsse is stored linear, the rest in dB
                let (lin, db) = if metric == "nsse" { (x, to_db(x)) } else { (10f64.powf(x / 10.0), x) };
                text.push_str(&format!("{},{},{},{},{},{}\n", r.axis, opt_value(r.value), r.row.method, lin, db, p));
            }
        }
        fs::write(dir.join(format!("cdf_{metric}.csv")), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_ranges() {
        assert_eq!(parse_values("-20:20:10").unwrap(), vec![-20.0, -10.0, 0.0, 10.0, 20.0]);
        assert_eq!(parse_values("1,2,4").unwrap(), vec![1.0, 2.0, 4.0]);
        assert_eq!(parse_values("0:1:0.25").unwrap().len(), 5);
        assert!(parse_values("3:1:1").is_err());
        assert!(parse_values("a,b").is_err());
    }

    #[test]
    fn axis_application() {
        let base = EvalConfig::default();
        assert_eq!(SweepAxis::MOverK.apply(base, 0.5).unwrap().m, 4);
        let a = SweepAxis::ArraySize.apply(base, 16.0).unwrap();
        assert_eq!(a.nt * a.nr, 65536);
        assert!(SweepAxis::K.apply(base, 2.5).is_err());
        assert_eq!("kappa".parse::<SweepAxis>().unwrap(), SweepAxis::KappaDb);
    }

    #[test]
    fn cdf_steps() {
        let c = empirical_cdf(&[0.3, 0.1, 0.2, 0.2]);
        assert_eq!(c.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.1, 0.2, 0.2, 0.3]);
        assert_eq!(c.last().unwrap().1, 1.0);
        assert!(c.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].0 >= w[0].0));
    }

    #[test]
    fn bounds_need_no_scenes() {
        let c = EvalConfig { k: 8, l: 56, ..EvalConfig::default() };
        let v = evaluate_method(Method::VectorCsi, None, None, c, &EvalOptions::default()).unwrap();
        assert!((v.mean_effective_nsse - 448.0 / 576.0).abs() < 1e-12);
        assert_eq!(v.mean_nsse, 1.0);
        let m = evaluate_method(Method::MatrixCsi, None, None, c, &EvalOptions::default()).unwrap();
        assert!((m.mean_effective_nsse - 448.0 / 704.0).abs() < 1e-12);
        assert_eq!(m.measurements, 256);
        assert!(matches!(
            evaluate_method(Method::Proposed, None, None, c, &EvalOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gaussian_codebooks_satisfy_constraints() {
        let cb = gaussian_codebooks(16, 16, 8, 3).unwrap();
        assert!(cb.satisfies_power_constraint());
        for c in 0..8 {
            assert!((norm(&cb.w_cb.column(c)) - 1.0).abs() < 1e-12);
        }
        assert_eq!(cb, gaussian_codebooks(16, 16, 8, 3).unwrap());
    }
}
