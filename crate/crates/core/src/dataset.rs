//! On-disk scene datasets.
//!
//! A dataset directory holds `manifest.json` and one raw little-endian complex64 file per
//! field, row-major with the shape listed in the manifest. Scenes are stored before
//! calibration (unit-normalized SI components, raw user gains); the Rician factor and the
//! frozen per-site calibration are applied at load time.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::arraygeom::ArrayConfig;
use crate::channelsim::{
    calibrate_budget, sample_raw_scene, Calibration, CalibrationTargets, DominantPath, RawScene, SceneRealization,
    SiteModel, UserInfo, UserPairChannel,
};
use crate::cmat::{CMat, CVec};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

/// A contiguous block of scene seeds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    pub first_seed: u64,
    pub count: usize,
}

impl SplitSpec {
    pub fn new(name: impl Into<String>, first_seed: u64, count: usize) -> Self {
        Self { name: name.into(), first_seed, count }
    }

    fn seeds(&self) -> std::ops::Range<u64> {
        self.first_seed..self.first_seed + self.count as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub site: SiteModel,
    pub array: ArrayConfig,
    pub calibration: Calibration,
    pub calibration_split: SplitSpec,
    pub k_max: usize,
    pub kappa_set_db: Vec<f64>,
    pub splits: Vec<SplitSpec>,
    pub dtype: String,
    pub endianness: String,
    pub fields: Vec<FieldSpec>,
}

#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub site: SiteModel,
    pub array: ArrayConfig,
    pub k_max: usize,
    pub kappa_set_db: Vec<f64>,
    pub targets: CalibrationTargets,
    pub calibration_split: SplitSpec,
    pub splits: Vec<SplitSpec>,
}

impl DatasetSpec {
    /// Standard train/val/test layout; every split (and the calibration sample) draws from
    /// its own seed range, offset from `seed`.
    pub fn standard(site: SiteModel, array: ArrayConfig, seed: u64, counts: [usize; 3], k_max: usize, kappa_set_db: Vec<f64>) -> Self {
        let base = seed.wrapping_mul(1 << 32);
        Self {
            site,
            array,
            k_max,
            kappa_set_db,
            targets: CalibrationTargets::default(),
            calibration_split: SplitSpec::new("calibration", base + (3 << 28), 5000),
            splits: vec![
                SplitSpec::new("train", base, counts[0]),
                SplitSpec::new("val", base + (1 << 28), counts[1]),
                SplitSpec::new("test", base + (2 << 28), counts[2]),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.site.validate()?;
        self.array.validate()?;
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.kappa_set_db.is_empty() {
            return Err(Error::InvalidConfig("empty Rician factor set".into()));
        }
        let mut all: Vec<&SplitSpec> = self.splits.iter().collect();
        all.push(&self.calibration_split);
        for (i, a) in all.iter().enumerate() {
            if a.count == 0 {
                return Err(Error::InvalidConfig(format!("split {} is empty", a.name)));
            }
            for b in &all[i + 1..] {
                if a.name == b.name {
                    return Err(Error::InvalidConfig(format!("duplicate split {}", a.name)));
                }
                if a.seeds().start < b.seeds().end && b.seeds().start < a.seeds().end {
                    return Err(Error::InvalidConfig(format!("splits {} and {} share seeds", a.name, b.name)));
                }
            }
        }
        Ok(())
    }
}

const PER_SCENE_FIELDS: [&str; 9] = ["h_nlos", "h_dl", "h_ul", "h_cross", "y_dl", "y_ul", "dom_dl", "dom_ul", "seed"];

fn field_shape(name: &str, n: usize, k: usize, nt: usize, nr: usize) -> Vec<usize> {
    match name {
        "h_nlos" => vec![n, nr, nt],
        "h_dl" | "y_dl" => vec![n, k, nt],
        "h_ul" | "y_ul" => vec![n, k, nr],
        "h_cross" => vec![n, k],
        "seed" => vec![n, 2],
        // (gain, azimuth + j·elevation)
        _ => vec![n, k, 2],
    }
}

pub fn write_c64(path: &Path, data: impl IntoIterator<Item = Complex<f64>>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for z in data {
        w.write_all(&(z.re as f32).to_le_bytes())?;
        w.write_all(&(z.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_c64(path: &Path, len: usize) -> Result<Vec<Complex<f64>>> {
    let mut bytes = Vec::with_capacity(len * 8);
    BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::Dataset(format!("{}: {} bytes, expected {}", path.display(), bytes.len(), len * 8)));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex::new(re as f64, im as f64)
        })
        .collect())
}

fn split_field(split: &str, field: &str) -> String {
    format!("{split}_{field}.c64")
}

/// Loaded dataset handle; split arrays are read lazily.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

/// Generates every split of `spec`, calibrates on the dedicated calibration seeds and writes
/// the dataset to `dir` (created if missing).
pub fn build_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Dataset> {
    spec.validate()?;
    fs::create_dir_all(dir)?;
    let (nt, nr, k) = (spec.array.nt, spec.array.nr, spec.k_max);

    let cal_sample = spec
        .calibration_split
        .seeds()
        .map(|s| sample_raw_scene(&spec.site, &spec.array, k, s))
        .collect::<Result<Vec<_>>>()?;
    let calibration = calibrate_budget(&cal_sample, &spec.kappa_set_db, spec.targets)?;
    drop(cal_sample);

    let mut fields = vec![FieldSpec { file: "h_los.c64".into(), shape: vec![nr, nt] }];
    let h_los = crate::channelsim::los_si_channel(&spec.array)?;
    write_c64(&dir.join("h_los.c64"), h_los.as_slice().iter().copied())?;

    for split in &spec.splits {
        let scenes = split
            .seeds()
            .map(|s| sample_raw_scene(&spec.site, &spec.array, k, s))
            .collect::<Result<Vec<_>>>()?;
        for name in PER_SCENE_FIELDS {
            let file = split_field(&split.name, name);
            let data: Vec<Complex<f64>> = scenes.iter().flat_map(|s| scene_field(s, name)).collect();
            write_c64(&dir.join(&file), data)?;
            fields.push(FieldSpec { file, shape: field_shape(name, split.count, k, nt, nr) });
        }
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        site: spec.site.clone(),
        array: spec.array.clone(),
        calibration,
        calibration_split: spec.calibration_split.clone(),
        k_max: k,
        kappa_set_db: spec.kappa_set_db.clone(),
        splits: spec.splits.clone(),
        dtype: "complex64".into(),
        endianness: "little".into(),
        fields,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(Dataset { dir: dir.to_path_buf(), manifest })
}

fn scene_field(s: &RawScene, name: &str) -> Vec<Complex<f64>> {
    let dom = |d: &DominantPath| [d.gain, Complex::new(d.azimuth, d.elevation)];
    match name {
        "h_nlos" => s.h_nlos.as_slice().to_vec(),
        "h_dl" => s.users.iter().flat_map(|u| u.h_dl.iter().copied()).collect(),
        "h_ul" => s.users.iter().flat_map(|u| u.h_ul.iter().copied()).collect(),
        "h_cross" => s.users.iter().map(|u| u.h_cross).collect(),
        "y_dl" => s.user_info.iter().flat_map(|u| u.y_dl.iter().copied()).collect(),
        "y_ul" => s.user_info.iter().flat_map(|u| u.y_ul.iter().copied()).collect(),
        "dom_dl" => s.users.iter().flat_map(|u| dom(&u.dominant_dl)).collect(),
        "dom_ul" => s.users.iter().flat_map(|u| dom(&u.dominant_ul)).collect(),
        // 16-bit words survive the f32 round trip exactly
        "seed" => {
            let w = |i: u32| ((s.rng_seed >> (16 * i)) & 0xFFFF) as f64;
            vec![Complex::new(w(3), w(2)), Complex::new(w(1), w(0))]
        }
        _ => unreachable!("unknown field {name}"),
    }
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != FORMAT_VERSION || manifest.dtype != "complex64" || manifest.endianness != "little" {
            return Err(Error::Dataset(format!(
                "unsupported dataset format v{} {} {}",
                manifest.format_version, manifest.dtype, manifest.endianness
            )));
        }
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn split_spec(&self, name: &str) -> Result<&SplitSpec> {
        self.manifest
            .splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Dataset(format!("no split named {name}")))
    }

    fn read_field(&self, split: &str, field: &str) -> Result<Vec<Complex<f64>>> {
        let file = split_field(split, field);
        let spec = self
            .manifest
            .fields
            .iter()
            .find(|f| f.file == file)
            .ok_or_else(|| Error::Dataset(format!("manifest lacks {file}")))?;
        read_c64(&self.dir.join(&file), spec.shape.iter().product())
    }

    /// Uncalibrated scenes of one split (user positions are not persisted).
    pub fn load_raw(&self, split: &str) -> Result<Vec<RawScene>> {
        let n = self.split_spec(split)?.count;
        let (nt, nr, k) = (self.manifest.array.nt, self.manifest.array.nr, self.manifest.k_max);
        let h_los = CMat::from_vec(nr, nt, read_c64(&self.dir.join("h_los.c64"), nr * nt)?)?;
        let f = |name: &str| self.read_field(split, name);
        let (h_nlos, h_dl, h_ul, h_cross) = (f("h_nlos")?, f("h_dl")?, f("h_ul")?, f("h_cross")?);
        let (y_dl, y_ul, dom_dl, dom_ul, seeds) = (f("y_dl")?, f("y_ul")?, f("dom_dl")?, f("dom_ul")?, f("seed")?);
        let dom = |v: &[Complex<f64>]| DominantPath { gain: v[0], azimuth: v[1].re, elevation: v[1].im };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut users = Vec::with_capacity(k);
            let mut user_info = Vec::with_capacity(k);
            for j in 0..k {
                let u = i * k + j;
                let slice = |v: &[Complex<f64>], len: usize| -> CVec<f64> { v[u * len..(u + 1) * len].to_vec() };
                users.push(UserPairChannel {
                    h_dl: slice(&h_dl, nt),
                    h_ul: slice(&h_ul, nr),
                    h_cross: h_cross[u],
                    dominant_dl: dom(&dom_dl[u * 2..u * 2 + 2]),
                    dominant_ul: dom(&dom_ul[u * 2..u * 2 + 2]),
                });
                user_info.push(UserInfo { y_dl: slice(&y_dl, nt), y_ul: slice(&y_ul, nr) });
            }
            let (a, b) = (seeds[2 * i], seeds[2 * i + 1]);
            let rng_seed = [a.re, a.im, b.re, b.im].iter().fold(0u64, |acc, &w| (acc << 16) | w as u64);
            out.push(RawScene {
                rng_seed,
                h_los: h_los.clone(),
                h_nlos: CMat::from_vec(nr, nt, h_nlos[i * nr * nt..(i + 1) * nr * nt].to_vec())?,
                users,
                user_info,
                positions: Vec::new(),
            });
        }
        Ok(out)
    }

    /// Calibrated scenes of one split at Rician factor `kappa_db`.
    pub fn load(&self, split: &str, kappa_db: f64) -> Result<Vec<SceneRealization<f64>>> {
        self.load_raw(split)?.iter().map(|s| s.realize(kappa_db, &self.manifest.calibration)).collect()
    }

    /// Every file of the dataset in a stable order (manifest first).
    pub fn files(&self) -> Vec<PathBuf> {
        let mut v = vec![self.dir.join(MANIFEST_FILE)];
        v.extend(self.manifest.fields.iter().map(|f| self.dir.join(&f.file)));
        v
    }
}
