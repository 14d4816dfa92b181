//! The probing/serving policy: a user encoder, a probing-beam synthesizer and a
//! serving-beam synthesizer sharing one parameter store.

use std::collections::BTreeMap;

use fdbeam_core::channelsim::{LinkBudget, SceneRealization};
use fdbeam_core::cmat::{CMat, CVec};
use fdbeam_core::probing::{measure_with_noise, measurement_conditioning, ProbingCodebooks};
use fdbeam_core::Scalar;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::beamops::{beam_loss_node, measure_node, realify_user_info, ServingOutcome};
use crate::graph::{Graph, NodeId};
use crate::layers::{DecoderBlock, EncoderBlock, LayerNorm, Linear};
use crate::params::{Init, ParamStore};
use crate::tensor::Matrix;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_embed: usize,
    pub n_heads: usize,
    pub enc_layers: usize,
    pub probe_layers: usize,
    pub serve_layers: usize,
    pub ff_expansion: usize,
    /// Rows of the probing embedding table.
    pub max_m: usize,
    /// `(nt, nr)` pairs with their own input and output projections.
    pub arrays: Vec<(usize, usize)>,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_embed: 320,
            n_heads: 5,
            enc_layers: 3,
            probe_layers: 2,
            serve_layers: 2,
            ff_expansion: 4,
            max_m: 64,
            arrays: vec![(16, 16)],
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_embed == 0 || self.n_heads == 0 || self.d_embed % self.n_heads != 0 {
            return Err(Error::Config(format!("d_embed {} not divisible by {} heads", self.d_embed, self.n_heads)));
        }
        if self.max_m == 0 || self.arrays.is_empty() || self.ff_expansion == 0 {
            return Err(Error::Config("max_m, ff_expansion and the array registry must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ArrayHeads {
    user_in: Linear,
    probe_out: Linear,
    serve_out: Linear,
}

#[derive(Clone, Debug)]
pub struct Policy<T> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    heads: BTreeMap<(usize, usize), ArrayHeads>,
    encoder: Vec<EncoderBlock>,
    enc_ln: LayerNorm,
    table: usize,
    probe_blocks: Vec<DecoderBlock>,
    probe_ln: LayerNorm,
    mem_proj: Linear,
    serve_blocks: Vec<DecoderBlock>,
    serve_ln: LayerNorm,
}

/// Where the probing codebooks of a forward pass come from.
#[derive(Clone, Debug)]
pub enum ProbeSource<T> {
    Learned,
    /// Fixed codebooks (e.g. random ones); the SI embeddings still come from the decoder.
    Fixed(ProbingCodebooks<T>),
}

/// Result of one coherent group pushed through the whole pipeline.
pub struct GroupForward<'s, T: Scalar> {
    pub graph: Graph<'s, T>,
    pub loss: NodeId,
    pub user_embedding: NodeId,
    pub si_embedding: NodeId,
    /// Conditioned measurements as an M×2 node.
    pub z_node: NodeId,
    pub codebooks: ProbingCodebooks<T>,
    pub outcome: ServingOutcome<T>,
}

impl<T: Scalar> Policy<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let s = cfg.init_seed;
        let d = cfg.d_embed;
        let (h, x) = (cfg.n_heads, cfg.ff_expansion);
        let mut heads = BTreeMap::new();
        for &(nt, nr) in &cfg.arrays {
            let width = 2 * (nt + nr);
            heads.insert(
                (nt, nr),
                ArrayHeads {
                    user_in: Linear::new(&mut store, &format!("user_in.{nt}x{nr}"), width, d, s),
                    probe_out: Linear::new(&mut store, &format!("probe_out.{nt}x{nr}"), d, width, s),
                    serve_out: Linear::new(&mut store, &format!("serve_out.{nt}x{nr}"), d, width, s),
                },
            );
        }
        let encoder = (0..cfg.enc_layers).map(|i| EncoderBlock::new(&mut store, &format!("encoder.{i}"), d, h, x, s)).collect();
        let enc_ln = LayerNorm::new(&mut store, "encoder.ln", d, s);
        let table = store.add("probe.table", cfg.max_m, d, Init::Normal(0.02), s);
        let probe_blocks = (0..cfg.probe_layers).map(|i| DecoderBlock::new(&mut store, &format!("probe.{i}"), d, h, x, s)).collect();
        let probe_ln = LayerNorm::new(&mut store, "probe.ln", d, s);
        let mem_proj = Linear::new(&mut store, "serve.mem_proj", d + 2, d, s);
        let serve_blocks = (0..cfg.serve_layers).map(|i| DecoderBlock::new(&mut store, &format!("serve.{i}"), d, h, x, s)).collect();
        let serve_ln = LayerNorm::new(&mut store, "serve.ln", d, s);
        Ok(Self { cfg, store, heads, encoder, enc_ln, table, probe_blocks, probe_ln, mem_proj, serve_blocks, serve_ln })
    }

    /// Rebuilds the architecture for `cfg` and takes parameter values from `store`.
    pub fn with_store(cfg: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        let mut p = Self::new(cfg)?;
        if p.store.names != store.names {
            return Err(Error::Checkpoint("parameter names do not match the architecture".into()));
        }
        for (a, b) in p.store.values.iter().zip(&store.values) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint("parameter shapes do not match the architecture".into()));
            }
        }
        p.store = store;
        Ok(p)
    }

    pub fn cast<U: Scalar>(&self) -> Policy<U> {
        Policy {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            heads: self.heads.clone(),
            encoder: self.encoder.clone(),
            enc_ln: self.enc_ln.clone(),
            table: self.table,
            probe_blocks: self.probe_blocks.clone(),
            probe_ln: self.probe_ln.clone(),
            mem_proj: self.mem_proj.clone(),
            serve_blocks: self.serve_blocks.clone(),
            serve_ln: self.serve_ln.clone(),
        }
    }

    fn heads(&self, nt: usize, nr: usize) -> Result<&ArrayHeads> {
        self.heads.get(&(nt, nr)).ok_or(Error::UnsupportedArray(nt, nr))
    }

    /// User embeddings (K×d) from realified user information (K×2(nt+nr)).
    pub fn encode_users(&self, g: &mut Graph<'_, T>, y_real: NodeId, nt: usize, nr: usize) -> Result<NodeId> {
        let heads = self.heads(nt, nr)?;
        let mut x = heads.user_in.forward(g, y_real);
        for b in &self.encoder {
            x = b.forward(g, x);
        }
        Ok(self.enc_ln.forward(g, x))
    }

    /// Raw probe tokens (M×2(nt+nr)) and SI embeddings (M×d).
    pub fn synthesize_probing(&self, g: &mut Graph<'_, T>, e_u: NodeId, m: usize, nt: usize, nr: usize) -> Result<(NodeId, NodeId)> {
        if m == 0 || m > self.cfg.max_m {
            return Err(Error::ProbingBudget(m, self.cfg.max_m));
        }
        let heads = self.heads(nt, nr)?;
        let table = g.param(self.table);
        let mut x = g.slice_rows(table, 0, m);
        for b in &self.probe_blocks {
            x = b.forward(g, x, e_u);
        }
        let e_si = self.probe_ln.forward(g, x);
        let tokens = heads.probe_out.forward(g, e_si);
        Ok((tokens, e_si))
    }

    /// Raw serving tokens (K×2(nt+nr)) from user embeddings, SI embeddings and conditioned z.
    pub fn synthesize_serving(&self, g: &mut Graph<'_, T>, e_u: NodeId, e_si: NodeId, z: NodeId, nt: usize, nr: usize) -> Result<NodeId> {
        let heads = self.heads(nt, nr)?;
        let mem_in = g.concat_cols(&[e_si, z]);
        let memory = self.mem_proj.forward(g, mem_in);
        let mut x = e_u;
        for b in &self.serve_blocks {
            x = b.forward(g, x, memory);
        }
        let x = self.serve_ln.forward(g, x);
        Ok(heads.serve_out.forward(g, x))
    }

    /// Runs one coherent group end to end and records the loss `-Σ nsse_k`.
    ///
    /// `scene` should be noise-normalized (see [`noise_normalized`]); `noise` is the `nr × M`
    /// probing noise in the same units.
    pub fn forward_group<'s>(
        &'s self,
        scene: &SceneRealization<T>,
        m: usize,
        noise: Option<&CMat<T>>,
        probes: &ProbeSource<T>,
    ) -> Result<GroupForward<'s, T>> {
        let (nr, nt) = scene.si.h.shape();
        let mut g = Graph::new(&self.store);
        let k = scene.k();
        let mut y = Vec::with_capacity(k * 2 * (nt + nr));
        for info in &scene.user_info {
            y.extend(realify_user_info(&info.y_dl, &info.y_ul));
        }
        let y = g.input(Matrix::from_vec(k, 2 * (nt + nr), y));
        let e_u = self.encode_users(&mut g, y, nt, nr)?;
        let (tokens, e_si) = self.synthesize_probing(&mut g, e_u, m, nt, nr)?;
        let cond = measurement_conditioning(scene.budget.sigma2_ul);
        let (z_node, codebooks) = match probes {
            ProbeSource::Learned => measure_node(&mut g, tokens, &scene.si, &scene.budget, noise, cond),
            ProbeSource::Fixed(cb) => {
                if cb.m() != m {
                    return Err(Error::ProbingBudget(cb.m(), m));
                }
                let z = measure_with_noise(cb, &scene.si, &scene.budget, noise)?;
                (g.input(z_matrix(&z, cond)), cb.clone())
            }
        };
        let serve = self.synthesize_serving(&mut g, e_u, e_si, z_node, nt, nr)?;
        let (loss, outcome) = beam_loss_node(&mut g, serve, &scene.users, &scene.si, &scene.budget);
        Ok(GroupForward { graph: g, loss, user_embedding: e_u, si_embedding: e_si, z_node, codebooks, outcome })
    }
}

/// `[Re z, Im z]` rows scaled by `cond`.
pub fn z_matrix<T: Scalar>(z: &[Complex<T>], cond: T) -> Matrix<T> {
    Matrix::from_fn(z.len(), 2, |r, c| if c == 0 { z[r].re * cond } else { z[r].im * cond })
}

/// Rescales a scene so both noise variances are one: downlink channels and `y_dl` by
/// `1/σ_DL`, uplink channels, `y_ul` and the SI channel by `1/σ_UL`. Every link metric is
/// unchanged, and network inputs become O(1).
pub fn noise_normalized(scene: &SceneRealization<f64>) -> SceneRealization<f64> {
    let b = scene.budget;
    let sd = 1.0 / b.sigma2_dl.sqrt();
    let su = 1.0 / b.sigma2_ul.sqrt();
    let scale = |v: &CVec<f64>, s: f64| -> CVec<f64> { v.iter().map(|x| x * s).collect() };
    let si = fdbeam_core::channelsim::SIChannel {
        h_los: scene.si.h_los.scaled(su),
        h_nlos: scene.si.h_nlos.scaled(su),
        kappa: scene.si.kappa,
        h: scene.si.h.scaled(su),
    };
    let users = scene
        .users
        .iter()
        .map(|u| fdbeam_core::channelsim::UserPairChannel {
            h_dl: scale(&u.h_dl, sd),
            h_ul: scale(&u.h_ul, su),
            // the cross link lands on the downlink receiver
            h_cross: u.h_cross * sd,
            dominant_dl: u.dominant_dl,
            dominant_ul: u.dominant_ul,
        })
        .collect();
    let user_info = scene
        .user_info
        .iter()
        .map(|i| fdbeam_core::channelsim::UserInfo { y_dl: scale(&i.y_dl, sd), y_ul: scale(&i.y_ul, su) })
        .collect();
    SceneRealization { si, users, user_info, budget: LinkBudget { p_dl: b.p_dl, p_ul: b.p_ul, sigma2_dl: 1.0, sigma2_ul: 1.0 } }
}
