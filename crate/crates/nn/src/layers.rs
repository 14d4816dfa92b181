//! Pre-norm transformer building blocks.

use fdbeam_core::Scalar;

use crate::graph::{linear, Graph, NodeId};
use crate::params::{Init, ParamStore};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d_in: usize, d_out: usize, seed: u64) -> Self {
        let w = store.add(&format!("{name}.w"), d_in, d_out, Init::FanIn, seed);
        let b = store.add(&format!("{name}.b"), 1, d_out, Init::Zeros, seed);
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        linear(g, x, self.w, self.b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, seed: u64) -> Self {
        let gamma = store.add(&format!("{name}.gamma"), 1, d, Init::Ones, seed);
        let beta = store.add(&format!("{name}.beta"), 1, d, Init::Zeros, seed);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let (gm, bt) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gm, bt)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, seed: u64) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, seed),
            k: Linear::new(store, &format!("{name}.k"), d, d, seed),
            v: Linear::new(store, &format!("{name}.v"), d, d, seed),
            o: Linear::new(store, &format!("{name}.o"), d, d, seed),
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, memory: NodeId) -> NodeId {
        let q = self.q.forward(g, x);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let a = g.attention(q, k, v, self.heads);
        self.o.forward(g, a)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, expansion: usize, seed: u64) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), d, d * expansion, seed),
            down: Linear::new(store, &format!("{name}.down"), d * expansion, d, seed),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let h = self.up.forward(g, x);
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

/// Self-attention then feed-forward, each as `x + f(LN(x))`.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, expansion: usize, seed: u64) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d, seed),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, seed),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d, seed),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, expansion, seed),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let h = self.ln1.forward(g, x);
        let a = self.attn.forward(g, h, h);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let f = self.ff.forward(g, h);
        g.add(x, f)
    }
}

/// Self-attention, cross-attention to a memory, then feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, heads: usize, expansion: usize, seed: u64) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d, seed),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, heads, seed),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d, seed),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d, heads, seed),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d, seed),
            ff: FeedForward::new(store, &format!("{name}.ff"), d, expansion, seed),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId, memory: NodeId) -> NodeId {
        let h = self.ln1.forward(g, x);
        let a = self.self_attn.forward(g, h, h);
        let x = g.add(x, a);
        let h = self.ln2.forward(g, x);
        let c = self.cross_attn.forward(g, h, memory);
        let x = g.add(x, c);
        let h = self.ln3.forward(g, x);
        let f = self.ff.forward(g, h);
        g.add(x, f)
    }
}
