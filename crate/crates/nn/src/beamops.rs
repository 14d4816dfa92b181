//! Differentiable bridges between real network outputs and the complex link model.
//!
//! A realified beam token is `[Re f | Im f | Re w | Im w]` (`2(nt + nr)` reals). Gradients
//! of a real loss `L` with respect to a complex vector `x` are carried as
//! `∂L/∂Re x + j ∂L/∂Im x`.

use fdbeam_core::channelsim::{LinkBudget, SIChannel, UserPairChannel};
use fdbeam_core::cmat::{dot_h, norm_sq, CMat, CVec};
use fdbeam_core::linkmetrics::{capacity, BeamPair};
use fdbeam_core::probing::ProbingCodebooks;
use fdbeam_core::Scalar;
use num_complex::Complex;

use crate::graph::{CustomOp, Graph, NodeId};
use crate::tensor::Matrix;

/// Splits a realified token into raw `(f, w)`.
pub fn split_token<T: Scalar>(row: &[T], nt: usize, nr: usize) -> (CVec<T>, CVec<T>) {
    assert_eq!(row.len(), 2 * (nt + nr), "token width");
    let f = (0..nt).map(|i| Complex::new(row[i], row[nt + i])).collect();
    let o = 2 * nt;
    let w = (0..nr).map(|i| Complex::new(row[o + i], row[o + nr + i])).collect();
    (f, w)
}

fn write_token<T: Scalar>(row: &mut [T], gf: &[Complex<T>], gw: &[Complex<T>]) {
    let (nt, nr) = (gf.len(), gw.len());
    for (i, g) in gf.iter().enumerate() {
        row[i] = g.re;
        row[nt + i] = g.im;
    }
    let o = 2 * nt;
    for (i, g) in gw.iter().enumerate() {
        row[o + i] = g.re;
        row[o + nr + i] = g.im;
    }
}

/// Per-antenna normalization `f = f̃ / max|f̃_j|`, remembering what the gradient needs.
struct MaxNorm<T> {
    raw: CVec<T>,
    scale: T,
    argmax: usize,
}

impl<T: Scalar> MaxNorm<T> {
    fn new(raw: CVec<T>) -> (Self, CVec<T>) {
        let mut argmax = 0;
        let mut scale = T::zero();
        for (i, x) in raw.iter().enumerate() {
            if x.norm() > scale {
                scale = x.norm();
                argmax = i;
            }
        }
        let scale = scale.max(T::min_positive_value());
        let f = raw.iter().map(|x| x / scale).collect();
        (Self { raw, scale, argmax }, f)
    }

    /// Chain rule through the division by the largest magnitude.
    fn backward(&self, g: &[Complex<T>]) -> CVec<T> {
        let a = self.scale;
        let dot: T = g.iter().zip(&self.raw).map(|(gi, fi)| (gi.conj() * fi).re).sum();
        let mut out: CVec<T> = g.iter().map(|gi| gi / a).collect();
        out[self.argmax] -= self.raw[self.argmax] * (dot / (a * a * a));
        out
    }
}

/// Unit-norm scaling `w = w̃ / ‖w̃‖`.
struct UnitNorm<T> {
    w: CVec<T>,
    norm: T,
}

impl<T: Scalar> UnitNorm<T> {
    fn new(raw: &[Complex<T>]) -> (Self, CVec<T>) {
        let norm = norm_sq(raw).sqrt().max(T::min_positive_value());
        let w: CVec<T> = raw.iter().map(|x| x / norm).collect();
        (Self { w: w.clone(), norm }, w)
    }

    fn backward(&self, g: &[Complex<T>]) -> CVec<T> {
        let proj = dot_h(&self.w, g).re;
        g.iter().zip(&self.w).map(|(gi, wi)| (gi - wi * proj) / self.norm).collect()
    }
}

struct MeasureOp<T> {
    h: CMat<T>,
    alpha: T,
    cond: T,
    nt: usize,
    nr: usize,
    norms: Vec<MaxNorm<T>>,
    w: Vec<CVec<T>>,
    // α H f_m + n_m
    v: Vec<CVec<T>>,
}

impl<T: Scalar> CustomOp<T> for MeasureOp<T> {
    fn backward(&self, _inputs: &[&Matrix<T>], _output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Matrix<T>> {
        let m = self.w.len();
        let mut gp = Matrix::zeros(m, 2 * (self.nt + self.nr));
        for i in 0..m {
            let gz = Complex::new(grad.at(i, 0), grad.at(i, 1)) * self.cond;
            let gw: CVec<T> = self.v[i].iter().map(|v| gz.conj() * v).collect();
            let hw = self.h.herm_mul_vec(&self.w[i]);
            let gf: CVec<T> = hw.iter().map(|x| gz * x * self.alpha).collect();
            let gf_raw = self.norms[i].backward(&gf);
            write_token(gp.row_mut(i), &gf_raw, &gw);
        }
        vec![gp]
    }
}

/// Turns `M` probe tokens into codebooks and records `cond · z` (M×2: `[Re z, Im z]`).
///
/// `noise` is the `nr × M` receiver noise; `None` measures noiselessly.
pub fn measure_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    tokens: NodeId,
    si: &SIChannel<T>,
    budget: &LinkBudget<T>,
    noise: Option<&CMat<T>>,
    cond: T,
) -> (NodeId, ProbingCodebooks<T>) {
    let (nr, nt) = si.h.shape();
    let p = g.value(tokens);
    let m = p.rows;
    let alpha = (budget.p_dl / T::from_usize_lossy(nt)).sqrt();
    let mut norms = Vec::with_capacity(m);
    let mut fs = Vec::with_capacity(m);
    let mut ws = Vec::with_capacity(m);
    let mut vs = Vec::with_capacity(m);
    let mut out = Matrix::zeros(m, 2);
    for i in 0..m {
        let (f_raw, w) = split_token(p.row(i), nt, nr);
        let (norm, f) = MaxNorm::new(f_raw);
        let mut v: CVec<T> = si.h.mul_vec(&f).into_iter().map(|x| x * alpha).collect();
        if let Some(n) = noise {
            v.iter_mut().enumerate().for_each(|(r, x)| *x += n[(r, i)]);
        }
        let z = dot_h(&w, &v) * cond;
        *out.at_mut(i, 0) = z.re;
        *out.at_mut(i, 1) = z.im;
        norms.push(norm);
        fs.push(f);
        ws.push(w);
        vs.push(v);
    }
    let cb = ProbingCodebooks {
        f_cb: CMat::from_columns(nt, &fs).expect("column lengths"),
        w_cb: CMat::from_columns(nr, &ws).expect("column lengths"),
    };
    let op = MeasureOp { h: si.h.clone(), alpha, cond, nt, nr, norms, w: ws, v: vs };
    (g.custom(&[tokens], out, Box::new(op)), cb)
}

struct UserTerms<T> {
    fnorm: MaxNorm<T>,
    wnorm: UnitNorm<T>,
    gf: CVec<T>,
    gw: CVec<T>,
}

struct BeamLossOp<T> {
    nt: usize,
    nr: usize,
    users: Vec<UserTerms<T>>,
}

impl<T: Scalar> CustomOp<T> for BeamLossOp<T> {
    fn backward(&self, _inputs: &[&Matrix<T>], _output: &Matrix<T>, grad: &Matrix<T>) -> Vec<Matrix<T>> {
        let go = grad.at(0, 0);
        let mut gs = Matrix::zeros(self.users.len(), 2 * (self.nt + self.nr));
        for (k, u) in self.users.iter().enumerate() {
            let gf: CVec<T> = u.gf.iter().map(|x| x * go).collect();
            let gw: CVec<T> = u.gw.iter().map(|x| x * go).collect();
            write_token(gs.row_mut(k), &u.fnorm.backward(&gf), &u.wnorm.backward(&gw));
        }
        vec![gs]
    }
}

/// Per-user scores recorded by [`beam_loss_node`].
#[derive(Clone, Debug)]
pub struct ServingOutcome<T> {
    pub beams: Vec<BeamPair<T>>,
    pub nsse: Vec<T>,
}

/// Loss `-Σ_k R_k / C_k` of `K` serving tokens scored on the true channels.
///
/// `f_k` is max-normalized and `w_k` scaled to unit norm; every metric is invariant to
/// the scale of `w`, so the latter only conditions the numbers.
pub fn beam_loss_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    tokens: NodeId,
    users: &[UserPairChannel<T>],
    si: &SIChannel<T>,
    budget: &LinkBudget<T>,
) -> (NodeId, ServingOutcome<T>) {
    let (nr, nt) = si.h.shape();
    let p = g.value(tokens);
    assert_eq!(p.rows, users.len(), "one serving token per user pair");
    let ln2 = T::LN_2();
    let two = T::lit(2.0);
    let c_dl = budget.p_dl / (T::from_usize_lossy(nt) * budget.sigma2_dl);
    let c_ul = budget.p_ul / budget.sigma2_ul;
    let c_i = budget.p_dl / (T::from_usize_lossy(nt) * budget.sigma2_ul);
    let mut loss = T::zero();
    let mut terms = Vec::with_capacity(users.len());
    let mut beams = Vec::with_capacity(users.len());
    let mut nsse = Vec::with_capacity(users.len());
    for (k, user) in users.iter().enumerate() {
        let (f_raw, w_raw) = split_token(p.row(k), nt, nr);
        let (fnorm, f) = MaxNorm::new(f_raw);
        let (wnorm, w) = UnitNorm::new(&w_raw);
        let cap = capacity(user, budget);
        let inr_dl = budget.p_ul * user.h_cross.norm_sqr() / budget.sigma2_dl;
        let c_dl_eff = c_dl / (T::one() + inr_dl);

        let s = dot_h(&user.h_dl, &f);
        let t = dot_h(&w, &user.h_ul);
        let hf = si.h.mul_vec(&f);
        let u = dot_h(&w, &hf);
        let nw = norm_sq(&w);
        let d = nw + c_i * u.norm_sqr();
        let num = d + c_ul * t.norm_sqr();
        let r_dl = (T::one() + c_dl_eff * s.norm_sqr()).log2();
        let r_ul = num.log2() - d.log2();
        let score = (r_dl + r_ul) / cap;
        loss -= score;

        let d_rdl = c_dl_eff / ((T::one() + c_dl_eff * s.norm_sqr()) * ln2);
        let d_t = c_ul / (num * ln2);
        let d_d = T::one() / (num * ln2) - T::one() / (d * ln2);
        let inv_c = -T::one() / cap;
        let hw = si.h.herm_mul_vec(&w);
        let gf: CVec<T> = user
            .h_dl
            .iter()
            .zip(&hw)
            .map(|(hd, hwi)| (hd * s * (two * d_rdl) + hwi * u * (two * c_i * d_d)) * inv_c)
            .collect();
        let gw: CVec<T> = user
            .h_ul
            .iter()
            .zip(&w)
            .zip(&hf)
            .map(|((hu, wi), hfi)| (hu * t.conj() * (two * d_t) + (wi * two + hfi * u.conj() * (two * c_i)) * d_d) * inv_c)
            .collect();
        terms.push(UserTerms { fnorm, wnorm, gf, gw });
        beams.push(BeamPair { f, w });
        nsse.push(score);
    }
    let op = BeamLossOp { nt, nr, users: terms };
    let node = g.custom(&[tokens], Matrix::from_vec(1, 1, vec![loss]), Box::new(op));
    (node, ServingOutcome { beams, nsse })
}

/// `[Re y_dl; Im y_dl; Re y_ul; Im y_ul]`.
pub fn realify_user_info<T: Scalar>(y_dl: &[Complex<T>], y_ul: &[Complex<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(2 * (y_dl.len() + y_ul.len()));
    out.extend(y_dl.iter().map(|x| x.re));
    out.extend(y_dl.iter().map(|x| x.im));
    out.extend(y_ul.iter().map(|x| x.re));
    out.extend(y_ul.iter().map(|x| x.im));
    out
}

/// Beams from realified tokens without building a graph.
pub fn beams_from_tokens<T: Scalar>(tokens: &Matrix<T>, nt: usize, nr: usize) -> Vec<BeamPair<T>> {
    (0..tokens.rows)
        .map(|k| {
            let (f_raw, w_raw) = split_token(tokens.row(k), nt, nr);
            let (_, f) = MaxNorm::new(f_raw);
            let (_, w) = UnitNorm::new(&w_raw);
            BeamPair { f, w }
        })
        .collect()
}
