//! Central finite-difference check of the analytic policy gradient.

use fdbeam_core::channelsim::SceneRealization;
use fdbeam_core::cmat::CMat;

use crate::policy::{Policy, ProbeSource};
use crate::Result;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    /// `‖g_analytic − g_fd‖ / max(‖g_analytic‖, ‖g_fd‖, floor)` where `floor` is 1e-5 of
    /// the global gradient norm (key biases, for instance, have an identically zero gradient
    /// because softmax ignores per-row shifts).
    pub rel_error: f64,
    pub analytic_norm: f64,
}

fn loss(policy: &Policy<f64>, scene: &SceneRealization<f64>, m: usize, noise: &CMat<f64>) -> Result<f64> {
    let fwd = policy.forward_group(scene, m, Some(noise), &ProbeSource::Learned)?;
    Ok(fwd.graph.value(fwd.loss).data[0])
}

/// Compares the backpropagated gradient of the group loss with central differences of
/// step `h`, one tensor at a time.
pub fn check_policy_gradient(
    policy: &Policy<f64>,
    scene: &SceneRealization<f64>,
    m: usize,
    noise: &CMat<f64>,
    h: f64,
) -> Result<Vec<TensorCheck>> {
    let fwd = policy.forward_group(scene, m, Some(noise), &ProbeSource::Learned)?;
    let mut analytic = policy.store.zeros_like();
    fwd.graph.backward(fwd.loss).accumulate_params(&mut analytic);
    drop(fwd);

    let floor = 1e-5 * analytic.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    let mut probe = policy.clone();
    let mut out = Vec::with_capacity(policy.store.len());
    for (p, name) in policy.store.names.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut fd2 = 0.0;
        for i in 0..policy.store.values[p].len() {
            let x0 = policy.store.values[p].data[i];
            probe.store.values[p].data[i] = x0 + h;
            let up = loss(&probe, scene, m, noise)?;
            probe.store.values[p].data[i] = x0 - h;
            let down = loss(&probe, scene, m, noise)?;
            probe.store.values[p].data[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[p].data[i];
            diff2 += (a - fd) * (a - fd);
            fd2 += fd * fd;
        }
        let an = analytic[p].sum_sq().sqrt();
        let rel_error = diff2.sqrt() / an.max(fd2.sqrt()).max(floor);
        out.push(TensorCheck { name: name.clone(), rel_error, analytic_norm: an });
    }
    Ok(out)
}
