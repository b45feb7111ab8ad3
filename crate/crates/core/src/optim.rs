//! Adam over flat parameter slices.

use crate::mlp::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// One bias-corrected Adam update in place. `t` is the 1-based step count.
pub fn adam_step<P: Real, M: Real>(params: &mut [P], grads: &[P], m: &mut [M], v: &mut [M], lr: f64, t: u64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), m.len());
    assert_eq!(params.len(), v.len());
    let bc1 = 1.0 - BETA1.powf(t as f64);
    let bc2 = 1.0 - BETA2.powf(t as f64);
    let step = lr * bc2.sqrt() / bc1;
    for k in 0..params.len() {
        let g = grads[k].f64();
        let mk = BETA1 * m[k].f64() + (1.0 - BETA1) * g;
        let vk = BETA2 * v[k].f64() + (1.0 - BETA2) * g * g;
        m[k] = M::of(mk);
        v[k] = M::of(vk);
        params[k] = P::of(params[k].f64() - step * mk / (vk.sqrt() + EPSILON * bc2.sqrt()));
    }
}

/// The displacement Adam would apply given current moments, without updating them.
pub fn adam_direction(m: f64, v: f64, lr: f64, t: u64) -> f64 {
    if t == 0 {
        return 0.0;
    }
    let bc1 = 1.0 - BETA1.powf(t as f64);
    let bc2 = 1.0 - BETA2.powf(t as f64);
    -lr * (m / bc1) / ((v / bc2).sqrt() + EPSILON)
}
