use serde::{Deserialize, Serialize};

/// First and second moment estimates of the Adam optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient shapes differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state shape differs");
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + state.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_from_fresh_state_keeps_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-4);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn moments_decay_without_gradient() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        s.m = vec![1.0, -2.0];
        s.v = vec![4.0, 1.0];
        adam_step(&mut p, &[0.0; 2], &mut s, 1e-4);
        assert_eq!(s.m, vec![0.9, -1.8]);
        assert!((s.v[0] - 4.0 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let g = [0.5, -3.0, 1e-3, 0.0];
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        let lr = 1e-4;
        adam_step(&mut p, &g, &mut s, lr);
        for (pi, gi) in p.iter().zip(g) {
            let want = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - want).abs() < 1e-15, "{pi} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_gives_lr_sized_steps() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        let lr = 1e-3;
        let mut prev = 0.0;
        for _ in 0..10_000 {
            adam_step(&mut p, &[2.5], &mut s, lr);
            let step = prev - p[0];
            assert!(step > 0.0 && step <= lr * (1.0 + 1e-9));
            prev = p[0];
        }
        let last = {
            let before = p[0];
            adam_step(&mut p, &[2.5], &mut s, lr);
            before - p[0]
        };
        assert!((last - lr).abs() < 1e-9);
    }
}
