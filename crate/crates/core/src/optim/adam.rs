use std::f64::consts::PI;

use super::config::AdamParams;

/// First and second moment estimates for a flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam step. `step` counts from 1; `lr(i)` gives the
/// rate for entry `i`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    step: u64,
    hp: &AdamParams,
    lr: impl Fn(usize) -> f64,
) {
    let bc1 = 1.0 - hp.beta1.powi(step as i32);
    let bc2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut moments.m[i];
        let v = &mut moments.v[i];
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= lr(i) * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// Cosine annealing from `base` at iteration 0 to `base * final_fraction`
/// at `iters`.
pub fn cosine_lr(base: f64, final_fraction: f64, iteration: usize, iters: usize) -> f64 {
    if iters == 0 {
        return base;
    }
    let progress = (iteration as f64 / iters as f64).min(1.0);
    let floor = base * final_fraction;
    floor + (base - floor) * 0.5 * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -4.0, 0.0];
        let mut mo = Moments::zeros(3);
        adam_step(&mut p, &g, &mut mo, 1, &AdamParams::default(), |_| 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![3.0, -1.5];
        let mut mo = Moments::zeros(2);
        for step in 1..=2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            let lr = cosine_lr(0.05, 0.01, step - 1, 2000);
            adam_step(&mut p, &g, &mut mo, step as u64, &AdamParams::default(), |_| lr);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-3), "{p:?}");
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(2.0, 0.01, 0, 100), 2.0);
        assert!((cosine_lr(2.0, 0.01, 100, 100) - 0.02).abs() < 1e-15);
        assert!((cosine_lr(2.0, 0.01, 50, 100) - 1.01).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let lr = cosine_lr(1.0, 0.01, i, 100);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
