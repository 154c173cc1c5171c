use uwamod_core::{Error, Result};

use crate::model::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub lr: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, lr: 1e-3, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first: ParamSet,
    pub second: ParamSet,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self::with_hyper(params, AdamHyper::default())
    }

    pub fn with_hyper(params: &ParamSet, hyper: AdamHyper) -> Self {
        Self { hyper, step: 0, first: params.zeros_like(), second: params.zeros_like() }
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        let shapes = |p: &ParamSet| p.tensors.iter().map(|t| t.shape.clone()).collect::<Vec<_>>();
        shapes(&self.first) == shapes(params) && shapes(&self.second) == shapes(params)
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    if !state.matches(params) || !state.matches(grads) {
        return Err(Error::Shape("adam state, parameters and gradients disagree".into()));
    }
    state.step += 1;
    let AdamHyper { beta1, beta2, lr, eps } = state.hyper;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.first.tensors.iter_mut())
        .zip(state.second.tensors.iter_mut())
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    fn scalar(v: f64) -> ParamSet {
        ParamSet { tensors: vec![Tensor { name: "w".into(), shape: vec![1], data: vec![v] }] }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut s).unwrap();
        assert_eq!(p, scalar(0.7));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.5), &mut s).unwrap();
        // Bias correction makes m_hat = g and v_hat = g^2.
        let want = 1e-3 * 0.5 / (0.5 + 1e-8);
        let delta = 1.0 - p.tensors[0].data[0];
        assert!((delta - want).abs() < 1e-15);
        assert!((0.999e-3..=1.0e-3).contains(&delta));
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = scalar(0.3);
            let mut s = AdamState::new(&p);
            let mut path = Vec::new();
            for i in 0..20 {
                let g = scalar((i as f64 * 0.37).sin());
                adam_step(&mut p, &g, &mut s).unwrap();
                path.push(p.tensors[0].data[0]);
            }
            path
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = scalar(0.0);
        let mut s = AdamState::new(&p);
        let g = ParamSet { tensors: vec![Tensor { name: "w".into(), shape: vec![2], data: vec![0.0; 2] }] };
        assert!(adam_step(&mut p, &g, &mut s).is_err());
    }
}
