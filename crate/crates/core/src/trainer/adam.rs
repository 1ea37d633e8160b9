use crate::error::{Error, Result};
use crate::nn::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one tensor per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn zeros_like(params: &[Tensor<F>]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Checks every gradient before touching any
/// state, so a rejected step leaves parameters and moments unchanged.
pub fn adam_step<F: Real>(
    params: &mut [Tensor<F>],
    names: &[String],
    grads: &[Tensor<F>],
    state: &mut AdamState<F>,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != names.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len()]));
    }
    for ((p, g), name) in params.iter().zip(grads).zip(names) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            let g = g.f64();
            let mj = hp.beta1 * m[j].f64() + (1.0 - hp.beta1) * g;
            let vj = hp.beta2 * v[j].f64() + (1.0 - hp.beta2) * g * g;
            m[j] = F::of(mj);
            v[j] = F::of(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + hp.eps);
            *w = F::of(w.f64() - update);
        }
    }
    Ok(())
}

/// Global L2 norm of a gradient set.
pub fn global_norm<F: Real>(grads: &[Tensor<F>]) -> f64 {
    grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

/// Rescales the set so its global norm is at most `max_norm`; returns the
/// norm measured before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Tensor<F>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let s = F::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn scalar_first_step_by_hand() {
        let (g, lr, hp) = (0.3f64, 0.01, AdamHyper::default());
        let mut p = vec![Tensor::scalar(1.5f64)];
        let mut st = AdamState::zeros_like(&p);
        adam_step(&mut p, &names(1), &[Tensor::scalar(g)], &mut st, lr, &hp).unwrap();
        // m̂ = g and v̂ = g² after one step.
        let m = (1.0 - 0.9) * g;
        let v = (1.0 - 0.999) * g * g;
        let want = 1.5 - lr * (m / (1.0 - 0.9)) / ((v / (1.0 - 0.999)).sqrt() + 1e-8);
        assert!((p[0].data()[0] - want).abs() < 1e-15);
        assert!((st.m[0].data()[0] - m).abs() < 1e-18);
        assert!((st.v[0].data()[0] - v).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = vec![Tensor::new(&[2], vec![1.0f64, -2.0]).unwrap()];
        let mut st = AdamState::zeros_like(&p);
        let g = Tensor::new(&[2], vec![0.5, 0.5]).unwrap();
        adam_step(&mut p, &names(1), &[g], &mut st, 0.1, &AdamHyper::default()).unwrap();
        let (before, m1) = (p[0].clone(), st.m[0].data()[0]);
        adam_step(&mut p, &names(1), &[Tensor::zeros(&[2])], &mut st, 0.1, &AdamHyper::default()).unwrap();
        assert!((st.m[0].data()[0] - 0.9 * m1).abs() < 1e-15);
        // Bias-corrected momentum still moves the parameter, but a fresh state does not.
        assert_ne!(p[0], before);
        let mut fresh = vec![before.clone()];
        let mut st0 = AdamState::zeros_like(&fresh);
        adam_step(&mut fresh, &names(1), &[Tensor::zeros(&[2])], &mut st0, 0.1, &AdamHyper::default()).unwrap();
        assert_eq!(fresh[0], before);
    }

    #[test]
    fn nan_gradient_names_parameter_and_changes_nothing() {
        let mut p = vec![Tensor::scalar(1.0f32), Tensor::scalar(2.0)];
        let mut st = AdamState::zeros_like(&p);
        let g = [Tensor::scalar(0.1f32), Tensor::scalar(f32::NAN)];
        let err = adam_step(&mut p, &names(2), &g, &mut st, 0.1, &AdamHyper::default()).unwrap_err();
        assert!(err.to_string().contains("p1"));
        assert_eq!(st.t, 0);
        assert_eq!(p[0].data()[0], 1.0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::new(&[2], vec![3.0f64, 4.0]).unwrap()];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0].data(), &[3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }
}
