use super::{Parameters, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One Adam update. Gradients are validated before anything is mutated.
pub fn adam_step(params: &mut Parameters, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TensorError::ParamMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
            });
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteGradient { name: name.to_string() });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let step_size = (cfg.lr / bc1) as f32;
    let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
    let eps = cfg.eps as f32;

    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[i].data();
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for (j, w) in p.data.iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            *w -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f32) -> Parameters {
        let mut ps = Parameters::new();
        ps.push("p", Tensor::new(vec![1], vec![p]).unwrap());
        ps
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut ps = single(0.7);
        let mut st = AdamState::new(&ps);
        st.m[0] = Tensor::new(vec![1], vec![0.5]).unwrap();
        st.v[0] = Tensor::new(vec![1], vec![0.25]).unwrap();
        adam_step(&mut ps, &[Tensor::zeros(&[1])], &mut st, &AdamConfig::default()).unwrap();
        assert!((st.m[0].data()[0] - 0.45).abs() < 1e-7);
        assert!((st.v[0].data()[0] - 0.24975).abs() < 1e-7);

        let mut ps = single(0.7);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &[Tensor::zeros(&[1])], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(ps.tensors()[0].data()[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = v̂ = 1 at step one, so Δp = -lr · 1 / (1 + ε), up to f32 rounding
        let mut ps = single(0.0);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &[Tensor::full(&[1], 1.0)], &mut st, &AdamConfig::default()).unwrap();
        let p = ps.tensors()[0].data()[0] as f64;
        assert!((p + 1e-3).abs() < 1e-8, "{p}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = single(0.0);
        ps.push("second", Tensor::zeros(&[2]));
        let mut st = AdamState::new(&ps);
        let grads = [Tensor::zeros(&[1]), Tensor::from_parts(vec![2], vec![0.0, f32::NAN])];
        let err = adam_step(&mut ps, &grads, &mut st, &AdamConfig::default()).unwrap_err();
        assert_eq!(err, TensorError::NonFiniteGradient { name: "second".into() });
        assert_eq!(st.step, 0);
    }
}
