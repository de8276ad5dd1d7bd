use super::{NnError, Parameters};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Moment accumulators for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn for_params<P: Parameters + ?Sized>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay (`p -= lr * wd * p` before the moment step).
///
/// Gradients are checked for finiteness before anything is touched, so a failed call leaves
/// parameters and state unchanged.
pub fn adam_step<P, G>(
    params: &mut P,
    grads: &G,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    group: &str,
) -> Result<(), NnError>
where
    P: Parameters + ?Sized,
    G: Parameters + ?Sized,
{
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::Shape(format!(
            "{group}: {} parameter tensors, {} gradient tensors, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(NnError::Shape(format!("{group}: tensor {i} size mismatch")));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                group: group.to_string(),
            });
        }
    }

    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);
    for (i, (p, g)) in params.iter_mut().zip(&grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * weight_decay * p[j];
            p[j] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = Scalar(vec![1.5, -2.0]);
        let g = Scalar(vec![0.0, 0.0]);
        let mut s = AdamState::for_params(&p);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut s, 1e-3, 0.0, "test").unwrap();
        }
        assert_eq!(p.0, vec![1.5, -2.0]);
        assert_eq!(s.step(), 10);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut p = Scalar(vec![0.0]);
        let g = Scalar(vec![2.5]);
        let mut s = AdamState::for_params(&p);
        for _ in 0..100 {
            adam_step(&mut p, &g, &mut s, 1e-2, 0.0, "test").unwrap();
        }
        assert!(p.0[0] < -0.5);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(w) = (w - 3)^2, minimum at 3, starting one unit away
        let mut p = Scalar(vec![2.0]);
        let mut s = AdamState::for_params(&p);
        for _ in 0..500 {
            let g = Scalar(vec![2.0 * (p.0[0] - 3.0)]);
            adam_step(&mut p, &g, &mut s, 1e-2, 0.0, "test").unwrap();
        }
        assert!((p.0[0] - 3.0).abs() < 1e-2, "w = {}", p.0[0]);
    }

    #[test]
    fn non_finite_gradient_names_group_and_leaves_state() {
        let mut p = Scalar(vec![1.0]);
        let g = Scalar(vec![f64::NAN]);
        let mut s = AdamState::for_params(&p);
        let err = adam_step(&mut p, &g, &mut s, 1e-3, 1e-4, "energy").unwrap_err();
        assert!(err.to_string().contains("energy"));
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(s.step(), 0);
    }
}
