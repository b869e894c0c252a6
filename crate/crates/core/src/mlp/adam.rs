use super::{MlpParams, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: MlpParams<T>,
    pub v: MlpParams<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &MlpParams<T>) -> Self {
        Self {
            m: MlpParams::zeros(params.shape()),
            v: MlpParams::zeros(params.shape()),
            t: 0,
        }
    }
}

/// One Adam update with bias correction:
///
/// ```text
/// t += 1
/// m = b1 m + (1 - b1) g          v = b2 v + (1 - b2) g^2
/// m_hat = m / (1 - b1^t)         v_hat = v / (1 - b2^t)
/// theta -= lr * m_hat / (sqrt(v_hat) + eps)
/// ```
///
/// The arithmetic is carried out in `f64` whatever `T` is.
pub fn adam_step<T: Real>(
    params: &mut MlpParams<T>,
    grads: &MlpParams<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let tensors = params.tensors_mut();
    let g = grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (((theta, g), m), v) in tensors.into_iter().zip(g).zip(m).zip(v) {
        for i in 0..theta.len() {
            let gi = g[i].widen();
            let mi = b1 * m[i].widen() + (1.0 - b1) * gi;
            let vi = b2 * v[i].widen() + (1.0 - b2) * gi * gi;
            m[i] = T::cast(mi);
            v[i] = T::cast(vi);
            let m_hat = mi / correct1;
            let v_hat = vi / correct2;
            let step = config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            theta[i] = T::cast(theta[i].widen() - step);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::MlpShape;
    use super::*;

    fn filled(shape: MlpShape, value: f64) -> MlpParams<f64> {
        let mut p = MlpParams::zeros(shape);
        p.tensors_mut().into_iter().for_each(|t| t.fill(value));
        p
    }

    #[test]
    fn first_step_by_hand() {
        let shape = MlpShape::standard(1, 1);
        let mut params = MlpParams::<f64>::zeros(shape);
        let grads = filled(shape, 0.5);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        assert_eq!(state.t, 1);
        assert!((state.m.output.bias[0] - 0.05).abs() < 1e-15);
        assert!((state.v.output.bias[0] - 0.00025).abs() < 1e-15);
        // m_hat = 0.5, v_hat = 0.25: -1e-3 * 0.5 / (0.5 + 1e-8)
        for t in params.tensors() {
            for &theta in t {
                assert!((theta - (-0.000_999_999_98)).abs() < 1e-12, "{theta}");
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let shape = MlpShape::standard(3, 2);
        let mut params = MlpParams::<f64>::init(shape, 1);
        let before = params.clone();
        let mut state = AdamState::new(&params);
        for _ in 0..5 {
            adam_step(
                &mut params,
                &MlpParams::zeros(shape),
                &mut state,
                &AdamConfig::default(),
            );
        }
        assert_eq!(params, before);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let shape = MlpShape::standard(2, 2);
        let mut params = MlpParams::<f64>::zeros(shape);
        let grads = filled(shape, -0.3);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default());
        let first = params.hidden1.weights[0];
        assert!(params
            .tensors()
            .iter()
            .all(|t| t.iter().all(|&v| v == first)));
        assert!(first > 0.0);
    }
}
