use crate::diff::{DiffError, ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment buffers for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
}

impl AdamState {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { m: Tensor::zeros(rows, cols), v: Tensor::zeros(rows, cols) }
    }
}

/// One bias-corrected Adam update of `value`; `t` is the 1-based step count.
pub fn adam_step(value: &mut Tensor, grad: &Tensor, state: &mut AdamState, t: u64, lr: f64) -> Result<(), DiffError> {
    for other in [grad.shape(), state.m.shape(), state.v.shape()] {
        if other != value.shape() {
            return Err(DiffError::ShapeMismatch { op: "adam_step", left: value.shape(), right: other });
        }
    }
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Adam over every parameter of a store, reading the accumulated `grad` buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    states: Vec<AdamState>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let states = store.iter().map(|(_, p)| AdamState::zeros(p.value.rows(), p.value.cols())).collect();
        Self { states, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<(), DiffError> {
        if self.states.len() != store.len() {
            return Err(DiffError::ShapeMismatch {
                op: "adam",
                left: [self.states.len(), 0],
                right: [store.len(), 0],
            });
        }
        self.t += 1;
        let ids: Vec<_> = store.ids().collect();
        for (id, state) in ids.into_iter().zip(&mut self.states) {
            let p = store.get_mut(id);
            adam_step(&mut p.value, &p.grad, state, self.t, lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::from_rows(&[&[1.0, -2.0]]);
        let before = w.clone();
        let mut s = AdamState::zeros(1, 2);
        for t in 1..=3 {
            adam_step(&mut w, &Tensor::zeros(1, 2), &mut s, t, 0.1).unwrap();
        }
        assert!(w.bitwise_eq(&before));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = Tensor::from_rows(&[&[0.0, 0.0]]);
        let mut s = AdamState::zeros(1, 2);
        adam_step(&mut w, &Tensor::from_rows(&[&[3.0, -0.5]]), &mut s, 1, 0.01).unwrap();
        assert!((w.get(0, 0) + 0.01).abs() < 1e-9);
        assert!((w.get(0, 1) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Tensor::zeros(1, 2);
        let mut s = AdamState::zeros(1, 2);
        assert!(adam_step(&mut w, &Tensor::zeros(2, 1), &mut s, 1, 0.1).is_err());
    }

    #[test]
    fn quadratic_bowl() {
        // f(w) = sum_i a_i (w_i - c_i)^2, minimum at c.
        let a = [1.0, 4.0, 0.5];
        let c = [0.3, -1.2, 2.0];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let id = store.add("w", 1, 3, crate::diff::Init::GlorotUniform, &mut rng);
        let mut adam = Adam::new(&store);
        for step in 0..500 {
            let lr = 0.1 * 0.985f64.powi(step);
            store.zero_grad();
            let w = store.value(id).data().to_vec();
            let g: Vec<f64> = (0..3).map(|i| 2.0 * a[i] * (w[i] - c[i])).collect();
            store.get_mut(id).grad = Tensor::new(1, 3, g).unwrap();
            adam.step(&mut store, lr).unwrap();
        }
        for i in 0..3 {
            assert!((store.value(id).get(0, i) - c[i]).abs() < 1e-4, "{:?}", store.value(id));
        }
    }
}
