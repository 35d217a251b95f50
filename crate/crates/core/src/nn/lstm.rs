//! LSTM cell with hand-written backward pass.
//!
//! Gate pre-activations are stacked `[input, forget, candidate, output]`,
//! each block `hidden` rows tall:
//!
//! ```text
//! z  = W_x x + W_h h + b
//! i  = sigmoid(z_i)   f = sigmoid(z_f)   g = tanh(z_g)   o = sigmoid(z_o)
//! c' = f * c + i * g
//! h' = o * tanh(c')
//! ```

use rand::Rng;

use super::matrix::{sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, stacked like the pre-activations.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w_x: Matrix::zeros(4 * hidden, input),
            w_h: Matrix::zeros(4 * hidden, hidden),
            b: Matrix::zeros(4 * hidden, 1),
        }
    }

    pub fn uniform<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        LstmParams {
            w_x: Matrix::uniform(4 * hidden, input, scale, rng),
            w_h: Matrix::uniform(4 * hidden, hidden, scale, rng),
            b: Matrix::uniform(4 * hidden, 1, scale, rng),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_h.cols()
    }

    pub fn tensors(&self) -> [&Matrix; 3] {
        [&self.w_x, &self.w_h, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.b]
    }

    pub fn forward(&self, x: &[f64], state: &LstmState) -> (LstmState, LstmCache) {
        let hs = self.hidden_size();
        let mut z = self.b.data().to_vec();
        self.w_x.mul_vec_acc(x, &mut z);
        self.w_h.mul_vec_acc(&state.h, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if k / hs == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let (i, rest) = z.split_at(hs);
        let (f, rest) = rest.split_at(hs);
        let (g, o) = rest.split_at(hs);
        let c: Vec<f64> = (0..hs).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = (0..hs).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates: z,
            tanh_c,
        };
        (LstmState { h, c }, cache)
    }

    /// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs)
    /// into `grad` and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(
        &self,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmParams,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let gates = &cache.gates;
        let mut dz = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for k in 0..hs {
            let (i, f, g, o) = (gates[k], gates[hs + k], gates[2 * hs + k], gates[3 * hs + k]);
            let tc = cache.tanh_c[k];
            let dc_total = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dz[k] = dc_total * g * i * (1.0 - i);
            dz[hs + k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
            dz[2 * hs + k] = dc_total * i * (1.0 - g * g);
            dz[3 * hs + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dc_total * f;
        }
        grad.w_x.add_outer(&dz, &cache.x);
        grad.w_h.add_outer(&dz, &cache.h_prev);
        for (b, d) in grad.b.data_mut().iter_mut().zip(&dz) {
            *b += d;
        }
        let mut dx = vec![0.0; self.input_size()];
        self.w_x.mul_t_vec_acc(&dz, &mut dx);
        let mut dh_prev = vec![0.0; hs];
        self.w_h.mul_t_vec_acc(&dz, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

/// One checked LSTM step: rejects non-finite inputs or mismatched sizes.
pub fn lstm_step(p: &LstmParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    if x.len() != p.input_size() || state.h.len() != p.hidden_size() || state.c.len() != p.hidden_size() {
        return Err(Error::invalid(format!(
            "lstm expects input {} and state {}, got {} and ({}, {})",
            p.input_size(),
            p.hidden_size(),
            x.len(),
            state.h.len(),
            state.c.len()
        )));
    }
    if x.iter().chain(&state.h).chain(&state.c).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite lstm input".into()));
    }
    Ok(p.forward(x, state).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights() {
        let p = LstmParams::zeros(3, 2);
        let s = lstm_step(&p, &[1.0, -2.0, 0.5], &LstmState::zeros(2)).unwrap();
        assert_eq!(s.c, vec![0.0, 0.0]);
        assert_eq!(s.h, vec![0.0, 0.0]);
        let (_, cache) = p.forward(&[1.0, -2.0, 0.5], &LstmState::zeros(2));
        assert!(cache.gates[..2].iter().all(|g| *g == 0.5));
        assert!(cache.gates[4..6].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn forget_gate_halves_cell() {
        // zero input, zero weights: f = 0.5, g = 0, so c' = 0.5 * c
        let p = LstmParams::zeros(1, 1);
        let s = lstm_step(
            &p,
            &[0.0],
            &LstmState {
                h: vec![0.0],
                c: vec![1.0],
            },
        )
        .unwrap();
        assert_eq!(s.c, vec![0.5]);
        assert!((s.h[0] - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        let p = LstmParams::zeros(1, 1);
        assert!(matches!(
            lstm_step(&p, &[f64::NAN], &LstmState::zeros(1)),
            Err(Error::Numeric(_))
        ));
        assert!(lstm_step(&p, &[0.0, 1.0], &LstmState::zeros(1)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LstmParams::uniform(3, 2, 0.5, &mut rng);
        let x = [0.3, -0.7, 0.2];
        let s0 = LstmState {
            h: vec![0.1, -0.4],
            c: vec![0.5, 0.2],
        };
        // scalar objective: sum(h') + 2 sum(c')
        let f = |p: &LstmParams| {
            let (s, _) = p.forward(&x, &s0);
            s.h.iter().sum::<f64>() + 2.0 * s.c.iter().sum::<f64>()
        };
        let (_, cache) = p.forward(&x, &s0);
        let mut grad = LstmParams::zeros(3, 2);
        p.backward(&cache, &[1.0, 1.0], &[2.0, 2.0], &mut grad);
        let eps = 1e-6;
        for t in 0..3 {
            for k in 0..p.tensors()[t].data().len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t].data_mut()[k] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[t].data_mut()[k] -= eps;
                let num = (f(&plus) - f(&minus)) / (2.0 * eps);
                let ana = grad.tensors()[t].data()[k];
                assert!((num - ana).abs() < 1e-8, "tensor {t} idx {k}: {num} vs {ana}");
            }
        }
    }
}
