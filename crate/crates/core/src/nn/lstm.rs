//! LSTM cell without peepholes, and stacked unrolling with backpropagation
//! through time.
//!
//! ```text
//! i = σ(W_hi·h + W_xi·x + b_i)
//! f = σ(W_hf·h + W_xf·x + b_f)
//! o = σ(W_ho·h + W_xo·x + b_o)
//! c' = f ⊙ c + i ⊙ tanh(W_hc·h + W_xc·x + b_c)
//! h' = o ⊙ tanh(c')
//! ```

use super::init::{self, InitRng};
use super::tensor::{accumulate_mat_vec, accumulate_outer, accumulate_vec_mat, axpy};
use super::{shape_err, sigmoid, NnError, Parameters, Real, Tensor};

/// Input matrices are `[input_dim × hidden]`, recurrent ones `[hidden × hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<F> {
    pub w_xi: Tensor<F>,
    pub w_xf: Tensor<F>,
    pub w_xo: Tensor<F>,
    pub w_xc: Tensor<F>,
    pub w_hi: Tensor<F>,
    pub w_hf: Tensor<F>,
    pub w_ho: Tensor<F>,
    pub w_hc: Tensor<F>,
    pub b_i: Tensor<F>,
    pub b_f: Tensor<F>,
    pub b_o: Tensor<F>,
    pub b_c: Tensor<F>,
}

impl<F: Real> LstmParams<F> {
    /// Glorot-uniform matrices, zero biases except the forget gate.
    pub fn new(rng: &mut InitRng, input_dim: usize, hidden: usize) -> Self {
        let xs = [input_dim, hidden];
        let hs = [hidden, hidden];
        let mut p = Self {
            w_xi: init::glorot(rng, &xs, input_dim, hidden),
            w_xf: init::glorot(rng, &xs, input_dim, hidden),
            w_xo: init::glorot(rng, &xs, input_dim, hidden),
            w_xc: init::glorot(rng, &xs, input_dim, hidden),
            w_hi: init::glorot(rng, &hs, hidden, hidden),
            w_hf: init::glorot(rng, &hs, hidden, hidden),
            w_ho: init::glorot(rng, &hs, hidden, hidden),
            w_hc: init::glorot(rng, &hs, hidden, hidden),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
            b_c: Tensor::zeros(&[hidden]),
        };
        p.b_f.fill(F::of(init::FORGET_BIAS_INIT));
        p
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let x = || Tensor::zeros(&[input_dim, hidden]);
        let h = || Tensor::zeros(&[hidden, hidden]);
        let b = || Tensor::zeros(&[hidden]);
        Self {
            w_xi: x(),
            w_xf: x(),
            w_xo: x(),
            w_xc: x(),
            w_hi: h(),
            w_hf: h(),
            w_ho: h(),
            w_hc: h(),
            b_i: b(),
            b_f: b(),
            b_o: b(),
            b_c: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xi.rows()
    }

    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    /// Checks that all twelve tensors agree on one input size and one hidden size.
    pub fn validate(&self) -> Result<(), NnError> {
        let (d, h) = (self.input_dim(), self.hidden());
        let ok = [&self.w_xi, &self.w_xf, &self.w_xo, &self.w_xc]
            .iter()
            .all(|w| w.shape() == [d, h])
            && [&self.w_hi, &self.w_hf, &self.w_ho, &self.w_hc]
                .iter()
                .all(|w| w.shape() == [h, h])
            && [&self.b_i, &self.b_f, &self.b_o, &self.b_c]
                .iter()
                .all(|b| b.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(shape_err(format!(
                "inconsistent LSTM parameter shapes (input {d}, hidden {h})"
            )))
        }
    }

    fn input_weights(&self) -> [&Tensor<F>; 4] {
        [&self.w_xi, &self.w_xf, &self.w_xo, &self.w_xc]
    }

    fn recurrent_weights(&self) -> [&Tensor<F>; 4] {
        [&self.w_hi, &self.w_hf, &self.w_ho, &self.w_hc]
    }

    fn biases(&self) -> [&Tensor<F>; 4] {
        [&self.b_i, &self.b_f, &self.b_o, &self.b_c]
    }
}

impl<F: Real> Parameters<F> for LstmParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        vec![
            ("w_xi".into(), &self.w_xi),
            ("w_xf".into(), &self.w_xf),
            ("w_xo".into(), &self.w_xo),
            ("w_xc".into(), &self.w_xc),
            ("w_hi".into(), &self.w_hi),
            ("w_hf".into(), &self.w_hf),
            ("w_ho".into(), &self.w_ho),
            ("w_hc".into(), &self.w_hc),
            ("b_i".into(), &self.b_i),
            ("b_f".into(), &self.b_f),
            ("b_o".into(), &self.b_o),
            ("b_c".into(), &self.b_c),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        vec![
            ("w_xi".into(), &mut self.w_xi),
            ("w_xf".into(), &mut self.w_xf),
            ("w_xo".into(), &mut self.w_xo),
            ("w_xc".into(), &mut self.w_xc),
            ("w_hi".into(), &mut self.w_hi),
            ("w_hf".into(), &mut self.w_hf),
            ("w_ho".into(), &mut self.w_ho),
            ("w_hc".into(), &mut self.w_hc),
            ("b_i".into(), &mut self.b_i),
            ("b_f".into(), &mut self.b_f),
            ("b_o".into(), &mut self.b_o),
            ("b_c".into(), &mut self.b_c),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub h: Vec<F>,
    pub c: Vec<F>,
}

impl<F: Real> LstmState<F> {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![F::zero(); hidden],
            c: vec![F::zero(); hidden],
        }
    }
}

/// Activations of one step kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    x: Vec<F>,
    h_prev: Vec<F>,
    c_prev: Vec<F>,
    i: Vec<F>,
    f: Vec<F>,
    o: Vec<F>,
    g: Vec<F>,
    tanh_c: Vec<F>,
}

pub fn lstm_step<F: Real>(
    params: &LstmParams<F>,
    x: &[F],
    prev: &LstmState<F>,
) -> Result<(LstmState<F>, StepCache<F>), NnError> {
    let hidden = params.hidden();
    if x.len() != params.input_dim() {
        return Err(shape_err(format!(
            "LSTM input of size {} for input_dim {}",
            x.len(),
            params.input_dim()
        )));
    }
    if prev.h.len() != hidden || prev.c.len() != hidden {
        return Err(shape_err(format!(
            "LSTM state of size {} for hidden {hidden}",
            prev.h.len()
        )));
    }

    let mut pre: [Vec<F>; 4] = params.biases().map(|b| b.data().to_vec());
    for (z, (wx, wh)) in pre.iter_mut().zip(
        params
            .input_weights()
            .into_iter()
            .zip(params.recurrent_weights()),
    ) {
        accumulate_vec_mat(x, wx, z);
        accumulate_vec_mat(&prev.h, wh, z);
    }
    let [zi, zf, zo, zc] = pre;
    let i: Vec<F> = zi.into_iter().map(sigmoid).collect();
    let f: Vec<F> = zf.into_iter().map(sigmoid).collect();
    let o: Vec<F> = zo.into_iter().map(sigmoid).collect();
    let g: Vec<F> = zc.into_iter().map(F::tanh).collect();

    let c: Vec<F> = (0..hidden)
        .map(|k| f[k] * prev.c[k] + i[k] * g[k])
        .collect();
    let tanh_c: Vec<F> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<F> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();

    let cache = StepCache {
        x: x.to_vec(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        f,
        o,
        g,
        tanh_c,
    };
    Ok((LstmState { h, c }, cache))
}

/// Gradients of one step. `dh` is the total gradient on `h_t`, `dc_next` the
/// gradient on `c_t` arriving from step `t + 1`. Returns `(dx, dh_prev, dc_prev)`.
fn step_backward<F: Real>(
    params: &LstmParams<F>,
    cache: &StepCache<F>,
    dh: &[F],
    dc_next: &[F],
    grad: &mut LstmParams<F>,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let hidden = params.hidden();
    let one = F::one();
    let mut dz: [Vec<F>; 4] = std::array::from_fn(|_| vec![F::zero(); hidden]);
    let mut dc_prev = vec![F::zero(); hidden];
    for k in 0..hidden {
        let (i, f, o, g, tc) = (
            cache.i[k],
            cache.f[k],
            cache.o[k],
            cache.g[k],
            cache.tanh_c[k],
        );
        let d_o = dh[k] * tc;
        let dc = dc_next[k] + dh[k] * o * (one - tc * tc);
        dz[0][k] = dc * g * i * (one - i);
        dz[1][k] = dc * cache.c_prev[k] * f * (one - f);
        dz[2][k] = d_o * o * (one - o);
        dz[3][k] = dc * i * (one - g * g);
        dc_prev[k] = dc * f;
    }

    let mut dx = vec![F::zero(); params.input_dim()];
    let mut dh_prev = vec![F::zero(); hidden];
    let LstmParams {
        w_xi,
        w_xf,
        w_xo,
        w_xc,
        w_hi,
        w_hf,
        w_ho,
        w_hc,
        b_i,
        b_f,
        b_o,
        b_c,
    } = grad;
    let gx = [w_xi, w_xf, w_xo, w_xc];
    let gh = [w_hi, w_hf, w_ho, w_hc];
    let gb = [b_i, b_f, b_o, b_c];
    for (gate, ((gwx, gwh), gbias)) in gx.into_iter().zip(gh).zip(gb).enumerate() {
        let d = &dz[gate];
        accumulate_outer(&cache.x, d, gwx);
        accumulate_outer(&cache.h_prev, d, gwh);
        axpy(one, d, gbias.data_mut());
        accumulate_mat_vec(params.input_weights()[gate], d, &mut dx);
        accumulate_mat_vec(params.recurrent_weights()[gate], d, &mut dh_prev);
    }
    (dx, dh_prev, dc_prev)
}

/// Per-layer step caches of an unrolled stack.
#[derive(Debug, Clone)]
pub struct LstmTrace<F> {
    layers: Vec<Vec<StepCache<F>>>,
    valid_length: usize,
    input_dim: usize,
}

impl<F> LstmTrace<F> {
    /// Number of unrolled timesteps.
    pub fn steps(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    /// Steps at or beyond this index are masked for downstream pooling.
    pub fn valid_length(&self) -> usize {
        self.valid_length
    }
}

/// Runs the stack from zero states over every row of `inputs` and returns the
/// top layer's hidden states `[T × H]`.
pub fn lstm_sequence<F: Real>(
    layers: &[LstmParams<F>],
    inputs: &Tensor<F>,
    valid_length: usize,
) -> Result<(Tensor<F>, LstmTrace<F>), NnError> {
    let top = layers.last().ok_or_else(|| shape_err("empty LSTM stack"))?;
    if inputs.shape().len() != 2 {
        return Err(shape_err(format!(
            "LSTM inputs must be [T × d], got {:?}",
            inputs.shape()
        )));
    }
    if valid_length > inputs.rows() {
        return Err(shape_err(format!(
            "valid_length {valid_length} exceeds {} steps",
            inputs.rows()
        )));
    }
    let mut expected = inputs.cols();
    for (l, p) in layers.iter().enumerate() {
        p.validate()?;
        if p.input_dim() != expected {
            return Err(shape_err(format!(
                "layer {l} expects input {}, receives {expected}",
                p.input_dim()
            )));
        }
        expected = p.hidden();
    }

    let steps = inputs.rows();
    let mut caches = Vec::with_capacity(layers.len());
    let mut current = inputs.clone();
    for p in layers {
        let mut state = LstmState::zeros(p.hidden());
        let mut out = Tensor::zeros(&[steps, p.hidden()]);
        let mut layer_cache = Vec::with_capacity(steps);
        for t in 0..steps {
            let (next, cache) = lstm_step(p, current.row(t), &state)?;
            out.row_mut(t).copy_from_slice(&next.h);
            layer_cache.push(cache);
            state = next;
        }
        caches.push(layer_cache);
        current = out;
    }
    debug_assert_eq!(current.cols(), top.hidden());
    Ok((
        current,
        LstmTrace {
            layers: caches,
            valid_length,
            input_dim: inputs.cols(),
        },
    ))
}

/// Backpropagation through time. `d_out` is the gradient on the top layer's
/// outputs; returns the gradient on `inputs`. Trailing steps whose upstream
/// gradient is zero contribute nothing and are skipped.
pub fn lstm_sequence_backward<F: Real>(
    layers: &[LstmParams<F>],
    trace: &LstmTrace<F>,
    d_out: &Tensor<F>,
    grads: &mut [LstmParams<F>],
) -> Result<Tensor<F>, NnError> {
    let steps = trace.steps();
    if d_out.rows() != steps || layers.len() != trace.layers.len() || grads.len() != layers.len() {
        return Err(shape_err(
            "LSTM backward does not match the recorded forward pass",
        ));
    }
    let mut upstream = d_out.clone();
    for l in (0..layers.len()).rev() {
        let p = &layers[l];
        let hidden = p.hidden();
        let mut d_in = Tensor::zeros(&[steps, p.input_dim()]);
        let end = (0..steps)
            .rev()
            .find(|&t| upstream.row(t).iter().any(|v| *v != F::zero()))
            .map_or(0, |t| t + 1);
        let mut dh_next = vec![F::zero(); hidden];
        let mut dc_next = vec![F::zero(); hidden];
        for t in (0..end).rev() {
            let mut dh = upstream.row(t).to_vec();
            axpy(F::one(), &dh_next, &mut dh);
            let (dx, dh_prev, dc_prev) =
                step_backward(p, &trace.layers[l][t], &dh, &dc_next, &mut grads[l]);
            d_in.row_mut(t).copy_from_slice(&dx);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        upstream = d_in;
    }
    debug_assert_eq!(upstream.cols(), trace.input_dim);
    Ok(upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn scalar_params(wx: f64) -> LstmParams<f64> {
        let mut p = LstmParams::zeros(1, 1);
        for w in [&mut p.w_xi, &mut p.w_xf, &mut p.w_xo, &mut p.w_xc] {
            w.fill(wx);
        }
        p
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let p = LstmParams::<f64>::zeros(3, 2);
        let (s, _) = lstm_step(&p, &[0.3, -1.0, 2.0], &LstmState::zeros(2)).unwrap();
        assert_eq!(s.h, vec![0.0, 0.0]);
        assert_eq!(s.c, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        // Independent evaluation of the cell equations for H = 1, x = 0.5.
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let gate = sig(0.5);
        let c1 = gate * 0.5f64.tanh();
        let h1 = gate * c1.tanh();
        assert!((gate - 0.622459).abs() < 1e-6);
        assert!((c1 - 0.287649).abs() < 1e-6);
        assert!((h1 - 0.174270).abs() < 1e-6);

        let (s, _) = lstm_step(&scalar_params(1.0), &[0.5], &LstmState::zeros(1)).unwrap();
        assert!((s.c[0] - c1).abs() < 1e-15);
        assert!((s.h[0] - h1).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = LstmParams::<f64>::zeros(3, 2);
        assert!(matches!(
            lstm_step(&p, &[1.0], &LstmState::zeros(2)),
            Err(NnError::Shape(_))
        ));
        assert!(matches!(
            lstm_step(&p, &[1.0, 2.0, 3.0], &LstmState::zeros(3)),
            Err(NnError::Shape(_))
        ));
        let bad = vec![LstmParams::<f64>::zeros(3, 2), LstmParams::zeros(3, 2)];
        assert!(lstm_sequence(&bad, &Tensor::zeros(&[4, 3]), 4).is_err());
    }

    #[test]
    fn single_step_sequence_equals_step() {
        let mut rng = InitRng::seed_from_u64(4);
        let p = LstmParams::<f64>::new(&mut rng, 3, 4);
        let x = Tensor::from_vec(&[1, 3], vec![0.1, -0.7, 0.4]).unwrap();
        let (out, trace) = lstm_sequence(std::slice::from_ref(&p), &x, 1).unwrap();
        let (s, _) = lstm_step(&p, x.row(0), &LstmState::zeros(4)).unwrap();
        assert_eq!(out.row(0), s.h.as_slice());
        assert_eq!(trace.steps(), 1);
    }

    #[test]
    fn stacked_zero_layers_output_zero() {
        let layers = vec![LstmParams::<f64>::zeros(2, 3), LstmParams::zeros(3, 3)];
        let x = Tensor::from_vec(&[4, 2], vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0, -1.0, -1.0]).unwrap();
        let (out, _) = lstm_sequence(&layers, &x, 4).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sequence_matches_manual_unrolling() {
        // T = 3, H = 2: chain lstm_step by hand for both layers.
        let mut rng = InitRng::seed_from_u64(11);
        let layers = vec![
            LstmParams::<f64>::new(&mut rng, 2, 2),
            LstmParams::new(&mut rng, 2, 2),
        ];
        let x = Tensor::from_vec(&[3, 2], vec![0.2, -0.1, 0.9, 0.3, -0.5, 0.8]).unwrap();
        let (out, _) = lstm_sequence(&layers, &x, 3).unwrap();

        let mut s0 = LstmState::zeros(2);
        let mut s1 = LstmState::zeros(2);
        for t in 0..3 {
            s0 = lstm_step(&layers[0], x.row(t), &s0).unwrap().0;
            s1 = lstm_step(&layers[1], &s0.h, &s1).unwrap().0;
            assert_eq!(out.row(t), s1.h.as_slice());
        }
    }

    #[test]
    fn hidden_state_is_bounded() {
        let mut rng = InitRng::seed_from_u64(99);
        for _ in 0..20 {
            let mut p = LstmParams::<f64>::new(&mut rng, 4, 6);
            for (_, t) in p.tensors_mut() {
                t.scale(3.0);
            }
            let data: Vec<f64> = (0..40).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = Tensor::from_vec(&[10, 4], data).unwrap();
            let (out, _) = lstm_sequence(std::slice::from_ref(&p), &x, 10).unwrap();
            assert!(out.data().iter().all(|h| h.abs() < 1.0));
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = InitRng::seed_from_u64(0);
        let p = LstmParams::<f32>::new(&mut rng, 2, 3);
        assert!(p.b_f.data().iter().all(|&b| b == 1.0));
        assert!(p.b_i.data().iter().all(|&b| b == 0.0));
    }
}
