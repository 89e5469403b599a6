use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BlockKind, MlpSpec, ParamSet};
use crate::error::{check_dim, BoomError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Evaluation mode. `Train` samples inverted-dropout masks from the rng.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn deterministic(&self) -> bool {
        matches!(self, Mode::Eval)
    }
}

struct HiddenTrace {
    input: Array2<f64>,
    // (normalized activations, 1/std per row) when layer norm is on
    norm: Option<(Array2<f64>, Array1<f64>)>,
    pre_activation: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
}

/// Intermediate values of a batched forward pass, consumed by `backward`.
pub struct Trace {
    hidden: Vec<HiddenTrace>,
    last_input: Array2<f64>,
    pub output: Array2<f64>,
}

struct Cursor<'p> {
    params: &'p ParamSet,
    index: usize,
}

impl<'p> Cursor<'p> {
    fn next(&mut self, kind: BlockKind) -> (usize, ArrayView2<'p, f64>) {
        let i = self.index;
        let block = self.params.layout[i];
        debug_assert_eq!(block.kind, kind);
        self.index += 1;
        let view = ArrayView2::from_shape((block.rows, block.cols), self.params.block(i))
            .expect("block shape matches its length");
        (i, view)
    }
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b.column(0);
    y
}

fn layer_norm(
    y: &Array2<f64>,
    gain: ArrayView1<f64>,
    shift: ArrayView1<f64>,
) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
    let n = y.ncols() as f64;
    let mut normed = y.clone();
    let mut inv_std = Array1::zeros(y.nrows());
    for (mut row, s) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let mut out = &normed * &gain;
    out += &shift;
    (normed, inv_std, out)
}

impl MlpSpec {
    pub fn forward_trace(
        &self,
        params: &ParamSet,
        input: Array2<f64>,
        mut mode: Mode<'_>,
    ) -> Result<Trace> {
        check_dim(self.input_dim, input.ncols(), "network input")?;
        let blocks_per_hidden = if self.layer_norm { 4 } else { 2 };
        let expected_blocks = 2 + blocks_per_hidden * self.hidden_dims.len();
        if params.layout.len() != expected_blocks
            || params.layout[0].cols != self.input_dim
            || params.layout[expected_blocks - 2].rows != self.output_dim
        {
            return Err(BoomError::LayoutMismatch(
                "parameter layout does not match network spec".into(),
            ));
        }
        let mut cursor = Cursor { params, index: 0 };
        let mut x = input;
        let mut hidden = Vec::with_capacity(self.hidden_dims.len());
        for _ in 0..self.hidden_dims.len() {
            let (_, w) = cursor.next(BlockKind::Weight);
            let (_, b) = cursor.next(BlockKind::Bias);
            let y = linear(&x, w, b);
            let (norm, pre_activation) = if self.layer_norm {
                let (_, g) = cursor.next(BlockKind::NormGain);
                let (_, s) = cursor.next(BlockKind::NormShift);
                let (normed, inv_std, out) = layer_norm(&y, g.column(0), s.column(0));
                (Some((normed, inv_std)), out)
            } else {
                (None, y)
            };
            let mut h = pre_activation.mapv(|v| self.activation.apply(v));
            let dropout_mask = match &mut mode {
                Mode::Train(rng) if self.dropout_rate > 0.0 => {
                    let keep = 1.0 - self.dropout_rate;
                    let scale = 1.0 / keep;
                    let mask = Array2::from_shape_fn(h.raw_dim(), |_| {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    });
                    h *= &mask;
                    Some(mask)
                }
                _ => None,
            };
            hidden.push(HiddenTrace {
                input: std::mem::replace(&mut x, h),
                norm,
                pre_activation,
                dropout_mask,
            });
        }
        let (_, w) = cursor.next(BlockKind::Weight);
        let (_, b) = cursor.next(BlockKind::Bias);
        let mut output = linear(&x, w, b);
        if !output.is_standard_layout() {
            output = output.as_standard_layout().into_owned();
        }
        Ok(Trace {
            hidden,
            last_input: x,
            output,
        })
    }

    pub fn forward_batch(
        &self,
        params: &ParamSet,
        input: Array2<f64>,
        mode: Mode<'_>,
    ) -> Result<Array2<f64>> {
        Ok(self.forward_trace(params, input, mode)?.output)
    }

    pub fn forward(&self, params: &ParamSet, input: &[f64], mode: Mode<'_>) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .expect("row vector shape");
        let out = self.forward_batch(params, x, mode)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Reverse pass. Accumulates (`+=`) parameter gradients into `grad` when
    /// given and returns the gradient with respect to the input batch.
    pub fn backward(
        &self,
        params: &ParamSet,
        trace: &Trace,
        d_output: &Array2<f64>,
        mut grad: Option<&mut [f64]>,
    ) -> Array2<f64> {
        debug_assert_eq!(d_output.dim(), trace.output.dim());
        let layout = &params.layout;
        // Walk blocks from the back.
        let mut idx = layout.len();
        let mut take = |kind: BlockKind| {
            idx -= 1;
            debug_assert_eq!(layout[idx].kind, kind);
            idx
        };
        let view = |i: usize| {
            let b = layout[i];
            ArrayView2::from_shape((b.rows, b.cols), params.block(i)).unwrap()
        };

        let bias_i = take(BlockKind::Bias);
        let weight_i = take(BlockKind::Weight);
        accumulate_linear(
            grad.as_deref_mut(),
            layout[weight_i].range(),
            layout[bias_i].range(),
            d_output,
            &trace.last_input,
        );
        let mut d = d_output.dot(&view(weight_i));

        for layer in trace.hidden.iter().rev() {
            if let Some(mask) = &layer.dropout_mask {
                d *= mask;
            }
            ndarray::Zip::from(&mut d)
                .and(&layer.pre_activation)
                .for_each(|g, &a| *g *= self.activation.derivative(a));
            if let Some((normed, inv_std)) = &layer.norm {
                let shift_i = take(BlockKind::NormShift);
                let gain_i = take(BlockKind::NormGain);
                if let Some(g) = grad.as_deref_mut() {
                    let d_gain = (&d * normed).sum_axis(Axis(0));
                    let d_shift = d.sum_axis(Axis(0));
                    add_into(&mut g[layout[gain_i].range()], d_gain.iter());
                    add_into(&mut g[layout[shift_i].range()], d_shift.iter());
                }
                let gain = view(gain_i);
                let d_hat = &d * &gain.column(0);
                let n = d.ncols() as f64;
                for ((mut row, dh), (xh, &s)) in d
                    .rows_mut()
                    .into_iter()
                    .zip(d_hat.rows())
                    .zip(normed.rows().into_iter().zip(inv_std.iter()))
                {
                    let mean_dh = dh.sum() / n;
                    let mean_dh_xh = dh.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    for ((r, &a), &b) in row.iter_mut().zip(dh.iter()).zip(xh.iter()) {
                        *r = s * (a - mean_dh - b * mean_dh_xh);
                    }
                }
            }
            let bias_i = take(BlockKind::Bias);
            let weight_i = take(BlockKind::Weight);
            accumulate_linear(
                grad.as_deref_mut(),
                layout[weight_i].range(),
                layout[bias_i].range(),
                &d,
                &layer.input,
            );
            d = d.dot(&view(weight_i));
        }
        d
    }

    /// Loss and parameter gradient for `loss_fn`, which maps the output batch
    /// to `(loss, d loss / d output)`.
    pub fn loss_and_grad<F>(
        &self,
        params: &ParamSet,
        batch_inputs: Array2<f64>,
        mode: Mode<'_>,
        loss_fn: F,
    ) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
    {
        let trace = self.forward_trace(params, batch_inputs, mode)?;
        let (loss, d_out) = loss_fn(&trace.output);
        if !loss.is_finite() {
            return Err(BoomError::NonFiniteLoss {
                stage: "loss_and_grad",
                value: loss,
            });
        }
        let mut grad = vec![0.0; params.len()];
        self.backward(params, &trace, &d_out, Some(&mut grad));
        Ok((loss, grad))
    }
}

fn add_into<'a>(dst: &mut [f64], src: impl Iterator<Item = &'a f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate_linear(
    grad: Option<&mut [f64]>,
    weight_range: std::ops::Range<usize>,
    bias_range: std::ops::Range<usize>,
    d_out: &Array2<f64>,
    input: &Array2<f64>,
) {
    let Some(g) = grad else { return };
    let d_w = d_out.t().dot(input);
    match d_w.as_slice() {
        Some(s) => add_into(&mut g[weight_range], s.iter()),
        None => add_into(&mut g[weight_range], d_w.iter()),
    }
    let d_b = d_out.sum_axis(Axis(0));
    add_into(&mut g[bias_range], d_b.iter());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::params::{init_params, Activation};
    use ndarray::array;
    use rand::SeedableRng;

    fn identity_linear(dim: usize) -> (MlpSpec, ParamSet) {
        let spec = MlpSpec::new(dim, vec![], dim).with_activation(Activation::Identity);
        let mut p = ParamSet::zeros(&spec);
        let w = p.block_mut(0);
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        (spec, p)
    }

    #[test]
    fn identity_net_passes_input_through() {
        let (spec, p) = identity_linear(3);
        let out = spec.forward(&p, &[0.5, -2.0, 7.0], Mode::Eval).unwrap();
        assert_eq!(out, vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(3, vec![5, 4], 2);
        let p = ParamSet::zeros(&spec);
        let out = spec.forward(&p, &[1.0, 2.0, 3.0], Mode::Eval).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn scalar_mish_network_matches_hand_evaluation() {
        // y = w2 * mish(w1 * x + b1) + b2
        let spec = MlpSpec::new(1, vec![1], 1);
        let mut p = ParamSet::zeros(&spec);
        p.values.copy_from_slice(&[0.7, -0.2, 1.5, 0.3]);
        let x = 0.9_f64;
        let pre = 0.7 * x - 0.2;
        let mish = pre * (1.0 + pre.exp()).ln().tanh();
        let expected = 1.5 * mish + 0.3;
        let out = spec.forward(&p, &[x], Mode::Eval).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let spec = MlpSpec::new(3, vec![4], 2);
        let p = init_params(&spec, 0);
        assert!(matches!(
            spec.forward(&p, &[1.0, 2.0], Mode::Eval),
            Err(BoomError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn squared_norm_bias_gradient_is_twice_output() {
        let (spec, p) = identity_linear(2);
        let x = array![[0.3, -1.1]];
        let (loss, grad) = spec
            .loss_and_grad(&p, x.clone(), Mode::Eval, |out| {
                (out.iter().map(|v| v * v).sum(), out * 2.0)
            })
            .unwrap();
        assert!((loss - (0.09 + 1.21)).abs() < 1e-15);
        let bias = &grad[4..6];
        assert_eq!(bias, &[0.6, -2.2]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let spec = MlpSpec::new(3, vec![4], 2).with_layer_norm(true);
        let p = init_params(&spec, 1);
        let (_, grad) = spec
            .loss_and_grad(&p, array![[1.0, 2.0, 3.0]], Mode::Eval, |out| {
                (4.0, Array2::zeros(out.raw_dim()))
            })
            .unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let spec = MlpSpec::new(1, vec![], 1);
        let p = init_params(&spec, 1);
        let r = spec.loss_and_grad(&p, array![[1.0]], Mode::Eval, |out| {
            (f64::NAN, Array2::zeros(out.raw_dim()))
        });
        assert!(matches!(r, Err(BoomError::NonFiniteLoss { .. })));
    }

    #[test]
    fn dropout_is_inverted_and_unbiased() {
        // With an identity second layer the mean over masks of the dropped
        // hidden activations equals the deterministic activations.
        let spec = MlpSpec::new(2, vec![3], 3)
            .with_activation(Activation::Tanh)
            .with_dropout(0.25);
        let mut p = init_params(&spec, 4);
        {
            let w = p.block_mut(2);
            w.fill(0.0);
            for i in 0..3 {
                w[i * 3 + i] = 1.0;
            }
        }
        let x = [0.4, -0.8];
        let det = spec.forward(&p, &x, Mode::Eval).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let out = spec.forward(&p, &x, Mode::Train(&mut rng)).unwrap();
            for k in 0..3 {
                mean[k] += out[k] / n as f64;
            }
        }
        for k in 0..3 {
            // std of a single draw is |h| * sqrt(p/(1-p)) <= 0.58
            assert!((mean[k] - det[k]).abs() < 5.0 * 0.58 / (n as f64).sqrt());
        }
    }
}
