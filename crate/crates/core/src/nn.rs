//! Small fully connected networks with hand-written backward passes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Parameters, TensorView};

/// Dense layer, weights stored `[out][in]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// MLP with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyNet {
    layers: Vec<Dense>,
}

/// Per-layer inputs from a forward pass, plus the output.
#[derive(Clone, Debug, Default)]
pub struct NetTrace {
    acts: Vec<Vec<f64>>,
}

impl NetTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl TinyNet {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(widths)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|w| *w == 0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weight: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Forward pass recording activations in `trace` (buffers are reused).
    pub fn forward_into(&self, input: &[f64], trace: &mut NetTrace) {
        debug_assert_eq!(input.len(), self.input_width());
        let n = self.layers.len();
        trace.acts.resize_with(n + 1, Vec::new);
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = trace.acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.clear();
            y.extend_from_slice(&layer.bias);
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                *yo += dot(row, x);
            }
            if l + 1 < n {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut trace = NetTrace::default();
        self.forward_into(input, &mut trace);
        trace.acts.pop().unwrap_or_default()
    }

    /// Backward pass from `d_out`; accumulates parameter gradients and, if
    /// requested, writes (overwrites) the input gradient.
    pub fn backward(
        &self,
        trace: &NetTrace,
        d_out: &[f64],
        grads: &mut [Vec<f64>],
        d_input: Option<&mut [f64]>,
        scratch: &mut Vec<f64>,
    ) {
        let n = self.layers.len();
        debug_assert_eq!(trace.acts.len(), n + 1);
        let max_w = self.layers.iter().map(|l| l.inputs.max(l.outputs)).max().unwrap_or(0);
        scratch.clear();
        scratch.resize(2 * max_w, 0.0);
        let (cur, next) = scratch.split_at_mut(max_w);
        cur[..d_out.len()].copy_from_slice(d_out);
        let mut d_input = d_input;
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let x = &trace.acts[l];
            let dy = &cur[..layer.outputs];
            let (gw, gb) = {
                let (a, b) = grads.split_at_mut(2 * l + 1);
                (&mut a[2 * l], &mut b[0])
            };
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
            let need_dx = l > 0 || d_input.is_some();
            if !need_dx {
                break;
            }
            let dx = &mut next[..layer.inputs];
            dx.fill(0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
            if l > 0 {
                // ReLU on this layer's input
                for (d, xi) in dx.iter_mut().zip(x) {
                    if *xi <= 0.0 {
                        *d = 0.0;
                    }
                }
                cur[..layer.inputs].copy_from_slice(dx);
            } else if let Some(out) = d_input.take() {
                out.copy_from_slice(dx);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Parameters for TinyNet {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(TensorView {
                name: format!("l{l}.weight"),
                shape: vec![layer.outputs, layer.inputs],
                data: &layer.weight,
            });
            out.push(TensorView {
                name: format!("l{l}.bias"),
                shape: vec![layer.outputs],
                data: &layer.bias,
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = TinyNet::zeros(&[4, 8, 3]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]), vec![0.0; 3]);
    }

    #[test]
    fn rejects_bad_widths() {
        assert!(TinyNet::zeros(&[3]).is_err());
        assert!(TinyNet::zeros(&[3, 0, 2]).is_err());
    }

    #[test]
    fn single_layer_grads_are_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = TinyNet::new(&[3, 2], &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let mut trace = NetTrace::default();
        net.forward_into(&x, &mut trace);
        let dy = [0.3, -0.7];
        let mut g = net.zero_grads();
        let mut dx = [0.0; 3];
        net.backward(&trace, &dy, &mut g.tensors, Some(&mut dx), &mut Vec::new());
        for o in 0..2 {
            for i in 0..3 {
                assert!((g.tensors[0][o * 3 + i] - dy[o] * x[i]).abs() < 1e-15);
            }
            assert_eq!(g.tensors[1][o], dy[o]);
        }
        let w = &net.layers()[0].weight;
        for i in 0..3 {
            assert!((dx[i] - (dy[0] * w[i] + dy[1] * w[3 + i])).abs() < 1e-15);
        }
    }

    #[test]
    fn deep_net_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = TinyNet::new(&[4, 6, 5, 2], &mut rng).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = [0.7, -1.3];
        let loss = |n: &TinyNet, x: &[f64]| dot(&n.forward(x), &c);
        let mut trace = NetTrace::default();
        net.forward_into(&x, &mut trace);
        let mut g = net.zero_grads();
        let mut dx = vec![0.0; 4];
        net.backward(&trace, &c, &mut g.tensors, Some(&mut dx), &mut Vec::new());
        let h = 1e-6;
        for t in 0..g.tensors.len() {
            for i in 0..g.tensors[t].len() {
                let orig = net.tensors_mut()[t][i];
                net.tensors_mut()[t][i] = orig + h;
                let lp = loss(&net, &x);
                net.tensors_mut()[t][i] = orig - h;
                let lm = loss(&net, &x);
                net.tensors_mut()[t][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g.tensors[t][i]).abs() < 1e-7, "tensor {t} idx {i}");
            }
        }
        for i in 0..4 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
    }
}
