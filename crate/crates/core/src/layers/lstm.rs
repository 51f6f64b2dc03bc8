use crate::error::Result;
use crate::graph::{Graph, Var};

/// Single unidirectional LSTM layer with stacked gate weights.
///
/// Gate order in the stacked `[4H × ·]` tensors is input, forget,
/// candidate, output. State starts at zero for every sequence.
#[derive(Clone, Copy, Debug)]
pub struct LstmLayer {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl LstmLayer {
    pub fn forward(&self, g: &mut Graph, seq: Var) -> Result<Var> {
        g.lstm(seq, self.w_ih, self.w_hh, self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sigmoid, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Per-gate equations written out with separate matrices.
    fn oracle(x: &Tensor, w_ih: &Tensor, w_hh: &Tensor, b: &Tensor, h: usize) -> Vec<Vec<f64>> {
        let (t_len, d) = x.dims2().unwrap();
        let gate = |k: usize, j: usize, xt: &[f64], hp: &[f64]| {
            let row = k * h + j;
            let mut z = b.data()[row];
            for p in 0..d {
                z += w_ih.get2(row, p) * xt[p];
            }
            for p in 0..h {
                z += w_hh.get2(row, p) * hp[p];
            }
            z
        };
        let mut hp = vec![0.0; h];
        let mut cp = vec![0.0; h];
        let mut outs = Vec::new();
        for t in 0..t_len {
            let xt = x.row(t);
            let mut hn = vec![0.0; h];
            let mut cn = vec![0.0; h];
            for j in 0..h {
                let i = sigmoid(gate(0, j, xt, &hp));
                let f = sigmoid(gate(1, j, xt, &hp));
                let gg = gate(2, j, xt, &hp).tanh();
                let o = sigmoid(gate(3, j, xt, &hp));
                cn[j] = f * cp[j] + i * gg;
                hn[j] = o * cn[j].tanh();
            }
            outs.push(hn.clone());
            hp = hn;
            cp = cn;
        }
        outs
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[4, 3], 0.8));
        let layer = LstmLayer {
            w_ih: g.constant(Tensor::zeros(&[8, 3])),
            w_hh: g.constant(Tensor::zeros(&[8, 2])),
            bias: g.constant(Tensor::zeros(&[8])),
        };
        let h = layer.forward(&mut g, x).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_gate_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t_len in [1, 3] {
            let (d, h) = (4, 3);
            let x = rand_t(&mut rng, &[t_len, d]);
            let wih = rand_t(&mut rng, &[4 * h, d]);
            let whh = rand_t(&mut rng, &[4 * h, h]);
            let b = rand_t(&mut rng, &[4 * h]);
            let expected = oracle(&x, &wih, &whh, &b, h);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let layer = LstmLayer { w_ih: g.constant(wih), w_hh: g.constant(whh), bias: g.constant(b) };
            let out = layer.forward(&mut g, xv).unwrap();
            for t in 0..t_len {
                for j in 0..h {
                    assert!((g.value(out).get2(t, j) - expected[t][j]).abs() < 1e-12);
                }
            }
        }
    }
}
