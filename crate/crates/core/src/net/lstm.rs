use rand_chacha::ChaCha8Rng;

use super::layers::{cache_ref, gemm, Cache, Layer, Mode};
use super::{Param, Tensor};
use crate::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction of an LSTM. Gate blocks are stacked `[input, forget, cell, output]`.
pub struct LstmDirection {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
}

struct DirectionCache {
    /// Time indices in processing order.
    order: Vec<usize>,
    /// Per processed step: activated gates `[i, f, g, o]` (4h).
    gates: Vec<Vec<f64>>,
    /// Cell state after each step, and the state before the first.
    cells: Vec<Vec<f64>>,
    /// Hidden state before each step.
    h_prev: Vec<Vec<f64>>,
}

impl LstmDirection {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_ih: Param::init(&[4 * hidden, input], hidden, rng),
            w_hh: Param::init(&[4 * hidden, hidden], hidden, rng),
            bias: Param::init(&[4 * hidden], hidden, rng),
        }
    }

    fn hidden(&self) -> usize {
        self.w_hh.value.shape()[1]
    }

    fn input(&self) -> usize {
        self.w_ih.value.shape()[1]
    }

    /// Runs the recurrence, writing hidden states into columns
    /// `[col, col + h)` of the `[T, out_width]` output.
    fn run(&self, x: &[f64], t_len: usize, reverse: bool, out: &mut [f64], out_width: usize, col: usize) -> DirectionCache {
        let h = self.hidden();
        let d = self.input();
        // Input projections for all steps at once: [T, 4h].
        let mut proj = Vec::with_capacity(t_len * 4 * h);
        for _ in 0..t_len {
            proj.extend_from_slice(self.bias.value.data());
        }
        gemm(t_len, d, 4 * h, x, (d as isize, 1), self.w_ih.value.data(), (1, d as isize), &mut proj, 1.0);

        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        let mut hidden = vec![0.0; h];
        let mut cell = vec![0.0; h];
        let mut cache = DirectionCache {
            order: order.clone(),
            gates: Vec::with_capacity(t_len),
            cells: vec![cell.clone()],
            h_prev: Vec::with_capacity(t_len),
        };
        let whh = self.w_hh.value.data();
        for &t in &order {
            let mut z = proj[t * 4 * h..(t + 1) * 4 * h].to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &whh[r * h..(r + 1) * h];
                *zr += row.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>();
            }
            for j in 0..h {
                z[j] = sigmoid(z[j]);
                z[h + j] = sigmoid(z[h + j]);
                z[2 * h + j] = z[2 * h + j].tanh();
                z[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            cache.h_prev.push(hidden.clone());
            for j in 0..h {
                cell[j] = z[h + j] * cell[j] + z[j] * z[2 * h + j];
                hidden[j] = z[3 * h + j] * cell[j].tanh();
            }
            out[t * out_width + col..t * out_width + col + h].copy_from_slice(&hidden);
            cache.gates.push(z);
            cache.cells.push(cell.clone());
        }
        cache
    }

    /// Backpropagation through time. `grad_out` is `[T, out_width]`; the
    /// input gradient is accumulated into `dx` (`[T, D]`).
    #[allow(clippy::too_many_arguments)]
    fn backprop(
        &self,
        cache: &DirectionCache,
        x: &[f64],
        grad_out: &[f64],
        out_width: usize,
        col: usize,
        grads: &mut [Tensor],
        dx: &mut [f64],
    ) {
        let h = self.hidden();
        let d = self.input();
        let t_len = cache.order.len();
        let whh = self.w_hh.value.data();
        let wih = self.w_ih.value.data();
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz_all = vec![0.0; t_len * 4 * h];
        for step in (0..t_len).rev() {
            let t = cache.order[step];
            let gates = &cache.gates[step];
            let c = &cache.cells[step + 1];
            let c_prev = &cache.cells[step];
            let dz = &mut dz_all[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = c[j].tanh();
                let dh = grad_out[t * out_width + col + j] + dh_next[j];
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            // dh_prev = W_hh^T dz; dW_hh += dz h_prev^T
            let hp = &cache.h_prev[step];
            dh_next.fill(0.0);
            let gwhh = grads[1].data_mut();
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                let row = &whh[r * h..(r + 1) * h];
                for j in 0..h {
                    dh_next[j] += row[j] * dzr;
                    gwhh[r * h + j] += dzr * hp[j];
                }
            }
        }
        // Input-side gradients for all steps at once.
        gemm(4 * h, t_len, d, &dz_all, (1, 4 * h as isize), x, (d as isize, 1), grads[0].data_mut(), 1.0);
        for row in dz_all.chunks(4 * h) {
            for (b, &g) in grads[2].data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        gemm(t_len, 4 * h, d, &dz_all, (4 * h as isize, 1), wih, (d as isize, 1), dx, 1.0);
    }

    fn params(&self) -> [&Param; 3] {
        [&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

/// Bidirectional LSTM over a `[T, D]` sequence, producing `[T, 2h]` with the
/// forward direction in the first `h` columns.
pub struct BiLstm {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

struct BiCache {
    x: Tensor,
    fwd: DirectionCache,
    bwd: DirectionCache,
}

impl BiLstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            forward: LstmDirection::new(input, hidden, rng),
            backward: LstmDirection::new(input, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }
}

impl Layer for BiLstm {
    fn name(&self) -> &'static str {
        "bilstm"
    }

    fn forward(&self, x: &Tensor, _mode: Mode) -> Result<(Tensor, Cache)> {
        let [t_len, d] = x.dims::<2>("bilstm input")?;
        if d != self.forward.input() {
            return Err(Error::Shape(format!(
                "bilstm: input width {d}, expected {}",
                self.forward.input()
            )));
        }
        if t_len == 0 {
            return Err(Error::Shape("bilstm: empty sequence".into()));
        }
        let h = self.hidden();
        let mut out = vec![0.0; t_len * 2 * h];
        let fwd = self.forward.run(x.data(), t_len, false, &mut out, 2 * h, 0);
        let bwd = self.backward.run(x.data(), t_len, true, &mut out, 2 * h, h);
        let cache = BiCache {
            x: x.clone(),
            fwd,
            bwd,
        };
        Ok((Tensor::new(&[t_len, 2 * h], out)?, Box::new(cache)))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor, grads: &mut [Tensor]) -> Result<Tensor> {
        let cache: &BiCache = cache_ref(cache, "bilstm")?;
        let [t_len, d] = cache.x.dims::<2>("bilstm input")?;
        let h = self.hidden();
        if grad_out.shape() != [t_len, 2 * h] {
            return Err(Error::Shape(format!("bilstm: grad {:?}", grad_out.shape())));
        }
        let mut dx = vec![0.0; t_len * d];
        let (gf, gb) = grads.split_at_mut(3);
        self.forward
            .backprop(&cache.fwd, cache.x.data(), grad_out.data(), 2 * h, 0, gf, &mut dx);
        self.backward
            .backprop(&cache.bwd, cache.x.data(), grad_out.data(), 2 * h, h, gb, &mut dx);
        Tensor::new(&[t_len, d], dx)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.forward.params().to_vec();
        v.extend(self.backward.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.forward.params_mut().into_iter().collect();
        v.extend(self.backward.params_mut());
        v
    }
}
