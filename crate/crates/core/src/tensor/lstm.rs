use rand::Rng;

use super::graph::Op;
use super::ops::sigmoid;
use super::{gemm, Graph, Mode, Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Activation of the candidate path feeding the cell state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateActivation {
    /// `s = f*s + g*sigmoid(..)`: the candidate path squashed like the gates.
    #[default]
    Sigmoid,
    /// The conventional cell.
    Tanh,
}

/// Gate blocks along the `4 * units` axis, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Forget,
    Input,
    Candidate,
    Output,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Candidate, Gate::Output];

    pub fn block(self) -> usize {
        self as usize
    }
}

/// Weights of one LSTM layer.
///
/// The four paths are stored side by side: `input_kernel` is
/// `[input_dim, 4 * units]`, `recurrent_kernel` is `[units, 4 * units]` and
/// `bias` is `[4 * units]`, with blocks ordered as [`Gate::ALL`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<S = f32> {
    pub input_kernel: Tensor<S>,
    pub recurrent_kernel: Tensor<S>,
    pub bias: Tensor<S>,
    pub units: usize,
}

impl<S: Scalar> LstmParams<S> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        Self {
            input_kernel: Tensor::zeros([input_dim, 4 * units]),
            recurrent_kernel: Tensor::zeros([units, 4 * units]),
            bias: Tensor::zeros([4 * units]),
            units,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_kernel.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.units;
        let ok = self.input_kernel.rank() == 2
            && self.input_kernel.shape()[1] == 4 * h
            && self.recurrent_kernel.shape() == [h, 4 * h]
            && self.bias.shape() == [4 * h];
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "inconsistent LSTM parameters: input {:?}, recurrent {:?}, bias {:?}, units {h}",
                self.input_kernel.shape(),
                self.recurrent_kernel.shape(),
                self.bias.shape()
            )))
        }
    }

    /// Input-to-hidden matrix of one path, as `(units, input_dim)`.
    pub fn input_path(&self, gate: Gate) -> Tensor<S> {
        transpose_block(&self.input_kernel, gate, self.units)
    }

    /// Hidden-to-hidden matrix of one path, as `(units, units)`.
    pub fn recurrent_path(&self, gate: Gate) -> Tensor<S> {
        transpose_block(&self.recurrent_kernel, gate, self.units)
    }

    pub fn bias_path(&self, gate: Gate) -> &[S] {
        let h = self.units;
        &self.bias.data()[gate.block() * h..(gate.block() + 1) * h]
    }
}

fn transpose_block<S: Scalar>(m: &Tensor<S>, gate: Gate, h: usize) -> Tensor<S> {
    let rows = m.shape()[0];
    let cols = m.shape()[1];
    let mut out = Vec::with_capacity(rows * h);
    for u in 0..h {
        for r in 0..rows {
            out.push(m.data()[r * cols + gate.block() * h + u]);
        }
    }
    Tensor::from_parts(vec![h, rows], out)
}

#[derive(Clone, Copy, Debug)]
pub struct LstmOptions {
    pub return_sequences: bool,
    pub recurrent_dropout: f64,
    pub candidate: CandidateActivation,
}

pub(crate) struct LstmCtx<S> {
    input: Var,
    kernel: Var,
    recurrent: Var,
    bias: Var,
    batch: usize,
    steps: usize,
    dim: usize,
    units: usize,
    return_sequences: bool,
    candidate: CandidateActivation,
    /// Post-activation gates, `[T][B][4H]`.
    acts: Vec<S>,
    /// Cell states, `[T][B][H]`.
    states: Vec<S>,
    /// Hidden outputs, `[T][B][H]`.
    hidden: Vec<S>,
    /// Recurrent dropout mask with scaling folded in, `[B][H]`.
    mask: Option<Vec<S>>,
}

impl<S: Scalar> Graph<S> {
    /// LSTM over `[T, D]` or `[B, T, D]` with zero initial hidden and cell
    /// state. Returns `[.., T, H]` with `return_sequences`, else the final
    /// hidden state `[.., H]`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        kernel: Var,
        recurrent: Var,
        bias: Var,
        opts: LstmOptions,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let (batch, steps, dim, unbatched) = match is.as_slice() {
            [t, d] => (1, *t, *d, true),
            [b, t, d] => (*b, *t, *d, false),
            _ => return Err(Error::dim(format!("lstm expects [T, D] or [B, T, D], got {is:?}"))),
        };
        let ks = self.shape(kernel);
        if ks.len() != 2 || ks[0] != dim || !ks[1].is_multiple_of(4) {
            return Err(Error::dim(format!(
                "lstm input kernel {ks:?} does not accept input dimension {dim}"
            )));
        }
        let units = ks[1] / 4;
        if self.shape(recurrent) != [units, 4 * units] || self.shape(bias) != [4 * units] {
            return Err(Error::dim(format!(
                "lstm recurrent {:?} / bias {:?} inconsistent with {units} units",
                self.shape(recurrent),
                self.shape(bias)
            )));
        }
        if !(0.0..1.0).contains(&opts.recurrent_dropout) {
            return Err(Error::Config(format!(
                "recurrent dropout {} outside [0, 1)",
                opts.recurrent_dropout
            )));
        }
        let h4 = 4 * units;
        let mask = (mode == Mode::Train && opts.recurrent_dropout > 0.0).then(|| {
            let keep = S::lit(1.0 / (1.0 - opts.recurrent_dropout));
            (0..batch * units)
                .map(|_| {
                    if rng.random::<f64>() < opts.recurrent_dropout {
                        S::zero()
                    } else {
                        keep
                    }
                })
                .collect::<Vec<S>>()
        });

        let x = self.value(input).data();
        let u = self.value(kernel).data();
        let w = self.value(recurrent).data();
        let b = self.value(bias).data();
        let mut zx = vec![S::zero(); batch * steps * h4];
        gemm(false, false, batch * steps, h4, dim, S::one(), x, u, S::zero(), &mut zx);

        let mut acts = vec![S::zero(); steps * batch * h4];
        let mut states = vec![S::zero(); steps * batch * units];
        let mut hidden = vec![S::zero(); steps * batch * units];
        let mut hm = vec![S::zero(); batch * units];
        for t in 0..steps {
            let z = &mut acts[t * batch * h4..(t + 1) * batch * h4];
            for bi in 0..batch {
                let src = &zx[(bi * steps + t) * h4..(bi * steps + t + 1) * h4];
                for ((zv, &xv), &bv) in z[bi * h4..(bi + 1) * h4].iter_mut().zip(src).zip(b) {
                    *zv = xv + bv;
                }
            }
            if t > 0 {
                let prev = &hidden[(t - 1) * batch * units..t * batch * units];
                match &mask {
                    Some(m) => hm.iter_mut().zip(prev).zip(m).for_each(|((o, &h), &m)| *o = h * m),
                    None => hm.copy_from_slice(prev),
                }
                gemm(false, false, batch, h4, units, S::one(), &hm, w, S::one(), z);
            }
            for bi in 0..batch {
                let zr = &mut z[bi * h4..(bi + 1) * h4];
                for (k, v) in zr.iter_mut().enumerate() {
                    *v = if k / units == Gate::Candidate.block() && opts.candidate == CandidateActivation::Tanh {
                        v.tanh()
                    } else {
                        sigmoid(*v)
                    };
                }
                for j in 0..units {
                    let (f, g, c, o) = (zr[j], zr[units + j], zr[2 * units + j], zr[3 * units + j]);
                    let sp = if t > 0 {
                        states[((t - 1) * batch + bi) * units + j]
                    } else {
                        S::zero()
                    };
                    let s = f * sp + g * c;
                    states[(t * batch + bi) * units + j] = s;
                    hidden[(t * batch + bi) * units + j] = s.tanh() * o;
                }
            }
        }

        let (shape, out) = if opts.return_sequences {
            let mut out = vec![S::zero(); batch * steps * units];
            for t in 0..steps {
                for bi in 0..batch {
                    out[(bi * steps + t) * units..(bi * steps + t + 1) * units]
                        .copy_from_slice(&hidden[(t * batch + bi) * units..(t * batch + bi + 1) * units]);
                }
            }
            let shape = if unbatched { vec![steps, units] } else { vec![batch, steps, units] };
            (shape, out)
        } else {
            let out = hidden[(steps - 1) * batch * units..].to_vec();
            let shape = if unbatched { vec![units] } else { vec![batch, units] };
            (shape, out)
        };
        let rg = self.any_grad(&[input, kernel, recurrent, bias]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            rg,
            Op::Lstm(Box::new(LstmCtx {
                input,
                kernel,
                recurrent,
                bias,
                batch,
                steps,
                dim,
                units,
                return_sequences: opts.return_sequences,
                candidate: opts.candidate,
                acts,
                states,
                hidden,
                mask,
            })),
        ))
    }
}

impl<S: Scalar> LstmCtx<S> {
    pub(crate) fn backward(&self, g: &Graph<S>, gy: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let (batch, steps, dim, units) = (self.batch, self.steps, self.dim, self.units);
        let h4 = 4 * units;
        let w = g.value(self.recurrent).data();
        let gy = gy.data();
        // W^T once, so the per-step product reads a contiguous operand.
        let mut wt = vec![S::zero(); h4 * units];
        for (r, row) in w.chunks_exact(h4).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                wt[c * units + r] = v;
            }
        }

        let mut dz_all = vec![S::zero(); batch * steps * h4];
        let mut dz = vec![S::zero(); batch * h4];
        let mut dh_next = vec![S::zero(); batch * units];
        let mut ds_next = vec![S::zero(); batch * units];
        let one = S::one();

        for t in (0..steps).rev() {
            for bi in 0..batch {
                let a = &self.acts[(t * batch + bi) * h4..(t * batch + bi + 1) * h4];
                for j in 0..units {
                    let idx = bi * units + j;
                    let mut dh = dh_next[idx];
                    if self.return_sequences {
                        dh = dh + gy[(bi * steps + t) * units + j];
                    } else if t == steps - 1 {
                        dh = dh + gy[idx];
                    }
                    let (f, gi, c, o) = (a[j], a[units + j], a[2 * units + j], a[3 * units + j]);
                    let s = self.states[(t * batch + bi) * units + j];
                    let sp = if t > 0 {
                        self.states[((t - 1) * batch + bi) * units + j]
                    } else {
                        S::zero()
                    };
                    let ts = s.tanh();
                    let ds = dh * o * (one - ts * ts) + ds_next[idx];
                    let dc_act = match self.candidate {
                        CandidateActivation::Sigmoid => c * (one - c),
                        CandidateActivation::Tanh => one - c * c,
                    };
                    let row = &mut dz[bi * h4..(bi + 1) * h4];
                    row[j] = ds * sp * f * (one - f);
                    row[units + j] = ds * c * gi * (one - gi);
                    row[2 * units + j] = ds * gi * dc_act;
                    row[3 * units + j] = dh * ts * o * (one - o);
                    ds_next[idx] = ds * f;
                }
            }
            for bi in 0..batch {
                dz_all[(bi * steps + t) * h4..(bi * steps + t + 1) * h4]
                    .copy_from_slice(&dz[bi * h4..(bi + 1) * h4]);
            }
            if t > 0 {
                gemm(false, false, batch, units, h4, one, &dz, &wt, S::zero(), &mut dh_next);
                if let Some(m) = &self.mask {
                    dh_next.iter_mut().zip(m).for_each(|(d, &m)| *d = *d * m);
                }
            }
        }

        let mut out = Vec::with_capacity(4);
        if g.requires_grad(self.kernel) {
            let mut du = vec![S::zero(); dim * h4];
            gemm(true, false, dim, h4, batch * steps, one, g.value(self.input).data(), &dz_all, S::zero(), &mut du);
            out.push((self.kernel, Tensor::from_parts(vec![dim, h4], du)));
        }
        if g.requires_grad(self.recurrent) {
            // Previous hidden states (dropout applied) in the [B][T] row order of dz_all.
            let mut hm = vec![S::zero(); batch * steps * units];
            for bi in 0..batch {
                for t in 1..steps {
                    let src = &self.hidden[((t - 1) * batch + bi) * units..((t - 1) * batch + bi + 1) * units];
                    let dst = &mut hm[(bi * steps + t) * units..(bi * steps + t + 1) * units];
                    match &self.mask {
                        Some(m) => {
                            let m = &m[bi * units..(bi + 1) * units];
                            dst.iter_mut().zip(src).zip(m).for_each(|((o, &h), &m)| *o = h * m);
                        }
                        None => dst.copy_from_slice(src),
                    }
                }
            }
            let mut dw = vec![S::zero(); units * h4];
            gemm(true, false, units, h4, batch * steps, one, &hm, &dz_all, S::zero(), &mut dw);
            out.push((self.recurrent, Tensor::from_parts(vec![units, h4], dw)));
        }
        if g.requires_grad(self.bias) {
            let mut db = vec![S::zero(); h4];
            for row in dz_all.chunks_exact(h4) {
                db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
            }
            out.push((self.bias, Tensor::from_parts(vec![h4], db)));
        }
        if g.requires_grad(self.input) {
            let mut dx = vec![S::zero(); batch * steps * dim];
            gemm(false, true, batch * steps, dim, h4, one, &dz_all, g.value(self.kernel).data(), S::zero(), &mut dx);
            out.push((self.input, Tensor::from_parts(g.shape(self.input).to_vec(), dx)));
        }
        out
    }
}
