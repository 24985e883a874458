//! LSTM cell, window forward/backward (BPTT) and inverted dropout.
//!
//! Gate equations, with all four gates packed column-wise as `[i | f | o | g]`:
//!
//! ```text
//! i = σ(x·W_i + h·U_i + b_i)    f = σ(x·W_f + h·U_f + b_f)
//! o = σ(x·W_o + h·U_o + b_o)    g = tanh(x·W_g + h·U_g + b_g)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```
//!
//! The batched routines take a time-major stack of inputs: row `t * rows + r`
//! holds frame `t` of sequence `r`. Every sequence starts from `h = c = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gemm, sigmoid, xavier_init, Matrix, Parameters, Rng};

pub const GATE_COUNT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `d_in × 4H`
    pub w: Matrix,
    /// `H × 4H`
    pub u: Matrix,
    /// `1 × 4H`
    pub b: Matrix,
}

impl LstmParams {
    pub fn zeros(input_width: usize, hidden: usize) -> Self {
        LstmParams {
            w: Matrix::zeros(input_width, GATE_COUNT * hidden),
            u: Matrix::zeros(hidden, GATE_COUNT * hidden),
            b: Matrix::zeros(1, GATE_COUNT * hidden),
        }
    }

    /// Xavier-uniform per gate block, forget-gate bias set to [`FORGET_BIAS_INIT`].
    pub fn init(input_width: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut p = LstmParams::zeros(input_width, hidden);
        for gate in 0..GATE_COUNT {
            let wi = xavier_init(input_width, hidden, rng);
            let ui = xavier_init(hidden, hidden, rng);
            for r in 0..input_width {
                p.w.row_mut(r)[gate * hidden..(gate + 1) * hidden].copy_from_slice(wi.row(r));
            }
            for r in 0..hidden {
                p.u.row_mut(r)[gate * hidden..(gate + 1) * hidden].copy_from_slice(ui.row(r));
            }
        }
        let forget = Gate::Forget as usize;
        p.b.as_mut_slice()[forget * hidden..(forget + 1) * hidden].fill(FORGET_BIAS_INIT);
        p
    }

    pub fn input_width(&self) -> usize {
        self.w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.u.rows()
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams::zeros(self.input_width(), self.hidden())
    }

    fn check_consistent(&self) -> Result<()> {
        let h = self.hidden();
        if self.u.cols() != GATE_COUNT * h || self.w.cols() != GATE_COUNT * h || self.b.shape() != (1, GATE_COUNT * h) {
            return Err(Error::Dimension {
                op: "lstm params",
                left: self.w.shape(),
                right: self.u.shape(),
            });
        }
        Ok(())
    }
}

impl Parameters for LstmParams {
    fn params(&self) -> Vec<(String, &Matrix)> {
        vec![("w".into(), &self.w), ("u".into(), &self.u), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        vec![
            ("w".into(), &mut self.w),
            ("u".into(), &mut self.u),
            ("b".into(), &mut self.b),
        ]
    }
}

/// Activations cached by the forward pass, consumed by [`backward_batch`].
#[derive(Clone, Debug)]
pub struct LstmTape {
    rows: usize,
    steps: usize,
    input_width: usize,
    hidden: usize,
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    gates: Matrix,
    tanh_c: Matrix,
}

impl LstmTape {
    /// Number of forwarded timesteps.
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// Upstream gradient for a batched backward pass.
#[derive(Clone, Copy, Debug)]
pub enum HiddenGrad<'a> {
    /// `rows × H`, gradient w.r.t. the last hidden state only.
    Final(&'a Matrix),
    /// `steps·rows × H`, gradient w.r.t. every emitted hidden state.
    Sequence(&'a Matrix),
}

/// One cell step for a single sequence.
pub fn lstm_cell_forward(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    p.check_consistent()?;
    let hidden = p.hidden();
    if x.len() != p.input_width() || h.len() != hidden || c.len() != hidden {
        return Err(Error::Dimension {
            op: "lstm_cell_forward",
            left: (x.len(), h.len()),
            right: (p.input_width(), hidden),
        });
    }
    let mut z = p.b.as_slice().to_vec();
    gemm(
        false,
        false,
        1,
        GATE_COUNT * hidden,
        x.len(),
        1.0,
        x,
        p.w.as_slice(),
        1.0,
        &mut z,
    );
    gemm(
        false,
        false,
        1,
        GATE_COUNT * hidden,
        hidden,
        1.0,
        h,
        p.u.as_slice(),
        1.0,
        &mut z,
    );
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for j in 0..hidden {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hidden + j]);
        let o = sigmoid(z[2 * hidden + j]);
        let g = z[3 * hidden + j].tanh();
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    Ok((h_new, c_new))
}

/// Runs `steps = x.rows() / rows` timesteps for `rows` independent sequences.
///
/// Returns the hidden state emitted at every step (`steps·rows × H`, same
/// time-major layout as `x`) and the tape for [`backward_batch`].
pub fn forward_batch(x: &Matrix, rows: usize, p: &LstmParams) -> Result<(Matrix, LstmTape)> {
    p.check_consistent()?;
    if rows == 0 || x.rows() == 0 || x.rows() % rows != 0 {
        return Err(Error::arg(format!(
            "cannot split {} stacked frames into {rows} sequences",
            x.rows()
        )));
    }
    if x.cols() != p.input_width() {
        return Err(Error::Dimension {
            op: "lstm forward",
            left: x.shape(),
            right: p.w.shape(),
        });
    }
    let steps = x.rows() / rows;
    let hidden = p.hidden();
    let g4 = GATE_COUNT * hidden;
    let total = steps * rows;

    let mut gates = Matrix::zeros(total, g4);
    gemm(
        false,
        false,
        total,
        g4,
        p.input_width(),
        1.0,
        x.as_slice(),
        p.w.as_slice(),
        0.0,
        gates.as_mut_slice(),
    );
    gates.add_row_broadcast(p.b.as_slice());

    let mut h_prev = Matrix::zeros(total, hidden);
    let mut c_prev = Matrix::zeros(total, hidden);
    let mut tanh_c = Matrix::zeros(total, hidden);
    let mut hidden_seq = Matrix::zeros(total, hidden);
    let mut c_state = vec![0.0; rows * hidden];

    for t in 0..steps {
        let base = t * rows;
        if t > 0 {
            let (prev_h, _) = hidden_seq.as_slice().split_at(base * hidden);
            h_prev
                .rows_slice_mut(base, rows)
                .copy_from_slice(&prev_h[(base - rows) * hidden..]);
            gemm(
                false,
                false,
                rows,
                g4,
                hidden,
                1.0,
                h_prev.rows_slice(base, rows),
                p.u.as_slice(),
                1.0,
                gates.rows_slice_mut(base, rows),
            );
        }
        c_prev.rows_slice_mut(base, rows).copy_from_slice(&c_state);
        for r in 0..rows {
            let idx = base + r;
            let z = gates.row_mut(idx);
            for v in &mut z[..3 * hidden] {
                *v = sigmoid(*v);
            }
            for v in &mut z[3 * hidden..] {
                *v = v.tanh();
            }
            let z = gates.row(idx);
            let c_row = &mut c_state[r * hidden..(r + 1) * hidden];
            let tc_row = tanh_c.row_mut(idx);
            for j in 0..hidden {
                let c_new = z[hidden + j] * c_row[j] + z[j] * z[3 * hidden + j];
                c_row[j] = c_new;
                tc_row[j] = c_new.tanh();
            }
            let h_row = hidden_seq.row_mut(idx);
            let tc_row = tanh_c.row(idx);
            for j in 0..hidden {
                h_row[j] = z[2 * hidden + j] * tc_row[j];
            }
        }
    }

    let tape = LstmTape {
        rows,
        steps,
        input_width: p.input_width(),
        hidden,
        x: x.clone(),
        h_prev,
        c_prev,
        gates,
        tanh_c,
    };
    Ok((hidden_seq, tape))
}

/// BPTT over a batched tape. Parameter gradients are added into `grad`; the
/// return value is `dL/dx` in the same stacked layout as the forward input.
pub fn backward_batch(
    tape: &LstmTape,
    upstream: HiddenGrad<'_>,
    p: &LstmParams,
    grad: &mut LstmParams,
) -> Result<Matrix> {
    if p.input_width() != tape.input_width || p.hidden() != tape.hidden {
        return Err(Error::state(format!(
            "tape recorded for ({}, {}) but params are ({}, {})",
            tape.input_width,
            tape.hidden,
            p.input_width(),
            p.hidden()
        )));
    }
    if grad.w.shape() != p.w.shape() || grad.u.shape() != p.u.shape() || grad.b.shape() != p.b.shape() {
        return Err(Error::Dimension {
            op: "lstm gradient accumulator",
            left: grad.w.shape(),
            right: p.w.shape(),
        });
    }
    let (rows, steps, hidden) = (tape.rows, tape.steps, tape.hidden);
    let g4 = GATE_COUNT * hidden;
    let total = rows * steps;

    let mut dh = vec![0.0; rows * hidden];
    match upstream {
        HiddenGrad::Final(m) => {
            if m.shape() != (rows, hidden) {
                return Err(Error::state(format!(
                    "final-state gradient {:?} does not match tape ({rows}, {hidden})",
                    m.shape()
                )));
            }
            dh.copy_from_slice(m.as_slice());
        }
        HiddenGrad::Sequence(m) => {
            if m.shape() != (total, hidden) {
                return Err(Error::state(format!(
                    "sequence gradient {:?} does not match tape ({total}, {hidden})",
                    m.shape()
                )));
            }
        }
    }

    let mut dz = Matrix::zeros(total, g4);
    let mut dc = vec![0.0; rows * hidden];
    for t in (0..steps).rev() {
        let base = t * rows;
        if let HiddenGrad::Sequence(m) = upstream {
            for (a, b) in dh.iter_mut().zip(m.rows_slice(base, rows)) {
                *a += b;
            }
        }
        for r in 0..rows {
            let idx = base + r;
            let z = tape.gates.row(idx);
            let tc = tape.tanh_c.row(idx);
            let cp = tape.c_prev.row(idx);
            let dz_row = dz.row_mut(idx);
            for j in 0..hidden {
                let (i, f, o, g) = (z[j], z[hidden + j], z[2 * hidden + j], z[3 * hidden + j]);
                let dhv = dh[r * hidden + j];
                let d_o = dhv * tc[j];
                let dcv = dc[r * hidden + j] + dhv * o * (1.0 - tc[j] * tc[j]);
                dc[r * hidden + j] = dcv * f;
                dz_row[j] = dcv * g * i * (1.0 - i);
                dz_row[hidden + j] = dcv * cp[j] * f * (1.0 - f);
                dz_row[2 * hidden + j] = d_o * o * (1.0 - o);
                dz_row[3 * hidden + j] = dcv * i * (1.0 - g * g);
            }
        }
        if t > 0 {
            gemm(
                false,
                true,
                rows,
                hidden,
                g4,
                1.0,
                dz.rows_slice(base, rows),
                p.u.as_slice(),
                0.0,
                &mut dh,
            );
        }
    }

    gemm(
        true,
        false,
        tape.input_width,
        g4,
        total,
        1.0,
        tape.x.as_slice(),
        dz.as_slice(),
        1.0,
        grad.w.as_mut_slice(),
    );
    if steps > 1 {
        // h_prev is zero for the first step, so its block contributes nothing.
        gemm(
            true,
            false,
            hidden,
            g4,
            total - rows,
            1.0,
            tape.h_prev.rows_slice(rows, total - rows),
            dz.rows_slice(rows, total - rows),
            1.0,
            grad.u.as_mut_slice(),
        );
    }
    dz.add_column_sums_to(grad.b.as_mut_slice());

    let mut dx = Matrix::zeros(total, tape.input_width);
    gemm(
        false,
        true,
        total,
        tape.input_width,
        g4,
        1.0,
        dz.as_slice(),
        p.w.as_slice(),
        0.0,
        dx.as_mut_slice(),
    );
    Ok(dx)
}

/// Forward over one window of frames from `h₀ = c₀ = 0`.
pub fn lstm_forward_window(frames: &[Vec<f64>], p: &LstmParams) -> Result<(Vec<f64>, LstmTape)> {
    if frames.is_empty() {
        return Err(Error::arg("empty LSTM window"));
    }
    let x = Matrix::from_rows(frames)?;
    let (hs, tape) = forward_batch(&x, 1, p)?;
    Ok((hs.row(hs.rows() - 1).to_vec(), tape))
}

#[derive(Clone, Debug)]
pub struct LstmGradients {
    pub params: LstmParams,
    /// One gradient row per input frame.
    pub inputs: Vec<Vec<f64>>,
}

/// Gradients of `dh · h_final` for a single-sequence tape.
pub fn lstm_backward_window(tape: &LstmTape, dh: &[f64], p: &LstmParams) -> Result<LstmGradients> {
    if tape.rows != 1 {
        return Err(Error::state(format!(
            "window backward expects a single-sequence tape, got {} rows",
            tape.rows
        )));
    }
    let dh = Matrix::row_vector(dh);
    let mut grads = p.zeros_like();
    let dx = backward_batch(tape, HiddenGrad::Final(&dh), p, &mut grads)?;
    Ok(LstmGradients {
        params: grads,
        inputs: dx.to_rows(),
    })
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::arg(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect())
}

pub fn dropout(v: &[f64], rate: f64, rng: &mut Rng, training: bool) -> Result<Vec<f64>> {
    check_rate(rate)?;
    if !training {
        return Ok(v.to_vec());
    }
    let mask = dropout_mask(v.len(), rate, rng)?;
    Ok(v.iter().zip(&mask).map(|(x, m)| x * m).collect())
}
