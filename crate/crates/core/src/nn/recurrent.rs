use rand::RngCore;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamKind, Parameters};
use crate::tensor::Tensor;

/// Hidden and cell state, each `[batch × hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

const GATES: [char; 4] = ['i', 'f', 'g', 'o'];

/// Single-layer LSTM cell with separate per-gate matrices.
///
/// i = σ(W_ii x + W_hi h + b_i), f = σ(W_if x + W_hf h + b_f),
/// g = tanh(W_ig x + W_hg h + b_g), o = σ(W_io x + W_ho h + b_o),
/// c' = f⊙c + i⊙g, h' = o⊙tanh(c').
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub name: String,
    pub input_size: usize,
    pub hidden_size: usize,
}

/// One gate's weights, transposed once per sequence.
#[derive(Clone, Copy)]
struct Gate {
    wx: Var,
    wh: Var,
    b: Var,
}

struct BoundLstm {
    gates: [Gate; 4],
}

fn check_steps(tape: &Tape, xs: Var, input: usize) -> Result<(usize, usize)> {
    let s = tape.shape(xs);
    if s.len() != 3 || s[2] != input {
        return Err(Error::dim("recurrent input", s, &[0, 0, input]));
    }
    if s[1] == 0 {
        return Err(Error::Contract("empty sequence".into()));
    }
    Ok((s[0], s[1]))
}

fn check_state(tape: &Tape, v: Var, batch: usize, hidden: usize) -> Result<()> {
    if tape.shape(v) != [batch, hidden] {
        return Err(Error::dim("recurrent state", tape.shape(v), &[batch, hidden]));
    }
    Ok(())
}

impl LstmCell {
    pub fn new(name: &str, input_size: usize, hidden_size: usize) -> Self {
        Self {
            name: name.to_string(),
            input_size,
            hidden_size,
        }
    }

    pub fn input_weight_name(&self, gate: char) -> String {
        format!("{}.w_i{gate}", self.name)
    }

    pub fn hidden_weight_name(&self, gate: char) -> String {
        format!("{}.w_h{gate}", self.name)
    }

    pub fn bias_name(&self, gate: char) -> String {
        format!("{}.b_{gate}", self.name)
    }

    /// Forget-gate bias starts at 1, the others at 0.
    pub fn init(&self, params: &mut Parameters, rng: &mut dyn RngCore) {
        let (i, h) = (self.input_size, self.hidden_size);
        for g in GATES {
            params.insert(self.input_weight_name(g), ParamKind::Weight, super::init_uniform(&[h, i], i, rng));
        }
        for g in GATES {
            params.insert(self.hidden_weight_name(g), ParamKind::Weight, super::init_uniform(&[h, h], h, rng));
        }
        for g in GATES {
            let fill = if g == 'f' { 1.0 } else { 0.0 };
            params.insert(self.bias_name(g), ParamKind::Bias, Tensor::full(&[h], fill));
        }
    }

    fn bind(&self, tape: &mut Tape, bound: &Bindings) -> Result<BoundLstm> {
        let mut gates = Vec::with_capacity(4);
        for g in GATES {
            let wx = bound.var(&self.input_weight_name(g))?;
            let wh = bound.var(&self.hidden_weight_name(g))?;
            gates.push(Gate {
                wx: tape.transpose(wx)?,
                wh: tape.transpose(wh)?,
                b: bound.var(&self.bias_name(g))?,
            });
        }
        Ok(BoundLstm {
            gates: [gates[0], gates[1], gates[2], gates[3]],
        })
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[batch, self.hidden_size])),
            c: tape.constant(Tensor::zeros(&[batch, self.hidden_size])),
        }
    }

    fn step_bound(&self, tape: &mut Tape, w: &BoundLstm, x: Var, prev: LstmState) -> Result<LstmState> {
        let mut pre = [x; 4];
        for (k, gate) in w.gates.iter().enumerate() {
            let xi = tape.matmul(x, gate.wx)?;
            let hh = tape.matmul(prev.h, gate.wh)?;
            let s = tape.add(xi, hh)?;
            pre[k] = tape.add_bias(s, gate.b)?;
        }
        let i = tape.sigmoid(pre[0]);
        let f = tape.sigmoid(pre[1]);
        let g = tape.tanh(pre[2]);
        let o = tape.sigmoid(pre[3]);
        let keep = tape.mul(f, prev.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// One recurrence step, `x: [batch × input]`.
    pub fn step(&self, tape: &mut Tape, bound: &Bindings, x: Var, prev: LstmState) -> Result<LstmState> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_size {
            return Err(Error::dim("lstm_step input", s, &[s[0], self.input_size]));
        }
        let batch = s[0];
        check_state(tape, prev.h, batch, self.hidden_size)?;
        check_state(tape, prev.c, batch, self.hidden_size)?;
        let w = self.bind(tape, bound)?;
        self.step_bound(tape, &w, x, prev)
    }

    /// Folds the cell over `xs: [batch × steps × input]`. With `reverse`, the
    /// steps are consumed last-to-first; the stacked outputs stay in input
    /// order either way.
    pub fn sequence(
        &self,
        tape: &mut Tape,
        bound: &Bindings,
        xs: Var,
        init: Option<LstmState>,
        reverse: bool,
    ) -> Result<(Var, LstmState)> {
        let (batch, steps) = check_steps(tape, xs, self.input_size)?;
        let mut state = match init {
            Some(s) => s,
            None => self.zero_state(tape, batch),
        };
        check_state(tape, state.h, batch, self.hidden_size)?;
        check_state(tape, state.c, batch, self.hidden_size)?;
        let w = self.bind(tape, bound)?;
        let mut hs = vec![state.h; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let x = tape.select_step(xs, t)?;
            state = self.step_bound(tape, &w, x, state)?;
            hs[t] = state.h;
        }
        let all = tape.stack_steps(&hs)?;
        Ok((all, state))
    }
}

/// Vanilla tanh recurrence, `h' = tanh(W_ih x + W_hh h + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    pub name: String,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl RnnCell {
    pub fn new(name: &str, input_size: usize, hidden_size: usize) -> Self {
        Self {
            name: name.to_string(),
            input_size,
            hidden_size,
        }
    }

    pub fn input_weight_name(&self) -> String {
        format!("{}.w_ih", self.name)
    }

    pub fn hidden_weight_name(&self) -> String {
        format!("{}.w_hh", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init(&self, params: &mut Parameters, rng: &mut dyn RngCore) {
        let (i, h) = (self.input_size, self.hidden_size);
        params.insert(self.input_weight_name(), ParamKind::Weight, super::init_uniform(&[h, i], i, rng));
        params.insert(self.hidden_weight_name(), ParamKind::Weight, super::init_uniform(&[h, h], h, rng));
        params.insert(self.bias_name(), ParamKind::Bias, Tensor::zeros(&[h]));
    }

    fn bind(&self, tape: &mut Tape, bound: &Bindings) -> Result<Gate> {
        let wx = bound.var(&self.input_weight_name())?;
        let wh = bound.var(&self.hidden_weight_name())?;
        Ok(Gate {
            wx: tape.transpose(wx)?,
            wh: tape.transpose(wh)?,
            b: bound.var(&self.bias_name())?,
        })
    }

    fn step_bound(&self, tape: &mut Tape, w: &Gate, x: Var, h: Var) -> Result<Var> {
        let xi = tape.matmul(x, w.wx)?;
        let hh = tape.matmul(h, w.wh)?;
        let s = tape.add(xi, hh)?;
        let pre = tape.add_bias(s, w.b)?;
        Ok(tape.tanh(pre))
    }

    pub fn step(&self, tape: &mut Tape, bound: &Bindings, x: Var, h: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_size {
            return Err(Error::dim("rnn_step input", s, &[s[0], self.input_size]));
        }
        check_state(tape, h, s[0], self.hidden_size)?;
        let w = self.bind(tape, bound)?;
        self.step_bound(tape, &w, x, h)
    }

    /// Returns all hidden states `[batch × steps × hidden]` and the last one.
    pub fn sequence(&self, tape: &mut Tape, bound: &Bindings, xs: Var, h0: Option<Var>) -> Result<(Var, Var)> {
        let (batch, steps) = check_steps(tape, xs, self.input_size)?;
        let mut h = match h0 {
            Some(h) => h,
            None => tape.constant(Tensor::zeros(&[batch, self.hidden_size])),
        };
        check_state(tape, h, batch, self.hidden_size)?;
        let w = self.bind(tape, bound)?;
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.select_step(xs, t)?;
            h = self.step_bound(tape, &w, x, h)?;
            hs.push(h);
        }
        let all = tape.stack_steps(&hs)?;
        Ok((all, h))
    }
}
