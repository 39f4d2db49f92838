//! Weekly recurrent parameter modulator: one LSTM cell whose hidden state
//! drives the infectiousness multiplier R_t in (0,2) and the random
//! infection rate phi_t in [0, phi_max).

use crate::autodiff::{AdError, Tape, Tensor};

use super::params::ModulatorWeights;

/// Modulator weights lifted onto a tape (leaves when `learnable`).
pub struct TapeModulator {
    pub hidden: usize,
    /// Per gate: input weights [H], recurrent weights [H,H], bias [H].
    pub gates: [(Tensor, Tensor, Tensor); 4],
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub phi_max: f64,
}

impl TapeModulator {
    pub fn from_weights(
        tape: &mut Tape,
        w: &ModulatorWeights,
        phi_max: f64,
        learnable: bool,
    ) -> Result<Self, AdError> {
        let h = w.hidden;
        let lift_gate = |tape: &mut Tape, g: &super::params::GateWeights| -> Result<(Tensor, Tensor, Tensor), AdError> {
            Ok((
                tape.leaf(g.wx.clone(), vec![h], learnable)?,
                tape.leaf(g.wh.clone(), vec![h, h], learnable)?,
                tape.leaf(g.b.clone(), vec![h], learnable)?,
            ))
        };
        let gates = [
            lift_gate(tape, &w.gates[0])?,
            lift_gate(tape, &w.gates[1])?,
            lift_gate(tape, &w.gates[2])?,
            lift_gate(tape, &w.gates[3])?,
        ];
        Ok(TapeModulator {
            hidden: h,
            gates,
            head_w: tape.leaf(w.head_w.clone(), vec![2, h], learnable)?,
            head_b: tape.leaf(w.head_b.to_vec(), vec![2], learnable)?,
            phi_max,
        })
    }

    /// All weight tensors in a fixed order (for gradient checks and updates).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for (wx, wh, b) in &self.gates {
            out.push(wx);
            out.push(wh);
            out.push(b);
        }
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }
}

pub struct ModulatorOutputs {
    pub h: Tensor,
    pub c: Tensor,
    /// Infectiousness multiplier in (0,2).
    pub r_mult: Tensor,
    /// Random infection rate in [0, phi_max).
    pub phi: Tensor,
}

/// One recorded LSTM step. `x` is a scalar input (previous week's
/// normalized incidence); `h`/`c` carry across weeks.
pub fn lstm_step(
    tape: &mut Tape,
    m: &TapeModulator,
    h: &Tensor,
    c: &Tensor,
    x: &Tensor,
) -> Result<ModulatorOutputs, AdError> {
    if h.numel() != m.hidden || c.numel() != m.hidden {
        return Err(AdError::ShapeMismatch(format!(
            "modulator state length {} vs hidden size {}",
            h.numel(),
            m.hidden
        )));
    }
    if !x.is_scalar() {
        return Err(AdError::ShapeMismatch("modulator input must be scalar".into()));
    }
    let pre = |tape: &mut Tape, g: &(Tensor, Tensor, Tensor)| -> Result<Tensor, AdError> {
        let (wx, wh, b) = g;
        let xin = tape.mul(wx, x)?;
        let rec = tape.matvec(wh, h)?;
        let s = tape.add(&xin, &rec)?;
        tape.add(&s, b)
    };
    let zi = pre(tape, &m.gates[0])?;
    let zf = pre(tape, &m.gates[1])?;
    let zg = pre(tape, &m.gates[2])?;
    let zo = pre(tape, &m.gates[3])?;

    let gi = tape.sigmoid(&zi)?;
    let gf = tape.sigmoid(&zf)?;
    let gg = tape.tanh(&zg)?;
    let go = tape.sigmoid(&zo)?;

    let keep = tape.mul(&gf, c)?;
    let write = tape.mul(&gi, &gg)?;
    let c_next = tape.add(&keep, &write)?;
    let c_act = tape.tanh(&c_next)?;
    let h_next = tape.mul(&go, &c_act)?;

    let head = tape.matvec(&m.head_w, &h_next)?;
    let head = tape.add(&head, &m.head_b)?;
    let r_raw = tape.gather(&head, &[0])?;
    let phi_raw = tape.gather(&head, &[1])?;
    let r_sig = tape.sigmoid(&r_raw)?;
    let r_mult = tape.scale(&r_sig, 2.0)?;
    let phi_sig = tape.sigmoid(&phi_raw)?;
    let phi = tape.scale(&phi_sig, m.phi_max)?;

    Ok(ModulatorOutputs { h: h_next, c: c_next, r_mult, phi })
}

/// Plain forward evaluation used by the hard-sampling engine.
pub struct PlainModulatorState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl PlainModulatorState {
    pub fn zeros(hidden: usize) -> Self {
        PlainModulatorState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn lstm_step_plain(
    w: &ModulatorWeights,
    state: &mut PlainModulatorState,
    x: f64,
    phi_max: f64,
) -> (f64, f64) {
    let h = w.hidden;
    let mut pre = vec![[0.0f64; 4]; h];
    for (gi, gate) in w.gates.iter().enumerate() {
        for r in 0..h {
            let mut acc = gate.wx[r] * x + gate.b[r];
            for cidx in 0..h {
                acc += gate.wh[r * h + cidx] * state.h[cidx];
            }
            pre[r][gi] = acc;
        }
    }
    let mut h_next = vec![0.0; h];
    let mut c_next = vec![0.0; h];
    for r in 0..h {
        let gi = sigmoid(pre[r][0]);
        let gf = sigmoid(pre[r][1]);
        let gg = pre[r][2].tanh();
        let go = sigmoid(pre[r][3]);
        c_next[r] = gf * state.c[r] + gi * gg;
        h_next[r] = go * c_next[r].tanh();
    }
    let mut head = [w.head_b[0], w.head_b[1]];
    for (row, slot) in head.iter_mut().enumerate() {
        for cidx in 0..h {
            *slot += w.head_w[row * h + cidx] * h_next[cidx];
        }
    }
    state.h = h_next;
    state.c = c_next;
    (2.0 * sigmoid(head[0]), phi_max * sigmoid(head[1]))
}
