use super::{BoundLstm, NnError};
use crate::ndcore::{Tape, Tensor, Var};

/// Which batch columns are real data at one time step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepMask {
    /// Every column is valid.
    All,
    /// `1 × B` row of 0/1 weights.
    Partial(Vec<f64>),
    /// No column is valid.
    None,
}

impl StepMask {
    pub fn from_flags(flags: &[bool]) -> Self {
        if flags.iter().all(|&f| f) {
            StepMask::All
        } else if flags.iter().all(|&f| !f) {
            StepMask::None
        } else {
            StepMask::Partial(flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect())
        }
    }

    /// The mask repeated over `rows` rows, as a constant.
    pub(crate) fn rows(&self, tape: &mut Tape, rows: usize) -> Option<Var> {
        match self {
            StepMask::Partial(row) => {
                let values = (0..rows).flat_map(|_| row.iter().copied()).collect();
                Some(tape.constant(Tensor::new(vec![rows, row.len()], values).expect("shape")))
            }
            _ => None,
        }
    }
}

/// Gate matrices stacked `[i; f; o; c]` plus the bias already spread over
/// the batch columns.
pub(crate) struct PreparedLstm {
    hidden: usize,
    w: Var,
    u: Var,
    bias: Var,
}

/// `v (n × 1)` repeated over `cols` columns.
pub(crate) fn broadcast_cols(tape: &mut Tape, v: Var, cols: usize) -> Result<Var, NnError> {
    if cols == 1 {
        return Ok(v);
    }
    let ones = tape.constant(Tensor::ones(&[1, cols]));
    Ok(tape.matmul(v, ones)?)
}

pub(crate) fn prepare(tape: &mut Tape, layer: &BoundLstm, batch: usize) -> Result<PreparedLstm, NnError> {
    let hidden = tape.shape(layer.w[0])[0];
    let w = tape.concat(&layer.w, 0)?;
    let u = tape.concat(&layer.u, 0)?;
    let b = tape.concat(&layer.b, 0)?;
    let bias = broadcast_cols(tape, b, batch)?;
    Ok(PreparedLstm { hidden, w, u, bias })
}

fn cell_step(tape: &mut Tape, p: &PreparedLstm, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var), NnError> {
    let h = p.hidden;
    let wx = tape.matmul(p.w, x)?;
    let uh = tape.matmul(p.u, h_prev)?;
    let pre = tape.add(wx, uh)?;
    let pre = tape.add(pre, p.bias)?;
    let sig_pre = tape.slice_rows(pre, 0, 3 * h)?;
    let gates = tape.sigmoid(sig_pre);
    let i = tape.slice_rows(gates, 0, h)?;
    let f = tape.slice_rows(gates, h, h)?;
    let o = tape.slice_rows(gates, 2 * h, h)?;
    let g_pre = tape.slice_rows(pre, 3 * h, h)?;
    let g = tape.tanh(g_pre);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c))
}

/// One LSTM step: gates `i, f, o = σ(W x + U h + b)`, `g = tanh(W_c x + U_c h + b_c)`,
/// `c = f ⊙ c_prev + i ⊙ g`, `h = o ⊙ tanh(c)`. Columns of `x` are independent samples.
pub fn lstm_cell_forward(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    layer: &BoundLstm,
) -> Result<(Var, Var), NnError> {
    let batch = tape.shape(x).get(1).copied().unwrap_or(1);
    let p = prepare(tape, layer, batch)?;
    cell_step(tape, &p, x, h_prev, c_prev)
}

/// States of a stacked LSTM over a masked sequence.
#[derive(Debug, Clone)]
pub struct StackOutput {
    /// `states[layer][step]`, each `hidden × B`. At masked steps this is
    /// the carried-over state.
    pub states: Vec<Vec<Var>>,
    /// Final hidden state of each layer.
    pub last: Vec<Var>,
}

/// Runs the stack step by step; each layer's state is the next layer's input.
/// Masked columns keep their previous state and cell.
pub(crate) fn run_stack(
    tape: &mut Tape,
    layers: &[BoundLstm],
    inputs: &[Var],
    masks: &[StepMask],
) -> Result<StackOutput, NnError> {
    let batch = inputs
        .first()
        .map(|&x| tape.shape(x)[1])
        .ok_or(NnError::EmptySequence)?;
    let mut states = Vec::with_capacity(layers.len());
    let mut last = Vec::with_capacity(layers.len());
    let mut layer_inputs: Vec<Var> = inputs.to_vec();
    for layer in layers {
        let p = prepare(tape, layer, batch)?;
        let mut h = tape.constant(Tensor::zeros(&[p.hidden, batch]));
        let mut c = h;
        let mut outs = Vec::with_capacity(layer_inputs.len());
        for (t, &x) in layer_inputs.iter().enumerate() {
            match &masks[t] {
                StepMask::None => {}
                StepMask::All => {
                    (h, c) = cell_step(tape, &p, x, h, c)?;
                }
                mask @ StepMask::Partial(_) => {
                    let (h_new, c_new) = cell_step(tape, &p, x, h, c)?;
                    let m = mask.rows(tape, p.hidden).expect("partial mask");
                    h = blend(tape, m, h, h_new)?;
                    c = blend(tape, m, c, c_new)?;
                }
            }
            outs.push(h);
        }
        last.push(h);
        layer_inputs = outs.clone();
        states.push(outs);
    }
    Ok(StackOutput { states, last })
}

/// `old + m ⊙ (new − old)`: exactly `old` where `m = 0`.
fn blend(tape: &mut Tape, m: Var, old: Var, new: Var) -> Result<Var, NnError> {
    let diff = tape.sub(new, old)?;
    let step = tape.mul(m, diff)?;
    Ok(tape.add(old, step)?)
}

/// Runs a stack over one sequence (`L × features`, rows flagged by `mask`,
/// which must be a contiguous valid prefix). Returns the top-layer state
/// matrix over the valid steps (`hidden × n_valid`) and the final top state.
pub fn lstm_stack_forward(
    tape: &mut Tape,
    sequence: &Tensor,
    mask: &[bool],
    layers: &[BoundLstm],
) -> Result<(Var, Var), NnError> {
    let (steps, width) = sequence.dims2();
    if mask.len() != steps {
        return Err(NnError::Config(format!(
            "mask has {} entries for {steps} steps",
            mask.len()
        )));
    }
    let n_valid = mask.iter().take_while(|&&m| m).count();
    if mask[n_valid..].iter().any(|&m| m) {
        return Err(NnError::Config("mask must be a contiguous valid prefix".into()));
    }
    if n_valid == 0 {
        return Err(NnError::EmptySequence);
    }
    let inputs: Vec<Var> = (0..steps)
        .map(|t| {
            let row = sequence.values()[t * width..(t + 1) * width].to_vec();
            tape.constant(Tensor::column(row))
        })
        .collect();
    let masks: Vec<StepMask> = mask
        .iter()
        .map(|&m| if m { StepMask::All } else { StepMask::None })
        .collect();
    let out = run_stack(tape, layers, &inputs, &masks)?;
    let top = out.states.last().expect("at least one layer");
    let h = tape.concat(&top[..n_valid], 1)?;
    Ok((h, *out.last.last().expect("at least one layer")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::grad_check;
    use crate::nn::params::LstmLayerParams;
    use crate::nn::{init_params, ModelConfig, Variant};
    use rand::{Rng, SeedableRng};

    fn zero_layer(input: usize, hidden: usize) -> LstmLayerParams {
        let w = Tensor::zeros(&[hidden, input]);
        let u = Tensor::zeros(&[hidden, hidden]);
        let b = Tensor::zeros(&[hidden, 1]);
        LstmLayerParams {
            w_i: w.clone(),
            w_f: w.clone(),
            w_o: w.clone(),
            w_c: w,
            u_i: u.clone(),
            u_f: u.clone(),
            u_o: u.clone(),
            u_c: u,
            b_i: b.clone(),
            b_f: b.clone(),
            b_o: b.clone(),
            b_c: b,
        }
    }

    fn bind_layer(tape: &mut Tape, p: &LstmLayerParams) -> BoundLstm {
        let v: Vec<Var> = [
            &p.w_i, &p.w_f, &p.w_o, &p.w_c, &p.u_i, &p.u_f, &p.u_o, &p.u_c, &p.b_i, &p.b_f, &p.b_o, &p.b_c,
        ]
        .iter()
        .map(|t| tape.param((*t).clone()))
        .collect();
        BoundLstm {
            w: [v[0], v[1], v[2], v[3]],
            u: [v[4], v[5], v[6], v[7]],
            b: [v[8], v[9], v[10], v[11]],
        }
    }

    #[test]
    fn zero_weights_zero_state() {
        let mut t = Tape::new();
        let layer = bind_layer(&mut t, &zero_layer(2, 1));
        let x = t.constant(Tensor::column(vec![0.3, -0.2]));
        let h0 = t.constant(Tensor::column(vec![0.0]));
        let (h, c) = lstm_cell_forward(&mut t, x, h0, h0, &layer).unwrap();
        assert_eq!(t.value(h).values(), &[0.0]);
        assert_eq!(t.value(c).values(), &[0.0]);
    }

    #[test]
    fn zero_weights_unit_cell() {
        let mut t = Tape::new();
        let layer = bind_layer(&mut t, &zero_layer(2, 1));
        let x = t.constant(Tensor::column(vec![0.3, -0.2]));
        let h0 = t.constant(Tensor::column(vec![0.0]));
        let c0 = t.constant(Tensor::column(vec![1.0]));
        let (h, c) = lstm_cell_forward(&mut t, x, h0, c0, &layer).unwrap();
        assert_eq!(t.value(c).values(), &[0.5]);
        let expected = 0.5 * 0.5f64.tanh();
        assert!((t.value(h).values()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.231059).abs() < 1e-6);
    }

    #[test]
    fn cell_dimension_mismatch() {
        let mut t = Tape::new();
        let layer = bind_layer(&mut t, &zero_layer(2, 3));
        let x = t.constant(Tensor::column(vec![0.3, -0.2, 0.1]));
        let h0 = t.constant(Tensor::column(vec![0.0; 3]));
        assert!(matches!(
            lstm_cell_forward(&mut t, x, h0, h0, &layer),
            Err(NnError::Tensor(_))
        ));
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let params = init_params(&ModelConfig::tiny(Variant::Pm1), 0).unwrap();
        let layer = params.branches[0].layers[1].clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut rand_col = |n: usize| Tensor::column((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let x = rand_col(layer.input());
        let h = rand_col(layer.hidden());
        let c = rand_col(layer.hidden());
        let mut all: Vec<Tensor> = [
            &layer.w_i, &layer.w_f, &layer.w_o, &layer.w_c, &layer.u_i, &layer.u_f, &layer.u_o, &layer.u_c, &layer.b_i,
            &layer.b_f, &layer.b_o, &layer.b_c,
        ]
        .iter()
        .map(|t| (*t).clone())
        .collect();
        all.extend([x, h, c]);
        let check = grad_check(
            |tape, v| {
                let layer = BoundLstm {
                    w: [v[0], v[1], v[2], v[3]],
                    u: [v[4], v[5], v[6], v[7]],
                    b: [v[8], v[9], v[10], v[11]],
                };
                let (h, _) = lstm_cell_forward(tape, v[12], v[13], v[14], &layer)
                    .map_err(|e| crate::ndcore::TensorError::Contract(e.to_string()))?;
                Ok(tape.sum(h))
            },
            &all,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    fn random_sequence(steps: usize, width: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![steps, width],
            (0..steps * width).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_step_equals_composed_cells() {
        let params = init_params(&ModelConfig::tiny(Variant::Pm1), 5).unwrap();
        let seq = random_sequence(1, 9, 1);
        let mut t = Tape::new();
        let bound = params.bind(&mut t, false);
        let layers = &bound.branches[0].layers;
        let (h_stack, last) = lstm_stack_forward(&mut t, &seq, &[true], layers).unwrap();

        let mut x = t.constant(Tensor::column(seq.values().to_vec()));
        for (layer, size) in layers.iter().zip([4, 6, 4]) {
            let zero = t.constant(Tensor::column(vec![0.0; size]));
            let (h, _) = lstm_cell_forward(&mut t, x, zero, zero, layer).unwrap();
            x = h;
        }
        assert_eq!(t.value(x).values(), t.value(last).values());
        assert_eq!(t.value(h_stack).values(), t.value(last).values());
    }

    #[test]
    fn padding_leaves_states_unchanged() {
        let params = init_params(&ModelConfig::tiny(Variant::Pm1), 5).unwrap();
        let short = random_sequence(3, 9, 2);
        let mut long_values = short.values().to_vec();
        long_values.extend((0..2 * 9).map(|i| i as f64 * 0.37 - 1.0));
        let long = Tensor::new(vec![5, 9], long_values).unwrap();

        let mut t = Tape::new();
        let bound = params.bind(&mut t, false);
        let layers = &bound.branches[0].layers;
        let (h1, l1) = lstm_stack_forward(&mut t, &short, &[true; 3], layers).unwrap();
        let (h2, l2) = lstm_stack_forward(&mut t, &long, &[true, true, true, false, false], layers).unwrap();
        assert_eq!(t.value(h1), t.value(h2));
        assert_eq!(t.value(l1), t.value(l2));
        assert_eq!(t.value(h1).shape(), &[4, 3]);
        for v in t.value(h1).values() {
            assert!(v.abs() < 1.0);
        }
    }

    #[test]
    fn stack_errors() {
        let params = init_params(&ModelConfig::tiny(Variant::Pm1), 5).unwrap();
        let seq = random_sequence(3, 9, 2);
        let mut t = Tape::new();
        let bound = params.bind(&mut t, false);
        let layers = &bound.branches[0].layers;
        assert!(matches!(
            lstm_stack_forward(&mut t, &seq, &[false; 3], layers),
            Err(NnError::EmptySequence)
        ));
        assert!(lstm_stack_forward(&mut t, &seq, &[true, false, true], layers).is_err());
    }

    #[test]
    fn stack_gradient_matches_finite_differences() {
        let params = init_params(&ModelConfig::tiny(Variant::Pm1), 11).unwrap();
        let seq = random_sequence(5, 9, 3);
        let tensors: Vec<Tensor> = params.branches[0]
            .layers
            .iter()
            .flat_map(|l| {
                [
                    &l.w_i, &l.w_f, &l.w_o, &l.w_c, &l.u_i, &l.u_f, &l.u_o, &l.u_c, &l.b_i, &l.b_f, &l.b_o, &l.b_c,
                ]
                .into_iter()
                .cloned()
                .collect::<Vec<_>>()
            })
            .collect();
        let check = grad_check(
            |tape, v| {
                let layers: Vec<BoundLstm> = v
                    .chunks(12)
                    .map(|c| BoundLstm {
                        w: [c[0], c[1], c[2], c[3]],
                        u: [c[4], c[5], c[6], c[7]],
                        b: [c[8], c[9], c[10], c[11]],
                    })
                    .collect();
                let (h, _) = lstm_stack_forward(tape, &seq, &[true; 5], &layers)
                    .map_err(|e| crate::ndcore::TensorError::Contract(e.to_string()))?;
                Ok(tape.sum(h))
            },
            &tensors,
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }
}
