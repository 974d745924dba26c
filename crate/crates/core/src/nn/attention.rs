use super::lstm::{broadcast_cols, StepMask};
use super::{BoundAttention, NnError};
use crate::ndcore::{Tape, Tensor, Var};

/// Attention weights and the two derived vectors.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// One `1 × B` weight row per step; zero at masked positions.
    pub alpha: Vec<Var>,
    /// Weighted state sum `r = Σ_t α_t H_t`.
    pub r: Var,
    /// `h* = tanh(W_p r + W_x h_last)`.
    pub h_star: Var,
}

/// Batched attention over per-step state matrices (`k × B` each).
///
/// `M_t = tanh([W_h H_t; W_v v_a])`, `α_t = σ(w M_t)` with masked columns
/// forced to zero.
pub(crate) fn attend(
    tape: &mut Tape,
    p: &BoundAttention,
    states: &[Var],
    masks: &[StepMask],
    h_last: Var,
) -> Result<AttentionOutput, NnError> {
    let first = *states.first().ok_or(NnError::EmptySequence)?;
    let (k, batch) = (tape.shape(first)[0], tape.shape(first)[1]);
    let aspect = tape.matmul(p.w_v, p.v_a)?;
    let aspect = broadcast_cols(tape, aspect, batch)?;
    let ones_k = tape.constant(Tensor::ones(&[k, 1]));
    let mut alpha = Vec::with_capacity(states.len());
    let mut r: Option<Var> = None;
    for (&h_t, mask) in states.iter().zip(masks) {
        if *mask == StepMask::None {
            alpha.push(tape.constant(Tensor::zeros(&[1, batch])));
            continue;
        }
        let proj = tape.matmul(p.w_h, h_t)?;
        let joined = tape.concat(&[proj, aspect], 0)?;
        let m = tape.tanh(joined);
        let score = tape.matmul(p.w, m)?;
        let mut a = tape.sigmoid(score);
        if let Some(m) = mask.rows(tape, 1) {
            a = tape.mul(a, m)?;
        }
        alpha.push(a);
        let spread = tape.matmul(ones_k, a)?;
        let weighted = tape.mul(h_t, spread)?;
        r = Some(match r {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    let r = r.ok_or(NnError::EmptySequence)?;
    let pr = tape.matmul(p.w_p, r)?;
    let xl = tape.matmul(p.w_x, h_last)?;
    let pre = tape.add(pr, xl)?;
    let h_star = tape.tanh(pre);
    Ok(AttentionOutput { alpha, r, h_star })
}

/// Attention over a single state matrix `h` (`k × n`, one column per step).
/// Steps whose `mask` entry is `false` get zero weight.
pub fn attention_forward(
    tape: &mut Tape,
    h: Var,
    mask: &[bool],
    p: &BoundAttention,
    h_last: Var,
) -> Result<AttentionOutput, NnError> {
    let n = tape.shape(h)[1];
    if mask.len() != n {
        return Err(NnError::Config(format!(
            "mask has {} entries for {n} steps",
            mask.len()
        )));
    }
    let states = (0..n)
        .map(|t| tape.slice_cols(h, t, 1))
        .collect::<Result<Vec<_>, _>>()?;
    let masks: Vec<StepMask> = mask
        .iter()
        .map(|&m| if m { StepMask::All } else { StepMask::None })
        .collect();
    attend(tape, p, &states, &masks, h_last)
}

/// Pads `h` (`k × n`) with zero columns up to `capacity`, returning the
/// padded matrix and its validity mask.
pub fn project_embed(tape: &mut Tape, h: Var, capacity: usize) -> Result<(Var, Vec<bool>), NnError> {
    let (k, n) = (tape.shape(h)[0], tape.shape(h)[1]);
    if n > capacity {
        return Err(NnError::Capacity { valid: n, capacity });
    }
    let mut mask = vec![true; n];
    mask.resize(capacity, false);
    if n == capacity {
        return Ok((h, mask));
    }
    let pad = tape.constant(Tensor::zeros(&[k, capacity - n]));
    Ok((tape.concat(&[h, pad], 1)?, mask))
}
