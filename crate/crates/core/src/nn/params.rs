use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, NnError};
use crate::data::NormStats;
use crate::ndcore::{Tape, Tensor, Var};
use crate::seed;

/// Gate weights of one LSTM layer. `w_*` are `hidden × input`, `u_*` are
/// `hidden × hidden`, biases are `hidden × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub w_i: Tensor,
    pub w_f: Tensor,
    pub w_o: Tensor,
    pub w_c: Tensor,
    pub u_i: Tensor,
    pub u_f: Tensor,
    pub u_o: Tensor,
    pub u_c: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_c: Tensor,
}

impl LstmLayerParams {
    pub fn hidden(&self) -> usize {
        self.w_i.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_i.shape()[1]
    }

    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut w = || glorot(hidden, input, rng);
        let (w_i, w_f, w_o, w_c) = (w(), w(), w(), w());
        let mut u = || glorot(hidden, hidden, rng);
        let (u_i, u_f, u_o, u_c) = (u(), u(), u(), u());
        Self {
            w_i,
            w_f,
            w_o,
            w_c,
            u_i,
            u_f,
            u_o,
            u_c,
            b_i: Tensor::zeros(&[hidden, 1]),
            b_f: Tensor::ones(&[hidden, 1]),
            b_o: Tensor::zeros(&[hidden, 1]),
            b_c: Tensor::zeros(&[hidden, 1]),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("W_i", &self.w_i),
            ("W_f", &self.w_f),
            ("W_o", &self.w_o),
            ("W_c", &self.w_c),
            ("U_i", &self.u_i),
            ("U_f", &self.u_f),
            ("U_o", &self.u_o),
            ("U_c", &self.u_c),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_c", &self.b_c),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.u_i,
            &mut self.u_f,
            &mut self.u_o,
            &mut self.u_c,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }
}

/// Attention head weights. `k` is the state size, `k_a` the aspect size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// `k × k`
    pub w_h: Tensor,
    /// `k_a × k_a`
    pub w_v: Tensor,
    /// `k_a × 1`, learnable aspect embedding.
    pub v_a: Tensor,
    /// `1 × (k + k_a)` scoring row.
    pub w: Tensor,
    /// `k × k`
    pub w_p: Tensor,
    /// `k × k`
    pub w_x: Tensor,
}

impl AttentionParams {
    pub fn state_size(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn aspect_size(&self) -> usize {
        self.w_v.shape()[0]
    }

    fn init(k: usize, ka: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w_h: glorot(k, k, rng),
            w_v: glorot(ka, ka, rng),
            v_a: glorot(ka, 1, rng),
            w: glorot(1, k + ka, rng),
            w_p: glorot(k, k, rng),
            w_x: glorot(k, k, rng),
        }
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("W_h", &self.w_h),
            ("W_v", &self.w_v),
            ("v_a", &self.v_a),
            ("w", &self.w),
            ("W_p", &self.w_p),
            ("W_x", &self.w_x),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w_h,
            &mut self.w_v,
            &mut self.v_a,
            &mut self.w,
            &mut self.w_p,
            &mut self.w_x,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `out × in`
    pub weight: Tensor,
    /// `out × 1`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchParams {
    pub layers: Vec<LstmLayerParams>,
    pub attention: Option<AttentionParams>,
}

/// Every learnable of a model plus the normalization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub branches: Vec<BranchParams>,
    pub fc: Vec<DenseParams>,
    pub norm: Option<NormStats>,
}

/// Glorot-uniform `rows × cols` matrix with fan_in = cols, fan_out = rows.
fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = glorot_limit(rows, cols);
    let values = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(vec![rows, cols], values).expect("shape matches")
}

pub fn glorot_limit(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Glorot-uniform weights, zero biases except the forget gate (ones).
pub fn init_params(config: &ModelConfig, seed_value: u64) -> Result<ModelParams, NnError> {
    config.validate()?;
    let mut rng = seed::rng(seed_value, seed::stream::INIT);
    let mut branches = Vec::new();
    for input in config.branch_input_sizes() {
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &hidden in &config.lstm_layer_sizes {
            layers.push(LstmLayerParams::init(fan_in, hidden, &mut rng));
            fan_in = hidden;
        }
        let attention = config
            .variant
            .has_attention()
            .then(|| AttentionParams::init(config.attention_state_size(), config.attention_size, &mut rng));
        branches.push(BranchParams { layers, attention });
    }
    let mut fc = Vec::new();
    let mut fan_in = config.head_input_size();
    for &out in &config.fc_sizes {
        fc.push(DenseParams {
            weight: glorot(out, fan_in, &mut rng),
            bias: Tensor::zeros(&[out, 1]),
        });
        fan_in = out;
    }
    Ok(ModelParams {
        branches,
        fc,
        norm: None,
    })
}

impl ModelParams {
    /// Every tensor under its canonical name, in canonical order:
    /// `branch{b}.lstm{l}.{W_i..b_c}`, `branch{b}.attention.{W_h,W_v,v_a,w,W_p,W_x}`,
    /// `fc{j}.weight`, `fc{j}.bias` (all indices 1-based).
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, branch) in self.branches.iter().enumerate() {
            for (l, layer) in branch.layers.iter().enumerate() {
                for (name, t) in layer.tensors() {
                    out.push((format!("branch{}.lstm{}.{name}", b + 1, l + 1), t));
                }
            }
            if let Some(att) = &branch.attention {
                for (name, t) in att.tensors() {
                    out.push((format!("branch{}.attention.{name}", b + 1), t));
                }
            }
        }
        for (j, dense) in self.fc.iter().enumerate() {
            out.push((format!("fc{}.weight", j + 1), &dense.weight));
            out.push((format!("fc{}.bias", j + 1), &dense.bias));
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for branch in &mut self.branches {
            for layer in &mut branch.layers {
                out.extend(layer.tensors_mut());
            }
            if let Some(att) = &mut branch.attention {
                out.extend(att.tensors_mut());
            }
        }
        for dense in &mut self.fc {
            out.push(&mut dense.weight);
            out.push(&mut dense.bias);
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks that tensor shapes match what `config` builds.
    pub fn check_against(&self, config: &ModelConfig) -> Result<(), NnError> {
        let reference = init_params(config, 0)?;
        let mine = self.named();
        let theirs = reference.named();
        if mine.len() != theirs.len() {
            return Err(NnError::Config(format!(
                "{} has {} tensors, parameters have {}",
                config.variant,
                theirs.len(),
                mine.len()
            )));
        }
        for ((name, t), (ref_name, r)) in mine.iter().zip(&theirs) {
            if name != ref_name || t.shape() != r.shape() {
                return Err(NnError::Config(format!(
                    "parameter {name} {:?} does not match {ref_name} {:?}",
                    t.shape(),
                    r.shape()
                )));
            }
        }
        Ok(())
    }

    /// Registers every tensor on `tape` (as trainable leaves when
    /// `trainable`), returning handles in canonical order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        self.bind_vars(&vars).expect("one leaf per tensor")
    }

    /// Handles for tensors already on a tape, given in canonical order
    /// (as passed to a [`grad_check`](crate::ndcore::grad_check) closure).
    pub fn bind_vars(&self, vars: &[Var]) -> Result<BoundParams, NnError> {
        let expected = self.named().len();
        if vars.len() != expected {
            return Err(NnError::Config(format!(
                "{} handles for {expected} tensors",
                vars.len()
            )));
        }
        let mut next = vars.iter().copied();
        let mut take = |n: usize| -> Vec<Var> { next.by_ref().take(n).collect() };
        let mut branches = Vec::new();
        for branch in &self.branches {
            let layers = branch.layers.iter().map(|_| BoundLstm::from_vars(&take(12))).collect();
            let attention = branch.attention.as_ref().map(|_| {
                let v = take(6);
                BoundAttention {
                    w_h: v[0],
                    w_v: v[1],
                    v_a: v[2],
                    w: v[3],
                    w_p: v[4],
                    w_x: v[5],
                }
            });
            branches.push(BoundBranch { layers, attention });
        }
        let fc = self
            .fc
            .iter()
            .map(|_| {
                let v = take(2);
                BoundDense {
                    weight: v[0],
                    bias: v[1],
                }
            })
            .collect();
        Ok(BoundParams {
            branches,
            fc,
            order: vars.to_vec(),
        })
    }
}

/// Gate tensors of one layer as tape handles (`i, f, o, c` order).
#[derive(Debug, Clone)]
pub struct BoundLstm {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

impl BoundLstm {
    fn from_vars(v: &[Var]) -> Self {
        Self {
            w: [v[0], v[1], v[2], v[3]],
            u: [v[4], v[5], v[6], v[7]],
            b: [v[8], v[9], v[10], v[11]],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    pub w_h: Var,
    pub w_v: Var,
    pub v_a: Var,
    pub w: Var,
    pub w_p: Var,
    pub w_x: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct BoundBranch {
    pub layers: Vec<BoundLstm>,
    pub attention: Option<BoundAttention>,
}

/// [`ModelParams`] registered on a tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub branches: Vec<BoundBranch>,
    pub fc: Vec<BoundDense>,
    /// Leaf handles in canonical order.
    pub order: Vec<Var>,
}
