use rand::Rng;

use super::{xavier_uniform, AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};

/// Fused gate weights of one LSTM cell.
///
/// `weight` is `[4·hidden, input + hidden]` with gate blocks ordered
/// input, forget, output, candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl LstmParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let rows = 4 * hidden_size;
        let cols = input_size + hidden_size;
        let weight = store.insert(format!("{prefix}.weight"), xavier_uniform(&[rows, cols], cols, rows, rng))?;
        let bias = store.insert(format!("{prefix}.bias"), Tensor::zeros(&[rows]))?;
        Ok(Self {
            weight,
            bias,
            input_size,
            hidden_size,
        })
    }
}

/// One LSTM step; returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    g: &mut Graph<'_>,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    params: &LstmParams,
) -> Result<(Var, Var), AutodiffError> {
    let hs = params.hidden_size;
    for (name, var, want) in [("x_t", x_t, params.input_size), ("h_prev", h_prev, hs), ("c_prev", c_prev, hs)] {
        let got = g.value(var).len();
        if got != want {
            return Err(AutodiffError::InvalidArgument {
                op: "lstm_cell_step",
                reason: format!("{name} has {got} values, expected {want}"),
            });
        }
    }
    let xh = g.concat(&[x_t, h_prev])?;
    let w = g.param(params.weight);
    let b = g.param(params.bias);
    let z = g.fully_connected(xh, w, Some(b))?;
    let zi = g.slice(z, 0, hs)?;
    let zf = g.slice(z, hs, hs)?;
    let zo = g.slice(z, 2 * hs, hs)?;
    let zc = g.slice(z, 3 * hs, hs)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let o = g.sigmoid(zo)?;
    let cand = g.tanh(zc)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c_t = g.add(keep, write)?;
    let squashed = g.tanh(c_t)?;
    let h_t = g.mul(o, squashed)?;
    Ok((h_t, c_t))
}
