use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{require_len, sigmoid, Mat, NumError};

/// Weights of one gated recurrent unit over feature dimension `D`.
///
/// Gate matrices act on the concatenation `[v, r]` (input first, memory
/// second) and are `D × 2D`; candidate matrices are `D × D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruCellParams {
    pub w_reset: Mat,
    pub b_reset: Mat,
    pub w_update: Mat,
    pub b_update: Mat,
    pub w_input: Mat,
    pub w_memory: Mat,
}

pub type GruCellGrads = GruCellParams;

impl GruCellParams {
    pub fn zeros(dim: usize) -> Self {
        GruCellParams {
            w_reset: Mat::zeros(dim, 2 * dim),
            b_reset: Mat::zeros(dim, 1),
            w_update: Mat::zeros(dim, 2 * dim),
            b_update: Mat::zeros(dim, 1),
            w_input: Mat::zeros(dim, dim),
            w_memory: Mat::zeros(dim, dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        GruCellParams {
            w_reset: Mat::uniform(dim, 2 * dim, 2 * dim, rng),
            b_reset: Mat::zeros(dim, 1),
            w_update: Mat::uniform(dim, 2 * dim, 2 * dim, rng),
            b_update: Mat::zeros(dim, 1),
            w_input: Mat::uniform(dim, dim, dim, rng),
            w_memory: Mat::uniform(dim, dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_input.rows()
    }

    pub fn validate(&self) -> Result<(), NumError> {
        let d = self.dim();
        let checks: [(&Mat, (usize, usize)); 6] = [
            (&self.w_reset, (d, 2 * d)),
            (&self.b_reset, (d, 1)),
            (&self.w_update, (d, 2 * d)),
            (&self.b_update, (d, 1)),
            (&self.w_input, (d, d)),
            (&self.w_memory, (d, d)),
        ];
        for (m, shape) in checks {
            if m.shape() != shape {
                return Err(NumError::Shape {
                    op: "GruCellParams::validate",
                    expected: shape.0 * shape.1,
                    got: m.len(),
                });
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> [&Mat; 6] {
        [
            &self.w_reset,
            &self.b_reset,
            &self.w_update,
            &self.b_update,
            &self.w_input,
            &self.w_memory,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Mat; 6] {
        [
            &mut self.w_reset,
            &mut self.b_reset,
            &mut self.w_update,
            &mut self.b_update,
            &mut self.w_input,
            &mut self.w_memory,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruOutput {
    pub next: Vec<f64>,
    pub gamma_reset: Vec<f64>,
    pub gamma_update: Vec<f64>,
}

/// Forward intermediates kept for [`gru_backward`].
#[derive(Clone, Debug)]
pub struct GruCache {
    input: Vec<f64>,
    memory: Vec<f64>,
    gamma_reset: Vec<f64>,
    gamma_update: Vec<f64>,
    candidate: Vec<f64>,
}

/// One GRU update of memory `r` from message `v`.
///
/// ```text
/// γr = σ(W_r·[v,r] + b_r)        γu = σ(W_u·[v,r] + b_u)
/// c  = tanh(W_1·v + W_2·(γr ⊙ r))
/// r' = γu ⊙ r + (1 − γu) ⊙ c
/// ```
pub fn gru_step(r: &[f64], v: &[f64], p: &GruCellParams) -> Result<(GruOutput, GruCache), NumError> {
    let d = p.dim();
    require_len("gru_step(r)", r, d)?;
    require_len("gru_step(v)", v, d)?;

    let mut vr = Vec::with_capacity(2 * d);
    vr.extend_from_slice(v);
    vr.extend_from_slice(r);

    let mut gamma_reset = p.b_reset.as_slice().to_vec();
    p.w_reset.matvec_acc(&vr, &mut gamma_reset);
    gamma_reset.iter_mut().for_each(|x| *x = sigmoid(*x));

    let mut gamma_update = p.b_update.as_slice().to_vec();
    p.w_update.matvec_acc(&vr, &mut gamma_update);
    gamma_update.iter_mut().for_each(|x| *x = sigmoid(*x));

    let gated: Vec<f64> = gamma_reset.iter().zip(r).map(|(g, x)| g * x).collect();
    let mut candidate = p.w_input.matvec(v);
    p.w_memory.matvec_acc(&gated, &mut candidate);
    candidate.iter_mut().for_each(|x| *x = x.tanh());

    let next = (0..d)
        .map(|i| gamma_update[i] * r[i] + (1.0 - gamma_update[i]) * candidate[i])
        .collect();

    let out = GruOutput {
        next,
        gamma_reset: gamma_reset.clone(),
        gamma_update: gamma_update.clone(),
    };
    let cache = GruCache {
        input: v.to_vec(),
        memory: r.to_vec(),
        gamma_reset,
        gamma_update,
        candidate,
    };
    Ok((out, cache))
}

/// Backprop of [`gru_step`] given `∂L/∂r'`. Accumulates parameter gradients
/// into `grads` and returns `(∂L/∂r, ∂L/∂v)`.
pub fn gru_backward(
    cache: &GruCache,
    p: &GruCellParams,
    d_next: &[f64],
    grads: &mut GruCellGrads,
) -> (Vec<f64>, Vec<f64>) {
    let d = p.dim();
    let GruCache {
        input: v,
        memory: r,
        gamma_reset: gr,
        gamma_update: gu,
        candidate: c,
    } = cache;

    let mut d_r = vec![0.0; d];
    let mut d_pre_u = vec![0.0; d];
    let mut d_pre_c = vec![0.0; d];
    for i in 0..d {
        d_r[i] += d_next[i] * gu[i];
        let d_gu = d_next[i] * (r[i] - c[i]);
        d_pre_u[i] = d_gu * gu[i] * (1.0 - gu[i]);
        let d_c = d_next[i] * (1.0 - gu[i]);
        d_pre_c[i] = d_c * (1.0 - c[i] * c[i]);
    }

    let gated: Vec<f64> = gr.iter().zip(r.iter()).map(|(g, x)| g * x).collect();
    grads.w_input.add_outer(&d_pre_c, v);
    grads.w_memory.add_outer(&d_pre_c, &gated);
    let mut d_v = p.w_input.matvec_t(&d_pre_c);
    let d_gated = p.w_memory.matvec_t(&d_pre_c);

    let mut d_pre_r = vec![0.0; d];
    for i in 0..d {
        d_r[i] += d_gated[i] * gr[i];
        d_pre_r[i] = d_gated[i] * r[i] * gr[i] * (1.0 - gr[i]);
    }

    let mut vr = Vec::with_capacity(2 * d);
    vr.extend_from_slice(v);
    vr.extend_from_slice(r);
    grads.w_update.add_outer(&d_pre_u, &vr);
    grads.w_reset.add_outer(&d_pre_r, &vr);
    for i in 0..d {
        grads.b_update.as_mut_slice()[i] += d_pre_u[i];
        grads.b_reset.as_mut_slice()[i] += d_pre_r[i];
    }
    let mut d_vr = p.w_update.matvec_t(&d_pre_u);
    p.w_reset.matvec_t_acc(&d_pre_r, &mut d_vr);
    for i in 0..d {
        d_v[i] += d_vr[i];
        d_r[i] += d_vr[d + i];
    }
    (d_r, d_v)
}
