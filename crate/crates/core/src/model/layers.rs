//! Network stages on the tape. Activations are laid out `[B, N, M, C]`
//! except inside the graph attention, which works on `[B, M, N, C]`.

use super::{ModelError, PeMode};
use crate::diffcore::{BatchStats, Mask, Tape, Tensor, Var};

type Result<T> = std::result::Result<T, ModelError>;

/// `[B, N, M]` demand to `[B, N, M, C1]` via a shared `[1, C1]` weight.
pub fn embed(tape: &mut Tape, x0: Var, w0: Var) -> Result<Var> {
    let s = tape.shape(x0).to_vec();
    if s.len() != 3 {
        return Err(ModelError::Shape(format!("input must be [B, N, M], got {s:?}")));
    }
    let x = tape.reshape(x0, &[s[0], s[1], s[2], 1])?;
    Ok(tape.matmul(x, w0)?)
}

/// `(Γ1 * x) ⊙ σ(Γ2 * x)` along the time axis, same kernels for every node.
pub fn gated_conv(tape: &mut Tape, x1: Var, gamma1: Var, gamma2: Var) -> Result<Var> {
    let p = tape.conv1d_same(x1, gamma1)?;
    let q = tape.conv1d_same(x1, gamma2)?;
    let gate = tape.sigmoid(q);
    Ok(tape.mul(p, gate)?)
}

/// One multi-head attention layer over `[B, M, N, Cin]`.
///
/// Heads are averaged, then passed through LeakyReLU. Each head's attention
/// matrix `[B, M, N, N]` is appended to `trace`.
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    heads: &[(Var, Var)],
    mask: &Mask,
    slope: f64,
    trace: &mut Vec<Var>,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(ModelError::Config("attention layer without heads".into()));
    }
    let mut acc: Option<Var> = None;
    for &(omega, phi) in heads {
        let wh = tape.matmul(h, omega)?;
        let s = tape.shape(wh).to_vec();
        let c3 = s[3];
        let phi_src = tape.narrow(phi, 0, 0, c3)?;
        let phi_dst = tape.narrow(phi, 0, c3, c3)?;
        let src = tape.matmul(wh, phi_src)?;
        let dst = tape.matmul(wh, phi_dst)?;
        let src = tape.reshape(src, &s[..3])?;
        let dst = tape.reshape(dst, &s[..3])?;
        let logits = tape.pairwise_sum(src, dst)?;
        let logits = tape.leaky_relu(logits, slope);
        let att = tape.softmax(logits, Some(mask))?;
        trace.push(att);
        let out = tape.matmul(att, wh)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, out)?,
            None => out,
        });
    }
    let mean = tape.scale(acc.expect("at least one head"), 1.0 / heads.len() as f64);
    Ok(tape.leaky_relu(mean, slope))
}

/// Stacked attention per graph, concatenated over graphs on the channel
/// axis. Input and output are `[B, N, M, C]`.
pub fn spatial_view(
    tape: &mut Tape,
    x2: Var,
    graphs: &[Vec<Vec<(Var, Var)>>],
    masks: &[Mask],
    slope: f64,
    trace: &mut Vec<Var>,
) -> Result<Var> {
    if graphs.len() != masks.len() {
        return Err(ModelError::Config(format!(
            "{} graph parameter sets for {} adjacency masks",
            graphs.len(),
            masks.len()
        )));
    }
    let h0 = tape.permute(x2, &[0, 2, 1, 3])?;
    let mut outs = Vec::with_capacity(graphs.len());
    for (layers, mask) in graphs.iter().zip(masks) {
        let mut h = h0;
        for heads in layers {
            h = gat_layer(tape, h, heads, mask, slope, trace)?;
        }
        outs.push(h);
    }
    let x3 = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 3)? };
    Ok(tape.permute(x3, &[0, 2, 1, 3])?)
}

/// `[M, W]` sinusoid table.
pub fn positional_encoding(m: usize, width: usize, mode: PeMode) -> Tensor {
    let w = width as f64;
    Tensor::from_fn(&[m, width], |p| {
        let (pos, ch) = (p / width, p % width);
        let t = pos as f64;
        match mode {
            PeMode::Standard => {
                let angle = t / 10000f64.powf((2 * (ch / 2)) as f64 / w);
                if ch % 2 == 0 {
                    angle.sin()
                } else {
                    angle.cos()
                }
            }
            PeMode::Literal => {
                let angle = t / 10000f64.powf(2.0 * t / w);
                if pos % 2 == 0 {
                    angle.sin()
                } else {
                    angle.cos()
                }
            }
        }
    })
}

/// Per-node multi-head self-attention over time: `[B, N, M, D]` to
/// `[B, N, M, d_m]`. Heads are concatenated, then projected by `wo`.
pub fn mhsa(tape: &mut Tape, x: Var, heads: &[(Var, Var, Var)], wo: Var, trace: &mut Vec<Var>) -> Result<Var> {
    let mut outs = Vec::with_capacity(heads.len());
    for &(wq, wk, wv) in heads {
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let d_k = *tape.shape(q).last().expect("rank 4");
        let kt = tape.permute(k, &[0, 1, 3, 2])?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
        let att = tape.softmax(scores, None)?;
        trace.push(att);
        outs.push(tape.matmul(att, v)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 3)? };
    Ok(tape.matmul(cat, wo)?)
}

/// Readout weights.
#[derive(Debug, Clone, Copy)]
pub struct ReadoutVars {
    pub w1: Var,
    pub gamma: Var,
    pub beta: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Batchnorm source for the readout.
pub enum Norm<'a> {
    Batch { eps: f64 },
    Running { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

/// Last time step, then `max(ReLU(BN(x w1)) w2 + b2, floor)`; `floor` of
/// `None` is plain ReLU. Returns `[B, N]` and the batch statistics when
/// normalizing with the batch.
pub fn readout(tape: &mut Tape, x: Var, v: ReadoutVars, norm: Norm<'_>, floor: Option<Var>) -> Result<(Var, Option<BatchStats>)> {
    let s = tape.shape(x).to_vec();
    let (b, n, m, w) = (s[0], s[1], s[2], s[3]);
    let last = tape.narrow(x, 2, m - 1, 1)?;
    let last = tape.reshape(last, &[b, n, w])?;
    let h = tape.matmul(last, v.w1)?;
    let (h, stats) = match norm {
        Norm::Batch { eps } => {
            let (h, st) = tape.batchnorm_train(h, v.gamma, v.beta, eps)?;
            (h, Some(st))
        }
        Norm::Running { mean, var, eps } => (tape.batchnorm_eval(h, v.gamma, v.beta, mean, var, eps)?, None),
    };
    let h = tape.relu(h);
    let y = tape.matmul(h, v.w2)?;
    let y = tape.add(y, v.b2)?;
    let y = tape.reshape(y, &[b, n])?;
    let y = match floor {
        Some(f) => tape.max_with(y, f)?,
        None => tape.relu(y),
    };
    Ok((y, stats))
}
