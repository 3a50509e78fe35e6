//! Forward pass of the simplified softmax-attention predictor.
//!
//! Only the last entry of the last output row matters for the loss, so the
//! forward pass reduces to: logits of every prompt column against the query,
//! a softmax over the `D + 1` columns (the query attends to itself with a zero
//! label slot), and a linear read-out of the columns.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{dot, Prompt};

/// Key-query blocks `(A, b)` and read-out `[u, v]` of a single head.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleHeadParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub v: f64,
    pub u: DVector<f64>,
}

impl SingleHeadParams {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, v: f64, u: DVector<f64>) -> Result<Self> {
        let d = a.nrows();
        if !a.is_square() || b.len() != d || u.len() != d {
            return Err(Error::Shape(format!(
                "A is {}x{}, b has {}, u has {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                u.len()
            )));
        }
        Ok(Self { a, b, v, u })
    }

    /// `A = I/v`, `b = 0`, `u = 0`.
    pub fn canonical(d: usize, v: f64) -> Self {
        Self::scaled_identity(d, 1.0 / v, v)
    }

    /// `A = scale·I`, `b = 0`, `u = 0`.
    pub fn scaled_identity(d: usize, scale: f64, v: f64) -> Self {
        Self {
            a: DMatrix::from_diagonal_element(d, d, scale),
            b: DVector::zeros(d),
            v,
            u: DVector::zeros(d),
        }
    }

    pub fn d(&self) -> usize {
        self.a.nrows()
    }
}

/// One term of a signed head combination.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralHeads {
    heads: Vec<Head>,
}

impl GeneralHeads {
    pub fn new(heads: Vec<Head>) -> Result<Self> {
        let Some(first) = heads.first() else {
            return Err(Error::Shape("at least one head is required".into()));
        };
        let d = first.a.nrows();
        for (j, h) in heads.iter().enumerate() {
            if h.a.shape() != (d, d) || h.b.len() != d {
                return Err(Error::Shape(format!("head {j} does not match d={d}")));
            }
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn d(&self) -> usize {
        self.heads[0].a.nrows()
    }
}

impl From<&SingleHeadParams> for GeneralHeads {
    fn from(p: &SingleHeadParams) -> Self {
        Self {
            heads: vec![Head {
                a: p.a.clone(),
                b: p.b.clone(),
                weight: p.v,
            }],
        }
    }
}

/// Two heads sharing `A₁ = (c/v)I`, combined as `m·v·head₁ − n·v·head₂`.
///
/// `A₂` is pinned by `m·c − n·c₂ = 1` so the combined kernel stays
/// consistent; with `(m, n) = (2, 1)` this gives `A₂ = ((2c − 1)/v)I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoHeadParams {
    pub c: f64,
    pub v: f64,
    pub m: f64,
    pub n: f64,
}

impl TwoHeadParams {
    pub fn new(c: f64, v: f64, m: f64, n: f64) -> Result<Self> {
        if !(c.is_finite() && v.is_finite() && v != 0.0) {
            return Err(Error::Domain(format!(
                "need finite c and nonzero v (c={c}, v={v})"
            )));
        }
        if !(m > 0.0 && n > 0.0) {
            return Err(Error::Domain(format!(
                "head weights must be positive (m={m}, n={n})"
            )));
        }
        let p = Self { c, v, m, n };
        let c2 = p.second_shape();
        let bound = (2.0 * c * c).max(2.0 * c2 * c2);
        if !(v * v > bound) {
            return Err(Error::Domain(format!(
                "finiteness condition v^2 > {bound} fails for v={v}, c={c}"
            )));
        }
        Ok(p)
    }

    /// Shape parameter of the second head, `(m·c − 1)/n`.
    pub fn second_shape(&self) -> f64 {
        (self.m * self.c - 1.0) / self.n
    }

    pub fn heads(&self, d: usize) -> GeneralHeads {
        let eye = |s: f64| DMatrix::from_diagonal_element(d, d, s);
        GeneralHeads {
            heads: vec![
                Head {
                    a: eye(self.c / self.v),
                    b: DVector::zeros(d),
                    weight: self.m * self.v,
                },
                Head {
                    a: eye(self.second_shape() / self.v),
                    b: DVector::zeros(d),
                    weight: -(self.n * self.v),
                },
            ],
        }
    }
}

/// The `(m, n) = (2, 1)` two-head predictor with `A₁ = (c/v)I`, `A₂ = ((2c−1)/v)I`.
pub fn two_head_from_c(c: f64, v: f64, d: usize) -> Result<GeneralHeads> {
    Ok(TwoHeadParams::new(c, v, 2.0, 1.0)?.heads(d))
}

/// `x_iᵀ A x_q + y_i bᵀ x_q` for every example, then `x_qᵀ A x_q` for the query.
pub fn head_logits(prompt: &Prompt, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<f64>> {
    let d = prompt.d();
    if a.shape() != (d, d) || b.len() != d {
        return Err(Error::Shape(format!(
            "A is {}x{} and b has {} entries for d={d}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let a_xq = a * &prompt.x_q;
    let a_xq = a_xq.as_slice();
    let b_xq = dot(b.as_slice(), prompt.x_q.as_slice());

    let mut logits = Vec::with_capacity(prompt.prompt_len() + 1);
    logits.extend(
        prompt
            .x
            .as_slice()
            .chunks_exact(d)
            .zip(prompt.y.iter())
            .map(|(x_i, y_i)| dot(x_i, a_xq) + y_i * b_xq),
    );
    logits.push(dot(prompt.x_q.as_slice(), a_xq));
    Ok(logits)
}

/// Max-shifted softmax. Rejects non-finite logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let mut max = f64::NEG_INFINITY;
    for (i, &z) in logits.iter().enumerate() {
        if !z.is_finite() {
            return Err(Error::NonFiniteLogit(i));
        }
        max = max.max(z);
    }
    let mut w: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

/// `Σ_i (uᵀx_i + w·y_i)·s_i + (uᵀx_q)·s_{D+1}` for one head's softmax `s`.
fn head_readout(prompt: &Prompt, scores: &[f64], weight: f64, u: &DVector<f64>) -> f64 {
    let n = prompt.prompt_len();
    let labels: f64 = prompt
        .y
        .iter()
        .zip(&scores[..n])
        .map(|(y, s)| weight * y * s)
        .sum();
    if u.iter().all(|&x| x == 0.0) {
        return labels;
    }
    let d = prompt.d();
    let u = u.as_slice();
    let inputs: f64 = prompt
        .x
        .as_slice()
        .chunks_exact(d)
        .zip(&scores[..n])
        .map(|(x_i, s)| dot(u, x_i) * s)
        .sum();
    labels + inputs + dot(u, prompt.x_q.as_slice()) * scores[n]
}

fn check_u(prompt: &Prompt, u: &DVector<f64>) -> Result<()> {
    if u.len() != prompt.d() {
        return Err(Error::Shape(format!(
            "u has {} entries for d={}",
            u.len(),
            prompt.d()
        )));
    }
    Ok(())
}

pub fn predict_single(prompt: &Prompt, params: &SingleHeadParams) -> Result<f64> {
    check_u(prompt, &params.u)?;
    let scores = softmax(&head_logits(prompt, &params.a, &params.b)?)?;
    Ok(head_readout(prompt, &scores, params.v, &params.u))
}

/// Signed sum of head read-outs. Each head reads the prompt through `[u, w_j]`.
pub fn predict_multi(prompt: &Prompt, heads: &GeneralHeads, u: &DVector<f64>) -> Result<f64> {
    check_u(prompt, u)?;
    let mut total = None;
    for h in &heads.heads {
        let scores = softmax(&head_logits(prompt, &h.a, &h.b)?)?;
        let r = head_readout(prompt, &scores, h.weight, u);
        total = Some(total.map_or(r, |t: f64| t + r));
    }
    Ok(total.expect("GeneralHeads is never empty"))
}

/// Anything that maps a prompt to a query prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Single(SingleHeadParams),
    Multi {
        heads: GeneralHeads,
        u: DVector<f64>,
    },
}

impl Predictor {
    pub fn d(&self) -> usize {
        match self {
            Predictor::Single(p) => p.d(),
            Predictor::Multi { heads, .. } => heads.d(),
        }
    }

    pub fn predict(&self, prompt: &Prompt) -> Result<f64> {
        match self {
            Predictor::Single(p) => predict_single(prompt, p),
            Predictor::Multi { heads, u } => predict_multi(prompt, heads, u),
        }
    }

    pub fn multi(heads: GeneralHeads) -> Self {
        let d = heads.d();
        Predictor::Multi {
            heads,
            u: DVector::zeros(d),
        }
    }
}
