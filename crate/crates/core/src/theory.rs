//! Closed-form leading-order losses and optimality diagnostics.
//!
//! Every loss here is the `1/D` leading term; remainders that vanish faster
//! than `1/D` are dropped. Formulas that only exist under a finiteness
//! condition report it through [`TheoryValue::valid`] instead of failing, so
//! sweeps can cross singular boundaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryValue {
    /// `NaN` when `valid` is false.
    pub value: f64,
    pub valid: bool,
    /// Smallest gap `v² − boundary` over the finiteness conditions.
    pub condition_margin: f64,
}

impl TheoryValue {
    /// Valid when `v² − bound` clears rounding noise, so `v = √2` counts as singular.
    fn new(v2: f64, bound: f64, value: impl FnOnce() -> f64) -> Self {
        let margin = v2 - bound;
        let valid = margin > 8.0 * f64::EPSILON * v2;
        Self {
            value: if valid { value() } else { f64::NAN },
            valid,
            condition_margin: margin,
        }
    }

    /// An always-valid value (no finiteness condition involved).
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            valid: true,
            condition_margin: f64::INFINITY,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self {
            value: self.value * factor,
            ..self
        }
    }
}

/// `E‖θ‖⁴` for `θ ~ N(0, I/d)`: `(d + 2)/d`.
pub fn moment_theta4(d: usize) -> Result<f64> {
    if d < 1 {
        return Err(Error::Domain("d must be at least 1".into()));
    }
    Ok((d as f64 + 2.0) / d as f64)
}

/// Infinite-`D` loss `‖vA − I‖²_F / d + v²‖b‖² E‖θ‖⁴`.
///
/// For symmetric `A` the first term is `tr((vA − I)²)/d`; the Frobenius form is
/// what `E(θᵀ(vA − I)x_q)²` evaluates to for any `A`.
pub fn quadratic_loss(a: &DMatrix<f64>, b: &DVector<f64>, v: f64, d: usize) -> Result<f64> {
    if a.shape() != (d, d) || b.len() != d {
        return Err(Error::Shape(format!("A must be {d}x{d} and b length {d}")));
    }
    let resid = a * v - DMatrix::identity(d, d);
    Ok(resid.norm_squared() / d as f64 + v * v * b.norm_squared() * moment_theta4(d)?)
}

/// `(v²/(v² − s))^{d/2}` and its `d/2 + 1` power.
fn ratio_powers(v2: f64, s: f64, d: usize) -> (f64, f64) {
    let r = v2 / (v2 - s);
    let p = r.powf(d as f64 / 2.0);
    (p, p * r)
}

/// Single head at `A = I/v`, `b = 0`:
/// `(v²/D) r^{d/2} + (1/D) r^{d/2+1}` with `r = v²/(v² − 2)`.
pub fn loss_single(d: usize, prompt_len: usize, v: f64) -> TheoryValue {
    let v2 = v * v;
    TheoryValue::new(v2, 2.0, || {
        let (p, p1) = ratio_powers(v2, 2.0, d);
        (v2 * p + p1) / prompt_len as f64
    })
}

fn multi_bound(c: f64) -> f64 {
    let c2 = 2.0 * c - 1.0;
    (2.0 * c * c).max(2.0 * c2 * c2).max(2.0 * c * c2)
}

/// Shared body of the noiseless and noisy two-head losses; `label_scale`
/// multiplies the `v²`-weighted terms.
fn multi_terms(d: usize, v2: f64, c: f64, label_scale: f64) -> f64 {
    let c2 = 2.0 * c - 1.0;
    let (a, a1) = ratio_powers(v2, 2.0 * c * c, d);
    let (b, b1) = ratio_powers(v2, 2.0 * c2 * c2, d);
    let (x, x1) = ratio_powers(v2, 2.0 * c * c2, d);
    4.0 * v2 * label_scale * (a - x) + v2 * label_scale * b + c2 * c2 * b1
        - (8.0 * c - 4.0) * c * x1
        + 4.0 * c * c * a1
}

/// Two heads `(m, n) = (2, 1)` with `A₁ = (c/v)I`, `A₂ = ((2c − 1)/v)I`.
pub fn loss_multi(d: usize, prompt_len: usize, v: f64, c: f64) -> TheoryValue {
    let v2 = v * v;
    TheoryValue::new(v2, multi_bound(c), || {
        multi_terms(d, v2, c, 1.0) / prompt_len as f64
    })
}

pub fn loss_single_noisy(d: usize, prompt_len: usize, v: f64, sigma_eps: f64) -> TheoryValue {
    let v2 = v * v;
    let s2 = sigma_eps * sigma_eps;
    TheoryValue::new(v2, 2.0, || {
        let (p, _) = ratio_powers(v2, 2.0, d);
        let n = prompt_len as f64;
        s2 + v2 * s2 * p / n + (v2 * v2 - v2) / (v2 - 2.0) * p / n
    })
}

pub fn loss_multi_noisy(
    d: usize,
    prompt_len: usize,
    v: f64,
    c: f64,
    sigma_eps: f64,
) -> TheoryValue {
    let v2 = v * v;
    let s2 = sigma_eps * sigma_eps;
    TheoryValue::new(v2, multi_bound(c), || {
        s2 + multi_terms(d, v2, c, 1.0 + s2) / prompt_len as f64
    })
}

/// Prior-mean scenario at `u = 0`: the isotropic loss scaled by
/// `‖θ₀‖² + σ²`. `multi = Some(c)` selects the two-head loss.
pub fn loss_prior(
    d: usize,
    prompt_len: usize,
    v: f64,
    theta0: &DVector<f64>,
    sigma_prior: f64,
    multi: Option<f64>,
) -> TheoryValue {
    let base = match multi {
        Some(c) => loss_multi(d, prompt_len, v, c),
        None => loss_single(d, prompt_len, v),
    };
    base.scaled(theta0.norm_squared() + sigma_prior * sigma_prior)
}

/// `∂²/∂c² loss_multi` at `c = 1`:
/// `−4v²(d + 2)((d + 2)v² − d) r^{d/2} / (D (v² − 2)³)`, negative whenever `v² > 2`.
pub fn curvature_at_c1(d: usize, prompt_len: usize, v: f64) -> Result<f64> {
    let v2 = v * v;
    if !(v2 > 2.0) {
        return Err(Error::Domain(format!("curvature needs v^2 > 2 (v={v})")));
    }
    let dd = d as f64;
    let (p, _) = ratio_powers(v2, 2.0, d);
    let gap = v2 - 2.0;
    Ok(-4.0 * v2 * (dd + 2.0) * ((dd + 2.0) * v2 - dd) * p / (prompt_len as f64 * gap.powi(3)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalC {
    pub c: f64,
    pub loss: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimises `loss_multi` over `c ∈ [lo, hi]`: a uniform grid of `steps + 1`
/// points, then golden-section refinement inside the best grid bracket.
pub fn optimal_c(
    d: usize,
    prompt_len: usize,
    v: f64,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<OptimalC> {
    if !(v * v > 2.0) {
        return Err(Error::Domain(format!("optimal_c needs v^2 > 2 (v={v})")));
    }
    if !(lo < hi) || steps == 0 {
        return Err(Error::Domain(format!(
            "bad grid [{lo}, {hi}] with {steps} steps"
        )));
    }
    let f = |c: f64| {
        let t = loss_multi(d, prompt_len, v, c);
        if t.valid {
            t.value
        } else {
            f64::INFINITY
        }
    };
    let h = (hi - lo) / steps as f64;
    let grid: Vec<(f64, f64)> = (0..=steps)
        .map(|i| {
            let c = lo + h * i as f64;
            (c, f(c))
        })
        .collect();
    let (best, &(c0, f0)) = grid
        .iter()
        .enumerate()
        .filter(|(_, (_, l))| l.is_finite())
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .ok_or_else(|| Error::Domain("no valid c on the grid".into()))?;

    let mut a = grid[best.saturating_sub(1)].0;
    let mut b = grid[(best + 1).min(steps)].0;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let (c, l) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    Ok(if l < f0 {
        OptimalC { c, loss: l }
    } else {
        OptimalC { c: c0, loss: f0 }
    })
}

/// `‖v(σ_x²(A + θbᵀ) + I) − I‖_F`; zero at the local-examples optimum.
pub fn local_optimum_check(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    v: f64,
    theta: &DVector<f64>,
    sigma_x: f64,
) -> Result<f64> {
    let d = a.nrows();
    if !a.is_square() || b.len() != d || theta.len() != d {
        return Err(Error::Shape(format!("A, b, θ must agree on d={d}")));
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let m = (a + theta * b.transpose()) * (sigma_x * sigma_x) + &eye;
    Ok((m * v - eye).norm())
}

/// Large-`D` loss per unit `E y_q²` of `A = I/v`, `b = 0` on local prompts:
/// `(σ_x² + v − 1)²`.
pub fn shifted_local_limit(v: f64, sigma_x: f64) -> f64 {
    (sigma_x * sigma_x + v - 1.0).powi(2)
}
