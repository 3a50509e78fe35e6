//! Stochastic gradient descent on the Monte-Carlo loss over `(A, b)`,
//! with the read-out `(v, u)` frozen.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::attention::{predict_single, SingleHeadParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngStream};
use crate::scenario::{sample_prompt, sample_theta, Prompt, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: SingleHeadParams,
    /// `(step, smoothed batch loss)`, one entry per step.
    pub trajectory: Vec<(usize, f64)>,
    /// `‖vA − I‖_F + ‖v·b‖`.
    pub distance_to_theory: f64,
}

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn finite_diff_grad<F>(mut objective: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = objective(&probe);
        probe[i] = x[i] - h;
        let down = objective(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteObjective { coord: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

pub fn distance_to_theory(params: &SingleHeadParams) -> f64 {
    let d = params.d();
    let resid = &params.a * params.v - DMatrix::<f64>::identity(d, d);
    resid.norm() + (&params.b * params.v).norm()
}

/// `[vec(A); b]`, `A` column-major.
fn pack(p: &SingleHeadParams) -> Vec<f64> {
    p.a.iter().chain(p.b.iter()).copied().collect()
}

fn unpack(x: &[f64], template: &SingleHeadParams) -> SingleHeadParams {
    let d = template.d();
    SingleHeadParams {
        a: DMatrix::from_column_slice(d, d, &x[..d * d]),
        b: DVector::from_column_slice(&x[d * d..]),
        v: template.v,
        u: template.u.clone(),
    }
}

fn batch_loss(prompts: &[Prompt], params: &SingleHeadParams) -> f64 {
    let errs: Vec<f64> = prompts
        .par_iter()
        .map(|p| match predict_single(p, params) {
            Ok(y) => (y - p.y_q).powi(2),
            Err(_) => f64::NAN,
        })
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

/// EMA weight of the newest batch loss in the smoothed trajectory.
const SMOOTHING: f64 = 0.05;
const FD_STEP: f64 = 1e-4;
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_PATIENCE: usize = 100;

/// Fits `(A, b)` by SGD with finite-difference gradients.
///
/// Step `t` draws `batch` fresh prompts from streams of `derive_seed(seed, t)`
/// and reuses them for every perturbation. The rate drops tenfold after 80%
/// of the steps.
pub fn fit_single_head(
    config: &ScenarioConfig,
    v_fixed: f64,
    init: &SingleHeadParams,
    lr: f64,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<FitReport> {
    let d = config.d();
    if init.d() != d {
        return Err(Error::Shape(format!(
            "init has d={} but scenario has d={d}",
            init.d()
        )));
    }
    if !(lr > 0.0) || steps == 0 || batch == 0 {
        return Err(Error::Domain(format!(
            "need lr > 0, steps > 0, batch > 0 (lr={lr})"
        )));
    }
    if !(v_fixed.is_finite() && v_fixed != 0.0) {
        return Err(Error::Domain(format!(
            "v must be finite and nonzero, got {v_fixed}"
        )));
    }
    let template = SingleHeadParams {
        v: v_fixed,
        ..init.clone()
    };
    let mut x = pack(&template);
    let mut trajectory = Vec::with_capacity(steps);
    let mut smoothed = f64::NAN;
    let mut initial = f64::NAN;
    let mut above = 0;
    let decay_at = steps * 4 / 5;

    for t in 0..steps {
        let step_seed = derive_seed(seed, t as u64);
        let prompts = (0..batch as u64)
            .into_par_iter()
            .map(|j| {
                let mut rng = RngStream::new(step_seed, j).rng();
                let theta = sample_theta(config, &mut rng);
                sample_prompt(config, &theta, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let loss = batch_loss(&prompts, &unpack(&x, &template));
        if !loss.is_finite() {
            return Err(Error::NonFiniteObjective { coord: usize::MAX });
        }
        smoothed = if t == 0 {
            loss
        } else {
            SMOOTHING * loss + (1.0 - SMOOTHING) * smoothed
        };
        if t == 0 {
            initial = loss;
        }
        trajectory.push((t, smoothed));

        above = if smoothed > DIVERGENCE_FACTOR * initial {
            above + 1
        } else {
            0
        };
        if above >= DIVERGENCE_PATIENCE {
            let params = unpack(&x, &template);
            return Err(Error::Diverged {
                step: t,
                report: Box::new(FitReport {
                    distance_to_theory: distance_to_theory(&params),
                    params,
                    trajectory,
                }),
            });
        }

        let grad = finite_diff_grad(|p| batch_loss(&prompts, &unpack(p, &template)), &x, FD_STEP)?;
        let rate = if t < decay_at { lr } else { lr / 10.0 };
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= rate * g;
        }
    }

    let params = unpack(&x, &template);
    Ok(FitReport {
        distance_to_theory: distance_to_theory(&params),
        params,
        trajectory,
    })
}
