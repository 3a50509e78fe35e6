//! Experiment specs, presets and the runner behind the command-line tool.

pub mod output;
pub mod presets;
pub mod spec;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use crate::attention::SingleHeadParams;
use crate::error::{Error, Result};
use crate::estimator::{
    apply_axis, decay_slope, isotropic_equivalent, mc_loss, sweep, LossEstimate, PredictorFamily,
    SweepAxis,
};
use crate::optimizer::fit_single_head;
use crate::rng::derive_seed;
use crate::theory::{self, TheoryValue};
pub use spec::{Analysis, ExperimentSpec, Gate, GateRows, PredictorSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowRecord {
    pub value: f64,
    pub estimate: Option<LossEstimate>,
    pub theory: Option<TheoryValue>,
    pub z: Option<f64>,
    pub error: Option<String>,
    /// Fitted `‖vA − I‖_F + ‖vb‖`, for fit predictors.
    pub fit_distance: Option<f64>,
    /// Isotropic comparator, for the correlated equivalence analysis.
    pub isotropic: Option<LossEstimate>,
}

impl RowRecord {
    fn new(value: f64) -> Self {
        Self {
            value,
            estimate: None,
            theory: None,
            z: None,
            error: None,
            fit_distance: None,
            isotropic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateResult {
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub spec: ExperimentSpec,
    pub rows: Vec<RowRecord>,
    pub gate: Option<GateResult>,
    pub analysis: Option<serde_json::Value>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

/// Runs the sweep (or fits) and evaluates gate and analysis; no I/O.
pub fn execute(spec: &ExperimentSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let start = Instant::now();
    let rows = match &spec.predictor {
        PredictorSpec::Fit { .. } => fit_rows(spec),
        p => match p.family() {
            Some(family) => family_rows(spec, &family)?,
            None => explicit_rows(spec),
        },
    };
    let warnings = rows
        .iter()
        .filter_map(|r| {
            let t = r.theory?;
            let v2_minus_bound = t.condition_margin;
            // margin = v² − bound; warn when v² < 1.05·bound.
            let bound = match (&spec.predictor, spec.sweep.axis) {
                (_, SweepAxis::V) => r.value * r.value - v2_minus_bound,
                (p, _) => predictor_v(p)?.powi(2) - v2_minus_bound,
            };
            (v2_minus_bound > 0.0 && v2_minus_bound < 0.05 * bound).then(|| {
                format!(
                    "{}={}: v^2 is within 5% of the finiteness boundary {bound:.4}; heavy-tailed estimates",
                    spec.sweep.axis.name(),
                    r.value
                )
            })
        })
        .collect();
    let gate = spec.gate.map(|g| evaluate_gate(&g, &rows));
    let analysis = spec.analysis.map(|a| analyse(a, spec, &rows)).transpose()?;
    Ok(RunOutcome {
        spec: spec.clone(),
        rows,
        gate,
        analysis,
        warnings,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn predictor_v(p: &PredictorSpec) -> Option<f64> {
    match *p {
        PredictorSpec::Canonical { v }
        | PredictorSpec::TwoHead { v, .. }
        | PredictorSpec::Fixed { v, .. }
        | PredictorSpec::Fit { v, .. } => Some(v),
        _ => None,
    }
}

fn family_rows(spec: &ExperimentSpec, family: &PredictorFamily) -> Result<Vec<RowRecord>> {
    let rows = sweep(
        &spec.config,
        family,
        spec.sweep.axis,
        &spec.sweep.values,
        spec.n_reps,
        spec.master_seed,
        spec.whiten,
    );
    let iso = spec.analysis == Some(Analysis::IsotropicEquivalent) && spec.n_reps > 0;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rec = RowRecord::new(r.value);
            rec.z = r.z();
            rec.estimate = r.estimate;
            rec.theory = r.theory;
            rec.error = r.error;
            if iso && rec.error.is_none() {
                let (cfg, fam) = apply_axis(&spec.config, family, spec.sweep.axis, r.value)?;
                let p = fam.build(cfg.d())?;
                let seed = derive_seed(spec.master_seed, i as u64);
                rec.isotropic = Some(isotropic_equivalent(&cfg, &p, spec.n_reps, seed)?);
            }
            Ok(rec)
        })
        .collect()
}

fn explicit_rows(spec: &ExperimentSpec) -> Vec<RowRecord> {
    // Scenario axes only; the family is a placeholder that the axis never touches.
    let placeholder = PredictorFamily::Canonical { v: 1.0 };
    spec.sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut rec = RowRecord::new(value);
            let run = || -> Result<LossEstimate> {
                let (cfg, _) = apply_axis(&spec.config, &placeholder, spec.sweep.axis, value)?;
                let p = spec.predictor.explicit(cfg.d())?;
                mc_loss(
                    &cfg,
                    &p,
                    spec.n_reps,
                    derive_seed(spec.master_seed, i as u64),
                    spec.whiten,
                )
            };
            if spec.n_reps > 0 {
                match run() {
                    Ok(e) => rec.estimate = Some(e),
                    Err(e) => rec.error = Some(e.to_string()),
                }
            }
            rec
        })
        .collect()
}

fn fit_rows(spec: &ExperimentSpec) -> Vec<RowRecord> {
    let PredictorSpec::Fit {
        v,
        lr,
        steps,
        batch,
        init_scale,
    } = spec.predictor
    else {
        unreachable!("fit_rows called with a non-fit predictor")
    };
    spec.sweep
        .values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut rec = RowRecord::new(value);
            let row_seed = derive_seed(spec.master_seed, i as u64);
            let run = |rec: &mut RowRecord| -> Result<()> {
                let (cfg, fam) = apply_axis(
                    &spec.config,
                    &PredictorFamily::Canonical { v },
                    spec.sweep.axis,
                    value,
                )?;
                let v = fam.v();
                rec.theory = fam.theory(&cfg, spec.whiten);
                let init = SingleHeadParams::scaled_identity(cfg.d(), init_scale, v);
                let report = match fit_single_head(
                    &cfg,
                    v,
                    &init,
                    lr,
                    steps,
                    batch,
                    derive_seed(row_seed, 0),
                ) {
                    Ok(r) => r,
                    Err(Error::Diverged { step, report }) => {
                        rec.fit_distance = Some(report.distance_to_theory);
                        return Err(Error::Experiment(format!("fit diverged at step {step}")));
                    }
                    Err(e) => return Err(e),
                };
                rec.fit_distance = Some(report.distance_to_theory);
                if spec.n_reps > 0 {
                    let p = crate::attention::Predictor::Single(report.params);
                    let est = mc_loss(&cfg, &p, spec.n_reps, row_seed, spec.whiten)?;
                    rec.z = rec
                        .theory
                        .and_then(|t| crate::estimator::z_score(&est, &t).ok());
                    rec.estimate = Some(est);
                }
                Ok(())
            };
            if let Err(e) = run(&mut rec) {
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect()
}

pub fn evaluate_gate(gate: &Gate, rows: &[RowRecord]) -> GateResult {
    let which = match gate {
        Gate::ZScore { rows, .. }
        | Gate::Relative { rows, .. }
        | Gate::FitDistance { rows, .. } => *rows,
    };
    let selected: &[RowRecord] = match which {
        GateRows::All => rows,
        GateRows::Last => &rows[rows.len().saturating_sub(1)..],
    };
    let mut failures = Vec::new();
    for r in selected {
        let fail = if let Some(e) = &r.error {
            Some(format!("row {}: {e}", r.value))
        } else {
            match *gate {
                Gate::ZScore { max_abs, .. } => match r.z {
                    Some(z) if z.abs() <= max_abs => None,
                    Some(z) => Some(format!("row {}: |z| = {:.3} > {max_abs}", r.value, z.abs())),
                    None => Some(format!("row {}: no z-score available", r.value)),
                },
                Gate::Relative { tol, .. } => match (r.estimate, r.theory) {
                    (Some(e), Some(t)) if t.valid => {
                        let rel = (e.mean - t.value).abs() / t.value.abs();
                        (rel > tol)
                            .then(|| format!("row {}: relative error {rel:.4} > {tol}", r.value))
                    }
                    _ => Some(format!("row {}: no estimate or valid theory", r.value)),
                },
                Gate::FitDistance { max, .. } => match r.fit_distance {
                    Some(dist) if dist <= max => None,
                    Some(dist) => Some(format!("row {}: fit distance {dist:.4} > {max}", r.value)),
                    None => Some(format!("row {}: no fit distance", r.value)),
                },
            }
        };
        failures.extend(fail);
    }
    GateResult {
        passed: failures.is_empty(),
        failures,
    }
}

fn analyse(
    analysis: Analysis,
    spec: &ExperimentSpec,
    rows: &[RowRecord],
) -> Result<serde_json::Value> {
    let cfg = &spec.config;
    let (d, n) = (cfg.d(), cfg.prompt_len());
    let v = predictor_v(&spec.predictor)
        .ok_or_else(|| Error::Experiment("analysis needs a scalar-v predictor".into()))?;
    Ok(match analysis {
        Analysis::DecaySlope => {
            if spec.sweep.axis != SweepAxis::PromptLen {
                return Err(Error::Experiment("decay_slope needs a D sweep".into()));
            }
            let points = |f: &dyn Fn(&RowRecord) -> Option<f64>| -> Vec<(usize, f64)> {
                rows.iter()
                    .filter_map(|r| Some((r.value as usize, f(r)?)))
                    .collect()
            };
            let mc = points(&|r| r.estimate.map(|e| e.mean));
            let th = points(&|r| r.theory.filter(|t| t.valid).map(|t| t.value));
            json!({
                "mc_slope": decay_slope(&mc).ok(),
                "theory_slope": decay_slope(&th).ok(),
            })
        }
        Analysis::OptimalC => {
            let opt = theory::optimal_c(d, n, v, 0.01, 1.0, 1000)?;
            let single = theory::loss_single(d, n, v).value;
            json!({
                "c_star": opt.c,
                "loss_multi_at_c_star": opt.loss,
                "loss_single": single,
                "improvement": single - opt.loss,
            })
        }
        Analysis::CurvatureC1 => {
            let h = 1e-4;
            let f = |c| theory::loss_multi(d, n, v, c).value;
            json!({
                "closed_form": theory::curvature_at_c1(d, n, v)?,
                "finite_difference": (f(1.0 + h) - 2.0 * f(1.0) + f(1.0 - h)) / (h * h),
            })
        }
        Analysis::IsotropicEquivalent => {
            let per_row: Vec<_> = rows
                .iter()
                .map(|r| match (r.estimate, r.isotropic) {
                    (Some(a), Some(b)) => {
                        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
                        json!({ "value": r.value, "whitened": a.mean, "isotropic": b.mean,
                                "diff_in_combined_se": (a.mean - b.mean) / se })
                    }
                    _ => json!({ "value": r.value }),
                })
                .collect();
            json!({ "rows": per_row })
        }
    })
}

/// Runs a spec and writes CSV, metadata JSON and (optionally) an SVG plot.
pub fn run_to_dir(spec: &ExperimentSpec, out_dir: &Path) -> Result<(RunOutcome, Vec<PathBuf>)> {
    let outcome = execute(spec)?;
    let paths = output::write_all(&outcome, out_dir)?;
    Ok((outcome, paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;
    use spec::{Outputs, SweepSpec};

    fn base_spec(predictor: PredictorSpec, axis: SweepAxis, values: Vec<f64>) -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            config: ScenarioConfig::base(3, 100).unwrap(),
            predictor,
            sweep: SweepSpec { axis, values },
            n_reps: 500,
            master_seed: 1,
            whiten: false,
            gate: None,
            analysis: None,
            outputs: Outputs::default(),
        }
    }

    fn row(value: f64, mean: f64, theory: f64, z: Option<f64>) -> RowRecord {
        RowRecord {
            estimate: Some(LossEstimate {
                mean,
                stderr: 0.1,
                n_reps: 10,
                master_seed: 0,
            }),
            theory: Some(TheoryValue::exact(theory)),
            z,
            ..RowRecord::new(value)
        }
    }

    #[test]
    fn gates() {
        let rows = vec![
            row(1.0, 5.0, 9.0, Some(-40.0)),
            row(2.0, 8.5, 9.0, Some(-5.0)),
        ];
        assert!(
            evaluate_gate(
                &Gate::Relative {
                    tol: 0.1,
                    rows: GateRows::Last
                },
                &rows
            )
            .passed
        );
        assert!(
            !evaluate_gate(
                &Gate::Relative {
                    tol: 0.1,
                    rows: GateRows::All
                },
                &rows
            )
            .passed
        );
        let z = evaluate_gate(
            &Gate::ZScore {
                max_abs: 4.0,
                rows: GateRows::All,
            },
            &rows,
        );
        assert_eq!(z.failures.len(), 2);
        let mut errored = rows.clone();
        errored[1].error = Some("boom".into());
        assert!(
            !evaluate_gate(
                &Gate::Relative {
                    tol: 0.1,
                    rows: GateRows::Last
                },
                &errored
            )
            .passed
        );
    }

    #[test]
    fn execute_family_explicit_and_fit() {
        let s = base_spec(
            PredictorSpec::Canonical { v: 3.0 },
            SweepAxis::PromptLen,
            vec![50.0, 100.0],
        );
        let out = execute(&s).unwrap();
        assert!(out
            .rows
            .iter()
            .all(|r| r.estimate.is_some() && r.z.is_some()));

        let s = base_spec(
            PredictorSpec::Single {
                a: vec![
                    vec![1.0 / 3.0, 0.0, 0.0],
                    vec![0.0, 1.0 / 3.0, 0.0],
                    vec![0.0, 0.0, 1.0 / 3.0],
                ],
                b: vec![0.0; 3],
                v: 3.0,
                u: vec![0.0; 3],
            },
            SweepAxis::PromptLen,
            vec![50.0],
        );
        let out = execute(&s).unwrap();
        assert!(out.rows[0].estimate.is_some() && out.rows[0].theory.is_none());

        let mut s = base_spec(
            PredictorSpec::Fit {
                v: 3.0,
                lr: 0.05,
                steps: 20,
                batch: 8,
                init_scale: 0.0,
            },
            SweepAxis::PromptLen,
            vec![50.0],
        );
        s.gate = Some(Gate::FitDistance {
            max: 100.0,
            rows: GateRows::All,
        });
        let out = execute(&s).unwrap();
        assert!(out.rows[0].fit_distance.is_some());
        assert!(out.gate.unwrap().passed);
    }

    #[test]
    fn analyses() {
        let mut s = base_spec(
            PredictorSpec::Canonical { v: 3.0 },
            SweepAxis::PromptLen,
            vec![50.0, 100.0, 200.0],
        );
        s.n_reps = 0;
        s.analysis = Some(Analysis::DecaySlope);
        let a = execute(&s).unwrap().analysis.unwrap();
        assert!((a["theory_slope"].as_f64().unwrap() + 1.0).abs() < 1e-9);

        let mut s = base_spec(
            PredictorSpec::TwoHead { v: 3.0, c: 1.0 },
            SweepAxis::C,
            vec![0.9, 1.0],
        );
        s.n_reps = 0;
        s.analysis = Some(Analysis::CurvatureC1);
        let a = execute(&s).unwrap().analysis.unwrap();
        assert!(a["closed_form"].as_f64().unwrap() < 0.0);
    }

    #[test]
    fn warns_near_singular_boundary() {
        let mut s = base_spec(
            PredictorSpec::Canonical { v: 3.0 },
            SweepAxis::V,
            vec![1.43, 3.0],
        );
        s.n_reps = 0;
        let out = execute(&s).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }
}
