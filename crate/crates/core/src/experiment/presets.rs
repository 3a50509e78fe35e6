//! Named experiment grids. Axis ranges approximate the reference figures and
//! are recorded verbatim in each run's metadata.

use nalgebra::DMatrix;

use super::spec::{Analysis, ExperimentSpec, Gate, GateRows, Outputs, PredictorSpec, SweepSpec};
use crate::error::{Error, Result};
use crate::estimator::SweepAxis;
use crate::scenario::ScenarioConfig;

pub const DEFAULT_REPS: u64 = 200_000;
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Command-line overrides; each preset reads the ones it uses.
#[derive(Debug, Clone, Copy, Default)]
pub struct PresetParams {
    pub v: Option<f64>,
    pub c: Option<f64>,
    pub sigma_x2: Option<f64>,
    pub sigma_eps: Option<f64>,
    pub prompt_len: Option<usize>,
    pub d: Option<usize>,
}

pub struct PresetInfo {
    pub name: &'static str,
    pub reproduces: &'static str,
    /// Rough single-core wall time at the default repetition count.
    pub runtime: &'static str,
}

pub const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "fig1",
        reproduces: "single-head loss vs v at d in {5,10,20} (U-shape)",
        runtime: "~10 min",
    },
    PresetInfo {
        name: "fig2",
        reproduces: "single-head loss vs D, O(1/D) decay",
        runtime: "~2 min",
    },
    PresetInfo {
        name: "fig3",
        reproduces: "two-head loss vs c against the single head",
        runtime: "~4 min",
    },
    PresetInfo {
        name: "prior-scale",
        reproduces: "loss scales with |theta0|^2 + sigma^2 under a prior",
        runtime: "~2 min",
    },
    PresetInfo {
        name: "noisy",
        reproduces: "label noise adds sigma_eps^2 plus O(1/D)",
        runtime: "~1 min",
    },
    PresetInfo {
        name: "correlated-equiv",
        reproduces: "whitened correlated inputs match isotropic with Sigma^(1/2) theta",
        runtime: "~2 min",
    },
    PresetInfo {
        name: "local",
        reproduces: "local examples: loss shrinks with sigma_x^2",
        runtime: "~1 min",
    },
    PresetInfo {
        name: "shifted-local",
        reproduces: "distribution shift: loss tends to (sigma_x^2 + v - 1)^2",
        runtime: "~1 min",
    },
    PresetInfo {
        name: "fit-singlehead",
        reproduces: "SGD recovers A = I/v, b = 0",
        runtime: "~1 min",
    },
    PresetInfo {
        name: "curvature-c1",
        reproduces: "two-head loss is locally concave at c = 1",
        runtime: "~2 min",
    },
];

/// Presets whose name contains `filter` (all when empty).
pub fn list(filter: &str) -> Vec<&'static PresetInfo> {
    PRESETS.iter().filter(|p| p.name.contains(filter)).collect()
}

fn spec(
    name: impl Into<String>,
    config: ScenarioConfig,
    predictor: PredictorSpec,
    axis: SweepAxis,
    values: Vec<f64>,
) -> ExperimentSpec {
    ExperimentSpec {
        name: name.into(),
        config,
        predictor,
        sweep: SweepSpec { axis, values },
        n_reps: DEFAULT_REPS,
        master_seed: DEFAULT_SEED,
        whiten: false,
        gate: None,
        analysis: None,
        outputs: Outputs::default(),
    }
}

/// Fixed non-diagonal SPD covariance for the correlated preset.
pub fn correlated_sigma(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| {
        let base = 0.5f64.powi((i as i32 - j as i32).abs());
        if i == j {
            base * (0.5 + i as f64 * 0.25)
        } else {
            base * 0.6
        }
    })
}

pub fn build(name: &str, p: &PresetParams) -> Result<Vec<ExperimentSpec>> {
    let v = p.v.unwrap_or(3.0);
    let d = p.d.unwrap_or(5);
    let n = p.prompt_len.unwrap_or(1000);
    let specs = match name {
        "fig1" => {
            let dims = p.d.map_or(vec![5, 10, 20], |d| vec![d]);
            let vs = vec![
                1.6, 1.8, 2.0, 2.25, 2.5, 2.75, 3.0, 3.5, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0,
            ];
            dims.into_iter()
                .map(|d| {
                    Ok(spec(
                        format!("fig1-d{d}"),
                        ScenarioConfig::base(d, n)?,
                        PredictorSpec::Canonical { v },
                        SweepAxis::V,
                        vs.clone(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        }
        "fig2" => {
            let mut s = spec(
                "fig2",
                ScenarioConfig::base(d, n)?,
                PredictorSpec::Canonical { v },
                SweepAxis::PromptLen,
                vec![250.0, 500.0, 1000.0, 1500.0, 2000.0],
            );
            s.analysis = Some(Analysis::DecaySlope);
            vec![s]
        }
        "fig3" => {
            let cs = (1..=20).map(|i| i as f64 * 0.05).collect();
            let mut s = spec(
                "fig3",
                ScenarioConfig::base(d, n)?,
                PredictorSpec::TwoHead {
                    v,
                    c: p.c.unwrap_or(1.0),
                },
                SweepAxis::C,
                cs,
            );
            s.n_reps = 100_000;
            s.analysis = Some(Analysis::OptimalC);
            vec![s]
        }
        "prior-scale" => {
            let mut theta0 = vec![0.0; d];
            theta0[0] = 1.0;
            vec![spec(
                "prior-scale",
                ScenarioConfig::prior(d, n, &theta0, 1.0)?,
                PredictorSpec::Canonical { v },
                SweepAxis::PriorScale,
                vec![0.0, 0.5, 1.0, 1.5, 2.0],
            )]
        }
        "noisy" => {
            let values = p.sigma_eps.map_or(vec![0.5, 1.0], |s| vec![s]);
            let mut s = spec(
                "noisy",
                ScenarioConfig::noisy(d, n, values[0])?,
                PredictorSpec::Canonical { v },
                SweepAxis::SigmaEps,
                values,
            );
            s.gate = Some(Gate::ZScore {
                max_abs: 4.0,
                rows: GateRows::All,
            });
            vec![s]
        }
        "correlated-equiv" => {
            let mut s = spec(
                "correlated-equiv",
                ScenarioConfig::correlated(d, n, &correlated_sigma(d))?,
                PredictorSpec::Canonical { v },
                SweepAxis::PromptLen,
                vec![500.0, 1000.0],
            );
            s.n_reps = 100_000;
            s.whiten = true;
            s.analysis = Some(Analysis::IsotropicEquivalent);
            vec![s]
        }
        "local" => {
            let values = match p.sigma_x2 {
                Some(s2) => vec![s2.sqrt()],
                None => vec![1.0, 0.1, 0.01],
            };
            let mut s = spec(
                "local",
                ScenarioConfig::local(d, n, values[0])?,
                PredictorSpec::Fixed {
                    a_scale: 0.0,
                    v: p.v.unwrap_or(1.0),
                },
                SweepAxis::SigmaX,
                values,
            );
            s.n_reps = 20_000;
            vec![s]
        }
        "shifted-local" => {
            let last = p.prompt_len.unwrap_or(5000);
            let mut values: Vec<f64> = [500.0, 1000.0, 2000.0]
                .into_iter()
                .filter(|&x| x < last as f64)
                .collect();
            values.push(last as f64);
            let sigma_x = p.sigma_x2.unwrap_or(1.0).sqrt();
            let mut s = spec(
                "shifted-local",
                ScenarioConfig::local_shifted(d, last, sigma_x)?,
                PredictorSpec::Canonical { v },
                SweepAxis::PromptLen,
                values,
            );
            s.n_reps = 20_000;
            s.gate = Some(Gate::Relative {
                tol: 0.1,
                rows: GateRows::Last,
            });
            vec![s]
        }
        "fit-singlehead" => {
            let d = p.d.unwrap_or(2);
            let n = p.prompt_len.unwrap_or(200);
            // Three rows at the same D: independent fits under distinct row seeds.
            let mut s = spec(
                "fit-singlehead",
                ScenarioConfig::base(d, n)?,
                PredictorSpec::Fit {
                    v,
                    lr: 0.05,
                    steps: 2000,
                    batch: 256,
                    init_scale: 0.0,
                },
                SweepAxis::PromptLen,
                vec![n as f64; 3],
            );
            s.n_reps = 20_000;
            s.gate = Some(Gate::FitDistance {
                max: 0.15,
                rows: GateRows::All,
            });
            vec![s]
        }
        "curvature-c1" => {
            let cs = (0..=8).map(|i| 0.8 + 0.05 * i as f64).collect();
            let mut s = spec(
                "curvature-c1",
                ScenarioConfig::base(d, n)?,
                PredictorSpec::TwoHead { v, c: 1.0 },
                SweepAxis::C,
                cs,
            );
            s.n_reps = 50_000;
            s.analysis = Some(Analysis::CurvatureC1);
            vec![s]
        }
        other => return Err(Error::Experiment(format!("unknown preset {other:?}"))),
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}
