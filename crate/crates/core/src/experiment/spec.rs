use serde::{Deserialize, Serialize};

use crate::attention::{GeneralHeads, Head, Predictor, SingleHeadParams};
use crate::error::{Error, Result};
use crate::estimator::{PredictorFamily, SweepAxis};
use crate::scenario::ScenarioConfig;

/// A complete, serialisable experiment: one sweep plus its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: ScenarioConfig,
    pub predictor: PredictorSpec,
    pub sweep: SweepSpec,
    pub n_reps: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub whiten: bool,
    #[serde(default)]
    pub gate: Option<Gate>,
    #[serde(default)]
    pub analysis: Option<Analysis>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorSpec {
    /// `A = I/v`, `b = 0`, `u = 0`.
    Canonical { v: f64 },
    /// `(2, 1)` two-head predictor.
    TwoHead { v: f64, c: f64 },
    /// `A = a_scale·I`, `b = 0`, `u = 0`.
    Fixed { a_scale: f64, v: f64 },
    /// Explicit single head; `a` is row-major.
    Single {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        v: f64,
        u: Vec<f64>,
    },
    /// Explicit signed heads sharing `u`.
    General { heads: Vec<HeadSpec>, u: Vec<f64> },
    /// Fit `(A, b)` by SGD from `A = init_scale·I`, `b = 0`, then evaluate.
    Fit {
        v: f64,
        lr: f64,
        steps: usize,
        batch: usize,
        #[serde(default)]
        init_scale: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateRows {
    #[default]
    All,
    Last,
}

/// Pass/fail rule; a failing gate makes the run exit with status 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Gate {
    /// `|z| ≤ max_abs` against the theory column.
    ZScore {
        max_abs: f64,
        #[serde(default)]
        rows: GateRows,
    },
    /// `|mean − theory| ≤ tol·|theory|`.
    Relative {
        tol: f64,
        #[serde(default)]
        rows: GateRows,
    },
    /// Fitted `distance_to_theory ≤ max` (fit predictors only).
    FitDistance {
        max: f64,
        #[serde(default)]
        rows: GateRows,
    },
}

/// Extra whole-sweep summaries recorded in the metadata file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    /// Log-log slope of the MC means over a `D` sweep.
    DecaySlope,
    /// Theory-optimal `c` for the two-head predictor.
    OptimalC,
    /// Closed-form and finite-difference curvature of the two-head loss at `c = 1`.
    CurvatureC1,
    /// MC loss of isotropic prompts with task `Σ^{1/2}θ`, per row.
    IsotropicEquivalent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// File names relative to the output directory; empty means `<name>.<ext>`.
    #[serde(default)]
    pub csv: String,
    #[serde(default)]
    pub metadata: String,
    #[serde(default = "default_true")]
    pub plot: bool,
}

fn default_true() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            csv: String::new(),
            metadata: String::new(),
            plot: true,
        }
    }
}

impl Outputs {
    pub fn csv_name(&self, name: &str) -> String {
        or_default(&self.csv, name, "csv")
    }

    pub fn metadata_name(&self, name: &str) -> String {
        or_default(&self.metadata, name, "json")
    }
}

fn or_default(given: &str, name: &str, ext: &str) -> String {
    if given.is_empty() {
        format!("{name}.{ext}")
    } else {
        given.to_string()
    }
}

fn matrix(rows: &[Vec<f64>], d: usize, what: &str) -> Result<nalgebra::DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape(format!("{what} must be {d}x{d}")));
    }
    Ok(nalgebra::DMatrix::from_row_iterator(
        d,
        d,
        rows.iter().flatten().copied(),
    ))
}

impl PredictorSpec {
    /// The sweepable family behind this spec, if any.
    pub fn family(&self) -> Option<PredictorFamily> {
        match *self {
            PredictorSpec::Canonical { v } => Some(PredictorFamily::Canonical { v }),
            PredictorSpec::TwoHead { v, c } => Some(PredictorFamily::TwoHead { v, c }),
            PredictorSpec::Fixed { a_scale, v } => Some(PredictorFamily::Fixed { a_scale, v }),
            _ => None,
        }
    }

    /// Builds an explicit predictor (`Single` or `General`) for dimension `d`.
    pub fn explicit(&self, d: usize) -> Result<Predictor> {
        match self {
            PredictorSpec::Single { a, b, v, u } => Ok(Predictor::Single(SingleHeadParams::new(
                matrix(a, d, "A")?,
                nalgebra::DVector::from_column_slice(b),
                *v,
                nalgebra::DVector::from_column_slice(u),
            )?)),
            PredictorSpec::General { heads, u } => {
                let heads = heads
                    .iter()
                    .map(|h| {
                        Ok(Head {
                            a: matrix(&h.a, d, "head A")?,
                            b: nalgebra::DVector::from_column_slice(&h.b),
                            weight: h.weight,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let heads = GeneralHeads::new(heads)?;
                let u = nalgebra::DVector::from_column_slice(u);
                if u.len() != d || heads.d() != d {
                    return Err(Error::Shape(format!("heads and u must have d={d}")));
                }
                Ok(Predictor::Multi { heads, u })
            }
            _ => Err(Error::Experiment("predictor is not explicit".into())),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Experiment(format!(
                "invalid experiment name {:?}",
                self.name
            )));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Experiment("sweep needs at least one value".into()));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Experiment("sweep values must be finite".into()));
        }
        if self.n_reps == 1 {
            return Err(Error::Experiment(
                "n_reps must be 0 (theory only) or at least 2".into(),
            ));
        }
        let axis = self.sweep.axis;
        let predictor_axis = matches!(axis, SweepAxis::V | SweepAxis::C | SweepAxis::Dim);
        match &self.predictor {
            PredictorSpec::Single { .. } | PredictorSpec::General { .. } => {
                if predictor_axis {
                    return Err(Error::Experiment(format!(
                        "explicit predictors cannot sweep {}",
                        axis.name()
                    )));
                }
                self.predictor.explicit(self.config.d())?;
            }
            PredictorSpec::Fit {
                lr, steps, batch, ..
            } => {
                if matches!(axis, SweepAxis::C) {
                    return Err(Error::Experiment(
                        "a fitted predictor cannot sweep c".into(),
                    ));
                }
                if !(*lr > 0.0) || *steps == 0 || *batch == 0 {
                    return Err(Error::Experiment(
                        "fit needs lr > 0, steps > 0, batch > 0".into(),
                    ));
                }
            }
            PredictorSpec::TwoHead { .. }
            | PredictorSpec::Canonical { .. }
            | PredictorSpec::Fixed { .. } => {
                if matches!(axis, SweepAxis::C)
                    && !matches!(self.predictor, PredictorSpec::TwoHead { .. })
                {
                    return Err(Error::Experiment(
                        "a c sweep needs the two-head predictor".into(),
                    ));
                }
            }
        }
        if self.whiten && self.config.variant() != crate::scenario::Variant::Correlated {
            return Err(Error::Experiment(
                "whiten needs the correlated variant".into(),
            ));
        }
        if matches!(self.gate, Some(Gate::FitDistance { .. }))
            && !matches!(self.predictor, PredictorSpec::Fit { .. })
        {
            return Err(Error::Experiment(
                "fit_distance gate needs a fit predictor".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentSpec {
        ExperimentSpec {
            name: "demo".into(),
            config: ScenarioConfig::noisy(3, 100, 0.5).unwrap(),
            predictor: PredictorSpec::TwoHead { v: 3.0, c: 0.4 },
            sweep: SweepSpec {
                axis: SweepAxis::SigmaEps,
                values: vec![0.1, 0.5, 1.0 / 3.0],
            },
            n_reps: 1000,
            master_seed: u64::MAX,
            whiten: false,
            gate: Some(Gate::ZScore {
                max_abs: 4.0,
                rows: GateRows::Last,
            }),
            analysis: Some(Analysis::OptimalC),
            outputs: Outputs::default(),
        }
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let spec = sample();
        let back = ExperimentSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);

        let explicit = ExperimentSpec {
            predictor: PredictorSpec::General {
                heads: vec![HeadSpec {
                    a: vec![
                        vec![0.1, 0.2, 0.0],
                        vec![0.0, 1.0, 0.0],
                        vec![0.0, 0.0, 1e-300],
                    ],
                    b: vec![0.0, 0.5, -0.25],
                    weight: -1.5,
                }],
                u: vec![0.0, 0.1, 0.2],
            },
            ..spec
        };
        let back = ExperimentSpec::from_json(&explicit.to_json().unwrap()).unwrap();
        assert_eq!(explicit, back);
    }

    #[test]
    fn validation_rejects_inconsistent_specs() {
        let mut s = sample();
        s.sweep.values.clear();
        assert!(s.validate().is_err());

        let mut s = sample();
        s.predictor = PredictorSpec::Canonical { v: 3.0 };
        s.sweep.axis = SweepAxis::C;
        assert!(s.validate().is_err());

        let mut s = sample();
        s.whiten = true;
        assert!(s.validate().is_err());

        let mut s = sample();
        s.gate = Some(Gate::FitDistance {
            max: 0.1,
            rows: GateRows::All,
        });
        assert!(s.validate().is_err());

        let mut s = sample();
        s.name = "../x".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(ExperimentSpec::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn explicit_predictor_shapes_are_checked() {
        let p = PredictorSpec::Single {
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            b: vec![0.0, 0.0],
            v: 1.0,
            u: vec![0.0, 0.0],
        };
        assert!(p.explicit(2).is_ok());
        assert!(p.explicit(3).is_err());
    }
}
