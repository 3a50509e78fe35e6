//! Monte-Carlo estimation of the prediction loss and comparison with theory.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{two_head_from_c, Predictor, SingleHeadParams};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngStream};
use crate::scenario::{sample_prompt, sample_theta, Prompt, ScenarioConfig, Variant, Whitener};
use crate::theory::{self, TheoryValue};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_reps: u64,
    pub master_seed: u64,
}

/// One-pass mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; `NaN` below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Repetitions per accumulation block. Blocks are the unit of parallel work
/// and are merged in index order, so results do not depend on thread count.
const BLOCK: u64 = 512;

/// Mean squared error over `n_reps` repetitions; repetition `k` draws from
/// stream `k` of `master_seed` via `draw`.
pub fn mc_loss_with_sampler<F>(
    predictor: &Predictor,
    n_reps: u64,
    master_seed: u64,
    draw: F,
) -> Result<LossEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Prompt> + Sync,
{
    if n_reps < 2 {
        return Err(Error::Estimate(format!(
            "need at least 2 repetitions, got {n_reps}"
        )));
    }
    let blocks: Vec<Welford> = (0..n_reps.div_ceil(BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut acc = Welford::default();
            for k in blk * BLOCK..((blk + 1) * BLOCK).min(n_reps) {
                let mut rng = RngStream::new(master_seed, k).rng();
                let prompt = draw(&mut rng)?;
                let err = predictor.predict(&prompt)? - prompt.y_q;
                acc.push(err * err);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = Welford::default();
    for b in &blocks {
        total.merge(b);
    }
    Ok(LossEstimate {
        mean: total.mean(),
        stderr: total.stderr(),
        n_reps,
        master_seed,
    })
}

pub fn mc_loss(
    config: &ScenarioConfig,
    predictor: &Predictor,
    n_reps: u64,
    master_seed: u64,
    whiten: bool,
) -> Result<LossEstimate> {
    if predictor.d() != config.d() {
        return Err(Error::Shape(format!(
            "predictor has d={} but scenario has d={}",
            predictor.d(),
            config.d()
        )));
    }
    let whitener = match (whiten, config.variant()) {
        (false, _) => None,
        (true, Variant::Correlated) => Some(Whitener::new(config.sigma_cov())?),
        (true, v) => {
            return Err(Error::InvalidScenario(format!(
                "whitening needs the correlated variant, not {}",
                v.name()
            )))
        }
    };
    mc_loss_with_sampler(predictor, n_reps, master_seed, |rng| {
        let theta = sample_theta(config, rng);
        let prompt = sample_prompt(config, &theta, rng)?;
        match &whitener {
            Some(w) => w.apply(&prompt),
            None => Ok(prompt),
        }
    })
}

pub fn z_score(estimate: &LossEstimate, theory: &TheoryValue) -> Result<f64> {
    if !theory.valid {
        return Err(Error::Estimate(
            "theory value is outside its finiteness region".into(),
        ));
    }
    if !(estimate.stderr > 0.0) {
        return Err(Error::Estimate(format!(
            "stderr must be positive, got {}",
            estimate.stderr
        )));
    }
    Ok((estimate.mean - theory.value) / estimate.stderr)
}

/// Least-squares slope of `ln(mean)` against `ln(D)`.
pub fn decay_slope(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Estimate(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let mut ds: Vec<usize> = points.iter().map(|p| p.0).collect();
    ds.sort_unstable();
    ds.dedup();
    if ds.len() != points.len() || ds[0] == 0 {
        return Err(Error::Estimate(
            "prompt lengths must be distinct and positive".into(),
        ));
    }
    if let Some((_, m)) = points.iter().find(|p| !(p.1 > 0.0)) {
        return Err(Error::Estimate(format!("means must be positive, got {m}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "v")]
    V,
    #[serde(rename = "c")]
    C,
    #[serde(rename = "D")]
    PromptLen,
    #[serde(rename = "d")]
    Dim,
    #[serde(rename = "sigma_eps")]
    SigmaEps,
    #[serde(rename = "sigma_x")]
    SigmaX,
    #[serde(rename = "prior_scale")]
    PriorScale,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::V => "v",
            SweepAxis::C => "c",
            SweepAxis::PromptLen => "D",
            SweepAxis::Dim => "d",
            SweepAxis::SigmaEps => "sigma_eps",
            SweepAxis::SigmaX => "sigma_x",
            SweepAxis::PriorScale => "prior_scale",
        }
    }
}

/// Predictors parameterised by scalars so a sweep can vary them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorFamily {
    /// `A = I/v`, `b = 0`, `u = 0`.
    Canonical { v: f64 },
    /// The `(2, 1)` two-head predictor.
    TwoHead { v: f64, c: f64 },
    /// `A = a_scale·I`, `b = 0`, `u = 0`.
    Fixed { a_scale: f64, v: f64 },
}

impl PredictorFamily {
    pub fn v(&self) -> f64 {
        match *self {
            PredictorFamily::Canonical { v }
            | PredictorFamily::TwoHead { v, .. }
            | PredictorFamily::Fixed { v, .. } => v,
        }
    }

    fn with_v(self, v: f64) -> Self {
        match self {
            PredictorFamily::Canonical { .. } => PredictorFamily::Canonical { v },
            PredictorFamily::TwoHead { c, .. } => PredictorFamily::TwoHead { v, c },
            PredictorFamily::Fixed { a_scale, .. } => PredictorFamily::Fixed { a_scale, v },
        }
    }

    pub fn build(&self, d: usize) -> Result<Predictor> {
        Ok(match *self {
            PredictorFamily::Canonical { v } => {
                Predictor::Single(SingleHeadParams::canonical(d, v))
            }
            PredictorFamily::TwoHead { v, c } => Predictor::multi(two_head_from_c(c, v, d)?),
            PredictorFamily::Fixed { a_scale, v } => {
                Predictor::Single(SingleHeadParams::scaled_identity(d, a_scale, v))
            }
        })
    }

    /// Closed-form loss matching this predictor on `config`, if one exists.
    pub fn theory(&self, config: &ScenarioConfig, whiten: bool) -> Option<TheoryValue> {
        let (d, n) = (config.d(), config.prompt_len());
        let c = match *self {
            PredictorFamily::Canonical { .. } => None,
            PredictorFamily::TwoHead { c, .. } => Some(c),
            PredictorFamily::Fixed { .. } => return None,
        };
        let v = self.v();
        let iso = |energy: f64| -> TheoryValue {
            let t = match c {
                Some(c) => theory::loss_multi(d, n, v, c),
                None => theory::loss_single(d, n, v),
            };
            t.scaled(energy)
        };
        match config.variant() {
            Variant::Base => Some(iso(1.0)),
            Variant::Prior => Some(theory::loss_prior(
                d,
                n,
                v,
                config.theta0(),
                config.sigma_prior(),
                c,
            )),
            Variant::Noisy => Some(match c {
                Some(c) => theory::loss_multi_noisy(d, n, v, c, config.sigma_eps()),
                None => theory::loss_single_noisy(d, n, v, config.sigma_eps()),
            }),
            // Whitened inputs are isotropic with θ ↦ Σ^{1/2}θ, so the loss
            // scales by E‖Σ^{1/2}θ‖² = tr(Σ)/d.
            Variant::Correlated if whiten => Some(iso(config.sigma_cov().trace() / d as f64)),
            Variant::LocalShifted if c.is_none() => Some(TheoryValue::exact(
                theory::shifted_local_limit(v, config.sigma_x()),
            )),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub estimate: Option<LossEstimate>,
    pub theory: Option<TheoryValue>,
    /// `None` on success, otherwise the row's error.
    pub error: Option<String>,
}

impl SweepRow {
    /// z-score against theory when both sides are usable.
    pub fn z(&self) -> Option<f64> {
        z_score(self.estimate.as_ref()?, self.theory.as_ref()?).ok()
    }
}

fn integer_value(axis: SweepAxis, value: f64) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value < u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::Domain(format!(
            "{} must be a positive integer, got {value}",
            axis.name()
        )))
    }
}

/// Applies one axis value to the template.
pub fn apply_axis(
    config: &ScenarioConfig,
    family: &PredictorFamily,
    axis: SweepAxis,
    value: f64,
) -> Result<(ScenarioConfig, PredictorFamily)> {
    let mut cfg = config.clone();
    let mut fam = *family;
    match axis {
        SweepAxis::V => fam = fam.with_v(value),
        SweepAxis::C => match fam {
            PredictorFamily::TwoHead { v, .. } => fam = PredictorFamily::TwoHead { v, c: value },
            _ => {
                return Err(Error::Domain(
                    "a c sweep needs the two-head predictor".into(),
                ))
            }
        },
        SweepAxis::PromptLen => cfg = cfg.with_prompt_len(integer_value(axis, value)?)?,
        SweepAxis::Dim => cfg = cfg.with_dim(integer_value(axis, value)?)?,
        SweepAxis::SigmaEps => cfg = cfg.with_sigma_eps(value)?,
        SweepAxis::SigmaX => cfg = cfg.with_sigma_x(value)?,
        SweepAxis::PriorScale => cfg = cfg.with_prior_scale(value)?,
    }
    Ok((cfg, fam))
}

/// One row per axis value, in order. Row `i` uses seed `derive_seed(seed, i)`;
/// `n_reps = 0` fills the theory column only.
pub fn sweep(
    config: &ScenarioConfig,
    family: &PredictorFamily,
    axis: SweepAxis,
    values: &[f64],
    n_reps: u64,
    seed: u64,
    whiten: bool,
) -> Vec<SweepRow> {
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let run = || -> Result<(Option<LossEstimate>, Option<TheoryValue>)> {
                let (cfg, fam) = apply_axis(config, family, axis, value)?;
                let theory = fam.theory(&cfg, whiten);
                let estimate = if n_reps == 0 {
                    None
                } else {
                    let p = fam.build(cfg.d())?;
                    Some(mc_loss(
                        &cfg,
                        &p,
                        n_reps,
                        derive_seed(seed, i as u64),
                        whiten,
                    )?)
                };
                Ok((estimate, theory))
            };
            match run() {
                Ok((estimate, theory)) => SweepRow {
                    value,
                    estimate,
                    theory,
                    error: None,
                },
                Err(e) => SweepRow {
                    value,
                    estimate: None,
                    theory: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Isotropic prompts whose task is `Σ^{1/2}θ`, the comparator for whitened
/// correlated prompts. Draws in the same order as [`mc_loss`].
pub fn isotropic_equivalent(
    config: &ScenarioConfig,
    predictor: &Predictor,
    n_reps: u64,
    master_seed: u64,
) -> Result<LossEstimate> {
    if config.variant() != Variant::Correlated {
        return Err(Error::InvalidScenario(
            "comparator needs a correlated scenario".into(),
        ));
    }
    let whitener = Whitener::new(config.sigma_cov())?;
    let base = ScenarioConfig::base(config.d(), config.prompt_len())?;
    mc_loss_with_sampler(predictor, n_reps, master_seed, |rng| {
        let theta: DVector<f64> = whitener.sqrt() * sample_theta(&base, rng);
        sample_prompt(&base, &theta, rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn zero_predictor(d: usize) -> Predictor {
        Predictor::Single(SingleHeadParams::scaled_identity(d, 0.0, 0.0))
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| ((i * 37) % 101) as f64 * 1e-3 + 1e6)
            .collect();
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert_relative_eq!(w.mean(), mean, max_relative = 1e-14);
        assert_relative_eq!(w.variance(), var, max_relative = 1e-8);
    }

    proptest! {
        #[test]
        fn welford_merge_matches_sequential(
            xs in prop::collection::vec(-100.0f64..100.0, 2..200),
            split in 0usize..200,
        ) {
            let split = split.min(xs.len());
            let mut all = Welford::default();
            xs.iter().for_each(|&x| all.push(x));
            let (mut a, mut b) = (Welford::default(), Welford::default());
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.count(), all.count());
            prop_assert!((a.mean() - all.mean()).abs() <= 1e-10 * (1.0 + all.mean().abs()));
            prop_assert!((a.variance() - all.variance()).abs() <= 1e-8 * (1.0 + all.variance()));
        }
    }

    #[test]
    fn zero_predictor_recovers_label_energy() {
        // ŷ ≡ 0, so the loss is E y_q² = 1 with Var(y_q²) = E y_q⁴ − 1.
        let d = 3;
        let cfg = ScenarioConfig::base(d, 4).unwrap();
        let n = 100_000;
        let est = mc_loss(&cfg, &zero_predictor(d), n, 11, false).unwrap();
        assert!((est.mean - 1.0).abs() <= 3.0 * est.stderr, "{est:?}");

        // Independent brute-force draw of y_q = θᵀx_q.
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        let mut w = Welford::default();
        for _ in 0..n {
            let y: f64 = (0..d)
                .map(|_| {
                    let t: f64 = StandardNormal.sample(&mut rng);
                    let x: f64 = StandardNormal.sample(&mut rng);
                    t / (d as f64).sqrt() * x
                })
                .sum();
            w.push(y * y);
        }
        assert_relative_eq!(est.stderr, w.stderr(), max_relative = 0.1);
    }

    #[test]
    fn canonical_matches_theory() {
        let cfg = ScenarioConfig::base(5, 1000).unwrap();
        let p = PredictorFamily::Canonical { v: 3.0 };
        let est = mc_loss(&cfg, &p.build(5).unwrap(), 20_000, 5, false).unwrap();
        let z = z_score(&est, &p.theory(&cfg, false).unwrap()).unwrap();
        assert!(z.abs() <= 4.0, "z={z} {est:?}");
    }

    #[test]
    fn identical_neighbours_give_inverse_square_loss() {
        // ŷ = D/(D+1)·y_q exactly, so the loss is y_q²/(D+1)².
        let cfg = ScenarioConfig::local(4, 100, 0.0).unwrap();
        let p = Predictor::Single(SingleHeadParams::scaled_identity(4, 0.0, 1.0));
        let est = mc_loss(&cfg, &p, 4000, 3, false).unwrap();
        assert!(est.mean < 1e-3);
        assert!((est.mean - 1.0 / 101f64.powi(2)).abs() <= 4.0 * est.stderr);
    }

    #[test]
    fn bit_identical_across_thread_counts() {
        let cfg = ScenarioConfig::base(3, 50).unwrap();
        let p = PredictorFamily::TwoHead { v: 2.5, c: 0.4 }
            .build(3)
            .unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_loss(&cfg, &p, 3000, 77, false).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(3));
        assert_eq!(one, run(1));
    }

    #[test]
    fn input_errors() {
        let cfg = ScenarioConfig::base(3, 10).unwrap();
        assert!(matches!(
            mc_loss(&cfg, &zero_predictor(4), 10, 0, false),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            mc_loss(&cfg, &zero_predictor(3), 10, 0, true),
            Err(Error::InvalidScenario(_))
        ));
        assert!(mc_loss(&cfg, &zero_predictor(3), 1, 0, false).is_err());
    }

    #[test]
    fn noisy_floor_holds() {
        for sigma in [0.5, 1.0] {
            let cfg = ScenarioConfig::noisy(3, 200, sigma).unwrap();
            for fam in [
                PredictorFamily::Canonical { v: 3.0 },
                PredictorFamily::TwoHead { v: 3.0, c: 0.3 },
                PredictorFamily::Fixed {
                    a_scale: 0.0,
                    v: 1.0,
                },
            ] {
                let est = mc_loss(&cfg, &fam.build(3).unwrap(), 5000, 2, false).unwrap();
                assert!(est.mean > sigma * sigma, "{fam:?}: {est:?}");
            }
        }
    }

    #[test]
    fn z_score_examples() {
        let t = TheoryValue::exact(0.5);
        let est = |mean, stderr| LossEstimate {
            mean,
            stderr,
            n_reps: 10,
            master_seed: 0,
        };
        assert_eq!(z_score(&est(0.5, 1.0), &t).unwrap(), 0.0);
        assert_abs_diff_eq!(
            z_score(&est(0.5 + 2.0 * 0.1, 0.1), &t).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert!(z_score(&est(0.5, 0.0), &t).is_err());
        assert!(z_score(&est(0.5, 1.0), &theory::loss_single(5, 10, 1.0)).is_err());
    }

    #[test]
    fn decay_slope_examples() {
        let pts: Vec<(usize, f64)> = [250, 500, 1000, 2000]
            .iter()
            .map(|&n| (n, theory::loss_single(5, n, 3.0).value))
            .collect();
        assert_abs_diff_eq!(decay_slope(&pts).unwrap(), -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            decay_slope(&[(1, 2.0), (2, 2.0), (4, 2.0)]).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert!(decay_slope(&[(1, 2.0), (2, 0.0), (4, 2.0)]).is_err());
        assert!(decay_slope(&[(1, 2.0), (2, 1.0)]).is_err());
        assert!(decay_slope(&[(1, 2.0), (1, 1.0), (4, 2.0)]).is_err());
    }

    #[test]
    fn theory_sweeps_have_the_expected_shape() {
        let cfg = ScenarioConfig::base(5, 1000).unwrap();
        let vs: Vec<f64> = (0..=84).map(|i| 1.6 + 0.1 * i as f64).collect();
        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::V,
            &vs,
            0,
            1,
            false,
        );
        let losses: Vec<f64> = rows.iter().map(|r| r.theory.unwrap().value).collect();
        let argmin = losses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!(argmin > 0 && argmin < vs.len() - 1);

        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::Dim,
            &[2.0, 5.0, 10.0, 20.0],
            0,
            1,
            false,
        );
        assert!(rows
            .windows(2)
            .all(|w| w[0].theory.unwrap().value < w[1].theory.unwrap().value));

        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::PromptLen,
            &[250.0, 500.0, 1000.0],
            0,
            1,
            false,
        );
        assert!(rows
            .windows(2)
            .all(|w| w[0].theory.unwrap().value > w[1].theory.unwrap().value));
    }

    #[test]
    fn mc_sweep_decreases_in_prompt_len() {
        let cfg = ScenarioConfig::base(3, 100).unwrap();
        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::PromptLen,
            &[50.0, 400.0],
            4000,
            9,
            false,
        );
        let means: Vec<f64> = rows.iter().map(|r| r.estimate.unwrap().mean).collect();
        assert!(means[0] > means[1]);
        assert!(rows.iter().all(|r| r.z().is_some()));
    }

    #[test]
    fn sweep_records_row_errors() {
        let cfg = ScenarioConfig::base(3, 100).unwrap();
        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::C,
            &[0.5],
            10,
            1,
            false,
        );
        assert!(rows[0].error.is_some());
        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::PromptLen,
            &[10.5, 20.0],
            0,
            1,
            false,
        );
        assert!(rows[0].error.is_some());
        assert!(rows[1].error.is_none());
    }

    #[test]
    fn rows_use_independent_seeds() {
        let cfg = ScenarioConfig::base(2, 20).unwrap();
        let rows = sweep(
            &cfg,
            &PredictorFamily::Canonical { v: 3.0 },
            SweepAxis::V,
            &[3.0, 3.0],
            100,
            4,
            false,
        );
        assert_ne!(
            rows[0].estimate.unwrap().mean,
            rows[1].estimate.unwrap().mean
        );
    }

    #[test]
    fn correlated_theory_uses_trace() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let cfg = ScenarioConfig::correlated(2, 100, &sigma).unwrap();
        let fam = PredictorFamily::Canonical { v: 3.0 };
        assert!(fam.theory(&cfg, false).is_none());
        let t = fam.theory(&cfg, true).unwrap();
        assert_relative_eq!(
            t.value,
            1.5 * theory::loss_single(2, 100, 3.0).value,
            max_relative = 1e-14
        );
    }
}
