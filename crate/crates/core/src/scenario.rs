//! Task and prompt generation for every data regime.
//!
//! A prompt holds `D` in-context pairs `(x_i, y_i)` stored as the columns of a
//! `d × D` matrix, plus the query `x_q` whose label `y_q` is only used for
//! scoring. Task coefficients are drawn per prompt.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `x ~ N(0, I)`, `θ ~ N(0, I/d)`, noiseless labels.
    Base,
    /// `θ = θ₀ + N(0, σ² I/d)` with a prompt-independent mean `θ₀`.
    Prior,
    /// Labels carry `N(0, σ_ε²)` noise, including the query label.
    Noisy,
    /// `x ~ N(0, Σ)`.
    Correlated,
    /// `x_q ~ N(0, I)`, then `x_i ~ N(x_q, σ_x² I)`.
    Local,
    /// Same generator as `Local`; paired with predictors fitted on `Base`.
    LocalShifted,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Prior => "prior",
            Variant::Noisy => "noisy",
            Variant::Correlated => "correlated",
            Variant::Local => "local",
            Variant::LocalShifted => "local_shifted",
        }
    }

    fn is_local(self) -> bool {
        matches!(self, Variant::Local | Variant::LocalShifted)
    }
}

/// Serialized form of [`ScenarioConfig`]. Optional fields default to the
/// values a variant that does not use them must hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub d: usize,
    #[serde(rename = "D")]
    pub prompt_len: usize,
    pub variant: Variant,
    #[serde(default)]
    pub sigma_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub sigma_prior: f64,
    /// Row-major `d × d` covariance; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sigma_x: f64,
}

fn one() -> f64 {
    1.0
}

/// A validated data-generation regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioSpec", into = "ScenarioSpec")]
pub struct ScenarioConfig {
    d: usize,
    prompt_len: usize,
    variant: Variant,
    sigma_eps: f64,
    theta0: DVector<f64>,
    sigma_prior: f64,
    sigma_cov: DMatrix<f64>,
    sigma_x: f64,
    /// Lower Cholesky factor of `sigma_cov`, kept only for `Correlated`.
    chol: Option<DMatrix<f64>>,
}

impl TryFrom<ScenarioSpec> for ScenarioConfig {
    type Error = Error;

    fn try_from(spec: ScenarioSpec) -> Result<Self> {
        let ScenarioSpec {
            d,
            prompt_len,
            variant,
            sigma_eps,
            theta0,
            sigma_prior,
            sigma_cov,
            sigma_x,
        } = spec;
        let bad = |msg: String| Err(Error::InvalidScenario(msg));

        if d == 0 || prompt_len == 0 {
            return bad(format!(
                "d and D must be positive (got d={d}, D={prompt_len})"
            ));
        }
        for (name, val) in [
            ("sigma_eps", sigma_eps),
            ("sigma_prior", sigma_prior),
            ("sigma_x", sigma_x),
        ] {
            if !(val.is_finite() && val >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative (got {val})"));
            }
        }
        if variant != Variant::Noisy && sigma_eps != 0.0 {
            return bad(format!(
                "sigma_eps is only meaningful for noisy (got {sigma_eps})"
            ));
        }
        if variant != Variant::Prior && sigma_prior != 1.0 {
            return bad(format!(
                "sigma_prior is only meaningful for prior (got {sigma_prior})"
            ));
        }
        if !variant.is_local() && sigma_x != 0.0 {
            return bad(format!(
                "sigma_x is only meaningful for local variants (got {sigma_x})"
            ));
        }

        let theta0 = match theta0 {
            Some(t) => {
                if t.len() != d {
                    return bad(format!("theta0 has length {}, expected {d}", t.len()));
                }
                if t.iter().any(|x| !x.is_finite()) {
                    return bad("theta0 must be finite".into());
                }
                if variant != Variant::Prior && t.iter().any(|&x| x != 0.0) {
                    return bad("theta0 is only meaningful for prior".into());
                }
                DVector::from_vec(t)
            }
            None => DVector::zeros(d),
        };

        let sigma_cov = match sigma_cov {
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return bad(format!("sigma_cov must be {d}x{d}"));
                }
                let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
                if variant != Variant::Correlated && m != DMatrix::identity(d, d) {
                    return bad("sigma_cov is only meaningful for correlated".into());
                }
                m
            }
            None => DMatrix::identity(d, d),
        };
        let chol = if variant == Variant::Correlated {
            Some(cholesky_factor(&sigma_cov)?)
        } else {
            None
        };

        Ok(Self {
            d,
            prompt_len,
            variant,
            sigma_eps,
            theta0,
            sigma_prior,
            sigma_cov,
            sigma_x,
            chol,
        })
    }
}

impl From<ScenarioConfig> for ScenarioSpec {
    fn from(c: ScenarioConfig) -> Self {
        let theta0 = (c.variant == Variant::Prior).then(|| c.theta0.as_slice().to_vec());
        let sigma_cov = (c.variant == Variant::Correlated).then(|| {
            (0..c.d)
                .map(|i| (0..c.d).map(|j| c.sigma_cov[(i, j)]).collect())
                .collect()
        });
        ScenarioSpec {
            d: c.d,
            prompt_len: c.prompt_len,
            variant: c.variant,
            sigma_eps: c.sigma_eps,
            theta0,
            sigma_prior: c.sigma_prior,
            sigma_cov,
            sigma_x: c.sigma_x,
        }
    }
}

impl ScenarioConfig {
    fn spec(d: usize, prompt_len: usize, variant: Variant) -> ScenarioSpec {
        ScenarioSpec {
            d,
            prompt_len,
            variant,
            sigma_eps: 0.0,
            theta0: None,
            sigma_prior: 1.0,
            sigma_cov: None,
            sigma_x: 0.0,
        }
    }

    pub fn base(d: usize, prompt_len: usize) -> Result<Self> {
        Self::try_from(Self::spec(d, prompt_len, Variant::Base))
    }

    pub fn noisy(d: usize, prompt_len: usize, sigma_eps: f64) -> Result<Self> {
        Self::try_from(ScenarioSpec {
            sigma_eps,
            ..Self::spec(d, prompt_len, Variant::Noisy)
        })
    }

    pub fn prior(d: usize, prompt_len: usize, theta0: &[f64], sigma_prior: f64) -> Result<Self> {
        Self::try_from(ScenarioSpec {
            theta0: Some(theta0.to_vec()),
            sigma_prior,
            ..Self::spec(d, prompt_len, Variant::Prior)
        })
    }

    pub fn correlated(d: usize, prompt_len: usize, sigma_cov: &DMatrix<f64>) -> Result<Self> {
        if sigma_cov.shape() != (d, d) {
            return Err(Error::InvalidScenario(format!("sigma_cov must be {d}x{d}")));
        }
        let rows = sigma_cov
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        Self::try_from(ScenarioSpec {
            sigma_cov: Some(rows),
            ..Self::spec(d, prompt_len, Variant::Correlated)
        })
    }

    pub fn local(d: usize, prompt_len: usize, sigma_x: f64) -> Result<Self> {
        Self::try_from(ScenarioSpec {
            sigma_x,
            ..Self::spec(d, prompt_len, Variant::Local)
        })
    }

    pub fn local_shifted(d: usize, prompt_len: usize, sigma_x: f64) -> Result<Self> {
        Self::try_from(ScenarioSpec {
            sigma_x,
            ..Self::spec(d, prompt_len, Variant::LocalShifted)
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of in-context examples `D`.
    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn sigma_eps(&self) -> f64 {
        self.sigma_eps
    }

    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }

    pub fn sigma_prior(&self) -> f64 {
        self.sigma_prior
    }

    pub fn sigma_cov(&self) -> &DMatrix<f64> {
        &self.sigma_cov
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    /// `E‖θ‖²` under this regime's task distribution.
    pub fn task_energy(&self) -> f64 {
        match self.variant {
            Variant::Prior => self.theta0.norm_squared() + self.sigma_prior * self.sigma_prior,
            _ => 1.0,
        }
    }

    pub fn with_prompt_len(&self, prompt_len: usize) -> Result<Self> {
        let mut spec = ScenarioSpec::from(self.clone());
        spec.prompt_len = prompt_len;
        Self::try_from(spec)
    }

    /// Changes the dimension. Regimes whose parameters are tied to `d`
    /// (prior mean, covariance) cannot be resized.
    pub fn with_dim(&self, d: usize) -> Result<Self> {
        if matches!(self.variant, Variant::Prior | Variant::Correlated) && d != self.d {
            return Err(Error::InvalidScenario(format!(
                "cannot change d of a {} scenario",
                self.variant.name()
            )));
        }
        let mut spec = ScenarioSpec::from(self.clone());
        spec.d = d;
        Self::try_from(spec)
    }

    pub fn with_sigma_eps(&self, sigma_eps: f64) -> Result<Self> {
        let mut spec = ScenarioSpec::from(self.clone());
        spec.sigma_eps = sigma_eps;
        Self::try_from(spec)
    }

    pub fn with_sigma_x(&self, sigma_x: f64) -> Result<Self> {
        let mut spec = ScenarioSpec::from(self.clone());
        spec.sigma_x = sigma_x;
        Self::try_from(spec)
    }

    /// Rescales the prior mean `θ₀ → t·θ₀`.
    pub fn with_prior_scale(&self, t: f64) -> Result<Self> {
        if self.variant != Variant::Prior {
            return Err(Error::InvalidScenario(
                "prior_scale needs a prior scenario".into(),
            ));
        }
        let mut spec = ScenarioSpec::from(self.clone());
        spec.theta0 = Some(
            spec.theta0
                .unwrap_or_default()
                .iter()
                .map(|x| t * x)
                .collect(),
        );
        Self::try_from(spec)
    }
}

fn cholesky_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::NotSpd("Cholesky factorisation failed".into()))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSpd(format!(
            "{}x{} is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotSpd(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// One in-context regression task.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    /// `d × D`, one example per column.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_q: DVector<f64>,
    pub y_q: f64,
    pub theta: DVector<f64>,
}

impl Prompt {
    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn prompt_len(&self) -> usize {
        self.x.ncols()
    }

    /// Column `i` of the example matrix as a contiguous slice.
    pub fn example(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.x.as_slice()[i * d..(i + 1) * d]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws the task coefficient `θ`.
pub fn sample_theta<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> DVector<f64> {
    let scale = (config.d as f64).sqrt().recip();
    let z = DVector::from_vec(standard_normals(rng, config.d));
    match config.variant {
        Variant::Prior => &config.theta0 + z * (config.sigma_prior * scale),
        _ => z * scale,
    }
}

/// Draws the query, the examples and their labels for task `theta`.
pub fn sample_prompt<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    theta: &DVector<f64>,
    rng: &mut R,
) -> Result<Prompt> {
    let (d, n) = (config.d, config.prompt_len);
    if theta.len() != d {
        return Err(Error::Shape(format!(
            "theta has length {}, expected {d}",
            theta.len()
        )));
    }

    let mut x_q = DVector::from_vec(standard_normals(rng, d));
    let mut x = DMatrix::from_vec(d, n, standard_normals(rng, d * n));
    match config.variant {
        Variant::Base | Variant::Prior | Variant::Noisy => {}
        Variant::Correlated => {
            let l = config
                .chol
                .as_ref()
                .expect("correlated config carries its factor");
            x_q = l * x_q;
            x = l * x;
        }
        Variant::Local | Variant::LocalShifted => {
            let s = config.sigma_x;
            for col in x.as_mut_slice().chunks_exact_mut(d) {
                for (xi, q) in col.iter_mut().zip(x_q.iter()) {
                    *xi = q + s * *xi;
                }
            }
        }
    }

    let t = theta.as_slice();
    let mut y = DVector::from_iterator(n, x.as_slice().chunks_exact(d).map(|col| dot(col, t)));
    let mut y_q = dot(x_q.as_slice(), t);
    if config.variant == Variant::Noisy {
        let s = config.sigma_eps;
        for yi in y.iter_mut() {
            *yi += s * rng.sample::<f64, _>(StandardNormal);
        }
        y_q += s * rng.sample::<f64, _>(StandardNormal);
    }

    Ok(Prompt {
        x,
        y,
        x_q,
        y_q,
        theta: theta.clone(),
    })
}

/// Symmetric square roots `Σ^{1/2}` and `Σ^{-1/2}` of a covariance.
#[derive(Debug, Clone)]
pub struct Whitener {
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl Whitener {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(sigma)?;
        let d = sigma.nrows();
        let is_diagonal = (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)] == 0.0));
        if is_diagonal {
            let diag = sigma.diagonal();
            if diag.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::NotSpd("nonpositive diagonal entry".into()));
            }
            let root = diag.map(f64::sqrt);
            return Ok(Self {
                sqrt: DMatrix::from_diagonal(&root),
                inv_sqrt: DMatrix::from_diagonal(&root.map(f64::recip)),
            });
        }

        let eig = SymmetricEigen::new(sigma.clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::NotSpd(format!(
                "smallest eigenvalue {}",
                eig.eigenvalues.min()
            )));
        }
        let q = &eig.eigenvectors;
        let root = eig.eigenvalues.map(f64::sqrt);
        Ok(Self {
            sqrt: q * DMatrix::from_diagonal(&root) * q.transpose(),
            inv_sqrt: q * DMatrix::from_diagonal(&root.map(f64::recip)) * q.transpose(),
        })
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    /// Maps inputs through `Σ^{-1/2}` and the task through `Σ^{1/2}`; labels
    /// are untouched, so `y_i = θ'ᵀ x'_i` still holds.
    pub fn apply(&self, prompt: &Prompt) -> Result<Prompt> {
        if prompt.d() != self.sqrt.nrows() {
            return Err(Error::Shape(format!(
                "prompt has d={}, whitener has d={}",
                prompt.d(),
                self.sqrt.nrows()
            )));
        }
        Ok(Prompt {
            x: &self.inv_sqrt * &prompt.x,
            y: prompt.y.clone(),
            x_q: &self.inv_sqrt * &prompt.x_q,
            y_q: prompt.y_q,
            theta: &self.sqrt * &prompt.theta,
        })
    }
}

pub fn whiten_prompt(prompt: &Prompt, sigma_cov: &DMatrix<f64>) -> Result<Prompt> {
    Whitener::new(sigma_cov)?.apply(prompt)
}
