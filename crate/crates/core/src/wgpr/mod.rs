//! Observation-weighted Gaussian-process regression.
//!
//! Weighting an observation by `w` replaces its variance `u` by `u / w` on
//! the diagonal of the covariance matrix. For integer `w` this is exactly
//! the likelihood of a system holding `w` independent replicas of the
//! observation (variance `u` each), up to a factor that the
//! [`oracle`] module checks by brute force. The replicated density is
//!
//! ```text
//! log G(y_w | Σ_rep) = log G(y | Σ_weighted)
//!                      - Σ_i [ (w_i - 1)/2 · log u_i + ½ log w_i + (w_i - 1)/2 · log 2π ]
//! ```
//!
//! so the `θ`-dependent part of the correction is `-Σ (w_i - 1)/2 · log u_i`.
//! With weights normalized to mean 1 and a diagonal `u_i` that does not
//! depend on `i`, that term vanishes and the plain Gaussian log density of
//! the weighted covariance can be maximized directly ([`ObjectiveForm::Simplified`]).

mod gauss;
pub mod optimize;
pub mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covfn::{CovExpr, Distances};
use crate::error::{Error, Result};
use crate::point::Point;

pub use gauss::{log_gauss_pdf, Factor};
use optimize::{minimize, BfgsOptions, Problem};

/// Which diagonal entries the weights rescale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Divide the whole diagonal entry `K(x_i, x_i)` by `w_i`.
    #[default]
    FullDiagonal,
    /// Divide only the white-noise share of the diagonal by `w_i`.
    NoiseOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// Gaussian log density of the weighted covariance plus the
    /// `-Σ (w_i - 1)/2 · log d_i` correction.
    Full,
    /// Gaussian log density of the weighted covariance only. Valid as an
    /// argmax surrogate when weights have mean 1 and `d_i` is uniform.
    #[default]
    Simplified,
}

/// Per-observation weights. Entries below [`WeightVector::DROP_THRESHOLD`]
/// are dropped; normalization rescales the retained entries to mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    retained: Vec<usize>,
    normalized: bool,
}

impl WeightVector {
    pub const DROP_THRESHOLD: f64 = 1e-12;

    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if let Some(bad) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weights must be finite and nonnegative, got {bad}"
            )));
        }
        let mut values = raw;
        let mut retained = Vec::new();
        for (i, v) in values.iter_mut().enumerate() {
            if *v < Self::DROP_THRESHOLD {
                *v = 0.0;
            } else {
                retained.push(i);
            }
        }
        Ok(WeightVector {
            values,
            retained,
            normalized: false,
        })
    }

    /// Rescales retained weights so their mean is exactly 1 (to rounding).
    pub fn normalize(mut self) -> Result<Self> {
        if self.retained.is_empty() {
            return Err(Error::InvalidWeights("all weights were dropped".into()));
        }
        let mean = self.retained.iter().map(|&i| self.values[i]).sum::<f64>()
            / self.retained.len() as f64;
        for &i in &self.retained {
            self.values[i] /= mean;
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn retained_weights(&self) -> Vec<f64> {
        self.retained.iter().map(|&i| self.values[i]).collect()
    }

    pub fn retained_mean(&self) -> f64 {
        if self.retained.is_empty() {
            return 0.0;
        }
        self.retained.iter().map(|&i| self.values[i]).sum::<f64>() / self.retained.len() as f64
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Dimension(format!("{} weights for {n} points", w.len())));
    }
    if let Some(bad) = w.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidWeights(format!(
            "retained weights must be positive, got {bad}"
        )));
    }
    Ok(())
}

fn diag_share<P: Point>(expr: &CovExpr, xs: &[P], k: &DMatrix<f64>, mode: WeightingMode) -> DVector<f64> {
    match mode {
        WeightingMode::FullDiagonal => k.diagonal(),
        WeightingMode::NoiseOnly => expr.noise_diagonal(xs),
    }
}

fn apply_weights(sigma: &mut DMatrix<f64>, d: &DVector<f64>, w: &[f64]) {
    for (i, &wi) in w.iter().enumerate() {
        sigma[(i, i)] -= (wi - 1.0) / wi * d[i];
    }
}

/// Weighted covariance `K - diag((w_i - 1)/w_i · d_i)`, where `d_i` is the
/// full diagonal entry or its white-noise share depending on `mode`.
/// `w` must already exclude dropped points.
pub fn weighted_cov<P: Point>(
    expr: &CovExpr,
    xs: &[P],
    w: &[f64],
    mode: WeightingMode,
) -> Result<DMatrix<f64>> {
    check_weights(w, xs.len())?;
    let mut k = expr.matrix(xs);
    let d = diag_share(expr, xs, &k, mode);
    apply_weights(&mut k, &d, w);
    Ok(k)
}

fn correction(d: &DVector<f64>, w: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        if wi == 1.0 {
            continue;
        }
        if !(d[i] > 0.0) {
            return Err(Error::InvalidInput(format!(
                "full objective needs a positive diagonal share at point {i}, got {}",
                d[i]
            )));
        }
        total -= 0.5 * (wi - 1.0) * d[i].ln();
    }
    Ok(total)
}

/// Weighted log marginal likelihood. With all weights 1 both forms reduce to
/// the ordinary GP log marginal likelihood `log G(y | K_θ(X))`.
pub fn weighted_log_marginal<P: Point>(
    expr: &CovExpr,
    xs: &[P],
    y: &[f64],
    w: &[f64],
    mode: WeightingMode,
    form: ObjectiveForm,
) -> Result<f64> {
    if y.len() != xs.len() {
        return Err(Error::Dimension(format!("{} targets for {} points", y.len(), xs.len())));
    }
    check_weights(w, xs.len())?;
    let mut sigma = expr.matrix(xs);
    let d = diag_share(expr, xs, &sigma, mode);
    apply_weights(&mut sigma, &d, w);
    let mut value = Factor::new(&sigma)?.log_pdf(&DVector::from_column_slice(y));
    if form == ObjectiveForm::Full {
        value += correction(&d, w)?;
    }
    Ok(value)
}

/// A weighted marginal-likelihood problem with precomputed distances, for
/// repeated evaluation at different parameter values.
pub struct Objective<'a, P: Point> {
    template: &'a CovExpr,
    xs: &'a [P],
    dist: Distances,
    y: DVector<f64>,
    w: Vec<f64>,
    mode: WeightingMode,
    form: ObjectiveForm,
}

impl<'a, P: Point> Objective<'a, P> {
    pub fn new(
        template: &'a CovExpr,
        xs: &'a [P],
        y: &[f64],
        w: &[f64],
        mode: WeightingMode,
        form: ObjectiveForm,
    ) -> Result<Self> {
        template.validate()?;
        if y.len() != xs.len() {
            return Err(Error::Dimension(format!("{} targets for {} points", y.len(), xs.len())));
        }
        check_weights(w, xs.len())?;
        Ok(Objective {
            template,
            xs,
            dist: Distances::new(xs),
            y: DVector::from_column_slice(y),
            w: w.to_vec(),
            mode,
            form,
        })
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        let expr = self.template.with_free_values(theta)?;
        let mut sigma = expr.matrix_from(&self.dist);
        let d = diag_share(&expr, self.xs, &sigma, self.mode);
        apply_weights(&mut sigma, &d, &self.w);
        let mut value = Factor::new(&sigma)?.log_pdf(&self.y);
        if self.form == ObjectiveForm::Full {
            value += correction(&d, &self.w)?;
        }
        Ok(value)
    }

    /// Value and gradient with respect to `log θ` (free parameters in
    /// traversal order), at natural-unit parameters `theta`.
    pub fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let expr = self.template.with_free_values(theta)?;
        let (mut sigma, mut grads) = expr.matrix_and_grads(&self.dist);
        let n = self.xs.len();
        let (d, dgrads): (DVector<f64>, Vec<DVector<f64>>) = match self.mode {
            WeightingMode::FullDiagonal => {
                (sigma.diagonal(), grads.iter().map(|g| g.diagonal()).collect())
            }
            WeightingMode::NoiseOnly => (
                expr.noise_diagonal(self.xs),
                expr.noise_diagonal_grads(self.xs),
            ),
        };
        apply_weights(&mut sigma, &d, &self.w);
        for (g, dg) in grads.iter_mut().zip(&dgrads) {
            apply_weights(g, dg, &self.w);
        }

        let factor = Factor::new(&sigma)?;
        let alpha = factor.solve(&self.y);
        let mut value = gauss::log_pdf_parts(self.y.dot(&alpha), factor.log_det(), n);

        // ½ tr((ααᵀ - Σ⁻¹) ∂Σ)
        let mut inner = factor.inverse();
        inner.neg_mut();
        inner.ger(1.0, &alpha, &alpha, 1.0);
        let mut grad: Vec<f64> = grads.iter().map(|g| 0.5 * inner.dot(g)).collect();

        if self.form == ObjectiveForm::Full {
            value += correction(&d, &self.w)?;
            for (gj, dg) in grad.iter_mut().zip(&dgrads) {
                for (i, &wi) in self.w.iter().enumerate() {
                    if wi != 1.0 {
                        *gj -= 0.5 * (wi - 1.0) * dg[i] / d[i];
                    }
                }
            }
        }
        Ok((value, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedOrigin {
    Fixed,
    Neighbor,
    Exemplar,
    MultiSeed(usize),
}

/// Starting point for one optimizer restart, in natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub theta: Vec<f64>,
    pub origin: SeedOrigin,
}

impl Seed {
    pub fn new(theta: Vec<f64>, origin: SeedOrigin) -> Self {
        Seed { theta, origin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub mode: WeightingMode,
    pub form: ObjectiveForm,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Box on natural-unit parameter values, enforced in log space.
    pub bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: WeightingMode::FullDiagonal,
            form: ObjectiveForm::Simplified,
            max_iter: 200,
            grad_tol: 1e-6,
            bounds: (1e-12, 1e12),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// The input expression with its free parameters set to fitted values.
    pub expr: CovExpr,
    pub log_marginal: f64,
    pub converged: bool,
    pub iterations: usize,
    pub seed_origin: SeedOrigin,
    pub objective_form: ObjectiveForm,
    pub failed_restarts: usize,
}

impl FitResult {
    pub fn params(&self) -> Vec<f64> {
        self.expr.free_values()
    }
}

/// `-log marginal` as a function of `log θ`, for the minimizer.
struct Negated<'o, 'a, P: Point> {
    objective: &'o Objective<'a, P>,
    last_error: &'o mut String,
}

impl<P: Point> Negated<'_, '_, P> {
    fn record<T>(&mut self, r: Result<T>) -> Option<T> {
        r.map_err(|e| *self.last_error = e.to_string()).ok()
    }
}

impl<P: Point> Problem for Negated<'_, '_, P> {
    fn value_grad(&mut self, logt: &[f64]) -> Option<(f64, Vec<f64>)> {
        let theta: Vec<f64> = logt.iter().map(|v| v.exp()).collect();
        let (v, g) = self.record(self.objective.value_and_grad(&theta))?;
        Some((-v, g.into_iter().map(|x| -x).collect()))
    }

    fn value(&mut self, logt: &[f64]) -> Option<f64> {
        let theta: Vec<f64> = logt.iter().map(|v| v.exp()).collect();
        self.record(self.objective.value(&theta)).map(|v| -v)
    }
}

/// Maximizes the weighted log marginal likelihood over `log θ` from each
/// seed and returns the best-scoring restart. Ties keep the earliest seed.
pub fn fit<P: Point>(
    expr: &CovExpr,
    xs: &[P],
    y: &[f64],
    w: &[f64],
    seeds: &[Seed],
    opts: &FitOptions,
) -> Result<FitResult> {
    let m = expr.free_count();
    if m == 0 {
        return Err(Error::NoFreeParameters);
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("fit needs at least one seed".into()));
    }
    let (lo, hi) = opts.bounds;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::InvalidInput(format!("invalid parameter bounds ({lo}, {hi})")));
    }
    let objective = Objective::new(expr, xs, y, w, opts.mode, opts.form)?;
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        lower: lo.ln(),
        upper: hi.ln(),
        ..Default::default()
    };

    let mut best: Option<FitResult> = None;
    let mut failed = 0;
    let mut last_error = String::from("no restart evaluated");
    for seed in seeds {
        if seed.theta.len() != m {
            return Err(Error::Dimension(format!(
                "seed has {} values, expression has {m} free parameters",
                seed.theta.len()
            )));
        }
        if seed.theta.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("seed values must be positive".into()));
        }
        let x0: Vec<f64> = seed.theta.iter().map(|v| v.ln()).collect();
        let outcome = minimize(
            Negated {
                objective: &objective,
                last_error: &mut last_error,
            },
            &x0,
            &bfgs,
        );
        let Some(out) = outcome else {
            failed += 1;
            continue;
        };
        let theta: Vec<f64> = out.x.iter().map(|v| v.exp()).collect();
        let candidate = FitResult {
            expr: expr.with_free_values(&theta)?,
            log_marginal: -out.f,
            converged: out.converged,
            iterations: out.iterations,
            seed_origin: seed.origin,
            objective_form: opts.form,
            failed_restarts: 0,
        };
        if best.as_ref().is_none_or(|b| candidate.log_marginal > b.log_marginal) {
            best = Some(candidate);
        }
    }
    match best {
        Some(mut b) => {
            b.failed_restarts = failed;
            Ok(b)
        }
        None => Err(Error::FitFailed {
            restarts: seeds.len(),
            last: last_error,
        }),
    }
}

/// Zero-mean GP posterior at `xs_star` using the weighted covariance for the
/// training block. Variances are for a new noisy observation.
pub fn predict<P: Point>(
    fitted: &FitResult,
    xs_train: &[P],
    y: &[f64],
    w: &[f64],
    xs_star: &[P],
    mode: WeightingMode,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if y.len() != xs_train.len() {
        return Err(Error::Dimension("targets and training points differ in length".into()));
    }
    let expr = &fitted.expr;
    let sigma = weighted_cov(expr, xs_train, w, mode)?;
    let factor = Factor::new(&sigma)?;
    let alpha = factor.solve(&DVector::from_column_slice(y));
    let cross = expr.cross_matrix(xs_star, xs_train);
    let mean = &cross * &alpha;
    let v = factor.solve_matrix(&cross.transpose());
    let var = DVector::from_iterator(
        xs_star.len(),
        xs_star.iter().enumerate().map(|(i, x)| {
            let prior = expr.eval(x, x, true);
            prior - cross.row(i).dot(&v.column(i).transpose())
        }),
    );
    Ok((mean, var))
}
