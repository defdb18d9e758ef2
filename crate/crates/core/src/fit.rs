//! Simulated maximum likelihood estimation and the naive probit baseline.
//!
//! The optimizer works on an unconstrained vector: strategic parameters
//! enter as `eta = ln(delta)`, so every visited point is supermodular.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::ShockFamily;
use crate::error::{Error, Result};
use crate::lik::{evaluate, sample_all, CrnBlock, Dataset, SampledScenario};
use crate::model::Theta;
use crate::sampler::DrawOrder;

pub const CHI2_1_CRIT_05: f64 = 3.841_458_820_694_124;
pub const NORMAL_975: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecycleMode {
    /// Recycle scenarios when the model allows it.
    #[default]
    Auto,
    /// Always resample at the current iterate between optimizer rounds.
    Off,
}

impl std::str::FromStr for RecycleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RecycleMode::Auto),
            "off" => Ok(RecycleMode::Off),
            other => Err(Error::InvalidArgument(format!("unknown recycle mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub draws: usize,
    pub seed: u64,
    pub order: DrawOrder,
    pub recycle: RecycleMode,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Sampling parameter; the starting value when absent.
    pub theta0: Option<Theta>,
    /// Flat indices held at their starting values.
    pub fixed: Vec<usize>,
    pub compute_se: bool,
    /// Added to the negative Hessian diagonal of sender/receiver effects.
    pub effects_ridge: f64,
    /// Resampling rounds when scenarios cannot be recycled, or when
    /// `recenter` is set.
    pub resample_rounds: usize,
    /// Move the sampling parameter to each round's estimate even when
    /// scenarios could be recycled, until the estimate stops moving.
    pub recenter: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            draws: 10,
            seed: 0,
            order: DrawOrder::Index,
            recycle: RecycleMode::Auto,
            grad_tol: 1e-6,
            rel_tol: 1e-15,
            max_iter: 500,
            theta0: None,
            fixed: Vec::new(),
            compute_se: true,
            effects_ridge: 1e-8,
            resample_rounds: 10,
            recenter: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    /// In flat layout order; zero for fixed parameters, empty when not computed.
    pub standard_errors: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

/// Maps between flat parameters and the optimizer's free vector.
#[derive(Clone, Debug)]
struct Reparam {
    base: Vec<f64>,
    free: Vec<usize>,
    log_scale: Vec<bool>,
}

impl Reparam {
    fn new(dataset: &Dataset, flat: &[f64], fixed: &[usize]) -> Result<Self> {
        let layout = dataset.layout();
        let delta = layout.delta_range();
        if let Some(&i) = fixed.iter().find(|&&i| i >= flat.len()) {
            return Err(Error::IndexOutOfRange(format!("fixed parameter index {i}")));
        }
        let free: Vec<usize> = (0..flat.len()).filter(|i| !fixed.contains(i)).collect();
        let log_scale: Vec<bool> = free.iter().map(|i| delta.contains(i)).collect();
        for (&i, &lg) in free.iter().zip(&log_scale) {
            if lg && !(flat[i] > 0.0) {
                return Err(Error::InvalidArgument(format!("starting strategic parameter {} must be positive", flat[i])));
            }
        }
        if let Some(&i) = fixed.iter().find(|&&i| delta.contains(&i) && !(flat[i] >= 0.0)) {
            return Err(Error::InvalidArgument(format!("fixed strategic parameter {} is negative", flat[i])));
        }
        Ok(Reparam { base: flat.to_vec(), free, log_scale })
    }

    fn to_free(&self, flat: &[f64]) -> Vec<f64> {
        self.free.iter().zip(&self.log_scale).map(|(&i, &lg)| if lg { flat[i].ln() } else { flat[i] }).collect()
    }

    fn to_flat(&self, x: &[f64]) -> Vec<f64> {
        let mut flat = self.base.clone();
        for ((&i, &lg), &v) in self.free.iter().zip(&self.log_scale).zip(x) {
            flat[i] = if lg { v.exp() } else { v };
        }
        flat
    }

    /// Chain rule from a flat gradient to the free vector.
    fn grad_to_free(&self, flat: &[f64], grad: &[f64]) -> Vec<f64> {
        self.free.iter().zip(&self.log_scale).map(|(&i, &lg)| if lg { grad[i] * flat[i] } else { grad[i] }).collect()
    }
}

/// Outcome of [`maximize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AscentOptions {
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Longest allowed step in sup-norm.
    pub max_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { grad_tol: 1e-6, rel_tol: 1e-15, max_iter: 500, max_step: 5.0 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS ascent with Armijo backtracking.
///
/// `f` returns value and gradient. Points where `f` fails with
/// [`Error::AllMassUnderflow`] are treated as infinitely bad and shrink the
/// step; other errors abort. Stops when the gradient sup-norm reaches
/// `grad_tol` (converged), or when the relative change in value stays
/// under `rel_tol` or no ascent step exists (not converged unless the
/// gradient test also holds). Running out of iterations is an error.
pub fn maximize(mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>, x0: &[f64], opts: AscentOptions) -> Result<Ascent> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut value, mut grad) = f(&x)?;
    if !value.is_finite() {
        return Err(Error::InvalidArgument(format!("objective is {value} at the starting point")));
    }
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut flat_steps = 0;
    for iter in 0..opts.max_iter {
        if sup_norm(&grad) <= opts.grad_tol {
            return Ok(Ascent { x, value, gradient: grad, iterations: iter, converged: true });
        }
        let g = DVector::from_column_slice(&grad);
        let mut dir = &hinv * &g;
        if g.dot(&dir) <= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = g.clone();
        }
        let longest = dir.amax();
        if longest > opts.max_step {
            dir *= opts.max_step / longest;
        }
        let slope = g.dot(&dir);
        // below this the value change is rounding; the slope decides
        let noise = 1e-13 * value.abs().max(1.0);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
            match f(&trial) {
                Ok((v, gr)) if v.is_finite() && v >= value + 1e-4 * alpha * slope => {
                    accepted = Some((trial, v, gr));
                    break;
                }
                Ok((v, gr)) if v.is_finite() && (v - value).abs() <= noise && dot(&gr, dir.as_slice()) >= -0.9 * slope => {
                    accepted = Some((trial, v, gr));
                    break;
                }
                Ok(_) | Err(Error::AllMassUnderflow { .. }) => alpha *= 0.5,
                Err(Error::InGame { source, .. }) if matches!(*source, Error::AllMassUnderflow { .. }) => alpha *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((xn, vn, gn)) = accepted else {
            debug!("line search found no ascent step at iteration {iter}");
            let converged = sup_norm(&grad) <= opts.grad_tol;
            return Ok(Ascent { x, value, gradient: grad, iterations: iter, converged });
        };
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        // curvature pair of the minimized objective -f
        let y = DVector::from_iterator(n, grad.iter().zip(&gn).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if !scaled {
                hinv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let left = DMatrix::identity(n, n) - rho * &s * y.transpose();
            hinv = &left * &hinv * left.transpose() + rho * &s * s.transpose();
        }
        let rel = (vn - value).abs() / value.abs().max(1.0);
        x = xn;
        value = vn;
        grad = gn;
        flat_steps = if rel <= opts.rel_tol { flat_steps + 1 } else { 0 };
        if flat_steps >= 3 {
            let converged = sup_norm(&grad) <= opts.grad_tol;
            return Ok(Ascent { x, value, gradient: grad, iterations: iter + 1, converged });
        }
    }
    Err(Error::OptimizerNonConvergence { iterations: opts.max_iter, theta: x, gradient_norm: sup_norm(&grad) })
}

/// Hessian by central differences of an analytic gradient, symmetrized.
/// Also returns the largest relative asymmetry before symmetrizing.
pub fn numerical_hessian(mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>, x: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut point = x.to_vec();
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        point[j] = x[j] + step;
        let up = grad(&point)?;
        point[j] = x[j] - step;
        let down = grad(&point)?;
        point[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (&h - h.transpose()).amax() / scale;
    let sym = (&h + h.transpose()) * 0.5;
    Ok((sym, asymmetry))
}

/// Square roots of the diagonal of `(-H)^{-1}`.
pub fn standard_errors_from_hessian(hessian: &DMatrix<f64>) -> Result<Vec<f64>> {
    let info = -hessian;
    let singular = || {
        let eig = info.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(v.abs())));
        Error::SingularHessian { condition: if lo > 0.0 { hi / lo } else { f64::INFINITY } }
    };
    let chol = info.clone().cholesky().ok_or_else(singular)?;
    let cov = chol.inverse();
    let se: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
    if se.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(se)
}

struct Objective<'a> {
    dataset: &'a Dataset,
    reparam: &'a Reparam,
    sampled: Vec<Vec<SampledScenario>>,
}

impl Objective<'_> {
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let flat = self.reparam.to_flat(x);
        let theta = self.dataset.layout().unflatten(&flat)?;
        let (v, g) = evaluate(self.dataset, &self.sampled, &theta, true)?;
        Ok((v, self.reparam.grad_to_free(&flat, &g)))
    }
}

/// Maximize the simulated log-likelihood starting from `theta_init`.
pub fn sml_fit(dataset: &Dataset, theta_init: &Theta, opts: &FitOptions) -> Result<FitResult> {
    let layout = dataset.layout().clone();
    let flat0 = layout.flatten(theta_init)?;
    let reparam = Reparam::new(dataset, &flat0, &opts.fixed)?;
    let crn = CrnBlock::new(opts.seed, opts.draws)?;
    let ascent_opts = AscentOptions { grad_tol: opts.grad_tol, rel_tol: opts.rel_tol, max_iter: opts.max_iter, ..Default::default() };
    let mut warnings = Vec::new();
    if dataset.len() == 1 {
        warnings.push("single game: standard errors measure curvature only and have unknown sampling properties".to_string());
    }
    let mut theta0 = opts.theta0.clone().unwrap_or_else(|| theta_init.clone());
    let recycle = dataset.recyclable() && opts.recycle == RecycleMode::Auto;
    let single = recycle && !opts.recenter;
    let rounds = if single { 1 } else { opts.resample_rounds.max(1) };
    let mut x = reparam.to_free(&flat0);
    let mut iterations = 0;
    let mut last: Option<(Ascent, Objective<'_>)> = None;
    for round in 0..rounds {
        let objective = Objective { dataset, reparam: &reparam, sampled: sample_all(dataset, &crn, &theta0, opts.order)? };
        let ascent = maximize(|z| objective.eval(z), &x, ascent_opts)?;
        iterations += ascent.iterations;
        let moved = sup_norm(&ascent.x.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        x = ascent.x.clone();
        theta0 = layout.unflatten(&reparam.to_flat(&x))?;
        last = Some((ascent, objective));
        if !single {
            debug!("resampling round {round}: moved {moved:e}");
            if moved <= 1e-6 {
                break;
            }
            if round + 1 == rounds {
                warnings.push(format!("resampling rounds exhausted; last round moved {moved:e}"));
            }
        }
    }
    let (ascent, objective) = last.expect("at least one round");
    let flat_hat = reparam.to_flat(&ascent.x);
    let theta_hat = layout.unflatten(&flat_hat)?;
    if !ascent.converged {
        warnings.push(format!("optimizer stalled with gradient sup-norm {:e}", sup_norm(&ascent.gradient)));
    }
    let standard_errors = if opts.compute_se {
        let (hessian, asymmetry) = numerical_hessian(|z| objective.eval(z).map(|r| r.1), &ascent.x)?;
        if asymmetry > 1e-6 {
            warnings.push(format!("Hessian asymmetry {asymmetry:e}"));
        }
        let mut h = hessian;
        if let Some(so) = layout.sender_offset() {
            for (j, &i) in reparam.free.iter().enumerate() {
                if i >= so {
                    h[(j, j)] -= opts.effects_ridge;
                }
            }
        }
        let se_free = standard_errors_from_hessian(&h)?;
        let mut se = vec![0.0; layout.len()];
        for (j, (&i, &lg)) in reparam.free.iter().zip(&reparam.log_scale).enumerate() {
            se[i] = if lg { flat_hat[i] * se_free[j] } else { se_free[j] };
        }
        se
    } else {
        Vec::new()
    };
    for w in &warnings {
        warn!("{w}");
    }
    Ok(FitResult {
        theta_hat,
        standard_errors,
        loglik: ascent.value,
        iterations,
        converged: ascent.converged,
        gradient_norm: sup_norm(&ascent.gradient),
        warnings,
    })
}

/// Standard errors at `theta_hat` from the Hessian of the simulated
/// log-likelihood under the given CRN block and sampling parameter.
pub fn hessian_se(dataset: &Dataset, theta_hat: &Theta, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<Vec<f64>> {
    let flat = dataset.layout().flatten(theta_hat)?;
    let reparam = Reparam::new(dataset, &flat, &[])?;
    let objective = Objective { dataset, reparam: &reparam, sampled: sample_all(dataset, crn, theta0, order)? };
    let x = reparam.to_free(&flat);
    let (h, _) = numerical_hessian(|z| objective.eval(z).map(|r| r.1), &x)?;
    let se = standard_errors_from_hessian(&h)?;
    Ok(reparam.free.iter().zip(&reparam.log_scale).zip(se).map(|((&i, &lg), s)| if lg { flat[i] * s } else { s }).collect())
}

/// Probit regressors: each coordinate's covariates followed by its
/// observed strategic statistic.
pub fn probit_design(dataset: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    if dataset.layout().blocks != 1 {
        return Err(Error::InvalidArgument("probit baseline needs a single action type".into()));
    }
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    let mut stat = Vec::new();
    for g in dataset.games() {
        let y = g.outcome.as_slice();
        for (c, &yc) in y.iter().enumerate() {
            let mut row = g.model.covariates(c).to_vec();
            g.model.level_statistic(c, g.model.level_of(c, y), &mut stat);
            row.extend_from_slice(&stat);
            rows.push(row);
            ys.push(yc);
        }
    }
    Ok((rows, ys))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbitEstimate {
    pub coef: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

/// Probit maximum likelihood by Newton's method.
pub fn probit_mle(rows: &[Vec<f64>], y: &[bool]) -> Result<ProbitEstimate> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.len() != y.len() || rows.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch("probit rows and outcomes disagree".into()));
    }
    let n = ShockFamily::Normal;
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let eval = |b: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>) {
        let xb = &x * b;
        let mut ll = 0.0;
        let mut g = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for i in 0..rows.len() {
            let q = if y[i] { 1.0 } else { -1.0 };
            let z = q * xb[i];
            ll += n.log_cdf(z);
            let lambda = q * (n.log_pdf(z) - n.log_cdf(z)).exp();
            let w = lambda * (lambda + xb[i]);
            let xi = x.row(i).transpose();
            g += &xi * lambda;
            info += &xi * xi.transpose() * w;
        }
        (ll, g, info)
    };
    let mut b = DVector::zeros(k);
    let (mut ll, mut g, mut info) = eval(&b);
    for iter in 0..200 {
        let chol = info.clone().cholesky().ok_or(Error::Separation)?;
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &b + &step * t;
            let r = eval(&cand);
            if r.0.is_finite() && r.0 >= ll - 1e-12 * ll.abs() {
                next = Some((cand, r));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, (nll, ng, ninfo))) = next else {
            return Err(Error::Separation);
        };
        let moved = (&nb - &b).amax();
        b = nb;
        ll = nll;
        g = ng;
        info = ninfo;
        if b.amax() > 1e6 || ll > -1e-10 {
            return Err(Error::Separation);
        }
        if moved <= 1e-13 * b.amax().max(1.0) {
            let cov = info.clone().cholesky().ok_or(Error::Separation)?.inverse();
            return Ok(ProbitEstimate {
                coef: b.iter().copied().collect(),
                standard_errors: cov.diagonal().iter().map(|v| v.sqrt()).collect(),
                loglik: ll,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::Separation)
}

/// Probit of outcomes on covariates and the observed statistic, ignoring
/// simultaneity. The strategic coefficient is unrestricted in sign.
pub fn naive_probit(dataset: &Dataset) -> Result<FitResult> {
    let (rows, y) = probit_design(dataset)?;
    let est = probit_mle(&rows, &y)?;
    let k = dataset.layout().n_covariates;
    Ok(FitResult {
        theta_hat: Theta {
            beta: vec![est.coef[..k].to_vec()],
            delta: vec![est.coef[k..].to_vec()],
            sender_effects: None,
            receiver_effects: None,
        },
        standard_errors: est.standard_errors,
        loglik: est.loglik,
        iterations: est.iterations,
        converged: true,
        gradient_norm: 0.0,
        warnings: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_has_exact_standard_errors() {
        // l(x) = -(x0^2 / (2 * 4) + x1^2 / (2 * 0.25)); sd 2 and 0.5
        let grad = |x: &[f64]| Ok(vec![-x[0] / 4.0, -x[1] / 0.25]);
        let (h, asym) = numerical_hessian(grad, &[0.3, -0.2]).unwrap();
        assert!(asym < 1e-12);
        let se = standard_errors_from_hessian(&h).unwrap();
        assert!((se[0] - 2.0).abs() < 1e-8 && (se[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn maximize_finds_rosenbrock_peak() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let g = vec![2.0 * (1.0 - a) + 400.0 * a * (b - a * a), -200.0 * (b - a * a)];
            Ok((v, g))
        };
        let r = maximize(f, &[-1.2, 1.0], AscentOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn indefinite_hessian_is_singular() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(standard_errors_from_hessian(&h), Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn separated_probit_is_rejected() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<bool> = (0..10).map(|i| i >= 5).collect();
        assert!(matches!(probit_mle(&rows, &y), Err(Error::Separation)));
    }
}
