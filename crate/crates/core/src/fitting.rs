//! Affine model fitting on labelled clusters of normal flow.
//!
//! Each observation contributes one linear equation in the six-entry model
//! vector (`row · m = ‖n‖²`). [`fit_linear`] solves the stacked system in
//! closed form and decouples the result; [`fit_nonlinear`] refines the four
//! parameters directly with Levenberg–Marquardt on a truncated quadratic.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::types::{
    decouple_model, residual_of_vector, to_vector, AffineMotionModel, ModelVector, NormalFlowObservation,
};

pub const MIN_LINEAR_OBSERVATIONS: usize = 6;
pub const MIN_NONLINEAR_OBSERVATIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub model: AffineMotionModel,
    /// Objective value at `model` (truncated if the loss is).
    pub residual_sum: f64,
    pub observations: usize,
    pub method: FitMethod,
    pub converged: bool,
    pub lm_iterations: usize,
    /// Set by the linear solver when the stacked system has rank < 6.
    pub rank_deficient: bool,
}

/// Per-residual loss used by the data term and the nonlinear fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Quadratic,
    /// `min(r², tau²)`.
    Truncated { tau: f64 },
}

impl Loss {
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Loss::Quadratic => r * r,
            Loss::Truncated { tau } => (r * r).min(tau * tau),
        }
    }

    #[inline]
    fn is_inlier(&self, r: f64) -> bool {
        match *self {
            Loss::Quadratic => true,
            Loss::Truncated { tau } => r * r < tau * tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub loss: Loss,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-8,
            loss: Loss::Truncated { tau: 1.0 },
        }
    }
}

/// Row `(n_x x, n_x y, n_x, n_y x, n_y y, n_y)` and right-hand side `‖n‖²`.
pub fn design_row(obs: &NormalFlowObservation) -> Result<([f64; 6], f64)> {
    let (nx, ny) = (obs.n.x, obs.n.y);
    let rhs = nx * nx + ny * ny;
    if rhs == 0.0 {
        return Err(Error::ZeroNormalFlow);
    }
    Ok(([nx * obs.x, nx * obs.y, nx, ny * obs.x, ny * obs.y, ny], rhs))
}

/// Sum of per-observation losses under `model`.
pub fn cluster_residual<'a>(
    cluster: impl IntoIterator<Item = &'a NormalFlowObservation>,
    model: &AffineMotionModel,
    loss: Loss,
) -> f64 {
    let m = to_vector(model);
    cluster
        .into_iter()
        .map(|o| loss.eval(residual_of_vector(&m, o)))
        .sum()
}

/// Closed-form least squares over the stacked design rows.
///
/// Columns are equilibrated to unit max-abs before an orthogonal
/// factorization; the rank-deficient case falls back to the minimum-norm
/// solution and sets [`FitReport::rank_deficient`].
pub fn fit_linear(cluster: &[NormalFlowObservation]) -> Result<FitReport> {
    if cluster.len() < MIN_LINEAR_OBSERVATIONS {
        return Err(Error::InsufficientObservations {
            needed: MIN_LINEAR_OBSERVATIONS,
            got: cluster.len(),
        });
    }
    let k = cluster.len();
    let mut a = DMatrix::<f64>::zeros(k, 6);
    let mut b = DVector::<f64>::zeros(k);
    for (r, obs) in cluster.iter().enumerate() {
        let (row, rhs) = design_row(obs)?;
        for c in 0..6 {
            a[(r, c)] = row[c];
        }
        b[r] = rhs;
    }

    let mut scale = [1.0f64; 6];
    for (c, s) in scale.iter_mut().enumerate() {
        let m = a.column(c).amax();
        if m > 0.0 {
            *s = m;
            a.column_mut(c).scale_mut(1.0 / m);
        }
    }

    // Reduce to a 6x6 triangular system, then SVD for rank handling.
    let qr = a.qr();
    let qtb = qr.q().transpose() * &b;
    let r = qr.r();
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    let rank_tol = smax * 6.0 * f64::EPSILON * (k as f64).sqrt().max(1.0) * 1e3;
    let rank = svd.singular_values.iter().filter(|&&s| s > rank_tol).count();
    let y = svd
        .solve(&qtb, rank_tol)
        .map_err(|_| Error::NonFinite("linear solve"))?;

    let mut m = [0.0; 6];
    for c in 0..6 {
        m[c] = y[c] / scale[c];
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear solve"));
    }
    let model = decouple_model(&ModelVector(m))?;
    let residual_sum = cluster
        .iter()
        .map(|o| {
            let (row, rhs) = design_row(o).expect("checked above");
            let r = ModelVector(m).dot(&row) - rhs;
            r * r
        })
        .sum();
    Ok(FitReport {
        model,
        residual_sum,
        observations: k,
        method: FitMethod::Linear,
        converged: true,
        lm_iterations: 0,
        rank_deficient: rank < 6,
    })
}

/// Residual and its gradient with respect to `(ρ, θ, t_x, t_y)`.
#[inline]
pub fn residual_and_jacobian(model: &AffineMotionModel, obs: &NormalFlowObservation) -> (f64, [f64; 4]) {
    let (s, c) = model.theta.sin_cos();
    let (x, y) = (obs.x, obs.y);
    let (nx, ny) = (obs.n.x, obs.n.y);
    let rot_x = c * x - s * y;
    let rot_y = s * x + c * y;
    let ux = model.rho * rot_x - x + model.t_x;
    let uy = model.rho * rot_y - y + model.t_y;
    let r = nx * ux + ny * uy - (nx * nx + ny * ny);
    let d_rho = nx * rot_x + ny * rot_y;
    let d_theta = model.rho * (-nx * rot_y + ny * rot_x);
    (r, [d_rho, d_theta, nx, ny])
}

struct Lm<'a> {
    cluster: &'a [NormalFlowObservation],
    iterations: usize,
    max_iters: usize,
    tol: f64,
}

enum StageEnd {
    Converged,
    OutOfBudget,
}

impl Lm<'_> {
    fn objective(&self, model: &AffineMotionModel, loss: Loss) -> f64 {
        cluster_residual(self.cluster, model, loss)
    }

    /// Damped Gauss-Newton on the inliers of `loss` at the current iterate.
    fn run_stage(&mut self, model: &mut AffineMotionModel, loss: Loss) -> Result<StageEnd> {
        let mut lambda = 1e-3;
        let mut cost = self.objective(model, loss);
        if !cost.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        loop {
            if self.iterations >= self.max_iters {
                return Ok(StageEnd::OutOfBudget);
            }
            let mut jtj = Matrix4::<f64>::zeros();
            let mut jtr = Vector4::<f64>::zeros();
            for obs in self.cluster {
                let (r, g) = residual_and_jacobian(model, obs);
                if !loss.is_inlier(r) {
                    continue;
                }
                let g = Vector4::from(g);
                jtj += g * g.transpose();
                jtr += g * r;
            }
            if jtj.iter().any(|v| !v.is_finite()) || jtr.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("jacobian"));
            }
            if jtr.amax() == 0.0 {
                return Ok(StageEnd::Converged);
            }

            self.iterations += 1;
            let mut accepted = false;
            while lambda < 1e16 {
                let mut damped = jtj;
                for d in 0..4 {
                    damped[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
                }
                let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                    lambda *= 10.0;
                    continue;
                };
                if step.amax() < self.tol {
                    return Ok(StageEnd::Converged);
                }
                let p = model.params();
                let candidate = AffineMotionModel::from_params([
                    p[0] + step[0],
                    p[1] + step[1],
                    p[2] + step[2],
                    p[3] + step[3],
                ]);
                if candidate.is_valid() {
                    let new_cost = self.objective(&candidate, loss);
                    if new_cost < cost {
                        let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                        *model = candidate;
                        cost = new_cost;
                        lambda = (lambda / 10.0).max(1e-12);
                        accepted = true;
                        if rel < 1e-10 || step.amax() < self.tol {
                            return Ok(StageEnd::Converged);
                        }
                        break;
                    }
                }
                lambda *= 10.0;
            }
            if !accepted {
                return Ok(StageEnd::Converged);
            }
        }
    }
}

/// Levenberg–Marquardt refinement of `(ρ, θ, t_x, t_y)`.
///
/// With a truncated loss, the truncation threshold starts wide (three times
/// the median absolute residual at `initial`) and is halved stage by stage
/// down to `tau`, so a distant initial guess still sees its inliers. The
/// returned objective never exceeds the objective at `initial`.
pub fn fit_nonlinear(
    cluster: &[NormalFlowObservation],
    initial: &AffineMotionModel,
    options: &LmOptions,
) -> Result<FitReport> {
    if cluster.len() < MIN_NONLINEAR_OBSERVATIONS {
        return Err(Error::InsufficientObservations {
            needed: MIN_NONLINEAR_OBSERVATIONS,
            got: cluster.len(),
        });
    }
    let mut lm = Lm {
        cluster,
        iterations: 0,
        max_iters: options.max_iters,
        tol: options.tol,
    };
    let initial_cost = lm.objective(initial, options.loss);
    if !initial_cost.is_finite() {
        return Err(Error::NonFinite("objective"));
    }

    let mut model = *initial;
    let end = match options.loss {
        Loss::Quadratic => lm.run_stage(&mut model, Loss::Quadratic)?,
        Loss::Truncated { tau } => {
            let m0 = to_vector(initial);
            let mut abs: Vec<f64> = cluster.iter().map(|o| residual_of_vector(&m0, o).abs()).collect();
            let mid = abs.len() / 2;
            let median = *abs.select_nth_unstable_by(mid, f64::total_cmp).1;
            let mut stage_tau = (3.0 * median).max(tau);
            loop {
                let end = lm.run_stage(&mut model, Loss::Truncated { tau: stage_tau })?;
                if stage_tau <= tau || matches!(end, StageEnd::OutOfBudget) {
                    break end;
                }
                stage_tau = (stage_tau * 0.5).max(tau);
            }
        }
    };

    let mut cost = lm.objective(&model, options.loss);
    if cost > initial_cost {
        model = *initial;
        cost = initial_cost;
    }
    Ok(FitReport {
        model,
        residual_sum: cost,
        observations: cluster.len(),
        method: FitMethod::Nonlinear,
        converged: matches!(end, StageEnd::Converged),
        lm_iterations: lm.iterations,
        rank_deficient: false,
    })
}
