//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquares {
    fn n_params(&self) -> usize;

    fn n_residuals(&self) -> usize;

    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Row-major `n_residuals × n_params`. Central differences by default.
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let m = self.n_residuals();
        let mut x = p.to_vec();
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for j in 0..p.len() {
            let h = 1e-6 * p[j].abs().max(1e-3);
            x[j] = p[j] + h;
            self.project(&mut x);
            let hp = x[j] - p[j];
            self.residuals(&x, &mut plus);
            x[j] = p[j] - h;
            self.project(&mut x);
            let hm = p[j] - x[j];
            self.residuals(&x, &mut minus);
            x[j] = p[j];
            let denom = hp + hm;
            for i in 0..m {
                out[(i, j)] = if denom > 0.0 { (plus[i] - minus[i]) / denom } else { 0.0 };
            }
        }
    }

    /// Maps a trial point back into the feasible set.
    fn project(&self, _p: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
    /// Stop when every free gradient component is this small relative to
    /// its Jacobian column and the residual norm.
    pub gradient_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 100,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            step_tolerance: 1e-12,
            cost_tolerance: 1e-15,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LmStop {
    StepTolerance,
    CostTolerance,
    GradientTolerance,
    /// Damping grew without finding a decrease: a numerical minimum.
    Stalled,
    MaxIterations,
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub stop: LmStop,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        matches!(self.stop, LmStop::StepTolerance | LmStop::CostTolerance | LmStop::GradientTolerance | LmStop::Stalled)
    }

    pub fn rms(&self, n_residuals: usize) -> f64 {
        (2.0 * self.cost / n_residuals.max(1) as f64).sqrt()
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, init: &[f64], cfg: &LmConfig) -> LmReport {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut p = init.to_vec();
    problem.project(&mut p);
    let mut r = vec![0.0; m];
    problem.residuals(&p, &mut r);
    let mut cost = half_sq(&r);
    let initial_cost = cost;
    if !cost.is_finite() {
        return LmReport { params: p, cost, initial_cost, iterations: 0, stop: LmStop::NonFinite };
    }
    let mut lambda = cfg.lambda_init;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut need_jac = true;
    let mut jtj = DMatrix::<f64>::zeros(n, n);
    let mut g = DVector::<f64>::zeros(n);
    let mut pinned = vec![false; n];

    for iter in 0..cfg.max_iterations {
        if need_jac {
            problem.jacobian(&p, &mut jac);
            jtj = jac.transpose() * &jac;
            g = jac.transpose() * DVector::from_column_slice(&r);
            need_jac = false;
            // A parameter whose descent direction the projection blocks sits
            // on an active bound and is held fixed for this step.
            let mut q = p.clone();
            for j in 0..n {
                let h = 1e-9 * p[j].abs().max(1e-6);
                q[j] = p[j] - g[j].signum() * h;
                problem.project(&mut q);
                pinned[j] = g[j] != 0.0 && q[j] == p[j];
                q.copy_from_slice(&p);
            }
            let r_norm = (2.0 * cost).sqrt();
            let worst = (0..n)
                .filter(|&j| !pinned[j])
                .map(|j| {
                    let col = jtj[(j, j)].sqrt();
                    if col > 0.0 && r_norm > 0.0 { g[j].abs() / (col * r_norm) } else { 0.0 }
                })
                .fold(0.0, f64::max);
            if worst <= cfg.gradient_tolerance {
                return LmReport { params: p, cost, initial_cost, iterations: iter, stop: LmStop::GradientTolerance };
            }
        }
        let mut a = jtj.clone();
        let mut rhs = g.clone();
        for i in 0..n {
            if pinned[i] {
                for k in 0..n {
                    a[(i, k)] = 0.0;
                    a[(k, i)] = 0.0;
                }
                a[(i, i)] = 1.0;
                rhs[i] = 0.0;
            } else {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
        }
        let delta = match a.cholesky() {
            Some(ch) => ch.solve(&(-&rhs)),
            None => {
                lambda *= cfg.lambda_up;
                if lambda > 1e16 {
                    return LmReport { params: p, cost, initial_cost, iterations: iter, stop: LmStop::Stalled };
                }
                continue;
            }
        };
        for i in 0..n {
            trial[i] = p[i] + delta[i];
        }
        problem.project(&mut trial);
        problem.residuals(&trial, &mut r_trial);
        let c_trial = half_sq(&r_trial);
        let step_norm = trial.iter().zip(&p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if c_trial.is_finite() && c_trial < cost {
            let reduction = (cost - c_trial) / cost.max(f64::MIN_POSITIVE);
            std::mem::swap(&mut p, &mut trial);
            std::mem::swap(&mut r, &mut r_trial);
            cost = c_trial;
            lambda = (lambda / cfg.lambda_down).max(1e-15);
            need_jac = true;
            if step_norm <= cfg.step_tolerance * (p_norm + cfg.step_tolerance) {
                return LmReport { params: p, cost, initial_cost, iterations: iter + 1, stop: LmStop::StepTolerance };
            }
            if reduction < cfg.cost_tolerance {
                return LmReport { params: p, cost, initial_cost, iterations: iter + 1, stop: LmStop::CostTolerance };
            }
        } else {
            if step_norm <= cfg.step_tolerance * (p_norm + cfg.step_tolerance) {
                return LmReport { params: p, cost, initial_cost, iterations: iter + 1, stop: LmStop::StepTolerance };
            }
            lambda *= cfg.lambda_up;
            if lambda > 1e16 {
                return LmReport { params: p, cost, initial_cost, iterations: iter + 1, stop: LmStop::Stalled };
            }
        }
    }
    LmReport { params: p, cost, initial_cost, iterations: cfg.max_iterations, stop: LmStop::MaxIterations }
}
