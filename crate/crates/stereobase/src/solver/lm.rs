//! A small damped Gauss-Newton driver shared by the main refinement, the
//! rank-deficient init sub-solve, and the unconstrained bundle degrader.
//!
//! The driver is generic over an abstract state so problems can move
//! rotations on their manifold: the Jacobian is always evaluated in the
//! state's local chart and `apply` owns the retraction. Steps are computed
//! from the squared residual system but accepted against the problem's own
//! metric, which the main refinement overrides with its unsquared objective.

use nalgebra::{DMatrix, DVector};

use super::DampingConfig;

pub(crate) trait LmProblem {
    type State: Clone;

    /// Residual vector, or `None` when the state is outside the domain.
    fn residuals(&self, state: &Self::State) -> Option<DVector<f64>>;

    /// Jacobian of the residual vector in the state's local chart.
    fn jacobian(&self, state: &Self::State) -> DMatrix<f64>;

    /// Retraction: applies a local step, or `None` when it leaves the domain.
    fn apply(&self, state: &Self::State, step: &DVector<f64>) -> Option<Self::State>;

    /// The value monotonicity is enforced on. Defaults to the squared
    /// residual norm.
    fn metric(&self, residuals: &DVector<f64>) -> f64 {
        residuals.norm_squared()
    }
}

pub(crate) struct LmSettings {
    pub max_iterations: usize,
    /// Relative metric decrease below which an accepted step counts as
    /// converged.
    pub rel_tolerance: f64,
    /// Consecutive converged steps required to stop.
    pub consecutive: usize,
    pub damping: DampingConfig,
}

pub(crate) struct LmOutcome<S> {
    pub state: S,
    pub iterations: usize,
    pub final_damping: f64,
    pub converged: bool,
    /// Metric after every accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Runs the loop. Returns `None` only when the initial state is already
/// outside the problem domain.
pub(crate) fn minimize<P: LmProblem>(
    problem: &P,
    initial: P::State,
    settings: &LmSettings,
) -> Option<LmOutcome<P::State>> {
    let mut state = initial;
    let residuals = problem.residuals(&state)?;
    let mut metric = problem.metric(&residuals);
    if metric <= 0.0 {
        return Some(LmOutcome {
            state,
            iterations: 0,
            final_damping: settings.damping.initial,
            converged: true,
            trace: vec![metric],
        });
    }
    let mut jacobian = problem.jacobian(&state);
    let mut gradient = jacobian.transpose() * &residuals;
    let mut trace = vec![metric];

    let mut mu = settings.damping.initial;
    let mut consecutive = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;

    while iterations < settings.max_iterations {
        iterations += 1;
        let mut normal = jacobian.transpose() * &jacobian;
        for d in 0..normal.nrows() {
            normal[(d, d)] += mu * normal[(d, d)].max(1e-12);
        }
        let step = match normal.cholesky() {
            Some(chol) => chol.solve(&(-&gradient)),
            None => {
                mu *= settings.damping.increase;
                if mu > settings.damping.max {
                    converged = true;
                    break;
                }
                continue;
            }
        };

        let trial = problem
            .apply(&state, &step)
            .and_then(|s| problem.residuals(&s).map(|r| (s, r)));
        let accepted = match trial {
            Some((trial_state, trial_residuals)) => {
                let trial_metric = problem.metric(&trial_residuals);
                if trial_metric < metric {
                    let rel = (metric - trial_metric) / metric.max(1e-300);
                    state = trial_state;
                    metric = trial_metric;
                    jacobian = problem.jacobian(&state);
                    gradient = jacobian.transpose() * &trial_residuals;
                    trace.push(metric);
                    if rel < settings.rel_tolerance {
                        consecutive += 1;
                        if consecutive >= settings.consecutive {
                            converged = true;
                        }
                    } else {
                        consecutive = 0;
                    }
                    true
                } else {
                    false
                }
            }
            None => false,
        };

        if converged {
            break;
        }
        if accepted {
            mu = (mu / settings.damping.decrease).max(1e-15);
        } else {
            mu *= settings.damping.increase;
            if mu > settings.damping.max {
                // No achievable descent direction left at any damping: the
                // state is at a numerical stationary point.
                converged = true;
                break;
            }
        }
    }

    Some(LmOutcome {
        state,
        iterations,
        final_damping: mu,
        converged,
        trace,
    })
}
