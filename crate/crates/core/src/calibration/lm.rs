//! Levenberg–Marquardt solver for the plane-phantom equation system.

use nalgebra::{DMatrix, DVector};

use super::{jacobian, residuals, CalibObservation, CalibrationParams};
use crate::error::{Error, Result};

/// Solver knobs. The damping starts at `lambda0`, is multiplied by
/// `lambda_up` on a rejected step and divided by `lambda_down` on an
/// accepted one, scaled by the diagonal of `JᵀJ`.
#[derive(Clone, Copy, Debug)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop when the proposed step's ∞-norm drops below this.
    pub step_tol: f64,
    /// Stop when the relative RSS improvement of an accepted step drops
    /// below this.
    pub rel_rss_tol: f64,
    pub max_iterations: usize,
    /// Identifiability limit on cond(JᵀJ).
    pub condition_limit: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            step_tol: 1e-10,
            rel_rss_tol: 1e-12,
            max_iterations: 200,
            condition_limit: 1e12,
        }
    }
}

/// Solution summary: recovered parameters, fit quality, and the covariance
/// of the free parameters (ascending free-index order).
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub params: CalibrationParams,
    /// √(RSS / m) in mm.
    pub residual_rms: f64,
    /// σ̂²·(JᵀJ)⁻¹ with σ̂² = RSS/(m − n_free).
    pub covariance: DMatrix<f64>,
    /// cond(JᵀJ) at the solution.
    pub jacobian_condition: f64,
    pub iterations: usize,
    /// RSS after init and after every accepted step; never increases.
    pub rss_history: Vec<f64>,
}

impl SolveReport {
    /// Names of the free parameters, matching the covariance row order.
    pub fn free_names(&self) -> Vec<&'static str> {
        self.params.free_names()
    }
}

fn rss_of(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// cond(JᵀJ) and the name of the free parameter dominating the weakest
/// singular direction.
fn condition_of(jtj: &DMatrix<f64>, params: &CalibrationParams) -> (f64, &'static str) {
    let svd = jtj.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let names = params.free_names();
    let weakest = match &svd.v_t {
        Some(vt) => {
            let last = vt.row(vt.nrows() - 1);
            let mut best = 0usize;
            for i in 0..last.len() {
                if last[i].abs() > last[best].abs() {
                    best = i;
                }
            }
            names[best]
        }
        None => names[0],
    };
    (cond, weakest)
}

/// Solve the overdetermined plane-constraint system for the 11 free
/// parameters, starting from `init`.
pub fn solve_lm(
    observations: &[CalibObservation],
    init: &CalibrationParams,
    cfg: &LmConfig,
) -> Result<SolveReport> {
    init.validate()?;
    for obs in observations {
        obs.validate()?;
    }
    let free = init.free_indices();
    let m = observations.len() * 2;
    if m <= free.len() {
        return Err(Error::InvalidParameter(format!(
            "{m} equations cannot determine {} free parameters; need more B-scans",
            free.len()
        )));
    }

    let fixed = init.fixed;
    let mut x = init.to_vector();
    let mut params = CalibrationParams::from_vector(&x, fixed);
    let mut r = DVector::from_vec(residuals(&params, observations)?);
    let mut rss = rss_of(r.as_slice());
    let mut jac = jacobian(&params, observations)?;

    // Degenerate probe motion shows up as an exactly rank-deficient system
    // regardless of the parameter values; reject it up front.
    let jtj0 = jac.transpose() * &jac;
    let (cond0, weakest0) = condition_of(&jtj0, &params);
    if cond0 > cfg.condition_limit {
        return Err(Error::Identifiability {
            parameter: weakest0.to_string(),
            condition: cond0,
            limit: cfg.condition_limit,
        });
    }

    let mut lambda = cfg.lambda0;
    let mut iterations = 0usize;
    let mut rss_history = vec![rss];

    while iterations < cfg.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;

        // Marquardt scaling keeps the damping meaningful across the mixed
        // mm / radian / scale units.
        let max_diag = (0..jtj.nrows()).map(|i| jtj[(i, i)]).fold(0.0f64, f64::max);
        let mut damped = jtj.clone();
        for i in 0..damped.nrows() {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12 * max_diag.max(1e-300));
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-&jtr)),
            None => {
                lambda *= cfg.lambda_up;
                continue;
            }
        };

        if step.amax() < cfg.step_tol {
            break;
        }

        let mut x_new = x;
        for (col, &fi) in free.iter().enumerate() {
            x_new[fi] += step[col];
        }
        let params_new = CalibrationParams::from_vector(&x_new, fixed);
        let r_new = match residuals(&params_new, observations) {
            Ok(v) => DVector::from_vec(v),
            Err(_) => {
                lambda *= cfg.lambda_up;
                continue;
            }
        };
        let rss_new = rss_of(r_new.as_slice());

        if rss_new < rss {
            let rel_drop = (rss - rss_new) / rss.max(f64::MIN_POSITIVE);
            x = x_new;
            params = params_new;
            r = r_new;
            rss = rss_new;
            rss_history.push(rss);
            jac = jacobian(&params, observations)?;
            lambda /= cfg.lambda_down;
            if rel_drop < cfg.rel_rss_tol {
                break;
            }
        } else {
            lambda *= cfg.lambda_up;
            if lambda > 1e15 {
                break; // no descent direction left at any damping
            }
        }
    }

    let jtj = jac.transpose() * &jac;
    let (cond, weakest) = condition_of(&jtj, &params);
    if cond > cfg.condition_limit {
        return Err(Error::Identifiability {
            parameter: weakest.to_string(),
            condition: cond,
            limit: cfg.condition_limit,
        });
    }
    let dof = (m - free.len()) as f64;
    let sigma2 = rss / dof;
    let inv = jtj
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| jtj.clone().try_inverse())
        .ok_or_else(|| Error::Identifiability {
            parameter: weakest.to_string(),
            condition: cond,
            limit: cfg.condition_limit,
        })?;
    let mut covariance = inv * sigma2;
    // Symmetrise away the inversion rounding.
    let sym = (&covariance + covariance.transpose()) * 0.5;
    covariance = sym;

    Ok(SolveReport {
        params,
        residual_rms: (rss / m as f64).sqrt(),
        covariance,
        jacobian_condition: cond,
        iterations,
        rss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth::{
        calibration_trajectory, default_truth, plane_observations, probe_base_orientation, posed,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth_params() -> CalibrationParams {
        default_truth(0.20, 0.25, 45.0)
    }

    fn exact_sweep(truth: &CalibrationParams, n: usize) -> Vec<CalibObservation> {
        plane_observations(truth, &calibration_trajectory(n), 128, 128).unwrap()
    }

    fn perturbed(truth: &CalibrationParams, frac: f64, seed: u64) -> CalibrationParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = truth.to_vector();
        let mut p = v;
        for (i, value) in p.iter_mut().enumerate() {
            if truth.fixed[i] {
                continue;
            }
            *value = v[i] * (1.0 + rng.random_range(-frac..frac));
        }
        CalibrationParams::from_vector(&p, truth.fixed)
    }

    #[test]
    fn noiseless_sweep_recovers_truth() {
        let truth = truth_params();
        let obs = exact_sweep(&truth, 60);
        assert!(obs.len() >= 40, "only {} usable observations", obs.len());
        let init = perturbed(&truth, 0.2, 1);
        let report = solve_lm(&obs, &init, &LmConfig::default()).unwrap();
        let p = &report.params;
        assert!((p.probe_from_image.x - truth.probe_from_image.x).abs() < 1e-3);
        assert!((p.probe_from_image.y - truth.probe_from_image.y).abs() < 1e-3);
        assert!((p.probe_from_image.z - truth.probe_from_image.z).abs() < 1e-3);
        assert!((p.probe_from_image.alpha - truth.probe_from_image.alpha).abs() < 1e-5);
        assert!((p.probe_from_image.beta - truth.probe_from_image.beta).abs() < 1e-5);
        assert!((p.probe_from_image.gamma - truth.probe_from_image.gamma).abs() < 1e-5);
        assert!((p.sx - truth.sx).abs() < 1e-5);
        assert!(report.residual_rms < 1e-6);
    }

    #[test]
    fn starting_at_truth_converges_immediately() {
        let truth = truth_params();
        let obs = exact_sweep(&truth, 60);
        let report = solve_lm(&obs, &truth, &LmConfig::default()).unwrap();
        assert!(report.iterations <= 2, "iterations {}", report.iterations);
        assert!(report.residual_rms < 1e-9);
    }

    #[test]
    fn pure_translation_sweep_is_unidentifiable() {
        let truth = truth_params();
        let base = probe_base_orientation();
        let poses: Vec<crate::geometry::Pose6> = (0..40)
            .map(|i| {
                let z = 24.0 + 8.0 * (i as f64 / 39.0 * std::f64::consts::TAU).sin();
                posed(0.0, 0.0, z, &base, (0.0, 0.0, 0.0))
            })
            .collect();
        let obs = plane_observations(&truth, &poses, 128, 128).unwrap();
        assert!(obs.len() >= 20, "only {} observations", obs.len());
        let err = solve_lm(&obs, &perturbed(&truth, 0.1, 2), &LmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Identifiability { .. }), "got {err}");
    }

    #[test]
    fn rss_history_never_increases() {
        let truth = truth_params();
        let obs = exact_sweep(&truth, 60);
        let report = solve_lm(&obs, &perturbed(&truth, 0.2, 3), &LmConfig::default()).unwrap();
        for w in report.rss_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-15), "RSS rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let truth = truth_params();
        let obs = exact_sweep(&truth, 60);
        // Add a little pixel noise so sigma² is nonzero.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy: Vec<CalibObservation> = obs
            .iter()
            .map(|o| {
                let mut o = o.clone();
                for p in o.pixels.iter_mut() {
                    p[1] += rng.random_range(-1.0..1.0);
                }
                o
            })
            .collect();
        let report = solve_lm(&noisy, &perturbed(&truth, 0.1, 5), &LmConfig::default()).unwrap();
        let c = &report.covariance;
        assert_eq!(c.nrows(), 11);
        for i in 0..c.nrows() {
            assert!(c[(i, i)] >= 0.0);
            for j in 0..c.ncols() {
                assert!((c[(i, j)] - c[(j, i)]).abs() < 1e-8);
            }
        }
        // PSD within tolerance: all eigenvalues ≥ -1e-8·max.
        let eig = nalgebra::SymmetricEigen::new(c.clone());
        let emax = eig.eigenvalues.max();
        assert!(eig.eigenvalues.min() >= -1e-8 * emax.max(1e-300));
    }

    #[test]
    fn pinned_gauge_values_do_not_affect_the_solution() {
        // Re-expressing the phantom frame by sliding along the plane or
        // spinning about its normal only changes the pinned parameters;
        // the recovered free parameters must be identical.
        let truth = truth_params();
        let obs = exact_sweep(&truth, 60);
        let init_a = perturbed(&truth, 0.15, 6);
        let mut init_b = init_a.clone();
        init_b.phantom_from_world.x = 10.0;
        init_b.phantom_from_world.y = -5.0;
        init_b.phantom_from_world.alpha = 0.7;
        let ra = solve_lm(&obs, &init_a, &LmConfig::default()).unwrap();
        let rb = solve_lm(&obs, &init_b, &LmConfig::default()).unwrap();
        let va = ra.params.to_vector();
        let vb = rb.params.to_vector();
        for &i in ra.params.free_indices().iter() {
            assert!(
                (va[i] - vb[i]).abs() < 1e-6,
                "{} differs: {} vs {}",
                super::super::PARAM_NAMES[i],
                va[i],
                vb[i]
            );
        }
    }

    #[test]
    fn underdetermined_system_rejected() {
        let truth = truth_params();
        let obs = exact_sweep(&truth, 5);
        let err = solve_lm(&obs, &truth, &LmConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }
}
