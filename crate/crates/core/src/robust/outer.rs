//! Input update against a fixed noise realization.

use nalgebra::{DMatrix, DVector};

use super::{quadratic_minimizer, InnerSolution, Perturbation};
use crate::error::{Error, Result};
use crate::linalg;
use crate::predictor::PredictorState;

/// `(K1, K2, b(0))` of the predictor rebuilt on the perturbed data
/// `[U_p; Y_p + D_Yp; U_f]`, `Y_f + D_Yf`, `y_p + D_yp`.
pub fn perturbed_gains(
    state: &PredictorState,
    pert: &Perturbation,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let d = state.data();
    let y_p = &d.y_p + &pert.d_y_p;
    let h = linalg::vstack(&[&d.u_p, &y_p, &d.u_f]);
    if !linalg::is_full_row_rank(&h, linalg::RANK_TOL) {
        return Err(Error::RankCollapse {
            sigma_min: linalg::sigma_min(&h),
        });
    }
    let k1 = (&d.y_f + &pert.d_y_f) * linalg::pseudo_inverse(&h, linalg::PINV_TOL);
    let nu = state.n_future_inputs();
    let k2 = k1.columns(k1.ncols() - nu, nu).into_owned();
    let rec = state.recent();
    let b0 = linalg::vstack_vec(&[&rec.u_p, &(&rec.y_p + &pert.d_yp), &DVector::zeros(nu)]);
    Ok((k1, k2, b0))
}

/// `|K1 b(0) + K2 u_f - r_f|_Q^2 + |u_f|_R^2` on the perturbed data.
pub fn outer_objective(state: &PredictorState, pert: &Perturbation, u_f: &DVector<f64>) -> Result<f64> {
    let (k1, k2, b0) = perturbed_gains(state, pert)?;
    let y = k1 * b0 + k2 * u_f;
    Ok(state.cost(&y, u_f))
}

pub fn outer_step(state: &PredictorState, inner: &InnerSolution) -> Result<DVector<f64>> {
    let (k1, k2, b0) = perturbed_gains(state, &inner.perturbation)?;
    quadratic_minimizer(&(k1 * b0), &k2, &state.q(), &state.r(), &state.r_f())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{self, seeded_rng};
    use crate::page::{self, RecentTrajectory};
    use crate::predictor::build_predictor;
    use crate::presets;
    use crate::robust::{inner_worst_case, nominal_input, SolverOptions};

    fn state(delta: f64) -> PredictorState {
        let sys = presets::siso_benchmark();
        let traj = lti::generate_historical(&sys, 6, 26, 2.0, &mut seeded_rng(3)).unwrap();
        let mut rng = seeded_rng(8);
        let y = lti::add_noise_with(traj.outputs(), delta, &mut rng);
        let data = page::behavioral_from_signals(traj.inputs(), &y, 3, 3, delta).unwrap();
        let recent = RecentTrajectory::new(
            DVector::from_row_slice(&presets::SISO_RECENT_U),
            DVector::from_row_slice(&presets::SISO_RECENT_Y),
        )
        .with_weights(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 10.0)
        .with_reference(DVector::from_element(3, 1.0));
        build_predictor(data, recent).unwrap()
    }

    #[test]
    fn zero_perturbation_gives_nominal() {
        let s = state(1e-3);
        let inner = inner_worst_case(&s, &DVector::zeros(3), &SolverOptions::default()).unwrap();
        let zeroed = InnerSolution {
            perturbation: Perturbation::zero(s.data()),
            ..inner
        };
        let u = outer_step(&s, &zeroed).unwrap();
        assert!((u - nominal_input(&s).unwrap()).norm() < 1e-9);
    }

    #[test]
    fn update_is_stationary() {
        let s = state(1e-2);
        let u0 = nominal_input(&s).unwrap();
        let inner = inner_worst_case(&s, &u0, &SolverOptions::default()).unwrap();
        let u = outer_step(&s, &inner).unwrap();
        let (k1, k2, b0) = perturbed_gains(&s, &inner.perturbation).unwrap();
        let grad = k2.transpose() * s.q() * (k1 * b0 + &k2 * &u - s.r_f()) * 2.0 + s.r() * &u * 2.0;
        assert!(grad.norm() < 1e-8, "{}", grad.norm());
        let f = outer_objective(&s, &inner.perturbation, &u).unwrap();
        for i in 0..3 {
            let mut v = u.clone();
            v[i] += 1e-3;
            assert!(outer_objective(&s, &inner.perturbation, &v).unwrap() > f);
        }
    }

    #[test]
    fn rank_collapse_is_an_error() {
        let s = state(1e-3);
        let d = s.data();
        let mut pert = Perturbation::zero(d);
        // Make the perturbed Y_p equal to U_p.
        pert.d_y_p = &d.u_p - &d.y_p;
        assert!(matches!(perturbed_gains(&s, &pert), Err(Error::RankCollapse { .. })));
    }
}
