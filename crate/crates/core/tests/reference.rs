//! The constrained integrator against RK4 on the explicit pendulum model.

use std::f64::consts::FRAC_PI_2;

use phdae::control::{damping_source, sequence_source, ControlSource, DampingGain, ZeroControl};
use phdae::diagnostics::{final_state, order_study, self_reference};
use phdae::pendulum::{
    pendulum_method, rk4_reference, rk4_reference_sampled, to_ambient, ExplicitState,
};
use phdae::stepper::power_balance_audit;
use phdae::{simulate, DoublePendulum, IntegratorConfig, NewtonConfig, PendulumParams, Vector};

const Q0: [f64; 2] = [-FRAC_PI_2 + 0.5, 0.3];

#[test]
fn second_order_under_constant_input() {
    let p = PendulumParams::default();
    let sys = DoublePendulum::new(p).unwrap();
    let m = pendulum_method(p);
    let x0e = ExplicitState {
        q: Q0,
        p_hat: [0.0, 0.0],
    };
    let x0 = to_ambient(&p, &x0e).unwrap();
    let src = |_: usize, _: &Vector| Vector::from_vec(vec![0.1, -0.05]);
    let reference = |t: f64| {
        let states = rk4_reference_sampled(&p, x0e, 1e-5, (t / 1e-5).round() as usize, 1, &src)?;
        to_ambient(&p, states.last().unwrap())
    };
    let rep = order_study(
        &sys,
        m.as_ref(),
        &x0,
        &src,
        0.5,
        &[0.01, 0.005, 0.0025],
        &NewtonConfig::default(),
        &reference,
    )
    .unwrap();
    for order in rep.observed_orders {
        let order = order.unwrap();
        assert!((1.8..=2.2).contains(&order), "{order}");
    }
}

#[test]
fn self_reference_agrees_with_rk4() {
    let p = PendulumParams::default();
    let sys = DoublePendulum::new(p).unwrap();
    let m = pendulum_method(p);
    let x0 = to_ambient(
        &p,
        &ExplicitState {
            q: Q0,
            p_hat: [0.0, 0.0],
        },
    )
    .unwrap();
    let zero = ZeroControl { m: 2 };
    let h_list = [0.008, 0.004, 0.002];
    let newton = NewtonConfig::default();

    let rk4 = |t: f64| {
        let states = rk4_reference(&p, Q0, [0.0, 0.0], 1e-5, (t / 1e-5).round() as usize)?;
        to_ambient(&p, states.last().unwrap())
    };
    let external = order_study(&sys, m.as_ref(), &x0, &zero, 0.4, &h_list, &newton, &rk4).unwrap();
    let own = self_reference(&sys, m.as_ref(), &x0, &zero, 0.002 / 8.0, newton);
    let internal = order_study(&sys, m.as_ref(), &x0, &zero, 0.4, &h_list, &newton, &own).unwrap();
    for (a, b) in external
        .observed_orders
        .iter()
        .zip(&internal.observed_orders)
    {
        assert!((a.unwrap() - b.unwrap()).abs() <= 0.2, "{a:?} vs {b:?}");
    }
}

#[test]
fn sampled_feedback_tracks_zoh_reference() {
    // Same hold instants on both sides, so the gap is the integrator error.
    let p = PendulumParams::default();
    let sys = DoublePendulum::new(p).unwrap();
    let m = pendulum_method(p);
    let x0e = ExplicitState {
        q: Q0,
        p_hat: [0.0, 0.0],
    };
    let x0 = to_ambient(&p, &x0e).unwrap();
    let src = damping_source(DampingGain::scalar(0.3, 2).unwrap());
    let h = 0.01;
    let traj = simulate(&sys, m.as_ref(), &x0, &src, &IntegratorConfig::new(h), 100).unwrap();
    let reference = rk4_reference_sampled(&p, x0e, h / 1000.0, 1000, 100, &src).unwrap();
    let last = to_ambient(&p, reference.last().unwrap()).unwrap();
    assert!(traj.last_state().unwrap().distance(&last) < 1e-3);
}

#[test]
fn audit_error_is_third_order() {
    let p = PendulumParams::default();
    let sys = DoublePendulum::new(p).unwrap();
    let m = pendulum_method(p);
    let x0 = to_ambient(
        &p,
        &ExplicitState {
            q: Q0,
            p_hat: [0.0, 0.0],
        },
    )
    .unwrap();
    let src = |_: usize, _: &Vector| Vector::from_vec(vec![0.1, 0.0]);
    let max_err = |h: f64| {
        let traj = simulate(
            &sys,
            m.as_ref(),
            &x0,
            &src,
            &IntegratorConfig::new(h),
            (0.5 / h).round() as usize,
        )
        .unwrap();
        power_balance_audit(&sys, &traj)
            .into_iter()
            .fold(0.0f64, |a, e| a.max(e.abs()))
    };
    let ratio = max_err(0.01) / max_err(0.005);
    assert!((6.0..=10.0).contains(&ratio), "{ratio}");
}

#[test]
fn open_loop_replay_matches_feedback_run() {
    let p = PendulumParams::default();
    let sys = DoublePendulum::new(p).unwrap();
    let m = pendulum_method(p);
    let x0 = to_ambient(
        &p,
        &ExplicitState {
            q: Q0,
            p_hat: [0.4, -0.2],
        },
    )
    .unwrap();
    let cfg = IntegratorConfig::new(0.01);
    let feedback = damping_source(DampingGain::scalar(0.3, 2).unwrap());
    let traj = simulate(&sys, m.as_ref(), &x0, &feedback, &cfg, 150).unwrap();
    let replay = sequence_source(traj.commands()).unwrap();
    let again = final_state(&sys, m.as_ref(), &x0, &replay, &cfg, 150).unwrap();
    assert_eq!(&again, traj.last_state().unwrap());
    assert_eq!(replay.next(0, &Vector::zeros(2)), traj.records[0].result.u);
}
