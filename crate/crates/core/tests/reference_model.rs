//! Frozen values for the two-state binary reference model, computed by
//! brute-force enumeration outside this crate.

use dualfilter_core::adapted::{for_each_path, AdaptedProcess};
use dualfilter_core::dual::{duality_gap, optimal_feedback, running_cost, solve_bsde, TerminalFunction};
use dualfilter_core::fixed_point::{bde_solve, scalar_feedback};
use dualfilter_core::hmm::{HmmModel, ObservationPath, ProbabilityVector};
use dualfilter_core::oracle::{
    exact_expectation, forward_filter, next_token_by_enumeration, next_token_prob, path_probability,
    path_probability_by_enumeration, ZeroPolicy, DEFAULT_ENUM_BUDGET,
};
use dualfilter_core::predictor::{build_weights, conditional_target, represent_conditional, PathFunction};

fn reference(horizon: usize) -> HmmModel {
    HmmModel::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![vec![0.2, 0.8], vec![0.7, 0.3]],
        horizon,
    )
    .unwrap()
}

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b}");
}

#[test]
fn risk_matrix_three_tokens() {
    let model = HmmModel::new(vec![1.0], vec![vec![1.0]], vec![vec![0.2, 0.5, 0.3]], 1).unwrap();
    let r = model.risk_matrix(0).unwrap();
    close(r[(0, 0)], 0.61, 1e-15);
    close(r[(0, 1)], 0.17, 1e-15);
    close(r[(1, 0)], 0.17, 1e-15);
    close(r[(1, 1)], 0.49, 1e-15);
    let binary = reference(1);
    close(binary.risk_matrix(0).unwrap()[(0, 0)], 0.64, 1e-15);
}

#[test]
fn filter_along_reference_path() {
    let model = reference(3);
    let traj = forward_filter(&model, &[1, 1, 0], ZeroPolicy::Strict).unwrap();
    let expected = [
        [0.6818181818181819, 0.3181818181818182],
        [0.7808510638297874, 0.21914893617021286],
        [0.5035738831615121, 0.49642611683848803],
    ];
    for (t, e) in expected.iter().enumerate() {
        let pi = traj.pi(t + 1).unwrap();
        close(pi[0], e[0], 1e-14);
        close(pi[1], e[1], 1e-14);
    }
    let p = next_token_prob(&model, traj.pi(3).unwrap().as_slice());
    close(p[0], 0.448213058419244, 1e-14);
    close(p[1], 0.5517869415807561, 1e-14);
    close(path_probability(&model, &[1, 1, 0]).unwrap(), 0.109125, 1e-15);
    close(
        path_probability_by_enumeration(&model, &[1, 1, 0], DEFAULT_ENUM_BUDGET).unwrap(),
        0.109125,
        1e-15,
    );
}

#[test]
fn conditionals_on_every_path() {
    let model = reference(3);
    let expected = [
        0.3734874290348743,
        0.4971918678526049,
        0.44029702970297024,
        0.6425085910652921,
        0.41485387547649294,
        0.6074527112232031,
        0.5517869415807561,
        0.7119106317411403,
    ];
    let target = conditional_target(&model, 1, ZeroPolicy::Strict).unwrap();
    let rep = represent_conditional(&model, 1, ZeroPolicy::Strict).unwrap();
    let mut i = 0;
    for_each_path(2, 3, |z| {
        close(target.get(z), expected[i], 1e-14);
        close(rep.evaluate(z).unwrap(), expected[i], 1e-14);
        let enumerated = next_token_by_enumeration(&model, z, DEFAULT_ENUM_BUDGET).unwrap().unwrap();
        close(enumerated[1], expected[i], 1e-14);
        i += 1;
    });
}

#[test]
fn marginal_by_expectation() {
    let model = reference(2);
    let p = exact_expectation(&model, 2, DEFAULT_ENUM_BUDGET, |xs, _| (xs[2] == 0) as u8 as f64).unwrap();
    close(p, 0.5, 1e-15);
}

#[test]
fn indicator_weights() {
    let target = PathFunction::from_fn(2, 2, |z| (z == [1, 1]) as u8 as f64);
    let rep = build_weights(&target);
    close(rep.constant, 0.25, 0.0);
    close(rep.weights.at(0, 0)[0], -0.25, 0.0);
    close(rep.weights.get(&[0]).unwrap()[0], 0.0, 0.0);
    close(rep.weights.get(&[1]).unwrap()[0], -0.5, 0.0);
}

#[test]
fn running_cost_transcription() {
    let model = reference(3);
    let y = [0.7, -1.3];
    let v = vec![vec![0.25], vec![-0.4]];
    close(running_cost(&model, &y, &v, &[0.6], 0).unwrap(), 0.8224, 1e-14);
    close(running_cost(&model, &y, &v, &[0.6], 1).unwrap(), 0.39359999999999984, 1e-14);
}

#[test]
fn feedback_transcription() {
    let model = reference(3);
    let rho = ProbabilityVector::new(vec![0.35, 0.65]).unwrap();
    let phi = optimal_feedback(&model, &[0.7, -1.3], &[vec![0.25], vec![-0.4]], &rho);
    close(phi[0], -0.38, 1e-14);
    let f = [0.7, -1.3];
    close(
        scalar_feedback(&model, &f, &rho, &model.scalar_obs(0).unwrap()),
        0.36491228070175435,
        1e-14,
    );
    close(
        scalar_feedback(&model, &f, &rho, &model.scalar_obs(1).unwrap()),
        -0.3649122807017544,
        1e-14,
    );
}

#[test]
fn bde_trajectory_replay() {
    let model = reference(3);
    let z = ObservationPath::for_model(&model, vec![1, 1, 0]).unwrap();
    let rho = vec![
        ProbabilityVector::new(vec![0.3, 0.7]).unwrap(),
        ProbabilityVector::new(vec![0.6, 0.4]).unwrap(),
        ProbabilityVector::uniform(2),
    ];
    let sol = bde_solve(&model, &rho, &z, 3, &[1.0, 0.0]).unwrap();
    close(sol.y0[0], 0.5752506887052342, 1e-14);
    close(sol.y0[1], 0.3491056014692379, 1e-14);
    let expected = [-0.0764003673094582, -0.10181818181818184, 0.2];
    for (u, e) in sol.controls.iter().zip(expected) {
        close(*u, e, 1e-14);
    }
}

#[test]
fn duality_two_sided_values() {
    let model = reference(2);
    let u = AdaptedProcess::from_levels(2, vec![vec![vec![0.4]], vec![vec![-0.3], vec![0.8]]]).unwrap();
    let f = TerminalFunction::Deterministic(vec![1.5, -0.5]);
    let traj = solve_bsde(&model, &u, &f).unwrap();
    close(traj.y0()[0], 1.67, 1e-14);
    close(traj.y0()[1], -0.309, 1e-14);
    let report = duality_gap(&model, &u, &f, DEFAULT_ENUM_BUDGET).unwrap();
    close(report.j_t, 2.14111975, 1e-13);
    close(report.mse, 2.14111975, 1e-13);
}
