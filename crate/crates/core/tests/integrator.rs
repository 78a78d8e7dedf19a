use std::f64::consts::PI;

use num_complex::Complex64;
use stochfd::driver::WienerPath;
use stochfd::fit::fit_order;
use stochfd::grid::{l2h_norm, sup_norm, GridFunction, Lattice};
use stochfd::integrator::*;
use stochfd::scheme::{CoefficientField, ProblemData, StencilSpec};
use stochfd::Error;

fn example_2_4() -> StencilSpec {
    let mut s = StencilSpec::one_dimensional(1, 1).unwrap();
    s.set_a(1, 1, 2.0).unwrap();
    s.set_b(1, 0, 2.0).unwrap();
    s
}

fn circle(n: usize) -> Lattice {
    Lattice::periodic(1, n, 2.0 * PI).unwrap()
}

fn cos_problem(lat: Lattice, horizon: f64) -> ProblemData {
    ProblemData::new(GridFunction::from_fn(lat, |x| x[0].cos()), horizon).unwrap()
}

#[test]
fn zero_scheme_keeps_initial_value() {
    let lat = circle(16);
    let spec = StencilSpec::one_dimensional(2, 1).unwrap();
    let problem = cos_problem(lat, 1.0);
    let path = WienerPath::sample(2, 100, 1.0, 4).unwrap();
    let traj = em_solve(&spec, &problem, &path, &[0.0, 0.5, 1.0], EmOptions::default()).unwrap();
    for s in traj.states() {
        assert_eq!(s, &problem.psi);
    }
}

fn heat_decay(spec: &StencilSpec, symbol: f64) -> f64 {
    let lat = circle(32);
    let horizon = 0.1;
    let problem = ProblemData::new(GridFunction::from_fn(lat, |x| x[0].sin()), horizon).unwrap();
    let path = WienerPath::sample(1, 10_000, horizon, 0).unwrap();
    let u = em_solve(spec, &problem, &path, &[horizon], EmOptions::default()).unwrap();
    let expect = GridFunction::from_fn(lat, |x| (-symbol * horizon).exp() * x[0].sin());
    sup_norm(&(u.final_state() - &expect))
}

#[test]
fn deterministic_heat_equation() {
    let h = 2.0 * PI / 32.0;
    // Δ^h f = (f(x+h) − 2f + f(x−h))/h² written as p δ_h − q δ_{−h} with p = q = 1/h.
    let mut laplace = StencilSpec::one_dimensional(1, 1).unwrap();
    laplace.set_p(1, 1.0 / h).unwrap();
    laplace.set_q(1, 1.0 / h).unwrap();
    let err = heat_decay(&laplace, 2.0 * (1.0 - h.cos()) / (h * h));
    assert!(err <= 1e-6, "{err:e}");
    // The central form a δδ has symbol sin²h / h².
    let mut central = StencilSpec::one_dimensional(1, 1).unwrap();
    central.set_a(1, 1, 1.0).unwrap();
    let err = heat_decay(&central, (h.sin() / h).powi(2));
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn euler_maruyama_tracks_the_exact_solution() {
    let lat = circle(64);
    let path = WienerPath::sample(1, 100_000, 1.0, 11).unwrap();
    let spec = example_2_4();
    let em = em_solve(&spec, &cos_problem(lat, 1.0), &path, &[1.0], EmOptions::default()).unwrap();
    let exact = fourier_exact_solve(&spec, &lat, &ModeState::cosine(1.0, 1.0), &path, &[1.0]).unwrap();
    let d = sup_norm(&(em.final_state() - exact.final_state()));
    assert!(d <= 5e-3, "{d:e}");
}

#[test]
fn euler_maruyama_is_linear_in_data() {
    let lat = circle(16);
    let mut spec = StencilSpec::one_dimensional(2, 1).unwrap();
    spec.set_a(1, 1, CoefficientField::spatial("1 + sin(x)/2", |x| 1.0 + 0.5 * x[0].sin())).unwrap();
    spec.set_b(1, 0, 0.5).unwrap();
    spec.set_b(0, 1, 0.3).unwrap();
    let path = WienerPath::sample(2, 2000, 0.5, 8).unwrap();
    let times = [0.25, 0.5];
    let (a, b) = (1.7, -0.6);
    let data = |c: f64, shift: f64| {
        ProblemData::new(GridFunction::from_fn(lat, move |x| c * (x[0] + shift).cos()), 0.5)
            .unwrap()
            .with_forcing(CoefficientField::function("f", move |t, x| c * (t + x[0] + shift).sin()))
            .with_noise_forcing(1, CoefficientField::spatial("g", move |x| c * (2.0 * x[0] + shift).cos()))
    };
    let solve = |p: &ProblemData| em_solve(&spec, p, &path, &times, EmOptions::default()).unwrap();
    let u1 = solve(&data(1.0, 0.0));
    let u2 = solve(&data(1.0, 1.0));
    let combined = ProblemData::new(GridFunction::from_fn(lat, |x| a * x[0].cos() + b * (x[0] + 1.0).cos()), 0.5)
        .unwrap()
        .with_forcing(CoefficientField::function("f", move |t, x| a * (t + x[0]).sin() + b * (t + x[0] + 1.0).sin()))
        .with_noise_forcing(
            1,
            CoefficientField::spatial("g", move |x| a * (2.0 * x[0]).cos() + b * (2.0 * x[0] + 1.0).cos()),
        );
    let u = solve(&combined);
    for i in 0..times.len() {
        let rhs = &u1.states()[i].scale(a) + &u2.states()[i].scale(b);
        let rel = sup_norm(&(&u.states()[i] - &rhs)) / sup_norm(&rhs);
        assert!(rel <= 1e-12, "{rel:e}");
    }
}

#[test]
fn time_step_order_on_a_shared_realization() {
    let lat = circle(32);
    let spec = example_2_4();
    let problem = cos_problem(lat, 1.0);
    // Root mean square over seeds; single paths are too noisy to fit.
    let seeds = 64u64;
    let mut diffs = vec![0.0; 3];
    for seed in 0..seeds {
        let base = WienerPath::sample(1, 250, 1.0, seed).unwrap();
        let sols: Vec<GridFunction> = (0..4u32)
            .map(|l| {
                let p = base.at_level(l).unwrap();
                em_solve(&spec, &problem, &p, &[1.0], EmOptions::default()).unwrap().final_state().clone()
            })
            .collect();
        for i in 0..3 {
            diffs[i] += sup_norm(&(&sols[i] - &sols[i + 1])).powi(2) / seeds as f64;
        }
    }
    let pairs: Vec<(f64, f64)> = diffs.iter().enumerate().map(|(i, &d)| (4e-3 / (1 << i) as f64, d.sqrt())).collect();
    let order = fit_order(&pairs).slope().unwrap();
    assert!((0.4..=1.3).contains(&order), "{order} from {pairs:?}");
}

#[test]
fn exact_integrator_preserves_the_norm() {
    let mut per_level = Vec::new();
    for n in [32, 64, 128, 256] {
        let lat = circle(n);
        let path = WienerPath::sample(1, 200, 1.0, 2).unwrap();
        let times: Vec<f64> = (0..=200).map(|k| path.time(k)).collect();
        let traj = fourier_exact_solve(&example_2_4(), &lat, &ModeState::cosine(1.0, 1.0), &path, &times).unwrap();
        let norms: Vec<f64> = traj.states().iter().map(l2h_norm).collect();
        let (lo, hi) = norms.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi - lo <= 1e-10, "{n}: {lo} .. {hi}");
        per_level.push(hi);
    }
    let (lo, hi) = per_level.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!((hi - lo) / lo < 0.01);
}

#[test]
fn real_even_modes_synthesize_real_fields() {
    let lat = circle(64);
    let path = WienerPath::sample(1, 50, 1.0, 6).unwrap();
    let modes: Vec<ModeState> = ModeState::cosine(1.0, 1.0)
        .into_iter()
        .chain(ModeState::cosine(3.0, 0.25))
        .collect();
    let reference = FourierReference::new(&example_2_4(), lat, modes, path).unwrap();
    for step in [0, 17, 50] {
        let (_, imag) = synthesize(&lat, &reference.modes_at(step));
        assert!(imag < 1e-12, "{imag:e}");
    }
}

#[test]
fn symbol_examples() {
    let h: f64 = 0.1;
    let phi = h.sin() / h;
    let s = fourier_symbol(&example_2_4(), h, 1.0).unwrap();
    assert!((s.drift.re + 2.0 * phi * phi).abs() < 1e-14 && s.drift.im.abs() < 1e-14);
    assert!((s.diffusion[0] - Complex64::new(0.0, 2.0 * phi)).norm() < 1e-14);
    let s = fourier_symbol(&example_2_4(), h, 0.0).unwrap();
    assert_eq!(s.drift.norm(), 0.0);
    assert_eq!(s.diffusion[0].norm(), 0.0);
    let mut reaction = StencilSpec::one_dimensional(1, 1).unwrap();
    reaction.set_a(0, 0, -0.7).unwrap();
    for k in [0.0, 1.0, 5.0, -3.0] {
        assert_eq!(fourier_symbol(&reaction, h, k).unwrap().drift, Complex64::new(-0.7, 0.0));
    }
    let mut variable = example_2_4();
    variable.set_a(0, 0, CoefficientField::spatial("x", |x| x[0])).unwrap();
    assert!(matches!(fourier_symbol(&variable, h, 1.0), Err(Error::NonConstantCoefficient(_))));
}

#[test]
fn exact_solution_values() {
    for (h, expect, tol) in [(0.1, -0.4131150562, 1e-9), (0.05, -0.415389039, 1e-8)] {
        let lat = Lattice::new(1, 64, h).unwrap();
        let path = WienerPath::linear(1.0, 1, &[1.0], 0).unwrap();
        let u = fourier_exact_solve(&example_2_4(), &lat, &ModeState::cosine(1.0, 1.0), &path, &[1.0]).unwrap();
        assert!((u.final_state().values()[0] - expect).abs() <= tol);
    }
}

#[test]
fn deterministic_modes_grow_exponentially() {
    let mut spec = StencilSpec::one_dimensional(1, 1).unwrap();
    spec.set_a(0, 0, 0.3).unwrap();
    let path = WienerPath::sample(1, 10, 2.0, 1).unwrap();
    let lat = circle(8);
    let reference = FourierReference::new(&spec, lat, vec![ModeState::new(2.0, Complex64::new(1.5, -0.5))], path).unwrap();
    let a = reference.modes_at(10)[0].amplitude;
    assert!((a - Complex64::new(1.5, -0.5) * (0.6f64).exp()).norm() < 1e-14);
}

#[test]
fn blow_up_aborts_with_the_step() {
    let lat = circle(16);
    let mut spec = StencilSpec::one_dimensional(1, 1).unwrap();
    spec.set_a(1, 1, 1.0).unwrap();
    // dt far above the explicit limit: mode 4 is multiplied by 1 − dt/h² each step.
    let path = WienerPath::sample(1, 2000, 1000.0, 0).unwrap();
    let problem = ProblemData::new(GridFunction::from_fn(lat, |x| x[0].cos() + 1e-3 * (4.0 * x[0]).cos()), 1000.0).unwrap();
    let err = em_solve(&spec, &problem, &path, &[1000.0], EmOptions::default()).unwrap_err();
    assert!(matches!(err, Error::SolverAbort { step, .. } if step > 0));
}

#[test]
fn trajectories_round_trip_and_clip() {
    let lat = circle(16);
    let path = WienerPath::sample(1, 20, 1.0, 3).unwrap();
    let traj = fourier_exact_solve(&example_2_4(), &lat, &ModeState::cosine(1.0, 1.0), &path, &[0.0, 0.5, 1.0]).unwrap();
    let back = Trajectory::from_bytes(&traj.to_bytes(), traj.seed(), 0).unwrap();
    assert_eq!(back.states(), traj.states());
    assert_eq!(back.record_times(), traj.record_times());
    let clipped = traj.positive_part();
    assert!(clipped.states().iter().all(|s| s.values().iter().all(|&v| v >= 0.0)));
    let dir = tempfile::tempdir().unwrap();
    traj.write_csv_dir(dir.path(), "u").unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3);
    assert!(traj.state_at(0.25).is_err());
}

#[test]
fn grid_modes_reproduce_the_field() {
    let lat = circle(32);
    let f = GridFunction::from_fn(lat, |x| 0.3 + x[0].cos() - 0.2 * (3.0 * x[0]).sin());
    let (g, imag) = synthesize(&lat, &modes_from_grid(&f).unwrap());
    assert!(sup_norm(&(&g - &f)) < 1e-14 && imag < 1e-14);
}
