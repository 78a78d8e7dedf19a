mod common;

use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use stochfd::driver::WienerPath;
use stochfd::fit::fit_order;
use stochfd::grid::{sup_norm, GridFunction, Lattice};
use stochfd::integrator::{fourier_exact_solve, FourierReference, ModeState, Trajectory};
use stochfd::richardson::{extrapolate, weights};
use stochfd::scheme::StencilSpec;
use stochfd::Error;

use common::{random_field, rel_diff, rng};

fn example_2_4() -> StencilSpec {
    let mut s = StencilSpec::one_dimensional(1, 1).unwrap();
    s.set_a(1, 1, 2.0).unwrap();
    s.set_b(1, 0, 2.0).unwrap();
    s
}

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

#[test]
fn weight_examples() {
    assert_eq!(weights(1, 2).unwrap().exact(), &[rational(-1, 3), rational(4, 3)]);
    assert_eq!(weights(1, 1).unwrap().exact(), &[rational(-1, 1), rational(2, 1)]);
    for s in [1, 2] {
        assert_eq!(weights(0, s).unwrap().exact(), &[BigRational::one()]);
    }
    assert_eq!(weights(1, 2).unwrap().to_string(), "-1/3, 4/3");
    assert!(weights(1, 0).is_err());
}

#[test]
fn weight_invariants_hold_exactly() {
    for s in [1, 2] {
        for k in 0..=6 {
            let w = weights(k, s).unwrap();
            assert_eq!(w.exact().len(), k + 1);
            let sum = w.exact().iter().fold(BigRational::zero(), |a, c| a + c);
            assert!(sum.is_one());
            let m = w.moments();
            assert!(m[1..].iter().all(Zero::is_zero), "k = {k}, s = {s}");
        }
    }
}

fn ladder(h: f64, k: usize) -> Vec<Lattice> {
    (0..=k).map(|i| Lattice::new(1, 16 << i, h / (1 << i) as f64).unwrap()).collect()
}

fn trajectory(lat: Lattice, f: GridFunction) -> Trajectory {
    assert_eq!(f.lattice(), &lat);
    Trajectory::new(vec![0.0], vec![f], 7, 0).unwrap()
}

#[test]
fn synthetic_expansion_is_cancelled() {
    let u = |x: &[f64]| (0.3 * x[0]).sin();
    let w = |x: &[f64]| 1.0 + x[0] * x[0];
    let h = 0.2;
    let sols: Vec<Trajectory> = ladder(h, 1)
        .into_iter()
        .map(|lat| {
            let hi = lat.spacing();
            trajectory(lat, GridFunction::from_fn(lat, |x| u(x) + hi * hi * w(x)))
        })
        .collect();
    let v = extrapolate(&sols, &weights(1, 2).unwrap()).unwrap();
    let expect = GridFunction::from_fn(ladder(h, 0)[0], u);
    assert!(rel_diff(v.final_state(), &expect, 1.0) < 1e-14);
    let single = extrapolate(&sols[..1], &weights(0, 2).unwrap()).unwrap();
    assert_eq!(single.states(), sols[0].states());
}

#[test]
fn example_extrapolated_value() {
    let path = WienerPath::linear(1.0, 1, &[1.0], 0).unwrap();
    let sols: Vec<Trajectory> = ladder(0.1, 1)
        .iter()
        .map(|lat| fourier_exact_solve(&example_2_4(), lat, &ModeState::cosine(1.0, 1.0), &path, &[1.0]).unwrap())
        .collect();
    let v = extrapolate(&sols, &weights(1, 2).unwrap()).unwrap();
    assert!((v.final_state().values()[0] + 0.4161470333).abs() <= 1e-9);
}

#[test]
fn extrapolation_raises_the_order() {
    let spec = example_2_4();
    let modes = ModeState::cosine(1.0, 1.0).to_vec();
    let path = WienerPath::sample(1, 100, 1.0, 42).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let w = weights(1, 2).unwrap();
    let pairs: Vec<(f64, f64)> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let lats = ladder(h, 1);
            let sols: Vec<Trajectory> = lats
                .iter()
                .map(|lat| fourier_exact_solve(&spec, lat, &modes, &path, &times).unwrap())
                .collect();
            let v = extrapolate(&sols, &w).unwrap();
            let truth = FourierReference::continuum(&spec, lats[0], modes.clone(), path.clone())
                .unwrap()
                .trajectory(&times)
                .unwrap();
            let err = v
                .states()
                .iter()
                .zip(truth.states())
                .map(|(a, b)| sup_norm(&(a - b)))
                .fold(0.0, f64::max);
            (h, err)
        })
        .collect();
    let order = fit_order(&pairs).slope().unwrap();
    assert!(order >= 3.6, "{order} from {pairs:?}");
}

#[test]
fn summation_order_does_not_matter() {
    let mut r = rng(3);
    let lat = Lattice::new(1, 32, 0.1).unwrap();
    for k in 1..=4 {
        let w = weights(k, 2).unwrap();
        let c = w.as_f64();
        let fields: Vec<GridFunction> = (0..=k).map(|_| random_field(lat, &mut r)).collect();
        let forward = w.combine(&fields).unwrap();
        let mut reversed = GridFunction::zeros(lat);
        for i in (0..=k).rev() {
            reversed.axpy(c[i], &fields[i]);
        }
        let scale = c.iter().map(|x| x.abs()).sum::<f64>();
        assert!(sup_norm(&(&forward - &reversed)) <= 1e-15 * scale * 2.0);
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let lats = ladder(0.1, 1);
    let sols: Vec<Trajectory> = lats.iter().map(|&l| trajectory(l, GridFunction::zeros(l))).collect();
    let w = weights(1, 2).unwrap();
    assert!(matches!(extrapolate(&sols[..1], &w), Err(Error::WeightCount { .. })));
    let other_seed = Trajectory::new(vec![0.0], vec![GridFunction::zeros(lats[1])], 8, 0).unwrap();
    assert!(matches!(
        extrapolate(&[sols[0].clone(), other_seed], &w),
        Err(Error::SeedMismatch(7, 8))
    ));
    let swapped = [sols[1].clone(), sols[0].clone()];
    assert!(matches!(extrapolate(&swapped, &w), Err(Error::NonNested(_))));
    let later = Trajectory::new(vec![0.5], vec![GridFunction::zeros(lats[1])], 7, 0).unwrap();
    assert!(matches!(
        extrapolate(&[sols[0].clone(), later], &w),
        Err(Error::RecordTimeMismatch)
    ));
}

proptest! {
    #[test]
    fn extrapolation_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let lats = ladder(0.25, 2);
        let f: Vec<Trajectory> = lats.iter().map(|&l| trajectory(l, random_field(l, &mut r))).collect();
        let g: Vec<Trajectory> = lats.iter().map(|&l| trajectory(l, random_field(l, &mut r))).collect();
        let mix: Vec<Trajectory> = f
            .iter()
            .zip(&g)
            .map(|(x, y)| trajectory(*x.lattice(), &x.final_state().scale(a) + &y.final_state().scale(b)))
            .collect();
        let w = weights(2, 2).unwrap();
        let lhs = extrapolate(&mix, &w).unwrap();
        let rhs = &extrapolate(&f, &w).unwrap().final_state().scale(a)
            + &extrapolate(&g, &w).unwrap().final_state().scale(b);
        prop_assert!(rel_diff(lhs.final_state(), &rhs, 1.0) < 1e-13);
    }
}
