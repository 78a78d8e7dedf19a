#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

use stochfd::grid::{
    forward_diff, inner, l2h_norm, mean_op, multi_diff, multi_mean, odd_part, p_op, second_diff, shift, sup_norm,
    symmetric_diff, Direction, GridFunction, Lattice, Sign,
};
use stochfd::spectral::Spectral;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Values uniform in [-1, 1].
pub fn random_field(lat: Lattice, rng: &mut ChaCha8Rng) -> GridFunction {
    let values = (0..lat.len()).map(|_| 2.0 * uniform(rng) - 1.0).collect();
    GridFunction::new(lat, values).unwrap()
}

/// `sup|a − b| / max(sup|a|, sup|b|, scale)`.
pub fn rel_diff(a: &GridFunction, b: &GridFunction, scale: f64) -> f64 {
    sup_norm(&(a - b)) / sup_norm(a).max(sup_norm(b)).max(scale).max(f64::MIN_POSITIVE)
}

fn rel_scalar(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(scale).max(f64::MIN_POSITIVE)
}

/// Lattices and directions the identities are exercised on.
pub fn identity_cases() -> Vec<(Lattice, Vec<Direction>)> {
    vec![
        (Lattice::new(1, 16, 0.1).unwrap(), vec![Direction::from(1), Direction::from(2), Direction::from(-3)]),
        (
            Lattice::new(2, 8, 0.25).unwrap(),
            vec![
                Direction::new(vec![1, 0]),
                Direction::new(vec![1, 1]),
                Direction::new(vec![2, -1]),
            ],
        ),
    ]
}

const SAMPLES: usize = 100;

/// Runs `check` on `SAMPLES` random triples for every lattice and direction
/// pair and returns the worst value.
fn worst(seed: u64, check: impl Fn(&GridFunction, &GridFunction, &GridFunction, &Direction, &Direction) -> f64) -> f64 {
    let mut r = rng(seed);
    let mut w: f64 = 0.0;
    for (lat, dirs) in identity_cases() {
        for s in 0..SAMPLES {
            let u = random_field(lat, &mut r);
            let v = random_field(lat, &mut r);
            let a = random_field(lat, &mut r);
            let l = &dirs[s % dirs.len()];
            let m = &dirs[(s + 1) % dirs.len()];
            w = w.max(check(&u, &v, &a, l, m));
        }
    }
    w
}

fn prod(u: &GridFunction, v: &GridFunction) -> GridFunction {
    u.zip_with(v, |a, b| a * b)
}

/// Worst relative residual of each discrete-calculus identity over random
/// grid functions.
pub fn identity_suite() -> Vec<(&'static str, f64)> {
    vec![
        (
            "forward Leibniz with shift",
            worst(1, |u, v, _, l, _| {
                let lhs = forward_diff(&prod(u, v), l, Sign::Plus).unwrap();
                let tu = shift(u, l, Sign::Plus).unwrap();
                let rhs = &prod(v, &forward_diff(u, l, Sign::Plus).unwrap())
                    + &prod(&tu, &forward_diff(v, l, Sign::Plus).unwrap());
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "forward Leibniz with h-correction",
            worst(2, |u, v, _, l, _| {
                let h = u.lattice().spacing();
                let du = forward_diff(u, l, Sign::Plus).unwrap();
                let dv = forward_diff(v, l, Sign::Plus).unwrap();
                let lhs = forward_diff(&prod(u, v), l, Sign::Plus).unwrap();
                let rhs = &(&prod(v, &du) + &prod(u, &dv)) + &prod(&du, &dv).scale(h);
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "central Leibniz",
            worst(3, |u, v, _, l, _| {
                let lhs = symmetric_diff(&prod(u, v), l).unwrap();
                let rhs = &prod(&symmetric_diff(u, l).unwrap(), &mean_op(v, l).unwrap())
                    + &prod(&mean_op(u, l).unwrap(), &symmetric_diff(v, l).unwrap());
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "mean as identity plus second difference",
            worst(4, |u, _, _, l, _| {
                let h = u.lattice().spacing();
                let rhs = u + &second_diff(u, l).unwrap().scale(0.5 * h * h);
                rel_diff(&mean_op(u, l).unwrap(), &rhs, 1.0)
            }),
        ),
        (
            "mean of a product, P and R form",
            worst(5, |u, _, a, _, m| {
                let h = u.lattice().spacing();
                let iu = mean_op(u, m).unwrap();
                let lhs = mean_op(&prod(a, u), m).unwrap();
                let rhs = &(&prod(a, &iu) + &prod(&p_op(a, m).unwrap(), &iu).scale(h))
                    + &prod(&symmetric_diff(a, m).unwrap(), &odd_part(u, m).unwrap()).scale(h);
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "mean of a product, I and R form",
            worst(6, |u, _, a, _, m| {
                let lhs = mean_op(&prod(a, u), m).unwrap();
                let rhs = &prod(&mean_op(a, m).unwrap(), &mean_op(u, m).unwrap())
                    + &prod(&odd_part(a, m).unwrap(), &odd_part(u, m).unwrap());
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "general Leibniz, one direction",
            worst(7, |u, v, _, l, _| {
                let lam = [l.clone()];
                let lhs = multi_diff(&prod(u, v), &lam).unwrap();
                let rhs = &prod(&multi_mean(u, &lam).unwrap(), &multi_diff(v, &lam).unwrap())
                    + &prod(&multi_diff(u, &lam).unwrap(), &multi_mean(v, &lam).unwrap());
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "general Leibniz, two directions",
            worst(8, |u, v, _, l, m| {
                let lhs = multi_diff(&prod(u, v), &[l.clone(), m.clone()]).unwrap();
                let d = |f: &GridFunction, a: &[Direction], i: &[Direction]| {
                    multi_diff(&multi_mean(f, i).unwrap(), a).unwrap()
                };
                let (l1, m1) = (std::slice::from_ref(l), std::slice::from_ref(m));
                let both = [l.clone(), m.clone()];
                let terms = [
                    prod(&d(u, &[], &both), &d(v, &both, &[])),
                    prod(&d(u, l1, m1), &d(v, m1, l1)),
                    prod(&d(u, m1, l1), &d(v, l1, m1)),
                    prod(&d(u, &both, &[]), &d(v, &[], &both)),
                ];
                let rhs = terms.iter().skip(1).fold(terms[0].clone(), |acc, t| &acc + t);
                rel_diff(&lhs, &rhs, 1.0)
            }),
        ),
        (
            "telescoping mean expansion, m <= 3",
            worst(9, |u, _, _, l, m| {
                let h = u.lattice().spacing();
                let alpha = [l.clone(), m.clone(), l.clone()];
                let mut worst: f64 = 0.0;
                for len in 1..=3 {
                    let a = &alpha[..len];
                    let mut tele = GridFunction::zeros(*u.lattice());
                    for j in 0..len {
                        let inner_mean = multi_mean(u, &a[j + 1..]).unwrap();
                        tele = &tele + &p_op(&inner_mean, &a[j]).unwrap();
                    }
                    let rhs = u + &tele.scale(h);
                    worst = worst.max(rel_diff(&multi_mean(u, a).unwrap(), &rhs, 1.0));
                }
                worst
            }),
        ),
        (
            "summation by parts",
            worst(10, |u, v, _, l, _| {
                let a = inner(&symmetric_diff(u, l).unwrap(), v).unwrap();
                let b = -inner(u, &symmetric_diff(v, l).unwrap()).unwrap();
                let scale = l2h_norm(u) * l2h_norm(v) / u.lattice().spacing();
                rel_scalar(a, b, scale)
            }),
        ),
        (
            "mean is self-adjoint",
            worst(11, |u, v, _, l, _| {
                let a = inner(&mean_op(u, l).unwrap(), v).unwrap();
                let b = inner(u, &mean_op(v, l).unwrap()).unwrap();
                rel_scalar(a, b, l2h_norm(u) * l2h_norm(v))
            }),
        ),
        (
            "odd part is skew-adjoint",
            worst(12, |u, v, _, l, _| {
                let a = inner(&odd_part(u, l).unwrap(), v).unwrap();
                let b = -inner(u, &odd_part(v, l).unwrap()).unwrap();
                rel_scalar(a, b, l2h_norm(u) * l2h_norm(v))
            }),
        ),
    ]
}

/// Smooth periodic sample on `[0, 2π)^d`: a few low modes.
pub fn smooth_field(lat: Lattice, rng: &mut ChaCha8Rng) -> GridFunction {
    let coef: Vec<(f64, f64, f64)> = (0..4).map(|_| (uniform(rng) - 0.5, uniform(rng) - 0.5, uniform(rng))).collect();
    GridFunction::from_fn(lat, |x| {
        coef.iter()
            .enumerate()
            .map(|(i, (c, s, phase))| {
                let k = (i + 1) as f64;
                let arg: f64 = x.iter().enumerate().map(|(a, xi)| (a + 1) as f64 * k * xi).sum::<f64>() + phase;
                c * arg.cos() + s * (2.0 * arg).sin()
            })
            .sum()
    })
}

/// `max_k max_λ |δ_λ v| / (Π|λ_i| |D^k v|_0)` over smooth samples; at most
/// one.
pub fn difference_norm_bound_ratio() -> f64 {
    let mut r = rng(13);
    let mut worst: f64 = 0.0;
    for (dim, n) in [(1usize, 32usize), (2, 16)] {
        let lat = Lattice::periodic(dim, n, 2.0 * std::f64::consts::PI).unwrap();
        let spectral = Spectral::new(lat);
        let dirs: Vec<Direction> = if dim == 1 {
            vec![Direction::from(1), Direction::from(2)]
        } else {
            vec![Direction::new(vec![1, 0]), Direction::new(vec![1, -1]), Direction::new(vec![0, 2])]
        };
        for _ in 0..20 {
            let v = smooth_field(lat, &mut r);
            for k in 1..=3u32 {
                let dk = spectral.derivative_tensor_norm(&v, k);
                for start in 0..dirs.len() {
                    let alpha: Vec<Direction> = (0..k as usize).map(|i| dirs[(start + i) % dirs.len()].clone()).collect();
                    let lam: f64 = alpha.iter().map(|d| d.norm()).product();
                    let central = l2h_norm(&multi_diff(&v, &alpha).unwrap());
                    let mut fwd = v.clone();
                    for d in &alpha {
                        fwd = forward_diff(&fwd, d, Sign::Plus).unwrap();
                    }
                    worst = worst.max(central / (lam * dk)).max(l2h_norm(&fwd) / (lam * dk));
                }
            }
        }
    }
    worst
}
