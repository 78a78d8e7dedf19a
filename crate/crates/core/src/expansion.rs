//! Expansion of scheme solutions in powers of `h`.
//!
//! Taylor-expanding the difference operators in `h` gives operators
//! `𝓛^(n)`, `𝓜^(n)r` with `L^h ≈ Σ (h^n/n!) 𝓛^(n)`. The coefficients
//! `v^(n)` of `u^h = Σ (h^n/n!) v^(n) + …` solve a triangular system of
//! SPDEs driven by these operators. Derivatives are taken spectrally on the
//! periodic lattice, so band-limited data is differentiated exactly.

use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::driver::WienerPath;
use crate::error::{Error, Result};
use crate::fit::OrderCheck;
use crate::grid::{l2h_norm, GridFunction, Lattice};
use crate::integrator::{record_indices, ReferenceSolution, Trajectory};
use crate::scheme::{apply_l, apply_m, CoefficientField, StencilSpec};
use crate::spectral::Spectral;

/// Energy fraction in the top third of the band above which derivative
/// powers are considered unreliable.
pub const ALIASING_THRESHOLD: f64 = 1e-8;

/// `B_n`: 1 for even `n`, 0 for odd.
pub fn b_const(n: usize) -> u32 {
    u32::from(n % 2 == 0)
}

/// `A_{nj} = n! / ((j+1)! (n−j+1)!)` for even `n`, `j`; zero otherwise.
pub fn a_const(n: usize, j: usize) -> Result<BigRational> {
    if j > n {
        return Err(Error::OutOfRange(format!("A_(n,j) needs j <= n, got n = {n}, j = {j}")));
    }
    if n % 2 == 1 || j % 2 == 1 {
        return Ok(BigRational::zero());
    }
    let fact = |m: usize| (1..=m).fold(BigInt::from(1), |a, b| a * BigInt::from(b));
    Ok(BigRational::new(fact(n), fact(j + 1) * fact(n - j + 1)))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, b| a * b as f64)
}

enum Coef {
    One,
    Field {
        field: CoefficientField,
        cached: Option<Vec<f64>>,
    },
}

/// `coef(x) · (multiplier applied to f)`.
struct Term {
    coef: Coef,
    symbol: Vec<Complex64>,
}

/// Folds constant-coefficient terms into a single multiplier.
fn merge(lattice: &Lattice, raw: Vec<(CoefficientField, Vec<Complex64>)>) -> Result<Vec<Term>> {
    let mut constant: Option<Vec<Complex64>> = None;
    let mut terms = Vec::new();
    for (field, symbol) in raw {
        match field.constant_value() {
            Some(0.0) => {}
            Some(c) => {
                let acc = constant.get_or_insert_with(|| vec![Complex64::zero(); symbol.len()]);
                for (a, s) in acc.iter_mut().zip(&symbol) {
                    *a += c * s;
                }
            }
            None => {
                let cached = if field.is_time_dependent() {
                    None
                } else {
                    Some(field.eval_on(lattice, 0.0)?)
                };
                terms.push(Term {
                    coef: Coef::Field { field, cached },
                    symbol,
                });
            }
        }
    }
    if let Some(symbol) = constant {
        terms.insert(0, Term { coef: Coef::One, symbol });
    }
    Ok(terms)
}

/// `𝓛^(n)` and `𝓜^(n)r` for `n ≤ max_order` on one periodic lattice.
pub struct ExpansionOperators {
    spec: StencilSpec,
    spectral: Spectral,
    max_order: usize,
    l_terms: Vec<Vec<Term>>,
    m_terms: Vec<Vec<Vec<Term>>>,
    warned: AtomicBool,
}

impl ExpansionOperators {
    pub fn new(spec: &StencilSpec, lattice: Lattice, max_order: usize) -> Result<Self> {
        if lattice.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                got: lattice.dim(),
            });
        }
        let spectral = Spectral::new(lattice);
        let dirs = spec.directions();
        let zero = spec.zero_index();
        let sigma: Vec<Vec<Complex64>> = dirs
            .iter()
            .map(|d| spectral.directional_symbol(d, 1))
            .collect();
        let power = |i: usize, p: usize| -> Vec<Complex64> { sigma[i].iter().map(|s| s.powu(p as u32)).collect() };
        let mut l_terms = Vec::with_capacity(max_order + 1);
        let mut m_terms = Vec::with_capacity(max_order + 1);
        for n in 0..=max_order {
            let bn = b_const(n) as f64;
            let inv = 1.0 / (n + 1) as f64;
            let mut raw = Vec::new();
            for i in 0..dirs.len() {
                for j in i..dirs.len() {
                    let Some(a) = spec.a(i, j) else { continue };
                    let symbol = if i == zero && j == zero {
                        if n > 0 {
                            continue;
                        }
                        vec![Complex64::new(1.0, 0.0); lattice.len()]
                    } else if i == zero || j == zero {
                        // 𝔞^{λ0} + 𝔞^{0λ} = 2𝔞^{0λ}
                        let l = if i == zero { j } else { i };
                        power(l, n + 1).into_iter().map(|s| s * (2.0 * bn * inv)).collect()
                    } else {
                        let mult = if i == j { 1.0 } else { 2.0 };
                        let mut acc = vec![Complex64::zero(); lattice.len()];
                        for r in (0..=n).step_by(2) {
                            let c = a_const(n, r)?.to_f64().unwrap() * mult;
                            if c == 0.0 {
                                continue;
                            }
                            for (v, (x, y)) in acc.iter_mut().zip(power(i, r + 1).iter().zip(power(j, n - r + 1))) {
                                *v += c * x * y;
                            }
                        }
                        acc
                    };
                    raw.push((a.clone(), symbol));
                }
            }
            let sign_q = if (n + 1) % 2 == 0 { 1.0 } else { -1.0 };
            for g in spec.nonzero() {
                if let Some(p) = spec.p(g) {
                    raw.push((p.clone(), power(g, n + 1).into_iter().map(|s| s * inv).collect()));
                }
                if let Some(q) = spec.q(g) {
                    raw.push((q.clone(), power(g, n + 1).into_iter().map(|s| s * (sign_q * inv)).collect()));
                }
            }
            l_terms.push(merge(&lattice, raw)?);

            let mut per_driver = Vec::with_capacity(spec.drivers());
            for r in 0..spec.drivers() {
                let mut raw = Vec::new();
                for i in 0..dirs.len() {
                    let Some(b) = spec.b(i, r) else { continue };
                    if i == zero {
                        if n == 0 {
                            raw.push((b.clone(), vec![Complex64::new(1.0, 0.0); lattice.len()]));
                        }
                    } else if bn != 0.0 {
                        raw.push((b.clone(), power(i, n + 1).into_iter().map(|s| s * inv).collect()));
                    }
                }
                per_driver.push(merge(&lattice, raw)?);
            }
            m_terms.push(per_driver);
        }
        Ok(Self {
            spec: spec.clone(),
            spectral,
            max_order,
            l_terms,
            m_terms,
            warned: AtomicBool::new(false),
        })
    }

    pub fn lattice(&self) -> &Lattice {
        self.spectral.lattice()
    }

    pub fn spec(&self) -> &StencilSpec {
        &self.spec
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    fn check_order(&self, n: usize) -> Result<()> {
        if n > self.max_order {
            return Err(Error::OutOfRange(format!(
                "expansion order {n} exceeds the prepared maximum {}",
                self.max_order
            )));
        }
        Ok(())
    }

    fn transform(&self, f: &GridFunction) -> Result<Vec<Complex64>> {
        if f.lattice() != self.lattice() {
            return Err(Error::LatticeMismatch);
        }
        let hat = self.spectral.forward(f);
        let frac = self.spectral.high_mode_fraction_of(&hat);
        if frac > ALIASING_THRESHOLD && !self.warned.swap(true, Ordering::Relaxed) {
            warn!(
                "{:.1e} of the spectral energy sits in the top third of the band on {}; high derivative powers will be inaccurate",
                frac,
                self.lattice()
            );
        }
        Ok(hat)
    }

    fn apply_terms(&self, terms: &[Term], t: f64, hat: &[Complex64]) -> Result<GridFunction> {
        let mut out = GridFunction::zeros(*self.lattice());
        for term in terms {
            let g = self.spectral.apply_multiplier(hat, &term.symbol);
            match &term.coef {
                Coef::One => out.axpy(1.0, &g),
                Coef::Field {
                    cached: Some(v), ..
                } => out.add_product(v, &g),
                Coef::Field { field, cached: None } => {
                    out.add_product(&field.eval_on(self.lattice(), t)?, &g)
                }
            }
        }
        Ok(out)
    }

    /// `𝓛^(n)_t f`.
    pub fn apply_ln(&self, n: usize, t: f64, f: &GridFunction) -> Result<GridFunction> {
        self.check_order(n)?;
        let hat = self.transform(f)?;
        self.apply_terms(&self.l_terms[n], t, &hat)
    }

    /// `(𝓜^(n)r_t f)_r`.
    pub fn apply_mn(&self, n: usize, t: f64, f: &GridFunction) -> Result<Vec<GridFunction>> {
        self.check_order(n)?;
        let hat = self.transform(f)?;
        self.m_terms[n]
            .iter()
            .map(|terms| self.apply_terms(terms, t, &hat))
            .collect()
    }

    /// Fourier multipliers of `𝓛^(n)` and `𝓜^(n)r` when every coefficient is
    /// constant.
    pub fn constant_symbols(&self, n: usize) -> Option<(Vec<Complex64>, Vec<Vec<Complex64>>)> {
        let len = self.lattice().len();
        let collapse = |terms: &[Term]| -> Option<Vec<Complex64>> {
            match terms {
                [] => Some(vec![Complex64::zero(); len]),
                [Term { coef: Coef::One, symbol }] => Some(symbol.clone()),
                _ => None,
            }
        };
        let l = collapse(self.l_terms.get(n)?)?;
        let m = self.m_terms[n]
            .iter()
            .map(|t| collapse(t))
            .collect::<Option<Vec<_>>>()?;
        Some((l, m))
    }

    /// `Σ_{i≤n} (h^i/i!) 𝓛^(i) f`.
    pub fn truncated_l(&self, n: usize, h: f64, t: f64, f: &GridFunction) -> Result<GridFunction> {
        self.check_order(n)?;
        let hat = self.transform(f)?;
        let mut out = GridFunction::zeros(*self.lattice());
        for i in 0..=n {
            out.axpy(h.powi(i as i32) / factorial(i), &self.apply_terms(&self.l_terms[i], t, &hat)?);
        }
        Ok(out)
    }

    /// `Σ_{i≤n} (h^i/i!) 𝓜^(i)r f` for every driver.
    pub fn truncated_m(&self, n: usize, h: f64, t: f64, f: &GridFunction) -> Result<Vec<GridFunction>> {
        self.check_order(n)?;
        let hat = self.transform(f)?;
        let mut out = vec![GridFunction::zeros(*self.lattice()); self.spec.drivers()];
        for i in 0..=n {
            let c = h.powi(i as i32) / factorial(i);
            for (o, terms) in out.iter_mut().zip(&self.m_terms[i]) {
                o.axpy(c, &self.apply_terms(terms, t, &hat)?);
            }
        }
        Ok(out)
    }
}

/// Time stepping for the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HierarchyStepper {
    /// Explicit Euler–Maruyama in physical space; any coefficients.
    #[default]
    EulerMaruyama,
    /// Per-mode exponential Itô step for constant coefficients: the
    /// homogeneous part is propagated exactly and the source terms are
    /// frozen at the left endpoint.
    ExponentialEuler,
}

/// `v^(0), …, v^(k)` at shared record times.
#[derive(Debug, Clone)]
pub struct ExpansionHierarchy {
    pub orders: Vec<Trajectory>,
}

impl ExpansionHierarchy {
    pub fn order(&self, n: usize) -> &Trajectory {
        &self.orders[n]
    }

    /// `Σ_{n≤k} (h^n/n!) v^(n)` at every record time.
    pub fn expansion(&self, h: f64) -> Result<Trajectory> {
        let base = &self.orders[0];
        let states = (0..base.record_times().len())
            .map(|t| {
                let mut s = base.states()[t].clone();
                for (n, v) in self.orders.iter().enumerate().skip(1) {
                    s.axpy(h.powi(n as i32) / factorial(n), &v.states()[t]);
                }
                s
            })
            .collect();
        let (seed, level) = base.path_ref();
        Trajectory::new(base.record_times().to_vec(), states, seed, level)
    }

    pub fn write_csv_dir(&self, dir: &std::path::Path) -> Result<()> {
        for (n, v) in self.orders.iter().enumerate() {
            v.write_csv_dir(dir, &format!("v{n}"))?;
        }
        Ok(())
    }
}

/// Integrates `dv^(n) = (𝓛^(0) v^(n) + Σ_{l=1}^n C(n,l) 𝓛^(l) v^(n−l)) dt
/// + (𝓜^(0)r v^(n) + Σ C(n,l) 𝓜^(l)r v^(n−l)) dw^r`, `v^(n)(0) = 0`, for
/// `n = 1..=k` on the step grid of `path`, with `v^(0)` supplied by `v0`.
pub fn solve_hierarchy(
    ops: &ExpansionOperators,
    k: usize,
    v0: &dyn ReferenceSolution,
    path: &WienerPath,
    record_times: &[f64],
    stepper: HierarchyStepper,
) -> Result<ExpansionHierarchy> {
    ops.check_order(k)?;
    if v0.lattice() != ops.lattice() {
        return Err(Error::LatticeMismatch);
    }
    if path.drivers() != ops.spec.drivers() {
        return Err(Error::DimensionMismatch {
            expected: ops.spec.drivers(),
            got: path.drivers(),
        });
    }
    let record = record_indices(path, record_times)?;
    let last = record.last().copied().unwrap_or(0);
    let lattice = *ops.lattice();
    let mut recorded: Vec<Vec<GridFunction>> = vec![Vec::with_capacity(record.len()); k + 1];
    let mut next = 0;
    let mut push = |step: usize, v0: &GridFunction, vs: &[GridFunction], rec: &mut Vec<Vec<GridFunction>>| {
        while next < record.len() && record[next] == step {
            rec[0].push(v0.clone());
            for (n, v) in vs.iter().enumerate() {
                rec[n + 1].push(v.clone());
            }
            next += 1;
        }
    };

    let mut v: Vec<GridFunction> = vec![GridFunction::zeros(lattice); k];
    match stepper {
        HierarchyStepper::EulerMaruyama => {
            let mut current0 = v0.state(0)?;
            push(0, &current0, &v, &mut recorded);
            for step in 0..last {
                let t = path.time(step);
                let dt = path.dt();
                let dw: Vec<f64> = (0..path.drivers())
                    .map(|r| path.increment(r, step))
                    .collect::<Result<_>>()?;
                let all: Vec<&GridFunction> = std::iter::once(&current0).chain(v.iter()).collect();
                let mut next_v = Vec::with_capacity(k);
                for n in 1..=k {
                    let mut du = GridFunction::zeros(lattice);
                    for l in 0..=n {
                        let c = binomial(n, l);
                        let src = all[n - l];
                        du.axpy(c * dt, &ops.apply_ln(l, t, src)?);
                        for (r, m) in ops.apply_mn(l, t, src)?.iter().enumerate() {
                            du.axpy(c * dw[r], m);
                        }
                    }
                    let updated = &v[n - 1] + &du;
                    if !updated.is_finite() {
                        return Err(Error::SolverAbort {
                            step: step + 1,
                            t: path.time(step + 1),
                        });
                    }
                    next_v.push(updated);
                }
                v = next_v;
                current0 = v0.state(step + 1)?;
                push(step + 1, &current0, &v, &mut recorded);
            }
        }
        HierarchyStepper::ExponentialEuler => {
            let symbols = (0..=k)
                .map(|n| ops.constant_symbols(n))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    Error::NonConstantCoefficient(
                        "the exponential hierarchy stepper needs constant coefficients".into(),
                    )
                })?;
            let spectral = &ops.spectral;
            let modes = lattice.len();
            let mut hats: Vec<Vec<Complex64>> = vec![vec![Complex64::zero(); modes]; k];
            let first0 = v0.state(0)?;
            push(0, &first0, &v, &mut recorded);
            let mut hat0 = ops.transform(&first0)?;
            for step in 0..last {
                let dt = path.dt();
                let dw: Vec<f64> = (0..path.drivers())
                    .map(|r| path.increment(r, step))
                    .collect::<Result<_>>()?;
                let (l0, m0) = &symbols[0];
                let mut next_hats = Vec::with_capacity(k);
                for n in 1..=k {
                    let mut out = Vec::with_capacity(modes);
                    for q in 0..modes {
                        let src = |j: usize| if j == 0 { hat0[q] } else { hats[j - 1][q] };
                        let mut s = Complex64::zero();
                        let mut rs = vec![Complex64::zero(); path.drivers()];
                        for l in 1..=n {
                            let c = binomial(n, l);
                            let x = src(n - l);
                            s += c * symbols[l].0[q] * x;
                            for (r, rr) in rs.iter_mut().enumerate() {
                                *rr += c * symbols[l].1[r][q] * x;
                            }
                        }
                        let mut expo = l0[q] * dt;
                        let mut incr = s * dt;
                        for r in 0..path.drivers() {
                            let m = m0[r][q];
                            expo += -0.5 * m * m * dt + m * dw[r];
                            incr += -m * rs[r] * dt + rs[r] * dw[r];
                        }
                        out.push(expo.exp() * (hats[n - 1][q] + incr));
                    }
                    next_hats.push(out);
                }
                hats = next_hats;
                let current0 = v0.state(step + 1)?;
                hat0 = ops.transform(&current0)?;
                let due = record.binary_search(&(step + 1)).is_ok();
                if due || hats.iter().any(|h| h.iter().any(|c| !c.is_finite())) {
                    v = hats.iter().map(|h| spectral.inverse_real(h.clone())).collect();
                    if v.iter().any(|g| !g.is_finite()) {
                        return Err(Error::SolverAbort {
                            step: step + 1,
                            t: path.time(step + 1),
                        });
                    }
                }
                push(step + 1, &current0, &v, &mut recorded);
            }
        }
    }
    let orders = recorded
        .into_iter()
        .map(|states| Trajectory::new(record_times.to_vec(), states, path.seed(), path.level()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExpansionHierarchy { orders })
}

/// Residual norms of the truncated operator expansions and their fitted
/// orders over a lattice ladder.
#[derive(Debug, Clone)]
pub struct RemainderCheck {
    pub n: usize,
    /// `(h, |L^h φ − Σ_{i≤n} (h^i/i!) 𝓛^(i) φ|_{l_{h,2}})`
    pub l_pairs: Vec<(f64, f64)>,
    pub l_order: OrderCheck,
    /// `(h, (Σ_r |M^{h,r} φ − Σ_{i≤n} (h^i/i!) 𝓜^(i)r φ|²_{l_{h,2}})^{1/2})`
    pub m_pairs: Vec<(f64, f64)>,
    pub m_order: OrderCheck,
}

pub fn remainder_order_check(
    spec: &StencilSpec,
    n: usize,
    phi: impl Fn(&[f64]) -> f64,
    lattices: &[Lattice],
    t: f64,
) -> Result<RemainderCheck> {
    let mut l_pairs = Vec::with_capacity(lattices.len());
    let mut m_pairs = Vec::with_capacity(lattices.len());
    for lattice in lattices {
        let h = lattice.spacing();
        let ops = ExpansionOperators::new(spec, *lattice, n)?;
        let f = GridFunction::from_fn(*lattice, &phi);
        let lr = &apply_l(spec, t, &f)? - &ops.truncated_l(n, h, t, &f)?;
        l_pairs.push((h, l2h_norm(&lr)));
        let m_disc = apply_m(spec, t, &f)?;
        let m_exp = ops.truncated_m(n, h, t, &f)?;
        let sq: f64 = m_disc
            .iter()
            .zip(&m_exp)
            .map(|(a, b)| l2h_norm(&(a - b)).powi(2))
            .sum();
        m_pairs.push((h, sq.sqrt()));
    }
    Ok(RemainderCheck {
        n,
        l_order: OrderCheck::from_pairs(&l_pairs),
        l_pairs,
        m_order: OrderCheck::from_pairs(&m_pairs),
        m_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sup_norm;
    use crate::integrator::{FourierReference, ModeState};
    use num_traits::One;
    use std::f64::consts::PI;

    fn example_2_4() -> StencilSpec {
        let mut s = StencilSpec::one_dimensional(1, 1).unwrap();
        s.set_a(1, 1, 2.0).unwrap();
        s.set_b(1, 0, 2.0).unwrap();
        s
    }

    #[test]
    fn constants() {
        assert_eq!(b_const(1), 0);
        assert_eq!(b_const(2), 1);
        assert_eq!(a_const(2, 0).unwrap(), BigRational::new(1.into(), 3.into()));
        assert!(a_const(3, 2).unwrap().is_zero());
        assert!(a_const(0, 0).unwrap().is_one());
        assert!(a_const(2, 3).is_err());
    }

    #[test]
    fn example_operators_on_cosine() {
        let lat = Lattice::periodic(1, 32, 2.0 * PI).unwrap();
        let ops = ExpansionOperators::new(&example_2_4(), lat, 3).unwrap();
        let f = GridFunction::from_fn(lat, |x| x[0].cos());
        let l2 = ops.apply_ln(2, 0.0, &f).unwrap();
        let m2 = &ops.apply_mn(2, 0.0, &f).unwrap()[0];
        let l1 = ops.apply_ln(1, 0.0, &f).unwrap();
        let m3 = &ops.apply_mn(3, 0.0, &f).unwrap()[0];
        for i in 0..lat.len() {
            let x = lat.coords(i)[0];
            assert!((l2.values()[i] - 4.0 / 3.0 * x.cos()).abs() < 1e-11);
            assert!((m2.values()[i] - 2.0 / 3.0 * x.sin()).abs() < 1e-11);
        }
        assert_eq!(sup_norm(&l1), 0.0);
        assert_eq!(sup_norm(m3), 0.0);
        let c = GridFunction::constant(lat, 2.0);
        for n in 0..=3 {
            assert!(sup_norm(&ops.apply_ln(n, 0.0, &c).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn second_order_term_matches_h_derivative() {
        // L^h = 𝓛^(0) + (h²/2) 𝓛^(2) + O(h⁴) for the symmetric scheme.
        let spec = example_2_4();
        let lat = Lattice::periodic(1, 64, 2.0 * PI).unwrap();
        let ops = ExpansionOperators::new(&spec, lat, 2).unwrap();
        let f = |x: f64| x.cos() + 0.2 * (2.0 * x).sin();
        let f2 = |x: f64| -x.cos() - 0.8 * (2.0 * x).sin();
        let lh = |h: f64, x: f64| 2.0 * (f(x + 2.0 * h) - 2.0 * f(x) + f(x - 2.0 * h)) / (4.0 * h * h);
        let g = GridFunction::from_fn(lat, |x| f(x[0]));
        let l2 = ops.apply_ln(2, 0.0, &g).unwrap();
        let e = 1e-2;
        for i in (0..lat.len()).step_by(7) {
            let x = lat.coords(i)[0];
            let second = 2.0 * (lh(e, x) - 2.0 * f2(x)) / (e * e);
            assert!((second - l2.values()[i]).abs() < 1e-2, "{second} vs {}", l2.values()[i]);
        }
    }

    #[test]
    fn hierarchy_for_symmetric_example() {
        let spec = example_2_4();
        let lat = Lattice::periodic(1, 16, 2.0 * PI).unwrap();
        let path = WienerPath::sample(1, 2000, 0.2, 3).unwrap();
        let ops = ExpansionOperators::new(&spec, lat, 2).unwrap();
        let v0 = FourierReference::continuum(&spec, lat, ModeState::cosine(1.0, 1.0).to_vec(), path.clone()).unwrap();
        let times = [0.1, 0.2];
        for stepper in [HierarchyStepper::ExponentialEuler, HierarchyStepper::EulerMaruyama] {
            let hier = solve_hierarchy(&ops, 2, &v0, &path, &times, stepper).unwrap();
            for s in hier.order(1).states() {
                assert!(sup_norm(s) < 1e-12);
            }
            let w = path.value_at(0, 0.2).unwrap();
            let exact = GridFunction::from_fn(lat, |x| 2.0 * w / 3.0 * (x[0] + 2.0 * w).sin());
            let err = sup_norm(&(hier.order(2).final_state() - &exact));
            let tol = if stepper == HierarchyStepper::ExponentialEuler { 1e-12 } else { 5e-2 };
            assert!(err < tol, "{stepper:?}: {err}");
        }
        let zero = solve_hierarchy(&ops, 0, &v0, &path, &times, HierarchyStepper::EulerMaruyama).unwrap();
        assert_eq!(zero.orders.len(), 1);
    }

    #[test]
    fn exponential_stepper_rejects_variable_coefficients() {
        let mut spec = StencilSpec::one_dimensional(1, 1).unwrap();
        spec.set_a(1, 1, CoefficientField::spatial("1+sin x/2", |x| 1.0 + 0.5 * x[0].sin()))
            .unwrap();
        let lat = Lattice::periodic(1, 16, 2.0 * PI).unwrap();
        let ops = ExpansionOperators::new(&spec, lat, 2).unwrap();
        assert!(ops.constant_symbols(0).is_none());
        let path = WienerPath::sample(1, 10, 0.1, 3).unwrap();
        let traj = Trajectory::new(
            path.times(),
            vec![GridFunction::zeros(lat); path.steps() + 1],
            3,
            0,
        )
        .unwrap();
        let dense = crate::integrator::DenseTrajectory { trajectory: &traj };
        assert!(matches!(
            solve_hierarchy(&ops, 2, &dense, &path, &[0.1], HierarchyStepper::ExponentialEuler),
            Err(Error::NonConstantCoefficient(_))
        ));
    }

    #[test]
    fn remainder_orders() {
        let lats: Vec<_> = [64, 128, 256]
            .iter()
            .map(|&n| Lattice::periodic(1, n, 2.0 * PI).unwrap())
            .collect();
        let phi = |x: &[f64]| x[0].sin() + 0.5 * (2.0 * x[0]).cos();
        let central = example_2_4();
        let r0 = remainder_order_check(&central, 0, phi, &lats, 0.0).unwrap();
        assert!(r0.l_order.at_least(1.7));
        let r2 = remainder_order_check(&central, 2, phi, &lats, 0.0).unwrap();
        assert!(r2.l_order.at_least(3.6), "{:?}", r2.l_order.slope());
        let c = remainder_order_check(&central, 2, |_| 1.0, &lats, 0.0).unwrap();
        assert!(c.l_order.is_exact() && c.m_order.is_exact());
    }
}
