//! Scheme data `(Λ₁, 𝔞, 𝔭, 𝔮, 𝔟)`, the grid operators `L^h` and `M^{h,r}`,
//! and checks of consistency with a target PDE and of stochastic
//! parabolicity.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use log::warn;
use meval::tokenizer::Token;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::OrderCheck;
use crate::grid::{
    forward_diff, l2h_norm, symmetric_diff_unchecked, Direction, GridFunction, Lattice, Sign,
};
use crate::spectral::Spectral;

type FieldFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

const SPACE_VARS: [&str; 3] = ["x", "y", "z"];
const BUILTIN_CONSTANTS: [&str; 2] = ["pi", "e"];

/// A deterministic coefficient `(t, x) ↦ c_t(x)`.
#[derive(Clone)]
pub enum CoefficientField {
    Constant(f64),
    Function {
        label: String,
        time_dependent: bool,
        f: FieldFn,
    },
    /// Parsed arithmetic expression in `x`, `y`, `z` (one per axis) and `t`.
    Expression {
        source: String,
        expr: meval::Expr,
        time_dependent: bool,
    },
    /// `scale · inner + offset`.
    Affine {
        inner: Box<CoefficientField>,
        scale: f64,
        offset: f64,
    },
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoefficientField({self})")
    }
}

impl fmt::Display for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientField::Constant(c) => write!(f, "{c}"),
            CoefficientField::Function { label, .. } => write!(f, "{label}"),
            CoefficientField::Expression { source, .. } => write!(f, "{source}"),
            CoefficientField::Affine {
                inner,
                scale,
                offset,
            } => write!(f, "{scale}*({inner}) + {offset}"),
        }
    }
}

impl From<f64> for CoefficientField {
    fn from(c: f64) -> Self {
        CoefficientField::Constant(c)
    }
}

impl CoefficientField {
    pub fn constant(c: f64) -> Self {
        CoefficientField::Constant(c)
    }

    pub fn zero() -> Self {
        CoefficientField::Constant(0.0)
    }

    /// Time-independent field given by a closure of the position.
    pub fn spatial(label: &str, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CoefficientField::Function {
            label: label.to_string(),
            time_dependent: false,
            f: Arc::new(move |_, x| f(x)),
        }
    }

    pub fn function(label: &str, f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CoefficientField::Function {
            label: label.to_string(),
            time_dependent: true,
            f: Arc::new(f),
        }
    }

    /// Parses an expression such as `0.5*sin(x)^2 + t`. Variables are `t`
    /// and the first `dim` of `x, y, z`; the usual elementary functions and
    /// the constants `pi`, `e` are available.
    pub fn expression(source: &str, dim: usize) -> Result<Self> {
        let err = |msg: String| Error::Expression {
            expr: source.to_string(),
            msg,
        };
        if dim > SPACE_VARS.len() {
            return Err(err(format!("expressions support at most 3 axes, got {dim}")));
        }
        let expr: meval::Expr = source.parse().map_err(|e| err(format!("{e}")))?;
        let mut time_dependent = false;
        for token in expr.iter() {
            if let Token::Var(name) = token {
                if name == "t" {
                    time_dependent = true;
                } else if !SPACE_VARS[..dim].contains(&name.as_str())
                    && !BUILTIN_CONSTANTS.contains(&name.as_str())
                {
                    return Err(err(format!("unknown variable `{name}`")));
                }
            }
        }
        let field = CoefficientField::Expression {
            source: source.to_string(),
            expr,
            time_dependent,
        };
        // Catches unknown functions and arity errors up front.
        field
            .try_eval(0.0, &vec![0.0; dim])
            .map_err(|e| err(e.to_string()))?;
        Ok(field)
    }

    /// The single value of a constant field.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            CoefficientField::Constant(c) => Some(*c),
            CoefficientField::Affine {
                inner,
                scale,
                offset,
            } => inner.constant_value().map(|v| scale * v + offset),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.constant_value().is_some()
    }

    pub fn is_zero(&self) -> bool {
        self.constant_value() == Some(0.0)
    }

    pub fn is_time_dependent(&self) -> bool {
        match self {
            CoefficientField::Constant(_) => false,
            CoefficientField::Function { time_dependent, .. } => *time_dependent,
            CoefficientField::Expression { time_dependent, .. } => *time_dependent,
            CoefficientField::Affine { inner, .. } => inner.is_time_dependent(),
        }
    }

    pub fn affine(self, scale: f64, offset: f64) -> Self {
        match self.constant_value() {
            Some(c) => CoefficientField::Constant(scale * c + offset),
            None => CoefficientField::Affine {
                inner: Box::new(self),
                scale,
                offset,
            },
        }
    }

    fn try_eval_with(&self, t: f64, x: &[f64], ctx: &meval::Context) -> std::result::Result<f64, meval::Error> {
        Ok(match self {
            CoefficientField::Constant(c) => *c,
            CoefficientField::Function { f, .. } => f(t, x),
            CoefficientField::Expression { expr, .. } => {
                let at = |i: usize| x.get(i).copied().unwrap_or(0.0);
                let vars = [("x", at(0)), ("y", at(1)), ("z", at(2)), ("t", t)];
                expr.eval_with_context((vars, ctx))?
            }
            CoefficientField::Affine {
                inner,
                scale,
                offset,
            } => scale * inner.try_eval_with(t, x, ctx)? + offset,
        })
    }

    fn try_eval(&self, t: f64, x: &[f64]) -> std::result::Result<f64, meval::Error> {
        self.try_eval_with(t, x, &meval::Context::new())
    }

    /// Value at one point. Evaluation failures of an expression that passed
    /// construction cannot occur; they surface as NaN.
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.try_eval(t, x).unwrap_or(f64::NAN)
    }

    /// Values at every node of `lattice`, rejecting non-finite results.
    pub fn eval_on(&self, lattice: &Lattice, t: f64) -> Result<Vec<f64>> {
        let values: Vec<f64> = if let Some(c) = self.constant_value() {
            vec![c; lattice.len()]
        } else {
            let ctx = meval::Context::new();
            (0..lattice.len())
                .map(|i| {
                    self.try_eval_with(t, &lattice.coords(i), &ctx)
                        .unwrap_or(f64::NAN)
                })
                .collect()
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient {
                field: self.to_string(),
                t,
            });
        }
        Ok(values)
    }

    /// The field sampled on a lattice as a grid function.
    pub fn sample(&self, lattice: &Lattice, t: f64) -> Result<GridFunction> {
        GridFunction::new(*lattice, self.eval_on(lattice, t)?)
    }
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Scheme coefficients over a direction set `Λ₁ ∋ 0`. Coefficients are
/// addressed by direction index; absent entries are zero.
#[derive(Debug, Clone)]
pub struct StencilSpec {
    dim: usize,
    drivers: usize,
    directions: Vec<Direction>,
    zero: usize,
    a: BTreeMap<(usize, usize), CoefficientField>,
    p: BTreeMap<usize, CoefficientField>,
    q: BTreeMap<usize, CoefficientField>,
    b: BTreeMap<(usize, usize), CoefficientField>,
}

impl StencilSpec {
    /// `directions` must contain the zero vector, be free of repeats and
    /// generate `Z^d`.
    pub fn new(dim: usize, drivers: usize, directions: Vec<Direction>) -> Result<Self> {
        for d in &directions {
            if d.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: d.dim(),
                });
            }
        }
        let zero = directions
            .iter()
            .position(|d| d.is_zero())
            .ok_or_else(|| Error::InvalidStencil("the direction set must contain 0".into()))?;
        for (i, d) in directions.iter().enumerate() {
            if directions[..i].contains(d) {
                return Err(Error::InvalidStencil(format!("direction {d} listed twice")));
            }
        }
        if !crate::grid::generates_integer_lattice(&directions, dim) {
            return Err(Error::InvalidStencil(format!(
                "directions do not generate the integer lattice Z^{dim}"
            )));
        }
        Ok(Self {
            dim,
            drivers,
            directions,
            zero,
            a: BTreeMap::new(),
            p: BTreeMap::new(),
            q: BTreeMap::new(),
            b: BTreeMap::new(),
        })
    }

    /// The one-dimensional direction set `{0, 1, …, n}`.
    pub fn one_dimensional(drivers: usize, max_step: i64) -> Result<Self> {
        Self::new(1, drivers, (0..=max_step).map(Direction::from).collect())
    }

    /// Direction set `{0, e_1, …, e_d}`.
    pub fn coordinate(dim: usize, drivers: usize) -> Result<Self> {
        let mut dirs = vec![Direction::zero(dim)];
        dirs.extend((0..dim).map(|i| Direction::unit(dim, i)));
        Self::new(dim, drivers, dirs)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.directions.len() {
            return Err(Error::OutOfRange(format!(
                "direction index {i} (stencil has {})",
                self.directions.len()
            )));
        }
        Ok(())
    }

    /// Sets `𝔞^{λ_i λ_j} = 𝔞^{λ_j λ_i}`.
    pub fn set_a(&mut self, i: usize, j: usize, field: impl Into<CoefficientField>) -> Result<&mut Self> {
        self.check_index(i)?;
        self.check_index(j)?;
        self.a.insert(ordered(i, j), field.into());
        Ok(self)
    }

    pub fn set_p(&mut self, gamma: usize, field: impl Into<CoefficientField>) -> Result<&mut Self> {
        self.check_first_order(gamma)?;
        self.p.insert(gamma, field.into());
        Ok(self)
    }

    pub fn set_q(&mut self, gamma: usize, field: impl Into<CoefficientField>) -> Result<&mut Self> {
        self.check_first_order(gamma)?;
        self.q.insert(gamma, field.into());
        Ok(self)
    }

    fn check_first_order(&self, gamma: usize) -> Result<()> {
        self.check_index(gamma)?;
        if gamma == self.zero {
            return Err(Error::InvalidStencil(
                "p and q are defined on nonzero directions only".into(),
            ));
        }
        Ok(())
    }

    /// Sets `𝔟^{λ_i, r}` for driver `r` (zero-based).
    pub fn set_b(&mut self, i: usize, r: usize, field: impl Into<CoefficientField>) -> Result<&mut Self> {
        self.check_index(i)?;
        if r >= self.drivers {
            return Err(Error::DriverOutOfRange {
                index: r,
                count: self.drivers,
            });
        }
        self.b.insert((i, r), field.into());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn zero_index(&self) -> usize {
        self.zero
    }

    pub fn index_of(&self, dir: &Direction) -> Option<usize> {
        self.directions.iter().position(|d| d == dir)
    }

    /// Indices of `Λ₀ = Λ₁ ∖ {0}`.
    pub fn nonzero(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.directions.len()).filter(move |&i| i != self.zero)
    }

    pub fn a(&self, i: usize, j: usize) -> Option<&CoefficientField> {
        self.a.get(&ordered(i, j))
    }

    pub fn p(&self, gamma: usize) -> Option<&CoefficientField> {
        self.p.get(&gamma)
    }

    pub fn q(&self, gamma: usize) -> Option<&CoefficientField> {
        self.q.get(&gamma)
    }

    pub fn b(&self, i: usize, r: usize) -> Option<&CoefficientField> {
        self.b.get(&(i, r))
    }

    /// True when no one-sided terms are present, so that `L^h` and `M^h` are
    /// even in `h`.
    pub fn is_symmetric(&self) -> bool {
        self.p.values().chain(self.q.values()).all(|f| f.is_zero())
    }

    /// Every coefficient field with a human-readable name.
    pub fn fields(&self) -> Vec<(String, &CoefficientField)> {
        let name = |i: usize| self.directions[i].to_string();
        let mut out = Vec::new();
        for (&(i, j), f) in &self.a {
            out.push((format!("a[{},{}]", name(i), name(j)), f));
        }
        for (&g, f) in &self.p {
            out.push((format!("p[{}]", name(g)), f));
        }
        for (&g, f) in &self.q {
            out.push((format!("q[{}]", name(g)), f));
        }
        for (&(i, r), f) in &self.b {
            out.push((format!("b[{},{}]", name(i), r), f));
        }
        out
    }

    pub fn is_constant(&self) -> bool {
        self.fields().iter().all(|(_, f)| f.is_constant())
    }

    /// Second-order terms `(i, j, multiplicity, field)` over ordered pairs,
    /// where the multiplicity 2 accounts for `(i, j)` and `(j, i)`.
    pub(crate) fn second_order_terms(&self) -> impl Iterator<Item = (usize, usize, f64, &CoefficientField)> {
        self.a
            .iter()
            .map(|(&(i, j), f)| (i, j, if i == j { 1.0 } else { 2.0 }, f))
    }

    pub(crate) fn p_terms(&self) -> impl Iterator<Item = (usize, &CoefficientField)> {
        self.p.iter().map(|(&g, f)| (g, f))
    }

    pub(crate) fn q_terms(&self) -> impl Iterator<Item = (usize, &CoefficientField)> {
        self.q.iter().map(|(&g, f)| (g, f))
    }

    pub(crate) fn b_terms(&self) -> impl Iterator<Item = (usize, usize, &CoefficientField)> {
        self.b.iter().map(|(&(i, r), f)| (i, r, f))
    }
}

/// Coefficients `a^{αβ}`, `b^{α,r}` (`α, β ∈ {0, …, d}`, index 0 standing
/// for the identity `D_0`) of `du = a^{αβ} D_α D_β u dt + b^{α,r} D_α u dw^r`.
#[derive(Debug, Clone)]
pub struct TargetPDE {
    dim: usize,
    drivers: usize,
    a: BTreeMap<(usize, usize), CoefficientField>,
    b: BTreeMap<(usize, usize), CoefficientField>,
}

impl TargetPDE {
    pub fn new(dim: usize, drivers: usize) -> Self {
        Self {
            dim,
            drivers,
            a: BTreeMap::new(),
            b: BTreeMap::new(),
        }
    }

    fn check_axis(&self, alpha: usize) -> Result<()> {
        if alpha > self.dim {
            return Err(Error::OutOfRange(format!(
                "axis index {alpha} (dimension {})",
                self.dim
            )));
        }
        Ok(())
    }

    /// Sets `a^{αβ} = a^{βα}`.
    pub fn set_a(&mut self, alpha: usize, beta: usize, field: impl Into<CoefficientField>) -> Result<&mut Self> {
        self.check_axis(alpha)?;
        self.check_axis(beta)?;
        self.a.insert(ordered(alpha, beta), field.into());
        Ok(self)
    }

    pub fn set_b(&mut self, alpha: usize, r: usize, field: impl Into<CoefficientField>) -> Result<&mut Self> {
        self.check_axis(alpha)?;
        if r >= self.drivers {
            return Err(Error::DriverOutOfRange {
                index: r,
                count: self.drivers,
            });
        }
        self.b.insert((alpha, r), field.into());
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn a(&self, alpha: usize, beta: usize) -> Option<&CoefficientField> {
        self.a.get(&ordered(alpha, beta))
    }

    pub fn b(&self, alpha: usize, r: usize) -> Option<&CoefficientField> {
        self.b.get(&(alpha, r))
    }

    fn a_at(&self, alpha: usize, beta: usize, t: f64, x: &[f64]) -> f64 {
        self.a(alpha, beta).map_or(0.0, |f| f.eval(t, x))
    }

    fn b_at(&self, alpha: usize, r: usize, t: f64, x: &[f64]) -> f64 {
        self.b(alpha, r).map_or(0.0, |f| f.eval(t, x))
    }

    fn axis_direction(&self, alpha: usize) -> Direction {
        if alpha == 0 {
            Direction::zero(self.dim)
        } else {
            Direction::unit(self.dim, alpha - 1)
        }
    }

    /// `𝓛 f = Σ_{α,β} a^{αβ} D_α D_β f` with spectral derivatives.
    pub fn apply_operator(&self, spectral: &Spectral, t: f64, f: &GridFunction) -> Result<GridFunction> {
        let lattice = spectral.lattice();
        let hat = spectral.forward(f);
        let mut out = GridFunction::zeros(*lattice);
        for (&(al, be), field) in &self.a {
            let mult = if al == be { 1.0 } else { 2.0 };
            let sa = spectral.directional_symbol(&self.axis_direction(al), u32::from(al != 0));
            let sb = spectral.directional_symbol(&self.axis_direction(be), u32::from(be != 0));
            let symbol: Vec<_> = sa.iter().zip(&sb).map(|(x, y)| x * y * mult).collect();
            let term = spectral.apply_multiplier(&hat, &symbol);
            out.add_product(&field.eval_on(lattice, t)?, &term);
        }
        Ok(out)
    }

    /// `𝓜^r f = Σ_α b^{α,r} D_α f` for every driver.
    pub fn apply_noise_operator(&self, spectral: &Spectral, t: f64, f: &GridFunction) -> Result<Vec<GridFunction>> {
        let lattice = spectral.lattice();
        let mut out = vec![GridFunction::zeros(*lattice); self.drivers];
        for (&(al, r), field) in &self.b {
            let term = spectral.directional_derivative(f, &self.axis_direction(al), u32::from(al != 0));
            out[r].add_product(&field.eval_on(lattice, t)?, &term);
        }
        Ok(out)
    }
}

/// Initial value, free terms and horizon of a problem on one lattice.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub psi: GridFunction,
    /// Deterministic forcing `f_t(x)`; `None` means zero.
    pub forcing: Option<CoefficientField>,
    /// Noise forcing `g^r_t(x)` per driver; empty means zero.
    pub noise_forcing: Vec<Option<CoefficientField>>,
    pub horizon: f64,
}

impl ProblemData {
    pub fn new(psi: GridFunction, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!(
                "time horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self {
            psi,
            forcing: None,
            noise_forcing: Vec::new(),
            horizon,
        })
    }

    pub fn with_forcing(mut self, f: CoefficientField) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn with_noise_forcing(mut self, r: usize, g: CoefficientField) -> Self {
        if self.noise_forcing.len() <= r {
            self.noise_forcing.resize(r + 1, None);
        }
        self.noise_forcing[r] = Some(g);
        self
    }

    pub fn lattice(&self) -> &Lattice {
        self.psi.lattice()
    }

    pub fn has_free_terms(&self) -> bool {
        self.forcing.as_ref().is_some_and(|f| !f.is_zero())
            || self.noise_forcing.iter().flatten().any(|g| !g.is_zero())
    }

    /// Discrete analogue of `𝓚_l(T)² = ∫_0^T |f_t|_l² + |g_t|_{l+1}² dt`
    /// with the left-point rule on `steps` intervals.
    pub fn data_norm(&self, l: usize, dirs: &[Direction], steps: usize) -> Result<f64> {
        let lattice = *self.lattice();
        let steps = steps.max(1);
        let dt = self.horizon / steps as f64;
        let mut total = 0.0;
        for k in 0..steps {
            let t = k as f64 * dt;
            if let Some(f) = &self.forcing {
                let n = crate::grid::discrete_sobolev_norm(&f.sample(&lattice, t)?, l, dirs)?;
                total += n * n * dt;
            }
            for g in self.noise_forcing.iter().flatten() {
                let n = crate::grid::discrete_sobolev_norm(&g.sample(&lattice, t)?, l + 1, dirs)?;
                total += n * n * dt;
            }
        }
        Ok(total.sqrt())
    }
}

enum Bound<'a> {
    Const(f64),
    Static(Vec<f64>),
    Dynamic(&'a CoefficientField),
}

impl<'a> Bound<'a> {
    fn new(field: &'a CoefficientField, lattice: &Lattice) -> Result<Self> {
        Ok(match field.constant_value() {
            Some(c) => {
                if !c.is_finite() {
                    return Err(Error::NonFiniteCoefficient {
                        field: field.to_string(),
                        t: 0.0,
                    });
                }
                Bound::Const(c)
            }
            None if !field.is_time_dependent() => Bound::Static(field.eval_on(lattice, 0.0)?),
            None => Bound::Dynamic(field),
        })
    }

    fn accumulate(&self, out: &mut GridFunction, mult: f64, term: &GridFunction, t: f64) -> Result<()> {
        match self {
            Bound::Const(c) => out.axpy(mult * c, term),
            Bound::Static(v) if mult == 1.0 => out.add_product(v, term),
            Bound::Static(v) => {
                let scaled: Vec<f64> = v.iter().map(|c| c * mult).collect();
                out.add_product(&scaled, term)
            }
            Bound::Dynamic(f) => {
                let mut v = f.eval_on(term.lattice(), t)?;
                if mult != 1.0 {
                    v.iter_mut().for_each(|c| *c *= mult);
                }
                out.add_product(&v, term)
            }
        }
        Ok(())
    }

    fn max_abs(&self, lattice: &Lattice) -> f64 {
        match self {
            Bound::Const(c) => c.abs(),
            Bound::Static(v) => v.iter().fold(0.0, |m, c| m.max(c.abs())),
            Bound::Dynamic(f) => f
                .eval_on(lattice, 0.0)
                .map(|v| v.iter().fold(0.0, |m: f64, c| m.max(c.abs())))
                .unwrap_or(f64::INFINITY),
        }
    }
}

/// A scheme bound to a lattice, with time-independent coefficients sampled
/// once.
pub struct BoundScheme<'a> {
    spec: &'a StencilSpec,
    lattice: Lattice,
    second: Vec<(usize, usize, f64, Bound<'a>)>,
    p: Vec<(usize, Bound<'a>)>,
    q: Vec<(usize, Bound<'a>)>,
    b: Vec<(usize, usize, Bound<'a>)>,
}

impl<'a> BoundScheme<'a> {
    pub fn new(spec: &'a StencilSpec, lattice: Lattice) -> Result<Self> {
        if lattice.dim() != spec.dim {
            return Err(Error::DimensionMismatch {
                expected: spec.dim,
                got: lattice.dim(),
            });
        }
        let second = spec
            .second_order_terms()
            .map(|(i, j, m, f)| Ok((i, j, m, Bound::new(f, &lattice)?)))
            .collect::<Result<_>>()?;
        let p = spec
            .p_terms()
            .map(|(g, f)| Ok((g, Bound::new(f, &lattice)?)))
            .collect::<Result<_>>()?;
        let q = spec
            .q_terms()
            .map(|(g, f)| Ok((g, Bound::new(f, &lattice)?)))
            .collect::<Result<_>>()?;
        let b = spec
            .b_terms()
            .map(|(i, r, f)| Ok((i, r, Bound::new(f, &lattice)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            lattice,
            second,
            p,
            q,
            b,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn spec(&self) -> &StencilSpec {
        self.spec
    }

    fn check(&self, f: &GridFunction) -> Result<()> {
        if *f.lattice() != self.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    fn first_differences(&self, f: &GridFunction) -> Vec<Option<GridFunction>> {
        let mut d1: Vec<Option<GridFunction>> = vec![None; self.spec.directions.len()];
        let mut need = |i: usize| {
            if i != self.spec.zero && d1[i].is_none() {
                d1[i] = Some(symmetric_diff_unchecked(f, &self.spec.directions[i]));
            }
        };
        for &(i, j, _, _) in &self.second {
            need(i);
            need(j);
        }
        for &(i, _, _) in &self.b {
            need(i);
        }
        d1
    }

    /// `L^h_t f`.
    pub fn apply_l(&self, t: f64, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        let zero = self.spec.zero;
        let d1 = self.first_differences(f);
        let first = |i: usize| d1[i].as_ref().unwrap_or(f);
        let mut out = GridFunction::zeros(self.lattice);
        for (i, j, mult, c) in &self.second {
            let (i, j) = (*i, *j);
            if i == zero || j == zero {
                let other = if i == zero { j } else { i };
                c.accumulate(&mut out, *mult, first(other), t)?;
            } else {
                let term = symmetric_diff_unchecked(first(j), &self.spec.directions[i]);
                c.accumulate(&mut out, *mult, &term, t)?;
            }
        }
        for (g, c) in &self.p {
            let term = forward_diff(f, &self.spec.directions[*g], Sign::Plus)?;
            c.accumulate(&mut out, 1.0, &term, t)?;
        }
        for (g, c) in &self.q {
            let term = forward_diff(f, &self.spec.directions[*g], Sign::Minus)?;
            c.accumulate(&mut out, -1.0, &term, t)?;
        }
        Ok(out)
    }

    /// `(M^{h,r}_t f)_{r}`.
    pub fn apply_m(&self, t: f64, f: &GridFunction) -> Result<Vec<GridFunction>> {
        self.check(f)?;
        let d1 = self.first_differences(f);
        let mut out = vec![GridFunction::zeros(self.lattice); self.spec.drivers];
        for (i, r, c) in &self.b {
            let term = d1[*i].as_ref().unwrap_or(f);
            c.accumulate(&mut out[*r], 1.0, term, t)?;
        }
        Ok(out)
    }

    /// `max |𝔞|` over second-order terms with a nonzero direction, at `t = 0`.
    pub(crate) fn max_second_order_coefficient(&self) -> f64 {
        self.second
            .iter()
            .filter(|(i, j, _, _)| *i != self.spec.zero && *j != self.spec.zero)
            .fold(0.0, |m, (_, _, _, c)| m.max(c.max_abs(&self.lattice)))
    }
}

/// `L^h_t f` on `f`'s lattice.
pub fn apply_l(spec: &StencilSpec, t: f64, f: &GridFunction) -> Result<GridFunction> {
    BoundScheme::new(spec, *f.lattice())?.apply_l(t, f)
}

/// `M^{h,r}_t f` for `r = 1..m`.
pub fn apply_m(spec: &StencilSpec, t: f64, f: &GridFunction) -> Result<Vec<GridFunction>> {
    BoundScheme::new(spec, *f.lattice())?.apply_m(t, f)
}

/// Largest violation of the identities linking scheme coefficients to the
/// target PDE, over the sampled points.
pub fn consistency_residual(spec: &StencilSpec, pde: &TargetPDE, t: f64, samples: &[Vec<f64>]) -> Result<f64> {
    if spec.dim != pde.dim {
        return Err(Error::DimensionMismatch {
            expected: pde.dim,
            got: spec.dim,
        });
    }
    if spec.drivers != pde.drivers {
        return Err(Error::DimensionMismatch {
            expected: pde.drivers,
            got: spec.drivers,
        });
    }
    let d = spec.dim;
    let z = spec.zero;
    let field = |f: Option<&CoefficientField>, x: &[f64]| f.map_or(0.0, |f| f.eval(t, x));
    let comp = |i: usize, axis: usize| spec.directions[i].components()[axis] as f64;
    let mut worst: f64 = 0.0;
    for x in samples {
        for i in 0..d {
            for j in 0..d {
                let mut sum = 0.0;
                for l in spec.nonzero() {
                    for m in spec.nonzero() {
                        sum += field(spec.a(l, m), x) * comp(l, i) * comp(m, j);
                    }
                }
                worst = worst.max((pde.a_at(i + 1, j + 1, t, x) - sum).abs());
            }
            let mut sum = 0.0;
            for l in spec.nonzero() {
                let c = 2.0 * field(spec.a(z, l), x) + field(spec.p(l), x) - field(spec.q(l), x);
                sum += c * comp(l, i);
            }
            worst = worst.max((2.0 * pde.a_at(0, i + 1, t, x) - sum).abs());
            for r in 0..spec.drivers {
                let sum: f64 = spec
                    .nonzero()
                    .map(|l| field(spec.b(l, r), x) * comp(l, i))
                    .sum();
                worst = worst.max((pde.b_at(i + 1, r, t, x) - sum).abs());
            }
        }
        worst = worst.max((pde.a_at(0, 0, t, x) - field(spec.a(z, z), x)).abs());
        for r in 0..spec.drivers {
            worst = worst.max((pde.b_at(0, r, t, x) - field(spec.b(z, r), x)).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParabolicityReport {
    /// Smallest eigenvalue of `𝔞^{λμ} − ½ Σ_r 𝔟^{λ,r} 𝔟^{μ,r}` over samples.
    pub min_eigenvalue: f64,
    /// Smallest value of `𝔭^γ`, `𝔮^γ` over samples (0 when absent).
    pub min_pq: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks stochastic parabolicity at the given points. With `tol = None`
/// the tolerance is `1e-10` times the largest matrix entry.
pub fn parabolicity_report(
    spec: &StencilSpec,
    t: f64,
    samples: &[Vec<f64>],
    tol: Option<f64>,
) -> Result<ParabolicityReport> {
    let idx: Vec<usize> = spec.nonzero().collect();
    let n = idx.len();
    let field = |f: Option<&CoefficientField>, x: &[f64]| f.map_or(0.0, |f| f.eval(t, x));
    let mut min_eig = f64::INFINITY;
    let mut min_pq: f64 = if spec.p.is_empty() && spec.q.is_empty() {
        0.0
    } else {
        f64::INFINITY
    };
    let mut max_abs: f64 = 0.0;
    for x in samples {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (u, &l) in idx.iter().enumerate() {
            for (v, &k) in idx.iter().enumerate() {
                let bb: f64 = (0..spec.drivers)
                    .map(|r| field(spec.b(l, r), x) * field(spec.b(k, r), x))
                    .sum();
                m[(u, v)] = field(spec.a(l, k), x) - 0.5 * bb;
            }
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Eigen(format!("non-finite matrix entry at x = {x:?}")));
        }
        max_abs = m.iter().fold(max_abs, |a, v| a.max(v.abs()));
        let eig = SymmetricEigen::new(m);
        min_eig = eig.eigenvalues.iter().fold(min_eig, |a, &v| a.min(v));
        for &l in &idx {
            for f in [spec.p(l), spec.q(l)].into_iter().flatten() {
                let v = f.eval(t, x);
                if !v.is_finite() {
                    return Err(Error::NonFiniteCoefficient {
                        field: f.to_string(),
                        t,
                    });
                }
                min_pq = min_pq.min(v);
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Config("parabolicity check needs at least one sample point".into()));
    }
    if !min_pq.is_finite() {
        min_pq = 0.0;
    }
    let tolerance = tol.unwrap_or(1e-10 * max_abs);
    Ok(ParabolicityReport {
        min_eigenvalue: min_eig,
        min_pq,
        tolerance,
        pass: min_eig >= -tolerance && min_pq >= -tolerance,
    })
}

/// Central scheme on `{0, e_1, …, e_d}` copying every coefficient.
pub fn from_pde_central(pde: &TargetPDE) -> Result<StencilSpec> {
    let mut spec = StencilSpec::coordinate(pde.dim, pde.drivers)?;
    for (&(al, be), f) in &pde.a {
        spec.set_a(al, be, f.clone())?;
    }
    for (&(al, r), f) in &pde.b {
        spec.set_b(al, r, f.clone())?;
    }
    Ok(spec)
}

/// Upwind scheme: the mixed terms `a^{0γ}` move into one-sided differences,
/// `𝔭^γ = a^{0γ} + θ^γ`, `𝔮^γ = θ^γ − a^{γ0}`, so that `𝔭 − 𝔮` carries the
/// full first-order coefficient `a^{0γ} + a^{γ0}`. Both `𝔭` and `𝔮` are
/// nonnegative iff `|a^{0γ}| ≤ θ^γ`; constant coefficients are checked
/// exactly and variable ones at `samples`.
pub fn from_pde_upwind(pde: &TargetPDE, theta: &[f64], samples: &[(f64, Vec<f64>)]) -> Result<StencilSpec> {
    if theta.len() != pde.dim {
        return Err(Error::DimensionMismatch {
            expected: pde.dim,
            got: theta.len(),
        });
    }
    let mut spec = StencilSpec::coordinate(pde.dim, pde.drivers)?;
    for (&(al, be), f) in &pde.a {
        if al == 0 && be > 0 {
            continue;
        }
        spec.set_a(al, be, f.clone())?;
    }
    for gamma in 1..=pde.dim {
        let th = theta[gamma - 1];
        let mixed = pde.a(0, gamma).cloned().unwrap_or_else(CoefficientField::zero);
        let worst = match mixed.constant_value() {
            Some(c) => c.abs(),
            None => samples
                .iter()
                .map(|(t, x)| mixed.eval(*t, x).abs())
                .fold(0.0, f64::max),
        };
        if !(th >= 0.0) || worst > th {
            return Err(Error::InadmissibleTheta {
                gamma,
                axis: gamma,
                theta: th,
                found: worst,
            });
        }
        spec.set_p(gamma, mixed.clone().affine(1.0, th))?;
        spec.set_q(gamma, mixed.affine(-1.0, th))?;
    }
    for (&(al, r), f) in &pde.b {
        spec.set_b(al, r, f.clone())?;
    }
    Ok(spec)
}

/// Fitted order of `|L^h φ − 𝓛 φ|_{l_{h,2}}` over the given lattices, with
/// `𝓛` evaluated by Fourier differentiation.
pub fn operator_consistency_order(
    spec: &StencilSpec,
    pde: &TargetPDE,
    phi: impl Fn(&[f64]) -> f64,
    lattices: &[Lattice],
    t: f64,
) -> Result<(Vec<(f64, f64)>, OrderCheck)> {
    if lattices.len() < crate::fit::MIN_FIT_POINTS {
        warn!("order check with {} levels cannot be fitted", lattices.len());
    }
    let mut pairs = Vec::with_capacity(lattices.len());
    for lattice in lattices {
        let f = GridFunction::from_fn(*lattice, &phi);
        let discrete = apply_l(spec, t, &f)?;
        let spectral = Spectral::new(*lattice);
        let exact = pde.apply_operator(&spectral, t, &f)?;
        pairs.push((lattice.spacing(), l2h_norm(&(&discrete - &exact))));
    }
    let check = OrderCheck::from_pairs(&pairs);
    Ok((pairs, check))
}

/// Sample points: every node of `lattice`, or a strided subset of about
/// `max_points` of them.
pub fn lattice_samples(lattice: &Lattice, max_points: usize) -> Vec<Vec<f64>> {
    let stride = (lattice.len() / max_points.max(1)).max(1);
    (0..lattice.len())
        .step_by(stride)
        .map(|i| lattice.coords(i))
        .collect()
}
