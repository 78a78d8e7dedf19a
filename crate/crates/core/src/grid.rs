//! Periodic lattices, grid functions and the difference-operator algebra.
//!
//! A [`Lattice`] is the integer lattice `hZ^d` folded onto a torus of period
//! `L = N h` per axis. Values are stored row-major with axis 0 slowest.
//! Every operator here is built from integer shifts `T_{h,λ}`, so all the
//! usual discrete identities (Leibniz rules, summation by parts) hold exactly
//! up to rounding.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of points per axis.
pub const MIN_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    points_per_axis: usize,
    spacing: f64,
}

impl Lattice {
    pub fn new(dim: usize, points_per_axis: usize, spacing: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidLattice("dimension must be positive".into()));
        }
        if points_per_axis < MIN_POINTS {
            return Err(Error::InvalidLattice(format!(
                "need at least {MIN_POINTS} points per axis, got {points_per_axis}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidLattice(format!(
                "spacing must be positive and finite, got {spacing}"
            )));
        }
        points_per_axis
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::InvalidLattice("too many points".into()))?;
        Ok(Self {
            dim,
            points_per_axis,
            spacing,
        })
    }

    /// Lattice with `n` points per axis covering the period `period`.
    pub fn periodic(dim: usize, n: usize, period: f64) -> Result<Self> {
        Self::new(dim, n, period / n as f64)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn period(&self) -> f64 {
        self.points_per_axis as f64 * self.spacing
    }

    /// Total number of nodes, `N^d`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.points_per_axis;
        let mut idx = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            idx[a] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .fold(0, |acc, &i| acc * self.points_per_axis + i % self.points_per_axis)
    }

    /// Physical coordinates `h * i` of a node.
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .map(|i| i as f64 * self.spacing)
            .collect()
    }

    /// Coordinates of every node, in storage order.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }

    /// The dyadic refinement: twice the points, half the spacing, same period.
    pub fn refine(&self) -> Lattice {
        Lattice {
            dim: self.dim,
            points_per_axis: self.points_per_axis * 2,
            spacing: self.spacing / 2.0,
        }
    }

    /// Returns `Some(levels)` when `self` is obtained from `coarse` by
    /// `levels` dyadic refinements.
    pub fn refinement_levels_over(&self, coarse: &Lattice) -> Option<u32> {
        if self.dim != coarse.dim || self.points_per_axis % coarse.points_per_axis != 0 {
            return None;
        }
        let ratio = self.points_per_axis / coarse.points_per_axis;
        if !ratio.is_power_of_two() {
            return None;
        }
        let levels = ratio.trailing_zeros();
        let expected = coarse.spacing / ratio as f64;
        if (expected - self.spacing).abs() > 1e-12 * coarse.spacing {
            return None;
        }
        Some(levels)
    }

    pub(crate) fn check_direction(&self, dir: &Direction) -> Result<()> {
        if dir.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: dir.dim(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "d={} N={} h={:.6e}",
            self.dim, self.points_per_axis, self.spacing
        )
    }
}

/// An integer direction vector `λ`. The zero vector stands for the identity
/// direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction(Vec<i64>);

impl Direction {
    pub fn new(components: Vec<i64>) -> Self {
        Direction(components)
    }

    pub fn zero(dim: usize) -> Self {
        Direction(vec![0; dim])
    }

    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        Direction(c)
    }

    pub fn components(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn neg(&self) -> Self {
        Direction(self.0.iter().map(|c| -c).collect())
    }

    /// Euclidean length `|λ|`.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// `λ · x` for a real vector.
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&c, &v)| c as f64 * v).sum()
    }
}

impl From<i64> for Direction {
    fn from(c: i64) -> Self {
        Direction(vec![c])
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Orientation of a shift or one-sided difference: `+h` or `-h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// A real field sampled on every node of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    lattice: Lattice,
    values: Vec<f64>,
}

impl GridFunction {
    /// Wraps `values`; the count must be `N^d` and every entry finite.
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::DimensionMismatch {
                expected: lattice.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidLattice(format!(
                "non-finite value at node {i}"
            )));
        }
        Ok(Self { lattice, values })
    }

    pub(crate) fn from_raw(lattice: Lattice, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), lattice.len());
        Self { lattice, values }
    }

    pub fn zeros(lattice: Lattice) -> Self {
        Self::constant(lattice, 0.0)
    }

    pub fn constant(lattice: Lattice, c: f64) -> Self {
        Self {
            lattice,
            values: vec![c; lattice.len()],
        }
    }

    /// Samples `f` at the physical coordinates of every node.
    pub fn from_fn(lattice: Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..lattice.len()).map(|i| f(&lattice.coords(i))).collect();
        Self { lattice, values }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.lattice, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.lattice, other.lattice, "lattice mismatch");
        Self::from_raw(
            self.lattice,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert_eq!(self.lattice, other.lattice, "lattice mismatch");
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// `self += coeff ⊙ other` with a pointwise coefficient.
    pub fn add_product(&mut self, coeff: &[f64], other: &Self) {
        assert_eq!(self.lattice, other.lattice, "lattice mismatch");
        for ((a, &c), &b) in self.values.iter_mut().zip(coeff).zip(&other.values) {
            *a += c * b;
        }
    }

    /// Positive part `max(v, 0)` at every node.
    pub fn positive_part(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    /// Restricts a dyadically refined function to the nodes of `coarse`.
    pub fn restrict_to(&self, coarse: &Lattice) -> Result<GridFunction> {
        let levels = self.lattice.refinement_levels_over(coarse).ok_or_else(|| {
            Error::NonNested(format!("{} is not a refinement of {}", self.lattice, coarse))
        })?;
        let step = 1usize << levels;
        let values = (0..coarse.len())
            .map(|i| {
                let fine: Vec<usize> = coarse.multi_index(i).iter().map(|&j| j * step).collect();
                self.values[self.lattice.flat_index(&fine)]
            })
            .collect();
        Ok(GridFunction::from_raw(*coarse, values))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    /// CSV dump: `d`, `N`, `h` on the first three lines, then one value per
    /// line in storage order, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.lattice.dim)?;
        writeln!(w, "{}", self.lattice.points_per_axis)?;
        writeln!(w, "{}", fmt17(self.lattice.spacing))?;
        for v in &self.values {
            writeln!(w, "{}", fmt17(*v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<GridFunction> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .map_err(Error::from)
                .map(|s| s.trim().to_string())
        };
        let dim: usize = parse_num(&next("dimension")?)?;
        let n: usize = parse_num(&next("point count")?)?;
        let h: f64 = parse_num(&next("spacing")?)?;
        let lattice = Lattice::new(dim, n, h)?;
        let mut values = Vec::with_capacity(lattice.len());
        for _ in 0..lattice.len() {
            values.push(parse_num(&next("value")?)?);
        }
        GridFunction::new(lattice, values)
    }

    /// Binary dump: little-endian `u64 d`, `u64 N`, `f64 h`, then the values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * self.values.len());
        out.extend_from_slice(&(self.lattice.dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.lattice.points_per_axis as u64).to_le_bytes());
        out.extend_from_slice(&self.lattice.spacing.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GridFunction> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().unwrap())
                .ok_or_else(|| Error::Parse("truncated grid function dump".into()))
        };
        let dim = u64::from_le_bytes(word(0)?) as usize;
        let n = u64::from_le_bytes(word(1)?) as usize;
        let h = f64::from_le_bytes(word(2)?);
        let lattice = Lattice::new(dim, n, h)?;
        if bytes.len() != 8 * (3 + lattice.len()) {
            return Err(Error::Parse("grid function dump has wrong length".into()));
        }
        let values = (0..lattice.len())
            .map(|i| word(3 + i).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        GridFunction::new(lattice, values)
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse `{s}`")))
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a - b)
    }
}

/// Pointwise product.
impl Mul for &GridFunction {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        self.zip_with(rhs, |a, b| a * b)
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

impl Neg for &GridFunction {
    type Output = GridFunction;
    fn neg(self) -> GridFunction {
        self.scale(-1.0)
    }
}

// Cyclic roll of the whole array along one axis: out(i) = src(i + offset).
fn roll_axis(lattice: &Lattice, src: &[f64], axis: usize, offset: i64) -> Vec<f64> {
    let n = lattice.points_per_axis();
    let s = offset.rem_euclid(n as i64) as usize;
    if s == 0 {
        return src.to_vec();
    }
    let stride = lattice.stride(axis);
    let block = n * stride;
    let mut out = vec![0.0; src.len()];
    for (dst, from) in out.chunks_exact_mut(block).zip(src.chunks_exact(block)) {
        let head = (n - s) * stride;
        dst[..head].copy_from_slice(&from[s * stride..]);
        dst[head..].copy_from_slice(&from[..s * stride]);
    }
    out
}

/// `T_{±h,λ} f (x) = f(x ± hλ)` with periodic wrap.
pub fn shift(f: &GridFunction, dir: &Direction, sign: Sign) -> Result<GridFunction> {
    f.lattice.check_direction(dir)?;
    Ok(shift_unchecked(f, dir, sign))
}

pub(crate) fn shift_unchecked(f: &GridFunction, dir: &Direction, sign: Sign) -> GridFunction {
    let mut values: Option<Vec<f64>> = None;
    for (axis, &c) in dir.components().iter().enumerate() {
        if c == 0 {
            continue;
        }
        let offset = if sign == Sign::Plus { c } else { -c };
        let src = values.as_deref().unwrap_or(&f.values);
        values = Some(roll_axis(&f.lattice, src, axis, offset));
    }
    GridFunction::from_raw(f.lattice, values.unwrap_or_else(|| f.values.clone()))
}

/// One-sided difference `δ_{±h,λ} f = (f(x ± hλ) − f(x)) / (±h)`; the
/// identity for `λ = 0`.
pub fn forward_diff(f: &GridFunction, dir: &Direction, sign: Sign) -> Result<GridFunction> {
    f.lattice.check_direction(dir)?;
    if dir.is_zero() {
        return Ok(f.clone());
    }
    let inv = 1.0 / (sign.value() * f.lattice.spacing);
    let t = shift_unchecked(f, dir, sign);
    Ok(t.zip_with(f, |a, b| (a - b) * inv))
}

/// Central difference `δ^h_λ f = (f(x + hλ) − f(x − hλ)) / (2h)`; the
/// identity for `λ = 0`.
pub fn symmetric_diff(f: &GridFunction, dir: &Direction) -> Result<GridFunction> {
    f.lattice.check_direction(dir)?;
    Ok(symmetric_diff_unchecked(f, dir))
}

pub(crate) fn symmetric_diff_unchecked(f: &GridFunction, dir: &Direction) -> GridFunction {
    if dir.is_zero() {
        return f.clone();
    }
    let inv = 0.5 / f.lattice.spacing;
    let plus = shift_unchecked(f, dir, Sign::Plus);
    let minus = shift_unchecked(f, dir, Sign::Minus);
    plus.zip_with(&minus, |a, b| (a - b) * inv)
}

/// `Δ^h_λ f = (f(x + hλ) − 2f(x) + f(x − hλ)) / h²`.
pub fn second_diff(f: &GridFunction, dir: &Direction) -> Result<GridFunction> {
    f.lattice.check_direction(dir)?;
    let inv = 1.0 / (f.lattice.spacing * f.lattice.spacing);
    let plus = shift_unchecked(f, dir, Sign::Plus);
    let minus = shift_unchecked(f, dir, Sign::Minus);
    let values = plus
        .values
        .iter()
        .zip(&minus.values)
        .zip(&f.values)
        .map(|((&p, &m), &c)| (p - 2.0 * c + m) * inv)
        .collect();
    Ok(GridFunction::from_raw(f.lattice, values))
}

/// Averaging operator `I_λ = (T_{h,λ} + T_{h,−λ}) / 2`.
pub fn mean_op(f: &GridFunction, dir: &Direction) -> Result<GridFunction> {
    f.lattice.check_direction(dir)?;
    let plus = shift_unchecked(f, dir, Sign::Plus);
    let minus = shift_unchecked(f, dir, Sign::Minus);
    Ok(plus.zip_with(&minus, |a, b| 0.5 * (a + b)))
}

/// Odd part `R_λ = (T_{h,λ} − T_{h,−λ}) / 2`; zero for `λ = 0`.
pub fn odd_part(f: &GridFunction, dir: &Direction) -> Result<GridFunction> {
    f.lattice.check_direction(dir)?;
    let plus = shift_unchecked(f, dir, Sign::Plus);
    let minus = shift_unchecked(f, dir, Sign::Minus);
    Ok(plus.zip_with(&minus, |a, b| 0.5 * (a - b)))
}

/// `P_λ = (δ_{h,λ} − δ_{−h,λ}) / 2 = (h/2) Δ^h_λ`; zero for `λ = 0`.
pub fn p_op(f: &GridFunction, dir: &Direction) -> Result<GridFunction> {
    if dir.is_zero() {
        f.lattice.check_direction(dir)?;
        return Ok(GridFunction::zeros(f.lattice));
    }
    let fwd = forward_diff(f, dir, Sign::Plus)?;
    let bwd = forward_diff(f, dir, Sign::Minus)?;
    Ok(fwd.zip_with(&bwd, |a, b| 0.5 * (a - b)))
}

/// Composition `δ_{α_1} … δ_{α_n}` of central differences; the empty
/// sequence is the identity.
pub fn multi_diff(f: &GridFunction, alpha: &[Direction]) -> Result<GridFunction> {
    for dir in alpha {
        f.lattice.check_direction(dir)?;
    }
    let mut out = f.clone();
    for dir in alpha.iter().rev() {
        out = symmetric_diff_unchecked(&out, dir);
    }
    Ok(out)
}

/// Composition `I_{α_1} … I_{α_n}` of averaging operators.
pub fn multi_mean(f: &GridFunction, alpha: &[Direction]) -> Result<GridFunction> {
    let mut out = f.clone();
    for dir in alpha.iter().rev() {
        out = mean_op(&out, dir)?;
    }
    Ok(out)
}

pub fn sup_norm(f: &GridFunction) -> f64 {
    f.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `|f|_{l_{h,2}} = (Σ_x |f(x)|² h^d)^{1/2}`.
pub fn l2h_norm(f: &GridFunction) -> f64 {
    let w = f.lattice.spacing.powi(f.lattice.dim as i32);
    (f.values.iter().map(|v| v * v).sum::<f64>() * w).sqrt()
}

/// `(f, g)_{l_{h,2}} = Σ_x f(x) g(x) h^d`.
pub fn inner(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.check_same(g)?;
    let w = f.lattice.spacing.powi(f.lattice.dim as i32);
    Ok(f.values.iter().zip(&g.values).map(|(a, b)| a * b).sum::<f64>() * w)
}

/// Discrete Sobolev norm: `Σ_{|α| ≤ m, α ∈ Λ^{|α|}} |δ_α f|²_{l_{h,2}}`,
/// square-rooted.
pub fn discrete_sobolev_norm(f: &GridFunction, m: usize, dirs: &[Direction]) -> Result<f64> {
    for d in dirs {
        f.lattice.check_direction(d)?;
    }
    let mut total = 0.0;
    // frontier holds δ_α f for all α of the current length
    let mut frontier = vec![f.clone()];
    for order in 0..=m {
        total += frontier.iter().map(|g| l2h_norm(g).powi(2)).sum::<f64>();
        if order == m {
            break;
        }
        frontier = frontier
            .iter()
            .flat_map(|g| dirs.iter().map(move |d| symmetric_diff_unchecked(g, d)))
            .collect();
    }
    Ok(total.sqrt())
}

/// Checks that the nonzero directions generate `Z^d`: the gcd of all `d × d`
/// minors must be one.
pub fn generates_integer_lattice(dirs: &[Direction], dim: usize) -> bool {
    let vecs: Vec<&Direction> = dirs.iter().filter(|d| !d.is_zero()).collect();
    if vecs.len() < dim {
        return false;
    }
    let mut g: i128 = 0;
    let mut chosen = Vec::with_capacity(dim);
    minors_gcd(&vecs, dim, 0, &mut chosen, &mut g);
    g == 1
}

fn minors_gcd(
    vecs: &[&Direction],
    dim: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    g: &mut i128,
) {
    if chosen.len() == dim {
        let m: Vec<Vec<i128>> = chosen
            .iter()
            .map(|&i| vecs[i].components().iter().map(|&c| c as i128).collect())
            .collect();
        *g = gcd(*g, integer_det(m).abs());
        return;
    }
    for i in start..vecs.len() {
        chosen.push(i);
        minors_gcd(vecs, dim, i + 1, chosen, g);
        chosen.pop();
        if *g == 1 {
            return;
        }
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

// Fraction-free Bareiss elimination.
fn integer_det(mut m: Vec<Vec<i128>>) -> i128 {
    let n = m.len();
    let mut sign = 1;
    let mut prev = 1;
    for k in 0..n {
        if m[k][k] == 0 {
            match (k + 1..n).find(|&r| m[r][k] != 0) {
                Some(r) => {
                    m.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}
