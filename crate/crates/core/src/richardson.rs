//! Richardson extrapolation in the mesh size over dyadically nested grids.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::integrator::Trajectory;

/// Weights `c_0..c_k` combining solutions on `h, h/2, …, h/2^k` so that the
/// error terms `h^{s j}`, `j = 1..k`, cancel.
#[derive(Debug, Clone, PartialEq)]
pub struct RichardsonWeights {
    order: usize,
    power_step: u32,
    weights: Vec<BigRational>,
}

impl Serialize for RichardsonWeights {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl fmt::Display for RichardsonWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.weights.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

/// Solves `V c = e₁` with `V_{ij} = (2^s)^{-(i-1)(j-1)}` exactly.
pub fn weights(order: usize, power_step: u32) -> Result<RichardsonWeights> {
    if power_step == 0 {
        return Err(Error::Config("power step must be positive".into()));
    }
    let n = order + 1;
    let base = BigRational::from_integer(BigInt::from(2).pow(power_step));
    let node = |j: usize| BigRational::one() / num_traits::pow(base.clone(), j);
    let mut m: Vec<Vec<BigRational>> = (0..n)
        .map(|i| {
            let mut row: Vec<BigRational> = (0..n).map(|j| num_traits::pow(node(j), i)).collect();
            row.push(if i == 0 { BigRational::one() } else { BigRational::zero() });
            row
        })
        .collect();
    // Gauss–Jordan; the nodes are distinct so every pivot search succeeds.
    for col in 0..n {
        let pivot = (col..n)
            .find(|&r| !m[r][col].is_zero())
            .expect("Vandermonde matrix with distinct nodes is nonsingular");
        m.swap(col, pivot);
        let p = m[col][col].clone();
        for v in m[col].iter_mut() {
            *v = &*v / &p;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                let pivot_row = m[col].clone();
                for (v, pv) in m[r].iter_mut().zip(&pivot_row) {
                    *v = &*v - &factor * pv;
                }
            }
        }
    }
    Ok(RichardsonWeights {
        order,
        power_step,
        weights: m.into_iter().map(|row| row[n].clone()).collect(),
    })
}

impl RichardsonWeights {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn power_step(&self) -> u32 {
        self.power_step
    }

    pub fn exact(&self) -> &[BigRational] {
        &self.weights
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.to_f64().expect("weights are finite rationals"))
            .collect()
    }

    /// `Σ_i c_i 2^{-s j i}` for `j = 0..=k`: one, then `k` zeros.
    pub fn moments(&self) -> Vec<BigRational> {
        let base = BigRational::from_integer(BigInt::from(2).pow(self.power_step));
        (0..=self.order)
            .map(|j| {
                self.weights
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c / num_traits::pow(base.clone(), i * j))
                    .fold(BigRational::zero(), |a, b| a + b)
            })
            .collect()
    }

    /// `Σ c_i f_i` in index order.
    pub fn combine(&self, fields: &[GridFunction]) -> Result<GridFunction> {
        if fields.len() != self.weights.len() {
            return Err(Error::WeightCount {
                weights: self.weights.len(),
                solutions: fields.len(),
            });
        }
        let c = self.as_f64();
        let mut out = fields[0].scale(c[0]);
        for (ci, f) in c.iter().zip(fields).skip(1) {
            if f.lattice() != out.lattice() {
                return Err(Error::LatticeMismatch);
            }
            out.axpy(*ci, f);
        }
        Ok(out)
    }
}

/// Combines solutions on `h, h/2, …, h/2^k`, all driven by one realization,
/// on the coarsest grid.
pub fn extrapolate(solutions: &[Trajectory], weights: &RichardsonWeights) -> Result<Trajectory> {
    if solutions.len() != weights.exact().len() {
        return Err(Error::WeightCount {
            weights: weights.exact().len(),
            solutions: solutions.len(),
        });
    }
    let coarse = &solutions[0];
    for (i, s) in solutions.iter().enumerate() {
        if s.seed() != coarse.seed() {
            return Err(Error::SeedMismatch(coarse.seed(), s.seed()));
        }
        if s.record_times() != coarse.record_times() {
            return Err(Error::RecordTimeMismatch);
        }
        if s.lattice().refinement_levels_over(coarse.lattice()) != Some(i as u32) {
            return Err(Error::NonNested(format!(
                "solution {i} lives on {}, expected {i} dyadic refinements of {}",
                s.lattice(),
                coarse.lattice()
            )));
        }
    }
    let restricted = solutions
        .iter()
        .map(|s| s.restrict_to(coarse.lattice()))
        .collect::<Result<Vec<_>>>()?;
    let states = (0..coarse.record_times().len())
        .map(|t| {
            let fields: Vec<GridFunction> = restricted.iter().map(|s| s.states()[t].clone()).collect();
            weights.combine(&fields)
        })
        .collect::<Result<Vec<_>>>()?;
    let (seed, level) = solutions.last().unwrap().path_ref();
    Trajectory::new(coarse.record_times().to_vec(), states, seed, level)
}
