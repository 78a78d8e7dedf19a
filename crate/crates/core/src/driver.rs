//! Wiener driver paths on dyadic time grids.
//!
//! Every Gaussian draw is addressed by `(seed, level, driver, interval)`:
//! the ChaCha8 key is built from `(seed, level)`, the stream number is the
//! driver and the word position is four times the interval index. Level-0
//! draws are the increments of [`WienerPath::sample`]; level-`ℓ+1` draws are
//! the Brownian-bridge midpoints inserted by [`WienerPath::refine`]. A path
//! at level `ℓ` is therefore the same realization whether it was refined
//! directly or through intermediate levels, and coarser nodes never move.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::grid::{fmt17, parse_num};

const KEY_TAG: &[u8; 20] = b"stochfd/wiener-path\0";

/// Standard normal variates at consecutive counters of one stream.
struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    fn new(seed: u64, level: u32, driver: usize, start: usize) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..12].copy_from_slice(&level.to_le_bytes());
        key[12..].copy_from_slice(KEY_TAG);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(driver as u64);
        rng.set_word_pos(4 * start as u128);
        Self { rng }
    }

    fn next(&mut self) -> f64 {
        // Box–Muller on two 53-bit uniforms, u1 in (0, 1].
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (self.rng.next_u64() >> 11) as f64 * scale;
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// The standard normal draw keyed by `(seed, level, driver, index)`.
pub fn keyed_normal(seed: u64, level: u32, driver: usize, index: usize) -> f64 {
    NormalStream::new(seed, level, driver, index).next()
}

/// `m` driver paths on the uniform grid `t_k = k T / K`, `K = K₀ 2^level`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    horizon: f64,
    base_steps: usize,
    level: u32,
    seed: u64,
    values: Vec<Vec<f64>>,
}

impl WienerPath {
    /// Fresh level-0 realization with `steps` increments on `[0, horizon]`.
    pub fn sample(drivers: usize, steps: usize, horizon: f64, seed: u64) -> Result<Self> {
        check_grid(steps, horizon)?;
        let sd = (horizon / steps as f64).sqrt();
        let values = (0..drivers)
            .map(|r| {
                let mut stream = NormalStream::new(seed, 0, r, 0);
                let mut w = Vec::with_capacity(steps + 1);
                w.push(0.0);
                let mut acc = 0.0;
                for _ in 0..steps {
                    acc += sd * stream.next();
                    w.push(acc);
                }
                w
            })
            .collect();
        Ok(Self {
            horizon,
            base_steps: steps,
            level: 0,
            seed,
            values,
        })
    }

    /// A prescribed realization. `values[r]` holds `w^r` at the `K + 1`
    /// uniform nodes; `seed` keys any later refinement.
    pub fn from_values(horizon: f64, values: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let len = values.first().map_or(0, |v| v.len());
        if len < 2 {
            return Err(Error::Config("a path needs at least two nodes".into()));
        }
        check_grid(len - 1, horizon)?;
        for v in &values {
            if v.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    got: v.len(),
                });
            }
            if v[0] != 0.0 || v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(
                    "driver values must start at 0 and be finite".into(),
                ));
            }
        }
        Ok(Self {
            horizon,
            base_steps: len - 1,
            level: 0,
            seed,
            values,
        })
    }

    /// Straight-line path `w^r(t) = slope_r · t` sampled on `steps`
    /// intervals, e.g. a path pinned to `w(T) = 1`.
    pub fn linear(horizon: f64, steps: usize, slopes: &[f64], seed: u64) -> Result<Self> {
        check_grid(steps, horizon)?;
        let values = slopes
            .iter()
            .map(|&s| {
                (0..=steps)
                    .map(|k| s * time_at(horizon, steps, k))
                    .collect()
            })
            .collect();
        Self::from_values(horizon, values, seed)
    }

    /// Inserts a bridge midpoint in every interval.
    pub fn refine(&self) -> Self {
        let steps = self.steps();
        let level = self.level + 1;
        let sd = (0.25 * self.dt()).sqrt();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(r, w)| {
                let mut stream = NormalStream::new(self.seed, level, r, 0);
                let mut out = Vec::with_capacity(2 * steps + 1);
                for k in 0..steps {
                    out.push(w[k]);
                    out.push(0.5 * (w[k] + w[k + 1]) + sd * stream.next());
                }
                out.push(w[steps]);
                out
            })
            .collect();
        Self {
            horizon: self.horizon,
            base_steps: self.base_steps,
            level,
            seed: self.seed,
            values,
        }
    }

    /// Drops every other node, undoing one refinement.
    pub fn coarsen(&self) -> Result<Self> {
        if self.level == 0 {
            return Err(Error::NonNested("cannot coarsen a level-0 path".into()));
        }
        Ok(Self {
            horizon: self.horizon,
            base_steps: self.base_steps,
            level: self.level - 1,
            seed: self.seed,
            values: self
                .values
                .iter()
                .map(|w| w.iter().step_by(2).copied().collect())
                .collect(),
        })
    }

    /// The same realization at the requested level.
    pub fn at_level(&self, level: u32) -> Result<Self> {
        let mut p = self.clone();
        while p.level < level {
            p = p.refine();
        }
        while p.level > level {
            p = p.coarsen()?;
        }
        Ok(p)
    }

    /// Refines until the step is at most `dt_max`.
    pub fn refined_to(&self, dt_max: f64) -> Self {
        let mut p = self.clone();
        while p.dt() > dt_max * (1.0 + 1e-12) {
            p = p.refine();
        }
        p
    }

    pub fn drivers(&self) -> usize {
        self.values.len()
    }

    pub fn steps(&self) -> usize {
        self.base_steps << self.level
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn base_steps(&self) -> usize {
        self.base_steps
    }

    pub fn time(&self, k: usize) -> f64 {
        time_at(self.horizon, self.steps(), k)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| self.time(k)).collect()
    }

    /// Index of the node at time `t`, within a relative tolerance of `1e-9`
    /// of the step.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let k = x.round();
        if !(k >= 0.0 && k <= self.steps() as f64) || (x - k).abs() > 1e-9 {
            return Err(Error::OffGrid(t));
        }
        Ok(k as usize)
    }

    fn driver(&self, r: usize) -> Result<&[f64]> {
        self.values.get(r).map(|v| v.as_slice()).ok_or(Error::DriverOutOfRange {
            index: r,
            count: self.drivers(),
        })
    }

    /// `w^r(t)` at a grid node.
    pub fn value_at(&self, r: usize, t: f64) -> Result<f64> {
        let k = self.node_index(t)?;
        Ok(self.driver(r)?[k])
    }

    /// `w^r` at node `k`.
    pub fn value(&self, r: usize, k: usize) -> f64 {
        self.values[r][k]
    }

    /// `w^r(t_{k+1}) − w^r(t_k)`.
    pub fn increment(&self, r: usize, k: usize) -> Result<f64> {
        let w = self.driver(r)?;
        if k >= self.steps() {
            return Err(Error::OutOfRange(format!(
                "increment {k} of a path with {} steps",
                self.steps()
            )));
        }
        Ok(w[k + 1] - w[k])
    }

    pub fn driver_values(&self, r: usize) -> Result<&[f64]> {
        self.driver(r)
    }

    /// CSV rows `t, w^1, …, w^m` with a header line.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.drivers()).map(|r| format!("w{r}")));
        out.write_record(&header)?;
        for k in 0..=self.steps() {
            let mut row = vec![fmt17(self.time(k))];
            row.extend(self.values.iter().map(|v| fmt17(v[k])));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dump written by [`write_csv`](Self::write_csv). The time grid
    /// must be uniform; `seed` keys later refinements.
    pub fn read_csv<R: Read>(r: R, seed: u64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut times = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if values.is_empty() {
                values = vec![Vec::new(); rec.len().saturating_sub(1)];
            }
            if rec.len() != values.len() + 1 {
                return Err(Error::Parse("ragged path CSV".into()));
            }
            times.push(parse_num::<f64>(&rec[0])?);
            for (v, field) in values.iter_mut().zip(rec.iter().skip(1)) {
                v.push(parse_num(field)?);
            }
        }
        if times.len() < 2 {
            return Err(Error::Parse("path CSV needs at least two rows".into()));
        }
        let horizon = *times.last().unwrap();
        let steps = times.len() - 1;
        for (k, &t) in times.iter().enumerate() {
            if (t - time_at(horizon, steps, k)).abs() > 1e-12 * horizon {
                return Err(Error::Parse(format!("non-uniform time grid at row {k}")));
            }
        }
        Self::from_values(horizon, values, seed)
    }
}

fn time_at(horizon: f64, steps: usize, k: usize) -> f64 {
    if k == steps {
        horizon
    } else {
        k as f64 * horizon / steps as f64
    }
}

fn check_grid(steps: usize, horizon: f64) -> Result<()> {
    if steps == 0 {
        return Err(Error::Config("a path needs at least one step".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_positioned_draws_agree() {
        let mut s = NormalStream::new(7, 2, 3, 0);
        let seq: Vec<f64> = (0..40).map(|_| s.next()).collect();
        for (k, v) in seq.iter().enumerate() {
            assert_eq!(*v, keyed_normal(7, 2, 3, k));
        }
        assert_ne!(keyed_normal(7, 2, 3, 0), keyed_normal(7, 2, 4, 0));
        assert_ne!(keyed_normal(7, 2, 3, 0), keyed_normal(7, 1, 3, 0));
        assert_ne!(keyed_normal(7, 2, 3, 0), keyed_normal(8, 2, 3, 0));
    }

    #[test]
    fn determinism_and_origin() {
        let a = WienerPath::sample(2, 10, 1.0, 5).unwrap();
        let b = WienerPath::sample(2, 10, 1.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value_at(0, 0.0).unwrap(), 0.0);
        assert_eq!(a.value_at(1, 0.0).unwrap(), 0.0);
        assert_ne!(a, WienerPath::sample(2, 10, 1.0, 6).unwrap());
    }

    #[test]
    fn increments_telescope() {
        let p = WienerPath::sample(1, 64, 2.0, 1).unwrap();
        let sum: f64 = (0..64).map(|k| p.increment(0, k).unwrap()).sum();
        assert!((sum - p.value_at(0, 2.0).unwrap()).abs() < 1e-12);
        assert!(matches!(p.value_at(0, 0.01), Err(Error::OffGrid(_))));
        assert!(p.increment(1, 0).is_err());
    }

    #[test]
    fn refinement_keeps_nodes() {
        let p = WienerPath::sample(2, 8, 1.0, 11).unwrap();
        let r = p.refine();
        assert_eq!(r.steps(), 16);
        for k in 0..=8 {
            assert_eq!(r.value(0, 2 * k), p.value(0, k));
            assert_eq!(r.value(1, 2 * k), p.value(1, k));
            assert_eq!(r.time(2 * k), p.time(k));
        }
        assert_eq!(r.coarsen().unwrap(), p);
        assert_eq!(p.refine().refine(), p.at_level(2).unwrap());
        assert_eq!(p.at_level(3).unwrap().at_level(1).unwrap(), r);
    }

    #[test]
    fn linear_path() {
        let p = WienerPath::linear(1.0, 10, &[1.0], 0).unwrap();
        assert_eq!(p.value_at(0, 1.0).unwrap(), 1.0);
        assert!((p.value_at(0, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let p = WienerPath::sample(2, 16, 0.5, 3).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = WienerPath::read_csv(buf.as_slice(), 3).unwrap();
        assert_eq!(p, q);
    }
}
