//! Periodic Fourier differentiation on a lattice.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{Direction, GridFunction, Lattice};

/// FFT plans and wavenumbers for one lattice.
#[derive(Clone)]
pub struct Spectral {
    lattice: Lattice,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("lattice", &self.lattice)
            .finish()
    }
}

impl Spectral {
    pub fn new(lattice: Lattice) -> Self {
        let n = lattice.points_per_axis();
        let mut planner = FftPlanner::new();
        let base = 2.0 * std::f64::consts::PI / lattice.period();
        let wavenumbers = (0..n)
            .map(|m| {
                let signed = if m <= n / 2 { m as i64 } else { m as i64 - n as i64 };
                signed as f64 * base
            })
            .collect();
        Self {
            lattice,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wavenumbers,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Physical wavenumber of FFT index `m` along an axis.
    pub fn wavenumber(&self, m: usize) -> f64 {
        self.wavenumbers[m]
    }

    /// Wavevector of a flat mode index.
    pub fn wavevector(&self, flat: usize) -> Vec<f64> {
        self.lattice
            .multi_index(flat)
            .into_iter()
            .map(|m| self.wavenumbers[m])
            .collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.lattice.points_per_axis();
        let mut line = vec![Complex64::default(); n];
        for axis in 0..self.lattice.dim() {
            let stride = self.lattice.stride(axis);
            let block = n * stride;
            for base in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    for (j, c) in line.iter_mut().enumerate() {
                        *c = data[base + j * stride + inner];
                    }
                    plan.process(&mut line);
                    for (j, c) in line.iter().enumerate() {
                        data[base + j * stride + inner] = *c;
                    }
                }
            }
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(&self, f: &GridFunction) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    /// Inverse transform including the `1/N^d` normalisation.
    pub fn inverse(&self, mut coeffs: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut coeffs, &self.inverse);
        let scale = 1.0 / self.lattice.len() as f64;
        for c in coeffs.iter_mut() {
            *c *= scale;
        }
        coeffs
    }

    /// Real part of the inverse transform as a grid function.
    pub fn inverse_real(&self, coeffs: Vec<Complex64>) -> GridFunction {
        let values = self.inverse(coeffs).into_iter().map(|c| c.re).collect();
        GridFunction::from_raw(self.lattice, values)
    }

    /// Fourier multiplier of `∂_λ^power`, i.e. `(i κ·λ)^power`, per mode.
    pub fn directional_symbol(&self, dir: &Direction, power: u32) -> Vec<Complex64> {
        (0..self.lattice.len())
            .map(|i| {
                let k = dir.dot(&self.wavevector(i));
                Complex64::new(0.0, k).powu(power)
            })
            .collect()
    }

    /// `∂_λ^power f` by Fourier differentiation.
    pub fn directional_derivative(&self, f: &GridFunction, dir: &Direction, power: u32) -> GridFunction {
        if power == 0 || dir.is_zero() {
            return if power == 0 { f.clone() } else { GridFunction::zeros(self.lattice) };
        }
        let hat = self.forward(f);
        self.apply_multiplier(&hat, &self.directional_symbol(dir, power))
    }

    pub fn apply_multiplier(&self, hat: &[Complex64], symbol: &[Complex64]) -> GridFunction {
        let prod = hat.iter().zip(symbol).map(|(a, b)| a * b).collect();
        self.inverse_real(prod)
    }

    /// `|D^k f|_0`: the l_{h,2} norm of the full k-th derivative tensor,
    /// computed through Parseval as `Σ_κ |f̂(κ)|² |κ|^{2k}`.
    pub fn derivative_tensor_norm(&self, f: &GridFunction, k: u32) -> f64 {
        let hat = self.forward(f);
        let h = self.lattice.spacing();
        let weight = h.powi(self.lattice.dim() as i32) / self.lattice.len() as f64;
        let total: f64 = hat
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let k2: f64 = self.wavevector(i).iter().map(|v| v * v).sum();
                c.norm_sqr() * k2.powi(k as i32)
            })
            .sum();
        (total * weight).sqrt()
    }

    /// Fraction of the spectral energy carried by modes whose index along
    /// some axis lies in the top third of the resolved band.
    pub fn high_mode_energy_fraction(&self, f: &GridFunction) -> f64 {
        self.high_mode_fraction_of(&self.forward(f))
    }

    /// As [`high_mode_energy_fraction`](Self::high_mode_energy_fraction),
    /// from precomputed coefficients.
    pub fn high_mode_fraction_of(&self, hat: &[Complex64]) -> f64 {
        let n = self.lattice.points_per_axis() as f64;
        let cutoff = n / 3.0;
        let mut total = 0.0;
        let mut high = 0.0;
        for (i, c) in hat.iter().enumerate() {
            let e = c.norm_sqr();
            total += e;
            let is_high = self.lattice.multi_index(i).iter().any(|&m| {
                let signed = if (m as f64) <= n / 2.0 { m as f64 } else { m as f64 - n };
                signed.abs() > cutoff
            });
            if is_high {
                high += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            high / total
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn derivatives_of_trig_polynomials_are_exact() {
        let lat = Lattice::periodic(1, 32, 2.0 * PI).unwrap();
        let sp = Spectral::new(lat);
        let f = GridFunction::from_fn(lat, |x| (3.0 * x[0]).sin() + 0.5 * x[0].cos());
        let d3 = sp.directional_derivative(&f, &Direction::from(1), 3);
        for (i, v) in d3.values().iter().enumerate() {
            let x = lat.coords(i)[0];
            let expected = -27.0 * (3.0 * x).cos() + 0.5 * x.sin();
            assert!((v - expected).abs() < 1e-11);
        }
        // ∂_{2e1} = 2 ∂
        let d = sp.directional_derivative(&f, &Direction::from(2), 1);
        let d1 = sp.directional_derivative(&f, &Direction::from(1), 1);
        for (a, b) in d.values().iter().zip(d1.values()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_directions_in_two_dimensions() {
        let lat = Lattice::periodic(2, 16, 2.0 * PI).unwrap();
        let sp = Spectral::new(lat);
        let f = GridFunction::from_fn(lat, |x| (x[0] + 2.0 * x[1]).sin());
        let d = sp.directional_derivative(&f, &Direction::new(vec![1, 1]), 1);
        for (i, v) in d.values().iter().enumerate() {
            let x = lat.coords(i);
            assert!((v - 3.0 * (x[0] + 2.0 * x[1]).cos()).abs() < 1e-11);
        }
    }

    #[test]
    fn tensor_norm_matches_analytic_value() {
        let lat = Lattice::periodic(1, 64, 2.0 * PI).unwrap();
        let sp = Spectral::new(lat);
        let f = GridFunction::from_fn(lat, |x| (2.0 * x[0]).cos());
        // |D^2 cos 2x|_0 = 4 |cos 2x|_0 = 4 sqrt(pi)
        assert!((sp.derivative_tensor_norm(&f, 2) - 4.0 * PI.sqrt()).abs() < 1e-12);
        assert!(sp.high_mode_energy_fraction(&f) < 1e-20);
    }
}
