//! Time integration of the grid SDE system `du = (L^h u + f) dt +
//! (M^{h,r} u + g^r) dw^r`.
//!
//! [`em_solve`] is explicit Euler–Maruyama with left-point (Itô) evaluation.
//! For one-dimensional constant-coefficient schemes without free terms every
//! Fourier mode `e^{ikx}` evolves independently by a scalar linear SDE whose
//! solution is known in closed form; [`fourier_exact_solve`] uses it as an
//! integrator with no time error.

use std::io::Write;
use std::path::Path;

use log::warn;
use num_complex::Complex64;

use crate::driver::WienerPath;
use crate::error::{Error, Result};
use crate::grid::{fmt17, GridFunction, Lattice};
use crate::scheme::{BoundScheme, CoefficientField, ProblemData, StencilSpec};
use crate::spectral::Spectral;

/// Grid states at a list of record times, tagged with the realization that
/// drove them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    lattice: Lattice,
    record_times: Vec<f64>,
    states: Vec<GridFunction>,
    seed: u64,
    level: u32,
}

impl Trajectory {
    pub fn new(record_times: Vec<f64>, states: Vec<GridFunction>, seed: u64, level: u32) -> Result<Self> {
        let lattice = *states
            .first()
            .ok_or_else(|| Error::Config("a trajectory needs at least one state".into()))?
            .lattice();
        if record_times.len() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: record_times.len(),
                got: states.len(),
            });
        }
        if states.iter().any(|s| *s.lattice() != lattice) {
            return Err(Error::LatticeMismatch);
        }
        if states.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("trajectory states must be finite".into()));
        }
        Ok(Self {
            lattice,
            record_times,
            states,
            seed,
            level,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn record_times(&self) -> &[f64] {
        &self.record_times
    }

    pub fn states(&self) -> &[GridFunction] {
        &self.states
    }

    pub fn final_state(&self) -> &GridFunction {
        self.states.last().expect("trajectory is never empty")
    }

    /// `(seed, level)` of the driving path.
    pub fn path_ref(&self) -> (u64, u32) {
        (self.seed, self.level)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// State at a record time (exact match up to `1e-12` relative).
    pub fn state_at(&self, t: f64) -> Result<&GridFunction> {
        self.record_times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .map(|i| &self.states[i])
            .ok_or(Error::OffGrid(t))
    }

    pub fn restrict_to(&self, coarse: &Lattice) -> Result<Trajectory> {
        let states = self
            .states
            .iter()
            .map(|s| s.restrict_to(coarse))
            .collect::<Result<_>>()?;
        Ok(Trajectory {
            lattice: *coarse,
            record_times: self.record_times.clone(),
            states,
            seed: self.seed,
            level: self.level,
        })
    }

    pub fn map_states(&self, f: impl Fn(&GridFunction) -> GridFunction) -> Trajectory {
        Trajectory {
            states: self.states.iter().map(f).collect(),
            ..self.clone()
        }
    }

    pub fn positive_part(&self) -> Trajectory {
        self.map_states(GridFunction::positive_part)
    }

    /// One CSV file per record time in `dir`, named `{stem}_{index}.csv`,
    /// with columns `x1..xd, value`.
    pub fn write_csv_dir(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, (t, s)) in self.record_times.iter().zip(&self.states).enumerate() {
            let mut w = csv::Writer::from_path(dir.join(format!("{stem}_{i:04}.csv")))?;
            let mut header: Vec<String> = (1..=self.lattice.dim()).map(|a| format!("x{a}")).collect();
            header.push(format!("value(t={})", fmt17(*t)));
            w.write_record(&header)?;
            for (k, v) in s.values().iter().enumerate() {
                let mut row: Vec<String> = self.lattice.coords(k).into_iter().map(fmt17).collect();
                row.push(fmt17(*v));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        Ok(())
    }

    /// Little-endian dump: `d, N` (u64), `h` (f64), count (u64), the record
    /// times, then every state row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.lattice.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.lattice.points_per_axis() as u64).to_le_bytes());
        out.extend_from_slice(&self.lattice.spacing().to_le_bytes());
        out.extend_from_slice(&(self.record_times.len() as u64).to_le_bytes());
        for t in &self.record_times {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for s in &self.states {
            for v in s.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); the realization tag is not
    /// part of the dump and is supplied by the caller.
    pub fn from_bytes(bytes: &[u8], seed: u64, level: u32) -> Result<Trajectory> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().unwrap())
                .ok_or_else(|| Error::Parse("truncated trajectory dump".into()))
        };
        let dim = u64::from_le_bytes(word(0)?) as usize;
        let n = u64::from_le_bytes(word(1)?) as usize;
        let h = f64::from_le_bytes(word(2)?);
        let count = u64::from_le_bytes(word(3)?) as usize;
        let lattice = Lattice::new(dim, n, h)?;
        if bytes.len() != 8 * (4 + count + count * lattice.len()) {
            return Err(Error::Parse("trajectory dump has wrong length".into()));
        }
        let times = (0..count)
            .map(|i| word(4 + i).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let mut states = Vec::with_capacity(count);
        for s in 0..count {
            let base = 4 + count + s * lattice.len();
            let values = (0..lattice.len())
                .map(|i| word(base + i).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            states.push(GridFunction::new(lattice, values)?);
        }
        Trajectory::new(times, states, seed, level)
    }
}

/// Options of [`em_solve`].
#[derive(Debug, Clone, Copy, Default)]
pub struct EmOptions {
    /// Clip recorded states to their positive part (never affects stepping).
    pub positive_part: bool,
}

/// Sorted path-node indices of the record times.
pub(crate) fn record_indices(path: &WienerPath, record_times: &[f64]) -> Result<Vec<usize>> {
    let idx = record_times
        .iter()
        .map(|&t| path.node_index(t))
        .collect::<Result<Vec<_>>>()?;
    if idx.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("record times must be nondecreasing".into()));
    }
    Ok(idx)
}

/// Explicit step size above which the scheme is likely unstable:
/// `h² / (2 max|𝔞| max|λ|² |Λ₀|²)`.
pub fn stability_bound(bound: &BoundScheme) -> f64 {
    let spec = bound.spec();
    let h = bound.lattice().spacing();
    let max_lambda2 = spec
        .nonzero()
        .map(|i| spec.directions()[i].norm().powi(2))
        .fold(0.0, f64::max);
    let lambda0: f64 = spec
        .nonzero()
        .map(|i| spec.directions()[i].norm().powi(2))
        .sum();
    let a = bound.max_second_order_coefficient();
    if a == 0.0 {
        f64::INFINITY
    } else {
        h * h / (2.0 * a * max_lambda2 * lambda0)
    }
}

fn free_term(field: Option<&CoefficientField>, lattice: &Lattice, t: f64) -> Result<Option<Vec<f64>>> {
    match field {
        Some(f) if !f.is_zero() => Ok(Some(f.eval_on(lattice, t)?)),
        _ => Ok(None),
    }
}

/// Euler–Maruyama on the step grid of `path`, recording the states at
/// `record_times` (which must be path nodes).
pub fn em_solve(
    spec: &StencilSpec,
    problem: &ProblemData,
    path: &WienerPath,
    record_times: &[f64],
    options: EmOptions,
) -> Result<Trajectory> {
    let lattice = *problem.lattice();
    if path.drivers() != spec.drivers() {
        return Err(Error::DimensionMismatch {
            expected: spec.drivers(),
            got: path.drivers(),
        });
    }
    if problem.noise_forcing.len() > spec.drivers() {
        return Err(Error::DriverOutOfRange {
            index: problem.noise_forcing.len() - 1,
            count: spec.drivers(),
        });
    }
    let bound = BoundScheme::new(spec, lattice)?;
    let dt = path.dt();
    let limit = stability_bound(&bound);
    if dt > limit {
        warn!(
            "dt = {dt:e} exceeds the explicit stability heuristic {limit:e} on {lattice}; the run may blow up"
        );
    }
    let record = record_indices(path, record_times)?;
    let last = record.last().copied().unwrap_or(0);
    let static_f = match &problem.forcing {
        Some(f) if !f.is_time_dependent() => free_term(Some(f), &lattice, 0.0)?,
        _ => None,
    };

    let mut u = problem.psi.clone();
    let mut states = Vec::with_capacity(record.len());
    let mut next = 0;
    let mut push = |k: usize, u: &GridFunction, states: &mut Vec<GridFunction>| {
        while next < record.len() && record[next] == k {
            states.push(if options.positive_part { u.positive_part() } else { u.clone() });
            next += 1;
        }
    };
    push(0, &u, &mut states);
    for k in 0..last {
        let t = path.time(k);
        let mut du = bound.apply_l(t, &u)?.scale(dt);
        let forcing = match (&static_f, &problem.forcing) {
            (Some(v), _) => Some(v.clone()),
            (None, f) => free_term(f.as_ref(), &lattice, t)?,
        };
        if let Some(v) = forcing {
            du.axpy(dt, &GridFunction::from_raw(lattice, v));
        }
        let m = bound.apply_m(t, &u)?;
        for (r, mr) in m.iter().enumerate() {
            let dw = path.increment(r, k)?;
            du.axpy(dw, mr);
            let g = problem.noise_forcing.get(r).and_then(|g| g.as_ref());
            if let Some(g) = free_term(g, &lattice, t)? {
                du.axpy(dw, &GridFunction::from_raw(lattice, g));
            }
        }
        u = &u + &du;
        if !u.is_finite() {
            return Err(Error::SolverAbort {
                step: k + 1,
                t: path.time(k + 1),
            });
        }
        push(k + 1, &u, &mut states);
    }
    Trajectory::new(record_times.to_vec(), states, path.seed(), path.level())
}

/// A single Fourier mode `A e^{ikx}`; `k` is a physical wavenumber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeState {
    pub k: f64,
    pub amplitude: Complex64,
}

impl ModeState {
    pub fn new(k: f64, amplitude: Complex64) -> Self {
        Self { k, amplitude }
    }

    /// `cos(kx) = (e^{ikx} + e^{-ikx}) / 2` as two modes.
    pub fn cosine(k: f64, scale: f64) -> [ModeState; 2] {
        [
            ModeState::new(k, Complex64::new(0.5 * scale, 0.0)),
            ModeState::new(-k, Complex64::new(0.5 * scale, 0.0)),
        ]
    }

    /// `sin(kx) = (e^{ikx} − e^{-ikx}) / 2i` as two modes.
    pub fn sine(k: f64, scale: f64) -> [ModeState; 2] {
        [
            ModeState::new(k, Complex64::new(0.0, -0.5 * scale)),
            ModeState::new(-k, Complex64::new(0.0, 0.5 * scale)),
        ]
    }
}

/// Drift and diffusion symbols of a constant-coefficient scheme on `e^{ikx}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSymbol {
    pub drift: Complex64,
    pub diffusion: Vec<Complex64>,
}

impl ModeSymbol {
    /// Exponent rate of the closed-form solution, `ℓ − ½ Σ_r m_r²`.
    pub fn ito_rate(&self) -> Complex64 {
        self.drift - 0.5 * self.diffusion.iter().map(|m| m * m).sum::<Complex64>()
    }
}

fn constant_of(field: Option<&CoefficientField>, what: &str) -> Result<f64> {
    match field {
        None => Ok(0.0),
        Some(f) => f
            .constant_value()
            .ok_or_else(|| Error::NonConstantCoefficient(format!("{what} = {f}"))),
    }
}

/// Symbol of `L^h` and `M^{h,r}` on `e^{ikx}` at spacing `h`.
pub fn fourier_symbol(spec: &StencilSpec, h: f64, k: f64) -> Result<ModeSymbol> {
    if spec.dim() != 1 {
        return Err(Error::NotOneDimensional(spec.dim()));
    }
    let dirs = spec.directions();
    let step = |i: usize| dirs[i].components()[0] as f64;
    let s = |i: usize| {
        if i == spec.zero_index() {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, (k * h * step(i)).sin() / h)
        }
    };
    let mut drift = Complex64::new(0.0, 0.0);
    for i in 0..dirs.len() {
        for j in 0..dirs.len() {
            let a = constant_of(spec.a(i, j), "a")?;
            if a != 0.0 {
                drift += a * s(i) * s(j);
            }
        }
    }
    for g in spec.nonzero() {
        let p = constant_of(spec.p(g), "p")?;
        let q = constant_of(spec.q(g), "q")?;
        let theta = k * h * step(g);
        let fp = (Complex64::new(0.0, theta).exp() - 1.0) / h;
        let fm = (Complex64::new(0.0, -theta).exp() - 1.0) / (-h);
        drift += p * fp - q * fm;
    }
    let diffusion = (0..spec.drivers())
        .map(|r| {
            (0..dirs.len()).try_fold(Complex64::new(0.0, 0.0), |acc, i| {
                Ok(acc + constant_of(spec.b(i, r), "b")? * s(i))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeSymbol { drift, diffusion })
}

/// Symbol of the limiting operators `𝓛 = Σ 𝔞^{λμ} ∂_λ ∂_μ + Σ (𝔭 − 𝔮) ∂_λ`
/// and `𝓜^r = Σ 𝔟^{λ,r} ∂_λ` (`∂_0` the identity) on `e^{ikx}`: the
/// `h → 0` limit of [`fourier_symbol`].
pub fn continuum_symbol(spec: &StencilSpec, k: f64) -> Result<ModeSymbol> {
    if spec.dim() != 1 {
        return Err(Error::NotOneDimensional(spec.dim()));
    }
    let dirs = spec.directions();
    let s = |i: usize| Complex64::new(0.0, k * dirs[i].components()[0] as f64);
    let mut drift = Complex64::new(0.0, 0.0);
    for i in 0..dirs.len() {
        for j in 0..dirs.len() {
            let a = constant_of(spec.a(i, j), "a")?;
            if a != 0.0 {
                drift += a * s(i) * s(j);
            }
        }
        if i != spec.zero_index() {
            drift += (constant_of(spec.p(i), "p")? - constant_of(spec.q(i), "q")?) * s(i);
        }
    }
    let diffusion = (0..spec.drivers())
        .map(|r| {
            (0..dirs.len()).try_fold(Complex64::new(0.0, 0.0), |acc, i| {
                Ok(acc + constant_of(spec.b(i, r), "b")? * s(i))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ModeSymbol { drift, diffusion })
}

/// Closed-form evolution of modes to path node `step`.
pub fn evolve_modes(
    modes: &[ModeState],
    symbols: &[ModeSymbol],
    path: &WienerPath,
    step: usize,
) -> Vec<ModeState> {
    let t = path.time(step);
    modes
        .iter()
        .zip(symbols)
        .map(|(m, s)| {
            let mut z = s.ito_rate() * t;
            for (r, mr) in s.diffusion.iter().enumerate() {
                z += mr * path.value(r, step);
            }
            ModeState::new(m.k, m.amplitude * z.exp())
        })
        .collect()
}

/// `Σ A_k e^{ikx}` at the lattice nodes: real part and the largest
/// imaginary part.
pub fn synthesize(lattice: &Lattice, modes: &[ModeState]) -> (GridFunction, f64) {
    let mut max_imag: f64 = 0.0;
    let values = (0..lattice.len())
        .map(|i| {
            let x = lattice.coords(i)[0];
            let v: Complex64 = modes
                .iter()
                .map(|m| m.amplitude * Complex64::new(0.0, m.k * x).exp())
                .sum();
            max_imag = max_imag.max(v.im.abs());
            v.re
        })
        .collect();
    (GridFunction::from_raw(*lattice, values), max_imag)
}

/// Modes of a grid function on a one-dimensional periodic lattice, so that
/// [`synthesize`] reproduces it at the nodes. Coefficients below `1e-15` of
/// the largest one are FFT round-off and are dropped.
pub fn modes_from_grid(f: &GridFunction) -> Result<Vec<ModeState>> {
    let lattice = *f.lattice();
    if lattice.dim() != 1 {
        return Err(Error::NotOneDimensional(lattice.dim()));
    }
    let spectral = Spectral::new(lattice);
    let n = lattice.len() as f64;
    let hat = spectral.forward(f);
    let floor = 1e-15 * hat.iter().fold(0.0, |m: f64, c| m.max(c.norm()));
    Ok(hat
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > floor)
        .map(|(m, c)| ModeState::new(spectral.wavenumber(m), c / n))
        .collect())
}

fn check_exact_preconditions(spec: &StencilSpec, path: &WienerPath) -> Result<()> {
    if spec.dim() != 1 {
        return Err(Error::NotOneDimensional(spec.dim()));
    }
    if path.drivers() != spec.drivers() {
        return Err(Error::DimensionMismatch {
            expected: spec.drivers(),
            got: path.drivers(),
        });
    }
    Ok(())
}

/// Exact solution of the scheme from initial modes; requires constant
/// coefficients and no free terms.
pub fn fourier_exact_solve(
    spec: &StencilSpec,
    lattice: &Lattice,
    modes: &[ModeState],
    path: &WienerPath,
    record_times: &[f64],
) -> Result<Trajectory> {
    FourierReference::new(spec, *lattice, modes.to_vec(), path.clone())?.trajectory(record_times)
}

/// Initial data for the exact integrator, taken from a problem: the modes
/// of `ψ` when the problem has no free terms.
pub fn exact_modes_for(problem: &ProblemData) -> Result<Vec<ModeState>> {
    if problem.has_free_terms() {
        return Err(Error::Config(
            "the exact Fourier integrator does not support free terms f, g".into(),
        ));
    }
    modes_from_grid(&problem.psi)
}

/// A solution available at every node of a path's time grid.
pub trait ReferenceSolution {
    fn lattice(&self) -> &Lattice;
    /// State at path node `step`.
    fn state(&self, step: usize) -> Result<GridFunction>;
}

/// Exact Fourier solution evaluated on demand.
#[derive(Debug, Clone)]
pub struct FourierReference {
    lattice: Lattice,
    modes: Vec<ModeState>,
    symbols: Vec<ModeSymbol>,
    path: WienerPath,
}

impl FourierReference {
    pub fn new(spec: &StencilSpec, lattice: Lattice, modes: Vec<ModeState>, path: WienerPath) -> Result<Self> {
        check_exact_preconditions(spec, &path)?;
        let symbols = modes
            .iter()
            .map(|m| fourier_symbol(spec, lattice.spacing(), m.k))
            .collect::<Result<_>>()?;
        Ok(Self {
            lattice,
            modes,
            symbols,
            path,
        })
    }

    /// Exact solution of the limiting equation rather than the scheme: the
    /// modes evolve with [`continuum_symbol`].
    pub fn continuum(spec: &StencilSpec, lattice: Lattice, modes: Vec<ModeState>, path: WienerPath) -> Result<Self> {
        check_exact_preconditions(spec, &path)?;
        let symbols = modes
            .iter()
            .map(|m| continuum_symbol(spec, m.k))
            .collect::<Result<_>>()?;
        Ok(Self {
            lattice,
            modes,
            symbols,
            path,
        })
    }

    pub fn path(&self) -> &WienerPath {
        &self.path
    }

    /// States at the given record times.
    pub fn trajectory(&self, record_times: &[f64]) -> Result<Trajectory> {
        let record = record_indices(&self.path, record_times)?;
        let states = record.iter().map(|&k| self.state(k)).collect::<Result<_>>()?;
        Trajectory::new(record_times.to_vec(), states, self.path.seed(), self.path.level())
    }

    pub fn modes_at(&self, step: usize) -> Vec<ModeState> {
        evolve_modes(&self.modes, &self.symbols, &self.path, step)
    }
}

impl ReferenceSolution for FourierReference {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn state(&self, step: usize) -> Result<GridFunction> {
        if step > self.path.steps() {
            return Err(Error::OutOfRange(format!("step {step}")));
        }
        let (u, _) = synthesize(&self.lattice, &self.modes_at(step));
        if !u.is_finite() {
            return Err(Error::SolverAbort {
                step,
                t: self.path.time(step),
            });
        }
        Ok(u)
    }
}

/// A trajectory recorded at every path node.
pub struct DenseTrajectory<'a> {
    pub trajectory: &'a Trajectory,
}

impl ReferenceSolution for DenseTrajectory<'_> {
    fn lattice(&self) -> &Lattice {
        self.trajectory.lattice()
    }

    fn state(&self, step: usize) -> Result<GridFunction> {
        self.trajectory
            .states()
            .get(step)
            .cloned()
            .ok_or_else(|| Error::OutOfRange(format!("step {step} of a dense trajectory")))
    }
}
