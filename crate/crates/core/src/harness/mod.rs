//! Experiment driver: convergence studies over grid ladders and seeds,
//! moment estimates, order fits and the `cos(x + 2w)` reproduction table.

pub mod config;
pub mod report;

use std::fmt;
use std::time::Instant;

use log::info;
use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use rayon::prelude::*;

pub use config::{parse_config, Experiment, ExperimentConfig, Norm, ReferencePolicy, ReportFormat};
pub use report::{emit_report, read_error_csv, write_error_csv, ConvergenceReport, ErrorRow, MomentEstimate, Series};

use crate::driver::WienerPath;
use crate::error::{Error, Result};
use crate::expansion::{remainder_order_check, RemainderCheck};
use crate::fit::fit_order;
use crate::grid::{l2h_norm, sup_norm, GridFunction, Lattice};
use crate::integrator::{
    em_solve, modes_from_grid, synthesize, EmOptions, FourierReference, ModeState, ReferenceSolution, Trajectory,
};
use crate::richardson::{extrapolate, weights};
use crate::scheme::{consistency_residual, lattice_samples, parabolicity_report, ParabolicityReport, ProblemData};
use config::{DtPolicy, IntegratorKind};
use report::{LevelInfo, MomentFit, MomentRow, RuntimeInfo, SeedFit};

const BOOTSTRAP_RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x6d6f_6d65_6e74;

/// Mean of `error^p` over seeds with a bootstrap 95% half-width.
pub fn moment_estimate(errors: &[f64], p: f64) -> MomentEstimate {
    let vals: Vec<f64> = errors.iter().map(|e| e.powf(p)).collect();
    let n = vals.len();
    if n == 0 {
        return MomentEstimate {
            value: f64::NAN,
            half_width: f64::NAN,
            degenerate: true,
            samples: 0,
        };
    }
    if vals.iter().all(|v| *v == vals[0]) {
        return MomentEstimate {
            value: vals[0],
            half_width: 0.0,
            degenerate: n < 2,
            samples: n,
        };
    }
    let value = vals.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| vals[(rng.next_u64() % n as u64) as usize]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo = means[BOOTSTRAP_RESAMPLES * 25 / 1000];
    let hi = means[BOOTSTRAP_RESAMPLES * 975 / 1000 - 1];
    MomentEstimate {
        value,
        half_width: 0.5 * (hi - lo),
        degenerate: false,
        samples: n,
    }
}

fn psi_grid(exp: &Experiment, lattice: &Lattice) -> Result<GridFunction> {
    match &exp.psi {
        Some(f) => f.sample(lattice, 0.0),
        None => Ok(synthesize(lattice, &exp.modes).0),
    }
}

fn modes_for(exp: &Experiment, lattice: &Lattice) -> Result<Vec<ModeState>> {
    if exp.modes.is_empty() {
        modes_from_grid(&psi_grid(exp, lattice)?)
    } else {
        Ok(exp.modes.clone())
    }
}

fn has_free_terms(exp: &Experiment) -> bool {
    exp.forcing.as_ref().is_some_and(|f| !f.is_zero()) || exp.noise_forcing.iter().flatten().any(|g| !g.is_zero())
}

fn problem_data(exp: &Experiment, lattice: &Lattice, horizon: f64) -> Result<ProblemData> {
    let mut problem = ProblemData::new(psi_grid(exp, lattice)?, horizon)?;
    if let Some(f) = &exp.forcing {
        problem = problem.with_forcing(f.clone());
    }
    for (r, g) in exp.noise_forcing.iter().enumerate() {
        if let Some(g) = g {
            problem = problem.with_noise_forcing(r, g.clone());
        }
    }
    Ok(problem)
}

/// The driving path for ladder level `level`.
fn level_path(cfg: &ExperimentConfig, base: &WienerPath, level: usize) -> Result<WienerPath> {
    match cfg.time.policy {
        DtPolicy::Fixed => Ok(base.clone()),
        DtPolicy::Parabolic => base.at_level(2 * level as u32),
    }
}

/// One solve of the configured scheme.
pub fn solve_on(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    lattice: Lattice,
    path: &WienerPath,
    record_times: &[f64],
) -> Result<Trajectory> {
    match cfg.time.integrator {
        IntegratorKind::Exact => {
            if has_free_terms(exp) {
                return Err(Error::Config(
                    "time.integrator: the exact integrator does not support forcing terms".into(),
                ));
            }
            FourierReference::new(&exp.spec, lattice, modes_for(exp, &lattice)?, path.clone())?.trajectory(record_times)
        }
        IntegratorKind::EulerMaruyama => em_solve(
            &exp.spec,
            &problem_data(exp, &lattice, cfg.problem.horizon)?,
            path,
            record_times,
            EmOptions::default(),
        ),
    }
}

/// Solves at ladder level `level` for one seed.
pub fn solve_single(cfg: &ExperimentConfig, level: usize, seed: u64) -> Result<Trajectory> {
    let exp = cfg.build()?;
    let base = WienerPath::sample(cfg.problem.drivers, cfg.steps(), cfg.problem.horizon, seed)?;
    let path = level_path(cfg, &base, level)?;
    let lattice = cfg.lattice(level)?;
    solve_on(cfg, &exp, lattice, &path, &cfg.record_times()).map_err(|e| Error::Run {
        h: lattice.spacing(),
        seed,
        source: Box::new(e),
    })
}

fn continuum_possible(exp: &Experiment) -> bool {
    exp.spec.dim() == 1 && exp.spec.is_constant() && !has_free_terms(exp)
}

fn resolve_reference(cfg: &ExperimentConfig, exp: &Experiment) -> Result<ReferencePolicy> {
    match cfg.problem.reference {
        ReferencePolicy::Auto if continuum_possible(exp) => Ok(ReferencePolicy::Continuum),
        ReferencePolicy::Auto => Ok(ReferencePolicy::Fine),
        ReferencePolicy::Continuum if !continuum_possible(exp) => Err(Error::MissingReference(
            "a continuum Fourier solution needs a one-dimensional constant-coefficient problem without forcing".into(),
        )),
        p => Ok(p),
    }
}

/// `(sup over records and nodes, sup over records of l_{h,2})` of `a − b`.
fn error_norms(a: &Trajectory, b: &Trajectory) -> Result<(f64, f64)> {
    if a.lattice() != b.lattice() {
        return Err(Error::LatticeMismatch);
    }
    let mut sup: f64 = 0.0;
    let mut l2: f64 = 0.0;
    for (x, y) in a.states().iter().zip(b.states()) {
        let d = x - y;
        sup = sup.max(sup_norm(&d));
        l2 = l2.max(l2h_norm(&d));
    }
    Ok((sup, l2))
}

struct SeedOutcome {
    rows: Vec<ErrorRow>,
    clipping_checked: bool,
}

fn run_seed(cfg: &ExperimentConfig, exp: &Experiment, policy: ReferencePolicy, seed: u64) -> Result<SeedOutcome> {
    let levels = cfg.grid.levels;
    let lattices = cfg.lattices()?;
    let times = cfg.record_times();
    let base = WienerPath::sample(cfg.problem.drivers, cfg.steps(), cfg.problem.horizon, seed)?;
    let paths = (0..levels)
        .map(|i| level_path(cfg, &base, i))
        .collect::<Result<Vec<_>>>()?;
    let ctx = |h: f64| move |e: Error| Error::Run { h, seed, source: Box::new(e) };

    let references: Vec<Trajectory> = match policy {
        ReferencePolicy::Continuum => lattices
            .par_iter()
            .zip(&paths)
            .map(|(lat, path)| {
                FourierReference::continuum(&exp.spec, *lat, modes_for(exp, lat)?, path.clone())?.trajectory(&times)
            })
            .collect::<Result<_>>()?,
        _ => {
            let finest = lattices[levels - 1];
            let fine = finest.refine().refine();
            let fine_path = paths[levels - 1].refine().refine();
            let reference = solve_on(cfg, exp, fine, &fine_path, &times).map_err(ctx(fine.spacing()))?;
            lattices
                .iter()
                .map(|lat| reference.restrict_to(lat))
                .collect::<Result<_>>()?
        }
    };

    let solutions: Vec<Trajectory> = lattices
        .par_iter()
        .zip(&paths)
        .map(|(lat, path)| solve_on(cfg, exp, *lat, path, &times).map_err(ctx(lat.spacing())))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut push = |series: Series, level: usize, (sup, l2): (f64, f64)| {
        for &norm in &cfg.output.norms {
            rows.push(ErrorRow {
                series,
                level,
                h: lattices[level].spacing(),
                seed,
                norm,
                error: match norm {
                    Norm::Sup => sup,
                    Norm::L2h => l2,
                },
            });
        }
    };
    for (i, (u, r)) in solutions.iter().zip(&references).enumerate() {
        push(Series::Plain, i, error_norms(u, r)?);
    }
    let mut clipping_checked = false;
    if cfg.time.positive_part {
        for (i, (u, r)) in solutions.iter().zip(&references).enumerate() {
            let clipped = u.positive_part();
            if r.states().iter().all(|s| s.values().iter().all(|v| *v >= 0.0)) {
                for ((c, x), y) in clipped.states().iter().zip(u.states()).zip(r.states()) {
                    let ok = c
                        .values()
                        .iter()
                        .zip(x.values())
                        .zip(y.values())
                        .all(|((c, x), y)| (y - c).abs() <= (y - x).abs());
                    if !ok {
                        return Err(Error::Config(format!(
                            "positive-part error exceeds the plain error at level {i}, seed {seed}"
                        )));
                    }
                }
                clipping_checked = true;
            }
            push(Series::Clipped, i, error_norms(&clipped, r)?);
        }
    }
    if cfg.extrapolation.enabled {
        let k = cfg.extrapolation.order;
        let w = weights(k, cfg.extrapolation.power_step)?;
        for i in 0..levels - k {
            let v = extrapolate(&solutions[i..=i + k], &w).map_err(ctx(lattices[i].spacing()))?;
            push(Series::Extrapolated, i, error_norms(&v, &references[i])?);
        }
    }
    Ok(SeedOutcome { rows, clipping_checked })
}

/// Solves every ladder level for every seed on shared realizations,
/// measures both error norms against the reference, and fits orders.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let start = Instant::now();
    cfg.validate()?;
    let exp = cfg.build()?;
    let policy = resolve_reference(cfg, &exp)?;
    let seeds = cfg.seeds();
    let lattices = cfg.lattices()?;
    info!(
        "convergence run: {} levels, {} seeds, reference {:?}",
        lattices.len(),
        seeds.len(),
        policy
    );

    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &exp, policy, seed))
        .collect::<Result<_>>()?;
    let clipping_checked = outcomes.iter().any(|o| o.clipping_checked);
    let rows: Vec<ErrorRow> = outcomes.into_iter().flat_map(|o| o.rows).collect();

    let mut series = vec![Series::Plain];
    if cfg.time.positive_part {
        series.push(Series::Clipped);
    }
    if cfg.extrapolation.enabled {
        series.push(Series::Extrapolated);
    }
    let select = |s: Series, n: Norm| rows.iter().filter(move |r| r.series == s && r.norm == n);

    let mut seed_fits = Vec::new();
    let mut moments = Vec::new();
    let mut moment_fits = Vec::new();
    for &s in &series {
        for &norm in &cfg.output.norms {
            for &seed in &seeds {
                let pairs: Vec<(f64, f64)> = select(s, norm).filter(|r| r.seed == seed).map(|r| (r.h, r.error)).collect();
                seed_fits.push(SeedFit {
                    series: s,
                    norm,
                    seed,
                    fit: fit_order(&pairs),
                });
            }
            let levels: Vec<usize> = {
                let mut l: Vec<usize> = select(s, norm).map(|r| r.level).collect();
                l.sort_unstable();
                l.dedup();
                l
            };
            for &p in &cfg.monte_carlo.moments {
                let mut pairs = Vec::new();
                for &level in &levels {
                    let errs: Vec<f64> = select(s, norm).filter(|r| r.level == level).map(|r| r.error).collect();
                    let h = lattices[level].spacing();
                    let estimate = moment_estimate(&errs, p);
                    pairs.push((h, estimate.value.powf(1.0 / p)));
                    moments.push(MomentRow {
                        series: s,
                        norm,
                        level,
                        h,
                        p,
                        estimate,
                    });
                }
                moment_fits.push(MomentFit {
                    series: s,
                    norm,
                    p,
                    fit: fit_order(&pairs),
                });
            }
        }
    }

    let mut notes = Vec::new();
    if policy == ReferencePolicy::Fine {
        let fine = lattices[lattices.len() - 1].refine().refine();
        notes.push(format!(
            "reference is the same scheme on {fine} with a quarter of the finest time step; errors include its own discretization error"
        ));
    }
    notes.push("time suprema are taken over the record times".into());
    let data_norm = if has_free_terms(&exp) {
        let problem = problem_data(&exp, &lattices[0], cfg.problem.horizon)?;
        let dirs: Vec<_> = exp.spec.nonzero().map(|i| exp.spec.directions()[i].clone()).collect();
        Some(problem.data_norm(1, &dirs, cfg.steps().min(200))?)
    } else {
        None
    };
    let levels = lattices
        .iter()
        .enumerate()
        .map(|(i, lat)| LevelInfo {
            level: i,
            h: lat.spacing(),
            points_per_axis: lat.points_per_axis(),
            dt: match cfg.time.policy {
                DtPolicy::Fixed => cfg.time.dt,
                DtPolicy::Parabolic => cfg.time.dt / 4f64.powi(i as i32),
            },
        })
        .collect();
    Ok(ConvergenceReport {
        levels,
        seeds,
        reference: format!("{policy:?}").to_lowercase(),
        rows,
        seed_fits,
        moments,
        moment_fits,
        weights: if cfg.extrapolation.enabled {
            Some(weights(cfg.extrapolation.order, cfg.extrapolation.power_step)?)
        } else {
            None
        },
        clipping_checked,
        data_norm,
        notes,
        runtime: RuntimeInfo {
            seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    })
}

/// Consistency against the target equation (when the scheme was built from
/// one) and stochastic parabolicity on the coarsest grid.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub consistency_residual: Option<f64>,
    pub parabolicity: ParabolicityReport,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.parabolicity.pass && self.consistency_residual.is_none_or(|r| r <= 1e-12)
    }
}

pub fn check(cfg: &ExperimentConfig) -> Result<CheckReport> {
    let exp = cfg.build()?;
    let samples = lattice_samples(&cfg.lattice(0)?, 256);
    let consistency_residual = exp
        .pde
        .as_ref()
        .map(|pde| consistency_residual(&exp.spec, pde, 0.0, &samples))
        .transpose()?;
    let parabolicity = parabolicity_report(&exp.spec, 0.0, &samples, None)?;
    Ok(CheckReport {
        consistency_residual,
        parabolicity,
    })
}

/// Remainder-operator order checks on the ladder lattices with `ψ` as the
/// test field, for `n = 0..=max_n`.
pub fn expansion_verify(cfg: &ExperimentConfig, max_n: usize) -> Result<Vec<RemainderCheck>> {
    let exp = cfg.build()?;
    let lattices = cfg.lattices()?;
    let phi = |x: &[f64]| match &exp.psi {
        Some(f) => f.eval(0.0, x),
        None => exp
            .modes
            .iter()
            .map(|m| (m.amplitude * num_complex::Complex64::new(0.0, m.k * x[0]).exp()).re)
            .sum(),
    };
    // Spectral derivatives are meaningless for fields that do not wrap.
    for lat in &lattices {
        let period = lat.period();
        for x in lattice_samples(lat, 64) {
            for axis in 0..lat.dim() {
                let mut y = x.clone();
                y[axis] += period;
                let (a, b) = (phi(&x), phi(&y));
                if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
                    return Err(Error::Config(format!(
                        "problem.psi: the test field is not periodic on {lat} (period {period})"
                    )));
                }
            }
        }
    }
    (0..=max_n)
        .map(|n| remainder_order_check(&exp.spec, n, phi, &lattices, 0.0))
        .collect()
}

/// One line of the reproduction table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub label: &'static str,
    pub computed: f64,
    pub published: f64,
}

impl TableRow {
    pub fn abs_diff(&self) -> f64 {
        (self.computed - self.published).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example24Table {
    pub rows: Vec<TableRow>,
}

impl fmt::Display for Example24Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18} {:>16} {:>16} {:>10}", "quantity", "computed", "published", "abs diff")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>16.10} {:>16.10} {:>10.2e}",
                r.label,
                r.computed,
                r.published,
                r.abs_diff()
            )?;
        }
        Ok(())
    }
}

/// `u_1(0)` for `du = 2u_xx dt + 2u_x dw`, `u_0 = cos x`, with the path
/// pinned to `w_1 = 1`: the exact value, the scheme at `h = 0.1` and
/// `h = 0.05`, and their Richardson combination.
pub fn reproduce_example_2_4() -> Result<Example24Table> {
    let cfg = ExperimentConfig::example_2_4();
    let spec = cfg.build()?.spec;
    let path = WienerPath::linear(1.0, 1, &[1.0], 0)?;
    let modes = ModeState::cosine(1.0, 1.0).to_vec();
    let coarse = Lattice::new(1, 64, 0.1)?;
    let fine = coarse.refine();
    let at_origin = |r: &dyn ReferenceSolution| -> Result<f64> { Ok(r.state(1)?.values()[0]) };
    let exact = at_origin(&FourierReference::continuum(&spec, coarse, modes.clone(), path.clone())?)?;
    let uh = at_origin(&FourierReference::new(&spec, coarse, modes.clone(), path.clone())?)?;
    let uh2 = at_origin(&FourierReference::new(&spec, fine, modes, path)?)?;
    let w = weights(1, 2)?.as_f64();
    let extrapolated = w[0] * uh + w[1] * uh2;
    Ok(Example24Table {
        rows: vec![
            TableRow {
                label: "u_1(0)",
                computed: exact,
                published: -0.4161468365,
            },
            TableRow {
                label: "u_1^h(0), h=0.1",
                computed: uh,
                published: -0.4131150562,
            },
            TableRow {
                label: "u_1^h(0), h=0.05",
                computed: uh2,
                published: -0.415389039,
            },
            TableRow {
                label: "v_1^h(0), h=0.1",
                computed: extrapolated,
                published: -0.4161470333,
            },
        ],
    })
}
