//! Experiment configuration: TOML text with the sections `[problem]`,
//! `[scheme]`, `[grid]`, `[time]`, `[monte_carlo]`, `[extrapolation]` and
//! `[output]`.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Direction, Lattice};
use crate::integrator::ModeState;
use crate::scheme::{
    from_pde_central, from_pde_upwind, lattice_samples, CoefficientField, StencilSpec, TargetPDE,
};

/// A coefficient given either as a number or as an expression in
/// `x, y, z, t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Number(f64),
    Expr(String),
}

impl FieldValue {
    pub fn to_field(&self, dim: usize) -> Result<CoefficientField> {
        match self {
            FieldValue::Number(c) => Ok(CoefficientField::constant(*c)),
            FieldValue::Expr(s) => CoefficientField::expression(s, dim),
        }
    }
}

impl From<f64> for FieldValue {
    fn from(c: f64) -> Self {
        FieldValue::Number(c)
    }
}

impl From<&str> for FieldValue {
    fn from(s: &str) -> Self {
        FieldValue::Expr(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// Continuum Fourier solution when the problem allows it, otherwise a
    /// finer solve.
    #[default]
    Auto,
    Continuum,
    /// The same scheme at `h_min/4` with `dt/4` on the refined path.
    Fine,
}

/// One initial Fourier mode `(re + i·im) e^{ikx}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub k: f64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "one")]
    pub drivers: usize,
    pub horizon: f64,
    /// Initial value as an expression in the space variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<String>,
    /// Initial value as a sum of Fourier modes (one dimension only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<ModeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<FieldValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise_forcing: Vec<FieldValue>,
    #[serde(default)]
    pub reference: ReferencePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSource {
    /// Central scheme copied from the target equation.
    Central,
    /// One-sided differences for the first-order terms.
    Upwind,
    /// Explicit stencil over `directions`.
    Stencil,
}

/// `a^{αβ}` (equation indices) or `𝔞^{λμ}` (direction indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub pair: [usize; 2],
    pub value: FieldValue,
}

/// `b^{α,r}` or `𝔟^{λ,r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    pub index: usize,
    #[serde(default)]
    pub driver: usize,
    pub value: FieldValue,
}

/// `𝔭^γ` or `𝔮^γ` by direction index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub index: usize,
    pub value: FieldValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub source: SchemeSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub directions: Vec<Vec<i64>>,
    #[serde(default)]
    pub a: Vec<PairEntry>,
    #[serde(default)]
    pub b: Vec<NoiseEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p: Vec<IndexEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub q: Vec<IndexEntry>,
}

/// Level `i` has spacing `h0/2^i` and `n0·2^i` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub h0: f64,
    pub levels: usize,
    pub n0: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    #[default]
    EulerMaruyama,
    /// Exact Fourier integration of the scheme (constant coefficients, d = 1).
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicy {
    /// One step size on every level.
    #[default]
    Fixed,
    /// `dt` divided by four per level, keeping `dt/h²` fixed.
    Parabolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default)]
    pub integrator: IntegratorKind,
    pub dt: f64,
    #[serde(default)]
    pub policy: DtPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    /// Number of record intervals on `[0, T]`.
    #[serde(default = "ten")]
    pub records: usize,
    #[serde(default)]
    pub positive_part: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_moments")]
    pub moments: Vec<f64>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            seeds: Vec::new(),
            count: 1,
            base_seed: 0,
            moments: default_moments(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrapolationSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "one")]
    pub order: usize,
    #[serde(default = "two")]
    pub power_step: u32,
}

impl Default for ExtrapolationSection {
    fn default() -> Self {
        Self {
            enabled: false,
            order: 1,
            power_step: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}` (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// `sup` over record times and nodes.
    Sup,
    /// `sup` over record times of the `l_{h,2}` norm.
    L2h,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::Sup => "sup",
            Norm::L2h => "l2h",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default)]
    pub format: ReportFormat,
    #[serde(default = "default_norms")]
    pub norms: Vec<Norm>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: ReportFormat::Csv,
            norms: default_norms(),
        }
    }
}

fn one() -> usize {
    1
}
fn two() -> u32 {
    2
}
fn ten() -> usize {
    10
}
fn default_moments() -> Vec<f64> {
    vec![2.0]
}
fn default_dir() -> String {
    "out".into()
}
fn default_norms() -> Vec<Norm> {
    vec![Norm::Sup, Norm::L2h]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSection,
    pub scheme: SchemeSection,
    pub grid: GridSection,
    pub time: TimeSection,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub extrapolation: ExtrapolationSection,
    #[serde(default)]
    pub output: OutputSection,
}

const REQUIRED: &[(&str, &[&str])] = &[
    ("problem", &["horizon"]),
    ("scheme", &["source"]),
    ("grid", &["h0", "levels", "n0"]),
    ("time", &["dt"]),
];

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("malformed config: {e}")))?;
    let mut missing = Vec::new();
    for (section, keys) in REQUIRED {
        match table.get(*section) {
            None => missing.extend(keys.iter().map(|k| format!("{section}.{k}"))),
            Some(toml::Value::Table(t)) => {
                missing.extend(keys.iter().filter(|k| !t.contains_key(**k)).map(|k| format!("{section}.{k}")))
            }
            Some(_) => return Err(Error::Config(format!("`{section}` must be a table"))),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
    }
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Built experiment: the scheme, its target equation when known, and the
/// initial data.
pub struct Experiment {
    pub spec: StencilSpec,
    pub pde: Option<TargetPDE>,
    pub psi: Option<CoefficientField>,
    pub modes: Vec<ModeState>,
    pub forcing: Option<CoefficientField>,
    pub noise_forcing: Vec<Option<CoefficientField>>,
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Lattice of ladder level `i`.
    pub fn lattice(&self, level: usize) -> Result<Lattice> {
        Lattice::new(
            self.problem.dim,
            self.grid.n0 << level,
            self.grid.h0 / (1u64 << level) as f64,
        )
    }

    pub fn lattices(&self) -> Result<Vec<Lattice>> {
        (0..self.grid.levels).map(|i| self.lattice(i)).collect()
    }

    /// Base number of time steps.
    pub fn steps(&self) -> usize {
        (self.problem.horizon / self.time.dt).round() as usize
    }

    pub fn record_times(&self) -> Vec<f64> {
        let n = self.time.records;
        (0..=n)
            .map(|k| self.problem.horizon * k as f64 / n as f64)
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.monte_carlo.seeds.is_empty() {
            (0..self.monte_carlo.count as u64)
                .map(|i| self.monte_carlo.base_seed + i)
                .collect()
        } else {
            self.monte_carlo.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        let p = &self.problem;
        if p.dim == 0 {
            return bad("problem.dim", "must be at least 1".into());
        }
        if p.drivers == 0 {
            return bad("problem.drivers", "must be at least 1".into());
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return bad("problem.horizon", format!("must be positive, got {}", p.horizon));
        }
        if p.psi.is_none() && p.modes.is_empty() {
            return bad("problem.psi", "give either `psi` or `modes`".into());
        }
        if !p.modes.is_empty() && p.dim != 1 {
            return bad("problem.modes", "Fourier modes are supported for dim = 1 only".into());
        }
        if p.noise_forcing.len() > p.drivers {
            return bad(
                "problem.noise_forcing",
                format!("{} entries for {} drivers", p.noise_forcing.len(), p.drivers),
            );
        }
        let g = &self.grid;
        if !(g.h0 > 0.0 && g.h0.is_finite()) {
            return bad("grid.h0", format!("must be positive, got {}", g.h0));
        }
        if g.levels == 0 {
            return bad("grid.levels", "must be at least 1".into());
        }
        if g.n0 < 4 {
            return bad("grid.n0", format!("must be at least 4, got {}", g.n0));
        }
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return bad("time.dt", format!("must be positive, got {}", t.dt));
        }
        if let Some(max) = t.dt_max {
            if t.dt > max {
                return bad("time.dt", format!("{} exceeds time.dt_max = {max}", t.dt));
            }
        }
        let steps = p.horizon / t.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return bad("time.dt", format!("horizon {} is not a whole number of steps of {}", p.horizon, t.dt));
        }
        if t.records == 0 || self.steps() % t.records != 0 {
            return bad(
                "time.records",
                format!("{} record intervals do not divide {} steps", t.records, self.steps()),
            );
        }
        let mc = &self.monte_carlo;
        if mc.seeds.is_empty() && mc.count == 0 {
            return bad("monte_carlo.count", "must be at least 1".into());
        }
        if let Some(bad_p) = mc.moments.iter().find(|q| !(**q > 0.0)) {
            return bad("monte_carlo.moments", format!("moment orders must be positive, got {bad_p}"));
        }
        let ex = &self.extrapolation;
        if ex.enabled && ex.power_step == 0 {
            return bad("extrapolation.power_step", "must be positive".into());
        }
        if ex.enabled && g.levels < ex.order + 1 {
            return bad(
                "extrapolation.order",
                format!("order {} needs at least {} grid levels, have {}", ex.order, ex.order + 1, g.levels),
            );
        }
        if self.output.norms.is_empty() {
            return bad("output.norms", "request at least one norm".into());
        }
        // Building resolves every expression and checks the stencil.
        self.build()?;
        Ok(())
    }

    /// Resolves expressions and assembles the scheme.
    pub fn build(&self) -> Result<Experiment> {
        let p = &self.problem;
        let s = &self.scheme;
        let dim = p.dim;
        let field = |v: &FieldValue, name: String| {
            v.to_field(dim)
                .map_err(|e| Error::Config(format!("{name}: {e}")))
        };
        let (spec, pde) = match s.source {
            SchemeSource::Central | SchemeSource::Upwind => {
                if !s.directions.is_empty() || !s.p.is_empty() || !s.q.is_empty() {
                    return Err(Error::Config(
                        "scheme: `directions`, `p` and `q` belong to source = \"stencil\"".into(),
                    ));
                }
                let mut pde = TargetPDE::new(dim, p.drivers);
                for (i, e) in s.a.iter().enumerate() {
                    pde.set_a(e.pair[0], e.pair[1], field(&e.value, format!("scheme.a[{i}]"))?)
                        .map_err(|err| Error::Config(format!("scheme.a[{i}]: {err}")))?;
                }
                for (i, e) in s.b.iter().enumerate() {
                    pde.set_b(e.index, e.driver, field(&e.value, format!("scheme.b[{i}]"))?)
                        .map_err(|err| Error::Config(format!("scheme.b[{i}]: {err}")))?;
                }
                let spec = if s.source == SchemeSource::Central {
                    if !s.theta.is_empty() {
                        return Err(Error::Config("scheme.theta: only used with source = \"upwind\"".into()));
                    }
                    from_pde_central(&pde)?
                } else {
                    let lattice = self.lattice(0)?;
                    let samples: Vec<(f64, Vec<f64>)> = [0.0, p.horizon]
                        .iter()
                        .flat_map(|&t| lattice_samples(&lattice, 256).into_iter().map(move |x| (t, x)))
                        .collect();
                    from_pde_upwind(&pde, &s.theta, &samples)
                        .map_err(|e| Error::Config(format!("scheme.theta: {e}")))?
                };
                (spec, Some(pde))
            }
            SchemeSource::Stencil => {
                if !s.theta.is_empty() {
                    return Err(Error::Config("scheme.theta: only used with source = \"upwind\"".into()));
                }
                let dirs = s.directions.iter().cloned().map(Direction::new).collect();
                let mut spec = StencilSpec::new(dim, p.drivers, dirs)
                    .map_err(|e| Error::Config(format!("scheme.directions: {e}")))?;
                for (i, e) in s.a.iter().enumerate() {
                    spec.set_a(e.pair[0], e.pair[1], field(&e.value, format!("scheme.a[{i}]"))?)
                        .map_err(|err| Error::Config(format!("scheme.a[{i}]: {err}")))?;
                }
                for (i, e) in s.b.iter().enumerate() {
                    spec.set_b(e.index, e.driver, field(&e.value, format!("scheme.b[{i}]"))?)
                        .map_err(|err| Error::Config(format!("scheme.b[{i}]: {err}")))?;
                }
                for (i, e) in s.p.iter().enumerate() {
                    spec.set_p(e.index, field(&e.value, format!("scheme.p[{i}]"))?)
                        .map_err(|err| Error::Config(format!("scheme.p[{i}]: {err}")))?;
                }
                for (i, e) in s.q.iter().enumerate() {
                    spec.set_q(e.index, field(&e.value, format!("scheme.q[{i}]"))?)
                        .map_err(|err| Error::Config(format!("scheme.q[{i}]: {err}")))?;
                }
                (spec, None)
            }
        };
        let psi = p
            .psi
            .as_deref()
            .map(|src| {
                CoefficientField::expression(src, dim).map_err(|e| Error::Config(format!("problem.psi: {e}")))
            })
            .transpose()?;
        let modes = p
            .modes
            .iter()
            .map(|m| ModeState::new(m.k, Complex64::new(m.re, m.im)))
            .collect();
        let forcing = p
            .forcing
            .as_ref()
            .map(|f| field(f, "problem.forcing".into()))
            .transpose()?;
        let noise_forcing = p
            .noise_forcing
            .iter()
            .enumerate()
            .map(|(r, g)| field(g, format!("problem.noise_forcing[{r}]")).map(Some))
            .collect::<Result<_>>()?;
        Ok(Experiment {
            spec,
            pde,
            psi,
            modes,
            forcing,
            noise_forcing,
        })
    }

    /// `du = 2 u_xx dt + 2 u_x dw`, `ψ = cos x`, on `h ∈ {0.2, 0.1, 0.05,
    /// 0.025}` with the exact integrator and the continuum reference.
    pub fn example_2_4() -> Self {
        parse_config(EXAMPLE_2_4_CONFIG).expect("the built-in preset is valid")
    }
}

/// The built-in preset for the `cos(x + 2w)` example.
pub const EXAMPLE_2_4_CONFIG: &str = r#"[problem]
dim = 1
drivers = 1
horizon = 1.0
modes = [{ k = 1.0, re = 0.5 }, { k = -1.0, re = 0.5 }]
reference = "continuum"

[scheme]
source = "central"
a = [{ pair = [1, 1], value = 2.0 }]
b = [{ index = 1, driver = 0, value = 2.0 }]

[grid]
h0 = 0.2
levels = 4
n0 = 32

[time]
integrator = "exact"
dt = 0.01
records = 100

[monte_carlo]
seeds = [1]
moments = [1.0, 2.0]

[extrapolation]
enabled = false
order = 1
power_step = 2

[output]
dir = "out"
format = "csv"
norms = ["sup", "l2h"]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips() {
        let cfg = ExperimentConfig::example_2_4();
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&text).unwrap(), cfg);
        assert_eq!(cfg.seeds(), vec![1]);
        assert_eq!(cfg.steps(), 100);
        assert_eq!(cfg.record_times().len(), 101);
    }

    #[test]
    fn negative_h_names_the_field() {
        let text = EXAMPLE_2_4_CONFIG.replace("h0 = 0.2", "h0 = -0.1");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("grid.h0"), "{err}");
    }

    #[test]
    fn unknown_key_has_location() {
        let text = EXAMPLE_2_4_CONFIG.replace("n0 = 32", "n0 = 32\nspacing = 3");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("spacing") && err.contains("line"), "{err}");
    }

    #[test]
    fn missing_keys_listed_together() {
        let err = parse_config("[grid]\nn0 = 8\n[time]\n").unwrap_err().to_string();
        for key in ["problem.horizon", "scheme.source", "grid.h0", "grid.levels", "time.dt"] {
            assert!(err.contains(key), "{err}");
        }
        assert!(!err.contains("grid.n0"));
    }

    #[test]
    fn bad_expressions_and_theta_rejected() {
        let text = EXAMPLE_2_4_CONFIG.replace("value = 2.0 }]\nb", "value = \"2 + foo(x)\" }]\nb");
        assert!(parse_config(&text).unwrap_err().to_string().contains("scheme.a[0]"));
        let upwind = EXAMPLE_2_4_CONFIG
            .replace("source = \"central\"", "source = \"upwind\"\ntheta = [0.1]")
            .replace("a = [{ pair = [1, 1], value = 2.0 }]", "a = [{ pair = [1, 1], value = 2.0 }, { pair = [0, 1], value = 0.5 }]");
        assert!(parse_config(&upwind).unwrap_err().to_string().contains("scheme.theta"));
    }

    #[test]
    fn dt_must_tile_horizon() {
        let text = EXAMPLE_2_4_CONFIG.replace("dt = 0.01", "dt = 0.03");
        assert!(parse_config(&text).unwrap_err().to_string().contains("time.dt"));
        let text = EXAMPLE_2_4_CONFIG.replace("records = 100", "records = 7");
        assert!(parse_config(&text).unwrap_err().to_string().contains("time.records"));
    }
}
