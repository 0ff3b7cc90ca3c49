//! Scenario files: one TOML document per run.
//!
//! Sections are deserialized one at a time from the parsed table so that
//! every error names the key it came from.

use std::fmt;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::lattice_window::{IndexSet, Window, WindowProfile};
use crate::magnetic::{transversal_gauge, FieldSpec, MagneticField, VectorPotential, DEFAULT_Q_FLUX, DEFAULT_Q_LINE};
use crate::matrix_ops::Observable;
use crate::quantize::{BuildOptions, QuadratureSpec};
use crate::symbols::{Symbol, SymbolSpec};

/// The experiments `run` understands, in listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FrameTest,
    StokesTest,
    MatrixBuild,
    DecayReport,
    CvBound,
    BealsCheck,
    ComposeCheck,
    RoundtripSymbol,
    MoyalOracle,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::FrameTest,
        Experiment::StokesTest,
        Experiment::MatrixBuild,
        Experiment::DecayReport,
        Experiment::CvBound,
        Experiment::BealsCheck,
        Experiment::ComposeCheck,
        Experiment::RoundtripSymbol,
        Experiment::MoyalOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FrameTest => "frame-test",
            Experiment::StokesTest => "stokes-test",
            Experiment::MatrixBuild => "matrix-build",
            Experiment::DecayReport => "decay-report",
            Experiment::CvBound => "cv-bound",
            Experiment::BealsCheck => "beals-check",
            Experiment::ComposeCheck => "compose-check",
            Experiment::RoundtripSymbol => "roundtrip-symbol",
            Experiment::MoyalOracle => "moyal-oracle",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Experiment::FrameTest => "window partition of unity, Parseval identity and reconstruction of a Gaussian",
            Experiment::StokesTest => "line-integral phases against triangle fluxes on random quadruples (d = 2)",
            Experiment::MatrixBuild => "assemble the frame matrix of a symbol with node-doubling and two-path checks",
            Experiment::DecayReport => "weighted off-diagonal decay constants and their stability under radii + 1",
            Experiment::CvBound => "Schur norm bound, truncated operator norm and the empirical norm ratio",
            Experiment::BealsCheck => "commutator with a position or momentum against the commutator symbol",
            Experiment::ComposeCheck => "matrix products against composed operators and their decay class",
            Experiment::RoundtripSymbol => "recover a symbol from its frame matrix",
            Experiment::MoyalOracle => "Moyal product by quadrature against the identity and the matrix product",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gauge used for a field. Symmetric and Landau need a constant field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeChoice {
    Transversal,
    Symmetric,
    Landau,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    WindowProfile::default().margin
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Radii {
    pub r_pos: usize,
    pub r_mom: usize,
    /// Largest stored |α* − β*|_∞.
    #[serde(default)]
    pub band: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Half-width of the box [−l, l]^d.
    pub l: f64,
    pub h: f64,
}

/// Node counts; unset entries take the per-dimension defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub w_nodes: Option<usize>,
    pub v_nodes: Option<usize>,
    pub angular_nodes: Option<usize>,
    pub radial_nodes: Option<usize>,
    pub q_line: Option<usize>,
    pub q_flux: Option<usize>,
    /// Lowest order of the Stokes convergence pair (n, 2n).
    pub convergence_order: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutatorConfig {
    pub kind: Observable,
    /// 1-based axis.
    #[serde(default = "first_axis")]
    pub axis: usize,
    pub pos_margin: Option<usize>,
    pub mom_margin: Option<usize>,
}

fn first_axis() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    /// Pairs (n1, n2) run over the even numbers up to this bound.
    #[serde(default = "default_max_n")]
    pub max_n: u32,
}

fn default_max_n() -> u32 {
    4
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { max_n: default_max_n() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub experiment: Experiment,
    pub dimension: usize,
    pub seed: u64,
    /// Random sample points for the window and Stokes checks.
    pub samples: usize,
    pub out: Option<PathBuf>,
    pub field: FieldSpec,
    pub gauge: GaugeChoice,
    pub window: WindowConfig,
    pub symbols: Vec<SymbolSpec>,
    pub radii: Radii,
    pub grid: Option<GridConfig>,
    pub quadrature: QuadratureConfig,
    pub commutator: Option<CommutatorConfig>,
    pub decay: DecayConfig,
}

/// A rejected scenario, with the offending key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

const KEYS: [&str; 15] = [
    "name",
    "experiment",
    "dimension",
    "seed",
    "samples",
    "out",
    "field",
    "gauge",
    "window",
    "symbols",
    "radii",
    "grid",
    "quadrature",
    "commutator",
    "decay",
];

/// Sections whose variant is chosen by a `kind` key.
const TAGGED: [&str; 3] = ["field", "symbols", "commutator"];

fn section<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<Option<T>, ConfigError> {
    let Some(v) = table.get(key) else {
        return Ok(None);
    };
    v.clone().try_into::<T>().map(Some).map_err(|e| {
        let msg = e.to_string().trim().to_string();
        let tagged = TAGGED.contains(&key) && (msg.contains("unknown variant") || msg.contains("missing field `kind`"));
        ConfigError::new(if tagged { format!("{key}.kind") } else { key.to_string() }, msg)
    })
}

fn required<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<T, ConfigError> {
    section(table, key)?.ok_or_else(|| ConfigError::new(key, "missing required key"))
}

impl Scenario {
    /// Parses and validates a scenario; `default_name` names it when the
    /// file does not.
    pub fn parse(text: &str, default_name: &str) -> Result<Scenario, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            ConfigError::new("<document>", e.message().to_string())
        })?;
        if let Some(k) = table.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(ConfigError::new(k.as_str(), format!("unknown key; expected one of {}", KEYS.join(", "))));
        }
        let dimension: usize = required(&table, "dimension")?;
        let sc = Scenario {
            name: section(&table, "name")?.unwrap_or_else(|| default_name.to_string()),
            experiment: required(&table, "experiment")?,
            dimension,
            seed: section(&table, "seed")?.unwrap_or(0),
            samples: section(&table, "samples")?.unwrap_or(100),
            out: section(&table, "out")?,
            field: section(&table, "field")?.unwrap_or(FieldSpec::Zero),
            gauge: section(&table, "gauge")?.unwrap_or(GaugeChoice::Transversal),
            window: section(&table, "window")?.unwrap_or(WindowConfig { margin: default_margin() }),
            symbols: section(&table, "symbols")?.unwrap_or_else(|| vec![SymbolSpec::One]),
            radii: required(&table, "radii")?,
            grid: section(&table, "grid")?,
            quadrature: section(&table, "quadrature")?.unwrap_or_default(),
            commutator: section(&table, "commutator")?,
            decay: section(&table, "decay")?.unwrap_or_default(),
        };
        sc.validate()?;
        Ok(sc)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let d = self.dimension;
        if d != 1 && d != 2 {
            return Err(ConfigError::new("dimension", format!("{d} given, only 1 and 2 are supported")));
        }
        self.field_value()?;
        self.gauge_value()?;
        self.window_value()?;
        let syms = self.symbol_values()?;
        if syms.is_empty() {
            return Err(ConfigError::new("symbols", "at least one symbol is required"));
        }
        if let Some(g) = self.grid {
            if !(g.h > 0.0) {
                return Err(ConfigError::new("grid.h", "must be positive"));
            }
            if !(g.l > 0.0) {
                return Err(ConfigError::new("grid.l", "must be positive"));
            }
        }
        if self.samples == 0 {
            return Err(ConfigError::new("samples", "must be positive"));
        }
        let q = self.quadrature;
        for (k, v) in [
            ("quadrature.w_nodes", q.w_nodes),
            ("quadrature.v_nodes", q.v_nodes),
            ("quadrature.angular_nodes", q.angular_nodes),
            ("quadrature.radial_nodes", q.radial_nodes),
            ("quadrature.q_line", q.q_line),
            ("quadrature.q_flux", q.q_flux),
            ("quadrature.convergence_order", q.convergence_order),
        ] {
            if v == Some(0) {
                return Err(ConfigError::new(k, "must be positive"));
            }
        }
        match self.experiment {
            Experiment::FrameTest if self.grid.is_none() => Err(ConfigError::new("grid", "frame-test needs a sampling grid")),
            Experiment::StokesTest if d != 2 => Err(ConfigError::new("dimension", "stokes-test needs d = 2")),
            Experiment::BealsCheck => {
                let c = self.commutator.ok_or_else(|| ConfigError::new("commutator", "beals-check needs a [commutator] section"))?;
                if c.axis == 0 || c.axis > d {
                    return Err(ConfigError::new("commutator.axis", format!("axis {} is out of range for d = {d}", c.axis)));
                }
                if syms[0].order() > 0.0 {
                    return Err(ConfigError::new("symbols", "beals-check needs an order-0 symbol"));
                }
                Ok(())
            }
            Experiment::CvBound if syms[0].order() != 0.0 => {
                Err(ConfigError::new("symbols", format!("cv-bound needs an order-0 symbol, the first has order {}", syms[0].order())))
            }
            Experiment::ComposeCheck if syms.len() < 2 => Err(ConfigError::new("symbols", "compose-check needs two symbols")),
            _ => Ok(()),
        }
    }

    pub fn field_value(&self) -> Result<MagneticField, ConfigError> {
        MagneticField::new(self.dimension, self.field.clone()).map_err(|e| ConfigError::new("field", e.to_string()))
    }

    pub fn gauge_value(&self) -> Result<VectorPotential, ConfigError> {
        let b = self.field_value()?;
        let q_line = self.quadrature.q_line.unwrap_or(DEFAULT_Q_LINE);
        match self.gauge {
            GaugeChoice::Transversal => Ok(transversal_gauge(&b, q_line)),
            GaugeChoice::Symmetric | GaugeChoice::Landau => {
                let c = b
                    .constant_value()
                    .filter(|_| self.dimension == 2)
                    .ok_or_else(|| ConfigError::new("gauge", "symmetric and landau gauges need a constant field in d = 2"))?;
                Ok(if self.gauge == GaugeChoice::Symmetric {
                    VectorPotential::symmetric(c)
                } else {
                    VectorPotential::landau(c)
                })
            }
        }
    }

    pub fn window_value(&self) -> Result<Window, ConfigError> {
        Window::new(self.dimension, self.window.margin).map_err(|e| ConfigError::new("window.margin", e.to_string()))
    }

    pub fn symbol_values(&self) -> Result<Vec<Symbol>, ConfigError> {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, s)| s.build(self.dimension).map_err(|e| ConfigError::new(format!("symbols[{i}]"), e.to_string())))
            .collect()
    }

    pub fn index_set(&self) -> IndexSet {
        IndexSet::new(self.dimension, self.radii.r_pos, self.radii.r_mom).expect("dimension validated")
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        let base = QuadratureSpec::default_for(self.dimension);
        let q = self.quadrature;
        QuadratureSpec {
            w_nodes: q.w_nodes.unwrap_or(base.w_nodes),
            v_nodes: q.v_nodes.unwrap_or(base.v_nodes),
            angular_nodes: q.angular_nodes.unwrap_or(base.angular_nodes),
            radial_nodes: q.radial_nodes.unwrap_or(base.radial_nodes),
        }
    }

    pub fn q_flux(&self) -> usize {
        self.quadrature.q_flux.unwrap_or(DEFAULT_Q_FLUX)
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            band: self.radii.band,
            quad: self.quadrature_spec(),
            ..BuildOptions::default_for(self.dimension)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "frame-test"
dimension = 1
[radii]
r_pos = 2
r_mom = 4
[grid]
l = 4.0
h = 0.05
"#;

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let s = Scenario::parse(BASE, "base").unwrap();
        assert_eq!(s.name, "base");
        assert_eq!(s.symbols, vec![SymbolSpec::One]);
        assert_eq!(s.field, FieldSpec::Zero);
        assert_eq!(s.quadrature_spec(), QuadratureSpec::default_for(1));
    }

    #[test]
    fn bad_field_kind_names_the_key() {
        let text = format!("{BASE}[field]\nkind = \"bogus\"\n");
        let e = Scenario::parse(&text, "x").unwrap_err();
        assert_eq!(e.key, "field.kind");
        assert!(e.message.contains("bogus"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = Scenario::parse(&format!("colour = 3\n{BASE}"), "x").unwrap_err();
        assert_eq!(e.key, "colour");
        let e = Scenario::parse(&BASE.replace("h = 0.05", "h = -1.0"), "x").unwrap_err();
        assert_eq!(e.key, "grid.h");
    }

    #[test]
    fn experiment_requirements_are_checked() {
        let e = Scenario::parse(&BASE.replace("frame-test", "stokes-test"), "x").unwrap_err();
        assert_eq!(e.key, "dimension");
        let e = Scenario::parse(&BASE.replace("frame-test", "beals-check"), "x").unwrap_err();
        assert_eq!(e.key, "commutator");
        let e = Scenario::parse(&BASE.replace("frame-test", "sideways"), "x").unwrap_err();
        assert_eq!(e.key, "experiment");
    }

    #[test]
    fn listing_order_is_fixed() {
        let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        assert_eq!(names[0], "frame-test");
        assert_eq!(names[8], "moyal-oracle");
        for e in Experiment::ALL {
            let parsed: Experiment = toml::Value::String(e.name().into()).try_into().unwrap();
            assert_eq!(parsed, e);
        }
    }
}
