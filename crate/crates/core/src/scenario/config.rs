//! Line-oriented `key = value` scenario configuration.
//!
//! ```text
//! # two-level system in Gaussian time
//! [scenario]
//! kind = quantum_evolve
//!
//! [model]
//! family = gaussian
//! tau = 0.1
//!
//! [system]
//! energies = 0, 1
//! initial_state = superposition
//!
//! [time]
//! t_end = 1
//! n_points = 11
//! ```
//!
//! Keys are case-sensitive. Every problem in a file is reported at once,
//! each with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::estimators::Regime;
use crate::linalg::CMatrix;
use crate::quantum::{DensityMatrix, Hamiltonian};
use crate::time_model::{IncrementDensity, SamplerConfig, TabulatedDensity, TimeModel};
use crate::units::UnitSystem;

/// One problem found while reading or validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line number, if the problem is tied to a line.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every problem found in a configuration, in line order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const SECTIONS: &[(&str, &[&str])] = &[
    ("scenario", &["kind", "name"]),
    (
        "model",
        &["family", "tau", "increments", "shape", "kappa", "initial", "initial_shape", "table"],
    ),
    (
        "system",
        &["energies", "hamiltonian", "initial_state", "populations", "amplitudes", "elements"],
    ),
    ("time", &["t_start", "t_end", "n_points", "dt", "method"]),
    ("sampler", &["seed", "n_samples"]),
    ("units", &["system"]),
    ("output", &["csv", "summary", "svg"]),
    ("decay", &["lifetime"]),
    (
        "classical",
        &["x0", "v", "sigma0", "x_min", "x_max", "n_cells", "dt", "bin_factor"],
    ),
    ("wavepacket", &["m", "delta_x", "x0", "x_min", "x_max", "n_x"]),
    (
        "estimate",
        &[
            "calculator", "tau", "delta_e", "t", "l", "tau0", "gamma", "t_os", "t_f", "delta_m", "energy", "regime",
            "lifetime",
        ],
    ),
    ("lemma", &["instances", "max_dim"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    QuantumEvolve,
    QuantumOracleCompare,
    EntropyAudit,
    DecayLaw,
    ClassicalPde,
    ClassicalMc,
    Wavepacket,
    Estimate,
    LemmaFuzz,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 9] = [
        ScenarioKind::QuantumEvolve,
        ScenarioKind::QuantumOracleCompare,
        ScenarioKind::EntropyAudit,
        ScenarioKind::DecayLaw,
        ScenarioKind::ClassicalPde,
        ScenarioKind::ClassicalMc,
        ScenarioKind::Wavepacket,
        ScenarioKind::Estimate,
        ScenarioKind::LemmaFuzz,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::QuantumEvolve => "quantum_evolve",
            ScenarioKind::QuantumOracleCompare => "quantum_oracle_compare",
            ScenarioKind::EntropyAudit => "entropy_audit",
            ScenarioKind::DecayLaw => "decay_law",
            ScenarioKind::ClassicalPde => "classical_pde",
            ScenarioKind::ClassicalMc => "classical_mc",
            ScenarioKind::Wavepacket => "wavepacket",
            ScenarioKind::Estimate => "estimate",
            ScenarioKind::LemmaFuzz => "lemma_fuzz",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn needs_model(&self) -> bool {
        !matches!(self, ScenarioKind::Estimate | ScenarioKind::LemmaFuzz)
    }

    fn needs_system(&self) -> bool {
        matches!(
            self,
            ScenarioKind::QuantumEvolve | ScenarioKind::QuantumOracleCompare | ScenarioKind::EntropyAudit
        )
    }

    fn needs_time(&self) -> bool {
        !matches!(self, ScenarioKind::Estimate | ScenarioKind::LemmaFuzz)
    }

    fn needs_sampler(&self) -> bool {
        matches!(
            self,
            ScenarioKind::QuantumOracleCompare
                | ScenarioKind::DecayLaw
                | ScenarioKind::ClassicalMc
                | ScenarioKind::LemmaFuzz
        )
    }
}

/// How `quantum_evolve` computes the averaged state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMethod {
    Analytic,
    OdeFull,
    OdeSecondOrder,
}

impl EvolutionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvolutionMethod::Analytic => "analytic",
            EvolutionMethod::OdeFull => "ode_full",
            EvolutionMethod::OdeSecondOrder => "ode_second_order",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub hamiltonian: Hamiltonian,
    pub initial: DensityMatrix,
    /// (k, l) pairs written to the CSV.
    pub elements: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_points: usize,
    /// Integration step for the ODE routes; defaults to the stability limit.
    pub dt: Option<f64>,
}

impl TimeGrid {
    /// `n_points` evenly spaced times from t_start to t_end inclusive.
    pub fn points(&self) -> Vec<f64> {
        if self.n_points == 1 {
            return vec![self.t_end];
        }
        let step = (self.t_end - self.t_start) / (self.n_points - 1) as f64;
        (0..self.n_points)
            .map(|i| {
                if i + 1 == self.n_points {
                    self.t_end
                } else {
                    self.t_start + i as f64 * step
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSpec {
    pub csv: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalSpec {
    pub x0: f64,
    pub v: f64,
    pub sigma0: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub dt: Option<f64>,
    /// Cells merged per histogram bin when comparing PDE and Monte Carlo.
    pub bin_factor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WavepacketSpec {
    pub m: f64,
    pub delta_x: f64,
    pub x0: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimateSpec {
    DecoherenceTime { tau: f64, delta_e: f64 },
    FlowStddev { t: f64, tau: f64 },
    BeamThreshold { l: f64, tau0: f64, gamma: f64 },
    OscillationBounds { t_os: f64, t_f: f64 },
    EnergySplit { delta_m: f64, energy: f64, regime: Regime },
    LifetimeBound { lifetime: f64 },
    Kaon,
    Neutrino,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaSpec {
    pub instances: usize,
    pub max_dim: usize,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub name: String,
    pub model: Option<TimeModel>,
    /// The `[model]` section as written, for the summary.
    pub model_description: String,
    pub system: Option<SystemSpec>,
    pub time: Option<TimeGrid>,
    pub method: EvolutionMethod,
    pub sampler: Option<SamplerConfig>,
    pub units: UnitSystem,
    pub units_name: String,
    pub output: OutputSpec,
    pub decay_lifetime: Option<f64>,
    pub classical: Option<ClassicalSpec>,
    pub wavepacket: Option<WavepacketSpec>,
    pub estimate: Option<EstimateSpec>,
    pub lemma: Option<LemmaSpec>,
    /// The text the configuration was parsed from.
    pub source: String,
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Parses and validates `text`. Relative file references (tables,
/// Hamiltonian matrices) resolve against the current directory.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    parse_config_in(text, Path::new("."))
}

/// Like [`parse_config`], resolving relative file references against
/// `base_dir`.
pub fn parse_config_in(text: &str, base_dir: &Path) -> Result<ScenarioConfig, ConfigErrors> {
    let mut reader = Reader::lex(text);
    let cfg = reader.build(base_dir, text);
    if reader.errors.is_empty() {
        Ok(cfg.expect("no errors implies a config"))
    } else {
        reader.errors.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(ConfigErrors(reader.errors))
    }
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> crate::Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_config_in(&text, base)?)
}

fn nearest<'a>(word: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(word, c), c))
        .filter(|(d, c)| *d <= 3.max(c.len() / 2))
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

struct Reader {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    section_lines: BTreeMap<String, usize>,
    errors: Vec<ConfigError>,
}

impl Reader {
    fn lex(text: &str) -> Self {
        let mut reader = Reader {
            sections: BTreeMap::new(),
            section_lines: BTreeMap::new(),
            errors: Vec::new(),
        };
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    reader.error(line, format!("malformed section header `{content}`"));
                    current = None;
                    continue;
                };
                let name = name.trim();
                if SECTIONS.iter().any(|(s, _)| *s == name) {
                    if reader.section_lines.contains_key(name) {
                        reader.error(line, format!("section [{name}] appears twice"));
                    }
                    reader.section_lines.insert(name.to_string(), line);
                    reader.sections.entry(name.to_string()).or_default();
                    current = Some(name.to_string());
                } else {
                    let hint = nearest(name, SECTIONS.iter().map(|(s, _)| *s))
                        .map(|s| format!("; did you mean [{s}]?"))
                        .unwrap_or_default();
                    reader.error(line, format!("unknown section [{name}]{hint}"));
                    current = None;
                }
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                reader.error(line, format!("expected `key = value`, found `{content}`"));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(section) = current.clone() else {
                reader.error(line, format!("key `{key}` appears outside any known section"));
                continue;
            };
            let allowed = SECTIONS.iter().find(|(s, _)| *s == section).map(|(_, k)| *k).unwrap_or(&[]);
            if !allowed.contains(&key) {
                let hint = nearest(key, allowed.iter().copied())
                    .map(|k| format!("; did you mean `{k}`?"))
                    .unwrap_or_default();
                reader.error(line, format!("unknown key `{key}` in [{section}]{hint}"));
                continue;
            }
            if value.is_empty() {
                reader.error(line, format!("key `{key}` has no value"));
                continue;
            }
            let map = reader.sections.get_mut(&section).expect("section registered");
            if let Some(prev) = map.get(key) {
                let prev_line = prev.line;
                reader.error(line, format!("key `{key}` already set on line {prev_line}"));
                continue;
            }
            map.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
        reader
    }

    fn error(&mut self, line: usize, message: String) {
        self.errors.push(ConfigError {
            line: Some(line),
            message,
        });
    }

    fn global_error(&mut self, message: String) {
        self.errors.push(ConfigError { line: None, message });
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn section_line(&self, section: &str) -> Option<usize> {
        self.section_lines.get(section).copied()
    }

    fn entry(&self, section: &str, key: &str) -> Option<Entry> {
        self.sections.get(section).and_then(|m| m.get(key)).cloned()
    }

    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        self.entry(section, key).map(|e| e.line).or_else(|| self.section_line(section))
    }

    fn missing(&mut self, section: &str, key: &str) {
        let message = format!("missing required key `{key}` in [{section}]");
        match self.section_line(section) {
            Some(line) => self.error(line, message),
            None => self.global_error(message),
        }
    }

    fn string(&mut self, section: &str, key: &str) -> Option<String> {
        self.entry(section, key).map(|e| e.value)
    }

    fn req_string(&mut self, section: &str, key: &str) -> Option<String> {
        let v = self.string(section, key);
        if v.is_none() {
            self.missing(section, key);
        }
        v
    }

    fn parse_with<T>(&mut self, section: &str, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Option<T> {
        let entry = self.entry(section, key)?;
        match f(&entry.value) {
            Some(v) => Some(v),
            None => {
                self.error(entry.line, format!("`{key}` expects {what}, found `{}`", entry.value));
                None
            }
        }
    }

    fn f64(&mut self, section: &str, key: &str) -> Option<f64> {
        self.parse_with(section, key, "a number", |s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
    }

    fn req_f64(&mut self, section: &str, key: &str) -> Option<f64> {
        if self.entry(section, key).is_none() {
            self.missing(section, key);
            return None;
        }
        self.f64(section, key)
    }

    fn positive(&mut self, section: &str, key: &str, value: Option<f64>) -> Option<f64> {
        match value {
            Some(v) if v > 0.0 => Some(v),
            Some(v) => {
                let line = self.line_of(section, key).unwrap_or(0);
                self.error(line, format!("`{key}` must be positive, found {v}"));
                None
            }
            None => None,
        }
    }

    fn usize(&mut self, section: &str, key: &str) -> Option<usize> {
        self.parse_with(section, key, "a non-negative integer", |s| s.parse::<usize>().ok())
    }

    fn u64(&mut self, section: &str, key: &str) -> Option<u64> {
        self.parse_with(section, key, "a non-negative integer", |s| s.parse::<u64>().ok())
    }

    fn f64_list(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        self.parse_with(section, key, "a comma-separated list of numbers", |s| {
            s.split(',')
                .map(|p| p.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect()
        })
    }

    fn choice(&mut self, section: &str, key: &str, options: &[&str]) -> Option<String> {
        let entry = self.entry(section, key)?;
        if options.contains(&entry.value.as_str()) {
            Some(entry.value)
        } else {
            let hint = nearest(&entry.value, options.iter().copied())
                .map(|o| format!("; did you mean `{o}`?"))
                .unwrap_or_default();
            self.error(
                entry.line,
                format!("`{key}` must be one of {}, found `{}`{hint}", options.join(", "), entry.value),
            );
            None
        }
    }

    fn require_section(&mut self, section: &str, kind: ScenarioKind) -> bool {
        if self.has_section(section) {
            return true;
        }
        self.global_error(format!("scenario kind {} needs a [{section}] section", kind.as_str()));
        false
    }

    fn build(&mut self, base: &Path, text: &str) -> Option<ScenarioConfig> {
        let kind = match self.req_string("scenario", "kind") {
            Some(k) => match ScenarioKind::parse(&k) {
                Some(kind) => Some(kind),
                None => {
                    let names: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.as_str()).collect();
                    let hint = nearest(&k, names.iter().copied())
                        .map(|o| format!("; did you mean `{o}`?"))
                        .unwrap_or_default();
                    let line = self.line_of("scenario", "kind").unwrap_or(0);
                    self.error(line, format!("unknown scenario kind `{k}`{hint}"));
                    None
                }
            },
            None => None,
        };
        let name = self.string("scenario", "name").unwrap_or_else(|| "unnamed".into());

        let (units, units_name) = match self.choice("units", "system", &["natural", "cgs"]).as_deref() {
            Some("cgs") => (UnitSystem::cgs(), "cgs".to_string()),
            _ => (UnitSystem::natural(), "natural".to_string()),
        };

        let output = OutputSpec {
            csv: self.string("output", "csv").map(PathBuf::from),
            summary: self.string("output", "summary").map(PathBuf::from),
            svg: self.string("output", "svg").map(PathBuf::from),
        };

        let sampler = if self.has_section("sampler") {
            let seed = self.u64("sampler", "seed");
            if self.entry("sampler", "seed").is_none() {
                self.missing("sampler", "seed");
            }
            let n = self.usize("sampler", "n_samples").unwrap_or(100_000);
            if n == 0 {
                let line = self.line_of("sampler", "n_samples").unwrap_or(0);
                self.error(line, "`n_samples` must be positive".into());
            }
            seed.map(|s| SamplerConfig::new(s, n))
        } else {
            None
        };

        let kind = kind?;
        if kind.needs_model() {
            self.require_section("model", kind);
        }
        let model = if self.has_section("model") { self.model(base) } else { None };
        let model_description = self
            .sections
            .get("model")
            .map(|m| m.iter().map(|(k, e)| format!("{k}={}", e.value)).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();

        let system = if kind.needs_system() && self.require_section("system", kind) {
            self.system(base, &units)
        } else {
            None
        };

        let time = if kind.needs_time() && self.require_section("time", kind) {
            self.time()
        } else {
            None
        };
        let method = match self
            .choice("time", "method", &["analytic", "ode_full", "ode_second_order"])
            .as_deref()
        {
            Some("ode_full") => EvolutionMethod::OdeFull,
            Some("ode_second_order") => EvolutionMethod::OdeSecondOrder,
            _ => EvolutionMethod::Analytic,
        };

        if kind.needs_sampler() && !self.has_section("sampler") {
            self.global_error(format!(
                "scenario kind {} samples random times and needs a [sampler] section with a seed",
                kind.as_str()
            ));
        }

        let decay_lifetime = if kind == ScenarioKind::DecayLaw && self.require_section("decay", kind) {
            let v = self.req_f64("decay", "lifetime");
            self.positive("decay", "lifetime", v)
        } else {
            None
        };

        let classical = if matches!(kind, ScenarioKind::ClassicalPde | ScenarioKind::ClassicalMc)
            && self.require_section("classical", kind)
        {
            self.classical()
        } else {
            None
        };

        let wavepacket = if kind == ScenarioKind::Wavepacket && self.require_section("wavepacket", kind) {
            self.wavepacket()
        } else {
            None
        };
        if kind == ScenarioKind::Wavepacket {
            if let Some(m) = &model {
                if !matches!(m.family(), crate::time_model::TimeFamily::Gaussian { .. }) {
                    let line = self.line_of("model", "family").unwrap_or(0);
                    self.error(line, "wavepacket scenarios need family = gaussian".into());
                }
            }
        }

        let estimate = if kind == ScenarioKind::Estimate && self.require_section("estimate", kind) {
            self.estimate()
        } else {
            None
        };

        let lemma = if kind == ScenarioKind::LemmaFuzz && self.require_section("lemma", kind) {
            let instances = self.usize("lemma", "instances").unwrap_or(10_000);
            let max_dim = self.usize("lemma", "max_dim").unwrap_or(4);
            if !(1..=8).contains(&max_dim) {
                let line = self.line_of("lemma", "max_dim").unwrap_or(0);
                self.error(line, format!("`max_dim` must lie in 1..=8, found {max_dim}"));
            }
            Some(LemmaSpec { instances, max_dim })
        } else {
            None
        };

        if !self.errors.is_empty() {
            return None;
        }
        Some(ScenarioConfig {
            kind,
            name,
            model,
            model_description,
            system,
            time,
            method,
            sampler,
            units,
            units_name,
            output,
            decay_lifetime,
            classical,
            wavepacket,
            estimate,
            lemma,
            source: text.to_string(),
        })
    }

    fn increment(&mut self, key: &str, shape_key: &str, base: &Path, default: &str) -> Option<IncrementDensity> {
        let kind = self
            .choice(
                "model",
                key,
                &["exponential", "deterministic", "gamma", "gamma_unit_mean", "tabulated"],
            )
            .or_else(|| self.entry("model", key).is_none().then(|| default.to_string()))?;
        let line = self.line_of("model", key).unwrap_or(0);
        match kind.as_str() {
            "exponential" => Some(IncrementDensity::Exponential),
            "deterministic" => Some(IncrementDensity::Deterministic),
            "gamma" | "gamma_unit_mean" => {
                let shape = self.req_f64("model", shape_key);
                let shape = self.positive("model", shape_key, shape)?;
                let density = if kind == "gamma" {
                    IncrementDensity::gamma(shape)
                } else {
                    IncrementDensity::gamma_unit_mean(shape)
                };
                density.map_err(|e| self.error(line, e.to_string())).ok()
            }
            _ => {
                let path = self.req_string("model", "table")?;
                let table_line = self.line_of("model", "table").unwrap_or(line);
                let full = base.join(&path);
                let text = match std::fs::read_to_string(&full) {
                    Ok(t) => t,
                    Err(e) => {
                        self.error(table_line, format!("cannot read table {}: {e}", full.display()));
                        return None;
                    }
                };
                let mut xi = Vec::new();
                let mut p = Vec::new();
                for (i, row) in text.lines().enumerate() {
                    let row = row.split('#').next().unwrap_or("").trim();
                    if row.is_empty() {
                        continue;
                    }
                    let nums: Option<Vec<f64>> = row
                        .split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().ok())
                        .collect();
                    match nums.as_deref() {
                        Some([x, y]) => {
                            xi.push(*x);
                            p.push(*y);
                        }
                        _ => {
                            self.error(
                                table_line,
                                format!("{} row {}: expected two numbers `xi p`", full.display(), i + 1),
                            );
                            return None;
                        }
                    }
                }
                TabulatedDensity::new(xi, p)
                    .map(IncrementDensity::Tabulated)
                    .map_err(|e| self.error(table_line, e.to_string()))
                    .ok()
            }
        }
    }

    fn model(&mut self, base: &Path) -> Option<TimeModel> {
        let family = self.req_string("model", "family");
        let tau = self.req_f64("model", "tau");
        let tau = self.positive("model", "tau", tau);
        let family = family?;
        let line = self.line_of("model", "family").unwrap_or(0);
        let options = ["poisson", "modular", "gamma", "generalized_poisson", "gaussian", "modified_poisson"];
        if !options.contains(&family.as_str()) {
            let hint = nearest(&family, options).map(|o| format!("; did you mean `{o}`?")).unwrap_or_default();
            self.error(line, format!("unknown family `{family}`{hint}"));
            return None;
        }
        let built = match family.as_str() {
            "poisson" => TimeModel::poisson(tau?),
            "modular" => TimeModel::modular(tau?),
            "gamma" => {
                let shape = self.req_f64("model", "shape");
                let shape = self.positive("model", "shape", shape)?;
                TimeModel::gamma(tau?, shape)
            }
            "gaussian" => {
                let kappa = self.f64("model", "kappa").unwrap_or(2.0);
                let kappa = self.positive("model", "kappa", Some(kappa))?;
                TimeModel::gaussian(tau?, kappa)
            }
            "generalized_poisson" => {
                let inc = self.increment("increments", "shape", base, "exponential")?;
                TimeModel::generalized_poisson(tau?, inc)
            }
            _ => {
                let inc = self.increment("increments", "shape", base, "exponential")?;
                let initial = self.increment("initial", "initial_shape", base, "exponential")?;
                TimeModel::modified_poisson(tau?, inc, initial)
            }
        };
        built.map_err(|e| self.error(line, e.to_string())).ok()
    }

    fn system(&mut self, base: &Path, units: &UnitSystem) -> Option<SystemSpec> {
        let has_energies = self.entry("system", "energies").is_some();
        let has_matrix = self.entry("system", "hamiltonian").is_some();
        let section_line = self.section_line("system").unwrap_or(0);
        let hamiltonian = match (has_energies, has_matrix) {
            (true, true) => {
                let line = self.line_of("system", "hamiltonian").unwrap_or(section_line);
                self.error(line, "give either `energies` or `hamiltonian`, not both".into());
                None
            }
            (false, false) => {
                self.error(section_line, "[system] needs `energies` or `hamiltonian`".into());
                None
            }
            (true, false) => {
                let line = self.line_of("system", "energies").unwrap_or(section_line);
                self.f64_list("system", "energies")
                    .and_then(|e| Hamiltonian::from_energies(&e, units).map_err(|err| self.error(line, err.to_string())).ok())
            }
            (false, true) => self.matrix_file(base, units),
        };

        let dim = hamiltonian.as_ref().map(|h| h.dim());
        let state = self
            .choice(
                "system",
                "initial_state",
                &["superposition", "ground", "maximally_mixed", "diagonal", "pure"],
            )
            .unwrap_or_else(|| "superposition".into());
        let state_line = self.line_of("system", "initial_state").unwrap_or(section_line);
        let initial = dim.and_then(|d| {
            let built = match state.as_str() {
                "superposition" => DensityMatrix::uniform_superposition(d),
                "maximally_mixed" => DensityMatrix::maximally_mixed(d),
                "ground" => {
                    let mut p = vec![0.0; d];
                    p[0] = 1.0;
                    DensityMatrix::from_diagonal(&p)
                }
                "diagonal" => {
                    let Some(p) = self.f64_list("system", "populations") else {
                        if self.entry("system", "populations").is_none() {
                            self.missing("system", "populations");
                        }
                        return None;
                    };
                    if p.len() != d {
                        let line = self.line_of("system", "populations").unwrap_or(state_line);
                        self.error(line, format!("`populations` has {} entries for dimension {d}", p.len()));
                        return None;
                    }
                    DensityMatrix::from_diagonal(&p)
                }
                _ => {
                    let Some(entry) = self.entry("system", "amplitudes") else {
                        self.missing("system", "amplitudes");
                        return None;
                    };
                    let Some(amps) = entry.value.split(',').map(|s| parse_complex(s.trim())).collect::<Option<Vec<_>>>()
                    else {
                        self.error(entry.line, format!("`amplitudes` expects entries like `0.6` or `0.6:-0.8`, found `{}`", entry.value));
                        return None;
                    };
                    if amps.len() != d {
                        self.error(entry.line, format!("`amplitudes` has {} entries for dimension {d}", amps.len()));
                        return None;
                    }
                    DensityMatrix::pure(&amps)
                }
            };
            built.map_err(|e| self.error(state_line, e.to_string())).ok()
        });

        let elements = match (self.entry("system", "elements"), dim) {
            (Some(entry), Some(d)) => {
                let mut pairs = Vec::new();
                for item in entry.value.split(',') {
                    let parsed = item
                        .trim()
                        .split_once('-')
                        .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)));
                    match parsed {
                        Some((k, l)) if k < d && l < d => pairs.push((k, l)),
                        _ => {
                            self.error(
                                entry.line,
                                format!("`elements` entry `{}` is not a pair `k-l` with indices below {d}", item.trim()),
                            );
                        }
                    }
                }
                pairs
            }
            (None, Some(d)) => (0..d).flat_map(|k| ((k + 1)..d).map(move |l| (k, l))).collect(),
            _ => Vec::new(),
        };

        Some(SystemSpec {
            hamiltonian: hamiltonian?,
            initial: initial?,
            elements,
        })
    }

    fn matrix_file(&mut self, base: &Path, units: &UnitSystem) -> Option<Hamiltonian> {
        let entry = self.entry("system", "hamiltonian")?;
        let full = base.join(&entry.value);
        let text = match std::fs::read_to_string(&full) {
            Ok(t) => t,
            Err(e) => {
                self.error(entry.line, format!("cannot read Hamiltonian {}: {e}", full.display()));
                return None;
            }
        };
        let mut rows: Vec<Vec<Complex64>> = Vec::new();
        for (i, row) in text.lines().enumerate() {
            let row = row.split('#').next().unwrap_or("").trim();
            if row.is_empty() {
                continue;
            }
            match row.split_whitespace().map(parse_complex).collect::<Option<Vec<_>>>() {
                Some(r) => rows.push(r),
                None => {
                    self.error(
                        entry.line,
                        format!("{} row {}: entries must look like `1.5` or `0.2:-0.3`", full.display(), i + 1),
                    );
                    return None;
                }
            }
        }
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            self.error(entry.line, format!("{} is not a square matrix", full.display()));
            return None;
        }
        let m = CMatrix::from_fn(n, n, |r, c| rows[r][c]);
        Hamiltonian::new(m, units).map_err(|e| self.error(entry.line, e.to_string())).ok()
    }

    fn time(&mut self) -> Option<TimeGrid> {
        let t_start = self.f64("time", "t_start").unwrap_or(0.0);
        let t_end = self.req_f64("time", "t_end");
        let n_points = self.usize("time", "n_points").unwrap_or(101);
        let dt = self.f64("time", "dt");
        let dt = if dt.is_some() { self.positive("time", "dt", dt) } else { None };
        let line = self.line_of("time", "t_end").unwrap_or(0);
        if t_start < 0.0 {
            let l = self.line_of("time", "t_start").unwrap_or(line);
            self.error(l, format!("`t_start` must be ≥ 0, found {t_start}"));
        }
        if n_points == 0 {
            let l = self.line_of("time", "n_points").unwrap_or(line);
            self.error(l, "`n_points` must be at least 1".into());
        }
        let t_end = t_end?;
        if n_points > 1 && t_end <= t_start {
            self.error(line, format!("time grid must be increasing: t_end = {t_end} ≤ t_start = {t_start}"));
            return None;
        }
        if t_end < t_start {
            self.error(line, format!("t_end = {t_end} < t_start = {t_start}"));
            return None;
        }
        Some(TimeGrid {
            t_start,
            t_end,
            n_points,
            dt,
        })
    }

    fn classical(&mut self) -> Option<ClassicalSpec> {
        let x0 = self.f64("classical", "x0").unwrap_or(0.0);
        let v = self.req_f64("classical", "v");
        let sigma0 = self.req_f64("classical", "sigma0");
        let sigma0 = self.positive("classical", "sigma0", sigma0);
        let x_min = self.req_f64("classical", "x_min");
        let x_max = self.req_f64("classical", "x_max");
        let n_cells = self.usize("classical", "n_cells").unwrap_or(1000);
        let dt = self.f64("classical", "dt");
        let bin_factor = self.usize("classical", "bin_factor").unwrap_or(10);
        let line = self.section_line("classical").unwrap_or(0);
        if n_cells < crate::classical::MIN_CELLS {
            let l = self.line_of("classical", "n_cells").unwrap_or(line);
            self.error(l, format!("`n_cells` must be at least {}", crate::classical::MIN_CELLS));
        }
        if bin_factor == 0 || n_cells % bin_factor != 0 {
            let l = self.line_of("classical", "bin_factor").unwrap_or(line);
            self.error(l, format!("`bin_factor` must divide n_cells = {n_cells}"));
        }
        let (x_min, x_max) = (x_min?, x_max?);
        if x_max <= x_min {
            let l = self.line_of("classical", "x_max").unwrap_or(line);
            self.error(l, format!("`x_max` = {x_max} must exceed `x_min` = {x_min}"));
        }
        Some(ClassicalSpec {
            x0,
            v: v?,
            sigma0: sigma0?,
            x_min,
            x_max,
            n_cells,
            dt,
            bin_factor,
        })
    }

    fn wavepacket(&mut self) -> Option<WavepacketSpec> {
        let m = self.req_f64("wavepacket", "m");
        let m = self.positive("wavepacket", "m", m);
        let delta_x = self.req_f64("wavepacket", "delta_x");
        let delta_x = self.positive("wavepacket", "delta_x", delta_x);
        let x0 = self.f64("wavepacket", "x0").unwrap_or(0.0);
        let x_min = self.req_f64("wavepacket", "x_min");
        let x_max = self.req_f64("wavepacket", "x_max");
        let n_x = self.usize("wavepacket", "n_x").unwrap_or(201);
        let line = self.section_line("wavepacket").unwrap_or(0);
        let (x_min, x_max) = (x_min?, x_max?);
        if x_max <= x_min || n_x < 2 {
            self.error(line, "need x_max > x_min and n_x ≥ 2".into());
        }
        Some(WavepacketSpec {
            m: m?,
            delta_x: delta_x?,
            x0,
            x_min,
            x_max,
            n_x,
        })
    }

    fn estimate(&mut self) -> Option<EstimateSpec> {
        let options = [
            "decoherence_time",
            "flow_stddev",
            "beam_threshold",
            "oscillation_bounds",
            "energy_split",
            "lifetime_bound",
            "kaon",
            "neutrino",
        ];
        if self.entry("estimate", "calculator").is_none() {
            self.missing("estimate", "calculator");
            return None;
        }
        let calc = self.choice("estimate", "calculator", &options)?;
        let req = |r: &mut Self, key: &str| r.req_f64("estimate", key);
        Some(match calc.as_str() {
            "decoherence_time" => EstimateSpec::DecoherenceTime {
                tau: req(self, "tau")?,
                delta_e: req(self, "delta_e")?,
            },
            "flow_stddev" => EstimateSpec::FlowStddev {
                t: req(self, "t")?,
                tau: req(self, "tau")?,
            },
            "beam_threshold" => EstimateSpec::BeamThreshold {
                l: req(self, "l")?,
                tau0: req(self, "tau0")?,
                gamma: req(self, "gamma")?,
            },
            "oscillation_bounds" => EstimateSpec::OscillationBounds {
                t_os: req(self, "t_os")?,
                t_f: req(self, "t_f")?,
            },
            "energy_split" => {
                let regime = match self
                    .choice("estimate", "regime", &["non_relativistic", "ultra_relativistic"])
                    .as_deref()
                {
                    Some("ultra_relativistic") => Regime::UltraRelativistic,
                    _ => Regime::NonRelativistic,
                };
                let energy = if regime == Regime::UltraRelativistic {
                    req(self, "energy")?
                } else {
                    self.f64("estimate", "energy").unwrap_or(0.0)
                };
                EstimateSpec::EnergySplit {
                    delta_m: req(self, "delta_m")?,
                    energy,
                    regime,
                }
            }
            "lifetime_bound" => EstimateSpec::LifetimeBound {
                lifetime: req(self, "lifetime")?,
            },
            "kaon" => EstimateSpec::Kaon,
            _ => EstimateSpec::Neutrino,
        })
    }
}

/// `1.5` or `1.5:-0.3` (real:imaginary).
fn parse_complex(s: &str) -> Option<Complex64> {
    let (re, im) = match s.split_once(':') {
        Some((a, b)) => (a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?),
        None => (s.trim().parse::<f64>().ok()?, 0.0),
    };
    (re.is_finite() && im.is_finite()).then(|| Complex64::new(re, im))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[scenario]
kind = quantum_evolve

[model]
family = gaussian
tau = 0.1

[system]
energies = 0, 1

[time]
t_end = 1
";

    #[test]
    fn minimal_quantum_config() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.kind, ScenarioKind::QuantumEvolve);
        let sys = cfg.system.unwrap();
        assert_eq!(sys.hamiltonian.dim(), 2);
        assert_eq!(sys.elements, vec![(0, 1)]);
        assert_eq!(cfg.time.unwrap().n_points, 101);
        assert_eq!(cfg.method, EvolutionMethod::Analytic);
        assert_eq!(cfg.model.unwrap().second_moment_coefficient(), 2.0);
    }

    #[test]
    fn misspelled_key_names_line_and_suggestion() {
        let text = MINIMAL.replace("tau = 0.1", "taus=0.1");
        let errs = parse_config(&text).unwrap_err();
        let first = errs.0.iter().find(|e| e.message.contains("`taus`")).unwrap();
        assert_eq!(first.line, Some(6));
        assert!(first.message.contains("`taus`") && first.message.contains("did you mean `tau`"), "{first}");
        // the now-missing tau is reported too
        assert!(errs.0.iter().any(|e| e.message.contains("missing required key `tau`")));
    }

    #[test]
    fn decreasing_time_grid_rejected() {
        let text = MINIMAL.replace("t_end = 1", "t_start = 2\nt_end = 1");
        let errs = parse_config(&text).unwrap_err();
        assert!(errs.0.iter().any(|e| e.message.contains("increasing")), "{errs}");
    }

    #[test]
    fn all_errors_are_collected() {
        let text = "\
[scenario]
kind = quantum_evolve
[model]
family = poison
tau = -1
[system]
energies = 0, x
[time]
t_end = abc
[bogus]
";
        let errs = parse_config(text).unwrap_err();
        let lines: Vec<Option<usize>> = errs.0.iter().map(|e| e.line).collect();
        assert!(errs.0.len() >= 5, "{errs}");
        for l in [4, 5, 7, 9, 10] {
            assert!(lines.contains(&Some(l)), "line {l} missing in {errs}");
        }
        assert!(errs.to_string().contains("did you mean `poisson`"));
    }

    #[test]
    fn sampling_kinds_need_a_seed() {
        let text = MINIMAL.replace("quantum_evolve", "quantum_oracle_compare");
        let errs = parse_config(&text).unwrap_err();
        assert!(errs.0.iter().any(|e| e.message.contains("[sampler]")));
        let with_section = format!("{text}\n[sampler]\nn_samples = 2000\n");
        let errs = parse_config(&with_section).unwrap_err();
        assert!(errs.0.iter().any(|e| e.message.contains("`seed`")));
        let ok = format!("{text}\n[sampler]\nseed = 4\nn_samples = 2000\n");
        assert_eq!(parse_config(&ok).unwrap().sampler, Some(SamplerConfig::new(4, 2000)));
    }

    #[test]
    fn hamiltonian_and_table_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("h.txt"), "0 1:0.5\n1:-0.5 2\n").unwrap();
        let mut table = String::new();
        for i in 0..=20 {
            let x = i as f64 * 0.1;
            table.push_str(&format!("{x} {}\n", x / 2.0));
        }
        std::fs::write(dir.path().join("p.txt"), table).unwrap();
        let text = "\
[scenario]
kind = quantum_evolve
[model]
family = generalized_poisson
increments = tabulated
table = p.txt
tau = 0.2
[system]
hamiltonian = h.txt
initial_state = pure
amplitudes = 0.6, 0:0.8
elements = 0-1, 1-0
[time]
t_end = 2
n_points = 5
";
        let cfg = parse_config_in(text, dir.path()).unwrap();
        let sys = cfg.system.unwrap();
        assert_eq!(sys.hamiltonian.matrix()[(0, 1)], Complex64::new(1.0, 0.5));
        assert_eq!(sys.elements, vec![(0, 1), (1, 0)]);
        assert!((sys.initial.get(0, 1) - Complex64::new(0.0, -0.48)).norm() < 1e-15);
        assert!((cfg.model.unwrap().clock_rate() - 4.0 / 3.0).abs() < 1e-12);

        let missing = text.replace("p.txt", "nope.txt");
        let errs = parse_config_in(&missing, dir.path()).unwrap_err();
        assert!(errs.0[0].message.contains("cannot read table"));
    }

    #[test]
    fn time_points_are_inclusive() {
        let g = TimeGrid {
            t_start: 0.0,
            t_end: 1.0,
            n_points: 3,
            dt: None,
        };
        assert_eq!(g.points(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn estimate_config() {
        let text = "\
[scenario]
kind = estimate
[units]
system = cgs
[estimate]
calculator = decoherence_time
tau = 1e-30
delta_e = 1e-6
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.units_name, "cgs");
        assert_eq!(cfg.estimate, Some(EstimateSpec::DecoherenceTime { tau: 1e-30, delta_e: 1e-6 }));
    }
}
