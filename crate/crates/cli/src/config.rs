//! Run configuration: TOML with unit-suffixed keys, normalized to canonical units.
//!
//! Lengths are `_mm`, angles `_rad` (or `_deg`), temperatures `_K` (or `_C`),
//! pressures `_torr`, times `_s`, frequencies `_hz`, wavelengths `_nm` and
//! diffusion constants `_cm2_s`. Normalization rewrites every key to its
//! canonical suffix, so serializing a normalized config and reading it back
//! gives the same config.

use std::fmt;
use std::path::Path;

use multipass_core::geometry::{BeamSpec, CylindricalCellConfig, RecirculatingCellConfig};
use multipass_core::noise::{BeamMode, Evolution, GasSpec, Longitudinal, SpinDynamics};
use multipass_core::raytrace::MirrorAssignment;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Invalid configuration; maps to exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Length,
    Angle,
    Temperature,
    Pressure,
    Time,
    Frequency,
    Wavelength,
    Diffusion,
}

impl Unit {
    fn canonical(self) -> &'static str {
        match self {
            Unit::Length => "mm",
            Unit::Angle => "rad",
            Unit::Temperature => "K",
            Unit::Pressure => "torr",
            Unit::Time => "s",
            Unit::Frequency => "hz",
            Unit::Wavelength => "nm",
            Unit::Diffusion => "cm2_s",
        }
    }

    fn accepted(self) -> &'static [&'static str] {
        match self {
            Unit::Angle => &["rad", "deg"],
            Unit::Temperature => &["K", "C"],
            _ => std::slice::from_ref(match self {
                Unit::Length => &"mm",
                Unit::Pressure => &"torr",
                Unit::Time => &"s",
                Unit::Frequency => &"hz",
                Unit::Wavelength => &"nm",
                _ => &"cm2_s",
            }),
        }
    }

    fn convert(self, suffix: &str, v: f64) -> f64 {
        match (self, suffix) {
            (Unit::Angle, "deg") => v.to_radians(),
            (Unit::Temperature, "C") => v + 273.15,
            _ => v,
        }
    }
}

type Schema = &'static [(&'static str, Option<Unit>)];

const ROOT: Schema = &[("seed", None)];
const CELL: Schema = &[
    ("kind", None),
    ("f2", Some(Unit::Length)),
    ("f", Some(Unit::Length)),
    ("d", Some(Unit::Length)),
    ("theta_x", Some(Unit::Angle)),
    ("theta_x_prime", Some(Unit::Angle)),
    ("twist", Some(Unit::Angle)),
    ("x0", Some(Unit::Length)),
    ("y0", Some(Unit::Length)),
    ("x0_slope", Some(Unit::Angle)),
    ("y0_slope", Some(Unit::Angle)),
    ("tilt_sequence", Some(Unit::Angle)),
    ("round_trips", None),
    ("pass_index", None),
];
const BEAM: Schema = &[
    ("wavelength", Some(Unit::Wavelength)),
    ("w0", Some(Unit::Length)),
    ("w_eta0", Some(Unit::Length)),
    ("z_from_waist", Some(Unit::Length)),
];
const GAS: Schema = &[
    ("temperature", Some(Unit::Temperature)),
    ("pressure", Some(Unit::Pressure)),
    ("d0", Some(Unit::Diffusion)),
    ("t0", Some(Unit::Temperature)),
    ("p0", Some(Unit::Pressure)),
    ("diffusion", Some(Unit::Diffusion)),
];
const DYNAMICS: Schema = &[("larmor", Some(Unit::Frequency)), ("t2", Some(Unit::Time))];
const NOISE: Schema = &[
    ("mode", None),
    ("evolution", None),
    ("power_normalized", None),
    ("longitudinal", None),
    ("tau_min", Some(Unit::Time)),
    ("tau_max", Some(Unit::Time)),
    ("tau_points", None),
    ("tau_norm", Some(Unit::Time)),
    ("psd_tau_max", Some(Unit::Time)),
    ("f_min", Some(Unit::Frequency)),
    ("f_max", Some(Unit::Frequency)),
    ("f_points", None),
    ("barriers", Some(Unit::Length)),
    ("block_focus", Some(Unit::Length)),
    ("max_radius_fraction", None),
    ("oracle", None),
    ("mc_samples", None),
    ("rel_tol", None),
    ("abs_tol", None),
];
const TRACE: Schema = &[("rays", None), ("assignment", None), ("aperture", Some(Unit::Length)), ("max_hits", None)];
const SWEEP: Schema = &[
    ("d_min", Some(Unit::Length)),
    ("d_max", Some(Unit::Length)),
    ("d_points", None),
    ("y0_slope_min", Some(Unit::Angle)),
    ("y0_slope_max", Some(Unit::Angle)),
    ("y0_slope_points", None),
];
const OUTPUT: Schema = &[("dir", None), ("formats", None), ("angles", None), ("profile_points", None)];

const SECTIONS: &[(&str, Schema)] = &[
    ("cell", CELL),
    ("beam", BEAM),
    ("gas", GAS),
    ("dynamics", DYNAMICS),
    ("noise", NOISE),
    ("trace", TRACE),
    ("sweep", SWEEP),
    ("output", OUTPUT),
];

fn convert_value(v: &Value, unit: Unit, suffix: &str, path: &str) -> Result<Value, ConfigError> {
    match v {
        Value::Float(x) => Ok(Value::Float(unit.convert(suffix, *x))),
        Value::Integer(i) => Ok(Value::Float(unit.convert(suffix, *i as f64))),
        Value::Array(items) => {
            items.iter().map(|x| convert_value(x, unit, suffix, path)).collect::<Result<Vec<_>, _>>().map(Value::Array)
        }
        other => err(format!("`{path}` must be a number, got {}", other.type_str())),
    }
}

fn normalize_section(name: &str, table: &Table, schema: Schema) -> Result<Table, ConfigError> {
    let mut out = Table::new();
    let path = |k: &str| if name.is_empty() { k.to_string() } else { format!("{name}.{k}") };
    for (key, value) in table {
        if name.is_empty() && SECTIONS.iter().any(|(s, _)| s == key) {
            continue;
        }
        let mut resolved = None;
        for &(base, unit) in schema {
            match unit {
                None if key == base => resolved = Some((base.to_string(), value.clone())),
                Some(u) if key == base => {
                    let hint: Vec<String> = u.accepted().iter().map(|s| format!("{base}_{s}")).collect();
                    return err(format!("`{}` needs a unit suffix: use {}", path(key), hint.join(" or ")));
                }
                Some(u) => {
                    let Some(suffix) = key.strip_prefix(base).and_then(|r| r.strip_prefix('_')) else { continue };
                    if u.accepted().contains(&suffix) {
                        let canonical = format!("{base}_{}", u.canonical());
                        resolved = Some((canonical, convert_value(value, u, suffix, &path(key))?));
                    }
                }
                None => {}
            }
            if resolved.is_some() {
                break;
            }
        }
        let Some((canonical, v)) = resolved else {
            return err(format!("unknown key `{}`", path(key)));
        };
        if out.insert(canonical.clone(), v).is_some() {
            return err(format!("`{}` is given more than once (possibly in different units)", path(&canonical)));
        }
    }
    Ok(out)
}

/// Rewrites a raw table to canonical keys and units.
pub fn normalize_table(raw: &Table) -> Result<Table, ConfigError> {
    for (key, value) in raw {
        if value.is_table() && !SECTIONS.iter().any(|(s, _)| s == key) {
            return err(format!("unknown section `[{key}]`"));
        }
    }
    let mut out = normalize_section("", raw, ROOT)?;
    for &(name, schema) in SECTIONS {
        match raw.get(name) {
            None => {}
            Some(Value::Table(t)) => {
                out.insert(name.to_string(), Value::Table(normalize_section(name, t, schema)?));
            }
            Some(_) => return err(format!("`{name}` must be a section")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Recirculating,
    Cylindrical,
    SinglePass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PassIndex {
    Index(usize),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub kind: CellKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f2_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_x_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_x_prime_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twist_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_slope_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0_slope_rad: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt_sequence_rad: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_trips: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_index: Option<PassIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamSection {
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    pub w0_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_eta0_mm: Option<f64>,
    #[serde(default)]
    pub z_from_waist_mm: f64,
}

fn default_wavelength() -> f64 {
    780.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSection {
    #[serde(rename = "temperature_K")]
    pub temperature_k: f64,
    pub pressure_torr: f64,
    pub d0_cm2_s: f64,
    #[serde(rename = "t0_K")]
    pub t0_k: f64,
    pub p0_torr: f64,
    /// Overrides the scaling law when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion_cm2_s: Option<f64>,
}

impl Default for GasSection {
    fn default() -> Self {
        let g = GasSpec::rb_n2(393.15, 70.0);
        GasSection {
            temperature_k: g.temperature_k,
            pressure_torr: g.pressure_torr,
            d0_cm2_s: g.d0_cm2_s,
            t0_k: g.t0_k,
            p0_torr: g.p0_torr,
            diffusion_cm2_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsSection {
    pub larmor_hz: f64,
    pub t2_s: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection { larmor_hz: 1000.0, t2_s: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Defaults to astigmatic for cylindrical cells and stigmatic otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<BeamMode>,
    pub evolution: Evolution,
    /// Defaults to on for piecewise evolution and off for paper-literal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_normalized: Option<bool>,
    pub longitudinal: Longitudinal,
    pub tau_min_s: f64,
    pub tau_max_s: f64,
    pub tau_points: usize,
    pub tau_norm_s: f64,
    pub psd_tau_max_s: f64,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub f_points: usize,
    pub barriers_mm: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_focus_mm: Option<f64>,
    /// Largest allowed beam radius as a fraction of `d`; 0 disables the check.
    pub max_radius_fraction: f64,
    pub oracle: bool,
    pub mc_samples: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            mode: None,
            evolution: Evolution::Piecewise,
            power_normalized: None,
            longitudinal: Longitudinal::Local,
            tau_min_s: 1e-6,
            tau_max_s: 0.02,
            tau_points: 200,
            tau_norm_s: multipass_core::noise::TAU_NORM_S,
            psd_tau_max_s: 0.1,
            f_min_hz: 0.0,
            f_max_hz: 5000.0,
            f_points: 2001,
            barriers_mm: Vec::new(),
            block_focus_mm: None,
            max_radius_fraction: multipass_core::noise::MAX_RADIUS_FRACTION,
            oracle: false,
            mc_samples: 1_000_000,
            rel_tol: 1e-6,
            abs_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub rays: usize,
    pub assignment: MirrorAssignment,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aperture_mm: Option<f64>,
    pub max_hits: usize,
}

impl Default for TraceSection {
    fn default() -> Self {
        TraceSection { rays: 1000, assignment: MirrorAssignment::ByReflectionIndex, aperture_mm: None, max_hits: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub d_min_mm: f64,
    pub d_max_mm: f64,
    pub d_points: usize,
    pub y0_slope_min_rad: f64,
    pub y0_slope_max_rad: f64,
    pub y0_slope_points: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleEcho {
    #[default]
    Rad,
    Deg,
}

impl AngleEcho {
    pub fn suffix(self) -> &'static str {
        match self {
            AngleEcho::Rad => "rad",
            AngleEcho::Deg => "deg",
        }
    }

    pub fn value(self, rad: f64) -> f64 {
        match self {
            AngleEcho::Rad => rad,
            AngleEcho::Deg => rad.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub formats: Vec<String>,
    pub angles: AngleEcho,
    /// Samples per round trip for the beam-radius profile written by `spots`; 0 disables it.
    pub profile_points: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, formats: vec!["csv".into(), "json".into()], angles: AngleEcho::Rad, profile_points: 0 }
    }
}

impl OutputSection {
    pub fn csv(&self) -> bool {
        self.formats.iter().any(|f| f == "csv")
    }

    pub fn json(&self) -> bool {
        self.formats.iter().any(|f| f == "json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub cell: CellSection,
    pub beam: BeamSection,
    #[serde(default)]
    pub gas: GasSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub trace: TraceSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses TOML text with unit-suffixed keys.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let raw: Table = text.parse().map_err(|e| ConfigError(format!("invalid TOML: {e}")))?;
        let table = normalize_table(&raw)?;
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e| ConfigError(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML; reading it back gives an identical config.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Reads a TOML config, or the `config` object of a JSON run manifest.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("invalid JSON in {}: {e}", path.display())))?;
            let Some(cfg) = v.get("config") else {
                return err(format!("{} is not a run manifest (no `config` object)", path.display()));
            };
            let cfg: RunConfig =
                serde_json::from_value(cfg.clone()).map_err(|e| ConfigError(format!("invalid manifest config: {e}")))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let need = |v: Option<f64>, key: &str| -> Result<f64, ConfigError> {
            v.ok_or_else(|| ConfigError(format!("`cell.{key}` is required for kind = {:?}", self.cell.kind)))
        };
        let c = &self.cell;
        need(c.d_mm, "d_mm")?;
        match c.kind {
            CellKind::Recirculating => {
                need(c.f2_mm, "f2_mm")?;
                need(c.x0_mm, "x0_mm")?;
            }
            CellKind::Cylindrical => {
                need(c.f_mm, "f_mm")?;
                need(c.twist_rad, "twist_rad")?;
                if c.round_trips.is_none() {
                    return err("`cell.round_trips` is required for kind = cylindrical");
                }
            }
            CellKind::SinglePass => {
                need(c.f2_mm, "f2_mm")?;
            }
        }
        if let Some(PassIndex::Named(s)) = &c.pass_index {
            if s != "tightest" {
                return err(format!("`cell.pass_index` must be an integer or \"tightest\", got {s:?}"));
            }
        }
        let n = &self.noise;
        if !(n.tau_min_s > 0.0 && n.tau_max_s > n.tau_min_s && n.tau_points >= 2) {
            return err("`noise.tau_min_s`, `noise.tau_max_s`, `noise.tau_points` must give a positive increasing grid");
        }
        if !(n.psd_tau_max_s > n.tau_min_s) {
            return err("`noise.psd_tau_max_s` must exceed `noise.tau_min_s`");
        }
        if !(n.f_min_hz >= 0.0 && n.f_max_hz > n.f_min_hz && n.f_points >= 2) {
            return err("`noise.f_min_hz`, `noise.f_max_hz`, `noise.f_points` must give an increasing grid");
        }
        if !(n.tau_norm_s >= 0.0) {
            return err("`noise.tau_norm_s` must be non-negative");
        }
        if !(n.rel_tol > 0.0 && n.abs_tol >= 0.0) {
            return err("`noise.rel_tol` must be positive and `noise.abs_tol` non-negative");
        }
        for b in &n.barriers_mm {
            if !(b[0] < b[1]) {
                return err(format!("`noise.barriers_mm` interval [{}, {}] is inverted or empty", b[0], b[1]));
            }
        }
        if n.block_focus_mm.is_some_and(|w| !(w >= 0.0)) {
            return err("`noise.block_focus_mm` must be non-negative");
        }
        if self.trace.rays == 0 {
            return err("`trace.rays` must be at least 1");
        }
        if let Some(s) = &self.sweep {
            if s.d_min_mm > s.d_max_mm {
                return err("`sweep.d_min_mm` must not exceed `sweep.d_max_mm`");
            }
            if s.y0_slope_min_rad > s.y0_slope_max_rad {
                return err("`sweep.y0_slope_min` must not exceed `sweep.y0_slope_max`");
            }
            if s.d_points == 0 || s.y0_slope_points == 0 {
                return err("`sweep.d_points` and `sweep.y0_slope_points` must be at least 1");
            }
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return err(format!("`output.formats` entry {f:?} is not csv or json"));
            }
        }
        Ok(())
    }

    pub fn beam_spec(&self) -> BeamSpec {
        BeamSpec {
            wavelength_mm: self.beam.wavelength_nm * 1e-6,
            w0_mm: self.beam.w0_mm,
            z_from_waist_mm: self.beam.z_from_waist_mm,
        }
    }

    /// Recirculating geometry; single-pass cells use the same mirrors with zero tilt.
    pub fn recirculating(&self) -> Result<RecirculatingCellConfig, ConfigError> {
        let c = &self.cell;
        if c.kind == CellKind::Cylindrical {
            return err("this command needs a recirculating or single-pass cell");
        }
        let theta_x = c.theta_x_rad.unwrap_or(0.0);
        Ok(RecirculatingCellConfig {
            f2_mm: c.f2_mm.unwrap_or_default(),
            d_mm: c.d_mm.unwrap_or_default(),
            theta_x,
            theta_x_prime: c.theta_x_prime_rad.unwrap_or(-theta_x),
            x0_mm: c.x0_mm.unwrap_or(1.0),
            y0_mm: c.y0_mm.unwrap_or(0.0),
            x0_slope: c.x0_slope_rad.unwrap_or(0.0),
            y0_slope: c.y0_slope_rad.unwrap_or(0.0),
            beam: self.beam_spec(),
            tilt_sequence: c.tilt_sequence_rad.clone(),
        })
    }

    pub fn cylindrical(&self) -> Result<CylindricalCellConfig, ConfigError> {
        let c = &self.cell;
        if c.kind != CellKind::Cylindrical {
            return err("this command needs a cylindrical cell");
        }
        Ok(CylindricalCellConfig {
            f_mm: c.f_mm.unwrap_or_default(),
            twist: c.twist_rad.unwrap_or_default(),
            d_mm: c.d_mm.unwrap_or_default(),
            round_trips: c.round_trips.unwrap_or_default(),
            w_xi0_mm: self.beam.w0_mm,
            w_eta0_mm: self.beam.w_eta0_mm.unwrap_or(self.beam.w0_mm),
            x0_mm: c.x0_mm.unwrap_or(0.0),
            y0_mm: c.y0_mm.unwrap_or(0.0),
            x0_slope: c.x0_slope_rad.unwrap_or(0.0),
            y0_slope: c.y0_slope_rad.unwrap_or(0.0),
            beam: self.beam_spec(),
        })
    }

    pub fn gas_spec(&self) -> GasSpec {
        let g = &self.gas;
        GasSpec { temperature_k: g.temperature_k, pressure_torr: g.pressure_torr, d0_cm2_s: g.d0_cm2_s, t0_k: g.t0_k, p0_torr: g.p0_torr }
    }

    pub fn dynamics(&self) -> SpinDynamics {
        SpinDynamics { larmor_hz: self.dynamics.larmor_hz, t2_s: self.dynamics.t2_s }
    }

    pub fn beam_mode(&self) -> BeamMode {
        self.noise.mode.unwrap_or(match self.cell.kind {
            CellKind::Cylindrical => BeamMode::Astigmatic,
            _ => BeamMode::Stigmatic,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3
[cell]
kind = "recirculating"
f2_mm = 1000
d_mm = 29.8
theta_x_deg = 0.04
x0_mm = 8.11
x0_slope_deg = -0.26
y0_slope_deg = 2.21
[beam]
w0_mm = 1
"#;

    #[test]
    fn degrees_become_radians() {
        let cfg = RunConfig::from_toml_str(BASIC).unwrap();
        assert_eq!(cfg.cell.theta_x_rad, Some(0.04f64.to_radians()));
        assert_eq!(cfg.cell.f2_mm, Some(1000.0));
        let r = cfg.recirculating().unwrap();
        assert_eq!(r.theta_x_prime, -r.theta_x);
        assert_eq!(r.beam.wavelength_mm, 780e-6);
    }

    #[test]
    fn missing_suffix_names_the_key() {
        let e = RunConfig::from_toml_str(&BASIC.replace("d_mm = 29.8", "d = 29.8")).unwrap_err();
        assert!(e.0.contains("`cell.d`") && e.0.contains("d_mm"), "{e}");
        let e = RunConfig::from_toml_str(&BASIC.replace("y0_slope_deg", "y0_slope_mm")).unwrap_err();
        assert!(e.0.contains("cell.y0_slope_mm"), "{e}");
        let e = RunConfig::from_toml_str(&format!("{BASIC}\n[gas]\ntemperature = 300\n")).unwrap_err();
        assert!(e.0.contains("gas.temperature") && e.0.contains("temperature_K"), "{e}");
    }

    #[test]
    fn duplicate_units_are_rejected() {
        let e = RunConfig::from_toml_str(&BASIC.replace("theta_x_deg = 0.04", "theta_x_deg = 0.04\ntheta_x_rad = 0.001"))
            .unwrap_err();
        assert!(e.0.contains("more than once"), "{e}");
    }

    #[test]
    fn celsius_and_round_trip() {
        let text = format!("{BASIC}\n[gas]\ntemperature_C = 120\npressure_torr = 70\n");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert!((cfg.gas.temperature_k - 393.15).abs() < 1e-12);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn kind_specific_requirements() {
        let e = RunConfig::from_toml_str(&BASIC.replace("f2_mm = 1000\n", "")).unwrap_err();
        assert!(e.0.contains("cell.f2_mm"), "{e}");
        let e = RunConfig::from_toml_str(&BASIC.replace("\"recirculating\"", "\"cylindrical\"")).unwrap_err();
        assert!(e.0.contains("cell.f_mm"), "{e}");
        let e = RunConfig::from_toml_str(&format!("{BASIC}\n[bogus]\nx = 1\n")).unwrap_err();
        assert!(e.0.contains("[bogus]"), "{e}");
    }
}
