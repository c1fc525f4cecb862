//! Line-based `key = value` run configuration.
//!
//! UTF-8 text, `#` starts a comment, keys are dotted lowercase paths.
//! Frequencies carry an explicit unit suffix: `_ghz` keys are ordinary
//! frequencies multiplied by 2 pi on the way in, `_radns` keys are angular
//! rates taken verbatim; giving both spellings of one quantity is an error.
//! Unknown keys are rejected with their line number so typos die loudly
//! instead of silently running defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{coherent_spinor, FieldError, QuadratureGrid, SpinorField};
use crate::gauge::LoopSpec;
use crate::model::{angular_from_ghz, ModelError, ModelKind, ModelSpec};
use crate::C64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { key: String, line: usize },
    #[error("line {line}: bad value for `{key}`: {why}")]
    BadValue { key: String, line: usize, why: String },
    #[error("both `{ghz}` and `{radns}` are set; pick one unit")]
    UnitConflict { ghz: &'static str, radns: &'static str },
    #[error("missing required key `{key}`")]
    Missing { key: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Every key the schema knows. A config may set any subset; each command
/// demands the keys it needs.
const KNOWN_KEYS: &[&str] = &[
    "model.kind",
    "model.omega_ghz",
    "model.omega_radns",
    "model.splitting_ghz",
    "model.splitting_radns",
    "model.e1_ghz",
    "model.e1_radns",
    "model.e2_ghz",
    "model.e2_radns",
    "model.e3_ghz",
    "model.e3_radns",
    "model.g_ghz",
    "model.g_radns",
    "model.kappa_ghz",
    "model.kappa_radns",
    "model.gamma_ghz",
    "model.gamma_radns",
    "grid.n",
    "grid.l1",
    "grid.l2",
    "time.dt_ns",
    "time.t_final_ns",
    "time.snapshots",
    "init.x1",
    "init.p1",
    "init.x2",
    "init.p2",
    "init.atom",
    "loop.center_p1",
    "loop.center_p2",
    "loop.radius",
    "loop.segments",
    "loop.bands",
    "loop.orientation",
    "surfaces.n",
    "surfaces.extent",
    "oracle.n_max",
    "oracle.integrator",
    "oracle.dt_ns",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleIntegrator {
    Dense,
    Rk4,
}

/// Parsed, syntax-checked config. Values stay as trimmed strings keyed by
/// canonical names; typed accessors validate on demand so a surfaces config
/// never has to spell out time-stepping keys.
#[derive(Clone, Debug)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let stripped = stripped.trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey { key, line });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(ConfigError::DuplicateKey { key, line });
            }
        }
        Ok(Self { entries })
    }

    /// Sorted `key = value` form; the idempotent normal form of the file.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hash of the canonical form, recorded in every output file.
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            let _ = write!(out, "{b:02x}");
        }
        out
    }

    fn get(&self, key: &'static str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn require(&self, key: &'static str) -> Result<&str, ConfigError> {
        self.get(key).ok_or(ConfigError::Missing { key })
    }

    fn f64_of(&self, key: &'static str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<f64>()
                .map(Some)
                .map_err(|e| self.bad(key, &e.to_string())),
        }
    }

    fn usize_of(&self, key: &'static str) -> Result<Option<usize>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse::<usize>()
                .map(Some)
                .map_err(|e| self.bad(key, &e.to_string())),
        }
    }

    fn bad(&self, key: &str, why: &str) -> ConfigError {
        ConfigError::BadValue { key: key.to_string(), line: 0, why: why.to_string() }
    }

    /// Angular rate from the `_ghz` or `_radns` spelling of one quantity.
    fn rate(
        &self,
        ghz: &'static str,
        radns: &'static str,
    ) -> Result<Option<f64>, ConfigError> {
        let from_ghz = self.f64_of(ghz)?;
        let from_radns = self.f64_of(radns)?;
        match (from_ghz, from_radns) {
            (Some(_), Some(_)) => Err(ConfigError::UnitConflict { ghz, radns }),
            (Some(v), None) => Ok(Some(angular_from_ghz(v))),
            (None, Some(v)) => Ok(Some(v)),
            (None, None) => Ok(None),
        }
    }

    fn rate_required(
        &self,
        ghz: &'static str,
        radns: &'static str,
    ) -> Result<f64, ConfigError> {
        self.rate(ghz, radns)?.ok_or(ConfigError::Missing { key: ghz })
    }

    pub fn model_spec(&self) -> Result<ModelSpec, ConfigError> {
        let kind = match self.require("model.kind")? {
            "rabi" => ModelKind::Rabi,
            "bimodal_rabi" => ModelKind::BimodalRabi,
            "bimodal_lambda" => ModelKind::BimodalLambda,
            other => {
                return Err(self.bad(
                    "model.kind",
                    &format!("`{other}` is not rabi | bimodal_rabi | bimodal_lambda"),
                ))
            }
        };
        let omega = self.rate_required("model.omega_ghz", "model.omega_radns")?;
        let g = self.rate_required("model.g_ghz", "model.g_radns")?;
        let spec = match kind {
            ModelKind::Rabi | ModelKind::BimodalRabi => {
                let splitting = self
                    .rate("model.splitting_ghz", "model.splitting_radns")?
                    .unwrap_or(0.0);
                if kind == ModelKind::Rabi {
                    ModelSpec::rabi(omega, splitting, g)?
                } else {
                    ModelSpec::bimodal_rabi(omega, splitting, g)?
                }
            }
            ModelKind::BimodalLambda => {
                let levels = [
                    self.rate("model.e1_ghz", "model.e1_radns")?.unwrap_or(0.0),
                    self.rate("model.e2_ghz", "model.e2_radns")?.unwrap_or(0.0),
                    self.rate("model.e3_ghz", "model.e3_radns")?.unwrap_or(0.0),
                ];
                ModelSpec::bimodal_lambda(omega, levels, g)?
            }
        };
        let kappa = self.rate("model.kappa_ghz", "model.kappa_radns")?.unwrap_or(0.0);
        let gamma = self.rate("model.gamma_ghz", "model.gamma_radns")?.unwrap_or(0.0);
        Ok(if kappa > 0.0 || gamma > 0.0 {
            spec.with_losses(kappa, gamma)?
        } else {
            spec
        })
    }

    pub fn grid(&self, spec: &ModelSpec) -> Result<QuadratureGrid, ConfigError> {
        let n = self.usize_of("grid.n")?.ok_or(ConfigError::Missing { key: "grid.n" })?;
        let l1 = self.f64_of("grid.l1")?.ok_or(ConfigError::Missing { key: "grid.l1" })?;
        let extents: Vec<f64> = if spec.n_modes() == 2 {
            let l2 = self.f64_of("grid.l2")?.ok_or(ConfigError::Missing { key: "grid.l2" })?;
            vec![l1, l2]
        } else {
            vec![l1]
        };
        Ok(QuadratureGrid::new(spec.n_modes(), n, &extents)?)
    }

    /// Mode centers (x0, p0) for the initial product state.
    pub fn initial_modes(&self, spec: &ModelSpec) -> Result<Vec<(f64, f64)>, ConfigError> {
        let mut modes = vec![(
            self.f64_of("init.x1")?.ok_or(ConfigError::Missing { key: "init.x1" })?,
            self.f64_of("init.p1")?.ok_or(ConfigError::Missing { key: "init.p1" })?,
        )];
        if spec.n_modes() == 2 {
            modes.push((
                self.f64_of("init.x2")?.ok_or(ConfigError::Missing { key: "init.x2" })?,
                self.f64_of("init.p2")?.ok_or(ConfigError::Missing { key: "init.p2" })?,
            ));
        }
        Ok(modes)
    }

    pub fn initial_atom(&self, spec: &ModelSpec) -> Result<Vec<C64>, ConfigError> {
        let raw = self.require("init.atom")?;
        let amps: Vec<C64> = raw
            .split(',')
            .map(|tok| parse_complex(tok.trim()))
            .collect::<Result<_, _>>()
            .map_err(|why| self.bad("init.atom", &why))?;
        if amps.len() != spec.internal_dim() {
            return Err(self.bad(
                "init.atom",
                &format!("need {} amplitudes, got {}", spec.internal_dim(), amps.len()),
            ));
        }
        Ok(amps)
    }

    pub fn initial_state(&self, spec: &ModelSpec) -> Result<SpinorField, ConfigError> {
        let grid = self.grid(spec)?;
        let modes = self.initial_modes(spec)?;
        let atom = self.initial_atom(spec)?;
        Ok(coherent_spinor(grid, &modes, &atom)?)
    }

    /// (dt, steps, snapshot cadence). Snapshots default to 128 per run.
    pub fn schedule(&self) -> Result<(f64, usize, usize), ConfigError> {
        let dt = self.f64_of("time.dt_ns")?.ok_or(ConfigError::Missing { key: "time.dt_ns" })?;
        let t_final = self
            .f64_of("time.t_final_ns")?
            .ok_or(ConfigError::Missing { key: "time.t_final_ns" })?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(self.bad("time.dt_ns", "must be positive"));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(self.bad("time.t_final_ns", "must be positive"));
        }
        let steps = (t_final / dt).round().max(1.0) as usize;
        let snapshots = self.usize_of("time.snapshots")?.unwrap_or(128).max(1);
        let every = (steps / snapshots).max(1);
        Ok((dt, steps, every))
    }

    pub fn loop_spec(&self, spec: &ModelSpec) -> Result<LoopSpec, ConfigError> {
        let center = (
            self.f64_of("loop.center_p1")?
                .ok_or(ConfigError::Missing { key: "loop.center_p1" })?,
            self.f64_of("loop.center_p2")?
                .ok_or(ConfigError::Missing { key: "loop.center_p2" })?,
        );
        let radius = self
            .f64_of("loop.radius")?
            .ok_or(ConfigError::Missing { key: "loop.radius" })?;
        let n_segments = self
            .usize_of("loop.segments")?
            .ok_or(ConfigError::Missing { key: "loop.segments" })?;
        let bands = match self.get("loop.bands") {
            None => (0..spec.internal_dim()).collect(),
            Some(raw) => raw
                .split(',')
                .map(|tok| tok.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| self.bad("loop.bands", &e.to_string()))?,
        };
        let reversed = match self.get("loop.orientation") {
            None | Some("positive") => false,
            Some("reversed") => true,
            Some(other) => {
                return Err(self.bad(
                    "loop.orientation",
                    &format!("`{other}` is not positive | reversed"),
                ))
            }
        };
        Ok(LoopSpec { center, radius, n_segments, bands, reversed })
    }

    /// Surface lattice: points per axis and half-extent.
    pub fn surfaces_lattice(&self) -> Result<(usize, f64), ConfigError> {
        let n = self.usize_of("surfaces.n")?.unwrap_or(81);
        let extent = self.f64_of("surfaces.extent")?.unwrap_or(4.0);
        if n < 2 {
            return Err(self.bad("surfaces.n", "need at least 2 points per axis"));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(self.bad("surfaces.extent", "must be positive"));
        }
        Ok((n, extent))
    }

    pub fn oracle_n_max(&self) -> Result<usize, ConfigError> {
        Ok(self.usize_of("oracle.n_max")?.unwrap_or(40))
    }

    pub fn oracle_integrator(&self) -> Result<OracleIntegrator, ConfigError> {
        match self.get("oracle.integrator") {
            None | Some("dense") => Ok(OracleIntegrator::Dense),
            Some("rk4") => Ok(OracleIntegrator::Rk4),
            Some(other) => {
                Err(self.bad("oracle.integrator", &format!("`{other}` is not dense | rk4")))
            }
        }
    }

    pub fn oracle_dt(&self) -> Result<f64, ConfigError> {
        Ok(self.f64_of("oracle.dt_ns")?.unwrap_or(1e-4))
    }
}

/// Parse `a`, `bi`, `a+bi`, `a-bi`, with `i` and `-i` as unit imaginaries.
fn parse_complex(tok: &str) -> Result<C64, String> {
    if tok.is_empty() {
        return Err("empty amplitude".into());
    }
    let parse_part = |s: &str| -> Result<f64, String> {
        match s {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")),
        }
    };
    match tok.strip_suffix('i') {
        None => tok.parse::<f64>().map(|re| C64::new(re, 0.0)).map_err(|e| format!("`{tok}`: {e}")),
        Some(body) => {
            // Split off the real part at the last +/- that is not a leading
            // sign or part of an exponent.
            let bytes = body.as_bytes();
            let mut split = None;
            for i in (1..bytes.len()).rev() {
                let b = bytes[i];
                if (b == b'+' || b == b'-') && !matches!(bytes[i - 1], b'e' | b'E') {
                    split = Some(i);
                    break;
                }
            }
            match split {
                None => parse_part(body).map(|im| C64::new(0.0, im)),
                Some(i) => {
                    let re = body[..i].parse::<f64>().map_err(|e| format!("`{}`: {e}", &body[..i]))?;
                    let im = parse_part(&body[i..])?;
                    Ok(C64::new(re, im))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2_LIKE: &str = "\
# demo run
model.kind = bimodal_rabi
model.omega_ghz = 5.7
model.splitting_ghz = 6.9
model.g_ghz = 0.105
grid.n = 128
grid.l1 = 8
grid.l2 = 14
time.dt_ns = 1e-4
time.t_final_ns = 1.05
init.x1 = 0
init.p1 = 2
init.x2 = 5
init.p2 = 0
init.atom = 1, 1
";

    #[test]
    fn parses_and_converts_units() {
        let cfg = RunConfig::parse(FIG2_LIKE).unwrap();
        let spec = cfg.model_spec().unwrap();
        assert!((spec.omega - 2.0 * std::f64::consts::PI * 5.7).abs() < 1e-12);
        assert!((spec.splitting - 2.0 * std::f64::consts::PI * 6.9).abs() < 1e-12);
        assert!((spec.g - 2.0 * std::f64::consts::PI * 0.105).abs() < 1e-12);
        assert_eq!(spec.kappa, 0.0);
        let grid = cfg.grid(&spec).unwrap();
        assert_eq!(grid.n(), 128);
        assert_eq!(grid.extent(1), 14.0);
        let (dt, steps, every) = cfg.schedule().unwrap();
        assert_eq!((dt, steps), (1e-4, 10500));
        assert_eq!(every, 82);
        let atom = cfg.initial_atom(&spec).unwrap();
        assert_eq!(atom, vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys_with_line_numbers() {
        let err = RunConfig::parse("model.kind = rabi\nmodel.omega_thz = 3\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { key, line } => {
                assert_eq!(key, "model.omega_thz");
                assert_eq!(line, 2);
            }
            other => panic!("wrong error: {other}"),
        }
        let err = RunConfig::parse("grid.n = 64\n\ngrid.n = 128\n").unwrap_err();
        match err {
            ConfigError::DuplicateKey { key, line } => {
                assert_eq!(key, "grid.n");
                assert_eq!(line, 3);
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn rejects_unit_conflicts() {
        let text = "model.kind = rabi\nmodel.omega_ghz = 1\nmodel.omega_radns = 6.28\nmodel.g_radns = 0.1\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(cfg.model_spec(), Err(ConfigError::UnitConflict { .. })));
    }

    #[test]
    fn canonical_form_is_idempotent_and_hash_stable() {
        let cfg = RunConfig::parse(FIG2_LIKE).unwrap();
        let canon = cfg.canonical();
        let reparsed = RunConfig::parse(&canon).unwrap();
        assert_eq!(canon, reparsed.canonical());
        assert_eq!(cfg.sha256_hex(), reparsed.sha256_hex());
        assert_eq!(cfg.sha256_hex().len(), 64);
    }

    #[test]
    fn complex_amplitudes_cover_the_grammar() {
        let cases = [
            ("1", C64::new(1.0, 0.0)),
            ("-0.5", C64::new(-0.5, 0.0)),
            ("i", C64::new(0.0, 1.0)),
            ("-i", C64::new(0.0, -1.0)),
            ("2i", C64::new(0.0, 2.0)),
            ("1+2i", C64::new(1.0, 2.0)),
            ("1-2i", C64::new(1.0, -2.0)),
            ("-1.5e-2+0.25i", C64::new(-0.015, 0.25)),
            ("3e-2-1e-3i", C64::new(0.03, -0.001)),
            ("0.5+i", C64::new(0.5, 1.0)),
            ("0.5-i", C64::new(0.5, -1.0)),
        ];
        for (text, want) in cases {
            let got = parse_complex(text).unwrap();
            assert!((got - want).norm() < 1e-15, "{text}: {got}");
        }
        assert!(parse_complex("banana").is_err());
        assert!(parse_complex("").is_err());
    }

    #[test]
    fn lambda_levels_and_loop_keys() {
        let text = "\
model.kind = bimodal_lambda
model.omega_radns = 1
model.e3_radns = 1
model.g_radns = 1
loop.center_p1 = 0
loop.center_p2 = 0
loop.radius = 1
loop.segments = 512
loop.bands = 0, 1, 2
loop.orientation = reversed
";
        let cfg = RunConfig::parse(text).unwrap();
        let spec = cfg.model_spec().unwrap();
        assert_eq!(spec.levels, [0.0, 0.0, 1.0]);
        let ls = cfg.loop_spec(&spec).unwrap();
        assert_eq!(ls.bands, vec![0, 1, 2]);
        assert!(ls.reversed);
        assert_eq!(ls.n_segments, 512);
    }

    #[test]
    fn missing_keys_are_named() {
        let cfg = RunConfig::parse("model.kind = rabi\nmodel.omega_radns = 1\n").unwrap();
        match cfg.model_spec() {
            Err(ConfigError::Missing { key }) => assert_eq!(key, "model.g_ghz"),
            other => panic!("wrong result: {other:?}"),
        }
    }
}
