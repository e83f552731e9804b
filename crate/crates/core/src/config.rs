//! Pipeline configuration: `key = value` lines under `[section]` headers,
//! with command-line style overrides applied on top.

use std::fs;
use std::path::{Path, PathBuf};

use crate::assembly::SmoothLayers;
use crate::error::{Error, Result};
use crate::shells::ShellSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spacing {
    /// Largest bounding-box extent over 128.
    Auto,
    /// Voxel edge in model units.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GacConfig {
    pub eps: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub reinit_every: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellConfig {
    pub schedule: ShellSchedule,
    pub core_depth_factor: f64,
    /// Use the (subdivided) input surface as the outermost shell instead of
    /// the extracted zero level set, when it is small enough and maps cleanly.
    pub outer_from_input: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    pub iterations: usize,
    pub layers: SmoothLayers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub area_steps: usize,
    pub volume_steps: usize,
    pub volume_rounds: usize,
    /// Also run the area flow on the cube shells.
    pub area_correct_cube: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub hex_vtk: Option<PathBuf>,
    pub map_json: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
    pub debug_shells: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub resolution: usize,
    pub spacing: Spacing,
    pub gac: GacConfig,
    pub shells: ShellConfig,
    pub smoothing: SmoothingConfig,
    pub flows: FlowConfig,
    pub outputs: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            resolution: 6,
            spacing: Spacing::Auto,
            gac: GacConfig {
                eps: 1.5,
                dt: 0.75,
                max_steps: 4000,
                reinit_every: 20,
                patience: 50,
            },
            shells: ShellConfig {
                schedule: ShellSchedule::VolumeMatched,
                core_depth_factor: 0.95,
                outer_from_input: true,
            },
            smoothing: SmoothingConfig {
                iterations: 10,
                layers: SmoothLayers::Interior,
            },
            flows: FlowConfig {
                area_steps: 20,
                volume_steps: 20,
                volume_rounds: 4,
                area_correct_cube: true,
            },
            outputs: OutputConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::Config(format!("{key} = {value}: {why}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a valid number"))
}

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = num(key, value)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(bad(key, value, "must be positive"));
    }
    Ok(v)
}

fn at_least(key: &str, value: &str, min: usize) -> Result<usize> {
    let v: usize = num(key, value)?;
    if v < min {
        return Err(bad(key, value, &format!("must be at least {min}")));
    }
    Ok(v)
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

impl PipelineConfig {
    /// Sets one dotted key (`section.key`, or a bare top-level key).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "input" => self.input = PathBuf::from(value),
            "resolution" => self.resolution = at_least(key, value, 2)?,
            "spacing" => {
                self.spacing = if value == "auto" {
                    Spacing::Auto
                } else {
                    Spacing::Fixed(positive(key, value)?)
                }
            }
            "gac.eps" => self.gac.eps = positive(key, value)?,
            "gac.dt" => self.gac.dt = positive(key, value)?,
            "gac.max_steps" => self.gac.max_steps = at_least(key, value, 1)?,
            "gac.reinit_every" => self.gac.reinit_every = at_least(key, value, 1)?,
            "gac.patience" => self.gac.patience = at_least(key, value, 1)?,
            "shells.schedule" => {
                self.shells.schedule = match value {
                    "volume" => ShellSchedule::VolumeMatched,
                    "step" => ShellSchedule::StepUniform,
                    _ => return Err(bad(key, value, "expected volume or step")),
                }
            }
            "shells.core_depth_factor" => {
                let v = positive(key, value)?;
                if v > 1.0 {
                    return Err(bad(key, value, "must not exceed 1"));
                }
                self.shells.core_depth_factor = v;
            }
            "shells.outer" => {
                self.shells.outer_from_input = match value {
                    "input" => true,
                    "levelset" => false,
                    _ => return Err(bad(key, value, "expected input or levelset")),
                }
            }
            "smoothing.iterations" => self.smoothing.iterations = num(key, value)?,
            "smoothing.layers" => {
                self.smoothing.layers = match value {
                    "interior" => SmoothLayers::Interior,
                    "all" => SmoothLayers::All,
                    _ => return Err(bad(key, value, "expected interior or all")),
                }
            }
            "flows.area_steps" => self.flows.area_steps = at_least(key, value, 1)?,
            "flows.volume_steps" => self.flows.volume_steps = at_least(key, value, 1)?,
            "flows.volume_rounds" => self.flows.volume_rounds = num(key, value)?,
            "flows.area_correct_cube" => self.flows.area_correct_cube = flag(key, value)?,
            "outputs.hex_vtk" => self.outputs.hex_vtk = Some(PathBuf::from(value)),
            "outputs.map_json" => self.outputs.map_json = Some(PathBuf::from(value)),
            "outputs.metrics_json" => self.outputs.metrics_json = Some(PathBuf::from(value)),
            "outputs.debug_shells" => self.outputs.debug_shells = flag(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies config text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", n + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            self.set(&key, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies `--section.key=value` (or `section.key=value`) overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref().trim_start_matches("--");
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let mut c = PipelineConfig::default();
        c.apply_text(
            "resolution = 4 # small\n\n[gac]\neps = 2.0\n[smoothing]\nlayers = all\n[outputs]\ndebug_shells = yes\n",
        )
        .unwrap();
        assert_eq!(c.resolution, 4);
        assert_eq!(c.gac.eps, 2.0);
        assert_eq!(c.smoothing.layers, SmoothLayers::All);
        assert!(c.outputs.debug_shells);
    }

    #[test]
    fn overrides_win() {
        let mut c = PipelineConfig::default();
        c.apply_text("[flows]\nvolume_steps = 10\n").unwrap();
        c.apply_overrides(&["--flows.volume_steps=40", "spacing=0.01"]).unwrap();
        assert_eq!(c.flows.volume_steps, 40);
        assert_eq!(c.spacing, Spacing::Fixed(0.01));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = PipelineConfig::default();
        assert!(matches!(c.set("resolution", "1"), Err(Error::Config(_))));
        assert!(matches!(c.set("gac.dt", "-1"), Err(Error::Config(_))));
        assert!(matches!(c.set("nope", "1"), Err(Error::Config(_))));
        let err = c.apply_text("[gac]\neps 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert_eq!(err.exit_code(), 2);
    }
}
