//! Run configuration: JSON file contents merged with command-line overrides.

use std::path::PathBuf;
use std::str::FromStr;

use cowcka_core::model::{RawExperimentParams, RawFreeParams};
use cowcka_core::{ExperimentParams, FreeParams, OptimizerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Inclusive distance grid `start:stop:step`, in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Default for DistanceGrid {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 600.0,
            step: 10.0,
        }
    }
}

impl DistanceGrid {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let Self { start, stop, step } = *self;
        if !(start.is_finite() && stop.is_finite() && step.is_finite())
            || step <= 0.0
            || stop < start
        {
            return Err(CliError::Usage(format!(
                "distance grid {start}:{stop}:{step} is empty"
            )));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    }
}

impl FromStr for DistanceGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(format!("expected start:stop:step, got `{s}`"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        Ok(Self {
            start: num(start)?,
            stop: num(stop)?,
            step: num(step)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_slots: u64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_slots: 1_000_000,
            seed: 1,
        }
    }
}

/// Everything a command needs. Missing fields take the built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: ExperimentParams,
    pub free: FreeParams,
    pub optimizer: OptimizerConfig,
    pub distances: DistanceGrid,
    pub simulation: SimulationConfig,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentParams::baseline(),
            free: FreeParams::new(0.5, 0.1).expect("valid default"),
            optimizer: OptimizerConfig::default(),
            distances: DistanceGrid::default(),
            simulation: SimulationConfig::default(),
            workers: None,
            out: None,
            format: None,
        }
    }
}

/// Flag values; `None` leaves the file/default value untouched.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Total Alice–Bob distance L in km.
    #[arg(long, global = true)]
    pub distance: Option<f64>,
    /// Distance grid for `sweep` and `bounds`, as start:stop:step.
    #[arg(long, global = true, value_name = "START:STOP:STEP")]
    pub distances: Option<DistanceGrid>,
    /// Send probability t.
    #[arg(long, global = true)]
    pub t: Option<f64>,
    /// Intensity μ.
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    /// Interference-basis misalignment e'_d.
    #[arg(long, global = true)]
    pub ed_prime: Option<f64>,
    /// Time-basis misalignment e_d.
    #[arg(long, global = true)]
    pub time_misalignment: Option<f64>,
    #[arg(long, global = true)]
    pub detector_efficiency: Option<f64>,
    #[arg(long, global = true)]
    pub dark_count_rate: Option<f64>,
    /// Fiber attenuation in dB/km.
    #[arg(long, global = true)]
    pub attenuation: Option<f64>,
    #[arg(long, global = true)]
    pub error_correction_efficiency: Option<f64>,
    #[arg(long, global = true)]
    pub population: Option<usize>,
    #[arg(long, global = true)]
    pub generations: Option<usize>,
    #[arg(long, global = true)]
    pub grid_resolution: Option<usize>,
    #[arg(long, global = true)]
    pub n_slots: Option<u64>,
    /// Seed for both the optimizer and the simulator.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// File (if any) first, then flags on top.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let base = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        base.with_overrides(o)
    }

    pub fn with_overrides(mut self, o: &Overrides) -> Result<Self, CliError> {
        let mut raw = RawExperimentParams::from(self.experiment);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut raw.total_distance_km, o.distance);
        set(&mut raw.interference_misalignment, o.ed_prime);
        set(&mut raw.time_misalignment, o.time_misalignment);
        set(&mut raw.detector_efficiency, o.detector_efficiency);
        set(&mut raw.dark_count_rate, o.dark_count_rate);
        set(&mut raw.attenuation, o.attenuation);
        set(
            &mut raw.error_correction_efficiency,
            o.error_correction_efficiency,
        );
        self.experiment =
            ExperimentParams::new(raw).map_err(|e| CliError::Validation(e.to_string()))?;

        let mut free = RawFreeParams::from(self.free);
        set(&mut free.send_probability, o.t);
        set(&mut free.intensity, o.mu);
        self.free = FreeParams::try_from(free).map_err(|e| CliError::Validation(e.to_string()))?;

        if let Some(g) = o.distances {
            self.distances = g;
        }
        if let Some(p) = o.population {
            self.optimizer.population = p;
        }
        if let Some(g) = o.generations {
            self.optimizer.generations = g;
        }
        if let Some(r) = o.grid_resolution {
            self.optimizer.grid_resolution = r;
        }
        if let Some(s) = o.seed {
            self.optimizer.seed = s;
            self.simulation.seed = s;
        }
        if let Some(n) = o.n_slots {
            self.simulation.n_slots = n;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if o.format.is_some() {
            self.format = o.format;
        }
        self.optimizer
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if self.workers == Some(0) {
            return Err(CliError::Validation("workers must be >= 1".into()));
        }
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
