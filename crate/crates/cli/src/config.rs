//! Run configuration: one TOML file plus flag overrides (flags win).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use mpc_mci::analysis::{GridSpec, ProbeCase, TrackingConfig};
use mpc_mci::safety::CHECK_TOL;
use mpc_mci::{Plant, SolverConfig, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Feasibility,
    Track,
    Reach,
    Appendix,
    Check,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Feasibility => "feasibility",
            Command::Track => "track",
            Command::Reach => "reach",
            Command::Appendix => "appendix",
            Command::Check => "check",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachSettings {
    pub x0: Vec<f64>,
    /// First-control lattice size per input.
    pub grid: [usize; 2],
    pub cases: Vec<ProbeCase>,
}

impl Default for ReachSettings {
    fn default() -> Self {
        ReachSettings {
            x0: vec![-1.5, 0.0, 0.0, 1.0, 0.0],
            grid: [11, 11],
            cases: [1, 2, 3, 5, 6]
                .map(ProbeCase::mci)
                .into_iter()
                .chain([1, 6, 11].map(|n| ProbeCase::nmpc(n, n)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSettings {
    pub samples: usize,
    pub tolerance: f64,
    /// Random problems per derivative check.
    pub derivative_points: usize,
    pub derivative_horizon: usize,
    pub derivative_tolerance: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings {
            samples: 10_000,
            tolerance: CHECK_TOL,
            derivative_points: 20,
            derivative_horizon: 10,
            derivative_tolerance: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub plant: String,
    /// Applied to both the grid and the tracking run when set.
    pub variant: Option<Variant>,
    /// Grid preset; also labels the grid CSV.
    pub case: Option<u8>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses the available parallelism.
    pub jobs: Option<usize>,
    pub grid: GridSpec,
    pub tracking: TrackingConfig,
    pub reach: ReachSettings,
    pub check: CheckSettings,
    pub solver: SolverConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            plant: "unicycle5d".into(),
            variant: None,
            case: None,
            output_dir: PathBuf::from("out"),
            seed: 2024,
            jobs: None,
            grid: GridSpec::default(),
            tracking: TrackingConfig::default(),
            reach: ReachSettings::default(),
            check: CheckSettings::default(),
            solver: SolverConfig::default(),
        }
    }
}

/// Flag values; `None` leaves the file (or default) value alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub plant: Option<String>,
    pub case: Option<u8>,
    pub variant: Option<Variant>,
    pub horizons: Option<Vec<usize>>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub tol_feas: Option<f64>,
    pub gamma: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub duration: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Applies flags, then expands the case preset and the shared variant.
    pub fn resolve(mut self, o: Overrides) -> Result<Self, String> {
        if o.command.is_some() {
            self.command = o.command;
        }
        if let Some(p) = o.plant {
            self.plant = p;
        }
        self.case = o.case.or(self.case);
        self.variant = o.variant.or(self.variant);
        self.jobs = o.jobs.or(self.jobs);
        if let Some(d) = o.output_dir {
            self.output_dir = d;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.tol_feas {
            self.solver.tol_feas = t;
        }
        if let Some(g) = o.gamma {
            self.grid.gamma = g;
            self.tracking.gamma = g;
        }
        if let Some(h) = o.horizons {
            self.grid.horizons = h;
        }
        if let Some(n) = o.nx {
            self.grid.nx = n;
            self.reach.grid[0] = n;
        }
        if let Some(n) = o.ny {
            self.grid.ny = n;
            self.reach.grid[1] = n;
        }
        if let Some(d) = o.duration {
            self.tracking.duration = d;
        }
        if let Some(x) = o.x0 {
            self.tracking.x0 = x.clone();
            self.reach.x0 = x;
        }
        if let Some(case) = self.case {
            let preset = GridSpec::case(case).map_err(|e| e.to_string())?;
            self.grid.fixed_theta = preset.fixed_theta;
            self.grid.fixed_v = preset.fixed_v;
            self.grid.fixed_omega = preset.fixed_omega;
        }
        if let Some(v) = self.variant {
            self.grid.variant = v;
            self.tracking.variant = v;
        }
        if self.command.is_none() {
            return Err("no command given (on the command line or as `command` in the config)".into());
        }
        Ok(self)
    }

    pub fn command(&self) -> Command {
        self.command.expect("resolved config has a command")
    }

    pub fn plant(&self) -> Result<Plant, String> {
        Plant::by_name(&self.plant).map_err(|e| format!("{e} (known: {})", Plant::names().join(", ")))
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
