use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::faultsim::FaultModel;
use crate::netlist::{DomainId, DomainRule};
use crate::simkernel::Pulse;
use crate::time::{serde_time, serde_time_opt, Time};
use crate::timing::ShiftPath;

use super::{ErrorKind, FlowError, Stage};

fn yes() -> bool {
    true
}

fn default_patterns() -> usize {
    20_000
}

fn default_budget() -> usize {
    1000
}

fn default_sample() -> usize {
    1024
}

fn default_seed() -> u64 {
    1
}

fn default_prpg_length() -> usize {
    19
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub name: String,
    /// Functional period in ns.
    #[serde(with = "serde_time")]
    pub period: Time,
    /// Defaults to the declaration index.
    #[serde(default)]
    pub capture_order: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewConfig {
    pub a: DomainId,
    pub b: DomainId,
    #[serde(with = "serde_time")]
    pub skew: Time,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrpgConfig {
    #[serde(default = "default_prpg_length")]
    pub length: usize,
    /// Exponent list with the constant term implied; defaults to the
    /// built-in primitive polynomial of `length`.
    #[serde(default)]
    pub polynomial: Option<Vec<u32>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for PrpgConfig {
    fn default() -> Self {
        PrpgConfig {
            length: default_prpg_length(),
            polynomial: None,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisrConfig {
    /// Defaults to max(19, scan-outs).
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default)]
    pub polynomial: Option<Vec<u32>>,
    /// Initial signature in hex.
    #[serde(default)]
    pub init: Option<String>,
}

/// A time value in ns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ns(#[serde(with = "serde_time")] pub Time);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, with = "serde_time_opt")]
    pub d1: Option<Time>,
    /// Per-domain pulse separation; defaults to each period.
    #[serde(default)]
    pub d2: BTreeMap<DomainId, Ns>,
    #[serde(default, with = "serde_time_opt")]
    pub d3: Option<Time>,
    #[serde(default, with = "serde_time_opt")]
    pub d5: Option<Time>,
    #[serde(default)]
    pub pulses: Option<Vec<Pulse>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopUpConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "TopUpConfig::default_batch")]
    pub batch: usize,
    #[serde(default = "TopUpConfig::default_limit")]
    pub backtrack_limit: usize,
    #[serde(default)]
    pub max_patterns: Option<usize>,
}

impl TopUpConfig {
    fn default_batch() -> usize {
        64
    }

    fn default_limit() -> usize {
        10_000
    }
}

impl Default for TopUpConfig {
    fn default() -> Self {
        TopUpConfig {
            enabled: true,
            batch: Self::default_batch(),
            backtrack_limit: Self::default_limit(),
            max_patterns: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectConfig {
    /// Fault site as printed in fault lists, e.g. `G10` or `G10>G22.1`.
    pub site: String,
    pub model: FaultModel,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPaths {
    #[serde(default)]
    pub text: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
    #[serde(default)]
    pub faults: Option<PathBuf>,
    #[serde(default)]
    pub patterns: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub bench: Option<PathBuf>,
    #[serde(default)]
    pub chains: Option<PathBuf>,
    #[serde(default)]
    pub timing: Option<PathBuf>,
}

/// Everything one flow run depends on. Relative paths resolve against the
/// directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub netlist: PathBuf,
    /// Defaults to one 10 ns domain `clk`.
    #[serde(default)]
    pub domains: Vec<DomainConfig>,
    #[serde(default)]
    pub skew: Vec<SkewConfig>,
    /// Defaults to every flip-flop in domain 0.
    #[serde(default)]
    pub domain_rules: Vec<DomainRule>,
    /// Scan chains per domain, by domain index; missing entries mean 1.
    #[serde(default)]
    pub chains: Vec<usize>,
    /// Flip-flop globs left out of the chains.
    #[serde(default)]
    pub non_scan: Vec<String>,
    #[serde(default)]
    pub reset: Vec<String>,
    #[serde(default)]
    pub prpg: Vec<PrpgConfig>,
    #[serde(default)]
    pub misr: Vec<MisrConfig>,
    /// Space compactor outputs per domain; absent means no compactor.
    #[serde(default)]
    pub compactor: Option<usize>,
    #[serde(default = "yes")]
    pub wrap_io: bool,
    #[serde(default)]
    pub wrapper_domain: DomainId,
    #[serde(default = "default_patterns")]
    pub pattern_count: usize,
    #[serde(default = "default_budget")]
    pub tpi_budget: usize,
    /// Overrides `tpi_budget` with a percentage of the flip-flop count.
    #[serde(default)]
    pub tpi_budget_percent: Option<f64>,
    #[serde(default = "default_sample")]
    pub tpi_sample: usize,
    #[serde(default)]
    pub topup: TopUpConfig,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Grade transition faults alongside stuck-at faults.
    #[serde(default)]
    pub transition_faults: bool,
    #[serde(default)]
    pub exclude_untestable: bool,
    #[serde(default)]
    pub timing_paths: Option<Vec<ShiftPath>>,
    #[serde(default)]
    pub inject_fault: Option<InjectConfig>,
    #[serde(default = "yes")]
    pub parallel: bool,
    #[serde(default)]
    pub trace_windows: Option<usize>,
    #[serde(default)]
    pub reports: ReportPaths,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SessionConfig {
    pub fn new(netlist: impl Into<PathBuf>) -> Self {
        let mut cfg: SessionConfig =
            serde_json::from_value(serde_json::json!({ "netlist": "" })).expect("defaults deserialize");
        cfg.netlist = netlist.into();
        cfg
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, FlowError> {
        let mut cfg: SessionConfig =
            serde_json::from_str(text).map_err(|e| FlowError::new(Stage::Config, ErrorKind::Config, e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, FlowError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FlowError::new(Stage::Config, ErrorKind::Config, format!("{}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn exec(&self) -> crate::par::Exec {
        if self.parallel {
            crate::par::Exec::Parallel
        } else {
            crate::par::Exec::Sequential
        }
    }
}
