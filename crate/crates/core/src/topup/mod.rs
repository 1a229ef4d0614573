//! Coverage boosting after the random phase: observation-point selection
//! from fault-effect sets, and top-up PODEM patterns.

mod podem;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dft::{nearest_domain, DftError, ScanArchitecture};
use crate::faultsim::{effect_sets, fault_simulate, FaultList, FaultModel, FaultSimError, FaultStatus, SimOptions};
use crate::netlist::{Logic3, NetId, Netlist};
use crate::par::{self, Exec};
use crate::simkernel::{CaptureProgram, SimModel, StimulusBlock};

pub use podem::{podem, PodemOutcome, TestCube};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopUpError {
    #[error(transparent)]
    FaultSim(#[from] FaultSimError),
    #[error(transparent)]
    Dft(#[from] DftError),
    #[error("fault {0} is not a stuck-at fault")]
    NotStuckAt(usize),
}

/// A net that would expose undetected faults if observed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ObservationCandidate {
    pub net: NetId,
    /// Undetected faults newly observable here, given the earlier picks.
    pub gain: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TpiSelection {
    pub points: Vec<ObservationCandidate>,
    /// Fault indices credited to each point, parallel to `points`.
    pub covers: Vec<Vec<usize>>,
}

impl TpiSelection {
    pub fn nets(&self) -> Vec<NetId> {
        self.points.iter().map(|p| p.net).collect()
    }
}

/// Capture event whose frame an observation cell on `net` would sample,
/// per net. Nets with no clocked source use the first chained domain.
pub fn observation_events(n: &Netlist, arch: &ScanArchitecture, prog: &CaptureProgram) -> Vec<u32> {
    let chained = arch.domains();
    let fallback = chained.first().copied();
    (0..n.net_count())
        .map(|net| {
            nearest_domain(n, arch, net)
                .filter(|d| chained.contains(d))
                .or(fallback)
                .and_then(|d| prog.last_event_of(d))
                .map_or(u32::MAX, |e| e as u32)
        })
        .collect()
}

/// Greedy set cover over fault-effect sets of the open stuck-at
/// representatives under `sample`.
///
/// Each round picks the unobserved net that exposes the most not-yet-covered
/// faults, lowest net id on ties, until `budget` points are chosen or no net
/// adds anything.
#[allow(clippy::too_many_arguments)]
pub fn select_observation_points(
    n: &Netlist,
    arch: &ScanArchitecture,
    model: &SimModel,
    prog: &CaptureProgram,
    fl: &FaultList,
    sample: &[StimulusBlock],
    budget: usize,
    exec: Exec,
) -> TpiSelection {
    if budget == 0 {
        return TpiSelection::default();
    }
    let targets: Vec<usize> = fl
        .open_representatives()
        .into_iter()
        .filter(|&i| !fl.faults[i].model.is_transition())
        .collect();
    if targets.is_empty() || sample.is_empty() {
        return TpiSelection::default();
    }
    let event_of = observation_events(n, arch, prog);
    let faults: Vec<_> = targets.iter().map(|&i| fl.faults[i]).collect();
    let sets = effect_sets(model, prog, sample, &faults, &event_of, exec);
    let observed = arch.observed_nets(n);
    let mut by_net: BTreeMap<NetId, Vec<usize>> = BTreeMap::new();
    for (k, set) in sets.iter().enumerate() {
        for &net in set {
            if !observed.contains(&net) && !n.is_control(net) {
                by_net.entry(net).or_default().push(k);
            }
        }
    }
    let mut covered = vec![false; targets.len()];
    let mut out = TpiSelection::default();
    while out.points.len() < budget {
        let mut best: Option<(usize, NetId)> = None;
        for (&net, fs) in &by_net {
            let gain = fs.iter().filter(|&&k| !covered[k]).count();
            if gain > best.map_or(0, |b| b.0) {
                best = Some((gain, net));
            }
        }
        let Some((gain, net)) = best else { break };
        let fs = by_net.remove(&net).unwrap_or_default();
        let mut credit = Vec::with_capacity(gain);
        for k in fs {
            if !covered[k] {
                covered[k] = true;
                credit.push(targets[k]);
            }
        }
        out.points.push(ObservationCandidate { net, gain });
        out.covers.push(credit);
    }
    out
}

/// Re-target stimulus blocks at an architecture that appended cells; new
/// cells start at 0.
pub fn extend_blocks(blocks: &[StimulusBlock], cell_count: usize) -> Vec<StimulusBlock> {
    blocks
        .iter()
        .map(|b| {
            let mut b = b.clone();
            b.cells.resize(cell_count, 0);
            b
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopUpLimits {
    /// PODEM calls between fault-list updates.
    pub batch: usize,
    pub backtrack_limit: usize,
    pub max_patterns: Option<usize>,
    /// Seed of the don't-care fill.
    pub seed: u64,
    pub exec: Exec,
    /// Pattern number given to the first kept pattern.
    pub first_pattern: u64,
}

impl Default for TopUpLimits {
    fn default() -> Self {
        TopUpLimits {
            batch: 64,
            backtrack_limit: 10_000,
            max_patterns: None,
            seed: 1,
            exec: Exec::default(),
            first_pattern: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopUpPattern {
    pub cube: TestCube,
    pub cells: Vec<bool>,
    pub pis: Vec<bool>,
    /// Faults (indices into the graded list) this pattern detected first.
    pub detects: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TopUpResult {
    pub patterns: Vec<TopUpPattern>,
    pub untestable: usize,
    pub aborted: usize,
}

/// Stuck-at part of `fl` as its own list, plus the index map back.
fn stuck_view(fl: &FaultList) -> (FaultList, Vec<usize>) {
    let keep: Vec<usize> = (0..fl.len()).filter(|&i| !fl.faults[i].model.is_transition()).collect();
    let mut pos = vec![usize::MAX; fl.len()];
    for (k, &i) in keep.iter().enumerate() {
        pos[i] = k;
    }
    let faults = keep
        .iter()
        .map(|&i| {
            let mut f = fl.faults[i];
            f.class_rep = pos[f.class_rep];
            f
        })
        .collect();
    (FaultList::new(faults), keep)
}

/// Top-up ATPG for the open stuck-at faults of `fl`, applied as single-capture
/// scan loads.
///
/// Targets are taken in fault order, `limits.batch` PODEM runs at a time. The
/// filled cubes of a batch are graded against every open fault and a pattern
/// is kept only if it is the first to detect some fault. Verdicts are written
/// back into `fl`.
pub fn generate_top_up(model: &SimModel, fl: &mut FaultList, limits: &TopUpLimits) -> Result<TopUpResult, TopUpError> {
    let prog = CaptureProgram::single(model.domain_count());
    let (mut sub, back) = stuck_view(fl);
    let mut rng = ChaCha8Rng::seed_from_u64(limits.seed);
    let mut attempted = vec![false; sub.len()];
    let mut res = TopUpResult::default();
    let batch = limits.batch.max(1);
    'outer: loop {
        let todo: Vec<usize> = sub
            .open_representatives()
            .into_iter()
            .filter(|&i| !attempted[i])
            .take(batch)
            .collect();
        if todo.is_empty() {
            break;
        }
        for &i in &todo {
            attempted[i] = true;
        }
        let outcomes = par::map(limits.exec, &todo, |&i| {
            podem(model, &sub.faults[i], i, limits.backtrack_limit)
        });
        let mut cubes = Vec::new();
        for (&i, o) in todo.iter().zip(outcomes) {
            match o? {
                PodemOutcome::Test(c) => cubes.push(c),
                PodemOutcome::Untestable => sub.faults[i].status = FaultStatus::Untestable,
                PodemOutcome::Aborted => sub.faults[i].status = FaultStatus::Aborted,
            }
        }
        sub.sync_classes();
        let filled: Vec<(Vec<bool>, Vec<bool>)> = cubes.iter().map(|c| c.fill(&mut rng)).collect();
        let blocks = StimulusBlock::pack(model, &filled);
        let mut trial = sub.clone();
        let opts = SimOptions {
            drop: true,
            exec: limits.exec,
            first_pattern: 0,
        };
        fault_simulate(model, &prog, &blocks, &mut trial, &opts)?;
        let mut first: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for i in sub.open_representatives() {
            if let FaultStatus::Detected(p) = trial.faults[i].status {
                first.entry(p).or_default().push(i);
            }
        }
        for (p, fs) in first {
            if limits.max_patterns.is_some_and(|m| res.patterns.len() >= m) {
                break;
            }
            let num = limits.first_pattern + res.patterns.len() as u64;
            for &i in &fs {
                sub.faults[i].status = FaultStatus::Detected(num);
            }
            let (cells, pis) = filled[p as usize].clone();
            res.patterns.push(TopUpPattern {
                cube: cubes[p as usize].clone(),
                cells,
                pis,
                detects: fs.iter().map(|&i| back[i]).collect(),
            });
        }
        sub.sync_classes();
        if limits.max_patterns.is_some_and(|m| res.patterns.len() >= m) {
            break 'outer;
        }
    }
    for (k, &i) in back.iter().enumerate() {
        fl.faults[i].status = sub.faults[k].status;
    }
    for p in &mut res.patterns {
        let cube_target = back[p.cube.target];
        p.cube.target = cube_target;
    }
    let reps: BTreeSet<usize> = fl
        .representatives()
        .filter(|&i| fl.faults[i].model == FaultModel::Sa0 || fl.faults[i].model == FaultModel::Sa1)
        .collect();
    res.untestable = reps
        .iter()
        .filter(|&&i| fl.faults[i].status == FaultStatus::Untestable)
        .count();
    res.aborted = reps
        .iter()
        .filter(|&&i| fl.faults[i].status == FaultStatus::Aborted)
        .count();
    Ok(res)
}

/// Scan-load text: one line per pattern, chains head to tail separated by
/// spaces, `X` for don't-cares, then `pi=` for free inputs if any.
pub fn format_patterns(model: &SimModel, patterns: &[TopUpPattern]) -> String {
    let ch = |v: Logic3| match v {
        Logic3::Zero => '0',
        Logic3::One => '1',
        Logic3::X => 'X',
    };
    let mut s = String::new();
    for p in patterns {
        let chains: Vec<String> = model
            .chains()
            .iter()
            .map(|(_, cells)| cells.iter().map(|&c| ch(p.cube.cells[c])).collect())
            .collect();
        s.push_str(&chains.join(" "));
        if !p.cube.pis.is_empty() {
            let pis: String = p.cube.pis.iter().map(|&v| ch(v)).collect();
            let _ = write!(s, " pi={pis}");
        }
        s.push('\n');
    }
    s
}
