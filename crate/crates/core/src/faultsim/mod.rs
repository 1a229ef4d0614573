//! Fault universe, structural collapsing and fault simulation.
//!
//! Fault sites are net stems plus fanout branches (only when a net has more
//! than one sink). Test-control nets carry no faults. Observation taps read
//! stems and add no sites, so the universe does not change across test point
//! insertion.

mod engine;
mod serial;

use std::collections::HashMap;
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{Driver, GateKind, NetId, Netlist, Sink};

pub use engine::{effect_sets, fault_simulate, faulty_state, Scratch, SimOptions};
pub(crate) use engine::{target, Target};
pub use serial::serial_fault_simulate;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaultSimError {
    #[error("transition faults need a double-capture program")]
    NeedsDoubleCapture,
    #[error("pattern width mismatch: {0}")]
    Width(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Site {
    Stem(NetId),
    Branch { net: NetId, sink: Sink },
}

impl Site {
    pub fn net(self) -> NetId {
        match self {
            Site::Stem(n) | Site::Branch { net: n, .. } => n,
        }
    }

    pub fn describe(self, n: &Netlist) -> String {
        match self {
            Site::Stem(net) => n.net_name(net).to_string(),
            Site::Branch {
                net,
                sink: Sink::Gate { gate, pin },
            } => format!("{}>{}.{pin}", n.net_name(net), n.net_name(n.gate(gate).output)),
            Site::Branch {
                net,
                sink: Sink::Output(i),
            } => format!("{}>out{i}", n.net_name(net)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultModel {
    Sa0,
    Sa1,
    /// Slow to rise.
    Str,
    /// Slow to fall.
    Stf,
}

impl FaultModel {
    pub const STUCK: [FaultModel; 2] = [FaultModel::Sa0, FaultModel::Sa1];
    pub const TRANSITION: [FaultModel; 2] = [FaultModel::Str, FaultModel::Stf];

    pub fn is_transition(self) -> bool {
        matches!(self, FaultModel::Str | FaultModel::Stf)
    }

    /// Value the site is pinned to while the fault is active.
    pub fn forced(self) -> bool {
        matches!(self, FaultModel::Sa1 | FaultModel::Stf)
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultModel::Sa0 => "sa0",
            FaultModel::Sa1 => "sa1",
            FaultModel::Str => "str",
            FaultModel::Stf => "stf",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultStatus {
    Undetected,
    /// First detecting pattern number.
    Detected(u64),
    Untestable,
    /// ATPG gave up; still a candidate for simulation.
    Aborted,
}

impl FaultStatus {
    pub fn is_open(self) -> bool {
        matches!(self, FaultStatus::Undetected | FaultStatus::Aborted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fault {
    pub site: Site,
    pub model: FaultModel,
    pub status: FaultStatus,
    pub class_rep: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultList {
    pub faults: Vec<Fault>,
    index: HashMap<(Site, FaultModel), usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FaultCounts {
    pub total: usize,
    pub collapsed: usize,
    pub detected: usize,
    pub untestable: usize,
}

impl FaultList {
    pub fn new(faults: Vec<Fault>) -> Self {
        let index = faults.iter().enumerate().map(|(i, f)| ((f.site, f.model), i)).collect();
        FaultList { faults, index }
    }

    pub fn len(&self) -> usize {
        self.faults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub fn find(&self, site: Site, model: FaultModel) -> Option<usize> {
        self.index.get(&(site, model)).copied()
    }

    pub fn is_rep(&self, i: usize) -> bool {
        self.faults[i].class_rep == i
    }

    pub fn representatives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faults.len()).filter(|&i| self.is_rep(i))
    }

    /// Representatives still worth simulating.
    pub fn open_representatives(&self) -> Vec<usize> {
        self.representatives()
            .filter(|&i| self.faults[i].status.is_open())
            .collect()
    }

    pub fn counts(&self) -> FaultCounts {
        let mut c = FaultCounts {
            total: self.faults.len(),
            ..Default::default()
        };
        for i in self.representatives() {
            c.collapsed += 1;
            match self.faults[i].status {
                FaultStatus::Detected(_) => c.detected += 1,
                FaultStatus::Untestable => c.untestable += 1,
                _ => {}
            }
        }
        c
    }

    /// Copy each representative's status to the rest of its class.
    pub fn sync_classes(&mut self) {
        for i in 0..self.faults.len() {
            let r = self.faults[i].class_rep;
            if r != i {
                self.faults[i].status = self.faults[r].status;
            }
        }
    }

    /// `site<TAB>model<TAB>status<TAB>pattern`, one line per fault.
    pub fn dump(&self, n: &Netlist) -> String {
        let mut s = String::new();
        for f in &self.faults {
            let (status, pat) = match f.status {
                FaultStatus::Undetected => ("undetected", "-".to_string()),
                FaultStatus::Detected(p) => ("detected", p.to_string()),
                FaultStatus::Untestable => ("untestable", "-".to_string()),
                FaultStatus::Aborted => ("aborted", "-".to_string()),
            };
            let _ = writeln!(s, "{}\t{}\t{status}\t{pat}", f.site.describe(n), f.model.name());
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EnumOptions {
    /// Leave out sites on DFT-inserted gates (X blockers).
    pub core_only: bool,
}

fn is_dft_gate(n: &Netlist, gate: usize) -> bool {
    n.gate(gate).inputs.iter().any(|&i| n.is_control(i))
}

/// Fault sites of `n` in net order: the stem, then each branch if the net fans out.
pub fn fault_sites(n: &Netlist, opts: EnumOptions) -> Vec<Site> {
    let mut sites = Vec::new();
    for net in 0..n.net_count() {
        if n.is_control(net) {
            continue;
        }
        if opts.core_only {
            if let Driver::Gate(g) = n.driver(net) {
                if is_dft_gate(n, g) {
                    continue;
                }
            }
        }
        if matches!(n.driver(net), Driver::Input(i) if i == usize::MAX) {
            continue;
        }
        sites.push(Site::Stem(net));
        let fo = n.fanout(net);
        if fo.len() > 1 {
            for &sink in fo {
                if opts.core_only {
                    if let Sink::Gate { gate, .. } = sink {
                        if is_dft_gate(n, gate) {
                            continue;
                        }
                    }
                }
                sites.push(Site::Branch { net, sink });
            }
        }
    }
    sites
}

/// Every site under every model in `models`; each fault is its own class.
pub fn enumerate_faults(n: &Netlist, models: &[FaultModel], opts: EnumOptions) -> FaultList {
    let mut faults = Vec::new();
    for site in fault_sites(n, opts) {
        for &model in models {
            let id = faults.len();
            faults.push(Fault {
                site,
                model,
                status: FaultStatus::Undetected,
                class_rep: id,
            });
        }
    }
    FaultList::new(faults)
}

/// Site seen by input `pin` of `gate`.
pub fn input_site(n: &Netlist, gate: usize, pin: usize) -> Site {
    let net = n.gate(gate).inputs[pin];
    if n.fanout(net).len() > 1 {
        Site::Branch {
            net,
            sink: Sink::Gate { gate, pin },
        }
    } else {
        Site::Stem(net)
    }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            let next = self.0[x];
            self.0[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Merge stuck-at faults by gate-local equivalence. The representative of
/// each class is its lowest index. Transition faults are left alone.
pub fn collapse(fl: &FaultList, n: &Netlist) -> FaultList {
    use FaultModel::{Sa0, Sa1};
    let mut dsu = Dsu((0..fl.len()).collect());
    for (g, gate) in n.gates().iter().enumerate() {
        let (in_m, out_m): (&[(FaultModel, FaultModel)], bool) = match gate.kind {
            GateKind::And => (&[(Sa0, Sa0)], false),
            GateKind::Nand => (&[(Sa0, Sa1)], false),
            GateKind::Or => (&[(Sa1, Sa1)], false),
            GateKind::Nor => (&[(Sa1, Sa0)], false),
            GateKind::Not => (&[(Sa0, Sa1), (Sa1, Sa0)], false),
            GateKind::Buf => (&[(Sa0, Sa0), (Sa1, Sa1)], false),
            GateKind::Xor | GateKind::Xnor | GateKind::Dff => (&[], true),
        };
        if out_m {
            continue;
        }
        let out = Site::Stem(gate.output);
        for pin in 0..gate.inputs.len() {
            let inp = input_site(n, g, pin);
            for &(mi, mo) in in_m {
                if let (Some(a), Some(b)) = (fl.find(inp, mi), fl.find(out, mo)) {
                    dsu.union(a, b);
                }
            }
        }
    }
    let mut out = fl.clone();
    for i in 0..out.faults.len() {
        out.faults[i].class_rep = if out.faults[i].model.is_transition() {
            i
        } else {
            dsu.find(i)
        };
    }
    out
}

/// Percent coverage over collapsed faults. Untestable faults stay in the
/// denominator unless `exclude_untestable`; an empty universe is 100%.
pub fn coverage(fl: &FaultList, exclude_untestable: bool) -> f64 {
    let c = fl.counts();
    let denom = if exclude_untestable {
        c.collapsed - c.untestable
    } else {
        c.collapsed
    };
    if denom == 0 {
        100.0
    } else {
        100.0 * c.detected as f64 / denom as f64
    }
}

/// Two-decimal percentage, e.g. `93.82%`.
pub struct Percent(pub f64);

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}%", self.0)
    }
}
