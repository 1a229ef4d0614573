//! Elaborated gate-level netlists.
//!
//! Nets and gates are dense integer ids so simulators can index flat arrays;
//! net names are kept verbatim and are the identity used by rules and reports.

mod bench;
mod domains;
mod levelize;
mod random;
mod xsource;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{parse_bench, write_bench};
pub use domains::{assign_clock_domains, set_skew, ClockDomain, DomainRule};
pub use levelize::{levelize, Levelization};
pub use random::{random_netlist, RandomSpec};
pub use xsource::{find_x_sources, Logic3, XSourceOptions};

pub type NetId = usize;
pub type GateId = usize;
pub type DomainId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetlistError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown gate kind `{kind}`")]
    UnknownGate { line: usize, kind: String },
    #[error("line {line}: gate `{kind}` driving `{net}` needs {expected} input(s), got {got}")]
    Arity {
        line: usize,
        kind: String,
        net: String,
        expected: &'static str,
        got: usize,
    },
    #[error("net `{net}` is used but never driven")]
    Undriven { net: String },
    #[error("net `{net}` has more than one driver")]
    DuplicateDriver { net: String },
    #[error("combinational cycle through `{net}`")]
    CombinationalCycle { net: String },
    #[error("flip-flop `{ff}` matches no clock-domain rule")]
    UnmatchedFlipFlop { ff: String },
    #[error("rule `{pattern}` references undeclared clock domain {domain}")]
    UndeclaredDomain { pattern: String, domain: DomainId },
    #[error("invalid glob pattern `{pattern}`: {msg}")]
    BadPattern { pattern: String, msg: String },
    #[error("invalid clock domains: {0}")]
    BadDomains(String),
    #[error("no net named `{0}`")]
    UnknownNet(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    And,
    Nand,
    Or,
    Nor,
    Not,
    Buf,
    Xor,
    Xnor,
    Dff,
}

impl GateKind {
    pub const ALL: [GateKind; 9] = [
        GateKind::And,
        GateKind::Nand,
        GateKind::Or,
        GateKind::Nor,
        GateKind::Not,
        GateKind::Buf,
        GateKind::Xor,
        GateKind::Xnor,
        GateKind::Dff,
    ];

    /// Case-insensitive `.bench` keyword lookup (`BUFF` is accepted for `BUF`).
    pub fn from_keyword(s: &str) -> Option<GateKind> {
        Some(match s.to_ascii_uppercase().as_str() {
            "AND" => GateKind::And,
            "NAND" => GateKind::Nand,
            "OR" => GateKind::Or,
            "NOR" => GateKind::Nor,
            "NOT" | "INV" => GateKind::Not,
            "BUF" | "BUFF" => GateKind::Buf,
            "XOR" => GateKind::Xor,
            "XNOR" => GateKind::Xnor,
            "DFF" => GateKind::Dff,
            _ => return None,
        })
    }

    pub fn keyword(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Nand => "NAND",
            GateKind::Or => "OR",
            GateKind::Nor => "NOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUF",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Dff => "DFF",
        }
    }

    pub fn is_sequential(self) -> bool {
        self == GateKind::Dff
    }

    /// Output inversion relative to the base AND/OR/XOR/BUF function.
    pub fn is_inverting(self) -> bool {
        matches!(self, GateKind::Nand | GateKind::Nor | GateKind::Not | GateKind::Xnor)
    }

    /// Input value that alone determines the output, if any.
    pub fn controlling_value(self) -> Option<bool> {
        match self {
            GateKind::And | GateKind::Nand => Some(false),
            GateKind::Or | GateKind::Nor => Some(true),
            _ => None,
        }
    }

    /// Evaluate over 64 pattern slots at once.
    #[inline]
    pub fn eval_word(self, mut inputs: impl Iterator<Item = u64>) -> u64 {
        let first = inputs.next().unwrap_or(0);
        match self {
            GateKind::And => inputs.fold(first, |a, b| a & b),
            GateKind::Nand => !inputs.fold(first, |a, b| a & b),
            GateKind::Or => inputs.fold(first, |a, b| a | b),
            GateKind::Nor => !inputs.fold(first, |a, b| a | b),
            GateKind::Xor => inputs.fold(first, |a, b| a ^ b),
            GateKind::Xnor => !inputs.fold(first, |a, b| a ^ b),
            GateKind::Not => !first,
            GateKind::Buf | GateKind::Dff => first,
        }
    }

    fn arity_ok(self, n: usize) -> Option<&'static str> {
        match self {
            GateKind::Not | GateKind::Buf | GateKind::Dff if n != 1 => Some("exactly 1"),
            _ if n == 0 => Some("at least 1"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlipFlop {
    pub gate: GateId,
    pub domain: Option<DomainId>,
    pub has_reset: bool,
    pub scannable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Driver {
    Input(usize),
    Gate(GateId),
}

/// A consumer of a net: a gate input pin or a primary-output port.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sink {
    Gate { gate: GateId, pin: usize },
    Output(usize),
}

#[derive(Clone, Debug)]
pub struct Netlist {
    names: Vec<String>,
    index: HashMap<String, NetId>,
    gates: Vec<Gate>,
    drivers: Vec<Driver>,
    inputs: Vec<NetId>,
    outputs: Vec<NetId>,
    ffs: Vec<FlipFlop>,
    ff_of_gate: HashMap<GateId, usize>,
    fanouts: Vec<Vec<Sink>>,
    domains: Vec<ClockDomain>,
    test_mode: Option<NetId>,
    control: BTreeSet<NetId>,
    x_blocked: BTreeSet<NetId>,
}

impl Netlist {
    pub fn net_count(&self) -> usize {
        self.names.len()
    }

    pub fn net_name(&self, net: NetId) -> &str {
        &self.names[net]
    }

    pub fn net_id(&self, name: &str) -> Option<NetId> {
        self.index.get(name).copied()
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn gate(&self, id: GateId) -> &Gate {
        &self.gates[id]
    }

    /// Combinational gates only.
    pub fn logic_gate_count(&self) -> usize {
        self.gates.iter().filter(|g| !g.kind.is_sequential()).count()
    }

    pub fn driver(&self, net: NetId) -> Driver {
        self.drivers[net]
    }

    pub fn fanout(&self, net: NetId) -> &[Sink] {
        &self.fanouts[net]
    }

    pub fn primary_inputs(&self) -> &[NetId] {
        &self.inputs
    }

    pub fn primary_outputs(&self) -> &[NetId] {
        &self.outputs
    }

    pub fn flip_flops(&self) -> &[FlipFlop] {
        &self.ffs
    }

    pub fn flip_flop_of_gate(&self, gate: GateId) -> Option<&FlipFlop> {
        self.ff_of_gate.get(&gate).map(|&i| &self.ffs[i])
    }

    /// Name of a flip-flop: its Q net.
    pub fn ff_name(&self, ff: &FlipFlop) -> &str {
        self.net_name(self.gates[ff.gate].output)
    }

    pub fn domains(&self) -> &[ClockDomain] {
        &self.domains
    }

    /// Test-mode control input, present once DFT logic needs it.
    pub fn test_mode(&self) -> Option<NetId> {
        self.test_mode
    }

    /// Test control nets (held constant in test mode, excluded from fault lists).
    pub fn is_control(&self, net: NetId) -> bool {
        self.control.contains(&net)
    }

    pub fn control_nets(&self) -> impl Iterator<Item = NetId> + '_ {
        self.control.iter().copied()
    }

    /// Nets sitting behind an X blocker (the raw source side).
    pub fn x_blocked(&self) -> &BTreeSet<NetId> {
        &self.x_blocked
    }

    /// Value of a control net with `test_mode` asserted or not.
    pub fn control_value(&self, net: NetId, test_mode: bool) -> Option<bool> {
        if Some(net) == self.test_mode {
            return Some(test_mode);
        }
        None
    }

    pub fn set_scannable(&mut self, ff_name: &str, scannable: bool) -> Result<(), NetlistError> {
        let i = self.ff_index_by_name(ff_name)?;
        self.ffs[i].scannable = scannable;
        Ok(())
    }

    pub fn set_reset(&mut self, ff_name: &str, has_reset: bool) -> Result<(), NetlistError> {
        let i = self.ff_index_by_name(ff_name)?;
        self.ffs[i].has_reset = has_reset;
        Ok(())
    }

    /// Apply `f` to every flip-flop whose name matches the glob.
    pub fn update_matching<F: FnMut(&mut FlipFlop)>(&mut self, pattern: &str, mut f: F) -> Result<usize, NetlistError> {
        let pat = glob::Pattern::new(pattern).map_err(|e| NetlistError::BadPattern {
            pattern: pattern.to_string(),
            msg: e.to_string(),
        })?;
        let mut n = 0;
        for i in 0..self.ffs.len() {
            let name = &self.names[self.gates[self.ffs[i].gate].output];
            if pat.matches(name) {
                f(&mut self.ffs[i]);
                n += 1;
            }
        }
        Ok(n)
    }

    fn ff_index_by_name(&self, name: &str) -> Result<usize, NetlistError> {
        self.ffs
            .iter()
            .position(|ff| self.names[self.gates[ff.gate].output] == name)
            .ok_or_else(|| NetlistError::UnknownNet(name.to_string()))
    }

    pub(crate) fn set_domains(&mut self, domains: Vec<ClockDomain>) {
        self.domains = domains;
    }

    pub(crate) fn ffs_mut(&mut self) -> &mut [FlipFlop] {
        &mut self.ffs
    }

    /// Unique net name derived from `base`.
    pub(crate) fn fresh_name(&self, base: &str) -> String {
        if !self.index.contains_key(base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| !self.index.contains_key(n))
            .unwrap()
    }

    pub(crate) fn add_net(&mut self, name: String) -> NetId {
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.drivers.push(Driver::Input(usize::MAX));
        self.fanouts.push(Vec::new());
        id
    }

    pub(crate) fn add_input(&mut self, name: String) -> NetId {
        let net = self.add_net(name);
        self.drivers[net] = Driver::Input(self.inputs.len());
        self.inputs.push(net);
        net
    }

    pub(crate) fn add_gate(&mut self, kind: GateKind, inputs: Vec<NetId>, output: NetId) -> GateId {
        let id = self.gates.len();
        for (pin, &n) in inputs.iter().enumerate() {
            self.fanouts[n].push(Sink::Gate { gate: id, pin });
        }
        self.drivers[output] = Driver::Gate(id);
        self.gates.push(Gate { kind, inputs, output });
        id
    }

    /// Move the driver of `from` onto `to`; `from` becomes undriven until reassigned.
    pub(crate) fn move_driver(&mut self, from: NetId, to: NetId) {
        match self.drivers[from] {
            Driver::Gate(g) => self.gates[g].output = to,
            Driver::Input(i) => self.inputs[i] = to,
        }
        self.drivers[to] = self.drivers[from];
        self.drivers[from] = Driver::Input(usize::MAX);
    }

    pub(crate) fn ensure_test_mode(&mut self) -> NetId {
        if let Some(t) = self.test_mode {
            return t;
        }
        let name = self.fresh_name("test_mode");
        let net = self.add_input(name);
        self.test_mode = Some(net);
        self.control.insert(net);
        net
    }

    pub(crate) fn mark_control(&mut self, net: NetId) {
        self.control.insert(net);
    }

    pub(crate) fn mark_x_blocked(&mut self, net: NetId) {
        self.x_blocked.insert(net);
    }

    /// Recompute fanout lists and the FF index after structural edits.
    pub(crate) fn refresh(&mut self) {
        for f in &mut self.fanouts {
            f.clear();
        }
        for (id, g) in self.gates.iter().enumerate() {
            for (pin, &n) in g.inputs.iter().enumerate() {
                self.fanouts[n].push(Sink::Gate { gate: id, pin });
            }
        }
        for (i, &o) in self.outputs.iter().enumerate() {
            self.fanouts[o].push(Sink::Output(i));
        }
        self.ff_of_gate = self.ffs.iter().enumerate().map(|(i, ff)| (ff.gate, i)).collect();
    }
}

/// Incremental construction with full validation in [`NetlistBuilder::build`].
#[derive(Clone, Default)]
pub struct NetlistBuilder {
    names: Vec<String>,
    index: HashMap<String, NetId>,
    inputs: Vec<(NetId, usize)>,
    outputs: Vec<NetId>,
    gates: Vec<(GateKind, Vec<NetId>, NetId, usize)>,
}

impl NetlistBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn net(&mut self, name: &str) -> NetId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn input(&mut self, name: &str) -> &mut Self {
        self.input_at(name, 0);
        self
    }

    pub fn output(&mut self, name: &str) -> &mut Self {
        let n = self.net(name);
        self.outputs.push(n);
        self
    }

    pub fn gate(&mut self, kind: GateKind, output: &str, inputs: &[&str]) -> &mut Self {
        self.gate_at(kind, output, inputs, 0);
        self
    }

    pub(crate) fn input_at(&mut self, name: &str, line: usize) {
        let n = self.net(name);
        self.inputs.push((n, line));
    }

    pub(crate) fn gate_at(&mut self, kind: GateKind, output: &str, inputs: &[&str], line: usize) {
        let out = self.net(output);
        let ins = inputs.iter().map(|i| self.net(i)).collect();
        self.gates.push((kind, ins, out, line));
    }

    pub fn build(self) -> Result<Netlist, NetlistError> {
        const NONE: Driver = Driver::Input(usize::MAX);
        let mut drivers = vec![NONE; self.names.len()];
        let dup = |n: NetId| NetlistError::DuplicateDriver {
            net: self.names[n].clone(),
        };
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for &(n, _) in &self.inputs {
            if drivers[n] != NONE {
                return Err(dup(n));
            }
            drivers[n] = Driver::Input(inputs.len());
            inputs.push(n);
        }
        let mut gates = Vec::with_capacity(self.gates.len());
        let mut ffs = Vec::new();
        for (kind, ins, out, line) in self.gates {
            if let Some(expected) = kind.arity_ok(ins.len()) {
                return Err(NetlistError::Arity {
                    line,
                    kind: kind.keyword().to_string(),
                    net: self.names[out].clone(),
                    expected,
                    got: ins.len(),
                });
            }
            if drivers[out] != NONE {
                return Err(dup(out));
            }
            drivers[out] = Driver::Gate(gates.len());
            if kind == GateKind::Dff {
                ffs.push(FlipFlop {
                    gate: gates.len(),
                    domain: None,
                    has_reset: false,
                    scannable: true,
                });
            }
            gates.push(Gate {
                kind,
                inputs: ins,
                output: out,
            });
        }
        if let Some(n) = drivers.iter().position(|&d| d == NONE) {
            return Err(NetlistError::Undriven {
                net: self.names[n].clone(),
            });
        }
        let mut nl = Netlist {
            fanouts: vec![Vec::new(); self.names.len()],
            names: self.names,
            index: self.index,
            gates,
            drivers,
            inputs,
            outputs: self.outputs,
            ffs,
            ff_of_gate: HashMap::new(),
            domains: Vec::new(),
            test_mode: None,
            control: BTreeSet::new(),
            x_blocked: BTreeSet::new(),
        };
        nl.refresh();
        levelize(&nl)?;
        Ok(nl)
    }
}
