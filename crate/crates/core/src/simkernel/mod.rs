//! Bit-parallel good-machine simulation of BIST sessions.
//!
//! Every net carries a 64-bit slab: bit `i` is pattern slot `i`. A capture
//! window is a list of events; each event evaluates the combinational logic
//! from the current state and then clocks the cells of the pulsed domains.

mod schedule;
mod session;

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::dft::{CellId, CellInput, ScanArchitecture};
use crate::netlist::{levelize, DomainId, GateKind, Logic3, NetId, Netlist, NetlistError, Sink};
use crate::odc::OdcError;
use crate::tpg::TpgError;

pub use schedule::{CaptureProgram, CaptureSchedule, Pulse, PulsePair, ScheduleError};
pub use session::{
    run_bist_session, run_capture_window, run_shift_window, BistStimulus, DomainHw, SessionOptions, SessionResult,
    SessionState, Trace, TraceWindow, WindowKind,
};

/// Pattern slots per slab.
pub const SLOTS: usize = 64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Tpg(#[from] TpgError),
    #[error(transparent)]
    Odc(#[from] OdcError),
    #[error("unknown value from `{source_net}` reaches observed net `{sink}`")]
    XReach { source_net: String, sink: String },
    #[error("BIST hardware: {0}")]
    Hardware(String),
    #[error("window {window}: {msg}")]
    Window { window: usize, msg: String },
}

/// All nets of a netlist, one slab each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatternBlock {
    pub nets: Vec<u64>,
}

impl PatternBlock {
    pub fn zeros(n: &Netlist) -> Self {
        PatternBlock {
            nets: vec![0; n.net_count()],
        }
    }
}

/// Evaluate all combinational gates of `n` in level order. PI and DFF-output
/// slabs are taken from `block` as given.
pub fn eval_combinational(n: &Netlist, block: &PatternBlock) -> Result<PatternBlock, SimError> {
    let lv = levelize(n)?;
    let mut out = block.clone();
    for &g in &lv.order {
        let gate = n.gate(g);
        out.nets[gate.output] = gate.kind.eval_word(gate.inputs.iter().map(|&i| out.nets[i]));
    }
    Ok(out)
}

/// Where a net's value comes from in test mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Src {
    Op(u32),
    Cell(CellId),
    Pi(u32),
    Const(u64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Op {
    pub kind: GateKind,
    pub start: u32,
    pub len: u32,
    pub output: NetId,
    pub level: u32,
}

#[derive(Clone, Debug)]
pub(crate) struct CellModel {
    pub domain: DomainId,
    pub capture: Option<NetId>,
    pub drives: Option<NetId>,
    pub sink: Option<Sink>,
}

/// Netlist plus scan architecture compiled for slab simulation.
#[derive(Clone, Debug)]
pub struct SimModel {
    pub(crate) ops: Vec<Op>,
    pub(crate) op_inputs: Vec<NetId>,
    pub(crate) op_of_gate: Vec<u32>,
    pub(crate) src: Vec<Src>,
    /// Ops reading each net, deduplicated.
    pub(crate) readers: Vec<Vec<u32>>,
    pub(crate) cells: Vec<CellModel>,
    pub(crate) domain_cells: Vec<Vec<CellId>>,
    pub(crate) chains: Vec<(DomainId, Vec<CellId>)>,
    /// Cells capturing each net.
    pub(crate) capturers: Vec<Vec<CellId>>,
    pub(crate) pis: Vec<NetId>,
    pub(crate) pos: Vec<(usize, NetId)>,
    pub(crate) depth: u32,
    net_count: usize,
}

pub(crate) const NO_OP: u32 = u32::MAX;

impl SimModel {
    pub fn new(n: &Netlist, arch: &ScanArchitecture) -> Result<Self, SimError> {
        let lv = levelize(n)?;
        let mut ops = Vec::with_capacity(lv.order.len());
        let mut op_inputs = Vec::new();
        let mut op_of_gate = vec![NO_OP; n.gates().len()];
        let mut src = vec![Src::Const(0); n.net_count()];
        for &g in &lv.order {
            let gate = n.gate(g);
            op_of_gate[g] = ops.len() as u32;
            src[gate.output] = Src::Op(ops.len() as u32);
            ops.push(Op {
                kind: gate.kind,
                start: op_inputs.len() as u32,
                len: gate.inputs.len() as u32,
                output: gate.output,
                level: lv.levels[g] as u32,
            });
            op_inputs.extend_from_slice(&gate.inputs);
        }
        let mut readers = vec![Vec::new(); n.net_count()];
        for (k, op) in ops.iter().enumerate() {
            for &i in &op_inputs[op.start as usize..(op.start + op.len) as usize] {
                if readers[i].last() != Some(&(k as u32)) {
                    readers[i].push(k as u32);
                }
            }
        }
        let domain_count = n.domains().len().max(arch.domains().last().map_or(0, |d| d + 1));
        let mut domain_cells = vec![Vec::new(); domain_count];
        let mut cells = Vec::with_capacity(arch.cells.len());
        for (id, c) in arch.cells.iter().enumerate() {
            if let Some(q) = c.drives {
                src[q] = Src::Cell(id);
            }
            domain_cells[c.domain].push(id);
            cells.push(CellModel {
                domain: c.domain,
                capture: match c.capture {
                    CellInput::Net(net) => Some(net),
                    CellInput::Hold => None,
                },
                drives: c.drives,
                sink: c.sink,
            });
        }
        let driven: BTreeSet<NetId> = arch.cells.iter().filter_map(|c| c.drives).collect();
        let mut pis = Vec::new();
        for &p in n.primary_inputs() {
            if n.is_control(p) {
                src[p] = Src::Const(if n.control_value(p, true) == Some(true) { !0 } else { 0 });
            } else if !driven.contains(&p) {
                src[p] = Src::Pi(pis.len() as u32);
                pis.push(p);
            }
        }
        let wrapped_pos: BTreeSet<usize> = arch
            .cells
            .iter()
            .filter_map(|c| match c.sink {
                Some(Sink::Output(i)) => Some(i),
                _ => None,
            })
            .collect();
        let pos = n
            .primary_outputs()
            .iter()
            .enumerate()
            .filter(|(i, _)| !wrapped_pos.contains(i))
            .map(|(i, &net)| (i, net))
            .collect();
        let chains = arch.chains.iter().map(|c| (c.domain, c.cells.clone())).collect();
        let mut capturers = vec![Vec::new(); n.net_count()];
        for (id, c) in cells.iter().enumerate() {
            if let Some(net) = c.capture {
                capturers[net].push(id);
            }
        }
        Ok(SimModel {
            ops,
            op_inputs,
            op_of_gate,
            src,
            readers,
            cells,
            domain_cells,
            chains,
            capturers,
            pis,
            pos,
            depth: lv.depth as u32,
            net_count: n.net_count(),
        })
    }

    pub fn net_count(&self) -> usize {
        self.net_count
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn domain_count(&self) -> usize {
        self.domain_cells.len()
    }

    pub fn domain_cells(&self, d: DomainId) -> &[CellId] {
        &self.domain_cells[d]
    }

    /// Primary inputs without a wrapper cell, in netlist order.
    pub fn free_inputs(&self) -> &[NetId] {
        &self.pis
    }

    /// Primary outputs without a wrapper cell: (output index, net).
    pub fn free_outputs(&self) -> &[(usize, NetId)] {
        &self.pos
    }

    pub fn chains(&self) -> &[(DomainId, Vec<CellId>)] {
        &self.chains
    }

    pub fn max_chain_length(&self) -> usize {
        self.chains.iter().map(|(_, c)| c.len()).max().unwrap_or(0)
    }

    #[inline]
    pub(crate) fn op_in(&self, op: &Op) -> &[NetId] {
        &self.op_inputs[op.start as usize..(op.start + op.len) as usize]
    }

    #[inline]
    pub(crate) fn source_value(&self, net: NetId, cells: &[u64], pis: &[u64]) -> Option<u64> {
        match self.src[net] {
            Src::Op(_) => None,
            Src::Cell(c) => Some(cells[c]),
            Src::Pi(i) => Some(pis[i as usize]),
            Src::Const(v) => Some(v),
        }
    }

    /// One combinational frame from cell state and free-PI slabs.
    #[allow(clippy::needless_range_loop)]
    pub fn eval_frame(&self, cells: &[u64], pis: &[u64], values: &mut [u64]) {
        for net in 0..self.net_count {
            if let Some(v) = self.source_value(net, cells, pis) {
                values[net] = v;
            }
        }
        for op in &self.ops {
            let v = op.kind.eval_word(self.op_in(op).iter().map(|&i| values[i]));
            values[op.output] = v;
        }
    }

    /// Load the capture inputs of every cell in `domains` from a frame.
    pub fn capture(&self, domains: &[DomainId], values: &[u64], cells: &mut [u64]) {
        for &d in domains {
            for &c in &self.domain_cells[d] {
                if let Some(net) = self.cells[c].capture {
                    cells[c] = values[net];
                }
            }
        }
    }

    /// Fault-free run of one capture window on a block of stimuli.
    pub fn simulate_good(&self, block: &StimulusBlock, prog: &CaptureProgram) -> GoodRun {
        let mut frames = Vec::with_capacity(prog.events.len());
        let mut states = Vec::with_capacity(prog.events.len() + 1);
        let mut state = block.cells.clone();
        states.push(state.clone());
        for ev in &prog.events {
            let mut values = vec![0u64; self.net_count];
            self.eval_frame(&state, &block.pis, &mut values);
            self.capture(ev, &values, &mut state);
            frames.push(values);
            states.push(state.clone());
        }
        let pos = if prog.observe_pos {
            let f = &frames[0];
            self.pos.iter().map(|&(_, net)| f[net]).collect()
        } else {
            Vec::new()
        };
        GoodRun { frames, states, pos }
    }
}

/// Up to 64 stimuli: initial cell states plus free-PI values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StimulusBlock {
    pub count: usize,
    pub cells: Vec<u64>,
    pub pis: Vec<u64>,
}

impl StimulusBlock {
    pub fn zeros(model: &SimModel, count: usize) -> Self {
        assert!(count <= SLOTS);
        StimulusBlock {
            count,
            cells: vec![0; model.cell_count()],
            pis: vec![0; model.free_inputs().len()],
        }
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        slot_mask(self.count)
    }

    /// Pack scalar patterns (cell bits, free-PI bits) into blocks of 64.
    pub fn pack(model: &SimModel, patterns: &[(Vec<bool>, Vec<bool>)]) -> Vec<StimulusBlock> {
        patterns
            .chunks(SLOTS)
            .map(|chunk| {
                let mut b = StimulusBlock::zeros(model, chunk.len());
                for (slot, (cells, pis)) in chunk.iter().enumerate() {
                    for (c, &v) in cells.iter().enumerate() {
                        b.cells[c] |= (v as u64) << slot;
                    }
                    for (i, &v) in pis.iter().enumerate() {
                        b.pis[i] |= (v as u64) << slot;
                    }
                }
                b
            })
            .collect()
    }
}

#[inline]
pub(crate) fn slot_mask(count: usize) -> u64 {
    if count >= 64 {
        !0
    } else {
        (1u64 << count) - 1
    }
}

/// Good-machine frames and states of one block.
#[derive(Clone, Debug)]
pub struct GoodRun {
    /// Net values evaluated before each event.
    pub frames: Vec<Vec<u64>>,
    /// `states[0]` is the stimulus, `states[e + 1]` the state after event `e`.
    pub states: Vec<Vec<u64>>,
    /// Free-PO values (single-capture programs only).
    pub pos: Vec<u64>,
}

impl GoodRun {
    pub fn response(&self) -> &[u64] {
        self.states.last().unwrap()
    }
}

/// Nets held constant in test mode (control inputs and their cones).
pub fn tied_nets(n: &Netlist) -> Result<Vec<Option<bool>>, SimError> {
    let lv = levelize(n)?;
    let mut v = vec![Logic3::X; n.net_count()];
    for &p in n.primary_inputs() {
        if let Some(b) = n.control_value(p, true) {
            v[p] = Logic3::from_bool(b);
        }
    }
    for &g in &lv.order {
        let gate = n.gate(g);
        v[gate.output] = Logic3::eval(gate.kind, gate.inputs.iter().map(|&i| v[i]));
    }
    Ok(v.into_iter().map(Logic3::to_bool).collect())
}

/// Fail if an unblocked non-scan flip-flop without reset can reach any
/// observed net. With `observe_pos`, free primary outputs count as observed.
pub fn check_x_reach(n: &Netlist, arch: &ScanArchitecture, observe_pos: bool) -> Result<(), SimError> {
    let tied = tied_nets(n)?;
    let mut sinks: BTreeSet<NetId> = arch
        .cells
        .iter()
        .filter_map(|c| match c.capture {
            CellInput::Net(net) => Some(net),
            CellInput::Hold => None,
        })
        .collect();
    if observe_pos {
        let model = SimModel::new(n, arch)?;
        sinks.extend(model.free_outputs().iter().map(|&(_, net)| net));
    }
    for ff in n.flip_flops() {
        if ff.scannable || ff.has_reset {
            continue;
        }
        let q = n.gate(ff.gate).output;
        if n.x_blocked().contains(&q) {
            continue;
        }
        let mut seen = vec![false; n.net_count()];
        let mut queue = VecDeque::from([q]);
        seen[q] = true;
        while let Some(net) = queue.pop_front() {
            if sinks.contains(&net) {
                return Err(SimError::XReach {
                    source_net: n.net_name(q).to_string(),
                    sink: n.net_name(net).to_string(),
                });
            }
            for s in n.fanout(net) {
                if let Sink::Gate { gate, .. } = *s {
                    let g = n.gate(gate);
                    if g.kind.is_sequential() || tied[g.output].is_some() || seen[g.output] {
                        continue;
                    }
                    seen[g.output] = true;
                    queue.push_back(g.output);
                }
            }
        }
    }
    Ok(())
}
