//! Parallel-pattern single-fault simulation with event-driven faulty frames.

use std::collections::BTreeSet;

use crate::dft::CellId;
use crate::netlist::{NetId, Sink};
use crate::par::{self, Exec};
use crate::simkernel::{CaptureProgram, GoodRun, SimModel, StimulusBlock, NO_OP};

use super::{Fault, FaultList, FaultModel, FaultSimError, FaultStatus, Site};

/// Where a fault acts in the compiled model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Target {
    Stem(NetId),
    Pin { op: u32, pin: u32, net: NetId },
    Capture { cell: CellId, net: NetId },
    Po { idx: usize, net: NetId },
    Inert,
}

pub(crate) fn target(model: &SimModel, site: Site) -> Target {
    match site {
        Site::Stem(net) => Target::Stem(net),
        Site::Branch {
            net,
            sink: Sink::Gate { gate, pin },
        } => {
            let op = model.op_of_gate[gate];
            if op != NO_OP {
                return Target::Pin {
                    op,
                    pin: pin as u32,
                    net,
                };
            }
            let sink = Sink::Gate { gate, pin };
            match model.cells.iter().position(|c| c.sink == Some(sink)) {
                Some(cell) => Target::Capture { cell, net },
                None => Target::Inert,
            }
        }
        Site::Branch {
            net,
            sink: sink @ Sink::Output(i),
        } => {
            if let Some(cell) = model.cells.iter().position(|c| c.sink == Some(sink)) {
                Target::Capture { cell, net }
            } else if let Some(idx) = model.pos.iter().position(|&(k, _)| k == i) {
                Target::Po { idx, net }
            } else {
                Target::Inert
            }
        }
    }
}

/// Per-worker buffers for faulty-machine simulation.
#[derive(Clone, Debug)]
pub struct Scratch {
    fv: Vec<u64>,
    fstamp: Vec<u32>,
    queued: Vec<u32>,
    buckets: Vec<Vec<u32>>,
    touched: Vec<NetId>,
    cstate: Vec<u64>,
    cmark: Vec<u32>,
    diff: Vec<CellId>,
    next_diff: Vec<CellId>,
    frame: u32,
    fault: u32,
}

impl Scratch {
    pub fn new(model: &SimModel) -> Self {
        Scratch {
            fv: vec![0; model.net_count()],
            fstamp: vec![0; model.net_count()],
            queued: vec![0; model.ops.len()],
            buckets: vec![Vec::new(); model.depth as usize + 1],
            touched: Vec::new(),
            cstate: vec![0; model.cell_count()],
            cmark: vec![0; model.cell_count()],
            diff: Vec::new(),
            next_diff: Vec::new(),
            frame: 0,
            fault: 0,
        }
    }

    fn next_frame(&mut self) {
        if self.frame == u32::MAX {
            self.fstamp.iter_mut().for_each(|s| *s = 0);
            self.queued.iter_mut().for_each(|s| *s = 0);
            self.frame = 0;
        }
        self.frame += 1;
        self.touched.clear();
    }

    fn next_fault(&mut self) {
        if self.fault == u32::MAX {
            self.cmark.iter_mut().for_each(|s| *s = 0);
            self.fault = 0;
        }
        self.fault += 1;
        self.diff.clear();
    }

    #[inline]
    fn get(&self, g: &[u64], net: NetId) -> u64 {
        if self.fstamp[net] == self.frame {
            self.fv[net]
        } else {
            g[net]
        }
    }

    #[inline]
    fn schedule(&mut self, model: &SimModel, op: u32) {
        if self.queued[op as usize] != self.frame {
            self.queued[op as usize] = self.frame;
            self.buckets[model.ops[op as usize].level as usize].push(op);
        }
    }

    #[inline]
    fn set(&mut self, model: &SimModel, g: &[u64], net: NetId, v: u64) {
        if self.get(g, net) == v {
            return;
        }
        if self.fstamp[net] != self.frame {
            self.fstamp[net] = self.frame;
            self.touched.push(net);
        }
        self.fv[net] = v;
        for &r in &model.readers[net] {
            self.schedule(model, r);
        }
    }

    /// Faulty value of a cell given the good state.
    #[inline]
    fn cell(&self, good: &[u64], c: CellId) -> u64 {
        if self.cmark[c] == self.fault {
            self.cstate[c]
        } else {
            good[c]
        }
    }
}

#[inline]
fn force(v: u64, mask: u64, to: bool) -> u64 {
    if to {
        v | mask
    } else {
        v & !mask
    }
}

struct Outcome {
    /// Slots where the final cell state or an observed PO differs.
    detect: u64,
}

/// Simulate one fault on one block. On return the scratch holds the faulty
/// final state of every differing cell.
fn run_fault(
    model: &SimModel,
    prog: &CaptureProgram,
    block: &StimulusBlock,
    good: &GoodRun,
    fault: &Fault,
    s: &mut Scratch,
    mut effects: Option<(&[u32], &mut BTreeSet<NetId>)>,
) -> Outcome {
    let tgt = target(model, fault.site);
    let valid = block.mask();
    let to = fault.model.forced();
    s.next_fault();
    let mut po_diff = 0u64;
    for (e, domains) in prog.events.iter().enumerate() {
        let g = &good.frames[e];
        // active slots of the fault during this frame
        let mask = if fault.model.is_transition() {
            prog.pairs
                .iter()
                .filter(|p| p.capture == e)
                .map(|p| {
                    let net = fault.site.net();
                    let (a, b) = (good.frames[p.launch][net], g[net]);
                    match fault.model {
                        FaultModel::Str => !a & b,
                        _ => a & !b,
                    }
                })
                .fold(0, |m, x| m | x)
                & valid
        } else {
            !0
        };
        s.next_frame();
        for k in 0..s.diff.len() {
            let c = s.diff[k];
            if let Some(q) = model.cells[c].drives {
                let v = s.cstate[c];
                s.set(model, g, q, v);
            }
        }
        if mask != 0 {
            match tgt {
                Target::Stem(net) => {
                    let v = force(s.get(g, net), mask, to);
                    s.set(model, g, net, v);
                }
                Target::Pin { op, .. } => s.schedule(model, op),
                _ => {}
            }
        }
        for lvl in 1..s.buckets.len() {
            let mut bucket = std::mem::take(&mut s.buckets[lvl]);
            for &op in &bucket {
                let o = &model.ops[op as usize];
                let ins = model.op_in(o);
                let mut v = match tgt {
                    Target::Pin { op: fop, pin, net } if fop == op && mask != 0 => {
                        o.kind.eval_word(ins.iter().enumerate().map(|(k, &i)| {
                            let x = s.get(g, i);
                            if k as u32 == pin {
                                debug_assert_eq!(i, net);
                                force(x, mask, to)
                            } else {
                                x
                            }
                        }))
                    }
                    _ => o.kind.eval_word(ins.iter().map(|&i| s.get(g, i))),
                };
                if mask != 0 && tgt == Target::Stem(o.output) {
                    v = force(v, mask, to);
                }
                s.set(model, g, o.output, v);
            }
            bucket.clear();
            s.buckets[lvl] = bucket;
        }
        if let Some((event_of, set)) = effects.as_mut() {
            for &t in &s.touched {
                if event_of[t] == e as u32 && (s.fv[t] ^ g[t]) & valid != 0 {
                    set.insert(t);
                }
            }
        }
        if prog.observe_pos && e == 0 {
            for (k, &(_, net)) in model.pos.iter().enumerate() {
                let mut v = s.get(g, net);
                if let Target::Po { idx, .. } = tgt {
                    if idx == k && mask != 0 {
                        v = force(v, mask, to);
                    }
                }
                po_diff |= v ^ good.pos[k];
            }
        }
        // capture: only cells of pulsed domains whose input changed, or the target cell
        let next_good = &good.states[e + 1];
        s.next_diff.clear();
        for k in 0..s.diff.len() {
            let c = s.diff[k];
            if !domains.contains(&model.cells[c].domain) || model.cells[c].capture.is_none() {
                s.next_diff.push(c);
            } else {
                s.cmark[c] = 0;
            }
        }
        let fault_id = s.fault;
        let load = |s: &mut Scratch, c: CellId, v: u64| {
            if v != next_good[c] {
                if s.cmark[c] != fault_id {
                    s.cmark[c] = fault_id;
                    s.next_diff.push(c);
                }
                s.cstate[c] = v;
            }
        };
        for t in 0..s.touched.len() {
            let net = s.touched[t];
            for &c in &model.capturers[net] {
                if domains.contains(&model.cells[c].domain) {
                    let mut v = s.fv[net];
                    if let Target::Capture { cell, .. } = tgt {
                        if cell == c && mask != 0 {
                            v = force(v, mask, to);
                        }
                    }
                    load(s, c, v);
                }
            }
        }
        if let Target::Capture { cell, net } = tgt {
            if mask != 0 && domains.contains(&model.cells[cell].domain) {
                let v = force(s.get(g, net), mask, to);
                load(s, cell, v);
            }
        }
        std::mem::swap(&mut s.diff, &mut s.next_diff);
    }
    let fin = good.response();
    let mut detect = po_diff;
    for &c in &s.diff {
        detect |= s.cstate[c] ^ fin[c];
    }
    Outcome { detect: detect & valid }
}

/// Final cell states of the faulty machine on one block.
pub fn faulty_state(
    model: &SimModel,
    prog: &CaptureProgram,
    block: &StimulusBlock,
    good: &GoodRun,
    fault: &Fault,
    s: &mut Scratch,
) -> Vec<u64> {
    run_fault(model, prog, block, good, fault, s, None);
    let mut out = good.response().to_vec();
    for &c in &s.diff {
        out[c] = s.cell(good.response(), c);
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    /// Stop simulating a fault once detected.
    pub drop: bool,
    pub exec: Exec,
    /// Pattern number of the first slot of the first block.
    pub first_pattern: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            drop: true,
            exec: Exec::default(),
            first_pattern: 0,
        }
    }
}

/// Grade the open representatives of `fl` against `blocks`, recording the
/// first detecting pattern of each.
pub fn fault_simulate<'a, I>(
    model: &SimModel,
    prog: &CaptureProgram,
    blocks: I,
    fl: &mut FaultList,
    opts: &SimOptions,
) -> Result<(), FaultSimError>
where
    I: IntoIterator<Item = &'a StimulusBlock>,
{
    let mut active = fl.open_representatives();
    if !prog.is_double() && active.iter().any(|&i| fl.faults[i].model.is_transition()) {
        return Err(FaultSimError::NeedsDoubleCapture);
    }
    let mut base = opts.first_pattern;
    for block in blocks {
        if block.cells.len() != model.cell_count() || block.pis.len() != model.free_inputs().len() {
            return Err(FaultSimError::Width(format!(
                "block has {} cells / {} inputs, model has {} / {}",
                block.cells.len(),
                block.pis.len(),
                model.cell_count(),
                model.free_inputs().len()
            )));
        }
        if active.is_empty() {
            break;
        }
        let good = model.simulate_good(block, prog);
        let faults = &fl.faults;
        let masks = par::map_init(
            opts.exec,
            &active,
            || Scratch::new(model),
            |s, &fi| run_fault(model, prog, block, &good, &faults[fi], s, None).detect,
        );
        for (&fi, &m) in active.iter().zip(&masks) {
            if m != 0 && fl.faults[fi].status.is_open() {
                fl.faults[fi].status = FaultStatus::Detected(base + m.trailing_zeros() as u64);
            }
        }
        if opts.drop {
            active.retain(|&fi| fl.faults[fi].status.is_open());
        }
        base += block.count as u64;
    }
    fl.sync_classes();
    Ok(())
}

/// For each fault, nets where its effect appears in the frame of event
/// `event_of[net]` in at least one pattern.
pub fn effect_sets(
    model: &SimModel,
    prog: &CaptureProgram,
    blocks: &[StimulusBlock],
    faults: &[Fault],
    event_of: &[u32],
    exec: Exec,
) -> Vec<BTreeSet<NetId>> {
    let goods: Vec<GoodRun> = blocks.iter().map(|b| model.simulate_good(b, prog)).collect();
    par::map_init(
        exec,
        faults,
        || Scratch::new(model),
        |s, f| {
            let mut set = BTreeSet::new();
            for (b, good) in blocks.iter().zip(&goods) {
                run_fault(model, prog, b, good, f, s, Some((event_of, &mut set)));
            }
            set
        },
    )
}
