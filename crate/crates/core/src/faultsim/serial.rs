//! Reference fault simulator: one fault, one pattern, scalar values.
//!
//! Works on the netlist and scan architecture directly and evaluates frames
//! by repeated sweeps until every net settles, so it shares no code with the
//! compiled slab simulator.

use std::collections::HashMap;

use crate::dft::{CellInput, ScanArchitecture};
use crate::netlist::{Driver, GateKind, NetId, Netlist, Sink};
use crate::simkernel::CaptureProgram;

use super::{Fault, FaultList, FaultModel, FaultStatus, Site};

struct Ctx<'a> {
    n: &'a Netlist,
    arch: &'a ScanArchitecture,
    driven_by: HashMap<NetId, usize>,
    free_pi: HashMap<NetId, usize>,
    free_po: Vec<(usize, NetId)>,
}

impl<'a> Ctx<'a> {
    fn new(n: &'a Netlist, arch: &'a ScanArchitecture) -> Self {
        let driven_by: HashMap<NetId, usize> = arch
            .cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.drives.map(|d| (d, i)))
            .collect();
        let mut free_pi = HashMap::new();
        for &p in n.primary_inputs() {
            if !n.is_control(p) && !driven_by.contains_key(&p) {
                let k = free_pi.len();
                free_pi.insert(p, k);
            }
        }
        let free_po = n
            .primary_outputs()
            .iter()
            .enumerate()
            .filter(|&(i, _)| !arch.cells.iter().any(|c| c.sink == Some(Sink::Output(i))))
            .map(|(i, &net)| (i, net))
            .collect();
        Ctx {
            n,
            arch,
            driven_by,
            free_pi,
            free_po,
        }
    }

    fn eval_gate(kind: GateKind, ins: &[bool]) -> bool {
        let v = match kind {
            GateKind::And | GateKind::Nand => ins.iter().all(|&b| b),
            GateKind::Or | GateKind::Nor => ins.iter().any(|&b| b),
            GateKind::Xor | GateKind::Xnor => ins.iter().filter(|&&b| b).count() % 2 == 1,
            GateKind::Not | GateKind::Buf | GateKind::Dff => ins[0],
        };
        match kind {
            GateKind::Nand | GateKind::Nor | GateKind::Xnor | GateKind::Not => !v,
            _ => v,
        }
    }

    /// Settle all nets. `force` pins a site to a value.
    fn frame(&self, cells: &[bool], pis: &[bool], force: Option<(Site, bool)>) -> Vec<bool> {
        let n = self.n;
        let stem = |net: NetId, v: bool| match force {
            Some((Site::Stem(s), f)) if s == net => f,
            _ => v,
        };
        let mut val: Vec<Option<bool>> = vec![None; n.net_count()];
        for (net, slot) in val.iter_mut().enumerate() {
            let src = match n.driver(net) {
                Driver::Input(_) => Some(if let Some(v) = n.control_value(net, true) {
                    v
                } else if let Some(&c) = self.driven_by.get(&net) {
                    cells[c]
                } else {
                    self.free_pi.get(&net).is_some_and(|&k| pis[k])
                }),
                Driver::Gate(g) if n.gate(g).kind == GateKind::Dff => {
                    Some(self.driven_by.get(&net).is_some_and(|&c| cells[c]))
                }
                Driver::Gate(_) => None,
            };
            *slot = src.map(|v| stem(net, v));
        }
        loop {
            let mut changed = false;
            for (g, gate) in n.gates().iter().enumerate() {
                if gate.kind == GateKind::Dff || val[gate.output].is_some() {
                    continue;
                }
                let ins: Option<Vec<bool>> = gate
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(pin, &i)| {
                        val[i].map(|v| match force {
                            Some((Site::Branch { sink, .. }, f)) if sink == (Sink::Gate { gate: g, pin }) => f,
                            _ => v,
                        })
                    })
                    .collect();
                if let Some(ins) = ins {
                    val[gate.output] = Some(stem(gate.output, Self::eval_gate(gate.kind, &ins)));
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        val.into_iter().map(|v| v.expect("net never settled")).collect()
    }

    fn read_sink(&self, v: &[bool], net: NetId, sink: Option<Sink>, force: Option<(Site, bool)>) -> bool {
        match (force, sink) {
            (Some((Site::Branch { sink: fs, .. }, f)), Some(s)) if fs == s => f,
            _ => v[net],
        }
    }

    /// Final state and free-PO values; `fault` is applied where active.
    fn run(
        &self,
        prog: &CaptureProgram,
        cells0: &[bool],
        pis: &[bool],
        fault: Option<&Fault>,
        good_frames: Option<&[Vec<bool>]>,
    ) -> (Vec<bool>, Vec<bool>, Vec<Vec<bool>>) {
        let mut cells = cells0.to_vec();
        let mut frames = Vec::new();
        let mut pos = Vec::new();
        for (e, domains) in prog.events.iter().enumerate() {
            let force = fault.and_then(|f| {
                let active = if f.model.is_transition() {
                    let gf = good_frames.expect("transition faults need good frames");
                    let net = f.site.net();
                    prog.pairs.iter().any(|p| {
                        p.capture == e
                            && match f.model {
                                FaultModel::Str => !gf[p.launch][net] && gf[p.capture][net],
                                _ => gf[p.launch][net] && !gf[p.capture][net],
                            }
                    })
                } else {
                    true
                };
                active.then_some((f.site, f.model.forced()))
            });
            let v = self.frame(&cells, pis, force);
            if prog.observe_pos && e == 0 {
                pos = self
                    .free_po
                    .iter()
                    .map(|&(i, net)| self.read_sink(&v, net, Some(Sink::Output(i)), force))
                    .collect();
            }
            for (c, cell) in self.arch.cells.iter().enumerate() {
                if domains.contains(&cell.domain) {
                    if let CellInput::Net(net) = cell.capture {
                        cells[c] = self.read_sink(&v, net, cell.sink, force);
                    }
                }
            }
            frames.push(v);
        }
        (cells, pos, frames)
    }
}

/// Detect each open representative independently on every pattern, without
/// dropping. Patterns are (cell values, free-PI values).
pub fn serial_fault_simulate(
    n: &Netlist,
    arch: &ScanArchitecture,
    prog: &CaptureProgram,
    patterns: &[(Vec<bool>, Vec<bool>)],
    fl: &FaultList,
) -> FaultList {
    let ctx = Ctx::new(n, arch);
    let mut out = fl.clone();
    let goods: Vec<_> = patterns.iter().map(|(c, p)| ctx.run(prog, c, p, None, None)).collect();
    for fi in fl.open_representatives() {
        let f = fl.faults[fi];
        for (p, ((c, pis), good)) in patterns.iter().zip(&goods).enumerate() {
            let (state, pos, _) = ctx.run(prog, c, pis, Some(&f), Some(&good.2));
            if state != good.0 || pos != good.1 {
                out.faults[fi].status = FaultStatus::Detected(p as u64);
                break;
            }
        }
    }
    out.sync_classes();
    out
}
