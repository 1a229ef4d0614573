use std::collections::VecDeque;
use std::fmt;

use crate::dft::ScanArchitecture;
use crate::faultsim::{self, Fault};
use crate::netlist::{DomainId, Netlist};
use crate::odc::{compact, Misr, Signature, SpaceCompactor};
use crate::par::Exec;
use crate::tpg::DomainTpg;

use super::{check_x_reach, CaptureProgram, SimError, SimModel, StimulusBlock, SLOTS};

/// TPG and ODC hardware of one clock domain.
#[derive(Clone, Debug)]
pub struct DomainHw {
    pub domain: DomainId,
    pub tpg: DomainTpg,
    pub misr: Misr,
    pub compactor: Option<SpaceCompactor>,
}

impl DomainHw {
    fn check(&self, model: &SimModel) -> Result<Vec<usize>, SimError> {
        let chains = local_chains(model, self.domain);
        let err = |m: String| Err(SimError::Hardware(format!("domain {}: {m}", self.domain)));
        if self.tpg.expander.chains() != chains.len() {
            return err(format!(
                "space expander drives {} chains, domain has {}",
                self.tpg.expander.chains(),
                chains.len()
            ));
        }
        let outs = match &self.compactor {
            Some(c) => {
                let covered: usize = c.xor_trees.iter().map(Vec::len).sum();
                let max = c.xor_trees.iter().flatten().max().copied();
                if covered != chains.len() || max.is_some_and(|m| m >= chains.len()) {
                    return err("space compactor does not cover the domain's scan-outs".into());
                }
                c.outputs()
            }
            None => {
                if !self.misr.is_injective() {
                    return err("MISR input map must be injective without a compactor".into());
                }
                chains.len()
            }
        };
        if self.misr.inputs() != outs {
            return err(format!("MISR has {} inputs for {} scan-outs", self.misr.inputs(), outs));
        }
        Ok(chains)
    }

    fn absorb(&mut self, tails: &[bool]) -> Result<(), SimError> {
        match &self.compactor {
            Some(c) => self.misr.absorb(&compact(tails, c))?,
            None => self.misr.absorb(tails)?,
        }
        Ok(())
    }
}

fn local_chains(model: &SimModel, d: DomainId) -> Vec<usize> {
    model
        .chains
        .iter()
        .enumerate()
        .filter(|(_, (dom, _))| *dom == d)
        .map(|(i, _)| i)
        .collect()
}

fn check_hw(model: &SimModel, hw: &[DomainHw]) -> Result<Vec<Vec<usize>>, SimError> {
    if let Some(h) = hw.iter().find(|h| h.domain >= model.domain_count()) {
        return Err(SimError::Hardware(format!("domain {} is not declared", h.domain)));
    }
    for (d, cells) in model.domain_cells.iter().enumerate() {
        if !cells.is_empty() && !hw.iter().any(|h| h.domain == d) {
            return Err(SimError::Hardware(format!(
                "domain {d} has scan cells but no PRPG/MISR"
            )));
        }
    }
    hw.iter().map(|h| h.check(model)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Shift,
    Capture,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceWindow {
    pub index: usize,
    pub kind: WindowKind,
    /// FNV-1a hash of each domain's cell states.
    pub domain_hashes: Vec<(DomainId, u64)>,
    pub misrs: Vec<(DomainId, String)>,
}

impl fmt::Display for TraceWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            WindowKind::Shift => "shift",
            WindowKind::Capture => "capture",
        };
        write!(f, "{},{kind}", self.index)?;
        for (d, h) in &self.domain_hashes {
            write!(f, ",d{d}:{h:016x}")?;
        }
        for (d, m) in &self.misrs {
            write!(f, ",m{d}:{m}")?;
        }
        Ok(())
    }
}

/// Ring buffer of the most recent windows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub capacity: usize,
    pub windows: VecDeque<TraceWindow>,
}

impl Trace {
    pub fn new(capacity: usize) -> Self {
        Trace {
            capacity,
            windows: VecDeque::with_capacity(capacity),
        }
    }

    fn push(&mut self, w: TraceWindow) {
        if self.capacity == 0 {
            return;
        }
        if self.windows.len() == self.capacity {
            self.windows.pop_front();
        }
        self.windows.push_back(w);
    }

    pub fn dump(&self) -> String {
        self.windows.iter().map(|w| format!("{w}\n")).collect()
    }
}

fn fnv1a(bits: impl Iterator<Item = bool>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bits {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn trace_window(
    model: &SimModel,
    hw: &[DomainHw],
    index: usize,
    kind: WindowKind,
    cell: impl Fn(usize) -> bool,
) -> TraceWindow {
    TraceWindow {
        index,
        kind,
        domain_hashes: hw
            .iter()
            .map(|h| (h.domain, fnv1a(model.domain_cells[h.domain].iter().map(|&c| cell(c)))))
            .collect(),
        misrs: hw.iter().map(|h| (h.domain, h.misr.state.to_hex())).collect(),
    }
}

/// Scalar session state for window-by-window stepping.
#[derive(Clone, Debug)]
pub struct SessionState {
    pub cells: Vec<bool>,
    pub hw: Vec<DomainHw>,
    /// The MISRs absorb the next shift window (a capture preceded it).
    pub absorbing: bool,
    pub window: usize,
    pub se_toggles: usize,
    pub trace: Trace,
    chains: Vec<Vec<usize>>,
}

impl SessionState {
    pub fn new(model: &SimModel, hw: Vec<DomainHw>) -> Result<Self, SimError> {
        let chains = check_hw(model, &hw)?;
        Ok(SessionState {
            cells: vec![false; model.cell_count()],
            hw,
            absorbing: false,
            window: 0,
            se_toggles: 0,
            trace: Trace::new(16),
            chains,
        })
    }

    pub fn signatures(&self) -> Vec<(DomainId, Signature)> {
        self.hw.iter().map(|h| (h.domain, h.misr.state.clone())).collect()
    }
}

/// Shift every chain by the longest chain length.
pub fn run_shift_window(model: &SimModel, st: &mut SessionState) -> Result<(), SimError> {
    if st.absorbing {
        st.se_toggles += 1;
    }
    let w = model.max_chain_length();
    let mut chan = Vec::new();
    for c in 0..w {
        for (h, chains) in st.hw.iter_mut().zip(&st.chains) {
            if model.domain_cells[h.domain].is_empty() {
                continue;
            }
            let mut heads = vec![false; chains.len()];
            h.tpg.clock(&mut chan, &mut heads);
            let mut tails = Vec::with_capacity(chains.len());
            for (k, &gc) in chains.iter().enumerate() {
                let cells = &model.chains[gc].1;
                tails.push(cells.last().is_some_and(|&t| st.cells[t]));
                for i in (1..cells.len()).rev() {
                    st.cells[cells[i]] = st.cells[cells[i - 1]];
                }
                if let Some(&head) = cells.first() {
                    st.cells[head] = heads[k];
                }
            }
            if st.absorbing {
                h.absorb(&tails).map_err(|e| SimError::Window {
                    window: st.window,
                    msg: format!("cycle {c}: {e}"),
                })?;
            }
        }
    }
    st.absorbing = false;
    let cells = &st.cells;
    let tw = trace_window(model, &st.hw, st.window, WindowKind::Shift, |c| cells[c]);
    st.trace.push(tw);
    st.window += 1;
    Ok(())
}

/// Apply the capture events in order, free PIs held at 0.
pub fn run_capture_window(model: &SimModel, st: &mut SessionState, prog: &CaptureProgram) -> Result<(), SimError> {
    st.se_toggles += 1;
    let mut block = StimulusBlock::zeros(model, 1);
    for (c, &v) in st.cells.iter().enumerate() {
        block.cells[c] = v as u64;
    }
    let good = model.simulate_good(&block, prog);
    for (c, v) in good.response().iter().enumerate() {
        st.cells[c] = v & 1 == 1;
    }
    st.absorbing = true;
    let cells = &st.cells;
    let tw = trace_window(model, &st.hw, st.window, WindowKind::Capture, |c| cells[c]);
    st.trace.push(tw);
    st.window += 1;
    Ok(())
}

/// Stimuli produced by the domain TPGs, one shift window per pattern.
#[derive(Clone, Debug)]
pub struct BistStimulus<'a> {
    model: &'a SimModel,
    tpgs: Vec<(DomainId, DomainTpg)>,
    chains: Vec<Vec<usize>>,
}

/// One block of TPG windows.
#[derive(Clone, Debug)]
pub struct WindowBlock {
    pub block: StimulusBlock,
    /// `heads[chain][cycle]`: scan-in bit per slot.
    pub heads: Vec<Vec<u64>>,
}

impl<'a> BistStimulus<'a> {
    pub fn new(model: &'a SimModel, hw: &[DomainHw]) -> Result<Self, SimError> {
        let chains = check_hw(model, hw)?;
        Ok(BistStimulus {
            model,
            tpgs: hw.iter().map(|h| (h.domain, h.tpg.clone())).collect(),
            chains,
        })
    }

    /// Generate the next `count` shift windows.
    #[allow(clippy::needless_range_loop)]
    pub fn next_block(&mut self, count: usize) -> WindowBlock {
        let model = self.model;
        let w = model.max_chain_length();
        let mut heads = vec![vec![0u64; w]; model.chains.len()];
        let mut chan = Vec::new();
        let mut bits = Vec::new();
        for slot in 0..count {
            for c in 0..w {
                for ((d, tpg), chains) in self.tpgs.iter_mut().zip(&self.chains) {
                    if model.domain_cells[*d].is_empty() {
                        continue;
                    }
                    bits.clear();
                    bits.resize(chains.len(), false);
                    tpg.clock(&mut chan, &mut bits);
                    for (k, &gc) in chains.iter().enumerate() {
                        heads[gc][c] |= (bits[k] as u64) << slot;
                    }
                }
            }
        }
        let mut block = StimulusBlock::zeros(model, count);
        for (gc, (_, cells)) in model.chains.iter().enumerate() {
            for (p, &cell) in cells.iter().enumerate() {
                block.cells[cell] = heads[gc][w - 1 - p];
            }
        }
        WindowBlock { block, heads }
    }

    /// Stimulus blocks for `patterns` patterns.
    pub fn blocks(&mut self, patterns: usize) -> Vec<StimulusBlock> {
        (0..patterns.div_ceil(SLOTS))
            .map(|b| self.next_block((patterns - b * SLOTS).min(SLOTS)).block)
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct SessionOptions {
    pub exec: Exec,
    /// Simulate a faulty device instead of the fault-free one.
    pub fault: Option<Fault>,
    pub trace_capacity: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SessionResult {
    pub signatures: Vec<(DomainId, Signature)>,
    pub trace: Trace,
    pub se_toggles: usize,
    pub windows: usize,
}

/// N patterns of shift and capture, then a flush shift. Free PIs are held at 0.
pub fn run_bist_session(
    n: &Netlist,
    arch: &ScanArchitecture,
    hw: &[DomainHw],
    prog: &CaptureProgram,
    pattern_count: usize,
    opts: &SessionOptions,
) -> Result<SessionResult, SimError> {
    check_x_reach(n, arch, false)?;
    let model = SimModel::new(n, arch)?;
    let mut hw: Vec<DomainHw> = hw.to_vec();
    let chains = check_hw(&model, &hw)?;
    let mut stim = BistStimulus::new(&model, &hw)?;
    let total = 2 * pattern_count + 1;
    let first_traced = total.saturating_sub(opts.trace_capacity.unwrap_or(16));
    let mut trace = Trace::new(opts.trace_capacity.unwrap_or(16));
    let w = model.max_chain_length();
    let mut prev: Option<Vec<bool>> = None;
    let mut tails = Vec::new();
    let mut scratch = faultsim::Scratch::new(&model);

    let mut shift = |hw: &mut Vec<DomainHw>,
                     window: usize,
                     resp: Option<&[bool]>,
                     heads: &[Vec<u64>],
                     slot: usize|
     -> Result<(), SimError> {
        if let Some(r) = resp {
            for c in 0..w {
                for (h, chains) in hw.iter_mut().zip(&chains) {
                    if model.domain_cells[h.domain].is_empty() {
                        continue;
                    }
                    tails.clear();
                    for &gc in chains {
                        let cells = &model.chains[gc].1;
                        let l = cells.len();
                        tails.push(if l == 0 {
                            false
                        } else if c < l {
                            r[cells[l - 1 - c]]
                        } else {
                            heads[gc][c - l] >> slot & 1 == 1
                        });
                    }
                    h.absorb(&tails).map_err(|e| SimError::Window {
                        window,
                        msg: e.to_string(),
                    })?;
                }
            }
        }
        Ok(())
    };

    let mut done = 0;
    while done < pattern_count {
        let count = (pattern_count - done).min(SLOTS);
        let wb = stim.next_block(count);
        let good = model.simulate_good(&wb.block, prog);
        let response: Vec<u64> = match &opts.fault {
            Some(f) => faultsim::faulty_state(&model, prog, &wb.block, &good, f, &mut scratch),
            None => good.response().to_vec(),
        };
        for slot in 0..count {
            let p = done + slot;
            shift(&mut hw, 2 * p, prev.as_deref(), &wb.heads, slot)?;
            if 2 * p >= first_traced {
                let tw = trace_window(&model, &hw, 2 * p, WindowKind::Shift, |c| {
                    wb.block.cells[c] >> slot & 1 == 1
                });
                trace.push(tw);
            }
            let r: Vec<bool> = response.iter().map(|v| v >> slot & 1 == 1).collect();
            if 2 * p + 1 >= first_traced {
                let tw = trace_window(&model, &hw, 2 * p + 1, WindowKind::Capture, |c| r[c]);
                trace.push(tw);
            }
            prev = Some(r);
        }
        done += count;
    }
    let flush = stim.next_block(1);
    shift(&mut hw, 2 * pattern_count, prev.as_deref(), &flush.heads, 0)?;
    let tw = trace_window(&model, &hw, 2 * pattern_count, WindowKind::Shift, |c| {
        flush.block.cells[c] & 1 == 1
    });
    trace.push(tw);
    Ok(SessionResult {
        signatures: hw.iter().map(|h| (h.domain, h.misr.state.clone())).collect(),
        trace,
        se_toggles: 2 * pattern_count,
        windows: total,
    })
}
