use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dft::{CellKind, ScanArchitecture};
use crate::netlist::{GateKind, Netlist};
use crate::simkernel::DomainHw;

/// Gate-equivalent weight of a two-input gate.
pub const GE_GATE: f64 = 1.0;
/// Gate-equivalent weight of a flip-flop or scan cell.
pub const GE_FF: f64 = 6.0;
/// Gate-equivalent weight of a 2:1 multiplexer.
pub const GE_MUX: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSignature {
    pub domain: String,
    pub misr: String,
}

/// Summary of one flow run, one field per result row plus signatures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BistReport {
    pub gate_count: usize,
    pub ff_count: usize,
    pub chain_count: usize,
    pub max_chain_length: usize,
    pub domain_count: usize,
    pub frequency_mhz: f64,
    pub prpg_count: usize,
    pub prpg_length: Vec<usize>,
    pub misr_count: usize,
    pub misr_lengths: Vec<usize>,
    pub test_point_count: usize,
    pub random_pattern_count: usize,
    pub fault_coverage_1: f64,
    /// Seconds.
    pub cpu_time: f64,
    pub area_overhead_estimate: f64,
    pub top_up_pattern_count: usize,
    pub fault_coverage_2: f64,
    pub signatures: Vec<DomainSignature>,
    pub result: Verdict,
}

/// `218100` → `218.1K`, `20000` → `20K`, `104` → `104`.
pub fn kilo(n: usize) -> String {
    if n < 1000 {
        return n.to_string();
    }
    let s = format!("{:.1}", n as f64 / 1000.0);
    format!("{}K", s.strip_suffix(".0").unwrap_or(&s))
}

/// `1543.2` → `25m43s`, `8808` → `2h26m48s`.
pub fn duration(secs: f64) -> String {
    let t = secs.max(0.0).round() as u64;
    let (h, m, s) = (t / 3600, t / 60 % 60, t % 60);
    if h > 0 {
        format!("{h}h{m}m{s}s")
    } else {
        format!("{m}m{s}s")
    }
}

/// `[19, 99]` → `1: 19 / 1: 99`; uniform lengths print bare.
pub fn grouped(lengths: &[usize]) -> String {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    match sorted.len() {
        0 => return "-".into(),
        1 => return sorted[0].to_string(),
        _ => {}
    }
    sorted
        .iter()
        .map(|&l| format!("{}: {l}", lengths.iter().filter(|&&x| x == l).count()))
        .collect::<Vec<_>>()
        .join(" / ")
}

fn mhz(f: f64) -> String {
    let s = format!("{f:.1}");
    format!("{}MHz", s.strip_suffix(".0").unwrap_or(&s))
}

impl BistReport {
    /// Row label and rendered value, in table order.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("Gate Count", kilo(self.gate_count)),
            ("# of FFs", kilo(self.ff_count)),
            ("# of Scan Chains", self.chain_count.to_string()),
            ("Max. Chain Length", self.max_chain_length.to_string()),
            ("# of Clock Domains", self.domain_count.to_string()),
            ("Frequency", mhz(self.frequency_mhz)),
            ("# of PRPGs", self.prpg_count.to_string()),
            ("PRPG Length", grouped(&self.prpg_length)),
            ("# of MISRs", self.misr_count.to_string()),
            ("MISR Length", grouped(&self.misr_lengths)),
            (
                "# of Test Points",
                format!("{} (Obv-Only)", kilo(self.test_point_count)),
            ),
            ("# of Random Patterns", kilo(self.random_pattern_count)),
            ("Fault Coverage 1", format!("{:.2}%", self.fault_coverage_1)),
            ("CPU Time", duration(self.cpu_time)),
            ("Overhead", format!("{:.1}%", self.area_overhead_estimate)),
            ("# of Top-Up Patterns", self.top_up_pattern_count.to_string()),
            ("Fault Coverage 2", format!("{:.2}%", self.fault_coverage_2)),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (label, value) in self.rows() {
            let _ = writeln!(s, "{label:<24}{value}");
        }
        for sig in &self.signatures {
            let _ = writeln!(s, "{:<24}{}", format!("Signature {}", sig.domain), sig.misr);
        }
        let verdict = match self.result {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
        };
        let _ = writeln!(s, "{:<24}{verdict}", "Result");
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn gate_ge(kind: GateKind, fanin: usize) -> f64 {
    match kind {
        GateKind::Dff => GE_FF,
        GateKind::Not | GateKind::Buf => GE_GATE,
        _ => GE_GATE * fanin.saturating_sub(1).max(1) as f64,
    }
}

/// Gate equivalents of a netlist: a k-input gate counts as k-1 two-input
/// gates, inverters and buffers as one, flip-flops as [`GE_FF`].
pub fn netlist_ge(n: &Netlist) -> f64 {
    n.gates().iter().map(|g| gate_ge(g.kind, g.inputs.len())).sum()
}

/// Gate equivalents of the scan architecture and the TPG/ODC hardware.
///
/// Core flip-flops gain a scan mux; PI wrappers are a cell plus a test mux;
/// PO wrappers and observation cells are a cell each. PRPGs and MISRs count
/// their stages and feedback XORs, phase shifters and compactors their XOR
/// trees, expanders their inverters, MISRs one XOR per input.
pub fn dft_ge(arch: &ScanArchitecture, hw: &[DomainHw]) -> f64 {
    let cells: f64 = arch
        .cells
        .iter()
        .map(|c| match c.kind {
            CellKind::CoreFf => GE_MUX,
            CellKind::PiWrapper => GE_FF + GE_MUX,
            CellKind::PoWrapper | CellKind::ObserveOnly => GE_FF,
        })
        .sum();
    let xor_tree = |k: usize| GE_GATE * k.saturating_sub(1) as f64;
    let hardware: f64 = hw
        .iter()
        .map(|h| {
            let prpg = &h.tpg.prpg;
            let prpg_ge = GE_FF * prpg.length as f64 + xor_tree(prpg.polynomial.exponents().len());
            let shifter: f64 = (0..h.tpg.shifter.channels())
                .map(|c| xor_tree(h.tpg.shifter.mask(c).count_ones() as usize))
                .sum();
            let inverters = h.tpg.expander.branches.iter().flatten().filter(|(_, inv)| *inv).count() as f64 * GE_GATE;
            let misr = GE_FF * h.misr.length as f64
                + GE_GATE * h.misr.polynomial.exponents().len() as f64
                + GE_GATE * h.misr.inputs() as f64;
            let compactor: f64 = h
                .compactor
                .as_ref()
                .map_or(0.0, |c| c.xor_trees.iter().map(|t| xor_tree(t.len())).sum());
            prpg_ge + shifter + inverters + misr + compactor
        })
        .sum();
    cells + hardware
}

/// Percent of the original gate equivalents added by BIST: gates inserted
/// into the netlist (X blockers) plus [`dft_ge`].
pub fn area_overhead_estimate(before: &Netlist, after: &Netlist, arch: &ScanArchitecture, hw: &[DomainHw]) -> f64 {
    let base = netlist_ge(before);
    if base == 0.0 {
        return 0.0;
    }
    let added = netlist_ge(after) - base + dft_ge(arch, hw);
    100.0 * added / base
}
