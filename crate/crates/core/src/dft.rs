//! Design-for-test transforms that produce the BIST-ready core.
//!
//! Scan cells, I/O wrapper cells and observation cells live in the
//! [`ScanArchitecture`]; the netlist itself only changes when X sources are
//! blocked. Observation cells tap existing nets and never sit on a
//! functional path.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;

use serde::Serialize;
use thiserror::Error;

use crate::netlist::{write_bench, DomainId, Driver, GateKind, NetId, Netlist, Sink};

pub type CellId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DftError {
    #[error("clock domain {domain} has {ffs} flip-flop(s) but no scan chains")]
    NoChains { domain: DomainId, ffs: usize },
    #[error("flip-flop `{0}` has no clock domain")]
    UnassignedFlipFlop(String),
    #[error("clock domain {0} is not declared")]
    UnknownDomain(DomainId),
    #[error("design is already wrapped")]
    AlreadyWrapped,
    #[error("net id {0} does not exist")]
    UnknownNet(NetId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    CoreFf,
    PiWrapper,
    PoWrapper,
    ObserveOnly,
}

/// What a cell loads on a capture pulse.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellInput {
    Net(NetId),
    Hold,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanCell {
    pub name: String,
    pub kind: CellKind,
    pub domain: DomainId,
    /// Net driven by the cell output in test mode.
    pub drives: Option<NetId>,
    pub capture: CellInput,
    /// Fault-model pin of the capture input. Observation taps read the stem
    /// and have none.
    pub sink: Option<Sink>,
    /// Index into `Netlist::flip_flops` for converted core flip-flops.
    pub ff: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanChain {
    pub domain: DomainId,
    /// Head (scan-in side) first.
    pub cells: Vec<CellId>,
}

/// The single, slow, global scan enable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanEnable {
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanArchitecture {
    pub cells: Vec<ScanCell>,
    pub chains: Vec<ScanChain>,
    pub scan_enable: ScanEnable,
    pub wrapper_domain: Option<DomainId>,
}

impl ScanArchitecture {
    pub fn is_wrapped(&self) -> bool {
        self.wrapper_domain.is_some()
    }

    pub fn chains_of(&self, domain: DomainId) -> impl Iterator<Item = (usize, &ScanChain)> {
        self.chains.iter().enumerate().filter(move |(_, c)| c.domain == domain)
    }

    pub fn chain_lengths(&self) -> Vec<usize> {
        self.chains.iter().map(|c| c.cells.len()).collect()
    }

    pub fn max_chain_length(&self) -> usize {
        self.chains.iter().map(|c| c.cells.len()).max().unwrap_or(0)
    }

    pub fn count(&self, kind: CellKind) -> usize {
        self.cells.iter().filter(|c| c.kind == kind).count()
    }

    /// Domains that own at least one chain, ascending.
    pub fn domains(&self) -> Vec<DomainId> {
        let set: BTreeSet<_> = self.chains.iter().map(|c| c.domain).collect();
        set.into_iter().collect()
    }

    /// Nets whose value is already visible to some cell: capture inputs and driven nets.
    pub fn observed_nets(&self, n: &Netlist) -> BTreeSet<NetId> {
        let mut s = BTreeSet::new();
        for c in &self.cells {
            if let CellInput::Net(net) = c.capture {
                s.insert(net);
            }
            if let Some(q) = c.drives {
                s.insert(q);
            }
        }
        for ff in n.flip_flops() {
            if ff.scannable {
                s.insert(n.gate(ff.gate).output);
            }
        }
        s
    }

    /// Chain description sidecar: one line per chain, head to tail.
    pub fn chain_description(&self) -> String {
        let mut s = String::new();
        for (i, ch) in self.chains.iter().enumerate() {
            let names: Vec<&str> = ch.cells.iter().map(|&c| self.cells[c].name.as_str()).collect();
            let _ = writeln!(s, "chain {i} domain {}: {}", ch.domain, names.join(" "));
        }
        s
    }

    fn shortest_chain(&self, domain: DomainId) -> Option<usize> {
        self.chains_of(domain)
            .min_by_key(|(i, c)| (c.cells.len(), *i))
            .map(|(i, _)| i)
    }

    fn push_cell(&mut self, chain: usize, cell: ScanCell) -> CellId {
        let id = self.cells.len();
        self.cells.push(cell);
        self.chains[chain].cells.push(id);
        id
    }
}

/// Convert every scannable DFF into a mux-D scan cell and stitch balanced chains.
///
/// Chains are filled round-robin in netlist order within each domain.
/// Non-scannable flip-flops stay out of the chains.
pub fn insert_scan(
    n: &Netlist,
    chains_per_domain: &BTreeMap<DomainId, usize>,
) -> Result<(Netlist, ScanArchitecture), DftError> {
    let domains = n.domains().len();
    if let Some(&d) = chains_per_domain.keys().find(|&&d| d >= domains) {
        return Err(DftError::UnknownDomain(d));
    }
    let mut per_domain: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
    for (i, ff) in n.flip_flops().iter().enumerate() {
        if !ff.scannable {
            continue;
        }
        let d = ff
            .domain
            .ok_or_else(|| DftError::UnassignedFlipFlop(n.ff_name(ff).to_string()))?;
        per_domain.entry(d).or_default().push(i);
    }
    for (&d, ffs) in &per_domain {
        if chains_per_domain.get(&d).copied().unwrap_or(0) == 0 {
            return Err(DftError::NoChains {
                domain: d,
                ffs: ffs.len(),
            });
        }
    }
    let mut arch = ScanArchitecture {
        cells: Vec::new(),
        chains: Vec::new(),
        scan_enable: ScanEnable {
            name: n.fresh_name("scan_enable"),
        },
        wrapper_domain: None,
    };
    for (&d, &count) in chains_per_domain {
        let first = arch.chains.len();
        arch.chains.extend((0..count).map(|_| ScanChain {
            domain: d,
            cells: Vec::new(),
        }));
        for (k, &ffi) in per_domain.get(&d).into_iter().flatten().enumerate() {
            let ff = &n.flip_flops()[ffi];
            let gate = n.gate(ff.gate);
            let cell = ScanCell {
                name: n.net_name(gate.output).to_string(),
                kind: CellKind::CoreFf,
                domain: d,
                drives: Some(gate.output),
                capture: CellInput::Net(gate.inputs[0]),
                sink: Some(Sink::Gate { gate: ff.gate, pin: 0 }),
                ff: Some(ffi),
            };
            arch.push_cell(first + k % count, cell);
        }
    }
    Ok((n.clone(), arch))
}

/// Gate each X-source net to constant 0 in test mode.
///
/// The raw net is renamed `<name>__x`; the original name now carries
/// `AND(raw, NOT(test_mode))`, so every consumer sees the blocked value.
pub fn block_x_sources(n: &Netlist, xs: &BTreeSet<NetId>) -> Result<Netlist, DftError> {
    if xs.is_empty() {
        return Ok(n.clone());
    }
    if let Some(&bad) = xs.iter().find(|&&x| x >= n.net_count()) {
        return Err(DftError::UnknownNet(bad));
    }
    let mut out = n.clone();
    let tm = out.ensure_test_mode();
    let tmn = match out.net_id("test_mode_n") {
        Some(t) if out.is_control(t) => t,
        _ => {
            let name = out.fresh_name("test_mode_n");
            let t = out.add_net(name);
            out.add_gate(GateKind::Not, vec![tm], t);
            out.mark_control(t);
            t
        }
    };
    for &x in xs {
        let raw_name = out.fresh_name(&format!("{}__x", out.net_name(x)));
        let raw = out.add_net(raw_name);
        out.move_driver(x, raw);
        out.add_gate(GateKind::And, vec![raw, tmn], x);
        out.mark_x_blocked(raw);
    }
    out.refresh();
    Ok(out)
}

/// Add PI/PO wrapper cells to the chains of `wrapper_domain`.
///
/// Each wrapper cell goes to the currently shortest chain, which keeps the
/// domain balanced. Test-control inputs are not wrapped.
pub fn wrap_io(
    n: &Netlist,
    arch: &ScanArchitecture,
    wrapper_domain: DomainId,
) -> Result<(Netlist, ScanArchitecture), DftError> {
    if arch.is_wrapped() {
        return Err(DftError::AlreadyWrapped);
    }
    let mut arch = arch.clone();
    let pis: Vec<NetId> = n
        .primary_inputs()
        .iter()
        .copied()
        .filter(|&p| !n.is_control(p))
        .collect();
    let has_work = !pis.is_empty() || !n.primary_outputs().is_empty();
    if has_work && arch.shortest_chain(wrapper_domain).is_none() {
        return Err(DftError::NoChains {
            domain: wrapper_domain,
            ffs: 0,
        });
    }
    for pi in pis {
        let chain = arch.shortest_chain(wrapper_domain).unwrap();
        arch.push_cell(
            chain,
            ScanCell {
                name: format!("{}__wi", n.net_name(pi)),
                kind: CellKind::PiWrapper,
                domain: wrapper_domain,
                drives: Some(pi),
                capture: CellInput::Hold,
                sink: None,
                ff: None,
            },
        );
    }
    for (i, &po) in n.primary_outputs().iter().enumerate() {
        let chain = arch.shortest_chain(wrapper_domain).unwrap();
        arch.push_cell(
            chain,
            ScanCell {
                name: format!("{}__wo", n.net_name(po)),
                kind: CellKind::PoWrapper,
                domain: wrapper_domain,
                drives: None,
                capture: CellInput::Net(po),
                sink: Some(Sink::Output(i)),
                ff: None,
            },
        );
    }
    arch.wrapper_domain = Some(wrapper_domain);
    Ok((n.clone(), arch))
}

/// Domain of the structurally nearest clocked source in the fanin of `net`.
///
/// Breadth-first over drivers; ties go to the lowest domain id. Wrapped PIs
/// count as sources of the wrapper domain.
pub fn nearest_domain(n: &Netlist, arch: &ScanArchitecture, net: NetId) -> Option<DomainId> {
    let mut seen = vec![false; n.net_count()];
    let mut frontier = VecDeque::from([net]);
    seen[net] = true;
    while !frontier.is_empty() {
        let mut found: Option<DomainId> = None;
        let mut next = VecDeque::new();
        for cur in frontier {
            match n.driver(cur) {
                Driver::Input(_) => {
                    if !n.is_control(cur) {
                        if let Some(w) = arch.wrapper_domain {
                            found = Some(found.map_or(w, |f| f.min(w)));
                        }
                    }
                }
                Driver::Gate(g) => {
                    let gate = n.gate(g);
                    if gate.kind.is_sequential() {
                        if let Some(d) = n.flip_flop_of_gate(g).and_then(|ff| ff.domain) {
                            found = Some(found.map_or(d, |f| f.min(d)));
                        }
                    } else {
                        for &i in &gate.inputs {
                            if !seen[i] {
                                seen[i] = true;
                                next.push_back(i);
                            }
                        }
                    }
                }
            }
        }
        if found.is_some() {
            return found;
        }
        frontier = next;
    }
    None
}

/// Result of [`insert_observation_points`].
#[derive(Clone, Debug)]
pub struct ObservationInsertion {
    pub netlist: Netlist,
    pub arch: ScanArchitecture,
    pub added: Vec<CellId>,
    /// Sites skipped because they were already observed.
    pub skipped: Vec<NetId>,
}

/// Add one observe-only cell per site, each on the shortest chain of its domain.
///
/// `domain_override` pins every new cell to one domain instead of the
/// nearest-clock rule.
pub fn insert_observation_points(
    n: &Netlist,
    arch: &ScanArchitecture,
    sites: &[NetId],
    domain_override: Option<DomainId>,
) -> Result<ObservationInsertion, DftError> {
    let mut arch = arch.clone();
    let mut observed = arch.observed_nets(n);
    let mut added = Vec::new();
    let mut skipped = Vec::new();
    let fallback = arch.domains().first().copied();
    for &site in sites {
        if site >= n.net_count() {
            return Err(DftError::UnknownNet(site));
        }
        if !observed.insert(site) {
            log::warn!("observation site `{}` is already observed; skipped", n.net_name(site));
            skipped.push(site);
            continue;
        }
        let domain = domain_override
            .or_else(|| nearest_domain(n, &arch, site).filter(|&d| arch.shortest_chain(d).is_some()))
            .or(fallback)
            .ok_or(DftError::NoChains { domain: 0, ffs: 0 })?;
        let chain = arch
            .shortest_chain(domain)
            .ok_or(DftError::NoChains { domain, ffs: 0 })?;
        let id = arch.push_cell(
            chain,
            ScanCell {
                name: format!("{}__obs", n.net_name(site)),
                kind: CellKind::ObserveOnly,
                domain,
                drives: None,
                capture: CellInput::Net(site),
                sink: None,
                ff: None,
            },
        );
        added.push(id);
    }
    Ok(ObservationInsertion {
        netlist: n.clone(),
        arch,
        added,
        skipped,
    })
}

/// `.bench` rendering of the BIST-ready core: the netlist followed by DFT
/// cells as DFF lines. PI wrappers appear as hold loops.
pub fn emit_bist_ready(n: &Netlist, arch: &ScanArchitecture) -> String {
    let mut s = write_bench(n);
    let extra: Vec<&ScanCell> = arch.cells.iter().filter(|c| c.kind != CellKind::CoreFf).collect();
    if extra.is_empty() {
        return s;
    }
    s.push_str("\n# DFT cells (scan enable: ");
    s.push_str(&arch.scan_enable.name);
    s.push_str(")\n");
    for c in extra {
        match (c.kind, c.capture, c.drives) {
            (CellKind::PiWrapper, _, Some(pi)) => {
                let _ = writeln!(s, "# {} drives {} in test mode", c.name, n.net_name(pi));
                let _ = writeln!(s, "{0} = DFF({0})", c.name);
            }
            (_, CellInput::Net(net), _) => {
                let _ = writeln!(s, "{} = DFF({})", c.name, n.net_name(net));
            }
            _ => {}
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{assign_clock_domains, find_x_sources, parse_bench, ClockDomain, DomainRule, XSourceOptions};
    use crate::time::Time;

    fn domains(k: usize) -> Vec<ClockDomain> {
        (0..k)
            .map(|i| ClockDomain::new(i, format!("clk{i}"), Time::from_integer(4 + i as i64), i))
            .collect()
    }

    fn ff_netlist(count: usize) -> Netlist {
        let mut s = String::from("INPUT(a)\nOUTPUT(q0)\n");
        for i in 0..count {
            let d = if i == 0 { "a".to_string() } else { format!("q{}", i - 1) };
            s += &format!("q{i} = DFF({d})\n");
        }
        parse_bench(&s).unwrap()
    }

    #[test]
    fn ten_ffs_three_chains() {
        let n = assign_clock_domains(&ff_netlist(10), domains(1), &[DomainRule::new("*", 0)]).unwrap();
        let (_, arch) = insert_scan(&n, &BTreeMap::from([(0, 3)])).unwrap();
        assert_eq!(arch.chain_lengths(), vec![4, 3, 3]);
        assert_eq!(arch.cells[arch.chains[1].cells[0]].name, "q1");
    }

    #[test]
    fn combinational_design_gets_empty_chains() {
        let n = parse_bench(include_str!("../../../benchmarks/c17.bench")).unwrap();
        let n = assign_clock_domains(&n, domains(1), &[]).unwrap();
        let (_, arch) = insert_scan(&n, &BTreeMap::from([(0, 1)])).unwrap();
        assert_eq!(arch.chain_lengths(), vec![0]);
        assert!(arch.cells.is_empty());
    }

    #[test]
    fn two_domains_balance_separately() {
        let rules = [DomainRule::new("q[0-3]", 0), DomainRule::new("*", 1)];
        let n = assign_clock_domains(&ff_netlist(6), domains(2), &rules).unwrap();
        let (_, arch) = insert_scan(&n, &BTreeMap::from([(0, 2), (1, 1)])).unwrap();
        assert_eq!(arch.chain_lengths(), vec![2, 2, 2]);
        assert_eq!(arch.chains[2].domain, 1);
        for ch in &arch.chains {
            assert!(ch.cells.iter().all(|&c| arch.cells[c].domain == ch.domain));
        }
    }

    #[test]
    fn domain_without_chains_is_an_error() {
        let n = assign_clock_domains(&ff_netlist(2), domains(1), &[DomainRule::new("*", 0)]).unwrap();
        assert_eq!(
            insert_scan(&n, &BTreeMap::new()).unwrap_err(),
            DftError::NoChains { domain: 0, ffs: 2 }
        );
    }

    #[test]
    fn wrapping_c17_adds_seven_cells_once() {
        let n = parse_bench(include_str!("../../../benchmarks/c17.bench")).unwrap();
        let n = assign_clock_domains(&n, domains(1), &[]).unwrap();
        let (n, arch) = insert_scan(&n, &BTreeMap::from([(0, 2)])).unwrap();
        let (n, wrapped) = wrap_io(&n, &arch, 0).unwrap();
        assert_eq!(
            wrapped.cells.len(),
            n.primary_inputs().len() + n.primary_outputs().len()
        );
        assert_eq!(wrapped.cells.len(), 7);
        assert_eq!(wrapped.chain_lengths(), vec![4, 3]);
        assert_eq!(wrap_io(&n, &wrapped, 0).unwrap_err(), DftError::AlreadyWrapped);
    }

    #[test]
    fn no_outputs_means_only_input_wrappers() {
        let n = parse_bench("INPUT(a)\nINPUT(b)\nq = DFF(a)\n").unwrap();
        let n = assign_clock_domains(&n, domains(1), &[DomainRule::new("*", 0)]).unwrap();
        let (n, arch) = insert_scan(&n, &BTreeMap::from([(0, 1)])).unwrap();
        let (_, w) = wrap_io(&n, &arch, 0).unwrap();
        assert_eq!(w.count(CellKind::PiWrapper), 2);
        assert_eq!(w.count(CellKind::PoWrapper), 0);
    }

    #[test]
    fn blocking_clears_x_sources_and_keeps_names() {
        let mut n = parse_bench("INPUT(a)\nOUTPUT(y)\nOUTPUT(q)\nq = DFF(a)\ny = OR(q, a)").unwrap();
        n.set_scannable("q", false).unwrap();
        let xs = find_x_sources(&n, &XSourceOptions::default());
        assert!(xs.contains(&n.net_id("q").unwrap()));
        let b = block_x_sources(&n, &xs).unwrap();
        assert!(find_x_sources(&b, &XSourceOptions::default()).is_empty());
        assert_eq!(b.net_name(b.primary_outputs()[1]), "q");
        assert!(b.net_id("q__x").is_some());
        assert!(b.test_mode().is_some());
        assert_eq!(block_x_sources(&n, &BTreeSet::new()).unwrap().gates(), n.gates());
    }

    #[test]
    fn observation_point_goes_to_shortest_chain() {
        let text = format!(
            "{}z = AND(a, q6)\nOUTPUT(z)\n",
            crate::netlist::write_bench(&ff_netlist(7))
        );
        let n = parse_bench(&text).unwrap();
        let n = assign_clock_domains(&n, domains(1), &[DomainRule::new("*", 0)]).unwrap();
        let (n, arch) = insert_scan(&n, &BTreeMap::from([(0, 2)])).unwrap();
        assert_eq!(arch.chain_lengths(), vec![4, 3]);
        let a = n.net_id("z").unwrap();
        let q0 = n.net_id("q0").unwrap();
        let ins = insert_observation_points(&n, &arch, &[a], None).unwrap();
        assert_eq!(ins.arch.chain_lengths(), vec![4, 4]);
        assert_eq!(ins.added.len(), 1);
        // q0 is a scan cell output: already observed
        let again = insert_observation_points(&n, &ins.arch, &[q0], None).unwrap();
        assert_eq!(again.skipped, vec![q0]);
        assert_eq!(again.arch, ins.arch);
        let none = insert_observation_points(&n, &arch, &[], None).unwrap();
        assert_eq!(none.arch, arch);
    }
}
