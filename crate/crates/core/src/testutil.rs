use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dft::{insert_scan, wrap_io, ScanArchitecture};
use crate::netlist::{assign_clock_domains, parse_bench, ClockDomain, DomainRule, Netlist};
use crate::simkernel::SimModel;
use crate::time::Time;

pub fn c17() -> Netlist {
    parse_bench(include_str!("../../../benchmarks/c17.bench")).unwrap()
}

pub fn s27() -> Netlist {
    parse_bench(include_str!("../../../benchmarks/s27.bench")).unwrap()
}

/// Flip-flop `k` goes to domain `k % domains`; periods 10, 8, 6, ... ns.
pub fn scanned(n: &Netlist, domains: usize, chains: usize, wrap: bool) -> (Netlist, ScanArchitecture) {
    let doms: Vec<ClockDomain> = (0..domains)
        .map(|d| ClockDomain::new(d, format!("clk{d}"), Time::from(10 - 2 * d as i64), d))
        .collect();
    let rules: Vec<DomainRule> = n
        .flip_flops()
        .iter()
        .enumerate()
        .map(|(k, ff)| DomainRule::new(n.ff_name(ff), k % domains))
        .collect();
    let n = assign_clock_domains(n, doms, &rules).unwrap();
    let per: BTreeMap<_, _> = (0..domains).map(|d| (d, chains)).collect();
    let (n, arch) = insert_scan(&n, &per).unwrap();
    if wrap {
        wrap_io(&n, &arch, 0).unwrap()
    } else {
        (n, arch)
    }
}

/// Random (cell bits, free-PI bits) patterns for a model.
pub fn random_patterns(model: &SimModel, count: usize, seed: u64) -> Vec<(Vec<bool>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (
                (0..model.cell_count()).map(|_| rng.gen()).collect(),
                (0..model.free_inputs().len()).map(|_| rng.gen()).collect(),
            )
        })
        .collect()
}
