use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DomainId, Netlist, NetlistError};
use crate::time::{serde_time, Time};

/// One functional clock and its relation to the other clocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockDomain {
    pub id: DomainId,
    pub name: String,
    /// Functional clock period in ns.
    #[serde(with = "serde_time")]
    pub period: Time,
    pub capture_order: usize,
    /// Worst-case clock arrival skew to other domains.
    #[serde(skip)]
    pub skew: BTreeMap<DomainId, Time>,
}

impl ClockDomain {
    pub fn new(id: DomainId, name: impl Into<String>, period: Time, capture_order: usize) -> Self {
        ClockDomain {
            id,
            name: name.into(),
            period,
            capture_order,
            skew: BTreeMap::new(),
        }
    }

    pub fn max_skew_to(&self, other: DomainId) -> Time {
        self.skew.get(&other).copied().unwrap_or_default()
    }
}

/// Record a symmetric skew bound between two domains.
pub fn set_skew(domains: &mut [ClockDomain], a: DomainId, b: DomainId, skew: Time) {
    for (x, y) in [(a, b), (b, a)] {
        if let Some(d) = domains.iter_mut().find(|d| d.id == x) {
            d.skew.insert(y, skew);
        }
    }
}

/// `ff-name glob → domain` rule; the first matching rule wins.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRule {
    pub pattern: String,
    pub domain: DomainId,
}

impl DomainRule {
    pub fn new(pattern: impl Into<String>, domain: DomainId) -> Self {
        DomainRule {
            pattern: pattern.into(),
            domain,
        }
    }
}

fn validate_domains(domains: &[ClockDomain]) -> Result<(), NetlistError> {
    let bad = |m: String| Err(NetlistError::BadDomains(m));
    let mut orders: Vec<usize> = domains.iter().map(|d| d.capture_order).collect();
    orders.sort_unstable();
    if orders.iter().enumerate().any(|(i, &o)| i != o) {
        return bad("capture_order values must be a permutation of 0..D-1".into());
    }
    for (i, d) in domains.iter().enumerate() {
        if d.id != i {
            return bad(format!("domain `{}` has id {} at position {i}", d.name, d.id));
        }
        if d.period <= Time::from_integer(0) {
            return bad(format!("domain `{}` has non-positive period", d.name));
        }
    }
    Ok(())
}

/// Assign every flip-flop to exactly one clock domain.
pub fn assign_clock_domains(
    n: &Netlist,
    domains: Vec<ClockDomain>,
    rules: &[DomainRule],
) -> Result<Netlist, NetlistError> {
    validate_domains(&domains)?;
    let mut compiled = Vec::with_capacity(rules.len());
    for r in rules {
        if r.domain >= domains.len() {
            return Err(NetlistError::UndeclaredDomain {
                pattern: r.pattern.clone(),
                domain: r.domain,
            });
        }
        let p = glob::Pattern::new(&r.pattern).map_err(|e| NetlistError::BadPattern {
            pattern: r.pattern.clone(),
            msg: e.to_string(),
        })?;
        compiled.push((p, r.domain));
    }
    let mut out = n.clone();
    let names: Vec<String> = out.flip_flops().iter().map(|ff| out.ff_name(ff).to_string()).collect();
    for (ff, name) in out.ffs_mut().iter_mut().zip(&names) {
        let d = compiled
            .iter()
            .find(|(p, _)| p.matches(name))
            .map(|&(_, d)| d)
            .ok_or_else(|| NetlistError::UnmatchedFlipFlop { ff: name.clone() })?;
        ff.domain = Some(d);
    }
    out.set_domains(domains);
    Ok(out)
}
