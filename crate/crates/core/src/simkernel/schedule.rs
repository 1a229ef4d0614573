use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{ClockDomain, DomainId};
use crate::time::{self, Time};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("pulse for undeclared clock domain {0}")]
    UnknownDomain(DomainId),
    #[error("clock domain {domain}: {msg}")]
    Pulses { domain: DomainId, msg: String },
    #[error("clock domain {domain}: pulse separation {got} ns differs from the functional period {period} ns")]
    NotAtSpeed {
        domain: DomainId,
        got: String,
        period: String,
    },
    #[error("d3 = {d3} ns does not exceed the {skew} ns skew between domains {a} and {b}")]
    Skew {
        d3: String,
        skew: String,
        a: DomainId,
        b: DomainId,
    },
    #[error("pulse order puts domain {later} before domain {earlier} against their capture order")]
    Order { earlier: DomainId, later: DomainId },
    #[error("{0} must be non-negative")]
    Negative(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pulse {
    pub domain: DomainId,
    /// 1 (launch) or 2 (capture).
    pub pulse: u8,
}

/// Timing and order of the capture pulses of one double-capture window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptureSchedule {
    /// Scan-enable fall to first pulse.
    pub d1: Time,
    /// Per-domain separation of the two pulses (d2/d4).
    pub d2: BTreeMap<DomainId, Time>,
    /// Gap between consecutive pulses of different domains.
    pub d3: Time,
    /// Last pulse to scan-enable rise.
    pub d5: Time,
    pub pulses: Vec<Pulse>,
}

impl CaptureSchedule {
    /// Domains in capture order, both pulses adjacent, at-speed separation.
    pub fn default_for(domains: &[ClockDomain], scheduled: &[DomainId]) -> Self {
        let mut order: Vec<&ClockDomain> = scheduled.iter().map(|&d| &domains[d]).collect();
        order.sort_by_key(|d| (d.capture_order, d.id));
        let max_period = domains.iter().map(|d| d.period).max().unwrap_or_else(|| Time::from(1));
        let max_skew = domains
            .iter()
            .flat_map(|d| d.skew.values().copied())
            .max()
            .unwrap_or_else(|| Time::from(0));
        CaptureSchedule {
            d1: max_period,
            d2: order.iter().map(|d| (d.id, d.period)).collect(),
            d3: max_skew + max_period,
            d5: max_period,
            pulses: order
                .iter()
                .flat_map(|d| [Pulse { domain: d.id, pulse: 1 }, Pulse { domain: d.id, pulse: 2 }])
                .collect(),
        }
    }

    /// Check at-speed separation, pulse pairing, capture order and skew margin.
    /// Every domain in `required` must be pulsed.
    pub fn validate(&self, domains: &[ClockDomain], required: &[DomainId]) -> Result<(), ScheduleError> {
        let zero = Time::from(0);
        for (name, v) in [("d1", self.d1), ("d3", self.d3), ("d5", self.d5)] {
            if v < zero {
                return Err(ScheduleError::Negative(name));
            }
        }
        let mut seen: BTreeMap<DomainId, Vec<u8>> = BTreeMap::new();
        for p in &self.pulses {
            if p.domain >= domains.len() {
                return Err(ScheduleError::UnknownDomain(p.domain));
            }
            seen.entry(p.domain).or_default().push(p.pulse);
        }
        for &d in required {
            if !seen.contains_key(&d) {
                return Err(ScheduleError::Pulses {
                    domain: d,
                    msg: "has no capture pulses".into(),
                });
            }
        }
        for (&d, ps) in &seen {
            if ps.as_slice() != [1, 2] {
                return Err(ScheduleError::Pulses {
                    domain: d,
                    msg: format!("pulses {ps:?}, expected pulse 1 then pulse 2"),
                });
            }
            let period = domains[d].period;
            match self.d2.get(&d) {
                Some(&sep) if sep == period => {}
                other => {
                    return Err(ScheduleError::NotAtSpeed {
                        domain: d,
                        got: other.map_or("none".into(), |&t| time::format(t)),
                        period: time::format(period),
                    })
                }
            }
        }
        let mut first_order: Vec<DomainId> = Vec::new();
        for p in &self.pulses {
            if !first_order.contains(&p.domain) {
                first_order.push(p.domain);
            }
        }
        for w in first_order.windows(2) {
            if domains[w[1]].capture_order < domains[w[0]].capture_order {
                return Err(ScheduleError::Order {
                    earlier: w[1],
                    later: w[0],
                });
            }
        }
        for w in self.pulses.windows(2) {
            let (a, b) = (w[0].domain, w[1].domain);
            if a != b {
                let skew = domains[a].max_skew_to(b).max(domains[b].max_skew_to(a));
                if self.d3 <= skew {
                    return Err(ScheduleError::Skew {
                        d3: time::format(self.d3),
                        skew: time::format(skew),
                        a,
                        b,
                    });
                }
            }
        }
        Ok(())
    }

    /// Pulse times relative to the scan-enable fall.
    pub fn pulse_times(&self) -> Vec<Time> {
        let mut out: Vec<Time> = Vec::with_capacity(self.pulses.len());
        let mut first: BTreeMap<DomainId, Time> = BTreeMap::new();
        for (i, p) in self.pulses.iter().enumerate() {
            let t = match (p.pulse, first.get(&p.domain)) {
                (2, Some(&t1)) => t1 + self.d2.get(&p.domain).copied().unwrap_or_default(),
                _ if i == 0 => self.d1,
                _ => out[i - 1] + self.d3,
            };
            let t = if i > 0 { t.max(out[i - 1]) } else { t };
            if p.pulse == 1 {
                first.insert(p.domain, t);
            }
            out.push(t);
        }
        out
    }

    /// Scan-enable fall to rise.
    pub fn window_length(&self) -> Time {
        self.pulse_times().last().copied().unwrap_or(self.d1) + self.d5
    }
}

/// Launch/capture event pair of one domain in a [`CaptureProgram`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PulsePair {
    pub domain: DomainId,
    pub launch: usize,
    pub capture: usize,
}

/// Capture window reduced to simulation events.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptureProgram {
    /// Domains clocked by each event, in order.
    pub events: Vec<Vec<DomainId>>,
    pub pairs: Vec<PulsePair>,
    /// Free primary outputs are compared after the first frame.
    pub observe_pos: bool,
}

impl CaptureProgram {
    /// One evaluation, every domain captures; free POs observed.
    pub fn single(domain_count: usize) -> Self {
        CaptureProgram {
            events: vec![(0..domain_count).collect()],
            pairs: Vec::new(),
            observe_pos: true,
        }
    }

    /// One event per pulse of a (validated) schedule.
    pub fn double(s: &CaptureSchedule) -> Self {
        let events = s.pulses.iter().map(|p| vec![p.domain]).collect();
        let mut pairs = Vec::new();
        for (b, p) in s.pulses.iter().enumerate() {
            if p.pulse == 2 {
                if let Some(a) = s.pulses[..b].iter().rposition(|q| q.domain == p.domain && q.pulse == 1) {
                    pairs.push(PulsePair {
                        domain: p.domain,
                        launch: a,
                        capture: b,
                    });
                }
            }
        }
        CaptureProgram {
            events,
            pairs,
            observe_pos: false,
        }
    }

    pub fn is_double(&self) -> bool {
        !self.pairs.is_empty()
    }

    /// Index of the last event clocking `domain`.
    pub fn last_event_of(&self, domain: DomainId) -> Option<usize> {
        self.events.iter().rposition(|e| e.contains(&domain))
    }
}
