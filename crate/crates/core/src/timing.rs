//! Shift-path skew discipline and capture-window margin checks.
//!
//! A shift path launches on one clock and captures on another under a
//! same-edge launch, next-edge capture model. Offsets are clock arrival
//! times; everything is exact rational ns.

use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{ClockDomain, DomainId};
use crate::simkernel::CaptureSchedule;
use crate::time::{self, serde_time, Time};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimingError {
    #[error("path `{0}`: retiming applies to PRPG-to-chain paths; use reduce_levels for chain-to-MISR paths")]
    RetimeKind(String),
    #[error("path `{0}`: reduce_levels applies to chain-to-MISR paths")]
    ReduceKind(String),
    #[error("path `{id}`: {msg}")]
    Invalid { id: String, msg: String },
    #[error("d3 = {d3} ns does not exceed the {skew} ns skew between domains {a} and {b}")]
    Margin {
        a: DomainId,
        b: DomainId,
        d3: String,
        skew: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    PrpgToChain,
    ChainToMisr,
    ChainInternal,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::PrpgToChain => "prpg_to_chain",
            PathKind::ChainToMisr => "chain_to_misr",
            PathKind::ChainInternal => "chain_internal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftPath {
    #[serde(default)]
    pub id: String,
    pub kind: PathKind,
    #[serde(default)]
    pub domain: Option<DomainId>,
    #[serde(with = "serde_time")]
    pub launch_offset: Time,
    #[serde(with = "serde_time")]
    pub capture_offset: Time,
    #[serde(with = "serde_time")]
    pub d_min: Time,
    #[serde(with = "serde_time")]
    pub d_max: Time,
    #[serde(with = "serde_time")]
    pub t_setup: Time,
    #[serde(with = "serde_time")]
    pub t_hold: Time,
    #[serde(with = "serde_time")]
    pub period: Time,
    #[serde(default)]
    pub retimed: bool,
}

impl ShiftPath {
    pub fn validate(&self) -> Result<(), TimingError> {
        let bad = |msg: &str| {
            Err(TimingError::Invalid {
                id: self.id.clone(),
                msg: msg.into(),
            })
        };
        if self.d_min > self.d_max {
            return bad("d_min exceeds d_max");
        }
        if self.period <= Time::from(0) {
            return bad("period must be positive");
        }
        if self.d_min < Time::from(0) {
            return bad("negative delay");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct Violations {
    pub hold: bool,
    pub setup: bool,
}

impl Violations {
    pub fn is_clean(self) -> bool {
        !self.hold && !self.setup
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.hold, self.setup) {
            (false, false) => f.write_str("-"),
            (true, false) => f.write_str("hold"),
            (false, true) => f.write_str("setup"),
            (true, true) => f.write_str("hold,setup"),
        }
    }
}

pub fn classify(p: &ShiftPath) -> Violations {
    Violations {
        hold: p.launch_offset + p.d_min < p.capture_offset + p.t_hold,
        setup: p.launch_offset + p.d_max > p.capture_offset + p.period - p.t_setup,
    }
}

/// Insert an opposite-edge retiming flip-flop: the launch moves by half a period.
///
/// Paths without a hold violation come back unchanged.
pub fn apply_retiming(p: &ShiftPath) -> Result<ShiftPath, TimingError> {
    if p.kind != PathKind::PrpgToChain {
        return Err(TimingError::RetimeKind(p.id.clone()));
    }
    if !classify(p).hold {
        return Ok(p.clone());
    }
    let mut q = p.clone();
    q.launch_offset += p.period / 2;
    q.retimed = true;
    Ok(q)
}

/// Shorten the combinational logic of a chain-to-MISR path by `amount` ns.
pub fn reduce_levels(p: &ShiftPath, amount: Time) -> Result<ShiftPath, TimingError> {
    if p.kind != PathKind::ChainToMisr {
        return Err(TimingError::ReduceKind(p.id.clone()));
    }
    let invalid = |msg: &str| TimingError::Invalid {
        id: p.id.clone(),
        msg: msg.into(),
    };
    if amount < Time::from(0) {
        return Err(invalid("negative reduction"));
    }
    if p.d_max - amount < p.d_min {
        return Err(invalid("reduction below d_min"));
    }
    let mut q = p.clone();
    q.d_max -= amount;
    Ok(q)
}

/// Whether the shift-discipline guarantee covers `p`.
///
/// PRPG-to-chain paths need the launch (PRPG) clock ahead; chain-to-MISR
/// paths need the capture (MISR) clock ahead of the chain clock and the
/// zero-skew hold requirement met. Both need
/// `d_max <= period - t_setup - |capture - launch|`.
pub fn discipline_applies(p: &ShiftPath) -> bool {
    let diff = p.capture_offset - p.launch_offset;
    let spread = if diff < Time::from(0) { -diff } else { diff };
    let fits = p.d_max <= p.period - p.t_setup - spread;
    match p.kind {
        PathKind::PrpgToChain => p.launch_offset < p.capture_offset && fits,
        PathKind::ChainToMisr => p.capture_offset < p.launch_offset && p.d_min >= p.t_hold && fits,
        PathKind::ChainInternal => false,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DisciplineReport {
    /// Indices of paths the guarantee covers.
    pub covered: Vec<usize>,
    /// Indices of paths outside the preconditions.
    pub excluded: Vec<usize>,
    /// Covered paths that still show a forbidden violation.
    pub counterexamples: Vec<(usize, Violations)>,
}

impl DisciplineReport {
    pub fn is_clean(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// No setup violation on PRPG-to-chain and no hold violation on
/// chain-to-MISR paths that meet the preconditions.
pub fn check_discipline(paths: &[ShiftPath]) -> DisciplineReport {
    let mut r = DisciplineReport::default();
    for (i, p) in paths.iter().enumerate() {
        if !discipline_applies(p) {
            r.excluded.push(i);
            continue;
        }
        r.covered.push(i);
        let v = classify(p);
        let forbidden = match p.kind {
            PathKind::PrpgToChain => v.setup,
            PathKind::ChainToMisr => v.hold,
            PathKind::ChainInternal => false,
        };
        if forbidden {
            r.counterexamples.push((i, v));
        }
    }
    r
}

/// Every pair of domains adjacent in the schedule's capture order must be
/// separated by more than their skew.
pub fn check_capture_margin(sched: &CaptureSchedule, domains: &[ClockDomain]) -> Result<(), TimingError> {
    let mut order: Vec<DomainId> = Vec::new();
    for p in &sched.pulses {
        if !order.contains(&p.domain) {
            order.push(p.domain);
        }
    }
    let skew_of = |a: DomainId, b: DomainId| {
        let one = |x: DomainId, y: DomainId| {
            domains
                .iter()
                .find(|d| d.id == x)
                .map_or_else(|| Time::from(0), |d| d.max_skew_to(y))
        };
        one(a, b).max(one(b, a))
    };
    for w in order.windows(2) {
        let skew = skew_of(w[0], w[1]);
        if sched.d3 <= skew {
            return Err(TimingError::Margin {
                a: w[0],
                b: w[1],
                d3: time::format(sched.d3),
                skew: time::format(skew),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fix {
    None,
    Retimed,
    ReducedLevels,
    Unfixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TimingRow {
    pub id: String,
    pub kind: PathKind,
    pub before: Violations,
    pub after: Violations,
    pub fix: Fix,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub discipline: DisciplineReport,
    pub capture_margin: Option<String>,
}

impl TimingReport {
    pub fn is_clean(&self) -> bool {
        self.rows.iter().all(|r| r.after.is_clean()) && self.discipline.is_clean() && self.capture_margin.is_none()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:<15} {:<11} {:<11} fix", "path", "kind", "before", "after");
        for r in &self.rows {
            let fix = match r.fix {
                Fix::None => "-",
                Fix::Retimed => "retiming ff",
                Fix::ReducedLevels => "reduced levels",
                Fix::Unfixed => "unfixed",
            };
            let _ = writeln!(
                s,
                "{:<24} {:<15} {:<11} {:<11} {fix}",
                r.id,
                r.kind.name(),
                r.before.to_string(),
                r.after.to_string()
            );
        }
        let _ = writeln!(
            s,
            "discipline: {} covered, {} excluded, {} counterexample(s)",
            self.discipline.covered.len(),
            self.discipline.excluded.len(),
            self.discipline.counterexamples.len()
        );
        match &self.capture_margin {
            None => s.push_str("capture margin: ok\n"),
            Some(e) => {
                let _ = writeln!(s, "capture margin: {e}");
            }
        }
        s
    }
}

/// Classify every path, retime hold-violating PRPG paths and shorten
/// setup-violating MISR paths, then run the discipline and margin checks.
pub fn check_paths(
    paths: &[ShiftPath],
    sched: Option<&CaptureSchedule>,
    domains: &[ClockDomain],
) -> Result<TimingReport, TimingError> {
    let mut rows = Vec::with_capacity(paths.len());
    for p in paths {
        p.validate()?;
        let before = classify(p);
        let (fixed, fix) = match p.kind {
            PathKind::PrpgToChain if before.hold => (apply_retiming(p)?, Fix::Retimed),
            PathKind::ChainToMisr if before.setup => {
                let excess = p.launch_offset + p.d_max - (p.capture_offset + p.period - p.t_setup);
                let amount = excess.min(p.d_max - p.d_min);
                (reduce_levels(p, amount)?, Fix::ReducedLevels)
            }
            _ => (p.clone(), Fix::None),
        };
        let after = classify(&fixed);
        let fix = if after.is_clean() { fix } else { Fix::Unfixed };
        rows.push(TimingRow {
            id: p.id.clone(),
            kind: p.kind,
            before,
            after,
            fix,
        });
    }
    let capture_margin = sched
        .map(|s| check_capture_margin(s, domains))
        .transpose()
        .err()
        .map(|e| e.to_string());
    Ok(TimingReport {
        rows,
        discipline: check_discipline(paths),
        capture_margin,
    })
}

/// Modeled shift paths of one domain: PRPG clock `period/10` ahead of the
/// chain clock, MISR clock `period/10` ahead as well.
pub fn default_paths(domain: &ClockDomain) -> Vec<ShiftPath> {
    let p = domain.period;
    let lead = p / 10;
    let base = ShiftPath {
        id: String::new(),
        kind: PathKind::ChainInternal,
        domain: Some(domain.id),
        launch_offset: Time::from(0),
        capture_offset: Time::from(0),
        d_min: p / 10,
        d_max: p / 5,
        t_setup: p / 20,
        t_hold: p / 20,
        period: p,
        retimed: false,
    };
    vec![
        ShiftPath {
            id: format!("{}/prpg>chain", domain.name),
            kind: PathKind::PrpgToChain,
            capture_offset: lead,
            ..base.clone()
        },
        ShiftPath {
            id: format!("{}/chain", domain.name),
            ..base.clone()
        },
        ShiftPath {
            id: format!("{}/chain>misr", domain.name),
            kind: PathKind::ChainToMisr,
            launch_offset: lead,
            ..base
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::set_skew;
    use crate::simkernel::Pulse;
    use crate::time::parse_decimal;
    use proptest::prelude::*;

    fn t(s: &str) -> Time {
        parse_decimal(s).unwrap()
    }

    #[allow(clippy::too_many_arguments)]
    fn path(kind: PathKind, l: &str, c: &str, dmin: &str, dmax: &str, ts: &str, th: &str, per: &str) -> ShiftPath {
        ShiftPath {
            id: "p".into(),
            kind,
            domain: None,
            launch_offset: t(l),
            capture_offset: t(c),
            d_min: t(dmin),
            d_max: t(dmax),
            t_setup: t(ts),
            t_hold: t(th),
            period: t(per),
            retimed: false,
        }
    }

    #[test]
    fn worked_examples() {
        let nominal = path(PathKind::ChainInternal, "0", "0", "0.2", "0.5", "0.1", "0.05", "1");
        assert!(classify(&nominal).is_clean());

        // 0.1 < 0.3 + 0.05
        let hold = path(PathKind::PrpgToChain, "0", "0.3", "0.1", "0.4", "0.1", "0.05", "1");
        assert_eq!(
            classify(&hold),
            Violations {
                hold: true,
                setup: false
            }
        );
        let fixed = apply_retiming(&hold).unwrap();
        assert!(fixed.retimed);
        assert_eq!(fixed.launch_offset, t("0.5"));
        assert!(classify(&fixed).is_clean());
        assert_eq!(
            apply_retiming(&nominal.clone()).unwrap_err(),
            TimingError::RetimeKind("p".into())
        );
        let clean = path(PathKind::PrpgToChain, "0", "0.1", "0.3", "0.4", "0.1", "0.05", "1");
        assert_eq!(apply_retiming(&clean).unwrap(), clean);

        // 0.3 + 0.9 > 0 + 1.0 - 0.15
        let setup = path(PathKind::ChainToMisr, "0.3", "0", "0.1", "0.9", "0.15", "0.05", "1.0");
        assert_eq!(
            classify(&setup),
            Violations {
                hold: false,
                setup: true
            }
        );
        assert!(matches!(apply_retiming(&setup), Err(TimingError::RetimeKind(_))));
        let reduced = reduce_levels(&setup, t("0.35")).unwrap();
        assert_eq!(reduced.d_max, t("0.55"));
        assert!(classify(&reduced).is_clean());
        assert!(reduce_levels(&setup, t("0.85")).is_err());
        assert!(reduce_levels(&hold, t("0.1")).is_err());
    }

    #[test]
    fn discipline_gating() {
        assert!(check_discipline(&[]).is_clean());
        let ok = path(PathKind::PrpgToChain, "0", "0.3", "0.1", "0.5", "0.1", "0.05", "1");
        let too_slow = path(PathKind::PrpgToChain, "0", "0.3", "0.1", "0.8", "0.1", "0.05", "1");
        let behind = path(PathKind::PrpgToChain, "0.3", "0", "0.1", "0.5", "0.1", "0.05", "1");
        let r = check_discipline(&[ok, too_slow, behind]);
        assert_eq!(r.covered, vec![0]);
        assert_eq!(r.excluded, vec![1, 2]);
        assert!(r.is_clean());
    }

    fn two_domains(skew: &str) -> Vec<ClockDomain> {
        let mut d = vec![
            ClockDomain::new(0, "a", Time::from(10), 0),
            ClockDomain::new(1, "b", Time::from(8), 1),
        ];
        set_skew(&mut d, 0, 1, t(skew));
        d
    }

    #[test]
    fn capture_margin() {
        let d = two_domains("1.5");
        let mut s = CaptureSchedule::default_for(&d, &[0, 1]);
        s.d3 = t("2.0");
        assert!(check_capture_margin(&s, &d).is_ok());
        s.d3 = t("1.0");
        let e = check_capture_margin(&s, &d).unwrap_err();
        assert_eq!(
            e,
            TimingError::Margin {
                a: 0,
                b: 1,
                d3: "1".into(),
                skew: "1.5".into()
            }
        );
        let single = CaptureSchedule {
            pulses: vec![Pulse { domain: 0, pulse: 1 }, Pulse { domain: 0, pulse: 2 }],
            ..s
        };
        assert!(check_capture_margin(&single, &d).is_ok());
    }

    #[test]
    fn default_paths_are_fixed() {
        let d = two_domains("0.5");
        let paths: Vec<ShiftPath> = d.iter().flat_map(default_paths).collect();
        let sched = CaptureSchedule::default_for(&d, &[0, 1]);
        let r = check_paths(&paths, Some(&sched), &d).unwrap();
        assert!(r.is_clean(), "{}", r.to_text());
        assert!(r.rows.iter().any(|row| row.fix == Fix::Retimed));
        assert!(r.to_text().contains("a/prpg>chain"));
        let bad = ShiftPath {
            d_min: t("9"),
            ..paths[0].clone()
        };
        assert!(matches!(
            check_paths(&[bad], None, &d),
            Err(TimingError::Invalid { .. })
        ));
    }

    fn hundredths(lo: i64, hi: i64) -> impl Strategy<Value = Time> {
        (lo..hi).prop_map(|v| Time::new(v, 100))
    }

    fn any_path() -> impl Strategy<Value = ShiftPath> {
        (
            prop_oneof![
                Just(PathKind::PrpgToChain),
                Just(PathKind::ChainToMisr),
                Just(PathKind::ChainInternal)
            ],
            hundredths(-100, 100),
            hundredths(-100, 100),
            hundredths(0, 200),
            hundredths(0, 200),
            hundredths(0, 50),
            hundredths(0, 50),
            hundredths(50, 400),
        )
            .prop_map(|(kind, l, c, a, b, ts, th, per)| ShiftPath {
                id: String::new(),
                kind,
                domain: None,
                launch_offset: l,
                capture_offset: c,
                d_min: a.min(b),
                d_max: a.max(b),
                t_setup: ts,
                t_hold: th,
                period: per,
                retimed: false,
            })
    }

    /// Paths built to satisfy the discipline preconditions.
    fn conforming_path() -> impl Strategy<Value = ShiftPath> {
        (any_path(), any::<bool>(), hundredths(1, 100), any::<u16>()).prop_map(|(p, prpg, gap, frac)| {
            let mut p = p;
            p.kind = if prpg {
                PathKind::PrpgToChain
            } else {
                PathKind::ChainToMisr
            };
            let (early, late) = (p.launch_offset, p.launch_offset + gap);
            if prpg {
                p.capture_offset = late;
            } else {
                p.launch_offset = late;
                p.capture_offset = early;
            }
            p.period = p.period.max(p.t_setup + gap + Time::new(1, 100));
            let room = p.period - p.t_setup - gap;
            p.d_max = room * Time::new(frac as i64, u16::MAX as i64);
            p.d_min = if prpg {
                p.d_min.min(p.d_max)
            } else {
                p.t_hold.min(p.d_max)
            };
            if !prpg && p.d_min < p.t_hold {
                p.t_hold = p.d_min;
            }
            p
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn conforming_paths_are_covered_and_clean(p in conforming_path()) {
            prop_assert!(discipline_applies(&p), "{p:?}");
            let v = classify(&p);
            match p.kind {
                PathKind::PrpgToChain => prop_assert!(!v.setup),
                _ => prop_assert!(!v.hold),
            }
        }

        #[test]
        fn covered_paths_never_show_forbidden_violations(p in any_path()) {
            let r = check_discipline(std::slice::from_ref(&p));
            prop_assert!(r.is_clean());
        }

        #[test]
        fn launch_offset_sweep_is_monotone(p in any_path(), step in hundredths(1, 50)) {
            let mut later = p.clone();
            later.launch_offset += step;
            let (a, b) = (classify(&p), classify(&later));
            prop_assert!(!b.hold || a.hold, "later launch cannot create hold");
            prop_assert!(!a.setup || b.setup, "later launch cannot clear setup");
        }

        #[test]
        fn retiming_clears_hold_when_half_period_suffices(p in any_path()) {
            let p = ShiftPath { kind: PathKind::PrpgToChain, ..p };
            let q = apply_retiming(&p).unwrap();
            let slack = p.capture_offset - p.launch_offset + p.t_hold - p.d_min;
            if classify(&p).hold && p.period / 2 > slack {
                prop_assert!(!classify(&q).hold);
            }
            if classify(&p).hold
                && p.d_max + p.period / 2 <= p.period - p.t_setup + (p.capture_offset - p.launch_offset)
            {
                prop_assert!(!classify(&q).setup);
            }
            if !classify(&p).hold {
                prop_assert_eq!(classify(&q), classify(&p));
            }
        }
    }
}
