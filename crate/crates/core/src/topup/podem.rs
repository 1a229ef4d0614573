//! PODEM over the compiled test-mode view.
//!
//! Scan cells that drive a net and free primary inputs are the decision
//! variables; capture nets and free POs are the observation points, as in a
//! single-capture scan test.

use rand::Rng;

use crate::dft::CellId;
use crate::faultsim::{target, Fault, Target};
use crate::netlist::{Logic3, NetId};
use crate::simkernel::{SimModel, Src};

use super::TopUpError;

/// Scan-load cube for one target fault. `X` entries are don't-cares.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestCube {
    /// Index of the target fault in its fault list.
    pub target: usize,
    pub cells: Vec<Logic3>,
    pub pis: Vec<Logic3>,
}

impl TestCube {
    pub fn specified(&self) -> usize {
        self.cells.iter().chain(&self.pis).filter(|v| **v != Logic3::X).count()
    }

    /// Replace every don't-care with a random bit.
    pub fn fill(&self, rng: &mut impl Rng) -> (Vec<bool>, Vec<bool>) {
        let mut f = |v: &Logic3| v.to_bool().unwrap_or_else(|| rng.gen());
        let cells = self.cells.iter().map(&mut f).collect();
        let pis = self.pis.iter().map(&mut f).collect();
        (cells, pis)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PodemOutcome {
    Test(TestCube),
    Untestable,
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Var {
    Cell(CellId),
    Pi(usize),
}

struct Search<'a> {
    model: &'a SimModel,
    target: Target,
    stuck: bool,
    cells: Vec<Logic3>,
    pis: Vec<Logic3>,
    good: Vec<Logic3>,
    bad: Vec<Logic3>,
    observed: Vec<bool>,
    level: Vec<u32>,
    xpath: Vec<bool>,
}

const X: Logic3 = Logic3::X;

fn is_d(g: Logic3, b: Logic3) -> bool {
    g != X && b != X && g != b
}

impl<'a> Search<'a> {
    fn new(model: &'a SimModel, target: Target, stuck: bool) -> Self {
        let nc = model.net_count();
        let mut observed = vec![false; nc];
        for c in &model.cells {
            if let Some(net) = c.capture {
                observed[net] = true;
            }
        }
        for &(_, net) in &model.pos {
            observed[net] = true;
        }
        let mut level = vec![0; nc];
        for op in &model.ops {
            level[op.output] = op.level;
        }
        Search {
            model,
            target,
            stuck,
            cells: vec![X; model.cell_count()],
            pis: vec![X; model.pis.len()],
            good: vec![X; nc],
            bad: vec![X; nc],
            observed,
            level,
            xpath: vec![false; nc],
        }
    }

    fn stuck3(&self) -> Logic3 {
        Logic3::from_bool(self.stuck)
    }

    fn site_net(&self) -> Option<NetId> {
        match self.target {
            Target::Stem(n)
            | Target::Pin { net: n, .. }
            | Target::Capture { net: n, .. }
            | Target::Po { net: n, .. } => Some(n),
            Target::Inert => None,
        }
    }

    fn imply(&mut self) {
        let m = self.model;
        let sv = self.stuck3();
        for net in 0..m.net_count() {
            let v = match m.src[net] {
                Src::Op(_) => continue,
                Src::Cell(c) => self.cells[c],
                Src::Pi(i) => self.pis[i as usize],
                Src::Const(v) => Logic3::from_bool(v != 0),
            };
            self.good[net] = v;
            self.bad[net] = if self.target == Target::Stem(net) { sv } else { v };
        }
        for (k, op) in m.ops.iter().enumerate() {
            let ins = m.op_in(op);
            let g = Logic3::eval(op.kind, ins.iter().map(|&i| self.good[i]));
            let pin = match self.target {
                Target::Pin { op, pin, .. } if op as usize == k => Some(pin as usize),
                _ => None,
            };
            let bad = &self.bad;
            let b = Logic3::eval(
                op.kind,
                ins.iter()
                    .enumerate()
                    .map(|(p, &i)| if Some(p) == pin { sv } else { bad[i] }),
            );
            self.good[op.output] = g;
            self.bad[op.output] = if self.target == Target::Stem(op.output) { sv } else { b };
        }
    }

    fn detected(&self) -> bool {
        match self.target {
            Target::Capture { net, .. } | Target::Po { net, .. } => self.good[net] == self.stuck3().not(),
            Target::Inert => false,
            _ => (0..self.good.len()).any(|n| self.observed[n] && is_d(self.good[n], self.bad[n])),
        }
    }

    fn mark_xpaths(&mut self) {
        let m = self.model;
        for op in m.ops.iter().rev() {
            let out = op.output;
            let open = self.good[out] == X || self.bad[out] == X;
            self.xpath[out] =
                open && (self.observed[out] || m.readers[out].iter().any(|&r| self.xpath[m.ops[r as usize].output]));
        }
    }

    /// Next (net, value) goal, or `None` when the current assignment cannot
    /// lead to a test.
    fn objective(&mut self) -> Option<(NetId, bool)> {
        let net = self.site_net()?;
        let want = !self.stuck;
        match self.good[net].to_bool() {
            None => return Some((net, want)),
            Some(v) if v != want => return None,
            _ => {}
        }
        if matches!(self.target, Target::Capture { .. } | Target::Po { .. }) {
            return None;
        }
        self.mark_xpaths();
        let m = self.model;
        let sv = self.stuck3();
        for (k, op) in m.ops.iter().enumerate() {
            let out = op.output;
            if !self.xpath[out] {
                continue;
            }
            let ins = m.op_in(op);
            let carries = ins.iter().enumerate().any(|(p, &i)| {
                let b = match self.target {
                    Target::Pin { op, pin, .. } if op as usize == k && pin as usize == p => sv,
                    _ => self.bad[i],
                };
                is_d(self.good[i], b)
            });
            if !carries {
                continue;
            }
            let nc = op.kind.controlling_value().is_some_and(|c| !c);
            if let Some(&i) = ins.iter().find(|&&i| self.good[i] == X) {
                return Some((i, nc));
            }
        }
        None
    }

    fn backtrace(&self, mut net: NetId, mut val: bool) -> Option<(Var, bool)> {
        let m = self.model;
        loop {
            let k = match m.src[net] {
                Src::Cell(c) => return Some((Var::Cell(c), val)),
                Src::Pi(i) => return Some((Var::Pi(i as usize), val)),
                Src::Const(_) => return None,
                Src::Op(k) => k as usize,
            };
            let op = &m.ops[k];
            let ins = m.op_in(op);
            let inner = val ^ op.kind.is_inverting();
            match op.kind.controlling_value() {
                None if ins.len() == 1 => {
                    net = ins[0];
                    val = inner;
                }
                None => {
                    let mut parity = inner;
                    let mut pick = None;
                    for &i in ins {
                        match self.good[i].to_bool() {
                            Some(b) => parity ^= b,
                            None if pick.is_none() => pick = Some(i),
                            None => {}
                        }
                    }
                    net = pick?;
                    val = parity;
                }
                Some(c) => {
                    let xs = ins.iter().copied().filter(|&i| self.good[i] == X);
                    if inner == c {
                        net = xs.min_by_key(|&i| (self.level[i], i))?;
                        val = c;
                    } else {
                        net = xs.max_by_key(|&i| (self.level[i], usize::MAX - i))?;
                        val = !c;
                    }
                }
            }
        }
    }

    fn set(&mut self, v: Var, val: Logic3) {
        match v {
            Var::Cell(c) => self.cells[c] = val,
            Var::Pi(i) => self.pis[i] = val,
        }
    }
}

/// Run PODEM for one stuck-at fault.
///
/// `id` is recorded as the cube's target. More than `backtrack_limit` flipped
/// decisions gives [`PodemOutcome::Aborted`]; an exhausted decision tree
/// gives [`PodemOutcome::Untestable`].
pub fn podem(model: &SimModel, fault: &Fault, id: usize, backtrack_limit: usize) -> Result<PodemOutcome, TopUpError> {
    if fault.model.is_transition() {
        return Err(TopUpError::NotStuckAt(id));
    }
    let t = target(model, fault.site);
    if t == Target::Inert {
        return Ok(PodemOutcome::Untestable);
    }
    let mut s = Search::new(model, t, fault.model.forced());
    let mut stack: Vec<(Var, bool, bool)> = Vec::new();
    let mut backtracks = 0usize;
    loop {
        s.imply();
        if s.detected() {
            return Ok(PodemOutcome::Test(TestCube {
                target: id,
                cells: s.cells,
                pis: s.pis,
            }));
        }
        if let Some((var, val)) = s.objective().and_then(|(n, v)| s.backtrace(n, v)) {
            stack.push((var, val, false));
            s.set(var, Logic3::from_bool(val));
            continue;
        }
        loop {
            let Some((var, val, flipped)) = stack.pop() else {
                return Ok(PodemOutcome::Untestable);
            };
            if flipped {
                s.set(var, X);
                continue;
            }
            backtracks += 1;
            if backtracks > backtrack_limit {
                return Ok(PodemOutcome::Aborted);
            }
            stack.push((var, !val, true));
            s.set(var, Logic3::from_bool(!val));
            break;
        }
    }
}
