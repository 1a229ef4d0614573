use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{levelize, GateKind, NetId, Netlist};

/// Three-valued logic with pessimistic (Kleene) X handling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Logic3 {
    Zero,
    One,
    X,
}

impl Logic3 {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Logic3::One
        } else {
            Logic3::Zero
        }
    }

    pub fn to_bool(self) -> Option<bool> {
        match self {
            Logic3::Zero => Some(false),
            Logic3::One => Some(true),
            Logic3::X => None,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        match self {
            Logic3::Zero => Logic3::One,
            Logic3::One => Logic3::Zero,
            Logic3::X => Logic3::X,
        }
    }

    pub fn and(self, o: Self) -> Self {
        match (self, o) {
            (Logic3::Zero, _) | (_, Logic3::Zero) => Logic3::Zero,
            (Logic3::One, Logic3::One) => Logic3::One,
            _ => Logic3::X,
        }
    }

    pub fn or(self, o: Self) -> Self {
        self.not().and(o.not()).not()
    }

    pub fn xor(self, o: Self) -> Self {
        match (self.to_bool(), o.to_bool()) {
            (Some(a), Some(b)) => Logic3::from_bool(a ^ b),
            _ => Logic3::X,
        }
    }

    pub fn eval(kind: GateKind, inputs: impl IntoIterator<Item = Logic3>) -> Logic3 {
        let mut it = inputs.into_iter();
        let first = it.next().unwrap_or(Logic3::X);
        let v = match kind {
            GateKind::And | GateKind::Nand => it.fold(first, Logic3::and),
            GateKind::Or | GateKind::Nor => it.fold(first, Logic3::or),
            GateKind::Xor | GateKind::Xnor => it.fold(first, Logic3::xor),
            GateKind::Not | GateKind::Buf | GateKind::Dff => first,
        };
        if kind.is_inverting() {
            v.not()
        } else {
            v
        }
    }
}

#[derive(Clone, Debug)]
pub struct XSourceOptions {
    /// Number of random PI / scan-state assignments simulated.
    pub samples: usize,
    pub seed: u64,
}

impl Default for XSourceOptions {
    fn default() -> Self {
        XSourceOptions {
            samples: 64,
            seed: 0x5eed,
        }
    }
}

/// Nets that can carry X in test mode and are not already behind a blocker.
///
/// Non-scan flip-flops without reset start at X, with reset at 0; PIs and
/// scan cells take random values per sample. Non-scan state is iterated
/// through capture cycles until it stops changing.
pub fn find_x_sources(n: &Netlist, opts: &XSourceOptions) -> BTreeSet<NetId> {
    let order = match levelize(n) {
        Ok(l) => l.order,
        Err(_) => return BTreeSet::new(),
    };
    let mut out = BTreeSet::new();
    let nonscan: Vec<_> = n.flip_flops().iter().filter(|f| !f.scannable).collect();
    for ff in &nonscan {
        if !ff.has_reset {
            out.insert(n.gate(ff.gate).output);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut val = vec![Logic3::X; n.net_count()];
    let max_iters = 2 * nonscan.len() + 2;
    for _ in 0..opts.samples {
        for &pi in n.primary_inputs() {
            val[pi] = match n.control_value(pi, true) {
                Some(b) => Logic3::from_bool(b),
                None => Logic3::from_bool(rng.gen()),
            };
        }
        for ff in n.flip_flops() {
            let q = n.gate(ff.gate).output;
            val[q] = match (ff.scannable, ff.has_reset) {
                (true, _) => Logic3::from_bool(rng.gen()),
                (false, true) => Logic3::Zero,
                (false, false) => Logic3::X,
            };
        }
        for _ in 0..max_iters {
            for &g in &order {
                let gate = n.gate(g);
                val[gate.output] = Logic3::eval(gate.kind, gate.inputs.iter().map(|&i| val[i]));
            }
            for (net, v) in val.iter().enumerate() {
                if *v == Logic3::X {
                    out.insert(net);
                }
            }
            let mut changed = false;
            for ff in &nonscan {
                let gate = n.gate(ff.gate);
                let next = val[gate.inputs[0]];
                if val[gate.output] != next {
                    val[gate.output] = next;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
    out.retain(|net| !n.x_blocked().contains(net));
    out
}
