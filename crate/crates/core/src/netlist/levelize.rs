use super::{Driver, GateId, Netlist, NetlistError};

/// Topological levels of the combinational logic.
///
/// Primary inputs and DFF outputs are level 0; a logic gate sits one level
/// above its deepest fanin. DFF gates themselves are reported at level 0.
#[derive(Clone, Debug)]
pub struct Levelization {
    pub levels: Vec<usize>,
    /// Combinational gates in non-decreasing level order.
    pub order: Vec<GateId>,
    pub depth: usize,
}

pub fn levelize(n: &Netlist) -> Result<Levelization, NetlistError> {
    let gates = n.gates();
    let mut pending = vec![0usize; gates.len()];
    let mut level = vec![0usize; gates.len()];
    let mut ready = Vec::new();
    for (id, g) in gates.iter().enumerate() {
        if g.kind.is_sequential() {
            continue;
        }
        pending[id] = g
            .inputs
            .iter()
            .filter(|&&i| matches!(n.driver(i), Driver::Gate(d) if !gates[d].kind.is_sequential()))
            .count();
        if pending[id] == 0 {
            ready.push(id);
        }
    }
    let comb = gates.iter().filter(|g| !g.kind.is_sequential()).count();
    let mut order = Vec::with_capacity(comb);
    while let Some(g) = ready.pop() {
        level[g] = 1 + gates[g]
            .inputs
            .iter()
            .map(|&i| match n.driver(i) {
                Driver::Gate(d) if !gates[d].kind.is_sequential() => level[d],
                _ => 0,
            })
            .max()
            .unwrap_or(0);
        order.push(g);
        for s in n.fanout(gates[g].output) {
            if let super::Sink::Gate { gate, .. } = *s {
                if !gates[gate].kind.is_sequential() {
                    pending[gate] -= 1;
                    if pending[gate] == 0 {
                        ready.push(gate);
                    }
                }
            }
        }
    }
    if order.len() != comb {
        return Err(NetlistError::CombinationalCycle {
            net: n.net_name(gates[cycle_member(n, &pending)].output).to_string(),
        });
    }
    order.sort_by_key(|&g| (level[g], g));
    let depth = level.iter().copied().max().unwrap_or(0);
    Ok(Levelization {
        levels: level,
        order,
        depth,
    })
}

/// Walk fanins among unresolved gates until one repeats; that gate lies on a cycle.
fn cycle_member(n: &Netlist, pending: &[usize]) -> GateId {
    let gates = n.gates();
    let mut cur = (0..gates.len())
        .find(|&g| pending[g] > 0)
        .expect("unresolved gate exists");
    let mut seen = vec![false; gates.len()];
    while !seen[cur] {
        seen[cur] = true;
        cur = gates[cur]
            .inputs
            .iter()
            .find_map(|&i| match n.driver(i) {
                Driver::Gate(d) if !gates[d].kind.is_sequential() && pending[d] > 0 => Some(d),
                _ => None,
            })
            .expect("unresolved gate has an unresolved fanin");
    }
    cur
}
