use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GateKind, Netlist, NetlistBuilder};

/// Shape of a generated netlist.
#[derive(Clone, Copy, Debug)]
pub struct RandomSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub gates: usize,
    pub flip_flops: usize,
    pub max_fanin: usize,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            inputs: 4,
            outputs: 2,
            gates: 20,
            flip_flops: 3,
            max_fanin: 3,
        }
    }
}

/// Acyclic random logic over inputs `i*`, flip-flops `q*` and gates `g*`.
/// Outputs are the last gates; flip-flop D inputs are random gates.
pub fn random_netlist(spec: &RandomSpec, seed: u64) -> Netlist {
    const KINDS: [GateKind; 8] = [
        GateKind::And,
        GateKind::Nand,
        GateKind::Or,
        GateKind::Nor,
        GateKind::Xor,
        GateKind::Xnor,
        GateKind::Not,
        GateKind::Buf,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = NetlistBuilder::new();
    let mut pool: Vec<String> = Vec::new();
    for i in 0..spec.inputs.max(1) {
        let name = format!("i{i}");
        b.input(&name);
        pool.push(name);
    }
    pool.extend((0..spec.flip_flops).map(|i| format!("q{i}")));
    let gates = spec.gates.max(1);
    for g in 0..gates {
        let kind = *KINDS.choose(&mut rng).unwrap();
        let fanin = match kind {
            GateKind::Not | GateKind::Buf => 1,
            _ => rng.gen_range(2..=spec.max_fanin.max(2)),
        };
        let ins: Vec<String> = (0..fanin).map(|_| pool.choose(&mut rng).unwrap().clone()).collect();
        let refs: Vec<&str> = ins.iter().map(String::as_str).collect();
        let name = format!("g{g}");
        b.gate(kind, &name, &refs);
        pool.push(name);
    }
    for f in 0..spec.flip_flops {
        let d = format!("g{}", rng.gen_range(0..gates));
        b.gate(GateKind::Dff, &format!("q{f}"), &[&d]);
    }
    for o in 0..spec.outputs.min(gates) {
        b.output(&format!("g{}", gates - 1 - o));
    }
    b.build().expect("generated netlist is well formed")
}
