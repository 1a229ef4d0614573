//! Test pattern generation hardware: PRPGs, phase shifters and space expanders.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest PRPG the word-level model supports.
pub const MAX_PRPG_LENGTH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpgError {
    #[error("invalid polynomial: {0}")]
    Polynomial(String),
    #[error("PRPG length {0} is outside 1..={MAX_PRPG_LENGTH}")]
    Length(usize),
    #[error("seed {seed:#x} does not fit in {length} bits")]
    Seed { seed: u64, length: usize },
    #[error("phase shifter channel {channel}: {msg}")]
    Channel { channel: usize, msg: String },
    #[error("space expander: {0}")]
    Expander(String),
    #[error(
        "could not build a phase shifter with {channels} channels and separation {min_sep} on a {length}-bit PRPG"
    )]
    NoShifter {
        channels: usize,
        min_sep: usize,
        length: usize,
    },
    #[error("separation window {window} is shorter than twice the minimum separation {min_sep}")]
    Window { window: usize, min_sep: usize },
}

/// Feedback polynomial over GF(2), stored as its nonzero exponents.
///
/// The constant term is implied: `[19, 5, 2, 1]` is x^19 + x^5 + x^2 + x + 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Polynomial {
    exponents: Vec<u32>,
}

/// Primitive polynomials by degree, as exponent lists.
const PRIMITIVE: [(u32, &[u32]); 29] = [
    (4, &[4, 3]),
    (5, &[5, 3]),
    (6, &[6, 5]),
    (7, &[7, 6]),
    (8, &[8, 6, 5, 4]),
    (9, &[9, 5]),
    (10, &[10, 7]),
    (11, &[11, 9]),
    (12, &[12, 6, 4, 1]),
    (13, &[13, 4, 3, 1]),
    (14, &[14, 5, 3, 1]),
    (15, &[15, 14]),
    (16, &[16, 15, 13, 4]),
    (17, &[17, 14]),
    (18, &[18, 11]),
    (19, &[19, 6, 2, 1]),
    (20, &[20, 17]),
    (21, &[21, 19]),
    (22, &[22, 21]),
    (23, &[23, 18]),
    (24, &[24, 23, 22, 17]),
    (25, &[25, 22]),
    (26, &[26, 6, 2, 1]),
    (27, &[27, 5, 2, 1]),
    (28, &[28, 25]),
    (29, &[29, 27]),
    (30, &[30, 6, 4, 1]),
    (31, &[31, 28]),
    (32, &[32, 22, 2, 1]),
];

impl Polynomial {
    pub fn from_exponents(exps: &[u32]) -> Result<Self, TpgError> {
        let set: BTreeSet<u32> = exps.iter().copied().filter(|&e| e > 0).collect();
        if set.is_empty() {
            return Err(TpgError::Polynomial("no nonzero exponent".into()));
        }
        Ok(Polynomial {
            exponents: set.into_iter().rev().collect(),
        })
    }

    /// The shipped primitive polynomial of this degree (4..=32).
    pub fn primitive(degree: usize) -> Option<Self> {
        PRIMITIVE
            .iter()
            .find(|(d, _)| *d as usize == degree)
            .map(|(_, e)| Polynomial { exponents: e.to_vec() })
    }

    /// Degrees covered by [`Polynomial::primitive`].
    pub fn primitive_degrees() -> impl Iterator<Item = usize> {
        PRIMITIVE.iter().map(|(d, _)| *d as usize)
    }

    /// Primitive polynomial when one is shipped, else x^m + x + 1.
    pub fn default_for(degree: usize) -> Self {
        Self::primitive(degree).unwrap_or_else(|| Polynomial {
            exponents: if degree > 1 { vec![degree as u32, 1] } else { vec![1] },
        })
    }

    pub fn degree(&self) -> usize {
        self.exponents[0] as usize
    }

    /// Nonzero exponents, descending.
    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    /// Fibonacci tap mask: bit `e - 1` for every exponent `e`.
    pub fn tap_mask(&self) -> u64 {
        self.exponents
            .iter()
            .filter(|&&e| e as usize <= MAX_PRPG_LENGTH)
            .fold(0, |m, &e| m | 1u64 << (e - 1))
    }
}

impl TryFrom<Vec<u32>> for Polynomial {
    type Error = TpgError;
    fn try_from(v: Vec<u32>) -> Result<Self, TpgError> {
        Polynomial::from_exponents(&v)
    }
}

impl From<Polynomial> for Vec<u32> {
    fn from(p: Polynomial) -> Vec<u32> {
        p.exponents
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.exponents {
            match e {
                1 => write!(f, "x+")?,
                _ => write!(f, "x^{e}+")?,
            }
        }
        write!(f, "1")
    }
}

fn width_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Fibonacci (external-XOR) LFSR. Bit `i` of `state` is cell `i`; the new
/// bit enters cell 0 and the serial output is cell `length - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prpg {
    pub length: usize,
    pub polynomial: Polynomial,
    pub state: u64,
    pub seed: u64,
}

impl Prpg {
    pub fn new(polynomial: Polynomial, seed: u64) -> Result<Self, TpgError> {
        let length = polynomial.degree();
        if length == 0 || length > MAX_PRPG_LENGTH {
            return Err(TpgError::Length(length));
        }
        if seed & !width_mask(length) != 0 {
            return Err(TpgError::Seed { seed, length });
        }
        Ok(Prpg {
            length,
            polynomial,
            state: seed,
            seed,
        })
    }

    #[inline]
    pub fn advance(&mut self) {
        let fb = (self.state & self.polynomial.tap_mask()).count_ones() as u64 & 1;
        self.state = ((self.state << 1) | fb) & width_mask(self.length);
    }

    pub fn output(&self) -> bool {
        self.state >> (self.length - 1) & 1 == 1
    }

    pub fn cell(&self, i: usize) -> bool {
        self.state >> i & 1 == 1
    }
}

/// One LFSR clock, as a pure function.
pub fn lfsr_step(p: &Prpg) -> Prpg {
    let mut next = p.clone();
    next.advance();
    next
}

/// XOR network: channel `c` is the parity of the PRPG cells in `taps[c]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseShifter {
    pub taps: Vec<Vec<usize>>,
    masks: Vec<u64>,
}

impl PhaseShifter {
    pub fn new(taps: Vec<Vec<usize>>, prpg_length: usize) -> Result<Self, TpgError> {
        let mut seen = BTreeSet::new();
        let mut masks = Vec::with_capacity(taps.len());
        for (c, t) in taps.iter().enumerate() {
            let err = |msg: String| TpgError::Channel { channel: c, msg };
            if t.is_empty() {
                return Err(err("taps no PRPG cell".into()));
            }
            let mut m = 0u64;
            for &i in t {
                if i >= prpg_length {
                    return Err(err(format!("tap {i} is outside the {prpg_length}-bit PRPG")));
                }
                m ^= 1 << i;
            }
            if m == 0 {
                return Err(err("taps cancel out".into()));
            }
            if !seen.insert(m) {
                return Err(err("duplicates another channel's tap set".into()));
            }
            masks.push(m);
        }
        Ok(PhaseShifter { taps, masks })
    }

    /// Channel `c` taps cell `c`.
    pub fn identity(channels: usize, prpg_length: usize) -> Result<Self, TpgError> {
        PhaseShifter::new((0..channels).map(|c| vec![c]).collect(), prpg_length)
    }

    /// Random three-tap channels, each accepted only if it keeps every pair
    /// of channels at least `min_sep` cycles apart.
    pub fn generate<R: Rng>(prpg: &Prpg, channels: usize, min_sep: usize, rng: &mut R) -> Result<Self, TpgError> {
        let n = prpg.length;
        let taps_per = n.min(3);
        let window = 2 * min_sep + 2 * n;
        let mut taps: Vec<Vec<usize>> = Vec::with_capacity(channels);
        let mut streams: Vec<Vec<bool>> = Vec::with_capacity(channels);
        let mut masks = BTreeSet::new();
        let fail = TpgError::NoShifter {
            channels,
            min_sep,
            length: n,
        };
        for _ in 0..channels {
            let mut accepted = false;
            for _attempt in 0..2000 {
                let mut t: Vec<usize> = sample(rng, n, taps_per).into_vec();
                t.sort_unstable();
                let mask = t.iter().fold(0u64, |m, &i| m | 1 << i);
                if masks.contains(&mask) {
                    continue;
                }
                let s = channel_stream(prpg, mask, window);
                if streams.iter().all(|o| min_shift(o, &s, min_sep).is_none()) {
                    masks.insert(mask);
                    taps.push(t);
                    streams.push(s);
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(fail);
            }
        }
        PhaseShifter::new(taps, n)
    }

    pub fn channels(&self) -> usize {
        self.taps.len()
    }

    #[inline]
    pub fn channel(&self, state: u64, c: usize) -> bool {
        (state & self.masks[c]).count_ones() & 1 == 1
    }

    pub fn mask(&self, c: usize) -> u64 {
        self.masks[c]
    }
}

/// Current phase-shifter output bits, one per channel.
pub fn shifter_outputs(p: &Prpg, ps: &PhaseShifter) -> Vec<bool> {
    (0..ps.channels()).map(|c| ps.channel(p.state, c)).collect()
}

fn channel_stream(p: &Prpg, mask: u64, len: usize) -> Vec<bool> {
    let mut q = p.clone();
    (0..len)
        .map(|_| {
            let b = (q.state & mask).count_ones() & 1 == 1;
            q.advance();
            b
        })
        .collect()
}

/// Smallest shift `< limit` under which the two streams coincide over the window.
fn min_shift(a: &[bool], b: &[bool], limit: usize) -> Option<usize> {
    let len = a.len().min(b.len());
    (0..limit.min(len)).find(|&s| {
        let ab = (0..len - s).all(|t| a[t + s] == b[t]);
        let ba = (0..len - s).all(|t| b[t + s] == a[t]);
        ab || ba
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Separation {
    Pass,
    Fail { a: usize, b: usize, shift: usize },
}

/// Check that no two channel streams are copies of each other under a
/// shift smaller than `min_sep`, observed over `window` cycles.
pub fn verify_separation(p: &Prpg, ps: &PhaseShifter, min_sep: usize, window: usize) -> Result<Separation, TpgError> {
    if window < 2 * min_sep {
        return Err(TpgError::Window { window, min_sep });
    }
    let streams: Vec<Vec<bool>> = (0..ps.channels())
        .map(|c| channel_stream(p, ps.mask(c), window))
        .collect();
    for a in 0..streams.len() {
        for b in a + 1..streams.len() {
            if let Some(shift) = min_shift(&streams[a], &streams[b], min_sep) {
                return Ok(Separation::Fail { a, b, shift });
            }
        }
    }
    Ok(Separation::Pass)
}

/// Channel fanout to chains with optional per-branch inversion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpaceExpander {
    /// `branches[c]`: (chain, inverted) pairs driven by channel `c`.
    pub branches: Vec<Vec<(usize, bool)>>,
    chains: usize,
}

impl SpaceExpander {
    pub fn new(branches: Vec<Vec<(usize, bool)>>, chains: usize) -> Result<Self, TpgError> {
        let mut driven = vec![0usize; chains];
        for &(ch, _) in branches.iter().flatten() {
            if ch >= chains {
                return Err(TpgError::Expander(format!("chain {ch} out of range")));
            }
            driven[ch] += 1;
        }
        if let Some(ch) = driven.iter().position(|&d| d != 1) {
            return Err(TpgError::Expander(format!(
                "chain {ch} is driven by {} branches",
                driven[ch]
            )));
        }
        Ok(SpaceExpander { branches, chains })
    }

    pub fn identity(chains: usize) -> Self {
        SpaceExpander {
            branches: (0..chains).map(|c| vec![(c, false)]).collect(),
            chains,
        }
    }

    /// Chain `j` hangs off channel `j % channels`, inverted on every other wrap.
    pub fn round_robin(channels: usize, chains: usize) -> Result<Self, TpgError> {
        if channels == 0 && chains > 0 {
            return Err(TpgError::Expander("no channels for a nonempty domain".into()));
        }
        let mut branches = vec![Vec::new(); channels];
        for j in 0..chains {
            branches[j % channels].push((j, (j / channels) % 2 == 1));
        }
        SpaceExpander::new(branches, chains)
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn channels(&self) -> usize {
        self.branches.len()
    }

    /// Expand channel bits into per-chain scan-in bits.
    pub fn expand(&self, channel_bits: &[bool], out: &mut [bool]) {
        for (c, br) in self.branches.iter().enumerate() {
            for &(ch, inv) in br {
                out[ch] = channel_bits[c] ^ inv;
            }
        }
    }
}

/// PRPG, phase shifter and space expander of one clock domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainTpg {
    pub prpg: Prpg,
    pub shifter: PhaseShifter,
    pub expander: SpaceExpander,
}

impl DomainTpg {
    pub fn new(prpg: Prpg, shifter: PhaseShifter, expander: SpaceExpander) -> Result<Self, TpgError> {
        if expander.channels() != shifter.channels() {
            return Err(TpgError::Expander(format!(
                "{} expander inputs for {} shifter channels",
                expander.channels(),
                shifter.channels()
            )));
        }
        Ok(DomainTpg {
            prpg,
            shifter,
            expander,
        })
    }

    /// Scan-in bits for the current PRPG state, then clock the PRPG.
    pub fn clock(&mut self, channel_buf: &mut Vec<bool>, chain_bits: &mut [bool]) {
        channel_buf.clear();
        channel_buf.extend((0..self.shifter.channels()).map(|c| self.shifter.channel(self.prpg.state, c)));
        self.expander.expand(channel_buf, chain_bits);
        self.prpg.advance();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn period(p: &Prpg) -> u64 {
        let mut q = lfsr_step(p);
        let mut k = 1;
        while q.state != p.seed {
            q.advance();
            k += 1;
        }
        k
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let p = Prpg::new(Polynomial::primitive(8).unwrap(), 0).unwrap();
        assert_eq!(lfsr_step(&p).state, 0);
    }

    #[test]
    fn four_bit_cycle_matches_enumeration() {
        let poly = Polynomial::from_exponents(&[4, 3]).unwrap();
        let p = Prpg::new(poly, 0b0001).unwrap();
        // oracle: walk the full 16-state space from the seed
        let mut seen = std::collections::HashSet::new();
        let mut q = p.clone();
        while seen.insert(q.state) {
            q.advance();
        }
        assert_eq!(seen.len(), 15);
        assert!(!seen.contains(&0));
        assert_eq!(period(&p), 15);
    }

    #[test]
    fn polynomial_text_and_masks() {
        let p = Polynomial::from_exponents(&[1, 19, 0, 5, 2]).unwrap();
        assert_eq!(p.exponents(), &[19, 5, 2, 1]);
        assert_eq!(p.to_string(), "x^19+x^5+x^2+x+1");
        assert_eq!(p.tap_mask(), (1 << 18) | (1 << 4) | (1 << 1) | 1);
        assert!(Polynomial::from_exponents(&[0]).is_err());
        assert_eq!(Polynomial::default_for(99).exponents(), &[99, 1]);
    }

    #[test]
    fn seed_must_fit() {
        let e = Prpg::new(Polynomial::primitive(4).unwrap(), 0x10).unwrap_err();
        assert_eq!(e, TpgError::Seed { seed: 0x10, length: 4 });
    }

    #[test]
    fn shifter_taps() {
        let p = Prpg::new(Polynomial::primitive(4).unwrap(), 0b0011).unwrap();
        let ps = PhaseShifter::new(vec![vec![1], vec![0, 1], vec![2]], 4).unwrap();
        assert_eq!(shifter_outputs(&p, &ps), vec![true, false, false]);
        assert!(PhaseShifter::new(vec![vec![0, 1], vec![1, 0]], 4).is_err());
        assert!(PhaseShifter::new(vec![vec![]], 4).is_err());
        assert!(PhaseShifter::new(vec![vec![4]], 4).is_err());
    }

    #[test]
    fn separation_checks() {
        let p = Prpg::new(Polynomial::primitive(4).unwrap(), 1).unwrap();
        let one = PhaseShifter::new(vec![vec![3]], 4).unwrap();
        assert_eq!(verify_separation(&p, &one, 3, 20).unwrap(), Separation::Pass);
        // cell 2 replays cell 0 two clocks later
        let ps = PhaseShifter::new(vec![vec![0], vec![2]], 4).unwrap();
        assert_eq!(verify_separation(&p, &ps, 2, 20).unwrap(), Separation::Pass);
        assert_eq!(
            verify_separation(&p, &ps, 3, 20).unwrap(),
            Separation::Fail { a: 0, b: 1, shift: 2 }
        );
        assert!(verify_separation(&p, &ps, 11, 20).is_err());
    }

    #[test]
    fn generated_shifter_passes_its_own_check() {
        let p = Prpg::new(Polynomial::primitive(19).unwrap(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ps = PhaseShifter::generate(&p, 40, 30, &mut rng).unwrap();
        assert_eq!(ps.channels(), 40);
        assert_eq!(verify_separation(&p, &ps, 30, 200).unwrap(), Separation::Pass);
    }

    #[test]
    fn expander_round_robin_inverts_second_wrap() {
        let e = SpaceExpander::round_robin(2, 5).unwrap();
        let mut out = vec![false; 5];
        e.expand(&[true, false], &mut out);
        assert_eq!(out, vec![true, false, false, true, true]);
        assert!(SpaceExpander::new(vec![vec![(0, false)], vec![(0, true)]], 1).is_err());
    }

    proptest! {
        #[test]
        fn lfsr_is_linear(a in 0u64..(1 << 19), b in 0u64..(1 << 19)) {
            let poly = Polynomial::primitive(19).unwrap();
            let s = |x| lfsr_step(&Prpg::new(poly.clone(), x).unwrap()).state;
            prop_assert_eq!(s(a ^ b), s(a) ^ s(b));
        }
    }
}
