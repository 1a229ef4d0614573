//! Output data compression: XOR space compactors and Galois MISRs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::Logic3;
use crate::tpg::Polynomial;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OdcError {
    #[error("MISR input width {got}, expected {expected}")]
    Width { expected: usize, got: usize },
    #[error("MISR input map: {0}")]
    InputMap(String),
    #[error("polynomial degree {degree} does not match MISR length {length}")]
    Degree { degree: usize, length: usize },
    #[error("unknown value at MISR input {input}")]
    Unknown { input: usize },
    #[error("space compactor: {0}")]
    Compactor(String),
}

/// Fixed-width bit vector; bit `i` is MISR stage `i`.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature {
    len: usize,
    words: Vec<u64>,
}

impl Signature {
    pub fn zeros(len: usize) -> Self {
        Signature {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Signature::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    /// Parse a stage-0-first bit string such as `"1000"`.
    pub fn from_bit_str(s: &str) -> Option<Self> {
        let bits: Option<Vec<bool>> = s
            .chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect();
        bits.map(|b| Signature::from_bits(&b))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        let m = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn xor(&self, other: &Signature) -> Signature {
        assert_eq!(self.len, other.len);
        Signature {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
        }
    }

    /// Stage 0 first.
    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }

    /// Hex with stage `m - 1` as the most significant bit.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4).max(1);
        (0..digits)
            .rev()
            .map(|d| {
                let v = (0..4)
                    .filter(|&k| d * 4 + k < self.len && self.get(d * 4 + k))
                    .fold(0u32, |v, k| v | 1 << k);
                char::from_digit(v, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(len: usize, hex: &str) -> Option<Self> {
        let hex = hex.trim_start_matches("0x");
        let mut s = Signature::zeros(len);
        for (d, c) in hex.chars().rev().enumerate() {
            let v = c.to_digit(16)?;
            for k in 0..4 {
                if v >> k & 1 == 1 {
                    if d * 4 + k >= len {
                        return None;
                    }
                    s.set(d * 4 + k, true);
                }
            }
        }
        Some(s)
    }

    fn shift_up(&mut self) -> bool {
        let out = self.len > 0 && self.get(self.len - 1);
        let mut carry = 0;
        for w in &mut self.words {
            let next = *w >> 63;
            *w = (*w << 1) | carry;
            carry = next;
        }
        if !self.len.is_multiple_of(64) {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
        out
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", self.to_bit_string())
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Internal-XOR MISR: `state' = x * state mod P + inputs`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Misr {
    pub length: usize,
    pub polynomial: Polynomial,
    pub state: Signature,
    /// Input `k` is injected into stage `input_map[k]`.
    pub input_map: Vec<usize>,
    feedback: Signature,
}

impl Misr {
    pub fn new(polynomial: Polynomial, input_map: Vec<usize>) -> Result<Self, OdcError> {
        let length = polynomial.degree();
        if let Some(&bad) = input_map.iter().find(|&&s| s >= length) {
            return Err(OdcError::InputMap(format!("stage {bad} outside a {length}-bit MISR")));
        }
        let mut feedback = Signature::zeros(length);
        feedback.set(0, true);
        for &e in &polynomial.exponents()[1..] {
            feedback.set(e as usize, true);
        }
        Ok(Misr {
            length,
            polynomial,
            state: Signature::zeros(length),
            input_map,
            feedback,
        })
    }

    /// Input `k` into stage `k`.
    pub fn direct(polynomial: Polynomial, inputs: usize) -> Result<Self, OdcError> {
        Misr::new(polynomial, (0..inputs).collect())
    }

    pub fn with_state(mut self, state: Signature) -> Result<Self, OdcError> {
        if state.len() != self.length {
            return Err(OdcError::Width {
                expected: self.length,
                got: state.len(),
            });
        }
        self.state = state;
        Ok(self)
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.length];
        self.input_map.iter().all(|&s| !std::mem::replace(&mut seen[s], true))
    }

    pub fn inputs(&self) -> usize {
        self.input_map.len()
    }

    pub fn absorb(&mut self, inputs: &[bool]) -> Result<(), OdcError> {
        if inputs.len() != self.input_map.len() {
            return Err(OdcError::Width {
                expected: self.input_map.len(),
                got: inputs.len(),
            });
        }
        if self.state.shift_up() {
            for (w, f) in self.state.words.iter_mut().zip(&self.feedback.words) {
                *w ^= f;
            }
        }
        for (k, &b) in inputs.iter().enumerate() {
            if b {
                self.state.flip(self.input_map[k]);
            }
        }
        Ok(())
    }

    pub fn absorb3(&mut self, inputs: &[Logic3]) -> Result<(), OdcError> {
        let bits: Vec<bool> = inputs
            .iter()
            .enumerate()
            .map(|(k, v)| v.to_bool().ok_or(OdcError::Unknown { input: k }))
            .collect::<Result<_, _>>()?;
        self.absorb(&bits)
    }
}

pub fn misr_step(m: &Misr, inputs: &[bool]) -> Result<Misr, OdcError> {
    let mut next = m.clone();
    next.absorb(inputs)?;
    Ok(next)
}

pub fn signature_of<S: AsRef<[bool]>>(stream: &[S], m0: &Misr) -> Result<Signature, OdcError> {
    let mut m = m0.clone();
    for v in stream {
        m.absorb(v.as_ref())?;
    }
    Ok(m.state)
}

/// XOR trees from scan-outs to compacted outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceCompactor {
    pub xor_trees: Vec<Vec<usize>>,
}

impl SpaceCompactor {
    pub fn new(xor_trees: Vec<Vec<usize>>, scan_outs: usize) -> Result<Self, OdcError> {
        let mut seen = vec![0usize; scan_outs];
        for &i in xor_trees.iter().flatten() {
            if i >= scan_outs {
                return Err(OdcError::Compactor(format!("scan-out {i} out of range")));
            }
            seen[i] += 1;
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(OdcError::Compactor(format!(
                "scan-out {i} appears in {} trees",
                seen[i]
            )));
        }
        Ok(SpaceCompactor { xor_trees })
    }

    /// Scan-out `i` feeds output `i % outputs`.
    pub fn round_robin(scan_outs: usize, outputs: usize) -> Result<Self, OdcError> {
        let outputs = outputs.max(1);
        let mut trees = vec![Vec::new(); outputs];
        for i in 0..scan_outs {
            trees[i % outputs].push(i);
        }
        SpaceCompactor::new(trees, scan_outs)
    }

    pub fn outputs(&self) -> usize {
        self.xor_trees.len()
    }
}

pub fn compact(outputs: &[bool], c: &SpaceCompactor) -> Vec<bool> {
    c.xor_trees
        .iter()
        .map(|t| t.iter().fold(false, |acc, &i| acc ^ outputs[i]))
        .collect()
}

pub fn compact3(outputs: &[Logic3], c: &SpaceCompactor) -> Vec<Logic3> {
    c.xor_trees
        .iter()
        .map(|t| t.iter().fold(Logic3::Zero, |acc, &i| acc.xor(outputs[i])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn misr4() -> Misr {
        Misr::direct(Polynomial::from_exponents(&[4, 3]).unwrap(), 4).unwrap()
    }

    #[test]
    fn injection_from_zero() {
        let m = misr4();
        assert_eq!(misr_step(&m, &[false; 4]).unwrap().state.to_bit_string(), "0000");
        let m1 = misr_step(&m, &[true, false, false, false]).unwrap();
        assert_eq!(m1.state.to_bit_string(), "1000");
        assert_eq!(
            misr_step(&m, &[true]).unwrap_err(),
            OdcError::Width { expected: 4, got: 1 }
        );
    }

    /// Companion-matrix recurrence over explicit bool vectors.
    fn matrix_oracle(stream: &[[bool; 4]]) -> [bool; 4] {
        // P = x^4 + x^3 + 1: x^4 = x^3 + 1
        let a = [
            [false, false, false, true],
            [true, false, false, false],
            [false, true, false, false],
            [false, false, true, true],
        ];
        let mut s = [false; 4];
        for v in stream {
            let mut n = [false; 4];
            for (i, row) in a.iter().enumerate() {
                n[i] = row.iter().zip(&s).fold(v[i], |acc, (&r, &x)| acc ^ (r & x));
            }
            s = n;
        }
        s
    }

    #[test]
    fn eight_steps_match_matrix_oracle() {
        let stream: Vec<[bool; 4]> = [0b1011u8, 0b0110, 0b1111, 0b0001, 0b1000, 0b0101, 0b0011, 0b1100]
            .iter()
            .map(|&w| [w & 1 != 0, w & 2 != 0, w & 4 != 0, w & 8 != 0])
            .collect();
        let sig = signature_of(&stream, &misr4()).unwrap();
        assert_eq!(sig, Signature::from_bits(&matrix_oracle(&stream)));
        assert_eq!(signature_of::<[bool; 4]>(&[], &misr4()).unwrap(), Signature::zeros(4));
    }

    #[test]
    fn single_flip_changes_signature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Misr::direct(Polynomial::primitive(16).unwrap(), 16).unwrap();
        let s: Vec<Vec<bool>> = (0..100).map(|_| (0..16).map(|_| rng.gen()).collect()).collect();
        let mut t = s.clone();
        t[37][5] ^= true;
        assert_ne!(signature_of(&s, &m).unwrap(), signature_of(&t, &m).unwrap());
    }

    /// Remainder of a GF(2) polynomial (bit i = coeff of x^i) modulo p.
    fn rem(mut a: u64, p: u64) -> u64 {
        let dp = 63 - p.leading_zeros();
        while a != 0 && 63 - a.leading_zeros() >= dp {
            a ^= p << (63 - a.leading_zeros() - dp);
        }
        a
    }

    #[test]
    fn two_step_aliasing_is_divisibility() {
        for exps in [&[4u32, 3][..], &[4, 1], &[4, 2]] {
            let poly = Polynomial::from_exponents(exps).unwrap();
            let p = exps.iter().fold(1u64, |m, &e| m | 1 << e);
            let m = Misr::direct(poly, 4).unwrap();
            let bits = |w: u64| -> Vec<bool> { (0..4).map(|i| w >> i & 1 == 1).collect() };
            let mut aliases = 0;
            for e0 in 0..16u64 {
                for e1 in 0..16u64 {
                    if e0 == 0 && e1 == 0 {
                        continue;
                    }
                    let sig = signature_of(&[bits(e0), bits(e1)], &m).unwrap();
                    // E(x) = x*E0 + E1
                    let divisible = rem((e0 << 1) ^ e1, p) == 0;
                    assert_eq!(sig.is_zero(), divisible, "{exps:?} {e0} {e1}");
                    aliases += sig.is_zero() as usize;
                }
            }
            assert_eq!(aliases, 15);
        }
    }

    #[test]
    fn hex_round_trip() {
        let s = Signature::from_bit_str("10000000001").unwrap();
        assert_eq!(s.to_hex(), "401");
        assert_eq!(Signature::from_hex(11, "401").unwrap(), s);
        assert!(Signature::from_hex(3, "f").is_none());
        let long = Signature::zeros(99);
        assert_eq!(long.to_hex().len(), 25);
    }

    #[test]
    fn wide_misr_shifts_across_words() {
        let mut m = Misr::direct(Polynomial::default_for(99), 1).unwrap();
        m.absorb(&[true]).unwrap();
        for _ in 0..70 {
            m.absorb(&[false]).unwrap();
        }
        assert!(m.state.get(70));
        assert_eq!(m.state.to_bit_string().matches('1').count(), 1);
        for _ in 0..29 {
            m.absorb(&[false]).unwrap();
        }
        // x^99 = x + 1
        assert!(m.state.get(0) && m.state.get(1));
    }

    #[test]
    fn compactor_trees() {
        let c = SpaceCompactor::new(vec![vec![0, 1]], 2).unwrap();
        assert_eq!(compact(&[true, false], &c), vec![true]);
        assert_eq!(compact3(&[Logic3::One, Logic3::X], &c), vec![Logic3::X]);
        let id = SpaceCompactor::round_robin(3, 3).unwrap();
        assert_eq!(compact(&[true, false, true], &id), vec![true, false, true]);
        assert!(SpaceCompactor::new(vec![vec![0], vec![0]], 1).is_err());
        assert!(SpaceCompactor::new(vec![vec![0]], 2).is_err());
    }

    #[test]
    fn absorb3_rejects_x() {
        let mut m = misr4();
        assert_eq!(
            m.absorb3(&[Logic3::One, Logic3::X, Logic3::Zero, Logic3::Zero]),
            Err(OdcError::Unknown { input: 1 })
        );
    }

    proptest! {
        #[test]
        fn signature_is_linear(a in proptest::collection::vec(any::<u32>(), 1..40),
                               b in proptest::collection::vec(any::<u32>(), 1..40)) {
            let n = a.len().min(b.len());
            let m = Misr::direct(Polynomial::default_for(32), 32).unwrap();
            let v = |w: u32| -> Vec<bool> { (0..32).map(|i| w >> i & 1 == 1).collect() };
            let sa: Vec<_> = a[..n].iter().map(|&w| v(w)).collect();
            let sb: Vec<_> = b[..n].iter().map(|&w| v(w)).collect();
            let sx: Vec<_> = (0..n).map(|i| v(a[i] ^ b[i])).collect();
            prop_assert_eq!(
                signature_of(&sx, &m).unwrap(),
                signature_of(&sa, &m).unwrap().xor(&signature_of(&sb, &m).unwrap())
            );
        }
    }
}
