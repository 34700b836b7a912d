//! Block-mode convolutional interleaver.
//!
//! `S` branches are fed round-robin; branch `b` is a FIFO of `b * Q`
//! symbols, so a symbol entering branch `b` re-emerges `b * Q * S` stream
//! positions later. Operating block-wise, the input is followed by enough
//! flush symbols to drain every FIFO, which makes the transform an exact
//! positional permutation into a frame of `n + S*(S-1)*Q` symbols (unused
//! positions are the zeros the FIFOs started with). Burst errors on the
//! interleaved frame land on distinct branches and come out far apart.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterleaverSpec {
    branches: usize,
    step: usize,
}

impl InterleaverSpec {
    pub fn new(branches: usize, step: usize) -> Result<Self> {
        if branches < 2 {
            return Err(Error::parameter("interleaver needs S >= 2 branches"));
        }
        if step < 1 {
            return Err(Error::parameter("interleaver step Q must be >= 1"));
        }
        Ok(InterleaverSpec { branches, step })
    }

    /// Toolkit default: S = 8 branches, Q = 4.
    pub fn default_spec() -> Self {
        Self::new(8, 4).expect("default interleaver is valid")
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Extra frame symbols needed to flush all FIFOs: `S * (S-1) * Q`.
    pub fn flush_len(&self) -> usize {
        self.branches * (self.branches - 1) * self.step
    }

    /// Output position of input symbol `i`.
    pub fn spread_position(&self, i: usize) -> usize {
        i + (i % self.branches) * self.step * self.branches
    }

    /// Interleave a block; output length is `input + flush_len()`.
    pub fn interleave(&self, symbols: &[bool]) -> Vec<bool> {
        let mut out = vec![false; symbols.len() + self.flush_len()];
        for (i, &s) in symbols.iter().enumerate() {
            out[self.spread_position(i)] = s;
        }
        out
    }

    /// Exact inverse of [`interleave`](Self::interleave) on frames it
    /// produced; recovers `len - flush_len()` symbols.
    pub fn deinterleave(&self, frame: &[bool]) -> Vec<bool> {
        let n = frame.len().saturating_sub(self.flush_len());
        (0..n).map(|i| frame[self.spread_position(i)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::collections::VecDeque;

    /// Register-schedule oracle: literally run the FIFO bank, feeding the
    /// input and then zeros until every FIFO has drained.
    fn interleave_oracle(spec: &InterleaverSpec, symbols: &[bool]) -> Vec<bool> {
        let s = spec.branches();
        let mut fifos: Vec<VecDeque<bool>> = (0..s)
            .map(|b| VecDeque::from(vec![false; b * spec.step()]))
            .collect();
        let total = symbols.len() + spec.flush_len();
        let mut out = Vec::with_capacity(total);
        for i in 0..total {
            let input = symbols.get(i).copied().unwrap_or(false);
            let branch = i % s;
            if branch * spec.step() == 0 {
                out.push(input); // zero-delay branch passes through
            } else {
                let fifo = &mut fifos[branch];
                fifo.push_back(input);
                out.push(fifo.pop_front().unwrap());
            }
        }
        out
    }

    #[test]
    fn matches_register_schedule() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for (s, q) in [(2usize, 1usize), (3, 2), (8, 4)] {
            let spec = InterleaverSpec::new(s, q).unwrap();
            for len in [1usize, 5, 6, 40, 113] {
                let x: Vec<bool> = (0..len).map(|_| rng.gen()).collect();
                assert_eq!(
                    spec.interleave(&x),
                    interleave_oracle(&spec, &x),
                    "S={s} Q={q} len={len}"
                );
            }
        }
    }

    #[test]
    fn two_register_hand_case() {
        // S=2, Q=1 on (x1..x6): the hand-simulated schedule.
        let spec = InterleaverSpec::new(2, 1).unwrap();
        let x: Vec<bool> = vec![true, true, true, true, true, true];
        let y = spec.interleave(&x);
        // x1 0 x3 x2 x5 x4 0 x6
        let expect = vec![true, false, true, true, true, true, false, true];
        assert_eq!(y, expect);
        assert_eq!(y, interleave_oracle(&spec, &x));
    }

    #[test]
    fn deinterleave_is_exact_inverse() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let spec = InterleaverSpec::default_spec();
        for _ in 0..1000 {
            let len = rng.gen_range(1..200);
            let x: Vec<bool> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(spec.deinterleave(&spec.interleave(&x)), x);
        }
    }

    #[test]
    fn bursts_disperse() {
        // A burst of S contiguous flips on the interleaved frame maps to
        // flips at least Q*S - 1 apart after deinterleaving (the wrap from
        // branch S-1 back to branch 0 gives the -1).
        let spec = InterleaverSpec::default_spec();
        let s = spec.branches();
        let q = spec.step();
        let n = 160;
        let x = vec![false; n];
        let frame_len = spec.interleave(&x).len();
        for start in 0..frame_len - s {
            let mut frame = spec.interleave(&x);
            for bit in frame.iter_mut().skip(start).take(s) {
                *bit = !*bit;
            }
            let flips: Vec<usize> = spec
                .deinterleave(&frame)
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect();
            for pair in flips.windows(2) {
                assert!(
                    pair[1] - pair[0] >= q * s - 1,
                    "start={start}: flips at {pair:?}"
                );
            }
        }
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(InterleaverSpec::new(1, 1).is_err());
        assert!(InterleaverSpec::new(4, 0).is_err());
    }
}
