//! Zero-terminated rate-1/L convolutional coding and Viterbi decoding.
//!
//! A code is `(N, L, M)` with one input bit per step, `L` output bits and
//! `M` shift-register stages; each output stream is the GF(2) convolution of
//! the input with its generator `(g_0 .. g_M)`. Frames are terminated with
//! `M` flush zeros so every codeword is a path that leaves and re-enters the
//! all-zero trellis state; a frame of `B` information bits therefore spans
//! `T = B + M` steps and `L * T` coded bits.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Parameters of a rate-1/L convolutional code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvCodeSpec {
    generators: Vec<Vec<bool>>,
}

impl ConvCodeSpec {
    /// Build from explicit generator coefficient vectors, each `(g_0 .. g_M)`.
    pub fn new(generators: Vec<Vec<bool>>) -> Result<Self> {
        if generators.len() < 2 {
            return Err(Error::parameter("need at least two output streams"));
        }
        let width = generators[0].len();
        if width < 2 {
            return Err(Error::parameter("memory must be >= 1 (M+1 >= 2 taps)"));
        }
        if generators.iter().any(|g| g.len() != width) {
            return Err(Error::parameter("generators must all have M+1 taps"));
        }
        if generators.iter().all(|g| !g[0]) {
            return Err(Error::parameter("g_0 must be nonzero in some stream"));
        }
        if generators.iter().any(|g| g.iter().all(|&b| !b)) {
            return Err(Error::parameter("all-zero generator"));
        }
        Ok(ConvCodeSpec { generators })
    }

    /// Build from octal generator words, MSB = `g_0`. The default code of the
    /// toolkit is `from_octal(&[0o13, 0o15, 0o17], 3)`.
    pub fn from_octal(words: &[u32], memory: usize) -> Result<Self> {
        let width = memory + 1;
        if words.iter().any(|&w| w >= (1 << width)) {
            return Err(Error::parameter("generator word wider than M+1 bits"));
        }
        Self::new(
            words
                .iter()
                .map(|&w| (0..width).map(|m| w & (1 << (width - 1 - m)) != 0).collect())
                .collect(),
        )
    }

    /// The (1,3,3) code with generators 13/15/17 octal (d_free = 10, r = 4).
    pub fn default_code() -> Self {
        Self::from_octal(&[0o13, 0o15, 0o17], 3).expect("default code is valid")
    }

    /// Output bits per step.
    pub fn n_out(&self) -> usize {
        self.generators.len()
    }

    /// Shift-register stages.
    pub fn memory(&self) -> usize {
        self.generators[0].len() - 1
    }

    pub fn generators(&self) -> &[Vec<bool>] {
        &self.generators
    }

    fn num_states(&self) -> usize {
        1 << self.memory()
    }

    /// Packed output bits for (state, input): bit `l` of the result is the
    /// l-th stream. State bit `m-1` holds the input from `m` steps ago.
    fn branch_output(&self, state: usize, input: bool) -> u32 {
        let mut out = 0u32;
        for (l, g) in self.generators.iter().enumerate() {
            let mut v = g[0] && input;
            for (m, &coeff) in g.iter().enumerate().skip(1) {
                if coeff && state & (1 << (m - 1)) != 0 {
                    v = !v;
                }
            }
            if v {
                out |= 1 << l;
            }
        }
        out
    }

    fn next_state(&self, state: usize, input: bool) -> usize {
        ((state << 1) | input as usize) & (self.num_states() - 1)
    }

    /// Encode an information word, appending `M` flush zeros. The output
    /// interleaves the streams per step: `v_t^(1) .. v_t^(L)` for each `t`.
    pub fn encode(&self, info: &[bool]) -> Result<Vec<bool>> {
        if info.is_empty() {
            return Err(Error::parameter("empty information word"));
        }
        let l = self.n_out();
        let m = self.memory();
        let mut out = Vec::with_capacity(l * (info.len() + m));
        let mut state = 0usize;
        for t in 0..info.len() + m {
            let input = t < info.len() && info[t];
            let packed = self.branch_output(state, input);
            for stream in 0..l {
                out.push(packed & (1 << stream) != 0);
            }
            state = self.next_state(state, input);
        }
        debug_assert_eq!(state, 0, "flush must terminate in the zero state");
        Ok(out)
    }

    /// Hard-decision Viterbi decoding over the zero-terminated trellis:
    /// returns the information word whose codeword is nearest in Hamming
    /// distance. Metric ties keep the smaller predecessor state, which
    /// prefers the path whose older input bit is 0; within the correction
    /// radius the nearest codeword is unique and ties never arise.
    pub fn decode(&self, received: &[bool]) -> Result<Vec<bool>> {
        let l = self.n_out();
        let m = self.memory();
        if received.is_empty() || !received.len().is_multiple_of(l) {
            return Err(Error::parameter(format!(
                "received length {} is not a multiple of L={l}",
                received.len()
            )));
        }
        let steps = received.len() / l;
        if steps <= m {
            return Err(Error::parameter(format!(
                "frame of {steps} steps cannot carry information (M={m})"
            )));
        }
        let num_states = self.num_states();

        const INF: u64 = u64::MAX / 2;
        let mut metrics = vec![INF; num_states];
        metrics[0] = 0;
        // survivors[t][s] = predecessor state of s at step t
        let mut survivors = vec![vec![0usize; num_states]; steps];

        for (t, survivor_row) in survivors.iter_mut().enumerate() {
            let mut chunk = 0u32;
            for i in 0..l {
                if received[t * l + i] {
                    chunk |= 1 << i;
                }
            }
            let mut next = vec![INF; num_states];
            for (state, &metric) in metrics.iter().enumerate() {
                if metric == INF {
                    continue;
                }
                for input in [false, true] {
                    let ns = self.next_state(state, input);
                    let branch =
                        (self.branch_output(state, input) ^ chunk).count_ones() as u64;
                    let cand = metric + branch;
                    if cand < next[ns] {
                        next[ns] = cand;
                        survivor_row[ns] = state;
                    }
                }
            }
            metrics = next;
        }

        // The flush bits force termination in state 0.
        let mut state = 0usize;
        let mut inputs = vec![false; steps];
        for t in (0..steps).rev() {
            inputs[t] = state & 1 != 0;
            state = survivors[t][state];
        }
        inputs.truncate(steps - m);
        Ok(inputs)
    }

    /// Minimum free distance and correction capability `r`.
    ///
    /// Dijkstra over the state graph: paths diverge from the zero state with
    /// input 1 and accumulate branch output weight until they re-merge; the
    /// cheapest re-merging path has weight `d_free`, and
    /// `r = floor((d_free - 1) / 2)`. Zero-weight cycles (catastrophic
    /// generators) are handled because every state is finalized once.
    pub fn free_distance(&self) -> (usize, usize) {
        let num_states = self.num_states();
        const INF: u64 = u64::MAX / 2;
        let mut dist = vec![INF; num_states];
        let mut heap = BinaryHeap::new();

        let first = self.next_state(0, true);
        let first_weight = self.branch_output(0, true).count_ones() as u64;
        let mut best = if first == 0 { first_weight } else { INF };
        if first != 0 {
            dist[first] = first_weight;
            heap.push(Reverse((first_weight, first)));
        }

        while let Some(Reverse((d, state))) = heap.pop() {
            if d > dist[state] {
                continue;
            }
            for input in [false, true] {
                let ns = self.next_state(state, input);
                let w = d + self.branch_output(state, input).count_ones() as u64;
                if ns == 0 {
                    best = best.min(w);
                } else if w < dist[ns] {
                    dist[ns] = w;
                    heap.push(Reverse((w, ns)));
                }
            }
        }

        let d_free = best as usize;
        (d_free, (d_free - 1) / 2)
    }

    /// True when the generator polynomials share a non-monomial GF(2)
    /// factor, i.e. a finite-weight output can correspond to an
    /// infinite-weight input on the unterminated stream.
    pub fn is_catastrophic(&self) -> bool {
        let gcd = self
            .generators
            .iter()
            .map(|g| poly_from_taps(g))
            .fold(0u64, poly_gcd);
        // Non-catastrophic iff the gcd is a single term D^a.
        gcd.count_ones() > 1
    }
}

fn poly_from_taps(taps: &[bool]) -> u64 {
    taps.iter()
        .enumerate()
        .fold(0u64, |acc, (m, &b)| acc | ((b as u64) << m))
}

fn poly_gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let shift = (64 - b.leading_zeros()) as i32;
        while a != 0 {
            let da = (64 - a.leading_zeros()) as i32;
            if da < shift {
                break;
            }
            a ^= b << (da - shift);
        }
        std::mem::swap(&mut a, &mut b);
    }
    a
}
