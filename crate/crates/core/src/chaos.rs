//! Key-driven chaos maps: parameter derivation from PUF key bits, the
//! logistic and NCA keystream generators, and sequence-to-permutation
//! conversion.
//!
//! The stable PUF response splits in half: the first half keys the logistic
//! map that drives permutation rounds, the second keys the nonlinear chaotic
//! algorithm (NCA) map that drives diffusion. Each map parameter comes from
//! a fixed-width bit group read as an unsigned integer and normalized by
//! `2^b`, which keeps the full group entropy in the derived value. All
//! arithmetic is 64-bit binary floating point, round-to-nearest; sequences
//! are reproducible on any platform honoring that format.

use crate::bits;
use crate::error::{Error, Result};
use crate::puf::Response;

/// Default bit-group width for logistic (permute) parameters.
pub const DEFAULT_B_P: usize = 16;
/// Default bit-group width for NCA (diffusion) parameters.
pub const DEFAULT_B_D: usize = 16;
/// Default warm-up iterations before a keystream is consumed.
pub const DEFAULT_T_PRE: u32 = 1000;

/// The corrected PUF response in key form: an even-length bit string whose
/// first half keys permutation and second half keys diffusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    bits: Vec<bool>,
}

impl SecretKey {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() || !bits.len().is_multiple_of(2) {
            return Err(Error::parameter(format!(
                "secret key must have even nonzero length, got {}",
                bits.len()
            )));
        }
        Ok(SecretKey { bits })
    }

    pub fn from_response(response: &Response) -> Result<Self> {
        Self::from_bits(response.bits().to_vec())
    }

    /// Derive a key from a 64-bit seed (experiment harnesses that run the
    /// cipher without a PUF in the loop).
    pub fn from_seed(seed: u64, len: usize) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        Self::from_bits(bits::random_bits(&mut rng, len))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// First half: permutation key bits.
    pub fn permute_half(&self) -> &[bool] {
        &self.bits[..self.bits.len() / 2]
    }

    /// Second half: diffusion key bits.
    pub fn diffuse_half(&self) -> &[bool] {
        &self.bits[self.bits.len() / 2..]
    }

    /// Copy with one bit flipped (sensitivity measurements).
    pub fn with_flipped_bit(&self, index: usize) -> SecretKey {
        let mut bits = self.bits.clone();
        bits[index] = !bits[index];
        SecretKey { bits }
    }
}

fn bit_group_fraction(bitsrc: &[bool], group: usize, width: usize) -> f64 {
    let start = group * width;
    bits::bits_to_uint(&bitsrc[start..start + width]) as f64 / (1u64 << width) as f64
}

fn check_group_width(label: &str, width: usize, groups: usize, available: usize) -> Result<()> {
    if width == 0 || width > 52 {
        return Err(Error::parameter(format!(
            "{label} group width must be in 1..=52, got {width}"
        )));
    }
    if groups * width > available {
        return Err(Error::parameter(format!(
            "{label}: {groups} groups of {width} bits exceed the {available} key bits"
        )));
    }
    Ok(())
}

/// Logistic-map parameters for the permutation keystream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub s0: f64,
    pub lambda: f64,
    pub b_p: usize,
}

impl LogisticParams {
    /// Two `b_p`-bit groups from the front of the permute key half:
    /// `s0 = g1 / 2^b`, `lambda = 3.6 + 0.2 * g2 / 2^b`. A degenerate
    /// initial state (0 or the map's fixed point) is nudged up by
    /// `2^-(b_p+1)`.
    pub fn derive(kp: &[bool], b_p: usize) -> Result<Self> {
        check_group_width("b_p", b_p, 2, kp.len())?;
        let mut s0 = bit_group_fraction(kp, 0, b_p);
        let lambda = 3.6 + 0.2 * bit_group_fraction(kp, 1, b_p);
        let fixed_point = 1.0 - 1.0 / lambda;
        if s0 == 0.0 || s0 == fixed_point {
            s0 += (0.5f64).powi(b_p as i32 + 1);
        }
        Ok(LogisticParams { s0, lambda, b_p })
    }

    pub fn stream(&self) -> LogisticStream {
        LogisticStream {
            state: self.s0,
            lambda: self.lambda,
        }
    }
}

/// One step of the logistic map `s' = lambda * s * (1 - s)`.
pub fn logistic_step(s: f64, lambda: f64) -> f64 {
    lambda * s * (1.0 - s)
}

/// Iterating logistic keystream; values stay in [0, 1] for lambda < 4.
#[derive(Debug, Clone)]
pub struct LogisticStream {
    state: f64,
    lambda: f64,
}

impl LogisticStream {
    pub fn warmup(&mut self, rounds: u32) {
        for _ in 0..rounds {
            self.state = logistic_step(self.state, self.lambda);
        }
    }

    pub fn next_value(&mut self) -> f64 {
        self.state = logistic_step(self.state, self.lambda);
        self.state
    }

    pub fn segment(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.next_value()).collect()
    }
}

/// Warm up `t_pre` rounds, then emit `len` logistic values.
pub fn logistic_sequence(params: &LogisticParams, t_pre: u32, len: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::parameter("sequence length must be >= 1"));
    }
    let mut stream = params.stream();
    stream.warmup(t_pre);
    Ok(stream.segment(len))
}

/// NCA-map parameters for the diffusion keystream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcaParams {
    pub s0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub b_d: usize,
}

impl NcaParams {
    /// Three `b_d`-bit groups from the front of the diffusion key half:
    /// `s0 = g1 / 2^b`, `alpha = 1.1 + 0.35 * g2 / 2^b` (clamped to 1.4),
    /// `beta = 6 + 35 * g3 / 2^b` (clamped to [5, 43]); `gamma` follows from
    /// alpha and beta.
    pub fn derive(kd: &[bool], b_d: usize) -> Result<Self> {
        check_group_width("b_d", b_d, 3, kd.len())?;
        let mut s0 = bit_group_fraction(kd, 0, b_d);
        if s0 == 0.0 {
            s0 += (0.5f64).powi(b_d as i32 + 1);
        }
        let alpha = (1.1 + 0.35 * bit_group_fraction(kd, 1, b_d)).min(1.4);
        let beta = (6.0 + 35.0 * bit_group_fraction(kd, 2, b_d)).clamp(5.0, 43.0);
        let gamma = nca_gamma(alpha, beta);
        Ok(NcaParams {
            s0,
            alpha,
            beta,
            gamma,
            b_d,
        })
    }

    pub fn stream(&self) -> NcaStream {
        NcaStream {
            state: self.s0,
            params: *self,
        }
    }
}

/// The NCA scale factor `(1 - beta^-4) * cot(alpha / (1 + beta)) *
/// (1 + 1/beta)^beta`; recompute whenever alpha or beta change.
pub fn nca_gamma(alpha: f64, beta: f64) -> f64 {
    (1.0 - beta.powi(-4)) * (1.0 / (alpha / (1.0 + beta)).tan()) * (1.0 + 1.0 / beta).powf(beta)
}

/// One step of the NCA map `s' = gamma * tan(alpha * s) * (1 - s)^beta`.
pub fn nca_step(s: f64, alpha: f64, beta: f64, gamma: f64) -> f64 {
    gamma * (alpha * s).tan() * (1.0 - s).powf(beta)
}

/// Iterating NCA keystream. Escaping [0, 1] signals invalid parameters and
/// aborts with a range error.
#[derive(Debug, Clone)]
pub struct NcaStream {
    state: f64,
    params: NcaParams,
}

impl NcaStream {
    pub fn next_value(&mut self) -> Result<f64> {
        let next = nca_step(self.state, self.params.alpha, self.params.beta, self.params.gamma);
        if !(0.0..=1.0).contains(&next) {
            return Err(Error::Range(format!(
                "NCA escaped [0,1]: s={} -> {next} (alpha={}, beta={})",
                self.state, self.params.alpha, self.params.beta
            )));
        }
        self.state = next;
        Ok(next)
    }

    pub fn warmup(&mut self, rounds: u32) -> Result<()> {
        for _ in 0..rounds {
            self.next_value()?;
        }
        Ok(())
    }

    pub fn segment(&mut self, len: usize) -> Result<Vec<f64>> {
        (0..len).map(|_| self.next_value()).collect()
    }
}

/// Warm up `t_pre` rounds, then emit `len` NCA values.
pub fn nca_sequence(params: &NcaParams, t_pre: u32, len: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::parameter("sequence length must be >= 1"));
    }
    let mut stream = params.stream();
    stream.warmup(t_pre)?;
    stream.segment(len)
}

/// Stable ascending argsort: `perm[t]` is the index of the t-th smallest
/// value, ties broken by original position. Always a bijection.
pub fn permutation_from_sequence(seq: &[f64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..seq.len()).collect();
    perm.sort_by(|&a, &b| seq[a].total_cmp(&seq[b]).then(a.cmp(&b)));
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn key(seed: u64) -> SecretKey {
        SecretKey::from_seed(seed, 384).unwrap()
    }

    #[test]
    fn logistic_boundaries() {
        // All-zero lambda group pins lambda at 3.6; all-ones s0 group gives
        // 1 - 2^-b.
        let mut kp = vec![false; 32];
        let p = LogisticParams::derive(&kp, 16).unwrap();
        assert_eq!(p.lambda, 3.6);
        // Zero s0 was nudged into range.
        assert_eq!(p.s0, (0.5f64).powi(17));

        for bit in kp.iter_mut().take(16) {
            *bit = true;
        }
        let p = LogisticParams::derive(&kp, 16).unwrap();
        assert_eq!(p.s0, 1.0 - (0.5f64).powi(16));
        assert!(p.s0 > 0.0 && p.s0 < 1.0);
    }

    #[test]
    fn logistic_single_step() {
        assert_eq!(logistic_step(0.5, 3.6), 0.9);
        // s = 0 is a fixed point; the derivation nudge exists because of it.
        assert_eq!(logistic_step(0.0, 3.77), 0.0);
    }

    #[test]
    fn logistic_range_sweep() {
        let p = LogisticParams::derive(key(5).permute_half(), 16).unwrap();
        let mut stream = p.stream();
        for _ in 0..1_000_000 {
            let v = stream.next_value();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn logistic_key_sensitivity() {
        // One flipped bit in the s0 group (a 2^-16 perturbation): the
        // orbits diverge past 0.4 within 100 iterations and stay
        // decorrelated. Keys whose lambda falls in one of the map's
        // periodic windows (e.g. near 3.633) do not diverge; these seeds
        // land in chaotic bands.
        for seed in [0u64, 1, 6, 8] {
            let k = key(seed);
            let k2 = k.with_flipped_bit(3);
            let p1 = LogisticParams::derive(k.permute_half(), 16).unwrap();
            let p2 = LogisticParams::derive(k2.permute_half(), 16).unwrap();
            assert_ne!(p1.s0, p2.s0);
            assert_eq!(p1.lambda, p2.lambda);
            let a = logistic_sequence(&p1, 0, 150).unwrap();
            let b = logistic_sequence(&p2, 0, 150).unwrap();
            let max_gap = a
                .iter()
                .zip(&b)
                .take(100)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(max_gap > 0.4, "seed {seed}: max divergence {max_gap}");
            let mean_gap: f64 = a
                .iter()
                .zip(&b)
                .skip(50)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / 100.0;
            assert!(mean_gap > 0.15, "seed {seed}: mean divergence {mean_gap}");
        }
    }

    #[test]
    fn nca_params_at_group_boundaries() {
        let kd = vec![false; 48];
        let p = NcaParams::derive(&kd, 16).unwrap();
        assert_eq!(p.alpha, 1.1);
        assert_eq!(p.beta, 6.0);
        // gamma(1.1, 6) frozen from 40-digit evaluation of the closed form.
        assert!((p.gamma - 15.902130487355207).abs() < 1e-12);

        let ones = vec![true; 48];
        let p = NcaParams::derive(&ones, 16).unwrap();
        assert!(p.alpha <= 1.4);
        assert!((5.0..=43.0).contains(&p.beta));
    }

    #[test]
    fn nca_single_step_matches_high_precision_oracle() {
        let gamma = nca_gamma(1.2, 5.0);
        assert!((gamma - 12.255627511316347).abs() < 1e-12);
        let next = nca_step(0.3, 1.2, 5.0, gamma);
        assert!((next - 0.7753158418989623).abs() < 1e-12);
    }

    #[test]
    fn nca_zero_is_a_fixed_point() {
        assert_eq!(nca_step(0.0, 1.2, 5.0, nca_gamma(1.2, 5.0)), 0.0);
    }

    #[test]
    fn nca_range_sweep() {
        let p = NcaParams::derive(key(7).diffuse_half(), 16).unwrap();
        let mut stream = p.stream();
        for _ in 0..1_000_000 {
            let v = stream.next_value().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn nca_key_sensitivity() {
        // Flip a bit of the third group (beta changes): the two maps run
        // different dynamics and diverge within 100 iterations. High beta
        // concentrates the invariant density near small values, so the
        // robust signal is the peak gap, not the mean.
        for seed in [6u64, 8, 12, 15] {
            let k = key(seed);
            let k2 = k.with_flipped_bit(192 + 2 * 16 + 4);
            let p1 = NcaParams::derive(k.diffuse_half(), 16).unwrap();
            let p2 = NcaParams::derive(k2.diffuse_half(), 16).unwrap();
            assert_ne!(p1.beta, p2.beta);
            let a = nca_sequence(&p1, 0, 100).unwrap();
            let b = nca_sequence(&p2, 0, 100).unwrap();
            let max_gap = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            assert!(max_gap > 0.4, "seed {seed}: max divergence {max_gap}");
        }
    }

    #[test]
    fn sequences_are_deterministic() {
        let p = LogisticParams::derive(key(9).permute_half(), 16).unwrap();
        assert_eq!(
            logistic_sequence(&p, 100, 64).unwrap(),
            logistic_sequence(&p, 100, 64).unwrap()
        );
        let n = NcaParams::derive(key(9).diffuse_half(), 16).unwrap();
        assert_eq!(
            nca_sequence(&n, 100, 64).unwrap(),
            nca_sequence(&n, 100, 64).unwrap()
        );
    }

    #[test]
    fn permutation_examples() {
        assert_eq!(permutation_from_sequence(&[0.9, 0.1, 0.5]), vec![1, 2, 0]);
        assert_eq!(permutation_from_sequence(&[0.1, 0.2, 0.3]), vec![0, 1, 2]);
        // Stable under ties.
        assert_eq!(permutation_from_sequence(&[0.5, 0.5]), vec![0, 1]);
    }

    #[test]
    fn permutation_is_a_bijection() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let p = LogisticParams::derive(key(10).permute_half(), 16).unwrap();
        let seq = logistic_sequence(&p, 1000, 512).unwrap();
        let perm = permutation_from_sequence(&seq);
        let mut seen = vec![false; perm.len()];
        for &i in &perm {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
        let _ = &mut rng;
    }

    #[test]
    fn single_bit_flip_changes_most_permutation_positions() {
        let k = key(11);
        let k2 = k.with_flipped_bit(0);
        let p1 = LogisticParams::derive(k.permute_half(), 16).unwrap();
        let p2 = LogisticParams::derive(k2.permute_half(), 16).unwrap();
        let len = 256;
        let perm1 =
            permutation_from_sequence(&logistic_sequence(&p1, DEFAULT_T_PRE, len).unwrap());
        let perm2 =
            permutation_from_sequence(&logistic_sequence(&p2, DEFAULT_T_PRE, len).unwrap());
        let same = perm1.iter().zip(&perm2).filter(|(a, b)| a == b).count();
        let changed = 1.0 - same as f64 / len as f64;
        assert!(changed >= 0.99, "only {changed} of positions changed");
    }

    #[test]
    fn rejects_oversized_groups() {
        assert!(LogisticParams::derive(&[true; 16], 16).is_err());
        assert!(NcaParams::derive(&[true; 32], 16).is_err());
        assert!(LogisticParams::derive(&[true; 200], 0).is_err());
        assert!(LogisticParams::derive(&[true; 200], 60).is_err());
        assert!(SecretKey::from_bits(vec![true; 3]).is_err());
    }
}
