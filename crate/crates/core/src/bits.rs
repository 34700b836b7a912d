//! Bit-vector helpers shared by the coding, key-derivation and protocol
//! layers. Bits are `bool`s; byte packing is MSB-first (bit 0 of the vector
//! is the top bit of byte 0).

use rand::Rng;

/// Pack bits into bytes, MSB-first, zero-padding the last byte.
pub fn bits_to_bytes(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Unpack `nbits` bits from a byte slice, MSB-first.
pub fn bytes_to_bits(bytes: &[u8], nbits: usize) -> Vec<bool> {
    assert!(nbits <= bytes.len() * 8, "not enough bytes for {nbits} bits");
    (0..nbits)
        .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
        .collect()
}

/// Elementwise XOR. Panics if lengths differ (caller validates).
pub fn xor(a: &[bool], b: &[bool]) -> Vec<bool> {
    assert_eq!(a.len(), b.len(), "xor length mismatch");
    a.iter().zip(b).map(|(&x, &y)| x ^ y).collect()
}

/// Number of differing positions.
pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    assert_eq!(a.len(), b.len(), "hamming length mismatch");
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Hamming distance normalized by length.
pub fn frac_hamming(a: &[bool], b: &[bool]) -> f64 {
    hamming(a, b) as f64 / a.len() as f64
}

/// Interpret a bit group as an unsigned integer, MSB-first.
/// At most 52 bits so the value is exact in an f64.
pub fn bits_to_uint(bits: &[bool]) -> u64 {
    assert!(bits.len() <= 52, "bit group too wide for exact conversion");
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}

/// `len` uniform random bits.
pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<bool> {
    (0..len).map(|_| rng.gen::<bool>()).collect()
}
