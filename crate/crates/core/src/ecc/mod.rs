//! Error correction for noisy PUF responses: a rate-1/L convolutional coder
//! with hard-decision Viterbi decoding, a block-mode convolutional
//! interleaver, and the fuzzy extractor composed from the two.

mod conv;
mod fuzzy;
mod interleaver;

pub use conv::ConvCodeSpec;
pub use fuzzy::{FuzzyExtractor, HelperData, Scheme};
pub use interleaver::InterleaverSpec;
