//! Climate-related sentence detection in financial text.
//!
//! Corpus handling, a WordPiece tokenizer, a compact transformer encoder
//! with hand-written gradients, the fine-tuning loop, and the statistics used
//! to compare classifiers over repeated runs.

pub mod corpus;
pub mod encoder;
pub mod evalstat;
pub mod pipeline;
pub mod tokenizer;
pub mod trainer;
