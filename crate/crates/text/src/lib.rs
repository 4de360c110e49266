//! Transcript parsing, interviewer-turn removal and fixed-length word-level
//! token sequences.

pub mod error;
pub mod transcript;
pub mod vocab;

pub use error::{Result, TextError};
pub use transcript::{
    merge_responses, parse_and_filter_transcript, parse_transcript, read_transcript,
    write_transcript, TranscriptTurn, INTERVIEWER,
};
pub use vocab::{tokenize, TokenSequence, Vocabulary, CLS, DEFAULT_MAX_LEN, PAD, SEP, UNK};
