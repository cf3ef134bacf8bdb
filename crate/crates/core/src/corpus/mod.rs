//! Tokenization, vocabularies, synthetic tasks, distillation and batching.

mod batch;
mod distill;
mod filter;
mod io;
mod pair;
mod synthetic;
mod vocab;

pub use batch::{make_batches, Batch, IdMatrix};
pub use distill::distill;
pub use filter::TargetVocabFilter;
pub use io::{corpus_paths, read_lines, read_parallel, write_lines, write_parallel};
pub use pair::{encode_pairs, SentencePair};
pub use synthetic::{make_synthetic_task, HomographLexicon, TaskKind, TaskSpec};
pub use vocab::{is_special, Vocabulary, BOS, EOS, NUM_SPECIALS, PAD, SPECIAL_TOKENS, UNK};
