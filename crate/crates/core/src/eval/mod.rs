//! Metrics and probes.

mod attention;
mod bleu;
mod bootstrap;
mod chrf;
mod latency;
mod probe;
mod repetition;
mod report;

pub use attention::{attention_maps, export_attention, read_attention_csv, write_attention, AttentionDump};
pub use bleu::{bleu, bleu_tokens, corpus_stats, sentence_stats, BleuStats, SMOOTHING_EPS};
pub use bootstrap::{paired_bootstrap, paired_bootstrap_tokens, MIN_TRIALS};
pub use chrf::{chrf, chrf_with, CHRF_BETA, CHRF_ORDER};
pub use latency::{measure_latency, LatencyReport, WARMUP_SENTENCES};
pub use probe::{cosine, cosine_probe, ProbeResult};
pub use repetition::{repetition_rate, repetition_rate_tokens};
pub use report::MetricReport;
