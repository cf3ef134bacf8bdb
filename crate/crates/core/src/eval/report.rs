use crate::error::Result;
use crate::eval::bleu::bleu;
use crate::eval::chrf::chrf;
use crate::eval::repetition::repetition_rate;

/// Corpus-level scores of one hypothesis file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub bleu: f64,
    pub chrf: f64,
    pub repetition_rate: f64,
    pub n_sentences: usize,
}

impl MetricReport {
    pub fn compute<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<Self> {
        Ok(MetricReport {
            bleu: bleu(hyps, refs)?,
            chrf: chrf(hyps, refs)?,
            repetition_rate: repetition_rate(hyps),
            n_sentences: hyps.len(),
        })
    }

    /// `metric=value` lines.
    pub fn to_text(&self) -> String {
        format!(
            "bleu={:.4}\nchrf={:.4}\nrepetition_rate={:.6}\nn_sentences={}\n",
            self.bleu, self.chrf, self.repetition_rate, self.n_sentences
        )
    }

    pub fn to_csv(&self) -> String {
        format!(
            "bleu,chrf,repetition_rate,n_sentences\n{:.4},{:.4},{:.6},{}\n",
            self.bleu, self.chrf, self.repetition_rate, self.n_sentences
        )
    }
}
