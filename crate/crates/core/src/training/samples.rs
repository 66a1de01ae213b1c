//! Choice of runs that make up one training sample of a subject.

use rand::Rng;

use crate::data::{Modality, SubjectInputs};
use crate::rng;
use crate::scalar::Scalar;

/// Run index per modality (indexed by `Modality::index`), `None` if absent.
pub type RunChoice = [Option<usize>; 2];

/// One run of each available modality, drawn afresh for every epoch, so
/// that over training every cross-matched pair of a subject is visited
/// while a batch never holds the same subject twice.
pub fn draw(
    subject: &SubjectInputs<impl Scalar>,
    seed: u64,
    tag: &str,
    epoch: usize,
    index: usize,
) -> RunChoice {
    let mut r = rng::stream(seed, tag, ((epoch as u64) << 32) | index as u64);
    let mut out = [None; 2];
    for m in Modality::ALL {
        let n = subject.runs(m).len();
        if n > 0 {
            out[m.index()] = Some(r.gen_range(0..n));
        }
    }
    out
}

/// Every combination of one run per available modality.
pub fn all_choices(subject: &SubjectInputs<impl Scalar>) -> Vec<RunChoice> {
    let opts = |m: Modality| -> Vec<Option<usize>> {
        let n = subject.runs(m).len();
        if n == 0 {
            vec![None]
        } else {
            (0..n).map(Some).collect()
        }
    };
    let mut out = Vec::new();
    for f in opts(Modality::Fmri) {
        for e in opts(Modality::Eeg) {
            if f.is_some() || e.is_some() {
                out.push([f, e]);
            }
        }
    }
    out
}
