use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, DataError};

/// Replaces exactly `round(ratio * n)` labels, chosen uniformly without
/// replacement, with a uniformly drawn *different* class. Features and
/// metadata are untouched.
pub fn inject_label_noise(corpus: &Corpus, ratio: f64, seed: u64) -> Result<Corpus, DataError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DataError::InvalidArgument(format!(
            "noise ratio must lie in [0, 1], got {ratio}"
        )));
    }
    if !corpus.is_labeled() {
        return Err(DataError::NotLabeled(corpus.name().to_string()));
    }
    let classes = corpus.classes();
    if classes < 2 && ratio > 0.0 {
        return Err(DataError::InvalidArgument("label noise needs at least two classes".into()));
    }
    let n = corpus.len();
    let flips = (ratio * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, flips).into_vec();
    picked.sort_unstable();

    let mut samples = corpus.samples().to_vec();
    for i in picked {
        let old = samples[i].label.expect("labeled corpus");
        let draw = rng.gen_range(0..classes - 1);
        samples[i].label = Some(if draw >= old { draw + 1 } else { draw });
    }
    corpus.with_samples(samples)
}
