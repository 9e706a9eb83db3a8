//! Stress-test corruptions of a dataset.

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Sample;
use crate::error::{invalid_arg, Result};
use crate::vocab;

fn count_for(fraction: f64, n: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(invalid_arg(format!("noise fraction {fraction} outside [0, 1]")));
    }
    Ok((fraction * n as f64).round() as usize)
}

fn pick(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = (0..n).choose_multiple(&mut rng, k);
    idx.sort_unstable();
    idx
}

/// Marks `round(fraction·n)` samples whose description will be replaced by
/// random text during training.
pub fn inject_teacher_noise(data: &[Sample], fraction: f64, seed: u64) -> Result<Vec<Sample>> {
    let k = count_for(fraction, data.len())?;
    let mut out = data.to_vec();
    for i in pick(data.len(), k, seed) {
        out[i].teacher_noise = true;
    }
    Ok(out)
}

/// Replaces `round(fraction·n)` reference answers with 3 to 5 distinct words
/// from the reserved noise vocabulary.
pub fn inject_answer_noise(data: &[Sample], fraction: f64, seed: u64) -> Result<Vec<Sample>> {
    let k = count_for(fraction, data.len())?;
    let mut out = data.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a115);
    for i in pick(data.len(), k, seed) {
        let len = rng.gen_range(3..=5);
        out[i].answer = vocab::NOISE_WORDS
            .choose_multiple(&mut rng, len)
            .map(|w| w.to_string())
            .collect();
        out[i].answer_noise = true;
    }
    Ok(out)
}

/// Random task-vocabulary text standing in for a corrupted description.
pub fn noise_caption<R: Rng>(rng: &mut R) -> Vec<String> {
    let pool: Vec<&str> = [
        vocab::OBJECTS,
        vocab::ATTRIBUTES,
        vocab::RELATIONS,
        vocab::LANDMARKS,
        vocab::EVENTS,
    ]
    .concat();
    let len = rng.gen_range(4..=6);
    (0..len).map(|_| pool.choose(rng).expect("pool").to_string()).collect()
}
