//! Seeded fixtures shared by the benchmarks.

use freqfuse::{Channels, ImageBuffer, ScoreSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth colour gradient with seeded noise, `side` x `side`.
pub fn noisy_image(side: u32, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(side, side, Channels::Rgb, |x, y| {
        let base = ((x + y) * 255 / (2 * side)) as i32;
        let mut px = [0u8; 3];
        for (c, p) in px.iter_mut().enumerate() {
            let v = base + 20 * c as i32 + rng.random_range(-12..=12);
            *p = v.clamp(0, 255) as u8;
        }
        px
    })
    .expect("valid dimensions")
}

/// Overlapping bona fide and attack scores, `n` of each.
pub fn score_set(n: usize, seed: u64) -> ScoreSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bona: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.7)).collect();
    let attack: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();
    ScoreSet::from_scores(&bona, &attack).expect("scores in range")
}
