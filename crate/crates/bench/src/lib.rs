//! Deterministic inputs shared by the criterion benches.

use resmix::data::{generate_pentomino, DatasetFile, PentominoConfig, Split, SplitCounts};
use resmix::Tensor;

/// Smooth pseudo-random values in [-1, 1].
pub fn wave(shape: &[usize], phase: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (i as f32 * 0.618_034 + phase).sin()).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

pub fn pentomino(n: usize) -> DatasetFile {
    let cfg = PentominoConfig { counts: SplitCounts { train: n, val: 2, test: 2 }, ..Default::default() };
    generate_pentomino(&cfg, Split::Train).expect("valid default config")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(wave(&[2, 3], 0.5), wave(&[2, 3], 0.5));
        assert!(wave(&[64], 0.0).data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(pentomino(4).images, pentomino(4).images);
    }
}
