//! Seeded random streams.
//!
//! A master seed spawns independent named streams (`"pa-fit"`, `"demapper"`,
//! `"train"`, `"eval"`, ...) so each stage is reproducible on its own.

use num_complex::Complex64;
#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream `name` of the master seed.
pub fn stream(master: u64, name: &str) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Sub-stream `index` of stream `name`, for parallel work items.
pub fn substream(master: u64, name: &str, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Circular complex Gaussian with total variance `variance` (half per real dimension).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn add_complex_noise<R: Rng + ?Sized>(rng: &mut R, xs: &mut [Complex64], std: f64) {
    if std == 0.0 {
        return;
    }
    let var = std * std;
    for x in xs {
        *x += complex_gaussian(rng, var);
    }
}

pub fn messages<R: Rng + ?Sized>(rng: &mut R, order: usize, n: usize) -> alloc::vec::Vec<usize> {
    (0..n).map(|_| rng.random_range(0..order)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_streams_differ_and_repeat() {
        let a: u64 = stream(7, "train").random();
        let b: u64 = stream(7, "eval").random();
        let c: u64 = stream(7, "train").random();
        assert_ne!(a, b);
        assert_eq!(a, c);
        let s0: u64 = substream(7, "eval", 0).random();
        let s1: u64 = substream(7, "eval", 1).random();
        assert_ne!(s0, s1);
    }

    #[test]
    fn complex_gaussian_variance() {
        let mut rng = stream(1, "t");
        let n = 200_000;
        let p: f64 = (0..n).map(|_| complex_gaussian(&mut rng, 0.3).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 0.3).abs() < 0.01, "{p}");
    }
}
