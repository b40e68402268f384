//! Deterministic seeded random numbers.
//!
//! The generator is pinned so that results are bit-identical across runs,
//! thread counts, and crate versions:
//!
//! * state initialization: SplitMix64 applied to the 64-bit seed,
//! * core generator: xoshiro256++ (Blackman & Vigna),
//! * uniforms: the high 53 bits mapped to [0, 1),
//! * standard normals: Marsaglia polar method (sqrt/ln only, no trig),
//!   with the spare value cached.
//!
//! A `SeededRng` is single-owner. Parallel code must not share one; it
//! derives independent child streams with [`SeededRng::split`], which draws
//! one 64-bit value from the parent and seeds the child from it. Splitting
//! is therefore itself deterministic and order-dependent by design.

use num_complex::Complex64;

use crate::error::Result;
use crate::grid::{check_shape, numel, Field, Grid};

/// Identifier of the pinned generator, recorded in manifests.
pub const RNG_ALGORITHM: &str = "xoshiro256++/splitmix64/polar";

#[derive(Clone, Debug)]
pub struct SeededRng {
    state: [u64; 4],
    seed: u64,
    spare_normal: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        SeededRng {
            state,
            seed,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal N(0, 1) via the polar method.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * f);
                return u * f;
            }
        }
    }

    /// Deterministically derive an independent child stream.
    pub fn split(&mut self) -> SeededRng {
        SeededRng::new(self.next_u64())
    }
}

/// Grid of i.i.d. Gaussian samples.
///
/// Real field: N(0, 1) entries. Complex field: independent N(0, 1/2) real
/// and imaginary parts, so E|z|^2 = 1 and probe energy is field-agnostic.
pub fn gaussian_probe(shape: &[usize], field: Field, rng: &mut SeededRng) -> Result<Grid> {
    check_shape(shape)?;
    let n = numel(shape);
    match field {
        Field::Real => {
            let data = (0..n).map(|_| rng.next_normal()).collect();
            Grid::from_real(shape, data)
        }
        Field::Complex => {
            let scale = 0.5f64.sqrt();
            let data = (0..n)
                .map(|_| Complex64::new(scale * rng.next_normal(), scale * rng.next_normal()))
                .collect();
            Grid::from_complex(shape, data)
        }
    }
}
