//! Deterministic desk-scale phantoms with values in [0, 1].

use partfact_core::grid::Grid;
use partfact_core::rng::SeededRng;

/// Ellipse-based head phantom with seeded jitter of the classic layout.
pub fn shepp2d(shape: &[usize], rng: &mut SeededRng) -> Grid {
    assert_eq!(shape.len(), 2, "shepp2d needs a 2-d shape");
    // (intensity delta, semi-axis a, semi-axis b, center x, center y, angle)
    // in normalized [-1, 1] coordinates.
    const BASE: [(f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
        (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
        (-0.2, 0.11, 0.31, 0.22, 0.0, -0.3142),
        (-0.2, 0.16, 0.41, -0.22, 0.0, 0.3142),
        (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
        (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
        (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
        (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
        (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
        (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
    ];
    let (h, w) = (shape[0], shape[1]);
    let mut ellipses = BASE;
    for e in ellipses.iter_mut() {
        e.0 *= 1.0 + 0.04 * (rng.next_f64() - 0.5);
        e.1 *= 1.0 + 0.04 * (rng.next_f64() - 0.5);
        e.2 *= 1.0 + 0.04 * (rng.next_f64() - 0.5);
        e.3 += 0.02 * (rng.next_f64() - 0.5);
        e.4 += 0.02 * (rng.next_f64() - 0.5);
        e.5 += 0.05 * (rng.next_f64() - 0.5);
    }
    let mut data = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            // Pixel centers mapped to [-1, 1] per axis; rows grow downward.
            let y = 2.0 * (r as f64 + 0.5) / h as f64 - 1.0;
            let x = 2.0 * (c as f64 + 0.5) / w as f64 - 1.0;
            let mut v = 0.0;
            for &(delta, a, b, x0, y0, phi) in &ellipses {
                let (dx, dy) = (x - x0, y - y0);
                let (cp, sp) = (phi.cos(), phi.sin());
                let u = dx * cp + dy * sp;
                let t = -dx * sp + dy * cp;
                if (u / a) * (u / a) + (t / b) * (t / b) <= 1.0 {
                    v += delta;
                }
            }
            data[r * w + c] = v.clamp(0.0, 1.0);
        }
    }
    Grid::from_real(shape, data).unwrap()
}

/// Sum of seeded Gaussian blobs, normalized into [0, 1].
pub fn blobs3d(shape: &[usize], rng: &mut SeededRng) -> Grid {
    assert_eq!(shape.len(), 3, "blobs3d needs a 3-d shape");
    let blobs: Vec<([f64; 3], f64, f64)> = (0..8)
        .map(|_| {
            let center = [
                0.2 + 0.6 * rng.next_f64(),
                0.2 + 0.6 * rng.next_f64(),
                0.2 + 0.6 * rng.next_f64(),
            ];
            let sigma = 0.08 + 0.12 * rng.next_f64();
            let amp = 0.3 + 0.7 * rng.next_f64();
            (center, sigma, amp)
        })
        .collect();
    let n: usize = shape.iter().product();
    let mut data = vec![0.0f64; n];
    let mut peak = 0.0f64;
    for (flat, v) in data.iter_mut().enumerate() {
        let mut rem = flat;
        let mut pos = [0.0f64; 3];
        for d in 0..3 {
            let stride: usize = shape[d + 1..].iter().product();
            pos[d] = ((rem / stride) as f64 + 0.5) / shape[d] as f64;
            rem %= stride;
        }
        let mut acc = 0.0;
        for (center, sigma, amp) in &blobs {
            let r2: f64 = pos
                .iter()
                .zip(center)
                .map(|(p, c)| (p - c) * (p - c))
                .sum();
            acc += amp * (-0.5 * r2 / (sigma * sigma)).exp();
        }
        *v = acc;
        peak = peak.max(acc);
    }
    if peak > 0.0 {
        data.iter_mut().for_each(|v| *v = (*v / peak).clamp(0.0, 1.0));
    }
    Grid::from_real(shape, data).unwrap()
}

/// Random staircase signal with about six segments.
pub fn piecewise1d(shape: &[usize], rng: &mut SeededRng) -> Grid {
    assert_eq!(shape.len(), 1, "piecewise1d needs a 1-d shape");
    let n = shape[0];
    let segments = 6.min(n);
    let mut breaks: Vec<usize> = (0..segments - 1)
        .map(|_| 1 + (rng.next_u64() as usize) % n.max(2))
        .collect();
    breaks.push(0);
    breaks.push(n);
    breaks.sort_unstable();
    breaks.dedup();
    let mut data = vec![0.0f64; n];
    for pair in breaks.windows(2) {
        let level = rng.next_f64();
        for v in &mut data[pair[0]..pair[1]] {
            *v = level;
        }
    }
    Grid::from_real(shape, data).unwrap()
}

pub fn make(kind: &str, shape: &[usize], rng: &mut SeededRng) -> Option<Grid> {
    match kind {
        "shepp2d" => Some(shepp2d(shape, rng)),
        "blobs3d" => Some(blobs3d(shape, rng)),
        "piecewise1d" => Some(piecewise1d(shape, rng)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantoms_are_deterministic_and_bounded() {
        for (kind, shape) in [
            ("shepp2d", vec![32usize, 32]),
            ("blobs3d", vec![8, 8, 8]),
            ("piecewise1d", vec![64]),
        ] {
            let a = make(kind, &shape, &mut SeededRng::new(5)).unwrap();
            let b = make(kind, &shape, &mut SeededRng::new(5)).unwrap();
            assert_eq!(a, b, "{kind} not deterministic");
            let v = a.real_slice().unwrap();
            assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)), "{kind} out of range");
            assert!(v.iter().any(|&x| x > 0.0), "{kind} is all zero");
        }
    }
}
