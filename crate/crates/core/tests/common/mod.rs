//! Test-only oracles. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central difference of `f` along a single coordinate.
pub fn central_difference_at(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let up = f(&probe);
    probe[i] = x[i] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`; the floor keeps exact zeros comparable.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

pub fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// One-sample Kolmogorov–Smirnov statistic against Uniform[0, 1].
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let lo = v - i as f64 / n;
            let hi = (i + 1) as f64 / n - v;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Composite Simpson rule on `[a, b]` with `intervals` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    assert!(intervals % 2 == 0);
    let h = (b - a) / intervals as f64;
    let mut acc = f(a) + f(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let n = a.len() as f64;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    cov / (sa * sb)
}

/// Standard normal CDF via the Abramowitz–Stegun 7.1.26 erf approximation
/// (|error| < 1.5e-7).
pub fn normal_cdf(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.3275911 * z.abs());
    let poly = t * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let erf = 1.0 - poly * (-z * z).exp();
    0.5 * (1.0 + if z >= 0.0 { erf } else { -erf })
}

/// Recomputes the geometric claims of a shape image from its stored
/// vertices and pixels. Returns a description of the first violation.
pub fn verify_shape(pixels: &[f64], vertices: &[(f64, f64)], four_sided: bool, equal: bool) -> Result<(), String> {
    const SIZE: usize = 64;
    if pixels.len() != SIZE * SIZE {
        return Err(format!("{} pixels", pixels.len()));
    }
    if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err("pixel outside [0, 1]".into());
    }
    if vertices.len() != if four_sided { 4 } else { 3 } {
        return Err(format!("{} vertices for four_sided = {four_sided}", vertices.len()));
    }
    for &(vx, vy) in vertices {
        if vx < 6.0 || vy < 6.0 || vx > 57.0 || vy > 57.0 {
            return Err(format!("vertex ({vx}, {vy}) inside the margin"));
        }
        let mut near = 0;
        for y in 0..SIZE {
            for x in 0..SIZE {
                let (dx, dy) = (x as f64 - vx, y as f64 - vy);
                if pixels[y * SIZE + x] > 0.0 && (dx * dx + dy * dy).sqrt() <= 2.0 {
                    near += 1;
                }
            }
        }
        if near < 3 {
            return Err(format!("vertex ({vx}, {vy}) has {near} lit pixels nearby"));
        }
    }
    let d = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let n = vertices.len();
    let sides: Vec<f64> = (0..n).map(|i| d(vertices[i], vertices[(i + 1) % n])).collect();
    let max = sides.iter().cloned().fold(0.0, f64::max);
    let min = sides.iter().cloned().fold(f64::INFINITY, f64::min);
    let sides_equal = (max - min) / max <= 0.015;
    if sides_equal != equal {
        return Err(format!("sides {sides:?} disagree with equal = {equal}"));
    }
    if four_sided {
        for i in 0..4 {
            let (p, q, r) = (vertices[i], vertices[(i + 1) % 4], vertices[(i + 2) % 4]);
            let (u, v) = ((q.0 - p.0, q.1 - p.1), (r.0 - q.0, r.1 - q.1));
            let cos = (u.0 * v.0 + u.1 * v.1) / (d(p, q) * d(q, r));
            let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
            if (angle - 90.0).abs() > 1.0 {
                return Err(format!("corner {i} is {angle:.3} degrees"));
            }
        }
    }
    Ok(())
}
