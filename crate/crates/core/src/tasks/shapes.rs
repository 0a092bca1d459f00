//! Point-cluster shapes on a 64×64 canvas.
//!
//! Each image shows three or four vertex clusters. The first label says
//! whether the shape has four sides; the second whether its sides are equal.
//! The four kinds (equilateral triangle, other triangle, square, other
//! rectangle) are equally likely.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use rand::Rng;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

pub const IMAGE_SIZE: usize = 64;
/// Minimum distance of a vertex center from the image border.
pub const MARGIN: f64 = 6.0;
pub const POINTS_PER_VERTEX: usize = 5;
pub const CLUSTER_RADIUS: f64 = 2.0;
/// Relative spread `(max − min) / max` under which sides count as equal.
pub const EQUAL_SIDE_TOLERANCE: f64 = 0.015;
pub const MIN_TRIANGLE_SIDE_RATIO: f64 = 1.25;
pub const MIN_RECTANGLE_ASPECT: f64 = 1.3;

const MIN_SIDE: f64 = 12.0;
const MIN_TRIANGLE_ANGLE: f64 = 20.0 * PI / 180.0;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    EquilateralTriangle,
    Triangle,
    Square,
    Rectangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [Self::EquilateralTriangle, Self::Triangle, Self::Square, Self::Rectangle];

    pub fn labels(self) -> ShapeLabels {
        match self {
            Self::EquilateralTriangle => ShapeLabels { four_sided: false, equal_sides: true },
            Self::Triangle => ShapeLabels { four_sided: false, equal_sides: false },
            Self::Square => ShapeLabels { four_sided: true, equal_sides: true },
            Self::Rectangle => ShapeLabels { four_sided: true, equal_sides: false },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeLabels {
    pub four_sided: bool,
    pub equal_sides: bool,
}

impl ShapeLabels {
    /// Class indices for the two heads: `[sides, equal]`.
    pub fn classes(self) -> Vec<usize> {
        vec![self.four_sided as usize, self.equal_sides as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeImage {
    /// Row-major `64 × 64` intensities in `[0, 1]`.
    pub pixels: Vec<f64>,
    /// Vertex centers `(x, y)` in polygon order.
    pub vertices: Vec<(f64, f64)>,
    pub kind: ShapeKind,
    pub labels: ShapeLabels,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn relative_spread(lengths: &[f64]) -> f64 {
    let max = lengths.iter().copied().fold(f64::MIN, f64::max);
    let min = lengths.iter().copied().fold(f64::MAX, f64::min);
    (max - min) / max
}

/// Labels implied by the vertex geometry alone.
pub fn label_vertices(vertices: &[(f64, f64)]) -> Result<ShapeLabels> {
    let n = vertices.len();
    if !(n == 3 || n == 4) {
        return Err(Error::Validation(format!("a shape has 3 or 4 vertices, got {n}")));
    }
    // consecutive sides; for a triangle these are all pairwise distances
    let sides: Vec<f64> = (0..n).map(|i| dist(vertices[i], vertices[(i + 1) % n])).collect();
    Ok(ShapeLabels {
        four_sided: n == 4,
        equal_sides: relative_spread(&sides) <= EQUAL_SIDE_TOLERANCE,
    })
}

fn within_margin(vertices: &[(f64, f64)]) -> bool {
    let hi = (IMAGE_SIZE - 1) as f64 - MARGIN;
    vertices.iter().all(|&(x, y)| (MARGIN..=hi).contains(&x) && (MARGIN..=hi).contains(&y))
}

fn random_center(rng: &mut impl Rng) -> (f64, f64) {
    let hi = (IMAGE_SIZE - 1) as f64 - MARGIN;
    (rng.random_range(MARGIN..=hi), rng.random_range(MARGIN..=hi))
}

fn regular_polygon(center: (f64, f64), radius: f64, corners: usize, phase: f64) -> Vec<(f64, f64)> {
    (0..corners)
        .map(|k| {
            let a = phase + TAU * k as f64 / corners as f64;
            (center.0 + radius * a.cos(), center.1 + radius * a.sin())
        })
        .collect()
}

fn interior_angles(v: &[(f64, f64)]) -> [f64; 3] {
    let [a, b, c] = [dist(v[1], v[2]), dist(v[0], v[2]), dist(v[0], v[1])];
    let angle = |opp: f64, s1: f64, s2: f64| ((s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2)).clamp(-1.0, 1.0).acos();
    [angle(a, b, c), angle(b, a, c), angle(c, a, b)]
}

fn propose(kind: ShapeKind, rng: &mut impl Rng) -> Option<Vec<(f64, f64)>> {
    let phase = rng.random_range(0.0..TAU);
    let v = match kind {
        ShapeKind::EquilateralTriangle => {
            let side = rng.random_range(MIN_SIDE..=40.0);
            regular_polygon(random_center(rng), side / 3f64.sqrt(), 3, phase)
        }
        ShapeKind::Square => {
            let side = rng.random_range(MIN_SIDE..=34.0);
            regular_polygon(random_center(rng), side / 2f64.sqrt(), 4, phase + FRAC_PI_4)
        }
        ShapeKind::Rectangle => {
            let short = rng.random_range(MIN_SIDE..=28.0);
            let long = short * rng.random_range(MIN_RECTANGLE_ASPECT..=2.5);
            if long > 44.0 {
                return None;
            }
            let c = random_center(rng);
            let (u, w) = ((phase.cos(), phase.sin()), ((phase + FRAC_PI_2).cos(), (phase + FRAC_PI_2).sin()));
            [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
                .iter()
                .map(|&(a, b)| {
                    let (p, q) = (a * long / 2.0, b * short / 2.0);
                    (c.0 + p * u.0 + q * w.0, c.1 + p * u.1 + q * w.1)
                })
                .collect()
        }
        ShapeKind::Triangle => {
            let v: Vec<(f64, f64)> = (0..3).map(|_| random_center(rng)).collect();
            let sides = [dist(v[0], v[1]), dist(v[1], v[2]), dist(v[2], v[0])];
            let min = sides.iter().copied().fold(f64::MAX, f64::min);
            let max = sides.iter().copied().fold(f64::MIN, f64::max);
            let min_angle = interior_angles(&v).into_iter().fold(f64::MAX, f64::min);
            if min < MIN_SIDE || max / min < MIN_TRIANGLE_SIDE_RATIO || min_angle < MIN_TRIANGLE_ANGLE {
                return None;
            }
            v
        }
    };
    within_margin(&v).then_some(v)
}

/// Lights `POINTS_PER_VERTEX` distinct pixels per vertex, each the rounding of
/// a uniform offset in the disc of radius 2 that itself stays within radius 2.
pub fn render_vertices(vertices: &[(f64, f64)], rng: &mut impl Rng) -> Vec<f64> {
    let mut pixels = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for &(vx, vy) in vertices {
        let mut lit: Vec<(usize, usize)> = Vec::with_capacity(POINTS_PER_VERTEX);
        while lit.len() < POINTS_PER_VERTEX {
            let r = CLUSTER_RADIUS * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..TAU);
            let (px, py) = ((vx + r * a.cos()).round(), (vy + r * a.sin()).round());
            if dist((px, py), (vx, vy)) > CLUSTER_RADIUS {
                continue;
            }
            let p = (px as usize, py as usize);
            if !lit.contains(&p) {
                lit.push(p);
            }
        }
        for (x, y) in lit {
            pixels[y * IMAGE_SIZE + x] = 1.0;
        }
    }
    pixels
}

/// One image of a uniformly chosen kind.
pub fn gen_shape(rng: &mut impl Rng) -> Result<ShapeImage> {
    let kind = ShapeKind::ALL[rng.random_range(0..4)];
    for _ in 0..MAX_ATTEMPTS {
        if let Some(vertices) = propose(kind, rng) {
            let pixels = render_vertices(&vertices, rng);
            return Ok(ShapeImage {
                pixels,
                vertices,
                kind,
                labels: kind.labels(),
            });
        }
    }
    Err(Error::Generation(format!("no valid {kind:?} after {MAX_ATTEMPTS} attempts")))
}

/// `(train, test)` shape datasets; inputs are `[1, 64, 64]` images, heads `[2, 2]`.
pub fn gen_shapes(train_size: usize, test_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let split = |size: usize, which: Stream| -> Result<Dataset> {
        let mut rng = stream(seed, which);
        let examples = (0..size)
            .map(|_| gen_shape(&mut rng).map(|img| (img.pixels, img.labels.classes())))
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_examples(vec![1, IMAGE_SIZE, IMAGE_SIZE], vec![2, 2], examples)
    };
    Ok((split(train_size, Stream::TrainData)?, split(test_size, Stream::TestData)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_equilateral_triangle() {
        let labels = label_vertices(&[(10.0, 10.0), (50.0, 10.0), (30.0, 44.64)]).unwrap();
        assert_eq!(labels, ShapeLabels { four_sided: false, equal_sides: true });
    }

    #[test]
    fn square_of_side_twenty() {
        let v = [(10.0, 10.0), (30.0, 10.0), (30.0, 30.0), (10.0, 30.0)];
        assert_eq!(label_vertices(&v).unwrap(), ShapeLabels { four_sided: true, equal_sides: true });
        let r = [(10.0, 10.0), (40.0, 10.0), (40.0, 30.0), (10.0, 30.0)];
        assert!(!label_vertices(&r).unwrap().equal_sides);
        assert!(label_vertices(&v[..2]).is_err());
    }

    #[test]
    fn every_vertex_gets_distinct_pixels() {
        let mut rng = stream(1, Stream::TrainData);
        let img = gen_shape(&mut rng).unwrap();
        let lit = img.pixels.iter().filter(|&&p| p > 0.0).count();
        assert_eq!(lit, POINTS_PER_VERTEX * img.vertices.len());
        assert!(img.pixels.iter().all(|&p| p == 0.0 || p == 1.0));
    }
}
