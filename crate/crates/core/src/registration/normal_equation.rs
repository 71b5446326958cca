use nalgebra::{Matrix3, Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::Vec3;

use super::PointMatch;

/// Matches per partial sum; fixed so that reductions are reproducible.
const CHUNK: usize = 1024;

/// Sum with a running compensation term (Neumaier).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Box normalization `x̂ = S⁻¹(x − m)` with diagonal `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkFrame {
    pub center: Vec3,
    pub scale: Vec3,
}

impl ShrinkFrame {
    pub fn identity() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: Vec3::repeat(1.0),
        }
    }

    /// Bounding box of all `p` and `q`, each side floored at `min_extent`.
    pub fn fit(matches: &[PointMatch], min_extent: f64) -> Result<Self> {
        let first = matches.first().ok_or(FusionError::EmptyMatches)?;
        let (mut lo, mut hi) = (first.p, first.p);
        for m in matches {
            lo = lo.inf(&m.p).inf(&m.q);
            hi = hi.sup(&m.p).sup(&m.q);
        }
        Ok(Self {
            center: (lo + hi) / 2.0,
            scale: (hi - lo).map(|e| e.max(min_extent)),
        })
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        (x - self.center).component_div(&self.scale)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.scale)
    }
}

/// A match in shrunk coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrunkMatch {
    pub p: Vec3,
    pub q: Vec3,
    pub n: Vec3,
    /// `S⁻¹(p × n − m × n)`.
    pub c: Vec3,
}

/// Shrinks matches into the unit cube around their bounding box.
pub fn shrink(matches: &[PointMatch], min_extent: f64) -> Result<(Vec<ShrunkMatch>, ShrinkFrame)> {
    let frame = ShrinkFrame::fit(matches, min_extent)?;
    Ok((shrink_with(matches, &frame), frame))
}

pub fn shrink_with(matches: &[PointMatch], frame: &ShrinkFrame) -> Vec<ShrunkMatch> {
    matches
        .iter()
        .map(|m| {
            let c = m.p.cross(&m.n) - frame.center.cross(&m.n);
            ShrunkMatch {
                p: frame.apply(&m.p),
                q: frame.apply(&m.q),
                n: m.n,
                c: c.component_div(&frame.scale),
            }
        })
        .collect()
}

/// Symmetric 6×6 system in shrunk motion `[r̂; t̂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquation {
    pub a: Matrix6<f64>,
    pub b: Vector6<f64>,
    pub pair_count: usize,
    pub frame: ShrinkFrame,
}

#[inline]
fn row(m: &ShrunkMatch, frame: &ShrinkFrame) -> (Vector6<f64>, f64) {
    let g = Vector6::new(m.c.x, m.c.y, m.c.z, m.n.x, m.n.y, m.n.z);
    // point-to-plane residual in meters
    let r = (m.p - m.q).component_mul(&frame.scale).dot(&m.n);
    (g, r)
}

/// Accumulates `A = Σ g gᵀ` and `b = −Σ g·r` with `g = [ĉ; n]` and
/// `r = S(p̂ − q̂)·n`. Partial sums over fixed chunks are reduced in order,
/// each with compensated summation.
pub fn assemble(matches: &[ShrunkMatch], frame: &ShrinkFrame) -> NormalEquation {
    // 21 upper-triangle entries of A followed by the 6 entries of b
    let partials: Vec<[CompensatedSum; 27]> = matches
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = [CompensatedSum::default(); 27];
            for m in chunk {
                let (g, r) = row(m, frame);
                let mut k = 0;
                for i in 0..6 {
                    for j in i..6 {
                        acc[k].add(g[i] * g[j]);
                        k += 1;
                    }
                }
                for i in 0..6 {
                    acc[21 + i].add(-g[i] * r);
                }
            }
            acc
        })
        .collect();
    let mut total = [CompensatedSum::default(); 27];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.add(p.sum);
            t.add(p.comp);
        }
    }
    let mut a = Matrix6::zeros();
    let mut k = 0;
    for i in 0..6 {
        for j in i..6 {
            a[(i, j)] = total[k].value();
            a[(j, i)] = a[(i, j)];
            k += 1;
        }
    }
    let b = Vector6::from_fn(|i, _| total[21 + i].value());
    NormalEquation {
        a,
        b,
        pair_count: matches.len(),
        frame: *frame,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matches(n: usize, seed: u64) -> Vec<PointMatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let p = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(1.0..3.0),
                );
                let n = Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let q = p + Vec3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                );
                PointMatch { p, q, n }
            })
            .collect()
    }

    #[test]
    fn unit_box_shrink_is_identity() {
        let m = vec![
            PointMatch {
                p: Vec3::repeat(-0.5),
                q: Vec3::repeat(0.5),
                n: Vec3::z(),
            },
            PointMatch {
                p: Vec3::new(0.1, 0.2, 0.3),
                q: Vec3::zeros(),
                n: Vec3::x(),
            },
        ];
        let (s, f) = shrink(&m, 1e-3).unwrap();
        assert_eq!(f, ShrinkFrame::identity());
        for (a, b) in s.iter().zip(&m) {
            assert_eq!(a.p, b.p);
            assert_eq!(a.c, b.p.cross(&b.n));
        }
    }

    #[test]
    fn degenerate_box_is_floored() {
        let m = vec![
            PointMatch {
                p: Vec3::repeat(1.0),
                q: Vec3::repeat(1.0),
                n: Vec3::z()
            };
            5
        ];
        let (s, f) = shrink(&m, 0.01).unwrap();
        assert_eq!(f.scale, Vec3::repeat(0.01));
        assert!(s.iter().all(|m| m.p.iter().all(|c| c.is_finite())));
        assert!(matches!(shrink(&[], 0.01), Err(FusionError::EmptyMatches)));
    }

    #[test]
    fn shrunk_cloud_spans_the_unit_cube() {
        let m = random_matches(500, 4);
        let (s, _) = shrink(&m, 1e-3).unwrap();
        for axis in 0..3 {
            let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
                (lo.min(m.p[axis]).min(m.q[axis]), hi.max(m.p[axis]).max(m.q[axis]))
            });
            assert!((hi - lo - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_residual_gives_zero_rhs() {
        let mut m = random_matches(100, 5);
        for x in &mut m {
            x.q = x.p;
        }
        let (s, f) = shrink(&m, 1e-3).unwrap();
        assert_eq!(assemble(&s, &f).b, Vector6::zeros());
    }

    #[test]
    fn single_pair_matches_outer_product() {
        let m = PointMatch {
            p: Vec3::new(0.3, -0.2, 1.7),
            q: Vec3::new(0.31, -0.18, 1.69),
            n: Vec3::new(0.0, 0.6, -0.8),
        };
        let f = ShrinkFrame::identity();
        let eq = assemble(&shrink_with(&[m], &f), &f);
        let c = m.p.cross(&m.n);
        let g = Vector6::new(c.x, c.y, c.z, m.n.x, m.n.y, m.n.z);
        let r = (m.p - m.q).dot(&m.n);
        assert!((eq.a - g * g.transpose()).abs().max() < 1e-15);
        assert!((eq.b + g * r).abs().max() < 1e-15);
    }

    #[test]
    fn accumulation_is_order_independent() {
        let m = random_matches(10_000, 6);
        let (s, f) = shrink(&m, 1e-3).unwrap();
        let forward = assemble(&s, &f);
        let mut rev = s.clone();
        rev.reverse();
        let backward = assemble(&rev, &f);
        assert!((forward.a - backward.a).abs().max() <= 1e-10);
        assert!((forward.b - backward.b).abs().max() <= 1e-10);
        assert!((forward.a - forward.a.transpose()).abs().max() == 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..1000 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-14).abs() < 1e-20);
    }
}
