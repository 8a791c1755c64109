//! Probabilistic Hough transform for line segments.
//!
//! Points are consumed in a seeded random order; each point votes over all
//! angle bins (π/180 resolution, 1 px distance resolution). When a bin
//! crosses the vote threshold, the image is walked along that bin's
//! direction from the seed point, bridging gaps up to `max_gap`, and the
//! resulting segment is kept if long enough. Points of accepted segments are
//! removed and their votes withdrawn, so one bright structure yields one
//! segment rather than hundreds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Bitmap;

/// A detected segment with integer pixel endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub u0: i64,
    pub v0: i64,
    pub u1: i64,
    pub v1: i64,
}

const NUM_ANGLE: usize = 180;
const SHIFT: i64 = 16;

pub(super) fn probabilistic_hough(
    raster: &Bitmap,
    threshold: usize,
    min_length: f64,
    max_gap: usize,
    seed: u64,
) -> Vec<Segment> {
    let (width, height) = (raster.width as i64, raster.height as i64);
    let mut mask = vec![false; (width * height) as usize];
    let mut points: Vec<(i64, i64)> = Vec::new();
    for v in 0..height {
        for u in 0..width {
            if raster.get(u as usize, v as usize) {
                mask[(v * width + u) as usize] = true;
                points.push((u, v));
            }
        }
    }
    if points.is_empty() {
        return Vec::new();
    }

    let rmax = ((width * width + height * height) as f64).sqrt().ceil() as i64;
    let numrho = (2 * rmax + 1) as usize;
    let mut acc = vec![0i32; NUM_ANGLE * numrho];
    let trig: Vec<(f64, f64)> = (0..NUM_ANGLE)
        .map(|n| {
            let theta = n as f64 * std::f64::consts::PI / NUM_ANGLE as f64;
            (theta.cos(), theta.sin())
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();

    while !points.is_empty() {
        let pick = rng.random_range(0..points.len());
        let (pu, pv) = points.swap_remove(pick);
        if !mask[(pv * width + pu) as usize] {
            continue; // consumed by an earlier segment walk
        }

        // Vote and remember the best bin for this point.
        let mut max_votes = 0;
        let mut max_n = 0usize;
        for (n, &(c, s)) in trig.iter().enumerate() {
            let rho = ((pu as f64 * c + pv as f64 * s).round() as i64 + rmax) as usize;
            let cell = &mut acc[n * numrho + rho];
            *cell += 1;
            if *cell > max_votes {
                max_votes = *cell;
                max_n = n;
            }
        }
        if (max_votes as usize) < threshold {
            continue;
        }

        // Walk along the line direction (-sinθ, cosθ) both ways, bridging
        // gaps, in 1/2^SHIFT fixed-point steps of the dominant axis.
        let (c, s) = trig[max_n];
        let (a, b) = (-s, c);
        let x_major = a.abs() > b.abs();
        let (dx0, dy0, fx0, fy0) = if x_major {
            (
                if a > 0.0 { 1i64 } else { -1 },
                (b * (1i64 << SHIFT) as f64 / a.abs()).round() as i64,
                pu << SHIFT,
                (pv << SHIFT) + (1 << (SHIFT - 1)),
            )
        } else {
            (
                (a * (1i64 << SHIFT) as f64 / b.abs()).round() as i64,
                if b > 0.0 { 1i64 } else { -1 },
                (pu << SHIFT) + (1 << (SHIFT - 1)),
                pv << SHIFT,
            )
        };

        let walk = |dir: i64, mask: &[bool]| -> (i64, i64) {
            let (mut fx, mut fy) = (fx0, fy0);
            let (sdx, sdy) = (dx0 * dir, dy0 * dir);
            let (mut end_u, mut end_v) = (pu, pv);
            let mut gap = 0usize;
            loop {
                let (u, v) = (fx >> SHIFT, fy >> SHIFT);
                if u < 0 || v < 0 || u >= width || v >= height {
                    break;
                }
                if mask[(v * width + u) as usize] {
                    gap = 0;
                    end_u = u;
                    end_v = v;
                } else {
                    gap += 1;
                    if gap > max_gap {
                        break;
                    }
                }
                if x_major {
                    fx += (sdx) << SHIFT;
                    fy += sdy;
                } else {
                    fx += sdx;
                    fy += (sdy) << SHIFT;
                }
            }
            (end_u, end_v)
        };

        let (e0u, e0v) = walk(1, &mask);
        let (e1u, e1v) = walk(-1, &mask);
        let du = (e0u - e1u) as f64;
        let dv = (e0v - e1v) as f64;
        let good = (du * du + dv * dv).sqrt() >= min_length;

        // Second pass: erase the walked points; withdraw their votes only
        // when the segment is accepted.
        for dir in [1i64, -1] {
            let (mut fx, mut fy) = (fx0, fy0);
            let (sdx, sdy) = (dx0 * dir, dy0 * dir);
            loop {
                let (u, v) = (fx >> SHIFT, fy >> SHIFT);
                if u < 0 || v < 0 || u >= width || v >= height {
                    break;
                }
                let idx = (v * width + u) as usize;
                if mask[idx] {
                    mask[idx] = false;
                    if good {
                        for (n, &(cc, ss)) in trig.iter().enumerate() {
                            let rho =
                                ((u as f64 * cc + v as f64 * ss).round() as i64 + rmax) as usize;
                            acc[n * numrho + rho] -= 1;
                        }
                    }
                }
                let done = if dir == 1 {
                    u == e0u && v == e0v
                } else {
                    u == e1u && v == e1v
                };
                if done {
                    break;
                }
                if x_major {
                    fx += sdx << SHIFT;
                    fy += sdy;
                } else {
                    fx += sdx;
                    fy += sdy << SHIFT;
                }
            }
        }

        if good {
            segments.push(Segment {
                u0: e1u,
                v0: e1v,
                u1: e0u,
                v1: e0v,
            });
        }
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster_with_segment(w: usize, h: usize, pts: &[(i64, i64)]) -> Bitmap {
        let mut b = Bitmap::new(w, h);
        for &(u, v) in pts {
            b.set(u as usize, v as usize, true);
        }
        b
    }

    #[test]
    fn finds_horizontal_segment() {
        let pts: Vec<(i64, i64)> = (10..90).map(|u| (u, 40)).collect();
        let b = raster_with_segment(120, 80, &pts);
        let segs = probabilistic_hough(&b, 40, 50.0, 2, 0);
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        assert_eq!(s.v0, 40);
        assert_eq!(s.v1, 40);
        assert!(s.u0.min(s.u1) <= 12 && s.u0.max(s.u1) >= 87);
    }

    #[test]
    fn bridges_small_gaps_but_not_large() {
        let mut pts: Vec<(i64, i64)> = (10..50).map(|u| (u, 20)).collect();
        pts.extend((53..90).map(|u| (u, 20))); // gap of 3
        let b = raster_with_segment(120, 60, &pts);
        let bridged = probabilisti_len(&b, 5);
        assert_eq!(bridged, 1, "gap of 3 should be bridged with max_gap 5");
        let split = probabilisti_len(&b, 1);
        assert!(split >= 1, "with max_gap 1 the long side must still appear");
    }

    fn probabilisti_len(b: &Bitmap, max_gap: usize) -> usize {
        probabilistic_hough(b, 20, 30.0, max_gap, 0).len()
    }

    #[test]
    fn diagonal_segment_recovered() {
        let pts: Vec<(i64, i64)> = (0..70).map(|i| (10 + i, 10 + i)).collect();
        let b = raster_with_segment(100, 100, &pts);
        let segs = probabilistic_hough(&b, 30, 50.0, 2, 0);
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        let slope = (s.v1 - s.v0) as f64 / (s.u1 - s.u0) as f64;
        assert!((slope - 1.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn empty_raster_no_segments() {
        let b = Bitmap::new(32, 32);
        assert!(probabilistic_hough(&b, 10, 5.0, 2, 0).is_empty());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let pts: Vec<(i64, i64)> = (5..95)
            .map(|u| (u, 30 + (u % 7 == 0) as i64))
            .collect();
        let b = raster_with_segment(128, 64, &pts);
        let s1 = probabilistic_hough(&b, 30, 40.0, 3, 7);
        let s2 = probabilistic_hough(&b, 30, 40.0, 3, 7);
        assert_eq!(s1, s2);
    }
}
