//! Gap filling inside the scanned region.
//!
//! Compounding leaves empty voxels wherever the voxel size is small compared
//! to the inter-frame distance. Filling is restricted to the union of convex
//! hulls of consecutive frame pairs (the region the probe actually swept),
//! then gaps are interpolated either by VNN (copy the nearest filled voxel)
//! or by a growing average cube (distance-weighted mean of the filled voxels
//! in a centred cube, grown until enough of them exist). The volume can be
//! processed in blocks along its longest axis to bound the working set; a
//! read-only halo of half the maximum cube size makes the blocked result
//! identical to the unblocked one.
//!
//! Fills never modify voxels with contributions and never cascade: every
//! pass reads the pre-fill snapshot.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::compounding::{idx2xyz, ScanSequence, VoxelArray};
use crate::error::{Error, Result};

/// Boolean mask congruent with the voxel grid; `true` marks voxels inside
/// the swept region (and every voxel that already has contributions).
#[derive(Clone, Debug)]
pub struct HullMask {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl HullMask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Gap interpolation method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GapFillMethod {
    /// Copy the Euclidean-nearest filled voxel (ties: lowest linear index).
    Vnn,
    /// Growing cube with inverse-distance weighted averaging.
    #[default]
    AvgCube,
}

#[derive(Clone, Copy, Debug)]
pub struct GapFillConfig {
    pub method: GapFillMethod,
    /// Minimum percentage of filled voxels a cube must contain before its
    /// average is accepted, in (0, 100].
    pub min_nongap_pct: f64,
    /// Largest cube side tried (odd, ≥ 3 voxels).
    pub max_cube_size: usize,
    /// Number of slabs the volume is split into along its longest axis.
    pub n_blocks: usize,
    /// Exponent of the inverse-distance weight, `w = 1/dᵉ`; 1 by default.
    pub weight_exponent: f64,
}

impl Default for GapFillConfig {
    fn default() -> Self {
        GapFillConfig {
            method: GapFillMethod::AvgCube,
            min_nongap_pct: 25.0,
            max_cube_size: 5,
            n_blocks: 1,
            weight_exponent: 1.0,
        }
    }
}

impl GapFillConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.min_nongap_pct > 0.0 && self.min_nongap_pct <= 100.0) {
            problems.push(format!(
                "min_nongap_pct must be in (0, 100], got {}",
                self.min_nongap_pct
            ));
        }
        if self.max_cube_size < 3 || self.max_cube_size % 2 == 0 {
            problems.push(format!(
                "max_cube_size must be odd and ≥ 3, got {}",
                self.max_cube_size
            ));
        }
        if self.n_blocks < 1 {
            problems.push("n_blocks must be ≥ 1".into());
        }
        if !(self.weight_exponent >= 0.0) {
            problems.push(format!(
                "weight_exponent must be ≥ 0, got {}",
                self.weight_exponent
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }
}

/// Outcome of a gap-fill pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FillReport {
    pub filled: usize,
    /// Masked gaps left unfilled (average cube never reached its quota).
    pub unfilled: usize,
    /// Largest number of voxels resident for one block (total volume when
    /// unblocked); instruments the memory bound of blocked execution.
    pub peak_block_voxels: usize,
}

// ---------------------------------------------------------------------------
// Convex-hull mask
// ---------------------------------------------------------------------------

/// Mask of voxels between consecutive slices: for every consecutive frame
/// pair the convex hull of their 8 corner points is rasterised (voxel-centre
/// containment); the mask is the union over pairs plus every voxel that has
/// contributions.
pub fn hull_mask(seq: &ScanSequence, va: &VoxelArray) -> Result<HullMask> {
    let dims = va.grid.dims;
    let mut data = vec![false; va.values.len()];
    for i in 0..seq.frames.len() - 1 {
        let mut pts: Vec<Vector3<f64>> = Vec::with_capacity(8);
        for w in seq.frame_corners(i)?.into_iter() {
            pts.push(va.grid.grid_coords(&w));
        }
        for w in seq.frame_corners(i + 1)?.into_iter() {
            pts.push(va.grid.grid_coords(&w));
        }
        rasterize_hull(&pts, dims, &mut data);
    }
    for (m, &c) in data.iter_mut().zip(va.contributions.iter()) {
        if c > 0 {
            *m = true;
        }
    }
    Ok(HullMask { dims, data })
}

fn cloud_extent(pts: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).amax()
}

/// Half-space inequalities (n, d) with n·x ≤ d describing the hull of `pts`,
/// or `None` when the cloud is degenerate (coplanar or worse).
fn hull_facets(pts: &[Vector3<f64>], eps: f64) -> Option<Vec<(Vector3<f64>, f64)>> {
    let mut facets: Vec<(Vector3<f64>, f64)> = Vec::new();
    let mut nondegenerate = false;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                let n = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
                let norm = n.norm();
                if norm < eps * eps {
                    continue;
                }
                let n = n / norm;
                let d = n.dot(&pts[i]);
                let mut above = 0;
                let mut below = 0;
                for p in pts {
                    let s = n.dot(p) - d;
                    if s > eps {
                        above += 1;
                    } else if s < -eps {
                        below += 1;
                    }
                }
                if above > 0 && below > 0 {
                    nondegenerate = true;
                    continue;
                }
                if above == 0 {
                    facets.push((n, d));
                    if below > 0 {
                        nondegenerate = true;
                    }
                }
                if below == 0 {
                    facets.push((-n, -d));
                    if above > 0 {
                        nondegenerate = true;
                    }
                }
            }
        }
    }
    if nondegenerate && !facets.is_empty() {
        Some(facets)
    } else {
        None
    }
}

/// Set mask bits for voxel centres inside the hull of `pts` (voxel-grid
/// coordinates). Coplanar clouds fall back to a one-voxel-thick slab around
/// the common plane, clipped to the 2D hull of the projected points.
fn rasterize_hull(pts: &[Vector3<f64>], dims: [usize; 3], mask: &mut [bool]) {
    let extent = cloud_extent(pts);
    let eps = 1e-9 * extent.max(1.0);
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let clamp = |v: f64, n: usize| -> (usize, usize) {
        let a = v.floor().max(0.0) as usize;
        (a.min(n - 1), n)
    };
    let (x0, _) = clamp(lo.x - 1.0, dims[0]);
    let (y0, _) = clamp(lo.y - 1.0, dims[1]);
    let (z0, _) = clamp(lo.z - 1.0, dims[2]);
    let x1 = (hi.x.ceil() + 1.0).min(dims[0] as f64 - 1.0) as usize;
    let y1 = (hi.y.ceil() + 1.0).min(dims[1] as f64 - 1.0) as usize;
    let z1 = (hi.z.ceil() + 1.0).min(dims[2] as f64 - 1.0) as usize;

    match hull_facets(pts, eps) {
        Some(facets) => {
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let c = Vector3::new(x as f64, y as f64, z as f64);
                        if facets.iter().all(|(n, d)| n.dot(&c) - d <= eps) {
                            mask[x + dims[0] * (y + dims[1] * z)] = true;
                        }
                    }
                }
            }
        }
        None => rasterize_planar_slab(pts, dims, mask, (x0, x1, y0, y1, z0, z1), eps),
    }
}

/// Degenerate case: all corners coplanar. Mark voxels within half a voxel of
/// the plane whose projection falls inside the 2D hull of the points.
fn rasterize_planar_slab(
    pts: &[Vector3<f64>],
    dims: [usize; 3],
    mask: &mut [bool],
    bbox: (usize, usize, usize, usize, usize, usize),
    eps: f64,
) {
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    // Plane basis from the two longest independent directions.
    let mut e1 = Vector3::zeros();
    for p in pts {
        if (p - centroid).norm() > e1.norm() {
            e1 = p - centroid;
        }
    }
    if e1.norm() < eps {
        return; // all points coincide
    }
    e1 /= e1.norm();
    let mut e2 = Vector3::zeros();
    for p in pts {
        let d = p - centroid;
        let perp = d - e1 * e1.dot(&d);
        if perp.norm() > e2.norm() {
            e2 = perp;
        }
    }
    if e2.norm() < eps {
        return; // collinear
    }
    e2 /= e2.norm();
    let n = e1.cross(&e2);

    let poly = convex_hull_2d(
        &pts.iter()
            .map(|p| {
                let d = p - centroid;
                [e1.dot(&d), e2.dot(&d)]
            })
            .collect::<Vec<_>>(),
    );
    if poly.len() < 3 {
        return;
    }
    let (x0, x1, y0, y1, z0, z1) = bbox;
    for z in z0..=z1 {
        for y in y0..=y1 {
            for x in x0..=x1 {
                let c = Vector3::new(x as f64, y as f64, z as f64) - centroid;
                if n.dot(&c).abs() > 0.5 {
                    continue;
                }
                if point_in_polygon([e1.dot(&c), e2.dot(&c)], &poly, eps) {
                    mask[x + dims[0] * (y + dims[1] * z)] = true;
                }
            }
        }
    }
}

/// Monotone-chain 2D convex hull, counter-clockwise.
fn convex_hull_2d(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    if p.len() < 3 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let chain = |iter: &mut dyn Iterator<Item = &[f64; 2]>| {
        let mut half: Vec<[f64; 2]> = Vec::new();
        for &pt in iter {
            while half.len() >= 2 && cross(half[half.len() - 2], half[half.len() - 1], pt) <= 0.0 {
                half.pop();
            }
            half.push(pt);
        }
        half.pop();
        half
    };
    let mut hull = chain(&mut p.iter());
    hull.extend(chain(&mut p.iter().rev()));
    hull
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]], eps: f64) -> bool {
    // Inside a CCW polygon iff not strictly right of any edge.
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross < -eps {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// VNN via exact Euclidean distance transform
// ---------------------------------------------------------------------------

const EDT_INF: i64 = i64::MAX >> 3;

/// 1D squared-distance transform (lower envelope of parabolas):
/// `d[i] = min_j f[j] + (i-j)²`.
fn edt_1d(f: &[i64], d: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] >= EDT_INF {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] >= EDT_INF {
                // placeholder parabola from initialisation
                v[k] = q;
                z[k] = f64::NEG_INFINITY;
                z[k + 1] = f64::INFINITY;
                break;
            }
            let s = ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64
                / (2 * q - 2 * p) as f64;
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (i, slot) in d.iter_mut().enumerate() {
        while z[k + 1] < i as f64 {
            k += 1;
        }
        let p = v[k];
        *slot = if f[p] >= EDT_INF {
            EDT_INF
        } else {
            let di = i as i64 - p as i64;
            f[p] + di * di
        };
    }
}

/// Exact squared Euclidean distance (in voxel units) from every voxel to the
/// nearest seed, by three separable passes.
fn edt_3d(dims: [usize; 3], seed: impl Fn(usize) -> bool) -> Vec<i64> {
    let [xl, yl, zl] = dims;
    let n = xl * yl * zl;
    let mut dist: Vec<i64> = (0..n).map(|i| if seed(i) { 0 } else { EDT_INF }).collect();
    let max_dim = xl.max(yl).max(zl);
    let mut f = vec![0i64; max_dim];
    let mut d = vec![0i64; max_dim];
    let mut v = vec![0usize; max_dim];
    let mut z = vec![0f64; max_dim + 1];

    // x pass
    for zz in 0..zl {
        for yy in 0..yl {
            let base = xl * (yy + yl * zz);
            f[..xl].copy_from_slice(&dist[base..base + xl]);
            edt_1d(&f[..xl], &mut d[..xl], &mut v[..xl], &mut z[..xl + 1]);
            dist[base..base + xl].copy_from_slice(&d[..xl]);
        }
    }
    // y pass
    for zz in 0..zl {
        for xx in 0..xl {
            for yy in 0..yl {
                f[yy] = dist[xx + xl * (yy + yl * zz)];
            }
            edt_1d(&f[..yl], &mut d[..yl], &mut v[..yl], &mut z[..yl + 1]);
            for yy in 0..yl {
                dist[xx + xl * (yy + yl * zz)] = d[yy];
            }
        }
    }
    // z pass
    for yy in 0..yl {
        for xx in 0..xl {
            for zz in 0..zl {
                f[zz] = dist[xx + xl * (yy + yl * zz)];
            }
            edt_1d(&f[..zl], &mut d[..zl], &mut v[..zl], &mut z[..zl + 1]);
            for zz in 0..zl {
                dist[xx + xl * (yy + yl * zz)] = d[zz];
            }
        }
    }
    dist
}

fn isqrt(v: i64) -> i64 {
    let mut r = (v as f64).sqrt() as i64;
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    while r * r > v {
        r -= 1;
    }
    r
}

/// All integer offsets with squared norm exactly `d2`.
fn sphere_offsets(d2: i64) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    let r = isqrt(d2);
    for dx in -r..=r {
        let rem1 = d2 - dx * dx;
        let ry = isqrt(rem1);
        for dy in -ry..=ry {
            let rem2 = rem1 - dy * dy;
            let dz = isqrt(rem2);
            if dz * dz == rem2 {
                out.push([dx, dy, dz]);
                if dz != 0 {
                    out.push([dx, dy, -dz]);
                }
            }
        }
    }
    out
}

/// Fill every masked gap with the value of the Euclidean-nearest filled
/// voxel; exact distances (in voxel units), ties broken by lowest linear
/// index. Runs a distance-transform sweep, O(volume), not a per-gap scan.
pub fn fill_vnn(va: &mut VoxelArray, mask: &HullMask) -> Result<FillReport> {
    debug_assert!(va.is_finalized(), "gap filling expects a finalized volume");
    let dims = va.grid.dims;
    if va.contributions.iter().all(|&c| c == 0) {
        return Err(Error::InvalidParameter(
            "VNN needs at least one filled voxel".into(),
        ));
    }
    let contributions = &va.contributions;
    let dist = edt_3d(dims, |i| contributions[i] > 0);

    let gaps: Vec<usize> = (0..va.values.len())
        .filter(|&i| mask.data[i] && va.contributions[i] == 0)
        .collect();

    // Shell table: offsets grouped by exact squared distance.
    let mut shells: HashMap<i64, Vec<[i64; 3]>> = HashMap::new();
    for &g in &gaps {
        shells.entry(dist[g]).or_default();
    }
    shells
        .par_iter_mut()
        .for_each(|(&d2, v)| *v = sphere_offsets(d2));

    let [xl, yl, zl] = dims;
    let updates: Vec<(usize, f64)> = gaps
        .par_iter()
        .map(|&g| {
            let (x, y, z) = idx2xyz(g, dims);
            let mut best: Option<usize> = None;
            for off in &shells[&dist[g]] {
                let nx = x as i64 + off[0];
                let ny = y as i64 + off[1];
                let nz = z as i64 + off[2];
                if nx < 0 || ny < 0 || nz < 0 || nx >= xl as i64 || ny >= yl as i64 || nz >= zl as i64 {
                    continue;
                }
                let idx = nx as usize + xl * (ny as usize + yl * nz as usize);
                if va.contributions[idx] > 0 {
                    best = Some(match best {
                        None => idx,
                        Some(b) => b.min(idx),
                    });
                }
            }
            let site = best.expect("EDT distance must point at a filled voxel");
            (g, va.values[site])
        })
        .collect();

    for (idx, value) in &updates {
        va.values[*idx] = *value;
    }
    Ok(FillReport {
        filled: updates.len(),
        unfilled: 0,
        peak_block_voxels: va.values.len(),
    })
}

// ---------------------------------------------------------------------------
// Average cube
// ---------------------------------------------------------------------------

/// Average-cube fill for a list of gaps inside one region. Reads only the
/// snapshot arrays; returns `(local index, Some(value))` for filled gaps.
#[allow(clippy::too_many_arguments)]
fn avg_cube_region(
    dims: [usize; 3],
    spacing: [f64; 3],
    values: &[f64],
    filled: &[bool],
    gaps: &[usize],
    cfg: &GapFillConfig,
) -> Vec<(usize, Option<f64>)> {
    let [xl, yl, zl] = dims;
    gaps.par_iter()
        .map(|&g| {
            let (x, y, z) = idx2xyz(g, dims);
            let mut size = 3usize;
            while size <= cfg.max_cube_size {
                let half = (size / 2) as i64;
                let cx = (x as i64 - half).max(0)..=(x as i64 + half).min(xl as i64 - 1);
                let cy = (y as i64 - half).max(0)..=(y as i64 + half).min(yl as i64 - 1);
                let cz = (z as i64 - half).max(0)..=(z as i64 + half).min(zl as i64 - 1);
                let mut cube_voxels = 0usize;
                let mut nongap = 0usize;
                let mut wsum = 0.0;
                let mut wval = 0.0;
                for zz in cz.clone() {
                    for yy in cy.clone() {
                        for xx in cx.clone() {
                            cube_voxels += 1;
                            let idx = xx as usize + xl * (yy as usize + yl * zz as usize);
                            if filled[idx] {
                                nongap += 1;
                                let dxm = (xx - x as i64) as f64 * spacing[0];
                                let dym = (yy - y as i64) as f64 * spacing[1];
                                let dzm = (zz - z as i64) as f64 * spacing[2];
                                let d = (dxm * dxm + dym * dym + dzm * dzm).sqrt();
                                let w = 1.0 / d.powf(cfg.weight_exponent);
                                wsum += w;
                                wval += w * values[idx];
                            }
                        }
                    }
                }
                // Percentage computed on the clipped cube at volume borders.
                if nongap as f64 * 100.0 >= cfg.min_nongap_pct * cube_voxels as f64 && wsum > 0.0 {
                    return (g, Some(wval / wsum));
                }
                size += 2;
            }
            (g, None)
        })
        .collect()
}

/// Average-cube gap fill over the whole volume (unblocked).
pub fn fill_avg_cube(va: &mut VoxelArray, mask: &HullMask, cfg: &GapFillConfig) -> Result<FillReport> {
    debug_assert!(va.is_finalized(), "gap filling expects a finalized volume");
    cfg.validate()?;
    let dims = va.grid.dims;
    let filled: Vec<bool> = va.contributions.iter().map(|&c| c > 0).collect();
    let gaps: Vec<usize> = (0..va.values.len())
        .filter(|&i| mask.data[i] && !filled[i])
        .collect();
    let snapshot = va.values.clone();
    let results = avg_cube_region(dims, va.grid.spacing, &snapshot, &filled, &gaps, cfg);
    let mut report = FillReport {
        peak_block_voxels: va.values.len(),
        ..Default::default()
    };
    for (idx, value) in results {
        match value {
            Some(v) => {
                va.values[idx] = v;
                report.filled += 1;
            }
            None => report.unfilled += 1,
        }
    }
    Ok(report)
}

/// Average-cube gap fill, processed in `n_blocks` slabs along the volume's
/// longest axis. Each slab is copied out with a read-only halo of
/// `max_cube_size/2` voxels, so the result is identical to unblocked
/// execution while only one slab is resident at a time.
pub fn fill_blocks(va: &mut VoxelArray, mask: &HullMask, cfg: &GapFillConfig) -> Result<FillReport> {
    debug_assert!(va.is_finalized(), "gap filling expects a finalized volume");
    cfg.validate()?;
    let dims = va.grid.dims;
    if cfg.n_blocks == 1 {
        return fill_avg_cube(va, mask, cfg);
    }
    let axis = (0..3).max_by_key(|&a| dims[a]).unwrap();
    let len = dims[axis];
    let halo = cfg.max_cube_size / 2;
    let thinnest = len / cfg.n_blocks;
    if thinnest < halo {
        return Err(Error::BlockTooThin {
            thickness: thinnest,
            halo,
            suggestion: (len / halo).max(1),
        });
    }

    let filled: Vec<bool> = va.contributions.iter().map(|&c| c > 0).collect();
    let snapshot = va.values.clone();
    let mut report = FillReport::default();

    for b in 0..cfg.n_blocks {
        let lo = b * len / cfg.n_blocks;
        let hi = (b + 1) * len / cfg.n_blocks;
        let sub_lo = lo.saturating_sub(halo);
        let sub_hi = (hi + halo).min(len);

        // Copy the slab (+halo) into its own buffers.
        let mut sub_dims = dims;
        sub_dims[axis] = sub_hi - sub_lo;
        let sub_n = sub_dims[0] * sub_dims[1] * sub_dims[2];
        let mut sub_values = vec![0.0f64; sub_n];
        let mut sub_filled = vec![false; sub_n];
        let mut sub_gaps: Vec<usize> = Vec::new();
        for si in 0..sub_n {
            let (mut x, mut y, mut z) = idx2xyz(si, sub_dims);
            match axis {
                0 => x += sub_lo,
                1 => y += sub_lo,
                _ => z += sub_lo,
            }
            let gi = x + dims[0] * (y + dims[1] * z);
            sub_values[si] = snapshot[gi];
            sub_filled[si] = filled[gi];
            let along = [x, y, z][axis];
            if (lo..hi).contains(&along) && mask.data[gi] && !filled[gi] {
                sub_gaps.push(si);
            }
        }
        report.peak_block_voxels = report.peak_block_voxels.max(sub_n);

        let results = avg_cube_region(
            sub_dims,
            va.grid.spacing,
            &sub_values,
            &sub_filled,
            &sub_gaps,
            cfg,
        );
        for (si, value) in results {
            let (mut x, mut y, mut z) = idx2xyz(si, sub_dims);
            match axis {
                0 => x += sub_lo,
                1 => y += sub_lo,
                _ => z += sub_lo,
            }
            let gi = x + dims[0] * (y + dims[1] * z);
            match value {
                Some(v) => {
                    va.values[gi] = v;
                    report.filled += 1;
                }
                None => report.unfilled += 1,
            }
        }
    }
    Ok(report)
}

/// Dispatch on the configured method. VNN's distance transform is already
/// O(volume) in memory, so it always runs unblocked; `n_blocks` applies to
/// the average cube.
pub fn fill_gaps(va: &mut VoxelArray, mask: &HullMask, cfg: &GapFillConfig) -> Result<FillReport> {
    match cfg.method {
        GapFillMethod::Vnn => fill_vnn(va, mask),
        GapFillMethod::AvgCube => fill_blocks(va, mask, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::CalibrationParams;
    use crate::compounding::{compute_bounds, xyz2idx, BoundsMode, VoxelArray, VoxelGrid};
    use crate::geometry::{Pose6, RigidTransform};
    use crate::imaging::Frame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid {
            dims,
            spacing: [1.0; 3],
            world_from_grid: RigidTransform::identity(),
        }
    }

    fn finalized_volume(dims: [usize; 3]) -> VoxelArray {
        let mut va = VoxelArray::empty(grid(dims));
        va.finalize();
        va
    }

    fn set(va: &mut VoxelArray, xyz: (usize, usize, usize), value: f64) {
        let idx = xyz2idx(xyz.0, xyz.1, xyz.2, va.grid.dims).unwrap();
        va.values[idx] = value;
        va.contributions[idx] = 1;
    }

    fn full_mask(dims: [usize; 3]) -> HullMask {
        HullMask {
            dims,
            data: vec![true; dims[0] * dims[1] * dims[2]],
        }
    }

    #[test]
    fn vnn_single_seed_floods_everything() {
        let mut va = finalized_volume([5, 4, 3]);
        set(&mut va, (2, 2, 1), 42.0);
        let mask = full_mask(va.grid.dims);
        let report = fill_vnn(&mut va, &mask).unwrap();
        assert_eq!(report.filled, 5 * 4 * 3 - 1);
        assert!(va.values.iter().all(|&v| v == 42.0));
    }

    #[test]
    fn vnn_tie_breaks_to_lowest_linear_index() {
        // Seeds at idx 5 (x=5) and idx 9 (x=9) in a 1D-ish grid; the gap at
        // x=7 is equidistant and must take the idx-5 value.
        let mut va = finalized_volume([15, 1, 1]);
        set(&mut va, (5, 0, 0), 10.0);
        set(&mut va, (9, 0, 0), 99.0);
        let mask = full_mask(va.grid.dims);
        fill_vnn(&mut va, &mask).unwrap();
        assert_eq!(va.values[7], 10.0);
        assert_eq!(va.values[6], 10.0);
        assert_eq!(va.values[8], 99.0);
    }

    #[test]
    fn vnn_leaves_unmasked_gaps_untouched() {
        let mut va = finalized_volume([4, 4, 1]);
        set(&mut va, (0, 0, 0), 7.0);
        let mut mask = full_mask(va.grid.dims);
        let off = xyz2idx(3, 3, 0, va.grid.dims).unwrap();
        mask.data[off] = false;
        fill_vnn(&mut va, &mask).unwrap();
        assert_eq!(va.values[off], 0.0);
        assert_eq!(va.contributions[off], 0);
    }

    #[test]
    fn vnn_no_seed_is_an_error() {
        let mut va = finalized_volume([3, 3, 3]);
        let mask = full_mask(va.grid.dims);
        assert!(fill_vnn(&mut va, &mask).is_err());
    }

    #[test]
    fn vnn_matches_brute_force_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let dims = [
                rng.random_range(3usize..9),
                rng.random_range(3usize..9),
                rng.random_range(3usize..9),
            ];
            let mut va = finalized_volume(dims);
            let n = dims[0] * dims[1] * dims[2];
            let seeds = rng.random_range(1usize..=n / 3);
            for _ in 0..seeds {
                let i = rng.random_range(0..n);
                va.values[i] = rng.random_range(1.0..255.0);
                va.contributions[i] = 1;
            }
            let reference = va.clone();
            let mask = full_mask(dims);
            fill_vnn(&mut va, &mask).unwrap();
            // Brute force: nearest seed by squared distance, tie → lowest idx.
            for g in 0..n {
                if reference.contributions[g] > 0 {
                    continue;
                }
                let (gx, gy, gz) = idx2xyz(g, dims);
                let mut best: Option<(i64, usize)> = None;
                for s in 0..n {
                    if reference.contributions[s] == 0 {
                        continue;
                    }
                    let (sx, sy, sz) = idx2xyz(s, dims);
                    let d2 = (gx as i64 - sx as i64).pow(2)
                        + (gy as i64 - sy as i64).pow(2)
                        + (gz as i64 - sz as i64).pow(2);
                    best = Some(match best {
                        None => (d2, s),
                        Some((bd, bs)) => {
                            if d2 < bd || (d2 == bd && s < bs) {
                                (d2, s)
                            } else {
                                (bd, bs)
                            }
                        }
                    });
                }
                let (_, site) = best.unwrap();
                assert_eq!(
                    va.values[g], reference.values[site],
                    "gap {g} picked the wrong site"
                );
            }
        }
    }

    #[test]
    fn avg_cube_constant_neighbourhood() {
        let mut va = finalized_volume([3, 3, 3]);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    if (x, y, z) != (1, 1, 1) {
                        set(&mut va, (x, y, z), 80.0);
                    }
                }
            }
        }
        let mask = full_mask(va.grid.dims);
        let cfg = GapFillConfig {
            min_nongap_pct: 50.0,
            ..Default::default()
        };
        let report = fill_avg_cube(&mut va, &mask, &cfg).unwrap();
        assert_eq!(report.filled, 1);
        let centre = xyz2idx(1, 1, 1, va.grid.dims).unwrap();
        assert!((va.values[centre] - 80.0).abs() < 1e-12);
    }

    #[test]
    fn avg_cube_grows_until_quota_met() {
        // One filled neighbour at distance 1 is not enough at pct 30 for a
        // 3³ cube (1/27 ≈ 3.7%), so the cube grows to 5³ where extra seeds
        // wait; the weighted mean over the 5³ cube is checked brute-force.
        let dims = [7, 7, 7];
        let mut va = finalized_volume(dims);
        set(&mut va, (4, 3, 3), 60.0); // distance 1 from the gap at (3,3,3)
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // Scatter seeds in the 5³ shell but outside the 3³ cube.
        let mut placed = 0;
        while placed < 45 {
            let x = rng.random_range(1usize..6);
            let y = rng.random_range(1usize..6);
            let z = rng.random_range(1usize..6);
            let inside3 = (2..=4).contains(&x) && (2..=4).contains(&y) && (2..=4).contains(&z);
            let idx = xyz2idx(x, y, z, dims).unwrap();
            if !inside3 && va.contributions[idx] == 0 && (x, y, z) != (3, 3, 3) {
                set(&mut va, (x, y, z), rng.random_range(10.0..200.0));
                placed += 1;
            }
        }
        let reference = va.clone();
        let mut mask = HullMask {
            dims,
            data: vec![false; 343],
        };
        let gap = xyz2idx(3, 3, 3, dims).unwrap();
        mask.data[gap] = true;
        let cfg = GapFillConfig {
            min_nongap_pct: 30.0,
            max_cube_size: 5,
            ..Default::default()
        };
        let report = fill_avg_cube(&mut va, &mask, &cfg).unwrap();
        assert_eq!(report.filled, 1);
        // Brute-force weighted mean over the 5³ cube.
        let mut wsum = 0.0;
        let mut wval = 0.0;
        for z in 1..=5usize {
            for y in 1..=5usize {
                for x in 1..=5usize {
                    let idx = xyz2idx(x, y, z, dims).unwrap();
                    if reference.contributions[idx] > 0 {
                        let d = (((x as f64 - 3.0).powi(2)
                            + (y as f64 - 3.0).powi(2)
                            + (z as f64 - 3.0).powi(2)) as f64)
                            .sqrt();
                        wsum += 1.0 / d;
                        wval += reference.values[idx] / d;
                    }
                }
            }
        }
        assert!((va.values[gap] - wval / wsum).abs() < 1e-9);
    }

    #[test]
    fn avg_cube_isolated_gap_stays_unfilled() {
        let mut va = finalized_volume([9, 9, 9]);
        set(&mut va, (0, 0, 0), 50.0);
        let mut mask = HullMask {
            dims: va.grid.dims,
            data: vec![false; 729],
        };
        let gap = xyz2idx(7, 7, 7, va.grid.dims).unwrap();
        mask.data[gap] = true;
        let cfg = GapFillConfig {
            min_nongap_pct: 25.0,
            max_cube_size: 5,
            ..Default::default()
        };
        let report = fill_avg_cube(&mut va, &mask, &cfg).unwrap();
        assert_eq!(report.filled, 0);
        assert_eq!(report.unfilled, 1);
        assert_eq!(va.values[gap], 0.0);
    }

    #[test]
    fn fills_never_touch_contributed_voxels() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dims = [10, 10, 10];
        let mut va = finalized_volume(dims);
        for i in 0..1000 {
            if rng.random_range(0.0..1.0) < 0.5 {
                va.values[i] = rng.random_range(1.0..255.0);
                va.contributions[i] = 1;
            }
        }
        let before = va.clone();
        let mask = full_mask(dims);
        fill_avg_cube(&mut va, &mask, &GapFillConfig::default()).unwrap();
        for i in 0..1000 {
            if before.contributions[i] > 0 {
                assert_eq!(va.values[i], before.values[i]);
            }
        }
        let mut vnn = before.clone();
        fill_vnn(&mut vnn, &mask).unwrap();
        for i in 0..1000 {
            if before.contributions[i] > 0 {
                assert_eq!(vnn.values[i], before.values[i]);
            }
        }
    }

    #[test]
    fn blocked_matches_unblocked() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dims = [24, 16, 12];
        let n = dims[0] * dims[1] * dims[2];
        let mut va = finalized_volume(dims);
        for i in 0..n {
            if rng.random_range(0.0..1.0) < 0.7 {
                va.values[i] = rng.random_range(0.0..255.0);
                va.contributions[i] = 1;
            }
        }
        let mask = full_mask(dims);
        let cfg1 = GapFillConfig {
            n_blocks: 1,
            ..Default::default()
        };
        let cfg4 = GapFillConfig {
            n_blocks: 4,
            ..Default::default()
        };
        let mut a = va.clone();
        let mut b = va.clone();
        let ra = fill_avg_cube(&mut a, &mask, &cfg1).unwrap();
        let rb = fill_blocks(&mut b, &mask, &cfg4).unwrap();
        assert_eq!(ra.filled, rb.filled);
        assert_eq!(ra.unfilled, rb.unfilled);
        for i in 0..n {
            assert!(
                (a.values[i] - b.values[i]).abs() < 1e-9,
                "voxel {i}: {} vs {}",
                a.values[i],
                b.values[i]
            );
        }
        // Working set per block ≈ total/n + halo slab.
        let slab = n / dims[0]; // voxels per unit of the longest axis (x)
        let expected = (dims[0] / 4 + 2 * (cfg4.max_cube_size / 2) + 1) * slab;
        assert!(
            rb.peak_block_voxels <= expected,
            "peak {} > expected {}",
            rb.peak_block_voxels,
            expected
        );
        assert!(rb.peak_block_voxels < ra.peak_block_voxels);
    }

    #[test]
    fn too_many_blocks_is_an_error() {
        let mut va = finalized_volume([8, 4, 4]);
        set(&mut va, (0, 0, 0), 1.0);
        let mask = full_mask(va.grid.dims);
        let cfg = GapFillConfig {
            n_blocks: 8,
            max_cube_size: 5,
            ..Default::default()
        };
        match fill_blocks(&mut va, &mask, &cfg) {
            Err(Error::BlockTooThin { suggestion, .. }) => assert!(suggestion >= 1),
            other => panic!("expected BlockTooThin, got {other:?}"),
        }
    }

    #[test]
    fn smooth_phantom_restored_below_three_levels() {
        // Smooth 3D field, 10% voxels emptied, avg-cube pct 25 / max 5.
        let dims = [20, 20, 20];
        let field = |x: usize, y: usize, z: usize| -> f64 {
            128.0
                + 60.0 * ((x as f64) * 0.12).sin()
                + 40.0 * ((y as f64) * 0.10).cos()
                + 20.0 * ((z as f64) * 0.15).sin()
        };
        let mut va = finalized_volume(dims);
        let n = dims[0] * dims[1] * dims[2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut holes = Vec::new();
        for i in 0..n {
            let (x, y, z) = idx2xyz(i, dims);
            if rng.random_range(0.0..1.0) < 0.10 {
                holes.push(i);
            } else {
                va.values[i] = field(x, y, z);
                va.contributions[i] = 1;
            }
        }
        let mask = full_mask(dims);
        let cfg = GapFillConfig {
            min_nongap_pct: 25.0,
            max_cube_size: 5,
            ..Default::default()
        };
        fill_avg_cube(&mut va, &mask, &cfg).unwrap();
        let mae = holes
            .iter()
            .map(|&i| {
                let (x, y, z) = idx2xyz(i, dims);
                (va.values[i] - field(x, y, z)).abs()
            })
            .sum::<f64>()
            / holes.len() as f64;
        assert!(mae < 3.0, "MAE {mae}");
    }

    // --- hull mask ---

    fn seq_of_two(pose_b: RigidTransform) -> (ScanSequence, VoxelArray) {
        let calib = CalibrationParams::new(1.0, 1.0, Pose6::zero(), Pose6::zero());
        let frames = vec![
            Frame::new(6, 5, vec![200; 30], 1.0, 1.0).unwrap(),
            Frame::new(6, 5, vec![200; 30], 1.0, 1.0).unwrap(),
        ];
        let seq = ScanSequence::new(
            frames,
            vec![RigidTransform::identity(), pose_b],
            calib,
        )
        .unwrap();
        let grid = compute_bounds(&seq, &BoundsMode::WorldAxes, [1.0; 3]).unwrap();
        let mut va = VoxelArray::empty(grid);
        va.finalize();
        (seq, va)
    }

    #[test]
    fn coplanar_frames_give_single_layer() {
        let (seq, va) = seq_of_two(RigidTransform::identity());
        let mask = hull_mask(&seq, &va).unwrap();
        assert_eq!(va.grid.dims, [6, 5, 1]);
        assert_eq!(mask.count(), 30);
    }

    #[test]
    fn parallel_frames_fill_the_slab() {
        let (seq, va) = seq_of_two(RigidTransform::translation_xyz(0.0, 0.0, 10.0));
        let mask = hull_mask(&seq, &va).unwrap();
        assert_eq!(va.grid.dims, [6, 5, 11]);
        assert_eq!(mask.count(), 6 * 5 * 11);
    }

    #[test]
    fn mask_always_covers_contributing_voxels() {
        let (seq, mut va) = seq_of_two(RigidTransform::translation_xyz(0.0, 0.0, 4.0));
        // Mark a voxel outside any hull as contributed.
        let idx = xyz2idx(0, 0, va.grid.dims[2] - 1, va.grid.dims).unwrap();
        va.contributions[idx] = 3;
        let mask = hull_mask(&seq, &va).unwrap();
        assert!(mask.data[idx]);
    }

    #[test]
    fn hull_matches_caratheodory_oracle_and_fits_aabb() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for case in 0..100 {
            // Random pair of posed frames.
            let calib = CalibrationParams::new(1.0, 1.0, Pose6::zero(), Pose6::zero());
            let frames = vec![
                Frame::new(5, 4, vec![1; 20], 1.0, 1.0).unwrap(),
                Frame::new(5, 4, vec![1; 20], 1.0, 1.0).unwrap(),
            ];
            let pose = Pose6::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(2.0..6.0),
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7),
                rng.random_range(-0.7..0.7),
            );
            let seq = ScanSequence::new(
                frames,
                vec![
                    RigidTransform::identity(),
                    crate::geometry::make_transform(&pose).unwrap(),
                ],
                calib,
            )
            .unwrap();
            let grid = compute_bounds(&seq, &BoundsMode::WorldAxes, [1.0; 3]).unwrap();
            let mut va = VoxelArray::empty(grid);
            va.finalize();
            let mask = hull_mask(&seq, &va).unwrap();

            // Corner cloud in grid coordinates.
            let mut pts = Vec::new();
            for i in 0..2 {
                for c in seq.frame_corners(i).unwrap() {
                    pts.push(va.grid.grid_coords(&c));
                }
            }
            // AABB bound (Fig-3 style property): hull ⊆ bounding box.
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for p in &pts {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            let dims = va.grid.dims;
            let mut aabb_count = 0usize;
            let mut mismatches = 0usize;
            let mut hull_count = 0usize;
            for z in 0..dims[2] {
                for y in 0..dims[1] {
                    for x in 0..dims[0] {
                        let idx = xyz2idx(x, y, z, dims).unwrap();
                        let c = Vector3::new(x as f64, y as f64, z as f64);
                        let in_aabb = (0..3).all(|a| c[a] >= lo[a] - 1e-9 && c[a] <= hi[a] + 1e-9);
                        if in_aabb {
                            aabb_count += 1;
                        }
                        if mask.data[idx] {
                            hull_count += 1;
                            assert!(in_aabb, "case {case}: hull voxel outside AABB");
                        }
                        // Carathéodory oracle: in hull iff inside some
                        // 4-point tetrahedron of the corner cloud.
                        let oracle = point_in_some_tetra(&pts, &c);
                        if oracle != mask.data[idx] {
                            mismatches += 1;
                        }
                    }
                }
            }
            assert!(hull_count <= aabb_count);
            // Boundary voxels may flip between the two eps conventions.
            assert!(
                mismatches <= 1 + aabb_count / 50,
                "case {case}: {mismatches} mismatches of {aabb_count}"
            );
        }
    }

    fn point_in_some_tetra(pts: &[Vector3<f64>], p: &Vector3<f64>) -> bool {
        let n = pts.len();
        for a in 0..n {
            for b in a + 1..n {
                for c in b + 1..n {
                    for d in c + 1..n {
                        if point_in_tetra(&pts[a], &pts[b], &pts[c], &pts[d], p) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    fn point_in_tetra(
        a: &Vector3<f64>,
        b: &Vector3<f64>,
        c: &Vector3<f64>,
        d: &Vector3<f64>,
        p: &Vector3<f64>,
    ) -> bool {
        let vol = |p0: &Vector3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>, p3: &Vector3<f64>| {
            (p1 - p0).cross(&(p2 - p0)).dot(&(p3 - p0))
        };
        let v = vol(a, b, c, d);
        if v.abs() < 1e-9 {
            return false;
        }
        let s = v.signum();
        let eps = -1e-9 * v.abs();
        s * vol(p, b, c, d) >= eps / v.abs()
            && s * vol(a, p, c, d) >= eps / v.abs()
            && s * vol(a, b, p, d) >= eps / v.abs()
            && s * vol(a, b, c, p) >= eps / v.abs()
    }

    #[test]
    fn sphere_offsets_cover_exact_shells() {
        for d2 in [0i64, 1, 2, 4, 5, 25, 50] {
            let offs = sphere_offsets(d2);
            assert!(!offs.is_empty() || d2 == 7, "no offsets for {d2}");
            for o in &offs {
                assert_eq!(o[0] * o[0] + o[1] * o[1] + o[2] * o[2], d2);
            }
            // No duplicates.
            let mut seen = std::collections::HashSet::new();
            for o in &offs {
                assert!(seen.insert(*o));
            }
        }
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let dims = [7, 6, 5];
        let n = 7 * 6 * 5;
        let seeds: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.15).collect();
        if !seeds.iter().any(|&s| s) {
            return;
        }
        let dist = edt_3d(dims, |i| seeds[i]);
        for g in 0..n {
            let (gx, gy, gz) = idx2xyz(g, dims);
            let mut best = i64::MAX;
            for s in 0..n {
                if seeds[s] {
                    let (sx, sy, sz) = idx2xyz(s, dims);
                    let d2 = (gx as i64 - sx as i64).pow(2)
                        + (gy as i64 - sy as i64).pow(2)
                        + (gz as i64 - sz as i64).pow(2);
                    best = best.min(d2);
                }
            }
            assert_eq!(dist[g], best, "voxel {g}");
        }
    }
}
