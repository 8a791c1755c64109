use nalgebra::Matrix3;
use usvox_core::calibration::CalibrationParams;
use usvox_core::compounding::{compute_bounds, compound_onto, BoundsMode, ScanSequence};
use usvox_core::geometry::make_transform;
use usvox_core::io::synth::{default_truth, render_frame, sweep_trajectory, PhantomShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn crossed(calib: &CalibrationParams) -> (ScanSequence, ScanSequence) {
    let shape = PhantomShape::Sphere { center: [14.0, 0.0, 14.0], radius_mm: 8.0, inside: 220.0, outside: 15.0, edge_mm: 1.5 };
    let base_a = Matrix3::new(1.0,0.0,0.0, 0.0,0.0,-1.0, 0.0,1.0,0.0);
    let traj_a = sweep_trajectory(26, [0.0,-10.0,0.0], [0.0,0.8,0.0], &base_a);
    let base_b = Matrix3::new(0.0,0.0,1.0, 1.0,0.0,0.0, 0.0,1.0,0.0);
    let traj_b = sweep_trajectory(26, [2.0,-12.0,0.0], [0.8,0.0,0.0], &base_b);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut build = |traj: &[usvox_core::geometry::Pose6], rng: &mut ChaCha8Rng| {
        let mut frames = Vec::new(); let mut poses = Vec::new();
        for p in traj { let ttr = make_transform(p).unwrap();
            frames.push(render_frame(&shape, calib, &ttr, 48, 48, 0.0, rng).unwrap());
            poses.push(ttr); }
        ScanSequence::new(frames, poses, calib.clone()).unwrap()
    };
    (build(&traj_a, &mut rng), build(&traj_b, &mut rng))
}

fn ncc(a: &ScanSequence, b: &ScanSequence, grid: &usvox_core::compounding::VoxelGrid, p: &CalibrationParams) -> (usize, f64) {
    let (va, _) = compound_onto(a, grid.clone(), p).unwrap();
    let (vb, _) = compound_onto(b, grid.clone(), p).unwrap();
    let mut n = 0usize; let (mut sa, mut sb) = (0.0, 0.0);
    for i in 0..va.values.len() { if va.contributions[i] > 0 && vb.contributions[i] > 0 { n += 1; sa += va.values[i]; sb += vb.values[i]; } }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for i in 0..va.values.len() { if va.contributions[i] > 0 && vb.contributions[i] > 0 {
        let x = va.values[i] - ma; let y = vb.values[i] - mb; num += x*y; da += x*x; db += y*y; } }
    (n, num / (da*db).sqrt())
}

fn main() {
    let t = default_truth(0.5, 0.5, 45.0);
    let (a, b) = crossed(&t);
    let mut frames = a.frames.clone(); frames.extend(b.frames.iter().cloned());
    let mut poses = a.poses.clone(); poses.extend(b.poses.iter().cloned());
    let combined = ScanSequence::new(frames, poses, t.clone()).unwrap();
    let grid = compute_bounds(&combined, &BoundsMode::WorldAxes, [0.5;3]).unwrap();
    println!("grid dims {:?}", grid.dims);
    let (n0, v0) = ncc(&a, &b, &grid, &t);
    println!("truth: overlap={n0} ncc={v0:.6}");
    for (name, idx, d) in [("y1", 3usize, 1.0f64), ("y1", 3, -1.0), ("z1", 4, 1.0), ("z1", 4, -1.0), ("x1", 2, 1.0), ("x1", 2, -1.0), ("sx", 0, 0.01), ("alpha1", 5, 0.017), ("sy", 1, -0.01), ("sy", 1, 0.01), ("y1", 3, 0.5), ("y1", 3, -0.5)] {
        let mut v = t.to_vector(); v[idx] += d;
        let p = CalibrationParams::from_vector(&v, t.fixed);
        let (n, val) = ncc(&a, &b, &grid, &p);
        println!("{name} {d:+}: overlap={n} ncc={val:.6} (delta {:+.6})", val - v0);
    }
    // z1 off by 2 then walk back
    for off in [2.0, 1.5, 1.0, 0.5, 0.25, 0.0f64, -0.5] {
        let mut v = t.to_vector(); v[4] += off;
        let p = CalibrationParams::from_vector(&v, t.fixed);
        let (_, val) = ncc(&a, &b, &grid, &p);
        println!("z1 off {off:+}: ncc={val:.6}");
    }
}
// extra probes appended
