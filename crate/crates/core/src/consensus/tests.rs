use super::*;
use crate::blockio::{generate, random_block, GeneratorSpec};
use crate::model::{Camera, CameraModel, Intrinsics, Observation, Point3D};
use crate::partition::{build_visibility_graph, partition};
use crate::solver::{build_normal_system, Layout};
use nalgebra::{Rotation3, Vector2};

fn desk(strips: usize, per_strip: usize, seed: u64) -> Block {
    let spec = GeneratorSpec {
        strips,
        cameras_per_strip: per_strip,
        points_per_camera: 60,
        seed,
        ..Default::default()
    };
    generate(&spec).unwrap().perturbed
}

fn halves(block: &Block) -> Partition {
    let g = build_visibility_graph(block);
    partition(&g, 2, 1, 7)
}

#[test]
fn one_sub_block_is_the_block() {
    let b = random_block(3, 4, 12, CameraModel::PoseOnly);
    let g = build_visibility_graph(&b);
    let p = Partition::from_assignment(&g, vec![0; 4]);
    let (subs, tps) = split(&b, &p).unwrap();
    assert!(tps.is_empty());
    assert_eq!(subs.len(), 1);
    assert_eq!(subs[0].block, b);
}

#[test]
fn two_cameras_sharing_one_point() {
    let cal = SharedCalibration::pinhole(1000.0);
    let cams = vec![
        Camera::from_center(Rotation3::identity(), Vector3::new(-1.0, 0.0, 4.0), Intrinsics::PoseOnly),
        Camera::from_center(Rotation3::identity(), Vector3::new(1.0, 0.0, 4.0), Intrinsics::PoseOnly),
    ];
    let b = Block {
        cameras: cams,
        points: vec![Point3D::new(Vector3::zeros())],
        observations: vec![
            Observation::new(0, 0, Vector2::new(250.0, 0.0)),
            Observation::new(1, 0, Vector2::new(-250.0, 0.0)),
        ],
        shared_calibration: Some(cal),
    };
    let p = Partition::from_assignment(&build_visibility_graph(&b), vec![0, 1]);
    let (subs, tps) = split(&b, &p).unwrap();
    assert_eq!(tps.len(), 1);
    assert_eq!(tps[0].sub_blocks, vec![0, 1]);
    assert_eq!(subs[0].points, vec![0]);
    assert_eq!(subs[1].points, vec![0]);
}

#[test]
fn every_observation_lands_in_one_sub_block() {
    let b = desk(3, 12, 5);
    let g = build_visibility_graph(&b);
    let p = partition(&g, 3, 1, 1);
    let (subs, tps) = split(&b, &p).unwrap();
    let mut seen = vec![0usize; b.observations.len()];
    for s in &subs {
        for (i, &k) in s.observations.iter().enumerate() {
            seen[k] += 1;
            let (g, l) = (&b.observations[k], &s.block.observations[i]);
            assert_eq!(s.cameras[l.camera], g.camera);
            assert_eq!(s.points[l.point], g.point);
            assert_eq!(l.coords, g.coords);
        }
    }
    assert!((0..b.observations.len()).all(|k| seen[k] == usize::from(b.is_used(k))));
    // tie points recounted from camera ownership
    let mut tp = 0;
    for (j, obs) in b.adjacency().by_point.iter().enumerate() {
        let mut owners: Vec<usize> = obs.iter().map(|&k| p.assignment[b.observations[k].camera]).collect();
        owners.sort_unstable();
        owners.dedup();
        if owners.len() >= 2 {
            assert_eq!(tps[tp].point, j);
            assert_eq!(tps[tp].sub_blocks, owners);
            tp += 1;
        }
    }
    assert_eq!(tp, tps.len());
}

#[test]
fn averaging_symmetric_pair() {
    let a = Vector3::new(1.0, 2.0, 3.0);
    let b = Vector3::new(3.0, 0.0, 1.0);
    let mut r = TiePointRecord {
        point: 0,
        sub_blocks: vec![0, 1],
        consensus: Vector3::zeros(),
        information: vec![Matrix3::zeros(); 2],
        dual: vec![Vector3::zeros(); 2],
        local: vec![a, b],
    };
    average_tie_point(&mut r);
    assert_eq!(r.consensus, (a + b) / 2.0);
    assert_eq!(r.dual[0], -r.dual[1]);
    assert_eq!(r.dual[0], (a - b) / 2.0);
}

#[test]
fn isotropic_scalar_weight_matches_extended() {
    let b = random_block(2, 3, 6, CameraModel::PoseOnly);
    let rho = 250.0;
    let record = TiePointRecord {
        point: 2,
        sub_blocks: vec![0, 1],
        consensus: b.points[2].coords + Vector3::new(0.01, -0.02, 0.005),
        information: vec![Matrix3::identity() * rho; 2],
        dual: vec![Vector3::zeros(); 2],
        local: vec![b.points[2].coords; 2],
    };
    let ext = tie_point_prior(ConsensusMode::Extended, &record, 0, 2, f64::NAN);
    let sca = tie_point_prior(ConsensusMode::ExtendedScalar, &record, 0, 2, rho);
    let layout = Layout::for_block(&b, false).unwrap();
    let d1 = build_normal_system(&b, &layout, &[ext], 1e-4).dense();
    let d2 = build_normal_system(&b, &layout, &[sca], 1e-4).dense();
    assert!((d1.0 - d2.0).amax() < 1e-10);
    assert!((d1.1 - d2.1).amax() < 1e-10);
}

fn config(mode: ConsensusMode) -> ConsensusConfig {
    ConsensusConfig {
        mode,
        threads: 2,
        ..Default::default()
    }
}

#[test]
fn single_sub_block_equals_serial() {
    let b = desk(2, 8, 3);
    let mut serial = b.clone();
    let report = adjust(&mut serial, &[], &AdjustOptions::default()).unwrap();
    let mut cons = b.clone();
    let p = Partition::from_assignment(&build_visibility_graph(&b), vec![0; b.cameras.len()]);
    let out = run(&mut cons, &p, &config(ConsensusMode::Extended)).unwrap();
    assert_eq!(out.sigma0, report.sigma0);
    assert_eq!(out.trace.sigma0(), report.history);
    assert_eq!(cons, serial);
}

#[test]
fn rho_grows_geometrically() {
    let mut b = desk(2, 10, 4);
    let p = halves(&b);
    let mut c = config(ConsensusMode::Plain);
    c.max_outer_iterations = 5;
    c.outer_convergence_ratio = 0.0;
    let out = run(&mut b, &p, &c).unwrap();
    assert_eq!(out.iterations, 5);
    assert_eq!(out.status, RunStatus::MaxIterations);
    assert!((out.final_rho.unwrap() - 1000.0 * 1.01f64.powi(5)).abs() < 1e-9);
}

#[test]
fn extended_never_reads_rho() {
    let b = desk(2, 10, 6);
    let p = halves(&b);
    let mut with_nan = config(ConsensusMode::Extended);
    with_nan.rho = f64::NAN;
    let (mut b1, mut b2) = (b.clone(), b.clone());
    let o1 = run(&mut b1, &p, &with_nan).unwrap();
    let o2 = run(&mut b2, &p, &config(ConsensusMode::Extended)).unwrap();
    assert_eq!(o1.trace.sigma0(), o2.trace.sigma0());
    assert_eq!(o1.final_rho, None);
}

#[test]
fn runs_are_deterministic() {
    let b = desk(2, 10, 8);
    let p = halves(&b);
    for mode in [ConsensusMode::Extended, ConsensusMode::Plain] {
        let (mut b1, mut b2) = (b.clone(), b.clone());
        let o1 = run(&mut b1, &p, &config(mode)).unwrap();
        let o2 = run(&mut b2, &p, &config(mode)).unwrap();
        assert_eq!(o1.trace.sigma0(), o2.trace.sigma0());
        assert_eq!(b1, b2);
    }
}

#[test]
fn extended_approaches_serial() {
    let b = desk(3, 10, 2);
    let mut serial = b.clone();
    let report = adjust(&mut serial, &[], &AdjustOptions::default()).unwrap();
    let mut cons = b.clone();
    let out = run(&mut cons, &halves(&b), &config(ConsensusMode::Extended)).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    assert!((out.sigma0 / report.sigma0 - 1.0).abs() < 0.01, "{} vs {}", out.sigma0, report.sigma0);
    let best = out.trace.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn tie_points_agree_after_intersection() {
    let mut b = desk(2, 10, 9);
    let p = halves(&b);
    let c = config(ConsensusMode::Extended);
    let mut s = Session::new(&mut b, &p, &c).unwrap();
    s.intersection_phase().unwrap();
    s.push_down();
    s.resection_phase().unwrap();
    s.pull_up();
    s.intersection_phase().unwrap();
    s.push_down();
    for r in &s.tps {
        if !s.block.points[r.point].is_active() {
            continue;
        }
        assert_eq!(s.block.points[r.point].coords, r.consensus);
        for (slot, &l) in r.sub_blocks.iter().enumerate() {
            assert_eq!(r.local[slot], r.consensus);
            let i = s.subs[l].local_point(r.point).unwrap();
            assert_eq!(s.subs[l].block.points[i].coords, r.consensus);
        }
    }
}

#[test]
fn zero_threads_rejected() {
    let mut b = desk(2, 6, 1);
    let p = halves(&b);
    let mut c = config(ConsensusMode::Extended);
    c.threads = 0;
    assert!(run(&mut b, &p, &c).is_err());
    let mut c = config(ConsensusMode::Plain);
    c.rho = 0.0;
    assert!(run(&mut b, &p, &c).is_err());
}

#[test]
fn ill_posed_block_is_reported_as_diverged() {
    // two cameras, one per sub-block, and just enough shared points to leave
    // no redundancy: σ₀ is undefined on every iteration
    let cal = SharedCalibration::pinhole(1000.0);
    let cams = vec![
        Camera::from_center(Rotation3::identity(), Vector3::new(-1.0, 0.0, 4.0), Intrinsics::PoseOnly),
        Camera::from_center(Rotation3::identity(), Vector3::new(1.0, 0.0, 4.0), Intrinsics::PoseOnly),
    ];
    let points: Vec<Point3D> = (0..5)
        .map(|j| Point3D::new(Vector3::new(0.3 * j as f64 - 0.6, 0.2 * (j % 2) as f64, 0.1 * j as f64)))
        .collect();
    let mut observations = Vec::new();
    for (j, p) in points.iter().enumerate() {
        for (i, c) in cams.iter().enumerate() {
            let uv = crate::model::project(c, Some(&cal), &p.coords).unwrap();
            observations.push(Observation::new(i, j, uv + Vector2::new(0.3, -0.2) * (i as f64 - 0.5)));
        }
    }
    let mut b = Block {
        cameras: cams,
        points,
        observations,
        shared_calibration: Some(cal),
    };
    assert!(crate::model::sigma0(&b).is_err());
    let p = Partition::from_assignment(&build_visibility_graph(&b), vec![0, 1]);
    let mut c = config(ConsensusMode::PlainRefined);
    c.max_outer_iterations = 10;
    let out = run(&mut b, &p, &c).unwrap();
    assert_eq!(out.status, RunStatus::Diverged);
    assert_eq!(out.iterations, 3);
    assert!(out.trace.sigma0().iter().all(|s| s.is_nan()));
}
