use gennav::mcl::{motion_update, LikelihoodField, LocParticle, Localizer, LocalizerConfig, MotionNoise, SensorModel};
use gennav::sim::{raycast_scan, LidarConfig, World};
use gennav::{pose_delta, LaserScan, OccupancyGrid, Point2, Pose2D};
use gennav::geometry::angle_diff;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn truth_map(world: &World) -> OccupancyGrid {
    world.known_map(world.map_geometry(0.05, 0.5), Point2::new(1.5, 1.5))
}

fn scan(world: &World, pose: &Pose2D, seed: u64, sigma: f64) -> LaserScan {
    let cfg = LidarConfig { noise_sigma: sigma, ..LidarConfig::default() };
    raycast_scan(world, pose, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn true_pose_outscores_perturbed_poses() {
    let world = World::fig5();
    let field = LikelihoodField::build(&truth_map(&world), SensorModel::default()).unwrap();
    for (k, truth) in [Pose2D::new(1.5, 1.5, 0.0), Pose2D::new(4.5, 7.5, 2.0), Pose2D::new(8.0, 5.0, -1.0)].iter().enumerate() {
        let s = scan(&world, truth, k as u64, 0.0);
        let best = field.scan_log_likelihood(&s, truth, &Pose2D::IDENTITY, 1);
        for (dx, dy, dt) in [(0.2, 0.0, 0.0), (-0.2, 0.0, 0.0), (0.0, 0.2, 0.0), (0.0, -0.2, 0.0), (0.0, 0.0, 0.17), (0.0, 0.0, -0.17), (0.2, 0.2, 0.17), (-0.2, -0.2, -0.17)] {
            let p = Pose2D::new(truth.x + dx, truth.y + dy, truth.theta + dt);
            let other = field.scan_log_likelihood(&s, &p, &Pose2D::IDENTITY, 1);
            assert!(best > other, "{truth:?} vs {p:?}: {best} <= {other}");
        }
    }
}

#[test]
fn motion_noise_is_centred_on_the_odometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = MotionNoise::default();
    let delta = Pose2D::new(0.3, 0.0, 0.2);
    let mut ps = vec![LocParticle { pose: Pose2D::IDENTITY, weight: 1e-4 }; 10_000];
    motion_update(&mut ps, &delta, &noise, &mut rng);
    let n = ps.len() as f64;
    let (st, sr) = noise.sigmas(&delta);
    // particles start at the origin facing +x, so composing leaves the sampled delta unchanged
    let mx = ps.iter().map(|p| p.pose.x).sum::<f64>() / n;
    let my = ps.iter().map(|p| p.pose.y).sum::<f64>() / n;
    let mt = ps.iter().map(|p| p.pose.theta).sum::<f64>() / n;
    let vt = ps.iter().map(|p| (p.pose.theta - mt).powi(2)).sum::<f64>() / n;
    assert!((mx - 0.3).abs() < 4.0 * st / n.sqrt());
    assert!(my.abs() < 4.0 * st / n.sqrt());
    assert!((mt - 0.2).abs() < 4.0 * sr / n.sqrt());
    assert!((vt.sqrt() / sr - 1.0).abs() < 0.05);
}

#[test]
fn tracking_from_a_known_start_stays_close() {
    let world = World::fig5();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut loc = Localizer::new(&truth_map(&world), LocalizerConfig::default(), Pose2D::IDENTITY).unwrap();
    let mut pose = Pose2D::new(1.5, 1.5, 0.0);
    loc.init_gaussian(pose, 0.05, 0.05, &mut rng);
    for i in 0..60 {
        let next = pose.compose(&Pose2D::new(0.1, 0.0, if i % 20 == 19 { 1.2 } else { 0.0 }));
        // odometry reports the motion with a 5% scale error
        let d = pose_delta(&pose, &next);
        let odom = Pose2D::new(1.05 * d.x, 1.05 * d.y, d.theta);
        pose = next;
        loc.update(&odom, &scan(&world, &pose, i, 0.01), true, &mut rng);
        let est = loc.estimate().unwrap().pose;
        assert!(est.position().distance(pose.position()) < 0.1, "step {i}: {est:?} vs {pose:?}");
        assert!(angle_diff(est.theta, pose.theta).abs() < 5f64.to_radians());
    }
}
