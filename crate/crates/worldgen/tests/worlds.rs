use kvae_worldgen::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn traces(kind: WorldKind, n: u64) -> Vec<Trace> {
    let spec = WorldSpec::new(kind);
    (0..n)
        .map(|i| simulate_trace(&spec, &mut ChaCha8Rng::seed_from_u64(i)).unwrap())
        .collect()
}

#[test]
fn zero_velocity_gives_identical_frames() {
    let mut spec = WorldSpec::new(WorldKind::Box);
    spec.speed_min = 0.0;
    spec.speed_max = 0.0;
    let e = simulate_episode(&spec, 3, 0).unwrap();
    for t in 1..spec.steps {
        assert_eq!(e.frame(t), e.frame(0));
    }
}

#[test]
fn box_speed_is_conserved() {
    for tr in traces(WorldKind::Box, 1000) {
        let s0 = tr.velocities[0][0].hypot(tr.velocities[0][1]);
        for v in &tr.velocities {
            assert!((v[0].hypot(v[1]) - s0).abs() < 1e-9);
        }
        for t in 1..tr.positions.len() {
            if !tr.contacts[t] {
                let (p, q) = (tr.positions[t - 1], tr.positions[t]);
                assert!(((q[0] - p[0]).hypot(q[1] - p[1]) - s0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn gravity_second_difference_is_constant_between_contacts() {
    let g = WorldSpec::new(WorldKind::Gravity).gravity[1];
    let mut checked = 0;
    for tr in traces(WorldKind::Gravity, 200) {
        for t in 1..tr.positions.len() - 1 {
            if tr.contacts[t] || tr.contacts[t + 1] {
                continue;
            }
            let d2 = tr.positions[t + 1][1] - 2.0 * tr.positions[t][1] + tr.positions[t - 1][1];
            assert!((d2 - g).abs() < 1e-9, "second difference {d2}");
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn balls_stay_inside_the_walls() {
    for kind in [WorldKind::Box, WorldKind::Gravity, WorldKind::Pong] {
        let spec = WorldSpec::new(kind);
        let inset = if kind == WorldKind::Pong { spec.paddle.width } else { 0.0 };
        for tr in traces(kind, 300) {
            for p in &tr.positions {
                let r = spec.radius - 1e-9;
                assert!(p[0] - inset >= r && spec.width as f64 - inset - p[0] >= r, "{kind}: {p:?}");
                assert!(p[1] >= r && spec.height as f64 - p[1] >= r, "{kind}: {p:?}");
            }
        }
    }
}

#[test]
fn polygon_ball_stays_inside() {
    let spec = WorldSpec::new(WorldKind::Polygon);
    let v = &spec.polygon;
    let n = v.len();
    for tr in traces(WorldKind::Polygon, 300) {
        for p in &tr.positions {
            for i in 0..n {
                let (a, b) = (v[i], v[(i + 1) % n]);
                let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                let len = dx.hypot(dy);
                // vertices run clockwise on screen, so the interior is on the right
                let d = ((p[0] - a[0]) * dy - (p[1] - a[1]) * dx) / len;
                assert!(d.abs() >= spec.radius - 1e-9, "{p:?} is {d} from edge {i}");
            }
        }
        let s0 = tr.velocities[0][0].hypot(tr.velocities[0][1]);
        assert!(tr.velocities.iter().all(|u| (u[0].hypot(u[1]) - s0).abs() < 1e-9));
    }
}

#[test]
fn pong_paddles_move_at_bounded_speed() {
    let spec = WorldSpec::new(WorldKind::Pong);
    for tr in traces(WorldKind::Pong, 50) {
        for w in tr.paddles.windows(2) {
            for k in 0..2 {
                assert!((w[1][k] - w[0][k]).abs() <= spec.paddle.max_speed + 1e-12);
            }
        }
    }
}

#[test]
fn pendulum_records_bounded_torques() {
    let spec = WorldSpec::new(WorldKind::Pendulum);
    let data = simulate(&spec, 20, 1, 0).unwrap();
    for e in &data {
        assert_eq!((e.height, e.width, e.steps, e.u_dim), (16, 16, 15, 1));
        assert_eq!(e.controls.len(), 15);
        assert!(e.controls.iter().all(|u| u.abs() <= 1.0));
        assert!(e.frames.contains(&1));
    }
}

#[test]
fn frames_are_binary_and_show_the_ball() {
    for kind in [WorldKind::Box, WorldKind::Gravity, WorldKind::Polygon, WorldKind::Pong] {
        let spec = WorldSpec::new(kind);
        for e in simulate(&spec, 10, 7, 0).unwrap() {
            assert!(e.frames.iter().all(|&b| b <= 1));
            for t in 0..e.steps {
                assert!(e.frame(t).iter().filter(|&&b| b == 1).count() >= 19);
            }
        }
    }
}

#[test]
fn simulation_is_deterministic() {
    let spec = WorldSpec::new(WorldKind::Gravity);
    let a = Dataset::new(simulate(&spec, 25, 42, 0).unwrap()).unwrap().to_bytes();
    let b = Dataset::new(simulate(&spec, 25, 42, 0).unwrap()).unwrap().to_bytes();
    assert_eq!(a, b);
}

#[test]
fn train_and_test_ranges_share_no_episode() {
    let spec = WorldSpec::new(WorldKind::Box);
    let train = simulate(&spec, 200, 5, 0).unwrap();
    let test = simulate(&spec, 200, 5, TEST_INDEX_OFFSET).unwrap();
    for a in &test {
        assert!(train.iter().all(|b| b.positions[0] != a.positions[0]));
    }
}

#[test]
fn invalid_polygon_is_a_config_error() {
    let mut spec = WorldSpec::new(WorldKind::Polygon);
    spec.polygon = vec![[0.0, 0.0], [30.0, 30.0], [30.0, 0.0], [0.0, 30.0]];
    assert!(matches!(simulate(&spec, 1, 0, 0), Err(WorldError::Config(_))));
}

#[test]
fn dataset_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.kvd");
    for kind in [WorldKind::Box, WorldKind::Pendulum] {
        let data = Dataset::new(simulate(&WorldSpec::new(kind), 2, 9, 0).unwrap()).unwrap();
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(std::fs::read(&path).unwrap(), data.to_bytes());
    }
}

#[test]
fn missing_file_reports_its_path() {
    let err = read_dataset(std::path::Path::new("/nonexistent/x.kvd")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.kvd"));
}

fn lit(f: &[u8]) -> usize {
    f.iter().filter(|&&b| b == 1).count()
}

#[test]
fn pixel_count_bounds_over_subpixel_sweep() {
    let r = 3.0;
    let lo = std::f64::consts::PI * (r - 0.5) * (r - 0.5);
    let hi = std::f64::consts::PI * (r + 0.5) * (r + 0.5);
    for a in 0..20 {
        for b in 0..20 {
            let c = [16.0 + a as f64 / 20.0, 15.0 + b as f64 / 20.0];
            let n = lit(&rasterize_disk(c, r, 32, 32)) as f64;
            assert!(n >= lo && n <= hi, "{c:?}: {n}");
        }
    }
}

proptest! {
    #[test]
    fn rotation_preserves_pixel_count(x in 4.0f64..28.0, y in 4.0f64..28.0) {
        let a = rasterize_disk([x, y], 3.0, 32, 32);
        let b = rasterize_disk([32.0 - y, x], 3.0, 32, 32);
        prop_assert_eq!(lit(&a), lit(&b));
    }

    #[test]
    fn integer_translation_translates_the_mask(x in 5.0f64..20.0, y in 5.0f64..20.0, dx in 0usize..6, dy in 0usize..6) {
        let a = rasterize_disk([x, y], 3.0, 32, 32);
        let b = rasterize_disk([x + dx as f64, y + dy as f64], 3.0, 32, 32);
        for i in 0..32 - dy {
            for j in 0..32 - dx {
                prop_assert_eq!(a[i * 32 + j], b[(i + dy) * 32 + j + dx]);
            }
        }
    }

    #[test]
    fn box_trajectories_stay_inside(seed in any::<u64>()) {
        let spec = WorldSpec::new(WorldKind::Box);
        let tr = simulate_trace(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for p in &tr.positions {
            prop_assert!(p[0] >= 3.0 - 1e-9 && p[0] <= 29.0 + 1e-9);
            prop_assert!(p[1] >= 3.0 - 1e-9 && p[1] <= 29.0 + 1e-9);
        }
    }
}
